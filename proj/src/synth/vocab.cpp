#include "pairforge/vocab.hpp"

#include <algorithm>
#include <cctype>
#include <sstream>

#include "lexicon.hpp"
#include "pairforge/tensor.hpp"

namespace pf::synth {

Vocabulary::Vocabulary() {
  add("[PAD]");
  add("[MASK]");
  add("[CLS]");
  auto add_pool = [this](const lexicon::Pool& pool) {
    std::vector<std::uint32_t> ids;
    for (auto w : pool) {
      add(w);
      ids.push_back(index_.at(std::string(w)));
    }
    if (ids.size() > 1) {
      const int pool_id = static_cast<int>(pools_.size());
      pools_.push_back(ids);
      pool_of_.resize(words_.size(), -1);
      for (auto id : ids) pool_of_[id] = pool_id;
    }
  };
  for (const auto& p : lexicon::kIntensity) add_pool(p);
  for (const auto& p : lexicon::kShape) add_pool(p);
  for (const auto& p : lexicon::kVertical) add_pool(p);
  for (const auto& p : lexicon::kHorizontal) add_pool(p);
  const auto slot = [](std::string_view w) { return w == "I" || w == "S" || w == "V" || w == "H"; };
  for (const auto& t : lexicon::kFindingTemplates)
    for (auto w : t)
      if (!slot(w)) add(w);
  for (auto w : lexicon::kFindingsEmpty) add(w);
  for (const auto& t : lexicon::kFillers)
    for (auto w : t) add(w);
  for (const auto& t : lexicon::kImpressionTemplates)
    for (auto w : t)
      if (!slot(w)) add(w);
  add(lexicon::kJoin);
  for (const auto& t : lexicon::kImpressionEmpty)
    for (auto w : t) add(w);
  for (auto w : lexicon::kPromptWords) add(w);
  pool_of_.resize(words_.size(), -1);
}

void Vocabulary::add(std::string_view w) {
  std::string key(w);
  if (index_.contains(key)) return;
  index_.emplace(key, static_cast<std::uint32_t>(words_.size()));
  words_.push_back(std::move(key));
}

std::uint32_t Vocabulary::id(std::string_view word) const {
  auto it = index_.find(std::string(word));
  if (it == index_.end()) throw ContractError("out-of-vocabulary word '" + std::string(word) + "'");
  return it->second;
}

bool Vocabulary::contains(std::string_view word) const { return index_.contains(std::string(word)); }

std::span<const std::uint32_t> Vocabulary::synonyms(std::uint32_t id) const {
  if (id >= pool_of_.size() || pool_of_[id] < 0) return {};
  return pools_[static_cast<std::size_t>(pool_of_[id])];
}

const Vocabulary& vocabulary() {
  static const Vocabulary v;
  return v;
}

std::size_t TokenSequence::content_length() const {
  return static_cast<std::size_t>(
      std::count_if(ids.begin(), ids.end(), [](std::uint32_t t) { return t != kPad && t != kCls; }));
}

std::vector<std::size_t> TokenSequence::content_positions() const {
  std::vector<std::size_t> pos;
  for (std::size_t i = 0; i < ids.size(); ++i)
    if (ids[i] != kPad && ids[i] != kCls) pos.push_back(i);
  return pos;
}

TokenSequence TokenSequence::padded_to(std::size_t len) const {
  TokenSequence out;
  for (auto t : ids)
    if (t != kPad) out.ids.push_back(t);
  if (out.ids.size() > len) throw ContractError("padded_to: content longer than target length");
  out.ids.resize(len, kPad);
  return out;
}

TokenSequence tokenize(std::span<const std::string> words, std::size_t pad_to) {
  if (words.size() + 1 > pad_to) {
    throw ContractError("tokenize: " + std::to_string(words.size()) +
                        " words do not fit a sequence of length " + std::to_string(pad_to));
  }
  const auto& v = vocabulary();
  TokenSequence seq;
  seq.ids.reserve(pad_to);
  seq.ids.push_back(kCls);
  for (const auto& w : words) {
    const auto id = v.id(w);
    if (v.is_special(id)) throw ContractError("tokenize: special token in text");
    seq.ids.push_back(id);
  }
  seq.ids.resize(pad_to, kPad);
  return seq;
}

TokenSequence tokenize(std::string_view text, std::size_t pad_to) {
  std::vector<std::string> words;
  std::istringstream is{std::string(text)};
  for (std::string w; is >> w;) {
    std::transform(w.begin(), w.end(), w.begin(),
                   [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    words.push_back(std::move(w));
  }
  return tokenize(words, pad_to);
}

std::vector<std::string> detokenize(const TokenSequence& tokens) {
  std::vector<std::string> words;
  const auto& v = vocabulary();
  for (auto id : tokens.ids) {
    if (id == kPad || id == kCls) continue;
    words.push_back(v.word(id));
  }
  return words;
}

std::string join_words(const std::vector<std::string>& words) {
  std::string out;
  for (const auto& w : words) {
    if (!out.empty()) out += ' ';
    out += w;
  }
  return out;
}

}  // namespace pf::synth
