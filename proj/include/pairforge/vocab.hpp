#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace pf::synth {

inline constexpr std::size_t kMaxLen = 32;
inline constexpr std::uint32_t kPad = 0;
inline constexpr std::uint32_t kMask = 1;
inline constexpr std::uint32_t kCls = 2;

/// Fixed word table shared by the generator, the tokenizer and the text encoder.
class Vocabulary {
 public:
  Vocabulary();

  std::size_t size() const { return words_.size(); }
  const std::string& word(std::uint32_t id) const { return words_.at(id); }
  std::uint32_t id(std::string_view word) const;
  bool contains(std::string_view word) const;
  const std::vector<std::string>& words() const { return words_; }

  bool is_special(std::uint32_t id) const { return id <= kCls; }

  /// Synonym pool the word belongs to, itself included; empty when it has none.
  std::span<const std::uint32_t> synonyms(std::uint32_t id) const;

 private:
  void add(std::string_view w);
  std::vector<std::string> words_;
  std::unordered_map<std::string, std::uint32_t> index_;
  std::vector<std::vector<std::uint32_t>> pools_;
  std::vector<int> pool_of_;
};

const Vocabulary& vocabulary();

/// CLS-prefixed, PAD-suffixed id sequence of length at most kMaxLen.
struct TokenSequence {
  std::vector<std::uint32_t> ids;

  /// Number of content tokens (neither CLS nor PAD).
  std::size_t content_length() const;
  /// Positions of content tokens.
  std::vector<std::size_t> content_positions() const;
  /// Same content re-padded to `len` (>= current content + 1).
  TokenSequence padded_to(std::size_t len) const;
  bool operator==(const TokenSequence&) const = default;
};

/// Maps words to ids, prepends CLS and pads to `pad_to`. Throws ContractError
/// on out-of-vocabulary words or overflow.
TokenSequence tokenize(std::span<const std::string> words, std::size_t pad_to = kMaxLen);
TokenSequence tokenize(std::string_view text, std::size_t pad_to = kMaxLen);
std::vector<std::string> detokenize(const TokenSequence& tokens);
std::string join_words(const std::vector<std::string>& words);

}  // namespace pf::synth
