#include "pairforge/encoders.hpp"

#include <cmath>
#include <cstdio>
#include <json.hpp>

#include "pairforge/ops.hpp"
#include "pairforge/rng.hpp"

namespace pf {

using json = nlohmann::json;

std::vector<Tensor> tensors_of(const ParamList& params) {
  std::vector<Tensor> out;
  out.reserve(params.size());
  for (const auto& p : params) out.push_back(p.tensor);
  return out;
}

namespace {

std::uint64_t fnv1a(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

Tensor init_normal(const Shape& shape, double stddev, std::uint64_t seed, const std::string& name) {
  Rng rng(derive_seed(seed, fnv1a(name)));
  std::vector<double> v(numel_of(shape));
  for (auto& x : v) x = rng.normal(0.0, stddev);
  return Tensor::from(shape, std::move(v), true);
}

Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b) {
  return add_bias(matmul_nt(x, w), b);
}

}  // namespace

std::string EncoderConfig::to_json() const {
  json j{{"embed_dim", embed_dim},     {"channels", channels}, {"text_dim", text_dim},
         {"ffn_dim", ffn_dim},         {"text_layers", text_layers},
         {"max_len", max_len},         {"vocab_size", resolved_vocab()}};
  return j.dump();
}

EncoderConfig EncoderConfig::from_json(const std::string& text) {
  const auto j = json::parse(text);
  EncoderConfig c;
  c.embed_dim = j.value("embed_dim", c.embed_dim);
  c.channels = j.value("channels", c.channels);
  c.text_dim = j.value("text_dim", c.text_dim);
  c.ffn_dim = j.value("ffn_dim", c.ffn_dim);
  c.text_layers = j.value("text_layers", c.text_layers);
  c.max_len = j.value("max_len", c.max_len);
  c.vocab_size = j.value("vocab_size", c.vocab_size);
  return c;
}

std::string fnv1a_hex(std::string_view text) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(fnv1a(text)));
  return buf;
}

std::string EncoderConfig::hash() const { return fnv1a_hex(to_json()); }

std::size_t EncoderConfig::resolved_vocab() const {
  return vocab_size ? vocab_size : synth::vocabulary().size();
}

// ---------------------------------------------------------------------------
// Image encoder

ImageEncoder::ImageEncoder(const EncoderConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
  std::size_t in = 3;
  for (std::size_t i = 0; i < 3; ++i) {
    const std::size_t out = cfg.channels[i];
    const std::string base = "image.conv" + std::to_string(i + 1);
    params_.push_back({base + ".w", init_normal({out, in, 3, 3}, std::sqrt(2.0 / (in * 9.0)), seed, base + ".w")});
    params_.push_back({base + ".b", Tensor::zeros({out}, true)});
    in = out;
  }
  params_.push_back({"image.proj.w", init_normal({cfg.embed_dim, in}, std::sqrt(1.0 / in), seed, "image.proj.w")});
  params_.push_back({"image.proj.b", Tensor::zeros({cfg.embed_dim}, true)});
}

ImageEmbedding ImageEncoder::encode(const Tensor& images) const {
  constexpr std::size_t S = 64;
  std::size_t n = 0;
  if (images.rank() == 3 && images.shape() == Shape{1, S, S}) n = 1;
  else if (images.rank() == 4 && images.dim(1) == 1 && images.dim(2) == S && images.dim(3) == S) n = images.dim(0);
  if (n == 0) {
    throw DimensionError("image encoder expects [1,64,64] or [N,1,64,64], got " + shape_str(images.shape()));
  }
  std::vector<double> in(n * 3 * S * S);
  auto px = images.data();
  for (std::size_t b = 0; b < n; ++b) {
    double* dst = in.data() + b * 3 * S * S;
    std::copy_n(px.data() + b * S * S, S * S, dst);
    for (std::size_t y = 0; y < S; ++y)
      for (std::size_t x = 0; x < S; ++x) {
        dst[S * S + y * S + x] = 2.0 * static_cast<double>(x) / (S - 1) - 1.0;
        dst[2 * S * S + y * S + x] = 2.0 * static_cast<double>(y) / (S - 1) - 1.0;
      }
  }
  Tensor h = Tensor::from({n, 3, S, S}, std::move(in));
  for (std::size_t i = 0; i < 3; ++i) h = max_pool2d(relu(conv2d(h, p(2 * i), p(2 * i + 1), 1, 1)), 2);
  const std::size_t C = cfg_.channels[2];
  // [N,C,8,8] -> [N*M, C]
  h = reshape(transpose_last(reshape(h, {n, C, kImageRegions})), {n * kImageRegions, C});
  Tensor regions = reshape(linear(h, p(6), p(7)), {n, kImageRegions, cfg_.embed_dim});
  ImageEmbedding out;
  out.local = l2_normalize(regions, 2);
  out.global = l2_normalize(mean(regions, 1), 1);
  return out;
}

// ---------------------------------------------------------------------------
// Text encoder

std::vector<synth::TokenSequence> trim_batch(const std::vector<synth::TokenSequence>& batch) {
  std::size_t len = 1;
  for (const auto& s : batch) len = std::max(len, s.content_length() + 1);
  std::vector<synth::TokenSequence> out;
  out.reserve(batch.size());
  for (const auto& s : batch) out.push_back(s.padded_to(len));
  return out;
}

TextEncoder::TextEncoder(const EncoderConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
  const std::size_t D = cfg.text_dim, F = cfg.ffn_dim, V = cfg.resolved_vocab();
  auto add_normal = [&](const std::string& name, Shape shape, double sd) {
    params_.push_back({name, init_normal(shape, sd, seed, name)});
  };
  auto add_const = [&](const std::string& name, Shape shape, double v) {
    params_.push_back({name, Tensor::full(shape, v, true)});
  };
  add_normal("text.tok_emb", {V, D}, 0.02);
  add_normal("text.pos_emb", {cfg.max_len, D}, 0.02);
  add_const("text.ln0.g", {D}, 1.0);
  add_const("text.ln0.b", {D}, 0.0);
  const double lin = std::sqrt(1.0 / D);
  for (std::size_t l = 0; l < cfg.text_layers; ++l) {
    const std::string b = "text.l" + std::to_string(l) + ".";
    for (const char* m : {"q", "k", "v", "o"}) {
      add_normal(b + "w" + m, {D, D}, lin);
      add_const(b + "b" + m, {D}, 0.0);
    }
    add_const(b + "ln1.g", {D}, 1.0);
    add_const(b + "ln1.b", {D}, 0.0);
    add_normal(b + "ff1.w", {F, D}, std::sqrt(2.0 / D));
    add_const(b + "ff1.b", {F}, 0.0);
    add_normal(b + "ff2.w", {D, F}, std::sqrt(1.0 / F));
    add_const(b + "ff2.b", {D}, 0.0);
    add_const(b + "ln2.g", {D}, 1.0);
    add_const(b + "ln2.b", {D}, 0.0);
  }
  add_normal("text.proj.w", {cfg.embed_dim, D}, lin);
  add_const("text.proj.b", {cfg.embed_dim}, 0.0);
  add_normal("text.mlm.w", {V, D}, lin);
  add_const("text.mlm.b", {V}, 0.0);
}

const Tensor& TextEncoder::p(const std::string& name) const {
  for (const auto& np : params_)
    if (np.name == name) return np.tensor;
  throw ContractError("text encoder has no parameter '" + name + "'");
}

ParamList TextEncoder::encoder_params() const {
  ParamList out;
  for (const auto& np : params_)
    if (!np.name.starts_with("text.mlm.")) out.push_back(np);
  return out;
}

ParamList TextEncoder::mlm_params() const {
  ParamList out;
  for (const auto& np : params_)
    if (np.name.starts_with("text.mlm.")) out.push_back(np);
  return out;
}

Tensor TextEncoder::hidden(const std::vector<synth::TokenSequence>& batch) const {
  if (batch.empty()) throw ContractError("text encoder: empty batch");
  const std::size_t B = batch.size(), L = batch.front().ids.size(), D = cfg_.text_dim;
  const std::size_t V = cfg_.resolved_vocab();
  if (L == 0 || L > cfg_.max_len) throw DimensionError("text encoder: sequence length " + std::to_string(L));
  std::vector<std::size_t> ids(B * L), pos(B * L);
  std::vector<double> mask(B * L * L, 0.0);
  for (std::size_t b = 0; b < B; ++b) {
    const auto& s = batch[b].ids;
    if (s.size() != L) throw DimensionError("text encoder: sequences in a batch must share one length");
    if (s[0] != synth::kCls) throw ContractError("text encoder: sequence must start with CLS");
    bool pad = false;
    std::size_t content = 0;
    for (std::size_t i = 0; i < L; ++i) {
      if (s[i] >= V) throw ContractError("text encoder: token id " + std::to_string(s[i]) + " outside vocabulary");
      if (s[i] == synth::kPad) pad = true;
      else if (pad) throw ContractError("text encoder: PAD must only appear as a suffix");
      else if (i > 0) ++content;
      ids[b * L + i] = s[i];
      pos[b * L + i] = i;
      if (s[i] == synth::kPad)
        for (std::size_t q = 0; q < L; ++q) mask[(b * L + q) * L + i] = -1e30;
    }
    if (content == 0) throw ContractError("text encoder: sequence has no content tokens");
  }
  Tensor h = layer_norm(add(gather_rows(p("text.tok_emb"), ids), gather_rows(p("text.pos_emb"), pos)),
                        p("text.ln0.g"), p("text.ln0.b"));
  const Tensor m = Tensor::from({B, L, L}, std::move(mask));
  const double inv = 1.0 / std::sqrt(static_cast<double>(D));
  for (std::size_t l = 0; l < cfg_.text_layers; ++l) {
    const std::string b = "text.l" + std::to_string(l) + ".";
    auto q = reshape(linear(h, p(b + "wq"), p(b + "bq")), {B, L, D});
    auto k = reshape(linear(h, p(b + "wk"), p(b + "bk")), {B, L, D});
    auto v = reshape(linear(h, p(b + "wv"), p(b + "bv")), {B, L, D});
    auto att = softmax(add(scale(bmm_nt(q, k), inv), m), 2);
    auto ctx = reshape(bmm(att, v), {B * L, D});
    h = layer_norm(add(h, linear(ctx, p(b + "wo"), p(b + "bo"))), p(b + "ln1.g"), p(b + "ln1.b"));
    auto f = linear(relu(linear(h, p(b + "ff1.w"), p(b + "ff1.b"))), p(b + "ff2.w"), p(b + "ff2.b"));
    h = layer_norm(add(h, f), p(b + "ln2.g"), p(b + "ln2.b"));
  }
  return h;
}

TextEmbedding TextEncoder::encode(const std::vector<synth::TokenSequence>& batch) const {
  const Tensor h = hidden(batch);
  const std::size_t B = batch.size(), L = batch.front().ids.size();
  const Tensor proj = linear(h, p("text.proj.w"), p("text.proj.b"));
  std::vector<std::size_t> cls(B), rows;
  TextEmbedding out;
  for (std::size_t b = 0; b < B; ++b) {
    cls[b] = b * L;
    const auto positions = batch[b].content_positions();
    for (auto i : positions) rows.push_back(b * L + i);
    out.lengths.push_back(positions.size());
  }
  out.global = l2_normalize(gather_rows(proj, cls), 1);
  out.local_concat = l2_normalize(gather_rows(proj, rows), 1);
  std::size_t off = 0;
  for (auto w : out.lengths) {
    out.local.push_back(slice_rows(out.local_concat, off, off + w));
    off += w;
  }
  return out;
}

Tensor TextEncoder::mlm_logits(const std::vector<synth::TokenSequence>& batch) const {
  const Tensor h = hidden(batch);
  return reshape(linear(h, p("text.mlm.w"), p("text.mlm.b")),
                 {batch.size(), batch.front().ids.size(), cfg_.resolved_vocab()});
}

DualEncoder::DualEncoder(const EncoderConfig& cfg, std::uint64_t seed) : image(cfg, seed), text(cfg, seed) {}

std::vector<Tensor> DualEncoder::all_params() {
  auto out = tensors_of(image.params());
  for (const auto& t : tensors_of(text.params())) out.push_back(t);
  return out;
}

}  // namespace pf
