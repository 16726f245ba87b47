#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "pairforge/tensor.hpp"
#include "pairforge/vocab.hpp"

namespace pf {

struct NamedTensor {
  std::string name;
  Tensor tensor;
};
using ParamList = std::vector<NamedTensor>;

std::vector<Tensor> tensors_of(const ParamList& params);

/// 64-bit FNV-1a as 16 lowercase hex digits.
std::string fnv1a_hex(std::string_view text);

struct EncoderConfig {
  std::size_t embed_dim = 32;                     // E
  std::array<std::size_t, 3> channels{8, 16, 16};  // conv block widths
  std::size_t text_dim = 32;                      // D
  std::size_t ffn_dim = 64;
  std::size_t text_layers = 2;
  std::size_t max_len = synth::kMaxLen;
  std::size_t vocab_size = 0;  // 0 means the synthdata vocabulary size

  std::string to_json() const;
  static EncoderConfig from_json(const std::string& text);
  /// FNV-1a of the canonical JSON form, as 16 hex digits.
  std::string hash() const;
  std::size_t resolved_vocab() const;
};

inline constexpr std::size_t kImageRegions = 64;  // M: 8x8 grid

/// Image encoder outputs for a batch of N images.
struct ImageEmbedding {
  Tensor global;  // [N, E], unit rows
  Tensor local;   // [N, M, E], unit rows
};

/// Small CNN: three conv3x3 -> bias -> ReLU -> 2x max-pool blocks taking
/// 64x64 to 8x8, then a per-region linear projection. Two fixed coordinate
/// planes are stacked with the grayscale input so that the pooled global
/// vector can still tell quadrants apart.
class ImageEncoder {
 public:
  explicit ImageEncoder(const EncoderConfig& cfg = {}, std::uint64_t seed = 0);

  /// Accepts [1,64,64] or [N,1,64,64]. No gradient flows into the pixels.
  ImageEmbedding encode(const Tensor& images) const;

  const ParamList& params() const { return params_; }
  ParamList& params() { return params_; }
  const EncoderConfig& config() const { return cfg_; }

 private:
  const Tensor& p(std::size_t i) const { return params_[i].tensor; }
  EncoderConfig cfg_;
  ParamList params_;
};

/// Text encoder outputs for a batch of B sequences.
struct TextEmbedding {
  Tensor global;                      // [B, E], CLS position, unit rows
  std::vector<Tensor> local;          // B tensors [W_b, E], unit rows
  Tensor local_concat;                // [sum W_b, E]
  std::vector<std::size_t> lengths;   // W_b
};

/// Pads every sequence to the longest content length in the batch plus CLS.
std::vector<synth::TokenSequence> trim_batch(const std::vector<synth::TokenSequence>& batch);

/// Token and position embeddings, post-LN single-head self-attention blocks
/// with PAD keys masked, and a linear projection. The MLM head reads the final
/// hidden states.
class TextEncoder {
 public:
  explicit TextEncoder(const EncoderConfig& cfg = {}, std::uint64_t seed = 0);

  /// All sequences must share one length <= max_len.
  TextEmbedding encode(const std::vector<synth::TokenSequence>& batch) const;
  /// Vocabulary logits [B, L, V].
  Tensor mlm_logits(const std::vector<synth::TokenSequence>& batch) const;

  /// Parameters used by encode(), excluding the MLM head.
  ParamList encoder_params() const;
  ParamList mlm_params() const;
  const ParamList& params() const { return params_; }
  ParamList& params() { return params_; }
  const EncoderConfig& config() const { return cfg_; }

 private:
  Tensor hidden(const std::vector<synth::TokenSequence>& batch) const;  // [B*L, D]
  const Tensor& p(const std::string& name) const;
  EncoderConfig cfg_;
  ParamList params_;
};

/// Both encoders of a vision-language model.
struct DualEncoder {
  ImageEncoder image;
  TextEncoder text;

  DualEncoder(const EncoderConfig& cfg = {}, std::uint64_t seed = 0);
  /// Image and text parameters, MLM head included.
  std::vector<Tensor> all_params();
};

}  // namespace pf
