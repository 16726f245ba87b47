#pragma once

#include <cstdint>
#include <deque>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "pairforge/augment.hpp"
#include "pairforge/encoders.hpp"
#include "pairforge/losses.hpp"

namespace pf {

/// Fixed-capacity FIFO of past text embeddings, mined for nearest neighbours.
class EmbeddingQueue {
 public:
  struct Entry {
    std::vector<double> embedding;
    std::uint32_t id;
  };

  explicit EmbeddingQueue(std::size_t capacity = 256);

  void push(std::span<const double> embedding, std::uint32_t id);
  /// Pushes every row of a [B,E] tensor with its sample id.
  void push_rows(const Tensor& embeddings, const std::vector<std::uint32_t>& ids);

  /// Index of the stored entry with maximum cosine similarity to `query`,
  /// skipping entries whose id equals `exclude_id`. Ties go to the older entry.
  std::optional<std::size_t> nearest(std::span<const double> query, std::uint32_t exclude_id) const;

  std::size_t size() const { return entries_.size(); }
  std::size_t capacity() const { return capacity_; }
  const Entry& operator[](std::size_t i) const { return entries_[i]; }
  void clear() { entries_.clear(); }

 private:
  std::size_t capacity_;
  std::deque<Entry> entries_;
};

struct DeclipWeights {
  double alpha = 0.2;  // self-supervision (image SimCLR + text MLM)
  double beta = 0.2;   // multi-view pairs
  double gamma = 0.2;  // nearest-neighbour pairs

  void validate() const;
  double original() const { return 1.0 - alpha - beta - gamma; }
  bool any() const { return alpha > 0 || beta > 0 || gamma > 0; }
};

struct DeclipConfig {
  DeclipWeights weights;
  LossKind loss = LossKind::Combined;
  LossConfig loss_cfg;
  AugmentParams augment;
  EdaParams eda;
  MlmParams mlm;
};

/// One training batch: raw images [B,1,64,64], impressions and sample ids.
struct PairBatch {
  Tensor images;
  std::vector<synth::TokenSequence> texts;
  std::vector<std::uint32_t> ids;
  std::uint64_t seed = 0;  // fixes every augmentation of the step
};

struct DeclipResult {
  Tensor total;
  /// Every computed term by name: orig, mvs, iss, tss, nn.
  std::map<std::string, Tensor> terms;
  /// Weight applied to each term in `total`.
  std::map<std::string, double> weights;
  /// Positive pair kinds used for every sample, e.g. "v,t", "v',tNN".
  std::vector<std::string> pairs;
};

/// Embeddings feeding the weighted objective. Optional members stay undefined
/// when their term is inactive.
struct DeclipEmbeddings {
  Tensor v, v_local;    // view I
  Tensor v2, v2_local;  // crop view I'
  Tensor t, t_local;    // text T
  std::vector<std::size_t> t_lengths;
  Tensor t2, t2_local;  // EDA view T'
  std::vector<std::size_t> t2_lengths;
  Tensor t_nn;  // [B,E] queue neighbours, constant; undefined while the queue is cold
  Tensor mlm;   // masked-token loss on T
};

/// Weighted combination of the active terms.
DeclipResult declip_objective(const DeclipEmbeddings& e, const DeclipConfig& cfg);

/// Per-sample augmented views as used by declip_step.
Tensor augmented_view(const Tensor& images, const std::vector<std::uint32_t>& ids, const AugmentParams& p,
                      std::uint64_t seed);
Tensor cropped_view(const Tensor& augmented, const std::vector<std::uint32_t>& ids, const AugmentParams& p,
                    std::uint64_t seed);
std::vector<synth::TokenSequence> eda_view(const std::vector<synth::TokenSequence>& texts,
                                           const std::vector<std::uint32_t>& ids, const EdaParams& p,
                                           std::uint64_t seed);

/// Masked-token cross-entropy of the text encoder's MLM head.
Tensor mlm_loss(const TextEncoder& enc, const std::vector<MlmSample>& samples);
std::vector<MlmSample> mlm_view(const std::vector<synth::TokenSequence>& texts,
                                const std::vector<std::uint32_t>& ids, const MlmParams& p, std::uint64_t seed);

/// Builds the extra views, evaluates the weighted objective and finally pushes
/// the batch's text embeddings into `queue`. Terms with zero weight are not
/// computed. While the queue holds fewer than B entries the nearest-neighbour
/// weight moves to the original pair.
DeclipResult declip_step(const PairBatch& batch, const DualEncoder& model, const DeclipConfig& cfg,
                         EmbeddingQueue& queue);

}  // namespace pf
