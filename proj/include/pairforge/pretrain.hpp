#pragma once

#include <cstdint>
#include <vector>

#include "pairforge/augment.hpp"
#include "pairforge/checkpoint.hpp"
#include "pairforge/schedule.hpp"
#include "pairforge/synthdata.hpp"

namespace pf {

struct PretrainConfig {
  Schedule schedule;
  AdamConfig adam;
  double tau = 0.5;
  SimclrAugParams simclr;
  MlmParams mlm;
  double mlm_weight = 1.0;
  std::uint64_t seed = 0;
};

struct PretrainResult {
  Checkpoint checkpoint;
  RunSummary summary;
};

/// Contrastive loss between two independent augmentations of each image.
Tensor simclr_loss(const ImageEncoder& enc, const Tensor& images, const std::vector<std::uint32_t>& ids,
                   const PretrainConfig& cfg, std::uint64_t batch_seed);

/// Image self-supervision on `train_ids` (images only), early-stopped on the
/// same loss over `val_ids` with fixed augmentation seeds.
PretrainResult simclr_pretrain(const synth::Dataset& data, const std::vector<std::uint32_t>& train_ids,
                               const std::vector<std::uint32_t>& val_ids, ImageEncoder& enc,
                               const PretrainConfig& cfg);

struct TextPretrainLoss {
  Tensor total;
  Tensor contrastive;
  Tensor mlm;
};

/// InfoNCE between the global embeddings of findings and impressions plus
/// mlm_weight times the masked-token loss on the findings.
TextPretrainLoss text_specialize_loss(const TextEncoder& enc, const std::vector<synth::TokenSequence>& findings,
                                      const std::vector<synth::TokenSequence>& impressions,
                                      const std::vector<std::uint32_t>& ids, const PretrainConfig& cfg,
                                      std::uint64_t batch_seed);

PretrainResult text_specialize(const synth::Dataset& data, const std::vector<std::uint32_t>& train_ids,
                               const std::vector<std::uint32_t>& val_ids, TextEncoder& enc,
                               const PretrainConfig& cfg);

/// Fraction of masked positions whose argmax prediction is the original token,
/// over `texts` masked with `seed`.
double mlm_accuracy(const TextEncoder& enc, const std::vector<synth::TokenSequence>& texts, const MlmParams& p,
                    std::uint64_t seed);

/// Stacks the images of `ids` into [N,1,64,64].
Tensor batch_images(const synth::Dataset& data, const std::vector<std::uint32_t>& ids);

}  // namespace pf
