#pragma once

#include <cstdint>
#include <vector>

#include "pairforge/tensor.hpp"
#include "pairforge/vocab.hpp"

namespace pf {

/// Geometric and photometric ranges for the augmentation used while training
/// the vision-language model. Distances are in pixels of the 64x64 image.
struct AugmentParams {
  double translate_px = 5.0;
  double rotate_deg = 10.0;
  double brightness = 0.2;  // multiplicative factor in [1-b, 1+b]
  double scale = 0.1;       // zoom factor in [1-s, 1+s]
  double noise_sigma = 0.05;
  double noise_prob = 0.5;
  double crop_fraction = 0.5;  // area of the second view's crop
};

/// Ranges for the image self-supervision stage.
struct SimclrAugParams {
  double translate_px = 20.0;
  double rotate_deg = 180.0;
  double brightness = 0.2;
  double shear_deg = 40.0;  // x-axis shear in [-s, s]
  double scale = 0.1;
  double flip_prob = 0.5;
  double noise_sigma = 0.05;
  double noise_prob = 0.5;
  std::vector<double> blur_sigmas{1.0, 3.0, 5.0};
  double blur_prob = 0.5;
};

/// One sampled set of transform parameters.
struct AugmentDraw {
  double tx = 0, ty = 0, rotate_deg = 0, scale = 1, shear_deg = 0, brightness = 1;
  bool flip = false;
  bool noise = false;
  double blur_sigma = 0;  // 0 means no blur
};

AugmentDraw sample_augment(const AugmentParams& p, std::uint64_t seed);
AugmentDraw sample_simclr(const SimclrAugParams& p, std::uint64_t seed);

/// Applies a draw to a [1,64,64] image: affine resampling (bilinear, edges
/// clamped), flip, blur, brightness, then noise from `seed`, clamped to [0,1].
Tensor apply_augment(const Tensor& img, const AugmentDraw& d, double noise_sigma, std::uint64_t seed);

Tensor image_augment(const Tensor& img, const AugmentParams& p, std::uint64_t seed);
Tensor simclr_augment(const Tensor& img, const SimclrAugParams& p, std::uint64_t seed);

/// Random square crop covering `area_fraction` of the image, resized back to
/// the input size with bilinear interpolation.
Tensor random_crop_resize(const Tensor& img, double area_fraction, std::uint64_t seed);
/// Bilinear resize of a [1,H,W] image.
Tensor resize_bilinear(const Tensor& img, std::size_t out_h, std::size_t out_w);

/// Stacks [1,64,64] images into [N,1,64,64].
Tensor stack_images(const std::vector<Tensor>& images);

struct EdaParams {
  double rate = 0.1;   // n_syn = n_ins = n_swap = round(rate * W)
  double p_del = 0.1;
};

struct EdaCounts {
  std::size_t n_syn = 0, n_ins = 0, n_swap = 0;
};
EdaCounts eda_counts(std::size_t words, double rate);

/// Synonym replacement, synonym insertion, swaps, then random deletion over the
/// content words. The result is re-padded to kMaxLen and truncated if needed.
synth::TokenSequence eda_augment(const synth::TokenSequence& tokens, const EdaParams& p, std::uint64_t seed);

struct MlmSample {
  synth::TokenSequence tokens;          // with replacements applied
  std::vector<std::size_t> positions;   // selected positions
  std::vector<std::uint32_t> targets;   // original ids at those positions
};

struct MlmParams {
  double p = 0.15;
  double mask_frac = 0.8;    // selected -> [MASK]
  double random_frac = 0.1;  // selected -> random content word; the rest stay unchanged
};

MlmSample mlm_mask(const synth::TokenSequence& tokens, const MlmParams& p, std::uint64_t seed);

}  // namespace pf
