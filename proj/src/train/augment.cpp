#include "pairforge/augment.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "pairforge/rng.hpp"

namespace pf {

namespace {

constexpr double kDeg = std::numbers::pi / 180.0;

struct Image {
  std::size_t h, w;
  std::vector<double> px;
  double at(double y, double x) const {  // bilinear, edges clamped
    y = std::clamp(y, 0.0, static_cast<double>(h - 1));
    x = std::clamp(x, 0.0, static_cast<double>(w - 1));
    const auto y0 = static_cast<std::size_t>(y), x0 = static_cast<std::size_t>(x);
    const std::size_t y1 = std::min(y0 + 1, h - 1), x1 = std::min(x0 + 1, w - 1);
    const double fy = y - static_cast<double>(y0), fx = x - static_cast<double>(x0);
    return (1 - fy) * ((1 - fx) * px[y0 * w + x0] + fx * px[y0 * w + x1]) +
           fy * ((1 - fx) * px[y1 * w + x0] + fx * px[y1 * w + x1]);
  }
};

Image as_image(const Tensor& t) {
  if (t.rank() != 3 || t.dim(0) != 1) throw DimensionError("expected a [1,H,W] image, got " + shape_str(t.shape()));
  return {t.dim(1), t.dim(2), std::vector<double>(t.data().begin(), t.data().end())};
}

Tensor to_tensor(Image img) { return Tensor::from({1, img.h, img.w}, std::move(img.px)); }

void gaussian_blur(Image& img, double sigma) {
  const int r = static_cast<int>(std::ceil(3.0 * sigma));
  std::vector<double> k(2 * r + 1);
  double z = 0.0;
  for (int i = -r; i <= r; ++i) z += k[i + r] = std::exp(-0.5 * i * i / (sigma * sigma));
  for (auto& v : k) v /= z;
  const int h = static_cast<int>(img.h), w = static_cast<int>(img.w);
  std::vector<double> tmp(img.px.size());
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      double s = 0.0;
      for (int i = -r; i <= r; ++i) s += k[i + r] * img.px[y * w + std::clamp(x + i, 0, w - 1)];
      tmp[y * w + x] = s;
    }
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      double s = 0.0;
      for (int i = -r; i <= r; ++i) s += k[i + r] * tmp[std::clamp(y + i, 0, h - 1) * w + x];
      img.px[y * w + x] = s;
    }
}

}  // namespace

AugmentDraw sample_augment(const AugmentParams& p, std::uint64_t seed) {
  Rng rng(derive_seed(seed, 0xA0));
  AugmentDraw d;
  d.tx = rng.uniform(-p.translate_px, p.translate_px);
  d.ty = rng.uniform(-p.translate_px, p.translate_px);
  d.rotate_deg = rng.uniform(-p.rotate_deg, p.rotate_deg);
  d.scale = rng.uniform(1.0 - p.scale, 1.0 + p.scale);
  d.brightness = rng.uniform(1.0 - p.brightness, 1.0 + p.brightness);
  d.noise = rng.bernoulli(p.noise_prob);
  return d;
}

AugmentDraw sample_simclr(const SimclrAugParams& p, std::uint64_t seed) {
  Rng rng(derive_seed(seed, 0xA1));
  AugmentDraw d;
  d.tx = rng.uniform(-p.translate_px, p.translate_px);
  d.ty = rng.uniform(-p.translate_px, p.translate_px);
  d.rotate_deg = rng.uniform(-p.rotate_deg, p.rotate_deg);
  d.shear_deg = rng.uniform(-p.shear_deg, p.shear_deg);
  d.scale = rng.uniform(1.0 - p.scale, 1.0 + p.scale);
  d.flip = rng.bernoulli(p.flip_prob);
  d.brightness = rng.uniform(1.0 - p.brightness, 1.0 + p.brightness);
  d.noise = rng.bernoulli(p.noise_prob);
  if (rng.bernoulli(p.blur_prob) && !p.blur_sigmas.empty()) d.blur_sigma = p.blur_sigmas[rng.below(p.blur_sigmas.size())];
  return d;
}

Tensor apply_augment(const Tensor& img, const AugmentDraw& d, double noise_sigma, std::uint64_t seed) {
  const Image src = as_image(img);
  Image out{src.h, src.w, std::vector<double>(src.px.size())};
  const double cy = (static_cast<double>(src.h) - 1) / 2, cx = (static_cast<double>(src.w) - 1) / 2;
  // Forward map q = c + t + s * R * Shear * (p - c); sample at its inverse.
  const double th = d.rotate_deg * kDeg, sh = std::tan(d.shear_deg * kDeg);
  const double a = d.scale * std::cos(th), b = d.scale * (std::cos(th) * sh - std::sin(th));
  const double c = d.scale * std::sin(th), e = d.scale * (std::sin(th) * sh + std::cos(th));
  const double det = a * e - b * c;
  for (std::size_t y = 0; y < src.h; ++y)
    for (std::size_t x = 0; x < src.w; ++x) {
      const double xq = d.flip ? static_cast<double>(src.w - 1 - x) : static_cast<double>(x);
      const double ux = xq - cx - d.tx, uy = static_cast<double>(y) - cy - d.ty;
      const double px = cx + (e * ux - b * uy) / det;
      const double py = cy + (-c * ux + a * uy) / det;
      out.px[y * src.w + x] = src.at(py, px);
    }
  if (d.blur_sigma > 0) gaussian_blur(out, d.blur_sigma);
  Rng noise(derive_seed(seed, 0xA2));
  for (auto& v : out.px) {
    v *= d.brightness;
    if (d.noise) v += noise.normal(0.0, noise_sigma);
    v = std::clamp(v, 0.0, 1.0);
  }
  return to_tensor(std::move(out));
}

Tensor image_augment(const Tensor& img, const AugmentParams& p, std::uint64_t seed) {
  return apply_augment(img, sample_augment(p, seed), p.noise_sigma, seed);
}

Tensor simclr_augment(const Tensor& img, const SimclrAugParams& p, std::uint64_t seed) {
  return apply_augment(img, sample_simclr(p, seed), p.noise_sigma, seed);
}

Tensor resize_bilinear(const Tensor& img, std::size_t out_h, std::size_t out_w) {
  const Image src = as_image(img);
  Image out{out_h, out_w, std::vector<double>(out_h * out_w)};
  const double sy = static_cast<double>(src.h) / out_h, sx = static_cast<double>(src.w) / out_w;
  for (std::size_t y = 0; y < out_h; ++y)
    for (std::size_t x = 0; x < out_w; ++x)
      out.px[y * out_w + x] = src.at((y + 0.5) * sy - 0.5, (x + 0.5) * sx - 0.5);
  return to_tensor(std::move(out));
}

Tensor random_crop_resize(const Tensor& img, double area_fraction, std::uint64_t seed) {
  if (!(area_fraction > 0.0 && area_fraction <= 1.0)) throw ContractError("crop fraction must be in (0, 1]");
  const Image src = as_image(img);
  const auto side_h = std::max<std::size_t>(1, std::lround(static_cast<double>(src.h) * std::sqrt(area_fraction)));
  const auto side_w = std::max<std::size_t>(1, std::lround(static_cast<double>(src.w) * std::sqrt(area_fraction)));
  Rng rng(derive_seed(seed, 0xA3));
  const std::size_t y0 = rng.below(src.h - side_h + 1), x0 = rng.below(src.w - side_w + 1);
  std::vector<double> crop(side_h * side_w);
  for (std::size_t y = 0; y < side_h; ++y)
    for (std::size_t x = 0; x < side_w; ++x) crop[y * side_w + x] = src.px[(y0 + y) * src.w + x0 + x];
  return resize_bilinear(Tensor::from({1, side_h, side_w}, std::move(crop)), src.h, src.w);
}

Tensor stack_images(const std::vector<Tensor>& images) {
  if (images.empty()) throw ContractError("stack_images: no images");
  const Shape s = images.front().shape();
  std::vector<double> all;
  all.reserve(images.size() * numel_of(s));
  for (const auto& im : images) {
    if (im.shape() != s) throw DimensionError("stack_images: mixed image shapes");
    all.insert(all.end(), im.data().begin(), im.data().end());
  }
  Shape out{images.size()};
  out.insert(out.end(), s.begin(), s.end());
  return Tensor::from(out, std::move(all));
}

// ---------------------------------------------------------------------------
// Text

EdaCounts eda_counts(std::size_t words, double rate) {
  const auto n = static_cast<std::size_t>(std::llround(rate * static_cast<double>(words)));
  return {n, n, n};
}

synth::TokenSequence eda_augment(const synth::TokenSequence& tokens, const EdaParams& p, std::uint64_t seed) {
  const auto& vocab = synth::vocabulary();
  std::vector<std::uint32_t> words;
  for (auto pos : tokens.content_positions()) words.push_back(tokens.ids[pos]);
  if (words.empty()) throw ContractError("eda_augment: sequence has no content words");
  const auto counts = eda_counts(words.size(), p.rate);
  Rng rng(derive_seed(seed, 0xE0));

  auto other_synonym = [&](std::uint32_t id) -> std::uint32_t {
    auto pool = vocab.synonyms(id);
    if (pool.size() < 2) return id;
    std::uint32_t pick;
    do pick = pool[rng.below(pool.size())];
    while (pick == id);
    return pick;
  };

  // Synonym replacement at distinct positions that have synonyms.
  std::vector<std::size_t> candidates;
  for (std::size_t i = 0; i < words.size(); ++i)
    if (vocab.synonyms(words[i]).size() > 1) candidates.push_back(i);
  rng.shuffle(candidates);
  for (std::size_t k = 0; k < std::min(counts.n_syn, candidates.size()); ++k)
    words[candidates[k]] = other_synonym(words[candidates[k]]);

  // Insert a synonym of a random word that has one, at a random position.
  for (std::size_t k = 0; k < counts.n_ins; ++k) {
    std::vector<std::size_t> with_syn;
    for (std::size_t i = 0; i < words.size(); ++i)
      if (vocab.synonyms(words[i]).size() > 1) with_syn.push_back(i);
    if (with_syn.empty()) break;
    const auto src = words[with_syn[rng.below(with_syn.size())]];
    const auto at = rng.below(words.size() + 1);
    words.insert(words.begin() + static_cast<std::ptrdiff_t>(at), other_synonym(src));
  }

  for (std::size_t k = 0; k < counts.n_swap && words.size() >= 2; ++k) {
    const auto i = rng.below(words.size());
    auto j = rng.below(words.size() - 1);
    if (j >= i) ++j;
    std::swap(words[i], words[j]);
  }

  std::vector<std::uint32_t> kept;
  for (auto w : words)
    if (!rng.bernoulli(p.p_del)) kept.push_back(w);
  if (kept.empty()) kept.push_back(words[rng.below(words.size())]);
  if (kept.size() > synth::kMaxLen - 1) kept.resize(synth::kMaxLen - 1);

  synth::TokenSequence out;
  out.ids.reserve(synth::kMaxLen);
  out.ids.push_back(synth::kCls);
  out.ids.insert(out.ids.end(), kept.begin(), kept.end());
  out.ids.resize(synth::kMaxLen, synth::kPad);
  return out;
}

MlmSample mlm_mask(const synth::TokenSequence& tokens, const MlmParams& p, std::uint64_t seed) {
  if (p.p < 0.0 || p.p > 1.0) throw ContractError("mlm_mask: probability must be in [0, 1]");
  const auto& vocab = synth::vocabulary();
  Rng rng(derive_seed(seed, 0xE1));
  MlmSample out{tokens, {}, {}};
  const std::uint64_t n_content = vocab.size() - (synth::kCls + 1);
  for (std::size_t i = 0; i < tokens.ids.size(); ++i) {
    const auto id = tokens.ids[i];
    if (vocab.is_special(id)) continue;
    if (!rng.bernoulli(p.p)) continue;
    out.positions.push_back(i);
    out.targets.push_back(id);
    const double r = rng.uniform();
    if (r < p.mask_frac) out.tokens.ids[i] = synth::kMask;
    else if (r < p.mask_frac + p.random_frac)
      out.tokens.ids[i] = static_cast<std::uint32_t>(synth::kCls + 1 + rng.below(n_content));
  }
  return out;
}

}  // namespace pf
