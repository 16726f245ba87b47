#include "pairforge/pretrain.hpp"

#include <algorithm>

#include "pairforge/declip.hpp"
#include "pairforge/losses.hpp"
#include "pairforge/ops.hpp"
#include "pairforge/rng.hpp"

namespace pf {

Tensor batch_images(const synth::Dataset& data, const std::vector<std::uint32_t>& ids) {
  std::vector<Tensor> imgs;
  imgs.reserve(ids.size());
  for (auto id : ids) imgs.push_back(data.image_tensor(id));
  return stack_images(imgs);
}

Tensor simclr_loss(const ImageEncoder& enc, const Tensor& images, const std::vector<std::uint32_t>& ids,
                   const PretrainConfig& cfg, std::uint64_t batch_seed) {
  const std::size_t n = images.dim(0);
  if (n != ids.size()) throw DimensionError("simclr_loss: one id per image required");
  const std::size_t px = images.numel() / n;
  std::vector<Tensor> a, b;
  for (std::size_t i = 0; i < n; ++i) {
    auto d = images.data().subspan(i * px, px);
    auto img = Tensor::from({1, 64, 64}, std::vector<double>(d.begin(), d.end()));
    a.push_back(simclr_augment(img, cfg.simclr, derive_seed(batch_seed, ids[i], 1)));
    b.push_back(simclr_augment(img, cfg.simclr, derive_seed(batch_seed, ids[i], 2)));
  }
  return infonce(enc.encode(stack_images(a)).global, enc.encode(stack_images(b)).global, cfg.tau);
}

PretrainResult simclr_pretrain(const synth::Dataset& data, const std::vector<std::uint32_t>& train_ids,
                               const std::vector<std::uint32_t>& val_ids, ImageEncoder& enc,
                               const PretrainConfig& cfg) {
  if (train_ids.empty()) throw ContractError("simclr_pretrain: empty image set");
  const auto& val = val_ids.empty() ? train_ids : val_ids;
  const auto val_batches = validation_batches(val, cfg.schedule);

  auto step = [&](std::size_t it, const std::vector<std::uint32_t>& ids) {
    auto loss = simclr_loss(enc, batch_images(data, ids), ids, cfg, derive_seed(cfg.seed, 0x51, it));
    return StepOutput{loss, {}};
  };
  auto validate = [&] {
    NoGradGuard ng;
    double total = 0.0;
    for (std::size_t k = 0; k < val_batches.size(); ++k)
      total += simclr_loss(enc, batch_images(data, val_batches[k]), val_batches[k], cfg, derive_seed(cfg.seed, 0xC0, k))
                   .item();
    return total / static_cast<double>(val_batches.size());
  };
  PretrainResult r;
  r.summary = run_schedule(enc.params(), cfg.adam, cfg.schedule, train_ids, cfg.seed, step, validate);
  r.checkpoint = make_checkpoint("image-pretrain", "image", cfg.seed, enc.config(), enc.params());
  return r;
}

TextPretrainLoss text_specialize_loss(const TextEncoder& enc, const std::vector<synth::TokenSequence>& findings,
                                      const std::vector<synth::TokenSequence>& impressions,
                                      const std::vector<std::uint32_t>& ids, const PretrainConfig& cfg,
                                      std::uint64_t batch_seed) {
  if (findings.empty() || findings.size() != impressions.size() || findings.size() != ids.size())
    throw ContractError("text_specialize_loss: need one findings and one impression per id");
  TextPretrainLoss out;
  const auto f = enc.encode(trim_batch(findings));
  const auto im = enc.encode(trim_batch(impressions));
  out.contrastive = infonce(f.global, im.global, cfg.tau);
  out.total = out.contrastive;
  if (cfg.mlm_weight > 0) {
    out.mlm = mlm_loss(enc, mlm_view(findings, ids, cfg.mlm, batch_seed));
    out.total = add(out.total, scale(out.mlm, cfg.mlm_weight));
  }
  return out;
}

namespace {

void report_batch(const synth::Dataset& data, const std::vector<std::uint32_t>& ids,
                  std::vector<synth::TokenSequence>& findings, std::vector<synth::TokenSequence>& impressions) {
  findings.clear();
  impressions.clear();
  for (auto id : ids) {
    findings.push_back(data.sample(id).report.findings);
    impressions.push_back(data.sample(id).report.impression);
  }
}

}  // namespace

PretrainResult text_specialize(const synth::Dataset& data, const std::vector<std::uint32_t>& train_ids,
                               const std::vector<std::uint32_t>& val_ids, TextEncoder& enc,
                               const PretrainConfig& cfg) {
  if (train_ids.empty()) throw ContractError("text_specialize: empty report set");
  const auto& val = val_ids.empty() ? train_ids : val_ids;
  const auto val_batches = validation_batches(val, cfg.schedule);
  std::vector<synth::TokenSequence> f, im;

  auto step = [&](std::size_t it, const std::vector<std::uint32_t>& ids) {
    report_batch(data, ids, f, im);
    auto l = text_specialize_loss(enc, f, im, ids, cfg, derive_seed(cfg.seed, 0x52, it));
    StepOutput s{l.total, {{"contrastive", l.contrastive.item()}}};
    if (l.mlm.defined()) s.terms["mlm"] = l.mlm.item();
    return s;
  };
  auto validate = [&] {
    NoGradGuard ng;
    double total = 0.0;
    for (std::size_t k = 0; k < val_batches.size(); ++k) {
      report_batch(data, val_batches[k], f, im);
      total += text_specialize_loss(enc, f, im, val_batches[k], cfg, derive_seed(cfg.seed, 0xC1, k)).total.item();
    }
    return total / static_cast<double>(val_batches.size());
  };
  PretrainResult r;
  r.summary = run_schedule(enc.params(), cfg.adam, cfg.schedule, train_ids, cfg.seed, step, validate);
  r.checkpoint = make_checkpoint("text-pretrain", "text", cfg.seed, enc.config(), enc.params());
  return r;
}

double mlm_accuracy(const TextEncoder& enc, const std::vector<synth::TokenSequence>& texts, const MlmParams& p,
                    std::uint64_t seed) {
  NoGradGuard ng;
  std::size_t hits = 0, total = 0;
  constexpr std::size_t kChunk = 32;
  for (std::size_t start = 0; start < texts.size(); start += kChunk) {
    std::vector<MlmSample> samples;
    std::vector<synth::TokenSequence> seqs;
    for (std::size_t i = start; i < std::min(texts.size(), start + kChunk); ++i) {
      samples.push_back(mlm_mask(texts[i], p, derive_seed(seed, i)));
      seqs.push_back(samples.back().tokens);
    }
    seqs = trim_batch(seqs);
    const Tensor logits = enc.mlm_logits(seqs);
    const std::size_t L = logits.dim(1), V = logits.dim(2);
    for (std::size_t b = 0; b < samples.size(); ++b)
      for (std::size_t k = 0; k < samples[b].positions.size(); ++k) {
        const auto row = logits.data().subspan((b * L + samples[b].positions[k]) * V, V);
        const auto arg = static_cast<std::size_t>(std::ranges::max_element(row) - row.begin());
        hits += arg == samples[b].targets[k];
        ++total;
      }
  }
  return total == 0 ? 0.0 : static_cast<double>(hits) / static_cast<double>(total);
}

}  // namespace pf
