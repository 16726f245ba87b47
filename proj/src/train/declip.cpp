#include "pairforge/declip.hpp"

#include "pairforge/ops.hpp"
#include "pairforge/rng.hpp"

namespace pf {

EmbeddingQueue::EmbeddingQueue(std::size_t capacity) : capacity_(capacity) {
  if (capacity == 0) throw ContractError("embedding queue capacity must be positive");
}

void EmbeddingQueue::push(std::span<const double> embedding, std::uint32_t id) {
  if (!entries_.empty() && entries_.front().embedding.size() != embedding.size()) {
    throw DimensionError("embedding queue: dimension changed");
  }
  if (entries_.size() == capacity_) entries_.pop_front();
  entries_.push_back({std::vector<double>(embedding.begin(), embedding.end()), id});
}

void EmbeddingQueue::push_rows(const Tensor& embeddings, const std::vector<std::uint32_t>& ids) {
  if (embeddings.rank() != 2 || embeddings.dim(0) != ids.size()) {
    throw DimensionError("embedding queue: expected [B,E] rows with B ids, got " + shape_str(embeddings.shape()));
  }
  const std::size_t E = embeddings.dim(1);
  for (std::size_t b = 0; b < ids.size(); ++b) push(embeddings.data().subspan(b * E, E), ids[b]);
}

std::optional<std::size_t> EmbeddingQueue::nearest(std::span<const double> query, std::uint32_t exclude_id) const {
  std::optional<std::size_t> best;
  double best_sim = 0.0;
  for (std::size_t i = 0; i < entries_.size(); ++i) {
    const auto& e = entries_[i];
    if (e.id == exclude_id) continue;
    if (e.embedding.size() != query.size()) throw DimensionError("embedding queue: query dimension mismatch");
    double s = 0.0;
    for (std::size_t k = 0; k < query.size(); ++k) s += query[k] * e.embedding[k];
    if (!best || s > best_sim) {
      best = i;
      best_sim = s;
    }
  }
  return best;
}

void DeclipWeights::validate() const {
  for (double w : {alpha, beta, gamma})
    if (!(w >= 0.0 && w <= 1.0)) throw ContractError("DeCLIP weights must lie in [0, 1]");
  if (original() < -1e-12) throw ContractError("DeCLIP weights must sum to at most 1");
}

namespace {

enum ViewTag : std::uint64_t { kAugment = 1, kCrop = 2, kEda = 3, kMlm = 4 };

std::vector<Tensor> unstack(const Tensor& images) {
  if (images.rank() != 4) throw DimensionError("expected [N,1,H,W] images, got " + shape_str(images.shape()));
  const Shape one{images.dim(1), images.dim(2), images.dim(3)};
  const std::size_t n = numel_of(one);
  std::vector<Tensor> out;
  for (std::size_t b = 0; b < images.dim(0); ++b) {
    auto d = images.data().subspan(b * n, n);
    out.push_back(Tensor::from(one, std::vector<double>(d.begin(), d.end())));
  }
  return out;
}

}  // namespace

Tensor augmented_view(const Tensor& images, const std::vector<std::uint32_t>& ids, const AugmentParams& p,
                      std::uint64_t seed) {
  auto imgs = unstack(images);
  if (imgs.size() != ids.size()) throw DimensionError("augmented_view: one id per image required");
  for (std::size_t b = 0; b < imgs.size(); ++b) imgs[b] = image_augment(imgs[b], p, derive_seed(seed, ids[b], kAugment));
  return stack_images(imgs);
}

Tensor cropped_view(const Tensor& augmented, const std::vector<std::uint32_t>& ids, const AugmentParams& p,
                    std::uint64_t seed) {
  auto imgs = unstack(augmented);
  if (imgs.size() != ids.size()) throw DimensionError("cropped_view: one id per image required");
  for (std::size_t b = 0; b < imgs.size(); ++b)
    imgs[b] = random_crop_resize(imgs[b], p.crop_fraction, derive_seed(seed, ids[b], kCrop));
  return stack_images(imgs);
}

std::vector<synth::TokenSequence> eda_view(const std::vector<synth::TokenSequence>& texts,
                                           const std::vector<std::uint32_t>& ids, const EdaParams& p,
                                           std::uint64_t seed) {
  std::vector<synth::TokenSequence> out;
  for (std::size_t b = 0; b < texts.size(); ++b) out.push_back(eda_augment(texts[b], p, derive_seed(seed, ids[b], kEda)));
  return out;
}

std::vector<MlmSample> mlm_view(const std::vector<synth::TokenSequence>& texts,
                                const std::vector<std::uint32_t>& ids, const MlmParams& p, std::uint64_t seed) {
  std::vector<MlmSample> out;
  for (std::size_t b = 0; b < texts.size(); ++b) out.push_back(mlm_mask(texts[b], p, derive_seed(seed, ids[b], kMlm)));
  return out;
}

Tensor mlm_loss(const TextEncoder& enc, const std::vector<MlmSample>& samples) {
  std::vector<synth::TokenSequence> seqs;
  for (const auto& s : samples) seqs.push_back(s.tokens);
  seqs = trim_batch(seqs);
  const std::size_t L = seqs.front().ids.size();
  std::vector<std::size_t> rows, targets;
  for (std::size_t b = 0; b < samples.size(); ++b)
    for (std::size_t k = 0; k < samples[b].positions.size(); ++k) {
      rows.push_back(b * L + samples[b].positions[k]);
      targets.push_back(samples[b].targets[k]);
    }
  if (rows.empty()) return Tensor::scalar(0.0);
  const Tensor logits = enc.mlm_logits(seqs);
  const std::size_t V = logits.dim(2);
  return cross_entropy(gather_rows(reshape(logits, {samples.size() * L, V}), rows), targets);
}

DeclipResult declip_objective(const DeclipEmbeddings& e, const DeclipConfig& cfg) {
  const auto& w = cfg.weights;
  w.validate();
  const BatchEmbeddings vt{e.v, e.t, e.v_local, e.t_local, e.t_lengths};
  DeclipResult r;
  r.terms["orig"] = pair_loss(cfg.loss, vt, cfg.loss_cfg);
  r.pairs = {"v,t"};
  if (w.beta > 0) {
    const BatchEmbeddings v2t{e.v2, e.t, e.v2_local, e.t_local, e.t_lengths};
    const BatchEmbeddings vt2{e.v, e.t2, e.v_local, e.t2_local, e.t2_lengths};
    const BatchEmbeddings v2t2{e.v2, e.t2, e.v2_local, e.t2_local, e.t2_lengths};
    r.terms["mvs"] = scale(add(add(pair_loss(cfg.loss, v2t, cfg.loss_cfg), pair_loss(cfg.loss, vt2, cfg.loss_cfg)),
                               pair_loss(cfg.loss, v2t2, cfg.loss_cfg)),
                           1.0 / 3.0);
    r.pairs.insert(r.pairs.end(), {"v',t", "v,t'", "v',t'"});
    r.weights["mvs"] = w.beta;
  }
  if (w.alpha > 0) {
    r.terms["iss"] = infonce(e.v, e.v2, cfg.loss_cfg.tau);
    r.terms["tss"] = e.mlm;
    r.weights["iss"] = r.weights["tss"] = w.alpha / 2.0;
  }
  double orig_weight = w.original();
  if (w.gamma > 0) {
    if (e.t_nn.defined()) {
      r.terms["nn"] = scale(add(infonce(e.v, e.t_nn, cfg.loss_cfg.tau), infonce(e.v2, e.t_nn, cfg.loss_cfg.tau)), 0.5);
      r.pairs.insert(r.pairs.end(), {"v,tNN", "v',tNN"});
      r.weights["nn"] = w.gamma;
    } else {
      orig_weight += w.gamma;
    }
  }
  r.weights["orig"] = orig_weight;
  Tensor total = scale(r.terms["orig"], orig_weight);
  for (const char* name : {"tss", "iss", "mvs", "nn"}) {
    auto it = r.terms.find(name);
    if (it != r.terms.end()) total = add(total, scale(it->second, r.weights[name]));
  }
  r.total = total;
  return r;
}

DeclipResult declip_step(const PairBatch& batch, const DualEncoder& model, const DeclipConfig& cfg,
                         EmbeddingQueue& queue) {
  const auto& w = cfg.weights;
  w.validate();
  const std::size_t B = batch.ids.size();
  if (B == 0 || batch.texts.size() != B) throw ContractError("declip_step: batch needs matching images, texts and ids");

  DeclipEmbeddings e;
  const Tensor view_i = augmented_view(batch.images, batch.ids, cfg.augment, batch.seed);
  const auto img = model.image.encode(view_i);
  const auto txt = model.text.encode(trim_batch(batch.texts));
  e.v = img.global;
  e.v_local = img.local;
  e.t = txt.global;
  e.t_local = txt.local_concat;
  e.t_lengths = txt.lengths;
  if (w.any()) {
    const auto img2 = model.image.encode(cropped_view(view_i, batch.ids, cfg.augment, batch.seed));
    e.v2 = img2.global;
    e.v2_local = img2.local;
  }
  if (w.beta > 0) {
    const auto txt2 = model.text.encode(trim_batch(eda_view(batch.texts, batch.ids, cfg.eda, batch.seed)));
    e.t2 = txt2.global;
    e.t2_local = txt2.local_concat;
    e.t2_lengths = txt2.lengths;
  }
  if (w.alpha > 0) e.mlm = mlm_loss(model.text, mlm_view(batch.texts, batch.ids, cfg.mlm, batch.seed));
  if (w.gamma > 0 && queue.size() >= B) {
    const std::size_t E = txt.global.dim(1);
    std::vector<double> nn;
    bool found = true;
    for (std::size_t b = 0; found && b < B; ++b) {
      const auto idx = queue.nearest(txt.global.data().subspan(b * E, E), batch.ids[b]);
      if (!idx) found = false;
      else nn.insert(nn.end(), queue[*idx].embedding.begin(), queue[*idx].embedding.end());
    }
    if (found) e.t_nn = Tensor::from({B, E}, std::move(nn));
  }
  auto r = declip_objective(e, cfg);
  queue.push_rows(txt.global.detach(), batch.ids);
  return r;
}

}  // namespace pf
