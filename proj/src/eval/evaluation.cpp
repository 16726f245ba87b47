#include "pairforge/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "pairforge/augment.hpp"
#include "pairforge/ops.hpp"
#include "pairforge/rng.hpp"

namespace pf {

RocCurve roc_curve(std::span<const double> scores, std::span<const std::uint8_t> labels) {
  if (scores.size() != labels.size()) throw DimensionError("roc_curve: scores and labels differ in length");
  const auto P = static_cast<double>(std::ranges::count_if(labels, [](auto l) { return l != 0; }));
  const double N = static_cast<double>(labels.size()) - P;
  if (P == 0 || N == 0) throw ContractError("roc_curve: need at least one positive and one negative");

  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::ranges::stable_sort(order, [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });

  RocCurve r;
  r.fpr.push_back(0.0);
  r.tpr.push_back(0.0);
  double tp = 0, fp = 0, area2 = 0;  // area2: twice the area in count units
  for (std::size_t i = 0; i < order.size();) {
    const double s = scores[order[i]];
    const double tp0 = tp, fp0 = fp;
    for (; i < order.size() && scores[order[i]] == s; ++i) (labels[order[i]] ? tp : fp) += 1;
    area2 += (fp - fp0) * (tp + tp0);
    r.thresholds.push_back(s);
    r.fpr.push_back(fp / N);
    r.tpr.push_back(tp / P);
  }
  r.auroc = area2 / (2.0 * P * N);
  return r;
}

RocCurve retrieval_roc(std::span<const double> scores, std::size_t n) {
  if (n < 2) throw ContractError("retrieval AUROC needs at least two pairs");
  if (scores.size() != n * n) throw DimensionError("retrieval_roc: expected an n*n score matrix");
  std::vector<std::uint8_t> labels(n * n, 0);
  for (std::size_t i = 0; i < n; ++i) labels[i * n + i] = 1;
  return roc_curve(scores, labels);
}

std::string matcher_name(Matcher m) { return m == Matcher::Global ? "global" : "local"; }

Matcher parse_matcher(const std::string& name) {
  if (name == "global") return Matcher::Global;
  if (name == "local") return Matcher::Local;
  throw ContractError("unknown matcher '" + name + "' (expected global or local)");
}

EncodedPairs encode_pairs(const DualEncoder& model, const synth::Dataset& data,
                          const std::vector<std::uint32_t>& ids) {
  NoGradGuard ng;
  constexpr std::size_t kChunk = 50;
  EncodedPairs e;
  e.ids = ids;
  std::vector<Tensor> vg, vl, tg, tl;
  for (std::size_t start = 0; start < ids.size(); start += kChunk) {
    std::vector<Tensor> imgs;
    std::vector<synth::TokenSequence> texts;
    for (std::size_t i = start; i < std::min(ids.size(), start + kChunk); ++i) {
      imgs.push_back(data.image_tensor(ids[i]));
      texts.push_back(data.sample(ids[i]).report.impression);
    }
    auto v = model.image.encode(stack_images(imgs));
    auto t = model.text.encode(trim_batch(texts));
    vg.push_back(v.global);
    vl.push_back(v.local);
    tg.push_back(t.global);
    tl.push_back(t.local_concat);
    e.t_lengths.insert(e.t_lengths.end(), t.lengths.begin(), t.lengths.end());
  }
  if (ids.empty()) return e;
  e.v_global = concat(vg);
  e.v_local = concat(vl);
  e.t_global = concat(tg);
  e.t_local = concat(tl);
  return e;
}

std::vector<double> score_matrix(const EncodedPairs& e, Matcher m, const LossConfig& cfg) {
  NoGradGuard ng;
  const std::size_t n = e.ids.size();
  if (m == Matcher::Global) {
    auto s = matmul_nt(e.v_global, e.t_global);
    return {s.data().begin(), s.data().end()};
  }
  const std::size_t M = e.v_local.dim(1), E = e.v_local.dim(2);
  constexpr std::size_t kBlock = 10;
  std::vector<double> out;
  out.reserve(n * n);
  for (std::size_t start = 0; start < n; start += kBlock) {
    const std::size_t b = std::min(kBlock, n - start);
    auto d = e.v_local.data().subspan(start * M * E, b * M * E);
    auto block = Tensor::from({b, M, E}, std::vector<double>(d.begin(), d.end()));
    auto s = gloria_scores(block, e.t_local, e.t_lengths, cfg.tau2, cfg.tau3);
    out.insert(out.end(), s.data().begin(), s.data().end());
  }
  return out;
}

RocCurve retrieval_auroc(const EncodedPairs& e, Matcher m, const LossConfig& cfg) {
  if (e.ids.size() < 2) throw ContractError("retrieval AUROC needs at least two pairs");
  return retrieval_roc(score_matrix(e, m, cfg), e.ids.size());
}

RankResult rank_retrieve(std::span<const double> query, const Tensor& candidates,
                         const std::vector<std::uint32_t>& ids, std::size_t k) {
  if (candidates.rank() != 2 || candidates.dim(0) != ids.size() || candidates.dim(1) != query.size())
    throw DimensionError("rank_retrieve: expected [N,E] candidates with N ids and an E-dim query");
  const std::size_t n = ids.size(), E = query.size();
  if (k > n) throw ContractError("rank_retrieve: k exceeds the number of candidates");
  if (n == 0) throw ContractError("rank_retrieve: no candidates");
  std::vector<double> score(n);
  for (std::size_t i = 0; i < n; ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < E; ++j) s += query[j] * candidates[i * E + j];
    score[i] = s;
  }
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::ranges::sort(order, [&](std::size_t a, std::size_t b) {
    return score[a] != score[b] ? score[a] > score[b] : ids[a] < ids[b];
  });
  RankResult r;
  for (std::size_t i = 0; i < k; ++i) r.top.push_back(ids[order[i]]);
  r.least = ids[order.back()];
  return r;
}

PromptPair make_prompts(std::size_t class_id) {
  const std::string name = synth::class_name(class_id);
  return {class_id, synth::tokenize(name + " remains visible"), synth::tokenize("there is no evidence of " + name)};
}

double zero_shot_probability(std::span<const double> v, std::span<const double> pos, std::span<const double> neg) {
  double a = 0.0, b = 0.0;
  for (std::size_t i = 0; i < v.size(); ++i) {
    a += v[i] * pos[i];
    b += v[i] * neg[i];
  }
  return 1.0 / (1.0 + std::exp(b - a));
}

BalancedAccuracy balanced_accuracy(std::span<const std::uint8_t> predictions, std::span<const std::uint8_t> labels) {
  if (predictions.size() != labels.size()) throw DimensionError("balanced_accuracy: length mismatch");
  BalancedAccuracy r;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const bool p = predictions[i] != 0, l = labels[i] != 0;
    if (l) (p ? r.tp : r.fn) += 1;
    else (p ? r.fp : r.tn) += 1;
  }
  r.defined = r.tp + r.fn > 0 && r.tn + r.fp > 0;
  if (r.defined)
    r.value = 0.5 * (static_cast<double>(r.tp) / static_cast<double>(r.tp + r.fn) +
                     static_cast<double>(r.tn) / static_cast<double>(r.tn + r.fp));
  return r;
}

std::vector<std::vector<std::uint8_t>> label_rows(const synth::Dataset& data, const std::vector<std::uint32_t>& ids) {
  std::vector<std::vector<std::uint8_t>> out;
  for (auto id : ids) {
    const auto& l = data.sample(id).report.labels;
    out.emplace_back(l.begin(), l.end());
  }
  return out;
}

ClassReport zero_shot_eval(const DualEncoder& model, const EncodedPairs& e, const synth::Dataset& data) {
  std::vector<synth::TokenSequence> prompts;
  for (std::size_t c = 0; c < synth::kNumClasses; ++c) {
    auto p = make_prompts(c);
    prompts.push_back(p.positive);
    prompts.push_back(p.negative);
  }
  Tensor pg;
  {
    NoGradGuard ng;
    pg = model.text.encode(trim_batch(prompts)).global;
  }
  const std::size_t n = e.ids.size(), E = pg.dim(1);
  const auto labels = label_rows(data, e.ids);
  ClassReport r;
  std::size_t defined = 0;
  for (std::size_t c = 0; c < synth::kNumClasses; ++c) {
    std::vector<std::uint8_t> pred(n), truth(n);
    for (std::size_t i = 0; i < n; ++i) {
      const double p = zero_shot_probability(e.v_global.data().subspan(i * E, E), pg.data().subspan(2 * c * E, E),
                                             pg.data().subspan((2 * c + 1) * E, E));
      pred[i] = p >= 0.5;
      truth[i] = labels[i][c];
    }
    r.per_class.push_back(balanced_accuracy(pred, truth));
    if (r.per_class.back().defined) {
      r.mean += r.per_class.back().value;
      ++defined;
    } else {
      r.skipped.push_back("class " + synth::class_name(c) + ": labels lack a positive or a negative");
    }
  }
  if (defined > 0) r.mean /= static_cast<double>(defined);
  return r;
}

double probe_objective(std::span<const double> x, std::size_t dim, std::span<const std::uint8_t> y,
                       std::span<const double> w, double b, double lambda, std::span<double> grad_w,
                       double& grad_b) {
  const std::size_t n = y.size();
  if (x.size() != n * dim || w.size() != dim || grad_w.size() != dim)
    throw DimensionError("probe_objective: inconsistent sizes");
  const auto pos = static_cast<std::size_t>(std::ranges::count_if(y, [](auto v) { return v != 0; }));
  if (pos == 0 || pos == n) throw ContractError("probe_objective: both classes must be present");
  const double nd = static_cast<double>(n);
  const double c_pos = nd / (2.0 * static_cast<double>(pos)), c_neg = nd / (2.0 * static_cast<double>(n - pos));

  std::ranges::fill(grad_w, 0.0);
  grad_b = 0.0;
  double loss = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const auto xi = x.subspan(i * dim, dim);
    double z = b;
    for (std::size_t j = 0; j < dim; ++j) z += w[j] * xi[j];
    const double t = y[i] ? 1.0 : 0.0, c = y[i] ? c_pos : c_neg;
    // softplus(z) - t z, computed stably
    const double sp = z > 0 ? z + std::log1p(std::exp(-z)) : std::log1p(std::exp(z));
    loss += c * (sp - t * z);
    const double sig = z >= 0 ? 1.0 / (1.0 + std::exp(-z)) : std::exp(z) / (1.0 + std::exp(z));
    const double g = c * (sig - t) / nd;
    for (std::size_t j = 0; j < dim; ++j) grad_w[j] += g * xi[j];
    grad_b += g;
  }
  double reg = 0.0;
  for (std::size_t j = 0; j < dim; ++j) {
    reg += w[j] * w[j];
    grad_w[j] += lambda * w[j];
  }
  return loss / nd + 0.5 * lambda * reg;
}

ProbeResult linear_probe(const Tensor& embeddings, const std::vector<std::vector<std::uint8_t>>& labels,
                         const ProbeConfig& cfg) {
  if (embeddings.rank() != 2 || embeddings.dim(0) != labels.size())
    throw DimensionError("linear_probe: expected [n,E] embeddings with n label rows");
  if (cfg.folds < 2 || cfg.folds > labels.size()) throw ContractError("linear_probe: folds must lie in [2, n]");
  const std::size_t n = labels.size(), E = embeddings.dim(1), C = labels.front().size();
  const auto X = embeddings.data();

  std::vector<std::size_t> perm(n);
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  Rng(derive_seed(cfg.seed, 0xF0)).shuffle(perm);
  std::vector<std::size_t> fold(n);
  for (std::size_t r = 0; r < n; ++r) fold[perm[r]] = r % cfg.folds;

  ProbeResult out;
  for (std::size_t f = 0; f < cfg.folds; ++f) {
    std::vector<std::size_t> train, test;
    for (std::size_t i = 0; i < n; ++i) (fold[i] == f ? test : train).push_back(i);
    std::vector<double> xtr;
    for (auto i : train) xtr.insert(xtr.end(), X.begin() + i * E, X.begin() + (i + 1) * E);

    double sum = 0.0;
    std::size_t used = 0;
    for (std::size_t c = 0; c < C; ++c) {
      std::vector<std::uint8_t> ytr, yte;
      for (auto i : train) ytr.push_back(labels[i][c]);
      for (auto i : test) yte.push_back(labels[i][c]);
      const auto pos = std::ranges::count(ytr, std::uint8_t{1});
      const std::string tag = "fold " + std::to_string(f) + " class " + std::to_string(c);
      if (pos == 0 || pos == static_cast<std::ptrdiff_t>(ytr.size())) {
        out.skipped.push_back(tag + ": training split lacks a positive or a negative");
        continue;
      }
      std::vector<double> w(E, 0.0), gw(E);
      double b = 0.0, gb = 0.0;
      for (std::size_t it = 0; it < cfg.iterations; ++it) {
        probe_objective(xtr, E, ytr, w, b, cfg.lambda, gw, gb);
        for (std::size_t j = 0; j < E; ++j) w[j] -= cfg.learning_rate * gw[j];
        b -= cfg.learning_rate * gb;
      }
      std::vector<std::uint8_t> pred;
      for (auto i : test) {
        double z = b;
        for (std::size_t j = 0; j < E; ++j) z += w[j] * X[i * E + j];
        pred.push_back(z >= 0.0);
      }
      const auto ba = balanced_accuracy(pred, yte);
      if (!ba.defined) {
        out.skipped.push_back(tag + ": test split lacks a positive or a negative");
        continue;
      }
      sum += ba.value;
      ++used;
    }
    if (used > 0) out.fold_means.push_back(sum / static_cast<double>(used));
  }
  if (out.fold_means.empty()) throw ContractError("linear_probe: no class could be evaluated in any fold");
  out.mean = std::accumulate(out.fold_means.begin(), out.fold_means.end(), 0.0) /
             static_cast<double>(out.fold_means.size());
  return out;
}

}  // namespace pf
