#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "pairforge/encoders.hpp"
#include "pairforge/losses.hpp"
#include "pairforge/synthdata.hpp"

namespace pf {

struct RocCurve {
  std::vector<double> thresholds;  // descending, unique
  std::vector<double> fpr, tpr;    // from (0,0) to (1,1)
  double auroc = 0.0;
};

/// ROC of binary labels against scores; higher scores predict positives.
/// Needs at least one positive and one negative.
RocCurve roc_curve(std::span<const double> scores, std::span<const std::uint8_t> labels);

/// ROC over all n*n entries of a row-major score matrix, diagonal positive.
RocCurve retrieval_roc(std::span<const double> scores, std::size_t n);

enum class Matcher { Global, Local };
std::string matcher_name(Matcher m);
Matcher parse_matcher(const std::string& name);

/// Frozen embeddings of paired samples.
struct EncodedPairs {
  std::vector<std::uint32_t> ids;
  Tensor v_global;  // [n,E]
  Tensor v_local;   // [n,M,E]
  Tensor t_global;  // [n,E]
  Tensor t_local;   // [sum W,E]
  std::vector<std::size_t> t_lengths;
};

EncodedPairs encode_pairs(const DualEncoder& model, const synth::Dataset& data,
                          const std::vector<std::uint32_t>& ids);

/// Row-major n*n image-by-report scores: cosine of global embeddings, or the
/// local matching score.
std::vector<double> score_matrix(const EncodedPairs& e, Matcher m, const LossConfig& cfg = {});

RocCurve retrieval_auroc(const EncodedPairs& e, Matcher m, const LossConfig& cfg = {});

struct RankResult {
  std::vector<std::uint32_t> top;  // k most similar candidate ids
  std::uint32_t least = 0;         // least similar candidate id
};

/// Ranks candidates [N,E] by dot product with `query` [E]; equal scores go
/// to the lower id.
RankResult rank_retrieve(std::span<const double> query, const Tensor& candidates,
                         const std::vector<std::uint32_t>& ids, std::size_t k);

struct PromptPair {
  std::size_t class_id = 0;
  synth::TokenSequence positive;  // "<class> remains visible"
  synth::TokenSequence negative;  // "there is no evidence of <class>"
};
PromptPair make_prompts(std::size_t class_id);

/// Two-way softmax of (v.p+, v.p-) without temperature.
double zero_shot_probability(std::span<const double> v, std::span<const double> pos, std::span<const double> neg);

struct BalancedAccuracy {
  std::size_t tp = 0, fn = 0, tn = 0, fp = 0;
  bool defined = false;  // needs both a positive and a negative label
  double value = 0.0;
};
BalancedAccuracy balanced_accuracy(std::span<const std::uint8_t> predictions, std::span<const std::uint8_t> labels);

/// Per-class results averaged over the classes where the metric is defined.
struct ClassReport {
  std::vector<BalancedAccuracy> per_class;
  double mean = 0.0;
  std::vector<std::string> skipped;
};

/// Zero-shot presence decisions (probability >= 0.5) for every class.
ClassReport zero_shot_eval(const DualEncoder& model, const EncodedPairs& e, const synth::Dataset& data);

struct ProbeConfig {
  std::size_t folds = 5;
  std::size_t iterations = 500;
  double learning_rate = 1.0;
  double lambda = 1e-3;
  std::uint64_t seed = 0;
};

/// Class-weighted logistic loss with L2 on the weights (not the bias):
/// sum_i c_i l_i / sum_i c_i + lambda/2 |w|^2 with c inversely proportional
/// to class frequency. Writes the gradient into grad_w and grad_b.
double probe_objective(std::span<const double> x, std::size_t dim, std::span<const std::uint8_t> y,
                       std::span<const double> w, double b, double lambda, std::span<double> grad_w,
                       double& grad_b);

struct ProbeResult {
  double mean = 0.0;
  std::vector<double> fold_means;
  std::vector<std::string> skipped;
};

/// K-fold class-weighted logistic regression on frozen embeddings [n,E], one
/// binary probe per label column. Classes absent from a training split or
/// without both outcomes in a test split are skipped and recorded.
ProbeResult linear_probe(const Tensor& embeddings, const std::vector<std::vector<std::uint8_t>>& labels,
                         const ProbeConfig& cfg = {});

std::vector<std::vector<std::uint8_t>> label_rows(const synth::Dataset& data, const std::vector<std::uint32_t>& ids);

}  // namespace pf
