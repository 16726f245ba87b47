#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "pairforge/evaluation.hpp"
#include "pairforge/ops.hpp"
#include "pairforge/rng.hpp"

using namespace pf;

namespace {

double mann_whitney(const std::vector<double>& s, std::size_t n) {
  double wins = 0.0, pairs = 0.0;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t a = 0; a < n * n; ++a) {
      if (a / n == a % n) continue;
      const double pos = s[i * n + i], neg = s[a];
      wins += pos > neg ? 1.0 : pos == neg ? 0.5 : 0.0;
      pairs += 1.0;
    }
  return wins / pairs;
}

std::vector<double> random_scores(std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<double> s(n * n);
  // Coarse rounding leaves plenty of ties; the diagonal gets a small lift.
  for (std::size_t i = 0; i < n * n; ++i) s[i] = std::round(rng.normal() * 4.0) / 4.0 + (i % (n + 1) == 0 ? 0.5 : 0.0);
  return s;
}

const synth::Dataset& data() {
  static const auto d = synth::Dataset::generate(500, 21);
  return d;
}

}  // namespace

TEST_CASE("AUROC limits") {
  std::vector<double> perfect(16, 0.0), flat(16, 0.3);
  for (std::size_t i = 0; i < 4; ++i) perfect[i * 4 + i] = 1.0;
  CHECK(retrieval_roc(perfect, 4).auroc == 1.0);
  CHECK(retrieval_roc(flat, 4).auroc == 0.5);
  CHECK_THROWS_AS(retrieval_roc(std::vector<double>{1.0}, 1), ContractError);
  CHECK_THROWS_AS(roc_curve(std::vector<double>{1.0, 2.0}, std::vector<std::uint8_t>{1, 1}), ContractError);
}

TEST_CASE("trapezoidal AUROC equals the Mann-Whitney statistic") {
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    const auto s = random_scores(20, seed);
    CHECK(std::abs(retrieval_roc(s, 20).auroc - mann_whitney(s, 20)) <= 1e-12);
  }
}

TEST_CASE("ROC points are monotone from the origin to (1,1)") {
  const auto r = retrieval_roc(random_scores(12, 3), 12);
  CHECK(r.fpr.front() == 0.0);
  CHECK(r.tpr.front() == 0.0);
  CHECK(r.fpr.back() == 1.0);
  CHECK(r.tpr.back() == 1.0);
  for (std::size_t i = 1; i < r.fpr.size(); ++i) {
    CHECK(r.fpr[i] >= r.fpr[i - 1]);
    CHECK(r.tpr[i] >= r.tpr[i - 1]);
  }
  for (std::size_t i = 1; i < r.thresholds.size(); ++i) CHECK(r.thresholds[i] < r.thresholds[i - 1]);
  CHECK(r.auroc >= 0.0);
  CHECK(r.auroc <= 1.0);
}

TEST_CASE("AUROC is invariant under strictly increasing transforms") {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const auto s = random_scores(15, 100 + seed);
    auto e = s, a = s;
    for (auto& v : e) v = std::exp(v);
    for (auto& v : a) v = 3.0 * v - 7.0;
    const double base = retrieval_roc(s, 15).auroc;
    CHECK(std::abs(retrieval_roc(e, 15).auroc - base) <= 1e-9);
    CHECK(std::abs(retrieval_roc(a, 15).auroc - base) <= 1e-9);
  }
}

TEST_CASE("untrained encoders retrieve at chance") {
  const auto& test = data().split("test");
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    DualEncoder model({}, seed);
    const double auc = retrieval_auroc(encode_pairs(model, data(), test), Matcher::Global).auroc;
    CHECK(auc >= 0.4);
    CHECK(auc <= 0.6);
  }
}

TEST_CASE("local score matrix agrees with per-pair matching") {
  DualEncoder model({}, 4);
  std::vector<std::uint32_t> ids(data().split("test").begin(), data().split("test").begin() + 12);
  const auto e = encode_pairs(model, data(), ids);
  const auto s = score_matrix(e, Matcher::Local);
  REQUIRE(s.size() == 144);
  const std::size_t M = e.v_local.dim(1), E = e.v_local.dim(2);
  std::vector<std::size_t> offset{0};
  for (auto w : e.t_lengths) offset.push_back(offset.back() + w);
  for (std::size_t i : {0, 5, 11})
    for (std::size_t j : {0, 3, 11}) {
      auto vd = e.v_local.data().subspan(i * M * E, M * E);
      auto td = e.t_local.data().subspan(offset[j] * E, e.t_lengths[j] * E);
      const double z = gloria_match(Tensor::from({M, E}, {vd.begin(), vd.end()}),
                                    Tensor::from({e.t_lengths[j], E}, {td.begin(), td.end()}), 0.5, 0.5)
                           .item();
      CHECK(s[i * 12 + j] == doctest::Approx(z).epsilon(1e-12));
    }
  const double auc = retrieval_auroc(e, Matcher::Local).auroc;
  CHECK(auc >= 0.0);
  CHECK(auc <= 1.0);
}

TEST_CASE("ranked retrieval orders by similarity with id tie-break") {
  auto cands = Tensor::from({4, 2}, {0.0, 1.0, 1.0, 0.0, 1.0, 0.0, 0.6, 0.8});
  const std::vector<std::uint32_t> ids{7, 9, 3, 5};
  const std::vector<double> q{1.0, 0.0};
  auto r = rank_retrieve(q, cands, ids, 4);
  CHECK(r.top == std::vector<std::uint32_t>{3, 9, 5, 7});
  CHECK(r.least == 7);
  CHECK(rank_retrieve(q, cands, ids, 1).top == std::vector<std::uint32_t>{3});
  CHECK_THROWS_AS(rank_retrieve(q, cands, ids, 5), ContractError);
}

TEST_CASE("zero-shot prompts and probabilities") {
  auto p = make_prompts(synth::class_index(synth::ShapeKind::Ring, synth::Intensity::Faint));
  CHECK(synth::join_words(synth::detokenize(p.positive)) == "faint ring remains visible");
  CHECK(synth::join_words(synth::detokenize(p.negative)) == "there is no evidence of faint ring");
  const std::vector<double> v{1, 0}, pos{1, 0}, neg{0, 1};
  CHECK(zero_shot_probability(v, pos, neg) == doctest::Approx(std::exp(1.0) / (std::exp(1.0) + 1.0)).epsilon(1e-15));
  CHECK(zero_shot_probability(v, neg, neg) == 0.5);
  double prev = 0.0;
  for (double d = -1.0; d <= 1.0; d += 0.1) {
    const std::vector<double> pp{d, 0};
    const double pr = zero_shot_probability(v, pp, neg);
    CHECK(pr > prev);
    prev = pr;
  }
}

TEST_CASE("zero-shot evaluation covers every class") {
  DualEncoder model({}, 1);
  const auto e = encode_pairs(model, data(), data().split("test"));
  const auto r = zero_shot_eval(model, e, data());
  CHECK(r.per_class.size() == synth::kNumClasses);
  CHECK(r.mean >= 0.0);
  CHECK(r.mean <= 1.0);
}

TEST_CASE("balanced accuracy from the confusion counts") {
  const std::vector<std::uint8_t> labels{1, 1, 1, 1, 0, 0, 0, 0};
  CHECK(balanced_accuracy(labels, labels).value == 1.0);
  CHECK(balanced_accuracy(std::vector<std::uint8_t>(8, 1), labels).value == 0.5);
  const std::vector<std::uint8_t> pred{1, 1, 1, 0, 0, 0, 1, 1};
  auto ba = balanced_accuracy(pred, labels);
  CHECK(ba.tp == 3);
  CHECK(ba.fn == 1);
  CHECK(ba.tn == 2);
  CHECK(ba.fp == 2);
  CHECK(ba.value == 0.625);
  CHECK_FALSE(balanced_accuracy(std::vector<std::uint8_t>{1, 0}, std::vector<std::uint8_t>{1, 1}).defined);
}

TEST_CASE("probe objective gradient matches finite differences") {
  Rng rng(5);
  const std::size_t n = 12, d = 4;
  std::vector<double> x(n * d), w(d);
  for (auto& v : x) v = rng.normal();
  for (auto& v : w) v = rng.normal();
  std::vector<std::uint8_t> y{1, 0, 0, 1, 0, 0, 0, 1, 0, 0, 0, 0};
  const double b = 0.3, lambda = 0.01;
  std::vector<double> gw(d), scratch(d);
  double gb = 0.0, sb = 0.0;
  probe_objective(x, d, y, w, b, lambda, gw, gb);
  const double h = 1e-5;
  double worst = 0.0;
  auto rel = [](double a, double f) { return std::abs(a - f) / std::max(1e-8, std::abs(a) + std::abs(f)); };
  for (std::size_t j = 0; j < d; ++j) {
    auto wp = w, wm = w;
    wp[j] += h;
    wm[j] -= h;
    const double fd =
        (probe_objective(x, d, y, wp, b, lambda, scratch, sb) - probe_objective(x, d, y, wm, b, lambda, scratch, sb)) /
        (2 * h);
    worst = std::max(worst, rel(gw[j], fd));
  }
  const double fdb =
      (probe_objective(x, d, y, w, b + h, lambda, scratch, sb) - probe_objective(x, d, y, w, b - h, lambda, scratch, sb)) /
      (2 * h);
  worst = std::max(worst, rel(gb, fdb));
  CHECK(worst < 1e-4);
}

TEST_CASE("linear probe separates separable classes") {
  Rng rng(2);
  std::vector<double> x;
  std::vector<std::vector<std::uint8_t>> y;
  for (std::size_t i = 0; i < 60; ++i) {
    const bool pos = i % 2 == 0;
    x.push_back((pos ? 1.0 : -1.0) + 0.2 * rng.normal());
    x.push_back(rng.normal());
    y.push_back({static_cast<std::uint8_t>(pos)});
  }
  CHECK(linear_probe(Tensor::from({60, 2}, x), y).mean == 1.0);
}

TEST_CASE("linear probe is at chance on permuted labels") {
  double total = 0.0;
  for (std::uint64_t seed = 0; seed < 8; ++seed) {
    Rng rng(seed);
    std::vector<double> x(200 * 4);
    for (auto& v : x) v = rng.normal();
    std::vector<std::vector<std::uint8_t>> y;
    for (std::size_t i = 0; i < 200; ++i) y.push_back({static_cast<std::uint8_t>(rng.bernoulli(0.5))});
    ProbeConfig cfg;
    cfg.seed = seed;
    total += linear_probe(Tensor::from({200, 4}, x), y, cfg).mean;
  }
  CHECK(std::abs(total / 8.0 - 0.5) <= 0.05);
}

TEST_CASE("class weighting handles a 9:1 imbalance") {
  Rng rng(9);
  std::vector<double> x;
  std::vector<std::vector<std::uint8_t>> y;
  std::vector<std::uint8_t> flat;
  for (std::size_t i = 0; i < 200; ++i) {
    const bool pos = i % 10 == 0;
    // Minority sits just past a shifted boundary the majority crowds against.
    x.push_back((pos ? 0.35 : 0.15) + 0.04 * rng.normal());
    x.push_back(0.1 * rng.normal());
    y.push_back({static_cast<std::uint8_t>(pos)});
    flat.push_back(pos);
  }
  CHECK(balanced_accuracy(std::vector<std::uint8_t>(200, 0), flat).value == 0.5);
  CHECK(linear_probe(Tensor::from({200, 2}, x), y).mean > 0.9);
}

TEST_CASE("probe skips and records classes missing from a training split") {
  std::vector<double> x;
  std::vector<std::vector<std::uint8_t>> y;
  for (std::size_t i = 0; i < 10; ++i) {
    x.push_back(static_cast<double>(i));
    y.push_back({static_cast<std::uint8_t>(i % 2), static_cast<std::uint8_t>(i == 3)});
  }
  auto r = linear_probe(Tensor::from({10, 1}, x), y);
  // The single positive of column 1 leaves exactly one training split without it.
  CHECK(std::ranges::count_if(r.skipped, [](const std::string& m) {
          return m.find("class 1: training split") != std::string::npos;
        }) == 1);
  CHECK(std::ranges::count_if(r.skipped, [](const std::string& m) {
          return m.find("class 1: test split") != std::string::npos;
        }) == 4);
  CHECK_FALSE(r.fold_means.empty());
}
