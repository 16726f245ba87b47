#include <doctest.h>

#include <cmath>
#include <numeric>

#include "gradcheck.hpp"
#include "pairforge/losses.hpp"
#include "pairforge/ops.hpp"
#include "pairforge/optim.hpp"

using namespace pf;
using pf::testing::max_rel_grad_error;
using pf::testing::random_tensor;
using pf::testing::random_unit_rows;

namespace {

using Mat = std::vector<std::vector<double>>;

Mat to_mat(const Tensor& t, std::size_t rows, std::size_t cols, std::size_t offset = 0) {
  Mat m(rows, std::vector<double>(cols));
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c) m[r][c] = t[offset + r * cols + c];
  return m;
}

// Straight-line evaluation of word-to-region attention and the log-sum-exp match score.
double reference_match(const Mat& v, const Mat& t, double tau2, double tau3) {
  double total = 0.0;
  for (const auto& word : t) {
    std::vector<double> a(v.size());
    double z = 0.0;
    for (std::size_t j = 0; j < v.size(); ++j) {
      double s = 0.0;
      for (std::size_t e = 0; e < word.size(); ++e) s += word[e] * v[j][e];
      a[j] = std::exp(s / tau2);
      z += a[j];
    }
    double score = 0.0;
    for (std::size_t e = 0; e < word.size(); ++e) {
      double ce = 0.0;
      for (std::size_t j = 0; j < v.size(); ++j) ce += a[j] / z * v[j][e];
      score += ce * word[e];
    }
    total += std::exp(score / tau3);
  }
  return tau3 * std::log(total);
}

double reference_symmetric_ce(const Mat& z, double tau) {
  const std::size_t B = z.size();
  double loss = 0.0;
  for (std::size_t i = 0; i < B; ++i) {
    double row = 0.0, col = 0.0;
    for (std::size_t j = 0; j < B; ++j) {
      row += std::exp(z[i][j] / tau);
      col += std::exp(z[j][i] / tau);
    }
    loss -= std::log(std::exp(z[i][i] / tau) / row) + std::log(std::exp(z[i][i] / tau) / col);
  }
  return loss / (2.0 * B);
}

Tensor unit_local(std::size_t b, std::size_t m, std::size_t e, std::uint64_t seed) {
  auto t = reshape(random_unit_rows(b * m, e, seed, false), {b, m, e}).detach();
  t.set_requires_grad(true);
  return t;
}

BatchEmbeddings random_batch(std::size_t B, std::size_t E, std::size_t M, std::vector<std::size_t> lengths,
                             std::uint64_t seed) {
  const std::size_t R = std::accumulate(lengths.begin(), lengths.end(), std::size_t{0});
  return {random_unit_rows(B, E, seed), random_unit_rows(B, E, seed + 1), unit_local(B, M, E, seed + 2),
          random_unit_rows(R, E, seed + 3), std::move(lengths)};
}

BatchEmbeddings permuted(const BatchEmbeddings& b, const std::vector<std::size_t>& perm) {
  std::vector<Tensor> vl, tl;
  std::vector<std::size_t> lengths, offsets(b.t_lengths.size());
  std::exclusive_scan(b.t_lengths.begin(), b.t_lengths.end(), offsets.begin(), std::size_t{0});
  for (auto k : perm) {
    vl.push_back(slice_rows(b.v_local, k, k + 1));
    tl.push_back(slice_rows(b.t_local, offsets[k], offsets[k] + b.t_lengths[k]));
    lengths.push_back(b.t_lengths[k]);
  }
  return {gather_rows(b.v_global, perm), gather_rows(b.t_global, perm), concat(vl), concat(tl), lengths};
}

}  // namespace

TEST_CASE("infonce closed forms") {
  auto v = random_unit_rows(1, 8, 1), t = random_unit_rows(1, 8, 2);
  CHECK(infonce(v, t, 0.5).item() == 0.0);

  auto same = Tensor::from({4, 2}, {1, 0, 1, 0, 1, 0, 1, 0});
  CHECK(infonce(same, same, 0.5).item() == doctest::Approx(std::log(4.0)).epsilon(1e-12));

  auto eye = Tensor::from({2, 2}, {1, 0, 0, 1});
  // -ln(e^2 / (e^2 + 1)), evaluated by hand.
  CHECK(infonce(eye, eye, 0.5).item() == doctest::Approx(0.12692801104297263).epsilon(1e-12));

  CHECK_THROWS_AS(infonce(eye, eye, 0.0), ContractError);
  CHECK_THROWS_AS(infonce(eye, eye, -1.0), ContractError);
  CHECK_THROWS_AS(infonce(eye, Tensor::zeros({3, 2}), 0.5), DimensionError);
}

TEST_CASE("literal sign rewards mismatched pairs") {
  auto eye = Tensor::from({2, 2}, {1, 0, 0, 1});
  // With exp(-s/tau) the matched entry has the smallest logit: -ln(e^-2 / (e^-2 + 1)).
  CHECK(infonce(eye, eye, 0.5, true).item() == doctest::Approx(2.1269280110429727).epsilon(1e-12));
}

TEST_CASE("gloria_attention rows are a softmax") {
  auto a = gloria_attention(Tensor::from({1, 2}, {1, 1}), 0.5);
  CHECK(a[0] == 0.5);
  CHECK(a[1] == 0.5);

  auto s = random_tensor({3, 5}, 7, -1.0, 1.0, false);
  auto flat = gloria_attention(s, 1e6);
  for (std::size_t i = 0; i < 15; ++i) CHECK(flat[i] == doctest::Approx(0.2).epsilon(1e-3));

  auto r = gloria_attention(s, 0.5);
  for (std::size_t w = 0; w < 3; ++w) {
    double z = 0.0, row = 0.0;
    for (std::size_t m = 0; m < 5; ++m) z += std::exp(s[w * 5 + m] / 0.5);
    for (std::size_t m = 0; m < 5; ++m) {
      CHECK(std::abs(r[w * 5 + m] - std::exp(s[w * 5 + m] / 0.5) / z) < 1e-12);
      row += r[w * 5 + m];
    }
    CHECK(std::abs(row - 1.0) < 1e-9);
  }
  CHECK_THROWS_AS(gloria_attention(s, 0.0), ContractError);
}

TEST_CASE("gloria_match closed forms") {
  auto u = Tensor::from({1, 3}, {0.6, 0.0, 0.8});
  CHECK(gloria_match(u, u, 0.5, 0.5).item() == doctest::Approx(1.0).epsilon(1e-15));
  auto two = Tensor::from({2, 3}, {0.6, 0.0, 0.8, 0.6, 0.0, 0.8});
  CHECK(gloria_match(u, two, 0.5, 0.5).item() == doctest::Approx(1.0 + 0.5 * std::log(2.0)).epsilon(1e-12));
  CHECK_THROWS_AS(gloria_match(u, Tensor::zeros({1, 4}), 0.5, 0.5), DimensionError);
  CHECK_THROWS_AS(gloria_match(u, u, 0.5, 0.0), ContractError);
}

TEST_CASE("gloria_match agrees with a straight-line reference") {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    auto v = random_unit_rows(4, 8, 100 + seed), t = random_unit_rows(3, 8, 200 + seed);
    const double expect = reference_match(to_mat(v, 4, 8), to_mat(t, 3, 8), 0.5, 0.5);
    CHECK(std::abs(gloria_match(v, t, 0.5, 0.5).item() - expect) < 1e-10);
  }
}

TEST_CASE("batched gloria scores match per-pair evaluation") {
  auto b = random_batch(3, 8, 5, {2, 4, 1}, 11);
  auto z = gloria_scores(b.v_local, b.t_local, b.t_lengths, 0.5, 0.7);
  const std::size_t offs[] = {0, 2, 6};
  for (std::size_t k = 0; k < 3; ++k)
    for (std::size_t l = 0; l < 3; ++l) {
      const double expect = reference_match(to_mat(b.v_local, 5, 8, k * 40),
                                            to_mat(b.t_local, b.t_lengths[l], 8, offs[l] * 8), 0.5, 0.7);
      CHECK(std::abs(z[k * 3 + l] - expect) < 1e-12);
    }
}

TEST_CASE("gloria_loss closed forms and composition oracle") {
  auto one = random_batch(1, 8, 4, {3}, 5);
  CHECK(gloria_loss(one).item() == 0.0);
  CHECK(combined_loss(one).item() == 0.0);

  auto v = unit_local(1, 4, 8, 9);
  auto t = random_unit_rows(3, 8, 10);
  BatchEmbeddings same{random_unit_rows(3, 8, 1), random_unit_rows(3, 8, 2), concat({v, v, v}),
                       concat({t, t, t}), {3, 3, 3}};
  CHECK(gloria_loss(same).item() == doctest::Approx(std::log(3.0)).epsilon(1e-12));

  auto b = random_batch(2, 8, 4, {3, 2}, 21);
  Mat z(2, std::vector<double>(2));
  const std::size_t offs[] = {0, 3};
  for (std::size_t k = 0; k < 2; ++k)
    for (std::size_t l = 0; l < 2; ++l)
      z[k][l] = reference_match(to_mat(b.v_local, 4, 8, k * 32), to_mat(b.t_local, b.t_lengths[l], 8, offs[l] * 8),
                                0.5, 0.5);
  CHECK(std::abs(gloria_loss(b).item() - reference_symmetric_ce(z, 0.5)) < 1e-12);
}

TEST_CASE("combined loss is the sum of its parts") {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    auto b = random_batch(4, 8, 6, {2, 5, 3, 1}, 40 + seed);
    const double c = combined_loss(b).item();
    CHECK(std::abs(c - (infonce_loss(b).item() + gloria_loss(b).item())) < 1e-12);
    CHECK(c >= -1e-12);
    CHECK(pair_loss(LossKind::Combined, b).item() == c);
    CHECK(pair_loss(LossKind::InfoNCE, b).item() == infonce_loss(b).item());
  }
}

TEST_CASE("losses are invariant to a joint permutation of the batch") {
  auto b = random_batch(4, 8, 5, {2, 4, 3, 1}, 60);
  auto p = permuted(b, {2, 0, 3, 1});
  CHECK(std::abs(infonce_loss(b).item() - infonce_loss(p).item()) < 1e-9);
  CHECK(std::abs(gloria_loss(b).item() - gloria_loss(p).item()) < 1e-9);
  CHECK(std::abs(combined_loss(b).item() - combined_loss(p).item()) < 1e-9);
}

TEST_CASE("loss gradients match finite differences") {
  auto b = random_batch(4, 8, 6, {2, 5, 3, 4}, 80);
  std::vector<Tensor> inputs{b.v_global, b.t_global, b.v_local, b.t_local};
  CHECK(max_rel_grad_error([&] { return infonce_loss(b); }, {b.v_global, b.t_global}) < 1e-4);
  CHECK(max_rel_grad_error([&] { return gloria_loss(b); }, inputs) < 1e-4);
  CHECK(max_rel_grad_error([&] { return combined_loss(b); }, inputs) < 1e-4);
  auto b2 = random_batch(2, 8, 6, {3, 5}, 90);
  CHECK(max_rel_grad_error([&] { return combined_loss(b2); },
                           {b2.v_global, b2.t_global, b2.v_local, b2.t_local}) < 1e-4);
}

namespace {

double matched_minus_mismatched(const Tensor& v, const Tensor& t) {
  auto s = matmul_nt(l2_normalize(v, 1), l2_normalize(t, 1));
  const std::size_t B = v.dim(0);
  double on = 0.0, off = 0.0;
  for (std::size_t i = 0; i < B; ++i)
    for (std::size_t j = 0; j < B; ++j) (i == j ? on : off) += s[i * B + j];
  return on / B - off / (B * (B - 1));
}

double one_step_gap_change(bool literal) {
  auto v = random_tensor({4, 8}, 301), t = random_tensor({4, 8}, 302);
  const double before = matched_minus_mismatched(v, t);
  Adam opt({v, t}, {.lr = 1e-3});
  infonce(l2_normalize(v, 1), l2_normalize(t, 1), 0.5, literal).backward();
  opt.step();
  return matched_minus_mismatched(v, t) - before;
}

}  // namespace

TEST_CASE("one infonce step separates matched from mismatched pairs") {
  CHECK(one_step_gap_change(false) > 0.0);
  CHECK(one_step_gap_change(true) < 0.0);
}
