#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "pairforge/tensor.hpp"

// Differentiable operations. Unless stated otherwise, binary ops require equal
// shapes; there is no implicit broadcasting.
namespace pf {

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);
Tensor neg(const Tensor& x);
Tensor scale(const Tensor& x, double s);
Tensor add_scalar(const Tensor& x, double s);

/// x[..., D] + bias[D], broadcasting over all leading axes.
Tensor add_bias(const Tensor& x, const Tensor& bias);
/// x[..., D] * gain[D], broadcasting over all leading axes.
Tensor mul_lastdim(const Tensor& x, const Tensor& gain);

Tensor exp(const Tensor& x);
Tensor log(const Tensor& x);
Tensor relu(const Tensor& x);

Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);
/// Reduces one axis, removing it from the shape.
Tensor sum(const Tensor& x, std::size_t axis);
Tensor mean(const Tensor& x, std::size_t axis);

Tensor reshape(const Tensor& x, const Shape& shape);
/// 2-D transpose.
Tensor transpose(const Tensor& x);
/// Swaps the last two axes of a rank >= 2 tensor.
Tensor transpose_last(const Tensor& x);

/// [P,Q] x [Q,R] -> [P,R].
Tensor matmul(const Tensor& a, const Tensor& b);
/// [P,Q] x [R,Q]^T -> [P,R].
Tensor matmul_nt(const Tensor& a, const Tensor& b);
/// Batched [N,P,Q] x [N,Q,R] -> [N,P,R].
Tensor bmm(const Tensor& a, const Tensor& b);
/// Batched [N,P,Q] x [N,R,Q]^T -> [N,P,R].
Tensor bmm_nt(const Tensor& a, const Tensor& b);

Tensor softmax(const Tensor& x, std::size_t axis);
Tensor log_softmax(const Tensor& x, std::size_t axis);
/// Stable log(sum(exp(x))) along `axis`, removing it.
Tensor logsumexp(const Tensor& x, std::size_t axis);
/// Per-segment log-sum-exp of a rank-1 tensor split into consecutive runs.
Tensor segment_logsumexp(const Tensor& x, std::span<const std::size_t> lengths);

/// Divides each slice along `axis` by (its Euclidean norm + eps).
Tensor l2_normalize(const Tensor& x, std::size_t axis, double eps = 1e-12);

/// Rows of a rank-2 tensor selected by index (embedding lookup).
Tensor gather_rows(const Tensor& x, std::span<const std::size_t> rows);
/// Rows [begin, end) along axis 0, any rank >= 1.
Tensor slice_rows(const Tensor& x, std::size_t begin, std::size_t end);
/// out[i] = x[i, cols[i]] for rank-2 x.
Tensor pick(const Tensor& x, std::span<const std::size_t> cols);
/// Concatenation along axis 0; trailing extents must agree. Scalars stack into a vector.
Tensor concat(const std::vector<Tensor>& parts);

/// Per-position normalization over the last axis with learned gain and bias.
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps = 1e-5);

/// 2-D cross-correlation. x[N,C,H,W], w[O,C,K,K], bias[O] -> [N,O,H',W'].
Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& bias, std::size_t stride = 1,
              std::size_t pad = 0);
/// Non-overlapping max-pool with square window over x[N,C,H,W].
Tensor max_pool2d(const Tensor& x, std::size_t window = 2);

/// Mean cross-entropy of row-wise softmax(logits[R,K]) against integer targets.
Tensor cross_entropy(const Tensor& logits, std::span<const std::size_t> targets);

}  // namespace pf
