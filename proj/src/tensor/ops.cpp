#include "pairforge/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "kernels.hpp"

namespace pf {

namespace {

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
  }
}

void require_rank(const Tensor& t, std::size_t rank, const char* op) {
  if (t.rank() != rank) {
    throw DimensionError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got " +
                         shape_str(t.shape()));
  }
}

struct AxisSplit {
  std::size_t outer = 1, len = 1, inner = 1;
};

AxisSplit split_axis(const Shape& s, std::size_t axis, const char* op) {
  if (axis >= s.size()) {
    throw DimensionError(std::string(op) + ": axis " + std::to_string(axis) + " invalid for " +
                         shape_str(s));
  }
  AxisSplit r;
  for (std::size_t i = 0; i < axis; ++i) r.outer *= s[i];
  r.len = s[axis];
  for (std::size_t i = axis + 1; i < s.size(); ++i) r.inner *= s[i];
  return r;
}

Shape drop_axis(const Shape& s, std::size_t axis) {
  Shape r = s;
  r.erase(r.begin() + static_cast<std::ptrdiff_t>(axis));
  return r;
}

template <class F>
Tensor unary(const Tensor& x, const char* name, F&& f, std::function<void(TensorImpl&)> bw) {
  std::vector<double> out(x.numel());
  auto in = x.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(in[i]);
  return make_result(x.shape(), std::move(out), {x}, name, std::move(bw));
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  std::vector<double> out(a.numel());
  auto x = a.data(), y = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] + y[i];
  return make_result(a.shape(), std::move(out), {a, b}, "add", [a, b](TensorImpl& o) {
    for (const Tensor* t : {&a, &b}) {
      if (!t->requires_grad()) continue;
      auto& g = grad_buffer(*t);
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += o.grad[i];
    }
  });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "sub");
  std::vector<double> out(a.numel());
  auto x = a.data(), y = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] - y[i];
  return make_result(a.shape(), std::move(out), {a, b}, "sub", [a, b](TensorImpl& o) {
    if (a.requires_grad()) {
      auto& g = grad_buffer(a);
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += o.grad[i];
    }
    if (b.requires_grad()) {
      auto& g = grad_buffer(b);
      for (std::size_t i = 0; i < g.size(); ++i) g[i] -= o.grad[i];
    }
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mul");
  std::vector<double> out(a.numel());
  auto x = a.data(), y = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] * y[i];
  return make_result(a.shape(), std::move(out), {a, b}, "mul", [a, b](TensorImpl& o) {
    auto x = a.data(), y = b.data();
    if (a.requires_grad()) {
      auto& g = grad_buffer(a);
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += o.grad[i] * y[i];
    }
    if (b.requires_grad()) {
      auto& g = grad_buffer(b);
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += o.grad[i] * x[i];
    }
  });
}

Tensor div(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "div");
  std::vector<double> out(a.numel());
  auto x = a.data(), y = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] / y[i];
  return make_result(a.shape(), std::move(out), {a, b}, "div", [a, b](TensorImpl& o) {
    auto x = a.data(), y = b.data();
    if (a.requires_grad()) {
      auto& g = grad_buffer(a);
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += o.grad[i] / y[i];
    }
    if (b.requires_grad()) {
      auto& g = grad_buffer(b);
      for (std::size_t i = 0; i < g.size(); ++i) g[i] -= o.grad[i] * x[i] / (y[i] * y[i]);
    }
  });
}

Tensor neg(const Tensor& x) { return scale(x, -1.0); }

Tensor scale(const Tensor& x, double s) {
  return unary(x, "scale", [s](double v) { return v * s; }, [x, s](TensorImpl& o) {
    auto& g = grad_buffer(x);
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += o.grad[i] * s;
  });
}

Tensor add_scalar(const Tensor& x, double s) {
  return unary(x, "add_scalar", [s](double v) { return v + s; }, [x](TensorImpl& o) {
    auto& g = grad_buffer(x);
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += o.grad[i];
  });
}

Tensor add_bias(const Tensor& x, const Tensor& bias) {
  require_rank(bias, 1, "add_bias");
  if (x.rank() == 0 || x.shape().back() != bias.dim(0)) {
    throw DimensionError("add_bias: " + shape_str(x.shape()) + " vs bias " +
                         shape_str(bias.shape()));
  }
  const std::size_t d = bias.dim(0);
  std::vector<double> out(x.data().begin(), x.data().end());
  auto b = bias.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += b[i % d];
  return make_result(x.shape(), std::move(out), {x, bias}, "add_bias", [x, bias, d](TensorImpl& o) {
    if (x.requires_grad()) {
      auto& g = grad_buffer(x);
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += o.grad[i];
    }
    if (bias.requires_grad()) {
      auto& g = grad_buffer(bias);
      for (std::size_t i = 0; i < o.grad.size(); ++i) g[i % d] += o.grad[i];
    }
  });
}

Tensor mul_lastdim(const Tensor& x, const Tensor& gain) {
  require_rank(gain, 1, "mul_lastdim");
  if (x.rank() == 0 || x.shape().back() != gain.dim(0)) {
    throw DimensionError("mul_lastdim: " + shape_str(x.shape()) + " vs gain " +
                         shape_str(gain.shape()));
  }
  const std::size_t d = gain.dim(0);
  std::vector<double> out(x.numel());
  auto xv = x.data(), gv = gain.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = xv[i] * gv[i % d];
  return make_result(x.shape(), std::move(out), {x, gain}, "mul_lastdim",
                     [x, gain, d](TensorImpl& o) {
                       auto xv = x.data(), gv = gain.data();
                       if (x.requires_grad()) {
                         auto& g = grad_buffer(x);
                         for (std::size_t i = 0; i < g.size(); ++i) g[i] += o.grad[i] * gv[i % d];
                       }
                       if (gain.requires_grad()) {
                         auto& g = grad_buffer(gain);
                         for (std::size_t i = 0; i < o.grad.size(); ++i)
                           g[i % d] += o.grad[i] * xv[i];
                       }
                     });
}

Tensor exp(const Tensor& x) {
  return unary(x, "exp", [](double v) { return std::exp(v); }, [x](TensorImpl& o) {
    auto& g = grad_buffer(x);
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += o.grad[i] * o.data[i];
  });
}

Tensor log(const Tensor& x) {
  return unary(x, "log", [](double v) { return std::log(v); }, [x](TensorImpl& o) {
    auto& g = grad_buffer(x);
    auto in = x.data();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += o.grad[i] / in[i];
  });
}

Tensor relu(const Tensor& x) {
  return unary(x, "relu", [](double v) { return v > 0.0 ? v : 0.0; }, [x](TensorImpl& o) {
    auto& g = grad_buffer(x);
    auto in = x.data();
    for (std::size_t i = 0; i < g.size(); ++i)
      if (in[i] > 0.0) g[i] += o.grad[i];
  });
}

Tensor sum(const Tensor& x) {
  double s = 0.0;
  for (double v : x.data()) s += v;
  return make_result({}, {s}, {x}, "sum", [x](TensorImpl& o) {
    auto& g = grad_buffer(x);
    for (auto& v : g) v += o.grad[0];
  });
}

Tensor mean(const Tensor& x) {
  const double n = static_cast<double>(x.numel());
  if (x.numel() == 0) throw ContractError("mean of empty tensor");
  return scale(sum(x), 1.0 / n);
}

Tensor sum(const Tensor& x, std::size_t axis) {
  const auto sp = split_axis(x.shape(), axis, "sum");
  std::vector<double> out(sp.outer * sp.inner, 0.0);
  auto in = x.data();
  for (std::size_t o = 0; o < sp.outer; ++o)
    for (std::size_t l = 0; l < sp.len; ++l)
      for (std::size_t i = 0; i < sp.inner; ++i)
        out[o * sp.inner + i] += in[(o * sp.len + l) * sp.inner + i];
  return make_result(drop_axis(x.shape(), axis), std::move(out), {x}, "sum_axis",
                     [x, sp](TensorImpl& res) {
                       auto& g = grad_buffer(x);
                       for (std::size_t o = 0; o < sp.outer; ++o)
                         for (std::size_t l = 0; l < sp.len; ++l)
                           for (std::size_t i = 0; i < sp.inner; ++i)
                             g[(o * sp.len + l) * sp.inner + i] += res.grad[o * sp.inner + i];
                     });
}

Tensor mean(const Tensor& x, std::size_t axis) {
  const std::size_t len = x.dim(axis);
  if (len == 0) throw ContractError("mean over empty axis");
  return scale(sum(x, axis), 1.0 / static_cast<double>(len));
}

Tensor reshape(const Tensor& x, const Shape& shape) {
  if (numel_of(shape) != x.numel()) {
    throw DimensionError("reshape: " + shape_str(x.shape()) + " -> " + shape_str(shape));
  }
  std::vector<double> out(x.data().begin(), x.data().end());
  return make_result(shape, std::move(out), {x}, "reshape", [x](TensorImpl& o) {
    auto& g = grad_buffer(x);
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += o.grad[i];
  });
}

Tensor transpose(const Tensor& x) {
  require_rank(x, 2, "transpose");
  return transpose_last(x);
}

Tensor transpose_last(const Tensor& x) {
  if (x.rank() < 2) throw DimensionError("transpose_last: rank < 2 " + shape_str(x.shape()));
  Shape s = x.shape();
  const std::size_t p = s[s.size() - 2], q = s.back();
  const std::size_t batch = x.numel() / (p * q);
  std::swap(s[s.size() - 2], s[s.size() - 1]);
  std::vector<double> out(x.numel());
  auto in = x.data();
  for (std::size_t n = 0; n < batch; ++n)
    for (std::size_t i = 0; i < p; ++i)
      for (std::size_t j = 0; j < q; ++j) out[n * p * q + j * p + i] = in[n * p * q + i * q + j];
  return make_result(s, std::move(out), {x}, "transpose_last", [x, p, q, batch](TensorImpl& o) {
    auto& g = grad_buffer(x);
    for (std::size_t n = 0; n < batch; ++n)
      for (std::size_t i = 0; i < p; ++i)
        for (std::size_t j = 0; j < q; ++j) g[n * p * q + i * q + j] += o.grad[n * p * q + j * p + i];
  });
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_rank(a, 2, "matmul");
  require_rank(b, 2, "matmul");
  if (a.dim(1) != b.dim(0)) {
    throw DimensionError("matmul: inner extents differ, " + shape_str(a.shape()) + " x " +
                         shape_str(b.shape()));
  }
  const std::size_t P = a.dim(0), Q = a.dim(1), R = b.dim(1);
  std::vector<double> out(P * R, 0.0);
  kernel::gemm_nn(P, Q, R, a.data().data(), b.data().data(), out.data());
  return make_result({P, R}, std::move(out), {a, b}, "matmul", [a, b, P, Q, R](TensorImpl& o) {
    if (a.requires_grad()) kernel::gemm_nt(P, R, Q, o.grad.data(), b.data().data(), grad_buffer(a).data());
    if (b.requires_grad()) kernel::gemm_tn(Q, P, R, a.data().data(), o.grad.data(), grad_buffer(b).data());
  });
}

Tensor matmul_nt(const Tensor& a, const Tensor& b) {
  require_rank(a, 2, "matmul_nt");
  require_rank(b, 2, "matmul_nt");
  if (a.dim(1) != b.dim(1)) {
    throw DimensionError("matmul_nt: inner extents differ, " + shape_str(a.shape()) + " x " +
                         shape_str(b.shape()) + "^T");
  }
  const std::size_t P = a.dim(0), Q = a.dim(1), R = b.dim(0);
  std::vector<double> out(P * R, 0.0);
  kernel::gemm_nt(P, Q, R, a.data().data(), b.data().data(), out.data());
  return make_result({P, R}, std::move(out), {a, b}, "matmul_nt", [a, b, P, Q, R](TensorImpl& o) {
    if (a.requires_grad()) kernel::gemm_nn(P, R, Q, o.grad.data(), b.data().data(), grad_buffer(a).data());
    if (b.requires_grad()) kernel::gemm_tn(R, P, Q, o.grad.data(), a.data().data(), grad_buffer(b).data());
  });
}

Tensor bmm(const Tensor& a, const Tensor& b) {
  require_rank(a, 3, "bmm");
  require_rank(b, 3, "bmm");
  if (a.dim(0) != b.dim(0) || a.dim(2) != b.dim(1)) {
    throw DimensionError("bmm: " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
  }
  const std::size_t N = a.dim(0), P = a.dim(1), Q = a.dim(2), R = b.dim(2);
  std::vector<double> out(N * P * R, 0.0);
  for (std::size_t n = 0; n < N; ++n)
    kernel::gemm_nn(P, Q, R, a.data().data() + n * P * Q, b.data().data() + n * Q * R,
                    out.data() + n * P * R);
  return make_result({N, P, R}, std::move(out), {a, b}, "bmm", [a, b, N, P, Q, R](TensorImpl& o) {
    for (std::size_t n = 0; n < N; ++n) {
      const double* go = o.grad.data() + n * P * R;
      if (a.requires_grad())
        kernel::gemm_nt(P, R, Q, go, b.data().data() + n * Q * R, grad_buffer(a).data() + n * P * Q);
      if (b.requires_grad())
        kernel::gemm_tn(Q, P, R, a.data().data() + n * P * Q, go, grad_buffer(b).data() + n * Q * R);
    }
  });
}

Tensor bmm_nt(const Tensor& a, const Tensor& b) {
  require_rank(a, 3, "bmm_nt");
  require_rank(b, 3, "bmm_nt");
  if (a.dim(0) != b.dim(0) || a.dim(2) != b.dim(2)) {
    throw DimensionError("bmm_nt: " + shape_str(a.shape()) + " x " + shape_str(b.shape()) + "^T");
  }
  const std::size_t N = a.dim(0), P = a.dim(1), Q = a.dim(2), R = b.dim(1);
  std::vector<double> out(N * P * R, 0.0);
  for (std::size_t n = 0; n < N; ++n)
    kernel::gemm_nt(P, Q, R, a.data().data() + n * P * Q, b.data().data() + n * R * Q,
                    out.data() + n * P * R);
  return make_result({N, P, R}, std::move(out), {a, b}, "bmm_nt", [a, b, N, P, Q, R](TensorImpl& o) {
    for (std::size_t n = 0; n < N; ++n) {
      const double* go = o.grad.data() + n * P * R;
      if (a.requires_grad())
        kernel::gemm_nn(P, R, Q, go, b.data().data() + n * R * Q, grad_buffer(a).data() + n * P * Q);
      if (b.requires_grad())
        kernel::gemm_tn(R, P, Q, go, a.data().data() + n * P * Q, grad_buffer(b).data() + n * R * Q);
    }
  });
}

Tensor softmax(const Tensor& x, std::size_t axis) {
  const auto sp = split_axis(x.shape(), axis, "softmax");
  std::vector<double> out(x.numel());
  auto in = x.data();
  for (std::size_t o = 0; o < sp.outer; ++o)
    for (std::size_t i = 0; i < sp.inner; ++i) {
      const std::size_t base = o * sp.len * sp.inner + i;
      double mx = -std::numeric_limits<double>::infinity();
      for (std::size_t l = 0; l < sp.len; ++l) mx = std::max(mx, in[base + l * sp.inner]);
      double z = 0.0;
      for (std::size_t l = 0; l < sp.len; ++l) {
        const double e = std::exp(in[base + l * sp.inner] - mx);
        out[base + l * sp.inner] = e;
        z += e;
      }
      for (std::size_t l = 0; l < sp.len; ++l) out[base + l * sp.inner] /= z;
    }
  return make_result(x.shape(), std::move(out), {x}, "softmax", [x, sp](TensorImpl& o) {
    auto& g = grad_buffer(x);
    for (std::size_t oo = 0; oo < sp.outer; ++oo)
      for (std::size_t i = 0; i < sp.inner; ++i) {
        const std::size_t base = oo * sp.len * sp.inner + i;
        double d = 0.0;
        for (std::size_t l = 0; l < sp.len; ++l)
          d += o.grad[base + l * sp.inner] * o.data[base + l * sp.inner];
        for (std::size_t l = 0; l < sp.len; ++l) {
          const std::size_t k = base + l * sp.inner;
          g[k] += o.data[k] * (o.grad[k] - d);
        }
      }
  });
}

Tensor log_softmax(const Tensor& x, std::size_t axis) {
  const auto sp = split_axis(x.shape(), axis, "log_softmax");
  std::vector<double> out(x.numel());
  auto in = x.data();
  for (std::size_t o = 0; o < sp.outer; ++o)
    for (std::size_t i = 0; i < sp.inner; ++i) {
      const std::size_t base = o * sp.len * sp.inner + i;
      double mx = -std::numeric_limits<double>::infinity();
      for (std::size_t l = 0; l < sp.len; ++l) mx = std::max(mx, in[base + l * sp.inner]);
      double z = 0.0;
      for (std::size_t l = 0; l < sp.len; ++l) z += std::exp(in[base + l * sp.inner] - mx);
      const double lse = mx + std::log(z);
      for (std::size_t l = 0; l < sp.len; ++l)
        out[base + l * sp.inner] = in[base + l * sp.inner] - lse;
    }
  return make_result(x.shape(), std::move(out), {x}, "log_softmax", [x, sp](TensorImpl& o) {
    auto& g = grad_buffer(x);
    for (std::size_t oo = 0; oo < sp.outer; ++oo)
      for (std::size_t i = 0; i < sp.inner; ++i) {
        const std::size_t base = oo * sp.len * sp.inner + i;
        double gs = 0.0;
        for (std::size_t l = 0; l < sp.len; ++l) gs += o.grad[base + l * sp.inner];
        for (std::size_t l = 0; l < sp.len; ++l) {
          const std::size_t k = base + l * sp.inner;
          g[k] += o.grad[k] - std::exp(o.data[k]) * gs;
        }
      }
  });
}

Tensor logsumexp(const Tensor& x, std::size_t axis) {
  const auto sp = split_axis(x.shape(), axis, "logsumexp");
  std::vector<double> out(sp.outer * sp.inner);
  auto in = x.data();
  for (std::size_t o = 0; o < sp.outer; ++o)
    for (std::size_t i = 0; i < sp.inner; ++i) {
      const std::size_t base = o * sp.len * sp.inner + i;
      double mx = -std::numeric_limits<double>::infinity();
      for (std::size_t l = 0; l < sp.len; ++l) mx = std::max(mx, in[base + l * sp.inner]);
      double z = 0.0;
      for (std::size_t l = 0; l < sp.len; ++l) z += std::exp(in[base + l * sp.inner] - mx);
      out[o * sp.inner + i] = mx + std::log(z);
    }
  return make_result(drop_axis(x.shape(), axis), std::move(out), {x}, "logsumexp",
                     [x, sp](TensorImpl& o) {
                       auto& g = grad_buffer(x);
                       auto in = x.data();
                       for (std::size_t oo = 0; oo < sp.outer; ++oo)
                         for (std::size_t i = 0; i < sp.inner; ++i) {
                           const std::size_t base = oo * sp.len * sp.inner + i;
                           const double lse = o.data[oo * sp.inner + i];
                           const double go = o.grad[oo * sp.inner + i];
                           for (std::size_t l = 0; l < sp.len; ++l) {
                             const std::size_t k = base + l * sp.inner;
                             g[k] += go * std::exp(in[k] - lse);
                           }
                         }
                     });
}

Tensor segment_logsumexp(const Tensor& x, std::span<const std::size_t> lengths) {
  require_rank(x, 1, "segment_logsumexp");
  std::vector<std::size_t> offs(lengths.size() + 1, 0);
  for (std::size_t s = 0; s < lengths.size(); ++s) {
    if (lengths[s] == 0) throw ContractError("segment_logsumexp: empty segment");
    offs[s + 1] = offs[s] + lengths[s];
  }
  if (offs.back() != x.numel()) {
    throw DimensionError("segment_logsumexp: segment lengths cover " + std::to_string(offs.back()) +
                         " of " + std::to_string(x.numel()) + " entries");
  }
  std::vector<double> out(lengths.size());
  auto in = x.data();
  for (std::size_t s = 0; s < lengths.size(); ++s) {
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t k = offs[s]; k < offs[s + 1]; ++k) mx = std::max(mx, in[k]);
    double z = 0.0;
    for (std::size_t k = offs[s]; k < offs[s + 1]; ++k) z += std::exp(in[k] - mx);
    out[s] = mx + std::log(z);
  }
  return make_result({lengths.size()}, std::move(out), {x}, "segment_logsumexp",
                     [x, offs](TensorImpl& o) {
                       auto& g = grad_buffer(x);
                       auto in = x.data();
                       for (std::size_t s = 0; s + 1 < offs.size(); ++s)
                         for (std::size_t k = offs[s]; k < offs[s + 1]; ++k)
                           g[k] += o.grad[s] * std::exp(in[k] - o.data[s]);
                     });
}

Tensor l2_normalize(const Tensor& x, std::size_t axis, double eps) {
  const auto sp = split_axis(x.shape(), axis, "l2_normalize");
  std::vector<double> out(x.numel());
  std::vector<double> norms(sp.outer * sp.inner);
  auto in = x.data();
  for (std::size_t o = 0; o < sp.outer; ++o)
    for (std::size_t i = 0; i < sp.inner; ++i) {
      const std::size_t base = o * sp.len * sp.inner + i;
      double ss = 0.0;
      for (std::size_t l = 0; l < sp.len; ++l) ss += in[base + l * sp.inner] * in[base + l * sp.inner];
      const double r = std::sqrt(ss);
      norms[o * sp.inner + i] = r;
      for (std::size_t l = 0; l < sp.len; ++l) out[base + l * sp.inner] = in[base + l * sp.inner] / (r + eps);
    }
  return make_result(x.shape(), std::move(out), {x}, "l2_normalize",
                     [x, sp, eps, norms = std::move(norms)](TensorImpl& o) {
                       auto& g = grad_buffer(x);
                       auto in = x.data();
                       for (std::size_t oo = 0; oo < sp.outer; ++oo)
                         for (std::size_t i = 0; i < sp.inner; ++i) {
                           const std::size_t base = oo * sp.len * sp.inner + i;
                           const double r = norms[oo * sp.inner + i];
                           const double denom = r + eps;
                           double proj = 0.0;
                           for (std::size_t l = 0; l < sp.len; ++l)
                             proj += o.grad[base + l * sp.inner] * in[base + l * sp.inner];
                           const double coef = r > 0.0 ? proj / (r * denom * denom) : 0.0;
                           for (std::size_t l = 0; l < sp.len; ++l) {
                             const std::size_t k = base + l * sp.inner;
                             g[k] += o.grad[k] / denom - in[k] * coef;
                           }
                         }
                     });
}

Tensor gather_rows(const Tensor& x, std::span<const std::size_t> rows) {
  require_rank(x, 2, "gather_rows");
  const std::size_t R = x.dim(0), D = x.dim(1);
  std::vector<std::size_t> idx(rows.begin(), rows.end());
  std::vector<double> out(idx.size() * D);
  auto in = x.data();
  for (std::size_t r = 0; r < idx.size(); ++r) {
    if (idx[r] >= R) {
      throw DimensionError("gather_rows: row " + std::to_string(idx[r]) + " out of range for " +
                           shape_str(x.shape()));
    }
    std::copy_n(in.begin() + static_cast<std::ptrdiff_t>(idx[r] * D), D, out.begin() + static_cast<std::ptrdiff_t>(r * D));
  }
  return make_result({idx.size(), D}, std::move(out), {x}, "gather_rows",
                     [x, idx, D](TensorImpl& o) {
                       auto& g = grad_buffer(x);
                       for (std::size_t r = 0; r < idx.size(); ++r)
                         for (std::size_t d = 0; d < D; ++d) g[idx[r] * D + d] += o.grad[r * D + d];
                     });
}

Tensor slice_rows(const Tensor& x, std::size_t begin, std::size_t end) {
  if (x.rank() == 0 || begin > end || end > x.dim(0)) {
    throw DimensionError("slice_rows: [" + std::to_string(begin) + ", " + std::to_string(end) +
                         ") invalid for " + shape_str(x.shape()));
  }
  const std::size_t row = x.numel() / std::max<std::size_t>(x.dim(0), 1);
  Shape s = x.shape();
  s[0] = end - begin;
  auto in = x.data();
  std::vector<double> out(in.begin() + static_cast<std::ptrdiff_t>(begin * row),
                          in.begin() + static_cast<std::ptrdiff_t>(end * row));
  return make_result(s, std::move(out), {x}, "slice_rows", [x, begin, row](TensorImpl& o) {
    auto& g = grad_buffer(x);
    for (std::size_t i = 0; i < o.grad.size(); ++i) g[begin * row + i] += o.grad[i];
  });
}

Tensor pick(const Tensor& x, std::span<const std::size_t> cols) {
  require_rank(x, 2, "pick");
  const std::size_t R = x.dim(0), K = x.dim(1);
  if (cols.size() != R) {
    throw DimensionError("pick: " + std::to_string(cols.size()) + " indices for " +
                         shape_str(x.shape()));
  }
  std::vector<std::size_t> idx(cols.begin(), cols.end());
  std::vector<double> out(R);
  auto in = x.data();
  for (std::size_t r = 0; r < R; ++r) {
    if (idx[r] >= K) throw DimensionError("pick: column out of range");
    out[r] = in[r * K + idx[r]];
  }
  return make_result({R}, std::move(out), {x}, "pick", [x, idx, K](TensorImpl& o) {
    auto& g = grad_buffer(x);
    for (std::size_t r = 0; r < idx.size(); ++r) g[r * K + idx[r]] += o.grad[r];
  });
}

Tensor concat(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw ContractError("concat of zero tensors");
  const bool scalars = parts.front().rank() == 0;
  Shape tail = scalars ? Shape{} : Shape(parts.front().shape().begin() + 1, parts.front().shape().end());
  std::size_t rows = 0;
  std::vector<double> out;
  for (const auto& p : parts) {
    if (scalars) {
      if (p.rank() != 0) throw DimensionError("concat: mixing scalars and tensors");
      rows += 1;
    } else {
      if (p.rank() == 0 || Shape(p.shape().begin() + 1, p.shape().end()) != tail) {
        throw DimensionError("concat: trailing extents differ, " + shape_str(parts.front().shape()) +
                             " vs " + shape_str(p.shape()));
      }
      rows += p.dim(0);
    }
    out.insert(out.end(), p.data().begin(), p.data().end());
  }
  Shape s{rows};
  s.insert(s.end(), tail.begin(), tail.end());
  return make_result(s, std::move(out), parts, "concat", [parts](TensorImpl& o) {
    std::size_t off = 0;
    for (const auto& p : parts) {
      const std::size_t n = p.numel();
      if (p.requires_grad()) {
        auto& g = grad_buffer(p);
        for (std::size_t i = 0; i < n; ++i) g[i] += o.grad[off + i];
      }
      off += n;
    }
  });
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps) {
  require_rank(gain, 1, "layer_norm");
  require_rank(bias, 1, "layer_norm");
  if (x.rank() == 0 || x.shape().back() != gain.dim(0) || gain.dim(0) != bias.dim(0)) {
    throw DimensionError("layer_norm: " + shape_str(x.shape()) + " with gain " +
                         shape_str(gain.shape()));
  }
  const std::size_t D = gain.dim(0), rows = x.numel() / D;
  std::vector<double> xhat(x.numel()), inv_std(rows), out(x.numel());
  auto in = x.data();
  auto gv = gain.data(), bv = bias.data();
  for (std::size_t r = 0; r < rows; ++r) {
    const double* v = in.data() + r * D;
    double mu = 0.0;
    for (std::size_t d = 0; d < D; ++d) mu += v[d];
    mu /= static_cast<double>(D);
    double var = 0.0;
    for (std::size_t d = 0; d < D; ++d) var += (v[d] - mu) * (v[d] - mu);
    var /= static_cast<double>(D);
    inv_std[r] = 1.0 / std::sqrt(var + eps);
    for (std::size_t d = 0; d < D; ++d) {
      xhat[r * D + d] = (v[d] - mu) * inv_std[r];
      out[r * D + d] = xhat[r * D + d] * gv[d] + bv[d];
    }
  }
  return make_result(x.shape(), std::move(out), {x, gain, bias}, "layer_norm",
                     [x, gain, bias, D, rows, xhat = std::move(xhat),
                      inv_std = std::move(inv_std)](TensorImpl& o) {
                       auto gv = gain.data();
                       if (gain.requires_grad() || bias.requires_grad()) {
                         auto& gg = grad_buffer(gain);
                         auto& gb = grad_buffer(bias);
                         for (std::size_t r = 0; r < rows; ++r)
                           for (std::size_t d = 0; d < D; ++d) {
                             gg[d] += o.grad[r * D + d] * xhat[r * D + d];
                             gb[d] += o.grad[r * D + d];
                           }
                       }
                       if (!x.requires_grad()) return;
                       auto& g = grad_buffer(x);
                       const double invD = 1.0 / static_cast<double>(D);
                       for (std::size_t r = 0; r < rows; ++r) {
                         double m1 = 0.0, m2 = 0.0;
                         for (std::size_t d = 0; d < D; ++d) {
                           const double dxh = o.grad[r * D + d] * gv[d];
                           m1 += dxh;
                           m2 += dxh * xhat[r * D + d];
                         }
                         m1 *= invD;
                         m2 *= invD;
                         for (std::size_t d = 0; d < D; ++d) {
                           const double dxh = o.grad[r * D + d] * gv[d];
                           g[r * D + d] += inv_std[r] * (dxh - m1 - xhat[r * D + d] * m2);
                         }
                       }
                     });
}

namespace {

struct ConvGeom {
  std::size_t N, C, H, W, O, K, stride, pad, OH, OW;
  std::size_t ckk() const { return C * K * K; }
  std::size_t ohw() const { return OH * OW; }
};

void im2col(const ConvGeom& g, const double* x, double* col) {
  for (std::size_t c = 0; c < g.C; ++c)
    for (std::size_t ky = 0; ky < g.K; ++ky)
      for (std::size_t kx = 0; kx < g.K; ++kx) {
        double* dst = col + ((c * g.K + ky) * g.K + kx) * g.ohw();
        for (std::size_t oy = 0; oy < g.OH; ++oy) {
          const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * g.stride + ky) -
                                    static_cast<std::ptrdiff_t>(g.pad);
          for (std::size_t ox = 0; ox < g.OW; ++ox) {
            const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox * g.stride + kx) -
                                      static_cast<std::ptrdiff_t>(g.pad);
            const bool inside = iy >= 0 && ix >= 0 && iy < static_cast<std::ptrdiff_t>(g.H) &&
                                ix < static_cast<std::ptrdiff_t>(g.W);
            dst[oy * g.OW + ox] =
                inside ? x[(c * g.H + static_cast<std::size_t>(iy)) * g.W + static_cast<std::size_t>(ix)] : 0.0;
          }
        }
      }
}

void col2im_add(const ConvGeom& g, const double* col, double* dx) {
  for (std::size_t c = 0; c < g.C; ++c)
    for (std::size_t ky = 0; ky < g.K; ++ky)
      for (std::size_t kx = 0; kx < g.K; ++kx) {
        const double* src = col + ((c * g.K + ky) * g.K + kx) * g.ohw();
        for (std::size_t oy = 0; oy < g.OH; ++oy) {
          const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * g.stride + ky) -
                                    static_cast<std::ptrdiff_t>(g.pad);
          if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(g.H)) continue;
          for (std::size_t ox = 0; ox < g.OW; ++ox) {
            const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox * g.stride + kx) -
                                      static_cast<std::ptrdiff_t>(g.pad);
            if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(g.W)) continue;
            dx[(c * g.H + static_cast<std::size_t>(iy)) * g.W + static_cast<std::size_t>(ix)] +=
                src[oy * g.OW + ox];
          }
        }
      }
}

}  // namespace

Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& bias, std::size_t stride,
              std::size_t pad) {
  require_rank(x, 4, "conv2d");
  require_rank(w, 4, "conv2d");
  require_rank(bias, 1, "conv2d");
  if (stride == 0) throw ContractError("conv2d: stride must be positive");
  if (w.dim(1) != x.dim(1) || w.dim(2) != w.dim(3) || bias.dim(0) != w.dim(0)) {
    throw DimensionError("conv2d: input " + shape_str(x.shape()) + ", weight " +
                         shape_str(w.shape()) + ", bias " + shape_str(bias.shape()));
  }
  ConvGeom g{x.dim(0), x.dim(1), x.dim(2), x.dim(3), w.dim(0), w.dim(2), stride, pad, 0, 0};
  if (g.H + 2 * pad < g.K || g.W + 2 * pad < g.K) {
    throw DimensionError("conv2d: kernel larger than padded input " + shape_str(x.shape()));
  }
  g.OH = (g.H + 2 * pad - g.K) / stride + 1;
  g.OW = (g.W + 2 * pad - g.K) / stride + 1;

  std::vector<double> out(g.N * g.O * g.ohw());
  std::vector<double> col(g.ckk() * g.ohw());
  auto xd = x.data();
  auto wd = w.data();
  auto bd = bias.data();
  for (std::size_t n = 0; n < g.N; ++n) {
    im2col(g, xd.data() + n * g.C * g.H * g.W, col.data());
    double* on = out.data() + n * g.O * g.ohw();
    for (std::size_t o = 0; o < g.O; ++o) std::fill_n(on + o * g.ohw(), g.ohw(), bd[o]);
    kernel::gemm_nn(g.O, g.ckk(), g.ohw(), wd.data(), col.data(), on);
  }
  return make_result({g.N, g.O, g.OH, g.OW}, std::move(out), {x, w, bias}, "conv2d",
                     [x, w, bias, g](TensorImpl& o) {
                       std::vector<double> col(g.ckk() * g.ohw());
                       std::vector<double> dcol;
                       auto xd = x.data();
                       for (std::size_t n = 0; n < g.N; ++n) {
                         const double* go = o.grad.data() + n * g.O * g.ohw();
                         if (bias.requires_grad()) {
                           auto& gb = grad_buffer(bias);
                           for (std::size_t oc = 0; oc < g.O; ++oc) {
                             double s = 0.0;
                             for (std::size_t p = 0; p < g.ohw(); ++p) s += go[oc * g.ohw() + p];
                             gb[oc] += s;
                           }
                         }
                         if (w.requires_grad()) {
                           im2col(g, xd.data() + n * g.C * g.H * g.W, col.data());
                           kernel::gemm_nt(g.O, g.ohw(), g.ckk(), go, col.data(), grad_buffer(w).data());
                         }
                         if (x.requires_grad()) {
                           dcol.assign(g.ckk() * g.ohw(), 0.0);
                           kernel::gemm_tn(g.ckk(), g.O, g.ohw(), w.data().data(), go, dcol.data());
                           col2im_add(g, dcol.data(), grad_buffer(x).data() + n * g.C * g.H * g.W);
                         }
                       }
                     });
}

Tensor max_pool2d(const Tensor& x, std::size_t window) {
  require_rank(x, 4, "max_pool2d");
  if (window == 0) throw ContractError("max_pool2d: window must be positive");
  const std::size_t N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  const std::size_t OH = H / window, OW = W / window;
  if (OH == 0 || OW == 0) throw DimensionError("max_pool2d: window exceeds " + shape_str(x.shape()));
  std::vector<double> out(N * C * OH * OW);
  std::vector<std::size_t> arg(out.size());
  auto in = x.data();
  for (std::size_t nc = 0; nc < N * C; ++nc)
    for (std::size_t oy = 0; oy < OH; ++oy)
      for (std::size_t ox = 0; ox < OW; ++ox) {
        std::size_t best = nc * H * W + (oy * window) * W + ox * window;
        for (std::size_t dy = 0; dy < window; ++dy)
          for (std::size_t dx = 0; dx < window; ++dx) {
            const std::size_t k = nc * H * W + (oy * window + dy) * W + ox * window + dx;
            if (in[k] > in[best]) best = k;
          }
        const std::size_t oi = (nc * OH + oy) * OW + ox;
        out[oi] = in[best];
        arg[oi] = best;
      }
  return make_result({N, C, OH, OW}, std::move(out), {x}, "max_pool2d",
                     [x, arg = std::move(arg)](TensorImpl& o) {
                       auto& g = grad_buffer(x);
                       for (std::size_t i = 0; i < arg.size(); ++i) g[arg[i]] += o.grad[i];
                     });
}

Tensor cross_entropy(const Tensor& logits, std::span<const std::size_t> targets) {
  require_rank(logits, 2, "cross_entropy");
  if (targets.size() != logits.dim(0)) {
    throw DimensionError("cross_entropy: " + std::to_string(targets.size()) + " targets for " +
                         shape_str(logits.shape()));
  }
  if (targets.empty()) throw ContractError("cross_entropy: no targets");
  return neg(mean(pick(log_softmax(logits, 1), targets)));
}

}  // namespace pf
