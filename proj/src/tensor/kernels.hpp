#pragma once

#include <algorithm>
#include <cstddef>

// Row-major dense kernels. Every output row is produced by the same sequence of
// floating-point operations regardless of how many rows the call covers, so
// results never depend on batch composition.
namespace pf::kernel {

inline constexpr std::size_t kColBlock = 256;

inline double dot(const double* __restrict a, const double* __restrict b, std::size_t n) {
  double s0 = 0.0, s1 = 0.0, s2 = 0.0, s3 = 0.0;
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    s0 += a[i] * b[i];
    s1 += a[i + 1] * b[i + 1];
    s2 += a[i + 2] * b[i + 2];
    s3 += a[i + 3] * b[i + 3];
  }
  // Tail terms land in the same accumulators they would occupy if the
  // vectors were zero-extended, so appending zeros never changes the result.
  if (i < n) s0 += a[i] * b[i];
  if (i + 1 < n) s1 += a[i + 1] * b[i + 1];
  if (i + 2 < n) s2 += a[i + 2] * b[i + 2];
  return (s0 + s1) + (s2 + s3);
}

inline void axpy(double alpha, const double* __restrict x, double* __restrict y, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) y[i] += alpha * x[i];
}

// C[M,N] += A[M,K] * B[K,N]
inline void gemm_nn(std::size_t M, std::size_t K, std::size_t N, const double* A, const double* B,
                    double* C) {
  for (std::size_t j0 = 0; j0 < N; j0 += kColBlock) {
    const std::size_t nb = std::min(kColBlock, N - j0);
    for (std::size_t i = 0; i < M; ++i) {
      double* c = C + i * N + j0;
      const double* a = A + i * K;
      for (std::size_t k = 0; k < K; ++k) axpy(a[k], B + k * N + j0, c, nb);
    }
  }
}

// C[M,N] += A[M,K] * B[N,K]^T
inline void gemm_nt(std::size_t M, std::size_t K, std::size_t N, const double* A, const double* B,
                    double* C) {
  for (std::size_t i = 0; i < M; ++i) {
    const double* a = A + i * K;
    double* c = C + i * N;
    for (std::size_t j = 0; j < N; ++j) c[j] += dot(a, B + j * K, K);
  }
}

// C[M,N] += A[K,M]^T * B[K,N]
inline void gemm_tn(std::size_t M, std::size_t K, std::size_t N, const double* A, const double* B,
                    double* C) {
  for (std::size_t j0 = 0; j0 < N; j0 += kColBlock) {
    const std::size_t nb = std::min(kColBlock, N - j0);
    for (std::size_t i = 0; i < M; ++i) {
      double* c = C + i * N + j0;
      for (std::size_t k = 0; k < K; ++k) axpy(A[k * M + i], B + k * N + j0, c, nb);
    }
  }
}

}  // namespace pf::kernel
