#pragma once

// Row-major dense matrix kernels used by matmul, linear and convolution.
// All kernels accumulate into C (C += op(A) * op(B)); callers zero C first
// when they want plain assignment. Loop orders keep the innermost loop
// contiguous so the compiler can vectorize; summation order is fixed, so
// results are deterministic.

#include <algorithm>
#include <cstddef>

namespace wsc::detail {

inline constexpr std::size_t kColumnBlock = 256;

// C[M,N] += A[M,K] * B[K,N]
// Columns are processed in blocks so that a block of C stays in L1 while the
// matching rows of B are streamed once per group of four output rows.
template <class T>
void gemm_nn(std::size_t M, std::size_t N, std::size_t K, const T* A, const T* B, T* C) {
  for (std::size_t j0 = 0; j0 < N; j0 += kColumnBlock) {
    const std::size_t jn = std::min(kColumnBlock, N - j0);
    std::size_t i = 0;
    for (; i + 4 <= M; i += 4) {
      T* __restrict c0 = C + i * N + j0;
      T* __restrict c1 = c0 + N;
      T* __restrict c2 = c1 + N;
      T* __restrict c3 = c2 + N;
      std::size_t k = 0;
      for (; k + 2 <= K; k += 2) {
        const T* a = A + i * K + k;
        const T a00 = a[0], a01 = a[1], a10 = a[K], a11 = a[K + 1];
        const T a20 = a[2 * K], a21 = a[2 * K + 1], a30 = a[3 * K], a31 = a[3 * K + 1];
        const T* __restrict b = B + k * N + j0;
        const T* __restrict bb = b + N;
#pragma omp simd
        for (std::size_t j = 0; j < jn; ++j) {
          const T u = b[j], v = bb[j];
          c0[j] += a00 * u + a01 * v;
          c1[j] += a10 * u + a11 * v;
          c2[j] += a20 * u + a21 * v;
          c3[j] += a30 * u + a31 * v;
        }
      }
      for (; k < K; ++k) {
        const T a0 = A[i * K + k], a1 = A[(i + 1) * K + k], a2 = A[(i + 2) * K + k], a3 = A[(i + 3) * K + k];
        const T* b = B + k * N + j0;
#pragma omp simd
        for (std::size_t j = 0; j < jn; ++j) {
          const T bv = b[j];
          c0[j] += a0 * bv;
          c1[j] += a1 * bv;
          c2[j] += a2 * bv;
          c3[j] += a3 * bv;
        }
      }
    }
    for (; i < M; ++i) {
      T* c = C + i * N + j0;
      for (std::size_t k = 0; k < K; ++k) {
        const T av = A[i * K + k];
        const T* b = B + k * N + j0;
#pragma omp simd
        for (std::size_t j = 0; j < jn; ++j) c[j] += av * b[j];
      }
    }
  }
}

// C[M,N] += A[K,M]^T * B[K,N]
template <class T>
void gemm_tn(std::size_t M, std::size_t N, std::size_t K, const T* A, const T* B, T* C) {
  for (std::size_t j0 = 0; j0 < N; j0 += kColumnBlock) {
    const std::size_t jn = std::min(kColumnBlock, N - j0);
    for (std::size_t i = 0; i < M; ++i) {
      T* __restrict c = C + i * N + j0;
      std::size_t k = 0;
      for (; k + 4 <= K; k += 4) {
        const T a0 = A[k * M + i], a1 = A[(k + 1) * M + i], a2 = A[(k + 2) * M + i], a3 = A[(k + 3) * M + i];
        const T* b0 = B + k * N + j0;
        const T* b1 = b0 + N;
        const T* b2 = b1 + N;
        const T* b3 = b2 + N;
#pragma omp simd
        for (std::size_t j = 0; j < jn; ++j) c[j] += a0 * b0[j] + a1 * b1[j] + a2 * b2[j] + a3 * b3[j];
      }
      for (; k < K; ++k) {
        const T av = A[k * M + i];
        const T* b = B + k * N + j0;
#pragma omp simd
        for (std::size_t j = 0; j < jn; ++j) c[j] += av * b[j];
      }
    }
  }
}

template <class T>
T dot(std::size_t n, const T* x, const T* y) {
  T s = T(0);
#pragma omp simd reduction(+ : s)
  for (std::size_t j = 0; j < n; ++j) s += x[j] * y[j];
  return s;
}

// C[M,N] += A[M,K] * B[N,K]^T, reduction axis processed in blocks.
template <class T>
void gemm_nt(std::size_t M, std::size_t N, std::size_t K, const T* A, const T* B, T* C) {
  for (std::size_t k0 = 0; k0 < K; k0 += kColumnBlock) {
    const std::size_t kn = std::min(kColumnBlock, K - k0);
    for (std::size_t j = 0; j < N; ++j)
      for (std::size_t i = 0; i < M; ++i) C[i * N + j] += dot(kn, A + i * K + k0, B + j * K + k0);
  }
}

// C[M,N] += A[K,M]^T * B[N,K]^T
template <class T>
void gemm_tt(std::size_t M, std::size_t N, std::size_t K, const T* A, const T* B, T* C) {
  for (std::size_t i = 0; i < M; ++i)
    for (std::size_t j = 0; j < N; ++j) {
      T s = T(0);
      for (std::size_t k = 0; k < K; ++k) s += A[k * M + i] * B[j * K + k];
      C[i * N + j] += s;
    }
}

template <class T>
void gemm(bool trans_a, bool trans_b, std::size_t M, std::size_t N, std::size_t K, const T* A, const T* B,
          T* C) {
  if (!trans_a && !trans_b)
    gemm_nn(M, N, K, A, B, C);
  else if (trans_a && !trans_b)
    gemm_tn(M, N, K, A, B, C);
  else if (!trans_a && trans_b)
    gemm_nt(M, N, K, A, B, C);
  else
    gemm_tt(M, N, K, A, B, C);
}

}  // namespace wsc::detail
