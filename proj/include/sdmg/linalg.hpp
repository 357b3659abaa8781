#pragma once

#include <algorithm>
#include <cstddef>

// Plain loop kernels for row-major matrices. All of them accumulate into C.
// Fixed-width lane arrays let the compiler vectorize without reassociating
// floating-point sums, so results do not depend on optimization flags.
namespace sdmg::linalg {

inline constexpr std::size_t kLanes = 8;
inline constexpr std::size_t kTile = 512;

template <class T>
inline T dot(const T* a, const T* b, std::size_t n) {
  T acc[kLanes] = {};
  std::size_t i = 0;
  for (; i + kLanes <= n; i += kLanes)
    for (std::size_t l = 0; l < kLanes; ++l) acc[l] += a[i + l] * b[i + l];
  T tail = 0;
  for (; i < n; ++i) tail += a[i] * b[i];
  return ((acc[0] + acc[1]) + (acc[2] + acc[3])) + ((acc[4] + acc[5]) + (acc[6] + acc[7])) + tail;
}

template <class T>
inline void axpy(T a, const T* x, T* y, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) y[i] += a * x[i];
}

namespace detail {

// C[M×N] += op(A)·B where op(A)(i,k) = A[i·ra + k·ca], B row-major [K×N].
// Blocks of 4 rows × 8 columns of C stay in registers across the k loop.
template <class T>
void gemm_strided(std::size_t M, std::size_t N, std::size_t K, const T* A, std::size_t ra, std::size_t ca, const T* B, T* C) {
  constexpr std::size_t R = 4, W = kLanes;
  for (std::size_t j0 = 0; j0 < N; j0 += kTile) {
    const std::size_t j1 = std::min(N, j0 + kTile);
    std::size_t i = 0;
    for (; i + R <= M; i += R) {
      std::size_t j = j0;
      for (; j + W <= j1; j += W) {
        T acc[R][W];
        for (std::size_t r = 0; r < R; ++r)
          for (std::size_t l = 0; l < W; ++l) acc[r][l] = C[(i + r) * N + j + l];
        for (std::size_t k = 0; k < K; ++k) {
          const T* b = B + k * N + j;
          for (std::size_t r = 0; r < R; ++r) {
            const T a = A[(i + r) * ra + k * ca];
            for (std::size_t l = 0; l < W; ++l) acc[r][l] += a * b[l];
          }
        }
        for (std::size_t r = 0; r < R; ++r)
          for (std::size_t l = 0; l < W; ++l) C[(i + r) * N + j + l] = acc[r][l];
      }
      for (; j < j1; ++j)
        for (std::size_t r = 0; r < R; ++r) {
          T s = C[(i + r) * N + j];
          for (std::size_t k = 0; k < K; ++k) s += A[(i + r) * ra + k * ca] * B[k * N + j];
          C[(i + r) * N + j] = s;
        }
    }
    for (; i < M; ++i)
      for (std::size_t k = 0; k < K; ++k) {
        const T a = A[i * ra + k * ca];
        if (a != T(0)) axpy(a, B + k * N + j0, C + i * N + j0, j1 - j0);
      }
  }
}

}  // namespace detail

/// C[M×N] += A[M×K] · B[K×N]
template <class T>
void gemm_nn(std::size_t M, std::size_t N, std::size_t K, const T* A, const T* B, T* C) {
  detail::gemm_strided(M, N, K, A, K, 1, B, C);
}

/// C[M×N] += A[K×M]ᵀ · B[K×N]
template <class T>
void gemm_tn(std::size_t M, std::size_t N, std::size_t K, const T* A, const T* B, T* C) {
  detail::gemm_strided(M, N, K, A, 1, M, B, C);
}

/// C[M×N] += A[M×K] · B[N×K]ᵀ
template <class T>
void gemm_nt(std::size_t M, std::size_t N, std::size_t K, const T* A, const T* B, T* C) {
  constexpr std::size_t J = 4;
  for (std::size_t i = 0; i < M; ++i) {
    const T* a = A + i * K;
    std::size_t j = 0;
    for (; j + J <= N; j += J) {
      T acc[J][kLanes] = {};
      std::size_t k = 0;
      for (; k + kLanes <= K; k += kLanes)
        for (std::size_t q = 0; q < J; ++q) {
          const T* b = B + (j + q) * K + k;
          for (std::size_t l = 0; l < kLanes; ++l) acc[q][l] += a[k + l] * b[l];
        }
      for (std::size_t q = 0; q < J; ++q) {
        T tail = 0;
        for (std::size_t kk = k; kk < K; ++kk) tail += a[kk] * B[(j + q) * K + kk];
        const T* s = acc[q];
        C[i * N + j + q] += ((s[0] + s[1]) + (s[2] + s[3])) + ((s[4] + s[5]) + (s[6] + s[7])) + tail;
      }
    }
    for (; j < N; ++j) C[i * N + j] += dot(a, B + j * K, K);
  }
}

}  // namespace sdmg::linalg
