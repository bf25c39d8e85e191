#pragma once

#include <cmath>

#include "nco/tensor/tensor.hpp"

// Deterministic dense kernels. Every output element of a product is a single
// fma chain over the reduction index in increasing order, so a row of the
// result depends only on the matching input row: batching, chunking, or
// replicating rows never changes a bit.
namespace nco::kernels {

/// C[M,N] (=|+=) A[M,K] * B[K,N]; all row-major.
template <typename T>
void gemm(const T* a, const T* b, T* c, Index m, Index k, Index n, bool accumulate = false);

/// C[M,N] (=|+=) A[M,K] * B[N,K]^T.
template <typename T>
void gemm_bt(const T* a, const T* b, T* c, Index m, Index k, Index n, bool accumulate = false);

/// C[K,N] (=|+=) A[M,K]^T * B[M,N]; reduction over rows in increasing order.
template <typename T>
void gemm_at(const T* a, const T* b, T* c, Index m, Index k, Index n, bool accumulate = false);

/// Sequential fma dot product.
template <typename T>
inline T dot(const T* x, const T* y, Index n) {
  T acc = T(0);
  for (Index i = 0; i < n; ++i) acc = std::fma(x[i], y[i], acc);
  return acc;
}

template <typename T>
void transpose(const T* src, T* dst, Index rows, Index cols);

}  // namespace nco::kernels
