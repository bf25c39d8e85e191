#include "nco/tensor/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

namespace nco::kernels {
namespace {

constexpr Index kRowBlock = 6;
constexpr Index kColBlock = 64;

// Accumulators start from zero (or from C when accumulating, which is done
// after the chain so the chain itself never depends on C).
template <typename T>
void gemm_rows(const T* a, const T* b, T* c, Index i0, Index rows, Index k, Index n, bool accumulate) {
  for (Index j0 = 0; j0 < n; j0 += kColBlock) {
    const Index jw = std::min(kColBlock, n - j0);
    if (rows == kRowBlock && jw == kColBlock) {
      T acc[kRowBlock][kColBlock] = {};
      for (Index p = 0; p < k; ++p) {
        const T* brow = b + p * n + j0;
        for (Index r = 0; r < kRowBlock; ++r) {
          const T av = a[(i0 + r) * k + p];
          for (Index j = 0; j < kColBlock; ++j) acc[r][j] = std::fma(av, brow[j], acc[r][j]);
        }
      }
      for (Index r = 0; r < kRowBlock; ++r) {
        T* crow = c + (i0 + r) * n + j0;
        if (accumulate)
          for (Index j = 0; j < kColBlock; ++j) crow[j] += acc[r][j];
        else
          for (Index j = 0; j < kColBlock; ++j) crow[j] = acc[r][j];
      }
    } else {
      for (Index r = 0; r < rows; ++r) {
        T acc[kColBlock] = {};
        const T* arow = a + (i0 + r) * k;
        for (Index p = 0; p < k; ++p) {
          const T av = arow[p];
          const T* brow = b + p * n + j0;
          for (Index j = 0; j < jw; ++j) acc[j] = std::fma(av, brow[j], acc[j]);
        }
        T* crow = c + (i0 + r) * n + j0;
        if (accumulate)
          for (Index j = 0; j < jw; ++j) crow[j] += acc[j];
        else
          for (Index j = 0; j < jw; ++j) crow[j] = acc[j];
      }
    }
  }
}

}  // namespace

template <typename T>
void gemm(const T* a, const T* b, T* c, Index m, Index k, Index n, bool accumulate) {
  Index i = 0;
  for (; i + kRowBlock <= m; i += kRowBlock) gemm_rows(a, b, c, i, kRowBlock, k, n, accumulate);
  if (i < m) gemm_rows(a, b, c, i, m - i, k, n, accumulate);
}

template <typename T>
void transpose(const T* src, T* dst, Index rows, Index cols) {
  constexpr Index tile = 32;
  for (Index i0 = 0; i0 < rows; i0 += tile)
    for (Index j0 = 0; j0 < cols; j0 += tile)
      for (Index i = i0; i < std::min(rows, i0 + tile); ++i)
        for (Index j = j0; j < std::min(cols, j0 + tile); ++j) dst[j * rows + i] = src[i * cols + j];
}

template <typename T>
void gemm_bt(const T* a, const T* b, T* c, Index m, Index k, Index n, bool accumulate) {
  std::vector<T> bt(static_cast<std::size_t>(k * n));
  transpose(b, bt.data(), n, k);
  gemm(a, bt.data(), c, m, k, n, accumulate);
}

template <typename T>
void gemm_at(const T* a, const T* b, T* c, Index m, Index k, Index n, bool accumulate) {
  std::vector<T> at(static_cast<std::size_t>(k * m));
  transpose(a, at.data(), m, k);
  gemm(at.data(), b, c, k, m, n, accumulate);
}

template void gemm<float>(const float*, const float*, float*, Index, Index, Index, bool);
template void gemm<double>(const double*, const double*, double*, Index, Index, Index, bool);
template void gemm_bt<float>(const float*, const float*, float*, Index, Index, Index, bool);
template void gemm_bt<double>(const double*, const double*, double*, Index, Index, Index, bool);
template void gemm_at<float>(const float*, const float*, float*, Index, Index, Index, bool);
template void gemm_at<double>(const double*, const double*, double*, Index, Index, Index, bool);
template void transpose<float>(const float*, float*, Index, Index);
template void transpose<double>(const double*, double*, Index, Index);

}  // namespace nco::kernels
