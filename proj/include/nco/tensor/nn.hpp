#pragma once

#include <cstdint>

#include "nco/tensor/ops.hpp"

namespace nco {

/// C * tanh(x).
template <typename T>
Var<T> tanh_clip(const Var<T>& x, T c) {
  if (!(c > T(0))) fail(ErrorCode::InvalidConfig, "tanh clip bound must be positive");
  return scale(tanh(x), c);
}

template <typename T>
struct MhaWeights {
  Var<T> wq, wk, wv, wo;  // [d, d] each, no bias
};

/// Projected multi-head attention: wo * attention(wq q, wk k, wv v).
template <typename T>
Var<T> mha(const Var<T>& q, const Var<T>& k, const Var<T>& v, const MhaWeights<T>& w, Index heads,
           const TensorB* mask = nullptr) {
  if (heads <= 0 || q.dim(-1) % heads != 0)
    fail(ErrorCode::HeadDivisibility,
         "embedding dim " + std::to_string(q.dim(-1)) + " is not divisible by " + std::to_string(heads) + " heads");
  return linear(attention(linear(q, w.wq), linear(k, w.wk), linear(v, w.wv), heads, mask), w.wo);
}

/// Inverse-CDF draw from the feasible entries of one probability row,
/// renormalized over the feasible set. u is uniform in [0, 1).
template <typename T>
std::int32_t inverse_cdf(const T* prob, const std::uint8_t* mask, Index n, double u) {
  double total = 0.0;
  Index last = -1;
  for (Index j = 0; j < n; ++j)
    if (mask[j]) {
      total += static_cast<double>(prob[j]);
      last = j;
    }
  if (last < 0) fail(ErrorCode::AllMasked, "cannot sample from a fully masked row");
  const double target = u * total;
  double cum = 0.0;
  for (Index j = 0; j < n; ++j) {
    if (!mask[j]) continue;
    cum += static_cast<double>(prob[j]);
    if (target < cum) return static_cast<std::int32_t>(j);
  }
  return static_cast<std::int32_t>(last);
}

/// Feasible argmax; ties go to the lowest index.
template <typename T>
std::int32_t masked_argmax(const T* score, const std::uint8_t* mask, Index n) {
  Index best = -1;
  for (Index j = 0; j < n; ++j)
    if (mask[j] && (best < 0 || score[j] > score[best])) best = j;
  if (best < 0) fail(ErrorCode::AllMasked, "argmax over a fully masked row");
  return static_cast<std::int32_t>(best);
}

}  // namespace nco
