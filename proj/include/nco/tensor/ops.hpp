#pragma once

#include <vector>

#include "nco/tensor/autodiff.hpp"

// Differentiable free functions over Var<T>. Shapes are checked eagerly and
// reported as ShapeMismatch. All reductions run in a fixed sequential order.
namespace nco {

// ---- elementwise ----------------------------------------------------------
template <typename T> Var<T> add(const Var<T>& a, const Var<T>& b);
template <typename T> Var<T> sub(const Var<T>& a, const Var<T>& b);
template <typename T> Var<T> mul(const Var<T>& a, const Var<T>& b);
/// Elementwise minimum; ties route the gradient to `a`.
template <typename T> Var<T> minimum(const Var<T>& a, const Var<T>& b);
template <typename T> Var<T> neg(const Var<T>& x);
template <typename T> Var<T> scale(const Var<T>& x, T factor);
template <typename T> Var<T> shift(const Var<T>& x, T offset);
template <typename T> Var<T> exp(const Var<T>& x);
template <typename T> Var<T> log(const Var<T>& x);
template <typename T> Var<T> tanh(const Var<T>& x);
template <typename T> Var<T> relu(const Var<T>& x);
/// Gradient passes where lo <= x <= hi.
template <typename T> Var<T> clamp(const Var<T>& x, T lo, T hi);

template <typename T> Var<T> operator+(const Var<T>& a, const Var<T>& b) { return add(a, b); }
template <typename T> Var<T> operator-(const Var<T>& a, const Var<T>& b) { return sub(a, b); }
template <typename T> Var<T> operator*(const Var<T>& a, const Var<T>& b) { return mul(a, b); }
template <typename T> Var<T> operator-(const Var<T>& x) { return neg(x); }

// ---- reductions -----------------------------------------------------------
template <typename T> Var<T> sum(const Var<T>& x);
template <typename T> Var<T> mean(const Var<T>& x);
template <typename T> Var<T> sum_axis(const Var<T>& x, int axis);
template <typename T> Var<T> mean_axis(const Var<T>& x, int axis);

// ---- shape and indexing ---------------------------------------------------
template <typename T> Var<T> reshape(const Var<T>& x, Shape shape);
template <typename T> Var<T> concat(const std::vector<Var<T>>& parts, int axis);
template <typename T> Var<T> slice(const Var<T>& x, int axis, Index start, Index length);
/// Rows of the leading axis, in the given order (repeats allowed).
template <typename T> Var<T> take_rows(const Var<T>& x, const std::vector<Index>& rows);
/// x[B,N,D], index[B] -> x[b, index[b], :] as [B,D].
template <typename T> Var<T> gather_nodes(const Var<T>& x, const TensorI& index);
/// x[B,N], index[B] -> x[b, index[b]] as [B].
template <typename T> Var<T> pick(const Var<T>& x, const TensorI& index);

// ---- products -------------------------------------------------------------
template <typename T> Var<T> matmul(const Var<T>& a, const Var<T>& b);
/// x[..., in] * weight[in, out] (+ bias[out]).
template <typename T> Var<T> linear(const Var<T>& x, const Var<T>& weight, const Var<T>& bias = {});
/// query[B,D], keys[B,N,D] -> [B,N] of per-node dot products.
template <typename T> Var<T> batched_dot(const Var<T>& query, const Var<T>& keys);
/// Per-row choice of affine map: x[R,in] * weight[group[r]] + bias[group[r]].
template <typename T>
Var<T> grouped_linear(const Var<T>& x, const Var<T>& weight, const Var<T>& bias, const std::vector<Index>& group);

// ---- attention and normalization -------------------------------------------
/// Scaled dot-product attention over `heads` equal slices of the feature axis,
/// without projections. mask[B,Lq,Lk] (nonzero = may attend) is optional.
template <typename T>
Var<T> attention(const Var<T>& q, const Var<T>& k, const Var<T>& v, Index heads, const TensorB* mask = nullptr);

/// Normalizes each channel of x[..., D] over all leading positions. In
/// training mode batch statistics are used and the running statistics are
/// updated; otherwise the running statistics are used.
template <typename T>
Var<T> batch_norm(const Var<T>& x, const Var<T>& gamma, const Var<T>& beta, Tensor<T>* running_mean,
                  Tensor<T>* running_var, bool training, T momentum = T(0.1), T eps = T(1e-5));

/// x[B,N,D]: normalizes each (instance, channel) over the node axis.
template <typename T>
Var<T> instance_norm(const Var<T>& x, const Var<T>& gamma, const Var<T>& beta, T eps = T(1e-5));

// ---- masked distributions -----------------------------------------------------
template <typename T> Var<T> masked_softmax(const Var<T>& logits, const TensorB& mask, T temperature = T(1));
/// Infeasible entries hold -inf and receive no gradient.
template <typename T> Var<T> masked_log_softmax(const Var<T>& logits, const TensorB& mask, T temperature = T(1));
/// Entropy of each row's masked distribution, [B]. 0*log0 counts as 0.
template <typename T> Var<T> masked_entropy(const Var<T>& logits, const TensorB& mask, T temperature = T(1));

}  // namespace nco
