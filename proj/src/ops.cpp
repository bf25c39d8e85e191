#include "nco/tensor/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "nco/tensor/kernels.hpp"

namespace nco {
namespace {

template <typename T>
Tape<T>& tape_of(const Var<T>& a) {
  if (!a.valid() || a.tape() == nullptr) fail(ErrorCode::ShapeMismatch, "operation on an empty variable");
  return *a.tape();
}

void require_same(const Shape& a, const Shape& b, const char* op) {
  if (a != b) fail(ErrorCode::ShapeMismatch, std::string(op) + ": " + to_string(a) + " vs " + to_string(b));
}

void require_rank(const Shape& s, int rank, const char* op) {
  if (static_cast<int>(s.size()) != rank)
    fail(ErrorCode::ShapeMismatch, std::string(op) + ": expected rank " + std::to_string(rank) + ", got " + to_string(s));
}

int normalize_axis(int axis, int rank) {
  const int a = axis < 0 ? axis + rank : axis;
  if (a < 0 || a >= rank) fail(ErrorCode::ShapeMismatch, "axis " + std::to_string(axis) + " out of range");
  return a;
}

// View of a shape as [outer, len, inner] around one axis.
struct Split {
  Index outer = 1, len = 1, inner = 1;
};

Split split_at(const Shape& s, int axis) {
  Split out;
  for (int i = 0; i < static_cast<int>(s.size()); ++i) {
    if (i < axis) out.outer *= s[i];
    else if (i == axis) out.len = s[i];
    else out.inner *= s[i];
  }
  return out;
}

template <typename T, typename F, typename G>
Var<T> unary(const Var<T>& x, F forward, G derivative) {
  Tensor<T> y(x.shape());
  const Tensor<T>& xv = x.value();
  for (Index i = 0; i < y.size(); ++i) y[i] = forward(xv[i]);
  return tape_of(x).record(std::move(y), {x}, [derivative](detail::Node<T>& self) {
    Tensor<T>* dx = self.input_grad(0);
    if (!dx) return;
    const Tensor<T>& xin = self.input_value(0);
    for (Index i = 0; i < self.value.size(); ++i) (*dx)[i] += self.grad[i] * derivative(xin[i], self.value[i]);
  });
}

// Shared forward for the masked distribution family: per row max, shifted
// exponentials, and their sum. Rows without a feasible entry are rejected.
template <typename T>
struct RowSoftmax {
  Index rows = 0, cols = 0;
  Tensor<T> prob;     // [rows, cols], 0 where infeasible
  Tensor<T> logprob;  // [rows, cols], -inf where infeasible
};

template <typename T>
RowSoftmax<T> row_softmax(const Tensor<T>& logits, const TensorB& mask, T temperature) {
  if (!(temperature > T(0)))
    fail(ErrorCode::NonPositiveTemperature, "temperature must be positive, got " + std::to_string(temperature));
  if (logits.rank() < 1) fail(ErrorCode::ShapeMismatch, "masked distribution needs at least one axis");
  require_same(logits.shape(), mask.shape(), "masked softmax");
  RowSoftmax<T> out;
  out.cols = logits.dim(-1);
  out.rows = out.cols == 0 ? 0 : logits.size() / out.cols;
  out.prob = Tensor<T>(logits.shape());
  out.logprob = Tensor<T>(logits.shape(), -std::numeric_limits<T>::infinity());
  const T inv = T(1) / temperature;
  for (Index r = 0; r < out.rows; ++r) {
    const T* z = logits.data() + r * out.cols;
    const std::uint8_t* m = mask.data() + r * out.cols;
    T mx = -std::numeric_limits<T>::infinity();
    bool any = false;
    for (Index j = 0; j < out.cols; ++j)
      if (m[j]) {
        any = true;
        mx = std::max(mx, z[j] * inv);
      }
    if (!any) fail(ErrorCode::AllMasked, "row " + std::to_string(r) + " has no feasible entry");
    T total = T(0);
    T* p = out.prob.data() + r * out.cols;
    for (Index j = 0; j < out.cols; ++j)
      if (m[j]) {
        p[j] = std::exp(z[j] * inv - mx);
        total += p[j];
      }
    const T log_total = std::log(total);
    T* lp = out.logprob.data() + r * out.cols;
    for (Index j = 0; j < out.cols; ++j)
      if (m[j]) {
        p[j] /= total;
        lp[j] = z[j] * inv - mx - log_total;
      }
  }
  return out;
}

}  // namespace

// ---- elementwise ------------------------------------------------------------

template <typename T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
  require_same(a.shape(), b.shape(), "add");
  Tensor<T> y(a.shape());
  y.array() = a.value().array() + b.value().array();
  return tape_of(a).record(std::move(y), {a, b}, [](detail::Node<T>& self) {
    if (auto* da = self.input_grad(0)) da->array() += self.grad.array();
    if (auto* db = self.input_grad(1)) db->array() += self.grad.array();
  });
}

template <typename T>
Var<T> sub(const Var<T>& a, const Var<T>& b) {
  require_same(a.shape(), b.shape(), "sub");
  Tensor<T> y(a.shape());
  y.array() = a.value().array() - b.value().array();
  return tape_of(a).record(std::move(y), {a, b}, [](detail::Node<T>& self) {
    if (auto* da = self.input_grad(0)) da->array() += self.grad.array();
    if (auto* db = self.input_grad(1)) db->array() -= self.grad.array();
  });
}

template <typename T>
Var<T> mul(const Var<T>& a, const Var<T>& b) {
  require_same(a.shape(), b.shape(), "mul");
  Tensor<T> y(a.shape());
  y.array() = a.value().array() * b.value().array();
  return tape_of(a).record(std::move(y), {a, b}, [](detail::Node<T>& self) {
    if (auto* da = self.input_grad(0)) da->array() += self.grad.array() * self.input_value(1).array();
    if (auto* db = self.input_grad(1)) db->array() += self.grad.array() * self.input_value(0).array();
  });
}

template <typename T>
Var<T> minimum(const Var<T>& a, const Var<T>& b) {
  require_same(a.shape(), b.shape(), "minimum");
  Tensor<T> y(a.shape());
  for (Index i = 0; i < y.size(); ++i) y[i] = a.value()[i] <= b.value()[i] ? a.value()[i] : b.value()[i];
  return tape_of(a).record(std::move(y), {a, b}, [](detail::Node<T>& self) {
    const Tensor<T>& av = self.input_value(0);
    const Tensor<T>& bv = self.input_value(1);
    Tensor<T>* da = self.input_grad(0);
    Tensor<T>* db = self.input_grad(1);
    for (Index i = 0; i < self.value.size(); ++i) {
      if (av[i] <= bv[i]) {
        if (da) (*da)[i] += self.grad[i];
      } else if (db) {
        (*db)[i] += self.grad[i];
      }
    }
  });
}

template <typename T>
Var<T> neg(const Var<T>& x) {
  return unary(x, [](T v) { return -v; }, [](T, T) { return T(-1); });
}

template <typename T>
Var<T> scale(const Var<T>& x, T factor) {
  return unary(x, [factor](T v) { return v * factor; }, [factor](T, T) { return factor; });
}

template <typename T>
Var<T> shift(const Var<T>& x, T offset) {
  return unary(x, [offset](T v) { return v + offset; }, [](T, T) { return T(1); });
}

template <typename T>
Var<T> exp(const Var<T>& x) {
  return unary(x, [](T v) { return std::exp(v); }, [](T, T y) { return y; });
}

template <typename T>
Var<T> log(const Var<T>& x) {
  return unary(x, [](T v) { return std::log(v); }, [](T v, T) { return T(1) / v; });
}

template <typename T>
Var<T> tanh(const Var<T>& x) {
  return unary(x, [](T v) { return std::tanh(v); }, [](T, T y) { return T(1) - y * y; });
}

template <typename T>
Var<T> relu(const Var<T>& x) {
  return unary(x, [](T v) { return v > T(0) ? v : T(0); }, [](T v, T) { return v > T(0) ? T(1) : T(0); });
}

template <typename T>
Var<T> clamp(const Var<T>& x, T lo, T hi) {
  return unary(
      x, [lo, hi](T v) { return v < lo ? lo : (v > hi ? hi : v); },
      [lo, hi](T v, T) { return (v >= lo && v <= hi) ? T(1) : T(0); });
}

// ---- reductions -----------------------------------------------------------------

template <typename T>
Var<T> sum(const Var<T>& x) {
  T acc = T(0);
  for (Index i = 0; i < x.size(); ++i) acc += x.value()[i];
  return tape_of(x).record(Tensor<T>::scalar(acc), {x}, [](detail::Node<T>& self) {
    if (auto* dx = self.input_grad(0)) dx->array() += self.grad[0];
  });
}

template <typename T>
Var<T> mean(const Var<T>& x) {
  if (x.size() == 0) fail(ErrorCode::ShapeMismatch, "mean of an empty tensor");
  return scale(sum(x), T(1) / static_cast<T>(x.size()));
}

template <typename T>
Var<T> sum_axis(const Var<T>& x, int axis) {
  const int a = normalize_axis(axis, static_cast<int>(x.shape().size()));
  const Split s = split_at(x.shape(), a);
  Shape out_shape = x.shape();
  out_shape.erase(out_shape.begin() + a);
  Tensor<T> y(out_shape);
  const T* xv = x.value().data();
  for (Index o = 0; o < s.outer; ++o)
    for (Index l = 0; l < s.len; ++l)
      for (Index i = 0; i < s.inner; ++i) y[o * s.inner + i] += xv[(o * s.len + l) * s.inner + i];
  return tape_of(x).record(std::move(y), {x}, [s](detail::Node<T>& self) {
    Tensor<T>* dx = self.input_grad(0);
    if (!dx) return;
    for (Index o = 0; o < s.outer; ++o)
      for (Index l = 0; l < s.len; ++l)
        for (Index i = 0; i < s.inner; ++i) (*dx)[(o * s.len + l) * s.inner + i] += self.grad[o * s.inner + i];
  });
}

template <typename T>
Var<T> mean_axis(const Var<T>& x, int axis) {
  const Index len = x.dim(axis);
  if (len == 0) fail(ErrorCode::ShapeMismatch, "mean over an empty axis");
  return scale(sum_axis(x, axis), T(1) / static_cast<T>(len));
}

// ---- shape and indexing -----------------------------------------------------------

template <typename T>
Var<T> reshape(const Var<T>& x, Shape shape) {
  Tensor<T> y = x.value().reshaped(std::move(shape));
  return tape_of(x).record(std::move(y), {x}, [](detail::Node<T>& self) {
    if (auto* dx = self.input_grad(0)) dx->array() += self.grad.array();
  });
}

template <typename T>
Var<T> concat(const std::vector<Var<T>>& parts, int axis) {
  if (parts.empty()) fail(ErrorCode::ShapeMismatch, "concat of nothing");
  const int rank = static_cast<int>(parts[0].shape().size());
  const int a = normalize_axis(axis, rank);
  Shape out_shape = parts[0].shape();
  out_shape[a] = 0;
  for (const auto& p : parts) {
    Shape probe = p.shape();
    if (static_cast<int>(probe.size()) != rank) fail(ErrorCode::ShapeMismatch, "concat: rank mismatch");
    out_shape[a] += probe[a];
    for (int i = 0; i < rank; ++i)
      if (i != a && probe[i] != parts[0].shape()[i])
        fail(ErrorCode::ShapeMismatch, "concat: " + to_string(p.shape()) + " vs " + to_string(parts[0].shape()));
  }
  const Split s = split_at(out_shape, a);
  Tensor<T> y(out_shape);
  std::vector<Index> offsets;
  Index offset = 0;
  for (const auto& p : parts) {
    const Index len = p.shape()[a];
    offsets.push_back(offset);
    for (Index o = 0; o < s.outer; ++o)
      std::copy_n(p.value().data() + o * len * s.inner, len * s.inner, y.data() + (o * s.len + offset) * s.inner);
    offset += len;
  }
  return tape_of(parts[0]).record(std::move(y), parts, [s, offsets](detail::Node<T>& self) {
    for (std::size_t k = 0; k < self.inputs.size(); ++k) {
      Tensor<T>* dp = self.input_grad(k);
      if (!dp) continue;
      const Index len = dp->size() / (s.outer * s.inner);
      for (Index o = 0; o < s.outer; ++o) {
        const T* g = self.grad.data() + (o * s.len + offsets[k]) * s.inner;
        T* d = dp->data() + o * len * s.inner;
        for (Index i = 0; i < len * s.inner; ++i) d[i] += g[i];
      }
    }
  });
}

template <typename T>
Var<T> slice(const Var<T>& x, int axis, Index start, Index length) {
  const int a = normalize_axis(axis, static_cast<int>(x.shape().size()));
  const Split s = split_at(x.shape(), a);
  if (start < 0 || length < 0 || start + length > s.len)
    fail(ErrorCode::ShapeMismatch, "slice [" + std::to_string(start) + ", +" + std::to_string(length) +
                                       ") out of range for " + to_string(x.shape()));
  Shape out_shape = x.shape();
  out_shape[a] = length;
  Tensor<T> y(out_shape);
  for (Index o = 0; o < s.outer; ++o)
    std::copy_n(x.value().data() + (o * s.len + start) * s.inner, length * s.inner, y.data() + o * length * s.inner);
  return tape_of(x).record(std::move(y), {x}, [s, start, length](detail::Node<T>& self) {
    Tensor<T>* dx = self.input_grad(0);
    if (!dx) return;
    for (Index o = 0; o < s.outer; ++o) {
      const T* g = self.grad.data() + o * length * s.inner;
      T* d = dx->data() + (o * s.len + start) * s.inner;
      for (Index i = 0; i < length * s.inner; ++i) d[i] += g[i];
    }
  });
}

template <typename T>
Var<T> take_rows(const Var<T>& x, const std::vector<Index>& rows) {
  if (x.shape().empty()) fail(ErrorCode::ShapeMismatch, "take_rows on a scalar");
  const Index n = x.shape()[0];
  const Index inner = n == 0 ? 0 : x.size() / n;
  Shape out_shape = x.shape();
  out_shape[0] = static_cast<Index>(rows.size());
  Tensor<T> y(out_shape);
  for (std::size_t r = 0; r < rows.size(); ++r) {
    if (rows[r] < 0 || rows[r] >= n) fail(ErrorCode::ShapeMismatch, "take_rows index out of range");
    std::copy_n(x.value().data() + rows[r] * inner, inner, y.data() + static_cast<Index>(r) * inner);
  }
  return tape_of(x).record(std::move(y), {x}, [rows, inner](detail::Node<T>& self) {
    Tensor<T>* dx = self.input_grad(0);
    if (!dx) return;
    for (std::size_t r = 0; r < rows.size(); ++r) {
      const T* g = self.grad.data() + static_cast<Index>(r) * inner;
      T* d = dx->data() + rows[r] * inner;
      for (Index i = 0; i < inner; ++i) d[i] += g[i];
    }
  });
}

template <typename T>
Var<T> gather_nodes(const Var<T>& x, const TensorI& index) {
  require_rank(x.shape(), 3, "gather_nodes");
  const Index b = x.dim(0), n = x.dim(1), d = x.dim(2);
  if (index.size() != b) fail(ErrorCode::ShapeMismatch, "gather_nodes: index has " + std::to_string(index.size()) + " rows for batch " + std::to_string(b));
  Tensor<T> y({b, d});
  for (Index r = 0; r < b; ++r) {
    const Index j = index[r];
    if (j < 0 || j >= n) fail(ErrorCode::ShapeMismatch, "gather_nodes index out of range");
    std::copy_n(x.value().data() + (r * n + j) * d, d, y.data() + r * d);
  }
  return tape_of(x).record(std::move(y), {x}, [index, n, d](detail::Node<T>& self) {
    Tensor<T>* dx = self.input_grad(0);
    if (!dx) return;
    for (Index r = 0; r < index.size(); ++r) {
      T* dst = dx->data() + (r * n + index[r]) * d;
      const T* g = self.grad.data() + r * d;
      for (Index c = 0; c < d; ++c) dst[c] += g[c];
    }
  });
}

template <typename T>
Var<T> pick(const Var<T>& x, const TensorI& index) {
  require_rank(x.shape(), 2, "pick");
  const Index b = x.dim(0), n = x.dim(1);
  if (index.size() != b) fail(ErrorCode::ShapeMismatch, "pick: index size does not match batch");
  Tensor<T> y({b});
  for (Index r = 0; r < b; ++r) {
    if (index[r] < 0 || index[r] >= n) fail(ErrorCode::ShapeMismatch, "pick index out of range");
    y[r] = x.value()[r * n + index[r]];
  }
  return tape_of(x).record(std::move(y), {x}, [index, n](detail::Node<T>& self) {
    Tensor<T>* dx = self.input_grad(0);
    if (!dx) return;
    for (Index r = 0; r < index.size(); ++r) (*dx)[r * n + index[r]] += self.grad[r];
  });
}

// ---- products -----------------------------------------------------------------

template <typename T>
Var<T> matmul(const Var<T>& a, const Var<T>& b) {
  require_rank(a.shape(), 2, "matmul");
  require_rank(b.shape(), 2, "matmul");
  const Index m = a.dim(0), k = a.dim(1), n = b.dim(1);
  if (b.dim(0) != k) fail(ErrorCode::ShapeMismatch, "matmul: " + to_string(a.shape()) + " x " + to_string(b.shape()));
  Tensor<T> y({m, n});
  kernels::gemm(a.value().data(), b.value().data(), y.data(), m, k, n);
  return tape_of(a).record(std::move(y), {a, b}, [m, k, n](detail::Node<T>& self) {
    if (auto* da = self.input_grad(0)) kernels::gemm_bt(self.grad.data(), self.input_value(1).data(), da->data(), m, n, k, true);
    if (auto* db = self.input_grad(1)) kernels::gemm_at(self.input_value(0).data(), self.grad.data(), db->data(), m, k, n, true);
  });
}

template <typename T>
Var<T> linear(const Var<T>& x, const Var<T>& weight, const Var<T>& bias) {
  require_rank(weight.shape(), 2, "linear weight");
  if (x.shape().empty()) fail(ErrorCode::ShapeMismatch, "linear on a scalar");
  const Index in = weight.dim(0), out = weight.dim(1);
  if (x.dim(-1) != in)
    fail(ErrorCode::ShapeMismatch, "linear: input " + to_string(x.shape()) + " vs weight " + to_string(weight.shape()));
  const bool has_bias = bias.valid();
  if (has_bias && bias.shape() != Shape{out})
    fail(ErrorCode::ShapeMismatch, "linear: bias " + to_string(bias.shape()) + " for " + std::to_string(out) + " outputs");
  const Index m = in == 0 ? 0 : x.size() / in;
  Shape out_shape = x.shape();
  out_shape.back() = out;
  Tensor<T> y(out_shape);
  kernels::gemm(x.value().data(), weight.value().data(), y.data(), m, in, out);
  if (has_bias) y.matrix().rowwise() += bias.value().matrix().row(0);
  std::vector<Var<T>> inputs{x, weight};
  if (has_bias) inputs.push_back(bias);
  return tape_of(x).record(std::move(y), inputs, [m, in, out, has_bias](detail::Node<T>& self) {
    if (auto* dx = self.input_grad(0)) kernels::gemm_bt(self.grad.data(), self.input_value(1).data(), dx->data(), m, out, in, true);
    if (auto* dw = self.input_grad(1)) kernels::gemm_at(self.input_value(0).data(), self.grad.data(), dw->data(), m, in, out, true);
    if (has_bias)
      if (auto* db = self.input_grad(2))
        for (Index r = 0; r < m; ++r)
          for (Index j = 0; j < out; ++j) (*db)[j] += self.grad[r * out + j];
  });
}

template <typename T>
Var<T> batched_dot(const Var<T>& query, const Var<T>& keys) {
  require_rank(query.shape(), 2, "batched_dot query");
  require_rank(keys.shape(), 3, "batched_dot keys");
  const Index b = keys.dim(0), n = keys.dim(1), d = keys.dim(2);
  if (query.dim(0) != b || query.dim(1) != d)
    fail(ErrorCode::ShapeMismatch, "batched_dot: " + to_string(query.shape()) + " vs " + to_string(keys.shape()));
  Tensor<T> y({b, n});
  for (Index r = 0; r < b; ++r)
    for (Index j = 0; j < n; ++j)
      y[r * n + j] = kernels::dot(query.value().data() + r * d, keys.value().data() + (r * n + j) * d, d);
  return tape_of(query).record(std::move(y), {query, keys}, [b, n, d](detail::Node<T>& self) {
    const T* q = self.input_value(0).data();
    const T* k = self.input_value(1).data();
    Tensor<T>* dq = self.input_grad(0);
    Tensor<T>* dk = self.input_grad(1);
    for (Index r = 0; r < b; ++r)
      for (Index j = 0; j < n; ++j) {
        const T g = self.grad[r * n + j];
        if (dq)
          for (Index c = 0; c < d; ++c) (*dq)[r * d + c] += g * k[(r * n + j) * d + c];
        if (dk)
          for (Index c = 0; c < d; ++c) (*dk)[(r * n + j) * d + c] += g * q[r * d + c];
      }
  });
}

template <typename T>
Var<T> grouped_linear(const Var<T>& x, const Var<T>& weight, const Var<T>& bias, const std::vector<Index>& group) {
  require_rank(x.shape(), 2, "grouped_linear input");
  require_rank(weight.shape(), 3, "grouped_linear weight");
  require_rank(bias.shape(), 2, "grouped_linear bias");
  const Index rows = x.dim(0), in = x.dim(1), groups = weight.dim(0), out = weight.dim(2);
  if (weight.dim(1) != in || bias.dim(0) != groups || bias.dim(1) != out || static_cast<Index>(group.size()) != rows)
    fail(ErrorCode::ShapeMismatch, "grouped_linear: " + to_string(x.shape()) + " " + to_string(weight.shape()) + " " +
                                       to_string(bias.shape()));
  for (Index g : group)
    if (g < 0 || g >= groups) fail(ErrorCode::ShapeMismatch, "grouped_linear: group index out of range");
  Tensor<T> y({rows, out});
  for (Index r = 0; r < rows; ++r) {
    const Index g = group[r];
    kernels::gemm(x.value().data() + r * in, weight.value().data() + g * in * out, y.data() + r * out, 1, in, out);
    for (Index j = 0; j < out; ++j) y[r * out + j] += bias.value()[g * out + j];
  }
  return tape_of(x).record(std::move(y), {x, weight, bias}, [group, in, out](detail::Node<T>& self) {
    const T* xv = self.input_value(0).data();
    const T* wv = self.input_value(1).data();
    Tensor<T>* dx = self.input_grad(0);
    Tensor<T>* dw = self.input_grad(1);
    Tensor<T>* db = self.input_grad(2);
    for (std::size_t ri = 0; ri < group.size(); ++ri) {
      const Index r = static_cast<Index>(ri), g = group[ri];
      const T* gy = self.grad.data() + r * out;
      if (dx) kernels::gemm_bt(gy, wv + g * in * out, dx->data() + r * in, 1, out, in, true);
      if (dw) kernels::gemm_at(xv + r * in, gy, dw->data() + g * in * out, 1, in, out, true);
      if (db)
        for (Index j = 0; j < out; ++j) (*db)[g * out + j] += gy[j];
    }
  });
}

// ---- attention ------------------------------------------------------------------

template <typename T>
Var<T> attention(const Var<T>& q, const Var<T>& k, const Var<T>& v, Index heads, const TensorB* mask) {
  require_rank(q.shape(), 3, "attention query");
  require_rank(k.shape(), 3, "attention key");
  require_same(k.shape(), v.shape(), "attention key/value");
  const Index b = q.dim(0), lq = q.dim(1), dm = q.dim(2), lk = k.dim(1);
  if (k.dim(0) != b || k.dim(2) != dm)
    fail(ErrorCode::ShapeMismatch, "attention: " + to_string(q.shape()) + " vs " + to_string(k.shape()));
  if (heads <= 0 || dm % heads != 0)
    fail(ErrorCode::HeadDivisibility, "embedding dim " + std::to_string(dm) + " is not divisible by " + std::to_string(heads) + " heads");
  if (mask && mask->shape() != Shape{b, lq, lk})
    fail(ErrorCode::ShapeMismatch, "attention mask " + to_string(mask->shape()) + " for scores [" + std::to_string(b) + ", " +
                                       std::to_string(lq) + ", " + std::to_string(lk) + "]");
  const Index dh = dm / heads;
  const T sc = T(1) / std::sqrt(static_cast<T>(dh));
  auto probs = std::make_shared<Tensor<T>>(Shape{b, heads, lq, lk});
  Tensor<T> y(q.shape());
  const T* qv = q.value().data();
  const T* kv = k.value().data();
  const T* vv = v.value().data();
  std::vector<T> s(static_cast<std::size_t>(lk));
  for (Index r = 0; r < b; ++r)
    for (Index h = 0; h < heads; ++h)
      for (Index i = 0; i < lq; ++i) {
        const std::uint8_t* mrow = mask ? mask->data() + (r * lq + i) * lk : nullptr;
        const T* qi = qv + (r * lq + i) * dm + h * dh;
        T mx = -std::numeric_limits<T>::infinity();
        bool any = false;
        for (Index j = 0; j < lk; ++j) {
          if (mrow && !mrow[j]) continue;
          s[j] = sc * kernels::dot(qi, kv + (r * lk + j) * dm + h * dh, dh);
          mx = std::max(mx, s[j]);
          any = true;
        }
        if (!any) fail(ErrorCode::AllMasked, "attention row has every key masked");
        T* p = probs->data() + ((r * heads + h) * lq + i) * lk;
        T total = T(0);
        for (Index j = 0; j < lk; ++j) {
          if (mrow && !mrow[j]) continue;
          p[j] = std::exp(s[j] - mx);
          total += p[j];
        }
        T* out = y.data() + (r * lq + i) * dm + h * dh;
        for (Index j = 0; j < lk; ++j) {
          if (mrow && !mrow[j]) continue;
          p[j] /= total;
          const T* vj = vv + (r * lk + j) * dm + h * dh;
          for (Index c = 0; c < dh; ++c) out[c] = std::fma(p[j], vj[c], out[c]);
        }
      }
  return tape_of(q).record(std::move(y), {q, k, v}, [probs, b, heads, lq, lk, dm, dh, sc](detail::Node<T>& self) {
    const T* qv = self.input_value(0).data();
    const T* kv = self.input_value(1).data();
    const T* vv = self.input_value(2).data();
    Tensor<T>* dq = self.input_grad(0);
    Tensor<T>* dk = self.input_grad(1);
    Tensor<T>* dv = self.input_grad(2);
    std::vector<T> dp(static_cast<std::size_t>(lk));
    for (Index r = 0; r < b; ++r)
      for (Index h = 0; h < heads; ++h)
        for (Index i = 0; i < lq; ++i) {
          const T* p = probs->data() + ((r * heads + h) * lq + i) * lk;
          const T* go = self.grad.data() + (r * lq + i) * dm + h * dh;
          T weighted = T(0);
          for (Index j = 0; j < lk; ++j) {
            if (p[j] == T(0)) {
              dp[j] = T(0);
              continue;
            }
            const T* vj = vv + (r * lk + j) * dm + h * dh;
            dp[j] = kernels::dot(go, vj, dh);
            weighted += p[j] * dp[j];
            if (dv) {
              T* dvj = dv->data() + (r * lk + j) * dm + h * dh;
              for (Index c = 0; c < dh; ++c) dvj[c] += p[j] * go[c];
            }
          }
          const T* qi = qv + (r * lq + i) * dm + h * dh;
          for (Index j = 0; j < lk; ++j) {
            if (p[j] == T(0)) continue;
            const T ds = sc * p[j] * (dp[j] - weighted);
            const T* kj = kv + (r * lk + j) * dm + h * dh;
            if (dq) {
              T* dqi = dq->data() + (r * lq + i) * dm + h * dh;
              for (Index c = 0; c < dh; ++c) dqi[c] += ds * kj[c];
            }
            if (dk) {
              T* dkj = dk->data() + (r * lk + j) * dm + h * dh;
              for (Index c = 0; c < dh; ++c) dkj[c] += ds * qi[c];
            }
          }
        }
  });
}

// ---- normalization ----------------------------------------------------------------

namespace {

// Shared backward for normalizations with statistics over `count` members of
// each channel group: dx = gamma / sigma * (g - mean(g) - xhat * mean(g * xhat)).
template <typename T>
struct NormCache {
  Tensor<T> xhat;
  std::vector<T> inv_std;  // per (group, channel)
};

}  // namespace

template <typename T>
Var<T> batch_norm(const Var<T>& x, const Var<T>& gamma, const Var<T>& beta, Tensor<T>* running_mean,
                  Tensor<T>* running_var, bool training, T momentum, T eps) {
  if (x.shape().empty()) fail(ErrorCode::ShapeMismatch, "batch_norm on a scalar");
  const Index d = x.dim(-1);
  const Index m = d == 0 ? 0 : x.size() / d;
  if (gamma.shape() != Shape{d} || beta.shape() != Shape{d})
    fail(ErrorCode::ShapeMismatch, "batch_norm affine parameters do not match " + std::to_string(d) + " channels");
  const T* xv = x.value().data();
  std::vector<T> mu(static_cast<std::size_t>(d), T(0)), var(static_cast<std::size_t>(d), T(0));
  if (training) {
    if (m == 0) fail(ErrorCode::ShapeMismatch, "batch_norm over an empty batch");
    for (Index r = 0; r < m; ++r)
      for (Index c = 0; c < d; ++c) mu[c] += xv[r * d + c];
    for (Index c = 0; c < d; ++c) mu[c] /= static_cast<T>(m);
    for (Index r = 0; r < m; ++r)
      for (Index c = 0; c < d; ++c) {
        const T e = xv[r * d + c] - mu[c];
        var[c] += e * e;
      }
    for (Index c = 0; c < d; ++c) {
      const T biased = var[c] / static_cast<T>(m);
      if (running_mean && running_var) {
        const T unbiased = m > 1 ? var[c] / static_cast<T>(m - 1) : biased;
        (*running_mean)[c] = (T(1) - momentum) * (*running_mean)[c] + momentum * mu[c];
        (*running_var)[c] = (T(1) - momentum) * (*running_var)[c] + momentum * unbiased;
      }
      var[c] = biased;
    }
  } else {
    if (!running_mean || !running_var) fail(ErrorCode::ShapeMismatch, "batch_norm eval mode needs running statistics");
    for (Index c = 0; c < d; ++c) {
      mu[c] = (*running_mean)[c];
      var[c] = (*running_var)[c];
    }
  }
  auto cache = std::make_shared<NormCache<T>>();
  cache->xhat = Tensor<T>(x.shape());
  cache->inv_std.resize(static_cast<std::size_t>(d));
  for (Index c = 0; c < d; ++c) cache->inv_std[c] = T(1) / std::sqrt(var[c] + eps);
  Tensor<T> y(x.shape());
  const T* gv = gamma.value().data();
  const T* bv = beta.value().data();
  for (Index r = 0; r < m; ++r)
    for (Index c = 0; c < d; ++c) {
      const T h = (xv[r * d + c] - mu[c]) * cache->inv_std[c];
      cache->xhat[r * d + c] = h;
      y[r * d + c] = gv[c] * h + bv[c];
    }
  return tape_of(x).record(std::move(y), {x, gamma, beta}, [cache, m, d, training](detail::Node<T>& self) {
    const T* g = self.grad.data();
    const T* xh = cache->xhat.data();
    std::vector<T> sg(static_cast<std::size_t>(d), T(0)), sgx(static_cast<std::size_t>(d), T(0));
    for (Index r = 0; r < m; ++r)
      for (Index c = 0; c < d; ++c) {
        sg[c] += g[r * d + c];
        sgx[c] += g[r * d + c] * xh[r * d + c];
      }
    if (auto* dgamma = self.input_grad(1))
      for (Index c = 0; c < d; ++c) (*dgamma)[c] += sgx[c];
    if (auto* dbeta = self.input_grad(2))
      for (Index c = 0; c < d; ++c) (*dbeta)[c] += sg[c];
    Tensor<T>* dx = self.input_grad(0);
    if (!dx) return;
    const T* gam = self.input_value(1).data();
    const T inv_m = T(1) / static_cast<T>(m);
    for (Index r = 0; r < m; ++r)
      for (Index c = 0; c < d; ++c) {
        const T k = gam[c] * cache->inv_std[c];
        const T gi = g[r * d + c];
        (*dx)[r * d + c] += training ? k * (gi - sg[c] * inv_m - xh[r * d + c] * sgx[c] * inv_m) : k * gi;
      }
  });
}

template <typename T>
Var<T> instance_norm(const Var<T>& x, const Var<T>& gamma, const Var<T>& beta, T eps) {
  require_rank(x.shape(), 3, "instance_norm");
  const Index b = x.dim(0), n = x.dim(1), d = x.dim(2);
  if (gamma.shape() != Shape{d} || beta.shape() != Shape{d})
    fail(ErrorCode::ShapeMismatch, "instance_norm affine parameters do not match " + std::to_string(d) + " channels");
  if (n == 0) fail(ErrorCode::ShapeMismatch, "instance_norm over zero nodes");
  const T* xv = x.value().data();
  auto cache = std::make_shared<NormCache<T>>();
  cache->xhat = Tensor<T>(x.shape());
  cache->inv_std.assign(static_cast<std::size_t>(b * d), T(0));
  Tensor<T> y(x.shape());
  std::vector<T> mu(static_cast<std::size_t>(d)), var(static_cast<std::size_t>(d));
  for (Index r = 0; r < b; ++r) {
    std::fill(mu.begin(), mu.end(), T(0));
    std::fill(var.begin(), var.end(), T(0));
    const T* xr = xv + r * n * d;
    for (Index i = 0; i < n; ++i)
      for (Index c = 0; c < d; ++c) mu[c] += xr[i * d + c];
    for (Index c = 0; c < d; ++c) mu[c] /= static_cast<T>(n);
    for (Index i = 0; i < n; ++i)
      for (Index c = 0; c < d; ++c) {
        const T e = xr[i * d + c] - mu[c];
        var[c] += e * e;
      }
    for (Index c = 0; c < d; ++c) cache->inv_std[r * d + c] = T(1) / std::sqrt(var[c] / static_cast<T>(n) + eps);
    for (Index i = 0; i < n; ++i)
      for (Index c = 0; c < d; ++c) {
        const Index at = (r * n + i) * d + c;
        const T h = (xr[i * d + c] - mu[c]) * cache->inv_std[r * d + c];
        cache->xhat[at] = h;
        y[at] = gamma.value()[c] * h + beta.value()[c];
      }
  }
  return tape_of(x).record(std::move(y), {x, gamma, beta}, [cache, b, n, d](detail::Node<T>& self) {
    const T* g = self.grad.data();
    const T* xh = cache->xhat.data();
    Tensor<T>* dx = self.input_grad(0);
    Tensor<T>* dgamma = self.input_grad(1);
    Tensor<T>* dbeta = self.input_grad(2);
    const T* gam = self.input_value(1).data();
    std::vector<T> sg(static_cast<std::size_t>(d)), sgx(static_cast<std::size_t>(d));
    const T inv_n = T(1) / static_cast<T>(n);
    for (Index r = 0; r < b; ++r) {
      std::fill(sg.begin(), sg.end(), T(0));
      std::fill(sgx.begin(), sgx.end(), T(0));
      for (Index i = 0; i < n; ++i)
        for (Index c = 0; c < d; ++c) {
          const Index at = (r * n + i) * d + c;
          sg[c] += g[at];
          sgx[c] += g[at] * xh[at];
        }
      for (Index c = 0; c < d; ++c) {
        if (dgamma) (*dgamma)[c] += sgx[c];
        if (dbeta) (*dbeta)[c] += sg[c];
      }
      if (!dx) continue;
      for (Index i = 0; i < n; ++i)
        for (Index c = 0; c < d; ++c) {
          const Index at = (r * n + i) * d + c;
          const T k = gam[c] * cache->inv_std[r * d + c];
          (*dx)[at] += k * (g[at] - sg[c] * inv_n - xh[at] * sgx[c] * inv_n);
        }
    }
  });
}

// ---- masked distributions ------------------------------------------------------------

template <typename T>
Var<T> masked_softmax(const Var<T>& logits, const TensorB& mask, T temperature) {
  RowSoftmax<T> rs = row_softmax(logits.value(), mask, temperature);
  const Index rows = rs.rows, cols = rs.cols;
  return tape_of(logits).record(std::move(rs.prob), {logits}, [rows, cols, temperature](detail::Node<T>& self) {
    Tensor<T>* dz = self.input_grad(0);
    if (!dz) return;
    for (Index r = 0; r < rows; ++r) {
      const T* p = self.value.data() + r * cols;
      const T* g = self.grad.data() + r * cols;
      T inner = T(0);
      for (Index j = 0; j < cols; ++j) inner += p[j] * g[j];
      for (Index j = 0; j < cols; ++j) (*dz)[r * cols + j] += p[j] * (g[j] - inner) / temperature;
    }
  });
}

template <typename T>
Var<T> masked_log_softmax(const Var<T>& logits, const TensorB& mask, T temperature) {
  RowSoftmax<T> rs = row_softmax(logits.value(), mask, temperature);
  const Index rows = rs.rows, cols = rs.cols;
  auto prob = std::make_shared<Tensor<T>>(std::move(rs.prob));
  return tape_of(logits).record(std::move(rs.logprob), {logits}, [prob, rows, cols, temperature](detail::Node<T>& self) {
    Tensor<T>* dz = self.input_grad(0);
    if (!dz) return;
    for (Index r = 0; r < rows; ++r) {
      const T* p = prob->data() + r * cols;
      const T* lp = self.value.data() + r * cols;
      const T* g = self.grad.data() + r * cols;
      T total = T(0);
      for (Index j = 0; j < cols; ++j)
        if (std::isfinite(lp[j])) total += g[j];
      for (Index j = 0; j < cols; ++j)
        if (std::isfinite(lp[j])) (*dz)[r * cols + j] += (g[j] - p[j] * total) / temperature;
    }
  });
}

template <typename T>
Var<T> masked_entropy(const Var<T>& logits, const TensorB& mask, T temperature) {
  RowSoftmax<T> rs = row_softmax(logits.value(), mask, temperature);
  const Index rows = rs.rows, cols = rs.cols;
  Shape out_shape = logits.shape();
  out_shape.pop_back();
  Tensor<T> h(out_shape);
  for (Index r = 0; r < rows; ++r) {
    T acc = T(0);
    for (Index j = 0; j < cols; ++j) {
      const T p = rs.prob[r * cols + j];
      if (p > T(0)) acc -= p * rs.logprob[r * cols + j];
    }
    h[r] = acc;
  }
  auto cache = std::make_shared<RowSoftmax<T>>(std::move(rs));
  return tape_of(logits).record(std::move(h), {logits}, [cache, rows, cols, temperature](detail::Node<T>& self) {
    Tensor<T>* dz = self.input_grad(0);
    if (!dz) return;
    for (Index r = 0; r < rows; ++r) {
      const T g = self.grad[r];
      const T ent = self.value[r];
      for (Index j = 0; j < cols; ++j) {
        const T p = cache->prob[r * cols + j];
        if (p > T(0)) (*dz)[r * cols + j] += -g * p * (cache->logprob[r * cols + j] + ent) / temperature;
      }
    }
  });
}

#define NCO_INSTANTIATE_OPS(T)                                                                                   \
  template Var<T> add(const Var<T>&, const Var<T>&);                                                           \
  template Var<T> sub(const Var<T>&, const Var<T>&);                                                           \
  template Var<T> mul(const Var<T>&, const Var<T>&);                                                           \
  template Var<T> minimum(const Var<T>&, const Var<T>&);                                                       \
  template Var<T> neg(const Var<T>&);                                                                          \
  template Var<T> scale(const Var<T>&, T);                                                                     \
  template Var<T> shift(const Var<T>&, T);                                                                     \
  template Var<T> exp(const Var<T>&);                                                                          \
  template Var<T> log(const Var<T>&);                                                                          \
  template Var<T> tanh(const Var<T>&);                                                                         \
  template Var<T> relu(const Var<T>&);                                                                         \
  template Var<T> clamp(const Var<T>&, T, T);                                                                  \
  template Var<T> sum(const Var<T>&);                                                                          \
  template Var<T> mean(const Var<T>&);                                                                         \
  template Var<T> sum_axis(const Var<T>&, int);                                                                \
  template Var<T> mean_axis(const Var<T>&, int);                                                               \
  template Var<T> reshape(const Var<T>&, Shape);                                                               \
  template Var<T> concat(const std::vector<Var<T>>&, int);                                                     \
  template Var<T> slice(const Var<T>&, int, Index, Index);                                                     \
  template Var<T> take_rows(const Var<T>&, const std::vector<Index>&);                                         \
  template Var<T> gather_nodes(const Var<T>&, const TensorI&);                                                 \
  template Var<T> pick(const Var<T>&, const TensorI&);                                                         \
  template Var<T> matmul(const Var<T>&, const Var<T>&);                                                        \
  template Var<T> linear(const Var<T>&, const Var<T>&, const Var<T>&);                                         \
  template Var<T> batched_dot(const Var<T>&, const Var<T>&);                                                   \
  template Var<T> grouped_linear(const Var<T>&, const Var<T>&, const Var<T>&, const std::vector<Index>&);      \
  template Var<T> attention(const Var<T>&, const Var<T>&, const Var<T>&, Index, const TensorB*);               \
  template Var<T> batch_norm(const Var<T>&, const Var<T>&, const Var<T>&, Tensor<T>*, Tensor<T>*, bool, T, T); \
  template Var<T> instance_norm(const Var<T>&, const Var<T>&, const Var<T>&, T);                               \
  template Var<T> masked_softmax(const Var<T>&, const TensorB&, T);                                            \
  template Var<T> masked_log_softmax(const Var<T>&, const TensorB&, T);                                        \
  template Var<T> masked_entropy(const Var<T>&, const TensorB&, T);

NCO_INSTANTIATE_OPS(float)
NCO_INSTANTIATE_OPS(double)

}  // namespace nco
