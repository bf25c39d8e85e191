#pragma once

#include <Eigen/Core>

#include <algorithm>
#include <cstdint>
#include <initializer_list>
#include <string>
#include <vector>

#include "nco/core/error.hpp"

namespace nco {

using Index = std::int64_t;
using Shape = std::vector<Index>;

inline Index numel(const Shape& shape) {
  Index n = 1;
  for (Index d : shape) n *= d;
  return n;
}

std::string to_string(const Shape& shape);

/// Dense row-major array. The buffer is an Eigen array so callers can use
/// Eigen expressions on the flat data or on matrix views of it.
template <typename T>
class Tensor {
 public:
  using Scalar = T;
  using Buffer = Eigen::Array<T, Eigen::Dynamic, 1>;
  using RowMatrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  using MatrixMap = Eigen::Map<RowMatrix>;
  using ConstMatrixMap = Eigen::Map<const RowMatrix>;

  Tensor() = default;
  explicit Tensor(Shape shape) : shape_(std::move(shape)), data_(Buffer::Zero(numel(shape_))) {}
  Tensor(Shape shape, T fill) : shape_(std::move(shape)), data_(Buffer::Constant(numel(shape_), fill)) {}
  Tensor(Shape shape, std::initializer_list<T> values) : shape_(std::move(shape)), data_(numel(shape_)) {
    if (static_cast<Index>(values.size()) != data_.size())
      fail(ErrorCode::ShapeMismatch, "initializer has " + std::to_string(values.size()) +
                                         " values for shape " + to_string(shape_));
    Index i = 0;
    for (T v : values) data_[i++] = v;
  }
  Tensor(Shape shape, const std::vector<T>& values) : shape_(std::move(shape)), data_(numel(shape_)) {
    if (static_cast<Index>(values.size()) != data_.size())
      fail(ErrorCode::ShapeMismatch, "buffer has " + std::to_string(values.size()) +
                                         " values for shape " + to_string(shape_));
    for (Index i = 0; i < data_.size(); ++i) data_[i] = values[static_cast<std::size_t>(i)];
  }

  static Tensor zeros(Shape shape) { return Tensor(std::move(shape)); }
  static Tensor scalar(T v) { return Tensor(Shape{}, v); }

  const Shape& shape() const noexcept { return shape_; }
  int rank() const noexcept { return static_cast<int>(shape_.size()); }
  Index size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.size() == 0; }
  Index dim(int axis) const {
    const int r = rank();
    const int a = axis < 0 ? axis + r : axis;
    if (a < 0 || a >= r) fail(ErrorCode::ShapeMismatch, "axis " + std::to_string(axis) + " out of range for " + to_string(shape_));
    return shape_[static_cast<std::size_t>(a)];
  }

  T* data() noexcept { return data_.data(); }
  const T* data() const noexcept { return data_.data(); }
  Buffer& array() noexcept { return data_; }
  const Buffer& array() const noexcept { return data_; }

  T& operator[](Index i) { return data_[i]; }
  const T& operator[](Index i) const { return data_[i]; }

  /// Matrix view with the last axis as columns.
  MatrixMap matrix() { return MatrixMap(data(), rows_(), cols_()); }
  ConstMatrixMap matrix() const { return ConstMatrixMap(data(), rows_(), cols_()); }

  Tensor reshaped(Shape shape) const {
    if (numel(shape) != size())
      fail(ErrorCode::ShapeMismatch, "cannot reshape " + to_string(shape_) + " to " + to_string(shape));
    Tensor out;
    out.shape_ = std::move(shape);
    out.data_ = data_;
    return out;
  }

  template <typename U>
  Tensor<U> cast() const {
    Tensor<U> out(shape_);
    for (Index i = 0; i < size(); ++i) out[i] = static_cast<U>(data_[i]);
    return out;
  }

  void fill(T v) { data_.setConstant(v); }

  friend bool operator==(const Tensor& a, const Tensor& b) {
    if (a.shape_ != b.shape_) return false;
    for (Index i = 0; i < a.size(); ++i)
      if (!(a.data_[i] == b.data_[i])) return false;
    return true;
  }

 private:
  Index cols_() const { return shape_.empty() ? 1 : shape_.back(); }
  Index rows_() const { return cols_() == 0 ? 0 : size() / cols_(); }

  Shape shape_;
  Buffer data_;
};

/// Leading-axis rows in the given order; repeats allowed.
template <typename T>
Tensor<T> gather_rows(const Tensor<T>& t, const std::vector<Index>& rows) {
  if (t.rank() == 0) return t;
  Shape shape = t.shape();
  const Index inner = shape[0] == 0 ? 0 : t.size() / shape[0];
  shape[0] = static_cast<Index>(rows.size());
  Tensor<T> out(shape);
  for (std::size_t r = 0; r < rows.size(); ++r) {
    if (rows[r] < 0 || rows[r] >= t.dim(0)) fail(ErrorCode::ShapeMismatch, "row index out of range");
    std::copy_n(t.data() + rows[r] * inner, inner, out.data() + static_cast<Index>(r) * inner);
  }
  return out;
}

/// Concatenation along the leading axis.
template <typename T>
Tensor<T> concat_rows(const std::vector<const Tensor<T>*>& parts) {
  if (parts.empty() || parts[0]->rank() == 0) return parts.empty() ? Tensor<T>() : *parts[0];
  Shape shape = parts[0]->shape();
  shape[0] = 0;
  for (const auto* p : parts) {
    Shape s = p->shape();
    if (s.size() != shape.size() || !std::equal(s.begin() + 1, s.end(), shape.begin() + 1))
      fail(ErrorCode::ShapeMismatch, "concat_rows: " + to_string(s) + " vs " + to_string(parts[0]->shape()));
    shape[0] += s[0];
  }
  Tensor<T> out(shape);
  Index at = 0;
  for (const auto* p : parts) {
    std::copy_n(p->data(), p->size(), out.data() + at);
    at += p->size();
  }
  return out;
}

using TensorF = Tensor<float>;
using TensorD = Tensor<double>;
using TensorI = Tensor<std::int32_t>;
using TensorB = Tensor<std::uint8_t>;

}  // namespace nco
