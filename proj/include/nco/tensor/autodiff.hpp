#pragma once

#include <functional>
#include <memory>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "nco/tensor/tensor.hpp"

namespace nco {

/// A named trainable array together with its accumulated gradient.
/// Non-trainable entries (normalization running statistics) live in the same
/// set so that checkpoints capture them.
template <typename T>
struct Parameter {
  Tensor<T> value;
  Tensor<T> grad;
  bool trainable = true;

  void zero_grad() { grad = Tensor<T>(); }
  Tensor<T>& grad_buffer() {
    if (grad.shape() != value.shape()) grad = Tensor<T>(value.shape());
    return grad;
  }
};

/// Ordered collection of named parameters. Insertion order is the checkpoint
/// order; addresses stay stable for the lifetime of the set.
template <typename T>
class ParamSet {
 public:
  ParamSet() = default;
  ParamSet(const ParamSet& other) { *this = other; }
  ParamSet& operator=(const ParamSet& other) {
    if (this == &other) return *this;
    entries_.clear();
    index_.clear();
    for (const auto& [name, p] : other.entries_) add(name, p->value, p->trainable);
    return *this;
  }
  ParamSet(ParamSet&&) noexcept = default;
  ParamSet& operator=(ParamSet&&) noexcept = default;

  Parameter<T>& add(const std::string& name, Tensor<T> value, bool trainable = true) {
    if (index_.count(name)) fail(ErrorCode::InvalidConfig, "duplicate parameter " + name);
    auto p = std::make_unique<Parameter<T>>();
    p->value = std::move(value);
    p->trainable = trainable;
    index_[name] = entries_.size();
    entries_.emplace_back(name, std::move(p));
    return *entries_.back().second;
  }

  bool contains(const std::string& name) const { return index_.count(name) > 0; }
  Parameter<T>& at(const std::string& name) {
    auto it = index_.find(name);
    if (it == index_.end()) fail(ErrorCode::UnknownKey, "no parameter named " + name);
    return *entries_[it->second].second;
  }
  const Parameter<T>& at(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) fail(ErrorCode::UnknownKey, "no parameter named " + name);
    return *entries_[it->second].second;
  }

  std::size_t size() const { return entries_.size(); }
  const std::string& name(std::size_t i) const { return entries_[i].first; }
  Parameter<T>& operator[](std::size_t i) { return *entries_[i].second; }
  const Parameter<T>& operator[](std::size_t i) const { return *entries_[i].second; }

  void zero_grad() {
    for (auto& e : entries_) e.second->zero_grad();
  }

  Index numel() const {
    Index n = 0;
    for (const auto& e : entries_) n += e.second->value.size();
    return n;
  }

  template <typename U>
  ParamSet<U> cast() const {
    ParamSet<U> out;
    for (const auto& [name, p] : entries_) out.add(name, p->value.template cast<U>(), p->trainable);
    return out;
  }

 private:
  std::vector<std::pair<std::string, std::unique_ptr<Parameter<T>>>> entries_;
  std::unordered_map<std::string, std::size_t> index_;
};

template <typename T>
class Tape;

namespace detail {

template <typename T>
struct Node {
  Tensor<T> value;
  Tensor<T> grad;
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> inputs;
  std::function<void(Node&)> backward;
  Parameter<T>* param = nullptr;

  bool has_grad() const { return grad.size() == value.size() && grad.shape() == value.shape(); }
  Tensor<T>& grad_buffer() {
    if (!has_grad()) grad = Tensor<T>(value.shape());
    return grad;
  }
  /// Gradient buffer of input i, or nullptr when that input is constant.
  Tensor<T>* input_grad(std::size_t i) {
    return inputs[i]->requires_grad ? &inputs[i]->grad_buffer() : nullptr;
  }
  const Tensor<T>& input_value(std::size_t i) const { return inputs[i]->value; }
};

}  // namespace detail

/// Handle to a value recorded on a tape.
template <typename T>
class Var {
 public:
  Var() = default;
  Var(std::shared_ptr<detail::Node<T>> node, Tape<T>* tape) : node_(std::move(node)), tape_(tape) {}

  const Tensor<T>& value() const { return node_->value; }
  const Shape& shape() const { return node_->value.shape(); }
  Index dim(int axis) const { return node_->value.dim(axis); }
  Index size() const { return node_->value.size(); }
  bool requires_grad() const { return node_ && node_->requires_grad; }
  bool valid() const { return node_ != nullptr; }
  Tape<T>* tape() const { return tape_; }
  const std::shared_ptr<detail::Node<T>>& node() const { return node_; }

  /// Gradient accumulated by the last backward pass (empty if none reached it).
  const Tensor<T>& grad() const { return node_->grad; }

 private:
  std::shared_ptr<detail::Node<T>> node_;
  Tape<T>* tape_ = nullptr;
};

/// Reverse-mode tape. Nodes are appended in evaluation order, which is a
/// topological order, and backward walks them in exact reverse.
/// A tape constructed with record=false keeps nothing alive: intermediates are
/// freed as soon as their handles go out of scope.
template <typename T>
class Tape {
 public:
  explicit Tape(bool record = true) : record_(record) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  bool recording() const noexcept { return record_; }

  Var<T> constant(Tensor<T> value) {
    auto node = std::make_shared<detail::Node<T>>();
    node->value = std::move(value);
    return Var<T>(std::move(node), this);
  }

  /// Leaf bound to a parameter; repeated calls reuse the same leaf.
  Var<T> param(Parameter<T>& p) {
    auto it = params_.find(&p);
    if (it != params_.end()) return it->second;
    auto node = std::make_shared<detail::Node<T>>();
    node->value = p.value;
    node->requires_grad = record_ && p.trainable;
    node->param = &p;
    if (node->requires_grad) nodes_.push_back(node);
    Var<T> v(std::move(node), this);
    params_.emplace(&p, v);
    return v;
  }

  /// Records an op result. The backward closure receives the output node and
  /// must accumulate into the gradient buffers of its inputs.
  Var<T> record(Tensor<T> value, std::vector<Var<T>> inputs, std::function<void(detail::Node<T>&)> backward) {
    auto node = std::make_shared<detail::Node<T>>();
    node->value = std::move(value);
    bool needs = false;
    for (const auto& in : inputs) needs = needs || in.requires_grad();
    if (record_ && needs) {
      node->requires_grad = true;
      node->inputs.reserve(inputs.size());
      for (const auto& in : inputs) node->inputs.push_back(in.node());
      node->backward = std::move(backward);
      nodes_.push_back(node);
    }
    return Var<T>(std::move(node), this);
  }

  /// Seeds d loss / d loss = 1 and accumulates into every reachable trainable
  /// parameter's gradient. Intermediate gradients are reset first, so a second
  /// call adds the same contribution again.
  void backward(const Var<T>& loss) {
    if (!loss.valid() || loss.size() != 1)
      fail(ErrorCode::NotScalar, "backward needs a scalar loss, got shape " +
                                     (loss.valid() ? to_string(loss.shape()) : std::string("<none>")));
    if (!loss.requires_grad() || loss.tape() != this)
      fail(ErrorCode::DetachedLoss, "loss is not connected to any trainable value on this tape");
    std::size_t last = nodes_.size();
    while (last > 0 && nodes_[last - 1] != loss.node()) --last;
    if (last == 0) fail(ErrorCode::DetachedLoss, "loss was not recorded on this tape");
    for (auto& n : nodes_) n->grad = Tensor<T>();
    loss.node()->grad_buffer()[0] = T(1);
    for (std::size_t i = last; i-- > 0;) {
      auto& n = *nodes_[i];
      if (!n.has_grad()) continue;
      if (n.backward) n.backward(n);
      if (n.param) n.param->grad_buffer().array() += n.grad.array();
    }
  }

  std::size_t recorded() const noexcept { return nodes_.size(); }

 private:
  bool record_;
  std::vector<std::shared_ptr<detail::Node<T>>> nodes_;
  std::unordered_map<const Parameter<T>*, Var<T>> params_;
};

}  // namespace nco
