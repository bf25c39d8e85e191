#pragma once

#include <vector>

#include "nco/tensor/autodiff.hpp"

namespace nco {

struct AdamConfig {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;  // L2 term added to the gradient
};

/// Adam over the trainable entries of a ParamSet. Entries without a gradient
/// buffer are skipped for that step.
template <typename T>
class Adam {
 public:
  Adam(ParamSet<T>& params, const AdamConfig& config);

  void step();
  void zero_grad() { params_->zero_grad(); }

  double lr() const { return config_.lr; }
  void set_lr(double lr) { config_.lr = lr; }
  const AdamConfig& config() const { return config_; }

  /// Moments in parameter order (empty tensors for non-trainable entries).
  std::vector<Tensor<T>>& first_moment() { return m_; }
  std::vector<Tensor<T>>& second_moment() { return v_; }
  std::vector<long long>& steps() { return steps_; }

 private:
  ParamSet<T>* params_;
  AdamConfig config_;
  std::vector<Tensor<T>> m_, v_;
  std::vector<long long> steps_;
};

/// Scales all gradients so that their global L2 norm is at most max_norm.
/// Returns the norm before clipping.
template <typename T>
double clip_grad_norm(ParamSet<T>& params, double max_norm);

template <typename T>
double grad_norm(const ParamSet<T>& params);

/// lr(epoch) = base * gamma^(number of milestones <= epoch).
class MultiStepLR {
 public:
  MultiStepLR(double base, std::vector<Index> milestones, double gamma = 0.1);
  double lr(Index epoch) const;
  const std::vector<Index>& milestones() const { return milestones_; }

 private:
  double base_, gamma_;
  std::vector<Index> milestones_;
};

}  // namespace nco
