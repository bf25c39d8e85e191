#include "nco/train/optim.hpp"

#include <algorithm>
#include <cmath>

namespace nco {

template <typename T>
Adam<T>::Adam(ParamSet<T>& params, const AdamConfig& config)
    : params_(&params), config_(config), m_(params.size()), v_(params.size()), steps_(params.size(), 0) {
  if (!(config.lr >= 0) || !(config.eps > 0) || config.beta1 < 0 || config.beta1 >= 1 || config.beta2 < 0 ||
      config.beta2 >= 1 || config.weight_decay < 0)
    fail(ErrorCode::InvalidConfig, "invalid Adam hyperparameters");
}

template <typename T>
void Adam<T>::step() {
  const double b1 = config_.beta1, b2 = config_.beta2;
  for (std::size_t i = 0; i < params_->size(); ++i) {
    Parameter<T>& p = (*params_)[i];
    if (!p.trainable || p.grad.shape() != p.value.shape() || p.value.size() == 0) continue;
    if (m_[i].shape() != p.value.shape()) {
      m_[i] = Tensor<T>(p.value.shape());
      v_[i] = Tensor<T>(p.value.shape());
    }
    const long long t = ++steps_[i];
    const double c1 = 1.0 - std::pow(b1, static_cast<double>(t));
    const double c2 = 1.0 - std::pow(b2, static_cast<double>(t));
    const double step = config_.lr / c1;
    const double sqrt_c2 = std::sqrt(c2);
    T* w = p.value.data();
    const T* g = p.grad.data();
    T* m = m_[i].data();
    T* v = v_[i].data();
    for (Index k = 0; k < p.value.size(); ++k) {
      const double gk = static_cast<double>(g[k]) + config_.weight_decay * static_cast<double>(w[k]);
      m[k] = static_cast<T>(b1 * m[k] + (1.0 - b1) * gk);
      v[k] = static_cast<T>(b2 * v[k] + (1.0 - b2) * gk * gk);
      const double denom = std::sqrt(static_cast<double>(v[k])) / sqrt_c2 + config_.eps;
      w[k] = static_cast<T>(w[k] - step * m[k] / denom);
    }
  }
}

template <typename T>
double grad_norm(const ParamSet<T>& params) {
  double ss = 0.0;
  for (std::size_t i = 0; i < params.size(); ++i) {
    const Parameter<T>& p = params[i];
    if (!p.trainable || p.grad.shape() != p.value.shape()) continue;
    for (Index k = 0; k < p.grad.size(); ++k) ss += static_cast<double>(p.grad[k]) * p.grad[k];
  }
  return std::sqrt(ss);
}

template <typename T>
double clip_grad_norm(ParamSet<T>& params, double max_norm) {
  if (!(max_norm > 0)) fail(ErrorCode::InvalidConfig, "gradient clip must be positive");
  const double norm = grad_norm(params);
  if (!std::isfinite(norm)) fail(ErrorCode::NonFiniteLoss, "gradient norm is not finite");
  if (norm > max_norm) {
    const double factor = max_norm / (norm + 1e-6);
    for (std::size_t i = 0; i < params.size(); ++i) {
      Parameter<T>& p = params[i];
      if (!p.trainable || p.grad.shape() != p.value.shape()) continue;
      for (Index k = 0; k < p.grad.size(); ++k) p.grad[k] = static_cast<T>(p.grad[k] * factor);
    }
  }
  return norm;
}

MultiStepLR::MultiStepLR(double base, std::vector<Index> milestones, double gamma)
    : base_(base), gamma_(gamma), milestones_(std::move(milestones)) {
  if (!std::is_sorted(milestones_.begin(), milestones_.end()))
    fail(ErrorCode::InvalidConfig, "scheduler milestones must be increasing");
}

double MultiStepLR::lr(Index epoch) const {
  const auto passed = std::upper_bound(milestones_.begin(), milestones_.end(), epoch) - milestones_.begin();
  return base_ * std::pow(gamma_, static_cast<double>(passed));
}

template class Adam<float>;
template class Adam<double>;
template double clip_grad_norm<float>(ParamSet<float>&, double);
template double clip_grad_norm<double>(ParamSet<double>&, double);
template double grad_norm<float>(const ParamSet<float>&);
template double grad_norm<double>(const ParamSet<double>&);

}  // namespace nco
