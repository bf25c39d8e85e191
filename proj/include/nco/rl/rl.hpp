#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <vector>

#include "nco/policy/policy.hpp"

namespace nco {

enum class BaselineKind { None, Exponential, Critic, Rollout, Shared, Symmetric };

BaselineKind parse_baseline(std::string_view name);
std::string_view baseline_name(BaselineKind kind);

/// -mean((reward - baseline) * logprob). The baseline is a constant.
template <typename T>
Var<T> reinforce_loss(const Var<T>& logprob, const TensorF& reward, const TensorF& baseline);

/// Group mean over `group` consecutive rows (instance-major layout).
TensorF group_mean_baseline(const TensorF& reward, Index group);
inline TensorF shared_baseline(const TensorF& reward, Index starts) { return group_mean_baseline(reward, starts); }
inline TensorF symmetric_baseline(const TensorF& reward, Index augments) { return group_mean_baseline(reward, augments); }

/// b <- beta * b + (1 - beta) * mean(reward); the first call sets b = mean(reward).
class ExponentialBaseline {
 public:
  explicit ExponentialBaseline(double beta = 0.8) : beta_(beta) {}
  TensorF eval(const TensorF& reward);
  std::optional<double> value() const { return value_; }
  void set_value(std::optional<double> v) { value_ = v; }

 private:
  double beta_;
  std::optional<double> value_;
};

struct TTest {
  double t = 0.0;
  double p = 1.0;  // one-sided: H1 says candidate > baseline
};

/// Paired one-sided t-test on per-instance differences candidate - baseline.
TTest paired_t_test(const TensorF& candidate, const TensorF& baseline);

/// Greedy rewards of a frozen policy copy. The copy is replaced by the
/// candidate when the candidate's mean greedy reward on the validation set is
/// higher and the paired t-test rejects equality at `alpha`.
class RolloutBaseline {
 public:
  RolloutBaseline(const Policy<float>& initial, InstanceBatch validation, double alpha = 0.05);

  TensorF eval(const InstanceBatch& in);
  /// Returns true when the baseline was replaced.
  bool update(Policy<float>& candidate);

  Policy<float>& policy() { return *frozen_; }
  const TensorF& validation_reward() const { return val_reward_; }
  const InstanceBatch& validation() const { return val_; }
  void restore(const ParamSet<float>& params);
  TTest last_test() const { return last_; }

 private:
  std::unique_ptr<Policy<float>> frozen_;
  InstanceBatch val_;
  TensorF val_reward_;
  double alpha_;
  TTest last_;
};

template <typename T>
struct A2CLosses {
  Var<T> policy;
  Var<T> value;
  Var<T> total;
};

/// Policy loss with the detached critic as baseline plus mean squared error
/// of the critic against the reward.
template <typename T>
A2CLosses<T> a2c_losses(const Var<T>& logprob, const TensorF& reward, const Var<T>& critic_value);

/// min(r A, clip(r, 1 - eps, 1 + eps) A) for one scalar.
double ppo_clip_term(double ratio, double advantage, double eps);

template <typename T>
struct PpoTerms {
  Var<T> surrogate;  // mean clipped objective
  Var<T> value;      // critic MSE
  Var<T> entropy;    // mean per-step entropy
  Var<T> loss;       // -surrogate + value_coef * value - entropy_coef * entropy
};

/// Loss of one PPO minibatch from fresh log-probs and the stored ones.
template <typename T>
PpoTerms<T> ppo_terms(const Var<T>& logprob, const TensorF& old_logprob, const TensorF& advantage,
                      const Var<T>& critic_value, const TensorF& reward, const Var<T>& entropy, double eps,
                      double value_coef, double entropy_coef);

struct PpoConfig {
  double clip = 0.2;
  Index epochs = 2;
  Index minibatch = 512;
  double value_coef = 1.0;
  double entropy_coef = 0.01;
  std::uint64_t seed = 0;  // minibatch shuffling
};

/// Single-stage PPO over one collected batch. For each epoch the rows are
/// shuffled and split into minibatches; after each minibatch's backward pass
/// `apply_step` is called (the optimizer lives in the trainer). Returns the
/// minibatch losses in order.
std::vector<double> ppo_update(Policy<float>& policy, Critic<float>& critic, const InstanceBatch& in,
                               const TensorI& actions, const TensorF& old_logprob, const TensorF& reward,
                               const PpoConfig& config, const std::function<void()>& apply_step);

/// Raises NonFiniteLoss when any element is NaN or infinite.
template <typename T>
void require_finite(const Var<T>& v, const char* what);

}  // namespace nco
