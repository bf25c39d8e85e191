#include "nco/rl/rl.hpp"

#include <cmath>
#include <numeric>

#include <boost/math/distributions/students_t.hpp>

#include "nco/core/philox.hpp"

namespace nco {

BaselineKind parse_baseline(std::string_view name) {
  if (name == "none" || name == "no") return BaselineKind::None;
  if (name == "exponential") return BaselineKind::Exponential;
  if (name == "critic") return BaselineKind::Critic;
  if (name == "rollout") return BaselineKind::Rollout;
  if (name == "shared") return BaselineKind::Shared;
  if (name == "symmetric") return BaselineKind::Symmetric;
  fail(ErrorCode::InvalidConfig, "unknown baseline '" + std::string(name) + "'");
}

std::string_view baseline_name(BaselineKind kind) {
  switch (kind) {
    case BaselineKind::None: return "none";
    case BaselineKind::Exponential: return "exponential";
    case BaselineKind::Critic: return "critic";
    case BaselineKind::Rollout: return "rollout";
    case BaselineKind::Shared: return "shared";
    case BaselineKind::Symmetric: return "symmetric";
  }
  return "none";
}

namespace {

void require_batch(Index expect, const Shape& got, const char* what) {
  if (got != Shape{expect})
    fail(ErrorCode::ShapeMismatch, std::string(what) + " must be [" + std::to_string(expect) + "], got " + to_string(got));
}

template <typename T>
Tensor<T> as(const TensorF& x) {
  return x.cast<T>();
}

}  // namespace

template <typename T>
Var<T> reinforce_loss(const Var<T>& logprob, const TensorF& reward, const TensorF& baseline) {
  const Index b = logprob.size();
  require_batch(b, logprob.shape(), "logprob");
  require_batch(b, reward.shape(), "reward");
  require_batch(b, baseline.shape(), "baseline");
  Tensor<T> adv({b});
  for (Index i = 0; i < b; ++i) adv[i] = static_cast<T>(reward[i]) - static_cast<T>(baseline[i]);
  return neg(mean(logprob * logprob.tape()->constant(std::move(adv))));
}

TensorF group_mean_baseline(const TensorF& reward, Index group) {
  if (reward.rank() != 1) fail(ErrorCode::ShapeMismatch, "rewards must be [B * group]");
  if (group <= 0 || reward.size() % group != 0)
    fail(ErrorCode::GroupSizeMismatch,
         std::to_string(reward.size()) + " rewards cannot be split into groups of " + std::to_string(group));
  TensorF out(reward.shape());
  for (Index g = 0; g < reward.size() / group; ++g) {
    double total = 0.0;
    for (Index k = 0; k < group; ++k) total += reward[g * group + k];
    const auto m = static_cast<float>(total / static_cast<double>(group));
    for (Index k = 0; k < group; ++k) out[g * group + k] = m;
  }
  return out;
}

TensorF ExponentialBaseline::eval(const TensorF& reward) {
  double total = 0.0;
  for (Index i = 0; i < reward.size(); ++i) total += reward[i];
  const double m = reward.size() ? total / static_cast<double>(reward.size()) : 0.0;
  value_ = value_ ? beta_ * *value_ + (1.0 - beta_) * m : m;
  return TensorF(reward.shape(), static_cast<float>(*value_));
}

TTest paired_t_test(const TensorF& candidate, const TensorF& baseline) {
  if (candidate.shape() != baseline.shape() || candidate.size() < 2)
    fail(ErrorCode::ShapeMismatch, "paired t-test needs two equally sized samples of at least 2");
  const Index n = candidate.size();
  double mean = 0.0;
  for (Index i = 0; i < n; ++i) mean += static_cast<double>(candidate[i]) - baseline[i];
  mean /= static_cast<double>(n);
  double ss = 0.0;
  for (Index i = 0; i < n; ++i) {
    const double d = static_cast<double>(candidate[i]) - baseline[i] - mean;
    ss += d * d;
  }
  const double sd = std::sqrt(ss / static_cast<double>(n - 1));
  TTest out;
  if (sd == 0.0) {
    out.t = mean > 0 ? INFINITY : (mean < 0 ? -INFINITY : 0.0);
    out.p = mean > 0 ? 0.0 : 1.0;
    return out;
  }
  out.t = mean / (sd / std::sqrt(static_cast<double>(n)));
  const boost::math::students_t dist(static_cast<double>(n - 1));
  out.p = boost::math::cdf(boost::math::complement(dist, out.t));
  return out;
}

RolloutBaseline::RolloutBaseline(const Policy<float>& initial, InstanceBatch validation, double alpha)
    : frozen_(std::make_unique<Policy<float>>(initial)), val_(std::move(validation)), alpha_(alpha) {
  frozen_->training = false;
  val_reward_ = greedy_reward(*frozen_, val_);
}

TensorF RolloutBaseline::eval(const InstanceBatch& in) { return greedy_reward(*frozen_, in); }

bool RolloutBaseline::update(Policy<float>& candidate) {
  const TensorF cand = greedy_reward(candidate, val_);
  double diff = 0.0;
  for (Index i = 0; i < cand.size(); ++i) diff += static_cast<double>(cand[i]) - val_reward_[i];
  last_ = paired_t_test(cand, val_reward_);
  if (diff > 0.0 && last_.p < alpha_) {
    frozen_ = std::make_unique<Policy<float>>(candidate);
    frozen_->training = false;
    val_reward_ = cand;
    return true;
  }
  return false;
}

void RolloutBaseline::restore(const ParamSet<float>& params) {
  load_params(frozen_->params(), params);
  val_reward_ = greedy_reward(*frozen_, val_);
}

template <typename T>
A2CLosses<T> a2c_losses(const Var<T>& logprob, const TensorF& reward, const Var<T>& critic_value) {
  const Index b = logprob.size();
  require_batch(b, critic_value.shape(), "critic value");
  TensorF base(critic_value.shape());
  for (Index i = 0; i < b; ++i) base[i] = static_cast<float>(critic_value.value()[i]);
  A2CLosses<T> out;
  out.policy = reinforce_loss(logprob, reward, base);
  const Var<T> err = critic_value - critic_value.tape()->constant(as<T>(reward));
  out.value = mean(err * err);
  out.total = out.policy + out.value;
  return out;
}

double ppo_clip_term(double ratio, double advantage, double eps) {
  const double clipped = std::clamp(ratio, 1.0 - eps, 1.0 + eps);
  return std::min(ratio * advantage, clipped * advantage);
}

template <typename T>
PpoTerms<T> ppo_terms(const Var<T>& logprob, const TensorF& old_logprob, const TensorF& advantage,
                      const Var<T>& critic_value, const TensorF& reward, const Var<T>& entropy, double eps,
                      double value_coef, double entropy_coef) {
  const Index b = logprob.size();
  require_batch(b, logprob.shape(), "logprob");
  require_batch(b, old_logprob.shape(), "old logprob");
  require_batch(b, advantage.shape(), "advantage");
  Tape<T>& tape = *logprob.tape();
  const Var<T> ratio = exp(logprob - tape.constant(as<T>(old_logprob)));
  const Var<T> adv = tape.constant(as<T>(advantage));
  const T lo = static_cast<T>(std::max(0.0, 1.0 - eps)), hi = static_cast<T>(1.0 + eps);
  const Var<T> clipped = std::isinf(eps) ? ratio : clamp(ratio, lo, hi);
  PpoTerms<T> out;
  out.surrogate = mean(minimum(ratio * adv, clipped * adv));
  out.loss = neg(out.surrogate);
  if (critic_value.valid()) {
    require_batch(b, critic_value.shape(), "critic value");
    const Var<T> err = critic_value - tape.constant(as<T>(reward));
    out.value = mean(err * err);
    out.loss = out.loss + scale(out.value, static_cast<T>(value_coef));
  }
  if (entropy.valid()) {
    out.entropy = mean(entropy);
    out.loss = out.loss - scale(out.entropy, static_cast<T>(entropy_coef));
  }
  return out;
}

std::vector<double> ppo_update(Policy<float>& policy, Critic<float>& critic, const InstanceBatch& in,
                               const TensorI& actions, const TensorF& old_logprob, const TensorF& reward,
                               const PpoConfig& config, const std::function<void()>& apply_step) {
  const Index b = in.batch();
  require_batch(b, old_logprob.shape(), "old logprob");
  require_batch(b, reward.shape(), "reward");
  if (config.minibatch <= 0 || config.epochs < 0) fail(ErrorCode::InvalidConfig, "PPO minibatch/epochs");
  TensorF advantage({b});
  {
    const bool was = critic.training;
    critic.training = false;
    Tape<float> tape(false);
    const Var<float> v = critic.value(tape, in);
    for (Index i = 0; i < b; ++i) advantage[i] = reward[i] - v.value()[i];
    critic.training = was;
  }
  std::vector<double> losses;
  std::vector<Index> order(static_cast<std::size_t>(b));
  for (Index epoch = 0; epoch < config.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), 0);
    PhiloxStream rng(config.seed, static_cast<std::uint64_t>(epoch));
    for (Index i = b - 1; i > 0; --i) std::swap(order[i], order[rng.integer(0, i)]);
    for (Index start = 0; start < b; start += config.minibatch) {
      const Index len = std::min(config.minibatch, b - start);
      const std::vector<Index> rows(order.begin() + start, order.begin() + start + len);
      const InstanceBatch part = in.take(rows);
      const TensorI acts = gather_rows(actions, rows);
      Tape<float> tape;
      RolloutOptions forced;
      forced.actions = &acts;
      forced.entropy = true;
      forced.reward = false;
      const Trajectory<float> tr = rollout(policy, tape, part, forced);
      const Var<float> value = critic.value(tape, part);
      const PpoTerms<float> terms = ppo_terms(tr.logprob, gather_rows(old_logprob, rows), gather_rows(advantage, rows),
                                              value, gather_rows(reward, rows), tr.entropy, config.clip,
                                              config.value_coef, config.entropy_coef);
      require_finite(terms.loss, "PPO loss");
      tape.backward(terms.loss);
      losses.push_back(terms.loss.value()[0]);
      apply_step();
    }
  }
  return losses;
}

template <typename T>
void require_finite(const Var<T>& v, const char* what) {
  for (Index i = 0; i < v.size(); ++i)
    if (!std::isfinite(v.value()[i])) fail(ErrorCode::NonFiniteLoss, std::string(what) + " is not finite");
}

#define NCO_INSTANTIATE_RL(T)                                                                                 \
  template Var<T> reinforce_loss<T>(const Var<T>&, const TensorF&, const TensorF&);                           \
  template A2CLosses<T> a2c_losses<T>(const Var<T>&, const TensorF&, const Var<T>&);                          \
  template PpoTerms<T> ppo_terms<T>(const Var<T>&, const TensorF&, const TensorF&, const Var<T>&,             \
                                    const TensorF&, const Var<T>&, double, double, double);                   \
  template void require_finite<T>(const Var<T>&, const char*);

NCO_INSTANTIATE_RL(float)
NCO_INSTANTIATE_RL(double)

}  // namespace nco
