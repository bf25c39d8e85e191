#include "nco/train/trainer.hpp"

#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <future>
#include <iomanip>
#include <sstream>

#include "nco/decode/decode.hpp"

namespace nco {

namespace fs = std::filesystem;

std::string metrics_header() { return "epoch,step,train_reward,val_cost,lr,seconds"; }

std::string metrics_row(const EpochMetrics& m) {
  std::ostringstream ss;
  ss << m.epoch << ',' << m.step << ',' << std::setprecision(9) << m.train_reward << ',' << m.val_cost << ','
     << m.lr << ',' << std::fixed << std::setprecision(3) << m.seconds;
  return ss.str();
}

namespace {

std::uint64_t splitmix(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

double mean_of(const TensorF& x) {
  double s = 0.0;
  for (Index i = 0; i < x.size(); ++i) s += x[i];
  return x.size() ? s / static_cast<double>(x.size()) : 0.0;
}

void save_moments(NcofFile& file, const std::string& prefix, Adam<float>& opt, const ParamSet<float>& params,
                  nlohmann::json& meta) {
  std::vector<long long> steps = opt.steps();
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (opt.first_moment()[i].empty()) continue;
    file.arrays.push_back({prefix + ".m/" + params.name(i), opt.first_moment()[i]});
    file.arrays.push_back({prefix + ".v/" + params.name(i), opt.second_moment()[i]});
  }
  meta[prefix + ".steps"] = steps;
}

void load_moments(const NcofFile& file, const std::string& prefix, Adam<float>& opt, const ParamSet<float>& params,
                  const nlohmann::json& meta) {
  const auto steps = meta.at(prefix + ".steps").get<std::vector<long long>>();
  if (steps.size() != params.size())
    fail(ErrorCode::ShapeMismatchOnLoad, prefix + " optimizer state has " + std::to_string(steps.size()) + " entries");
  opt.steps() = steps;
  for (std::size_t i = 0; i < params.size(); ++i) {
    const std::string m = prefix + ".m/" + params.name(i), v = prefix + ".v/" + params.name(i);
    if (file.find(m)) {
      opt.first_moment()[i] = file.get<float>(m);
      opt.second_moment()[i] = file.get<float>(v);
      if (opt.first_moment()[i].shape() != params[i].value.shape())
        fail(ErrorCode::ShapeMismatchOnLoad, "optimizer state " + m + " has the wrong shape");
    } else {
      opt.first_moment()[i] = TensorF();
      opt.second_moment()[i] = TensorF();
    }
  }
}

}  // namespace

Trainer::Trainer(TrainConfig config, bool write_files)
    : config_(std::move(config)),
      write_files_(write_files),
      policy_((config_.validate(), config_.policy), config_.seed),
      policy_opt_(policy_.params(), {.lr = config_.lr, .weight_decay = config_.weight_decay}),
      schedule_(config_.lr, config_.milestones, config_.gamma),
      exp_baseline_(config_.exp_beta) {
  if (config_.algorithm != Algorithm::Reinforce) {
    critic_ = std::make_unique<Critic<float>>(config_.policy, config_.seed);
    critic_opt_ = std::make_unique<Adam<float>>(critic_->params(),
                                                AdamConfig{.lr = config_.lr, .weight_decay = config_.weight_decay});
  }
  val_ = generate(config_.env, config_.num_loc, config_.val_data_size, config_.val_seed);
  if (config_.baseline == BaselineKind::Rollout)
    rollout_baseline_ = std::make_unique<RolloutBaseline>(
        policy_, generate(config_.env, config_.num_loc, config_.baseline_val_size, config_.val_seed + 1),
        config_.baseline_alpha);
  best_val_ = maximize(config_.env) ? -INFINITY : INFINITY;
  if (write_files_) {
    fs::create_directories(fs::path(config_.output_dir) / "checkpoints");
    std::ofstream(fs::path(config_.output_dir) / "config.yaml") << to_yaml(config_);
  }
}

Trainer::~Trainer() = default;

double Trainer::objective(float reward) const { return maximize(config_.env) ? reward : -static_cast<double>(reward); }

std::uint64_t Trainer::step_seed() const {
  return splitmix(config_.seed ^ splitmix(static_cast<std::uint64_t>(step_)));
}

double Trainer::validate() {
  const TensorF r = greedy_reward(policy_, val_, config_.val_batch_size);
  return objective(static_cast<float>(mean_of(r)));
}

double Trainer::train_step(const InstanceBatch& batch) {
  const std::uint64_t seed = step_seed();
  const double lr = schedule_.lr(epoch_);
  policy_opt_.set_lr(lr);
  if (critic_opt_) critic_opt_->set_lr(lr);
  policy_.training = true;
  if (critic_) critic_->training = true;
  policy_.params().zero_grad();
  if (critic_) critic_->params().zero_grad();

  auto apply = [&] {
    clip_grad_norm(policy_.params(), config_.gradient_clip);
    policy_opt_.step();
    policy_.params().zero_grad();
    if (critic_) {
      clip_grad_norm(critic_->params(), config_.gradient_clip);
      critic_opt_->step();
      critic_->params().zero_grad();
    }
  };

  if (config_.algorithm == Algorithm::PPO) {
    Tape<float> collect(false);
    RolloutOptions o;
    o.type = DecodeType::Sampling;
    o.seed = seed;
    const Trajectory<float> tr = rollout(policy_, collect, batch, o);
    TensorF old({batch.batch()});
    for (Index i = 0; i < old.size(); ++i) old[i] = tr.logprob.value()[i];
    PpoConfig pc = config_.ppo;
    pc.seed = seed;
    ppo_update(policy_, *critic_, batch, tr.actions, old, tr.reward, pc, apply);
    return mean_of(tr.reward);
  }

  InstanceBatch rows = batch;
  Index group = 1;
  TensorI first;
  RolloutOptions o;
  o.type = DecodeType::Sampling;
  o.seed = seed;
  if (config_.baseline == BaselineKind::Shared) {
    const std::vector<Index> starts = multistart_actions(batch, config_.num_starts);
    group = static_cast<Index>(starts.size());
    rows = batch.repeat_interleave(group);
    first = TensorI({rows.batch()});
    const KeyedBatch init = reset(rows);
    for (Index r = 0; r < rows.batch(); ++r) {
      const Index a = starts[static_cast<std::size_t>(r % group)];
      first[r] = init.mask()[r * rows.nodes() + a] ? static_cast<std::int32_t>(a) : -1;
    }
    o.first_actions = &first;
  } else if (config_.baseline == BaselineKind::Symmetric) {
    group = config_.num_augment;
    rows = augment(batch, augmentation_maps(group, seed));
  }

  Tape<float> tape;
  const Trajectory<float> tr = rollout(policy_, tape, rows, o);
  Var<float> loss;
  switch (config_.baseline) {
    case BaselineKind::None: loss = reinforce_loss(tr.logprob, tr.reward, TensorF(tr.reward.shape())); break;
    case BaselineKind::Exponential: loss = reinforce_loss(tr.logprob, tr.reward, exp_baseline_.eval(tr.reward)); break;
    case BaselineKind::Rollout:
      loss = reinforce_loss(tr.logprob, tr.reward,
                            epoch_ < config_.warmup_epochs ? exp_baseline_.eval(tr.reward) : rollout_baseline_->eval(rows));
      break;
    case BaselineKind::Shared:
    case BaselineKind::Symmetric:
      loss = reinforce_loss(tr.logprob, tr.reward, group_mean_baseline(tr.reward, group));
      break;
    case BaselineKind::Critic: loss = a2c_losses(tr.logprob, tr.reward, critic_->value(tape, rows)).total; break;
  }
  require_finite(loss, "training loss");
  tape.backward(loss);
  apply();
  return mean_of(tr.reward);
}

void Trainer::run_epoch() {
  const auto t0 = std::chrono::steady_clock::now();
  const Index total = config_.epoch_size(), bsz = config_.batch(), steps = config_.steps_per_epoch();
  const std::uint64_t data_seed = config_.seed + 1 + static_cast<std::uint64_t>(epoch_);
  auto make = [&](Index k) {
    const Index start = k * bsz;
    return generate_range(config_.env, config_.num_loc, start, std::min(bsz, total - start), data_seed);
  };
  double reward_sum = 0.0;
  std::future<InstanceBatch> next;
  if (!config_.deterministic) next = std::async(std::launch::async, make, Index{0});
  for (Index k = 0; k < steps; ++k) {
    InstanceBatch batch = config_.deterministic ? make(k) : next.get();
    if (!config_.deterministic && k + 1 < steps) next = std::async(std::launch::async, make, k + 1);
    reward_sum += train_step(batch) * static_cast<double>(batch.batch());
    ++step_;
  }
  if (rollout_baseline_) rollout_baseline_->update(policy_);

  EpochMetrics m;
  m.epoch = epoch_;
  m.step = step_;
  m.train_reward = reward_sum / static_cast<double>(total);
  m.lr = schedule_.lr(epoch_);
  m.val_cost = validate();
  m.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  metrics_.push_back(m);
  ++epoch_;
  const bool improved = maximize(config_.env) ? m.val_cost > best_val_ : m.val_cost < best_val_;
  if (improved) best_val_ = m.val_cost;

  if (write_files_) {
    const fs::path dir(config_.output_dir);
    std::ofstream csv(dir / "metrics.csv", std::ios::trunc);
    csv << metrics_header() << '\n';
    for (const auto& row : metrics_) csv << metrics_row(row) << '\n';
    const NcofFile ckpt = checkpoint();
    write_ncof((dir / "checkpoints" / ("epoch_" + std::to_string(m.epoch) + ".ncof")).string(), ckpt);
    if (improved) write_ncof((dir / "best.ncof").string(), ckpt);
  }
  if (on_epoch) on_epoch(m);
}

void Trainer::fit(std::optional<Index> max_epochs) {
  Index done = 0;
  while (epoch_ < config_.epochs && (!max_epochs || done < *max_epochs)) {
    run_epoch();
    ++done;
  }
}

NcofFile Trainer::checkpoint() const {
  NcofFile file;
  nlohmann::json meta;
  append_params(file, policy_.params());
  if (critic_) append_params(file, critic_->params());
  if (rollout_baseline_) append_params(file, rollout_baseline_->policy().params(), "baseline/");
  auto& self = const_cast<Trainer&>(*this);
  save_moments(file, "optim.policy", self.policy_opt_, policy_.params(), meta);
  if (critic_) save_moments(file, "optim.critic", *self.critic_opt_, critic_->params(), meta);
  meta["epoch"] = epoch_;
  meta["step"] = step_;
  meta["best_val"] = std::isfinite(best_val_) ? nlohmann::json(best_val_) : nlohmann::json();
  meta["exp_baseline"] = exp_baseline_.value() ? nlohmann::json(*exp_baseline_.value()) : nlohmann::json();
  meta["config_hash"] = std::to_string(config_.hash());
  meta["config"] = to_yaml(config_);
  meta["env"] = std::string(env_name(config_.env));
  nlohmann::json rows = nlohmann::json::array();
  for (const auto& m : metrics_) rows.push_back({m.epoch, m.step, m.train_reward, m.val_cost, m.lr, m.seconds});
  meta["metrics"] = rows;
  file.meta = meta;
  return file;
}

void Trainer::restore(const NcofFile& file) {
  const nlohmann::json& meta = file.meta;
  if (meta.value("config_hash", std::string()) != std::to_string(config_.hash()))
    fail(ErrorCode::InvalidConfig, "checkpoint was written with a different configuration");
  ParamSet<float> all = extract_params(file);
  ParamSet<float> pol, crit;
  for (std::size_t i = 0; i < all.size(); ++i) {
    const std::string& name = all.name(i);
    if (name.rfind("baseline/", 0) == 0 || name.rfind("optim.", 0) == 0) continue;
    (name.rfind("critic.", 0) == 0 ? crit : pol).add(name, all[i].value, all[i].trainable);
  }
  load_params(policy_.params(), pol);
  if (critic_) load_params(critic_->params(), crit);
  if (rollout_baseline_) rollout_baseline_->restore(extract_params(file, "baseline/"));
  load_moments(file, "optim.policy", policy_opt_, policy_.params(), meta);
  if (critic_) load_moments(file, "optim.critic", *critic_opt_, critic_->params(), meta);
  epoch_ = meta.at("epoch").get<Index>();
  step_ = meta.at("step").get<Index>();
  if (meta.at("best_val").is_null())
    best_val_ = maximize(config_.env) ? -INFINITY : INFINITY;
  else
    best_val_ = meta["best_val"].get<double>();
  exp_baseline_.set_value(meta.at("exp_baseline").is_null() ? std::nullopt
                                                              : std::optional<double>(meta["exp_baseline"].get<double>()));
  metrics_.clear();
  for (const auto& r : meta.at("metrics"))
    metrics_.push_back({r[0].get<Index>(), r[1].get<Index>(), r[2].get<double>(), r[3].get<double>(),
                        r[4].get<double>(), r[5].get<double>()});
}

TrainConfig config_from_checkpoint(const NcofFile& file) {
  if (!file.meta.contains("config") || !file.meta["config"].is_string())
    fail(ErrorCode::MissingRequired, "checkpoint carries no configuration");
  return load_config_text({file.meta["config"].get<std::string>()});
}

Policy<float> policy_from_checkpoint(const NcofFile& file) {
  const TrainConfig c = config_from_checkpoint(file);
  Policy<float> policy(c.policy, c.seed);
  ParamSet<float> stored;
  const ParamSet<float> all = extract_params(file);
  for (std::size_t i = 0; i < all.size(); ++i) {
    const std::string& name = all.name(i);
    if (name.rfind("baseline/", 0) == 0 || name.rfind("optim.", 0) == 0 || name.rfind("critic.", 0) == 0) continue;
    stored.add(name, all[i].value, all[i].trainable);
  }
  load_params(policy.params(), stored);
  return policy;
}

void Trainer::resume(const std::string& path) { restore(read_ncof(path)); }

}  // namespace nco
