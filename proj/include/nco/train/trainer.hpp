#pragma once

#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "nco/train/config.hpp"
#include "nco/train/ncof.hpp"
#include "nco/train/optim.hpp"

namespace nco {

struct EpochMetrics {
  Index epoch = 0;
  Index step = 0;  // gradient steps taken so far
  double train_reward = 0.0;
  double val_cost = 0.0;
  double lr = 0.0;
  double seconds = 0.0;
};

/// Policy stored in a trainer checkpoint; its configuration is read from the
/// checkpoint's own metadata.
Policy<float> policy_from_checkpoint(const NcofFile& file);
TrainConfig config_from_checkpoint(const NcofFile& file);

std::string metrics_header();
std::string metrics_row(const EpochMetrics& m);

/// Training loop. With an output directory the run writes config.yaml,
/// metrics.csv, checkpoints/epoch_{k}.ncof and best.ncof there.
class Trainer {
 public:
  explicit Trainer(TrainConfig config, bool write_files = true);
  ~Trainer();

  const TrainConfig& config() const { return config_; }
  Policy<float>& policy() { return policy_; }
  Index epoch() const { return epoch_; }
  Index global_step() const { return step_; }
  const std::vector<EpochMetrics>& metrics() const { return metrics_; }

  /// Runs the remaining epochs (at most max_epochs more when given).
  void fit(std::optional<Index> max_epochs = std::nullopt);
  /// Restores a checkpoint written by this trainer; fit() continues after it.
  void resume(const std::string& path);

  /// One gradient step on a batch; returns its mean reward.
  double train_step(const InstanceBatch& batch);
  /// Greedy mean objective on the validation set.
  double validate();

  NcofFile checkpoint() const;
  void restore(const NcofFile& file);

  /// Called after each epoch's metrics are computed.
  std::function<void(const EpochMetrics&)> on_epoch;

 private:
  void run_epoch();
  std::uint64_t step_seed() const;
  double objective(float reward) const;

  TrainConfig config_;
  bool write_files_;
  Policy<float> policy_;
  std::unique_ptr<Critic<float>> critic_;
  Adam<float> policy_opt_;
  std::unique_ptr<Adam<float>> critic_opt_;
  MultiStepLR schedule_;
  ExponentialBaseline exp_baseline_;
  std::unique_ptr<RolloutBaseline> rollout_baseline_;
  InstanceBatch val_;
  Index epoch_ = 0;
  Index step_ = 0;
  double best_val_;
  std::vector<EpochMetrics> metrics_;
};

}  // namespace nco
