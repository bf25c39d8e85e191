#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "nco/policy/policy.hpp"
#include "nco/rl/rl.hpp"

namespace nco {

enum class Algorithm { Reinforce, A2C, PPO };

struct TrainConfig {
  // env
  EnvId env = EnvId::TSP;
  Index num_loc = 20;

  // model
  std::string name = "am";
  Algorithm algorithm = Algorithm::Reinforce;
  PolicyConfig policy;
  BaselineKind baseline = BaselineKind::Rollout;
  double exp_beta = 0.8;
  Index warmup_epochs = 1;      // rollout baseline: exponential baseline before this epoch
  double baseline_alpha = 0.05; // t-test significance for replacing the rollout baseline
  Index baseline_val_size = 10000;
  Index num_starts = 0;         // shared baseline; 0 = every admissible start
  Index num_augment = 10;       // symmetric baseline
  PpoConfig ppo;

  // train
  double lr = 1e-4;
  double weight_decay = 0.0;
  std::vector<Index> milestones{80, 95};
  double gamma = 0.1;
  double gradient_clip = 1.0;
  Index epochs = 100;
  Index total_steps = 250000;   // 0: derived from batch_size and train_data_size
  Index batch_size = 0;         // 0: derived from total_steps
  Index train_data_size = 1280000;
  Index val_data_size = 10000;
  Index val_batch_size = 1024;
  std::uint64_t seed = 1234;
  std::uint64_t val_seed = 4321;
  bool halve_rollout_batch = true;
  bool deterministic = false;

  std::string output_dir = "runs/default";

  void validate() const;
  Index steps_per_epoch() const;
  Index batch() const;
  /// Instances drawn per epoch.
  Index epoch_size() const;
  /// Stable hash of the resolved text form.
  std::uint64_t hash() const;
};

/// Built-in overlays: am, am-lr1e-3, pomo, symnco, amxl, a2c, ppo.
std::vector<std::string> preset_names();
std::string preset_yaml(const std::string& name);

/// Defaults, then the preset (if non-empty), then each file in order, then
/// "dotted.key=value" overrides. Unknown keys raise UnknownKey, wrong scalar
/// types TypeError, null required values MissingRequired, and a key repeated
/// in one mapping InvalidConfig.
TrainConfig load_config(const std::vector<std::string>& paths, const std::vector<std::string>& overrides = {},
                        const std::string& preset = "");
TrainConfig load_config_text(const std::vector<std::string>& texts, const std::vector<std::string>& overrides = {},
                             const std::string& preset = "");

/// Fully resolved YAML of a config.
std::string to_yaml(const TrainConfig& config);

}  // namespace nco
