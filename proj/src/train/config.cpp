#include "nco/train/config.hpp"

#include <fstream>
#include <set>
#include <sstream>

#include <yaml-cpp/yaml.h>

namespace nco {

namespace {

std::string algorithm_name(Algorithm a) {
  switch (a) {
    case Algorithm::Reinforce: return "reinforce";
    case Algorithm::A2C: return "a2c";
    case Algorithm::PPO: return "ppo";
  }
  return "reinforce";
}

Algorithm parse_algorithm(const std::string& s) {
  if (s == "reinforce") return Algorithm::Reinforce;
  if (s == "a2c") return Algorithm::A2C;
  if (s == "ppo") return Algorithm::PPO;
  fail(ErrorCode::InvalidConfig, "unknown algorithm '" + s + "'");
}

std::string lower(std::string s) {
  for (char& c : s) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return s;
}

// Copies `src` onto `dst`, checking keys against `schema` (the defaults tree).
void merge(YAML::Node dst, const YAML::Node& src, const YAML::Node& schema, const std::string& path) {
  if (!src.IsMap()) fail(ErrorCode::TypeError, (path.empty() ? "config root" : path) + " must be a mapping");
  std::set<std::string> seen;
  for (const auto& kv : src) {
    const std::string key = kv.first.as<std::string>();
    const std::string full = path.empty() ? key : path + "." + key;
    if (!seen.insert(key).second) fail(ErrorCode::InvalidConfig, "key " + full + " appears twice in one mapping");
    if (!schema[key]) fail(ErrorCode::UnknownKey, "unknown config key " + full);
    const YAML::Node expect = schema[key];
    if (expect.IsMap()) {
      YAML::Node child = dst[key];
      merge(child, kv.second, expect, full);
    } else {
      if (kv.second.IsMap()) fail(ErrorCode::TypeError, full + " must not be a mapping");
      dst[key] = YAML::Clone(kv.second);
    }
  }
}

template <typename T>
T read(const YAML::Node& root, const std::string& dotted) {
  YAML::Node node = YAML::Clone(root);
  std::stringstream ss(dotted);
  std::string part;
  while (std::getline(ss, part, '.')) node = node[part];
  if (!node || node.IsNull()) fail(ErrorCode::MissingRequired, "config key " + dotted + " has no value");
  try {
    return node.as<T>();
  } catch (const YAML::Exception&) {
    fail(ErrorCode::TypeError, "config key " + dotted + " has the wrong type");
  }
}

Index read_index(const YAML::Node& root, const std::string& dotted) {
  const double v = read<double>(root, dotted);
  if (v != std::floor(v)) fail(ErrorCode::TypeError, "config key " + dotted + " must be an integer");
  return static_cast<Index>(v);
}

TrainConfig from_tree(const YAML::Node& t) {
  TrainConfig c;
  c.env = parse_env(lower(read<std::string>(t, "env.name")));
  c.num_loc = read_index(t, "env.num_loc");
  c.name = read<std::string>(t, "model.name");
  c.algorithm = parse_algorithm(lower(read<std::string>(t, "model.algorithm")));
  c.policy.env = c.env;
  c.policy.num_heads = read_index(t, "model.policy.encoder.num_heads");
  c.policy.num_layers = read_index(t, "model.policy.encoder.num_layers");
  const std::string norm = lower(read<std::string>(t, "model.policy.encoder.normalization"));
  if (norm == "batch")
    c.policy.normalization = Normalization::Batch;
  else if (norm == "instance")
    c.policy.normalization = Normalization::Instance;
  else
    fail(ErrorCode::InvalidConfig, "normalization must be batch or instance, got " + norm);
  c.policy.hidden_dim = read_index(t, "model.policy.encoder.hidden_dim");
  c.policy.embedding_dim = read_index(t, "model.policy.encoder.embedding_dim");
  if (read_index(t, "model.policy.decoder.num_heads") != c.policy.num_heads ||
      read_index(t, "model.policy.decoder.embedding_dim") != c.policy.embedding_dim)
    fail(ErrorCode::InvalidConfig, "decoder num_heads and embedding_dim must match the encoder");
  c.policy.use_graph_context = read<bool>(t, "model.policy.decoder.use_graph_context");
  c.policy.tanh_clipping = read<double>(t, "model.policy.decoder.tanh_clipping");
  c.policy.mask_glimpse = read<bool>(t, "model.policy.decoder.mask_inner");
  if (!read<bool>(t, "model.policy.decoder.mask_logits") || !read<bool>(t, "model.policy.decoder.normalize"))
    fail(ErrorCode::InvalidConfig, "mask_logits and normalize cannot be disabled");
  c.policy.softmax_temp = read<double>(t, "model.policy.decoder.softmax_temp");
  c.baseline = parse_baseline(lower(read<std::string>(t, "model.baseline")));
  c.exp_beta = read<double>(t, "model.baseline_options.exp_beta");
  c.warmup_epochs = read_index(t, "model.baseline_options.warmup_epochs");
  c.baseline_alpha = read<double>(t, "model.baseline_options.alpha");
  c.baseline_val_size = read_index(t, "model.baseline_options.val_size");
  c.num_starts = read_index(t, "model.num_starts");
  c.num_augment = read_index(t, "model.num_augment");
  c.ppo.clip = read<double>(t, "model.ppo.clip_range");
  c.ppo.epochs = read_index(t, "model.ppo.ppo_epochs");
  c.ppo.minibatch = read_index(t, "model.ppo.mini_batch_size");
  c.ppo.value_coef = read<double>(t, "model.ppo.vf_lambda");
  c.ppo.entropy_coef = read<double>(t, "model.ppo.entropy_lambda");

  if (lower(read<std::string>(t, "train.optimizer.type")) != "adam")
    fail(ErrorCode::InvalidConfig, "only the Adam optimizer is available");
  c.lr = read<double>(t, "train.optimizer.learning_rate");
  c.weight_decay = read<double>(t, "train.optimizer.weight_decay");
  if (lower(read<std::string>(t, "train.scheduler.type")) != "multisteplr")
    fail(ErrorCode::InvalidConfig, "only the MultiStepLR scheduler is available");
  if (lower(read<std::string>(t, "train.scheduler.scheduler_interval")) != "epoch")
    fail(ErrorCode::InvalidConfig, "the scheduler steps once per epoch");
  const auto ms = read<std::vector<double>>(t, "train.scheduler.step_size");
  c.milestones.clear();
  for (double m : ms) {
    if (m != std::floor(m)) fail(ErrorCode::TypeError, "scheduler milestones must be integers");
    c.milestones.push_back(static_cast<Index>(m));
  }
  c.gamma = read<double>(t, "train.scheduler.gamma");
  c.gradient_clip = read<double>(t, "train.gradient_clip_val");
  c.epochs = read_index(t, "train.max_epochs");
  if (read<std::string>(t, "train.precision") != "32")
    fail(ErrorCode::InvalidConfig, "only 32-bit precision is available");
  c.total_steps = read_index(t, "train.total_steps");
  c.batch_size = read_index(t, "train.batch_size");
  c.train_data_size = read_index(t, "train.train_data_size");
  c.val_data_size = read_index(t, "train.val_data_size");
  c.val_batch_size = read_index(t, "train.val_batch_size");
  c.seed = static_cast<std::uint64_t>(read_index(t, "train.seed"));
  c.val_seed = static_cast<std::uint64_t>(read_index(t, "train.val_seed"));
  c.halve_rollout_batch = read<bool>(t, "train.halve_rollout_batch");
  c.deterministic = read<bool>(t, "train.deterministic");
  c.output_dir = read<std::string>(t, "run.output_dir");
  return c;
}

std::string fmt(double v) {
  std::ostringstream ss;
  ss.precision(17);
  ss << v;
  return ss.str();
}

YAML::Node load_text(const std::string& text, const std::string& what) {
  try {
    YAML::Node n = YAML::Load(text);
    if (n.IsNull()) return YAML::Node(YAML::NodeType::Map);
    return n;
  } catch (const YAML::Exception& e) {
    fail(ErrorCode::TypeError, "cannot parse " + what + ": " + e.what());
  }
}

void apply_override(YAML::Node tree, const YAML::Node& schema, const std::string& item) {
  const auto eq = item.find('=');
  if (eq == std::string::npos || eq == 0) fail(ErrorCode::InvalidConfig, "override must be key=value, got " + item);
  const std::string key = item.substr(0, eq);
  YAML::Node value = load_text(item.substr(eq + 1), "override " + item);
  if (item.substr(eq + 1).empty()) value = YAML::Node();
  // build {a: {b: {c: value}}}
  std::vector<std::string> parts;
  std::stringstream ss(key);
  for (std::string p; std::getline(ss, p, '.');) parts.push_back(p);
  YAML::Node nested = value;
  for (auto it = parts.rbegin(); it != parts.rend(); ++it) {
    YAML::Node wrap(YAML::NodeType::Map);
    wrap[*it] = nested;
    nested = wrap;
  }
  merge(tree, nested, schema, "");
}

YAML::Node resolve(const std::vector<std::string>& texts, const std::vector<std::string>& overrides,
                   const std::string& preset) {
  const YAML::Node schema = YAML::Load(to_yaml(TrainConfig{}));
  YAML::Node tree = YAML::Clone(schema);
  if (!preset.empty()) merge(tree, YAML::Load(preset_yaml(preset)), schema, "");
  for (std::size_t i = 0; i < texts.size(); ++i) merge(tree, load_text(texts[i], "config " + std::to_string(i)), schema, "");
  for (const auto& o : overrides) apply_override(tree, schema, o);
  return tree;
}

}  // namespace

void TrainConfig::validate() const {
  policy.validate();
  const Index min_size = env == EnvId::TSP ? 2 : 1;
  if (num_loc < min_size || (env == EnvId::PDP && num_loc % 2 != 0))
    fail(ErrorCode::UnsupportedSize, "env.num_loc " + std::to_string(num_loc) + " is not valid for " +
                                         std::string(env_name(env)));
  if (epochs < 1) fail(ErrorCode::InvalidConfig, "max_epochs must be at least 1");
  for (std::size_t i = 0; i < milestones.size(); ++i)
    if (milestones[i] < 0 || (i > 0 && milestones[i] <= milestones[i - 1]))
      fail(ErrorCode::InvalidConfig, "scheduler milestones must be non-negative and increasing");
  if (!(gradient_clip > 0)) fail(ErrorCode::InvalidConfig, "gradient_clip_val must be positive");
  if (!(lr >= 0) || !(weight_decay >= 0) || !(gamma > 0)) fail(ErrorCode::InvalidConfig, "bad optimizer settings");
  if (train_data_size < 1 || val_data_size < 1 || val_batch_size < 1)
    fail(ErrorCode::InvalidConfig, "data sizes must be positive");
  if ((baseline == BaselineKind::Critic) != (algorithm != Algorithm::Reinforce))
    fail(ErrorCode::InvalidConfig, "the critic baseline goes with the a2c and ppo algorithms, and only with them");
  if (num_augment < 1 || num_starts < 0) fail(ErrorCode::InvalidConfig, "num_augment >= 1 and num_starts >= 0");
  if (!(exp_beta >= 0 && exp_beta < 1)) fail(ErrorCode::InvalidConfig, "exp_beta must be in [0, 1)");
  if (warmup_epochs < 0 || baseline_val_size < 2) fail(ErrorCode::InvalidConfig, "bad rollout baseline options");
  if (ppo.epochs < 1 || ppo.minibatch < 1 || !(ppo.clip > 0)) fail(ErrorCode::InvalidConfig, "bad PPO settings");
  steps_per_epoch();
  batch();
}

Index TrainConfig::steps_per_epoch() const {
  if (batch_size > 0) {
    const Index steps = (train_data_size + batch_size - 1) / batch_size;
    if (total_steps != 0 && total_steps != steps * epochs)
      fail(ErrorCode::InvalidConfig, "total_steps " + std::to_string(total_steps) + " disagrees with " +
                                         std::to_string(steps) + " steps x " + std::to_string(epochs) + " epochs");
    return steps;
  }
  if (total_steps <= 0 || total_steps % epochs != 0)
    fail(ErrorCode::InvalidConfig, "total_steps must be a positive multiple of max_epochs when batch_size is 0");
  return total_steps / epochs;
}

Index TrainConfig::batch() const {
  if (batch_size > 0) return batch_size;
  const Index steps = steps_per_epoch();
  const Index div = halve_rollout_batch && baseline == BaselineKind::Rollout ? 2 : 1;
  if (train_data_size % (steps * div) != 0)
    fail(ErrorCode::InvalidConfig, "train_data_size " + std::to_string(train_data_size) + " does not split into " +
                                       std::to_string(steps) + " steps" + (div == 2 ? " at half batch" : ""));
  return train_data_size / steps / div;
}

Index TrainConfig::epoch_size() const {
  return batch_size > 0 ? train_data_size : batch() * steps_per_epoch();
}

std::uint64_t TrainConfig::hash() const {
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char ch : to_yaml(*this)) {
    h ^= ch;
    h *= 1099511628211ull;
  }
  return h;
}

std::string to_yaml(const TrainConfig& c) {
  YAML::Emitter e;
  e << YAML::BeginMap;
  e << YAML::Key << "env" << YAML::Value << YAML::BeginMap;
  e << YAML::Key << "name" << YAML::Value << std::string(env_name(c.env));
  e << YAML::Key << "num_loc" << YAML::Value << c.num_loc;
  e << YAML::EndMap;
  e << YAML::Key << "model" << YAML::Value << YAML::BeginMap;
  e << YAML::Key << "name" << YAML::Value << c.name;
  e << YAML::Key << "algorithm" << YAML::Value << algorithm_name(c.algorithm);
  e << YAML::Key << "policy" << YAML::Value << YAML::BeginMap;
  e << YAML::Key << "encoder" << YAML::Value << YAML::BeginMap;
  e << YAML::Key << "num_heads" << YAML::Value << c.policy.num_heads;
  e << YAML::Key << "num_layers" << YAML::Value << c.policy.num_layers;
  e << YAML::Key << "normalization" << YAML::Value
    << (c.policy.normalization == Normalization::Batch ? "batch" : "instance");
  e << YAML::Key << "hidden_dim" << YAML::Value << c.policy.hidden_dim;
  e << YAML::Key << "embedding_dim" << YAML::Value << c.policy.embedding_dim;
  e << YAML::EndMap;
  e << YAML::Key << "decoder" << YAML::Value << YAML::BeginMap;
  e << YAML::Key << "num_heads" << YAML::Value << c.policy.num_heads;
  e << YAML::Key << "embedding_dim" << YAML::Value << c.policy.embedding_dim;
  e << YAML::Key << "use_graph_context" << YAML::Value << c.policy.use_graph_context;
  e << YAML::Key << "tanh_clipping" << YAML::Value << fmt(c.policy.tanh_clipping);
  e << YAML::Key << "mask_inner" << YAML::Value << c.policy.mask_glimpse;
  e << YAML::Key << "mask_logits" << YAML::Value << true;
  e << YAML::Key << "normalize" << YAML::Value << true;
  e << YAML::Key << "softmax_temp" << YAML::Value << fmt(c.policy.softmax_temp);
  e << YAML::EndMap << YAML::EndMap;
  e << YAML::Key << "baseline" << YAML::Value << std::string(baseline_name(c.baseline));
  e << YAML::Key << "baseline_options" << YAML::Value << YAML::BeginMap;
  e << YAML::Key << "exp_beta" << YAML::Value << fmt(c.exp_beta);
  e << YAML::Key << "warmup_epochs" << YAML::Value << c.warmup_epochs;
  e << YAML::Key << "alpha" << YAML::Value << fmt(c.baseline_alpha);
  e << YAML::Key << "val_size" << YAML::Value << c.baseline_val_size;
  e << YAML::EndMap;
  e << YAML::Key << "num_starts" << YAML::Value << c.num_starts;
  e << YAML::Key << "num_augment" << YAML::Value << c.num_augment;
  e << YAML::Key << "ppo" << YAML::Value << YAML::BeginMap;
  e << YAML::Key << "clip_range" << YAML::Value << fmt(c.ppo.clip);
  e << YAML::Key << "ppo_epochs" << YAML::Value << c.ppo.epochs;
  e << YAML::Key << "mini_batch_size" << YAML::Value << c.ppo.minibatch;
  e << YAML::Key << "vf_lambda" << YAML::Value << fmt(c.ppo.value_coef);
  e << YAML::Key << "entropy_lambda" << YAML::Value << fmt(c.ppo.entropy_coef);
  e << YAML::EndMap;
  e << YAML::EndMap;
  e << YAML::Key << "train" << YAML::Value << YAML::BeginMap;
  e << YAML::Key << "optimizer" << YAML::Value << YAML::BeginMap;
  e << YAML::Key << "type" << YAML::Value << "Adam";
  e << YAML::Key << "learning_rate" << YAML::Value << fmt(c.lr);
  e << YAML::Key << "weight_decay" << YAML::Value << fmt(c.weight_decay);
  e << YAML::EndMap;
  e << YAML::Key << "scheduler" << YAML::Value << YAML::BeginMap;
  e << YAML::Key << "type" << YAML::Value << "MultiStepLR";
  e << YAML::Key << "step_size" << YAML::Value << YAML::Flow << c.milestones;
  e << YAML::Key << "gamma" << YAML::Value << fmt(c.gamma);
  e << YAML::Key << "scheduler_interval" << YAML::Value << "epoch";
  e << YAML::EndMap;
  e << YAML::Key << "gradient_clip_val" << YAML::Value << fmt(c.gradient_clip);
  e << YAML::Key << "max_epochs" << YAML::Value << c.epochs;
  e << YAML::Key << "precision" << YAML::Value << YAML::DoubleQuoted << "32";
  e << YAML::Key << "total_steps" << YAML::Value << c.total_steps;
  e << YAML::Key << "batch_size" << YAML::Value << c.batch_size;
  e << YAML::Key << "train_data_size" << YAML::Value << c.train_data_size;
  e << YAML::Key << "val_data_size" << YAML::Value << c.val_data_size;
  e << YAML::Key << "val_batch_size" << YAML::Value << c.val_batch_size;
  e << YAML::Key << "seed" << YAML::Value << c.seed;
  e << YAML::Key << "val_seed" << YAML::Value << c.val_seed;
  e << YAML::Key << "halve_rollout_batch" << YAML::Value << c.halve_rollout_batch;
  e << YAML::Key << "deterministic" << YAML::Value << c.deterministic;
  e << YAML::EndMap;
  e << YAML::Key << "run" << YAML::Value << YAML::BeginMap;
  e << YAML::Key << "output_dir" << YAML::Value << c.output_dir;
  e << YAML::EndMap;
  e << YAML::EndMap;
  return std::string(e.c_str()) + "\n";
}

std::vector<std::string> preset_names() { return {"am", "am-lr1e-3", "pomo", "symnco", "amxl", "a2c", "ppo"}; }

std::string preset_yaml(const std::string& name) {
  if (name == "am") return "model: {name: am, baseline: rollout}\n";
  if (name == "am-lr1e-3") return "model: {name: am-lr1e-3, baseline: rollout}\ntrain: {optimizer: {learning_rate: 1.0e-3}}\n";
  if (name == "pomo")
    return "model:\n"
           "  name: pomo\n"
           "  baseline: shared\n"
           "  policy:\n"
           "    encoder: {num_layers: 6, normalization: instance}\n"
           "    decoder: {use_graph_context: false}\n"
           "train:\n"
           "  optimizer: {weight_decay: 1.0e-6}\n"
           "  train_data_size: 160000\n";
  if (name == "symnco")
    return "model: {name: symnco, baseline: symmetric, num_augment: 10}\n"
           "train: {train_data_size: 125000}\n";
  if (name == "amxl")
    return "model:\n"
           "  name: amxl\n"
           "  baseline: rollout\n"
           "  policy:\n"
           "    encoder: {num_layers: 6, normalization: instance}\n"
           "train:\n"
           "  max_epochs: 500\n"
           "  scheduler: {step_size: [480, 495]}\n"
           "  train_data_size: 256000\n";
  if (name == "a2c") return "model: {name: a2c, algorithm: a2c, baseline: critic}\n";
  if (name == "ppo") return "model: {name: ppo, algorithm: ppo, baseline: critic}\n";
  fail(ErrorCode::InvalidConfig, "unknown preset '" + name + "'");
}

TrainConfig load_config_text(const std::vector<std::string>& texts, const std::vector<std::string>& overrides,
                             const std::string& preset) {
  const YAML::Node tree = resolve(texts, overrides, preset);
  TrainConfig c = from_tree(tree);
  if (const char* det = std::getenv("NCO_DETERMINISTIC"); det && std::string(det) == "1") c.deterministic = true;
  c.validate();
  return c;
}

TrainConfig load_config(const std::vector<std::string>& paths, const std::vector<std::string>& overrides,
                        const std::string& preset) {
  std::vector<std::string> texts;
  for (const auto& p : paths) {
    std::ifstream in(p);
    if (!in) fail(ErrorCode::Io, "cannot open config " + p);
    std::ostringstream ss;
    ss << in.rdbuf();
    texts.push_back(ss.str());
  }
  return load_config_text(texts, overrides, preset);
}

}  // namespace nco
