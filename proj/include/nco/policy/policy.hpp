#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "nco/env/env.hpp"
#include "nco/tensor/nn.hpp"

namespace nco {

enum class Normalization { Batch, Instance };

struct PolicyConfig {
  EnvId env = EnvId::TSP;
  Index embedding_dim = 128;
  Index hidden_dim = 512;
  Index num_heads = 8;
  Index num_layers = 3;
  Normalization normalization = Normalization::Batch;
  double tanh_clipping = 10.0;  // 0 disables clipping
  bool use_graph_context = true;
  double softmax_temp = 1.0;
  bool mask_glimpse = true;  // infeasible nodes are hidden from the glimpse attention

  void validate() const;
};

/// Encoder output with the per-instance decoder caches.
template <typename T>
struct EncoderOutput {
  Var<T> h;              // [B, N, d]
  Var<T> graph;          // [B, d], mean over nodes
  Var<T> glimpse_key;    // [B, N, d]
  Var<T> glimpse_value;  // [B, N, d]
  Var<T> logit_key;      // [B, N, d]
};

/// Per-step modulation of the decoder caches. The base class is the identity.
template <typename T>
class DynamicEmbedding {
 public:
  virtual ~DynamicEmbedding() = default;
  /// Returns the caches to use at this step.
  virtual EncoderOutput<T> apply(Tape<T>& tape, const EncoderOutput<T>& enc, const InstanceBatch& in,
                                 const KeyedBatch& state) const;
};

/// Additive update of keys, values and logit keys from per-node dynamic
/// features: [dK; dV; dL] = features[B,N,F] * W[F, 3d].
template <typename T>
class FeatureDynamicEmbedding : public DynamicEmbedding<T> {
 public:
  using Features = std::function<Tensor<T>(const InstanceBatch&, const KeyedBatch&)>;
  FeatureDynamicEmbedding(Parameter<T>& weight, Features features)
      : weight_(&weight), features_(std::move(features)) {}
  EncoderOutput<T> apply(Tape<T>& tape, const EncoderOutput<T>& enc, const InstanceBatch& in,
                         const KeyedBatch& state) const override;

 private:
  Parameter<T>* weight_;
  Features features_;
};

/// Optional decoder add-ons.
template <typename T>
struct DecodeHooks {
  const DynamicEmbedding<T>* dynamic = nullptr;
  /// Residual layer on the glimpse: q + relu(q W1 + b1) W2 + b2, with
  /// parameters eas.w1, eas.b1, eas.w2, eas.b2.
  ParamSet<T>* eas = nullptr;
};

/// Adds a zero-initialized-output residual layer (w2 = b2 = 0).
template <typename T>
void add_eas_params(ParamSet<T>& params, Index dim, std::uint64_t seed);

template <typename T>
class Policy {
 public:
  Policy(const PolicyConfig& config, std::uint64_t seed);

  const PolicyConfig& config() const { return config_; }
  ParamSet<T>& params() { return params_; }
  const ParamSet<T>& params() const { return params_; }

  /// Batch normalization uses batch statistics (and updates the running ones)
  /// only in training mode.
  bool training = false;

  Var<T> init_embedding(Tape<T>& tape, const InstanceBatch& in);
  EncoderOutput<T> encode(Tape<T>& tape, const Var<T>& embeddings);
  EncoderOutput<T> encode(Tape<T>& tape, const InstanceBatch& in) { return encode(tape, init_embedding(tape, in)); }
  /// q_t, [B, d].
  Var<T> context(Tape<T>& tape, const EncoderOutput<T>& enc, const InstanceBatch& in, const KeyedBatch& state);
  /// Log-probabilities [B, N]; infeasible entries are -inf.
  Var<T> decode_step(Tape<T>& tape, const EncoderOutput<T>& enc, const Var<T>& query, const InstanceBatch& in,
                     const KeyedBatch& state, const DecodeHooks<T>& hooks = {});

 private:
  PolicyConfig config_;
  ParamSet<T> params_;
};

/// Copies values from `source` into `target`. Names and shapes must match
/// exactly; the first offending array is named in ShapeMismatchOnLoad.
template <typename T>
void load_params(ParamSet<T>& target, const ParamSet<T>& source);

// ---- rollout -------------------------------------------------------------------------

enum class DecodeType { Greedy, Sampling };

struct RolloutOptions {
  DecodeType type = DecodeType::Greedy;
  std::uint64_t seed = 0;
  /// Sampling stream per row (defaults to the row index) so that sample k of
  /// an instance draws the same numbers whatever the batch layout.
  std::vector<std::uint64_t> streams;
  const TensorI* first_actions = nullptr;  // [B] forced first action; negative entries are not forced
  const TensorI* actions = nullptr;        // [B, T] teacher forcing
  bool entropy = false;
  bool reward = true;
};

template <typename T>
struct Trajectory {
  TensorI actions;   // [B, T], 0-padded after completion
  Var<T> logprob;    // [B], sum over the row's own steps
  Var<T> entropy;    // [B], mean per-step entropy (when requested)
  TensorF reward;    // [B]
};

template <typename T>
Trajectory<T> rollout(Policy<T>& policy, Tape<T>& tape, const InstanceBatch& in, const RolloutOptions& options = {},
                      const DecodeHooks<T>& hooks = {});

/// Greedy rollout without a recording tape.
TensorF greedy_reward(Policy<float>& policy, const InstanceBatch& in, Index chunk = 1024);

// ---- critic --------------------------------------------------------------------------

/// Value head with its own encoder: mean-pooled node embeddings -> MLP(d -> hidden -> 1).
template <typename T>
class Critic {
 public:
  Critic(const PolicyConfig& config, std::uint64_t seed);

  ParamSet<T>& params() { return params_; }
  const ParamSet<T>& params() const { return params_; }
  bool training = false;

  Var<T> value(Tape<T>& tape, const InstanceBatch& in);  // [B]

 private:
  PolicyConfig config_;
  ParamSet<T> params_;
};

}  // namespace nco
