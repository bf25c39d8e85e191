#pragma once

#include <cstdint>
#include <vector>

#include "nco/decode/decode.hpp"

namespace nco {

enum class SearchMethod { ActiveSearch, EAS };

struct SearchConfig {
  Index iterations = 200;
  Index augments = 8;  // dihedral copies sampled per iteration
  double lr = 2.6e-4;
  double weight_decay = 1e-6;
  double imitation = 0.013;  // EAS only
  std::uint64_t seed = 0;
  bool per_instance = false;  // one adapted copy per instance instead of per batch
  double memory_limit = 3.0 * (1ull << 30);  // bytes; estimated tape size above this raises OutOfMemory

  static SearchConfig active_search() { return {}; }
  static SearchConfig eas() {
    SearchConfig c;
    c.lr = 0.0041;
    return c;
  }
  void validate() const;
};

struct SearchResult {
  TensorI actions;            // [B, T] best-so-far trajectory
  TensorF reward;             // [B] its reward on the original instance
  std::vector<double> cost;   // [B] objective
  std::vector<double> trace;  // mean best-so-far objective after each iteration (index 0: zero-shot)
  double seconds = 0.0;
};

/// Fine-tunes a copy of every policy parameter. Each iteration samples one
/// rollout per dihedral copy (rollout seed = config.seed + iteration) and takes
/// a REINFORCE step against the per-instance mean reward over the copies.
/// The incumbent starts from the greedy solution. `adapted` receives the final
/// parameters when given (batch mode only).
SearchResult active_search(const Policy<float>& policy, const InstanceBatch& in, const SearchConfig& config,
                           ParamSet<float>* adapted = nullptr);

/// Adds a residual layer to the glimpse (w2 = 0 at start) and trains only that
/// layer; the loss adds config.imitation times the negative log-likelihood of
/// the incumbent on every copy. `adapted` receives the frozen policy
/// parameters followed by the trained layer (batch mode only).
SearchResult eas_lay(const Policy<float>& policy, const InstanceBatch& in, const SearchConfig& config,
                     ParamSet<float>* adapted = nullptr);

/// Mean over rows of -log p(actions) under teacher forcing.
Var<float> imitation_loss(Policy<float>& policy, Tape<float>& tape, const InstanceBatch& in, const TensorI& actions,
                          const DecodeHooks<float>& hooks = {});

/// Rough size in bytes of the recorded tape for one search iteration.
double search_tape_bytes(const PolicyConfig& config, Index rows, Index nodes);

/// FNV-1a over names and raw values.
std::uint64_t checksum(const ParamSet<float>& params);

}  // namespace nco
