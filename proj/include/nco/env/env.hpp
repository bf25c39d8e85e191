#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "nco/tensor/tensor.hpp"

namespace nco {

enum class EnvId { TSP, CVRP, OP, PCTSP, PDP };

EnvId parse_env(std::string_view name);
std::string_view env_name(EnvId env);

/// Static problem data, batch-major. Node 0 is the depot for every problem
/// except TSP. Fields that a problem does not use stay empty.
///
///   TSP    N = n            CVRP/OP/PCTSP  N = n + 1        PDP  N = 2 * pairs + 1
///
/// PDP pickup i (1 <= i <= pairs) pairs with delivery i + pairs.
struct InstanceBatch {
  EnvId env = EnvId::TSP;
  TensorF locs;            // [B, N, 2]
  TensorF demand;          // [B, N]   CVRP, divided by vehicle capacity
  TensorF prize;           // [B, N]   OP, PCTSP
  TensorF penalty;         // [B, N]   PCTSP
  TensorF max_length;      // [B]      OP
  TensorF required_prize;  // [B]      PCTSP
  Index num_pairs = 0;     // PDP

  Index batch() const { return locs.rank() == 0 ? 0 : locs.dim(0); }
  Index nodes() const { return locs.dim(1); }

  /// Rows in the given order; repeats allowed.
  InstanceBatch take(const std::vector<Index>& rows) const;
  /// Each instance repeated k times consecutively (instance-major groups).
  InstanceBatch repeat_interleave(Index k) const;

  friend bool operator==(const InstanceBatch& a, const InstanceBatch& b);
};

/// Concatenation along the batch axis; all parts must share env and size.
InstanceBatch concat_batches(const std::vector<InstanceBatch>& parts);

/// Constants that the generator looks up by problem size.
struct GenerateOptions {
  std::optional<float> capacity;       // CVRP demand divisor
  std::optional<float> max_length;     // OP
  std::optional<float> length_scale;   // PCTSP penalty scale
  bool strict_sizes = false;           // unknown sizes raise instead of using the nearest entry
};

/// n counts nodes for TSP, customers for CVRP/OP/PCTSP, and non-depot nodes
/// (2 * pairs) for PDP. Instance b depends only on (env, n, seed, b), so a
/// smaller count yields a prefix of a larger one.
InstanceBatch generate(EnvId env, Index n, Index count, std::uint64_t seed, const GenerateOptions& options = {});
/// Instances first .. first + count - 1 of the same sequence.
InstanceBatch generate_range(EnvId env, Index n, Index first, Index count, std::uint64_t seed,
                             const GenerateOptions& options = {});

float cvrp_capacity(Index n, const GenerateOptions& options = {});
float op_max_length(Index n, const GenerateOptions& options = {});
float pctsp_length_scale(Index n, const GenerateOptions& options = {});

// ---- keyed state -------------------------------------------------------------

/// String-keyed arrays sharing a leading batch dimension.
class KeyedBatch {
 public:
  using Array = std::variant<TensorF, TensorI, TensorB>;

  template <typename T>
  const Tensor<T>& get(const std::string& key) const {
    auto it = data_.find(key);
    if (it == data_.end()) fail(ErrorCode::UnknownKey, "state has no key " + key);
    const auto* t = std::get_if<Tensor<T>>(&it->second);
    if (!t) fail(ErrorCode::TypeError, "state key " + key + " has a different dtype");
    return *t;
  }
  template <typename T>
  Tensor<T>& get(const std::string& key) {
    return const_cast<Tensor<T>&>(static_cast<const KeyedBatch&>(*this).get<T>(key));
  }
  template <typename T>
  void set(const std::string& key, Tensor<T> value) {
    data_[key] = std::move(value);
  }
  bool contains(const std::string& key) const { return data_.count(key) > 0; }
  const std::map<std::string, Array>& items() const { return data_; }

  const TensorB& mask() const { return get<std::uint8_t>("action_mask"); }
  const TensorB& done() const { return get<std::uint8_t>("done"); }
  const TensorI& current() const { return get<std::int32_t>("current_node"); }
  bool all_done() const;
  /// Rows of every array in the given order.
  KeyedBatch take(const std::vector<Index>& rows) const;

  friend bool operator==(const KeyedBatch& a, const KeyedBatch& b) { return a.data_ == b.data_; }

 private:
  std::map<std::string, Array> data_;
};

// ---- environment dynamics ----------------------------------------------------------

inline constexpr float kFeasibilitySlack = 1e-6f;

/// Upper bound on the number of construction steps.
Index max_steps(const InstanceBatch& instances);

/// Admissible forced first actions for multistart decoding.
std::vector<Index> start_actions(const InstanceBatch& instances);

KeyedBatch reset(const InstanceBatch& instances);

/// Pure transition. Rows that are already done accept only the padding
/// action 0 and stay unchanged.
KeyedBatch step(const InstanceBatch& instances, const KeyedBatch& state, const TensorI& actions);

/// Reward of complete action sequences [B, T] (padding 0 after completion),
/// recomputed from scratch: negative cost, or collected prize for OP.
TensorF reward(const InstanceBatch& instances, const TensorI& actions);

bool maximize(EnvId env);

/// Objective of one complete route in double precision: tour cost for the
/// minimization problems, collected prize for OP. The reward is its negation
/// (OP: the value itself).
double objective(const InstanceBatch& instances, Index row, const std::int32_t* actions, Index length);

struct FeasibilityReport {
  bool ok = true;
  std::string kind;  // revisit, capacity, length, prize, precedence, unvisited, incomplete,
                     // depot_first, consecutive_depot, out_of_range, after_done
  Index step = -1;
  std::string detail;
};

/// Rule-based replay that does not consult the action mask. With
/// require_complete=false a valid unfinished prefix is accepted.
std::vector<FeasibilityReport> check_feasible(const InstanceBatch& instances, const TensorI& actions,
                                              bool require_complete = true);

// ---- benchmark files ----------------------------------------------------------------

struct ParsedInstance {
  std::string name;
  InstanceBatch instance;  // B = 1, coordinates scaled into the unit square
  TensorD original;        // [N, 2] coordinates as written in the file, depot first
  double scale = 1.0;      // original distance = scale * unit-square distance
  double capacity = 1.0;   // CVRP only
};

ParsedInstance parse_tsplib(const std::string& text);
ParsedInstance parse_cvrplib(const std::string& text);

/// TOUR_SECTION of a .tour file as 0-based node indices.
std::vector<std::int32_t> parse_tour(const std::string& text);

/// Route cost in the file's convention: nearest-integer EUC_2D edge weights
/// on the original coordinates.
double tsplib_cost(const ParsedInstance& parsed, const std::int32_t* actions, Index length);

}  // namespace nco
