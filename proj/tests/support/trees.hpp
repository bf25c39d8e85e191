#pragma once

#include <algorithm>
#include <functional>
#include <limits>
#include <numeric>
#include <random>
#include <set>
#include <vector>

#include "nco/env/env.hpp"

// Exhaustive walkers over small instances, used as independent references
// for the environment masks.
namespace nco::check {

using Seq = std::vector<std::int32_t>;

inline TensorI as_actions(const Seq& s) {
  TensorI t({1, static_cast<Index>(s.size())});
  for (std::size_t i = 0; i < s.size(); ++i) t[static_cast<Index>(i)] = s[i];
  return t;
}

inline bool accepts(const InstanceBatch& one, const Seq& s, bool complete) {
  return check_feasible(one, as_actions(s), complete)[0].ok;
}

struct MaskWalk {
  std::set<Seq> complete;
  Index states = 0;
  Index mismatches = 0;
};

/// Walks every state reachable through the action mask of a single instance
/// and compares each mask entry with the replay checker on the extended prefix.
inline MaskWalk walk_masks(const InstanceBatch& one) {
  MaskWalk w;
  const Index n = one.nodes();
  std::function<void(const KeyedBatch&, Seq&)> rec = [&](const KeyedBatch& s, Seq& prefix) {
    ++w.states;
    if (s.done()[0]) {
      w.complete.insert(prefix);
      return;
    }
    for (Index a = 0; a < n; ++a) {
      prefix.push_back(static_cast<std::int32_t>(a));
      const bool masked_ok = s.mask()[a] != 0;
      if (masked_ok != accepts(one, prefix, false)) ++w.mismatches;
      if (masked_ok) rec(step(one, s, TensorI({1}, {static_cast<std::int32_t>(a)})), prefix);
      prefix.pop_back();
    }
  };
  Seq prefix;
  rec(reset(one), prefix);
  return w;
}

/// Complete sequences found by the replay checker alone: extend any accepted
/// prefix by every node, stop at the first complete acceptance.
inline std::set<Seq> checker_solutions(const InstanceBatch& one) {
  std::set<Seq> out;
  const Index n = one.nodes();
  const Index horizon = max_steps(one);
  std::function<void(Seq&)> rec = [&](Seq& prefix) {
    if (!prefix.empty() && accepts(one, prefix, true)) {
      out.insert(prefix);
      return;
    }
    if (static_cast<Index>(prefix.size()) >= horizon) return;
    for (Index a = 0; a < n; ++a) {
      prefix.push_back(static_cast<std::int32_t>(a));
      if (accepts(one, prefix, false)) rec(prefix);
      prefix.pop_back();
    }
  };
  Seq prefix;
  rec(prefix);
  return out;
}

/// Minimum closed-tour length over all permutations fixing node 0.
inline double permutation_optimum(const InstanceBatch& tsp, Index row) {
  const Index n = tsp.nodes();
  Seq perm(static_cast<std::size_t>(n));
  std::iota(perm.begin(), perm.end(), 0);
  double best = std::numeric_limits<double>::infinity();
  do {
    best = std::min(best, objective(tsp, row, perm.data(), n));
  } while (std::next_permutation(perm.begin() + 1, perm.end()));
  return best;
}

}  // namespace nco::check

namespace nco::check {

/// Uniformly random feasible actions until every row is done; [B, max_steps].
inline TensorI random_rollout(const InstanceBatch& in, std::uint64_t seed) {
  const Index b = in.batch(), n = in.nodes(), horizon = max_steps(in);
  TensorI actions({b, horizon});
  KeyedBatch s = reset(in);
  std::mt19937_64 rng(seed);
  for (Index t = 0; t < horizon && !s.all_done(); ++t) {
    TensorI a({b});
    for (Index r = 0; r < b; ++r) {
      std::vector<std::int32_t> options;
      for (Index j = 0; j < n; ++j)
        if (s.mask()[r * n + j]) options.push_back(static_cast<std::int32_t>(j));
      a[r] = options[rng() % options.size()];
      actions[r * horizon + t] = a[r];
    }
    s = step(in, s, a);
  }
  return actions;
}

}  // namespace nco::check
