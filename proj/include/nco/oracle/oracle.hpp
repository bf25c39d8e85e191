#pragma once

#include <cstdint>
#include <vector>

#include "nco/env/env.hpp"

namespace nco {

struct OracleResult {
  double value = 0.0;                  // objective(): tour cost, or prize for OP
  std::vector<std::int32_t> actions;   // one optimal action sequence
  Index explored = 0;                  // DP states or search-tree nodes visited
};

inline constexpr Index kHeldKarpMaxNodes = 20;

/// Exact TSP by bitmask dynamic programming over row `row` of a TSP batch.
/// The returned tour starts at node 0.
OracleResult held_karp(const InstanceBatch& instances, Index row);

/// Exhaustive search over the environment's own masked action tree. Limits:
/// TSP and PDP up to 9 nodes, CVRP up to 8 customers, OP and PCTSP up to 10
/// nodes (depot included).
OracleResult brute_force(const InstanceBatch& instances, Index row);

}  // namespace nco
