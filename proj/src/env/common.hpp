#pragma once

#include <cmath>

#include "nco/env/env.hpp"

namespace nco::env_detail {

// Single-precision leg length. Mask computation and the feasibility replay
// both go through these helpers so that their comparisons agree bit for bit.
inline float leg(const float* locs, Index i, Index j) {
  const float dx = locs[2 * i] - locs[2 * j];
  const float dy = locs[2 * i + 1] - locs[2 * j + 1];
  return std::sqrt(dx * dx + dy * dy);
}

inline double leg_d(const float* locs, Index i, Index j) {
  const double dx = static_cast<double>(locs[2 * i]) - static_cast<double>(locs[2 * j]);
  const double dy = static_cast<double>(locs[2 * i + 1]) - static_cast<double>(locs[2 * j + 1]);
  return std::sqrt(dx * dx + dy * dy);
}

inline bool fits_capacity(float used, float demand) { return used + demand <= 1.0f + kFeasibilitySlack; }

inline bool can_return(float length, float to_node, float to_depot, float limit) {
  return length + to_node + to_depot <= limit + kFeasibilitySlack;
}

inline const float* row_locs(const InstanceBatch& in, Index b) { return in.locs.data() + b * in.nodes() * 2; }

}  // namespace nco::env_detail
