#include "common.hpp"

namespace nco {
namespace {

using env_detail::can_return;
using env_detail::fits_capacity;
using env_detail::leg;

FeasibilityReport violation(std::string kind, Index step, std::string detail) {
  return FeasibilityReport{false, std::move(kind), step, std::move(detail)};
}

FeasibilityReport check_row(const InstanceBatch& in, Index b, const std::int32_t* a, Index t, bool require_complete) {
  const Index n = in.nodes();
  const float* locs = env_detail::row_locs(in, b);
  std::vector<std::uint8_t> seen(static_cast<std::size_t>(n), 0);
  Index count = 0;
  Index prev = 0;
  bool complete = false;
  const Index customers = in.env == EnvId::TSP ? n : n - 1;
  float used = 0.0f, length = 0.0f, collected = 0.0f;
  for (Index k = 0; k < t; ++k) {
    const Index x = a[k];
    if (complete) {
      if (x != 0) return violation("after_done", k, "action " + std::to_string(x) + " after the route was finished");
      continue;
    }
    if (x < 0 || x >= n) return violation("out_of_range", k, "node " + std::to_string(x));
    const bool depot = in.env != EnvId::TSP && x == 0;
    if (!depot && seen[static_cast<std::size_t>(x)]) return violation("revisit", k, "node " + std::to_string(x));
    switch (in.env) {
      case EnvId::TSP:
        break;
      case EnvId::CVRP:
        if (depot) {
          if (k == 0) return violation("depot_first", k, "route starts with a depot return");
          if (prev == 0) return violation("consecutive_depot", k, "two depot visits in a row");
          used = 0.0f;
          complete = count == customers;
        } else {
          const float d = in.demand[b * n + x];
          if (!fits_capacity(used, d))
            return violation("capacity", k, "load " + std::to_string(used) + " + demand " + std::to_string(d) + " exceeds 1");
          used = used + d;
        }
        break;
      case EnvId::OP: {
        const float limit = in.max_length[b];
        if (depot) {
          if (k == 0)
            for (Index j = 1; j < n; ++j)
              if (can_return(0.0f, leg(locs, 0, j), leg(locs, j, 0), limit))
                return violation("depot_first", k, "node " + std::to_string(j) + " was reachable");
          complete = true;
        } else {
          if (!can_return(length, leg(locs, prev, x), leg(locs, x, 0), limit))
            return violation("length", k, "node " + std::to_string(x) + " cannot be reached and left within the limit");
          length = length + leg(locs, prev, x);
        }
        break;
      }
      case EnvId::PCTSP:
        if (depot) {
          if (k == 0) return violation("depot_first", k, "route starts with a depot return");
          if (collected < in.required_prize[b] && count < customers)
            return violation("prize", k, "collected " + std::to_string(collected) + " below the requirement");
          complete = true;
        } else {
          collected = collected + in.prize[b * n + x];
        }
        break;
      case EnvId::PDP: {
        const Index p = in.num_pairs;
        if (depot) return violation("out_of_range", k, "the depot is not a stop inside the tour");
        if (x > p && !seen[static_cast<std::size_t>(x - p)])
          return violation("precedence", k, "delivery " + std::to_string(x) + " before pickup " + std::to_string(x - p));
        break;
      }
    }
    if (!depot) {
      seen[static_cast<std::size_t>(x)] = 1;
      ++count;
    }
    prev = x;
    if ((in.env == EnvId::TSP || in.env == EnvId::PDP) && count == customers) complete = true;
  }
  if (require_complete && !complete) {
    if (in.env == EnvId::OP || in.env == EnvId::PCTSP) return violation("incomplete", t, "route never returns to the depot");
    if (count < customers) return violation("unvisited", t, std::to_string(customers - count) + " nodes never visited");
    return violation("incomplete", t, "route does not end at the depot");
  }
  return {};
}

}  // namespace

std::vector<FeasibilityReport> check_feasible(const InstanceBatch& in, const TensorI& actions, bool require_complete) {
  if (actions.rank() != 2 || actions.dim(0) != in.batch())
    fail(ErrorCode::ShapeMismatch, "check_feasible expects actions [B, T], got " + to_string(actions.shape()));
  const Index t = actions.dim(1);
  std::vector<FeasibilityReport> out;
  out.reserve(static_cast<std::size_t>(in.batch()));
  for (Index b = 0; b < in.batch(); ++b) out.push_back(check_row(in, b, actions.data() + b * t, t, require_complete));
  return out;
}

}  // namespace nco
