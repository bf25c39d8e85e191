#include <algorithm>

#include "common.hpp"

namespace nco {
namespace {

using env_detail::can_return;
using env_detail::fits_capacity;
using env_detail::leg;
using env_detail::row_locs;

bool all_visited(const std::uint8_t* visited, Index from, Index to) {
  for (Index j = from; j < to; ++j)
    if (!visited[j]) return false;
  return true;
}

// Writes the action mask of one row from its state.
void fill_mask(const InstanceBatch& in, KeyedBatch& s, Index b) {
  const Index n = in.nodes();
  std::uint8_t* m = s.get<std::uint8_t>("action_mask").data() + b * n;
  std::fill(m, m + n, std::uint8_t{0});
  if (s.get<std::uint8_t>("done")[b]) {
    m[0] = 1;
    return;
  }
  const std::uint8_t* visited = s.get<std::uint8_t>("visited").data() + b * n;
  const Index cur = s.get<std::int32_t>("current_node")[b];
  const Index step = s.get<std::int32_t>("i")[b];
  const float* locs = row_locs(in, b);
  switch (in.env) {
    case EnvId::TSP:
      for (Index j = 0; j < n; ++j) m[j] = !visited[j];
      break;
    case EnvId::CVRP: {
      const float used = s.get<float>("used_capacity")[b];
      const float* demand = in.demand.data() + b * n;
      for (Index j = 1; j < n; ++j) m[j] = !visited[j] && fits_capacity(used, demand[j]);
      m[0] = cur != 0;
      break;
    }
    case EnvId::OP: {
      const float length = s.get<float>("tour_length")[b];
      const float limit = in.max_length[b];
      bool any = false;
      for (Index j = 1; j < n; ++j) {
        m[j] = !visited[j] && can_return(length, leg(locs, cur, j), leg(locs, j, 0), limit);
        any = any || m[j];
      }
      // Returning immediately is allowed only when no customer is reachable.
      m[0] = step > 0 || !any;
      break;
    }
    case EnvId::PCTSP: {
      for (Index j = 1; j < n; ++j) m[j] = !visited[j];
      const bool enough = s.get<float>("collected_prize")[b] >= in.required_prize[b];
      m[0] = step > 0 && (enough || all_visited(visited, 1, n));
      break;
    }
    case EnvId::PDP: {
      const Index p = in.num_pairs;
      for (Index j = 1; j <= p; ++j) m[j] = !visited[j];
      for (Index j = p + 1; j <= 2 * p; ++j) m[j] = !visited[j] && visited[j - p];
      break;
    }
  }
}

}  // namespace

Index max_steps(const InstanceBatch& in) {
  const Index n = in.nodes();
  switch (in.env) {
    case EnvId::TSP: return n;
    case EnvId::CVRP: return 2 * (n - 1);
    case EnvId::OP:
    case EnvId::PCTSP: return n;
    case EnvId::PDP: return n - 1;
  }
  return n;
}

std::vector<Index> start_actions(const InstanceBatch& in) {
  std::vector<Index> out;
  const Index n = in.nodes();
  const Index first = in.env == EnvId::TSP ? 0 : 1;
  const Index last = in.env == EnvId::PDP ? in.num_pairs : n - 1;
  for (Index j = first; j <= last; ++j) out.push_back(j);
  return out;
}

KeyedBatch reset(const InstanceBatch& in) {
  const Index b = in.batch(), n = in.nodes();
  KeyedBatch s;
  s.set("current_node", TensorI({b}));
  s.set("first_node", TensorI({b}));
  s.set("i", TensorI({b}));
  s.set("done", TensorB({b}));
  s.set("visited", TensorB({b, n}));
  s.set("action_mask", TensorB({b, n}));
  s.set("tour_length", TensorF({b}));
  switch (in.env) {
    case EnvId::CVRP: s.set("used_capacity", TensorF({b})); break;
    case EnvId::OP:
    case EnvId::PCTSP: s.set("collected_prize", TensorF({b})); break;
    case EnvId::PDP: s.set("to_deliver", TensorB({b, in.num_pairs})); break;
    case EnvId::TSP: break;
  }
  for (Index r = 0; r < b; ++r) fill_mask(in, s, r);
  return s;
}

KeyedBatch step(const InstanceBatch& in, const KeyedBatch& state, const TensorI& actions) {
  const Index batch = in.batch(), n = in.nodes();
  if (actions.size() != batch)
    fail(ErrorCode::ShapeMismatch, "step got " + std::to_string(actions.size()) + " actions for batch " + std::to_string(batch));
  KeyedBatch s = state;
  auto& cur = s.get<std::int32_t>("current_node");
  auto& first = s.get<std::int32_t>("first_node");
  auto& counter = s.get<std::int32_t>("i");
  auto& done = s.get<std::uint8_t>("done");
  auto& visited = s.get<std::uint8_t>("visited");
  auto& length = s.get<float>("tour_length");
  const TensorB& mask = state.mask();
  for (Index b = 0; b < batch; ++b) {
    const Index a = actions[b];
    if (done[b]) {
      if (a != 0)
        fail(ErrorCode::StepOnDone, "row " + std::to_string(b) + " is finished but received action " + std::to_string(a));
      continue;
    }
    if (a < 0 || a >= n || !mask[b * n + a])
      fail(ErrorCode::InfeasibleAction, "row " + std::to_string(b) + ", action " + std::to_string(a));
    const float* locs = row_locs(in, b);
    std::uint8_t* vis = visited.data() + b * n;
    if (counter[b] == 0) first[b] = static_cast<std::int32_t>(a);
    if (in.env != EnvId::TSP || counter[b] > 0) length[b] = length[b] + leg(locs, cur[b], a);
    switch (in.env) {
      case EnvId::TSP:
        vis[a] = 1;
        done[b] = all_visited(vis, 0, n);
        break;
      case EnvId::CVRP: {
        auto& used = s.get<float>("used_capacity")[b];
        if (a == 0) {
          used = 0.0f;
        } else {
          used = used + in.demand[b * n + a];
          vis[a] = 1;
        }
        done[b] = a == 0 && all_visited(vis, 1, n);
        break;
      }
      case EnvId::OP:
      case EnvId::PCTSP:
        if (a == 0) {
          done[b] = 1;
        } else {
          vis[a] = 1;
          auto& got = s.get<float>("collected_prize")[b];
          got = got + in.prize[b * n + a];
        }
        break;
      case EnvId::PDP: {
        vis[a] = 1;
        const Index p = in.num_pairs;
        std::uint8_t* pending = s.get<std::uint8_t>("to_deliver").data() + b * p;
        if (a <= p) pending[a - 1] = 1;
        else pending[a - p - 1] = 0;
        done[b] = all_visited(vis, 1, n);
        break;
      }
    }
    cur[b] = static_cast<std::int32_t>(a);
    counter[b] += 1;
    fill_mask(in, s, b);
  }
  return s;
}

double objective(const InstanceBatch& in, Index row, const std::int32_t* actions, Index length) {
  const float* locs = row_locs(in, row);
  const Index n = in.nodes();
  double total = 0.0;
  if (in.env == EnvId::TSP) {
    const Index t = std::min(length, n);
    for (Index k = 1; k < t; ++k) total += env_detail::leg_d(locs, actions[k - 1], actions[k]);
    if (t > 1) total += env_detail::leg_d(locs, actions[t - 1], actions[0]);
    return total;
  }
  if (in.env == EnvId::OP) {
    for (Index k = 0; k < length && actions[k] != 0; ++k) total += static_cast<double>(in.prize[row * n + actions[k]]);
    return total;
  }
  Index prev = 0;
  std::vector<std::uint8_t> seen(static_cast<std::size_t>(n), 0);
  for (Index k = 0; k < length; ++k) {
    total += env_detail::leg_d(locs, prev, actions[k]);
    prev = actions[k];
    seen[static_cast<std::size_t>(prev)] = 1;
    if (in.env == EnvId::PCTSP && prev == 0) break;
  }
  total += env_detail::leg_d(locs, prev, 0);
  if (in.env == EnvId::PCTSP)
    for (Index j = 1; j < n; ++j)
      if (!seen[static_cast<std::size_t>(j)]) total += static_cast<double>(in.penalty[row * n + j]);
  return total;
}

TensorF reward(const InstanceBatch& in, const TensorI& actions) {
  if (actions.rank() != 2 || actions.dim(0) != in.batch())
    fail(ErrorCode::ShapeMismatch, "reward expects actions [B, T], got " + to_string(actions.shape()));
  const auto reports = check_feasible(in, actions, true);
  for (std::size_t b = 0; b < reports.size(); ++b)
    if (!reports[b].ok)
      fail(ErrorCode::InfeasibleSolution, "row " + std::to_string(b) + ": " + reports[b].kind + " at step " +
                                              std::to_string(reports[b].step) + " (" + reports[b].detail + ")");
  const Index t = actions.dim(1);
  TensorF out({in.batch()});
  const double sign = maximize(in.env) ? 1.0 : -1.0;
  for (Index b = 0; b < in.batch(); ++b) out[b] = static_cast<float>(sign * objective(in, b, actions.data() + b * t, t));
  return out;
}

}  // namespace nco
