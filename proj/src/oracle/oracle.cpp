#include "nco/oracle/oracle.hpp"

#include <limits>

#include "../env/common.hpp"

namespace nco {

OracleResult held_karp(const InstanceBatch& in, Index row) {
  if (in.env != EnvId::TSP) fail(ErrorCode::UnknownEnv, "held_karp solves TSP only");
  const Index n = in.nodes();
  if (n > kHeldKarpMaxNodes)
    fail(ErrorCode::TooLarge, "held_karp supports up to " + std::to_string(kHeldKarpMaxNodes) + " nodes, got " + std::to_string(n));
  const float* locs = env_detail::row_locs(in, row);
  OracleResult out;
  if (n == 1) {
    out.actions = {0};
    return out;
  }
  // Node k (1..n-1) is bit k-1. dp[S][j]: shortest path 0 -> ... -> j covering S, j in S.
  const Index m = n - 1;
  const std::size_t full = std::size_t{1} << m;
  std::vector<double> dist(static_cast<std::size_t>(n * n));
  for (Index i = 0; i < n; ++i)
    for (Index j = 0; j < n; ++j) dist[static_cast<std::size_t>(i * n + j)] = env_detail::leg_d(locs, i, j);
  const double inf = std::numeric_limits<double>::infinity();
  std::vector<double> dp(full * static_cast<std::size_t>(m), inf);
  std::vector<std::int8_t> parent(full * static_cast<std::size_t>(m), -1);
  auto at = [m](std::size_t s, Index j) { return s * static_cast<std::size_t>(m) + static_cast<std::size_t>(j); };
  for (Index j = 0; j < m; ++j) dp[at(std::size_t{1} << j, j)] = dist[static_cast<std::size_t>(j + 1)];
  for (std::size_t s = 1; s < full; ++s) {
    for (Index j = 0; j < m; ++j) {
      if (!(s >> j & 1)) continue;
      const double base = dp[at(s, j)];
      if (base == inf) continue;
      ++out.explored;
      for (Index k = 0; k < m; ++k) {
        if (s >> k & 1) continue;
        const std::size_t t = s | (std::size_t{1} << k);
        const double cand = base + dist[static_cast<std::size_t>((j + 1) * n + k + 1)];
        if (cand < dp[at(t, k)]) {
          dp[at(t, k)] = cand;
          parent[at(t, k)] = static_cast<std::int8_t>(j);
        }
      }
    }
  }
  double best = inf;
  Index last = 0;
  for (Index j = 0; j < m; ++j) {
    const double c = dp[at(full - 1, j)] + dist[static_cast<std::size_t>((j + 1) * n)];
    if (c < best) {
      best = c;
      last = j;
    }
  }
  out.value = best;
  std::vector<std::int32_t> rev;
  std::size_t s = full - 1;
  for (Index j = last; j >= 0;) {
    rev.push_back(static_cast<std::int32_t>(j + 1));
    const Index p = parent[at(s, j)];
    s &= ~(std::size_t{1} << j);
    j = p;
  }
  out.actions.push_back(0);
  out.actions.insert(out.actions.end(), rev.rbegin(), rev.rend());
  return out;
}

OracleResult brute_force(const InstanceBatch& in, Index row) {
  const Index n = in.nodes();
  const bool too_large = ((in.env == EnvId::TSP || in.env == EnvId::PDP) && n > 9) ||
                         (in.env == EnvId::CVRP && n - 1 > 8) ||
                         ((in.env == EnvId::OP || in.env == EnvId::PCTSP) && n > 10);
  if (too_large) fail(ErrorCode::TooLarge, std::string("brute force limit exceeded for ") + std::string(env_name(in.env)) +
                                               " with " + std::to_string(n) + " nodes");
  constexpr Index kChunk = 65536;
  const Index horizon = max_steps(in);
  const bool maxi = maximize(in.env);
  OracleResult out;
  out.value = maxi ? -std::numeric_limits<double>::infinity() : std::numeric_limits<double>::infinity();

  struct Frontier {
    KeyedBatch state;
    std::vector<std::vector<std::int32_t>> paths;
  };
  const InstanceBatch single = in.take({row});
  std::vector<Frontier> stack;
  stack.push_back({reset(single), {{}}});
  // Chunks are expanded last-in first-out, so peak memory stays bounded while
  // the visiting order remains deterministic.
  while (!stack.empty()) {
    Frontier f = std::move(stack.back());
    stack.pop_back();
    const Index rows = static_cast<Index>(f.paths.size());
    const TensorB& mask = f.state.mask();
    const TensorB& done = f.state.done();
    std::vector<Index> parents;
    std::vector<std::int32_t> acts;
    for (Index r = 0; r < rows; ++r) {
      ++out.explored;
      const auto& path = f.paths[static_cast<std::size_t>(r)];
      if (done[r] || static_cast<Index>(path.size()) >= horizon) {
        if (!done[r]) fail(ErrorCode::TooLarge, "search exceeded the step horizon");
        const double v = objective(single, 0, path.data(), static_cast<Index>(path.size()));
        if (maxi ? v > out.value : v < out.value) {
          out.value = v;
          out.actions = path;
        }
        continue;
      }
      for (Index a = 0; a < n; ++a)
        if (mask[r * n + a]) {
          parents.push_back(r);
          acts.push_back(static_cast<std::int32_t>(a));
        }
    }
    const Index children = static_cast<Index>(parents.size());
    std::vector<Frontier> next;
    for (Index lo = 0; lo < children; lo += kChunk) {
      const Index hi = std::min(children, lo + kChunk);
      std::vector<Index> rows_in(parents.begin() + lo, parents.begin() + hi);
      TensorI a({hi - lo});
      Frontier child;
      for (Index k = lo; k < hi; ++k) {
        a[k - lo] = acts[static_cast<std::size_t>(k)];
        auto p = f.paths[static_cast<std::size_t>(parents[static_cast<std::size_t>(k)])];
        p.push_back(acts[static_cast<std::size_t>(k)]);
        child.paths.push_back(std::move(p));
      }
      std::vector<Index> same(static_cast<std::size_t>(hi - lo), 0);
      child.state = step(single.take(same), f.state.take(rows_in), a);
      next.push_back(std::move(child));
    }
    for (auto it = next.rbegin(); it != next.rend(); ++it) stack.push_back(std::move(*it));
  }
  return out;
}

}  // namespace nco
