#include <algorithm>
#include <cmath>
#include <map>

#include "common.hpp"
#include "nco/core/philox.hpp"

namespace nco {
namespace {

float table_lookup(const std::map<Index, float>& table, Index n, bool strict, const char* what) {
  auto it = table.find(n);
  if (it != table.end()) return it->second;
  if (strict) fail(ErrorCode::UnsupportedSize, std::string("no ") + what + " entry for size " + std::to_string(n));
  // Nearest entry; ties go to the smaller size.
  auto best = table.begin();
  for (auto e = table.begin(); e != table.end(); ++e)
    if (std::llabs(e->first - n) < std::llabs(best->first - n)) best = e;
  return best->second;
}

const std::map<Index, float> kCapacity{{20, 30.f}, {50, 40.f}, {100, 50.f}};
const std::map<Index, float> kLength{{20, 2.f}, {50, 3.f}, {100, 4.f}};

}  // namespace

float cvrp_capacity(Index n, const GenerateOptions& o) {
  return o.capacity ? *o.capacity : table_lookup(kCapacity, n, o.strict_sizes, "CVRP capacity");
}

float op_max_length(Index n, const GenerateOptions& o) {
  return o.max_length ? *o.max_length : table_lookup(kLength, n, o.strict_sizes, "OP max length");
}

float pctsp_length_scale(Index n, const GenerateOptions& o) {
  return o.length_scale ? *o.length_scale : table_lookup(kLength, n, o.strict_sizes, "PCTSP length scale");
}

InstanceBatch generate(EnvId env, Index n, Index count, std::uint64_t seed, const GenerateOptions& options) {
  return generate_range(env, n, 0, count, seed, options);
}

InstanceBatch generate_range(EnvId env, Index n, Index first, Index count, std::uint64_t seed,
                             const GenerateOptions& options) {
  if (n < 2) fail(ErrorCode::UnsupportedSize, "problem size must be at least 2, got " + std::to_string(n));
  if (env == EnvId::PDP && n % 2 != 0)
    fail(ErrorCode::UnsupportedSize, "PDP size counts pickups and deliveries and must be even, got " + std::to_string(n));
  if (count < 0 || first < 0) fail(ErrorCode::ShapeMismatch, "negative instance count or offset");
  const Index nodes = env == EnvId::TSP ? n : n + 1;
  InstanceBatch out;
  out.env = env;
  out.locs = TensorF({count, nodes, 2});
  float capacity = 0, max_len = 0, scale = 0;
  switch (env) {
    case EnvId::CVRP:
      capacity = cvrp_capacity(n, options);
      out.demand = TensorF({count, nodes});
      break;
    case EnvId::OP:
      max_len = op_max_length(n, options);
      out.prize = TensorF({count, nodes});
      out.max_length = TensorF({count}, max_len);
      break;
    case EnvId::PCTSP:
      scale = pctsp_length_scale(n, options);
      out.prize = TensorF({count, nodes});
      out.penalty = TensorF({count, nodes});
      out.required_prize = TensorF({count}, 1.0f);
      break;
    case EnvId::PDP:
      out.num_pairs = n / 2;
      break;
    case EnvId::TSP:
      break;
  }
  for (Index b = 0; b < count; ++b) {
    PhiloxStream rng(seed, static_cast<std::uint64_t>(first + b));
    float* locs = out.locs.data() + b * nodes * 2;
    for (Index i = 0; i < nodes * 2; ++i) locs[i] = static_cast<float>(rng.uniform());
    if (env == EnvId::CVRP) {
      float* d = out.demand.data() + b * nodes;
      for (Index i = 1; i < nodes; ++i) d[i] = static_cast<float>(rng.integer(1, 10)) / capacity;
    } else if (env == EnvId::OP) {
      float* p = out.prize.data() + b * nodes;
      double far = 0.0;
      for (Index i = 1; i < nodes; ++i) far = std::max(far, env_detail::leg_d(locs, 0, i));
      for (Index i = 1; i < nodes; ++i) {
        const double rel = far > 0 ? env_detail::leg_d(locs, 0, i) / far : 1.0;
        p[i] = static_cast<float>((1.0 + std::floor(99.0 * rel)) / 100.0);
      }
    } else if (env == EnvId::PCTSP) {
      float* p = out.prize.data() + b * nodes;
      float* q = out.penalty.data() + b * nodes;
      // Draws continue on the same stream until the prize total can meet the requirement.
      for (;;) {
        double total = 0.0;
        for (Index i = 1; i < nodes; ++i) {
          p[i] = static_cast<float>(rng.uniform() * 4.0 / static_cast<double>(n));
          total += p[i];
        }
        for (Index i = 1; i < nodes; ++i) q[i] = static_cast<float>(rng.uniform() * 3.0 * scale / static_cast<double>(n));
        if (total >= 1.0) break;
        for (Index i = 0; i < nodes * 2; ++i) locs[i] = static_cast<float>(rng.uniform());
      }
    }
  }
  return out;
}

}  // namespace nco
