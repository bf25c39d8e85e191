#include "nco/search/search.hpp"

#include <chrono>
#include <cmath>
#include <cstring>
#include <new>

#include "nco/rl/rl.hpp"
#include "nco/train/optim.hpp"

namespace nco {

void SearchConfig::validate() const {
  if (iterations < 0) fail(ErrorCode::InvalidConfig, "search iterations must be >= 0");
  if (augments < 1) fail(ErrorCode::InvalidConfig, "search augments must be >= 1");
  if (!(lr >= 0) || !(weight_decay >= 0)) fail(ErrorCode::InvalidConfig, "search lr and weight decay must be >= 0");
  if (!(imitation >= 0)) fail(ErrorCode::InvalidConfig, "imitation weight must be >= 0");
}

double search_tape_bytes(const PolicyConfig& c, Index rows, Index nodes) {
  const double r = static_cast<double>(rows), n = static_cast<double>(nodes);
  const double d = static_cast<double>(c.embedding_dim), h = static_cast<double>(c.num_heads);
  const double encoder = static_cast<double>(c.num_layers) * (24 * n * d + 4 * h * n * n + 2 * n * c.hidden_dim);
  const double decoder = 2 * n * (12 * n + 8 * d + 3 * h * n);
  return 4.0 * r * (encoder + decoder + 4 * n * d);
}

std::uint64_t checksum(const ParamSet<float>& params) {
  std::uint64_t h = 1469598103934665603ull;
  auto mix = [&](const void* data, std::size_t bytes) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < bytes; ++i) {
      h ^= p[i];
      h *= 1099511628211ull;
    }
  };
  for (std::size_t i = 0; i < params.size(); ++i) {
    mix(params.name(i).data(), params.name(i).size());
    mix(params[i].value.data(), static_cast<std::size_t>(params[i].value.size()) * sizeof(float));
  }
  return h;
}

Var<float> imitation_loss(Policy<float>& policy, Tape<float>& tape, const InstanceBatch& in, const TensorI& actions,
                          const DecodeHooks<float>& hooks) {
  RolloutOptions forced;
  forced.actions = &actions;
  forced.reward = false;
  const Trajectory<float> tr = rollout(policy, tape, in, forced, hooks);
  return neg(mean(tr.logprob));
}

namespace {

using Route = std::vector<std::int32_t>;

Route row_route(const TensorI& actions, Index row) {
  const Index t = actions.dim(1);
  return Route(actions.data() + row * t, actions.data() + (row + 1) * t);
}

TensorI pack(const std::vector<Route>& routes, Index repeat) {
  Index width = 0;
  for (const auto& r : routes) width = std::max<Index>(width, static_cast<Index>(r.size()));
  TensorI out({static_cast<Index>(routes.size()) * repeat, width}, 0);
  for (std::size_t b = 0; b < routes.size(); ++b)
    for (Index k = 0; k < repeat; ++k)
      std::copy(routes[b].begin(), routes[b].end(), out.data() + (static_cast<Index>(b) * repeat + k) * width);
  return out;
}

double objective_of(EnvId env, float reward) { return maximize(env) ? reward : -static_cast<double>(reward); }

SearchResult run(SearchMethod method, const Policy<float>& base, const InstanceBatch& in, const SearchConfig& cfg,
                 ParamSet<float>* adapted) {
  const Index batch = in.batch(), k = cfg.augments;
  const double bytes = search_tape_bytes(base.config(), batch * k, in.nodes());
  if (bytes > cfg.memory_limit)
    fail(ErrorCode::OutOfMemory, "search over " + std::to_string(batch) + " instances of size " +
                                     std::to_string(in.nodes()) + " needs about " +
                                     std::to_string(static_cast<long long>(bytes / (1 << 20))) + " MiB of tape");

  Policy<float> work = base;
  work.training = false;
  ParamSet<float> extra;
  DecodeHooks<float> hooks;
  if (method == SearchMethod::EAS) {
    for (std::size_t i = 0; i < work.params().size(); ++i) work.params()[i].trainable = false;
    add_eas_params(extra, base.config().embedding_dim, cfg.seed);
    hooks.eas = &extra;
  }
  ParamSet<float>& trained = method == SearchMethod::EAS ? extra : work.params();
  Adam<float> opt(trained, {.lr = cfg.lr, .weight_decay = cfg.weight_decay});

  // incumbent: the zero-shot greedy solution
  std::vector<Route> best(static_cast<std::size_t>(batch));
  std::vector<float> best_reward(static_cast<std::size_t>(batch));
  {
    Tape<float> tape(false);
    const Trajectory<float> g = rollout(work, tape, in, {}, hooks);
    const TensorF r = reward(in, g.actions);
    for (Index b = 0; b < batch; ++b) {
      best[static_cast<std::size_t>(b)] = row_route(g.actions, b);
      best_reward[static_cast<std::size_t>(b)] = r[b];
    }
  }
  SearchResult out;
  auto record = [&] {
    double total = 0.0;
    for (float r : best_reward) total += objective_of(in.env, r);
    out.trace.push_back(batch ? total / static_cast<double>(batch) : 0.0);
  };
  record();

  const InstanceBatch aug = augment(in, augmentation_maps(k, cfg.seed));
  const InstanceBatch original = in.repeat_interleave(k);
  for (Index it = 0; it < cfg.iterations; ++it) {
    Tape<float> tape;
    trained.zero_grad();
    RolloutOptions sample;
    sample.type = DecodeType::Sampling;
    sample.seed = cfg.seed + static_cast<std::uint64_t>(it);
    sample.reward = false;
    const Trajectory<float> tr = rollout(work, tape, aug, sample, hooks);
    // scored on the untransformed instance so the incumbent is exact
    const TensorF r = reward(original, tr.actions);
    Var<float> loss = reinforce_loss(tr.logprob, r, group_mean_baseline(r, k));
    if (method == SearchMethod::EAS && cfg.imitation > 0) {
      const TensorI incumbent = pack(best, k);
      loss = loss + scale(imitation_loss(work, tape, aug, incumbent, hooks), static_cast<float>(cfg.imitation));
    }
    require_finite(loss, "search loss");
    if (loss.requires_grad()) {
      tape.backward(loss);
      opt.step();
    }
    for (Index b = 0; b < batch; ++b)
      for (Index c = b * k; c < (b + 1) * k; ++c)
        if (r[c] > best_reward[static_cast<std::size_t>(b)]) {
          best_reward[static_cast<std::size_t>(b)] = r[c];
          best[static_cast<std::size_t>(b)] = row_route(tr.actions, c);
        }
    record();
  }

  out.actions = pack(best, 1);
  out.reward = TensorF({batch});
  for (Index b = 0; b < batch; ++b) {
    out.reward[b] = best_reward[static_cast<std::size_t>(b)];
    out.cost.push_back(objective_of(in.env, best_reward[static_cast<std::size_t>(b)]));
  }
  if (adapted) {
    *adapted = work.params();
    for (std::size_t i = 0; i < extra.size(); ++i) adapted->add(extra.name(i), extra[i].value);
  }
  return out;
}

SearchResult dispatch(SearchMethod method, const Policy<float>& policy, const InstanceBatch& in,
                      const SearchConfig& cfg, ParamSet<float>* adapted) {
  cfg.validate();
  const auto t0 = std::chrono::steady_clock::now();
  SearchResult out;
  try {
    if (!cfg.per_instance) {
      out = run(method, policy, in, cfg, adapted);
    } else {
      std::vector<SearchResult> parts;
      for (Index b = 0; b < in.batch(); ++b) parts.push_back(run(method, policy, in.take({b}), cfg, nullptr));
      std::vector<Route> routes;
      out.reward = TensorF({in.batch()});
      out.trace.assign(static_cast<std::size_t>(cfg.iterations + 1), 0.0);
      for (Index b = 0; b < in.batch(); ++b) {
        const SearchResult& p = parts[static_cast<std::size_t>(b)];
        routes.push_back(row_route(p.actions, 0));
        out.reward[b] = p.reward[0];
        out.cost.push_back(p.cost[0]);
        for (std::size_t i = 0; i < out.trace.size(); ++i)
          out.trace[i] += p.trace[i] / static_cast<double>(in.batch());
      }
      out.actions = pack(routes, 1);
    }
  } catch (const std::bad_alloc&) {
    fail(ErrorCode::OutOfMemory, "search ran out of memory on " + std::to_string(in.batch()) + " instances");
  }
  out.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return out;
}

}  // namespace

SearchResult active_search(const Policy<float>& policy, const InstanceBatch& in, const SearchConfig& config,
                           ParamSet<float>* adapted) {
  return dispatch(SearchMethod::ActiveSearch, policy, in, config, adapted);
}

SearchResult eas_lay(const Policy<float>& policy, const InstanceBatch& in, const SearchConfig& config,
                     ParamSet<float>* adapted) {
  return dispatch(SearchMethod::EAS, policy, in, config, adapted);
}

}  // namespace nco
