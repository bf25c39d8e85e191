#include <gtest/gtest.h>

#include <cmath>

#include "nco/oracle/oracle.hpp"
#include "nco/search/search.hpp"

using namespace nco;

namespace {

PolicyConfig small(EnvId env) {
  PolicyConfig c;
  c.env = env;
  c.embedding_dim = 16;
  c.hidden_dim = 32;
  c.num_heads = 2;
  c.num_layers = 2;
  return c;
}

const EnvId kAll[] = {EnvId::TSP, EnvId::CVRP, EnvId::OP, EnvId::PCTSP, EnvId::PDP};

SearchConfig quick(SearchMethod method, Index iterations) {
  SearchConfig c = method == SearchMethod::EAS ? SearchConfig::eas() : SearchConfig::active_search();
  c.iterations = iterations;
  c.seed = 17;
  return c;
}

SearchResult run(SearchMethod method, const Policy<float>& p, const InstanceBatch& in, const SearchConfig& c) {
  return method == SearchMethod::EAS ? eas_lay(p, in, c) : active_search(p, in, c);
}

// best of the greedy solution and every sampled rollout of a fixed policy
std::vector<float> frozen_best(Policy<float>& policy, const InstanceBatch& in, const SearchConfig& c) {
  std::vector<float> best(static_cast<std::size_t>(in.batch()));
  const TensorF g = reward(in, decode(policy, in, DecodeScheme::parse("greedy")).actions);
  for (Index b = 0; b < in.batch(); ++b) best[b] = g[b];
  const InstanceBatch aug = augment(in, augmentation_maps(c.augments, c.seed));
  const InstanceBatch orig = in.repeat_interleave(c.augments);
  for (Index it = 0; it < c.iterations; ++it) {
    Tape<float> tape(false);
    RolloutOptions o;
    o.type = DecodeType::Sampling;
    o.seed = c.seed + static_cast<std::uint64_t>(it);
    const TensorF r = reward(orig, rollout(policy, tape, aug, o).actions);
    for (Index row = 0; row < r.size(); ++row) best[row / c.augments] = std::max(best[row / c.augments], r[row]);
  }
  return best;
}

}  // namespace

TEST(Search, ZeroIterationsIsGreedy) {
  for (EnvId env : kAll) {
    const InstanceBatch in = generate(env, 10, 6, 2);
    Policy<float> policy(small(env), 5);
    const DecodeResult g = decode(policy, in, DecodeScheme::parse("greedy"));
    for (SearchMethod m : {SearchMethod::ActiveSearch, SearchMethod::EAS}) {
      const SearchResult s = run(m, policy, in, quick(m, 0));
      EXPECT_EQ(s.actions, g.actions) << env_name(env);
      for (Index b = 0; b < in.batch(); ++b) EXPECT_NEAR(s.cost[b], g.cost[b], 1e-5);
      ASSERT_EQ(s.trace.size(), 1u);
    }
  }
}

TEST(Search, MonotoneFeasibleAndBaseUntouched) {
  for (EnvId env : kAll) {
    const InstanceBatch in = generate(env, 10, 5, 3);
    Policy<float> policy(small(env), 6);
    const std::uint64_t before = checksum(policy.params());
    for (SearchMethod m : {SearchMethod::ActiveSearch, SearchMethod::EAS}) {
      const SearchResult s = run(m, policy, in, quick(m, 12));
      ASSERT_EQ(s.trace.size(), 13u);
      for (std::size_t i = 1; i < s.trace.size(); ++i) {
        if (maximize(env))
          EXPECT_GE(s.trace[i], s.trace[i - 1]);
        else
          EXPECT_LE(s.trace[i], s.trace[i - 1]);
      }
      for (const auto& rep : check_feasible(in, s.actions)) EXPECT_TRUE(rep.ok) << env_name(env) << " " << rep.kind;
      const TensorF r = reward(in, s.actions);
      for (Index b = 0; b < in.batch(); ++b) EXPECT_EQ(r[b], s.reward[b]);
      EXPECT_EQ(checksum(policy.params()), before);
    }
  }
}

TEST(Search, ActiveSearchAdaptsParameters) {
  const InstanceBatch in = generate(EnvId::TSP, 8, 4, 3);
  Policy<float> policy(small(EnvId::TSP), 6);
  ParamSet<float> adapted;
  active_search(policy, in, quick(SearchMethod::ActiveSearch, 3), &adapted);
  ASSERT_EQ(adapted.size(), policy.params().size());
  EXPECT_NE(checksum(adapted), checksum(policy.params()));
  Index changed = 0;
  for (std::size_t i = 0; i < adapted.size(); ++i)
    if (!(adapted[i].value == policy.params()[i].value)) ++changed;
  EXPECT_GT(changed, static_cast<Index>(policy.params().size()) / 2);
}

TEST(Search, FrozenSearchIsBestOfSamples) {
  // lr 0 and no imitation: both methods reduce to the best of greedy and the sampled rollouts
  for (EnvId env : {EnvId::TSP, EnvId::CVRP, EnvId::OP}) {
    const InstanceBatch in = generate(env, 8, 4, 9);
    Policy<float> policy(small(env), 2);
    for (SearchMethod m : {SearchMethod::ActiveSearch, SearchMethod::EAS}) {
      SearchConfig c = quick(m, 5);
      c.lr = 0.0;
      c.imitation = 0.0;
      const SearchResult s = run(m, policy, in, c);
      const std::vector<float> expect = frozen_best(policy, in, c);
      for (Index b = 0; b < in.batch(); ++b) EXPECT_EQ(s.reward[b], expect[b]) << env_name(env);
    }
  }
}

TEST(Search, ImitationMatchesStepwiseLikelihood) {
  const InstanceBatch in = generate(EnvId::CVRP, 7, 3, 4);
  Policy<float> policy(small(EnvId::CVRP), 8);
  Tape<float> t0(false);
  RolloutOptions o;
  o.type = DecodeType::Sampling;
  const TensorI actions = rollout(policy, t0, in, o).actions;

  Tape<float> tape(false);
  const double loss = imitation_loss(policy, tape, in, actions).value()[0];

  // step-by-step teacher forcing in double precision
  Policy<double> ref(policy.config(), 0);
  ref.params() = policy.params().cast<double>();
  Tape<double> dt(false);
  const EncoderOutput<double> enc = ref.encode(dt, in);
  KeyedBatch state = reset(in);
  double total = 0.0;
  for (Index t = 0; t < actions.dim(1) && !state.all_done(); ++t) {
    const Var<double> lp = ref.decode_step(dt, enc, ref.context(dt, enc, in, state), in, state);
    TensorI a({in.batch()});
    for (Index b = 0; b < in.batch(); ++b) {
      a[b] = actions[b * actions.dim(1) + t];
      if (!state.done()[b]) total -= lp.value()[b * in.nodes() + a[b]];
    }
    state = step(in, state, a);
  }
  EXPECT_NEAR(loss, total / static_cast<double>(in.batch()), 1e-4 * std::abs(total));
}

TEST(Search, EasLayerStartsAsIdentity) {
  const InstanceBatch in = generate(EnvId::PDP, 8, 4, 4);
  Policy<float> policy(small(EnvId::PDP), 8);
  ParamSet<float> extra;
  add_eas_params(extra, policy.config().embedding_dim, 3);
  DecodeHooks<float> hooks;
  hooks.eas = &extra;
  Tape<float> t0(false);
  RolloutOptions o;
  o.type = DecodeType::Sampling;
  const TensorI actions = rollout(policy, t0, in, o).actions;
  Tape<float> a(false), b(false);
  EXPECT_EQ(imitation_loss(policy, a, in, actions).value(), imitation_loss(policy, b, in, actions, hooks).value());
}

TEST(Search, MemoryGuard) {
  const InstanceBatch in = generate(EnvId::TSP, 10, 4, 4);
  Policy<float> policy(small(EnvId::TSP), 8);
  SearchConfig c = quick(SearchMethod::ActiveSearch, 1);
  c.memory_limit = 1e3;
  try {
    active_search(policy, in, c);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::OutOfMemory);
  }
  EXPECT_GT(search_tape_bytes(PolicyConfig{}, 8 * 1000, 1000), search_tape_bytes(PolicyConfig{}, 8 * 200, 200));
}

TEST(Search, PerInstanceMode) {
  const InstanceBatch in = generate(EnvId::TSP, 8, 3, 4);
  Policy<float> policy(small(EnvId::TSP), 8);
  SearchConfig c = quick(SearchMethod::ActiveSearch, 4);
  c.per_instance = true;
  const SearchResult s = active_search(policy, in, c);
  ASSERT_EQ(s.cost.size(), 3u);
  for (const auto& rep : check_feasible(in, s.actions)) EXPECT_TRUE(rep.ok);
  const SearchResult solo = active_search(policy, in.take({1}), quick(SearchMethod::ActiveSearch, 4));
  EXPECT_EQ(s.cost[1], solo.cost[0]);
}

TEST(Search, ConfigValidation) {
  SearchConfig c;
  c.augments = 0;
  EXPECT_THROW(c.validate(), Error);
  c = SearchConfig::eas();
  EXPECT_DOUBLE_EQ(c.lr, 0.0041);
  EXPECT_DOUBLE_EQ(c.imitation, 0.013);
  EXPECT_DOUBLE_EQ(SearchConfig::active_search().lr, 2.6e-4);
  EXPECT_EQ(c.iterations, 200);
  c.imitation = -1;
  EXPECT_THROW(c.validate(), Error);
}
