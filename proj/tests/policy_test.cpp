#include <gtest/gtest.h>

#include <cmath>
#include <numeric>

#include "nco/policy/policy.hpp"
#include "support/gradcheck.hpp"

using namespace nco;

namespace {

PolicyConfig small(EnvId env, Normalization norm = Normalization::Instance) {
  PolicyConfig c;
  c.env = env;
  c.embedding_dim = 8;
  c.hidden_dim = 16;
  c.num_heads = 2;
  c.num_layers = 2;
  c.normalization = norm;
  return c;
}

const EnvId kAll[] = {EnvId::TSP, EnvId::CVRP, EnvId::OP, EnvId::PCTSP, EnvId::PDP};

template <typename T>
Tensor<T> values(const Var<T>& v) {
  return v.value();
}

// Node permutation keeping the depot (and PDP pairing) in place.
std::vector<Index> node_permutation(EnvId env, Index n, std::uint64_t seed) {
  std::vector<Index> perm(static_cast<std::size_t>(n));
  std::iota(perm.begin(), perm.end(), 0);
  std::mt19937_64 rng(seed);
  if (env == EnvId::PDP) {
    const Index p = (n - 1) / 2;
    std::vector<Index> pairs(static_cast<std::size_t>(p));
    std::iota(pairs.begin(), pairs.end(), 1);
    std::shuffle(pairs.begin(), pairs.end(), rng);
    for (Index i = 0; i < p; ++i) {
      perm[1 + i] = pairs[i];
      perm[1 + p + i] = pairs[i] + p;
    }
  } else {
    std::shuffle(perm.begin() + (env == EnvId::TSP ? 0 : 1), perm.end(), rng);
  }
  return perm;
}

// new node k takes old node perm[k]
InstanceBatch permute(const InstanceBatch& in, const std::vector<Index>& perm) {
  InstanceBatch out = in;
  const Index n = in.nodes();
  for (Index b = 0; b < in.batch(); ++b)
    for (Index k = 0; k < n; ++k) {
      const Index j = perm[k];
      for (int a = 0; a < 2; ++a) out.locs[(b * n + k) * 2 + a] = in.locs[(b * n + j) * 2 + a];
      for (auto [src, dst] : {std::pair{&in.demand, &out.demand}, {&in.prize, &out.prize}, {&in.penalty, &out.penalty}})
        if (!src->empty()) (*dst)[b * n + k] = (*src)[b * n + j];
    }
  return out;
}

}  // namespace

TEST(Policy, ConfigValidation) {
  PolicyConfig c = small(EnvId::TSP);
  c.num_heads = 3;
  try {
    Policy<float> p(c, 0);
    ADD_FAILURE();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::HeadDivisibility);
  }
}

TEST(Policy, ParameterNames) {
  PolicyConfig c;
  c.env = EnvId::CVRP;
  Policy<float> p(c, 0);
  EXPECT_TRUE(p.params().contains("encoder.block0.mha.wq"));
  EXPECT_TRUE(p.params().contains("encoder.block2.ff.1.weight"));
  EXPECT_FALSE(p.params().contains("encoder.block3.mha.wq"));
  EXPECT_TRUE(p.params().contains("init.depot.weight"));
  EXPECT_EQ(p.params().at("init.node.weight").value.shape(), (Shape{3, 128}));
  EXPECT_EQ(p.params().at("decoder.context.weight").value.shape(), (Shape{128 + 128 + 1, 128}));
  EXPECT_FALSE(p.params().at("encoder.block0.norm1.running_mean").trainable);
}

TEST(InitEmbedding, ShapesPerEnv) {
  for (EnvId e : kAll) {
    PolicyConfig c;
    c.env = e;
    Policy<float> p(c, 1);
    auto in = generate(e, 10, 3, 2);
    Tape<float> tape(false);
    EXPECT_EQ(p.init_embedding(tape, in).shape(), (Shape{3, in.nodes(), 128}));
  }
  Policy<float> tsp(small(EnvId::TSP), 0);
  Tape<float> tape(false);
  try {
    tsp.init_embedding(tape, generate(EnvId::CVRP, 5, 1, 1));
    ADD_FAILURE();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::UnknownEnv);
  }
}

TEST(InitEmbedding, ZeroWeightsGiveBias) {
  Policy<double> p(small(EnvId::PCTSP), 3);
  auto& ps = p.params();
  for (const char* name : {"init.depot", "init.node"}) {
    ps.at(std::string(name) + ".weight").value.fill(0.0);
    ps.at(std::string(name) + ".bias").value.fill(0.25);
  }
  Tape<double> tape(false);
  auto emb = p.init_embedding(tape, generate(EnvId::PCTSP, 6, 2, 4));
  for (Index i = 0; i < emb.size(); ++i) EXPECT_EQ(emb.value()[i], 0.25);
}

TEST(InitEmbedding, PermutesWithCustomers) {
  for (EnvId e : kAll) {
    Policy<double> p(small(e), 5);
    auto in = generate(e, 6, 2, 7);
    auto perm = node_permutation(e, in.nodes(), 9);
    Tape<double> tape(false);
    const TensorD a = values(p.init_embedding(tape, in));
    const TensorD b = values(p.init_embedding(tape, permute(in, perm)));
    const Index n = in.nodes(), d = 8;
    for (Index r = 0; r < 2; ++r)
      for (Index k = 0; k < n; ++k)
        for (Index c = 0; c < d; ++c) EXPECT_EQ(b[(r * n + k) * d + c], a[(r * n + perm[k]) * d + c]) << env_name(e);
  }
}

TEST(Encoder, SingleNode) {
  Policy<double> p(small(EnvId::TSP, Normalization::Instance), 2);
  p.params().at("encoder.block0.mha.wv").value.fill(0.0);
  Tape<double> tape(false);
  std::mt19937_64 rng(3);
  auto emb = tape.constant(check::random_tensor({2, 1, 8}, rng));
  auto out = p.encode(tape, emb);
  EXPECT_EQ(out.h.shape(), (Shape{2, 1, 8}));
  EXPECT_EQ(out.graph.shape(), (Shape{2, 8}));
  for (Index i = 0; i < 16; ++i) EXPECT_NEAR(out.graph.value()[i], out.h.value()[i], 1e-12);
}

TEST(Encoder, PermutationEquivariance) {
  for (Normalization norm : {Normalization::Instance, Normalization::Batch}) {
    Policy<double> p(small(EnvId::TSP, norm), 4);
    std::mt19937_64 rng(8);
    TensorD emb = check::random_tensor({3, 7, 8}, rng);
    std::vector<Index> perm(7);
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    TensorD permuted(emb.shape());
    for (Index b = 0; b < 3; ++b)
      for (Index k = 0; k < 7; ++k)
        for (Index c = 0; c < 8; ++c) permuted[(b * 7 + k) * 8 + c] = emb[(b * 7 + perm[k]) * 8 + c];
    Tape<double> tape(false);
    const TensorD h = p.encode(tape, tape.constant(emb)).h.value();
    const TensorD hp = p.encode(tape, tape.constant(permuted)).h.value();
    for (Index b = 0; b < 3; ++b)
      for (Index k = 0; k < 7; ++k)
        for (Index c = 0; c < 8; ++c) EXPECT_NEAR(hp[(b * 7 + k) * 8 + c], h[(b * 7 + perm[k]) * 8 + c], 1e-5);
  }
}

TEST(Encoder, GradientOfEmbeddings) {
  for (Normalization norm : {Normalization::Instance, Normalization::Batch}) {
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
      Policy<double> p(small(EnvId::TSP, norm), seed);
      p.training = true;
      std::mt19937_64 rng(seed);
      const TensorD emb = check::random_tensor({2, 5, 8}, rng);
      check::Fn plain = [&](Tape<double>& t, const std::vector<Var<double>>& x) { return sum(p.encode(t, x[0]).h); };
      check::Fn weighted = [&](Tape<double>& t, const std::vector<Var<double>>& x) {
        return check::weighted_sum(p.encode(t, x[0]).h, seed);
      };
      EXPECT_LT(check::gradcheck(plain, {emb}).max_rel_error, 1e-4) << seed;
      EXPECT_LT(check::gradcheck(weighted, {emb}).max_rel_error, 1e-4) << seed;
    }
  }
}

TEST(Encoder, CachesMatchRecomputation) {
  Policy<float> p(small(EnvId::CVRP), 1);
  auto in = generate(EnvId::CVRP, 7, 4, 1);
  Tape<float> tape(false);
  auto enc = p.encode(tape, in);
  auto fresh = linear(enc.h, tape.param(p.params().at("decoder.project.logit_key")));
  for (Index i = 0; i < fresh.size(); ++i) EXPECT_NEAR(fresh.value()[i], enc.logit_key.value()[i], 1e-6);
}

TEST(Context, GraphSlotAndPlaceholders) {
  PolicyConfig c = small(EnvId::TSP);
  Policy<double> with(c, 1);
  c.use_graph_context = false;
  Policy<double> without(c, 1);
  EXPECT_EQ(with.params().at("decoder.context.weight").value.dim(0), 24);
  EXPECT_EQ(without.params().at("decoder.context.weight").value.dim(0), 16);

  // Isolate the two node slots with an identity-like projection.
  auto& w = without.params().at("decoder.context.weight").value;
  w.fill(0.0);
  for (Index i = 0; i < 8; ++i) w[i * 8 + i] = 1.0;
  auto in = generate(EnvId::TSP, 5, 2, 3);
  Tape<double> tape(false);
  auto enc = without.encode(tape, in);
  auto q0 = without.context(tape, enc, in, reset(in));
  const auto& ph = without.params().at("decoder.placeholder.first").value;
  for (Index b = 0; b < 2; ++b)
    for (Index i = 0; i < 8; ++i) EXPECT_EQ(q0.value()[b * 8 + i], ph[i]);
  auto s = step(in, reset(in), TensorI({2}, {3, 1}));
  auto q1 = without.context(tape, enc, in, s);
  for (Index i = 0; i < 8; ++i) {
    EXPECT_EQ(q1.value()[i], enc.h.value()[(0 * 5 + 3) * 8 + i]);
    EXPECT_EQ(q1.value()[8 + i], enc.h.value()[(1 * 5 + 1) * 8 + i]);
  }
}

TEST(Context, CvrpRemainingCapacity) {
  PolicyConfig c = small(EnvId::CVRP);
  c.use_graph_context = false;
  Policy<double> p(c, 2);
  auto& w = p.params().at("decoder.context.weight").value;
  w.fill(0.0);
  w[8 * 8 + 0] = 1.0;  // scalar slot -> output 0
  auto in = generate(EnvId::CVRP, 5, 1, 3);
  Tape<double> tape(false);
  auto enc = p.encode(tape, in);
  EXPECT_EQ(p.context(tape, enc, in, reset(in)).value()[0], 1.0);
  auto s = step(in, reset(in), TensorI({1}, {2}));
  EXPECT_NEAR(p.context(tape, enc, in, s).value()[0], 1.0 - in.demand[2], 1e-7);
}

TEST(Decoder, UniformWhenLogitKeysVanish) {
  Policy<double> p(small(EnvId::TSP), 1);
  p.params().at("decoder.project.logit_key").value.fill(0.0);
  auto in = generate(EnvId::TSP, 6, 2, 5);
  Tape<double> tape(false);
  auto enc = p.encode(tape, in);
  auto s = reset(in);
  auto lp = p.decode_step(tape, enc, p.context(tape, enc, in, s), in, s);
  for (Index i = 0; i < lp.size(); ++i) EXPECT_NEAR(std::exp(lp.value()[i]), 1.0 / 6.0, 1e-12);
}

TEST(Decoder, MaskedProbabilities) {
  for (EnvId e : kAll) {
    Policy<float> p(small(e), 6);
    auto in = generate(e, 8, 16, 2);
    Tape<float> tape(false);
    auto enc = p.encode(tape, in);
    KeyedBatch s = reset(in);
    const Index n = in.nodes();
    while (!s.all_done()) {
      auto lp = p.decode_step(tape, enc, p.context(tape, enc, in, s), in, s);
      TensorI act({16});
      for (Index b = 0; b < 16; ++b) {
        double total = 0;
        Index feasible = 0;
        for (Index j = 0; j < n; ++j) {
          const float pr = std::exp(lp.value()[b * n + j]);
          if (!s.mask()[b * n + j]) {
            EXPECT_EQ(pr, 0.0f);
          }
          total += pr;
          feasible += s.mask()[b * n + j];
        }
        EXPECT_NEAR(total, 1.0, 1e-6);
        if (feasible == 1) {
          for (Index j = 0; j < n; ++j)
            if (s.mask()[b * n + j]) {
              EXPECT_EQ(lp.value()[b * n + j], 0.0f);
            }
        }
        act[b] = masked_argmax(lp.value().data() + b * n, s.mask().data() + b * n, n);
      }
      s = step(in, s, act);
    }
  }
}

TEST(Decoder, PermutationCovariance) {
  for (EnvId e : kAll) {
    Policy<double> p(small(e), 11);
    auto in = generate(e, 6, 2, 12);
    auto perm = node_permutation(e, in.nodes(), 13);
    auto pin = permute(in, perm);
    std::vector<Index> inverse(perm.size());
    for (std::size_t k = 0; k < perm.size(); ++k) inverse[perm[k]] = static_cast<Index>(k);
    Tape<double> tape(false);
    auto ea = p.encode(tape, in);
    auto eb = p.encode(tape, pin);
    KeyedBatch sa = reset(in), sb = reset(pin);
    const Index n = in.nodes();
    while (!sa.all_done()) {
      auto la = p.decode_step(tape, ea, p.context(tape, ea, in, sa), in, sa).value();
      auto lb = p.decode_step(tape, eb, p.context(tape, eb, pin, sb), pin, sb).value();
      for (Index b = 0; b < 2; ++b)
        for (Index k = 0; k < n; ++k) {
          const double x = la[b * n + perm[k]], y = lb[b * n + k];
          if (std::isinf(x)) {
            EXPECT_TRUE(std::isinf(y));
          } else {
            EXPECT_NEAR(x, y, 1e-9) << env_name(e);
          }
        }
      TensorI aa({2}), ab({2});
      for (Index b = 0; b < 2; ++b) {
        aa[b] = masked_argmax(la.data() + b * n, sa.mask().data() + b * n, n);
        ab[b] = sa.done()[b] ? 0 : static_cast<std::int32_t>(inverse[aa[b]]);
      }
      sa = step(in, sa, aa);
      sb = step(pin, sb, ab);
    }
  }
}

TEST(Rollout, GreedyIsDeterministic) {
  for (EnvId e : kAll) {
    Policy<float> p(small(e), 3);
    auto in = generate(e, 10, 32, 4);
    Tape<float> t1(false), t2(false);
    auto a = rollout(p, t1, in);
    auto b = rollout(p, t2, in);
    EXPECT_TRUE(a.actions == b.actions);
    EXPECT_TRUE(a.reward == b.reward);
    EXPECT_TRUE(a.logprob.value() == b.logprob.value());
  }
}

TEST(Rollout, TeacherForcingReproducesLogLikelihood) {
  for (EnvId e : kAll) {
    Policy<float> p(small(e), 5);
    auto in = generate(e, 10, 32, 6);
    Tape<float> t1(false), t2(false);
    RolloutOptions opt;
    opt.type = DecodeType::Sampling;
    opt.seed = 77;
    auto sampled = rollout(p, t1, in, opt);
    RolloutOptions forced;
    forced.actions = &sampled.actions;
    auto replay = rollout(p, t2, in, forced);
    EXPECT_TRUE(replay.actions == sampled.actions);
    for (Index b = 0; b < 32; ++b) EXPECT_NEAR(replay.logprob.value()[b], sampled.logprob.value()[b], 1e-5);
  }
}

TEST(Rollout, SamplingStreamsAreLayoutIndependent) {
  Policy<float> p(small(EnvId::TSP), 5);
  auto in = generate(EnvId::TSP, 8, 4, 1);
  RolloutOptions opt;
  opt.type = DecodeType::Sampling;
  opt.seed = 3;
  opt.streams = {10, 11, 12, 13};
  Tape<float> tape(false);
  auto full = rollout(p, tape, in, opt);
  RolloutOptions one = opt;
  one.streams = {12};
  auto part = rollout(p, tape, in.take({2}), one);
  for (Index k = 0; k < 8; ++k) EXPECT_EQ(part.actions[k], full.actions[2 * 8 + k]);
}

TEST(Rollout, FirstActionsAreForced) {
  Policy<float> p(small(EnvId::CVRP), 5);
  auto in = generate(EnvId::CVRP, 6, 3, 1);
  TensorI first({3}, {4, 2, 6});
  RolloutOptions opt;
  opt.first_actions = &first;
  Tape<float> tape(false);
  auto tr = rollout(p, tape, in, opt);
  const Index t = tr.actions.dim(1);
  for (Index b = 0; b < 3; ++b) EXPECT_EQ(tr.actions[b * t], first[b]);
}

TEST(Rollout, RandomPoliciesProduceFeasibleSolutions) {
  for (EnvId e : kAll) {
    Index infeasible = 0, total = 0;
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
      Policy<float> p(small(e), seed);
      auto in = generate(e, 10, 1000, 100 + seed);
      RolloutOptions opt;
      opt.type = DecodeType::Sampling;
      opt.seed = seed;
      opt.reward = false;
      Tape<float> tape(false);
      auto tr = rollout(p, tape, in, opt);
      for (const auto& r : check_feasible(in, tr.actions)) infeasible += !r.ok;
      total += 1000;
    }
    EXPECT_EQ(infeasible, 0) << env_name(e);
    EXPECT_EQ(total, 10000);
  }
}

TEST(Rollout, LogLikelihoodGradient) {
  for (Normalization norm : {Normalization::Instance, Normalization::Batch}) {
    for (EnvId e : kAll) {
      Policy<double> p(small(e, norm), 21);
      p.training = true;
      auto in = generate(e, e == EnvId::TSP ? 6 : 4, 4, 22);
      Tape<double> t0(false);
      RolloutOptions sample;
      sample.type = DecodeType::Sampling;
      sample.seed = 5;
      const TensorI actions = rollout(p, t0, in, sample).actions;
      auto rep = check::param_gradcheck(p.params(), [&](Tape<double>& tape) {
        RolloutOptions forced;
        forced.actions = &actions;
        forced.reward = false;
        return check::weighted_sum(rollout(p, tape, in, forced).logprob, 1);
      });
      EXPECT_LT(rep.max_rel_error, 1e-4) << env_name(e);
      EXPECT_GT(rep.checked, 0);
    }
  }
}

TEST(Hooks, ZeroInitializedExtrasAreIdentity) {
  Policy<float> p(small(EnvId::CVRP), 9);
  auto in = generate(EnvId::CVRP, 8, 8, 3);
  Tape<float> tape(false);
  RolloutOptions opt;
  opt.type = DecodeType::Sampling;
  opt.seed = 4;
  auto base = rollout(p, tape, in, opt);
  ParamSet<float> eas;
  add_eas_params(eas, 8, 1);
  ParamSet<float> dyn;
  auto& w = dyn.add("dynamic.weight", TensorF({1, 24}));
  FeatureDynamicEmbedding<float> hook(w, [](const InstanceBatch& i, const KeyedBatch& s) {
    TensorF f({i.batch(), i.nodes(), 1});
    const auto& used = s.get<float>("used_capacity");
    for (Index k = 0; k < f.size(); ++k) f[k] = used[k / i.nodes()] * i.locs[2 * k];
    return f;
  });
  DecodeHooks<float> hooks{&hook, &eas};
  auto hooked = rollout(p, tape, in, opt, hooks);
  EXPECT_TRUE(hooked.actions == base.actions);
  EXPECT_TRUE(hooked.logprob.value() == base.logprob.value());
  w.value.fill(0.5f);
  Tape<float> fresh(false);  // a tape caches parameter leaves
  auto moved = rollout(p, fresh, in, opt, hooks);
  EXPECT_FALSE(moved.logprob.value() == base.logprob.value());
}

TEST(Critic, OutputShapeAndNames) {
  Critic<float> c(small(EnvId::OP), 1);
  EXPECT_TRUE(c.params().contains("critic.encoder.block1.mha.wo"));
  EXPECT_TRUE(c.params().contains("critic.head.1.weight"));
  Tape<float> tape(false);
  EXPECT_EQ(c.value(tape, generate(EnvId::OP, 5, 7, 1)).shape(), (Shape{7}));
}

TEST(LoadParams, Mismatch) {
  PolicyConfig a = small(EnvId::TSP), b = a;
  b.embedding_dim = 16;
  Policy<float> pa(a, 1), pb(b, 1), pc(a, 2);
  try {
    load_params(pa.params(), pb.params());
    ADD_FAILURE();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::ShapeMismatchOnLoad);
    EXPECT_NE(std::string(e.what()).find("init.node.weight"), std::string::npos);
  }
  load_params(pa.params(), pc.params());
  EXPECT_TRUE(pa.params().at("decoder.glimpse.wo").value == pc.params().at("decoder.glimpse.wo").value);
}
