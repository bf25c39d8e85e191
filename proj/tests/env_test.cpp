#include <gtest/gtest.h>

#include <cmath>
#include <fstream>
#include <sstream>

#include "nco/env/env.hpp"
#include "nco/oracle/oracle.hpp"
#include "support/trees.hpp"

using namespace nco;

namespace {

template <typename F>
ErrorCode code_of(F&& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  ADD_FAILURE() << "expected an nco::Error";
  return ErrorCode::Io;
}

std::string slurp(const std::string& path) {
  std::ifstream in(path);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

InstanceBatch tsp_of(std::initializer_list<float> xy) {
  InstanceBatch in;
  in.env = EnvId::TSP;
  in.locs = TensorF({1, static_cast<Index>(xy.size() / 2), 2}, xy);
  return in;
}

KeyedBatch run(const InstanceBatch& in, const std::vector<std::int32_t>& seq) {
  KeyedBatch s = reset(in);
  for (auto a : seq) s = step(in, s, TensorI({1}, {a}));
  return s;
}

const EnvId kAll[] = {EnvId::TSP, EnvId::CVRP, EnvId::OP, EnvId::PCTSP, EnvId::PDP};

}  // namespace

TEST(Generate, DeterministicAndPrefixStable) {
  for (EnvId e : kAll) {
    auto a = generate(e, 10, 16, 1234);
    auto b = generate(e, 10, 16, 1234);
    EXPECT_TRUE(a == b);
    auto head = generate(e, 10, 4, 1234);
    EXPECT_TRUE(head == a.take({0, 1, 2, 3}));
    EXPECT_FALSE(generate(e, 10, 16, 4321) == a);
    EXPECT_TRUE(generate_range(e, 10, 5, 7, 1234) == a.take({5, 6, 7, 8, 9, 10, 11}));
    for (Index i = 0; i < a.locs.size(); ++i) {
      EXPECT_GE(a.locs[i], 0.0f);
      EXPECT_LE(a.locs[i], 1.0f);
    }
  }
}

TEST(Generate, NodeCounts) {
  EXPECT_EQ(generate(EnvId::TSP, 20, 2, 1).nodes(), 20);
  EXPECT_EQ(generate(EnvId::CVRP, 20, 2, 1).nodes(), 21);
  auto pdp = generate(EnvId::PDP, 6, 2, 1);
  EXPECT_EQ(pdp.nodes(), 7);
  EXPECT_EQ(pdp.num_pairs, 3);
  EXPECT_EQ(code_of([] { generate(EnvId::PDP, 5, 1, 1); }), ErrorCode::UnsupportedSize);
  EXPECT_EQ(code_of([] { generate(EnvId::TSP, 1, 1, 1); }), ErrorCode::UnsupportedSize);
}

TEST(Generate, CvrpDemands) {
  auto in = generate(EnvId::CVRP, 20, 50, 7);
  for (Index b = 0; b < 50; ++b) {
    EXPECT_EQ(in.demand[b * 21], 0.0f);
    for (Index j = 1; j < 21; ++j) {
      const float d = in.demand[b * 21 + j];
      const float units = d * 30.0f;
      EXPECT_NEAR(units, std::round(units), 1e-4);
      EXPECT_GE(std::round(units), 1);
      EXPECT_LE(std::round(units), 10);
    }
  }
  EXPECT_EQ(cvrp_capacity(50), 40.0f);
  EXPECT_EQ(cvrp_capacity(100), 50.0f);
}

TEST(Generate, SizeTables) {
  EXPECT_EQ(cvrp_capacity(30), 30.0f);
  EXPECT_EQ(cvrp_capacity(80), 50.0f);
  EXPECT_EQ(op_max_length(50), 3.0f);
  EXPECT_EQ(op_max_length(7), 2.0f);
  GenerateOptions strict;
  strict.strict_sizes = true;
  EXPECT_EQ(code_of([&] { cvrp_capacity(30, strict); }), ErrorCode::UnsupportedSize);
  EXPECT_EQ(code_of([&] { generate(EnvId::OP, 30, 1, 1, strict); }), ErrorCode::UnsupportedSize);
  GenerateOptions over;
  over.capacity = 25.0f;
  over.strict_sizes = true;
  EXPECT_EQ(cvrp_capacity(30, over), 25.0f);
}

TEST(Generate, OpPrizeEndpoints) {
  auto in = generate(EnvId::OP, 20, 100, 3);
  for (Index b = 0; b < 100; ++b) {
    float top = 0;
    for (Index j = 1; j < 21; ++j) {
      const float p = in.prize[b * 21 + j];
      EXPECT_GE(p, 0.01f - 1e-7f);
      EXPECT_LE(p, 1.0f + 1e-7f);
      top = std::max(top, p);
    }
    EXPECT_FLOAT_EQ(top, 1.0f);
    EXPECT_EQ(in.max_length[b], 2.0f);
  }
}

TEST(Generate, PctspPrizeCoversRequirement) {
  auto in = generate(EnvId::PCTSP, 20, 200, 5);
  for (Index b = 0; b < 200; ++b) {
    double total = 0;
    for (Index j = 1; j < 21; ++j) {
      total += in.prize[b * 21 + j];
      EXPECT_GE(in.penalty[b * 21 + j], 0.0f);
      EXPECT_LE(in.penalty[b * 21 + j], 3.0f * 2.0f / 20.0f);
    }
    EXPECT_GE(total, 1.0);
    EXPECT_EQ(in.required_prize[b], 1.0f);
  }
}

TEST(Reset, InitialMasks) {
  auto tsp = generate(EnvId::TSP, 5, 1, 1);
  auto s = reset(tsp);
  for (Index j = 0; j < 5; ++j) EXPECT_EQ(s.mask()[j], 1);
  auto pdp = generate(EnvId::PDP, 4, 1, 1);
  const TensorB m = reset(pdp).mask();
  EXPECT_EQ((std::vector<int>{m[0], m[1], m[2], m[3], m[4]}), (std::vector<int>{0, 1, 1, 0, 0}));
  auto cvrp = generate(EnvId::CVRP, 5, 1, 1);
  auto c = reset(cvrp);
  EXPECT_EQ(c.get<float>("used_capacity")[0], 0.0f);
  EXPECT_EQ(c.current()[0], 0);
  EXPECT_EQ(c.mask()[0], 0);
  for (EnvId e : {EnvId::OP, EnvId::PCTSP}) EXPECT_EQ(reset(generate(e, 5, 1, 1)).mask()[0], 0);
}

TEST(Step, CapacityRule) {
  InstanceBatch in;
  in.env = EnvId::CVRP;
  in.locs = TensorF({1, 3, 2}, {0.5f, 0.5f, 0.1f, 0.1f, 0.9f, 0.9f});
  in.demand = TensorF({1, 3}, {0.0f, 0.7f, 0.4f});
  auto s = run(in, {1});
  EXPECT_NEAR(s.get<float>("used_capacity")[0], 0.7f, 1e-7);
  EXPECT_EQ(s.mask()[2], 0);
  EXPECT_EQ(s.mask()[0], 1);
  s = run(in, {1, 0});
  EXPECT_EQ(s.mask()[2], 1);
  EXPECT_EQ(s.mask()[0], 0);
}

TEST(Step, OpReturnLegRule) {
  InstanceBatch in;
  in.env = EnvId::OP;
  in.locs = TensorF({1, 3, 2}, {0.0f, 0.0f, 0.6f, 0.0f, 0.3f, 0.0f});
  in.prize = TensorF({1, 3}, {0.0f, 1.0f, 0.5f});
  in.max_length = TensorF({1}, 1.0f);
  auto s = reset(in);
  EXPECT_EQ(s.mask()[1], 0);
  EXPECT_EQ(s.mask()[2], 1);
  EXPECT_EQ(s.mask()[0], 0);
  in.max_length[0] = 0.1f;
  s = reset(in);
  EXPECT_EQ(s.mask()[0], 1);
  EXPECT_EQ(s.mask()[2], 0);
}

TEST(Step, PdpPrecedenceRelease) {
  auto in = generate(EnvId::PDP, 4, 1, 2);
  auto s = run(in, {1});
  EXPECT_EQ(s.mask()[3], 1);
  EXPECT_EQ(s.mask()[4], 0);
  EXPECT_EQ(s.get<std::uint8_t>("to_deliver")[0], 1);
}

TEST(Step, Errors) {
  auto in = generate(EnvId::TSP, 3, 1, 1);
  auto s = run(in, {2});
  EXPECT_EQ(code_of([&] { step(in, s, TensorI({1}, {2})); }), ErrorCode::InfeasibleAction);
  EXPECT_EQ(code_of([&] { step(in, s, TensorI({1}, {7})); }), ErrorCode::InfeasibleAction);
  s = run(in, {2, 0, 1});
  EXPECT_TRUE(s.all_done());
  EXPECT_EQ(code_of([&] { step(in, s, TensorI({1}, {1})); }), ErrorCode::StepOnDone);
  EXPECT_TRUE(step(in, s, TensorI({1}, {0})) == s);
}

TEST(Step, Statelessness) {
  for (EnvId e : kAll) {
    auto in = generate(e, 8, 16, 9);
    auto s0 = reset(in);
    const KeyedBatch copy = s0;
    TensorI actions = check::random_rollout(in, 3);
    const Index t = actions.dim(1);
    for (Index k = 0; k < t && !s0.all_done(); ++k) {
      TensorI a({16});
      for (Index r = 0; r < 16; ++r) a[r] = actions[r * t + k];
      const KeyedBatch before = s0;
      auto x = step(in, s0, a);
      KeyedBatch dup = s0;
      auto y = step(in, dup, a);
      EXPECT_TRUE(x == y);
      EXPECT_TRUE(s0 == before);
      s0 = x;
    }
    EXPECT_TRUE(reset(in) == copy);
  }
}

TEST(Reward, Examples) {
  EXPECT_FLOAT_EQ(reward(tsp_of({0, 0, 1, 0, 1, 1, 0, 1}), TensorI({1, 4}, {0, 1, 2, 3}))[0], -4.0f);
  auto line = tsp_of({0, 0, 0.5f, 0, 1, 0});
  EXPECT_FLOAT_EQ(reward(line, TensorI({1, 3}, {0, 1, 2}))[0], -2.0f);
  EXPECT_FLOAT_EQ(reward(line, TensorI({1, 3}, {2, 0, 1}))[0], -2.0f);
  EXPECT_EQ(code_of([&] { reward(line, TensorI({1, 3}, {0, 1, 1})); }), ErrorCode::InfeasibleSolution);
}

TEST(Reward, SeededTsp7MatchesHeldKarp) {
  auto in = generate(EnvId::TSP, 7, 1, 42);
  auto hk = held_karp(in, 0);
  EXPECT_NEAR(hk.value, check::permutation_optimum(in, 0), 1e-9);
  TensorI tour({1, 7}, std::vector<std::int32_t>(hk.actions));
  EXPECT_NEAR(-reward(in, tour)[0], hk.value, 1e-5);
}

TEST(Reward, ProblemSpecificObjectives) {
  InstanceBatch pc;
  pc.env = EnvId::PCTSP;
  pc.locs = TensorF({1, 3, 2}, {0, 0, 1, 0, 0, 1});
  pc.prize = TensorF({1, 3}, {0, 1.0f, 0.5f});
  pc.penalty = TensorF({1, 3}, {0, 0.25f, 0.75f});
  pc.required_prize = TensorF({1}, 1.0f);
  EXPECT_FLOAT_EQ(reward(pc, TensorI({1, 3}, {1, 0, 0}))[0], -(2.0f + 0.75f));
  InstanceBatch op = pc;
  op.env = EnvId::OP;
  op.max_length = TensorF({1}, 10.0f);
  EXPECT_FLOAT_EQ(reward(op, TensorI({1, 3}, {2, 1, 0}))[0], 1.5f);
  InstanceBatch cv;
  cv.env = EnvId::CVRP;
  cv.locs = pc.locs;
  cv.demand = TensorF({1, 3}, {0, 0.6f, 0.6f});
  EXPECT_FLOAT_EQ(reward(cv, TensorI({1, 4}, {1, 0, 2, 0}))[0], -4.0f);
}

TEST(CheckFeasible, Examples) {
  auto in = generate(EnvId::TSP, 5, 1, 1);
  EXPECT_TRUE(check_feasible(in, TensorI({1, 5}, {3, 1, 0, 4, 2}))[0].ok);
  auto r = check_feasible(in, TensorI({1, 5}, {3, 1, 3, 4, 2}))[0];
  EXPECT_FALSE(r.ok);
  EXPECT_EQ(r.kind, "revisit");
  EXPECT_EQ(r.step, 2);
  EXPECT_EQ(check_feasible(in, TensorI({1, 4}, {3, 1, 0, 4}))[0].kind, "unvisited");
  InstanceBatch cv;
  cv.env = EnvId::CVRP;
  cv.locs = TensorF({1, 3, 2}, {0, 0, 1, 0, 0, 1});
  cv.demand = TensorF({1, 3}, {0, 0.6f, 0.6f});
  EXPECT_EQ(check_feasible(cv, TensorI({1, 3}, {1, 2, 0}))[0].kind, "capacity");
  EXPECT_EQ(check_feasible(cv, TensorI({1, 4}, {0, 1, 0, 2}))[0].kind, "depot_first");
  EXPECT_EQ(check_feasible(cv, TensorI({1, 5}, {1, 0, 0, 2, 0}))[0].kind, "consecutive_depot");
  EXPECT_EQ(check_feasible(cv, TensorI({1, 5}, {1, 0, 2, 0, 1}))[0].kind, "after_done");
  auto pdp = generate(EnvId::PDP, 4, 1, 1);
  EXPECT_EQ(check_feasible(pdp, TensorI({1, 4}, {3, 1, 2, 4}))[0].kind, "precedence");
}

TEST(Masks, ExhaustiveAgreementWithReplay) {
  for (EnvId e : kAll) {
    for (std::uint64_t seed = 0; seed < 3; ++seed) {
      const Index n = e == EnvId::TSP ? 6 : (e == EnvId::PDP ? 4 : 5);
      auto one = generate(e, n, 1, seed);
      auto walk = check::walk_masks(one);
      EXPECT_EQ(walk.mismatches, 0) << env_name(e) << " seed " << seed;
      EXPECT_GT(walk.complete.size(), 0u);
      if (e == EnvId::TSP || e == EnvId::CVRP || e == EnvId::PDP) {
        EXPECT_TRUE(walk.complete == check::checker_solutions(one)) << env_name(e);
      }
    }
  }
}

TEST(Masks, RandomRolloutsAreFeasible) {
  for (EnvId e : kAll) {
    auto in = generate(e, 12, 256, 17);
    TensorI actions = check::random_rollout(in, 5);
    for (const auto& r : check_feasible(in, actions)) EXPECT_TRUE(r.ok) << env_name(e) << ": " << r.kind;
  }
}

TEST(Parse, SyntheticTsp) {
  const std::string text =
      "NAME : tiny\nTYPE : TSP\nDIMENSION : 3\nEDGE_WEIGHT_TYPE : EUC_2D\nNODE_COORD_SECTION\n1 0 0\n2 0 10\n3 10 0\nEOF\n";
  auto p = parse_tsplib(text);
  EXPECT_EQ(p.name, "tiny");
  EXPECT_EQ(p.scale, 10.0);
  const float expect[6] = {0, 0, 0, 1, 1, 0};
  for (int i = 0; i < 6; ++i) EXPECT_EQ(p.instance.locs[i], expect[i]);
}

TEST(Parse, Errors) {
  EXPECT_EQ(code_of([] { parse_tsplib("DIMENSION : 2\nEDGE_WEIGHT_TYPE : GEO\nNODE_COORD_SECTION\n1 0 0\n2 1 1\n"); }),
            ErrorCode::UnsupportedEdgeWeightType);
  EXPECT_EQ(code_of([] { parse_tsplib("DIMENSION : 3\nEDGE_WEIGHT_TYPE : EUC_2D\nNODE_COORD_SECTION\n1 0 0\n2 1 1\n"); }),
            ErrorCode::MalformedSection);
  EXPECT_EQ(code_of([] { parse_tsplib("DIMENSION : 2\nEDGE_WEIGHT_TYPE : EUC_2D\nNODE_COORD_SECTION\n1 0 x\n2 1 1\n"); }),
            ErrorCode::MalformedSection);
  EXPECT_EQ(code_of([] { parse_cvrplib("DIMENSION : 2\nEDGE_WEIGHT_TYPE : EUC_2D\nNODE_COORD_SECTION\n1 0 0\n2 1 1\n"); }),
            ErrorCode::MalformedSection);
}

TEST(Parse, Cvrplib) {
  const std::string text =
      "NAME : toy\nTYPE : CVRP\nDIMENSION : 4\nEDGE_WEIGHT_TYPE : EUC_2D\nCAPACITY : 10\n"
      "NODE_COORD_SECTION\n1 5 5\n2 0 0\n3 20 0\n4 0 10\nDEMAND_SECTION\n1 3\n2 0\n3 5\n4 10\n"
      "DEPOT_SECTION\n2\n-1\nEOF\n";
  auto p = parse_cvrplib(text);
  EXPECT_EQ(p.instance.nodes(), 4);
  EXPECT_EQ(p.instance.locs[0], 0.0f);
  EXPECT_EQ(p.instance.locs[1], 0.0f);
  EXPECT_EQ(p.instance.demand[0], 0.0f);
  EXPECT_FLOAT_EQ(p.instance.demand[1], 0.3f);
  EXPECT_FLOAT_EQ(p.instance.demand[3], 1.0f);
  EXPECT_EQ(p.scale, 20.0);
}

TEST(Parse, TsplibBenchmarks) {
  struct Case {
    const char* name;
    Index nodes;
    double bks;
  };
  for (const Case c : {Case{"eil51", 51, 426}, Case{"berlin52", 52, 7542}}) {
    const std::string dir = std::string(NCO_DATA_DIR) + "/tsplib/";
    auto p = parse_tsplib(slurp(dir + c.name + ".tsp"));
    EXPECT_EQ(p.instance.nodes(), c.nodes);
    auto tour = parse_tour(slurp(dir + c.name + ".opt.tour"));
    ASSERT_EQ(static_cast<Index>(tour.size()), c.nodes);
    EXPECT_EQ(tsplib_cost(p, tour.data(), c.nodes), c.bks);
    TensorI actions({1, c.nodes}, tour);
    EXPECT_NEAR(-reward(p.instance, actions)[0] * p.scale, c.bks, 0.01 * c.bks);
  }
}
