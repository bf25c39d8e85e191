#include <gtest/gtest.h>

#include <cmath>

#include "nco/oracle/oracle.hpp"
#include "support/trees.hpp"

using namespace nco;

namespace {

InstanceBatch tsp_of(std::initializer_list<float> xy) {
  InstanceBatch in;
  in.env = EnvId::TSP;
  in.locs = TensorF({1, static_cast<Index>(xy.size() / 2), 2}, xy);
  return in;
}

double reward_of(const InstanceBatch& one, const OracleResult& r) {
  TensorI a({1, static_cast<Index>(r.actions.size())}, r.actions);
  return reward(one, a)[0];
}

}  // namespace

TEST(HeldKarp, SquareAndTriangle) {
  EXPECT_NEAR(held_karp(tsp_of({0, 0, 1, 0, 1, 1, 0, 1}), 0).value, 4.0, 1e-12);
  EXPECT_NEAR(held_karp(tsp_of({0, 0, 1, 0, 0, 1}), 0).value, 2.0 + std::sqrt(2.0), 1e-7);
}

TEST(HeldKarp, MatchesPermutationSearch) {
  auto in = generate(EnvId::TSP, 9, 5, 11);
  for (Index b = 0; b < 5; ++b) EXPECT_NEAR(held_karp(in, b).value, check::permutation_optimum(in, b), 1e-9);
}

TEST(HeldKarp, Limits) {
  auto big = generate(EnvId::TSP, 21, 1, 1);
  try {
    held_karp(big, 0);
    ADD_FAILURE();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::TooLarge);
  }
  auto ok = generate(EnvId::TSP, 14, 1, 1);
  auto r = held_karp(ok, 0);
  EXPECT_EQ(r.actions.size(), 14u);
  EXPECT_EQ(r.actions[0], 0);
  EXPECT_NEAR(-reward_of(ok, r), r.value, 1e-5);
}

TEST(BruteForce, AgreesWithHeldKarp) {
  for (Index n = 4; n <= 9; ++n) {
    auto in = generate(EnvId::TSP, n, 3, 100 + static_cast<std::uint64_t>(n));
    for (Index b = 0; b < 3; ++b) EXPECT_NEAR(brute_force(in, b).value, held_karp(in, b).value, 1e-5) << n;
  }
}

TEST(BruteForce, ValueMatchesRewardOfReturnedSequence) {
  const std::pair<EnvId, Index> cases[] = {
      {EnvId::CVRP, 6}, {EnvId::OP, 8}, {EnvId::PCTSP, 7}, {EnvId::PDP, 6}, {EnvId::TSP, 8}};
  for (auto [e, n] : cases) {
    auto in = generate(e, n, 2, 5);
    for (Index b = 0; b < 2; ++b) {
      auto one = in.take({b});
      auto r = brute_force(one, 0);
      const double rw = reward_of(one, r);
      EXPECT_NEAR(maximize(e) ? rw : -rw, r.value, 1e-5) << env_name(e);
      EXPECT_GT(r.explored, 0);
    }
  }
}

TEST(BruteForce, OptimumDominatesEveryCompleteSolution) {
  for (EnvId e : {EnvId::CVRP, EnvId::OP, EnvId::PCTSP, EnvId::PDP}) {
    auto one = generate(e, 4, 1, 3);
    const double best = brute_force(one, 0).value;
    for (const auto& seq : check::checker_solutions(one)) {
      auto a = check::as_actions(seq);
      const double v = objective(one, 0, a.data(), a.size());
      if (maximize(e)) {
        EXPECT_LE(v, best + 1e-9);
      } else {
        EXPECT_GE(v, best - 1e-9);
      }
    }
  }
}

TEST(BruteForce, SinglePdpPair) {
  auto in = generate(EnvId::PDP, 2, 1, 4);
  auto r = brute_force(in, 0);
  EXPECT_EQ(r.actions, (std::vector<std::int32_t>{1, 2}));
  const float* l = in.locs.data();
  auto d = [&](int i, int j) { return std::hypot(double(l[2 * i]) - l[2 * j], double(l[2 * i + 1]) - l[2 * j + 1]); };
  EXPECT_NEAR(r.value, d(0, 1) + d(1, 2) + d(2, 0), 1e-6);
}

TEST(BruteForce, OpWithNoReachableCustomer) {
  auto in = generate(EnvId::OP, 5, 1, 6);
  in.max_length[0] = 1e-3f;
  auto r = brute_force(in, 0);
  EXPECT_EQ(r.value, 0.0);
  EXPECT_EQ(r.actions, (std::vector<std::int32_t>{0}));
}

TEST(BruteForce, Limits) {
  for (auto [e, n] : {std::pair{EnvId::TSP, Index{10}}, std::pair{EnvId::CVRP, Index{9}}, std::pair{EnvId::OP, Index{10}},
                      std::pair{EnvId::PDP, Index{10}}}) {
    auto in = generate(e, n, 1, 1);
    try {
      brute_force(in, 0);
      ADD_FAILURE() << env_name(e);
    } catch (const Error& err) {
      EXPECT_EQ(err.code(), ErrorCode::TooLarge);
    }
  }
}
