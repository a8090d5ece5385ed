#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "zigprune/dhspg.hpp"
#include "zigprune/error.hpp"

using namespace zigprune;

namespace {

std::vector<std::vector<std::size_t>> contiguous_groups(int groups, int size) {
  std::vector<std::vector<std::size_t>> out(static_cast<std::size_t>(groups));
  for (int g = 0; g < groups; ++g)
    for (int k = 0; k < size; ++k) out[std::size_t(g)].push_back(std::size_t(g * size + k));
  return out;
}

double dot(const std::vector<double> &a, const std::vector<double> &b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

} // namespace

TEST(LambdaRule, IntervalEndpoints) {
  EXPECT_FALSE(lambda_interval(0.0, 2.0));
  EXPECT_FALSE(lambda_interval(0.3, 2.0));
  const auto iv = lambda_interval(-0.5, 2.0);
  ASSERT_TRUE(iv);
  EXPECT_DOUBLE_EQ(iv->lo, 1.0);
  EXPECT_DOUBLE_EQ(iv->hi, 4.0);
}

TEST(LambdaRule, AmplifiedLowerBoundClippedAtUpper) {
  OptimizerConfig cfg;
  cfg.default_lambda = 0.25;
  cfg.lambda_amplify = 2.0;
  EXPECT_DOUBLE_EQ(select_group_lambda(0.4, 3.0, cfg), 0.25);
  EXPECT_DOUBLE_EQ(select_group_lambda(-0.5, 2.0, cfg), 2.0);   // 2 * 1 < 4
  EXPECT_DOUBLE_EQ(select_group_lambda(-0.9, 1.0, cfg), 1.0 / 0.9); // 2 * 0.9 > 1/0.9
}

// Property: for any selected lambda in (lambda_min, lambda_max] the direction
// descends the group magnitude and does not ascend the objective; strictly
// so while lambda stays below lambda_max.
TEST(Direction, DualHalfSpaceProperty) {
  std::mt19937_64 rng(3);
  std::normal_distribution<double> normal;
  int interior = 0, clipped = 0;
  for (int trial = 0; trial < 500; ++trial) {
    std::vector<double> x(6), g(6);
    for (auto &v : x) v = normal(rng);
    for (auto &v : g) v = normal(rng);
    OptimizerConfig cfg;
    cfg.lambda_amplify = 1.5;
    auto s = make_dhspg_state(cfg, 6, {{0, 1, 2, 3, 4, 5}});
    s.group_states[0].penalized = true;
    select_lambda(s, x, g);
    const auto d = dual_halfspace_direction(s, x, g);
    std::vector<double> mg(6), mx(6);
    for (int i = 0; i < 6; ++i) mg[i] = -g[i], mx[i] = -x[i];
    const auto &gs = s.group_states[0];
    const double scale = std::sqrt(dot(g, g)) * (std::sqrt(dot(g, g)) + std::sqrt(dot(x, x)));
    if (gs.cos_theta >= 0.0) {
      EXPECT_GT(dot(d, mg), 0.0);
      continue;
    }
    const auto iv = lambda_interval(gs.cos_theta, std::sqrt(dot(g, g)));
    ASSERT_TRUE(iv);
    EXPECT_GT(gs.lambda, iv->lo);
    EXPECT_LE(gs.lambda, iv->hi);
    EXPECT_GT(dot(d, mx), 0.0);
    if (gs.lambda < iv->hi) {
      EXPECT_GT(dot(d, mg), 0.0);
      ++interior;
    } else {
      EXPECT_GE(dot(d, mg), -1e-12 * scale);
      ++clipped;
    }
  }
  EXPECT_GT(interior, 50);
  EXPECT_GT(clipped, 3);
}

TEST(Direction, PlainGradientOutsidePenalizedGroups) {
  auto s = make_dhspg_state(OptimizerConfig{}, 4, {{0, 1}, {2, 3}});
  s.group_states[1].penalized = true;
  s.group_states[1].lambda = 0.5;
  const std::vector<double> x{1, 2, 3, 4}, g{0.1, 0.2, 0.3, 0.4};
  const auto d = dual_halfspace_direction(s, x, g);
  EXPECT_DOUBLE_EQ(d[0], -0.1);
  EXPECT_DOUBLE_EQ(d[1], -0.2);
  EXPECT_DOUBLE_EQ(d[2], -0.3 - 0.5 * 3.0 / 5.0);
  EXPECT_DOUBLE_EQ(d[3], -0.4 - 0.5 * 4.0 / 5.0);
}

TEST(HalfSpace, ZeroesGroupsThatCrossAndCapsAtK) {
  OptimizerConfig cfg;
  cfg.target_zero_groups = 1;
  auto s = make_dhspg_state(cfg, 6, contiguous_groups(3, 2));
  for (auto &gs : s.group_states) gs.penalized = true;
  const std::vector<double> x{1, 0, 1, 0, 1, 0};
  std::vector<double> trial{0.1, 1, -0.1, 1, -0.2, 1};
  halfspace_project(s, x, trial);
  EXPECT_EQ(trial, (std::vector<double>{0.1, 1, 0, 0, -0.2, 1})); // cap reached after group 1
  EXPECT_TRUE(s.group_states[1].frozen_zero);
  EXPECT_EQ(s.frozen_count, 1);

  cfg.mode = OptimizerMode::Hspg;
  auto h = make_dhspg_state(cfg, 6, contiguous_groups(3, 2));
  for (auto &gs : h.group_states) gs.penalized = true;
  std::vector<double> t2{0.1, 1, -0.1, 1, -0.2, 1};
  halfspace_project(h, x, t2);
  EXPECT_EQ(h.frozen_count, 2);
}

TEST(Warmup, MomentumSgdByHand) {
  OptimizerConfig cfg;
  cfg.lr = 0.5;
  cfg.momentum = 0.9;
  auto s = make_dhspg_state(cfg, 2, {{0, 1}});
  std::vector<double> x{1.0, -1.0};
  warmup_step(s, x, std::vector<double>{1.0, 2.0});
  EXPECT_DOUBLE_EQ(x[0], 0.5);
  EXPECT_DOUBLE_EQ(x[1], -2.0);
  warmup_step(s, x, std::vector<double>{1.0, 2.0});
  EXPECT_DOUBLE_EQ(x[0], 0.5 - 0.5 * 1.9);
  EXPECT_DOUBLE_EQ(x[1], -2.0 - 0.5 * 3.8);
  EXPECT_EQ(s.t, 2);
}

TEST(Schedule, StepDecay) {
  OptimizerConfig cfg;
  cfg.lr = 0.1;
  cfg.lr_decay = 10.0;
  cfg.lr_period_steps = 5;
  EXPECT_DOUBLE_EQ(learning_rate(cfg, 4), 0.1);
  EXPECT_DOUBLE_EQ(learning_rate(cfg, 5), 0.01);
  EXPECT_NEAR(learning_rate(cfg, 14), 0.001, 1e-18);
}

TEST(Salience, OrdersByScoreWithLowerIndexTies) {
  OptimizerConfig cfg;
  cfg.target_zero_groups = 2;
  cfg.w_cos = 0.0;
  cfg.w_mag = 1.0;
  auto s = make_dhspg_state(cfg, 8, contiguous_groups(4, 2));
  const std::vector<double> x{4, 0, 1, 0, 1, 0, 2, 0}, g(8, 0.1);
  compute_salience(s, x, g);
  EXPECT_DOUBLE_EQ(s.group_states[0].salience, 0.0);
  EXPECT_DOUBLE_EQ(s.group_states[1].salience, 0.75);
  partition_penalized(s);
  EXPECT_TRUE(s.group_states[1].penalized);
  EXPECT_TRUE(s.group_states[2].penalized);
  EXPECT_FALSE(s.group_states[3].penalized);
}

TEST(Salience, ComponentFloorKeepsOneSurvivor) {
  OptimizerConfig cfg;
  cfg.target_zero_groups = 2;
  cfg.w_cos = 0.0;
  const std::vector<int> comp{0, 0, 1, 1};
  auto s = make_dhspg_state(cfg, 8, contiguous_groups(4, 2), comp);
  const std::vector<double> x{0.1, 0, 0.2, 0, 0.3, 0, 5, 0}, g(8, 0.0);
  compute_salience(s, x, g);
  partition_penalized(s);
  // Groups 0 and 1 score highest but make up all of component 0.
  EXPECT_TRUE(s.group_states[0].penalized);
  EXPECT_FALSE(s.group_states[1].penalized);
  EXPECT_TRUE(s.group_states[2].penalized);
  EXPECT_FALSE(s.group_states[3].penalized);

  cfg.target_zero_groups = 3;
  auto over = make_dhspg_state(cfg, 8, contiguous_groups(4, 2), comp);
  compute_salience(over, x, g);
  EXPECT_THROW(partition_penalized(over), Error);
}

TEST(Salience, ComponentScopeNormalizesPerComponent) {
  OptimizerConfig cfg;
  cfg.w_cos = 0.0;
  cfg.magnitude_scope = MagnitudeScope::Component;
  auto s = make_dhspg_state(cfg, 4, contiguous_groups(4, 1), {0, 0, 1, 1});
  compute_salience(s, std::vector<double>{1, 2, 10, 20}, std::vector<double>(4, 0.0));
  EXPECT_DOUBLE_EQ(s.group_states[0].salience, s.group_states[2].salience);
}

// Invariant: once a group is frozen at zero it stays exactly zero.
TEST(Step, FrozenGroupsStayZeroAndSparsityNeverExceedsK) {
  OptimizerConfig cfg;
  cfg.lr = 0.05;
  cfg.target_zero_groups = 3;
  cfg.warmup_steps = 5;
  cfg.halfspace_start = 5;
  auto s = make_dhspg_state(cfg, 20, contiguous_groups(5, 4));
  std::mt19937_64 rng(1);
  std::normal_distribution<double> normal;
  std::vector<double> x(20);
  for (auto &v : x) v = normal(rng);
  std::vector<bool> was_frozen(5, false);
  for (int t = 0; t < 400; ++t) {
    std::vector<double> g(20);
    for (std::size_t i = 0; i < 20; ++i) g[i] = 0.2 * x[i] + 0.05 * normal(rng); // f = 0.1|x|^2
    step(s, x, g);
    for (int k = 0; k < 5; ++k) {
      if (was_frozen[std::size_t(k)])
        for (auto i : s.groups[std::size_t(k)]) EXPECT_EQ(x[i], 0.0);
      was_frozen[std::size_t(k)] = s.group_states[std::size_t(k)].frozen_zero;
    }
    EXPECT_LE(achieved_group_sparsity(s, x), 3);
  }
  EXPECT_EQ(achieved_group_sparsity(s, x), 3);
}

TEST(Step, AntiAlignedGradientStalls) {
  // cos = -1: lambda_min = lambda_max = |g|, so the penalized direction
  // vanishes and the group does not move.
  OptimizerConfig cfg;
  cfg.target_zero_groups = 1;
  auto s = make_dhspg_state(cfg, 2, {{0, 1}});
  s.group_states[0].penalized = true;
  const std::vector<double> x{1.0, 1.0}, g{-0.5, -0.5};
  select_lambda(s, x, g);
  const auto d = dual_halfspace_direction(s, x, g);
  EXPECT_NEAR(d[0], 0.0, 1e-15);
  EXPECT_NEAR(d[1], 0.0, 1e-15);
}

TEST(Config, ValidationAndJson) {
  OptimizerConfig cfg;
  cfg.target_zero_groups = 5;
  EXPECT_THROW(cfg.validate(4), Error);
  EXPECT_NO_THROW(cfg.validate(5));
  auto bad = cfg;
  bad.lr = -1.0;
  EXPECT_THROW(bad.validate(10), Error);

  cfg.mode = OptimizerMode::Hspg;
  cfg.magnitude_scope = MagnitudeScope::Component;
  cfg.w_cos = 0.2;
  const auto back = optimizer_config_from_json(to_json(cfg));
  EXPECT_EQ(to_json(back), to_json(cfg));
  EXPECT_EQ(optimizer_config_from_json(nlohmann::json::object()).lr, OptimizerConfig{}.lr);
}

TEST(Config, DisjointGroupsRequired) {
  EXPECT_THROW(make_dhspg_state(OptimizerConfig{}, 4, {{0, 1}, {1, 2}}), Error);
  EXPECT_THROW(make_dhspg_state(OptimizerConfig{}, 2, {{0, 5}}), Error);
}
