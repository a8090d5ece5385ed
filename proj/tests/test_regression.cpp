#include <gtest/gtest.h>

#include <numeric>
#include <set>

#include "zigprune/error.hpp"
#include "zigprune/probes.hpp"
#include "zigprune/regression.hpp"

using namespace zigprune;

namespace {

OptimizerConfig regression_optimizer() {
  OptimizerConfig cfg;
  cfg.lr = 0.01;
  cfg.momentum = 0.9;
  cfg.w_cos = 0.1;
  cfg.w_mag = 0.9;
  return cfg;
}

std::vector<int> complement(const std::vector<int> &support, int groups) {
  std::vector<int> out;
  for (int g = 0; g < groups; ++g)
    if (!std::count(support.begin(), support.end(), g)) out.push_back(g);
  return out;
}

} // namespace

TEST(SyntheticRegression, NoiselessOracleRecoversTruth) {
  SyntheticGroupSparseProblem prob;
  prob.sigma = 0.0;
  prob.samples = 400;
  const auto d = gen_synthetic_regression(prob, 4);
  EXPECT_LT((d.oracle - d.w_star).cwiseAbs().maxCoeff(), 1e-8);
  EXPECT_LT(d.oracle_objective, 1e-16);
}

TEST(SyntheticRegression, OracleLivesOnTheSupport) {
  SyntheticGroupSparseProblem prob;
  prob.support = {7, 1, 4};
  const auto d = gen_synthetic_regression(prob, 9);
  EXPECT_EQ(d.support, (std::vector<int>{1, 4, 7}));
  for (int g = 0; g < prob.groups; ++g) {
    const double n = d.oracle.segment(g * prob.group_size, prob.group_size).norm();
    if (std::count(d.support.begin(), d.support.end(), g))
      EXPECT_GT(n, 0.0);
    else
      EXPECT_EQ(n, 0.0);
  }
  // The restricted solve beats the truth on its own columns.
  EXPECT_LE(d.oracle_objective, regression_objective(d, d.w_star) + 1e-15);
}

TEST(SyntheticRegression, SameSeedSameData) {
  SyntheticGroupSparseProblem prob;
  const auto a = gen_synthetic_regression(prob, 3), b = gen_synthetic_regression(prob, 3);
  EXPECT_EQ(a.X, b.X);
  EXPECT_EQ(a.y, b.y);
  EXPECT_EQ(a.support, b.support);
  prob.support_size = 11;
  EXPECT_THROW(gen_synthetic_regression(prob, 3), Error);
}

TEST(SyntheticRegression, GradientMatchesObjective) {
  const auto d = gen_synthetic_regression(SyntheticGroupSparseProblem{}, 1);
  std::vector<int> rows(std::size_t(d.X.rows()));
  std::iota(rows.begin(), rows.end(), 0);
  Eigen::VectorXd w = Eigen::VectorXd::LinSpaced(d.features(), -1.0, 1.0);
  const auto g = regression_gradient(d, w, rows);
  for (int i : {0, 17, 49}) {
    Eigen::VectorXd e = Eigen::VectorXd::Zero(d.features());
    e[i] = 1e-6;
    const double fd = (regression_objective(d, w + e) - regression_objective(d, w - e)) / 2e-6;
    EXPECT_NEAR(g[i], fd, 1e-6);
  }
}

TEST(Dhspg, ExactSparsityForEachK) {
  const auto d = gen_synthetic_regression(SyntheticGroupSparseProblem{}, 2);
  for (int k : {2, 4, 6}) {
    auto cfg = regression_optimizer();
    cfg.target_zero_groups = k;
    const auto run = train_regression(d, cfg, RegressionSchedule{}, 2);
    EXPECT_EQ(int(run.zero_groups.size()), k) << "K = " << k;
  }
}

TEST(Dhspg, RecoversTrueSupportNearOracleObjective) {
  const auto d = gen_synthetic_regression(SyntheticGroupSparseProblem{}, 5);
  auto cfg = regression_optimizer();
  cfg.target_zero_groups = 6;
  const auto run = train_regression(d, cfg, RegressionSchedule{}, 5);
  EXPECT_EQ(run.zero_groups, complement(d.support, 10));
  EXPECT_LE(run.objective, 1.05 * d.oracle_objective);
}

TEST(Hspg, SparsityFollowsLambda) {
  const auto d = gen_synthetic_regression(SyntheticGroupSparseProblem{}, 8);
  const auto rows = run_ablation_dhspg_vs_hspg(d, regression_optimizer(), RegressionSchedule{}, {4},
                                               {0.0, 1e-2, 10.0}, 8);
  ASSERT_EQ(rows.size(), 4u);
  EXPECT_EQ(rows[0].method, "dhspg");
  EXPECT_EQ(rows[0].sparsity, 4);
  EXPECT_EQ(rows[1].sparsity, 0); // lambda = 0
  std::set<int> levels;
  for (std::size_t i = 1; i < rows.size(); ++i) levels.insert(rows[i].sparsity);
  EXPECT_GE(levels.size(), 2u);
  const auto csv = ablation_csv(rows);
  EXPECT_EQ(csv.substr(0, csv.find('\n')), "method,parameter,sparsity,objective,support_recovered");
}

TEST(Probes, AllInequalitiesHoldOnFixedQuadratics) {
  for (const auto &probe : {make_quadratic_probe(8, 5, 3), identity_probe(8, 5)}) {
    for (const auto &r : run_lemma_probes(probe, 100, 17)) {
      EXPECT_EQ(r.trials, 100) << r.name;
      EXPECT_TRUE(r.ok()) << r.name << " worst margin " << r.worst_margin;
    }
  }
}

TEST(Probes, LambdaBoundExceedsLowerEndpoint) {
  // For cos < 0 the admissible upper bound sits above lambda_min, so the
  // interval used by the sufficient-decrease probe is never empty.
  const double L = 4.0, alpha = 0.5 / L;
  for (double c : {-0.9, -0.5, -0.1}) {
    const double gn = 2.0;
    EXPECT_GT(lambda_hat(c, gn, alpha, L), -c * gn);
  }
}

TEST(Probes, LipschitzIsComputedFromTheMatrix) {
  const auto p = make_quadratic_probe(4, 3, 1);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(p.A);
  EXPECT_NEAR(p.lipschitz, es.eigenvalues().maxCoeff(), 1e-12);
  EXPECT_NEAR(p.lipschitz, 10.0, 1e-9);
  EXPECT_NEAR(es.eigenvalues().minCoeff(), 0.1, 1e-9);
}
