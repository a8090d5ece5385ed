#ifndef ZIGPRUNE_REGRESSION_HPP
#define ZIGPRUNE_REGRESSION_HPP

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "zigprune/dhspg.hpp"

namespace zigprune {

/// Least squares y = X w* + noise with w* supported on a few contiguous
/// feature groups.
struct SyntheticGroupSparseProblem {
  int samples = 500;
  int groups = 10;
  int group_size = 5;
  int support_size = 4;
  double sigma = 0.01;
  /// Explicit support; drawn from the seed when empty.
  std::vector<int> support;
};

struct RegressionData {
  SyntheticGroupSparseProblem problem;
  Eigen::MatrixXd X;
  Eigen::VectorXd y;
  Eigen::VectorXd w_star;
  std::vector<int> support; ///< sorted
  Eigen::VectorXd oracle;   ///< least squares restricted to the support columns
  double oracle_objective = 0.0;

  int features() const { return problem.groups * problem.group_size; }
  std::vector<std::vector<std::size_t>> group_indices() const;
};

/// Draws X ~ N(0,1), the support (unless given), w* ~ N(0,1) on it and the
/// noise, in that order. Throws InvalidConfig.
RegressionData gen_synthetic_regression(const SyntheticGroupSparseProblem &problem,
                                        std::uint64_t seed);

/// f(w) = ||X w - y||^2 / (2 m).
double regression_objective(const RegressionData &d, const Eigen::VectorXd &w);

/// Mini-batch gradient of f over the listed rows.
Eigen::VectorXd regression_gradient(const RegressionData &d, const Eigen::VectorXd &w,
                                    const std::vector<int> &rows);

struct RegressionSchedule {
  int epochs = 60;
  int batch_size = 25;
  int period_epochs = 20; ///< lr decays every period; T_w = T_h = half a period
};

struct RegressionRun {
  Eigen::VectorXd w;
  std::vector<int> zero_groups;
  double objective = 0.0;
  std::vector<double> objective_per_epoch;
};

/// Trains from w = 0 with the optimizer config; the step schedule fields of
/// `cfg` (lr period, T_w, T_h) are filled from `schedule`.
RegressionRun train_regression(const RegressionData &d, OptimizerConfig cfg,
                               const RegressionSchedule &schedule, std::uint64_t seed);

struct AblationRow {
  std::string method;
  double parameter = 0.0; ///< K for dhspg, lambda for hspg
  int sparsity = 0;
  double objective = 0.0;
  bool support_recovered = false;
};

/// DHSPG rows for every K, HSPG rows for every lambda; shared seed/schedule.
std::vector<AblationRow> run_ablation_dhspg_vs_hspg(const RegressionData &d,
                                                    const OptimizerConfig &base,
                                                    const RegressionSchedule &schedule,
                                                    const std::vector<int> &ks,
                                                    const std::vector<double> &lambdas,
                                                    std::uint64_t seed);

std::string ablation_csv(const std::vector<AblationRow> &rows);

/// X, y, w* and the oracle as binary tensors plus a JSON summary.
void save_regression(const RegressionData &d, const std::filesystem::path &dir);

} // namespace zigprune

#endif
