#include "zigprune/regression.hpp"

#include <algorithm>
#include <numeric>
#include <random>
#include <sstream>

#include "zigprune/data.hpp"
#include "zigprune/error.hpp"
#include "zigprune/graph_io.hpp"

namespace zigprune {

std::vector<std::vector<std::size_t>> RegressionData::group_indices() const {
  std::vector<std::vector<std::size_t>> out(std::size_t(problem.groups));
  for (int g = 0; g < problem.groups; ++g)
    for (int k = 0; k < problem.group_size; ++k)
      out[std::size_t(g)].push_back(std::size_t(g * problem.group_size + k));
  return out;
}

RegressionData gen_synthetic_regression(const SyntheticGroupSparseProblem &problem,
                                        std::uint64_t seed) {
  if (problem.groups <= 0 || problem.group_size <= 0 || problem.samples <= 0)
    throw Error(ErrorCode::InvalidConfig, "regression problem needs positive dimensions");
  if (problem.support_size < 0 || problem.support_size > problem.groups)
    throw Error(ErrorCode::InvalidConfig, "|S*| must lie in [0, G]");

  RegressionData d;
  d.problem = problem;
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  const int n = d.features();
  d.X.resize(problem.samples, n);
  for (int i = 0; i < problem.samples; ++i)
    for (int j = 0; j < n; ++j) d.X(i, j) = normal(rng);

  if (!problem.support.empty()) {
    d.support = problem.support;
    d.problem.support_size = int(d.support.size());
  } else {
    std::vector<int> all(std::size_t(problem.groups));
    std::iota(all.begin(), all.end(), 0);
    std::shuffle(all.begin(), all.end(), rng);
    d.support.assign(all.begin(), all.begin() + problem.support_size);
  }
  std::sort(d.support.begin(), d.support.end());
  for (int g : d.support)
    if (g < 0 || g >= problem.groups) throw Error(ErrorCode::InvalidConfig, "support out of range");

  d.w_star = Eigen::VectorXd::Zero(n);
  for (int g : d.support)
    for (int k = 0; k < problem.group_size; ++k) d.w_star[g * problem.group_size + k] = normal(rng);
  d.y = d.X * d.w_star;
  for (int i = 0; i < problem.samples; ++i) d.y[i] += problem.sigma * normal(rng);

  const int cols = int(d.support.size()) * problem.group_size;
  Eigen::MatrixXd Xs(problem.samples, cols);
  for (std::size_t s = 0; s < d.support.size(); ++s)
    Xs.middleCols(Eigen::Index(s) * problem.group_size, problem.group_size) =
        d.X.middleCols(d.support[s] * problem.group_size, problem.group_size);
  d.oracle = Eigen::VectorXd::Zero(n);
  if (cols > 0) {
    const Eigen::VectorXd ws = Xs.colPivHouseholderQr().solve(d.y);
    for (std::size_t s = 0; s < d.support.size(); ++s)
      d.oracle.segment(d.support[s] * problem.group_size, problem.group_size) =
          ws.segment(Eigen::Index(s) * problem.group_size, problem.group_size);
  }
  d.oracle_objective = regression_objective(d, d.oracle);
  return d;
}

double regression_objective(const RegressionData &d, const Eigen::VectorXd &w) {
  return (d.X * w - d.y).squaredNorm() / (2.0 * double(d.X.rows()));
}

Eigen::VectorXd regression_gradient(const RegressionData &d, const Eigen::VectorXd &w,
                                    const std::vector<int> &rows) {
  Eigen::VectorXd g = Eigen::VectorXd::Zero(w.size());
  for (int r : rows) {
    const double residual = d.X.row(r).dot(w) - d.y[r];
    g.noalias() += residual * d.X.row(r).transpose();
  }
  return g / double(rows.size());
}

RegressionRun train_regression(const RegressionData &d, OptimizerConfig cfg,
                               const RegressionSchedule &schedule, std::uint64_t seed) {
  const int m = int(d.X.rows());
  const int batch = std::max(1, std::min(schedule.batch_size, m));
  const std::int64_t steps_per_epoch = (m + batch - 1) / batch;
  cfg.lr_period_steps = std::int64_t(schedule.period_epochs) * steps_per_epoch;
  cfg.warmup_steps = cfg.lr_period_steps / 2;
  cfg.halfspace_start = cfg.warmup_steps;

  auto state = make_dhspg_state(cfg, std::size_t(d.features()), d.group_indices());
  std::mt19937_64 rng(seed);
  std::vector<int> order(static_cast<std::size_t>(m));
  std::iota(order.begin(), order.end(), 0);

  RegressionRun run;
  run.w = Eigen::VectorXd::Zero(d.features());
  std::vector<double> x(std::size_t(d.features()), 0.0);
  for (int epoch = 0; epoch < schedule.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    for (int start = 0; start < m; start += batch) {
      const std::vector<int> rows(order.begin() + start, order.begin() + std::min(m, start + batch));
      const Eigen::VectorXd w = Eigen::Map<const Eigen::VectorXd>(x.data(), Eigen::Index(x.size()));
      const Eigen::VectorXd g = regression_gradient(d, w, rows);
      step(state, x, std::span<const double>(g.data(), std::size_t(g.size())));
    }
    run.w = Eigen::Map<const Eigen::VectorXd>(x.data(), Eigen::Index(x.size()));
    run.objective_per_epoch.push_back(regression_objective(d, run.w));
  }
  const auto groups = d.group_indices();
  for (std::size_t g = 0; g < groups.size(); ++g)
    if (std::all_of(groups[g].begin(), groups[g].end(), [&](std::size_t i) { return x[i] == 0.0; }))
      run.zero_groups.push_back(int(g));
  run.objective = regression_objective(d, run.w);
  return run;
}

std::vector<AblationRow> run_ablation_dhspg_vs_hspg(const RegressionData &d,
                                                    const OptimizerConfig &base,
                                                    const RegressionSchedule &schedule,
                                                    const std::vector<int> &ks,
                                                    const std::vector<double> &lambdas,
                                                    std::uint64_t seed) {
  std::vector<int> truth_zero;
  for (int g = 0; g < d.problem.groups; ++g)
    if (!std::binary_search(d.support.begin(), d.support.end(), g)) truth_zero.push_back(g);

  std::vector<AblationRow> rows;
  auto record = [&](const char *method, double param, const RegressionRun &r) {
    rows.push_back(AblationRow{method, param, int(r.zero_groups.size()), r.objective,
                               r.zero_groups == truth_zero});
  };
  for (int k : ks) {
    auto cfg = base;
    cfg.mode = OptimizerMode::Dhspg;
    cfg.target_zero_groups = k;
    record("dhspg", k, train_regression(d, cfg, schedule, seed));
  }
  for (double lambda : lambdas) {
    auto cfg = base;
    cfg.mode = OptimizerMode::Hspg;
    cfg.target_zero_groups = 0;
    cfg.hspg_lambda = lambda;
    record("hspg", lambda, train_regression(d, cfg, schedule, seed));
  }
  return rows;
}

std::string ablation_csv(const std::vector<AblationRow> &rows) {
  std::ostringstream os;
  os << "method,parameter,sparsity,objective,support_recovered\n";
  os.precision(10);
  for (const auto &r : rows)
    os << r.method << ',' << r.parameter << ',' << r.sparsity << ',' << r.objective << ','
       << (r.support_recovered ? 1 : 0) << '\n';
  return os.str();
}

void save_regression(const RegressionData &d, const std::filesystem::path &dir) {
  std::filesystem::create_directories(dir);
  auto as_tensor = [](const Eigen::MatrixXd &m) {
    Tensor t(TensorShape{std::int64_t(m.rows()), std::int64_t(m.cols())});
    for (Eigen::Index i = 0; i < m.rows(); ++i)
      for (Eigen::Index j = 0; j < m.cols(); ++j) t.data[std::size_t(i * m.cols() + j)] = m(i, j);
    return t;
  };
  save_tensor(as_tensor(d.X), dir / "X");
  save_tensor(as_tensor(d.y), dir / "y");
  save_tensor(as_tensor(d.w_star), dir / "w_star");
  save_tensor(as_tensor(d.oracle), dir / "oracle");
  write_json_file({{"samples", d.problem.samples},
                   {"groups", d.problem.groups},
                   {"group_size", d.problem.group_size},
                   {"sigma", d.problem.sigma},
                   {"support", d.support},
                   {"oracle_objective", d.oracle_objective}},
                  dir / "problem.json");
}

} // namespace zigprune
