#include "zigprune/probes.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>
#include <sstream>

#include "zigprune/error.hpp"

namespace zigprune {

namespace {

double largest_eigenvalue(const Eigen::MatrixXd &A) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(A, Eigen::EigenvaluesOnly);
  return es.eigenvalues().maxCoeff();
}

} // namespace

QuadraticProbe make_quadratic_probe(int groups, int group_size, std::uint64_t seed) {
  const int n = groups * group_size;
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  Eigen::MatrixXd M(n, n);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) M(i, j) = normal(rng);
  const Eigen::MatrixXd Q = M.householderQr().householderQ();
  Eigen::VectorXd eig(n);
  for (int i = 0; i < n; ++i) eig[i] = 0.1 * std::pow(100.0, n > 1 ? double(i) / (n - 1) : 0.0);
  QuadraticProbe p;
  p.A = Q * eig.asDiagonal() * Q.transpose();
  p.A = 0.5 * (p.A + p.A.transpose());
  p.lipschitz = largest_eigenvalue(p.A);
  p.group_size = group_size;
  p.penalized_groups = std::max(1, groups / 2);
  return p;
}

QuadraticProbe identity_probe(int groups, int group_size) {
  QuadraticProbe p;
  p.A = Eigen::MatrixXd::Identity(groups * group_size, groups * group_size);
  p.lipschitz = largest_eigenvalue(p.A);
  p.group_size = group_size;
  p.penalized_groups = std::max(1, groups / 2);
  return p;
}

double lambda_hat(double cos_theta, double grad_norm, double alpha, double lipschitz) {
  const double la = lipschitz * alpha;
  const double lin = (1.0 - la) * alpha * cos_theta * grad_norm;
  const double disc =
      lin * lin + 2.0 * lipschitz * alpha * alpha * (alpha - 0.5 * la * alpha) * grad_norm * grad_norm;
  return (lin + std::sqrt(disc)) / (lipschitz * alpha * alpha);
}

namespace {

struct Iterate {
  Eigen::VectorXd x, grad, d;
};

// Builds the direction at x with an amplification factor that keeps every
// adjusted lambda_g strictly inside (lambda_min, min(lambda_max, lambda_hat)).
Iterate direction_at(const QuadraticProbe &p, const Eigen::VectorXd &x, double alpha) {
  const int n = int(x.size());
  Iterate it;
  it.x = x;
  it.grad = p.A * x;

  std::vector<std::vector<std::size_t>> groups(std::size_t(p.groups()));
  for (int g = 0; g < p.groups(); ++g)
    for (int k = 0; k < p.group_size; ++k) groups[std::size_t(g)].push_back(std::size_t(g * p.group_size + k));

  double amplify = 2.0;
  double ratio = std::numeric_limits<double>::infinity();
  for (int g = 0; g < p.penalized_groups; ++g) {
    const auto xs = x.segment(g * p.group_size, p.group_size);
    const auto gs = it.grad.segment(g * p.group_size, p.group_size);
    const double cos_theta = xs.dot(gs) / (xs.norm() * gs.norm());
    const auto iv = lambda_interval(cos_theta, gs.norm());
    if (!iv) continue;
    const double upper = std::min(iv->hi, lambda_hat(cos_theta, gs.norm(), alpha, p.lipschitz));
    ratio = std::min(ratio, upper / iv->lo);
  }
  if (std::isfinite(ratio)) amplify = 0.5 * (1.0 + ratio);

  OptimizerConfig cfg;
  cfg.lambda_amplify = amplify;
  cfg.default_lambda = p.default_lambda;
  cfg.momentum = 0.0;
  auto state = make_dhspg_state(cfg, std::size_t(n), groups);
  for (int g = 0; g < p.penalized_groups; ++g) state.group_states[std::size_t(g)].penalized = true;
  std::vector<double> xv(x.data(), x.data() + n), gv(it.grad.data(), it.grad.data() + n);
  select_lambda(state, xv, gv);
  const auto d = dual_halfspace_direction(state, xv, gv);
  it.d = Eigen::Map<const Eigen::VectorXd>(d.data(), n);
  return it;
}

Eigen::VectorXd random_iterate(int n, std::mt19937_64 &rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  Eigen::VectorXd x(n);
  for (int i = 0; i < n; ++i) x[i] = normal(rng);
  return x;
}

void tally(ProbeResult &r, double margin, bool ok) {
  ++r.trials;
  if (ok) ++r.passed;
  r.worst_margin = r.trials == 1 ? margin : std::min(r.worst_margin, margin);
}

} // namespace

std::vector<ProbeResult> run_lemma_probes(const QuadraticProbe &p, int trials, std::uint64_t seed) {
  if (p.A.rows() != p.A.cols() || p.A.rows() % p.group_size != 0 || p.lipschitz <= 0.0)
    throw Error(ErrorCode::InvalidConfig, "quadratic probe is malformed");
  const int n = int(p.A.rows());
  const int s = p.group_size;
  const int np = p.penalized_groups * s; // penalized variables are the leading block
  const double alpha = p.step_fraction / p.lipschitz;
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.05, 0.95);
  auto f = [&](const Eigen::VectorXd &x) { return 0.5 * x.dot(p.A * x); };

  ProbeResult decrease{"sufficient-decrease"}, magnitude{"magnitude-decrease"},
      identity{"norm-identity"}, contraction{"contraction"};

  for (int t = 0; t < trials; ++t) {
    // Objective decrease with the full step alpha.
    {
      const auto it = direction_at(p, random_iterate(n, rng), alpha);
      const double lhs = f(it.x + alpha * it.d);
      const double rhs = f(it.x) - (alpha - 0.5 * p.lipschitz * alpha * alpha) *
                                       it.grad.tail(n - np).squaredNorm();
      const double margin = rhs - lhs;
      tally(decrease, margin, margin >= -1e-12 * std::max(1.0, std::abs(f(it.x))));
    }
    // Per-group magnitude decrease and the closed-form norm after the step.
    {
      const auto it = direction_at(p, random_iterate(n, rng), alpha);
      double worst_mag = std::numeric_limits<double>::infinity();
      double worst_res = 0.0;
      for (int g = 0; g < p.penalized_groups; ++g) {
        const Eigen::VectorXd xg = it.x.segment(g * s, s);
        const Eigen::VectorXd dg = it.d.segment(g * s, s);
        const double B = -xg.dot(dg);
        const double A = dg.squaredNorm();
        const double a_mag = unit(rng) * 2.0 * B / A;
        worst_mag = std::min(worst_mag, xg.norm() - (xg + a_mag * dg).norm());
        const double a_id = p.omega * B / A;
        const double cos_xd = B / (xg.norm() * dg.norm());
        const double lhs = (xg + a_id * dg).squaredNorm();
        const double rhs = xg.squaredNorm() +
                           (p.omega * p.omega - 2.0 * p.omega) * xg.squaredNorm() * cos_xd * cos_xd;
        worst_res = std::max(worst_res, std::abs(lhs - rhs));
      }
      tally(magnitude, worst_mag, worst_mag > 0.0);
      tally(identity, 1e-10 - worst_res, worst_res < 1e-10);
    }
    // Contraction over the penalized block with the smallest admissible step.
    {
      Iterate it;
      bool found = false;
      for (int attempt = 0; attempt < 1000 && !found; ++attempt) {
        it = direction_at(p, random_iterate(n, rng), alpha);
        found = true;
        for (int g = 0; g < p.penalized_groups && found; ++g) {
          const Eigen::VectorXd xg = it.x.segment(g * s, s);
          const Eigen::VectorXd dg = it.d.segment(g * s, s);
          found = std::abs(xg.dot(dg)) >= p.rho * xg.norm() * dg.norm();
        }
      }
      double step = std::numeric_limits<double>::infinity();
      for (int g = 0; g < p.penalized_groups; ++g) {
        const Eigen::VectorXd xg = it.x.segment(g * s, s);
        const Eigen::VectorXd dg = it.d.segment(g * s, s);
        step = std::min(step, -xg.dot(dg) / dg.squaredNorm());
      }
      step *= p.omega;
      const double gamma2 = (2.0 * p.omega - p.omega * p.omega) * p.rho * p.rho;
      const double after = (it.x.head(np) + step * it.d.head(np)).squaredNorm();
      const double bound = (1.0 - gamma2) * it.x.head(np).squaredNorm();
      tally(contraction, bound - after, found && after <= bound);
    }
  }
  return {decrease, magnitude, identity, contraction};
}

std::string probes_table(const std::vector<ProbeResult> &results) {
  std::ostringstream os;
  os << "probe,trials,passed,worst_margin,status\n";
  os.precision(6);
  for (const auto &r : results)
    os << r.name << ',' << r.trials << ',' << r.passed << ',' << r.worst_margin << ','
       << (r.ok() ? "pass" : "fail") << '\n';
  return os.str();
}

} // namespace zigprune
