#ifndef ZIGPRUNE_PROBES_HPP
#define ZIGPRUNE_PROBES_HPP

#include <cstdint>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "zigprune/dhspg.hpp"

namespace zigprune {

/// f(x) = x^T A x / 2 over contiguous groups; the first `penalized_groups`
/// groups form the penalized set.
struct QuadraticProbe {
  Eigen::MatrixXd A;
  double lipschitz = 0.0; ///< largest eigenvalue of A
  double step_fraction = 0.5; ///< alpha = step_fraction / L
  double omega = 0.5;
  double rho = 0.1;
  int group_size = 5;
  int penalized_groups = 4;
  double default_lambda = 1e-3;

  int groups() const { return int(A.rows()) / group_size; }
};

/// A = Q diag(eigs) Q^T with eigenvalues spread over [0.1, 10].
QuadraticProbe make_quadratic_probe(int groups, int group_size, std::uint64_t seed);
QuadraticProbe identity_probe(int groups, int group_size);

struct ProbeResult {
  std::string name;
  int trials = 0;
  int passed = 0;
  double worst_margin = 0.0; ///< smallest (bound - value); negative means violated

  bool ok() const { return trials > 0 && passed == trials; }
};

/// The upper bound on lambda_g below which the per-group decrease term is
/// non-positive, for step alpha on an L-smooth objective.
double lambda_hat(double cos_theta, double grad_norm, double alpha, double lipschitz);

/// Evaluates, at `trials` random iterates each:
///   sufficient-decrease  f(x+ad) <= f(x) - (a - La^2/2)|grad_np|^2
///   magnitude-decrease   |x_g + a d_g| < |x_g| for 0 < a < 2<x_g,-d_g>/|d_g|^2
///   norm-identity        |x_g + a d_g|^2 = |x_g|^2 + (w^2-2w)|x_g|^2 cos^2, a = w<x_g,-d_g>/|d_g|^2
///   contraction          |x_p + a d_p|^2 <= (1-gamma^2)|x_p|^2, gamma^2 = (2w-w^2)rho^2
std::vector<ProbeResult> run_lemma_probes(const QuadraticProbe &probe, int trials,
                                          std::uint64_t seed);

std::string probes_table(const std::vector<ProbeResult> &results);

} // namespace zigprune

#endif
