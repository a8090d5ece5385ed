#ifndef ZIGPRUNE_DHSPG_HPP
#define ZIGPRUNE_DHSPG_HPP

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

namespace zigprune {

enum class OptimizerMode { Dhspg, Hspg };

std::string_view to_string(OptimizerMode m);

/// Where the magnitude term of the salience score takes its normalizer from.
enum class MagnitudeScope { Global, Component };

struct OptimizerConfig {
  double lr = 0.1;
  double lr_decay = 10.0;
  std::int64_t lr_period_steps = 0; ///< steps between decays; 0 keeps lr constant
  int target_zero_groups = 0;       ///< K
  std::int64_t warmup_steps = 0;    ///< T_w
  std::int64_t halfspace_start = 0; ///< T_h
  double tau = 1e-6;
  double default_lambda = 1e-3;
  double epsilon = 0.0;
  double lambda_amplify = 2.0;
  double momentum = 0.9;
  OptimizerMode mode = OptimizerMode::Dhspg;
  double hspg_lambda = 1e-3;
  double w_cos = 0.5;
  double w_mag = 0.5;
  MagnitudeScope magnitude_scope = MagnitudeScope::Global;

  /// Throws InvalidConfig / KExceedsGroupCount.
  void validate(std::size_t group_count) const;
};

nlohmann::json to_json(const OptimizerConfig &c);
/// Missing keys keep their defaults.
OptimizerConfig optimizer_config_from_json(const nlohmann::json &j);

struct GroupState {
  double cos_theta = 0.0;
  double salience = 0.0;
  bool penalized = false;
  double lambda = 0.0;
  bool frozen_zero = false;
};

struct DhspgState {
  OptimizerConfig config;
  std::int64_t t = 0;
  std::vector<double> velocity;
  std::vector<std::vector<std::size_t>> groups; ///< flat indices per group
  std::vector<int> group_component;             ///< component label per group, may be empty
  std::vector<GroupState> group_states;
  bool partitioned = false;
  int frozen_count = 0;
};

/// `groups` must be pairwise disjoint index lists into a vector of size `n`.
DhspgState make_dhspg_state(const OptimizerConfig &cfg, std::size_t n,
                            std::vector<std::vector<std::size_t>> groups,
                            std::vector<int> group_component = {});

double learning_rate(const OptimizerConfig &cfg, std::int64_t t);

/// Momentum SGD on every variable: v <- beta v + g; x <- x - lr v.
void warmup_step(DhspgState &s, std::span<double> x, std::span<const double> grad);

/// Fills cos_theta and salience of every group from the iterate and a
/// gradient estimate.
void compute_salience(DhspgState &s, std::span<const double> x, std::span<const double> grad);

/// Marks the K highest-salience groups as penalized (ties to the lower
/// index), never taking every group of one component. Throws
/// KExceedsGroupCount.
void partition_penalized(DhspgState &s);

struct LambdaInterval {
  double lo = 0.0;
  double hi = 0.0;
};

/// (lambda_min, lambda_max) when cos_theta < 0, nullopt otherwise.
std::optional<LambdaInterval> lambda_interval(double cos_theta, double grad_norm);

/// Coefficient rule for one penalized group.
double select_group_lambda(double cos_theta, double grad_norm, const OptimizerConfig &cfg);

/// Recomputes cos_theta and lambda of every penalized group.
void select_lambda(DhspgState &s, std::span<const double> x, std::span<const double> grad);

/// -grad outside the penalized groups, -grad - lambda x/max(|x|,tau) inside,
/// zero on frozen groups.
std::vector<double> dual_halfspace_direction(const DhspgState &s, std::span<const double> x,
                                             std::span<const double> grad);

/// Zeroes (and freezes) penalized groups of `trial` whose inner product with
/// the current iterate drops below epsilon |x_g|^2. Stops at K frozen groups
/// in Dhspg mode.
void halfspace_project(DhspgState &s, std::span<const double> x_t, std::span<double> trial);

/// One optimizer iteration; dispatches on t and the configured mode.
void step(DhspgState &s, std::span<double> x, std::span<const double> grad);

/// Baseline iteration: one global lambda on every group, no K cap.
void hspg_step(DhspgState &s, std::span<double> x, std::span<const double> grad);

/// Groups whose variables are all exactly zero.
int achieved_group_sparsity(const DhspgState &s, std::span<const double> x);

struct LambdaStats {
  int penalized = 0;
  double mean = 0.0;
  double max = 0.0;
};

LambdaStats lambda_stats(const DhspgState &s);

} // namespace zigprune

#endif
