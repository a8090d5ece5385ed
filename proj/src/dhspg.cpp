#include "zigprune/dhspg.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>

#include "zigprune/error.hpp"

namespace zigprune {

std::string_view to_string(OptimizerMode m) {
  return m == OptimizerMode::Dhspg ? "dhspg" : "hspg";
}

void OptimizerConfig::validate(std::size_t group_count) const {
  auto bad = [](const std::string &what) { throw Error(ErrorCode::InvalidConfig, what); };
  if (!(lr > 0.0)) bad("lr must be positive");
  if (!(lr_decay >= 1.0)) bad("lr_decay must be >= 1");
  if (lr_period_steps < 0) bad("lr_period_steps must be >= 0");
  if (target_zero_groups < 0) bad("K must be >= 0");
  if (std::size_t(target_zero_groups) > group_count)
    throw Error(ErrorCode::KExceedsGroupCount, "K = " + std::to_string(target_zero_groups) +
                                                   " exceeds group count " +
                                                   std::to_string(group_count));
  if (warmup_steps < 0 || warmup_steps > halfspace_start) bad("need 0 <= T_w <= T_h");
  if (!(epsilon >= 0.0 && epsilon < 1.0)) bad("epsilon must lie in [0,1)");
  if (!(tau > 0.0)) bad("tau must be positive");
  if (!(default_lambda >= 0.0)) bad("default lambda must be >= 0");
  if (!(lambda_amplify > 0.0)) bad("lambda_amplify must be positive");
  if (!(momentum >= 0.0 && momentum < 1.0)) bad("momentum must lie in [0,1)");
  if (!(hspg_lambda >= 0.0)) bad("hspg lambda must be >= 0");
}

nlohmann::json to_json(const OptimizerConfig &c) {
  return {{"lr", c.lr},
          {"lr_decay", c.lr_decay},
          {"lr_period_steps", c.lr_period_steps},
          {"K", c.target_zero_groups},
          {"warmup_steps", c.warmup_steps},
          {"halfspace_start", c.halfspace_start},
          {"tau", c.tau},
          {"default_lambda", c.default_lambda},
          {"epsilon", c.epsilon},
          {"lambda_amplify", c.lambda_amplify},
          {"momentum", c.momentum},
          {"mode", std::string(to_string(c.mode))},
          {"hspg_lambda", c.hspg_lambda},
          {"w_cos", c.w_cos},
          {"w_mag", c.w_mag},
          {"magnitude_scope", c.magnitude_scope == MagnitudeScope::Global ? "global" : "component"}};
}

OptimizerConfig optimizer_config_from_json(const nlohmann::json &j) {
  OptimizerConfig c;
  auto get = [&](const char *key, auto &field) {
    if (j.contains(key)) field = j.at(key).get<std::decay_t<decltype(field)>>();
  };
  try {
    get("lr", c.lr);
    get("lr_decay", c.lr_decay);
    get("lr_period_steps", c.lr_period_steps);
    get("K", c.target_zero_groups);
    get("warmup_steps", c.warmup_steps);
    get("halfspace_start", c.halfspace_start);
    get("tau", c.tau);
    get("default_lambda", c.default_lambda);
    get("epsilon", c.epsilon);
    get("lambda_amplify", c.lambda_amplify);
    get("momentum", c.momentum);
    get("hspg_lambda", c.hspg_lambda);
    get("w_cos", c.w_cos);
    get("w_mag", c.w_mag);
    if (j.contains("mode")) {
      const auto m = j.at("mode").get<std::string>();
      if (m == "dhspg") c.mode = OptimizerMode::Dhspg;
      else if (m == "hspg") c.mode = OptimizerMode::Hspg;
      else throw Error(ErrorCode::InvalidConfig, "unknown optimizer mode '" + m + "'");
    }
    if (j.contains("magnitude_scope")) {
      const auto m = j.at("magnitude_scope").get<std::string>();
      if (m == "global") c.magnitude_scope = MagnitudeScope::Global;
      else if (m == "component") c.magnitude_scope = MagnitudeScope::Component;
      else throw Error(ErrorCode::InvalidConfig, "unknown magnitude scope '" + m + "'");
    }
  } catch (const nlohmann::json::exception &e) {
    throw Error(ErrorCode::InvalidConfig, std::string("optimizer config: ") + e.what());
  }
  return c;
}

DhspgState make_dhspg_state(const OptimizerConfig &cfg, std::size_t n,
                            std::vector<std::vector<std::size_t>> groups,
                            std::vector<int> group_component) {
  cfg.validate(groups.size());
  if (!group_component.empty() && group_component.size() != groups.size())
    throw Error(ErrorCode::InvalidConfig, "group_component size mismatch");
  std::vector<char> seen(n, 0);
  for (const auto &grp : groups)
    for (auto i : grp) {
      if (i >= n || seen[i]) throw Error(ErrorCode::InvalidConfig, "groups must be disjoint and in range");
      seen[i] = 1;
    }
  DhspgState s;
  s.config = cfg;
  s.velocity.assign(n, 0.0);
  s.groups = std::move(groups);
  s.group_component = std::move(group_component);
  s.group_states.resize(s.groups.size());
  return s;
}

double learning_rate(const OptimizerConfig &cfg, std::int64_t t) {
  if (cfg.lr_period_steps <= 0) return cfg.lr;
  return cfg.lr / std::pow(cfg.lr_decay, double(t / cfg.lr_period_steps));
}

namespace {

double group_dot(const std::vector<std::size_t> &idx, std::span<const double> a,
                 std::span<const double> b) {
  double s = 0.0;
  for (auto i : idx) s += a[i] * b[i];
  return s;
}

double group_norm(const std::vector<std::size_t> &idx, std::span<const double> a) {
  return std::sqrt(group_dot(idx, a, a));
}

double cosine(const std::vector<std::size_t> &idx, std::span<const double> x,
              std::span<const double> g, double tau) {
  return group_dot(idx, x, g) /
         (std::max(group_norm(idx, x), tau) * std::max(group_norm(idx, g), tau));
}

void check_sizes(const DhspgState &s, std::size_t a, std::size_t b) {
  if (a != s.velocity.size() || b != s.velocity.size())
    throw Error(ErrorCode::ShapeMismatch, "optimizer vector size mismatch");
}

void accumulate_velocity(DhspgState &s, std::span<const double> grad) {
  const double beta = s.config.momentum;
  for (std::size_t i = 0; i < grad.size(); ++i) s.velocity[i] = beta * s.velocity[i] + grad[i];
}

void pin_frozen(DhspgState &s, std::span<double> x) {
  for (std::size_t k = 0; k < s.groups.size(); ++k) {
    if (!s.group_states[k].frozen_zero) continue;
    for (auto i : s.groups[k]) {
      x[i] = 0.0;
      s.velocity[i] = 0.0;
    }
  }
}

// Shared tail of step() and hspg_step() once warm-up is over.
void penalized_update(DhspgState &s, std::span<double> x, std::span<const double> grad) {
  accumulate_velocity(s, grad);
  pin_frozen(s, x);
  // Penalized groups step on the raw stochastic gradient; momentum applies
  // to everything else.
  std::vector<double> estimate(s.velocity);
  for (std::size_t k = 0; k < s.groups.size(); ++k) {
    if (!s.group_states[k].penalized) continue;
    for (auto i : s.groups[k]) {
      estimate[i] = grad[i];
      s.velocity[i] = 0.0;
    }
  }
  select_lambda(s, x, estimate);
  const auto d = dual_halfspace_direction(s, x, estimate);
  const double lr = learning_rate(s.config, s.t);
  std::vector<double> trial(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) trial[i] = x[i] + lr * d[i];
  if (s.t >= s.config.halfspace_start) halfspace_project(s, x, trial);
  std::copy(trial.begin(), trial.end(), x.begin());
  pin_frozen(s, x);
  ++s.t;
}

} // namespace

void warmup_step(DhspgState &s, std::span<double> x, std::span<const double> grad) {
  check_sizes(s, x.size(), grad.size());
  accumulate_velocity(s, grad);
  const double lr = learning_rate(s.config, s.t);
  for (std::size_t i = 0; i < x.size(); ++i) x[i] -= lr * s.velocity[i];
  pin_frozen(s, x);
  ++s.t;
}

void compute_salience(DhspgState &s, std::span<const double> x, std::span<const double> grad) {
  const auto &cfg = s.config;
  const std::size_t n = s.groups.size();
  std::vector<double> norms(n);
  for (std::size_t k = 0; k < n; ++k) norms[k] = group_norm(s.groups[k], x);

  const bool per_component =
      cfg.magnitude_scope == MagnitudeScope::Component && !s.group_component.empty();
  std::map<int, double> max_norm;
  for (std::size_t k = 0; k < n; ++k) {
    const int key = per_component ? s.group_component[k] : 0;
    max_norm[key] = std::max(max_norm[key], norms[k]);
  }
  for (std::size_t k = 0; k < n; ++k) {
    auto &gs = s.group_states[k];
    gs.cos_theta = cosine(s.groups[k], x, grad, cfg.tau);
    const double denom = max_norm[per_component ? s.group_component[k] : 0];
    const double mag = denom > 0.0 ? 1.0 - norms[k] / denom : 1.0;
    gs.salience = cfg.w_cos * gs.cos_theta + cfg.w_mag * mag;
  }
}

void partition_penalized(DhspgState &s) {
  const int K = s.config.target_zero_groups;
  const std::size_t n = s.groups.size();
  if (K < 0 || std::size_t(K) > n)
    throw Error(ErrorCode::KExceedsGroupCount,
                "K = " + std::to_string(K) + " exceeds group count " + std::to_string(n));
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return s.group_states[a].salience > s.group_states[b].salience;
  });

  // Each component keeps at least one unpenalized group.
  std::map<int, int> remaining;
  if (!s.group_component.empty())
    for (int c : s.group_component) ++remaining[c];
  for (auto &[c, left] : remaining) --left;

  for (auto &gs : s.group_states) gs.penalized = false;
  int taken = 0;
  for (auto k : order) {
    if (taken == K) break;
    if (!s.group_component.empty()) {
      auto &left = remaining[s.group_component[k]];
      if (left == 0) continue;
      --left;
    }
    s.group_states[k].penalized = true;
    ++taken;
  }
  if (taken < K)
    throw Error(ErrorCode::KExceedsGroupCount,
                "K = " + std::to_string(K) +
                    " leaves some component without a surviving group");
  s.partitioned = true;
}

std::optional<LambdaInterval> lambda_interval(double cos_theta, double grad_norm) {
  if (cos_theta >= 0.0) return std::nullopt;
  return LambdaInterval{-cos_theta * grad_norm, -grad_norm / cos_theta};
}

double select_group_lambda(double cos_theta, double grad_norm, const OptimizerConfig &cfg) {
  const auto iv = lambda_interval(cos_theta, grad_norm);
  if (!iv) return cfg.default_lambda;
  return std::min(cfg.lambda_amplify * iv->lo, iv->hi);
}

void select_lambda(DhspgState &s, std::span<const double> x, std::span<const double> grad) {
  const auto &cfg = s.config;
  for (std::size_t k = 0; k < s.groups.size(); ++k) {
    auto &gs = s.group_states[k];
    if (!gs.penalized || gs.frozen_zero) {
      gs.lambda = 0.0;
      continue;
    }
    gs.cos_theta = cosine(s.groups[k], x, grad, cfg.tau);
    gs.lambda = cfg.mode == OptimizerMode::Hspg
                    ? cfg.hspg_lambda
                    : select_group_lambda(gs.cos_theta, group_norm(s.groups[k], grad), cfg);
  }
}

std::vector<double> dual_halfspace_direction(const DhspgState &s, std::span<const double> x,
                                             std::span<const double> grad) {
  std::vector<double> d(grad.size());
  for (std::size_t i = 0; i < grad.size(); ++i) d[i] = -grad[i];
  for (std::size_t k = 0; k < s.groups.size(); ++k) {
    const auto &gs = s.group_states[k];
    const auto &idx = s.groups[k];
    if (gs.frozen_zero) {
      for (auto i : idx) d[i] = 0.0;
    } else if (gs.penalized) {
      const double scale = gs.lambda / std::max(group_norm(idx, x), s.config.tau);
      for (auto i : idx) d[i] -= scale * x[i];
    }
  }
  return d;
}

void halfspace_project(DhspgState &s, std::span<const double> x_t, std::span<double> trial) {
  const bool capped = s.config.mode == OptimizerMode::Dhspg;
  for (std::size_t k = 0; k < s.groups.size(); ++k) {
    if (capped && s.frozen_count >= s.config.target_zero_groups) break;
    auto &gs = s.group_states[k];
    if (!gs.penalized || gs.frozen_zero) continue;
    const auto &idx = s.groups[k];
    const double inner = group_dot(idx, x_t, std::span<const double>(trial.data(), trial.size()));
    const double sq = group_dot(idx, x_t, x_t);
    if (inner < s.config.epsilon * sq) {
      for (auto i : idx) trial[i] = 0.0;
      gs.frozen_zero = true;
      ++s.frozen_count;
    }
  }
}

void step(DhspgState &s, std::span<double> x, std::span<const double> grad) {
  check_sizes(s, x.size(), grad.size());
  if (s.config.mode == OptimizerMode::Hspg) {
    hspg_step(s, x, grad);
    return;
  }
  if (s.t < s.config.warmup_steps) {
    warmup_step(s, x, grad);
    return;
  }
  if (!s.partitioned) {
    std::vector<double> estimate(s.velocity);
    const double beta = s.config.momentum;
    for (std::size_t i = 0; i < grad.size(); ++i) estimate[i] = beta * estimate[i] + grad[i];
    compute_salience(s, x, estimate);
    partition_penalized(s);
  }
  penalized_update(s, x, grad);
}

void hspg_step(DhspgState &s, std::span<double> x, std::span<const double> grad) {
  check_sizes(s, x.size(), grad.size());
  if (s.t < s.config.warmup_steps) {
    warmup_step(s, x, grad);
    return;
  }
  if (!s.partitioned) {
    for (auto &gs : s.group_states) gs.penalized = true;
    s.partitioned = true;
  }
  penalized_update(s, x, grad);
}

int achieved_group_sparsity(const DhspgState &s, std::span<const double> x) {
  int count = 0;
  for (const auto &idx : s.groups)
    if (std::all_of(idx.begin(), idx.end(), [&](std::size_t i) { return x[i] == 0.0; })) ++count;
  return count;
}

LambdaStats lambda_stats(const DhspgState &s) {
  LambdaStats r;
  double sum = 0.0;
  for (const auto &gs : s.group_states) {
    if (!gs.penalized || gs.frozen_zero) continue;
    ++r.penalized;
    sum += gs.lambda;
    r.max = std::max(r.max, gs.lambda);
  }
  if (r.penalized > 0) r.mean = sum / r.penalized;
  return r;
}

} // namespace zigprune
