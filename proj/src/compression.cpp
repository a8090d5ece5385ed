#include "zigprune/compression.hpp"

#include <algorithm>
#include <cmath>

#include "zigprune/autograd.hpp"

namespace zigprune {

bool PruneMask::empty() const { return zero_count() == 0; }

int PruneMask::zero_count() const {
  return static_cast<int>(std::count(zero.begin(), zero.end(), true));
}

namespace {

double *role_values(ParameterSet &p, TensorRole role, std::int64_t &stride) {
  stride = 1;
  switch (role) {
  case TensorRole::FilterRow:
    stride = p.weight.cols();
    return p.weight.data();
  case TensorRole::Bias: return p.bias.data();
  case TensorRole::BnGamma: return p.gamma.data();
  case TensorRole::BnBeta: return p.beta.data();
  case TensorRole::BnRunningMean: return p.running_mean.data();
  case TensorRole::BnRunningVar: return p.running_var.data();
  }
  return nullptr;
}

PruneMask finish_mask(const PartitionResult &p, std::vector<bool> zero) {
  PruneMask m;
  m.zero = std::move(zero);
  m.survivors.resize(p.components.size());
  for (std::size_t c = 0; c < p.components.size(); ++c) {
    const auto &groups = p.component_groups[c];
    if (groups.empty()) {
      for (int j = 0; j < p.component_width[c]; ++j) m.survivors[c].push_back(j);
      continue;
    }
    for (std::size_t j = 0; j < groups.size(); ++j)
      if (!m.zero[groups[j]]) m.survivors[c].push_back(int(j));
    if (m.survivors[c].empty())
      throw Error(ErrorCode::AllGroupsZeroInComponent,
                  "every group of component " + std::to_string(c) + " is zero");
  }
  return m;
}

} // namespace

PruneMask detect_zero_groups(const ComputationGraph &g, const PartitionResult &p) {
  std::vector<bool> zero(p.zigs.size(), false);
  for (std::size_t k = 0; k < p.zigs.size(); ++k) {
    bool all_zero = true;
    for (const auto &s : p.zigs[k].slices) {
      if (!is_trainable(s.role)) continue;
      auto &params = const_cast<ParameterSet &>(*g.by_id(s.vertex_id).params);
      std::int64_t stride = 1;
      const double *data = role_values(params, s.role, stride);
      for (std::int64_t i = s.begin * stride; i < s.end * stride && all_zero; ++i)
        all_zero = data[i] == 0.0;
      if (!all_zero) break;
    }
    zero[k] = all_zero;
  }
  return finish_mask(p, std::move(zero));
}

PruneMask mask_from_groups(const PartitionResult &p, const std::vector<int> &zero_zigs) {
  std::vector<bool> zero(p.zigs.size(), false);
  for (int k : zero_zigs) zero.at(std::size_t(k)) = true;
  return finish_mask(p, std::move(zero));
}

void zero_groups(ComputationGraph &g, const PartitionResult &p, const std::vector<int> &zigs) {
  for (int k : zigs)
    for (const auto &s : p.zigs.at(std::size_t(k)).slices) {
      if (!is_trainable(s.role)) continue;
      std::int64_t stride = 1;
      double *data = role_values(*g.at(g.position(s.vertex_id)).params, s.role, stride);
      std::fill(data + s.begin * stride, data + s.end * stride, 0.0);
    }
}

ChannelMaps build_channel_maps(const ComputationGraph &g, const PartitionResult &p,
                               const PruneMask &mask) {
  ChannelMaps maps;
  for (const auto &in : g.inputs()) {
    std::vector<std::int64_t> all(std::size_t(in.shape.dims[1]));
    for (std::size_t i = 0; i < all.size(); ++i) all[i] = std::int64_t(i);
    maps.input.push_back(std::move(all));
  }
  maps.vertex.resize(g.size());
  for (std::size_t pos = 0; pos < g.size(); ++pos) {
    const auto &origins = p.channel_origins[pos];
    auto &kept = maps.vertex[pos];
    kept.reserve(origins.size());
    for (std::size_t i = 0; i < origins.size(); ++i) {
      const auto &o = origins[i];
      const bool removed = o.component >= 0 && !p.component_groups[o.component].empty() &&
                           mask.zero[p.component_groups[o.component][o.group]];
      if (!removed) kept.push_back(std::int64_t(i));
    }
  }
  return maps;
}

namespace {

const std::vector<std::int64_t> &operand_map(const ComputationGraph &g, const ChannelMaps &maps,
                                             std::size_t pos) {
  const auto &port = g.operands(pos)[0];
  return port.kind == Port::Kind::Input ? maps.input[port.index] : maps.vertex[port.index];
}

std::vector<double> take(const std::vector<double> &v, const std::vector<std::int64_t> &idx) {
  std::vector<double> out;
  if (v.empty()) return out;
  out.reserve(idx.size());
  for (auto i : idx) out.push_back(v[std::size_t(i)]);
  return out;
}

} // namespace

ComputationGraph prune(const ComputationGraph &g, const PartitionResult &p, const PruneMask &mask,
                       const ChannelMaps &maps) {
  (void)p;
  (void)mask;
  std::vector<Vertex> vertices = g.vertices();
  for (std::size_t pos = 0; pos < g.size(); ++pos) {
    auto &v = vertices[pos];
    const auto &out_keep = maps.vertex[pos];
    if (auto *c = std::get_if<Conv2d>(&v.kind)) {
      const auto &in_keep = operand_map(g, maps, pos);
      const std::int64_t kk = std::int64_t(c->kernel) * c->kernel;
      const auto &w = v.params->weight;
      Matrix nw(Eigen::Index(out_keep.size()), Eigen::Index(in_keep.size() * kk));
      for (std::size_t r = 0; r < out_keep.size(); ++r)
        for (std::size_t ci = 0; ci < in_keep.size(); ++ci)
          for (std::int64_t q = 0; q < kk; ++q)
            nw(Eigen::Index(r), Eigen::Index(ci * kk + q)) = w(out_keep[r], in_keep[ci] * kk + q);
      v.params->weight = std::move(nw);
      v.params->bias = take(v.params->bias, out_keep);
      c->in_channels = int(in_keep.size());
      c->out_channels = int(out_keep.size());
    } else if (auto *l = std::get_if<Linear>(&v.kind)) {
      const auto &in_keep = operand_map(g, maps, pos);
      const auto &w = v.params->weight;
      Matrix nw(Eigen::Index(out_keep.size()), Eigen::Index(in_keep.size()));
      for (std::size_t r = 0; r < out_keep.size(); ++r)
        for (std::size_t ci = 0; ci < in_keep.size(); ++ci)
          nw(Eigen::Index(r), Eigen::Index(ci)) = w(out_keep[r], in_keep[ci]);
      v.params->weight = std::move(nw);
      v.params->bias = take(v.params->bias, out_keep);
      l->in_features = int(in_keep.size());
      l->out_features = int(out_keep.size());
    } else if (auto *bn = std::get_if<BatchNorm>(&v.kind)) {
      auto &q = *v.params;
      q.gamma = take(q.gamma, out_keep);
      q.beta = take(q.beta, out_keep);
      q.running_mean = take(q.running_mean, out_keep);
      q.running_var = take(q.running_var, out_keep);
      bn->channels = int(out_keep.size());
    }
    v.out_shape.reset();
  }

  ComputationGraph out;
  try {
    out = infer_shapes(ComputationGraph(std::move(vertices), g.edges(), g.inputs()));
  } catch (const Error &e) {
    throw Error(ErrorCode::ShapeMismatchAfterPrune, e.what());
  }
  for (std::size_t pos = 0; pos < out.size(); ++pos) {
    const auto &s = *out.at(pos).out_shape;
    const auto width = s.rank() >= 2 ? s.dims[1] : 0;
    const auto expected = std::int64_t(maps.vertex[pos].size());
    const auto actual = s.rank() == 4 || s.rank() == 2 ? width : s.sample_size();
    if (actual != expected)
      throw Error(ErrorCode::ShapeMismatchAfterPrune,
                  "vertex " + std::to_string(out.at(pos).id) + " has width " +
                      std::to_string(actual) + ", channel map lists " + std::to_string(expected));
  }
  return out;
}

ComputationGraph compress(const ComputationGraph &g, const PartitionResult &p) {
  const auto mask = detect_zero_groups(g, p);
  return prune(g, p, mask, build_channel_maps(g, p, mask));
}

EquivalenceReport verify_equivalence(const ComputationGraph &full,
                                     const ComputationGraph &compressed, int trials, double tol,
                                     Rng &rng, std::int64_t batch) {
  EquivalenceReport r;
  r.trials = trials;
  r.tolerance = tol;
  std::normal_distribution<double> normal(0.0, 1.0);
  for (int t = 0; t < trials; ++t) {
    std::vector<Tensor> inputs;
    for (const auto &in : full.inputs()) {
      Tensor x(in.shape.with_batch(batch));
      for (auto &v : x.data) v = normal(rng);
      inputs.push_back(std::move(x));
    }
    const auto a = forward(full, inputs, Mode::Eval).outputs;
    const auto b = forward(compressed, inputs, Mode::Eval).outputs;
    if (a.size() != b.size()) {
      r.max_abs_diff = std::numeric_limits<double>::infinity();
      break;
    }
    for (std::size_t k = 0; k < a.size(); ++k) {
      if (a[k].shape != b[k].shape) {
        r.max_abs_diff = std::numeric_limits<double>::infinity();
        break;
      }
      for (std::size_t i = 0; i < a[k].size(); ++i)
        r.max_abs_diff = std::max(r.max_abs_diff, std::abs(a[k].data[i] - b[k].data[i]));
    }
  }
  r.passed = r.max_abs_diff < tol;
  return r;
}

nlohmann::json to_json(const EquivalenceReport &r) {
  return {{"trials", r.trials},
          {"max_abs_diff", r.max_abs_diff},
          {"tolerance", r.tolerance},
          {"passed", r.passed}};
}

nlohmann::json compression_report(const ComputationGraph &full, const ComputationGraph &compressed,
                                  const PartitionResult &p, const PruneMask &mask) {
  const auto before = count_flops_params(full);
  const auto after = count_flops_params(compressed);
  nlohmann::json comps = nlohmann::json::array();
  for (std::size_t c = 0; c < p.components.size(); ++c) {
    if (p.component_groups[c].empty()) continue;
    nlohmann::json removed = nlohmann::json::array();
    for (std::size_t j = 0; j < p.component_groups[c].size(); ++j)
      if (mask.zero[p.component_groups[c][j]]) removed.push_back(j);
    comps.push_back({{"component", c},
                     {"stems", p.components[c].stem_ids},
                     {"groups", p.component_groups[c].size()},
                     {"removed", removed}});
  }
  auto ratio = [](std::int64_t a, std::int64_t b) { return b == 0 ? 1.0 : double(a) / double(b); };
  return {{"format", "zigprune-compression"},
          {"components", comps},
          {"removed_groups", mask.zero_count()},
          {"total_groups", p.zigs.size()},
          {"flops_before", before.flops},
          {"flops_after", after.flops},
          {"params_before", before.params},
          {"params_after", after.params},
          {"flops_ratio", ratio(after.flops, before.flops)},
          {"params_ratio", ratio(after.params, before.params)}};
}

} // namespace zigprune
