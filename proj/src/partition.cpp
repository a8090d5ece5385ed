#include "zigprune/partition.hpp"

#include <algorithm>
#include <numeric>

namespace zigprune {

std::string_view to_string(TensorRole r) {
  switch (r) {
  case TensorRole::FilterRow: return "filter-row";
  case TensorRole::Bias: return "bias";
  case TensorRole::BnGamma: return "bn_gamma";
  case TensorRole::BnBeta: return "bn_beta";
  case TensorRole::BnRunningMean: return "bn_running_mean";
  case TensorRole::BnRunningVar: return "bn_running_var";
  }
  return "?";
}

std::string_view to_string(ExclusionReason r) {
  switch (r) {
  case ExclusionReason::OutputAdjacent: return "output-adjacent";
  case ExclusionReason::ContainsUnknown: return "contains-unknown";
  case ExclusionReason::FixedChannels: return "fixed-channels";
  }
  return "?";
}

std::int64_t scalar_count(const ComputationGraph &g, const ParamSlice &s) {
  if (s.role == TensorRole::FilterRow)
    return s.length() * g.by_id(s.vertex_id).params->weight.cols();
  return s.length();
}

bool PartitionResult::is_excluded(int component_id) const {
  return std::any_of(excluded_components.begin(), excluded_components.end(),
                     [&](const ExcludedComponent &e) { return e.component_id == component_id; });
}

int PartitionResult::prunable_component_count() const {
  return static_cast<int>(std::count_if(component_groups.begin(), component_groups.end(),
                                        [](const auto &gs) { return !gs.empty(); }));
}

namespace {

bool seeds_component(Category c) {
  return c == Category::Accessory || c == Category::SdJoint || c == Category::Unknown;
}

struct UnionFind {
  std::vector<std::size_t> parent;
  explicit UnionFind(std::size_t n) : parent(n) { std::iota(parent.begin(), parent.end(), 0); }
  std::size_t find(std::size_t x) {
    while (parent[x] != x) {
      parent[x] = parent[parent[x]];
      x = parent[x];
    }
    return x;
  }
  void unite(std::size_t a, std::size_t b) {
    a = find(a);
    b = find(b);
    if (a != b) parent[std::max(a, b)] = std::min(a, b);
  }
};

// Flags that only depend on the member vertices.
void refresh_flags(const ComputationGraph &g, DependencyComponent &c) {
  for (int id : c.vertex_ids) {
    const auto pos = g.position(id);
    if (g.at(pos).category() == Category::Unknown) c.contains_unknown = true;
    for (auto s : g.successors(pos))
      if (g.at(s).category() == Category::Output) c.adjacent_to_output = true;
  }
}

void split_by_category(const ComputationGraph &g, DependencyComponent &c) {
  c.stem_ids.clear();
  c.accessory_ids.clear();
  for (int id : c.vertex_ids) {
    const auto cat = g.by_id(id).category();
    if (cat == Category::Stem) c.stem_ids.push_back(id);
    if (cat == Category::Accessory) c.accessory_ids.push_back(id);
  }
}

} // namespace

std::vector<DependencyComponent> seed_components(const ComputationGraph &g) {
  const std::size_t n = g.size();
  constexpr std::size_t kNone = static_cast<std::size_t>(-1);
  std::vector<std::size_t> label(n, kNone);
  std::size_t count = 0;

  // Iterative DFS over undirected adjacency restricted to seeding vertices.
  std::vector<std::size_t> stack;
  for (auto start : g.topo_order()) {
    if (label[start] != kNone || !seeds_component(g.at(start).category())) continue;
    label[start] = count;
    stack.push_back(start);
    while (!stack.empty()) {
      const auto v = stack.back();
      stack.pop_back();
      for (const auto *nbrs : {&g.predecessors(v), &g.successors(v)})
        for (auto u : *nbrs)
          if (label[u] == kNone && seeds_component(g.at(u).category())) {
            label[u] = count;
            stack.push_back(u);
          }
    }
    ++count;
  }

  // Components are numbered by their first vertex in topological order, so
  // one more topological pass emits member lists already sorted.
  std::vector<DependencyComponent> comps(count);
  for (auto v : g.topo_order())
    if (label[v] != kNone) comps[label[v]].vertex_ids.push_back(g.at(v).id);
  for (auto &c : comps) {
    split_by_category(g, c);
    refresh_flags(g, c);
  }
  return comps;
}

std::vector<DependencyComponent> grow_components(const ComputationGraph &g,
                                                 std::vector<DependencyComponent> comps) {
  const std::size_t n = g.size();
  std::vector<bool> absorbed(n, false);
  // Component index that last claimed a stem, to avoid duplicates per component.
  std::vector<std::size_t> claimed_by(n, static_cast<std::size_t>(-1));
  const auto &topo_index = g.topo_index();

  for (std::size_t ci = 0; ci < comps.size(); ++ci) {
    auto &c = comps[ci];
    std::vector<std::size_t> stems;
    for (int id : c.vertex_ids) {
      const auto pos = g.position(id);
      if (g.at(pos).category() == Category::Stem) {
        absorbed[pos] = true;
        claimed_by[pos] = ci;
        continue;
      }
      // Growth stops at stems (absorbed) and SID joints; every other
      // predecessor category already shares the seed component.
      for (auto p : g.predecessors(pos)) {
        if (g.at(p).category() != Category::Stem || claimed_by[p] == ci) continue;
        claimed_by[p] = ci;
        absorbed[p] = true;
        stems.push_back(p);
      }
    }
    if (stems.empty()) continue;
    std::sort(stems.begin(), stems.end(),
              [&](auto a, auto b) { return topo_index[a] < topo_index[b]; });
    std::vector<int> merged;
    merged.reserve(c.vertex_ids.size() + stems.size());
    std::size_t i = 0, j = 0;
    while (i < c.vertex_ids.size() || j < stems.size()) {
      const bool take_stem =
          i == c.vertex_ids.size() ||
          (j < stems.size() && topo_index[stems[j]] < topo_index[g.position(c.vertex_ids[i])]);
      merged.push_back(take_stem ? g.at(stems[j++]).id : c.vertex_ids[i++]);
    }
    c.vertex_ids = std::move(merged);
    split_by_category(g, c);
    refresh_flags(g, c);
  }

  for (auto v : g.topo_order()) {
    if (g.at(v).category() != Category::Stem || absorbed[v]) continue;
    DependencyComponent single;
    single.vertex_ids = {g.at(v).id};
    split_by_category(g, single);
    refresh_flags(g, single);
    comps.push_back(std::move(single));
  }
  return comps;
}

std::vector<DependencyComponent> merge_components(const ComputationGraph &g,
                                                  std::vector<DependencyComponent> comps) {
  const std::size_t n = g.size();
  UnionFind uf(n);
  std::vector<bool> member(n, false);
  for (const auto &c : comps) {
    if (c.vertex_ids.empty()) continue;
    const auto first = g.position(c.vertex_ids.front());
    for (int id : c.vertex_ids) {
      const auto pos = g.position(id);
      member[pos] = true;
      uf.unite(first, pos);
    }
  }
  std::vector<bool> unknown_flag(n, false), output_flag(n, false);
  for (const auto &c : comps) {
    if (c.vertex_ids.empty()) continue;
    const auto root = uf.find(g.position(c.vertex_ids.front()));
    unknown_flag[root] = unknown_flag[root] || c.contains_unknown;
    output_flag[root] = output_flag[root] || c.adjacent_to_output;
  }

  constexpr std::size_t kNone = static_cast<std::size_t>(-1);
  std::vector<std::size_t> out_index(n, kNone);
  std::vector<DependencyComponent> merged;
  for (auto v : g.topo_order()) {
    if (!member[v]) continue;
    const auto root = uf.find(v);
    if (out_index[root] == kNone) {
      out_index[root] = merged.size();
      merged.emplace_back();
      merged.back().contains_unknown = unknown_flag[root];
      merged.back().adjacent_to_output = output_flag[root];
    }
    merged[out_index[root]].vertex_ids.push_back(g.at(v).id);
  }
  for (auto &c : merged) split_by_category(g, c);
  return merged;
}

PartitionResult form_zigs(const ComputationGraph &g, std::vector<DependencyComponent> comps) {
  if (!g.shapes_inferred())
    throw Error(ErrorCode::InvalidGraph, "partition requires inferred shapes");
  const std::size_t n = g.size();
  const int ncomp = static_cast<int>(comps.size());

  std::vector<int> comp_of(n, -1);
  for (int c = 0; c < ncomp; ++c)
    for (int id : comps[c].vertex_ids) comp_of[g.position(id)] = c;

  PartitionResult r;
  r.component_width.assign(ncomp, 0);
  for (int c = 0; c < ncomp; ++c) {
    int width = -1;
    for (int id : comps[c].stem_ids) {
      const auto &k = g.by_id(id).kind;
      const int w = std::holds_alternative<Conv2d>(k) ? std::get<Conv2d>(k).out_channels
                                                      : std::get<Linear>(k).out_features;
      if (width >= 0 && w != width)
        throw Error(ErrorCode::InconsistentStemWidths,
                    "component " + std::to_string(c) + " mixes stems of width " +
                        std::to_string(width) + " and " + std::to_string(w));
      width = w;
    }
    r.component_width[c] = std::max(width, 0);
  }

  // Channel provenance in topological order.
  std::vector<bool> reach_output(ncomp, false), reach_unknown(ncomp, false),
      fixed_coupled(ncomp, false);
  auto mark = [](std::vector<bool> &flags, const std::vector<ChannelOrigin> &origins) {
    for (const auto &o : origins)
      if (o.component >= 0) flags[o.component] = true;
  };
  auto &origins = r.channel_origins;
  origins.assign(n, {});
  auto operand_origins = [&](const Port &port) -> std::vector<ChannelOrigin> {
    if (port.kind == Port::Kind::Vertex) return origins[port.index];
    const auto &s = g.inputs()[port.index].shape;
    return std::vector<ChannelOrigin>(std::size_t(s.dims[1]));
  };

  for (auto pos : g.topo_order()) {
    const auto &v = g.at(pos);
    const auto &ops = g.operands(pos);
    auto &out = origins[pos];
    switch (v.category()) {
    case Category::Stem: {
      const int width = static_cast<int>(v.out_shape->dims[1]);
      out.resize(width);
      for (int j = 0; j < width; ++j) out[j] = ChannelOrigin{comp_of[pos], j};
      break;
    }
    case Category::Accessory:
      out = operand_origins(ops[0]);
      if (std::holds_alternative<Flatten>(v.kind)) {
        const auto &in_shape = ops[0].kind == Port::Kind::Vertex
                                   ? *g.at(ops[0].index).out_shape
                                   : g.inputs()[ops[0].index].shape;
        const auto block = static_cast<std::size_t>(in_shape.spatial());
        std::vector<ChannelOrigin> expanded;
        expanded.reserve(out.size() * block);
        for (const auto &o : out) expanded.insert(expanded.end(), block, o);
        out = std::move(expanded);
      }
      break;
    case Category::SdJoint: {
      out = operand_origins(ops[0]);
      for (std::size_t i = 1; i < ops.size(); ++i) {
        const auto other = operand_origins(ops[i]);
        if (other != out) {
          // Channel j of one operand is tied to a different (or fixed)
          // channel of another, so no component here can shrink alone.
          mark(fixed_coupled, out);
          mark(fixed_coupled, other);
        }
      }
      break;
    }
    case Category::SidJoint:
      for (const auto &port : ops) {
        const auto part = operand_origins(port);
        out.insert(out.end(), part.begin(), part.end());
      }
      break;
    case Category::Unknown:
      for (const auto &port : ops) mark(reach_unknown, operand_origins(port));
      out = operand_origins(ops[0]);
      break;
    case Category::Output:
      for (const auto &port : ops) mark(reach_output, operand_origins(port));
      out = operand_origins(ops[0]);
      break;
    }
  }

  // Parameters whose channel is never prunable pin the owning component.
  for (auto pos : g.topo_order()) {
    const auto &v = g.at(pos);
    if (!std::holds_alternative<BatchNorm>(v.kind) || comp_of[pos] < 0) continue;
    for (const auto &o : origins[pos])
      if (o.component < 0) fixed_coupled[comp_of[pos]] = true;
  }

  std::vector<int> exclusion(ncomp, -1);
  for (int c = 0; c < ncomp; ++c) {
    if (comps[c].adjacent_to_output || reach_output[c])
      exclusion[c] = int(ExclusionReason::OutputAdjacent);
    else if (comps[c].contains_unknown || reach_unknown[c])
      exclusion[c] = int(ExclusionReason::ContainsUnknown);
    else if (fixed_coupled[c])
      exclusion[c] = int(ExclusionReason::FixedChannels);
  }

  r.component_groups.assign(ncomp, {});
  for (int c = 0; c < ncomp; ++c) {
    if (exclusion[c] >= 0) {
      r.excluded_components.push_back(
          ExcludedComponent{c, static_cast<ExclusionReason>(exclusion[c]), {}});
      continue;
    }
    for (int j = 0; j < r.component_width[c]; ++j) {
      r.component_groups[c].push_back(static_cast<int>(r.zigs.size()));
      r.zigs.push_back(ZeroInvariantGroup{{}, c, j});
    }
  }
  std::vector<int> excluded_index(ncomp, -1);
  for (std::size_t e = 0; e < r.excluded_components.size(); ++e)
    excluded_index[r.excluded_components[e].component_id] = static_cast<int>(e);

  // Appends to the last slice when it is the same tensor and contiguous.
  auto append = [](std::vector<ParamSlice> &slices, ParamSlice s) {
    if (!slices.empty()) {
      auto &last = slices.back();
      if (last.vertex_id == s.vertex_id && last.role == s.role && last.end == s.begin) {
        last.end = s.end;
        return;
      }
    }
    slices.push_back(s);
  };
  auto sink_for = [&](const ChannelOrigin &o, int own_comp) -> std::vector<ParamSlice> & {
    if (o.component >= 0 && exclusion[o.component] < 0)
      return r.zigs[r.component_groups[o.component][o.group]].slices;
    const int c = o.component >= 0 ? o.component : own_comp;
    return r.excluded_components[excluded_index[c]].slices;
  };

  for (auto pos : g.topo_order()) {
    const auto &v = g.at(pos);
    if (!v.params) continue;
    const int own = comp_of[pos];
    if (v.category() == Category::Stem) {
      const bool has_bias = !v.params->bias.empty();
      for (std::int64_t j = 0; j < v.params->weight.rows(); ++j) {
        auto &sink = sink_for(ChannelOrigin{own, int(j)}, own);
        append(sink, ParamSlice{v.id, TensorRole::FilterRow, j, j + 1});
        if (has_bias) append(sink, ParamSlice{v.id, TensorRole::Bias, j, j + 1});
      }
    } else {
      // BatchNorm: one origin per normalized channel (or feature after Flatten).
      const auto &orig = origins[pos];
      for (std::size_t ch = 0; ch < v.params->gamma.size(); ++ch) {
        auto &sink = sink_for(orig[ch], own);
        const auto k = static_cast<std::int64_t>(ch);
        for (auto role : {TensorRole::BnGamma, TensorRole::BnBeta, TensorRole::BnRunningMean,
                          TensorRole::BnRunningVar})
          append(sink, ParamSlice{v.id, role, k, k + 1});
      }
    }
  }

  // Within a vertex the per-channel loop interleaves roles; regroup each
  // slice list into (topological vertex order, role order, index order).
  const auto &topo_index = g.topo_index();
  auto canonical = [&](std::vector<ParamSlice> &slices) {
    std::stable_sort(slices.begin(), slices.end(), [&](const ParamSlice &a, const ParamSlice &b) {
      const auto ta = topo_index[g.position(a.vertex_id)];
      const auto tb = topo_index[g.position(b.vertex_id)];
      if (ta != tb) return ta < tb;
      if (a.role != b.role) return a.role < b.role;
      return a.begin < b.begin;
    });
    std::vector<ParamSlice> merged;
    merged.reserve(slices.size());
    for (const auto &s : slices) {
      if (!merged.empty() && merged.back().vertex_id == s.vertex_id &&
          merged.back().role == s.role && merged.back().end == s.begin)
        merged.back().end = s.end;
      else
        merged.push_back(s);
    }
    slices = std::move(merged);
  };
  for (auto &z : r.zigs) canonical(z.slices);
  for (auto &e : r.excluded_components) canonical(e.slices);

  r.components = std::move(comps);
  return r;
}

PartitionResult partition(const ComputationGraph &g) {
  return form_zigs(g, merge_components(g, grow_components(g, seed_components(g))));
}

std::map<int, int> component_coloring(const PartitionResult &p) {
  std::map<int, int> out;
  for (std::size_t c = 0; c < p.components.size(); ++c)
    for (int id : p.components[c].vertex_ids) out[id] = static_cast<int>(c);
  return out;
}

nlohmann::json partition_to_json(const PartitionResult &p) {
  using nlohmann::json;
  auto slices_json = [](const std::vector<ParamSlice> &slices) {
    json arr = json::array();
    for (const auto &s : slices)
      arr.push_back({{"vertex", s.vertex_id},
                     {"role", std::string(to_string(s.role))},
                     {"begin", s.begin},
                     {"end", s.end}});
    return arr;
  };
  json comps = json::array();
  for (std::size_t c = 0; c < p.components.size(); ++c) {
    const auto &cc = p.components[c];
    comps.push_back({{"id", c},
                     {"vertices", cc.vertex_ids},
                     {"stems", cc.stem_ids},
                     {"accessories", cc.accessory_ids},
                     {"contains_unknown", cc.contains_unknown},
                     {"adjacent_to_output", cc.adjacent_to_output},
                     {"width", p.component_width[c]},
                     {"groups", p.component_groups[c]}});
  }
  json zigs = json::array();
  for (const auto &z : p.zigs)
    zigs.push_back({{"component", z.component_id},
                    {"index", z.group_index},
                    {"slices", slices_json(z.slices)}});
  json excluded = json::array();
  for (const auto &e : p.excluded_components)
    excluded.push_back({{"component", e.component_id},
                        {"reason", std::string(to_string(e.reason))},
                        {"slices", slices_json(e.slices)}});
  return json{{"format", "zigprune-partition"},
              {"version", 1},
              {"components", std::move(comps)},
              {"zigs", std::move(zigs)},
              {"excluded_components", std::move(excluded)}};
}

} // namespace zigprune
