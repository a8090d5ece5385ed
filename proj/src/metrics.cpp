#include "zigprune/metrics.hpp"

#include <sstream>

namespace zigprune {

CostReport count_flops_params(const ComputationGraph &g) {
  if (!g.shapes_inferred())
    throw Error(ErrorCode::InvalidGraph, "count_flops_params requires inferred shapes");
  CostReport r;
  for (const auto &v : g.vertices()) {
    if (v.params) r.params += v.params->trainable_size();
    const auto &out = *v.out_shape;
    const std::int64_t elems = out.sample_size();
    if (auto *c = std::get_if<Conv2d>(&v.kind)) {
      r.flops += 2LL * c->kernel * c->kernel * c->in_channels * elems;
      if (c->has_bias) r.flops += elems;
    } else if (auto *l = std::get_if<Linear>(&v.kind)) {
      r.flops += 2LL * l->in_features * l->out_features;
      if (l->has_bias) r.flops += l->out_features;
    } else if (std::holds_alternative<BatchNorm>(v.kind)) {
      r.flops += 2 * elems;
    } else if (std::holds_alternative<Relu>(v.kind)) {
      r.flops += elems;
    } else if (auto *p = std::get_if<MaxPool>(&v.kind)) {
      r.flops += std::int64_t(p->kernel) * p->kernel * elems;
    } else if (auto *p = std::get_if<AvgPool>(&v.kind)) {
      r.flops += std::int64_t(p->kernel) * p->kernel * elems;
    } else if (v.category() == Category::SdJoint) {
      const auto arity = static_cast<std::int64_t>(g.operands(g.position(v.id)).size());
      r.flops += (arity - 1) * elems;
    }
  }
  return r;
}

namespace {

// Qualitative palette, cycled when there are more components than colors.
constexpr const char *kPalette[] = {"#8dd3c7", "#ffffb3", "#bebada", "#fb8072", "#80b1d3",
                                    "#fdb462", "#b3de69", "#fccde5", "#d9d9d9", "#bc80bd",
                                    "#ccebc5", "#ffed6f"};

std::string label(const Vertex &v) {
  std::ostringstream os;
  os << (v.name.empty() ? op_name(v.kind) : v.name) << "\\n" << op_name(v.kind);
  if (v.out_shape) os << ' ' << to_string(*v.out_shape);
  return os.str();
}

} // namespace

std::string export_dot(const ComputationGraph &g, const std::map<int, int> &component_of) {
  std::ostringstream os;
  os << "digraph G {\n  rankdir=TB;\n  node [shape=box, fontname=\"Helvetica\"];\n";
  for (std::size_t k = 0; k < g.inputs().size(); ++k)
    os << "  in" << k << " [label=\"" << g.inputs()[k].name << "\\n"
       << to_string(g.inputs()[k].shape) << "\", shape=ellipse];\n";
  for (const auto &v : g.vertices()) {
    os << "  v" << v.id << " [label=\"" << label(v) << "\"";
    if (auto it = component_of.find(v.id); it != component_of.end()) {
      const auto n = std::size(kPalette);
      os << ", style=filled, fillcolor=\"" << kPalette[std::size_t(it->second) % n] << "\"";
    }
    os << "];\n";
  }
  for (std::size_t k = 0; k < g.inputs().size(); ++k)
    for (int c : g.inputs()[k].consumers) os << "  in" << k << " -> v" << c << ";\n";
  for (const auto &e : g.edges()) os << "  v" << e.src << " -> v" << e.dst << ";\n";
  os << "}\n";
  return os.str();
}

} // namespace zigprune
