#ifndef ZIGPRUNE_METRICS_HPP
#define ZIGPRUNE_METRICS_HPP

#include <cstdint>
#include <map>
#include <string>

#include "zigprune/graph.hpp"

namespace zigprune {

struct CostReport {
  std::int64_t flops = 0;  ///< per sample, multiply-add = 2
  std::int64_t params = 0; ///< trainable scalars (weights, biases, gamma, beta)
  friend bool operator==(const CostReport &, const CostReport &) = default;
};

/// Per-sample FLOPs and trainable-parameter count. Requires inferred shapes.
///
/// Conv: 2*k*k*Cin*Cout*Hout*Wout (+ Cout*Hout*Wout with bias)
/// Linear: 2*Fin*Fout (+ Fout with bias)
/// BatchNorm: 2 per element; ReLU: 1 per element; pools: k*k per output
/// element; Add/Mul: (arity-1) per element; Flatten/Concat/Unknown: 0.
CostReport count_flops_params(const ComputationGraph &g);

/// DOT digraph. When `component_of` maps vertex ids to component labels,
/// vertices sharing a label share a fill color.
std::string export_dot(const ComputationGraph &g, const std::map<int, int> &component_of = {});

} // namespace zigprune

#endif
