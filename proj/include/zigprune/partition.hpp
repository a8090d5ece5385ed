#ifndef ZIGPRUNE_PARTITION_HPP
#define ZIGPRUNE_PARTITION_HPP

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "zigprune/graph.hpp"

namespace zigprune {

enum class TensorRole { FilterRow, Bias, BnGamma, BnBeta, BnRunningMean, BnRunningVar };

std::string_view to_string(TensorRole r);
/// Running statistics are carried along for equivalence but are not trained.
constexpr bool is_trainable(TensorRole r) {
  return r != TensorRole::BnRunningMean && r != TensorRole::BnRunningVar;
}

/// Contiguous index range [begin, end) of one parameter tensor. For
/// FilterRow the indices are rows of the flattened filter matrix.
struct ParamSlice {
  int vertex_id = 0;
  TensorRole role = TensorRole::FilterRow;
  std::int64_t begin = 0;
  std::int64_t end = 0;

  std::int64_t length() const { return end - begin; }
  friend bool operator==(const ParamSlice &, const ParamSlice &) = default;
};

/// Scalar count covered by the slice (a filter row counts all its columns).
std::int64_t scalar_count(const ComputationGraph &g, const ParamSlice &s);

struct DependencyComponent {
  std::vector<int> vertex_ids;    ///< topological order
  std::vector<int> stem_ids;      ///< topological order
  std::vector<int> accessory_ids; ///< topological order
  bool contains_unknown = false;
  bool adjacent_to_output = false;

  friend bool operator==(const DependencyComponent &, const DependencyComponent &) = default;
};

struct ZeroInvariantGroup {
  std::vector<ParamSlice> slices; ///< topological vertex order, then role order
  int component_id = 0;
  int group_index = 0; ///< output channel index shared by the component's stems

  friend bool operator==(const ZeroInvariantGroup &, const ZeroInvariantGroup &) = default;
};

enum class ExclusionReason {
  OutputAdjacent,  ///< channels reach a graph output
  ContainsUnknown, ///< channels reach (or the component holds) an Unknown op
  FixedChannels,   ///< channels are tied to graph-input or otherwise unprunable channels
};

std::string_view to_string(ExclusionReason r);

struct ExcludedComponent {
  int component_id = 0;
  ExclusionReason reason = ExclusionReason::OutputAdjacent;
  /// Parameters left out of every ZIG because of this exclusion.
  std::vector<ParamSlice> slices;

  friend bool operator==(const ExcludedComponent &, const ExcludedComponent &) = default;
};

/// Which component group an output channel (or flattened feature) of a vertex
/// belongs to; component -1 marks channels that are never pruned.
struct ChannelOrigin {
  int component = -1;
  int group = -1;
  friend bool operator==(const ChannelOrigin &, const ChannelOrigin &) = default;
};

struct PartitionResult {
  std::vector<DependencyComponent> components;
  std::vector<ZeroInvariantGroup> zigs;
  std::vector<ExcludedComponent> excluded_components;

  /// Group width (shared stem output width) per component, 0 if stemless.
  std::vector<int> component_width;
  /// Per component: index into `zigs` of group j, empty for excluded ones.
  std::vector<std::vector<int>> component_groups;
  /// Per vertex position: origin of each output channel/feature (per sample).
  std::vector<std::vector<ChannelOrigin>> channel_origins;

  bool is_excluded(int component_id) const;
  /// Components that own at least one ZIG.
  int prunable_component_count() const;

  friend bool operator==(const PartitionResult &, const PartitionResult &) = default;
};

/// Connected components of the subgraph induced by accessory, SD-joint and
/// unknown vertices.
std::vector<DependencyComponent> seed_components(const ComputationGraph &g);

/// Absorbs the stems feeding each component; stems left unabsorbed become
/// singleton components.
std::vector<DependencyComponent> grow_components(const ComputationGraph &g,
                                                 std::vector<DependencyComponent> comps);

/// Unions components that share any vertex; flags are OR-ed. Output is
/// ordered by the smallest topological index in each component.
std::vector<DependencyComponent> merge_components(const ComputationGraph &g,
                                                  std::vector<DependencyComponent> comps);

/// Turns merged components into zero-invariant groups and exclusions.
/// Throws InconsistentStemWidths.
PartitionResult form_zigs(const ComputationGraph &g, std::vector<DependencyComponent> comps);

/// seed -> grow -> merge -> form. Requires inferred shapes.
PartitionResult partition(const ComputationGraph &g);

/// Vertex id -> component id, for DOT coloring.
std::map<int, int> component_coloring(const PartitionResult &p);

nlohmann::json partition_to_json(const PartitionResult &p);

} // namespace zigprune

#endif
