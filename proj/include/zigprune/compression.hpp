#ifndef ZIGPRUNE_COMPRESSION_HPP
#define ZIGPRUNE_COMPRESSION_HPP

#include <cstdint>
#include <vector>

#include <json.hpp>

#include "zigprune/builders.hpp"
#include "zigprune/graph.hpp"
#include "zigprune/metrics.hpp"
#include "zigprune/partition.hpp"

namespace zigprune {

struct PruneMask {
  std::vector<bool> zero;                 ///< per ZIG
  std::vector<std::vector<int>> survivors; ///< per component: surviving group indices

  bool empty() const;
  int zero_count() const;
  friend bool operator==(const PruneMask &, const PruneMask &) = default;
};

/// A group is flagged iff every trainable scalar of every slice is exactly 0.
/// Throws AllGroupsZeroInComponent.
PruneMask detect_zero_groups(const ComputationGraph &g, const PartitionResult &p);

/// Mask from an explicit set of zero ZIG indices (no parameter inspection).
/// Throws AllGroupsZeroInComponent.
PruneMask mask_from_groups(const PartitionResult &p, const std::vector<int> &zero_zigs);

/// Sets every scalar (trainable slices only) of the listed ZIGs to zero.
void zero_groups(ComputationGraph &g, const PartitionResult &p, const std::vector<int> &zigs);

/// Surviving output channels (or flattened features) of every producer.
struct ChannelMaps {
  std::vector<std::vector<std::int64_t>> vertex; ///< per vertex position, strictly increasing
  std::vector<std::vector<std::int64_t>> input;  ///< per graph input (all channels)
};

ChannelMaps build_channel_maps(const ComputationGraph &g, const PartitionResult &p,
                               const PruneMask &mask);

/// Removes flagged rows from producers, the matching input planes/columns from
/// consumers and the matching BatchNorm entries, then re-infers shapes.
/// Throws ShapeMismatchAfterPrune.
ComputationGraph prune(const ComputationGraph &g, const PartitionResult &p, const PruneMask &mask,
                       const ChannelMaps &maps);

/// detect -> maps -> prune.
ComputationGraph compress(const ComputationGraph &g, const PartitionResult &p);

struct EquivalenceReport {
  int trials = 0;
  double max_abs_diff = 0.0;
  double tolerance = 0.0;
  bool passed = false;
};

/// Eval-mode outputs of both graphs on `trials` random N(0,1) inputs.
EquivalenceReport verify_equivalence(const ComputationGraph &full,
                                     const ComputationGraph &compressed, int trials, double tol,
                                     Rng &rng, std::int64_t batch = 2);

nlohmann::json to_json(const EquivalenceReport &r);

/// Removed groups per component plus FLOPs/params before and after.
nlohmann::json compression_report(const ComputationGraph &full, const ComputationGraph &compressed,
                                  const PartitionResult &p, const PruneMask &mask);

} // namespace zigprune

#endif
