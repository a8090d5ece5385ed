#ifndef ZIGPRUNE_GRAPH_IO_HPP
#define ZIGPRUNE_GRAPH_IO_HPP

#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "zigprune/graph.hpp"

namespace zigprune {

using json = nlohmann::json;

struct BuildOptions {
  /// Reject operator names outside the known set instead of mapping them to
  /// Unknown vertices.
  bool strict = false;
};

/// Parses a graph description document:
///
///   {
///     "format": "zigprune-graph", "version": 1,
///     "inputs":   [{"name": "x", "shape": [1,3,16,16], "consumers": [1,4]}],
///     "vertices": [{"id": 1, "op": "conv2d", "kernel": 3, "stride": 1, "pad": 1,
///                   "in_channels": 3, "out_channels": 16, "bias": true,
///                   "params": {"weight": {"rows": 16, "cols": 27, "data": [...]},
///                              "bias": [...]}}, ...],
///     "edges":    [[1, 2], [2, 3], ...]
///   }
///
/// Vertices without "params" get zero-allocated parameters. Unrecognized
/// "op" strings become Unknown vertices unless `opts.strict`.
ComputationGraph build_graph(const json &doc, const BuildOptions &opts = {});

/// Inverse of build_graph. Parameters are written when `with_params`.
json graph_to_json(const ComputationGraph &g, bool with_params = true);

ComputationGraph load_graph(const std::filesystem::path &path, const BuildOptions &opts = {});
void save_graph(const ComputationGraph &g, const std::filesystem::path &path,
                bool with_params = true);

json read_json_file(const std::filesystem::path &path);
void write_json_file(const json &doc, const std::filesystem::path &path);

} // namespace zigprune

#endif
