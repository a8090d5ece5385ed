#ifndef ZIGPRUNE_GRAPH_HPP
#define ZIGPRUNE_GRAPH_HPP

#include <cstdint>
#include <optional>
#include <string>
#include <unordered_map>
#include <variant>
#include <vector>

#include <Eigen/Core>

#include "zigprune/error.hpp"

namespace zigprune {

using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// Activation shape: (N, C, H, W) or (N, F).
struct TensorShape {
  std::vector<std::int64_t> dims;

  TensorShape() = default;
  TensorShape(std::initializer_list<std::int64_t> d) : dims(d) {}
  explicit TensorShape(std::vector<std::int64_t> d) : dims(std::move(d)) {}

  std::size_t rank() const { return dims.size(); }
  std::int64_t batch() const { return dims.at(0); }
  std::int64_t channels() const { return dims.at(1); }
  std::int64_t height() const { return dims.at(2); }
  std::int64_t width() const { return dims.at(3); }
  /// Elements per sample (everything but the batch dimension).
  std::int64_t sample_size() const;
  std::int64_t numel() const { return batch() * sample_size(); }
  /// Spatial positions per channel, 1 for rank-2 shapes.
  std::int64_t spatial() const { return rank() == 4 ? dims[2] * dims[3] : 1; }

  TensorShape with_batch(std::int64_t n) const;
  void validate() const;

  friend bool operator==(const TensorShape &, const TensorShape &) = default;
};

std::string to_string(const TensorShape &s);

// ---------------------------------------------------------------------------
// Vertex kinds

struct Conv2d {
  int kernel = 3;
  int stride = 1;
  int pad = 0;
  int in_channels = 0;
  int out_channels = 0;
  bool has_bias = true;
  friend bool operator==(const Conv2d &, const Conv2d &) = default;
};

struct Linear {
  int in_features = 0;
  int out_features = 0;
  bool has_bias = true;
  friend bool operator==(const Linear &, const Linear &) = default;
};

struct BatchNorm {
  int channels = 0;
  double eps = 1e-5;
  double momentum = 0.1;
  friend bool operator==(const BatchNorm &, const BatchNorm &) = default;
};

struct Relu {
  friend bool operator==(const Relu &, const Relu &) = default;
};

struct MaxPool {
  int kernel = 2;
  int stride = 2;
  friend bool operator==(const MaxPool &, const MaxPool &) = default;
};

struct AvgPool {
  int kernel = 2;
  int stride = 2;
  friend bool operator==(const AvgPool &, const AvgPool &) = default;
};

struct Flatten {
  friend bool operator==(const Flatten &, const Flatten &) = default;
};

struct Add {
  friend bool operator==(const Add &, const Add &) = default;
};

struct Mul {
  friend bool operator==(const Mul &, const Mul &) = default;
};

/// Concatenation along the channel (feature) axis.
struct Concat {
  friend bool operator==(const Concat &, const Concat &) = default;
};

/// An operator outside the known set. The runtime evaluates a handful of
/// elementwise opnames (identity, tanh, sigmoid); partitioning treats all of
/// them as opaque.
struct Unknown {
  std::string opname;
  friend bool operator==(const Unknown &, const Unknown &) = default;
};

struct GraphOutput {
  friend bool operator==(const GraphOutput &, const GraphOutput &) = default;
};

using VertexKind = std::variant<Conv2d, Linear, BatchNorm, Relu, MaxPool, AvgPool, Flatten,
                                Add, Mul, Concat, Unknown, GraphOutput>;

enum class Category { Stem, Accessory, SdJoint, SidJoint, Unknown, Output };

Category category(const VertexKind &kind);
std::string_view to_string(Category c);
/// Operator name as used in the JSON graph description ("conv2d", "batchnorm", ...).
std::string op_name(const VertexKind &kind);

// ---------------------------------------------------------------------------
// Parameters

/// Trainable parameters plus BatchNorm running statistics of one vertex.
///
/// For Conv2d, row j of `weight` is the flattened jth filter laid out as
/// (in_channel, kh, kw). For Linear, `weight` is (out_features, in_features).
struct ParameterSet {
  Matrix weight;
  std::vector<double> bias;
  std::vector<double> gamma;
  std::vector<double> beta;
  std::vector<double> running_mean;
  std::vector<double> running_var;

  /// Trainable scalar count (weight, bias, gamma, beta).
  std::int64_t trainable_size() const;

  friend bool operator==(const ParameterSet &a, const ParameterSet &b);
};

struct Vertex {
  int id = 0;
  std::string name;
  VertexKind kind;
  std::optional<ParameterSet> params;
  std::optional<TensorShape> out_shape;

  Category category() const { return zigprune::category(kind); }

  friend bool operator==(const Vertex &, const Vertex &) = default;
};

struct Edge {
  int src = 0;
  int dst = 0;
  friend bool operator==(const Edge &, const Edge &) = default;
};

struct GraphInput {
  std::string name;
  TensorShape shape;
  /// Vertex ids fed by this input.
  std::vector<int> consumers;
  friend bool operator==(const GraphInput &, const GraphInput &) = default;
};

/// Where a vertex reads one of its operands from.
struct Port {
  enum class Kind { Vertex, Input };
  Kind kind = Kind::Vertex;
  /// Vertex position (not id) or graph-input index.
  std::size_t index = 0;
  friend bool operator==(const Port &, const Port &) = default;
};

/// Typed operator DAG. Vertex positions are stable indices into `vertices()`;
/// ids are the user-facing labels. Operand order of a vertex is: graph
/// inputs first (in input order), then incoming edges in declaration order.
class ComputationGraph {
public:
  ComputationGraph() = default;

  /// Validates and indexes the description. Throws DuplicateVertexId,
  /// DanglingEdge, CycleDetected or InvalidGraph.
  ComputationGraph(std::vector<Vertex> vertices, std::vector<Edge> edges,
                   std::vector<GraphInput> inputs);

  const std::vector<Vertex> &vertices() const { return vertices_; }
  std::vector<Vertex> &mutable_vertices() { return vertices_; }
  const std::vector<Edge> &edges() const { return edges_; }
  const std::vector<GraphInput> &inputs() const { return inputs_; }

  std::size_t size() const { return vertices_.size(); }
  const Vertex &at(std::size_t pos) const { return vertices_[pos]; }
  Vertex &at(std::size_t pos) { return vertices_[pos]; }
  std::size_t position(int id) const;
  bool contains(int id) const { return lookup(id) != kAbsent; }
  const Vertex &by_id(int id) const { return vertices_[position(id)]; }

  const std::vector<Port> &operands(std::size_t pos) const { return operands_[pos]; }
  const std::vector<std::size_t> &successors(std::size_t pos) const { return successors_[pos]; }
  const std::vector<std::size_t> &predecessors(std::size_t pos) const { return predecessors_[pos]; }
  /// Kahn order, ties broken by vertex position.
  const std::vector<std::size_t> &topo_order() const { return topo_; }
  /// Position of each vertex within topo_order().
  const std::vector<std::size_t> &topo_index() const { return topo_index_; }

  /// Positions of GraphOutput vertices in topological order.
  std::vector<std::size_t> output_positions() const;
  /// Ids of Unknown vertices (permitted but flagged).
  std::vector<int> unknown_vertex_ids() const;

  bool shapes_inferred() const;

  friend bool operator==(const ComputationGraph &a, const ComputationGraph &b) {
    return a.vertices_ == b.vertices_ && a.edges_ == b.edges_ && a.inputs_ == b.inputs_;
  }

private:
  void index();
  static constexpr std::size_t kAbsent = static_cast<std::size_t>(-1);
  std::size_t lookup(int id) const;

  std::vector<Vertex> vertices_;
  std::vector<Edge> edges_;
  std::vector<GraphInput> inputs_;

  // Dense id table when ids span at most a few times the vertex count,
  // hash map otherwise.
  int id_base_ = 0;
  std::vector<std::size_t> dense_index_;
  std::unordered_map<int, std::size_t> index_;
  std::vector<std::vector<Port>> operands_;
  std::vector<std::vector<std::size_t>> successors_;
  std::vector<std::vector<std::size_t>> predecessors_;
  std::vector<std::size_t> topo_;
  std::vector<std::size_t> topo_index_;
};

/// Allocates a zero ParameterSet of the right layout for the kind, or
/// nullopt for parameter-free kinds. BatchNorm running_var starts at 1.
std::optional<ParameterSet> allocate_parameters(const VertexKind &kind);

/// Fills shapes for every vertex using the graph's declared input shapes.
/// Throws ShapeMismatchAtSDJoint, FlattenWithoutKnownSpatialDims or
/// ShapeMismatch.
ComputationGraph infer_shapes(ComputationGraph g);

/// Shape of one vertex's output given its operand shapes.
TensorShape output_shape(const Vertex &v, const std::vector<TensorShape> &operand_shapes);

/// Output shapes of every vertex (by position) for a batch of size n.
std::vector<TensorShape> shapes_for_batch(const ComputationGraph &g, std::int64_t n);

} // namespace zigprune

#endif
