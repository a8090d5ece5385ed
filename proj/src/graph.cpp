#include "zigprune/graph.hpp"

#include <algorithm>
#include <queue>
#include <sstream>

namespace zigprune {

std::string_view to_string(ErrorCode code) {
  switch (code) {
  case ErrorCode::CycleDetected: return "CycleDetected";
  case ErrorCode::DanglingEdge: return "DanglingEdge";
  case ErrorCode::UnknownKindString: return "UnknownKindString";
  case ErrorCode::DuplicateVertexId: return "DuplicateVertexId";
  case ErrorCode::InvalidGraph: return "InvalidGraph";
  case ErrorCode::ShapeMismatchAtSDJoint: return "ShapeMismatchAtSDJoint";
  case ErrorCode::FlattenWithoutKnownSpatialDims: return "FlattenWithoutKnownSpatialDims";
  case ErrorCode::ShapeMismatch: return "ShapeMismatch";
  case ErrorCode::InconsistentStemWidths: return "InconsistentStemWidths";
  case ErrorCode::KExceedsGroupCount: return "KExceedsGroupCount";
  case ErrorCode::AllGroupsZeroInComponent: return "AllGroupsZeroInComponent";
  case ErrorCode::ShapeMismatchAfterPrune: return "ShapeMismatchAfterPrune";
  case ErrorCode::UnsupportedOperator: return "UnsupportedOperator";
  case ErrorCode::InvalidConfig: return "InvalidConfig";
  case ErrorCode::Io: return "Io";
  }
  return "Unknown";
}

// ---------------------------------------------------------------------------
// TensorShape

std::int64_t TensorShape::sample_size() const {
  std::int64_t n = 1;
  for (std::size_t i = 1; i < dims.size(); ++i) n *= dims[i];
  return n;
}

TensorShape TensorShape::with_batch(std::int64_t n) const {
  TensorShape s = *this;
  s.dims.at(0) = n;
  return s;
}

void TensorShape::validate() const {
  if (rank() != 2 && rank() != 4)
    throw Error(ErrorCode::ShapeMismatch, "rank must be 2 or 4, got " + to_string(*this));
  for (auto d : dims)
    if (d < 1) throw Error(ErrorCode::ShapeMismatch, "non-positive dim in " + to_string(*this));
}

std::string to_string(const TensorShape &s) {
  std::ostringstream os;
  os << '(';
  for (std::size_t i = 0; i < s.dims.size(); ++i) os << (i ? "," : "") << s.dims[i];
  os << ')';
  return os.str();
}

// ---------------------------------------------------------------------------
// Kinds

namespace {
template <class... Ts> struct overloaded : Ts... { using Ts::operator()...; };
template <class... Ts> overloaded(Ts...) -> overloaded<Ts...>;
} // namespace

Category category(const VertexKind &kind) {
  return std::visit(overloaded{
                        [](const Conv2d &) { return Category::Stem; },
                        [](const Linear &) { return Category::Stem; },
                        [](const BatchNorm &) { return Category::Accessory; },
                        [](const Relu &) { return Category::Accessory; },
                        [](const MaxPool &) { return Category::Accessory; },
                        [](const AvgPool &) { return Category::Accessory; },
                        [](const Flatten &) { return Category::Accessory; },
                        [](const Add &) { return Category::SdJoint; },
                        [](const Mul &) { return Category::SdJoint; },
                        [](const Concat &) { return Category::SidJoint; },
                        [](const Unknown &) { return Category::Unknown; },
                        [](const GraphOutput &) { return Category::Output; },
                    },
                    kind);
}

std::string_view to_string(Category c) {
  switch (c) {
  case Category::Stem: return "stem";
  case Category::Accessory: return "accessory";
  case Category::SdJoint: return "sd-joint";
  case Category::SidJoint: return "sid-joint";
  case Category::Unknown: return "unknown";
  case Category::Output: return "output";
  }
  return "?";
}

std::string op_name(const VertexKind &kind) {
  return std::visit(overloaded{
                        [](const Conv2d &) -> std::string { return "conv2d"; },
                        [](const Linear &) -> std::string { return "linear"; },
                        [](const BatchNorm &) -> std::string { return "batchnorm"; },
                        [](const Relu &) -> std::string { return "relu"; },
                        [](const MaxPool &) -> std::string { return "maxpool"; },
                        [](const AvgPool &) -> std::string { return "avgpool"; },
                        [](const Flatten &) -> std::string { return "flatten"; },
                        [](const Add &) -> std::string { return "add"; },
                        [](const Mul &) -> std::string { return "mul"; },
                        [](const Concat &) -> std::string { return "concat"; },
                        [](const Unknown &u) -> std::string { return u.opname; },
                        [](const GraphOutput &) -> std::string { return "output"; },
                    },
                    kind);
}

// ---------------------------------------------------------------------------
// ParameterSet

std::int64_t ParameterSet::trainable_size() const {
  return static_cast<std::int64_t>(weight.size() + bias.size() + gamma.size() + beta.size());
}

bool operator==(const ParameterSet &a, const ParameterSet &b) {
  if (a.weight.rows() != b.weight.rows() || a.weight.cols() != b.weight.cols()) return false;
  if (!std::equal(a.weight.data(), a.weight.data() + a.weight.size(), b.weight.data()))
    return false;
  return a.bias == b.bias && a.gamma == b.gamma && a.beta == b.beta &&
         a.running_mean == b.running_mean && a.running_var == b.running_var;
}

std::optional<ParameterSet> allocate_parameters(const VertexKind &kind) {
  if (auto *c = std::get_if<Conv2d>(&kind)) {
    ParameterSet p;
    p.weight = Matrix::Zero(c->out_channels, c->in_channels * c->kernel * c->kernel);
    if (c->has_bias) p.bias.assign(c->out_channels, 0.0);
    return p;
  }
  if (auto *l = std::get_if<Linear>(&kind)) {
    ParameterSet p;
    p.weight = Matrix::Zero(l->out_features, l->in_features);
    if (l->has_bias) p.bias.assign(l->out_features, 0.0);
    return p;
  }
  if (auto *b = std::get_if<BatchNorm>(&kind)) {
    ParameterSet p;
    p.gamma.assign(b->channels, 1.0);
    p.beta.assign(b->channels, 0.0);
    p.running_mean.assign(b->channels, 0.0);
    p.running_var.assign(b->channels, 1.0);
    return p;
  }
  return std::nullopt;
}

// ---------------------------------------------------------------------------
// ComputationGraph

ComputationGraph::ComputationGraph(std::vector<Vertex> vertices, std::vector<Edge> edges,
                                   std::vector<GraphInput> inputs)
    : vertices_(std::move(vertices)), edges_(std::move(edges)), inputs_(std::move(inputs)) {
  index();
}

std::size_t ComputationGraph::lookup(int id) const {
  if (!dense_index_.empty()) {
    const auto off = static_cast<std::int64_t>(id) - id_base_;
    if (off < 0 || off >= static_cast<std::int64_t>(dense_index_.size())) return kAbsent;
    return dense_index_[static_cast<std::size_t>(off)];
  }
  auto it = index_.find(id);
  return it == index_.end() ? kAbsent : it->second;
}

std::size_t ComputationGraph::position(int id) const {
  const auto pos = lookup(id);
  if (pos == kAbsent)
    throw Error(ErrorCode::DanglingEdge, "no vertex with id " + std::to_string(id));
  return pos;
}

void ComputationGraph::index() {
  const std::size_t n = vertices_.size();
  index_.clear();
  dense_index_.clear();
  id_base_ = 0;
  if (n > 0) {
    const auto [lo, hi] = std::minmax_element(
        vertices_.begin(), vertices_.end(),
        [](const Vertex &a, const Vertex &b) { return a.id < b.id; });
    const auto span = static_cast<std::int64_t>(hi->id) - lo->id + 1;
    if (span <= 4 * static_cast<std::int64_t>(n) + 64) {
      id_base_ = lo->id;
      dense_index_.assign(static_cast<std::size_t>(span), kAbsent);
    }
  }
  for (std::size_t i = 0; i < n; ++i) {
    const int id = vertices_[i].id;
    bool fresh;
    if (!dense_index_.empty()) {
      auto &slot = dense_index_[static_cast<std::size_t>(static_cast<std::int64_t>(id) - id_base_)];
      fresh = slot == kAbsent;
      slot = i;
    } else {
      fresh = index_.emplace(id, i).second;
    }
    if (!fresh)
      throw Error(ErrorCode::DuplicateVertexId, "vertex id " + std::to_string(id));
  }

  operands_.assign(n, {});
  successors_.assign(n, {});
  predecessors_.assign(n, {});

  for (std::size_t k = 0; k < inputs_.size(); ++k) {
    inputs_[k].shape.validate();
    for (int dst : inputs_[k].consumers) {
      const auto d = lookup(dst);
      if (d == kAbsent)
        throw Error(ErrorCode::DanglingEdge,
                    "input '" + inputs_[k].name + "' feeds missing id " + std::to_string(dst));
      operands_[d].push_back(Port{Port::Kind::Input, k});
    }
  }
  for (const auto &e : edges_) {
    const auto s = lookup(e.src);
    const auto d = lookup(e.dst);
    if (s == kAbsent || d == kAbsent)
      throw Error(ErrorCode::DanglingEdge, "edge " + std::to_string(e.src) + "->" +
                                               std::to_string(e.dst) + " references missing id");
    operands_[d].push_back(Port{Port::Kind::Vertex, s});
    successors_[s].push_back(d);
    predecessors_[d].push_back(s);
  }

  // Kahn's algorithm; the ready set is a min-heap on position so the order
  // only depends on the vertex list, not on the id labels.
  std::vector<std::size_t> indegree(n);
  for (std::size_t i = 0; i < n; ++i) indegree[i] = predecessors_[i].size();
  std::priority_queue<std::size_t, std::vector<std::size_t>, std::greater<>> ready;
  for (std::size_t i = 0; i < n; ++i)
    if (indegree[i] == 0) ready.push(i);
  topo_.clear();
  topo_.reserve(n);
  while (!ready.empty()) {
    auto v = ready.top();
    ready.pop();
    topo_.push_back(v);
    for (auto s : successors_[v])
      if (--indegree[s] == 0) ready.push(s);
  }
  if (topo_.size() != n) throw Error(ErrorCode::CycleDetected, "graph contains a cycle");
  topo_index_.assign(n, 0);
  for (std::size_t i = 0; i < n; ++i) topo_index_[topo_[i]] = i;

  for (std::size_t i = 0; i < n; ++i) {
    const auto &v = vertices_[i];
    const std::size_t arity = operands_[i].size();
    const auto cat = v.category();
    if (arity == 0)
      throw Error(ErrorCode::InvalidGraph,
                  "vertex " + std::to_string(v.id) + " is not reachable from any input");
    if ((cat == Category::Stem || cat == Category::Accessory || cat == Category::Output ||
         cat == Category::Unknown) &&
        arity != 1)
      throw Error(ErrorCode::InvalidGraph, "vertex " + std::to_string(v.id) + " (" +
                                               op_name(v.kind) + ") expects exactly one operand");
    if (cat == Category::Output && !successors_[i].empty())
      throw Error(ErrorCode::InvalidGraph, "output vertex " + std::to_string(v.id) +
                                               " has outgoing edges");
    if (cat == Category::Stem || std::holds_alternative<BatchNorm>(v.kind)) {
      if (!v.params)
        throw Error(ErrorCode::InvalidGraph,
                    "vertex " + std::to_string(v.id) + " requires parameters");
    } else if (v.params) {
      throw Error(ErrorCode::InvalidGraph,
                  "vertex " + std::to_string(v.id) + " cannot carry parameters");
    }
  }
}

std::vector<std::size_t> ComputationGraph::output_positions() const {
  std::vector<std::size_t> out;
  for (auto p : topo_)
    if (vertices_[p].category() == Category::Output) out.push_back(p);
  return out;
}

std::vector<int> ComputationGraph::unknown_vertex_ids() const {
  std::vector<int> out;
  for (const auto &v : vertices_)
    if (v.category() == Category::Unknown) out.push_back(v.id);
  return out;
}

bool ComputationGraph::shapes_inferred() const {
  return std::all_of(vertices_.begin(), vertices_.end(),
                     [](const Vertex &v) { return v.out_shape.has_value(); });
}

// ---------------------------------------------------------------------------
// Shape inference

namespace {

std::string vtag(const Vertex &v) {
  return op_name(v.kind) + "#" + std::to_string(v.id);
}

void check_params(const Vertex &v) {
  const auto &p = *v.params;
  auto bad = [&](const std::string &what) {
    throw Error(ErrorCode::ShapeMismatch, vtag(v) + ": parameter " + what + " has wrong size");
  };
  if (auto *c = std::get_if<Conv2d>(&v.kind)) {
    if (p.weight.rows() != c->out_channels ||
        p.weight.cols() != c->in_channels * c->kernel * c->kernel)
      bad("weight");
    if (p.bias.size() != (c->has_bias ? std::size_t(c->out_channels) : 0)) bad("bias");
  } else if (auto *l = std::get_if<Linear>(&v.kind)) {
    if (p.weight.rows() != l->out_features || p.weight.cols() != l->in_features) bad("weight");
    if (p.bias.size() != (l->has_bias ? std::size_t(l->out_features) : 0)) bad("bias");
  } else if (auto *b = std::get_if<BatchNorm>(&v.kind)) {
    const auto c = std::size_t(b->channels);
    if (p.gamma.size() != c) bad("gamma");
    if (p.beta.size() != c) bad("beta");
    if (p.running_mean.size() != c) bad("running_mean");
    if (p.running_var.size() != c) bad("running_var");
  }
}

TensorShape pooled(const Vertex &v, const TensorShape &in, int k, int s) {
  if (in.rank() != 4) throw Error(ErrorCode::ShapeMismatch, vtag(v) + " expects a 4-D input");
  if (k < 1 || s < 1 || in.height() < k || in.width() < k)
    throw Error(ErrorCode::ShapeMismatch, vtag(v) + ": pool window larger than input");
  return TensorShape{in.batch(), in.channels(), (in.height() - k) / s + 1,
                     (in.width() - k) / s + 1};
}

} // namespace

TensorShape output_shape(const Vertex &v, const std::vector<TensorShape> &ins) {
  const auto &in = ins.at(0);
  return std::visit(
      overloaded{
          [&](const Conv2d &c) {
            if (in.rank() != 4 || in.channels() != c.in_channels)
              throw Error(ErrorCode::ShapeMismatch,
                          vtag(v) + " expects (N," + std::to_string(c.in_channels) +
                              ",H,W), got " + to_string(in));
            const auto ho = (in.height() + 2 * c.pad - c.kernel) / c.stride + 1;
            const auto wo = (in.width() + 2 * c.pad - c.kernel) / c.stride + 1;
            if (ho < 1 || wo < 1 || c.kernel < 1 || c.stride < 1)
              throw Error(ErrorCode::ShapeMismatch, vtag(v) + ": empty convolution output");
            return TensorShape{in.batch(), c.out_channels, ho, wo};
          },
          [&](const Linear &l) {
            if (in.rank() != 2 || in.dims[1] != l.in_features)
              throw Error(ErrorCode::ShapeMismatch,
                          vtag(v) + " expects (N," + std::to_string(l.in_features) +
                              "), got " + to_string(in));
            return TensorShape{in.batch(), l.out_features};
          },
          [&](const BatchNorm &b) {
            if (in.dims.at(1) != b.channels)
              throw Error(ErrorCode::ShapeMismatch,
                          vtag(v) + " normalizes " + std::to_string(b.channels) +
                              " channels, got " + to_string(in));
            return in;
          },
          [&](const Relu &) { return in; },
          [&](const MaxPool &p) { return pooled(v, in, p.kernel, p.stride); },
          [&](const AvgPool &p) { return pooled(v, in, p.kernel, p.stride); },
          [&](const Flatten &) {
            if (in.rank() != 4)
              throw Error(ErrorCode::FlattenWithoutKnownSpatialDims,
                          vtag(v) + " needs a (N,C,H,W) input, got " + to_string(in));
            return TensorShape{in.batch(), in.sample_size()};
          },
          [&](const Add &) {
            for (const auto &s : ins)
              if (s != in)
                throw Error(ErrorCode::ShapeMismatchAtSDJoint,
                            vtag(v) + ": " + to_string(in) + " vs " + to_string(s));
            return in;
          },
          [&](const Mul &) {
            for (const auto &s : ins)
              if (s != in)
                throw Error(ErrorCode::ShapeMismatchAtSDJoint,
                            vtag(v) + ": " + to_string(in) + " vs " + to_string(s));
            return in;
          },
          [&](const Concat &) {
            TensorShape out = in;
            for (std::size_t i = 1; i < ins.size(); ++i) {
              const auto &s = ins[i];
              bool ok = s.rank() == in.rank() && s.batch() == in.batch();
              for (std::size_t d = 2; ok && d < s.rank(); ++d) ok = s.dims[d] == in.dims[d];
              if (!ok)
                throw Error(ErrorCode::ShapeMismatch,
                            vtag(v) + ": cannot concatenate " + to_string(in) + " and " +
                                to_string(s));
              out.dims[1] += s.dims[1];
            }
            return out;
          },
          [&](const Unknown &) { return in; },
          [&](const GraphOutput &) { return in; },
      },
      v.kind);
}

std::vector<TensorShape> shapes_for_batch(const ComputationGraph &g, std::int64_t n) {
  std::vector<TensorShape> shapes(g.size());
  for (auto pos : g.topo_order()) {
    const auto &v = g.at(pos);
    if (v.params) check_params(v);
    std::vector<TensorShape> ins;
    for (const auto &port : g.operands(pos))
      ins.push_back(port.kind == Port::Kind::Input ? g.inputs()[port.index].shape.with_batch(n)
                                                   : shapes[port.index]);
    shapes[pos] = output_shape(v, ins);
  }
  return shapes;
}

ComputationGraph infer_shapes(ComputationGraph g) {
  if (g.inputs().empty()) throw Error(ErrorCode::InvalidGraph, "graph has no inputs");
  const auto n = g.inputs().front().shape.batch();
  for (const auto &in : g.inputs())
    if (in.shape.batch() != n)
      throw Error(ErrorCode::ShapeMismatch, "graph inputs disagree on the batch dimension");
  auto shapes = shapes_for_batch(g, n);
  for (std::size_t i = 0; i < g.size(); ++i) g.at(i).out_shape = std::move(shapes[i]);
  return g;
}

} // namespace zigprune
