#include "zigprune/graph_io.hpp"

#include <fstream>
#include <sstream>

namespace zigprune {

namespace {

int get_int(const json &v, const char *key, int fallback) {
  return v.contains(key) ? v.at(key).get<int>() : fallback;
}

int require_int(const json &v, const char *key) {
  if (!v.contains(key))
    throw Error(ErrorCode::InvalidGraph, std::string("vertex is missing '") + key + "'");
  return v.at(key).get<int>();
}

VertexKind parse_kind(const json &v, const BuildOptions &opts) {
  if (!v.contains("op") || !v.at("op").is_string() || v.at("op").get<std::string>().empty())
    throw Error(ErrorCode::UnknownKindString, "vertex has no operator name");
  const auto op = v.at("op").get<std::string>();
  if (op == "conv2d") {
    Conv2d c;
    c.kernel = get_int(v, "kernel", 3);
    c.stride = get_int(v, "stride", 1);
    c.pad = get_int(v, "pad", 0);
    c.in_channels = require_int(v, "in_channels");
    c.out_channels = require_int(v, "out_channels");
    c.has_bias = v.value("bias", true);
    return c;
  }
  if (op == "linear") {
    Linear l;
    l.in_features = require_int(v, "in_features");
    l.out_features = require_int(v, "out_features");
    l.has_bias = v.value("bias", true);
    return l;
  }
  if (op == "batchnorm") {
    BatchNorm b;
    b.channels = require_int(v, "channels");
    b.eps = v.value("eps", 1e-5);
    b.momentum = v.value("momentum", 0.1);
    return b;
  }
  if (op == "relu") return Relu{};
  if (op == "maxpool") return MaxPool{get_int(v, "kernel", 2), get_int(v, "stride", 2)};
  if (op == "avgpool") return AvgPool{get_int(v, "kernel", 2), get_int(v, "stride", 2)};
  if (op == "flatten") return Flatten{};
  if (op == "add") return Add{};
  if (op == "mul") return Mul{};
  if (op == "concat") {
    if (v.contains("axis") && v.at("axis").get<int>() != 1)
      throw Error(ErrorCode::InvalidGraph, "concat is only supported along the channel axis");
    return Concat{};
  }
  if (op == "output") return GraphOutput{};
  if (opts.strict) throw Error(ErrorCode::UnknownKindString, "unrecognized operator '" + op + "'");
  return Unknown{op};
}

std::vector<double> vec(const json &p, const char *key) {
  return p.contains(key) ? p.at(key).get<std::vector<double>>() : std::vector<double>{};
}

ParameterSet parse_params(const json &p) {
  ParameterSet out;
  if (p.contains("weight")) {
    const auto &w = p.at("weight");
    const auto rows = w.at("rows").get<Eigen::Index>();
    const auto cols = w.at("cols").get<Eigen::Index>();
    const auto data = w.at("data").get<std::vector<double>>();
    if (Eigen::Index(data.size()) != rows * cols)
      throw Error(ErrorCode::ShapeMismatch, "weight data length does not match rows*cols");
    out.weight = Eigen::Map<const Matrix>(data.data(), rows, cols);
  }
  out.bias = vec(p, "bias");
  out.gamma = vec(p, "gamma");
  out.beta = vec(p, "beta");
  out.running_mean = vec(p, "running_mean");
  out.running_var = vec(p, "running_var");
  return out;
}

json params_to_json(const ParameterSet &p) {
  json out = json::object();
  if (p.weight.size() > 0) {
    out["weight"] = {{"rows", p.weight.rows()},
                     {"cols", p.weight.cols()},
                     {"data", std::vector<double>(p.weight.data(),
                                                  p.weight.data() + p.weight.size())}};
  }
  if (!p.bias.empty()) out["bias"] = p.bias;
  if (!p.gamma.empty()) out["gamma"] = p.gamma;
  if (!p.beta.empty()) out["beta"] = p.beta;
  if (!p.running_mean.empty()) out["running_mean"] = p.running_mean;
  if (!p.running_var.empty()) out["running_var"] = p.running_var;
  return out;
}

} // namespace

ComputationGraph build_graph(const json &doc, const BuildOptions &opts) {
  if (!doc.is_object()) throw Error(ErrorCode::InvalidGraph, "graph document must be an object");
  std::vector<GraphInput> inputs;
  for (const auto &in : doc.value("inputs", json::array())) {
    GraphInput gi;
    gi.name = in.value("name", "input" + std::to_string(inputs.size()));
    gi.shape = TensorShape(in.at("shape").get<std::vector<std::int64_t>>());
    gi.consumers = in.value("consumers", std::vector<int>{});
    inputs.push_back(std::move(gi));
  }

  std::vector<Vertex> vertices;
  for (const auto &jv : doc.value("vertices", json::array())) {
    Vertex v;
    v.id = jv.at("id").get<int>();
    v.name = jv.value("name", "");
    v.kind = parse_kind(jv, opts);
    v.params = allocate_parameters(v.kind);
    if (jv.contains("params")) {
      if (!v.params)
        throw Error(ErrorCode::InvalidGraph,
                    "vertex " + std::to_string(v.id) + " cannot carry parameters");
      auto parsed = parse_params(jv.at("params"));
      if (parsed.weight.size() > 0) v.params->weight = std::move(parsed.weight);
      if (!parsed.bias.empty()) v.params->bias = std::move(parsed.bias);
      if (!parsed.gamma.empty()) v.params->gamma = std::move(parsed.gamma);
      if (!parsed.beta.empty()) v.params->beta = std::move(parsed.beta);
      if (!parsed.running_mean.empty()) v.params->running_mean = std::move(parsed.running_mean);
      if (!parsed.running_var.empty()) v.params->running_var = std::move(parsed.running_var);
    }
    vertices.push_back(std::move(v));
  }

  std::vector<Edge> edges;
  for (const auto &e : doc.value("edges", json::array())) {
    if (!e.is_array() || e.size() != 2)
      throw Error(ErrorCode::InvalidGraph, "edges must be [src, dst] pairs");
    edges.push_back(Edge{e[0].get<int>(), e[1].get<int>()});
  }
  return ComputationGraph(std::move(vertices), std::move(edges), std::move(inputs));
}

json graph_to_json(const ComputationGraph &g, bool with_params) {
  json doc;
  doc["format"] = "zigprune-graph";
  doc["version"] = 1;
  json inputs = json::array();
  for (const auto &in : g.inputs())
    inputs.push_back({{"name", in.name}, {"shape", in.shape.dims}, {"consumers", in.consumers}});
  doc["inputs"] = std::move(inputs);

  json vertices = json::array();
  for (const auto &v : g.vertices()) {
    json jv;
    jv["id"] = v.id;
    if (!v.name.empty()) jv["name"] = v.name;
    jv["op"] = op_name(v.kind);
    std::visit(
        [&](const auto &k) {
          using K = std::decay_t<decltype(k)>;
          if constexpr (std::is_same_v<K, Conv2d>) {
            jv["kernel"] = k.kernel;
            jv["stride"] = k.stride;
            jv["pad"] = k.pad;
            jv["in_channels"] = k.in_channels;
            jv["out_channels"] = k.out_channels;
            jv["bias"] = k.has_bias;
          } else if constexpr (std::is_same_v<K, Linear>) {
            jv["in_features"] = k.in_features;
            jv["out_features"] = k.out_features;
            jv["bias"] = k.has_bias;
          } else if constexpr (std::is_same_v<K, BatchNorm>) {
            jv["channels"] = k.channels;
            jv["eps"] = k.eps;
            jv["momentum"] = k.momentum;
          } else if constexpr (std::is_same_v<K, MaxPool> || std::is_same_v<K, AvgPool>) {
            jv["kernel"] = k.kernel;
            jv["stride"] = k.stride;
          } else if constexpr (std::is_same_v<K, Concat>) {
            jv["axis"] = 1;
          }
        },
        v.kind);
    if (with_params && v.params) jv["params"] = params_to_json(*v.params);
    vertices.push_back(std::move(jv));
  }
  doc["vertices"] = std::move(vertices);

  json edges = json::array();
  for (const auto &e : g.edges()) edges.push_back({e.src, e.dst});
  doc["edges"] = std::move(edges);
  return doc;
}

json read_json_file(const std::filesystem::path &path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::Io, "cannot open " + path.string());
  try {
    return json::parse(in);
  } catch (const json::exception &e) {
    throw Error(ErrorCode::Io, path.string() + ": " + e.what());
  }
}

void write_json_file(const json &doc, const std::filesystem::path &path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw Error(ErrorCode::Io, "cannot write " + path.string());
  out << doc.dump(1) << '\n';
}

ComputationGraph load_graph(const std::filesystem::path &path, const BuildOptions &opts) {
  return build_graph(read_json_file(path), opts);
}

void save_graph(const ComputationGraph &g, const std::filesystem::path &path, bool with_params) {
  write_json_file(graph_to_json(g, with_params), path);
}

} // namespace zigprune
