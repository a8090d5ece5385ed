#include "zigprune/builders.hpp"

#include <cmath>

namespace zigprune {

int GraphBuilder::add_input(std::string name, TensorShape shape) {
  inputs_.push_back(GraphInput{std::move(name), std::move(shape), {}});
  return static_cast<int>(inputs_.size()) - 1;
}

int GraphBuilder::add(VertexKind kind, std::vector<Operand> from, std::string name) {
  const int id = static_cast<int>(vertices_.size()) + 1;
  bool seen_vertex = false;
  for (const auto &op : from) {
    if (op.is_input) {
      if (seen_vertex)
        throw Error(ErrorCode::InvalidGraph, "graph-input operands must precede vertex operands");
      inputs_.at(op.index).consumers.push_back(id);
    } else {
      seen_vertex = true;
      edges_.push_back(Edge{op.index, id});
    }
  }
  Vertex v;
  v.id = id;
  v.name = std::move(name);
  v.params = allocate_parameters(kind);
  v.kind = std::move(kind);
  vertices_.push_back(std::move(v));
  return id;
}

ComputationGraph GraphBuilder::build() const {
  return infer_shapes(ComputationGraph(vertices_, edges_, inputs_));
}

void initialize_parameters(ComputationGraph &g, Rng &rng) {
  for (auto &v : g.mutable_vertices()) {
    if (!v.params) continue;
    auto &p = *v.params;
    if (v.category() == Category::Stem) {
      const double bound = 1.0 / std::sqrt(static_cast<double>(p.weight.cols()));
      std::uniform_real_distribution<double> u(-bound, bound);
      for (Eigen::Index i = 0; i < p.weight.size(); ++i) p.weight.data()[i] = u(rng);
      for (auto &b : p.bias) b = u(rng);
    } else {
      std::fill(p.gamma.begin(), p.gamma.end(), 1.0);
      std::fill(p.beta.begin(), p.beta.end(), 0.0);
      std::fill(p.running_mean.begin(), p.running_mean.end(), 0.0);
      std::fill(p.running_var.begin(), p.running_var.end(), 1.0);
    }
  }
}

void randomize_parameters(ComputationGraph &g, Rng &rng) {
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  std::uniform_real_distribution<double> var(0.5, 1.5);
  for (auto &v : g.mutable_vertices()) {
    if (!v.params) continue;
    auto &p = *v.params;
    const double scale =
        p.weight.cols() > 0 ? 1.0 / std::sqrt(static_cast<double>(p.weight.cols())) : 1.0;
    for (Eigen::Index i = 0; i < p.weight.size(); ++i) p.weight.data()[i] = scale * u(rng);
    for (auto &b : p.bias) b = u(rng);
    for (auto &x : p.gamma) x = u(rng);
    for (auto &x : p.beta) x = u(rng);
    for (auto &x : p.running_mean) x = u(rng);
    for (auto &x : p.running_var) x = var(rng);
  }
}

namespace {

Conv2d conv3x3(int cin, int cout) { return Conv2d{3, 1, 1, cin, cout, true}; }

ComputationGraph finish(const GraphBuilder &b, std::uint64_t seed) {
  auto g = b.build();
  Rng rng(seed);
  initialize_parameters(g, rng);
  return g;
}

} // namespace

ComputationGraph demo_net(std::uint64_t seed, std::int64_t batch) {
  GraphBuilder b;
  const int x = b.add_input("x", TensorShape{batch, 3, 16, 16});
  const auto in = GraphBuilder::input(x);
  using B = GraphBuilder;

  const int conv1 = b.add(conv3x3(3, 16), {in}, "conv1");
  const int bn1 = b.add(BatchNorm{16}, conv1, "bn1");
  const int relu1 = b.add(Relu{}, bn1, "relu1");

  const int conv2 = b.add(conv3x3(3, 16), {in}, "conv2");
  const int conv3 = b.add(conv3x3(3, 16), {in}, "conv3");
  const int add1 = b.add(Add{}, {B::vertex(conv2), B::vertex(conv3)}, "add1");
  const int bn2 = b.add(BatchNorm{16}, add1, "bn2");
  const int bn3 = b.add(BatchNorm{16}, add1, "bn3");
  const int add2 = b.add(Add{}, {B::vertex(bn2), B::vertex(bn3)}, "add2");

  const int cat = b.add(Concat{}, {B::vertex(relu1), B::vertex(add2)}, "concat");
  const int bn4 = b.add(BatchNorm{32}, cat, "bn4");
  const int pool = b.add(AvgPool{2, 2}, bn4, "avgpool");
  const int flat = b.add(Flatten{}, pool, "flatten");
  const int fc1 = b.add(Linear{32 * 8 * 8, 32, true}, flat, "linear1");
  const int relu2 = b.add(Relu{}, fc1, "relu2");
  const int fc2 = b.add(Linear{32, 10, true}, relu2, "linear2");
  b.add(GraphOutput{}, fc2, "output");
  return finish(b, seed);
}

ComputationGraph residual_block_net(std::uint64_t seed, std::int64_t batch) {
  GraphBuilder b;
  using B = GraphBuilder;
  const int x = b.add_input("x", TensorShape{batch, 3, 8, 8});
  const int conv0 = b.add(conv3x3(3, 8), {B::input(x)}, "conv0");
  const int bn0 = b.add(BatchNorm{8}, conv0, "bn0");
  const int relu0 = b.add(Relu{}, bn0, "relu0");

  const int conv1 = b.add(conv3x3(8, 8), relu0, "conv1");
  const int bn1 = b.add(BatchNorm{8}, conv1, "bn1");
  const int relu1 = b.add(Relu{}, bn1, "relu1");
  const int conv2 = b.add(conv3x3(8, 8), relu1, "conv2");
  const int bn2 = b.add(BatchNorm{8}, conv2, "bn2");

  const int proj = b.add(Conv2d{1, 1, 0, 8, 8, false}, relu0, "shortcut");
  const int bns = b.add(BatchNorm{8}, proj, "bn_shortcut");

  const int sum = b.add(Add{}, {B::vertex(bn2), B::vertex(bns)}, "add");
  const int relu = b.add(Relu{}, sum, "relu_out");
  const int pool = b.add(AvgPool{2, 2}, relu, "avgpool");
  const int flat = b.add(Flatten{}, pool, "flatten");
  const int fc = b.add(Linear{8 * 4 * 4, 4, true}, flat, "linear");
  b.add(GraphOutput{}, fc, "output");
  return finish(b, seed);
}

ComputationGraph stacked_unets_mini(std::uint64_t seed, std::int64_t batch) {
  GraphBuilder b;
  using B = GraphBuilder;
  const int xa = b.add_input("xa", TensorShape{batch, 3, 8, 8});
  const int xb = b.add_input("xb", TensorShape{batch, 3, 8, 8});

  auto conv_bn_relu = [&](int from, int cin, int cout, const std::string &tag) {
    const int c = b.add(conv3x3(cin, cout), from, "conv_" + tag);
    const int n = b.add(BatchNorm{cout}, c, "bn_" + tag);
    return b.add(Relu{}, n, "relu_" + tag);
  };

  // first block
  const int c1a = b.add(conv3x3(3, 8), {B::input(xa)}, "conv_1a");
  const int n1a = b.add(BatchNorm{8}, c1a, "bn_1a");
  const int e1 = b.add(Relu{}, n1a, "relu_1a");
  const int m1 = conv_bn_relu(e1, 8, 8, "1b");
  const int cat1 = b.add(Concat{}, {B::vertex(e1), B::vertex(m1)}, "concat_1");
  const int n1c = b.add(BatchNorm{16}, cat1, "bn_1c");
  const int c1c = b.add(conv3x3(16, 8), n1c, "conv_1c");
  const int o1 = b.add(Relu{}, c1c, "relu_1c");

  // second block, fed by the first block and the second input
  const int c2in = b.add(conv3x3(3, 8), {B::input(xb)}, "conv_2in");
  const int r2in = b.add(Relu{}, c2in, "relu_2in");
  const int cat2 = b.add(Concat{}, {B::vertex(o1), B::vertex(r2in)}, "concat_2");
  const int e2 = conv_bn_relu(cat2, 16, 8, "2a");
  const int m2 = conv_bn_relu(e2, 8, 8, "2b");
  const int cat3 = b.add(Concat{}, {B::vertex(e2), B::vertex(m2)}, "concat_3");
  const int n2d = b.add(BatchNorm{16}, cat3, "bn_2d");
  const int o2 = conv_bn_relu(n2d, 16, 8, "2c");

  const int pool = b.add(AvgPool{2, 2}, o2, "avgpool");
  const int flat = b.add(Flatten{}, pool, "flatten");
  const int fc = b.add(Linear{8 * 4 * 4, 4, true}, flat, "linear");
  b.add(GraphOutput{}, fc, "output");
  return finish(b, seed);
}

ComputationGraph chain_net(std::size_t vertices, int width, std::uint64_t seed) {
  GraphBuilder b;
  const int x = b.add_input("x", TensorShape{1, width});
  int last = b.add(Linear{width, width, true}, {GraphBuilder::input(x)});
  for (std::size_t i = 2; i < vertices; ++i) {
    if (i % 2 == 0)
      last = b.add(Relu{}, last);
    else
      last = b.add(Linear{width, width, true}, last);
  }
  b.add(GraphOutput{}, last);
  return finish(b, seed);
}

} // namespace zigprune
