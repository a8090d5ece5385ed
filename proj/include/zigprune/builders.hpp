#ifndef ZIGPRUNE_BUILDERS_HPP
#define ZIGPRUNE_BUILDERS_HPP

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "zigprune/graph.hpp"

namespace zigprune {

using Rng = std::mt19937_64;

/// Incremental construction of a ComputationGraph in code. Ids are assigned
/// sequentially starting at 1.
class GraphBuilder {
public:
  struct Operand {
    bool is_input = false;
    int index = 0; // graph-input index or vertex id
  };
  static Operand input(int k) { return {true, k}; }
  static Operand vertex(int id) { return {false, id}; }

  int add_input(std::string name, TensorShape shape);
  /// Adds a vertex with zero-allocated parameters. Graph-input operands must
  /// precede vertex operands.
  int add(VertexKind kind, std::vector<Operand> from, std::string name = {});
  int add(VertexKind kind, int from_id, std::string name = {}) {
    return add(std::move(kind), {vertex(from_id)}, std::move(name));
  }

  ComputationGraph build() const;

private:
  std::vector<GraphInput> inputs_;
  std::vector<Vertex> vertices_;
  std::vector<Edge> edges_;
};

/// Kaiming-uniform style initialization: stem weights and biases uniform in
/// ±1/sqrt(fan_in); BatchNorm gamma 1, beta 0, running stats (0, 1).
void initialize_parameters(ComputationGraph &g, Rng &rng);

/// Dense random parameterization for property tests: weights/biases/gamma/beta
/// and running means ~ U(-1,1), running variances ~ U(0.5,1.5).
void randomize_parameters(ComputationGraph &g, Rng &rng);

/// The Fig.-2 style demonstration network on (N,3,16,16) inputs:
/// Conv1-BN1-ReLU in one branch, Add(Conv2,Conv3) -> Add(BN2,BN3) in the other,
/// Concat -> BN4 -> AvgPool -> Flatten -> Linear1 -> ReLU -> Linear2 -> output.
ComputationGraph demo_net(std::uint64_t seed = 0, std::int64_t batch = 1);

/// Conv-BN-ReLU stem followed by one residual block whose shortcut is a 1x1
/// projection convolution, then pooling and a linear classifier.
ComputationGraph residual_block_net(std::uint64_t seed = 0, std::int64_t batch = 1);

/// Two stacked encoder/decoder blocks with channel-concatenation skips
/// (same-resolution, no upsampling) on two image inputs.
ComputationGraph stacked_unets_mini(std::uint64_t seed = 0, std::int64_t batch = 1);

/// Alternating Linear(width,width) / ReLU chain with `vertices` operator
/// vertices in total (output vertex included).
ComputationGraph chain_net(std::size_t vertices, int width = 4, std::uint64_t seed = 0);

} // namespace zigprune

#endif
