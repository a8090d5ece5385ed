#ifndef ZIGPRUNE_AUTOGRAD_HPP
#define ZIGPRUNE_AUTOGRAD_HPP

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "zigprune/graph.hpp"
#include "zigprune/partition.hpp"

namespace zigprune {

/// Dense row-major double tensor.
struct Tensor {
  TensorShape shape;
  std::vector<double> data;

  Tensor() = default;
  explicit Tensor(TensorShape s)
      : shape(std::move(s)), data(static_cast<std::size_t>(shape.numel()), 0.0) {}
  Tensor(TensorShape s, std::vector<double> d);

  std::size_t size() const { return data.size(); }
  friend bool operator==(const Tensor &, const Tensor &) = default;
};

/// Rows [begin, end) of the batch dimension.
Tensor slice_batch(const Tensor &t, std::int64_t begin, std::int64_t end);

enum class Mode { Train, Eval };

/// Everything backward() needs from a forward pass.
struct ForwardCache {
  Mode mode = Mode::Eval;
  std::vector<Tensor> inputs;
  std::vector<Tensor> values; ///< per vertex position
  /// BatchNorm: per-channel batch mean / biased variance (train) and the
  /// inverse standard deviation that was applied.
  std::vector<std::vector<double>> bn_mean, bn_var, bn_inv_std;
  /// MaxPool: flat input index chosen for each output element.
  std::vector<std::vector<std::int64_t>> argmax;
};

struct ForwardResult {
  std::vector<Tensor> outputs; ///< one per GraphOutput vertex, topological order
  ForwardCache cache;
};

/// Evaluates the graph. BatchNorm uses batch statistics in Train mode and
/// running statistics in Eval mode; the graph is never mutated (see
/// apply_running_stat_updates). Throws ShapeMismatch.
ForwardResult forward(const ComputationGraph &g, std::span<const Tensor> inputs, Mode mode);

/// Running-statistic update (momentum from each BatchNorm, unbiased variance)
/// for a Train-mode forward pass.
void apply_running_stat_updates(ComputationGraph &g, const ForwardCache &cache);

/// Parameter gradients mirroring each vertex's ParameterSet layout (running
/// statistics stay empty).
struct GradientStore {
  std::vector<std::optional<ParameterSet>> per_vertex;
};

/// Reverse pass from gradients w.r.t. each graph output.
GradientStore backward(const ComputationGraph &g, const ForwardCache &cache,
                       std::span<const Tensor> output_grads);

enum class LossKind { CrossEntropy, MeanSquaredError };

struct Targets {
  std::vector<int> labels; ///< cross-entropy
  Tensor values;           ///< mean-squared error
};

struct LossValue {
  double value = 0.0;
  Tensor grad; ///< d loss / d output
};

/// Batch-averaged losses: softmax cross-entropy over the feature axis, or
/// 0.5 * mean over samples of the squared error summed over features.
LossValue compute_loss(LossKind kind, const Tensor &output, const Targets &targets);

struct LossAndGradients {
  double loss = 0.0;
  GradientStore grads;
  ForwardResult forward;
};

/// forward -> loss on the first graph output -> backward.
LossAndGradients loss_and_gradients(const ComputationGraph &g, std::span<const Tensor> inputs,
                                    Mode mode, LossKind kind, const Targets &targets);

/// Flat view over every trainable scalar of a graph: per vertex position,
/// weight (row-major), bias, gamma, beta.
class ParamLayout {
public:
  struct Block {
    std::size_t vertex_pos = 0;
    TensorRole role = TensorRole::FilterRow;
    std::size_t offset = 0;
    std::size_t size = 0;
    std::size_t row_length = 1; ///< weight columns for FilterRow, else 1
  };

  explicit ParamLayout(const ComputationGraph &g);

  std::size_t total() const { return total_; }
  const std::vector<Block> &blocks() const { return blocks_; }

  std::vector<double> gather(const ComputationGraph &g) const;
  std::vector<double> gather(const GradientStore &grads) const;
  void scatter(ComputationGraph &g, std::span<const double> flat) const;

  /// Flat indices of the trainable scalars covered by a slice (empty for
  /// running statistics).
  std::vector<std::size_t> indices(const ComputationGraph &g, const ParamSlice &s) const;
  /// Flat indices of every trainable scalar in a group, in slice order.
  std::vector<std::size_t> indices(const ComputationGraph &g, const ZeroInvariantGroup &z) const;

private:
  const Block *find(std::size_t pos, TensorRole role) const;

  std::vector<Block> blocks_;
  std::vector<std::vector<int>> block_of_; // [pos][role] -> block index or -1
  std::size_t total_ = 0;
};

} // namespace zigprune

#endif
