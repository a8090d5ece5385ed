#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "oracles.hpp"
#include "zigprune/autograd.hpp"
#include "zigprune/builders.hpp"
#include "zigprune/graph_io.hpp"

using namespace zigprune;

namespace {

std::vector<Tensor> random_inputs(const ComputationGraph &g, std::int64_t n, Rng &rng) {
  std::vector<Tensor> in;
  for (const auto &gi : g.inputs()) in.push_back(oracle::random_tensor(gi.shape.with_batch(n), rng));
  return in;
}

std::vector<ComputationGraph> builder_graphs() {
  return {demo_net(), residual_block_net(), stacked_unets_mini()};
}

} // namespace

TEST(Forward, EvalMatchesReferenceInterpreter) {
  Rng rng(11);
  for (auto g : builder_graphs()) {
    randomize_parameters(g, rng);
    const auto in = random_inputs(g, 3, rng);
    const auto got = forward(g, in, Mode::Eval).outputs;
    const auto want = oracle::reference_eval(g, in);
    ASSERT_EQ(got.size(), want.size());
    for (std::size_t k = 0; k < got.size(); ++k) {
      ASSERT_EQ(got[k].shape, want[k].shape);
      for (std::size_t i = 0; i < got[k].size(); ++i) EXPECT_NEAR(got[k].data[i], want[k].data[i], 1e-10);
    }
  }
}

TEST(Forward, TrainModeBatchNormNormalizesEachChannel) {
  GraphBuilder b;
  const int x = b.add_input("x", TensorShape{4, 2, 3, 3});
  const int bn = b.add(BatchNorm{2}, {GraphBuilder::input(x)});
  b.add(GraphOutput{}, bn);
  auto g = b.build();
  Rng rng(2);
  initialize_parameters(g, rng); // gamma 1, beta 0
  const auto in = random_inputs(g, 4, rng);
  const auto out = forward(g, in, Mode::Train).outputs[0];
  for (int c = 0; c < 2; ++c) {
    double mean = 0.0, sq = 0.0;
    for (int n = 0; n < 4; ++n)
      for (int s = 0; s < 9; ++s) {
        const double v = out.data[std::size_t((n * 2 + c) * 9 + s)];
        mean += v;
        sq += v * v;
      }
    EXPECT_NEAR(mean / 36.0, 0.0, 1e-12);
    EXPECT_NEAR(sq / 36.0, 1.0, 1e-3); // eps = 1e-5 shrinks the variance slightly
  }
}

TEST(Forward, RunningStatisticsUseMomentumAndUnbiasedVariance) {
  GraphBuilder b;
  const int x = b.add_input("x", TensorShape{2, 1});
  const int bn = b.add(BatchNorm{1, 1e-5, 0.1}, {GraphBuilder::input(x)});
  b.add(GraphOutput{}, bn);
  auto g = b.build();
  Rng rng(0);
  initialize_parameters(g, rng);
  const Tensor in(TensorShape{2, 1}, {1.0, 3.0});
  const auto fr = forward(g, std::span<const Tensor>(&in, 1), Mode::Train);
  apply_running_stat_updates(g, fr.cache);
  const auto &p = *g.by_id(bn).params;
  EXPECT_NEAR(p.running_mean[0], 0.9 * 0.0 + 0.1 * 2.0, 1e-15);
  EXPECT_NEAR(p.running_var[0], 0.9 * 1.0 + 0.1 * 2.0, 1e-15); // unbiased var of {1,3} is 2
}

TEST(Forward, UnknownElementwiseOps) {
  const auto doc = json::parse(R"({
    "inputs": [{"shape": [1, 3], "consumers": [1]}],
    "vertices": [{"id": 1, "op": "tanh"}, {"id": 2, "op": "output"}],
    "edges": [[1, 2]]})");
  const auto g = infer_shapes(build_graph(doc));
  const Tensor in(TensorShape{1, 3}, {-1.0, 0.0, 2.0});
  const auto out = forward(g, std::span<const Tensor>(&in, 1), Mode::Eval).outputs[0];
  for (int i = 0; i < 3; ++i) EXPECT_DOUBLE_EQ(out.data[std::size_t(i)], std::tanh(in.data[std::size_t(i)]));

  auto bad = doc;
  bad["vertices"][0]["op"] = "softplus";
  const auto gb = infer_shapes(build_graph(bad));
  EXPECT_THROW(forward(gb, std::span<const Tensor>(&in, 1), Mode::Eval), Error);
}

TEST(Loss, CrossEntropyAndMseByHand) {
  const Tensor z(TensorShape{2, 3}, {1.0, 2.0, 3.0, 0.0, 0.0, 0.0});
  Targets t;
  t.labels = {2, 0};
  const auto ce = compute_loss(LossKind::CrossEntropy, z, t);
  const double l0 = -std::log(std::exp(3.0) / (std::exp(1.0) + std::exp(2.0) + std::exp(3.0)));
  const double l1 = std::log(3.0);
  EXPECT_NEAR(ce.value, 0.5 * (l0 + l1), 1e-14);
  EXPECT_NEAR(ce.grad.data[3], 0.5 * (1.0 / 3.0 - 1.0), 1e-14);

  t.values = Tensor(TensorShape{2, 3}, {0.0, 0.0, 0.0, 1.0, 1.0, 1.0});
  const auto mse = compute_loss(LossKind::MeanSquaredError, z, t);
  EXPECT_NEAR(mse.value, 0.5 * (14.0 + 3.0) / 2.0, 1e-14);
  EXPECT_NEAR(mse.grad.data[2], 3.0 / 2.0, 1e-14);
}

// Analytic gradients against central differences of the library's own
// forward pass, on random coordinates of every builder graph.
class GradientCheck : public ::testing::TestWithParam<LossKind> {};

TEST_P(GradientCheck, FiftyRandomCoordinatesPerGraph) {
  const LossKind kind = GetParam();
  Rng rng(kind == LossKind::CrossEntropy ? 5 : 6);
  for (auto g : builder_graphs()) {
    randomize_parameters(g, rng);
    const auto in = random_inputs(g, 3, rng);
    Targets targets;
    const auto out_shape = forward(g, in, Mode::Train).outputs[0].shape;
    targets.labels = {0, 1, 2};
    for (auto &l : targets.labels) l %= int(out_shape.dims[1]);
    targets.values = oracle::random_tensor(out_shape, rng);

    const auto lg = loss_and_gradients(g, in, Mode::Train, kind, targets);
    const ParamLayout layout(g);
    const auto analytic = layout.gather(lg.grads);
    auto x = layout.gather(g);
    std::uniform_int_distribution<std::size_t> pick(0, x.size() - 1);
    double worst = 0.0;
    for (int c = 0; c < 50; ++c) {
      const std::size_t i = pick(rng);
      const double x0 = x[i];
      auto f = [&](double v) {
        x[i] = v;
        layout.scatter(g, x);
        const auto out = forward(g, in, Mode::Train).outputs[0];
        return compute_loss(kind, out, targets).value;
      };
      const double numeric = oracle::central_difference(f, x0);
      x[i] = x0;
      layout.scatter(g, x);
      worst = std::max(worst, oracle::relative_error(analytic[i], numeric));
    }
    EXPECT_LT(worst, 1e-5);
  }
}

INSTANTIATE_TEST_SUITE_P(Losses, GradientCheck,
                         ::testing::Values(LossKind::CrossEntropy, LossKind::MeanSquaredError));

TEST(ParamLayout, GatherScatterRoundTrip) {
  auto g = stacked_unets_mini(4);
  const ParamLayout layout(g);
  auto x = layout.gather(g);
  std::int64_t expected = 0;
  for (const auto &v : g.vertices())
    if (v.params) expected += v.params->trainable_size();
  EXPECT_EQ(std::int64_t(layout.total()), expected);
  for (auto &e : x) e += 1.0;
  layout.scatter(g, x);
  EXPECT_EQ(layout.gather(g), x);
}

TEST(ParamLayout, GroupIndicesCoverTrainableSlices) {
  const auto g = demo_net();
  const auto p = partition(g);
  const ParamLayout layout(g);
  // conv1 group: 27 weights + bias + gamma/beta of bn1 + gamma/beta of bn4.
  EXPECT_EQ(layout.indices(g, p.zigs[0]).size(), 27u + 1 + 2 + 2);
  // conv2/conv3 group: 2 * (27 + 1) + bn2, bn3, bn4 gamma/beta.
  EXPECT_EQ(layout.indices(g, p.zigs[16]).size(), 2u * 28 + 6);
  EXPECT_EQ(layout.indices(g, p.zigs[32]).size(), 2048u + 1);
}
