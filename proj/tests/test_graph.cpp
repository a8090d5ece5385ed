#include <gtest/gtest.h>

#include <filesystem>

#include "zigprune/builders.hpp"
#include "zigprune/error.hpp"
#include "zigprune/graph.hpp"
#include "zigprune/graph_io.hpp"
#include "zigprune/metrics.hpp"

using namespace zigprune;

namespace {

json small_doc() {
  return json::parse(R"({
    "format": "zigprune-graph", "version": 1,
    "inputs": [{"name": "x", "shape": [2, 3, 8, 8], "consumers": [1]}],
    "vertices": [
      {"id": 1, "op": "conv2d", "kernel": 3, "pad": 1, "in_channels": 3, "out_channels": 4},
      {"id": 2, "op": "batchnorm", "channels": 4},
      {"id": 3, "op": "relu"},
      {"id": 4, "op": "maxpool"},
      {"id": 5, "op": "flatten"},
      {"id": 6, "op": "linear", "in_features": 64, "out_features": 5},
      {"id": 7, "op": "output"}
    ],
    "edges": [[1, 2], [2, 3], [3, 4], [4, 5], [5, 6], [6, 7]]
  })");
}

ErrorCode code_of(const std::function<void()> &f) {
  try {
    f();
  } catch (const Error &e) {
    return e.code();
  }
  ADD_FAILURE() << "no error raised";
  return ErrorCode::Io;
}

} // namespace

TEST(GraphIo, ParsesAndInfersShapes) {
  const auto g = infer_shapes(build_graph(small_doc()));
  ASSERT_EQ(g.size(), 7u);
  EXPECT_EQ(*g.by_id(1).out_shape, (TensorShape{2, 4, 8, 8}));
  EXPECT_EQ(*g.by_id(4).out_shape, (TensorShape{2, 4, 4, 4}));
  EXPECT_EQ(*g.by_id(5).out_shape, (TensorShape{2, 64}));
  EXPECT_EQ(*g.by_id(7).out_shape, (TensorShape{2, 5}));
  EXPECT_EQ(g.by_id(2).category(), Category::Accessory);
  EXPECT_EQ(g.by_id(6).category(), Category::Stem);
}

TEST(GraphIo, RoundTripPreservesGraphAndParameters) {
  for (const auto &g : {demo_net(3), residual_block_net(4), stacked_unets_mini(5)}) {
    const auto back = build_graph(graph_to_json(g));
    EXPECT_EQ(infer_shapes(back), g);
  }
  const auto dir = std::filesystem::temp_directory_path() / "zigprune_graph_io";
  std::filesystem::create_directories(dir);
  const auto g = demo_net(9);
  save_graph(g, dir / "g.json");
  EXPECT_EQ(infer_shapes(load_graph(dir / "g.json")), g);
}

TEST(GraphIo, RejectsMalformedGraphs) {
  auto dup = small_doc();
  dup["vertices"][1]["id"] = 1;
  EXPECT_EQ(code_of([&] { build_graph(dup); }), ErrorCode::DuplicateVertexId);

  auto dangling = small_doc();
  dangling["edges"].push_back({6, 42});
  EXPECT_EQ(code_of([&] { build_graph(dangling); }), ErrorCode::DanglingEdge);

  auto cycle = small_doc();
  cycle["edges"].push_back({3, 2});
  EXPECT_EQ(code_of([&] { build_graph(cycle); }), ErrorCode::CycleDetected);

  auto unknown = small_doc();
  unknown["vertices"][2]["op"] = "gelu";
  EXPECT_EQ(code_of([&] { build_graph(unknown, BuildOptions{true}); }), ErrorCode::UnknownKindString);
  const auto lenient = build_graph(unknown);
  EXPECT_EQ(lenient.by_id(3).category(), Category::Unknown);
  EXPECT_EQ(lenient.unknown_vertex_ids(), std::vector<int>{3});
}

TEST(ShapeInference, SdJointRequiresEqualShapes) {
  auto doc = json::parse(R"({
    "inputs": [{"shape": [1, 3, 8, 8], "consumers": [1, 2]}],
    "vertices": [
      {"id": 1, "op": "conv2d", "kernel": 3, "pad": 1, "in_channels": 3, "out_channels": 4},
      {"id": 2, "op": "conv2d", "kernel": 3, "pad": 1, "in_channels": 3, "out_channels": 5},
      {"id": 3, "op": "add"}, {"id": 4, "op": "output"}],
    "edges": [[1, 3], [2, 3], [3, 4]]})");
  EXPECT_EQ(code_of([&] { infer_shapes(build_graph(doc)); }), ErrorCode::ShapeMismatchAtSDJoint);
  doc["vertices"][1]["out_channels"] = 4;
  EXPECT_EQ(*infer_shapes(build_graph(doc)).by_id(3).out_shape, (TensorShape{1, 4, 8, 8}));
}

TEST(ShapeInference, ConsumerWidthMismatchIsReported) {
  auto doc = small_doc();
  doc["vertices"][5]["in_features"] = 63;
  EXPECT_EQ(code_of([&] { infer_shapes(build_graph(doc)); }), ErrorCode::ShapeMismatch);
}

TEST(ShapeInference, ConcatSumsChannels) {
  const auto g = demo_net();
  EXPECT_EQ(*g.by_id(10).out_shape, (TensorShape{1, 32, 16, 16}));
  EXPECT_EQ(*g.by_id(13).out_shape, (TensorShape{1, 2048}));
}

TEST(Metrics, DemoNetCostMatchesHandCount) {
  // conv: 2*9*3*16*256 + 16*256 each; bn: 2/elem; relu, add: 1/elem;
  // avgpool: 4 per output element; linear: 2*in*out + out.
  const std::int64_t convs = 3 * (2 * 9 * 3 * 16 * 256 + 16 * 256);
  const std::int64_t accessories = 3 * 2 * 16 * 256 + 2 * 32 * 256 + 16 * 256 + 2 * 16 * 256 + 4 * 32 * 64;
  const std::int64_t linears = (2 * 2048 * 32 + 32) + 32 + (2 * 32 * 10 + 10);
  const auto cost = count_flops_params(demo_net());
  EXPECT_EQ(cost.flops, convs + accessories + linears);
  EXPECT_EQ(cost.params, 3 * (16 * 27 + 16) + 2 * (16 + 16 + 16 + 32) + (2048 * 32 + 32) + (32 * 10 + 10));
}

TEST(Metrics, CostIsPerSample) {
  EXPECT_EQ(count_flops_params(demo_net(0, 1)), count_flops_params(demo_net(0, 7)));
}

TEST(Metrics, DotColorsComponents) {
  const auto dot = export_dot(demo_net(), {{1, 0}, {2, 0}, {4, 1}});
  EXPECT_NE(dot.find("digraph"), std::string::npos);
  EXPECT_NE(dot.find("conv1"), std::string::npos);
  EXPECT_NE(dot.find("fillcolor"), std::string::npos);
}

TEST(Builders, ChainHasRequestedSize) {
  for (std::size_t n : {3u, 10u, 101u}) EXPECT_EQ(chain_net(n).size(), n);
}
