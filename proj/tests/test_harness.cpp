#include <gtest/gtest.h>

#include <cstdlib>
#include <fstream>
#include <map>
#include <sstream>

#include "zigprune/builders.hpp"
#include "zigprune/error.hpp"
#include "zigprune/graph_io.hpp"
#include "zigprune/harness.hpp"

using namespace zigprune;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string &name) {
  const auto dir = fs::temp_directory_path() / ("zigprune_test_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

std::string slurp(const fs::path &p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

ExperimentConfig tiny_demo(const fs::path &out) {
  ExperimentConfig cfg;
  cfg.graph = "demo_net";
  cfg.dataset.blobs.train = 96;
  cfg.dataset.blobs.test = 32;
  cfg.epochs = 2;
  cfg.period_epochs = 2;
  cfg.batch_size = 32;
  cfg.seed = 5;
  cfg.k_fraction = 0.25;
  cfg.optimizer.lr = 0.05;
  cfg.output_dir = out;
  return cfg;
}

} // namespace

TEST(ExperimentConfig, JsonRoundTrip) {
  auto cfg = tiny_demo("x");
  cfg.dataset.kind = DatasetKind::SyntheticRegression;
  cfg.dataset.regression.support = {1, 2};
  cfg.ablation_ks = {3};
  const auto back = experiment_config_from_json(to_json(cfg));
  EXPECT_EQ(to_json(back), to_json(cfg));
  EXPECT_EQ(back.k_fraction, 0.25);
}

TEST(ExperimentConfig, RejectsBadValues) {
  EXPECT_THROW(experiment_config_from_json({{"epochs", 0}}), Error);
  EXPECT_THROW(experiment_config_from_json({{"dataset", {{"kind", "mnist"}}}}), Error);
  EXPECT_THROW(experiment_config_from_json({{"optimizer", {{"K_fraction", 1.5}}}}), Error);
  EXPECT_THROW(experiment_config_from_json({{"batch_size", "big"}}), Error);
}

TEST(ExperimentConfig, SeedOverrideFromEnvironment) {
  ExperimentConfig cfg;
  cfg.seed = 1;
  ::setenv("ZIGPRUNE_SEED", "42", 1);
  apply_seed_override(cfg);
  EXPECT_EQ(cfg.seed, 42u);
  ::setenv("ZIGPRUNE_SEED", "4x", 1);
  EXPECT_THROW(apply_seed_override(cfg), Error);
  ::unsetenv("ZIGPRUNE_SEED");
  apply_seed_override(cfg);
  EXPECT_EQ(cfg.seed, 42u);
}

TEST(SeedStreams, DeterministicAndDistinct) {
  const auto a = derive_seeds(7), b = derive_seeds(7), c = derive_seeds(8);
  EXPECT_EQ(a.data, b.data);
  EXPECT_EQ(a.equivalence, b.equivalence);
  EXPECT_NE(a.data, c.data);
  EXPECT_NE(a.data, a.init);
  EXPECT_NE(a.shuffle, a.equivalence);
}

TEST(ResolveOptimizer, KFromFractionAndCapByComponents) {
  const auto p = partition(demo_net());
  auto cfg = tiny_demo("x");
  cfg.k_fraction = 0.5;
  const auto o = resolve_optimizer(cfg, p, 10);
  EXPECT_EQ(o.target_zero_groups, 32);
  EXPECT_EQ(o.lr_period_steps, 20);
  EXPECT_EQ(o.warmup_steps, 10);
  EXPECT_EQ(o.halfspace_start, 10);

  cfg.k_fraction.reset();
  cfg.optimizer.target_zero_groups = 64 - 3; // |groups| - #prunable components
  EXPECT_NO_THROW(resolve_optimizer(cfg, p, 10));
  cfg.optimizer.target_zero_groups = 62;
  try {
    resolve_optimizer(cfg, p, 10);
    FAIL();
  } catch (const Error &e) {
    EXPECT_EQ(e.code(), ErrorCode::KExceedsGroupCount);
  }
}

TEST(Pipeline, RejectsKBeforeTraining) {
  const auto dir = scratch("reject");
  auto cfg = tiny_demo(dir);
  cfg.k_fraction = 1.0;
  EXPECT_THROW(run_pipeline(cfg), Error);
  EXPECT_FALSE(fs::exists(dir / "train_log.csv"));
}

TEST(Pipeline, WritesArtifactsAndIsDeterministic) {
  const auto a = scratch("det_a"), b = scratch("det_b");
  const auto ma = run_pipeline(tiny_demo(a));
  const auto mb = run_pipeline(tiny_demo(b));
  EXPECT_TRUE(ma.equivalence_passed);
  for (const char *f : {"config.json", "partition.json", "model.json", "train_log.csv",
                        "compressed.json", "compression.json", "equivalence.json", "metrics.json"})
    EXPECT_TRUE(fs::exists(a / f)) << f;
  for (const char *f : {"partition.json", "train_log.csv", "compressed.json", "model.json"})
    EXPECT_EQ(slurp(a / f), slurp(b / f)) << f;
  EXPECT_EQ(ma.test_accuracy, mb.test_accuracy);
  EXPECT_EQ(read_json_file(a / "equivalence.json").at("passed"), true);

  const auto again = compress_run(a);
  EXPECT_TRUE(again.equivalence_passed);
  EXPECT_EQ(again.zero_groups, ma.zero_groups);
  const auto ev = eval_run(a);
  EXPECT_EQ(ev.at("model").at("test_accuracy"), ev.at("compressed").at("test_accuracy"));
}

TEST(Pipeline, ZeroKLeavesGraphUntouched) {
  const auto dir = scratch("k0");
  auto cfg = tiny_demo(dir);
  cfg.k_fraction = 0.0;
  cfg.epochs = 1;
  const auto m = run_pipeline(cfg);
  EXPECT_EQ(m.zero_groups, 0);
  EXPECT_DOUBLE_EQ(m.flops_percent, 100.0);
  EXPECT_EQ(infer_shapes(load_graph(dir / "compressed.json")), infer_shapes(load_graph(dir / "model.json")));
}

TEST(Pipeline, RegressionRunReportsOracleComparison) {
  const auto dir = scratch("reg");
  ExperimentConfig cfg;
  cfg.dataset.kind = DatasetKind::SyntheticRegression;
  cfg.optimizer.lr = 0.01;
  cfg.optimizer.w_cos = 0.1;
  cfg.optimizer.w_mag = 0.9;
  cfg.optimizer.target_zero_groups = 6;
  cfg.epochs = 60;
  cfg.period_epochs = 20;
  cfg.batch_size = 25;
  cfg.seed = 3;
  cfg.output_dir = dir;
  const auto m = run_pipeline(cfg);
  EXPECT_EQ(m.zero_groups, 6);
  EXPECT_TRUE(m.extra.at("support_recovered").get<bool>());
  EXPECT_LE(m.extra.at("objective_ratio").get<double>(), 1.05);
  EXPECT_TRUE(fs::exists(dir / "data" / "X.bin"));
  EXPECT_EQ(m.objective_per_epoch.size(), 60u);
}

TEST(LoadModel, BuiltinsAndFiles) {
  EXPECT_EQ(load_model("demo_net", 3), demo_net(3));
  EXPECT_EQ(load_model("chain_net:9", 1).size(), 9u);
  EXPECT_THROW(load_model("chain_net9", 1), Error);

  const auto dir = scratch("load");
  save_graph(residual_block_net(2), dir / "with.json");
  EXPECT_EQ(load_model((dir / "with.json").string(), 99), residual_block_net(2));
  // A graph file without parameters gets initialized from the seed.
  save_graph(residual_block_net(2), dir / "bare.json", false);
  const auto bare = load_model((dir / "bare.json").string(), 4);
  EXPECT_NE(bare.by_id(1).params->weight.norm(), 0.0);
  EXPECT_EQ(bare, load_model((dir / "bare.json").string(), 4));
}

TEST(Data, BlobsAreBalancedAndSeeded) {
  BlobSpec spec;
  spec.train = 400;
  spec.test = 100;
  Rng r1(1), r2(1);
  const auto a = make_blob_dataset(spec, r1), b = make_blob_dataset(spec, r2);
  EXPECT_EQ(a.train.x, b.train.x);
  EXPECT_EQ(a.train.x.shape, (TensorShape{400, 3, 16, 16}));
  std::map<int, int> counts;
  for (int l : a.train.labels) ++counts[l];
  ASSERT_EQ(counts.size(), 4u);
  for (auto [label, n] : counts) EXPECT_EQ(n, 100) << label;
  EXPECT_EQ(a.num_classes, 4);
}

TEST(Data, TensorFilesRoundTrip) {
  const auto dir = scratch("tensor");
  const Tensor t(TensorShape{2, 3}, {1, -2, 3.5, 4, 5e-300, 6});
  save_tensor(t, dir / "t", {0, 1});
  std::vector<int> labels;
  EXPECT_EQ(load_tensor(dir / "t", &labels), t);
  EXPECT_EQ(labels, (std::vector<int>{0, 1}));
}

TEST(Data, ImageCsvLoader) {
  const auto dir = scratch("csv");
  std::ofstream(dir / "train.csv") << "label,p0,p1,p2,p3\n3,0,255,51,0\n1,255,255,255,255\n";
  std::ofstream(dir / "test.csv") << "label,p0,p1,p2,p3\n0,0,0,0,0\n";
  const auto d = load_image_csv(dir);
  EXPECT_EQ(d.train.x.shape, (TensorShape{2, 1, 2, 2}));
  EXPECT_EQ(d.train.labels, (std::vector<int>{3, 1}));
  EXPECT_DOUBLE_EQ(d.train.x.data[2], 0.2);
  EXPECT_EQ(d.num_classes, 4);
}

TEST(Bench, ZeroKProducesComparableTimings) {
  BlobSpec spec;
  spec.train = 128;
  spec.test = 0;
  Rng rng(0);
  const auto data = make_blob_dataset(spec, rng);
  const auto row = run_runtime_bench("demo_net", data, OptimizerConfig{}, 1, 32, 0);
  EXPECT_GT(row.sgd_seconds, 0.0);
  EXPECT_GT(row.dhspg_seconds, 0.0);
  EXPECT_EQ(row.graph, "demo_net");
}
