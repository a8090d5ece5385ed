#ifndef ZIGPRUNE_HARNESS_HPP
#define ZIGPRUNE_HARNESS_HPP

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "zigprune/autograd.hpp"
#include "zigprune/builders.hpp"
#include "zigprune/data.hpp"
#include "zigprune/dhspg.hpp"
#include "zigprune/partition.hpp"
#include "zigprune/regression.hpp"

namespace zigprune {

enum class DatasetKind { SyntheticClassification, ImageCsv, SyntheticRegression };

std::string_view to_string(DatasetKind k);

struct DatasetSpec {
  DatasetKind kind = DatasetKind::SyntheticClassification;
  BlobSpec blobs;
  std::filesystem::path directory; ///< image-csv only
  SyntheticGroupSparseProblem regression;
};

/// One experiment. JSON layout:
///
///   {"graph": "demo_net" | "path/to/graph.json",
///    "dataset": {"kind": "synthetic-classification", "train": 8000, ...},
///    "optimizer": {"lr": 0.1, "K": 32, ...} or {"K_fraction": 0.5, ...},
///    "epochs": 30, "period_epochs": 10, "batch_size": 64, "seed": 0,
///    "output_dir": "runs/demo", "dense_baseline": true}
struct ExperimentConfig {
  std::string graph = "demo_net";
  DatasetSpec dataset;
  OptimizerConfig optimizer;
  /// K as a fraction of the prunable groups; overrides optimizer.K when set.
  std::optional<double> k_fraction;
  int epochs = 30;
  int period_epochs = 10; ///< lr decays every period; T_w = T_h = half a period
  int batch_size = 64;
  std::uint64_t seed = 0;
  std::filesystem::path output_dir = "run";
  bool dense_baseline = false;
  int equivalence_trials = 5;
  double equivalence_tolerance = 1e-9;
  /// Sweeps for `zigprune ablate` ("ablation": {"K": [...], "lambda": [...]}).
  std::vector<int> ablation_ks{2, 4, 6};
  std::vector<double> ablation_lambdas{0.0, 1e-3, 1e-2, 1e-1, 1.0, 10.0};
};

ExperimentConfig experiment_config_from_json(const nlohmann::json &j);
nlohmann::json to_json(const ExperimentConfig &c);
ExperimentConfig load_experiment(const std::filesystem::path &path);

/// Replaces cfg.seed with $ZIGPRUNE_SEED when it is set. Throws InvalidConfig
/// on a malformed value.
void apply_seed_override(ExperimentConfig &cfg);

/// Independent seeds drawn, in this order, from one generator seeded with
/// the experiment seed.
struct SeedStreams {
  std::uint64_t data = 0;
  std::uint64_t init = 0;
  std::uint64_t shuffle = 0;
  std::uint64_t equivalence = 0;
};
SeedStreams derive_seeds(std::uint64_t seed);

/// Builtin builder name (demo_net, residual_block_net, stacked_unets_mini,
/// chain_net[:N]) or a graph JSON path. Builtins, and files that carry no
/// "params" entries, are initialized from `seed`.
ComputationGraph load_model(const std::string &spec, std::uint64_t seed);

/// Flat-parameter index lists of every ZIG, plus the owning component.
struct GroupIndex {
  std::vector<std::vector<std::size_t>> groups;
  std::vector<int> component;
};
GroupIndex group_index(const ComputationGraph &g, const PartitionResult &p,
                       const ParamLayout &layout);

/// Resolves K (from k_fraction when set) and the step schedule for a run of
/// `steps_per_epoch` iterations, then validates it against the partition:
/// K must not exceed |groups| - #prunable components. Throws InvalidConfig or
/// KExceedsGroupCount before any training happens.
OptimizerConfig resolve_optimizer(const ExperimentConfig &cfg, const PartitionResult &p,
                                  std::int64_t steps_per_epoch);

enum class Trainer { Dhspg, Sgd };

struct EpochRecord {
  int epoch = 0;
  double lr = 0.0;
  double train_loss = 0.0;
  double test_accuracy = 0.0;
  int zero_groups = 0;
  int penalized = 0;
  double mean_lambda = 0.0;
  double seconds = 0.0;
};

struct TrainResult {
  ComputationGraph model;
  std::vector<EpochRecord> log;
  double test_accuracy = 0.0;
};

/// Mini-batch training of a single-input classifier with cross-entropy.
/// Sgd runs momentum SGD on every variable (the dense baseline); Dhspg steps
/// the optimizer over the ZIGs of `p`.
TrainResult train_classifier(ComputationGraph g, const PartitionResult &p,
                             const SplitDataset &data, const OptimizerConfig &opt,
                             Trainer trainer, int epochs, int batch_size,
                             std::uint64_t shuffle_seed);

/// Eval-mode top-1 accuracy.
double evaluate_accuracy(const ComputationGraph &g, const Dataset &d, int batch_size = 256);

std::string train_log_csv(const std::vector<EpochRecord> &log, bool with_timing = true);

struct MetricsReport {
  double flops_percent = 100.0;
  double params_percent = 100.0;
  int zero_groups = 0;
  int total_groups = 0;
  double test_accuracy = 0.0;
  std::optional<double> dense_accuracy;
  std::vector<double> objective_per_epoch; ///< loss (classification) or objective (regression)
  std::vector<double> accuracy_per_epoch;
  double seconds_per_epoch = 0.0;
  std::optional<double> dense_seconds_per_epoch;
  bool equivalence_passed = true;
  nlohmann::json extra; ///< dataset-specific fields
};

nlohmann::json to_json(const MetricsReport &m);

/// Partition, train, compress and verify, writing into cfg.output_dir:
/// config.json, partition.json, model.json (trained), train_log.csv,
/// compressed.json, compression.json, equivalence.json, metrics.json.
/// Regression datasets skip the graph stages and write the regression
/// artifacts instead.
MetricsReport run_pipeline(const ExperimentConfig &cfg);

/// Re-runs compression and the equivalence gate on a finished run directory.
MetricsReport compress_run(const std::filesystem::path &run_dir);

/// Test accuracy of the trained and compressed models of a run directory.
nlohmann::json eval_run(const std::filesystem::path &run_dir);

struct BenchRow {
  std::string graph;
  double dhspg_seconds = 0.0; ///< per epoch
  double sgd_seconds = 0.0;
  double ratio() const { return sgd_seconds > 0.0 ? dhspg_seconds / sgd_seconds : 0.0; }
};

/// Identical data, batch size and epoch count for both optimizers; the
/// DHSPG schedule enters its penalized phase from the first step.
BenchRow run_runtime_bench(const std::string &graph, const SplitDataset &data,
                           OptimizerConfig opt, int epochs, int batch_size, std::uint64_t seed);

} // namespace zigprune

#endif
