// zigprune: partition, train, compress and inspect computation graphs.

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>

#include "zigprune/compression.hpp"
#include "zigprune/error.hpp"
#include "zigprune/graph_io.hpp"
#include "zigprune/harness.hpp"
#include "zigprune/metrics.hpp"
#include "zigprune/partition.hpp"
#include "zigprune/probes.hpp"
#include "zigprune/regression.hpp"

namespace fs = std::filesystem;
using namespace zigprune;

namespace {

ComputationGraph graph_arg(const std::string &spec) { return load_model(spec, 0); }

int cmd_partition(const std::string &graph) {
  const auto p = partition(graph_arg(graph));
  std::cout << partition_to_json(p).dump(2) << '\n';
  return 0;
}

int cmd_train(const std::string &exp_path, const std::string &out) {
  auto cfg = load_experiment(exp_path);
  apply_seed_override(cfg);
  if (!out.empty()) cfg.output_dir = out;
  const auto m = run_pipeline(cfg);
  std::cout << to_json(m).dump(2) << '\n';
  if (!m.equivalence_passed) {
    std::cerr << "equivalence check failed; see " << (cfg.output_dir / "equivalence.json") << '\n';
    return 2;
  }
  return 0;
}

int cmd_compress(const fs::path &run_dir) {
  const auto m = compress_run(run_dir);
  std::cout << read_json_file(run_dir / "compression.json").dump(2) << '\n';
  if (!m.equivalence_passed) {
    std::cerr << "equivalence check failed\n";
    return 2;
  }
  return 0;
}

int cmd_viz(const std::string &graph, const std::string &partition_path) {
  const auto g = graph_arg(graph);
  std::map<int, int> colors;
  if (!partition_path.empty()) {
    const auto doc = read_json_file(partition_path);
    const auto &comps = doc.at("components");
    for (std::size_t c = 0; c < comps.size(); ++c)
      for (int id : comps[c].at("vertices")) colors[id] = int(c);
  } else {
    colors = component_coloring(partition(g));
  }
  std::cout << export_dot(g, colors);
  return 0;
}

int cmd_report(const fs::path &run_dir) {
  nlohmann::json out;
  for (const char *name : {"metrics", "compression", "equivalence"}) {
    const auto path = run_dir / (std::string(name) + ".json");
    if (fs::exists(path)) out[name] = read_json_file(path);
  }
  if (out.is_null()) throw Error(ErrorCode::Io, "no run artifacts in " + run_dir.string());
  std::cout << out.dump(2) << '\n';
  return 0;
}

int cmd_ablate(const std::string &exp_path, const std::string &csv_path) {
  auto cfg = load_experiment(exp_path);
  apply_seed_override(cfg);
  if (cfg.dataset.kind != DatasetKind::SyntheticRegression)
    throw Error(ErrorCode::InvalidConfig, "ablate runs on a synthetic-regression dataset");
  const auto seeds = derive_seeds(cfg.seed);
  const auto d = gen_synthetic_regression(cfg.dataset.regression, seeds.data);
  const RegressionSchedule schedule{cfg.epochs, cfg.batch_size, cfg.period_epochs};
  const auto rows = run_ablation_dhspg_vs_hspg(d, cfg.optimizer, schedule, cfg.ablation_ks,
                                               cfg.ablation_lambdas, seeds.shuffle);
  const auto csv = ablation_csv(rows);
  std::cout << csv;
  std::cout << "# oracle objective " << d.oracle_objective << '\n';
  if (!csv_path.empty()) std::ofstream(csv_path) << csv;
  return 0;
}

int cmd_probes(int trials, std::uint64_t seed, bool identity) {
  const auto probe = identity ? identity_probe(8, 5) : make_quadratic_probe(8, 5, seed);
  const auto results = run_lemma_probes(probe, trials, seed);
  std::cout << probes_table(results);
  for (const auto &r : results)
    if (!r.ok()) return 1;
  return 0;
}

int cmd_bench(const std::string &graph, int epochs, int samples, double k_fraction,
              std::uint64_t seed) {
  BlobSpec spec;
  spec.train = samples;
  spec.test = 0;
  Rng rng(seed);
  const auto data = make_blob_dataset(spec, rng);
  OptimizerConfig opt;
  opt.lr = 0.01;
  opt.target_zero_groups = int(k_fraction * double(partition(graph_arg(graph)).zigs.size()));
  const auto row = run_runtime_bench(graph, data, opt, epochs, 64, seed);
  std::cout << "graph,dhspg_seconds,sgd_seconds,ratio\n"
            << row.graph << ',' << row.dhspg_seconds << ',' << row.sgd_seconds << ','
            << row.ratio() << '\n';
  return 0;
}

} // namespace

int main(int argc, char **argv) {
  CLI::App app{"Zero-invariant group partition, sparse training and compression"};
  app.require_subcommand(1);

  std::string graph, exp, out, part, csv;
  fs::path run_dir;

  auto *partition_cmd = app.add_subcommand("partition", "print the ZIG partition of a graph as JSON");
  partition_cmd->add_option("graph", graph, "graph JSON or builtin name")->required();

  auto *train_cmd = app.add_subcommand("train", "run the full pipeline for an experiment");
  train_cmd->add_option("experiment", exp, "experiment JSON")->required();
  train_cmd->add_option("-o,--output", out, "override the output directory");

  auto *compress_cmd = app.add_subcommand("compress", "rebuild the compressed model of a run");
  compress_cmd->add_option("run_dir", run_dir)->required();

  auto *eval_cmd = app.add_subcommand("eval", "test accuracy of a run's models");
  eval_cmd->add_option("run_dir", run_dir)->required();

  auto *viz_cmd = app.add_subcommand("viz", "DOT rendering colored by component");
  viz_cmd->add_option("graph", graph)->required();
  viz_cmd->add_option("--partition", part, "partition JSON to color by");

  auto *report_cmd = app.add_subcommand("report", "collect a run's reports");
  report_cmd->add_option("run_dir", run_dir)->required();

  auto *ablate_cmd = app.add_subcommand("ablate", "DHSPG K sweep vs HSPG lambda sweep");
  ablate_cmd->add_option("experiment", exp)->required();
  ablate_cmd->add_option("--csv", csv, "also write the table here");

  int trials = 100;
  std::uint64_t seed = 7;
  bool identity = false;
  auto *probes_cmd = app.add_subcommand("probes", "check the descent inequalities on a quadratic");
  probes_cmd->add_option("--trials", trials);
  probes_cmd->add_option("--seed", seed);
  probes_cmd->add_flag("--identity", identity, "use A = I");

  int epochs = 3, samples = 2000;
  double k_fraction = 0.5;
  graph = "demo_net";
  auto *bench_cmd = app.add_subcommand("bench", "per-epoch time of DHSPG vs momentum SGD");
  bench_cmd->add_option("--graph", graph);
  bench_cmd->add_option("--epochs", epochs);
  bench_cmd->add_option("--samples", samples);
  bench_cmd->add_option("--k-fraction", k_fraction);
  bench_cmd->add_option("--seed", seed);

  CLI11_PARSE(app, argc, argv);

  try {
    if (*partition_cmd) return cmd_partition(graph);
    if (*train_cmd) return cmd_train(exp, out);
    if (*compress_cmd) return cmd_compress(run_dir);
    if (*eval_cmd) {
      std::cout << eval_run(run_dir).dump(2) << '\n';
      return 0;
    }
    if (*viz_cmd) return cmd_viz(graph, part);
    if (*report_cmd) return cmd_report(run_dir);
    if (*ablate_cmd) return cmd_ablate(exp, csv);
    if (*probes_cmd) return cmd_probes(trials, seed, identity);
    if (*bench_cmd) return cmd_bench(graph, epochs, samples, k_fraction, seed);
  } catch (const Error &e) {
    std::cerr << "zigprune: " << e.what() << '\n';
    return 1;
  } catch (const std::exception &e) {
    std::cerr << "zigprune: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
