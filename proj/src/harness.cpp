#include "zigprune/harness.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <mutex>
#include <numeric>
#include <sstream>

#include "zigprune/compression.hpp"
#include "zigprune/error.hpp"
#include "zigprune/graph_io.hpp"
#include "zigprune/metrics.hpp"

#if defined(__GLIBC__)
#include <malloc.h>
#endif

namespace zigprune {

std::string_view to_string(DatasetKind k) {
  switch (k) {
  case DatasetKind::SyntheticClassification: return "synthetic-classification";
  case DatasetKind::ImageCsv: return "image-csv";
  case DatasetKind::SyntheticRegression: return "synthetic-regression";
  }
  return "?";
}

namespace {

// Activation buffers of a few MB are freed and reallocated every batch. With
// glibc's defaults each one comes back as a fresh mapping and page-faults on
// first touch, which costs as much as the arithmetic.
void keep_freed_buffers() {
#if defined(__GLIBC__)
  static std::once_flag once;
  std::call_once(once, [] {
    mallopt(M_MMAP_THRESHOLD, 256 << 20);
    mallopt(M_TRIM_THRESHOLD, 512 << 20);
  });
#endif
}

DatasetKind dataset_kind_from_string(const std::string &s) {
  for (auto k : {DatasetKind::SyntheticClassification, DatasetKind::ImageCsv,
                 DatasetKind::SyntheticRegression})
    if (to_string(k) == s) return k;
  throw Error(ErrorCode::InvalidConfig, "unknown dataset kind '" + s + "'");
}

template <class T> void read_key(const nlohmann::json &j, const char *key, T &field) {
  if (j.contains(key)) field = j.at(key).get<T>();
}

void write_text(const std::string &text, const std::filesystem::path &path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::Io, "cannot write " + path.string());
  out << text;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

double median(std::vector<double> v) {
  if (v.empty()) return 0.0;
  std::sort(v.begin(), v.end());
  const std::size_t m = v.size() / 2;
  return v.size() % 2 ? v[m] : 0.5 * (v[m - 1] + v[m]);
}

bool carries_parameters(const nlohmann::json &doc) {
  for (const auto &v : doc.value("vertices", nlohmann::json::array()))
    if (v.contains("params")) return true;
  return false;
}

} // namespace

ExperimentConfig experiment_config_from_json(const nlohmann::json &j) {
  if (!j.is_object()) throw Error(ErrorCode::InvalidConfig, "experiment config must be an object");
  ExperimentConfig c;
  try {
    read_key(j, "graph", c.graph);
    if (j.contains("dataset")) {
      const auto &d = j.at("dataset");
      if (d.contains("kind")) c.dataset.kind = dataset_kind_from_string(d.at("kind").get<std::string>());
      read_key(d, "train", c.dataset.blobs.train);
      read_key(d, "test", c.dataset.blobs.test);
      read_key(d, "classes", c.dataset.blobs.classes);
      read_key(d, "channels", c.dataset.blobs.channels);
      read_key(d, "height", c.dataset.blobs.height);
      read_key(d, "width", c.dataset.blobs.width);
      read_key(d, "separation", c.dataset.blobs.separation);
      read_key(d, "noise", c.dataset.blobs.noise);
      if (d.contains("directory")) c.dataset.directory = d.at("directory").get<std::string>();
      auto &r = c.dataset.regression;
      read_key(d, "samples", r.samples);
      read_key(d, "groups", r.groups);
      read_key(d, "group_size", r.group_size);
      read_key(d, "support_size", r.support_size);
      read_key(d, "sigma", r.sigma);
      read_key(d, "support", r.support);
    }
    if (j.contains("optimizer")) {
      const auto &o = j.at("optimizer");
      c.optimizer = optimizer_config_from_json(o);
      if (o.contains("K_fraction")) c.k_fraction = o.at("K_fraction").get<double>();
    }
    read_key(j, "epochs", c.epochs);
    read_key(j, "period_epochs", c.period_epochs);
    read_key(j, "batch_size", c.batch_size);
    read_key(j, "seed", c.seed);
    if (j.contains("output_dir")) c.output_dir = j.at("output_dir").get<std::string>();
    read_key(j, "dense_baseline", c.dense_baseline);
    read_key(j, "equivalence_trials", c.equivalence_trials);
    read_key(j, "equivalence_tolerance", c.equivalence_tolerance);
    if (j.contains("ablation")) {
      read_key(j.at("ablation"), "K", c.ablation_ks);
      read_key(j.at("ablation"), "lambda", c.ablation_lambdas);
    }
  } catch (const nlohmann::json::exception &e) {
    throw Error(ErrorCode::InvalidConfig, e.what());
  }
  if (c.epochs <= 0 || c.batch_size <= 0 || c.period_epochs <= 0)
    throw Error(ErrorCode::InvalidConfig, "epochs, period_epochs and batch_size must be positive");
  if (c.k_fraction && (*c.k_fraction < 0.0 || *c.k_fraction > 1.0))
    throw Error(ErrorCode::InvalidConfig, "K_fraction must lie in [0, 1]");
  if (c.equivalence_trials <= 0 || c.equivalence_tolerance <= 0.0)
    throw Error(ErrorCode::InvalidConfig, "equivalence gate needs trials > 0 and tolerance > 0");
  return c;
}

nlohmann::json to_json(const ExperimentConfig &c) {
  const auto &b = c.dataset.blobs;
  const auto &r = c.dataset.regression;
  nlohmann::json dataset = {{"kind", to_string(c.dataset.kind)}};
  switch (c.dataset.kind) {
  case DatasetKind::SyntheticClassification:
    dataset.update({{"train", b.train}, {"test", b.test}, {"classes", b.classes},
                    {"channels", b.channels}, {"height", b.height}, {"width", b.width},
                    {"separation", b.separation}, {"noise", b.noise}});
    break;
  case DatasetKind::ImageCsv: dataset["directory"] = c.dataset.directory.string(); break;
  case DatasetKind::SyntheticRegression:
    dataset.update({{"samples", r.samples}, {"groups", r.groups}, {"group_size", r.group_size},
                    {"support_size", r.support_size}, {"sigma", r.sigma}});
    if (!r.support.empty()) dataset["support"] = r.support;
    break;
  }
  auto opt = to_json(c.optimizer);
  if (c.k_fraction) opt["K_fraction"] = *c.k_fraction;
  return {{"graph", c.graph},
          {"dataset", dataset},
          {"optimizer", opt},
          {"epochs", c.epochs},
          {"period_epochs", c.period_epochs},
          {"batch_size", c.batch_size},
          {"seed", c.seed},
          {"output_dir", c.output_dir.string()},
          {"dense_baseline", c.dense_baseline},
          {"equivalence_trials", c.equivalence_trials},
          {"equivalence_tolerance", c.equivalence_tolerance},
          {"ablation", {{"K", c.ablation_ks}, {"lambda", c.ablation_lambdas}}}};
}

ExperimentConfig load_experiment(const std::filesystem::path &path) {
  auto cfg = experiment_config_from_json(read_json_file(path));
  // Relative graph and data paths resolve against the config file.
  const auto base = path.parent_path();
  const auto g = std::filesystem::path(cfg.graph);
  if (g.has_extension() && g.is_relative()) cfg.graph = (base / g).string();
  if (!cfg.dataset.directory.empty() && cfg.dataset.directory.is_relative())
    cfg.dataset.directory = base / cfg.dataset.directory;
  return cfg;
}

void apply_seed_override(ExperimentConfig &cfg) {
  const char *env = std::getenv("ZIGPRUNE_SEED");
  if (!env || !*env) return;
  try {
    std::size_t used = 0;
    const auto v = std::stoull(env, &used);
    if (used != std::string(env).size()) throw std::invalid_argument(env);
    cfg.seed = v;
  } catch (const std::exception &) {
    throw Error(ErrorCode::InvalidConfig, std::string("ZIGPRUNE_SEED is not an integer: ") + env);
  }
}

SeedStreams derive_seeds(std::uint64_t seed) {
  Rng master(seed);
  SeedStreams s;
  s.data = master();
  s.init = master();
  s.shuffle = master();
  s.equivalence = master();
  return s;
}

ComputationGraph load_model(const std::string &spec, std::uint64_t seed) {
  if (spec == "demo_net") return demo_net(seed);
  if (spec == "residual_block_net") return residual_block_net(seed);
  if (spec == "stacked_unets_mini") return stacked_unets_mini(seed);
  if (spec.rfind("chain_net", 0) == 0) {
    std::size_t vertices = 16;
    if (spec.size() > 9) {
      if (spec[9] != ':') throw Error(ErrorCode::InvalidConfig, "expected chain_net:<vertices>");
      vertices = std::stoul(spec.substr(10));
    }
    return chain_net(vertices, 4, seed);
  }
  const auto doc = read_json_file(spec);
  auto g = infer_shapes(build_graph(doc));
  if (!carries_parameters(doc)) {
    Rng rng(seed);
    initialize_parameters(g, rng);
  }
  return g;
}

GroupIndex group_index(const ComputationGraph &g, const PartitionResult &p,
                       const ParamLayout &layout) {
  GroupIndex out;
  out.groups.reserve(p.zigs.size());
  for (const auto &z : p.zigs) {
    out.groups.push_back(layout.indices(g, z));
    out.component.push_back(z.component_id);
  }
  return out;
}

OptimizerConfig resolve_optimizer(const ExperimentConfig &cfg, const PartitionResult &p,
                                  std::int64_t steps_per_epoch) {
  OptimizerConfig o = cfg.optimizer;
  const int groups = int(p.zigs.size());
  if (cfg.k_fraction) o.target_zero_groups = int(std::lround(*cfg.k_fraction * groups));
  // Zero schedule fields are derived from the epoch period.
  if (o.lr_period_steps == 0) o.lr_period_steps = std::int64_t(cfg.period_epochs) * steps_per_epoch;
  if (o.warmup_steps == 0) o.warmup_steps = o.lr_period_steps / 2;
  if (o.halfspace_start == 0) o.halfspace_start = o.warmup_steps;
  o.validate(p.zigs.size());
  const int cap = groups - p.prunable_component_count();
  if (o.mode == OptimizerMode::Dhspg && o.target_zero_groups > cap)
    throw Error(ErrorCode::KExceedsGroupCount,
                "K = " + std::to_string(o.target_zero_groups) + " exceeds |groups| - #components = " +
                    std::to_string(cap));
  return o;
}

double evaluate_accuracy(const ComputationGraph &g, const Dataset &d, int batch_size) {
  const std::int64_t n = d.size();
  if (n == 0) return 0.0;
  std::int64_t correct = 0;
  for (std::int64_t start = 0; start < n; start += batch_size) {
    const std::int64_t end = std::min(n, start + batch_size);
    const Tensor x = slice_batch(d.x, start, end);
    const auto out = forward(g, std::span<const Tensor>(&x, 1), Mode::Eval).outputs.at(0);
    const std::int64_t classes = out.shape.sample_size();
    for (std::int64_t i = 0; i < end - start; ++i) {
      const auto row = out.data.begin() + i * classes;
      const auto pred = std::max_element(row, row + classes) - row;
      if (pred == d.labels[std::size_t(start + i)]) ++correct;
    }
  }
  return double(correct) / double(n);
}

TrainResult train_classifier(ComputationGraph g, const PartitionResult &p,
                             const SplitDataset &data, const OptimizerConfig &opt,
                             Trainer trainer, int epochs, int batch_size,
                             std::uint64_t shuffle_seed) {
  keep_freed_buffers();
  const ParamLayout layout(g);
  auto gi = group_index(g, p, layout);
  std::vector<double> x = layout.gather(g);
  auto state = make_dhspg_state(opt, x.size(), std::move(gi.groups), std::move(gi.component));

  Rng rng(shuffle_seed);
  const std::int64_t n = data.train.size();
  std::vector<std::int64_t> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), 0);

  TrainResult result;
  for (int epoch = 0; epoch < epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    EpochRecord rec;
    rec.epoch = epoch + 1;
    rec.lr = learning_rate(opt, state.t);
    double loss_sum = 0.0;
    const auto t0 = std::chrono::steady_clock::now();
    for (std::int64_t start = 0; start < n; start += batch_size) {
      const std::vector<std::int64_t> idx(order.begin() + start,
                                          order.begin() + std::min(n, start + batch_size));
      const Dataset batch = data.train.gather(idx);
      Targets targets;
      targets.labels = batch.labels;
      const auto lg = loss_and_gradients(g, std::span<const Tensor>(&batch.x, 1), Mode::Train,
                                         LossKind::CrossEntropy, targets);
      const auto grad = layout.gather(lg.grads);
      if (trainer == Trainer::Sgd)
        warmup_step(state, x, grad);
      else
        step(state, x, grad);
      layout.scatter(g, x);
      apply_running_stat_updates(g, lg.forward.cache);
      loss_sum += lg.loss * double(idx.size());
    }
    rec.seconds = seconds_since(t0);
    rec.train_loss = loss_sum / double(n);
    rec.test_accuracy = evaluate_accuracy(g, data.test);
    rec.zero_groups = achieved_group_sparsity(state, x);
    const auto ls = lambda_stats(state);
    rec.penalized = ls.penalized;
    rec.mean_lambda = ls.mean;
    result.log.push_back(rec);
  }
  result.test_accuracy = result.log.empty() ? evaluate_accuracy(g, data.test) : result.log.back().test_accuracy;
  result.model = std::move(g);
  return result;
}

std::string train_log_csv(const std::vector<EpochRecord> &log, bool with_timing) {
  std::ostringstream os;
  os.precision(10);
  os << "epoch,lr,train_loss,test_accuracy,zero_groups,penalized,mean_lambda";
  if (with_timing) os << ",seconds";
  os << '\n';
  for (const auto &r : log) {
    os << r.epoch << ',' << r.lr << ',' << r.train_loss << ',' << r.test_accuracy << ','
       << r.zero_groups << ',' << r.penalized << ',' << r.mean_lambda;
    if (with_timing) os << ',' << r.seconds;
    os << '\n';
  }
  return os.str();
}

nlohmann::json to_json(const MetricsReport &m) {
  nlohmann::json j = {{"flops_percent", m.flops_percent},
                      {"params_percent", m.params_percent},
                      {"zero_groups", m.zero_groups},
                      {"total_groups", m.total_groups},
                      {"test_accuracy", m.test_accuracy},
                      {"objective_per_epoch", m.objective_per_epoch},
                      {"accuracy_per_epoch", m.accuracy_per_epoch},
                      {"seconds_per_epoch", m.seconds_per_epoch},
                      {"equivalence_passed", m.equivalence_passed}};
  if (m.dense_accuracy) j["dense_accuracy"] = *m.dense_accuracy;
  if (m.dense_seconds_per_epoch) j["dense_seconds_per_epoch"] = *m.dense_seconds_per_epoch;
  if (!m.extra.is_null()) j["extra"] = m.extra;
  return j;
}

namespace {

SplitDataset load_classification_data(const ExperimentConfig &cfg, const SeedStreams &seeds) {
  if (cfg.dataset.kind == DatasetKind::ImageCsv) return load_image_csv(cfg.dataset.directory);
  Rng rng(seeds.data);
  return make_blob_dataset(cfg.dataset.blobs, rng);
}

void check_sample_shape(const ComputationGraph &g, const SplitDataset &data) {
  if (g.inputs().size() != 1)
    throw Error(ErrorCode::InvalidConfig, "classification runs need a single-input graph");
  const auto want = g.inputs()[0].shape.with_batch(data.train.size());
  if (data.train.x.shape != want)
    throw Error(ErrorCode::ShapeMismatch, "dataset samples " + to_string(data.train.x.shape) +
                                              " do not fit graph input " + to_string(want));
}

/// Compression, the equivalence gate and the cost report for a trained model.
void compress_and_verify(const ComputationGraph &trained, const PartitionResult &p,
                         const ExperimentConfig &cfg, std::uint64_t equivalence_seed,
                         const std::filesystem::path &dir, MetricsReport &m) {
  const auto mask = detect_zero_groups(trained, p);
  const auto compressed = prune(trained, p, mask, build_channel_maps(trained, p, mask));
  save_graph(compressed, dir / "compressed.json");
  write_json_file(compression_report(trained, compressed, p, mask), dir / "compression.json");

  Rng rng(equivalence_seed);
  const auto eq = verify_equivalence(trained, compressed, cfg.equivalence_trials,
                                     cfg.equivalence_tolerance, rng);
  write_json_file(to_json(eq), dir / "equivalence.json");

  const auto before = count_flops_params(trained);
  const auto after = count_flops_params(compressed);
  m.flops_percent = 100.0 * double(after.flops) / double(before.flops);
  m.params_percent = 100.0 * double(after.params) / double(before.params);
  m.zero_groups = mask.zero_count();
  m.total_groups = int(p.zigs.size());
  m.equivalence_passed = eq.passed;
}

MetricsReport run_regression_pipeline(const ExperimentConfig &cfg, const SeedStreams &seeds) {
  const auto &dir = cfg.output_dir;
  const auto d = gen_synthetic_regression(cfg.dataset.regression, seeds.data);
  save_regression(d, dir / "data");

  OptimizerConfig opt = cfg.optimizer;
  const int groups = d.problem.groups;
  if (cfg.k_fraction) opt.target_zero_groups = int(std::lround(*cfg.k_fraction * groups));
  opt.validate(std::size_t(groups));
  if (opt.mode == OptimizerMode::Dhspg && opt.target_zero_groups > groups - 1)
    throw Error(ErrorCode::KExceedsGroupCount, "K must leave at least one group");

  const RegressionSchedule schedule{cfg.epochs, cfg.batch_size, cfg.period_epochs};
  const auto t0 = std::chrono::steady_clock::now();
  const auto run = train_regression(d, opt, schedule, seeds.shuffle);
  const double elapsed = seconds_since(t0);

  std::ostringstream log;
  log.precision(12);
  log << "epoch,objective\n";
  for (std::size_t e = 0; e < run.objective_per_epoch.size(); ++e)
    log << e + 1 << ',' << run.objective_per_epoch[e] << '\n';
  write_text(log.str(), dir / "train_log.csv");

  std::vector<int> support;
  for (int g = 0; g < groups; ++g)
    if (!std::binary_search(run.zero_groups.begin(), run.zero_groups.end(), g)) support.push_back(g);

  MetricsReport m;
  m.zero_groups = int(run.zero_groups.size());
  m.total_groups = groups;
  m.objective_per_epoch = run.objective_per_epoch;
  m.seconds_per_epoch = elapsed / double(cfg.epochs);
  m.extra = {{"objective", run.objective},
             {"oracle_objective", d.oracle_objective},
             {"objective_ratio", run.objective / d.oracle_objective},
             {"support", support},
             {"true_support", d.support},
             {"support_recovered", support == d.support},
             {"zero_groups", run.zero_groups}};
  return m;
}

} // namespace

MetricsReport run_pipeline(const ExperimentConfig &cfg) {
  const auto &dir = cfg.output_dir;
  std::filesystem::create_directories(dir);
  write_json_file(to_json(cfg), dir / "config.json");
  const auto seeds = derive_seeds(cfg.seed);

  MetricsReport m;
  if (cfg.dataset.kind == DatasetKind::SyntheticRegression) {
    m = run_regression_pipeline(cfg, seeds);
    write_json_file(to_json(m), dir / "metrics.json");
    return m;
  }

  const auto data = load_classification_data(cfg, seeds);
  const auto model = load_model(cfg.graph, seeds.init);
  check_sample_shape(model, data);
  const auto p = partition(model);
  write_json_file(partition_to_json(p), dir / "partition.json");

  const std::int64_t steps = (data.train.size() + cfg.batch_size - 1) / cfg.batch_size;
  const auto opt = resolve_optimizer(cfg, p, steps);

  if (cfg.dense_baseline) {
    const auto dense = train_classifier(model, p, data, opt, Trainer::Sgd, cfg.epochs,
                                        cfg.batch_size, seeds.shuffle);
    write_text(train_log_csv(dense.log, false), dir / "dense_log.csv");
    m.dense_accuracy = dense.test_accuracy;
    std::vector<double> secs;
    for (const auto &r : dense.log) secs.push_back(r.seconds);
    m.dense_seconds_per_epoch = median(secs);
  }

  const auto trained =
      train_classifier(model, p, data, opt, Trainer::Dhspg, cfg.epochs, cfg.batch_size, seeds.shuffle);
  save_graph(trained.model, dir / "model.json");
  write_text(train_log_csv(trained.log, false), dir / "train_log.csv");
  std::vector<double> secs;
  for (const auto &r : trained.log) {
    secs.push_back(r.seconds);
    m.objective_per_epoch.push_back(r.train_loss);
    m.accuracy_per_epoch.push_back(r.test_accuracy);
  }
  m.seconds_per_epoch = median(secs);
  m.test_accuracy = trained.test_accuracy;

  compress_and_verify(trained.model, p, cfg, seeds.equivalence, dir, m);
  m.extra = {{"K", opt.target_zero_groups}, {"graph", cfg.graph}};
  write_json_file(to_json(m), dir / "metrics.json");
  return m;
}

MetricsReport compress_run(const std::filesystem::path &run_dir) {
  auto cfg = experiment_config_from_json(read_json_file(run_dir / "config.json"));
  cfg.output_dir = run_dir;
  if (cfg.dataset.kind == DatasetKind::SyntheticRegression)
    throw Error(ErrorCode::InvalidConfig, "regression runs have no graph to compress");
  const auto trained = infer_shapes(load_graph(run_dir / "model.json"));
  const auto p = partition(trained);
  MetricsReport m;
  compress_and_verify(trained, p, cfg, derive_seeds(cfg.seed).equivalence, run_dir, m);
  return m;
}

nlohmann::json eval_run(const std::filesystem::path &run_dir) {
  const auto cfg = experiment_config_from_json(read_json_file(run_dir / "config.json"));
  if (cfg.dataset.kind == DatasetKind::SyntheticRegression)
    return read_json_file(run_dir / "metrics.json").value("extra", nlohmann::json::object());
  const auto data = load_classification_data(cfg, derive_seeds(cfg.seed));
  nlohmann::json out;
  for (const char *name : {"model", "compressed"}) {
    const auto path = run_dir / (std::string(name) + ".json");
    if (!std::filesystem::exists(path)) continue;
    const auto g = infer_shapes(load_graph(path));
    const auto cost = count_flops_params(g);
    out[name] = {{"test_accuracy", evaluate_accuracy(g, data.test)},
                 {"flops", cost.flops},
                 {"params", cost.params}};
  }
  return out;
}

BenchRow run_runtime_bench(const std::string &graph, const SplitDataset &data,
                           OptimizerConfig opt, int epochs, int batch_size, std::uint64_t seed) {
  const auto model = load_model(graph, seed);
  const auto p = partition(model);
  opt.warmup_steps = 0;
  opt.halfspace_start = 0;
  opt.validate(p.zigs.size());

  auto per_epoch = [&](Trainer t) {
    const auto r = train_classifier(model, p, data, opt, t, epochs, batch_size, seed);
    std::vector<double> secs;
    for (const auto &rec : r.log) secs.push_back(rec.seconds);
    return median(secs);
  };
  BenchRow row;
  row.graph = graph;
  row.sgd_seconds = per_epoch(Trainer::Sgd);
  row.dhspg_seconds = per_epoch(Trainer::Dhspg);
  return row;
}

} // namespace zigprune
