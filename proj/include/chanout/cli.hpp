#pragma once

#include <filesystem>
#include <fstream>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "chanout/approximator.hpp"
#include "chanout/config.hpp"
#include "chanout/csv.hpp"
#include "chanout/dataset.hpp"
#include "chanout/gradcheck.hpp"
#include "chanout/pathway.hpp"
#include "chanout/sparse.hpp"
#include "chanout/trainer.hpp"

namespace chanout {

// ---------------------------------------------------------------------------
// Run plumbing shared by the subcommands

struct PreparedData {
  Dataset train;
  Dataset test;
};

/// Generates or loads the data named by the run description and applies ZCA when asked.
/// Synthetic data uses the "data" sub-stream, the split uses "split".
inline PreparedData prepare_data(const RunSpec& spec) {
  const Rng root(spec.seed);
  PreparedData out;
  if (spec.data.source == DataSource::Csv) {
    Dataset all = load_csv_dataset(spec.data.path);
    if (spec.data.test_path.empty()) {
      std::tie(out.train, out.test) = split_dataset(all, spec.data.test_fraction, root.substream("split"));
    } else {
      out.train = std::move(all);
      out.test = load_csv_dataset(spec.data.test_path);
      if (out.test.feature_shape != out.train.feature_shape)
        throw DataError("test set feature shape " + shape_string(out.test.feature_shape) + " differs from training set " +
                        shape_string(out.train.feature_shape));
      if (out.test.label_values != out.train.label_values)
        throw DataError("test set labels differ from training set labels");
    }
  } else {
    SyntheticSpec s;
    s.kind = spec.data.source == DataSource::Blobs ? SyntheticKind::Blobs : SyntheticKind::Spirals;
    s.classes = spec.network.classes;
    s.samples_per_class = spec.data.samples_per_class;
    s.noise = spec.data.noise;
    s.turns = spec.data.turns;
    Dataset all = make_synthetic(s, root.substream("data").seed());
    std::tie(out.train, out.test) = split_dataset(all, spec.data.test_fraction, root.substream("split"));
  }
  if (out.train.classes != spec.network.classes) {
    throw ConfigError("config declares " + std::to_string(spec.network.classes) + " classes, data has " +
                      std::to_string(out.train.classes));
  }
  if (out.train.feature_shape != spec.network.input_shape) {
    throw ConfigError("config input " + shape_string(spec.network.input_shape) + " does not match data features " +
                      shape_string(out.train.feature_shape));
  }
  if (spec.augment.zca) {
    const ZcaTransform zca = fit_zca(out.train, spec.augment.zca_epsilon);
    out.train = zca.apply(out.train);
    out.test = zca.apply(out.test);
  }
  return out;
}

/// Builds the configured network with parameters drawn from the "init" sub-stream.
inline BuiltNetwork build_initialized(const RunSpec& spec) {
  BuiltNetwork b = build_network(spec.network);
  Rng init = Rng(spec.seed).substream("init");
  init_parameters(b.net, init);
  return b;
}

struct TrainOutcome {
  BuiltNetwork built;
  PreparedData data;
  std::vector<EpochMetrics> history;
};

inline TrainOutcome run_training(const RunSpec& spec, const EpochHook& hook = {}) {
  TrainOutcome t{build_initialized(spec), prepare_data(spec), {}};
  t.history = train(t.built.net, t.data.train, t.data.test, spec.optimizer, spec.augment, Rng(spec.seed), hook);
  return t;
}

inline void write_metrics(std::ostream& out, const std::vector<EpochMetrics>& history) {
  CsvWriter w(out);
  w.header({"epoch", "train_loss", "train_acc", "test_acc"});
  for (const auto& m : history) w.row({cell(m.epoch), cell(m.train_loss), cell(m.train_acc), cell(m.test_acc)});
}

inline void write_layers(std::ostream& out, const BuiltNetwork& b) {
  CsvWriter w(out);
  w.header({"index", "kind", "output_shape", "parameters"});
  for (const auto& r : b.report) {
    std::string shape;
    for (std::size_t i = 0; i < r.output_shape.size(); ++i) shape += (i ? "x" : "") + std::to_string(r.output_shape[i]);
    w.row({cell(r.index), r.kind, shape, cell(r.parameters)});
  }
}

inline void write_pathways(std::ostream& out, const PathwayMatrix& m) {
  CsvWriter w(out);
  std::vector<std::string> head{"label"};
  for (std::size_t g = 0; g < m.cols; ++g) head.push_back("g" + std::to_string(g));
  w.header(head);
  for (std::size_t r = 0; r < m.rows; ++r) {
    std::vector<std::string> row{cell(m.labels[r])};
    for (std::size_t g = 0; g < m.cols; ++g) row.push_back(cell(m.at(r, g)));
    w.row(row);
  }
}

inline void write_pca(std::ostream& out, const PcaResult& pca, std::span<const int> labels) {
  CsvWriter w(out);
  w.header({"label", "x", "y", "z"});
  for (std::size_t r = 0; r < labels.size(); ++r) {
    w.row({cell(labels[r]), cell(pca.coordinates.at(r, 0)), cell(pca.coordinates.at(r, 1)),
           cell(pca.coordinates.at(r, 2))});
  }
}

inline void write_switches(std::ostream& out, const SwitchLog& log) {
  CsvWriter w(out);
  w.header({"epoch", "probe", "group", "switched"});
  for (const auto& e : log.events) w.row({cell(e.epoch), cell(e.probe), cell(e.group), cell(e.switched ? 1 : 0)});
}

namespace detail {

inline std::filesystem::path prepare_out_dir(const std::string& dir) {
  std::filesystem::path p(dir);
  std::filesystem::create_directories(p);
  return p;
}

inline std::ofstream open_out(const std::filesystem::path& dir, const char* name) {
  std::ofstream f(dir / name, std::ios::binary);
  if (!f) throw DataError("cannot write " + (dir / name).string());
  return f;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Subcommands. Each returns the process exit status.

inline int cmd_train(const RunSpec& spec, const std::filesystem::path& dir, std::ostream& out) {
  auto t = run_training(spec);
  auto metrics = detail::open_out(dir, "metrics.csv");
  write_metrics(metrics, t.history);
  auto layers = detail::open_out(dir, "layers.csv");
  write_layers(layers, t.built);
  out << "parameters " << t.built.parameter_count << "\n";
  if (!t.history.empty()) {
    const auto& m = t.history.back();
    out << "epoch " << m.epoch << " train_loss " << format_number(m.train_loss) << " train_acc "
        << format_number(m.train_acc) << " test_acc " << format_number(m.test_acc) << "\n";
  }
  return 0;
}

inline int cmd_pathways(const RunSpec& spec, const std::filesystem::path& dir, std::ostream& out) {
  // Probes come from the test split; the tracker needs them before training starts.
  const PreparedData data = prepare_data(spec);
  std::vector<std::size_t> probe_rows;
  for (std::size_t i = 0; i < std::min(spec.switch_probes, data.test.size()); ++i) probe_rows.push_back(i);
  SwitchTracker tracker(subset(data.test, probe_rows));

  BuiltNetwork built = build_initialized(spec);
  EpochHook hook;
  if (!probe_rows.empty()) hook = tracker.hook();
  const auto history = train(built.net, data.train, data.test, spec.optimizer, spec.augment, Rng(spec.seed), hook);

  const PathwayMatrix m = record_pathways(built.net, data.test);
  const PcaResult pca = pca_project(m);
  const ClusterSeparation sep = cluster_separation(m);

  auto f_metrics = detail::open_out(dir, "metrics.csv");
  write_metrics(f_metrics, history);
  auto f_path = detail::open_out(dir, "pathways.csv");
  write_pathways(f_path, m);
  auto f_pca = detail::open_out(dir, "pca.csv");
  write_pca(f_pca, pca, m.labels);
  auto f_sw = detail::open_out(dir, "switches.csv");
  write_switches(f_sw, tracker.log());

  double top3 = 0.0;
  for (double v : pca.variance_share) top3 += v;
  auto f_sum = detail::open_out(dir, "pathway_summary.csv");
  CsvWriter w(f_sum);
  w.header({"rows", "groups", "intra", "inter", "ratio", "var1", "var2", "var3", "top3_share", "switches"});
  w.row({cell(m.rows), cell(m.cols), cell(sep.intra), cell(sep.inter), cell(sep.ratio), cell(pca.variance_share[0]),
         cell(pca.variance_share[1]), cell(pca.variance_share[2]), cell(top3), cell(tracker.log().total())});

  out << "pathways " << m.rows << "x" << m.cols << " separation ratio " << format_number(sep.ratio)
      << " top3 variance share " << format_number(top3) << "\n";
  return 0;
}

inline int cmd_gradcheck(const RunSpec& spec, const std::filesystem::path& dir, std::ostream& out,
                         std::size_t inputs = 3) {
  const BuiltNetwork built = build_initialized(spec);
  const PreparedData data = prepare_data(spec);
  GradCheckOptions opts;
  opts.eps = spec.gradcheck_eps;
  opts.samples_per_tensor = spec.gradcheck_samples;
  opts.seed = Rng(spec.seed).substream("gradcheck").seed();

  std::vector<LayerGradStats> merged;
  for (std::size_t i = 0; i < std::min(inputs, data.train.size()); ++i) {
    const auto& s = data.train.samples[i];
    const auto r = grad_check(built.net, s.features, s.label, opts);
    if (merged.empty()) merged = r.layers;
    else
      for (std::size_t l = 0; l < merged.size(); ++l) {
        merged[l].checked += r.layers[l].checked;
        merged[l].skipped += r.layers[l].skipped;
        merged[l].max_rel_err = std::max(merged[l].max_rel_err, r.layers[l].max_rel_err);
      }
  }
  auto f = detail::open_out(dir, "gradcheck.csv");
  CsvWriter w(f);
  w.header({"layer", "kind", "checked", "skipped", "max_rel_err"});
  CsvWriter table(out);
  table.header({"layer", "kind", "checked", "skipped", "max_rel_err"});
  bool ok = true;
  for (const auto& l : merged) {
    const std::vector<std::string> row{cell(l.layer), l.kind, cell(l.checked), cell(l.skipped), cell(l.max_rel_err)};
    w.row(row);
    table.row(row);
    ok = ok && l.max_rel_err < 1e-5;
  }
  if (!ok) out << "gradient check FAILED: relative error >= 1e-5\n";
  return ok ? 0 : 1;
}

inline int cmd_approx(const ApproxConfig& cfg, const std::filesystem::path& dir, std::ostream& out) {
  const TargetFn target = make_target(cfg.target);
  auto f = detail::open_out(dir, "approx.csv");
  CsvWriter w(f);
  w.header({"delta", "l2_error", "anchor_max_abs_err"});
  for (double delta : cfg.deltas) {
    PrototypeOptions po;
    po.n = cfg.n;
    po.delta = delta;
    po.radius = cfg.radius;
    po.symmetric = cfg.symmetric;
    const auto a = build_prototype(target, po);
    const auto rep = l2_error(a, target, cfg.grid);
    const auto cons = region_consistency(a);
    w.row({cell(rep.delta), cell(rep.l2_error), cell(rep.anchor_max_abs_err)});
    out << "delta " << format_number(delta) << " rows " << a.rows() << " l2_error " << format_number(rep.l2_error)
        << " consistent " << (cons.consistent ? "yes" : "no");
    if (cfg.symmetric) out << " mixed_orthant_violations " << cons.mixed_orthant.size();
    out << "\n";
  }
  return 0;
}

inline int cmd_bench(const BenchConfig& cfg, std::uint64_t seed, const std::filesystem::path& dir, std::ostream& out) {
  validate_selector(cfg.selector, cfg.k);
  Rng rng = Rng(seed).substream("bench");
  const auto r = bench_sparse_vs_dense(cfg.m, cfg.d, cfg.k, cfg.selector, cfg.trials, rng);
  auto f = detail::open_out(dir, "bench.csv");
  for (std::ostream* o : {static_cast<std::ostream*>(&f), &out}) {
    CsvWriter w(*o);
    w.header({"m", "d", "k", "l", "madds_dense", "madds_sparse", "ratio", "time_dense_ns", "time_sparse_ns"});
    w.row({cell(r.m), cell(r.d), cell(r.k), cell(r.l), cell(r.madds_dense), cell(r.madds_sparse), cell(r.ratio),
           cell(r.time_dense_ns), cell(r.time_sparse_ns)});
  }
  return 0;
}

enum class MatchClaim { Parameters, FeatureMaps };

struct CompareRow {
  std::string name;
  std::size_t parameters = 0;
  std::vector<std::size_t> feature_maps;
  EpochMetrics final;
};

struct CompareResult {
  std::vector<CompareRow> rows;  // reference first
  MatchClaim claim = MatchClaim::Parameters;
  double gap = 0.0;  // relative parameter gap, or 0/1 map mismatch
  bool holds = false;
};

inline std::string maps_string(const std::vector<std::size_t>& maps) {
  std::string s;
  for (std::size_t i = 0; i < maps.size(); ++i) s += (i ? "-" : "") + std::to_string(maps[i]);
  return s;
}

/// Builds both networks, checks the claimed match (parameter counts within
/// `tolerance` of the reference, or identical hidden widths), then trains
/// both on the reference config's data.
inline CompareResult compare_models(const RunSpec& reference, const std::string& ref_name, const RunSpec& candidate,
                                    const std::string& cand_name, MatchClaim claim, double tolerance) {
  CompareResult res;
  res.claim = claim;
  const BuiltNetwork a = build_network(reference.network);
  const BuiltNetwork b = build_network(candidate.network);
  if (claim == MatchClaim::Parameters) {
    res.gap = std::abs(static_cast<double>(b.parameter_count) - static_cast<double>(a.parameter_count)) /
              static_cast<double>(a.parameter_count);
    res.holds = res.gap <= tolerance;
  } else {
    res.holds = a.feature_maps == b.feature_maps;
    res.gap = res.holds ? 0.0 : 1.0;
  }
  for (const auto& [spec, name] : {std::pair{&reference, ref_name}, std::pair{&candidate, cand_name}}) {
    RunSpec s = *spec;
    s.data = reference.data;
    s.seed = reference.seed;
    auto t = run_training(s);
    EpochMetrics last = t.history.empty() ? EpochMetrics{} : t.history.back();
    res.rows.push_back({name, t.built.parameter_count, t.built.feature_maps, last});
  }
  return res;
}

inline int cmd_compare(const CompareResult& res, const std::filesystem::path& dir, std::ostream& out) {
  auto f = detail::open_out(dir, "compare.csv");
  for (std::ostream* o : {static_cast<std::ostream*>(&f), &out}) {
    CsvWriter w(*o);
    w.header({"model", "parameters", "feature_maps", "epochs", "train_loss", "train_acc", "test_acc"});
    for (const auto& r : res.rows) {
      w.row({r.name, cell(r.parameters), maps_string(r.feature_maps), cell(r.final.epoch), cell(r.final.train_loss),
             cell(r.final.train_acc), cell(r.final.test_acc)});
    }
  }
  const char* claim = res.claim == MatchClaim::Parameters ? "parameters" : "feature_maps";
  auto g = detail::open_out(dir, "compare_claim.csv");
  CsvWriter w(g);
  w.header({"claim", "gap", "holds"});
  w.row({claim, cell(res.gap), res.holds ? "1" : "0"});
  out << "claim " << claim << " gap " << format_number(res.gap) << (res.holds ? " holds" : " VIOLATED") << "\n";
  return res.holds ? 0 : 1;
}

// ---------------------------------------------------------------------------
// Entry point

/// Parses argv and dispatches. Usage problems exit 2, run errors exit 1.
inline int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Channel-out networks: training, diagnostics and approximation", "chanout"};
  app.require_subcommand(1);

  std::string config_path, out_dir = ".";
  std::optional<std::uint64_t> seed;
  auto common = [&](CLI::App* sub, bool config_required) {
    auto* opt = sub->add_option("--config", config_path, "run description file")->check(CLI::ExistingFile);
    if (config_required) opt->required();
    sub->add_option("--seed", seed, "root seed (default: config value, else 42)");
    sub->add_option("--out-dir", out_dir, "directory for CSV artifacts")->capture_default_str();
  };

  auto* train_cmd = app.add_subcommand("train", "train and write metrics.csv");
  common(train_cmd, true);
  auto* grad_cmd = app.add_subcommand("gradcheck", "finite-difference gradient check per layer");
  common(grad_cmd, true);
  auto* path_cmd = app.add_subcommand("pathways", "train, then write pathway, PCA and switch CSVs");
  common(path_cmd, true);

  auto* approx_cmd = app.add_subcommand("approx", "lattice approximator convergence table");
  common(approx_cmd, false);
  std::optional<std::string> a_target;
  std::optional<std::size_t> a_n, a_grid;
  std::vector<double> a_deltas;
  std::optional<double> a_radius;
  bool a_symmetric = false;
  approx_cmd->add_option("--target", a_target, "constant, linear, quadratic, sine or step");
  approx_cmd->add_option("--n", a_n, "input dimension");
  approx_cmd->add_option("--deltas", a_deltas, "lattice pitches")->delimiter(',');
  approx_cmd->add_option("--radius", a_radius, "domain half-width R");
  approx_cmd->add_option("--grid", a_grid, "quadrature points per axis per lattice");
  approx_cmd->add_flag("--symmetric", a_symmetric, "use [-R, R]^n instead of [0, R]^n");

  auto* bench_cmd = app.add_subcommand("bench", "sparse vs dense multiply-add count and timing");
  common(bench_cmd, false);
  std::optional<std::size_t> b_m, b_d, b_k, b_trials;
  std::optional<std::string> b_selector;
  bench_cmd->add_option("--m", b_m, "output units");
  bench_cmd->add_option("--d", b_d, "input units");
  bench_cmd->add_option("--k", b_k, "group size");
  bench_cmd->add_option("--selector", b_selector, "selector, e.g. argmax or topl:2");
  bench_cmd->add_option("--trials", b_trials, "repetitions");

  auto* cmp_cmd = app.add_subcommand("compare", "build, check and train a reference and a candidate model");
  common(cmp_cmd, true);
  std::string against;
  std::string match = "params";
  double tolerance = 0.05;
  cmp_cmd->add_option("--against", against, "candidate run description")->required()->check(CLI::ExistingFile);
  cmp_cmd->add_option("--match", match, "claimed relationship: params or maps")
      ->check(CLI::IsMember({"params", "maps"}))
      ->capture_default_str();
  cmp_cmd->add_option("--tolerance", tolerance, "relative parameter-count tolerance")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    out << app.help();
    return 0;
  } catch (const CLI::CallForAllHelp& e) {
    out << app.help("", CLI::AppFormatMode::All);
    return 0;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n" << app.help();
    return 2;
  }

  try {
    RunSpec spec;
    if (!config_path.empty()) spec = load_config(config_path);
    if (seed) spec.seed = *seed;
    const auto dir = detail::prepare_out_dir(out_dir);

    if (train_cmd->parsed()) return cmd_train(spec, dir, out);
    if (grad_cmd->parsed()) return cmd_gradcheck(spec, dir, out);
    if (path_cmd->parsed()) return cmd_pathways(spec, dir, out);
    if (approx_cmd->parsed()) {
      ApproxConfig cfg = spec.approx;
      if (a_target) cfg.target = *a_target;
      if (a_n) cfg.n = *a_n;
      if (!a_deltas.empty()) cfg.deltas = a_deltas;
      if (a_radius) cfg.radius = *a_radius;
      if (a_grid) cfg.grid = *a_grid;
      if (a_symmetric) cfg.symmetric = true;
      return cmd_approx(cfg, dir, out);
    }
    if (bench_cmd->parsed()) {
      BenchConfig cfg = spec.bench;
      if (b_m) cfg.m = *b_m;
      if (b_d) cfg.d = *b_d;
      if (b_k) cfg.k = *b_k;
      if (b_selector) cfg.selector = parse_selector(*b_selector);
      if (b_trials) cfg.trials = *b_trials;
      return cmd_bench(cfg, spec.seed, dir, out);
    }
    if (cmp_cmd->parsed()) {
      RunSpec cand = load_config(against);
      const auto claim = match == "maps" ? MatchClaim::FeatureMaps : MatchClaim::Parameters;
      const auto stem = [](const std::string& p) { return std::filesystem::path(p).stem().string(); };
      return cmd_compare(compare_models(spec, stem(config_path), cand, stem(against), claim, tolerance), dir, out);
    }
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  }
  return 2;
}

}  // namespace chanout
