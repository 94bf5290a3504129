// Runs the nine acceptance criteria and prints one PASS/FAIL line for each.
// Exit status counts failed criteria; `--known-failure N` exempts criterion N
// from that count, and a known failure that passes counts as a failure.

#include <chrono>
#include <set>
#include <string>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <sstream>

#include "../common/oracles.hpp"
#include "../common/random_nets.hpp"
#include "chanout/cli.hpp"

using namespace chanout;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = true;
  std::string detail;
};

std::string num(double v) { return format_number(v); }

const fs::path kOut = fs::temp_directory_path() / "chanout_acceptance";
const std::string kConfigs = std::string(CHANOUT_SOURCE_DIR) + "/configs/";

std::vector<ChannelSelector> all_selectors(std::size_t k) {
  std::vector<ChannelSelector> out{ChannelSelector::argmax(), ChannelSelector::argmin(), ChannelSelector::argmedian(),
                                   ChannelSelector::absmax()};
  for (std::size_t l = 1; l < k; ++l) out.push_back(ChannelSelector::top(l));
  return out;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) return {};
  std::stringstream s;
  s << in.rdbuf();
  return s.str();
}

// 1 ---------------------------------------------------------------------------
Outcome gradient_correctness() {
  Rng rng(2024);
  Outcome o;
  double worst = 0.0;
  std::size_t checked = 0, skipped = 0;
  for (int trial = 0; trial < 20; ++trial) {
    auto rn = testnets::random_net(rng, 3, false);
    const Tensor x = testnets::random_input(rn.net.input_shape, rng);
    const auto r = grad_check(rn.net, x, static_cast<int>(rng.below(3)));
    worst = std::max(worst, r.max_rel_err);
    checked += r.checked;
    skipped += r.skipped;
    if (!(r.max_rel_err < 1e-5)) {
      o.pass = false;
      o.detail += " [" + rn.description + " err " + num(r.max_rel_err) + "]";
    }
  }
  // A near-tie whose probe flips the channel-out winner has to be skipped.
  Network tie{{1}, {}};
  tie.layers.push_back(DenseLayer{Tensor::matrix({{1.0}, {1.0 + 1e-7}}), Tensor::vector({0, 0})});
  tie.layers.push_back(ChannelOutLayer{2, ChannelSelector::argmax()});
  tie.layers.push_back(DenseLayer{Tensor::matrix({{1, -1}, {-1, 1}}), Tensor::vector({0, 0})});
  tie.layers.push_back(SoftmaxXentLayer{});
  const auto t = grad_check(tie, Tensor::vector({1.0}), 0);
  const bool tie_ok = t.boundary_flag && t.skipped > 0 && t.max_rel_err < 1e-5;
  o.pass = o.pass && tie_ok;
  o.detail = "20 nets, max rel err " + num(worst) + ", " + std::to_string(checked) + " probes checked, " +
             std::to_string(skipped) + " skipped; near-tie probe " + (tie_ok ? "skipped and flagged" : "NOT skipped") +
             o.detail;
  return o;
}

// 2 ---------------------------------------------------------------------------
Outcome selection_semantics() {
  const std::vector<double> alphabet{-2.0, -1.0, 0.0, 1.0, 2.0};
  std::size_t cases = 0, mismatches = 0;
  for (std::size_t k = 2; k <= 5; ++k) {
    std::vector<std::size_t> digit(k, 0);
    std::vector<double> a(k);
    while (true) {
      for (std::size_t i = 0; i < k; ++i) a[i] = alphabet[digit[i]];
      for (const auto& s : all_selectors(k)) {
        const auto ref = oracle::select(s, a);
        const auto got = select(s, a);
        const auto h = channel_out_forward(Tensor({k}, a), k, s).output;
        const auto expect = oracle::mask(a, ref);
        bool ok = std::vector<int>(got.begin(), got.end()) == ref;
        for (std::size_t i = 0; i < k; ++i) ok = ok && h[i] == expect[i];
        mismatches += !ok;
        ++cases;
      }
      std::size_t i = 0;
      while (i < k && ++digit[i] == alphabet.size()) digit[i++] = 0;
      if (i == k) break;
    }
  }
  return {mismatches == 0, std::to_string(cases) + " (selector, input) cases over k=2..5, " +
                               std::to_string(mismatches) + " mismatches"};
}

// 3 ---------------------------------------------------------------------------
Outcome sparse_equivalence() {
  Rng rng(77);
  std::size_t identical = 0, exact_ratio = 0;
  std::string failures;
  for (int trial = 0; trial < 100; ++trial) {
    // whole-network forward and backward, dense vs sparse
    auto rn = testnets::random_net(rng, 3, trial % 2 == 1);
    const Tensor x = testnets::random_input(rn.net.input_shape, rng);
    const int label = static_cast<int>(rng.below(3));
    Rng d1(static_cast<std::uint64_t>(trial)), d2(static_cast<std::uint64_t>(trial));
    const auto a = network_loss(rn.net, x, label, Mode::Train, d1, {false, nullptr});
    const auto b = network_loss(rn.net, x, label, Mode::Train, d2, {true, nullptr});
    bool same = a.forward.output == b.forward.output;
    const auto ga = network_backward(rn.net, a.forward.trace, a.grad_logits, {false, nullptr});
    const auto gb = network_backward(rn.net, b.forward.trace, b.grad_logits, {true, nullptr});
    for (std::size_t t = 0; t < ga.params.size(); ++t) same = same && ga.params[t] == gb.params[t];
    same = same && ga.input == gb.input;
    identical += same;
    if (!same) failures += " [" + rn.description + "]";

    // op counts of a dense layer fed by one channel-out layer
    const std::size_t k = 2 + rng.below(4);
    const auto sels = all_selectors(k);
    const auto sel = sels[rng.below(sels.size())];
    const std::size_t d = k * (4 + rng.below(8)), m = 3 + rng.below(10);
    Tensor w({m, d}), bias({m}), pre({d}), gy({m});
    for (auto& v : w.data()) v = rng.normal();
    for (auto& v : pre.data()) v = rng.normal();
    for (auto& v : gy.data()) v = rng.normal();
    const auto co = channel_out_forward(pre, k, sel);
    const auto sx = sparsify(co.output, co.trace);
    OpCounter dense_f, sparse_f, sparse_b;
    Tensor yd = matmul(w, co.output.reshaped({d, 1}), &dense_f).reshaped({m});
    const Tensor ys = sparse_dense_forward(w, bias, sx, sparse_f);
    sparse_dense_backward(w, sx, gy, sparse_b);
    const std::uint64_t l = sel.count();
    const bool ratio = yd == ys && sparse_f.multiply_adds * k == dense_f.multiply_adds * l &&
                       sparse_b.multiply_adds * k == 2 * m * d * l;
    exact_ratio += ratio;
    if (!ratio) failures += " [ops " + to_string(sel) + " k=" + std::to_string(k) + "]";
  }
  Rng bench_rng(5);
  const auto bench = bench_sparse_vs_dense(256, 1024, 2, ChannelSelector::argmax(), 20, bench_rng);
  return {identical == 100 && exact_ratio == 100,
          std::to_string(identical) + "/100 nets bit-identical, " + std::to_string(exact_ratio) +
              "/100 layers at exactly l/k multiply-adds; measured dense/sparse time ratio " +
              num(std::round(100.0 * bench.time_dense_ns / bench.time_sparse_ns) / 100.0) + " (k=2, not asserted)" +
              failures};
}

// 4 ---------------------------------------------------------------------------
Outcome selection_balance() {
  const std::size_t n = 10000;
  Rng rng(4);
  Outcome o;
  double worst_z = 0.0;
  std::size_t checked = 0;
  for (std::size_t k = 2; k <= 5; ++k) {
    for (const auto& s : all_selectors(k)) {
      const double p = static_cast<double>(s.count()) / static_cast<double>(k);
      const double sigma = std::sqrt(p * (1.0 - p) / static_cast<double>(n));
      for (double f : selection_balance_stat(s, k, n, rng)) {
        const double z = std::abs(f - p) / sigma;
        worst_z = std::max(worst_z, z);
        ++checked;
        if (!(z <= 3.0)) {
          o.pass = false;
          o.detail += " [" + to_string(s) + " k=" + std::to_string(k) + " freq " + num(f) + "]";
        }
      }
    }
  }
  o.detail = std::to_string(checked) + " channel frequencies, worst |f - l/k| = " +
             num(std::round(worst_z * 100.0) / 100.0) + " sigma" + o.detail;
  return o;
}

// 5, 6 ------------------------------------------------------------------------
std::optional<TrainOutcome> trained_spirals;

Outcome spirals_learning() {
  const RunSpec co = load_config(kConfigs + "spirals_channelout.cfg");
  const RunSpec lr = load_config(kConfigs + "spirals_logistic.cfg");
  trained_spirals = run_training(co);
  const auto base = run_training(lr);
  double best = 0.0;
  std::size_t first = 0;
  for (const auto& m : trained_spirals->history) {
    best = std::max(best, m.test_acc);
    if (!first && m.test_acc >= 0.9) first = m.epoch;
  }
  const double final_co = trained_spirals->history.back().test_acc;
  const double final_lr = base.history.back().test_acc;
  const bool pass = first > 0 && first <= 300 && final_co >= 0.9 && final_lr < 0.6;
  return {pass, "channel-out test acc " + num(final_co) + " after " + std::to_string(trained_spirals->history.size()) +
                    " epochs (first >= 0.9 at epoch " + std::to_string(first) + "); logistic " + num(final_lr)};
}

Outcome pathway_clustering() {
  if (!trained_spirals) return {false, "no trained network"};
  const auto m = record_pathways(trained_spirals->built.net, trained_spirals->data.test);
  const auto sep = cluster_separation(m);
  const auto pca = pca_project(m);
  fs::create_directories(kOut);
  std::ofstream f(kOut / "pca.csv");
  write_pca(f, pca, m.labels);
  f.close();
  double top3 = 0.0;
  for (double v : pca.variance_share) top3 += v;
  const bool emitted = fs::file_size(kOut / "pca.csv") > 0;
  return {sep.ratio > 1.2 && emitted,
          "separation inter/intra " + num(sep.inter) + "/" + num(sep.intra) + " = " + num(sep.ratio) +
              "; top-3 PCA variance share " + num(top3) + " written to " + (kOut / "pca.csv").string()};
}

// 7 ---------------------------------------------------------------------------
Outcome approximator() {
  Outcome o;
  std::ostringstream d;
  auto check = [&](bool ok, const std::string& what) {
    if (!ok) {
      o.pass = false;
      d << " FAILED: " << what << ";";
    }
  };
  const std::vector<double> deltas{0.5, 0.25, 0.125};
  Rng rng(9);
  for (std::size_t n : {1u, 2u}) {
    for (const auto& [name, target] : {std::pair{std::string("quadratic"), make_target("quadratic")},
                                       std::pair{std::string("step@0.6"), make_step(0.6)}}) {
      std::vector<double> l2;
      double anchor = 0.0;
      for (double delta : deltas) {
        PrototypeOptions po;
        po.n = n;
        po.delta = delta;
        const auto a = build_prototype(target, po);
        const auto rep = l2_error(a, target, 16);
        l2.push_back(rep.l2_error);
        anchor = std::max(anchor, rep.anchor_max_abs_err);
        const auto osc = prototype_oscillation(a);
        check(osc.holds, name + " oscillation n=" + std::to_string(n));
        const Network net = as_channel_out_network(a);
        double gap = 0.0;
        for (int t = 0; t < 200; ++t) {
          Tensor x({n});
          for (auto& v : x.data()) v = rng.uniform();
          gap = std::max(gap, std::abs(network_forward(net, x, Mode::Infer, rng).output[0] - eval_approx(a, x.data())));
        }
        check(gap <= 1e-12, name + " network gap " + num(gap));
      }
      check(l2[0] > l2[1] && l2[1] > l2[2], name + " l2 not decreasing");
      check(anchor <= 1e-9, name + " anchor error " + num(anchor));
      d << " " << name << " n=" << n << " l2 " << num(l2[0]) << " > " << num(l2[1]) << " > " << num(l2[2])
        << ", anchor err " << num(anchor) << ";";
    }
  }
  o.detail = "oscillation < nG delta on every positive lattice, network form within 1e-12;" + d.str();
  return o;
}

// 8 ---------------------------------------------------------------------------
int run_cli_process(const std::string& args) {
  const std::string cmd = std::string("\"") + CHANOUT_CLI + "\" " + args + " > /dev/null 2>&1";
  return std::system(cmd.c_str());
}

Outcome determinism() {
  const std::string cfg = kConfigs + "spirals_channelout.cfg";
  std::vector<std::string> diffs;
  for (const char* cmd : {"train", "pathways"}) {
    const auto a = kOut / (std::string(cmd) + "_a"), b = kOut / (std::string(cmd) + "_b");
    fs::remove_all(a);
    fs::remove_all(b);
    if (run_cli_process(std::string(cmd) + " --config \"" + cfg + "\" --out-dir \"" + a.string() + "\"") != 0 ||
        run_cli_process(std::string(cmd) + " --config \"" + cfg + "\" --out-dir \"" + b.string() + "\"") != 0)
      return {false, std::string(cmd) + " run failed"};
    for (const auto& entry : fs::directory_iterator(a)) {
      const auto name = entry.path().filename();
      const auto x = slurp(a / name), y = slurp(b / name);
      if (x.empty() || x != y) diffs.push_back(std::string(cmd) + "/" + name.string());
    }
  }
  std::string detail = "train and pathways run twice with seed 42: ";
  if (diffs.empty()) detail += "metrics, layers, pathways, pca, switches and summary CSVs byte-identical";
  for (const auto& d : diffs) detail += " differs: " + d;
  return {diffs.empty(), detail};
}

// 9 ---------------------------------------------------------------------------
Outcome compare_harness() {
  const RunSpec co = load_config(kConfigs + "spirals_channelout.cfg");
  Outcome o;
  std::ostringstream d;
  for (const auto& [file, claim] : {std::pair{"spirals_maxout_params", MatchClaim::Parameters},
                                    std::pair{"spirals_maxout_maps", MatchClaim::FeatureMaps}}) {
    const RunSpec mo = load_config(kConfigs + file + ".cfg");
    const auto res = compare_models(co, "channelout", mo, file, claim, 0.05);
    const auto dir = kOut / file;
    fs::create_directories(dir);
    std::ostringstream table;
    cmd_compare(res, dir, table);
    const bool emitted = fs::exists(dir / "compare.csv") && res.rows.size() == 2;
    o.pass = o.pass && res.holds && emitted;
    d << file << ": " << res.rows[0].parameters << " vs " << res.rows[1].parameters << " parameters, maps "
      << maps_string(res.rows[0].feature_maps) << " vs " << maps_string(res.rows[1].feature_maps) << ", claim "
      << (res.holds ? "holds" : "VIOLATED") << ", test acc " << num(res.rows[0].final.test_acc) << " vs "
      << num(res.rows[1].final.test_acc) << "; ";
  }
  o.detail = d.str() + "tables in " + kOut.string();
  return o;
}

}  // namespace

int main(int argc, char** argv) {
  std::set<std::size_t> known;
  for (int i = 1; i + 1 < argc; i += 2) {
    if (std::string(argv[i]) != "--known-failure") {
      std::cerr << "usage: acceptance [--known-failure N]...\n";
      return 2;
    }
    known.insert(std::stoul(argv[i + 1]));
  }
  const std::vector<std::pair<const char*, std::function<Outcome()>>> criteria{
      {"gradient correctness", gradient_correctness},
      {"selection semantics", selection_semantics},
      {"sparse execution equivalence", sparse_equivalence},
      {"selection balance", selection_balance},
      {"spirals learning", spirals_learning},
      {"pathway clustering", pathway_clustering},
      {"approximator convergence", approximator},
      {"determinism", determinism},
      {"maxout comparison harness", compare_harness},
  };
  int failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    const bool expected_fail = known.count(i + 1) > 0;
    failed += o.pass == expected_fail;
    std::cout << (o.pass ? "PASS" : "FAIL") << " " << (i + 1) << " " << criteria[i].first << " ("
              << std::round(secs * 10.0) / 10.0 << " s): " << o.detail;
    if (expected_fail) std::cout << (o.pass ? " [listed as known failure but passed]" : " [known failure]");
    std::cout << std::endl;
  }
  std::cout << failed << " unexpected result(s)" << std::endl;
  return failed;
}
