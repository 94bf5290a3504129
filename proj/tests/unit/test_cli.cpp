#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "chanout/cli.hpp"

using namespace chanout;
namespace fs = std::filesystem;

namespace {

struct Run {
  int code;
  std::string out, err;
};

Run cli(std::vector<std::string> args) {
  args.insert(args.begin(), "chanout");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  const int code = run_cli(static_cast<int>(argv.size()), argv.data(), out, err);
  return {code, out.str(), err.str()};
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p);
  std::stringstream s;
  s << in.rdbuf();
  return s.str();
}

std::string first_line(const fs::path& p) {
  const auto s = slurp(p);
  return s.substr(0, s.find('\n'));
}

fs::path scratch(const std::string& name) {
  auto p = fs::temp_directory_path() / ("chanout_cli_test_" + name);
  fs::remove_all(p);
  return p;
}

fs::path write_config(const fs::path& dir, const std::string& text) {
  fs::create_directories(dir);
  auto p = dir / "run.cfg";
  std::ofstream(p) << text;
  return p;
}

const char* kSmall =
    "input = 2\nclasses = 2\nlayers = dense 8 | channelout 2\n"
    "learning_rate = 0.05\nbatch_size = 16\nepochs = 3\n"
    "dataset = spirals\nsamples_per_class = 40\nswitch_probes = 8\n";

}  // namespace

TEST(Cli, UsageErrors) {
  const auto r = cli({"frobnicate"});
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("Usage"), std::string::npos);
  EXPECT_EQ(cli({}).code, 2);
  EXPECT_EQ(cli({"train"}).code, 2);  // --config is required
  EXPECT_EQ(cli({"--help"}).code, 0);
}

TEST(Cli, RunErrorsExitOne) {
  const auto dir = scratch("bad");
  const auto cfg = write_config(dir, "input = 2\nclasses = 2\nlayers = dense 8 | channelout 3\n");
  const auto r = cli({"train", "--config", cfg.string(), "--out-dir", dir.string()});
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.err.find("layer 1 (channelout)"), std::string::npos) << r.err;
}

TEST(Cli, BenchCountsHalfAtGroupTwo) {
  const auto dir = scratch("bench");
  const auto r = cli({"bench", "--m", "64", "--d", "128", "--k", "2", "--trials", "2", "--out-dir", dir.string()});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(first_line(dir / "bench.csv"), "m,d,k,l,madds_dense,madds_sparse,ratio,time_dense_ns,time_sparse_ns");
  EXPECT_NE(slurp(dir / "bench.csv").find("64,128,2,1,8192,4096,0.5,"), std::string::npos);
}

TEST(Cli, Approx) {
  const auto dir = scratch("approx");
  const auto r = cli({"approx", "--target", "quadratic", "--deltas", "0.5,0.25", "--out-dir", dir.string()});
  ASSERT_EQ(r.code, 0) << r.err;
  const auto csv = slurp(dir / "approx.csv");
  EXPECT_EQ(first_line(dir / "approx.csv"), "delta,l2_error,anchor_max_abs_err");
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 3);
  EXPECT_NE(r.out.find("consistent yes"), std::string::npos);
}

TEST(Cli, GradcheckPasses) {
  const auto dir = scratch("grad");
  const auto cfg = std::string(CHANOUT_SOURCE_DIR) + "/configs/spirals_channelout.cfg";
  const auto r = cli({"gradcheck", "--config", cfg, "--out-dir", dir.string()});
  EXPECT_EQ(r.code, 0) << r.out << r.err;
  EXPECT_EQ(first_line(dir / "gradcheck.csv"), "layer,kind,checked,skipped,max_rel_err");
}

TEST(Cli, AugmentationDoesNotTouchInitialisation) {
  RunSpec plain = parse_config(kSmall);
  RunSpec flipped = plain;
  flipped.augment.flip = true;
  flipped.optimizer.epochs = 7;
  const auto a = build_initialized(plain), b = build_initialized(flipped);
  const auto pa = parameters(a.net), pb = parameters(b.net);
  for (std::size_t t = 0; t < pa.size(); ++t) EXPECT_EQ(*pa[t], *pb[t]);
}

TEST(Cli, PathwaysByteIdentical) {
  const auto a = scratch("path_a"), b = scratch("path_b");
  const auto cfg = write_config(a, kSmall);
  ASSERT_EQ(cli({"pathways", "--config", cfg.string(), "--out-dir", a.string()}).code, 0);
  ASSERT_EQ(cli({"pathways", "--config", cfg.string(), "--out-dir", b.string()}).code, 0);
  for (const char* f : {"metrics.csv", "pathways.csv", "pca.csv", "switches.csv", "pathway_summary.csv"}) {
    EXPECT_FALSE(slurp(a / f).empty()) << f;
    EXPECT_EQ(slurp(a / f), slurp(b / f)) << f;
  }
  EXPECT_EQ(first_line(a / "metrics.csv"), "epoch,train_loss,train_acc,test_acc");
  EXPECT_EQ(first_line(a / "pathway_summary.csv"), "rows,groups,intra,inter,ratio,var1,var2,var3,top3_share,switches");

  const auto c = scratch("path_c");
  ASSERT_EQ(cli({"pathways", "--config", cfg.string(), "--seed", "43", "--out-dir", c.string()}).code, 0);
  EXPECT_NE(slurp(a / "metrics.csv"), slurp(c / "metrics.csv"));
}

TEST(Cli, CompareWritesTable) {
  const auto dir = scratch("compare");
  const auto ref = write_config(dir / "ref", kSmall);
  const auto cand = write_config(dir / "cand",
                                 "input = 2\nclasses = 2\nlayers = dense 8 | maxout 2\n"
                                 "learning_rate = 0.05\nbatch_size = 16\nepochs = 3\n");
  const auto r = cli({"compare", "--config", ref.string(), "--against", cand.string(), "--match", "maps", "--out-dir",
                      dir.string()});
  EXPECT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(first_line(dir / "compare.csv"), "model,parameters,feature_maps,epochs,train_loss,train_acc,test_acc");
  const auto p = cli({"compare", "--config", ref.string(), "--against", cand.string(), "--match", "params",
                      "--out-dir", dir.string()});
  EXPECT_EQ(p.code, 1);  // 42 vs 34 parameters
  EXPECT_NE(slurp(dir / "compare_claim.csv").find("parameters,"), std::string::npos);
}

TEST(Cli, SpiralsDefeatLinearBaseline) {
  const auto t = run_training(load_config(std::string(CHANOUT_SOURCE_DIR) + "/configs/spirals_logistic.cfg"));
  EXPECT_LT(t.history.back().test_acc, 0.6);
}
