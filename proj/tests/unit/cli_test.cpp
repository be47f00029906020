#include <gtest/gtest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sys/wait.h>

#include "dmoe/checkpoint.hpp"
#include "dmoe/pipeline.hpp"
#include "fixtures.hpp"

#ifdef DMOE_CLI_PATH

namespace fs = std::filesystem;

namespace {

struct Run {
  int code = -1;
  std::string output;
};

// Runs the tool inside `dir` with stdout and stderr merged.
Run run_cli(const fixture::TempDir& dir, const std::string& args) {
  const std::string cmd = "cd '" + dir.path().string() + "' && '" + DMOE_CLI_PATH + "' " + args + " 2>&1";
  Run r;
  FILE* pipe = popen(cmd.c_str(), "r");
  if (pipe == nullptr) return r;
  char buf[4096];
  while (std::fgets(buf, sizeof buf, pipe) != nullptr) r.output += buf;
  const int status = pclose(pipe);
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return r;
}

const std::string kTiny =
    " --n-categories 2 --classes-per-category 2 --dim 4 --samples-per-class 12 --group-size 2 --lambda 0"
    " --epochs 5 --hidden 8 --head-epochs 5 --ks 1,2";

}  // namespace

TEST(Cli, PipelineWritesReport) {
  fixture::TempDir dir("cli-pipe");
  const auto r = run_cli(dir, "pipeline" + kTiny + " --output-dir out");
  ASSERT_EQ(r.code, 0) << r.output;
  EXPECT_TRUE(fs::exists(dir.path() / "out/report.json"));
  EXPECT_TRUE(fs::exists(dir.path() / "out/per_class.csv"));
}

TEST(Cli, ConfigFileWithFlagOverride) {
  fixture::TempDir dir("cli-cfg");
  {
    std::ofstream c(dir.file("run.cfg"));
    c << "n_categories = 2\nclasses_per_category = 2\ndim = 4\nsamples_per_class = 12\n"
         "group_size = 2\nlambda = 0\nepochs = 5\nhidden = 8\nhead_epochs = 5\nks = 1,2\nseed = 9\n";
  }
  const auto r = run_cli(dir, "pipeline --config run.cfg --seed 3 --output-dir out");
  ASSERT_EQ(r.code, 0) << r.output;
  const auto saved = dmoe::load_config(dir.file("out/config.txt"));
  EXPECT_EQ(saved.seed, 3u);
  EXPECT_EQ(saved.train.epochs, 5);
}

TEST(Cli, StagedCommandsMatchPipeline) {
  fixture::TempDir dir("cli-staged");
  ASSERT_EQ(run_cli(dir, "gen-data" + kTiny + " --out d.csv --taxonomy-out t.tsv").code, 0);
  const std::string data = kTiny + " --data-path d.csv --taxonomy-path t.tsv";
  auto r = run_cli(dir, "ontology" + data + " --out o.json --affinity-out a.csv");
  ASSERT_EQ(r.code, 0) << r.output;
  r = run_cli(dir, "assign" + data + " --ontology-file o.json --out plan.json");
  ASSERT_EQ(r.code, 0) << r.output;
  r = run_cli(dir, "train-experts" + data + " --plan plan.json --out-dir ex");
  ASSERT_EQ(r.code, 0) << r.output;
  r = run_cli(dir, "fuse" + data + " --plan plan.json --experts-dir ex --out models/mix.json");
  ASSERT_EQ(r.code, 0) << r.output;
  r = run_cli(dir, "eval" + data + " --model models/mix.json --output-dir ev");
  ASSERT_EQ(r.code, 0) << r.output;
  ASSERT_EQ(run_cli(dir, "pipeline" + data + " --output-dir full").code, 0);

  // The staged chain reproduces the one-shot pipeline's metrics.
  const auto staged = fixture::slurp(dir.file("ev/per_class.csv"));
  const auto full = fixture::slurp(dir.file("full/per_class.csv"));
  EXPECT_EQ(staged, full);
}

TEST(Cli, AblateWritesTables) {
  fixture::TempDir dir("cli-abl");
  const auto r = run_cli(dir, "ablate" + kTiny +
                                  " --assignments tree --delta2s 0.01 --lambdas 0,0.5 --variants odds --fusions late"
                                  " --output-dir abl");
  ASSERT_EQ(r.code, 0) << r.output;
  EXPECT_TRUE(fs::exists(dir.path() / "abl/ablation.csv"));
  EXPECT_TRUE(fs::exists(dir.path() / "abl/accuracy_vs_lambda.csv"));
  EXPECT_TRUE(fs::exists(dir.path() / "abl/accuracy_vs_experts.csv"));
}

TEST(Cli, FailuresAreStageTagged) {
  fixture::TempDir dir("cli-err");
  auto r = run_cli(dir, "pipeline --data-path missing.csv");
  EXPECT_NE(r.code, 0);
  EXPECT_NE(r.output.find("error [data]"), std::string::npos) << r.output;

  r = run_cli(dir, "pipeline --lambda 1.5");
  EXPECT_NE(r.code, 0);
  EXPECT_NE(r.output.find("error ["), std::string::npos) << r.output;

  r = run_cli(dir, "train-experts --plan nope.json");
  EXPECT_NE(r.code, 0);
  EXPECT_NE(r.output.find("error [train-experts]"), std::string::npos) << r.output;

  EXPECT_NE(run_cli(dir, "frobnicate").code, 0);
  EXPECT_NE(run_cli(dir, "pipeline --no-such-flag 3").code, 0);
}

#endif
