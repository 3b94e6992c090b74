#include <gtest/gtest.h>

#include <fstream>
#include <sstream>

#include "metaprompt/checkpoint.hpp"
#include "metaprompt/cli.hpp"
#include "metaprompt/tasks.hpp"
#include "test_util.hpp"

namespace {

using namespace metaprompt;
using testing_util::TempDir;

constexpr const char* kTinyConfig = R"({
  "seed": 2,
  "backbone": {"n_layers": 1, "n_heads": 2, "d_model": 8, "vocab_size": 80,
               "max_seq_len": 24},
  "prompt": {"length": 3},
  "meta": {"inner_lr": 0.05, "outer_lr": 0.05, "inner_steps": 2,
           "meta_batch_size": 2, "meta_iterations": 3},
  "data": {"synth": {"n_clusters": 2, "users_per_cluster": 6,
                     "items_per_cluster": 8, "interactions_per_user": 12}},
  "static_prompt": {"iterations": 3, "batch_size": 8},
  "ablation": {"values": [1, 2]}
})";

struct CliRun {
  int code = 0;
  std::string out;
  std::string err;
};

CliRun cli(std::vector<std::string> args) {
  std::ostringstream out;
  std::ostringstream err;
  const int code = cli_main(std::move(args), out, err);
  return {code, out.str(), err.str()};
}

std::string slurp(const std::string& path) {
  std::ifstream in(path);
  return {std::istreambuf_iterator<char>(in), {}};
}

// CSV text with the named columns blanked, for comparisons that ignore
// wall-clock measurements. Comment lines pass through.
std::string without_columns(const std::string& csv, const std::vector<std::string>& drop) {
  std::istringstream in(csv);
  std::string line;
  std::string out;
  std::vector<std::size_t> drop_idx;
  bool header = true;
  while (std::getline(in, line)) {
    if (line.starts_with("#")) {
      out += line + "\n";
      continue;
    }
    std::vector<std::string> cells;
    std::stringstream row(line);
    for (std::string cell; std::getline(row, cell, ',');) cells.push_back(cell);
    if (header) {
      for (std::size_t i = 0; i < cells.size(); ++i) {
        if (std::find(drop.begin(), drop.end(), cells[i]) != drop.end()) drop_idx.push_back(i);
      }
      header = false;
    }
    for (std::size_t i : drop_idx) {
      if (i < cells.size()) cells[i] = "*";
    }
    for (const auto& c : cells) out += c + ",";
    out += "\n";
  }
  return out;
}

class CliTest : public ::testing::Test {
 protected:
  void SetUp() override {
    std::ofstream(dir.file("c.json")) << kTinyConfig;
  }
  std::string path(const std::string& name) const { return dir.file(name); }
  std::string config() const { return path("c.json"); }

  TempDir dir{"cli"};
};

TEST_F(CliTest, UsageErrorsExitOne) {
  EXPECT_EQ(cli({}).code, kExitUsage);
  EXPECT_EQ(cli({"frobnicate"}).code, kExitUsage);
  const CliRun r = cli({"adapt", "--prompt", path("missing.ckpt")});
  EXPECT_EQ(r.code, kExitUsage);
  EXPECT_FALSE(r.err.empty());
  EXPECT_EQ(cli({"--help"}).code, kExitOk);
}

TEST_F(CliTest, RuntimeFailuresExitTwo) {
  std::ofstream(path("bad.json")) << R"({"meta": {"inner_steps": 0}})";
  const CliRun r = cli({"gen-synth", "--config", path("bad.json"), "--out", path("g")});
  EXPECT_EQ(r.code, kExitFailure);
  EXPECT_NE(r.err.find("inner_steps"), std::string::npos) << r.err;

  std::ofstream(path("junk.ckpt")) << "junk";
  const CliRun e = cli({"evaluate", "--config", config(), "--prompt", path("junk.ckpt"), "--data",
                     path("c.json")});
  EXPECT_EQ(e.code, kExitFailure);
}

TEST_F(CliTest, PipelineIsReproducibleAndRoundTrips) {
  ASSERT_EQ(cli({"gen-synth", "--config", config(), "--out", path("data")}).code, kExitOk);
  const auto train = path("data/train.tsv");
  const auto test = path("data/test.tsv");
  const auto all = path("data/interactions.tsv");
  EXPECT_TRUE(slurp(train).starts_with("# config_digest="));

  for (const char* run : {"r1", "r2"}) {
    const CliRun r = cli({"train-meta", "--config", config(), "--data", train, "--items", all,
                       "--out", path(run)});
    ASSERT_EQ(r.code, kExitOk) << r.err;
    const CliRun e = cli({"evaluate", "--config", config(), "--prompt",
                       path(std::string(run) + "/prompt.ckpt"), "--data", test, "--out",
                       path(std::string(run) + "/metrics.csv")});
    ASSERT_EQ(e.code, kExitOk) << e.err;
  }
  EXPECT_EQ(slurp(path("r1/prompt.ckpt")), slurp(path("r2/prompt.ckpt")));
  EXPECT_EQ(without_columns(slurp(path("r1/train_log.csv")), {"wall_ms"}),
            without_columns(slurp(path("r2/train_log.csv")), {"wall_ms"}));
  const std::vector<std::string> timing = {"mean_adapt_ms", "p95_adapt_ms", "mean_rank_ms"};
  EXPECT_EQ(without_columns(slurp(path("r1/metrics.csv")), timing),
            without_columns(slurp(path("r2/metrics.csv")), timing));

  // Worker count changes nothing but speed.
  ASSERT_EQ(cli({"train-meta", "--config", config(), "--workers", "3", "--data", train,
                 "--items", all, "--out", path("r3")})
                .code,
            kExitOk);
  EXPECT_EQ(load_checkpoint(path("r3/prompt.ckpt")).arrays,
            load_checkpoint(path("r1/prompt.ckpt")).arrays);

  // One held-out user: inline adaptation vs adapt, export, evaluate.
  const auto records = load_interactions(test);
  ASSERT_FALSE(records.empty());
  const std::string user = records.front().user_id;
  std::vector<InteractionRecord> sup;
  std::vector<InteractionRecord> qry;
  for (const auto& r : records) {
    if (r.user_id != user) continue;
    (sup.size() < 5 ? sup : qry).push_back(r);
  }
  save_interactions(path("sup.tsv"), sup);
  save_interactions(path("qry.tsv"), qry);

  const CliRun inline_run = cli({"evaluate", "--config", config(), "--prompt",
                              path("r1/prompt.ckpt"), "--support", path("sup.tsv"), "--data",
                              path("qry.tsv"), "--out", path("inline.csv")});
  ASSERT_EQ(inline_run.code, kExitOk) << inline_run.err;
  const CliRun adapt = cli({"adapt", "--config", config(), "--prompt", path("r1/prompt.ckpt"),
                         "--support", path("sup.tsv"), "--export", path("u.ckpt")});
  ASSERT_EQ(adapt.code, kExitOk) << adapt.err;
  const CliRun exported = cli({"evaluate", "--prompt", path("u.ckpt"), "--data",
                            path("qry.tsv"), "--out", path("exported.csv")});
  ASSERT_EQ(exported.code, kExitOk) << exported.err;
  EXPECT_EQ(without_columns(slurp(path("inline.csv")), timing),
            without_columns(slurp(path("exported.csv")), timing));

  // An adapted prompt cannot be adapted again.
  EXPECT_EQ(cli({"adapt", "--prompt", path("u.ckpt"), "--support", path("sup.tsv"), "--export",
                 path("again.ckpt")})
                .code,
            kExitFailure);
}

TEST_F(CliTest, MismatchedConfigIsRefused) {
  ASSERT_EQ(cli({"train-meta", "--config", config(), "--out", path("r")}).code, kExitOk);
  ASSERT_EQ(cli({"gen-synth", "--config", config(), "--out", path("data")}).code, kExitOk);
  const CliRun r = cli({"evaluate", "--config", config(), "--seed", "9", "--prompt",
                     path("r/prompt.ckpt"), "--data", path("data/test.tsv")});
  EXPECT_EQ(r.code, kExitFailure);
  EXPECT_NE(r.err.find("refusing to mix"), std::string::npos) << r.err;
}

TEST_F(CliTest, BaselineModesNeedMatchingTrainer) {
  ASSERT_EQ(cli({"gen-synth", "--config", config(), "--out", path("data")}).code, kExitOk);
  ASSERT_EQ(cli({"train-meta", "--config", config(), "--out", path("m")}).code, kExitOk);
  ASSERT_EQ(cli({"train-meta", "--config", config(), "--static", "--out", path("s")}).code,
            kExitOk);
  const auto eval = [&](const std::string& prompt, const std::string& mode) {
    return cli({"evaluate", "--config", config(), "--prompt", prompt, "--data",
                path("data/test.tsv"), "--mode", mode, "--out", path(mode + ".csv")})
        .code;
  };
  EXPECT_EQ(eval(path("m/prompt.ckpt"), "zero_shot"), kExitOk);
  EXPECT_EQ(eval(path("s/prompt.ckpt"), "static_prompt"), kExitOk);
  EXPECT_EQ(eval(path("m/prompt.ckpt"), "static_prompt"), kExitFailure);
  EXPECT_EQ(eval(path("s/prompt.ckpt"), "meta"), kExitFailure);
}

TEST_F(CliTest, BenchAndAblateWriteOneRowPerSetting) {
  ASSERT_EQ(cli({"train-meta", "--config", config(), "--out", path("m")}).code, kExitOk);
  ASSERT_EQ(cli({"gen-synth", "--config", config(), "--out", path("data")}).code, kExitOk);
  const CliRun b = cli({"bench", "--config", config(), "--prompt", path("m/prompt.ckpt"),
                     "--data", path("data/test.tsv"), "--inner-steps", "1", "3",
                     "--out", path("bench.csv")});
  ASSERT_EQ(b.code, kExitOk) << b.err;
  std::istringstream bench(slurp(path("bench.csv")));
  int rows = 0;
  for (std::string line; std::getline(bench, line);) rows += !line.starts_with("#");
  EXPECT_EQ(rows, 3);  // header + two step counts

  const CliRun a = cli({"ablate", "--config", config(), "--axis", "inner_steps", "--values",
                     "1,2", "--out", path("ab.csv")});
  ASSERT_EQ(a.code, kExitOk) << a.err;
  std::istringstream ablation(slurp(path("ab.csv")));
  rows = 0;
  for (std::string line; std::getline(ablation, line);) rows += !line.starts_with("#");
  EXPECT_EQ(rows, 3);
}

}  // namespace
