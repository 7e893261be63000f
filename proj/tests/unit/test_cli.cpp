#include <gtest/gtest.h>

#include <sys/wait.h>

#include <cstdlib>

#include "fedln/scenario.hpp"
#include "tmpdir.hpp"

namespace {

const char* kScenario = R"({
  "name": "cli",
  "seed": 1,
  "data": {"synthetic": {"num_classes": 4, "dim": 6, "per_class_count": 40}},
  "noise": {"noise_level": 0.4},
  "model": {"hidden_layers": [8]},
  "federated": {"num_clients": 4, "rounds": 3, "k": 5}
})";

int run(const std::string& args, const TempDir& dir) {
  const std::string cmd = std::string(FEDLN_CLI_PATH) + " " + args + " >" + (dir / "stdout.txt").string() +
                          " 2>" + (dir / "stderr.txt").string();
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

}  // namespace

TEST(Cli, TrainTwiceGivesIdenticalRoundCsv) {
  TempDir dir;
  spit(dir / "s.json", kScenario);
  ASSERT_EQ(run("train --config " + (dir / "s.json").string() + " --out " + (dir / "a").string(), dir), 0);
  ASSERT_EQ(run("train --config " + (dir / "s.json").string() + " --out " + (dir / "b").string(), dir), 0);
  EXPECT_EQ(slurp(dir / "a/rounds.csv"), slurp(dir / "b/rounds.csv"));
  EXPECT_FALSE(slurp(dir / "a/rounds.csv").empty());
}

TEST(Cli, EveryPipelineSubcommand) {
  TempDir dir;
  spit(dir / "s.json", kScenario);
  const std::string cfg = " --config " + (dir / "s.json").string() + " --out " + (dir / "o").string();
  EXPECT_EQ(run("gen-data" + cfg, dir), 0);
  EXPECT_TRUE(std::filesystem::exists(dir / "o/train.flne"));
  EXPECT_EQ(run("inject-noise" + cfg, dir), 0);
  EXPECT_TRUE(std::filesystem::exists(dir / "o/client_0_matrix.csv"));
  EXPECT_EQ(run("estimate --method knn" + cfg, dir), 0);
  EXPECT_TRUE(std::filesystem::exists(dir / "o/estimation.csv"));
  EXPECT_EQ(run("estimate --method confidence" + cfg, dir), 0);
  EXPECT_NE(slurp(dir / "o/estimation.csv").find(",confidence,"), std::string::npos);
  EXPECT_EQ(run("sweep --grid nl=0,0.2,0.4,0.6 --strategies fedavg,fedln" + cfg, dir), 0);
  std::size_t summaries = 0;
  for (const auto& e : std::filesystem::directory_iterator(dir / "o"))
    summaries += e.path().filename().string().ends_with(".summary.json");
  EXPECT_EQ(summaries, 8u);
  EXPECT_EQ(run("report --in " + (dir / "o").string() + " --out " + (dir / "long.csv").string(), dir), 0);
  EXPECT_EQ(slurp(dir / "long.csv").substr(0, 30), "scenario_id,round,metric,value");
}

TEST(Cli, UsageErrorsExitTwoWithUsageOnStderr) {
  TempDir dir;
  EXPECT_EQ(run("", dir), 2);
  EXPECT_EQ(run("frobnicate", dir), 2);
  EXPECT_NE(slurp(dir / "stderr.txt").find("Usage"), std::string::npos);
  spit(dir / "s.json", kScenario);
  EXPECT_EQ(run("train --config " + (dir / "s.json").string() + " --bogus", dir), 2);
  EXPECT_EQ(run("estimate --method magic --config " + (dir / "s.json").string(), dir), 2);
  EXPECT_EQ(run("train --config " + (dir / "missing.json").string(), dir), 2);
}

TEST(Cli, ConfigErrorsExitTwo) {
  TempDir dir;
  spit(dir / "bad.json", R"({"noise": {"noise_level": 1.5}})");
  EXPECT_EQ(run("train --config " + (dir / "bad.json").string() + " --out " + dir.path.string(), dir), 2);
  EXPECT_NE(slurp(dir / "stderr.txt").find("/noise/noise_level"), std::string::npos);
  spit(dir / "s.json", kScenario);
  EXPECT_EQ(run("sweep --grid nl=0,abc --config " + (dir / "s.json").string(), dir), 2);
}

TEST(Cli, RuntimeErrorsExitOne) {
  TempDir dir;
  spit(dir / "train.flne", "FLNE but not really");
  spit(dir / "test.flne", "FLNE but not really");
  spit(dir / "s.json", R"({"data": {"train_path": "train.flne", "test_path": "test.flne"}})");
  EXPECT_EQ(run("train --config " + (dir / "s.json").string() + " --out " + dir.path.string(), dir), 1);
  EXPECT_NE(slurp(dir / "stderr.txt").find("FLNE"), std::string::npos);
}

TEST(Cli, SeedOverrideIsEchoed) {
  TempDir dir;
  spit(dir / "s.json", kScenario);
  setenv("FEDLN_SEED", "31", 1);
  const int rc = run("train --config " + (dir / "s.json").string() + " --out " + dir.path.string(), dir);
  unsetenv("FEDLN_SEED");
  ASSERT_EQ(rc, 0);
  const auto summary = slurp(dir / "summary.json");
  EXPECT_NE(summary.find("\"seed_from_env\": true"), std::string::npos);
  EXPECT_NE(summary.find("\"seed\": 31"), std::string::npos);
}

TEST(Presets, AllParse) {
  std::size_t n = 0;
  for (const auto& e : std::filesystem::directory_iterator(FEDLN_CONFIG_DIR)) {
    EXPECT_NO_THROW(fedln::load_scenario(e.path())) << e.path();
    ++n;
  }
  EXPECT_GE(n, 8u);
}

TEST(Presets, KnnEstimateOnModerateNoise) {
  TempDir dir;
  const std::string cfg = std::string(FEDLN_CONFIG_DIR) + "/uniform_nl04.json";
  ASSERT_EQ(run("estimate --method knn --config " + cfg + " --out " + dir.path.string(), dir), 0);
  const auto doc = nlohmann::json::parse(slurp(dir / "estimation_summary.json"));
  EXPECT_LE(doc["estimation_mae"].get<double>(), 0.05);
}
