#include <gtest/gtest.h>

#include <fstream>

#include "fedln/harness.hpp"
#include "tmpdir.hpp"

using namespace fedln;
using nlohmann::json;

namespace {

Scenario tiny_scenario(double noise = 0.4) {
  return parse_scenario(json{{"name", "tiny"},
                             {"seed", 2},
                             {"data", {{"synthetic", {{"num_classes", 4}, {"dim", 6}, {"per_class_count", 40}}}}},
                             {"noise", {{"noise_level", noise}}},
                             {"model", {{"hidden_layers", {8}}}},
                             {"federated", {{"num_clients", 4}, {"rounds", 3}, {"k", 5}}}});
}

std::vector<std::string> list(const std::filesystem::path& dir) {
  std::vector<std::string> names;
  for (const auto& e : std::filesystem::directory_iterator(dir)) names.push_back(e.path().filename().string());
  std::sort(names.begin(), names.end());
  return names;
}

}  // namespace

TEST(Harness, TrainIsIdempotentAndSelfDescribing) {
  TempDir dir;
  const auto s = tiny_scenario();
  const auto doc = train(s, dir / "a");
  train(s, dir / "b");
  for (const char* f : {"rounds.csv", "summary.json", "model.json"})
    EXPECT_EQ(slurp(dir / "a" / f), slurp(dir / "b" / f)) << f;
  const auto again = train(s, dir / "a");
  EXPECT_EQ(again, doc);

  const auto echoed = parse_scenario(doc["scenario"]);
  EXPECT_EQ(to_json(echoed), to_json(s));
  EXPECT_EQ(doc["clients"].size(), 4u);
  EXPECT_TRUE(doc.contains("final_accuracy"));
  EXPECT_FALSE(slurp(dir / "a" / "summary.json").find("wall") != std::string::npos);
  EXPECT_EQ(from_checkpoint(json::parse(slurp(dir / "a" / "model.json"))).layer_sizes,
            (std::vector<int>{6, 8, 4}));
}

TEST(Harness, EchoedScenarioReproducesRun) {
  TempDir dir;
  const auto doc = train(tiny_scenario(), dir / "a");
  const auto replay = train(parse_scenario(doc["scenario"]), dir / "b");
  EXPECT_EQ(slurp(dir / "a" / "rounds.csv"), slurp(dir / "b" / "rounds.csv"));
}

TEST(Harness, GenDataAndInjectNoise) {
  TempDir dir;
  const auto s = tiny_scenario();
  gen_data(s, dir.path);
  const auto train_ds = load_dataset(dir / "train.flne");
  EXPECT_EQ(train_ds.size(), 160u);
  EXPECT_EQ(load_dataset(dir / "test.flne", Split::test).size(), 32u);

  inject_noise(s, dir / "noisy");
  const auto noisy = load_dataset(dir / "noisy" / "train_noisy.flne");
  EXPECT_EQ(noisy.true_labels(), train_ds.true_labels());
  EXPECT_NE(noisy.observed_labels(), train_ds.observed_labels());
  std::ifstream q(dir / "noisy" / "client_2_matrix.csv");
  EXPECT_NEAR(measure_noise_level(read_matrix_csv(q)), 0.4, 1e-12);
  const auto part = json::parse(slurp(dir / "noisy" / "partition.json"));
  EXPECT_EQ(part.size(), 4u);
}

TEST(Harness, FileSourcedScenarioMatchesSynthetic) {
  TempDir dir;
  const auto s = tiny_scenario();
  gen_data(s, dir.path);
  auto doc = to_json(s);
  doc["data"] = {{"train_path", "train.flne"}, {"test_path", "test.flne"}};
  spit(dir / "file.json", doc.dump());
  const auto from_file = load_scenario(dir / "file.json");
  train(s, dir / "syn");
  train(from_file, dir / "file");
  EXPECT_EQ(slurp(dir / "syn" / "rounds.csv"), slurp(dir / "file" / "rounds.csv"));
}

TEST(Harness, EstimateWritesCsvAndMae) {
  TempDir dir;
  auto s = tiny_scenario();
  const auto doc = estimate(s, dir.path);
  EXPECT_TRUE(doc["estimation_mae"].is_number());
  const auto csv = slurp(dir / "estimation.csv");
  EXPECT_EQ(csv.substr(0, csv.find('\n')), "client_id,method,n_hat,sample_count,flagged_count");
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 5);
  s.federated.estimation_method.reset();
  EXPECT_THROW(estimate(s, dir.path), ConfigError);
}

TEST(Harness, StrategyNames) {
  FederatedConfig c;
  c.estimation_method.reset();
  apply_strategy(c, "fedln");
  EXPECT_EQ(c.init_correction, InitCorrection::nnc);
  EXPECT_EQ(c.local_loss, LocalLoss::akd);
  EXPECT_EQ(c.strategy, Strategy::na_fedavg);
  EXPECT_TRUE(c.estimation_method.has_value());
  apply_strategy(c, "nnc+na_fedavg");
  EXPECT_EQ(c.local_loss, LocalLoss::ce);
  EXPECT_EQ(c.strategy, Strategy::na_fedavg);
  apply_strategy(c, "fedavg");
  EXPECT_EQ(c.init_correction, InitCorrection::none);
  EXPECT_THROW(apply_strategy(c, "krum"), ConfigError);
}

TEST(Harness, SweepNamesIsolationAndParallelBytes) {
  TempDir dir;
  const auto s = tiny_scenario();
  const auto cells = sweep_grid({0.0, 0.2, 0.4, 0.6}, {"fedavg", "fedln"}, {2});
  ASSERT_EQ(cells.size(), 8u);
  const auto files = sweep(s, cells, dir / "seq");
  ASSERT_EQ(files.size(), 8u);
  std::size_t summaries = 0;
  for (const auto& n : list(dir / "seq")) summaries += n.ends_with(".summary.json");
  EXPECT_EQ(summaries, 8u);
  EXPECT_TRUE(std::filesystem::exists(dir / "seq" / "tiny_nl0.4_fedln_seed2.summary.json"));

  sweep(s, cells, dir / "par", true);
  ASSERT_EQ(list(dir / "seq"), list(dir / "par"));
  for (const auto& n : list(dir / "seq")) EXPECT_EQ(slurp(dir / "seq" / n), slurp(dir / "par" / n)) << n;

  const auto victim = dir / "seq" / "tiny_nl0.2_fedavg_seed2.rounds.csv";
  const auto before = slurp(victim);
  std::filesystem::remove(victim);
  sweep(s, {cells[2]}, dir / "seq");
  EXPECT_EQ(slurp(victim), before);
}

TEST(Harness, SweepRejectsBadCellsBeforeRunning) {
  TempDir dir;
  EXPECT_THROW(sweep(tiny_scenario(), sweep_grid({0.2, 1.5}, {"fedavg"}, {1}), dir / "x"), ConfigError);
  EXPECT_FALSE(std::filesystem::exists(dir / "x" / "tiny_nl0.2_fedavg_seed1.summary.json"));
}

TEST(Harness, ReportIsLongFormat) {
  TempDir dir;
  sweep(tiny_scenario(), sweep_grid({0.0}, {"fedavg", "nnc"}, {1}), dir / "runs");
  report(dir / "runs", dir / "report.csv");
  const auto text = slurp(dir / "report.csv");
  EXPECT_EQ(text.substr(0, text.find('\n')), "scenario_id,round,metric,value");
  EXPECT_NE(text.find("tiny_nl0_nnc_seed1,3,test_accuracy,"), std::string::npos);
  EXPECT_EQ(std::count(text.begin(), text.end(), '\n'), 1 + 2 * 3 * 2);
  EXPECT_THROW(report(dir / "nowhere", dir / "r.csv"), ConfigError);
}
