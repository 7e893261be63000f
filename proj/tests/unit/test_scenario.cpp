#include <gtest/gtest.h>

#include <cstdlib>

#include "fedln/scenario.hpp"
#include "tmpdir.hpp"

using namespace fedln;
using nlohmann::json;

namespace {

std::string config_error(const json& doc, const std::filesystem::path& base = {}) {
  try {
    parse_scenario(doc, base);
  } catch (const ConfigError& e) {
    return e.what();
  }
  return "";
}

struct EnvGuard {
  explicit EnvGuard(const char* value) { setenv("FEDLN_SEED", value, 1); }
  ~EnvGuard() { unsetenv("FEDLN_SEED"); }
};

}  // namespace

TEST(Scenario, MinimalDocumentGetsDefaults) {
  const auto s = parse_scenario(json::object());
  EXPECT_EQ(s.federated.k, 10);
  EXPECT_EQ(s.federated.tau_nnc, 0.6);
  EXPECT_EQ(s.federated.temperature, 3.0);
  EXPECT_EQ(s.federated.warmup_rounds, 20);
  EXPECT_EQ(s.federated.num_clients, 10);
  EXPECT_TRUE(std::holds_alternative<SyntheticSpec>(s.data));
  EXPECT_FALSE(s.seed_from_env);
}

TEST(Scenario, OutOfRangeValueNamesPointer) {
  const auto msg = config_error(json{{"noise", {{"noise_level", 1.5}}}});
  EXPECT_EQ(msg.rfind("/noise/noise_level", 0), 0u) << msg;
}

TEST(Scenario, UnknownKeysRejectedAtAnyDepth) {
  EXPECT_EQ(config_error(json{{"nosie", json::object()}}).rfind("/nosie", 0), 0u);
  EXPECT_EQ(config_error(json{{"federated", {{"rouns", 3}}}}).rfind("/federated/rouns", 0), 0u);
  EXPECT_EQ(config_error(json{{"data", {{"synthetic", {{"dims", 3}}}}}}).rfind("/data/synthetic/dims", 0), 0u);
}

TEST(Scenario, WrongTypesAndEnums) {
  EXPECT_NE(config_error(json{{"federated", {{"k", "ten"}}}}).find("/federated/k"), std::string::npos);
  EXPECT_NE(config_error(json{{"federated", {{"k", 2.5}}}}).find("integer"), std::string::npos);
  EXPECT_NE(config_error(json{{"federated", {{"strategy", "median"}}}}).find("/federated/strategy"), std::string::npos);
  EXPECT_NE(config_error(json{{"seed", -1}}).find("/seed"), std::string::npos);
  EXPECT_NE(config_error(json{{"model", {{"hidden_layers", {8, 0}}}}}).find("/model/hidden_layers/1"),
            std::string::npos);
}

TEST(Scenario, CrossFieldContradictions) {
  const auto msg = config_error(json{{"federated", {{"strategy", "na_fedavg"}, {"estimation_method", "none"}}}});
  EXPECT_NE(msg.find("/federated"), std::string::npos);
  EXPECT_NE(msg.find("estimation"), std::string::npos);
  EXPECT_NE(config_error(json{{"federated", {{"num_clients", 3}}}, {"noise", {{"per_client_levels", {0.1, 0.2}}}}})
                .find("/noise/per_client_levels"),
            std::string::npos);
}

TEST(Scenario, ResolvedFormRoundTrips) {
  const json doc{{"name", "rt"},
                 {"seed", 12},
                 {"partition", {{"kind", "dirichlet"}, {"alpha", 0.3}}},
                 {"noise", {{"noise_level", 0.4}, {"structure", "sparse_random"}, {"noise_sparsity", 0.5}}},
                 {"federated", {{"strategy", "na_fedavg"}, {"estimation_method", "confidence"}, {"rounds", 30}}},
                 {"model", {{"hidden_layers", {16, 8}}}},
                 {"training", {{"learning_rate", 0.1}}}};
  const auto s = parse_scenario(doc);
  const auto resolved = to_json(s);
  EXPECT_EQ(to_json(parse_scenario(resolved)), resolved);
  EXPECT_EQ(resolved["federated"]["k"], 10);
  EXPECT_EQ(resolved["model"]["hidden_layers"], json({16, 8}));
  EXPECT_EQ(s.federated.seed, 12u);
}

TEST(Scenario, FilePathsResolveAgainstScenarioDirectory) {
  TempDir dir;
  std::filesystem::create_directories(dir / "data");
  spit(dir / "data/train.csv", "f0,f1,label\n1,2,0\n");
  spit(dir / "data/test.csv", "f0,f1,label\n1,2,0\n");
  spit(dir / "s.json", R"({"data": {"train_path": "data/train.csv", "test_path": "data/test.csv"}})");
  const auto s = load_scenario(dir / "s.json");
  EXPECT_EQ(std::get<FileSource>(s.data).train_path, dir / "data/train.csv");

  spit(dir / "bad.json", R"({"data": {"train_path": "data/train.csv", "test_path": "missing.csv"}})");
  try {
    load_scenario(dir / "bad.json");
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_EQ(std::string(e.what()).rfind("/data/test_path", 0), 0u) << e.what();
  }
}

TEST(Scenario, MalformedJsonIsConfigError) {
  TempDir dir;
  spit(dir / "s.json", "{\"seed\": ");
  EXPECT_THROW(load_scenario(dir / "s.json"), ConfigError);
}

TEST(Scenario, SeedOverrideFromEnvironment) {
  TempDir dir;
  spit(dir / "s.json", R"({"seed": 4})");
  {
    EnvGuard env("99");
    const auto s = load_scenario(dir / "s.json");
    EXPECT_EQ(s.seed, 99u);
    EXPECT_EQ(s.federated.seed, 99u);
    EXPECT_TRUE(s.seed_from_env);
  }
  {
    EnvGuard env("x1");
    EXPECT_THROW(load_scenario(dir / "s.json"), ConfigError);
  }
  EXPECT_EQ(load_scenario(dir / "s.json").seed, 4u);
}

TEST(Scenario, NoisyClientFraction) {
  auto s = parse_scenario(json{{"seed", 3}, {"noise", {{"noise_level", 0.6}, {"noisy_client_fraction", 0.5}}}});
  const auto levels = client_noise_levels(s);
  ASSERT_EQ(levels.size(), 10u);
  EXPECT_EQ(std::count(levels.begin(), levels.end(), 0.6), 5);
  EXPECT_EQ(std::count(levels.begin(), levels.end(), 0.0), 5);
  EXPECT_EQ(levels, client_noise_levels(s));

  s.noise.noisy_client_fraction = 0.25;  // 2.5 clients rounds to 3
  const auto l3 = client_noise_levels(s);
  EXPECT_EQ(std::count(l3.begin(), l3.end(), 0.6), 3);
}

TEST(Scenario, PerClientLevelsAndProfiles) {
  const auto s = parse_scenario(
      json{{"federated", {{"num_clients", 3}}}, {"noise", {{"per_client_levels", {0.0, 0.2, 0.6}}}}});
  EXPECT_EQ(client_noise_levels(s), (std::vector<double>{0.0, 0.2, 0.6}));
  const auto profiles = client_profiles(s, 10);
  ASSERT_EQ(profiles.size(), 3u);
  for (int m = 0; m < 3; ++m) {
    EXPECT_EQ(profiles[m].client_id, m);
    EXPECT_NEAR(measure_noise_level(profiles[m].matrix), s.noise.per_client_levels[m], 1e-12);
  }
}

TEST(Scenario, StageSeedsDiffer) {
  const auto s = parse_scenario(json{{"seed", 8}});
  EXPECT_NE(partition_seed(s), noise_seed(s));
  auto t = s;
  t.seed = 9;
  EXPECT_NE(partition_seed(s), partition_seed(t));
}
