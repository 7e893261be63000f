#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include <nlohmann/json.hpp>

#include "fedln/dataset.hpp"
#include "fedln/fed_engine.hpp"
#include "fedln/noise_model.hpp"

namespace fedln {

struct FileSource {
  std::filesystem::path train_path;
  std::filesystem::path test_path;
};

struct PartitionPlan {
  enum class Kind { iid, dirichlet } kind = Kind::iid;
  double alpha = 0.5;
};

struct NoisePlan {
  double noise_level = 0.0;
  double noise_sparsity = 0.0;
  NoiseStructure structure = NoiseStructure::uniform;
  double noisy_client_fraction = 1.0;
  /// Overrides noise_level per client id when non-empty.
  std::vector<double> per_client_levels;
};

/// A fully resolved experiment description.
struct Scenario {
  std::string name = "scenario";
  std::uint64_t seed = 0;
  bool seed_from_env = false;
  std::variant<SyntheticSpec, FileSource> data = SyntheticSpec{};
  PartitionPlan partition;
  NoisePlan noise;
  FederatedConfig federated;
};

/// Strict parse: unknown keys, wrong types and out-of-range values raise
/// ConfigError prefixed with the JSON pointer of the offending field.
/// Relative data paths resolve against `base_dir`.
Scenario parse_scenario(const nlohmann::json& doc, const std::filesystem::path& base_dir = {});
/// Reads and parses a file, then applies the FEDLN_SEED override if set.
Scenario load_scenario(const std::filesystem::path& path);

/// Resolved form with every default filled in; parse_scenario accepts it back.
nlohmann::json to_json(const Scenario& s);

/// Applies FEDLN_SEED from the environment when present.
void apply_seed_override(Scenario& s);

/// Derived seeds for the pipeline stages.
std::uint64_t partition_seed(const Scenario& s);
std::uint64_t noise_seed(const Scenario& s);

/// Noise level assigned to every client id. The noisy subset has
/// round(fraction * M) members chosen from the scenario seed.
std::vector<double> client_noise_levels(const Scenario& s);
std::vector<ClientNoiseProfile> client_profiles(const Scenario& s, int num_classes);

}  // namespace fedln
