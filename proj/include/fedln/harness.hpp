#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "fedln/fed_engine.hpp"
#include "fedln/scenario.hpp"

namespace fedln {

/// Materialized inputs for a scenario: clean splits, partition, profiles.
struct PreparedScenario {
  EmbeddingDataset train;
  EmbeddingDataset test;
  PartitionMap partition;
  std::vector<ClientNoiseProfile> profiles;
};

PreparedScenario prepare(const Scenario& s);
ExperimentInputs to_inputs(const Scenario& s, PreparedScenario prepared);

/// gen-data: train.flne and test.flne (synthetic sources only).
void gen_data(const Scenario& s, const std::filesystem::path& out);

/// inject-noise: train_noisy.flne, test.flne, partition.json and one
/// client_<id>_matrix.csv per client (the realized empirical matrix is
/// written as client_<id>_realized.csv when every class is present).
void inject_noise(const Scenario& s, const std::filesystem::path& out);

/// estimate: one estimation round (after warm-up for the confidence method)
/// on the noisy, uncorrected data. Writes estimation.csv and
/// estimation_summary.json. Returns the summary document.
nlohmann::json estimate(const Scenario& s, const std::filesystem::path& out);

/// train: rounds.csv, summary.json and model.json. `prefix` is prepended to
/// every file name.
nlohmann::json train(const Scenario& s, const std::filesystem::path& out, const std::string& prefix = "");

/// Summary document for a finished experiment; embeds the resolved scenario.
nlohmann::json summary_json(const Scenario& s, const ExperimentSummary& summary);

/// report: scans `in` for *rounds.csv files and writes long-format rows
/// scenario_id,round,metric,value.
void report(const std::filesystem::path& in, const std::filesystem::path& out_file);

/// Named intervention bundles used by sweep: fedavg, nnc, akd, na_fedavg,
/// fedln (all three), or a '+'-joined combination such as nnc+na_fedavg.
void apply_strategy(FederatedConfig& config, const std::string& name);

struct SweepCell {
  double noise_level = 0.0;
  std::string strategy;
  std::uint64_t seed = 0;

  std::string id(const std::string& scenario_name) const;
};

std::vector<SweepCell> sweep_grid(const std::vector<double>& levels, const std::vector<std::string>& strategies,
                                  const std::vector<std::uint64_t>& seeds);

/// Runs every cell into `out`; files are named <scenario>_nl<level>_<strategy>_seed<seed>.*.
/// `parallel` runs cells on separate threads and produces the same bytes.
std::vector<std::filesystem::path> sweep(const Scenario& base, const std::vector<SweepCell>& cells,
                                         const std::filesystem::path& out, bool parallel = false);

/// Writes `text` to `path`, replacing any previous content.
void write_text(const std::filesystem::path& path, const std::string& text);

}  // namespace fedln
