#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "fedln/dataset.hpp"
#include "fedln/knn.hpp"
#include "fedln/message_trace.hpp"
#include "fedln/model.hpp"
#include "fedln/noise_estimation.hpp"
#include "fedln/noise_model.hpp"

namespace fedln {

enum class Strategy { fedavg, na_fedavg };
enum class InitCorrection { none, nnc };
enum class LocalLoss { ce, akd };

std::string to_string(Strategy s);
std::string to_string(InitCorrection c);
std::string to_string(LocalLoss l);
Strategy strategy_from_string(const std::string& s);
InitCorrection init_correction_from_string(const std::string& s);
LocalLoss local_loss_from_string(const std::string& s);

struct FederatedConfig {
  int num_clients = 10;
  double participation_fraction = 1.0;
  int rounds = 50;
  /// Shared local-training settings; train.seed is replaced per client and round.
  TrainConfig train{0.05, 32, 2, 0.0, 0};
  std::vector<int> hidden_layers{64};
  Strategy strategy = Strategy::fedavg;
  InitCorrection init_correction = InitCorrection::none;
  LocalLoss local_loss = LocalLoss::ce;
  /// Empty disables the estimation round; AKD and NA-FedAvg require one.
  std::optional<EstimationMethod> estimation_method = EstimationMethod::knn;
  int k = 10;
  KnnMetric metric = KnnMetric::euclidean;
  double tau_nnc = 0.6;
  /// Correction passes; stops early once a pass changes nothing.
  int nnc_passes = 10;
  double beta_max = 0.7;
  double temperature = 3.0;
  /// FedAvg rounds run before a confidence-based estimation round.
  int warmup_rounds = 20;
  std::uint64_t seed = 0;
  /// Threads used for client work inside a round; never changes results.
  int workers = 1;

  /// Throws ConfigError on contradictions.
  void validate() const;
};

struct ClientState {
  int client_id = 0;
  ClientData data;
  std::optional<double> n_hat;
};

struct GlobalModel {
  Mlp model;
  int round = 0;
};

/// What a client returns to the server after local training.
struct ClientUpdate {
  int client_id = 0;
  Mlp model;
  std::size_t sample_count = 0;
  std::optional<double> n_hat;
};

struct Aggregate {
  Mlp model;
  /// One weight per update, in update order.
  std::vector<double> weights;
  bool fallback = false;
};

/// w_m = N_m / sum N.
std::vector<double> fedavg_weights(std::span<const std::size_t> sizes);
/// w_m = N_m (1 - n_m) / sum N_j (1 - n_j); falls back to FedAvg weights
/// (and sets *fallback) when the denominator is below 1e-12.
std::vector<double> na_fedavg_weights(std::span<const std::size_t> sizes, std::span<const double> n_hats,
                                      bool* fallback = nullptr);
/// Parameter-wise sum of weights[m] * models[m], accumulated in order.
Mlp weighted_average(std::span<const Mlp* const> models, std::span<const double> weights);

Mlp fedavg_aggregate(std::span<const ClientUpdate> updates);
Aggregate na_fedavg_aggregate(std::span<const ClientUpdate> updates);

struct NncStats {
  std::size_t total = 0;
  std::size_t flagged = 0;
  std::size_t corrected = 0;
  /// Evaluation-only metrics, present when true labels were supplied.
  std::optional<double> label_accuracy_before;
  std::optional<double> label_accuracy_after;
  std::optional<double> precision;
  std::optional<double> recall;
};

struct NncResult {
  ClientData data;
  NncStats stats;
};

/// Replaces the label of every kNN-flagged sample whose vote agreement is at
/// least `tau` by the vote. With passes > 1 the procedure is repeated on the
/// corrected labels until nothing changes or the pass budget is spent.
/// `oracle` (true labels) is used for the statistics only.
NncResult nnc_apply(const ClientData& data, int k, double tau, KnnMetric metric = KnnMetric::euclidean,
                    int passes = 1, std::span<const ClassIndex> oracle = {});

/// beta = min(n_hat, beta_max) with the current global model as teacher.
LossMix akd_mix(double n_hat, double beta_max, double temperature, const Mlp& teacher);

/// ceil(fraction * M) distinct client ids, sorted, drawn per round.
std::vector<int> select_clients(int num_clients, double fraction, std::uint64_t seed, int round);

/// Per-client training seed for a round.
std::uint64_t client_round_seed(std::uint64_t seed, int round, int client_id);

struct RoundReport {
  int round = 0;
  std::vector<int> selected;
  /// Mean training loss per selected client, in `selected` order.
  std::vector<double> client_losses;
  /// One weight per client id (0 for clients not selected).
  std::vector<double> weights;
  double mean_local_loss = 0.0;
  double test_accuracy = 0.0;
  double wall_seconds = 0.0;
  /// "na_fallback" when NA-FedAvg reverted to FedAvg weights.
  std::vector<std::string> flags;

  /// Equality on everything except wall time.
  bool same_outcome(const RoundReport& o) const;
};

struct TestSet {
  std::span<const float> features;
  std::span<const ClassIndex> labels;
};

struct RoundOptions {
  /// When false the round runs plain FedAvg with cross-entropy (warm-up).
  bool interventions = true;
};

struct RoundResult {
  GlobalModel global;
  RoundReport report;
};

/// Clients are indexed by position, and clients[i].client_id must equal i.
RoundResult run_round(const GlobalModel& global, const std::vector<ClientState>& clients,
                      const FederatedConfig& config, const TestSet& test, RoundOptions options = {},
                      MessageTrace* trace = nullptr);

struct ExperimentInputs {
  EmbeddingDataset train;
  EmbeddingDataset test;
  PartitionMap partition;
  /// Empty when `train` already carries the noisy observed labels.
  std::vector<ClientNoiseProfile> profiles;
  std::uint64_t noise_seed = 0;
};

struct ExperimentSummary {
  std::vector<RoundReport> rounds;
  Mlp final_model;
  double final_accuracy = 0.0;
  double best_accuracy = 0.0;
  int best_round = 0;
  double worst_accuracy = 0.0;
  /// Per client id; empty entries for failed or skipped estimation.
  std::vector<std::optional<double>> n_hat;
  std::vector<std::string> estimation_errors;
  /// Raw outcomes of the estimation round, in client-id order.
  std::vector<EstimationOutcome> estimation;
  /// Injected level per client (from profiles) and realized label-noise
  /// fraction (from the oracle), when available.
  std::vector<double> injected_noise;
  std::vector<double> realized_noise;
  std::optional<double> estimation_mae;
  std::optional<double> estimation_mae_realized;
  std::vector<NncStats> nnc;
  int fallback_rounds = 0;
};

/// corrupt -> optional NNC -> optional estimation round -> training rounds.
ExperimentSummary run_experiment(const FederatedConfig& config, const ExperimentInputs& inputs,
                                 MessageTrace* trace = nullptr);

/// Round stream CSV: round,selected_ids,weights,mean_local_loss,test_accuracy,flags.
void write_rounds_csv(std::ostream& os, const std::vector<RoundReport>& rounds);

}  // namespace fedln
