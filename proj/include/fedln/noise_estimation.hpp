#pragma once

#include <optional>
#include <string>
#include <vector>

#include "fedln/dataset.hpp"
#include "fedln/knn.hpp"
#include "fedln/message_trace.hpp"
#include "fedln/model.hpp"

namespace fedln {

enum class EstimationMethod { knn, confidence };

std::string to_string(EstimationMethod m);
EstimationMethod estimation_method_from_string(const std::string& s);

/// Client-local result. Only n_hat is ever sent to the server.
struct NoiseEstimate {
  int client_id = 0;
  double n_hat = 0.0;
  EstimationMethod method = EstimationMethod::knn;
  std::vector<bool> flagged;
  /// Alternative label per sample; empty optional when none is attributable.
  std::vector<std::optional<ClassIndex>> suggested;
  /// kNN vote agreement per sample (knn method only).
  std::vector<double> agreement;

  std::size_t flagged_count() const;
};

/// Leave-one-out kNN vote over the client's own observed labels; a sample is
/// flagged when the vote disagrees with its label.
NoiseEstimate estimate_knn(const ClientData& data, int k, KnnMetric metric = KnnMetric::euclidean,
                           int client_id = 0);

/// Per-class threshold test on model outputs. With t_c the mean p(c) over
/// samples labelled c, a sample labelled y is flagged when p(y) < t_y and
/// some c != y has p(c) >= t_c; the suggestion is the most probable such c.
NoiseEstimate estimate_confidence(const Mlp& model, const ClientData& data, int client_id = 0);

struct EstimationClient {
  int client_id = 0;
  const ClientData* data = nullptr;
};

struct EstimationOutcome {
  int client_id = 0;
  std::optional<double> n_hat;
  std::size_t sample_count = 0;
  std::size_t flagged_count = 0;
  std::string error;
};

struct EstimationRoundOptions {
  EstimationMethod method = EstimationMethod::knn;
  int k = 10;
  KnnMetric metric = KnnMetric::euclidean;
  int workers = 1;
  int round = 0;
};

/// One communication round: broadcast (parameters for the confidence method,
/// nothing for kNN), local estimation on every client, collection of n_hat.
/// A failing client is reported with an empty n_hat and does not affect the
/// others. `global` is required for the confidence method.
std::vector<EstimationOutcome> estimation_round(const std::vector<EstimationClient>& clients,
                                                const EstimationRoundOptions& options,
                                                const Mlp* global = nullptr,
                                                MessageTrace* trace = nullptr);

/// CSV with columns client_id,method,n_hat,sample_count,flagged_count.
void write_estimation_csv(std::ostream& os, const std::vector<EstimationOutcome>& outcomes,
                          EstimationMethod method);

}  // namespace fedln
