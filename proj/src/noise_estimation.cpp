#include "fedln/noise_estimation.hpp"

#include <algorithm>
#include <iomanip>
#include <limits>
#include <ostream>

#include "fedln/parallel.hpp"

namespace fedln {

std::string to_string(EstimationMethod m) { return m == EstimationMethod::knn ? "knn" : "confidence"; }

EstimationMethod estimation_method_from_string(const std::string& s) {
  if (s == "knn") return EstimationMethod::knn;
  if (s == "confidence") return EstimationMethod::confidence;
  throw ParameterError("unknown estimation method '" + s + "'");
}

std::string to_string(Payload p) {
  switch (p) {
    case Payload::none: return "none";
    case Payload::parameters: return "parameters";
    case Payload::sample_count: return "sample_count";
    case Payload::noise_estimate: return "noise_estimate";
  }
  return "?";
}

std::size_t NoiseEstimate::flagged_count() const {
  return static_cast<std::size_t>(std::count(flagged.begin(), flagged.end(), true));
}

NoiseEstimate estimate_knn(const ClientData& data, int k, KnnMetric metric, int client_id) {
  require(k >= 1, "estimate_knn: k must be >= 1");
  if (data.size() <= static_cast<std::size_t>(k))
    throw ParameterError("estimate_knn: client " + std::to_string(client_id) + " holds " +
                         std::to_string(data.size()) + " samples, needs more than k=" +
                         std::to_string(k) + "; use a smaller k or the confidence method");
  const auto votes = knn_leave_one_out(KnnReference::of(data), k, metric);

  NoiseEstimate est;
  est.client_id = client_id;
  est.method = EstimationMethod::knn;
  est.flagged.resize(data.size());
  est.suggested.resize(data.size());
  est.agreement.resize(data.size());
  for (std::size_t i = 0; i < data.size(); ++i) {
    est.agreement[i] = votes[i].agreement;
    if (votes[i].label != data.labels[i]) {
      est.flagged[i] = true;
      est.suggested[i] = votes[i].label;
    }
  }
  est.n_hat = static_cast<double>(est.flagged_count()) / static_cast<double>(data.size());
  return est;
}

NoiseEstimate estimate_confidence(const Mlp& model, const ClientData& data, int client_id) {
  require(model.input_dim() == data.dim && model.num_classes() == data.num_classes,
          "estimate_confidence: model is not compatible with the client data");
  NoiseEstimate est;
  est.client_id = client_id;
  est.method = EstimationMethod::confidence;
  const std::size_t n = data.size();
  est.flagged.resize(n);
  est.suggested.resize(n);
  if (n == 0) return est;

  const auto probs = forward(model, data.features, n).probabilities;
  const std::size_t c = static_cast<std::size_t>(data.num_classes);
  std::vector<double> sum(c, 0.0);
  std::vector<std::size_t> count(c, 0);
  for (std::size_t i = 0; i < n; ++i) {
    sum[data.labels[i]] += probs(i, data.labels[i]);
    ++count[data.labels[i]];
  }
  std::vector<double> threshold(c, std::numeric_limits<double>::infinity());
  for (std::size_t k = 0; k < c; ++k)
    if (count[k] > 0) threshold[k] = sum[k] / static_cast<double>(count[k]);

  for (std::size_t i = 0; i < n; ++i) {
    const auto y = data.labels[i];
    if (!(probs(i, y) < threshold[y])) continue;
    std::optional<ClassIndex> best;
    for (std::size_t k = 0; k < c; ++k) {
      if (k == y || probs(i, k) < threshold[k]) continue;
      if (!best || probs(i, k) > probs(i, *best)) best = static_cast<ClassIndex>(k);
    }
    if (best) {
      est.flagged[i] = true;
      est.suggested[i] = best;
    }
  }
  est.n_hat = static_cast<double>(est.flagged_count()) / static_cast<double>(n);
  return est;
}

std::vector<EstimationOutcome> estimation_round(const std::vector<EstimationClient>& clients,
                                                const EstimationRoundOptions& options,
                                                const Mlp* global, MessageTrace* trace) {
  if (options.method == EstimationMethod::confidence)
    require(global != nullptr, "estimation_round: the confidence method needs a global model");

  std::vector<EstimationOutcome> out(clients.size());
  parallel_for(clients.size(), options.workers, [&](std::size_t i) {
    const auto& cl = clients[i];
    auto& res = out[i];
    res.client_id = cl.client_id;
    try {
      require(cl.data != nullptr, "estimation_round: client without data");
      res.sample_count = cl.data->size();
      const auto est = options.method == EstimationMethod::knn
                           ? estimate_knn(*cl.data, options.k, options.metric, cl.client_id)
                           : estimate_confidence(*global, *cl.data, cl.client_id);
      res.n_hat = est.n_hat;
      res.flagged_count = est.flagged_count();
    } catch (const std::exception& e) {
      res.n_hat.reset();
      res.error = e.what();
    }
  });

  if (trace) {
    const bool send_params = options.method == EstimationMethod::confidence;
    for (const auto& cl : clients)
      trace->record({options.round, Direction::server_to_client, cl.client_id,
                     send_params ? Payload::parameters : Payload::none,
                     send_params ? global->parameter_count() : 0});
    for (const auto& res : out)
      if (res.n_hat)
        trace->record({options.round, Direction::client_to_server, res.client_id,
                       Payload::noise_estimate, 1});
  }
  return out;
}

void write_estimation_csv(std::ostream& os, const std::vector<EstimationOutcome>& outcomes,
                          EstimationMethod method) {
  const auto prec = os.precision();
  os << "client_id,method,n_hat,sample_count,flagged_count\n" << std::setprecision(17);
  for (const auto& o : outcomes) {
    os << o.client_id << ',' << to_string(method) << ',';
    if (o.n_hat) os << *o.n_hat;
    os << ',' << o.sample_count << ',' << o.flagged_count << '\n';
  }
  os.precision(prec);
}

}  // namespace fedln
