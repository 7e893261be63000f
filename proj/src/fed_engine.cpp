#include "fedln/fed_engine.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <iomanip>
#include <numeric>
#include <ostream>
#include <random>

#include "fedln/parallel.hpp"

namespace fedln {

namespace {

constexpr double kWeightFloor = 1e-12;
constexpr std::uint64_t kSelectTag = 0x5e1ec7;
constexpr std::uint64_t kInitTag = 0x1417;

[[noreturn]] void config_error(const std::string& msg) { throw ConfigError("federated config: " + msg); }

}  // namespace

std::string to_string(Strategy s) { return s == Strategy::fedavg ? "fedavg" : "na_fedavg"; }
std::string to_string(InitCorrection c) { return c == InitCorrection::none ? "none" : "nnc"; }
std::string to_string(LocalLoss l) { return l == LocalLoss::ce ? "ce" : "akd"; }

Strategy strategy_from_string(const std::string& s) {
  if (s == "fedavg") return Strategy::fedavg;
  if (s == "na_fedavg") return Strategy::na_fedavg;
  throw ParameterError("unknown strategy '" + s + "'");
}

InitCorrection init_correction_from_string(const std::string& s) {
  if (s == "none") return InitCorrection::none;
  if (s == "nnc") return InitCorrection::nnc;
  throw ParameterError("unknown init correction '" + s + "'");
}

LocalLoss local_loss_from_string(const std::string& s) {
  if (s == "ce") return LocalLoss::ce;
  if (s == "akd") return LocalLoss::akd;
  throw ParameterError("unknown local loss '" + s + "'");
}

void FederatedConfig::validate() const {
  if (num_clients < 1) config_error("num_clients must be >= 1");
  if (!(participation_fraction > 0.0 && participation_fraction <= 1.0))
    config_error("participation_fraction must lie in (0,1]");
  if (rounds < 0) config_error("rounds must be >= 0");
  try {
    train.validate();
  } catch (const ParameterError& e) {
    config_error(e.what());
  }
  if (!(train.learning_rate > 0.0)) config_error("learning_rate must be > 0");
  for (int h : hidden_layers)
    if (h < 1) config_error("hidden layer sizes must be positive");
  if (k < 1) config_error("k must be >= 1");
  if (!(tau_nnc >= 0.0 && std::isfinite(tau_nnc))) config_error("tau_nnc must be a finite value >= 0");
  if (nnc_passes < 1) config_error("nnc_passes must be >= 1");
  if (!(beta_max >= 0.0 && beta_max <= 1.0)) config_error("beta_max must lie in [0,1]");
  if (!(temperature > 0.0)) config_error("temperature must be > 0");
  if (warmup_rounds < 0) config_error("warmup_rounds must be >= 0");
  if (workers < 1) config_error("workers must be >= 1");
  if (local_loss == LocalLoss::akd && !estimation_method) config_error("akd requires an estimation method");
  if (strategy == Strategy::na_fedavg && !estimation_method)
    config_error("na_fedavg requires an estimation method");
  const bool needs_estimates = local_loss == LocalLoss::akd || strategy == Strategy::na_fedavg;
  if (needs_estimates && estimation_method == EstimationMethod::confidence && warmup_rounds >= rounds)
    config_error("warmup_rounds must be smaller than rounds when interventions use confidence estimates");
}

std::vector<double> fedavg_weights(std::span<const std::size_t> sizes) {
  require(!sizes.empty(), "aggregate: empty cohort");
  std::vector<double> raw(sizes.begin(), sizes.end());
  const double total = std::accumulate(raw.begin(), raw.end(), 0.0);
  require(total > 0.0, "aggregate: cohort holds no samples");
  for (auto& w : raw) w /= total;
  return raw;
}

std::vector<double> na_fedavg_weights(std::span<const std::size_t> sizes, std::span<const double> n_hats,
                                      bool* fallback) {
  require(!sizes.empty(), "aggregate: empty cohort");
  require(sizes.size() == n_hats.size(), "na_fedavg: one estimate per client is required");
  std::vector<double> raw(sizes.size());
  for (std::size_t m = 0; m < sizes.size(); ++m) {
    require(n_hats[m] >= 0.0 && n_hats[m] <= 1.0, "na_fedavg: n_hat outside [0,1]");
    raw[m] = static_cast<double>(sizes[m]) * (1.0 - n_hats[m]);
  }
  const double total = std::accumulate(raw.begin(), raw.end(), 0.0);
  if (fallback) *fallback = total < kWeightFloor;
  if (total < kWeightFloor) return fedavg_weights(sizes);
  for (auto& w : raw) w /= total;
  return raw;
}

Mlp weighted_average(std::span<const Mlp* const> models, std::span<const double> weights) {
  require(!models.empty(), "aggregate: empty cohort");
  require(models.size() == weights.size(), "aggregate: one weight per model is required");
  for (const auto* m : models)
    require(m->same_shape(*models.front()), "aggregate: models have different layer shapes");
  Mlp out = *models.front();
  for (std::size_t l = 0; l < out.layers.size(); ++l) {
    auto& layer = out.layers[l];
    for (std::size_t i = 0; i < layer.weights.size(); ++i) {
      double acc = weights[0] * models[0]->layers[l].weights[i];
      for (std::size_t m = 1; m < models.size(); ++m) acc += weights[m] * models[m]->layers[l].weights[i];
      layer.weights[i] = acc;
    }
    for (std::size_t i = 0; i < layer.biases.size(); ++i) {
      double acc = weights[0] * models[0]->layers[l].biases[i];
      for (std::size_t m = 1; m < models.size(); ++m) acc += weights[m] * models[m]->layers[l].biases[i];
      layer.biases[i] = acc;
    }
  }
  return out;
}

namespace {

std::vector<const Mlp*> model_ptrs(std::span<const ClientUpdate> updates) {
  std::vector<const Mlp*> ptrs;
  for (const auto& u : updates) ptrs.push_back(&u.model);
  return ptrs;
}

std::vector<std::size_t> sizes_of(std::span<const ClientUpdate> updates) {
  std::vector<std::size_t> sizes;
  for (const auto& u : updates) sizes.push_back(u.sample_count);
  return sizes;
}

}  // namespace

Mlp fedavg_aggregate(std::span<const ClientUpdate> updates) {
  const auto sizes = sizes_of(updates);
  return weighted_average(model_ptrs(updates), fedavg_weights(sizes));
}

Aggregate na_fedavg_aggregate(std::span<const ClientUpdate> updates) {
  std::vector<double> n_hats;
  for (const auto& u : updates) {
    if (!u.n_hat)
      throw ParameterError("na_fedavg: client " + std::to_string(u.client_id) + " has no noise estimate");
    n_hats.push_back(*u.n_hat);
  }
  Aggregate agg;
  const auto sizes = sizes_of(updates);
  agg.weights = na_fedavg_weights(sizes, n_hats, &agg.fallback);
  agg.model = weighted_average(model_ptrs(updates), agg.weights);
  return agg;
}

NncResult nnc_apply(const ClientData& data, int k, double tau, KnnMetric metric, int passes,
                    std::span<const ClassIndex> oracle) {
  require(passes >= 1, "nnc: passes must be >= 1");
  require(oracle.empty() || oracle.size() == data.size(), "nnc: oracle size mismatch");
  NncResult res{data, {}};
  res.stats.total = data.size();
  std::vector<bool> ever_flagged(data.size(), false);
  for (int pass = 0; pass < passes; ++pass) {
    const auto est = estimate_knn(res.data, k, metric);
    std::size_t changed = 0;
    for (std::size_t i = 0; i < data.size(); ++i) {
      if (!est.flagged[i]) continue;
      ever_flagged[i] = true;
      if (est.agreement[i] >= tau && est.suggested[i]) {
        res.data.labels[i] = *est.suggested[i];
        ++changed;
      }
    }
    if (changed == 0) break;
  }
  res.stats.flagged = static_cast<std::size_t>(std::count(ever_flagged.begin(), ever_flagged.end(), true));
  for (std::size_t i = 0; i < data.size(); ++i)
    if (res.data.labels[i] != data.labels[i]) ++res.stats.corrected;

  if (!oracle.empty() && !data.labels.empty()) {
    std::size_t right_before = 0, right_after = 0, good_fixes = 0, noisy = 0;
    for (std::size_t i = 0; i < data.size(); ++i) {
      const bool was_right = data.labels[i] == oracle[i];
      const bool is_right = res.data.labels[i] == oracle[i];
      right_before += was_right;
      right_after += is_right;
      noisy += !was_right;
      if (res.data.labels[i] != data.labels[i] && is_right) ++good_fixes;
    }
    const double n = static_cast<double>(data.size());
    res.stats.label_accuracy_before = right_before / n;
    res.stats.label_accuracy_after = right_after / n;
    res.stats.precision = res.stats.corrected ? static_cast<double>(good_fixes) / res.stats.corrected : 1.0;
    res.stats.recall = noisy ? static_cast<double>(good_fixes) / noisy : 1.0;
  }
  return res;
}

LossMix akd_mix(double n_hat, double beta_max, double temperature, const Mlp& teacher) {
  LossMix mix;
  mix.beta = std::clamp(std::min(n_hat, beta_max), 0.0, 1.0);
  mix.temperature = temperature;
  mix.teacher = teacher;
  return mix;
}

std::vector<int> select_clients(int num_clients, double fraction, std::uint64_t seed, int round) {
  require(num_clients >= 1, "select_clients: no clients");
  require(fraction > 0.0 && fraction <= 1.0, "select_clients: fraction must lie in (0,1]");
  // The small slack keeps products such as 0.3 * 10 from rounding up to 4.
  const int count = std::clamp(static_cast<int>(std::ceil(fraction * num_clients - 1e-9)), 1, num_clients);
  std::vector<int> all(num_clients);
  std::iota(all.begin(), all.end(), 0);
  if (count == num_clients) return all;
  std::vector<int> chosen;
  std::mt19937_64 rng(hash64({seed, kSelectTag, static_cast<std::uint64_t>(round)}));
  std::sample(all.begin(), all.end(), std::back_inserter(chosen), count, rng);
  return chosen;
}

std::uint64_t client_round_seed(std::uint64_t seed, int round, int client_id) {
  return hash64({seed, static_cast<std::uint64_t>(round), static_cast<std::uint64_t>(client_id)});
}

bool RoundReport::same_outcome(const RoundReport& o) const {
  return round == o.round && selected == o.selected && client_losses == o.client_losses &&
         weights == o.weights && mean_local_loss == o.mean_local_loss && test_accuracy == o.test_accuracy &&
         flags == o.flags;
}

RoundResult run_round(const GlobalModel& global, const std::vector<ClientState>& clients,
                      const FederatedConfig& config, const TestSet& test, RoundOptions options,
                      MessageTrace* trace) {
  const auto start = std::chrono::steady_clock::now();
  require(static_cast<int>(clients.size()) == config.num_clients, "run_round: client count mismatch");
  for (std::size_t i = 0; i < clients.size(); ++i)
    require(clients[i].client_id == static_cast<int>(i), "run_round: clients must be ordered by id");

  const int round = global.round + 1;
  const auto selected = select_clients(config.num_clients, config.participation_fraction, config.seed, round);
  const bool akd = options.interventions && config.local_loss == LocalLoss::akd;
  const bool na = options.interventions && config.strategy == Strategy::na_fedavg;

  std::vector<ClientUpdate> updates(selected.size());
  std::vector<double> losses(selected.size());
  std::vector<std::string> failures(selected.size());
  parallel_for(selected.size(), config.workers, [&](std::size_t s) {
    const ClientState& cl = clients[selected[s]];
    try {
      TrainConfig tc = config.train;
      tc.seed = client_round_seed(config.seed, round, cl.client_id);
      LossMix mix;
      mix.temperature = config.temperature;
      if (akd) {
        if (!cl.n_hat) throw ParameterError("no noise estimate available for AKD");
        mix = akd_mix(*cl.n_hat, config.beta_max, config.temperature, global.model);
      }
      auto res = train_local(global.model, cl.data, tc, mix);
      losses[s] = std::accumulate(res.epoch_losses.begin(), res.epoch_losses.end(), 0.0) /
                  static_cast<double>(res.epoch_losses.size());
      updates[s] = {cl.client_id, std::move(res.model), cl.data.size(), cl.n_hat};
    } catch (const std::exception& e) {
      failures[s] = e.what();
    }
  });
  for (std::size_t s = 0; s < selected.size(); ++s)
    if (!failures[s].empty())
      throw std::runtime_error("round " + std::to_string(round) + ": client " +
                               std::to_string(selected[s]) + " failed: " + failures[s]);

  if (trace) {
    for (int id : selected)
      trace->record({round, Direction::server_to_client, id, Payload::parameters, global.model.parameter_count()});
    for (const auto& u : updates) {
      trace->record({round, Direction::client_to_server, u.client_id, Payload::parameters, u.model.parameter_count()});
      trace->record({round, Direction::client_to_server, u.client_id, Payload::sample_count, 1});
    }
  }

  RoundResult out;
  out.report.round = round;
  out.report.selected = selected;
  out.report.client_losses = losses;
  if (na) {
    auto agg = na_fedavg_aggregate(updates);
    out.global.model = std::move(agg.model);
    out.report.weights.assign(config.num_clients, 0.0);
    for (std::size_t s = 0; s < selected.size(); ++s) out.report.weights[selected[s]] = agg.weights[s];
    if (agg.fallback) out.report.flags.emplace_back("na_fallback");
  } else {
    out.global.model = fedavg_aggregate(updates);
    const auto w = fedavg_weights(sizes_of(updates));
    out.report.weights.assign(config.num_clients, 0.0);
    for (std::size_t s = 0; s < selected.size(); ++s) out.report.weights[selected[s]] = w[s];
  }
  out.global.round = round;
  out.report.mean_local_loss =
      std::accumulate(losses.begin(), losses.end(), 0.0) / static_cast<double>(losses.size());
  out.report.test_accuracy = accuracy(out.global.model, test.features, test.labels);
  out.report.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return out;
}

ExperimentSummary run_experiment(const FederatedConfig& config, const ExperimentInputs& inputs,
                                 MessageTrace* trace) {
  config.validate();
  const auto& train = inputs.train;
  const auto& test = inputs.test;
  if (inputs.partition.num_clients() != config.num_clients)
    throw ConfigError("experiment: partition has " + std::to_string(inputs.partition.num_clients()) +
                      " clients, config expects " + std::to_string(config.num_clients));
  for (int m = 0; m < config.num_clients; ++m)
    if (!inputs.partition.assignments.contains(m))
      throw ConfigError("experiment: partition lacks client " + std::to_string(m));
  try {
    inputs.partition.validate(train.size());
    train.validate();
    test.validate();
  } catch (const ParameterError& e) {
    throw ConfigError(std::string("experiment: ") + e.what());
  }
  if (train.dim() != test.dim() || train.num_classes() != test.num_classes())
    throw ConfigError("experiment: train and test splits disagree on dim or class count");
  if (!inputs.profiles.empty() && inputs.profiles.size() != static_cast<std::size_t>(config.num_clients))
    throw ConfigError("experiment: expected one noise profile per client");
  for (const auto& p : inputs.profiles)
    if (p.matrix.num_classes() != train.num_classes())
      throw ConfigError("experiment: noise profile class count does not match the dataset");

  const EmbeddingDataset noisy =
      inputs.profiles.empty() ? train : corrupt_clients(train, inputs.partition, inputs.profiles, inputs.noise_seed);

  const int m_clients = config.num_clients;
  std::vector<ClientState> clients(m_clients);
  std::vector<std::vector<ClassIndex>> oracle(m_clients);
  ExperimentSummary summary;
  for (int m = 0; m < m_clients; ++m) {
    const auto& idx = inputs.partition.assignments.at(m);
    clients[m].client_id = m;
    clients[m].data = client_view(noisy, idx);
    if (noisy.has_oracle()) oracle[m] = oracle_labels(noisy, idx);
  }
  if (!inputs.profiles.empty()) {
    summary.injected_noise.assign(m_clients, 0.0);
    for (const auto& p : inputs.profiles)
      if (p.client_id >= 0 && p.client_id < m_clients)
        summary.injected_noise[p.client_id] = measure_noise_level(p.matrix);
  }
  if (noisy.has_oracle()) {
    for (int m = 0; m < m_clients; ++m) {
      std::size_t wrong = 0;
      for (std::size_t i = 0; i < oracle[m].size(); ++i) wrong += clients[m].data.labels[i] != oracle[m][i];
      summary.realized_noise.push_back(static_cast<double>(wrong) / static_cast<double>(oracle[m].size()));
    }
  }

  // Stage 1: label correction, locally on every client, before any training.
  if (config.init_correction == InitCorrection::nnc) {
    std::vector<NncResult> results(m_clients);
    parallel_for(static_cast<std::size_t>(m_clients), config.workers, [&](std::size_t m) {
      results[m] = nnc_apply(clients[m].data, config.k, config.tau_nnc, config.metric, config.nnc_passes,
                             oracle[m]);
    });
    for (int m = 0; m < m_clients; ++m) {
      clients[m].data = std::move(results[m].data);
      summary.nnc.push_back(results[m].stats);
    }
  }

  std::vector<int> sizes = {train.dim()};
  sizes.insert(sizes.end(), config.hidden_layers.begin(), config.hidden_layers.end());
  sizes.push_back(train.num_classes());
  GlobalModel global{init_weights(sizes, hash64({config.seed, kInitTag})), 0};
  const TestSet test_set{test.all_features(), test.observed_labels()};

  auto play = [&](int count, bool interventions) {
    for (int r = 0; r < count; ++r) {
      auto res = run_round(global, clients, config, test_set, {interventions}, trace);
      global = std::move(res.global);
      summary.rounds.push_back(std::move(res.report));
    }
  };

  // Stage 2: one estimation round (after warm-up for the confidence method).
  int remaining = config.rounds;
  if (config.estimation_method) {
    if (*config.estimation_method == EstimationMethod::confidence) {
      const int warm = std::min(config.warmup_rounds, config.rounds);
      play(warm, false);
      remaining -= warm;
    }
    std::vector<EstimationClient> ec;
    for (const auto& cl : clients) ec.push_back({cl.client_id, &cl.data});
    EstimationRoundOptions opts;
    opts.method = *config.estimation_method;
    opts.k = config.k;
    opts.metric = config.metric;
    opts.workers = config.workers;
    opts.round = global.round;
    const auto outcomes = estimation_round(ec, opts, &global.model, trace);
    summary.estimation = outcomes;
    summary.n_hat.resize(m_clients);
    summary.estimation_errors.resize(m_clients);
    for (const auto& o : outcomes) {
      clients[o.client_id].n_hat = o.n_hat;
      summary.n_hat[o.client_id] = o.n_hat;
      summary.estimation_errors[o.client_id] = o.error;
    }
    const bool needs = config.local_loss == LocalLoss::akd || config.strategy == Strategy::na_fedavg;
    for (const auto& o : outcomes)
      if (needs && !o.n_hat)
        throw std::runtime_error("estimation failed for client " + std::to_string(o.client_id) + ": " + o.error);

    auto mae_against = [&](const std::vector<double>& target) -> std::optional<double> {
      if (target.size() != static_cast<std::size_t>(m_clients)) return std::nullopt;
      double sum = 0.0;
      int n = 0;
      for (int m = 0; m < m_clients; ++m)
        if (summary.n_hat[m]) {
          sum += std::abs(*summary.n_hat[m] - target[m]);
          ++n;
        }
      if (n == 0) return std::nullopt;
      return sum / n;
    };
    summary.estimation_mae = mae_against(summary.injected_noise);
    summary.estimation_mae_realized = mae_against(summary.realized_noise);
  }

  // Stage 3: training rounds with the configured interventions.
  play(remaining, true);

  summary.final_model = global.model;
  if (!summary.rounds.empty()) {
    summary.final_accuracy = summary.rounds.back().test_accuracy;
    summary.best_accuracy = summary.rounds.front().test_accuracy;
    summary.worst_accuracy = summary.rounds.front().test_accuracy;
    summary.best_round = summary.rounds.front().round;
    for (const auto& r : summary.rounds) {
      if (r.test_accuracy > summary.best_accuracy) {
        summary.best_accuracy = r.test_accuracy;
        summary.best_round = r.round;
      }
      summary.worst_accuracy = std::min(summary.worst_accuracy, r.test_accuracy);
      if (std::find(r.flags.begin(), r.flags.end(), "na_fallback") != r.flags.end()) ++summary.fallback_rounds;
    }
  } else {
    summary.final_accuracy = summary.best_accuracy = summary.worst_accuracy =
        accuracy(global.model, test_set.features, test_set.labels);
  }
  return summary;
}

void write_rounds_csv(std::ostream& os, const std::vector<RoundReport>& rounds) {
  const auto prec = os.precision();
  os << "round,selected_ids,weights,mean_local_loss,test_accuracy,flags\n" << std::setprecision(17);
  for (const auto& r : rounds) {
    os << r.round << ',';
    for (std::size_t i = 0; i < r.selected.size(); ++i) os << (i ? ";" : "") << r.selected[i];
    os << ',';
    for (std::size_t i = 0; i < r.weights.size(); ++i) os << (i ? ";" : "") << r.weights[i];
    os << ',' << r.mean_local_loss << ',' << r.test_accuracy << ',';
    for (std::size_t i = 0; i < r.flags.size(); ++i) os << (i ? ";" : "") << r.flags[i];
    os << '\n';
  }
  os.precision(prec);
}

}  // namespace fedln
