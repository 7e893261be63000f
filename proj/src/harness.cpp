#include "fedln/harness.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <thread>

#include "fedln/parallel.hpp"

namespace fedln {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

json optional_json(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }

json nnc_json(const NncStats& s) {
  return {{"total", s.total},
          {"flagged", s.flagged},
          {"corrected", s.corrected},
          {"label_accuracy_before", optional_json(s.label_accuracy_before)},
          {"label_accuracy_after", optional_json(s.label_accuracy_after)},
          {"precision", optional_json(s.precision)},
          {"recall", optional_json(s.recall)}};
}

std::string format_level(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%g", v);
  return buf;
}

}  // namespace

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw std::runtime_error("cannot write " + path.string());
  os << text;
  if (!os) throw std::runtime_error("write failed for " + path.string());
}

PreparedScenario prepare(const Scenario& s) {
  PreparedScenario p;
  if (const auto* syn = std::get_if<SyntheticSpec>(&s.data)) {
    auto [train, test] = generate_gaussian_mixture(*syn);
    p.train = std::move(train);
    p.test = std::move(test);
  } else {
    const auto& src = std::get<FileSource>(s.data);
    p.train = load_dataset(src.train_path, Split::train);
    p.test = load_dataset(src.test_path, Split::test);
    if (p.train.dim() != p.test.dim() || p.train.num_classes() != p.test.num_classes())
      throw ConfigError("/data: train and test files disagree on dim or class count");
  }
  if (static_cast<std::size_t>(s.federated.num_clients) > p.train.size())
    throw ConfigError("/federated/num_clients: more clients than training samples");
  p.partition = s.partition.kind == PartitionPlan::Kind::iid
                    ? partition_iid(p.train.size(), s.federated.num_clients, partition_seed(s))
                    : partition_dirichlet(p.train.observed_labels(), p.train.num_classes(),
                                          s.federated.num_clients, s.partition.alpha, partition_seed(s));
  p.profiles = client_profiles(s, p.train.num_classes());
  return p;
}

ExperimentInputs to_inputs(const Scenario& s, PreparedScenario prepared) {
  return {std::move(prepared.train), std::move(prepared.test), std::move(prepared.partition),
          std::move(prepared.profiles), noise_seed(s)};
}

void gen_data(const Scenario& s, const fs::path& out) {
  const auto* syn = std::get_if<SyntheticSpec>(&s.data);
  if (!syn) throw ConfigError("/data: gen-data needs a synthetic data source");
  fs::create_directories(out);
  auto [train, test] = generate_gaussian_mixture(*syn);
  save_flne(train, out / "train.flne");
  save_flne(test, out / "test.flne");
  write_text(out / "scenario.json", to_json(s).dump(2) + "\n");
}

void inject_noise(const Scenario& s, const fs::path& out) {
  fs::create_directories(out);
  auto p = prepare(s);
  const auto noisy = corrupt_clients(p.train, p.partition, p.profiles, noise_seed(s));
  save_flne(noisy, out / "train_noisy.flne");
  save_flne(p.test, out / "test.flne");

  json part = json::object();
  for (const auto& [id, idx] : p.partition.assignments) part[std::to_string(id)] = idx;
  write_text(out / "partition.json", part.dump() + "\n");

  for (const auto& prof : p.profiles) {
    std::ostringstream os;
    write_matrix_csv(os, prof.matrix);
    write_text(out / ("client_" + std::to_string(prof.client_id) + "_matrix.csv"), os.str());
    const auto& idx = p.partition.assignments.at(prof.client_id);
    try {
      const auto realized = empirical_matrix(oracle_labels(noisy, idx),
                                             client_view(noisy, idx).labels, noisy.num_classes());
      std::ostringstream rs;
      write_matrix_csv(rs, realized);
      write_text(out / ("client_" + std::to_string(prof.client_id) + "_realized.csv"), rs.str());
    } catch (const ParameterError&) {
      // Client lacks some class; the realized matrix is undefined.
    }
  }
  write_text(out / "scenario.json", to_json(s).dump(2) + "\n");
}

json estimate(const Scenario& s, const fs::path& out) {
  if (!s.federated.estimation_method) throw ConfigError("/federated/estimation_method: estimate needs a method");
  fs::create_directories(out);
  FederatedConfig cfg = s.federated;
  cfg.strategy = Strategy::fedavg;
  cfg.init_correction = InitCorrection::none;
  cfg.local_loss = LocalLoss::ce;
  cfg.rounds = *cfg.estimation_method == EstimationMethod::confidence ? cfg.warmup_rounds : 0;
  const auto summary = run_experiment(cfg, to_inputs(s, prepare(s)));

  std::ostringstream csv;
  write_estimation_csv(csv, summary.estimation, *cfg.estimation_method);
  write_text(out / "estimation.csv", csv.str());

  json doc;
  doc["scenario"] = to_json(s);
  doc["seed_from_env"] = s.seed_from_env;
  doc["method"] = to_string(*cfg.estimation_method);
  doc["warmup_rounds"] = cfg.rounds;
  doc["estimation_mae"] = optional_json(summary.estimation_mae);
  doc["estimation_mae_realized"] = optional_json(summary.estimation_mae_realized);
  doc["clients"] = json::array();
  for (const auto& o : summary.estimation) {
    json c = {{"client_id", o.client_id},
              {"n_hat", optional_json(o.n_hat)},
              {"sample_count", o.sample_count},
              {"flagged_count", o.flagged_count}};
    if (!summary.injected_noise.empty()) c["injected_noise"] = summary.injected_noise[o.client_id];
    if (!summary.realized_noise.empty()) c["realized_noise"] = summary.realized_noise[o.client_id];
    if (!o.error.empty()) c["error"] = o.error;
    doc["clients"].push_back(std::move(c));
  }
  write_text(out / "estimation_summary.json", doc.dump(2) + "\n");
  return doc;
}

json summary_json(const Scenario& s, const ExperimentSummary& summary) {
  json doc;
  doc["scenario"] = to_json(s);
  doc["seed_from_env"] = s.seed_from_env;
  doc["final_accuracy"] = summary.final_accuracy;
  doc["best_accuracy"] = summary.best_accuracy;
  doc["best_round"] = summary.best_round;
  doc["worst_accuracy"] = summary.worst_accuracy;
  doc["rounds"] = summary.rounds.size();
  doc["fallback_rounds"] = summary.fallback_rounds;
  doc["estimation_mae"] = optional_json(summary.estimation_mae);
  doc["estimation_mae_realized"] = optional_json(summary.estimation_mae_realized);
  doc["clients"] = json::array();
  const int m = s.federated.num_clients;
  for (int id = 0; id < m; ++id) {
    json c = {{"client_id", id}};
    c["n_hat"] = id < static_cast<int>(summary.n_hat.size()) ? optional_json(summary.n_hat[id]) : json(nullptr);
    if (!summary.injected_noise.empty()) c["injected_noise"] = summary.injected_noise[id];
    if (!summary.realized_noise.empty()) c["realized_noise"] = summary.realized_noise[id];
    if (id < static_cast<int>(summary.nnc.size())) c["nnc"] = nnc_json(summary.nnc[id]);
    if (id < static_cast<int>(summary.estimation_errors.size()) && !summary.estimation_errors[id].empty())
      c["estimation_error"] = summary.estimation_errors[id];
    doc["clients"].push_back(std::move(c));
  }
  if (!summary.nnc.empty()) {
    NncStats total;
    double before = 0, after = 0, good = 0, noisy_before = 0;
    bool oracle = true;
    for (const auto& st : summary.nnc) {
      total.total += st.total;
      total.flagged += st.flagged;
      total.corrected += st.corrected;
      if (!st.label_accuracy_before) {
        oracle = false;
        continue;
      }
      const double n = static_cast<double>(st.total);
      before += *st.label_accuracy_before * n;
      after += *st.label_accuracy_after * n;
      good += *st.precision * static_cast<double>(st.corrected);
      noisy_before += (1.0 - *st.label_accuracy_before) * n;
    }
    if (oracle && total.total > 0) {
      total.label_accuracy_before = before / static_cast<double>(total.total);
      total.label_accuracy_after = after / static_cast<double>(total.total);
      total.precision = total.corrected ? good / static_cast<double>(total.corrected) : 1.0;
      total.recall = noisy_before > 0 ? good / noisy_before : 1.0;
    }
    doc["nnc_total"] = nnc_json(total);
  }
  return doc;
}

json train(const Scenario& s, const fs::path& out, const std::string& prefix) {
  fs::create_directories(out);
  const auto summary = run_experiment(s.federated, to_inputs(s, prepare(s)));
  std::ostringstream csv;
  write_rounds_csv(csv, summary.rounds);
  write_text(out / (prefix + "rounds.csv"), csv.str());
  const auto doc = summary_json(s, summary);
  write_text(out / (prefix + "summary.json"), doc.dump(2) + "\n");
  write_text(out / (prefix + "model.json"), to_checkpoint(summary.final_model).dump() + "\n");
  return doc;
}

void report(const fs::path& in, const fs::path& out_file) {
  if (!fs::is_directory(in)) throw ConfigError("report: '" + in.string() + "' is not a directory");
  std::vector<fs::path> files;
  for (const auto& e : fs::recursive_directory_iterator(in)) {
    const auto name = e.path().filename().string();
    if (e.is_regular_file() && name.size() >= 10 && name.ends_with("rounds.csv")) files.push_back(e.path());
  }
  std::sort(files.begin(), files.end());

  std::ostringstream os;
  os << "scenario_id,round,metric,value\n";
  for (const auto& f : files) {
    auto id = f.filename().string();
    id.resize(id.size() - std::string("rounds.csv").size());
    while (!id.empty() && (id.back() == '.' || id.back() == '_')) id.pop_back();
    if (id.empty()) id = f.parent_path().filename().string();

    std::ifstream is(f);
    std::string line;
    std::getline(is, line);
    if (line != "round,selected_ids,weights,mean_local_loss,test_accuracy,flags")
      throw ParseError("report: unexpected header in " + f.string());
    std::size_t lineno = 1;
    while (std::getline(is, line)) {
      ++lineno;
      if (line.empty()) continue;
      std::vector<std::string> cells;
      std::stringstream ss(line);
      std::string cell;
      while (std::getline(ss, cell, ',')) cells.push_back(cell);
      if (cells.size() < 5) throw ParseError("report: short row at line " + std::to_string(lineno) + " of " + f.string());
      os << id << ',' << cells[0] << ",test_accuracy," << cells[4] << '\n';
      os << id << ',' << cells[0] << ",mean_local_loss," << cells[3] << '\n';
    }
  }
  if (out_file.has_parent_path()) fs::create_directories(out_file.parent_path());
  write_text(out_file, os.str());
}

void apply_strategy(FederatedConfig& config, const std::string& name) {
  config.strategy = Strategy::fedavg;
  config.init_correction = InitCorrection::none;
  config.local_loss = LocalLoss::ce;
  if (name == "fedavg") return;
  if (name == "fedln") {
    apply_strategy(config, "nnc+akd+na_fedavg");
    return;
  }
  std::stringstream ss(name);
  std::string part;
  while (std::getline(ss, part, '+')) {
    if (part == "nnc")
      config.init_correction = InitCorrection::nnc;
    else if (part == "akd")
      config.local_loss = LocalLoss::akd;
    else if (part == "na_fedavg")
      config.strategy = Strategy::na_fedavg;
    else
      throw ConfigError("unknown strategy component '" + part + "' in '" + name + "'");
  }
  if ((config.local_loss == LocalLoss::akd || config.strategy == Strategy::na_fedavg) && !config.estimation_method)
    config.estimation_method = EstimationMethod::knn;
}

std::string SweepCell::id(const std::string& scenario_name) const {
  std::string strat = strategy;
  std::replace(strat.begin(), strat.end(), '+', '-');
  return scenario_name + "_nl" + format_level(noise_level) + "_" + strat + "_seed" + std::to_string(seed);
}

std::vector<SweepCell> sweep_grid(const std::vector<double>& levels, const std::vector<std::string>& strategies,
                                  const std::vector<std::uint64_t>& seeds) {
  std::vector<SweepCell> cells;
  for (double nl : levels)
    for (const auto& st : strategies)
      for (auto sd : seeds) cells.push_back({nl, st, sd});
  return cells;
}

std::vector<fs::path> sweep(const Scenario& base, const std::vector<SweepCell>& cells, const fs::path& out,
                            bool parallel) {
  fs::create_directories(out);
  // Validate every cell before running any of them.
  std::vector<Scenario> scenarios;
  for (const auto& cell : cells) {
    if (!(cell.noise_level >= 0.0 && cell.noise_level <= 1.0))
      throw ConfigError("sweep: noise level " + format_level(cell.noise_level) + " outside [0,1]");
    Scenario s = base;
    s.name = cell.id(base.name);
    s.seed = hash64({base.seed, cell.seed});
    s.federated.seed = s.seed;
    s.noise.noise_level = cell.noise_level;
    s.noise.per_client_levels.clear();
    apply_strategy(s.federated, cell.strategy);
    s.federated.validate();
    scenarios.push_back(std::move(s));
  }
  std::vector<fs::path> written(cells.size());
  const int workers = parallel ? static_cast<int>(std::max(1u, std::thread::hardware_concurrency())) : 1;
  parallel_for(scenarios.size(), workers, [&](std::size_t i) {
    train(scenarios[i], out, scenarios[i].name + ".");
    written[i] = out / (scenarios[i].name + ".summary.json");
  });
  return written;
}

}  // namespace fedln
