#include <cstdio>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "fedln/harness.hpp"

namespace {

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string part;
  while (std::getline(ss, part, sep))
    if (!part.empty()) out.push_back(part);
  return out;
}

std::vector<double> parse_levels(const std::string& grid) {
  if (grid.rfind("nl=", 0) != 0) throw fedln::ConfigError("--grid: expected nl=<level>[,<level>...]");
  std::vector<double> levels;
  for (const auto& tok : split(grid.substr(3), ',')) {
    std::size_t used = 0;
    double v = 0;
    try {
      v = std::stod(tok, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used != tok.size()) throw fedln::ConfigError("--grid: '" + tok + "' is not a number");
    levels.push_back(v);
  }
  if (levels.empty()) throw fedln::ConfigError("--grid: no levels given");
  return levels;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Federated label-noise simulator"};
  app.require_subcommand(1);

  std::string config, out = ".", method, in_dir, out_file = "report.csv";
  std::string grid = "nl=0,0.2,0.4,0.6", strategies = "fedavg,fedln";
  std::vector<std::uint64_t> seeds;
  bool parallel = false;

  auto with_config = [&](CLI::App* sub) {
    sub->add_option("--config", config, "scenario JSON file")->required()->check(CLI::ExistingFile);
    sub->add_option("--out", out, "output directory");
  };
  auto* gen = app.add_subcommand("gen-data", "write synthetic train/test FLNE files");
  with_config(gen);
  auto* inject = app.add_subcommand("inject-noise", "write noisy training data and client matrices");
  with_config(inject);
  auto* est = app.add_subcommand("estimate", "run one noise-estimation round");
  with_config(est);
  est->add_option("--method", method, "knn or confidence")->check(CLI::IsMember({"knn", "confidence"}));
  auto* trn = app.add_subcommand("train", "run a full federated experiment");
  with_config(trn);
  auto* rep = app.add_subcommand("report", "collect round CSVs into long format");
  rep->add_option("--in", in_dir, "directory holding *rounds.csv files")->required();
  rep->add_option("--out", out_file, "output CSV file");
  auto* swp = app.add_subcommand("sweep", "run a noise-level x strategy x seed grid");
  with_config(swp);
  swp->add_option("--grid", grid, "noise levels, e.g. nl=0,0.2,0.4");
  swp->add_option("--strategies", strategies, "comma-separated: fedavg,nnc,akd,na_fedavg,fedln or a+b");
  swp->add_option("--seeds", seeds, "grid seeds (default: the scenario seed)")->delimiter(',');
  swp->add_flag("--parallel", parallel, "run cells on several threads");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e, std::cerr, std::cerr);
    std::cerr << app.help();
    return 2;
  }

  try {
    if (*rep) {
      fedln::report(in_dir, out_file);
      return 0;
    }
    auto scenario = fedln::load_scenario(config);
    if (*gen) {
      fedln::gen_data(scenario, out);
    } else if (*inject) {
      fedln::inject_noise(scenario, out);
    } else if (*est) {
      if (!method.empty()) scenario.federated.estimation_method = fedln::estimation_method_from_string(method);
      const auto doc = fedln::estimate(scenario, out);
      if (doc["estimation_mae"].is_number()) std::printf("estimation MAE %.4f\n", doc["estimation_mae"].get<double>());
    } else if (*trn) {
      const auto doc = fedln::train(scenario, out);
      std::printf("final accuracy %.4f\n", doc["final_accuracy"].get<double>());
    } else if (*swp) {
      if (seeds.empty()) seeds.push_back(scenario.seed);
      const auto cells = fedln::sweep_grid(parse_levels(grid), split(strategies, ','), seeds);
      for (const auto& p : fedln::sweep(scenario, cells, out, parallel)) std::printf("%s\n", p.string().c_str());
    }
    return 0;
  } catch (const fedln::ConfigError& e) {
    std::cerr << "configuration error: " << e.what() << '\n';
    return 2;
  } catch (const fedln::ParameterError& e) {
    std::cerr << "configuration error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
}
