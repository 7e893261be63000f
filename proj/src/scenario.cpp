#include "fedln/scenario.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <numeric>
#include <random>
#include <set>
#include <sstream>
#include <cerrno>

namespace fedln {

namespace {

using nlohmann::json;

constexpr std::uint64_t kPartitionTag = 1;
constexpr std::uint64_t kNoiseTag = 2;
constexpr std::uint64_t kNoisyClientsTag = 3;

[[noreturn]] void fail(const std::string& pointer, const std::string& msg) {
  throw ConfigError(pointer + ": " + msg);
}

// Strict view over one JSON object: every key must be consumed.
class Section {
 public:
  Section(const json& j, std::string pointer) : j_(j), ptr_(std::move(pointer)) {
    if (!j_.is_object()) fail(ptr_.empty() ? "/" : ptr_, "expected an object");
  }
  Section(const Section&) = delete;
  Section& operator=(const Section&) = delete;

  /// Rejects keys that were never read.
  void done() const {
    for (const auto& [key, _] : j_.items())
      if (!used_.contains(key)) fail(ptr_ + "/" + key, "unknown key");
  }

  bool has(const std::string& key) const { return j_.contains(key); }
  std::string path(const std::string& key) const { return ptr_ + "/" + key; }

  const json& raw(const std::string& key) {
    used_.insert(key);
    return j_.at(key);
  }

  double number(const std::string& key, double def, double lo, double hi) {
    if (!has(key)) return def;
    const auto& v = raw(key);
    if (!v.is_number()) fail(path(key), "expected a number");
    const double x = v.get<double>();
    if (!(x >= lo && x <= hi))
      fail(path(key), "value " + v.dump() + " outside [" + fmt(lo) + ", " + fmt(hi) + "]");
    return x;
  }

  long long integer(const std::string& key, long long def, long long lo, long long hi) {
    if (!has(key)) return def;
    const auto& v = raw(key);
    if (!v.is_number_integer()) fail(path(key), "expected an integer");
    const auto x = v.get<long long>();
    if (x < lo || x > hi)
      fail(path(key), "value " + v.dump() + " outside [" + std::to_string(lo) + ", " + std::to_string(hi) + "]");
    return x;
  }

  std::uint64_t seed(const std::string& key, std::uint64_t def) {
    if (!has(key)) return def;
    const auto& v = raw(key);
    if (!v.is_number_integer() || (!v.is_number_unsigned() && v.get<long long>() < 0))
      fail(path(key), "expected a non-negative integer");
    return v.get<std::uint64_t>();
  }

  std::string text(const std::string& key, const std::string& def, std::initializer_list<const char*> allowed) {
    if (!has(key)) return def;
    const auto& v = raw(key);
    if (!v.is_string()) fail(path(key), "expected a string");
    auto s = v.get<std::string>();
    if (allowed.size() && std::none_of(allowed.begin(), allowed.end(), [&](const char* a) { return s == a; })) {
      std::string opts;
      for (const char* a : allowed) opts += (opts.empty() ? "" : ", ") + std::string(a);
      fail(path(key), "'" + s + "' is not one of {" + opts + "}");
    }
    return s;
  }

 private:
  static std::string fmt(double v) {
    std::ostringstream os;
    os << v;
    return os.str();
  }

  const json& j_;
  std::string ptr_;
  std::set<std::string> used_;
};

}  // namespace

Scenario parse_scenario(const json& doc, const std::filesystem::path& base_dir) {
  Scenario s;
  Section root(doc, "");
  s.name = root.text("name", "scenario", {});
  if (s.name.empty() || s.name.find_first_of("/\\") != std::string::npos)
    fail("/name", "must be a non-empty file-name-safe string");
  s.seed = root.seed("seed", 0);

  if (root.has("data")) {
    Section data(root.raw("data"), "/data");
    if (data.has("synthetic") && (data.has("train_path") || data.has("test_path")))
      fail("/data", "give either synthetic or train_path/test_path, not both");
    if (data.has("train_path") || data.has("test_path")) {
      FileSource fs;
      for (auto [key, dst] : {std::pair{"train_path", &fs.train_path}, std::pair{"test_path", &fs.test_path}}) {
        if (!data.has(key)) fail(data.path(key), "required alongside the other path");
        const auto p = data.text(key, "", {});
        *dst = std::filesystem::path(p).is_relative() && !base_dir.empty() ? base_dir / p : std::filesystem::path(p);
        if (!std::filesystem::exists(*dst)) fail(data.path(key), "file '" + dst->string() + "' does not exist");
      }
      s.data = fs;
    } else {
      SyntheticSpec spec;
      if (data.has("synthetic")) {
        Section syn(data.raw("synthetic"), "/data/synthetic");
        spec.num_classes = static_cast<int>(syn.integer("num_classes", spec.num_classes, 2, 65535));
        spec.dim = static_cast<int>(syn.integer("dim", spec.dim, 2, 1 << 20));
        spec.per_class_count = static_cast<int>(syn.integer("per_class_count", spec.per_class_count, 1, 1 << 24));
        spec.separation = syn.number("separation", spec.separation, 0.0, 1e6);
        spec.seed = syn.seed("seed", spec.seed);
        syn.done();
      }
      s.data = spec;
    }
    data.done();
  }

  if (root.has("partition")) {
    Section part(root.raw("partition"), "/partition");
    const auto kind = part.text("kind", "iid", {"iid", "dirichlet"});
    s.partition.kind = kind == "iid" ? PartitionPlan::Kind::iid : PartitionPlan::Kind::dirichlet;
    s.partition.alpha = part.number("alpha", s.partition.alpha, 1e-9, 1e12);
    part.done();
  }

  auto& fed = s.federated;
  if (root.has("federated")) {
    Section f(root.raw("federated"), "/federated");
    fed.num_clients = static_cast<int>(f.integer("num_clients", fed.num_clients, 1, 1 << 20));
    fed.participation_fraction = f.number("participation_fraction", fed.participation_fraction, 1e-12, 1.0);
    fed.rounds = static_cast<int>(f.integer("rounds", fed.rounds, 0, 1 << 20));
    fed.strategy = strategy_from_string(f.text("strategy", to_string(fed.strategy), {"fedavg", "na_fedavg"}));
    fed.init_correction =
        init_correction_from_string(f.text("init_correction", to_string(fed.init_correction), {"none", "nnc"}));
    fed.local_loss = local_loss_from_string(f.text("local_loss", to_string(fed.local_loss), {"ce", "akd"}));
    const auto em = f.text("estimation_method", fed.estimation_method ? to_string(*fed.estimation_method) : "none",
                           {"none", "knn", "confidence"});
    fed.estimation_method = em == "none" ? std::nullopt : std::optional(estimation_method_from_string(em));
    fed.k = static_cast<int>(f.integer("k", fed.k, 1, 1 << 20));
    fed.metric = knn_metric_from_string(f.text("metric", to_string(fed.metric), {"euclidean", "cosine"}));
    fed.tau_nnc = f.number("tau_nnc", fed.tau_nnc, 0.0, 1e6);
    fed.nnc_passes = static_cast<int>(f.integer("nnc_passes", fed.nnc_passes, 1, 1000));
    fed.beta_max = f.number("beta_max", fed.beta_max, 0.0, 1.0);
    fed.temperature = f.number("temperature", fed.temperature, 1e-12, 1e6);
    fed.warmup_rounds = static_cast<int>(f.integer("warmup_rounds", fed.warmup_rounds, 0, 1 << 20));
    fed.workers = static_cast<int>(f.integer("workers", fed.workers, 1, 1024));
    f.done();
  }

  if (root.has("model")) {
    Section m(root.raw("model"), "/model");
    if (m.has("hidden_layers")) {
      const auto& v = m.raw("hidden_layers");
      if (!v.is_array()) fail("/model/hidden_layers", "expected an array of positive integers");
      fed.hidden_layers.clear();
      for (std::size_t i = 0; i < v.size(); ++i) {
        if (!v[i].is_number_integer() || v[i].get<long long>() < 1 || v[i].get<long long>() > (1 << 20))
          fail("/model/hidden_layers/" + std::to_string(i), "expected a positive integer");
        fed.hidden_layers.push_back(v[i].get<int>());
      }
    }
    m.done();
  }

  if (root.has("training")) {
    Section t(root.raw("training"), "/training");
    fed.train.learning_rate = t.number("learning_rate", fed.train.learning_rate, 1e-300, 1e6);
    fed.train.batch_size = static_cast<int>(t.integer("batch_size", fed.train.batch_size, 1, 1 << 24));
    fed.train.local_epochs = static_cast<int>(t.integer("local_epochs", fed.train.local_epochs, 1, 1 << 20));
    fed.train.weight_decay = t.number("weight_decay", fed.train.weight_decay, 0.0, 1e6);
    t.done();
  }

  if (root.has("noise")) {
    Section n(root.raw("noise"), "/noise");
    auto& np = s.noise;
    np.noise_level = n.number("noise_level", np.noise_level, 0.0, 1.0);
    np.noise_sparsity = n.number("noise_sparsity", np.noise_sparsity, 0.0, 1.0);
    np.structure = noise_structure_from_string(
        n.text("structure", to_string(np.structure), {"uniform", "sparse_random", "class_flip"}));
    np.noisy_client_fraction = n.number("noisy_client_fraction", np.noisy_client_fraction, 0.0, 1.0);
    if (n.has("per_client_levels")) {
      const auto& v = n.raw("per_client_levels");
      if (!v.is_array()) fail("/noise/per_client_levels", "expected an array");
      for (std::size_t i = 0; i < v.size(); ++i) {
        if (!v[i].is_number() || !(v[i].get<double>() >= 0.0 && v[i].get<double>() <= 1.0))
          fail("/noise/per_client_levels/" + std::to_string(i), "expected a number in [0, 1]");
        np.per_client_levels.push_back(v[i].get<double>());
      }
      if (np.per_client_levels.size() != static_cast<std::size_t>(fed.num_clients))
        fail("/noise/per_client_levels", "expected one level per client (" + std::to_string(fed.num_clients) + ")");
    }
    n.done();
  }
  root.done();

  fed.seed = s.seed;
  try {
    fed.validate();
  } catch (const ConfigError& e) {
    fail("/federated", e.what());
  }
  if (const auto* syn = std::get_if<SyntheticSpec>(&s.data)) {
    const auto n = static_cast<long long>(syn->num_classes) * syn->per_class_count;
    if (n < fed.num_clients) fail("/federated/num_clients", "more clients than training samples");
  }
  return s;
}

void apply_seed_override(Scenario& s) {
  const char* env = std::getenv("FEDLN_SEED");
  if (!env || !*env) return;
  char* end = nullptr;
  errno = 0;
  const auto v = std::strtoull(env, &end, 10);
  if (*end != '\0' || errno != 0 || env[0] == '-') throw ConfigError("FEDLN_SEED: '" + std::string(env) + "' is not an unsigned integer");
  s.seed = v;
  s.federated.seed = v;
  s.seed_from_env = true;
}

Scenario load_scenario(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open scenario file " + path.string());
  json doc;
  try {
    doc = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError("scenario " + path.string() + ": " + e.what());
  }
  Scenario s = parse_scenario(doc, path.parent_path());
  apply_seed_override(s);
  return s;
}

json to_json(const Scenario& s) {
  json j;
  j["name"] = s.name;
  j["seed"] = s.seed;
  if (const auto* syn = std::get_if<SyntheticSpec>(&s.data)) {
    j["data"]["synthetic"] = {{"num_classes", syn->num_classes},
                              {"dim", syn->dim},
                              {"per_class_count", syn->per_class_count},
                              {"separation", syn->separation},
                              {"seed", syn->seed}};
  } else {
    const auto& fs = std::get<FileSource>(s.data);
    j["data"] = {{"train_path", fs.train_path.string()}, {"test_path", fs.test_path.string()}};
  }
  j["partition"] = {{"kind", s.partition.kind == PartitionPlan::Kind::iid ? "iid" : "dirichlet"},
                    {"alpha", s.partition.alpha}};
  j["noise"] = {{"noise_level", s.noise.noise_level},
                {"noise_sparsity", s.noise.noise_sparsity},
                {"structure", to_string(s.noise.structure)},
                {"noisy_client_fraction", s.noise.noisy_client_fraction}};
  if (!s.noise.per_client_levels.empty()) j["noise"]["per_client_levels"] = s.noise.per_client_levels;
  const auto& f = s.federated;
  j["model"] = {{"hidden_layers", f.hidden_layers}};
  j["training"] = {{"learning_rate", f.train.learning_rate},
                   {"batch_size", f.train.batch_size},
                   {"local_epochs", f.train.local_epochs},
                   {"weight_decay", f.train.weight_decay}};
  j["federated"] = {{"num_clients", f.num_clients},
                    {"participation_fraction", f.participation_fraction},
                    {"rounds", f.rounds},
                    {"strategy", to_string(f.strategy)},
                    {"init_correction", to_string(f.init_correction)},
                    {"local_loss", to_string(f.local_loss)},
                    {"estimation_method", f.estimation_method ? to_string(*f.estimation_method) : "none"},
                    {"k", f.k},
                    {"metric", to_string(f.metric)},
                    {"tau_nnc", f.tau_nnc},
                    {"nnc_passes", f.nnc_passes},
                    {"beta_max", f.beta_max},
                    {"temperature", f.temperature},
                    {"warmup_rounds", f.warmup_rounds},
                    {"workers", f.workers}};
  return j;
}

std::uint64_t partition_seed(const Scenario& s) { return hash64({s.seed, kPartitionTag}); }
std::uint64_t noise_seed(const Scenario& s) { return hash64({s.seed, kNoiseTag}); }

std::vector<double> client_noise_levels(const Scenario& s) {
  const int m = s.federated.num_clients;
  if (!s.noise.per_client_levels.empty()) return s.noise.per_client_levels;
  const int noisy = static_cast<int>(std::lround(s.noise.noisy_client_fraction * m));
  std::vector<int> ids(m);
  std::iota(ids.begin(), ids.end(), 0);
  std::vector<int> chosen;
  std::mt19937_64 rng(hash64({s.seed, kNoisyClientsTag}));
  std::sample(ids.begin(), ids.end(), std::back_inserter(chosen), noisy, rng);
  std::vector<double> levels(m, 0.0);
  for (int id : chosen) levels[id] = s.noise.noise_level;
  return levels;
}

std::vector<ClientNoiseProfile> client_profiles(const Scenario& s, int num_classes) {
  const auto levels = client_noise_levels(s);
  std::vector<ClientNoiseProfile> out;
  for (int m = 0; m < static_cast<int>(levels.size()); ++m) {
    NoiseSpec spec;
    spec.num_classes = num_classes;
    spec.noise_level = levels[m];
    spec.noise_sparsity = s.noise.noise_sparsity;
    spec.structure = s.noise.structure;
    spec.seed = hash64({noise_seed(s), static_cast<std::uint64_t>(m)});
    out.push_back({m, build_noise_matrix(spec)});
  }
  return out;
}

}  // namespace fedln
