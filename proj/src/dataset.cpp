#include "fedln/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <set>

namespace fedln {

EmbeddingDataset::EmbeddingDataset(int dim, int num_classes, Split split)
    : dim_(dim), num_classes_(num_classes), split_(split) {
  require(dim >= 1, "dataset: dim must be positive");
  require(num_classes >= 1 && num_classes <= 65535, "dataset: num_classes out of range");
}

void EmbeddingDataset::add(std::span<const float> x, ClassIndex observed, ClassIndex truth) {
  require(x.size() == static_cast<std::size_t>(dim_),
          "dataset: feature length " + std::to_string(x.size()) + " != dim " + std::to_string(dim_));
  require(observed < num_classes_ && truth < num_classes_, "dataset: label out of range");
  features_.insert(features_.end(), x.begin(), x.end());
  observed_.push_back(observed);
  true_.push_back(has_oracle_ ? truth : observed);
}

void EmbeddingDataset::set_observed(std::size_t i, ClassIndex label) {
  require(i < observed_.size(), "dataset: index out of range");
  require(label < num_classes_, "dataset: label out of range");
  observed_[i] = label;
  if (!has_oracle_) true_[i] = label;
}

void EmbeddingDataset::drop_oracle() {
  has_oracle_ = false;
  true_ = observed_;
}

void EmbeddingDataset::overwrite_true_labels(std::span<const ClassIndex> labels) {
  require(labels.size() == true_.size(), "dataset: true label count mismatch");
  true_.assign(labels.begin(), labels.end());
}

void EmbeddingDataset::validate() const {
  require(dim_ >= 1 && num_classes_ >= 1, "dataset: empty shape");
  require(features_.size() == observed_.size() * static_cast<std::size_t>(dim_),
          "dataset: feature buffer does not match example count");
  require(true_.size() == observed_.size(), "dataset: label buffers differ in length");
  for (std::size_t i = 0; i < observed_.size(); ++i) {
    require(observed_[i] < num_classes_ && true_[i] < num_classes_,
            "dataset: label out of range at record " + std::to_string(i));
    if (split_ == Split::test)
      require(observed_[i] == true_[i], "dataset: test split must be clean (record " +
                                            std::to_string(i) + ")");
  }
}

void PartitionMap::validate(std::size_t n) const {
  std::vector<char> seen(n, 0);
  for (const auto& [id, idx] : assignments) {
    require(!idx.empty(), "partition: client " + std::to_string(id) + " is empty");
    for (auto i : idx) {
      require(i < n, "partition: index out of range");
      require(!seen[i], "partition: index " + std::to_string(i) + " assigned twice");
      seen[i] = 1;
    }
  }
  require(std::all_of(seen.begin(), seen.end(), [](char c) { return c != 0; }),
          "partition: not every index is covered");
}

void SyntheticSpec::validate() const {
  require(num_classes >= 2 && num_classes <= 65535, "synthetic: num_classes must be >= 2");
  require(dim >= 2, "synthetic: dim must be >= 2");
  require(per_class_count >= 1, "synthetic: per_class_count must be >= 1");
  require(std::isfinite(separation) && separation >= 0.0, "synthetic: separation must be >= 0");
}

std::pair<EmbeddingDataset, EmbeddingDataset> generate_gaussian_mixture(const SyntheticSpec& spec) {
  spec.validate();
  const int c = spec.num_classes;
  const int d = spec.dim;
  std::mt19937_64 rng(spec.seed);
  std::normal_distribution<double> normal(0.0, 1.0);

  std::vector<std::vector<double>> means(c, std::vector<double>(d, 0.0));
  for (auto& mu : means) {
    double norm2 = 0.0;
    for (auto& v : mu) {
      v = normal(rng);
      norm2 += v * v;
    }
    const double scale = norm2 > 0.0 ? spec.separation / std::sqrt(norm2) : 0.0;
    for (auto& v : mu) v *= scale;
  }

  auto fill = [&](EmbeddingDataset& ds, int per_class) {
    std::vector<float> x(d);
    for (int k = 0; k < c; ++k) {
      for (int s = 0; s < per_class; ++s) {
        for (int t = 0; t < d; ++t) x[t] = static_cast<float>(means[k][t] + normal(rng));
        ds.add(x, static_cast<ClassIndex>(k), static_cast<ClassIndex>(k));
      }
    }
  };

  EmbeddingDataset train(d, c, Split::train);
  EmbeddingDataset test(d, c, Split::test);
  fill(train, spec.per_class_count);
  fill(test, (spec.per_class_count + 4) / 5);
  return {std::move(train), std::move(test)};
}

ClientData client_view(const EmbeddingDataset& ds, std::span<const std::size_t> indices) {
  ClientData out;
  out.dim = ds.dim();
  out.num_classes = ds.num_classes();
  out.features.reserve(indices.size() * static_cast<std::size_t>(ds.dim()));
  out.labels.reserve(indices.size());
  for (auto i : indices) {
    require(i < ds.size(), "client_view: index out of range");
    auto x = ds.features(i);
    out.features.insert(out.features.end(), x.begin(), x.end());
    out.labels.push_back(ds.observed_labels()[i]);
  }
  return out;
}

std::vector<ClassIndex> oracle_labels(const EmbeddingDataset& ds, std::span<const std::size_t> indices) {
  std::vector<ClassIndex> out;
  out.reserve(indices.size());
  for (auto i : indices) out.push_back(ds.true_labels().at(i));
  return out;
}

PartitionMap partition_iid(std::size_t n, int num_clients, std::uint64_t seed) {
  require(num_clients >= 1, "partition_iid: num_clients must be >= 1");
  require(static_cast<std::size_t>(num_clients) <= n,
          "partition_iid: more clients (" + std::to_string(num_clients) + ") than samples (" +
              std::to_string(n) + ")");
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::mt19937_64 rng(seed);
  std::shuffle(order.begin(), order.end(), rng);

  PartitionMap pm;
  const std::size_t base = n / num_clients;
  const std::size_t extra = n % num_clients;
  std::size_t pos = 0;
  for (int m = 0; m < num_clients; ++m) {
    const std::size_t len = base + (static_cast<std::size_t>(m) < extra ? 1 : 0);
    std::vector<std::size_t> chunk(order.begin() + pos, order.begin() + pos + len);
    std::sort(chunk.begin(), chunk.end());
    pm.assignments[m] = std::move(chunk);
    pos += len;
  }
  return pm;
}

namespace {

// Largest-remainder apportionment of `total` by `weights`; ties go to the
// lower index.
std::vector<std::size_t> apportion(std::size_t total, const std::vector<double>& weights) {
  const double sum = std::accumulate(weights.begin(), weights.end(), 0.0);
  std::vector<std::size_t> counts(weights.size(), 0);
  std::vector<std::pair<double, std::size_t>> rema;
  std::size_t assigned = 0;
  for (std::size_t m = 0; m < weights.size(); ++m) {
    const double exact = static_cast<double>(total) * weights[m] / sum;
    counts[m] = static_cast<std::size_t>(std::floor(exact));
    assigned += counts[m];
    rema.emplace_back(exact - std::floor(exact), m);
  }
  std::stable_sort(rema.begin(), rema.end(),
                   [](const auto& a, const auto& b) { return a.first > b.first; });
  for (std::size_t r = 0; assigned < total; ++r, ++assigned) ++counts[rema[r % rema.size()].second];
  return counts;
}

}  // namespace

PartitionMap partition_dirichlet(std::span<const ClassIndex> labels, int num_classes, int num_clients,
                                 double alpha, std::uint64_t seed) {
  require(num_clients >= 1, "partition_dirichlet: num_clients must be >= 1");
  require(alpha > 0.0 && std::isfinite(alpha), "partition_dirichlet: alpha must be > 0");
  require(num_classes >= 1, "partition_dirichlet: num_classes must be >= 1");

  std::vector<std::vector<std::size_t>> by_class(num_classes);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    require(labels[i] < num_classes, "partition_dirichlet: label out of range at index " +
                                         std::to_string(i));
    by_class[labels[i]].push_back(i);
  }

  std::mt19937_64 rng(seed);
  std::gamma_distribution<double> gamma(alpha, 1.0);
  constexpr int kMaxAttempts = 100;
  for (int attempt = 0; attempt < kMaxAttempts; ++attempt) {
    std::vector<std::vector<std::size_t>> shards(num_clients);
    bool degenerate = false;
    for (int k = 0; k < num_classes; ++k) {
      auto members = by_class[k];
      std::shuffle(members.begin(), members.end(), rng);
      std::vector<double> props(num_clients);
      for (auto& p : props) p = gamma(rng);
      if (std::accumulate(props.begin(), props.end(), 0.0) <= 0.0) {
        degenerate = true;
        continue;
      }
      const auto counts = apportion(members.size(), props);
      std::size_t pos = 0;
      for (int m = 0; m < num_clients; ++m) {
        shards[m].insert(shards[m].end(), members.begin() + pos, members.begin() + pos + counts[m]);
        pos += counts[m];
      }
    }
    if (degenerate) continue;
    if (std::any_of(shards.begin(), shards.end(), [](const auto& s) { return s.empty(); })) continue;
    PartitionMap pm;
    for (int m = 0; m < num_clients; ++m) {
      std::sort(shards[m].begin(), shards[m].end());
      pm.assignments[m] = std::move(shards[m]);
    }
    return pm;
  }
  throw ParameterError("partition_dirichlet: no assignment without empty clients after 100 attempts; "
                       "use a larger alpha or fewer clients");
}

EmbeddingDataset corrupt_clients(const EmbeddingDataset& train, const PartitionMap& partition,
                                 std::span<const ClientNoiseProfile> profiles, std::uint64_t seed) {
  std::map<int, const NoiseMatrix*> by_client;
  for (const auto& p : profiles) {
    require(p.matrix.num_classes() == train.num_classes(),
            "corrupt_clients: profile for client " + std::to_string(p.client_id) +
                " has the wrong class count");
    by_client[p.client_id] = &p.matrix;
  }
  EmbeddingDataset out = train;
  for (const auto& [id, idx] : partition.assignments) {
    auto it = by_client.find(id);
    if (it == by_client.end())
      throw ParameterError("corrupt_clients: missing noise profile for client " + std::to_string(id));
    std::vector<ClassIndex> truth;
    truth.reserve(idx.size());
    for (auto i : idx) truth.push_back(train.true_labels().at(i));
    const auto noisy = apply_noise(truth, *it->second, hash64({seed, static_cast<std::uint64_t>(id)}));
    for (std::size_t r = 0; r < idx.size(); ++r) out.set_observed(idx[r], noisy[r]);
  }
  return out;
}

}  // namespace fedln
