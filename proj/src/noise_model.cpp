#include "fedln/noise_model.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <istream>
#include <numeric>
#include <ostream>
#include <random>
#include <sstream>

namespace fedln {

namespace {

constexpr double kColumnSumTolerance = 1e-9;
constexpr double kZeroThreshold = 1e-12;

int target_count(const NoiseSpec& spec) {
  const int c = spec.num_classes;
  if (c == 2) return 1;
  const double ns = spec.effective_sparsity();
  return 1 + static_cast<int>(std::lround((1.0 - ns) * (c - 2)));
}

}  // namespace

std::string to_string(NoiseStructure s) {
  switch (s) {
    case NoiseStructure::uniform: return "uniform";
    case NoiseStructure::sparse_random: return "sparse_random";
    case NoiseStructure::class_flip: return "class_flip";
  }
  return "?";
}

NoiseStructure noise_structure_from_string(const std::string& s) {
  if (s == "uniform") return NoiseStructure::uniform;
  if (s == "sparse_random") return NoiseStructure::sparse_random;
  if (s == "class_flip") return NoiseStructure::class_flip;
  throw ParameterError("unknown noise structure '" + s + "'");
}

void NoiseSpec::validate() const {
  require(num_classes >= 2, "noise spec: num_classes must be >= 2");
  require(noise_level >= 0.0 && noise_level <= 1.0, "noise spec: noise_level must lie in [0,1]");
  require(noise_sparsity >= 0.0 && noise_sparsity <= 1.0,
          "noise spec: noise_sparsity must lie in [0,1]");
  require(num_classes <= 65535, "noise spec: num_classes exceeds label range");
}

double NoiseSpec::effective_sparsity() const {
  switch (structure) {
    case NoiseStructure::uniform: return 0.0;
    case NoiseStructure::class_flip: return 1.0;
    case NoiseStructure::sparse_random: return noise_sparsity;
  }
  return noise_sparsity;
}

void to_json(nlohmann::json& j, const NoiseSpec& s) {
  j = nlohmann::json{{"num_classes", s.num_classes},
                     {"noise_level", s.noise_level},
                     {"noise_sparsity", s.noise_sparsity},
                     {"structure", to_string(s.structure)},
                     {"seed", s.seed}};
}

void from_json(const nlohmann::json& j, NoiseSpec& s) {
  s.num_classes = j.at("num_classes").get<int>();
  s.noise_level = j.at("noise_level").get<double>();
  s.noise_sparsity = j.at("noise_sparsity").get<double>();
  s.structure = noise_structure_from_string(j.at("structure").get<std::string>());
  s.seed = j.at("seed").get<std::uint64_t>();
}

NoiseMatrix::NoiseMatrix(int num_classes) : c_(num_classes) {
  require(num_classes >= 1, "noise matrix: num_classes must be positive");
  q_.assign(static_cast<std::size_t>(c_) * c_, 0.0);
  for (int i = 0; i < c_; ++i) q_[static_cast<std::size_t>(i) * c_ + i] = 1.0;
}

NoiseMatrix::NoiseMatrix(int num_classes, std::vector<double> row_major)
    : c_(num_classes), q_(std::move(row_major)) {
  require(num_classes >= 1, "noise matrix: num_classes must be positive");
  require(q_.size() == static_cast<std::size_t>(c_) * c_, "noise matrix: expected C*C entries");
  for (int j = 0; j < c_; ++j) {
    double sum = 0.0;
    for (int i = 0; i < c_; ++i) {
      const double v = at(i, j);
      require(std::isfinite(v) && v >= 0.0, "noise matrix: negative or non-finite entry");
      sum += v;
    }
    require(std::abs(sum - 1.0) <= kColumnSumTolerance,
            "noise matrix: column " + std::to_string(j) + " does not sum to 1");
  }
}

std::vector<double> NoiseMatrix::column(int truth) const {
  std::vector<double> col(c_);
  for (int i = 0; i < c_; ++i) col[i] = at(i, truth);
  return col;
}

NoiseMatrix build_noise_matrix(const NoiseSpec& spec) {
  spec.validate();
  const int c = spec.num_classes;
  const double nl = spec.noise_level;
  if (nl == 0.0) return NoiseMatrix(c);

  std::vector<double> q(static_cast<std::size_t>(c) * c, 0.0);
  auto entry = [&](int i, int j) -> double& { return q[static_cast<std::size_t>(i) * c + j]; };

  if (spec.structure == NoiseStructure::class_flip) {
    for (int j = 0; j < c; ++j) entry(j, j) = 1.0;
    for (int a = 0; a + 1 < c; a += 2) {
      const int b = a + 1;
      entry(a, a) = entry(b, b) = 1.0 - nl;
      entry(b, a) = entry(a, b) = nl;
    }
    return NoiseMatrix(c, std::move(q));
  }

  const int m = spec.structure == NoiseStructure::uniform ? c - 1 : target_count(spec);
  const double share = nl / m;
  std::mt19937_64 rng(spec.seed);
  std::vector<int> candidates;
  std::vector<int> chosen;
  for (int j = 0; j < c; ++j) {
    entry(j, j) = 1.0 - nl;
    candidates.clear();
    for (int i = 0; i < c; ++i)
      if (i != j) candidates.push_back(i);
    chosen.clear();
    if (m == c - 1) {
      chosen = candidates;
    } else {
      std::sample(candidates.begin(), candidates.end(), std::back_inserter(chosen), m, rng);
    }
    for (int i : chosen) entry(i, j) = share;
  }
  return NoiseMatrix(c, std::move(q));
}

double measure_noise_level(const NoiseMatrix& q) {
  double trace = 0.0;
  for (int j = 0; j < q.num_classes(); ++j) trace += q.at(j, j);
  return 1.0 - trace / q.num_classes();
}

std::vector<double> per_class_noise_level(const NoiseMatrix& q) {
  std::vector<double> out(q.num_classes());
  for (int j = 0; j < q.num_classes(); ++j) out[j] = 1.0 - q.at(j, j);
  return out;
}

NoiseSparsity measure_noise_sparsity(const NoiseMatrix& q) {
  const int c = q.num_classes();
  NoiseSparsity s;
  if (c < 2) return s;
  double zero_frac_sum = 0.0;
  double targets_sum = 0.0;
  for (int j = 0; j < c; ++j) {
    int positive = 0;
    for (int i = 0; i < c; ++i)
      if (i != j && q.at(i, j) >= kZeroThreshold) ++positive;
    if (positive == 0) continue;
    ++s.noisy_columns;
    zero_frac_sum += static_cast<double>(c - 1 - positive) / (c - 1);
    targets_sum += positive;
  }
  if (s.noisy_columns == 0) return s;
  s.raw = zero_frac_sum / s.noisy_columns;
  s.mean_targets = targets_sum / s.noisy_columns;
  s.normalized = c == 2 ? s.raw : 1.0 - (s.mean_targets - 1.0) / (c - 2);
  return s;
}

std::vector<ClassIndex> apply_noise(std::span<const ClassIndex> true_labels, const NoiseMatrix& q,
                                    std::uint64_t seed) {
  const int c = q.num_classes();
  std::vector<std::discrete_distribution<int>> columns;
  columns.reserve(c);
  for (int j = 0; j < c; ++j) {
    auto col = q.column(j);
    columns.emplace_back(col.begin(), col.end());
  }
  std::mt19937_64 rng(seed);
  std::vector<ClassIndex> out(true_labels.size());
  for (std::size_t k = 0; k < true_labels.size(); ++k) {
    const int y = true_labels[k];
    if (y >= c)
      throw ParameterError("apply_noise: label " + std::to_string(y) + " at index " +
                           std::to_string(k) + " is out of range for C=" + std::to_string(c));
    out[k] = static_cast<ClassIndex>(columns[y](rng));
  }
  return out;
}

NoiseMatrix empirical_matrix(std::span<const ClassIndex> true_labels,
                             std::span<const ClassIndex> observed_labels, int num_classes) {
  require(true_labels.size() == observed_labels.size(),
          "empirical_matrix: label sequences differ in length");
  require(num_classes >= 1, "empirical_matrix: num_classes must be positive");
  const auto c = static_cast<std::size_t>(num_classes);
  std::vector<std::size_t> counts(c * c, 0);
  std::vector<std::size_t> totals(c, 0);
  for (std::size_t k = 0; k < true_labels.size(); ++k) {
    const auto t = true_labels[k];
    const auto o = observed_labels[k];
    require(t < c && o < c, "empirical_matrix: label out of range at index " + std::to_string(k));
    ++counts[o * c + t];
    ++totals[t];
  }
  std::vector<double> q(c * c, 0.0);
  for (std::size_t j = 0; j < c; ++j) {
    if (totals[j] == 0)
      throw ParameterError("empirical_matrix: class " + std::to_string(j) +
                           " never appears among true labels");
    for (std::size_t i = 0; i < c; ++i)
      q[i * c + j] = static_cast<double>(counts[i * c + j]) / static_cast<double>(totals[j]);
  }
  return NoiseMatrix(num_classes, std::move(q));
}

void write_matrix_csv(std::ostream& os, const NoiseMatrix& q) {
  const auto flags = os.flags();
  const auto prec = os.precision();
  os << std::setprecision(17);
  for (int i = 0; i < q.num_classes(); ++i) {
    for (int j = 0; j < q.num_classes(); ++j) {
      if (j) os << ',';
      os << q.at(i, j);
    }
    os << '\n';
  }
  os.flags(flags);
  os.precision(prec);
}

NoiseMatrix read_matrix_csv(std::istream& is) {
  std::vector<double> values;
  std::string line;
  int rows = 0;
  int cols = -1;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    ++rows;
    std::stringstream ss(line);
    std::string cell;
    int n = 0;
    while (std::getline(ss, cell, ',')) {
      try {
        values.push_back(std::stod(cell));
      } catch (const std::exception&) {
        throw ParseError("matrix csv: bad number '" + cell + "' on line " + std::to_string(rows));
      }
      ++n;
    }
    if (cols < 0) cols = n;
    if (n != cols)
      throw ParseError("matrix csv: ragged row on line " + std::to_string(rows));
  }
  if (rows == 0 || rows != cols) throw ParseError("matrix csv: expected a square matrix");
  return NoiseMatrix(rows, std::move(values));
}

}  // namespace fedln
