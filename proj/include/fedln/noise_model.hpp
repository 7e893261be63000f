#pragma once

#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "fedln/common.hpp"

namespace fedln {

enum class NoiseStructure { uniform, sparse_random, class_flip };

std::string to_string(NoiseStructure s);
NoiseStructure noise_structure_from_string(const std::string& s);

/// Parameters of a class-conditional flipping process.
/// `uniform` ignores noise_sparsity (treated as 0); `class_flip` treats it as 1.
struct NoiseSpec {
  int num_classes = 10;
  double noise_level = 0.0;
  double noise_sparsity = 0.0;
  NoiseStructure structure = NoiseStructure::uniform;
  std::uint64_t seed = 0;

  void validate() const;
  double effective_sparsity() const;
};

void to_json(nlohmann::json& j, const NoiseSpec& s);
void from_json(const nlohmann::json& j, NoiseSpec& s);

/// Column-stochastic C x C matrix; at(i, j) = p(observed = i | true = j).
class NoiseMatrix {
 public:
  /// Identity (noise-free) matrix.
  explicit NoiseMatrix(int num_classes);
  /// Validates entries (row-major, C*C) for non-negativity and column sums.
  NoiseMatrix(int num_classes, std::vector<double> row_major);

  int num_classes() const { return c_; }
  double at(int observed, int truth) const { return q_[static_cast<std::size_t>(observed) * c_ + truth]; }
  std::vector<double> column(int truth) const;
  const std::vector<double>& row_major() const { return q_; }

  friend bool operator==(const NoiseMatrix&, const NoiseMatrix&) = default;

 private:
  int c_;
  std::vector<double> q_;
};

struct ClientNoiseProfile {
  int client_id = 0;
  NoiseMatrix matrix{2};
};

/// Diagonal entries equal 1 - n_l. Each noisy column spreads n_l equally
/// over m off-diagonal targets, m = 1 + round((1 - n_s)(C - 2)) for C > 2,
/// drawn without replacement from a generator seeded per spec.
/// class_flip pairs classes (0,1), (2,3), ...; with odd C the last class
/// stays clean.
NoiseMatrix build_noise_matrix(const NoiseSpec& spec);

/// 1 - trace(Q)/C.
double measure_noise_level(const NoiseMatrix& q);
/// 1 - Q[j][j] for every class j.
std::vector<double> per_class_noise_level(const NoiseMatrix& q);

struct NoiseSparsity {
  /// Mean over noisy columns of (zero off-diagonals)/(C - 1).
  double raw = 0.0;
  /// Rescaled so that one positive off-diagonal per column gives 1 and a
  /// fully populated column gives 0: 1 - (m - 1)/(C - 2). Equals raw for C = 2.
  double normalized = 0.0;
  /// Mean positive off-diagonal count over noisy columns.
  double mean_targets = 0.0;
  /// Columns with off-diagonal mass; zero means sparsity is undefined.
  int noisy_columns = 0;
};

/// Entries below 1e-12 count as structural zeros; columns without
/// off-diagonal mass are excluded from the average (all-zero result if none).
NoiseSparsity measure_noise_sparsity(const NoiseMatrix& q);

/// Redraws every label from column Q[., y*] with a generator seeded by `seed`.
std::vector<ClassIndex> apply_noise(std::span<const ClassIndex> true_labels, const NoiseMatrix& q,
                                    std::uint64_t seed);

/// Observed-given-true frequencies. Throws ParameterError naming the first
/// class absent from `true_labels`.
NoiseMatrix empirical_matrix(std::span<const ClassIndex> true_labels,
                             std::span<const ClassIndex> observed_labels, int num_classes);

/// C rows x C columns, 17 significant digits.
void write_matrix_csv(std::ostream& os, const NoiseMatrix& q);
NoiseMatrix read_matrix_csv(std::istream& is);

}  // namespace fedln
