#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "fedln/common.hpp"
#include "fedln/noise_model.hpp"

namespace fedln {

enum class Split { train, test };

/// Labelled embedding vectors. Features are stored row-major as f32, which
/// is also the on-disk precision, so save/load round trips are exact.
///
/// True labels are evaluation-only. Training, estimation and correction code
/// receives ClientData (see below), which carries observed labels only.
class EmbeddingDataset {
 public:
  EmbeddingDataset() = default;
  EmbeddingDataset(int dim, int num_classes, Split split);

  int dim() const { return dim_; }
  int num_classes() const { return num_classes_; }
  Split split() const { return split_; }
  std::size_t size() const { return observed_.size(); }
  bool has_oracle() const { return has_oracle_; }

  std::span<const float> features(std::size_t i) const {
    return {features_.data() + i * static_cast<std::size_t>(dim_), static_cast<std::size_t>(dim_)};
  }
  const std::vector<float>& all_features() const { return features_; }
  const std::vector<ClassIndex>& observed_labels() const { return observed_; }
  const std::vector<ClassIndex>& true_labels() const { return true_; }

  /// Appends one example; throws ParameterError on dimension or label violations.
  void add(std::span<const float> x, ClassIndex observed, ClassIndex truth);
  void set_observed(std::size_t i, ClassIndex label);
  /// Marks the dataset as lacking ground truth (true := observed).
  void drop_oracle();
  /// Rewrites every true label (audit hook for leakage tests).
  void overwrite_true_labels(std::span<const ClassIndex> labels);

  /// Enforces all invariants, including observed == true on the test split.
  void validate() const;

  friend bool operator==(const EmbeddingDataset&, const EmbeddingDataset&) = default;

 private:
  int dim_ = 0;
  int num_classes_ = 0;
  Split split_ = Split::train;
  bool has_oracle_ = true;
  std::vector<float> features_;
  std::vector<ClassIndex> observed_;
  std::vector<ClassIndex> true_;
};

/// A client's private shard: features plus observed labels, nothing else.
struct ClientData {
  int dim = 0;
  int num_classes = 0;
  std::vector<float> features;
  std::vector<ClassIndex> labels;

  std::size_t size() const { return labels.size(); }
  std::span<const float> row(std::size_t i) const {
    return {features.data() + i * static_cast<std::size_t>(dim), static_cast<std::size_t>(dim)};
  }
};

/// client_id -> sorted indices into the train split.
struct PartitionMap {
  std::map<int, std::vector<std::size_t>> assignments;

  int num_clients() const { return static_cast<int>(assignments.size()); }
  /// Checks disjointness, coverage of [0, n) and non-empty shards.
  void validate(std::size_t n) const;
};

struct SyntheticSpec {
  int num_classes = 10;
  int dim = 32;
  int per_class_count = 500;
  double separation = 6.0;
  std::uint64_t seed = 0;

  void validate() const;
};

/// Gaussian mixture with class means uniform on the radius-`separation`
/// sphere and unit isotropic covariance. Test split holds
/// ceil(per_class_count / 5) samples per class.
std::pair<EmbeddingDataset, EmbeddingDataset> generate_gaussian_mixture(const SyntheticSpec& spec);

ClientData client_view(const EmbeddingDataset& ds, std::span<const std::size_t> indices);
/// True labels for the same indices, for evaluation code only.
std::vector<ClassIndex> oracle_labels(const EmbeddingDataset& ds, std::span<const std::size_t> indices);

PartitionMap partition_iid(std::size_t n, int num_clients, std::uint64_t seed);
PartitionMap partition_dirichlet(std::span<const ClassIndex> labels, int num_classes, int num_clients,
                                 double alpha, std::uint64_t seed);

/// Redraws each client's observed labels from its profile's matrix, with
/// sub-seed hash64({seed, client_id}). True labels are left untouched.
EmbeddingDataset corrupt_clients(const EmbeddingDataset& train, const PartitionMap& partition,
                                 std::span<const ClientNoiseProfile> profiles, std::uint64_t seed);

// I/O. FLNE binary (little-endian):
//   "FLNE" | u16 version=1 | u16 flags (bit0: true labels) | u64 N | u32 d | u32 C
//   N x ( d x f32 | u16 observed | [u16 true] )
// CSV: header f0,...,f{d-1},label[,true_label], one record per line.
void save_flne(const EmbeddingDataset& ds, const std::filesystem::path& path);
void save_csv(const EmbeddingDataset& ds, const std::filesystem::path& path);
EmbeddingDataset load_flne(const std::filesystem::path& path, Split split = Split::train);
/// CSV carries no class count; it is inferred as max label + 1 unless given.
EmbeddingDataset load_csv(const std::filesystem::path& path, Split split = Split::train,
                          int num_classes = 0);
/// Detects the format from the leading magic bytes.
EmbeddingDataset load_dataset(const std::filesystem::path& path, Split split = Split::train);

}  // namespace fedln
