#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "fedln/common.hpp"
#include "fedln/dataset.hpp"

namespace fedln {

enum class KnnMetric { euclidean, cosine };

std::string to_string(KnnMetric m);
KnnMetric knn_metric_from_string(const std::string& s);

/// Reference points for neighbour queries; spans must outlive the view.
struct KnnReference {
  int dim = 0;
  int num_classes = 0;
  std::span<const float> features;  // size() x dim
  std::span<const ClassIndex> labels;

  std::size_t size() const { return labels.size(); }
  static KnnReference of(const ClientData& data) {
    return {data.dim, data.num_classes, data.features, data.labels};
  }
};

struct KnnVote {
  ClassIndex label = 0;
  /// Votes for the winning label divided by k.
  double agreement = 0.0;
};

/// Majority vote over the k nearest reference labels. Distance ties go to
/// the lower reference index, vote ties to the lower class index.
/// `exclude` removes one reference (leave-one-out).
KnnVote knn_predict(const KnnReference& ref, std::span<const float> query, int k,
                    KnnMetric metric = KnnMetric::euclidean,
                    std::optional<std::size_t> exclude = std::nullopt);

/// Leave-one-out votes for every reference point against the others.
std::vector<KnnVote> knn_leave_one_out(const KnnReference& ref, int k,
                                       KnnMetric metric = KnnMetric::euclidean);

}  // namespace fedln
