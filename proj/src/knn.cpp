#include "fedln/knn.hpp"

#include <algorithm>
#include <cmath>
#include <utility>

namespace fedln {

namespace {

double squared_euclidean(std::span<const float> a, std::span<const float> b) {
  double s = 0.0;
  for (std::size_t t = 0; t < a.size(); ++t) {
    const double diff = static_cast<double>(a[t]) - static_cast<double>(b[t]);
    s += diff * diff;
  }
  return s;
}

double cosine_distance(std::span<const float> a, std::span<const float> b) {
  double dot = 0.0;
  double na = 0.0;
  double nb = 0.0;
  for (std::size_t t = 0; t < a.size(); ++t) {
    dot += static_cast<double>(a[t]) * b[t];
    na += static_cast<double>(a[t]) * a[t];
    nb += static_cast<double>(b[t]) * b[t];
  }
  if (na == 0.0 || nb == 0.0) return 1.0;
  return 1.0 - dot / (std::sqrt(na) * std::sqrt(nb));
}

}  // namespace

std::string to_string(KnnMetric m) { return m == KnnMetric::euclidean ? "euclidean" : "cosine"; }

KnnMetric knn_metric_from_string(const std::string& s) {
  if (s == "euclidean") return KnnMetric::euclidean;
  if (s == "cosine") return KnnMetric::cosine;
  throw ParameterError("unknown knn metric '" + s + "'");
}

KnnVote knn_predict(const KnnReference& ref, std::span<const float> query, int k, KnnMetric metric,
                    std::optional<std::size_t> exclude) {
  require(k >= 1, "knn: k must be >= 1");
  require(query.size() == static_cast<std::size_t>(ref.dim), "knn: query dimension mismatch");
  require(ref.features.size() == ref.size() * static_cast<std::size_t>(ref.dim),
          "knn: reference feature buffer does not match label count");
  const std::size_t available = ref.size() - (exclude && *exclude < ref.size() ? 1 : 0);
  if (static_cast<std::size_t>(k) > available)
    throw ParameterError("knn: k=" + std::to_string(k) + " exceeds the " + std::to_string(available) +
                         " available reference points");

  const std::size_t d = static_cast<std::size_t>(ref.dim);
  std::vector<std::pair<double, std::size_t>> cand;
  cand.reserve(ref.size());
  for (std::size_t i = 0; i < ref.size(); ++i) {
    if (exclude && *exclude == i) continue;
    const auto x = ref.features.subspan(i * d, d);
    const double dist = metric == KnnMetric::euclidean ? squared_euclidean(query, x)
                                                        : cosine_distance(query, x);
    cand.emplace_back(dist, i);
  }
  std::partial_sort(cand.begin(), cand.begin() + k, cand.end());

  std::vector<int> votes(static_cast<std::size_t>(ref.num_classes), 0);
  for (int r = 0; r < k; ++r) {
    const auto label = ref.labels[cand[r].second];
    require(label < ref.num_classes, "knn: reference label out of range");
    ++votes[label];
  }
  const auto best = std::max_element(votes.begin(), votes.end());  // first max = lowest class
  return {static_cast<ClassIndex>(best - votes.begin()), static_cast<double>(*best) / k};
}

std::vector<KnnVote> knn_leave_one_out(const KnnReference& ref, int k, KnnMetric metric) {
  const std::size_t d = static_cast<std::size_t>(ref.dim);
  std::vector<KnnVote> out;
  out.reserve(ref.size());
  for (std::size_t i = 0; i < ref.size(); ++i)
    out.push_back(knn_predict(ref, ref.features.subspan(i * d, d), k, metric, i));
  return out;
}

}  // namespace fedln
