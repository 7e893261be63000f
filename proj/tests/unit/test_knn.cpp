#include <gtest/gtest.h>

#include <numeric>
#include <random>

#include "fedln/knn.hpp"
#include "oracles.hpp"

using namespace fedln;

namespace {

struct RefSet {
  int dim;
  int classes;
  std::vector<float> x;
  std::vector<ClassIndex> y;

  KnnReference view() const { return {dim, classes, x, y}; }
};

// Integer-valued coordinates make exact distance ties common.
RefSet lattice(std::size_t n, int dim, int classes, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<int> coord(-2, 2), lab(0, classes - 1);
  RefSet r{dim, classes, {}, {}};
  for (std::size_t i = 0; i < n; ++i) {
    for (int t = 0; t < dim; ++t) r.x.push_back(static_cast<float>(coord(rng)));
    r.y.push_back(static_cast<ClassIndex>(lab(rng)));
  }
  return r;
}

RefSet gaussian(std::size_t n, int dim, int classes, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<float> g;
  std::uniform_int_distribution<int> lab(0, classes - 1);
  RefSet r{dim, classes, {}, {}};
  for (std::size_t i = 0; i < n; ++i) {
    for (int t = 0; t < dim; ++t) r.x.push_back(g(rng));
    r.y.push_back(static_cast<ClassIndex>(lab(rng)));
  }
  return r;
}

}  // namespace

TEST(Knn, ExactMatchWithKOne) {
  RefSet r{2, 3, {0, 0, 5, 5, 9, 1}, {0, 2, 1}};
  std::vector<float> q{5, 5};
  const auto v = knn_predict(r.view(), q, 1);
  EXPECT_EQ(v.label, 2);
  EXPECT_EQ(v.agreement, 1.0);
}

TEST(Knn, MajorityOfThree) {
  RefSet r{1, 2, {0, 1, 2, 50}, {0, 0, 1, 1}};
  std::vector<float> q{0.5f};
  const auto v = knn_predict(r.view(), q, 3);
  EXPECT_EQ(v.label, 0);
  EXPECT_NEAR(v.agreement, 2.0 / 3.0, 1e-15);
}

TEST(Knn, TieBreaks) {
  // Equidistant neighbours: the lower index wins the last slot.
  RefSet r{1, 3, {-1, 1, 1}, {2, 1, 0}};
  std::vector<float> q{0};
  EXPECT_EQ(knn_predict(r.view(), q, 1).label, 2);
  // One vote each for classes 2 and 1: lower class wins.
  EXPECT_EQ(knn_predict(r.view(), q, 2).label, 1);
}

TEST(Knn, LeaveOneOutAndTooLargeK) {
  RefSet r{1, 2, {0, 0.1f, 5}, {1, 0, 0}};
  std::vector<float> q{0};
  EXPECT_EQ(knn_predict(r.view(), q, 1, KnnMetric::euclidean, 0).label, 0);
  EXPECT_THROW(knn_predict(r.view(), q, 3, KnnMetric::euclidean, 0), ParameterError);
  EXPECT_THROW(knn_predict(r.view(), q, 4), ParameterError);
  EXPECT_NO_THROW(knn_predict(r.view(), q, 3));
}

TEST(Knn, CosineIgnoresScale) {
  RefSet r{2, 2, {1, 0, 0, 1}, {0, 1}};
  std::vector<float> q{0.1f, 5.0f};
  EXPECT_EQ(knn_predict(r.view(), q, 1, KnnMetric::cosine).label, 1);
}

TEST(Knn, MatchesBruteForceOracle) {
  for (bool cosine : {false, true}) {
    const auto ref = cosine ? gaussian(1000, 4, 5, 2) : lattice(1000, 4, 5, 1);
    const auto queries = cosine ? gaussian(200, 4, 5, 98) : lattice(200, 4, 5, 99);
    const auto metric = cosine ? KnnMetric::cosine : KnnMetric::euclidean;
    for (int qi = 0; qi < 200; ++qi) {
      std::vector<float> q(queries.x.begin() + qi * 4, queries.x.begin() + qi * 4 + 4);
      const int k = 1 + qi % 15;
      const auto got = knn_predict(ref.view(), q, k, metric);
      const auto want = oracle::brute_knn(ref.x, ref.y, 4, 5, q, k, cosine);
      ASSERT_EQ(got.label, want.label) << "query " << qi << " cosine " << cosine;
      ASSERT_EQ(got.agreement, want.agreement);
    }
  }
}

TEST(Knn, LeaveOneOutMatchesOracle) {
  const auto ref = lattice(300, 3, 4, 5);
  const auto votes = knn_leave_one_out(ref.view(), 7);
  for (std::size_t i = 0; i < ref.y.size(); ++i) {
    std::vector<float> q(ref.x.begin() + i * 3, ref.x.begin() + i * 3 + 3);
    const auto want = oracle::brute_knn(ref.x, ref.y, 3, 4, q, 7, false, static_cast<long>(i));
    ASSERT_EQ(votes[i].label, want.label) << i;
    ASSERT_EQ(votes[i].agreement, want.agreement);
  }
}

TEST(Knn, PermutationEquivariantWithoutTies) {
  std::mt19937_64 rng(8);
  std::normal_distribution<float> g;
  RefSet r{3, 4, {}, {}};
  for (int i = 0; i < 200; ++i) {
    for (int t = 0; t < 3; ++t) r.x.push_back(g(rng));
    r.y.push_back(static_cast<ClassIndex>(i % 4));
  }
  std::vector<std::size_t> perm(200);
  std::iota(perm.begin(), perm.end(), 0);
  std::shuffle(perm.begin(), perm.end(), rng);
  RefSet p{3, 4, {}, {}};
  for (auto i : perm) {
    p.x.insert(p.x.end(), r.x.begin() + i * 3, r.x.begin() + i * 3 + 3);
    p.y.push_back(r.y[i]);
  }
  for (int t = 0; t < 50; ++t) {
    std::vector<float> q{g(rng), g(rng), g(rng)};
    const auto a = knn_predict(r.view(), q, 9), b = knn_predict(p.view(), q, 9);
    EXPECT_EQ(a.label, b.label);
    EXPECT_EQ(a.agreement, b.agreement);
  }
}
