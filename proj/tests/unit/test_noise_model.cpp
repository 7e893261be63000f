#include <gtest/gtest.h>

#include <numeric>
#include <random>
#include <sstream>

#include "fedln/noise_model.hpp"

using namespace fedln;

namespace {

NoiseSpec spec(int c, double nl, double ns, NoiseStructure st, std::uint64_t seed = 0) {
  NoiseSpec s;
  s.num_classes = c;
  s.noise_level = nl;
  s.noise_sparsity = ns;
  s.structure = st;
  s.seed = seed;
  return s;
}

int positive_off_diagonals(const NoiseMatrix& q, int j) {
  int n = 0;
  for (int i = 0; i < q.num_classes(); ++i)
    if (i != j && q.at(i, j) > 1e-12) ++n;
  return n;
}

}  // namespace

TEST(NoiseMatrix, ZeroLevelIsIdentityForEveryStructure) {
  for (auto st : {NoiseStructure::uniform, NoiseStructure::sparse_random, NoiseStructure::class_flip})
    for (double ns : {0.0, 0.5, 1.0}) EXPECT_EQ(build_noise_matrix(spec(10, 0.0, ns, st, 5)), NoiseMatrix(10));
}

TEST(NoiseMatrix, UniformFourClasses) {
  const auto q = build_noise_matrix(spec(4, 0.6, 0.0, NoiseStructure::uniform));
  for (int i = 0; i < 4; ++i)
    for (int j = 0; j < 4; ++j) EXPECT_NEAR(q.at(i, j), i == j ? 0.4 : 0.2, 1e-15);
}

TEST(NoiseMatrix, ClassFlipPairs) {
  const auto q = build_noise_matrix(spec(10, 0.4, 1.0, NoiseStructure::class_flip, 7));
  for (int j = 0; j < 10; ++j) {
    ASSERT_EQ(positive_off_diagonals(q, j), 1);
    const int partner = j ^ 1;
    EXPECT_DOUBLE_EQ(q.at(partner, j), 0.4);
    EXPECT_DOUBLE_EQ(q.at(j, partner), 0.4);
  }
}

TEST(NoiseMatrix, ClassFlipOddLeavesLastClassClean) {
  const auto q = build_noise_matrix(spec(5, 0.3, 1.0, NoiseStructure::class_flip));
  EXPECT_DOUBLE_EQ(q.at(4, 4), 1.0);
  EXPECT_DOUBLE_EQ(q.at(1, 0), 0.3);
  EXPECT_DOUBLE_EQ(q.at(2, 3), 0.3);
}

TEST(NoiseMatrix, SparseRandomHalfSparsity) {
  const auto q = build_noise_matrix(spec(10, 0.3, 0.5, NoiseStructure::sparse_random, 11));
  for (int j = 0; j < 10; ++j) {
    EXPECT_EQ(positive_off_diagonals(q, j), 5);
    for (int i = 0; i < 10; ++i)
      if (i != j && q.at(i, j) > 0) EXPECT_NEAR(q.at(i, j), 0.06, 1e-15);
  }
  const auto s = measure_noise_sparsity(q);
  EXPECT_NEAR(s.raw, 4.0 / 9.0, 1e-12);
  EXPECT_NEAR(s.normalized, 0.5, 1e-12);
}

TEST(NoiseMatrix, TwoClassesAlwaysFlipToTheOther) {
  for (auto st : {NoiseStructure::uniform, NoiseStructure::sparse_random, NoiseStructure::class_flip}) {
    const auto q = build_noise_matrix(spec(2, 0.25, 0.5, st));
    EXPECT_DOUBLE_EQ(q.at(1, 0), 0.25);
    EXPECT_DOUBLE_EQ(q.at(0, 1), 0.25);
  }
}

TEST(NoiseMatrix, InvalidSpecsRejected) {
  EXPECT_THROW(build_noise_matrix(spec(1, 0.1, 0, NoiseStructure::uniform)), ParameterError);
  EXPECT_THROW(build_noise_matrix(spec(4, 1.2, 0, NoiseStructure::uniform)), ParameterError);
  EXPECT_THROW(build_noise_matrix(spec(4, 0.2, -0.1, NoiseStructure::sparse_random)), ParameterError);
  EXPECT_THROW(NoiseMatrix(2, {0.5, 0.5, 0.6, 0.5}), ParameterError);
  EXPECT_THROW(NoiseMatrix(2, {1.1, 0.0, -0.1, 1.0}), ParameterError);
  EXPECT_THROW(NoiseMatrix(2, {1.0, 0.0, 0.0}), ParameterError);
}

TEST(NoiseMatrix, SameSeedSameMatrixOtherSeedUsuallyDiffers) {
  const auto a = build_noise_matrix(spec(26, 0.5, 0.75, NoiseStructure::sparse_random, 3));
  EXPECT_EQ(a, build_noise_matrix(spec(26, 0.5, 0.75, NoiseStructure::sparse_random, 3)));
  EXPECT_NE(a, build_noise_matrix(spec(26, 0.5, 0.75, NoiseStructure::sparse_random, 4)));
}

TEST(NoiseLevel, Examples) {
  EXPECT_EQ(measure_noise_level(NoiseMatrix(6)), 0.0);
  EXPECT_DOUBLE_EQ(measure_noise_level(NoiseMatrix(2, {0.0, 1.0, 1.0, 0.0})), 1.0);
  EXPECT_NEAR(measure_noise_level(NoiseMatrix(2, {0.7, 0.1, 0.3, 0.9})), 0.2, 1e-15);
  const auto per = per_class_noise_level(NoiseMatrix(2, {0.7, 0.1, 0.3, 0.9}));
  EXPECT_NEAR(per[0], 0.3, 1e-15);
  EXPECT_NEAR(per[1], 0.1, 1e-15);
}

TEST(NoiseSparsity, UniformAndFlipExtremes) {
  const auto u = measure_noise_sparsity(build_noise_matrix(spec(10, 0.5, 0, NoiseStructure::uniform)));
  EXPECT_EQ(u.raw, 0.0);
  EXPECT_EQ(u.normalized, 0.0);
  const auto f = measure_noise_sparsity(build_noise_matrix(spec(10, 0.5, 1, NoiseStructure::class_flip)));
  EXPECT_NEAR(f.raw, 8.0 / 9.0, 1e-12);
  EXPECT_EQ(f.normalized, 1.0);
  EXPECT_EQ(f.mean_targets, 1.0);
}

TEST(NoiseSparsity, CleanMatrixHasNoNoisyColumns) {
  const auto s = measure_noise_sparsity(NoiseMatrix(4));
  EXPECT_EQ(s.noisy_columns, 0);
  EXPECT_EQ(s.raw, 0.0);
}

TEST(NoiseProperties, StochasticAndRoundTripOverGrid) {
  for (int c : {2, 4, 10, 26})
    for (int t = 0; t <= 9; ++t)
      for (double ns : {0.0, 0.25, 0.5, 0.75, 1.0})
        for (auto st : {NoiseStructure::uniform, NoiseStructure::sparse_random, NoiseStructure::class_flip}) {
          const double nl = t / 10.0;
          const auto q = build_noise_matrix(spec(c, nl, ns, st, 100 + t));
          for (int j = 0; j < c; ++j) {
            double sum = 0;
            for (int i = 0; i < c; ++i) {
              ASSERT_GE(q.at(i, j), 0.0);
              sum += q.at(i, j);
            }
            ASSERT_NEAR(sum, 1.0, 1e-9);
          }
          if (st == NoiseStructure::class_flip) {
            for (int i = 0; i < c; ++i)
              for (int j = 0; j < c; ++j)
                if (i != j) ASSERT_EQ(q.at(i, j), q.at(j, i));
          }
          ASSERT_NEAR(measure_noise_level(q), nl, 1e-9) << c << " " << nl << " " << ns;
          if (nl > 0 && st == NoiseStructure::sparse_random && c >= 4)
            ASSERT_LE(std::abs(measure_noise_sparsity(q).normalized - ns), 1.0 / (c - 1));
        }
}

TEST(ApplyNoise, IdentityLeavesLabelsAlone) {
  std::vector<ClassIndex> y{0, 3, 2, 1, 1, 0};
  EXPECT_EQ(apply_noise(y, NoiseMatrix(4), 9), y);
}

TEST(ApplyNoise, DeterministicFlip) {
  std::vector<ClassIndex> y{0, 1};
  EXPECT_EQ(apply_noise(y, NoiseMatrix(2, {0, 1, 1, 0}), 123), (std::vector<ClassIndex>{1, 0}));
}

TEST(ApplyNoise, PureFunctionOfSeed) {
  std::vector<ClassIndex> y(500);
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = i % 4;
  const auto q = build_noise_matrix(spec(4, 0.5, 0, NoiseStructure::uniform));
  EXPECT_EQ(apply_noise(y, q, 1), apply_noise(y, q, 1));
  EXPECT_NE(apply_noise(y, q, 1), apply_noise(y, q, 2));
}

TEST(ApplyNoise, MonteCarloKeepRate) {
  std::vector<ClassIndex> y(100000, 0);
  const auto out = apply_noise(y, build_noise_matrix(spec(4, 0.6, 0, NoiseStructure::uniform)), 1);
  const double kept = std::count(out.begin(), out.end(), 0) / 1e5;
  EXPECT_NEAR(kept, 0.4, 0.01);
}

TEST(ApplyNoise, OutOfRangeLabel) {
  std::vector<ClassIndex> y{0, 4};
  EXPECT_THROW(apply_noise(y, NoiseMatrix(4), 0), ParameterError);
}

TEST(EmpiricalMatrix, IdentityAndMissingClass) {
  std::vector<ClassIndex> t{0, 0, 1, 1};
  EXPECT_EQ(empirical_matrix(t, t, 2), NoiseMatrix(2));
  std::vector<ClassIndex> t0{0, 0, 0, 0}, o{0, 0, 1, 1};
  try {
    empirical_matrix(t0, o, 2);
    FAIL();
  } catch (const ParameterError& e) {
    EXPECT_NE(std::string(e.what()).find("class 1"), std::string::npos) << e.what();
  }
}

TEST(EmpiricalMatrix, MonteCarloMatchesConstruction) {
  const auto q = build_noise_matrix(spec(10, 0.4, 0.5, NoiseStructure::sparse_random, 21));
  std::vector<ClassIndex> y(10 * 100000);
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = i % 10;
  const auto e = empirical_matrix(y, apply_noise(y, q, 8), 10);
  for (int i = 0; i < 10; ++i)
    for (int j = 0; j < 10; ++j) EXPECT_NEAR(e.at(i, j), q.at(i, j), 0.01);
}

TEST(MatrixCsv, RoundTripIsExact) {
  const auto q = build_noise_matrix(spec(7, 0.37, 0.3, NoiseStructure::sparse_random, 2));
  std::stringstream ss;
  write_matrix_csv(ss, q);
  EXPECT_EQ(read_matrix_csv(ss), q);
}

TEST(MatrixCsv, RaggedRowsRejected) {
  std::stringstream ss("1,0\n0\n");
  EXPECT_ANY_THROW(read_matrix_csv(ss));
}

TEST(NoiseSpecJson, RoundTrip) {
  const auto s = spec(26, 0.2, 0.75, NoiseStructure::sparse_random, 77);
  const nlohmann::json j = s;
  EXPECT_EQ(j.at("structure"), "sparse_random");
  const auto back = j.get<NoiseSpec>();
  EXPECT_EQ(back.num_classes, 26);
  EXPECT_EQ(back.noise_sparsity, 0.75);
  EXPECT_EQ(back.seed, 77u);
  EXPECT_EQ(build_noise_matrix(back), build_noise_matrix(s));
}
