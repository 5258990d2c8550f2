#include <gtest/gtest.h>

#include <algorithm>
#include <numeric>

#include "fedspa/distances.hpp"
#include "support.hpp"

using namespace fedspa;

namespace {

Matrix<double> column(const std::vector<double>& v) { return Matrix<double>(v.size(), 1, v); }

std::vector<double> random_vector(std::size_t n, Rng& rng, double scale = 1.0) {
  std::vector<double> v(n);
  for (auto& x : v) x = scale * standard_normal(rng);
  return v;
}

Matrix<double> shuffled_rows(const Matrix<double>& m, Rng& rng) {
  auto idx = iota_indices(m.rows());
  shuffle_in_place(idx, rng);
  return m.select_rows(idx);
}

}  // namespace

TEST(SampleSlices, UnitRowsAndDeterminism) {
  auto b = sample_slices<double>(5, 64, 42);
  for (std::size_t s = 0; s < 64; ++s) EXPECT_NEAR(l2_norm<double>(b.directions.row(s)), 1.0, 1e-6);
  EXPECT_EQ(b.directions, sample_slices<double>(5, 64, 42).directions);
  auto one = sample_slices<double>(1, 16, 3);
  for (double v : one.directions.values()) EXPECT_EQ(std::abs(v), 1.0);
  EXPECT_THROW(sample_slices<double>(0, 4, 1), ArgumentError);
}

TEST(ExactW1, Examples) {
  std::vector<double> a{0.0, 1.0}, b{1.0, 2.0};
  EXPECT_DOUBLE_EQ(exact_w1_1d(a, a), 0.0);
  EXPECT_DOUBLE_EQ(exact_w1_1d(std::vector<double>{0.0}, std::vector<double>{3.0}), 3.0);
  EXPECT_DOUBLE_EQ(exact_w1_1d(a, b), 1.0);
  EXPECT_THROW(exact_w1_1d(std::vector<double>{}, a), ArgumentError);
}

// Independent oracle: W1 as the integral of |Qa(u) - Qb(u)| over u in (0,1),
// evaluated piecewise on the union of both quantile breakpoints.
TEST(ExactW1, MatchesQuantileIntegral) {
  Rng rng(17);
  for (int trial = 0; trial < 50; ++trial) {
    auto a = random_vector(1 + uniform_index(rng, 9), rng);
    auto b = random_vector(1 + uniform_index(rng, 9), rng, 2.0);
    std::sort(a.begin(), a.end());
    std::sort(b.begin(), b.end());
    std::vector<double> cuts{0.0, 1.0};
    for (std::size_t i = 1; i < a.size(); ++i) cuts.push_back(double(i) / double(a.size()));
    for (std::size_t i = 1; i < b.size(); ++i) cuts.push_back(double(i) / double(b.size()));
    std::sort(cuts.begin(), cuts.end());
    double oracle = 0.0;
    for (std::size_t k = 0; k + 1 < cuts.size(); ++k) {
      double mid = 0.5 * (cuts[k] + cuts[k + 1]);
      double qa = a[std::min(a.size() - 1, std::size_t(mid * double(a.size())))];
      double qb = b[std::min(b.size() - 1, std::size_t(mid * double(b.size())))];
      oracle += std::abs(qa - qb) * (cuts[k + 1] - cuts[k]);
    }
    EXPECT_NEAR(exact_w1_1d(a, b), oracle, 1e-12);
  }
}

TEST(SlicedWasserstein, SquareMatchesExactW1InOneDimension) {
  Rng rng(2024);
  for (int trial = 0; trial < 100; ++trial) {
    std::size_t n = 1 + uniform_index(rng, 20);
    std::size_t m = trial % 2 ? n : 1 + uniform_index(rng, 20);
    auto a = random_vector(n, rng), b = random_vector(m, rng, 1.5);
    auto basis = sample_slices<double>(1, 1 + uniform_index(rng, 8), rng);
    double sw = sliced_wasserstein<double>(column(a), column(b), basis).value;
    EXPECT_NEAR(sw * sw, exact_w1_1d(a, b), 1e-6) << "trial " << trial;
  }
}

TEST(SlicedWasserstein, IdentityPermutationAndSymmetry) {
  Rng rng(8);
  auto a = test::random_matrix(12, 4, rng);
  auto b = test::random_matrix(12, 4, rng);
  auto basis = sample_slices<double>(4, 32, 5);
  EXPECT_EQ(sliced_wasserstein<double>(a, shuffled_rows(a, rng), basis).value, 0.0);
  double ab = sliced_wasserstein<double>(a, b, basis).value;
  EXPECT_GT(ab, 0.0);
  EXPECT_EQ(sliced_wasserstein<double>(shuffled_rows(a, rng), shuffled_rows(b, rng), basis).value, ab);
  EXPECT_NEAR(sliced_wasserstein<double>(b, a, basis).value, ab, 1e-12);

  auto c = test::random_matrix(7, 4, rng);
  double ac = sliced_wasserstein<double>(a, c, basis).value;
  EXPECT_NEAR(sliced_wasserstein<double>(shuffled_rows(a, rng), shuffled_rows(c, rng), basis).value, ac, 1e-6);
}

TEST(SlicedWasserstein, DimensionMismatch) {
  Rng rng(1);
  auto basis = sample_slices<double>(3, 4, 1);
  EXPECT_THROW(sliced_wasserstein<double>(test::random_matrix(2, 3, rng), test::random_matrix(2, 4, rng), basis),
               ArgumentError);
}

TEST(SlicedWasserstein, ZeroDistanceHasZeroGradient) {
  Rng rng(3);
  auto a = test::random_matrix(5, 3, rng);
  auto r = sliced_wasserstein<double>(a, a, sample_slices<double>(3, 8, 2), true);
  for (double v : r.grad_a.values()) EXPECT_EQ(v, 0.0);
}

TEST(SlicedWasserstein, GradientsMatchFiniteDifferences) {
  Rng rng(99);
  for (auto [n, m] : {std::pair<std::size_t, std::size_t>{6, 6}, {5, 8}}) {
    auto a = test::random_matrix(n, 3, rng);
    auto b = test::random_matrix(m, 3, rng);
    auto basis = sample_slices<double>(3, 16, 7);
    auto r = sliced_wasserstein<double>(a, b, basis, true);
    auto fa = [&] { return sliced_wasserstein<double>(a, b, basis).value; };
    for (int k = 0; k < 10; ++k) {
      std::size_t i = uniform_index(rng, a.size());
      EXPECT_LT(test::rel_err(r.grad_a.values()[i], test::central_diff(a.values(), i, fa, 1e-6)), 1e-3);
      std::size_t j = uniform_index(rng, b.size());
      EXPECT_LT(test::rel_err(r.grad_b.values()[j], test::central_diff(b.values(), j, fa, 1e-6)), 1e-3);
    }
  }
}

TEST(ProjDistance, Examples) {
  std::vector<double> b{0.3, -1.2, 0.5};
  std::vector<double> a2{0.6, -2.4, 1.0};
  EXPECT_NEAR(proj_distance<double>(a2, b).value, 0.0, 1e-12);
  EXPECT_DOUBLE_EQ(proj_distance<double>(std::vector<double>{1, 0}, std::vector<double>{0, 1}).value, 1.0);
  std::vector<double> a{1.0, 2.0, -0.5}, b5{1.5, -6.0, 2.5};
  EXPECT_EQ(proj_distance<double>(a, b5).value, proj_distance<double>(a, b).value);
  EXPECT_THROW(proj_distance<double>(a, std::vector<double>(3, 0.0)), DegenerateReferenceError);
}

TEST(ProjDistance, BoundedByNormAndGradients) {
  Rng rng(4);
  for (int k = 0; k < 20; ++k) {
    auto a = random_vector(6, rng), b = random_vector(6, rng);
    auto r = proj_distance<double>(a, b, true);
    EXPECT_LE(r.value, l2_norm<double>(a) + 1e-12);
    auto f = [&] { return proj_distance<double>(a, b).value; };
    for (std::size_t i = 0; i < 6; ++i) {
      EXPECT_LT(test::rel_err(r.grad_a[i], test::central_diff(a, i, f)), 1e-3);
      EXPECT_LT(test::rel_err(r.grad_b[i], test::central_diff(b, i, f)), 1e-3);
    }
  }
}

TEST(AltDistance, Examples) {
  Matrix<double> s(1, 3, std::vector<double>{0.2, -0.4, 1.0});
  Matrix<double> s3(1, 3, std::vector<double>{0.6, -1.2, 3.0});
  EXPECT_NEAR(alt_distance<double>(AltMetric::l2, s, s).value, 0.0, 1e-12);
  EXPECT_NEAR(alt_distance<double>(AltMetric::cosine, s3, s).value, 0.0, 1e-12);
  Rng rng(6);
  auto a = test::random_matrix(6, 3, rng);
  EXPECT_NEAR(alt_distance<double>(AltMetric::kl, a, shuffled_rows(a, rng)).value, 0.0, 1e-12);
  EXPECT_THROW(alt_distance<double>(AltMetric::kl, s, a), InsufficientSampleError);
}

TEST(AltDistance, GradientsMatchFiniteDifferences) {
  Rng rng(12);
  for (auto metric : {AltMetric::l2, AltMetric::cosine, AltMetric::kl}) {
    auto a = test::random_matrix(5, 4, rng);
    auto b = test::random_matrix(7, 4, rng);
    auto r = alt_distance<double>(metric, a, b, true);
    auto f = [&] { return alt_distance<double>(metric, a, b).value; };
    for (int k = 0; k < 10; ++k) {
      std::size_t i = uniform_index(rng, a.size());
      EXPECT_LT(test::rel_err(r.grad_a.values()[i], test::central_diff(a.values(), i, f)), 1e-3);
      std::size_t j = uniform_index(rng, b.size());
      EXPECT_LT(test::rel_err(r.grad_b.values()[j], test::central_diff(b.values(), j, f)), 1e-3);
    }
  }
}
