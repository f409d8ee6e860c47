#include <gtest/gtest.h>

#include <cmath>

#include "repsim/similarity.hpp"
#include "test_support.hpp"

using namespace repsim;
namespace t = repsim::testing;

TEST(Center, Examples) {
  const Matrix c = center(FeatureMatrix(Matrix{{0.0}, {1.0}, {2.0}})).values();
  EXPECT_EQ(c(0, 0), -1.0);
  EXPECT_EQ(c(1, 0), 0.0);
  EXPECT_EQ(c(2, 0), 1.0);
  const Matrix d = center(FeatureMatrix(Matrix{{1.0, 1.0}, {3.0, 3.0}})).values();
  EXPECT_EQ(d, (Matrix{{-1.0, -1.0}, {1.0, 1.0}}));
}

TEST(Center, IdempotentAndZeroColumnSums) {
  SeededRng rng(1);
  const FeatureMatrix f(t::random_matrix(40, 5, rng, 3.0));
  const Matrix once = center(f).values();
  const Matrix twice = center(FeatureMatrix(once)).values();
  EXPECT_LT(std::sqrt(frobenius_dist_sq(once, twice)), 1e-12);
  for (double m : column_means(once)) EXPECT_LT(std::abs(m * 40.0), 1e-10 * 40.0);
}

TEST(FeatureMatrix, Validation) {
  try {
    FeatureMatrix(Matrix{{1.0, 2.0}});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::insufficient_samples);
  }
}

TEST(LinearCka, HandValue) {
  // Centered: a = (−1,0,1), b = (0,−1,1); ⟨a,b⟩² / (‖a‖²‖b‖²) = 1/4.
  const FeatureMatrix a(Matrix{{0.0}, {1.0}, {2.0}});
  const FeatureMatrix b(Matrix{{1.0}, {0.0}, {2.0}});
  EXPECT_NEAR(linear_cka(a, b), 0.25, 1e-10);
}

TEST(LinearCka, MatchesExplicitGramOracle) {
  SeededRng rng(2);
  for (int trial = 0; trial < 30; ++trial) {
    const std::size_t n = 3 + rng.uniform_index(30);
    const Matrix f0 = t::random_matrix(n, 1 + rng.uniform_index(6), rng);
    const Matrix f1 = t::random_matrix(n, 1 + rng.uniform_index(6), rng);
    EXPECT_NEAR(linear_cka(FeatureMatrix(f0), FeatureMatrix(f1)), t::naive_cka(f0, f1), 1e-12);
  }
}

TEST(LinearCka, SymmetricBoundedAndSelfOne) {
  SeededRng rng(3);
  for (int trial = 0; trial < 30; ++trial) {
    const FeatureMatrix a(t::random_matrix(20, 4, rng));
    const FeatureMatrix b(t::random_matrix(20, 7, rng));
    const double ab = linear_cka(a, b);
    EXPECT_NEAR(ab, linear_cka(b, a), 1e-14);
    EXPECT_GE(ab, -1e-12);
    EXPECT_LE(ab, 1.0 + 1e-12);
    EXPECT_NEAR(linear_cka(a, a), 1.0, 1e-12);
  }
}

TEST(LinearCka, InvariantToOrthogonalTransformAndIsotropicScale) {
  SeededRng rng(4);
  for (int trial = 0; trial < 100; ++trial) {
    const Matrix f = t::random_matrix(64, 16, rng);
    const Matrix q = random_orthogonal(16, rng);
    const double alpha = rng.uniform(1e-3, 10.0);
    const Matrix g = matmul(f, q) * alpha;
    EXPECT_NEAR(linear_cka(FeatureMatrix(f), FeatureMatrix(g)), 1.0, 1e-6);
  }
}

TEST(LinearCka, ErrorCategories) {
  try {
    linear_cka(FeatureMatrix(Matrix(3, 2)), FeatureMatrix(Matrix(4, 2)));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::dimension);
  }
  try {
    linear_cka(FeatureMatrix(Matrix::constant(3, 2, 5.0)), FeatureMatrix(Matrix{{0.0}, {1.0}, {2.0}}));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::degenerate_features);
  }
  EXPECT_THROW(cka_loss_and_grad(FeatureMatrix(Matrix{{0.0}, {1.0}, {2.0}}),
                                 FeatureMatrix(Matrix::constant(3, 1, 2.0))),
               Error);
}

TEST(CkaLoss, ValueIsOneMinusCka) {
  SeededRng rng(5);
  const Matrix f0 = t::random_matrix(10, 3, rng);
  const Matrix f1 = t::random_matrix(10, 3, rng);
  const auto lg = cka_loss_and_grad(FeatureMatrix(f0), FeatureMatrix(f1));
  EXPECT_NEAR(lg.loss, 1.0 - t::naive_cka(f0, f1), 1e-12);
}

TEST(CkaLoss, GradientMatchesCentralDifferences) {
  SeededRng rng(6);
  for (int trial = 0; trial < 25; ++trial) {
    const std::size_t n = 3 + rng.uniform_index(8);
    const std::size_t d = 1 + rng.uniform_index(4);
    const Matrix f0 = t::random_matrix(n, 1 + rng.uniform_index(4), rng);
    const Matrix f1 = t::random_matrix(n, d, rng);
    const auto lg = cka_loss_and_grad(FeatureMatrix(f0), FeatureMatrix(f1));
    const auto numeric = t::numeric_gradient(
        [&](const std::vector<double>& x) { return 1.0 - t::naive_cka(f0, t::from_vector(n, d, x)); },
        t::to_vector(f1));
    EXPECT_LT(t::relative_error(lg.grad.values(), numeric), 1e-6);
  }
}

TEST(CkaLoss, GradientVanishesAtInvariantPoint) {
  SeededRng rng(7);
  const Matrix f = t::random_matrix(12, 3, rng);
  const Matrix g = matmul(f, random_orthogonal(3, rng)) * 2.5;
  const auto lg = cka_loss_and_grad(FeatureMatrix(f), FeatureMatrix(g));
  EXPECT_NEAR(lg.loss, 0.0, 1e-12);
  EXPECT_LT(frobenius_norm(lg.grad), 1e-10);
}
