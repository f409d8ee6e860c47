#include <gtest/gtest.h>

#include "repsim/alignment.hpp"
#include "test_support.hpp"

using namespace repsim;

TEST(FitAlignment, DiagonalPairReachesOracle) {
  const auto fit = fit_alignment(Matrix::diag({3.0, 1.0}), Matrix::diag({2.0, 2.0}));
  EXPECT_NEAR(fit.loss, 2.0, 1e-6);
  EXPECT_LT(orthogonality_error(fit.q), 1e-10);
}

TEST(FitAlignment, RandomSpdPairsReachOracle) {
  SeededRng rng(42);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t d = 1 + rng.uniform_index(4);
    const auto s0 = CovarianceStats::from_sigma(random_spd(d, rng));
    const auto s1 = CovarianceStats::from_sigma(random_spd(d, rng));
    const auto fit = fit_alignment(s0.sigma(), s1.sigma());
    const double oracle = procrustes_oracle(s0, s1).min_loss;
    EXPECT_NEAR(fit.loss, oracle, 1e-3) << "trial " << trial << " d=" << d;
    EXPECT_LT(orthogonality_error(fit.q), 1e-10);
  }
}

TEST(FitAlignment, RecoversAKnownRotation) {
  SeededRng rng(7);
  const Matrix s0 = random_spd(3, rng, 0.5, 4.0);
  const Matrix q = random_orthogonal(3, rng);
  const Matrix s1 = symmetrize(matmul_tn(q, matmul(s0, q)));
  const auto fit = fit_alignment(s0, s1);
  EXPECT_LT(fit.loss, 1e-10);
}

TEST(FitAlignment, TraceIsNonIncreasing) {
  SeededRng rng(8);
  AlignOptions opts;
  opts.trace_every = 1;
  const auto fit = fit_alignment(random_spd(4, rng), random_spd(4, rng), opts);
  ASSERT_GE(fit.trace.size(), 2u);
  for (std::size_t i = 1; i < fit.trace.size(); ++i)
    EXPECT_LE(fit.trace[i].second, fit.trace[i - 1].second * (1.0 + 1e-12) + 1e-15);
}

TEST(FitAlignment, RejectsMismatchedInputs) {
  EXPECT_THROW(fit_alignment(Matrix::identity(2), Matrix::identity(3)), Error);
  EXPECT_THROW(fit_alignment(Matrix{{1.0, 2.0}, {0.0, 1.0}}, Matrix::identity(2)), Error);
}
