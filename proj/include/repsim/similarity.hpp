#pragma once

// Linear centered kernel alignment between two feature matrices over the same
// samples, and the dissimilarity loss 1 − CKA with its gradient.

#include <cmath>
#include <string>

#include "repsim/error.hpp"
#include "repsim/tensor.hpp"

namespace repsim {

// n×d backbone features, one row per sample. Requires n ≥ 2.
class FeatureMatrix {
 public:
  explicit FeatureMatrix(Matrix values) : values_(std::move(values)) {
    if (values_.rows() < 2) {
      fail(ErrorKind::insufficient_samples,
           "feature matrix needs at least 2 samples, got " + std::to_string(values_.rows()));
    }
    if (!values_.all_finite()) fail(ErrorKind::non_finite, "feature matrix is not finite");
  }

  std::size_t n() const noexcept { return values_.rows(); }
  std::size_t d() const noexcept { return values_.cols(); }
  const Matrix& values() const noexcept { return values_; }

 private:
  Matrix values_;
};

// F − (1/n)𝟙𝟙ᵀF
inline FeatureMatrix center(const FeatureMatrix& f) {
  Matrix c = f.values();
  const Vector mu = column_means(c);
  for (std::size_t i = 0; i < c.rows(); ++i) {
    auto r = c.row(i);
    for (std::size_t j = 0; j < c.cols(); ++j) r[j] -= mu[j];
  }
  return FeatureMatrix(std::move(c));
}

inline constexpr double gram_norm_floor = 1e-12;

namespace detail {

struct CkaParts {
  Matrix k0, k1;  // centered Gram matrices
  double k0_norm, k1_norm, cka;
};

inline CkaParts cka_parts(const FeatureMatrix& f0, const FeatureMatrix& f1) {
  if (f0.n() != f1.n()) {
    fail(ErrorKind::dimension, "CKA sample counts differ: " + std::to_string(f0.n()) + " vs " +
                                   std::to_string(f1.n()));
  }
  const Matrix c0 = center(f0).values();
  const Matrix c1 = center(f1).values();
  CkaParts p{matmul_nt(c0, c0), matmul_nt(c1, c1), 0.0, 0.0, 0.0};
  p.k0_norm = frobenius_norm(p.k0);
  p.k1_norm = frobenius_norm(p.k1);
  if (p.k0_norm < gram_norm_floor || p.k1_norm < gram_norm_floor) {
    fail(ErrorKind::degenerate_features, "centered Gram matrix is zero (constant features)");
  }
  p.cka = frobenius_dot(p.k0, p.k1) / (p.k0_norm * p.k1_norm);
  return p;
}

}  // namespace detail

// Evaluated through the d×d cross-covariances: ⟨K₀,K₁⟩ = ‖F₀cᵀF₁c‖²_F and
// ‖Kᵢ‖_F = ‖FᵢcᵀFᵢc‖_F, which is O(n·d²) instead of O(n²·d) for large
// evaluation sets. cka_loss_and_grad keeps the explicit Gram form.
inline double linear_cka(const FeatureMatrix& f0, const FeatureMatrix& f1) {
  if (f0.n() != f1.n()) {
    fail(ErrorKind::dimension, "CKA sample counts differ: " + std::to_string(f0.n()) + " vs " +
                                   std::to_string(f1.n()));
  }
  const Matrix c0 = center(f0).values();
  const Matrix c1 = center(f1).values();
  const double k0_norm = frobenius_norm(matmul_tn(c0, c0));
  const double k1_norm = frobenius_norm(matmul_tn(c1, c1));
  if (k0_norm < gram_norm_floor || k1_norm < gram_norm_floor) {
    fail(ErrorKind::degenerate_features, "centered Gram matrix is zero (constant features)");
  }
  const Matrix cross = matmul_tn(c0, c1);
  return frobenius_dot(cross, cross) / (k0_norm * k1_norm);
}

struct LossAndGrad {
  double loss;
  Matrix grad;
};

// loss = 1 − CKA(f0, f1) with f0 held fixed; grad is ∂loss/∂f1 (n×d).
//
// With K₁ = C F₁ F₁ᵀ C (C the centering projector) and
// ∂CKA/∂K₁ = K₀/(‖K₀‖‖K₁‖) − CKA·K₁/‖K₁‖² =: G, the chain rule gives
// ∂CKA/∂F₁ = 2·C·G·C·F₁ = 2·G·F₁c since G already has centered rows/cols.
inline LossAndGrad cka_loss_and_grad(const FeatureMatrix& f0_fixed, const FeatureMatrix& f1) {
  const auto parts = detail::cka_parts(f0_fixed, f1);
  Matrix g = parts.k0 * (1.0 / (parts.k0_norm * parts.k1_norm));
  g -= parts.k1 * (parts.cka / (parts.k1_norm * parts.k1_norm));
  Matrix grad = matmul(g, center(f1).values());
  grad *= -2.0;
  return {1.0 - parts.cka, std::move(grad)};
}

}  // namespace repsim
