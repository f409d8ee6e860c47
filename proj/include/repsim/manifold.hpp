#pragma once

// Feature moments and the Cayley-parameterized orthogonal matrix Q. The
// closed-form minimizer of ‖Σ₁ − QᵀΣ₀Q‖²_F over orthogonal Q sits at the end.

#include <cmath>
#include <string>

#include "repsim/error.hpp"
#include "repsim/linalg.hpp"
#include "repsim/similarity.hpp"
#include "repsim/tensor.hpp"

namespace repsim {

// Mean and population covariance (1/n) of a feature batch.
class CovarianceStats {
 public:
  // Validating factory for externally supplied covariances.
  static CovarianceStats from_sigma(Matrix sigma, Vector mu = {}, std::size_t n = 0) {
    require_symmetric(sigma, "covariance");
    const auto eig = sym_eig(sigma);
    if (!eig.values.empty() && eig.values.back() < -1e-8 * std::max(eig.values.front(), 0.0)) {
      fail(ErrorKind::symmetry, "covariance is not positive semi-definite");
    }
    if (mu.empty()) mu.assign(sigma.rows(), 0.0);
    if (mu.size() != sigma.rows()) fail(ErrorKind::dimension, "mean/covariance size mismatch");
    return CovarianceStats(std::move(mu), std::move(sigma), n);
  }

  const Vector& mu() const noexcept { return mu_; }
  const Matrix& sigma() const noexcept { return sigma_; }
  std::size_t n() const noexcept { return n_; }
  std::size_t d() const noexcept { return sigma_.rows(); }

 private:
  friend CovarianceStats cov_stats(const FeatureMatrix& f);

  CovarianceStats(Vector mu, Matrix sigma, std::size_t n)
      : mu_(std::move(mu)), sigma_(std::move(sigma)), n_(n) {}

  Vector mu_;
  Matrix sigma_;
  std::size_t n_;
};

inline CovarianceStats cov_stats(const FeatureMatrix& f) {
  const Matrix fc = center(f).values();
  Matrix sigma = matmul_tn(fc, fc);
  sigma *= 1.0 / static_cast<double>(f.n());
  return CovarianceStats(column_means(f.values()), symmetrize(sigma), f.n());
}

// Pulls ∂L/∂Σ and ∂L/∂μ back to ∂L/∂F for the statistics of `f`.
// ∂L/∂F = (1/n)·F_c·(G + Gᵀ) + (1/n)·𝟙·hᵀ
inline Matrix cov_stats_backward(const FeatureMatrix& f, const Matrix& grad_sigma,
                                 const Vector* grad_mu = nullptr) {
  if (grad_sigma.rows() != f.d() || grad_sigma.cols() != f.d()) {
    fail(ErrorKind::dimension, "cov_stats_backward: gradient shape " +
                                   grad_sigma.shape_string());
  }
  const double inv_n = 1.0 / static_cast<double>(f.n());
  Matrix g = grad_sigma + transpose(grad_sigma);
  Matrix out = matmul(center(f).values(), g);
  out *= inv_n;
  if (grad_mu != nullptr) {
    for (std::size_t i = 0; i < out.rows(); ++i) {
      auto r = out.row(i);
      for (std::size_t j = 0; j < out.cols(); ++j) r[j] += inv_n * (*grad_mu)[j];
    }
  }
  return out;
}

// Skew-symmetric generator A, stored as its strict upper triangle so that
// A + Aᵀ = 0 holds exactly, plus the fixed scale α.
class OrthogonalParam {
 public:
  explicit OrthogonalParam(std::size_t d = 0, double alpha = 1.0)
      : d_(d), upper_(d * (d > 0 ? d - 1 : 0) / 2, 0.0), alpha_(alpha) {
    if (!(alpha > 0.0)) fail(ErrorKind::config, "alpha must be positive");
  }

  static OrthogonalParam from_generator(const Matrix& a, double alpha = 1.0) {
    if (!a.is_square()) fail(ErrorKind::dimension, "generator must be square");
    for (std::size_t i = 0; i < a.rows(); ++i)
      for (std::size_t j = i; j < a.cols(); ++j)
        if (std::abs(a(i, j) + a(j, i)) > symmetry_tolerance) {
          fail(ErrorKind::symmetry, "generator is not skew-symmetric");
        }
    OrthogonalParam p(a.rows(), alpha);
    std::size_t k = 0;
    for (std::size_t i = 0; i < p.d_; ++i)
      for (std::size_t j = i + 1; j < p.d_; ++j) p.upper_[k++] = a(i, j);
    return p;
  }

  std::size_t d() const noexcept { return d_; }
  double alpha() const noexcept { return alpha_; }
  std::span<double> upper() noexcept { return upper_; }
  std::span<const double> upper() const noexcept { return upper_; }

  Matrix generator() const {
    Matrix a(d_, d_);
    std::size_t k = 0;
    for (std::size_t i = 0; i < d_; ++i)
      for (std::size_t j = i + 1; j < d_; ++j) {
        a(i, j) = upper_[k];
        a(j, i) = -upper_[k];
        ++k;
      }
    return a;
  }

 private:
  std::size_t d_;
  Vector upper_;
  double alpha_;
};

// Q = (I + A)(I − A)⁻¹. I − A is always invertible for skew A.
inline Matrix cayley(const OrthogonalParam& p) {
  const Matrix a = p.generator();
  const Matrix eye = Matrix::identity(p.d());
  // I + A and (I − A)⁻¹ commute, so Q = (I − A)⁻¹(I + A).
  return solve(eye - a, eye + a);
}

// Gradient of f(cayley(A)) with respect to the upper-triangle coordinates of A,
// given upstream = ∂f/∂Q. With B = (I − A)⁻¹, dQ = (I + Q)·dA·B, so
// ∂f/∂A = (I + Q)ᵀ·upstream·Bᵀ and each coordinate a_ij (i<j) collects
// M_ij − M_ji.
inline Vector cayley_grad(const OrthogonalParam& p, const Matrix& upstream) {
  const std::size_t d = p.d();
  if (upstream.rows() != d || upstream.cols() != d) {
    fail(ErrorKind::dimension, "cayley_grad: upstream shape " + upstream.shape_string());
  }
  const Matrix eye = Matrix::identity(d);
  const Matrix a = p.generator();
  const Matrix b = inverse(eye - a);
  const Matrix q = matmul(eye + a, b);
  const Matrix m = matmul(matmul_tn(eye + q, upstream), transpose(b));
  Vector g(p.upper().size());
  std::size_t k = 0;
  for (std::size_t i = 0; i < d; ++i)
    for (std::size_t j = i + 1; j < d; ++j) g[k++] = m(i, j) - m(j, i);
  return g;
}

struct ProcrustesResult {
  Matrix q_star;
  double min_loss;
};

// argmin over orthogonal Q of ‖Σ₁ − QᵀΣ₀Q‖²_F. Both spectra sorted descending
// are matched (Hoffman–Wielandt), giving Q* = U₀U₁ᵀ and
// min_loss = Σᵢ (λ₁ᵢ − λ₀ᵢ)².
inline ProcrustesResult procrustes_oracle(const CovarianceStats& s0, const CovarianceStats& s1) {
  if (s0.d() != s1.d()) {
    fail(ErrorKind::dimension, "procrustes_oracle: dimensions differ (" +
                                   std::to_string(s0.d()) + " vs " + std::to_string(s1.d()) +
                                   ")");
  }
  const auto e0 = sym_eig(s0.sigma());
  const auto e1 = sym_eig(s1.sigma());
  double loss = 0.0;
  for (std::size_t i = 0; i < e0.values.size(); ++i) {
    const double diff = e1.values[i] - e0.values[i];
    loss += diff * diff;
  }
  return {matmul_nt(e0.vectors, e1.vectors), loss};
}

}  // namespace repsim
