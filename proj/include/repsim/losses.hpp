#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <string_view>
#include <vector>

#include "repsim/error.hpp"
#include "repsim/manifold.hpp"
#include "repsim/tensor.hpp"

namespace repsim {

enum class Method { scratch, linear, full, hcs, repsim };

inline std::string_view to_string(Method m) {
  switch (m) {
    case Method::scratch: return "scratch";
    case Method::linear: return "linear";
    case Method::full: return "full";
    case Method::hcs: return "hcs";
    case Method::repsim: return "repsim";
  }
  return "unknown";
}

inline Method parse_method(std::string_view s) {
  for (Method m : {Method::scratch, Method::linear, Method::full, Method::hcs, Method::repsim}) {
    if (s == to_string(m)) return m;
  }
  fail(ErrorKind::config, "unknown method '" + std::string(s) + "'");
}

// ce: softmax cross-entropy (multiclass) or sigmoid BCE (multilabel).
// mse: mean squared error against one-hot / multi-hot targets.
enum class ClsLoss { ce, mse };

inline std::string_view to_string(ClsLoss l) { return l == ClsLoss::ce ? "ce" : "mse"; }

inline ClsLoss parse_cls_loss(std::string_view s) {
  if (s == "ce") return ClsLoss::ce;
  if (s == "mse") return ClsLoss::mse;
  fail(ErrorKind::config, "unknown loss '" + std::string(s) + "' (expected ce|mse)");
}

struct LossConfig {
  Method method = Method::full;
  double lambda = 0.8;
  bool mu_align = false;
  bool learnable_q = true;
  ClsLoss cls_loss = ClsLoss::ce;
  // Multiplier on L_Cov; the RepSim objective is the unit-weight sum.
  double cov_weight = 1.0;

  void validate() const {
    if (!(lambda >= 0.0 && lambda <= 1.0)) {
      fail(ErrorKind::config, "lambda must lie in [0,1], got " + std::to_string(lambda));
    }
    if (!(cov_weight >= 0.0) || !std::isfinite(cov_weight)) {
      fail(ErrorKind::config, "cov_weight must be a finite non-negative number");
    }
  }
};

// Classification targets: class indices, or a {0,1} multi-hot matrix.
class Targets {
 public:
  static Targets classes(std::vector<std::size_t> labels, std::size_t k) {
    for (auto y : labels) {
      if (y >= k) {
        fail(ErrorKind::dimension,
             "label " + std::to_string(y) + " out of range for " + std::to_string(k) + " classes");
      }
    }
    Targets t;
    t.k_ = k;
    t.labels_ = std::move(labels);
    return t;
  }

  static Targets multi_hot(Matrix y) {
    for (double v : y.values()) {
      if (v != 0.0 && v != 1.0) fail(ErrorKind::dimension, "multi-hot targets must be 0 or 1");
    }
    Targets t;
    t.k_ = y.cols();
    t.multilabel_ = true;
    t.multi_hot_ = std::move(y);
    return t;
  }

  bool multilabel() const noexcept { return multilabel_; }
  std::size_t k() const noexcept { return k_; }
  std::size_t size() const noexcept { return multilabel_ ? multi_hot_.rows() : labels_.size(); }
  const std::vector<std::size_t>& labels() const noexcept { return labels_; }

  Matrix dense() const {
    if (multilabel_) return multi_hot_;
    Matrix y(labels_.size(), k_);
    for (std::size_t i = 0; i < labels_.size(); ++i) y(i, labels_[i]) = 1.0;
    return y;
  }

  Targets subset(std::span<const std::size_t> rows) const {
    Targets t;
    t.k_ = k_;
    t.multilabel_ = multilabel_;
    if (multilabel_) {
      t.multi_hot_ = gather_rows(multi_hot_, rows);
    } else {
      t.labels_.reserve(rows.size());
      for (auto r : rows) t.labels_.push_back(labels_[r]);
    }
    return t;
  }

 private:
  std::size_t k_ = 0;
  bool multilabel_ = false;
  std::vector<std::size_t> labels_;
  Matrix multi_hot_;
};

// Batch-mean classification loss and ∂loss/∂logits.
inline LossAndGrad cls_loss_and_grad(const Matrix& logits, const Targets& targets,
                                     ClsLoss kind = ClsLoss::ce) {
  const std::size_t n = logits.rows();
  const std::size_t k = logits.cols();
  if (targets.size() != n || targets.k() != k) {
    fail(ErrorKind::dimension, "logits " + logits.shape_string() + " vs targets " +
                                   std::to_string(targets.size()) + "x" +
                                   std::to_string(targets.k()));
  }
  if (n == 0) fail(ErrorKind::insufficient_samples, "empty batch");
  Matrix grad(n, k);
  double loss = 0.0;
  const double inv_n = 1.0 / static_cast<double>(n);

  if (kind == ClsLoss::mse) {
    const Matrix y = targets.dense();
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < k; ++j) {
        const double r = logits(i, j) - y(i, j);
        loss += r * r;
        grad(i, j) = 2.0 * r * inv_n;
      }
    return {loss * inv_n, std::move(grad)};
  }

  if (targets.multilabel()) {
    const Matrix y = targets.dense();
    const double inv_nk = inv_n / static_cast<double>(k);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < k; ++j) {
        const double z = logits(i, j);
        // BCE(σ(z), y) = softplus(z) − y·z, evaluated stably.
        const double softplus = std::max(z, 0.0) + std::log1p(std::exp(-std::abs(z)));
        loss += softplus - y(i, j) * z;
        const double sigma = z >= 0.0 ? 1.0 / (1.0 + std::exp(-z))
                                      : std::exp(z) / (1.0 + std::exp(z));
        grad(i, j) = (sigma - y(i, j)) * inv_nk;
      }
    return {loss * inv_nk, std::move(grad)};
  }

  const auto& labels = targets.labels();
  for (std::size_t i = 0; i < n; ++i) {
    auto z = logits.row(i);
    const double zmax = *std::max_element(z.begin(), z.end());
    double sum = 0.0;
    for (double v : z) sum += std::exp(v - zmax);
    const double log_sum = zmax + std::log(sum);
    loss += log_sum - z[labels[i]];
    for (std::size_t j = 0; j < k; ++j) grad(i, j) = std::exp(z[j] - log_sum) * inv_n;
    grad(i, labels[i]) -= inv_n;
  }
  return {loss * inv_n, std::move(grad)};
}

// λ·L_cls + (1 − λ)·(1 − CKA)
inline double hcs_loss(double cls, double cka, double lambda) {
  if (!(lambda >= 0.0 && lambda <= 1.0)) {
    fail(ErrorKind::config, "lambda must lie in [0,1], got " + std::to_string(lambda));
  }
  return lambda * cls + (1.0 - lambda) * (1.0 - cka);
}

inline double repsim_total(double cls, double cov, double cov_weight = 1.0) {
  return cls + cov_weight * cov;
}

struct CovLossQGrad {
  double loss;
  Matrix grad_sigma1;
  Matrix grad_q;
};

// ‖Σ₁ − QᵀΣ₀Q‖²_F for an explicit Q, with D = Σ₁ − QᵀΣ₀Q:
// ∂/∂Σ₁ = 2D, ∂/∂Q = −4·Σ₀·Q·D (Σ₀ and D symmetric).
inline CovLossQGrad cov_loss_q(const Matrix& sigma1, const Matrix& sigma0, const Matrix& q) {
  if (sigma1.rows() != sigma0.rows() || sigma1.cols() != sigma0.cols() ||
      q.rows() != sigma0.rows() || q.cols() != sigma0.cols()) {
    fail(ErrorKind::dimension, "cov loss: shapes " + sigma1.shape_string() + ", " +
                                   sigma0.shape_string() + ", " + q.shape_string());
  }
  const Matrix rotated = matmul_tn(q, matmul(sigma0, q));
  const Matrix diff = sigma1 - rotated;
  Matrix grad_q = matmul(matmul(sigma0, q), diff);
  grad_q *= -4.0;
  return {frobenius_dot(diff, diff), diff * 2.0, std::move(grad_q)};
}

struct CovLossGrads {
  double loss;
  Matrix grad_sigma1;
  Vector grad_a;  // upper-triangle coordinates of the generator
};

inline CovLossGrads cov_loss_and_grads(const CovarianceStats& sigma1,
                                       const CovarianceStats& sigma0_frozen,
                                       const OrthogonalParam& q) {
  if (sigma1.d() != sigma0_frozen.d() || q.d() != sigma1.d()) {
    fail(ErrorKind::dimension, "cov_loss_and_grads: dimension mismatch");
  }
  auto parts = cov_loss_q(sigma1.sigma(), sigma0_frozen.sigma(), cayley(q));
  return {parts.loss, std::move(parts.grad_sigma1), cayley_grad(q, parts.grad_q)};
}

struct MeanAlignGrads {
  double loss;
  Vector grad_mu1;
  Vector grad_a;
};

// Optional first-moment term ‖μ₁ − α·Q·μ₀‖².
inline MeanAlignGrads mean_align_loss_and_grads(const Vector& mu1, const Vector& mu0,
                                                const OrthogonalParam& q) {
  if (mu1.size() != q.d() || mu0.size() != q.d()) {
    fail(ErrorKind::dimension, "mean alignment: dimension mismatch");
  }
  const Matrix qm = cayley(q);
  const Vector rotated = matvec(qm, mu0);
  Vector r(mu1.size());
  double loss = 0.0;
  for (std::size_t i = 0; i < r.size(); ++i) {
    r[i] = mu1[i] - q.alpha() * rotated[i];
    loss += r[i] * r[i];
  }
  // ∂/∂Q = −2α·r·μ₀ᵀ
  Matrix grad_q(q.d(), q.d());
  for (std::size_t i = 0; i < q.d(); ++i)
    for (std::size_t j = 0; j < q.d(); ++j) grad_q(i, j) = -2.0 * q.alpha() * r[i] * mu0[j];
  Vector grad_mu1(r.size());
  for (std::size_t i = 0; i < r.size(); ++i) grad_mu1[i] = 2.0 * r[i];
  return {loss, std::move(grad_mu1), cayley_grad(q, grad_q)};
}

}  // namespace repsim
