#pragma once

// Fits Q minimizing ‖Σ₁ − QᵀΣ₀Q‖²_F by gradient descent on the Cayley
// generator. Every step works in a chart centered at the current rotation,
// Q = Q_base·cayley(A) with A starting at 0. The accepted step is then folded
// back into Q_base. A therefore stays small, far from the Cayley singularity
// at rotations by π. Step sizes come from Armijo backtracking.

#include <cmath>
#include <vector>

#include "repsim/losses.hpp"
#include "repsim/manifold.hpp"

namespace repsim {

struct AlignOptions {
  int max_iterations = 5000;
  double initial_step = 0.5;
  double gradient_tolerance = 1e-10;
  int trace_every = 0;  // 0 disables the loss trace
};

struct AlignResult {
  Matrix q;
  double loss = 0.0;
  int iterations = 0;
  std::vector<std::pair<int, double>> trace;
};

inline AlignResult fit_alignment(const Matrix& sigma0, const Matrix& sigma1,
                                 const AlignOptions& opts = {}) {
  require_symmetric(sigma0, "fit_alignment sigma0");
  require_symmetric(sigma1, "fit_alignment sigma1");
  if (sigma0.rows() != sigma1.rows()) fail(ErrorKind::dimension, "fit_alignment: dimensions differ");
  if (opts.max_iterations < 0 || !(opts.initial_step > 0.0)) {
    fail(ErrorKind::config, "fit_alignment: invalid options");
  }
  const std::size_t d = sigma0.rows();
  AlignResult result{Matrix::identity(d), 0.0, 0, {}};
  double step = opts.initial_step;

  auto loss_at = [&](const Matrix& q) { return cov_loss_q(sigma1, sigma0, q).loss; };

  for (int it = 0;; ++it) {
    const auto here = cov_loss_q(sigma1, sigma0, result.q);
    result.loss = here.loss;
    result.iterations = it;
    if (opts.trace_every > 0 && it % opts.trace_every == 0) result.trace.emplace_back(it, here.loss);
    if (it >= opts.max_iterations) break;

    // Chart at the current rotation: f(A) = L(Q_base·cayley(A)), so the
    // upstream gradient for cayley is Q_baseᵀ·∂L/∂Q, evaluated at A = 0.
    const OrthogonalParam origin(d);
    const Vector g = cayley_grad(origin, matmul_tn(result.q, here.grad_q));
    const double g_sq = dot(g, g);
    if (std::sqrt(g_sq) < opts.gradient_tolerance) break;

    OrthogonalParam trial(d);
    Matrix candidate;
    double candidate_loss = here.loss;
    for (int backtrack = 0; backtrack < 60; ++backtrack) {
      for (std::size_t k = 0; k < g.size(); ++k) trial.upper()[k] = -step * g[k];
      candidate = matmul(result.q, cayley(trial));
      candidate_loss = loss_at(candidate);
      if (candidate_loss <= here.loss - 1e-4 * step * g_sq) break;
      step *= 0.5;
    }
    if (!(candidate_loss < here.loss)) break;
    // Re-orthogonalize to stop drift from accumulating over many products.
    result.q = qr_orthogonalize(candidate);
    step = std::min(step * 2.0, opts.initial_step * 64.0);
  }
  return result;
}

}  // namespace repsim
