#pragma once

// Diagnostics run on finished models. Sharpness and parameter centrality
// describe where finetuning ended up; the interpolation path walks from a
// high-similarity model to a low-loss one. The covariance batch-size study
// lives here too since it only needs θ₀.

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>
#include <utility>
#include <vector>

#include "repsim/data.hpp"
#include "repsim/manifold.hpp"
#include "repsim/model.hpp"
#include "repsim/similarity.hpp"
#include "repsim/trainer.hpp"

namespace repsim {

struct SharpnessConfig {
  double rho = 0.01;
  int ascent_steps = 1;

  void validate() const {
    if (!(rho > 0.0) || !std::isfinite(rho)) fail(ErrorKind::config, "rho must be positive");
    if (ascent_steps < 1) fail(ErrorKind::config, "ascent_steps must be at least 1");
  }
};

struct SharpnessResult {
  double perturbed_loss = 0.0;
  double base_loss = 0.0;
  double sharpness = 0.0;
  bool degenerate_gradient = false;
};

// max_{‖ε‖≤ρ} L(θ+ε) − L(θ), approximated by normalized-gradient ascent:
// ε = ρ·g/‖g‖, then (steps − 1) further ascent steps projected back onto the
// ρ-ball. The largest loss seen along the way is reported.
//
// `objective(params)` returns {loss, gradient} as {double, Vector}.
template <typename Objective>
SharpnessResult sharpness(const Vector& params, Objective&& objective,
                          const SharpnessConfig& cfg = {}) {
  cfg.validate();
  const auto [base_loss, base_grad] = objective(params);
  SharpnessResult out;
  out.base_loss = base_loss;
  out.perturbed_loss = base_loss;

  Vector eps(params.size(), 0.0);
  Vector probe(params.size());
  Vector grad = base_grad;
  for (int step = 0; step < cfg.ascent_steps; ++step) {
    const double gnorm = norm(grad);
    if (!(gnorm > 0.0)) {
      if (step == 0) out.degenerate_gradient = true;
      break;
    }
    for (std::size_t i = 0; i < eps.size(); ++i) eps[i] += cfg.rho * grad[i] / gnorm;
    const double enorm = norm(eps);
    if (enorm > cfg.rho)
      for (auto& e : eps) e *= cfg.rho / enorm;
    for (std::size_t i = 0; i < eps.size(); ++i) probe[i] = params[i] + eps[i];
    auto [loss, g] = objective(probe);
    out.perturbed_loss = std::max(out.perturbed_loss, loss);
    grad = std::move(g);
  }
  out.sharpness = out.perturbed_loss - out.base_loss;
  return out;
}

// Sharpness of the classification loss of `model` on `data`, over all parameters.
inline SharpnessResult sharpness(const MlpModel& model, const Dataset& data,
                                 const SharpnessConfig& cfg = {}, ClsLoss kind = ClsLoss::ce) {
  MlpModel scratch = model;
  auto objective = [&](const Vector& flat) {
    scratch.assign_flat(flat);
    auto [loss, grads] = cls_objective(scratch, data, kind);
    return std::pair<double, Vector>{loss, grads.flatten()};
  };
  return sharpness(model.flatten(), objective, cfg);
}

// Euclidean distance of each parameter vector to their elementwise mean.
inline std::vector<double> param_centrality(const std::vector<Vector>& params) {
  if (params.size() < 2) fail(ErrorKind::config, "param_centrality needs at least 2 models");
  const std::size_t m = params.front().size();
  for (const auto& p : params) {
    if (p.size() != m) fail(ErrorKind::dimension, "param_centrality: parameter counts differ");
  }
  Vector center(m, 0.0);
  for (const auto& p : params)
    for (std::size_t i = 0; i < m; ++i) center[i] += p[i];
  for (auto& c : center) c /= static_cast<double>(params.size());
  std::vector<double> out;
  out.reserve(params.size());
  for (const auto& p : params) {
    double s = 0.0;
    for (std::size_t i = 0; i < m; ++i) s += (p[i] - center[i]) * (p[i] - center[i]);
    out.push_back(std::sqrt(s));
  }
  return out;
}

inline std::vector<double> param_centrality(const std::vector<MlpModel>& models,
                                            bool backbone_only = false) {
  std::vector<Vector> flat;
  flat.reserve(models.size());
  for (const auto& m : models) {
    if (!(m.dims() == models.front().dims())) {
      fail(ErrorKind::dimension, "param_centrality: model shapes differ");
    }
    Vector p = m.flatten();
    if (backbone_only) p.resize(m.backbone_param_count());
    flat.push_back(std::move(p));
  }
  return param_centrality(flat);
}

struct PathPoint {
  double t;
  double loss;
  double cka;
};

// γ(t) = (1 − t)·θ_a + t·θ_b on a uniform grid over [0, 1]; the endpoints are
// reproduced exactly.
inline std::vector<PathPoint> interpolation_path(const MlpModel& theta_a, const MlpModel& theta_b,
                                                 const MlpModel& theta0, const Dataset& data,
                                                 int steps, ClsLoss kind = ClsLoss::ce) {
  if (steps < 3) fail(ErrorKind::config, "interpolation_path needs at least 3 steps");
  if (!(theta_a.dims() == theta_b.dims())) {
    fail(ErrorKind::dimension, "interpolation endpoints have different shapes");
  }
  const FeatureMatrix f0(backbone_features(theta0, data.x));
  const Vector a = theta_a.flatten();
  const Vector b = theta_b.flatten();
  std::vector<PathPoint> trace;
  trace.reserve(static_cast<std::size_t>(steps));
  Vector mix(a.size());
  MlpModel point = theta_a;
  for (int s = 0; s < steps; ++s) {
    const double t = static_cast<double>(s) / static_cast<double>(steps - 1);
    for (std::size_t i = 0; i < a.size(); ++i) mix[i] = (1.0 - t) * a[i] + t * b[i];
    point.assign_flat(mix);
    const auto cache = forward(point, data.x);
    trace.push_back({t, cls_loss_and_grad(cache.logits, data.y, kind).loss,
                     linear_cka(f0, FeatureMatrix(cache.features))});
  }
  return trace;
}

// True when some interior point has loss strictly between the endpoint losses
// and CKA strictly between the endpoint CKAs.
inline bool has_strict_intermediate(const std::vector<PathPoint>& trace) {
  if (trace.size() < 3) return false;
  const auto& first = trace.front();
  const auto& last = trace.back();
  const double loss_lo = std::min(first.loss, last.loss);
  const double loss_hi = std::max(first.loss, last.loss);
  const double cka_lo = std::min(first.cka, last.cka);
  const double cka_hi = std::max(first.cka, last.cka);
  for (std::size_t i = 1; i + 1 < trace.size(); ++i) {
    const auto& p = trace[i];
    if (p.loss > loss_lo && p.loss < loss_hi && p.cka > cka_lo && p.cka < cka_hi) return true;
  }
  return false;
}

struct CovErrorRow {
  std::size_t batch_size;
  double mean_error;
};

// Mean ‖Σ_batch − Σ_full‖_F over random batches (drawn without replacement)
// of pretrained-backbone features.
inline std::vector<CovErrorRow> batch_cov_error(const MlpModel& theta0, const Matrix& x,
                                                const std::vector<std::size_t>& batch_sizes,
                                                int trials, std::uint64_t seed) {
  if (trials < 1) fail(ErrorKind::config, "trials must be at least 1");
  const Matrix features = backbone_features(theta0, x);
  const std::size_t n = features.rows();
  for (auto b : batch_sizes) {
    if (b < 2 || b > n) {
      fail(ErrorKind::config, "batch size " + std::to_string(b) + " outside [2, " +
                                  std::to_string(n) + "]");
    }
  }
  const Matrix full = cov_stats(FeatureMatrix(features)).sigma();
  const SeededRng root(seed);
  std::vector<CovErrorRow> rows;
  std::vector<std::size_t> order(n);
  for (std::size_t bi = 0; bi < batch_sizes.size(); ++bi) {
    const std::size_t b = batch_sizes[bi];
    SeededRng rng = root.split(bi);
    double total = 0.0;
    for (int t = 0; t < trials; ++t) {
      std::iota(order.begin(), order.end(), 0);
      // Partial Fisher–Yates: the first b slots form a uniform sample.
      for (std::size_t i = 0; i < b; ++i) {
        const std::size_t j = i + static_cast<std::size_t>(rng.uniform_index(n - i));
        std::swap(order[i], order[j]);
      }
      std::vector<std::size_t> pick(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(b));
      std::sort(pick.begin(), pick.end());
      const Matrix batch = cov_stats(FeatureMatrix(gather_rows(features, pick))).sigma();
      total += std::sqrt(frobenius_dist_sq(batch, full));
    }
    rows.push_back({b, total / static_cast<double>(trials)});
  }
  return rows;
}

}  // namespace repsim
