#pragma once

// Pretraining and the five finetuning regimes:
//   scratch  reinitialize every layer, then train everything
//   linear   frozen backbone, train the head only
//   full     train everything on the task loss
//   hcs      λ·L_cls + (1 − λ)·(1 − CKA) against frozen pretrained features
//   repsim   L_cls + ‖Σ_θ − QᵀΣ₀Q‖²_F with Q = cayley(A) trained jointly

#include <algorithm>
#include <atomic>
#include <cmath>
#include <functional>
#include <numeric>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "repsim/data.hpp"
#include "repsim/losses.hpp"
#include "repsim/manifold.hpp"
#include "repsim/model.hpp"
#include "repsim/similarity.hpp"

namespace repsim {

struct OptimConfig {
  double lr = 6e-4;
  // Step size for the generator A; non-positive means "same as lr".
  double q_lr = 0.0;
  std::size_t batch_size = 128;
  int epochs = 50;

  double generator_lr() const noexcept { return q_lr > 0.0 ? q_lr : lr; }

  void validate() const {
    if (!(lr > 0.0) || !std::isfinite(lr)) fail(ErrorKind::config, "lr must be positive");
    if (!std::isfinite(q_lr)) fail(ErrorKind::config, "q_lr must be finite");
    if (batch_size < 2) fail(ErrorKind::config, "batch_size must be at least 2");
    if (epochs < 1) fail(ErrorKind::config, "epochs must be at least 1");
  }
};

struct PretrainConfig {
  MlpDims dims{16, 32, 16, 4};
  OptimConfig optim{0.05, 0.0, 64, 30};
  double min_accuracy = 90.0;

  void validate() const {
    optim.validate();
    if (dims.d_in == 0 || dims.d_hidden == 0 || dims.d_feat < 2 || dims.k < 2) {
      fail(ErrorKind::config, "model dims must be positive (d_feat, k >= 2)");
    }
  }
};

struct EpochMetrics {
  int epoch = 0;
  double task_loss = 0.0;  // mean minibatch classification loss
  double reg_loss = 0.0;   // mean minibatch regularizer (1 − CKA or L_Cov), 0 otherwise
  double eval_score = 0.0; // accuracy or mAP, percent
  double eval_cka = 0.0;   // full eval-set CKA to the pretrained backbone
};

struct RunMetrics {
  std::vector<EpochMetrics> epochs;
  std::optional<double> sharpness;
  Vector final_params;

  const EpochMetrics& last() const { return epochs.back(); }
};

struct EvalResult {
  double loss = 0.0;
  double score = 0.0;  // percent
};

// Mean average precision over labels with at least one positive, in percent.
inline double mean_average_precision(const Matrix& scores, const Matrix& truth) {
  double total = 0.0;
  std::size_t counted = 0;
  std::vector<std::size_t> order(scores.rows());
  for (std::size_t c = 0; c < scores.cols(); ++c) {
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return scores(a, c) > scores(b, c); });
    double hits = 0.0;
    double precision_sum = 0.0;
    for (std::size_t r = 0; r < order.size(); ++r) {
      if (truth(order[r], c) == 1.0) {
        hits += 1.0;
        precision_sum += hits / static_cast<double>(r + 1);
      }
    }
    if (hits > 0.0) {
      total += precision_sum / hits;
      ++counted;
    }
  }
  return counted == 0 ? 0.0 : 100.0 * total / static_cast<double>(counted);
}

// Argmax accuracy (lowest index wins ties) or mAP for multilabel targets.
inline double classification_score(const Matrix& logits, const Targets& y) {
  if (y.multilabel()) return mean_average_precision(logits, y.dense());
  std::size_t correct = 0;
  for (std::size_t i = 0; i < logits.rows(); ++i) {
    auto r = logits.row(i);
    std::size_t best = 0;
    for (std::size_t j = 1; j < r.size(); ++j)
      if (r[j] > r[best]) best = j;
    if (best == y.labels()[i]) ++correct;
  }
  return 100.0 * static_cast<double>(correct) / static_cast<double>(logits.rows());
}

inline EvalResult evaluate(const MlpModel& m, const Dataset& data, ClsLoss kind = ClsLoss::ce) {
  const auto cache = forward(m, data.x);
  return {cls_loss_and_grad(cache.logits, data.y, kind).loss,
          classification_score(cache.logits, data.y)};
}

// Total classification loss and its gradient over `data`, for checks and sharpness.
inline std::pair<double, MlpGrads> cls_objective(const MlpModel& m, const Dataset& data,
                                                 ClsLoss kind = ClsLoss::ce) {
  const auto cache = forward(m, data.x);
  auto lg = cls_loss_and_grad(cache.logits, data.y, kind);
  return {lg.loss, backward(m, cache, lg.grad)};
}

namespace detail {

inline std::vector<std::vector<std::size_t>> epoch_batches(std::size_t n, std::size_t batch,
                                                           SeededRng& rng) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  rng.shuffle(std::span<std::size_t>(order));
  std::vector<std::vector<std::size_t>> out;
  for (std::size_t start = 0; start < n; start += batch) {
    const std::size_t end = std::min(n, start + batch);
    // Moments and CKA need two samples; a trailing singleton is dropped.
    if (end - start < 2) break;
    out.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(start),
                     order.begin() + static_cast<std::ptrdiff_t>(end));
  }
  return out;
}

}  // namespace detail

inline MlpModel pretrain(const Dataset& data, const PretrainConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  if (data.x.cols() != cfg.dims.d_in || data.y.k() != cfg.dims.k || data.y.multilabel()) {
    fail(ErrorKind::config, "pretrain data does not match model dims");
  }
  const SeededRng root(seed);
  SeededRng init_rng = root.split(11);
  SeededRng order_rng = root.split(12);
  MlpModel model = MlpModel::random(cfg.dims, init_rng);
  for (int epoch = 0; epoch < cfg.optim.epochs; ++epoch) {
    for (const auto& idx : detail::epoch_batches(data.size(), cfg.optim.batch_size, order_rng)) {
      const Dataset batch = data.subset(idx);
      const auto cache = forward(model, batch.x);
      const auto lg = cls_loss_and_grad(cache.logits, batch.y);
      if (!std::isfinite(lg.loss)) throw DivergedError(epoch, "pretraining diverged");
      sgd_step(model, backward(model, cache, lg.grad), cfg.optim.lr);
    }
  }
  const double acc = evaluate(model, data).score;
  if (acc < cfg.min_accuracy) {
    fail(ErrorKind::pretrain_quality, "pretrained accuracy " + std::to_string(acc) +
                                          "% below required " +
                                          std::to_string(cfg.min_accuracy) + "%");
  }
  return model;
}

struct FinetuneConfig {
  LossConfig loss;
  OptimConfig optim;
  std::uint64_t seed = 0;

  void validate() const {
    loss.validate();
    optim.validate();
  }
};

struct FinetuneResult {
  MlpModel model;
  std::optional<OrthogonalParam> q;
  RunMetrics metrics;
};

// Σ₀: statistics of the frozen pretrained backbone over the finetune training set.
inline CovarianceStats pretrained_stats(const MlpModel& theta0, const Dataset& train) {
  return cov_stats(FeatureMatrix(backbone_features(theta0, train.x)));
}

// Frozen references a regularized objective compares against.
struct RegularizerRefs {
  const Matrix* f0 = nullptr;                // pretrained features of the batch (hcs)
  const CovarianceStats* sigma0 = nullptr;   // cached pretrained statistics (repsim)
  const OrthogonalParam* q = nullptr;        // current generator (repsim)
};

struct BatchObjective {
  double cls = 0.0;    // unweighted classification loss
  double reg = 0.0;    // unweighted regularizer: 1 − CKA, or L_Cov (+ mean term)
  double total = 0.0;  // the quantity whose gradient `grads` holds
  MlpGrads grads;
  Vector grad_a;       // ∂total/∂A for repsim, empty otherwise
};

// One minibatch of the finetune objective:
//   hcs     total = λ·cls + (1 − λ)·(1 − CKA)
//   repsim  total = cls + w·(L_Cov [+ ‖μ₁ − αQμ₀‖²])
//   other   total = cls
inline BatchObjective batch_objective(const MlpModel& model, const Dataset& batch,
                                      const LossConfig& loss, const RegularizerRefs& refs = {}) {
  const Method method = loss.method;
  const bool head_only = method == Method::linear;
  const bool use_cka = method == Method::hcs && loss.lambda < 1.0;
  const bool use_cov = method == Method::repsim;
  const double cls_weight = method == Method::hcs ? loss.lambda : 1.0;
  if (use_cka && refs.f0 == nullptr) fail(ErrorKind::config, "hcs objective needs pretrained features");
  if (use_cov && (refs.sigma0 == nullptr || refs.q == nullptr)) {
    fail(ErrorKind::config, "repsim objective needs sigma0 and q");
  }

  const auto cache = forward(model, batch.x);
  auto cls = cls_loss_and_grad(cache.logits, batch.y, loss.cls_loss);
  BatchObjective out;
  out.cls = cls.loss;
  if (cls_weight != 1.0) cls.grad *= cls_weight;
  out.total = cls_weight * cls.loss;

  std::optional<Matrix> grad_features;
  if (use_cka) {
    auto lg = cka_loss_and_grad(FeatureMatrix(*refs.f0), FeatureMatrix(cache.features));
    out.reg = lg.loss;
    out.total += (1.0 - loss.lambda) * lg.loss;
    lg.grad *= 1.0 - loss.lambda;
    grad_features = std::move(lg.grad);
  } else if (use_cov) {
    const FeatureMatrix f1(cache.features);
    const auto s1 = cov_stats(f1);
    auto cov = cov_loss_and_grads(s1, *refs.sigma0, *refs.q);
    out.reg = cov.loss;
    out.grad_a = std::move(cov.grad_a);
    Vector grad_mu;
    if (loss.mu_align) {
      auto mean = mean_align_loss_and_grads(s1.mu(), refs.sigma0->mu(), *refs.q);
      out.reg += mean.loss;
      for (std::size_t i = 0; i < out.grad_a.size(); ++i) out.grad_a[i] += mean.grad_a[i];
      grad_mu = std::move(mean.grad_mu1);
      for (auto& v : grad_mu) v *= loss.cov_weight;
    }
    out.total += loss.cov_weight * out.reg;
    for (auto& v : out.grad_a) v *= loss.cov_weight;
    cov.grad_sigma1 *= loss.cov_weight;
    grad_features = cov_stats_backward(f1, cov.grad_sigma1, loss.mu_align ? &grad_mu : nullptr);
  }
  out.grads = backward(model, cache, cls.grad, grad_features ? &*grad_features : nullptr, head_only);
  return out;
}

// Pass `sigma0` to reuse a cached pretrained covariance; otherwise it is
// computed from `theta0` on `train`.
inline FinetuneResult finetune(const MlpModel& theta0, const Dataset& train, const Dataset& eval,
                               const FinetuneConfig& cfg,
                               std::optional<CovarianceStats> sigma0 = std::nullopt) {
  cfg.validate();
  if (train.x.cols() != theta0.dims().d_in || eval.x.cols() != theta0.dims().d_in) {
    fail(ErrorKind::dimension, "task input width does not match the pretrained model");
  }
  if (train.y.k() != eval.y.k() || train.y.multilabel() != eval.y.multilabel()) {
    fail(ErrorKind::dimension, "train and eval targets disagree");
  }
  const Method method = cfg.loss.method;
  const std::size_t k = train.y.k();
  const std::size_t d_feat = theta0.dims().d_feat;

  const SeededRng root(cfg.seed);
  SeededRng head_rng = root.split(1);
  SeededRng order_rng = root.split(2);
  SeededRng scratch_rng = root.split(3);

  MlpModel model = theta0.with_new_head(k, head_rng);
  if (method == Method::scratch) {
    for (std::size_t l = 0; l < MlpModel::backbone_layers; ++l) model.init_layer(l, scratch_rng);
  }
  const bool head_only = method == Method::linear;
  // λ = 1 reduces hcs to full exactly, so the CKA term is skipped entirely.
  const bool use_cka = method == Method::hcs && cfg.loss.lambda < 1.0;
  const bool use_cov = method == Method::repsim;

  const FeatureMatrix eval_f0(backbone_features(theta0, eval.x));
  std::optional<Matrix> train_f0;
  if (use_cka) train_f0 = backbone_features(theta0, train.x);

  FinetuneResult result{model, std::nullopt, {}};
  if (use_cov) {
    if (!sigma0) sigma0 = pretrained_stats(theta0, train);
    if (sigma0->d() != d_feat) fail(ErrorKind::dimension, "cached sigma0 has wrong dimension");
    result.q = OrthogonalParam(d_feat);
  }

  for (int epoch = 0; epoch < cfg.optim.epochs; ++epoch) {
    double task_sum = 0.0;
    double reg_sum = 0.0;
    std::size_t batches = 0;
    for (const auto& idx : detail::epoch_batches(train.size(), cfg.optim.batch_size, order_rng)) {
      const Dataset batch = train.subset(idx);
      std::optional<Matrix> f0;
      if (use_cka) f0 = gather_rows(*train_f0, idx);
      RegularizerRefs refs{f0 ? &*f0 : nullptr, use_cov ? &*sigma0 : nullptr,
                           result.q ? &*result.q : nullptr};
      const auto obj = batch_objective(result.model, batch, cfg.loss, refs);
      if (!std::isfinite(obj.cls) || !std::isfinite(obj.reg)) {
        throw DivergedError(epoch, "finetune diverged at epoch " + std::to_string(epoch));
      }
      if (use_cov && cfg.loss.learnable_q) {
        const double step = cfg.optim.generator_lr();
        auto upper = result.q->upper();
        for (std::size_t i = 0; i < upper.size(); ++i) upper[i] -= step * obj.grad_a[i];
      }
      sgd_step(result.model, obj.grads, cfg.optim.lr, head_only);
      task_sum += obj.cls;
      reg_sum += obj.reg;
      ++batches;
    }
    if (!result.model.all_finite()) {
      throw DivergedError(epoch, "parameters became non-finite at epoch " + std::to_string(epoch));
    }

    const auto eval_cache = forward(result.model, eval.x);
    EpochMetrics em;
    em.epoch = epoch + 1;
    em.task_loss = batches ? task_sum / static_cast<double>(batches) : 0.0;
    em.reg_loss = batches ? reg_sum / static_cast<double>(batches) : 0.0;
    em.eval_score = classification_score(eval_cache.logits, eval.y);
    em.eval_cka = linear_cka(eval_f0, FeatureMatrix(eval_cache.features));
    result.metrics.epochs.push_back(em);
  }
  result.metrics.final_params = result.model.flatten();
  return result;
}

// Runs jobs over `count` indices with at most `workers` threads. Each index
// writes only its own output slot, so results are order-independent.
inline void parallel_for(std::size_t count, std::size_t workers,
                         const std::function<void(std::size_t)>& body) {
  workers = std::max<std::size_t>(1, std::min(workers, count));
  if (workers == 1) {
    for (std::size_t i = 0; i < count; ++i) body(i);
    return;
  }
  std::vector<std::exception_ptr> errors(count);
  std::atomic<std::size_t> next{0};
  {
    std::vector<std::jthread> pool;
    for (std::size_t w = 0; w < workers; ++w) {
      pool.emplace_back([&] {
        for (std::size_t i = next++; i < count; i = next++) {
          try {
            body(i);
          } catch (...) {
            errors[i] = std::current_exception();
          }
        }
      });
    }
  }
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

struct SweepRow {
  double lambda;
  double score;
  double cka;
  RunMetrics metrics;
};

// One HCS run per λ under the same seed; rows sorted by λ.
inline std::vector<SweepRow> lambda_sweep(const MlpModel& theta0, const Dataset& train,
                                          const Dataset& eval, const FinetuneConfig& base,
                                          std::vector<double> lambdas, std::size_t jobs = 1) {
  for (double l : lambdas) {
    if (!(l >= 0.0 && l <= 1.0)) fail(ErrorKind::config, "sweep lambda outside [0,1]");
  }
  std::sort(lambdas.begin(), lambdas.end());
  std::vector<SweepRow> rows(lambdas.size());
  parallel_for(lambdas.size(), jobs, [&](std::size_t i) {
    FinetuneConfig cfg = base;
    cfg.loss.method = Method::hcs;
    cfg.loss.lambda = lambdas[i];
    auto run = finetune(theta0, train, eval, cfg);
    rows[i] = {lambdas[i], run.metrics.last().eval_score, run.metrics.last().eval_cka,
               std::move(run.metrics)};
  });
  return rows;
}

}  // namespace repsim
