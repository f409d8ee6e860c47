#pragma once

// Multi-run studies assembled from the single-run primitives. The CLI and
// the acceptance binary both call these so they always agree on seeds and
// data splits.

#include <cstdint>
#include <optional>
#include <vector>

#include "repsim/analysis.hpp"
#include "repsim/config.hpp"
#include "repsim/data.hpp"
#include "repsim/trainer.hpp"

namespace repsim {

struct PreparedTask {
  SyntheticTaskPair data;
  MlpModel theta0;
};

inline PreparedTask prepare_task(const ExperimentConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  PreparedTask t{make_task_pair(cfg.task, seed), {}};
  t.theta0 = pretrain(t.data.pretrain, cfg.pretrain_config(), seed);
  return t;
}

struct MethodRun {
  std::uint64_t seed = 0;
  Method method = Method::full;
  FinetuneResult result;
  SharpnessResult sharpness;
  bool backbone_unchanged = false;  // bit-exact equality with θ₀'s backbone
};

// Every (seed, method) pair, seeds outermost. Sharpness is measured on the
// finetune evaluation set.
inline std::vector<MethodRun> compare_methods(const ExperimentConfig& cfg,
                                              const std::vector<Method>& methods,
                                              std::size_t jobs = 1) {
  cfg.validate();
  std::vector<PreparedTask> tasks(cfg.seeds.size());
  parallel_for(tasks.size(), jobs, [&](std::size_t i) { tasks[i] = prepare_task(cfg, cfg.seeds[i]); });

  std::vector<MethodRun> runs(cfg.seeds.size() * methods.size());
  parallel_for(runs.size(), jobs, [&](std::size_t i) {
    const std::size_t s = i / methods.size();
    const PreparedTask& t = tasks[s];
    MethodRun& run = runs[i];
    run.seed = cfg.seeds[s];
    run.method = methods[i % methods.size()];
    run.result = finetune(t.theta0, t.data.finetune_train, t.data.finetune_eval,
                          cfg.finetune_config(run.method, run.seed));
    run.sharpness = sharpness(run.result.model, t.data.finetune_eval, cfg.sharpness, cfg.loss.cls_loss);
    run.result.metrics.sharpness = run.sharpness.sharpness;
    run.backbone_unchanged = run.result.model.backbone_equal(t.theta0);
  });
  return runs;
}

struct MethodSummary {
  Method method;
  double score = 0.0;
  double cka = 0.0;
  double sharpness = 0.0;
  double reg_loss = 0.0;
};

// Means over seeds, in the order of `methods`.
inline std::vector<MethodSummary> summarize(const std::vector<MethodRun>& runs,
                                            const std::vector<Method>& methods) {
  std::vector<MethodSummary> out;
  for (Method m : methods) {
    MethodSummary s{m};
    std::size_t count = 0;
    for (const auto& r : runs) {
      if (r.method != m) continue;
      const auto& last = r.result.metrics.last();
      s.score += last.eval_score;
      s.cka += last.eval_cka;
      s.sharpness += r.sharpness.sharpness;
      s.reg_loss += last.reg_loss;
      ++count;
    }
    if (count) {
      const double inv = 1.0 / static_cast<double>(count);
      s.score *= inv;
      s.cka *= inv;
      s.sharpness *= inv;
      s.reg_loss *= inv;
    }
    out.push_back(s);
  }
  return out;
}

struct CentralityStudy {
  std::vector<Method> methods;
  std::vector<std::vector<double>> distances;  // [method][subtask]
  std::vector<std::vector<double>> backbone_distances;
};

// One pretrained model, `subtasks` sibling finetune tasks, one finetuned model
// per (method, subtask); distances are to each method's own parameter center.
inline CentralityStudy centrality_study(const ExperimentConfig& cfg, const std::vector<Method>& methods,
                                        std::size_t subtasks, std::uint64_t seed,
                                        std::size_t jobs = 1) {
  if (subtasks < 2) fail(ErrorKind::config, "centrality needs at least 2 sub-tasks");
  const PreparedTask base = prepare_task(cfg, seed);
  std::vector<SyntheticTaskPair> pairs(subtasks);
  for (std::size_t s = 0; s < subtasks; ++s) {
    TaskSpec spec = cfg.task;
    spec.subtask = s;
    pairs[s] = make_task_pair(spec, seed);
  }
  std::vector<MlpModel> models(methods.size() * subtasks);
  parallel_for(models.size(), jobs, [&](std::size_t i) {
    const std::size_t m = i / subtasks;
    const std::size_t s = i % subtasks;
    models[i] = finetune(base.theta0, pairs[s].finetune_train, pairs[s].finetune_eval,
                         cfg.finetune_config(methods[m], seed))
                    .model;
  });
  CentralityStudy out{methods, {}, {}};
  for (std::size_t m = 0; m < methods.size(); ++m) {
    const std::vector<MlpModel> group(models.begin() + static_cast<std::ptrdiff_t>(m * subtasks),
                                      models.begin() + static_cast<std::ptrdiff_t>((m + 1) * subtasks));
    out.distances.push_back(param_centrality(group, false));
    out.backbone_distances.push_back(param_centrality(group, true));
  }
  return out;
}

struct InterpolationStudy {
  std::vector<PathPoint> path;
  bool has_intermediate = false;
};

// θ_a = REPSIM (high similarity), θ_b = FULL (low loss), evaluated on the
// finetune evaluation set.
inline InterpolationStudy interpolation_study(const ExperimentConfig& cfg, std::uint64_t seed,
                                              int steps = 21) {
  const PreparedTask t = prepare_task(cfg, seed);
  const auto& train = t.data.finetune_train;
  const auto& eval = t.data.finetune_eval;
  const auto a = finetune(t.theta0, train, eval, cfg.finetune_config(Method::repsim, seed));
  const auto b = finetune(t.theta0, train, eval, cfg.finetune_config(Method::full, seed));
  InterpolationStudy out;
  out.path = interpolation_path(a.model, b.model, t.theta0, eval, steps, cfg.loss.cls_loss);
  out.has_intermediate = has_strict_intermediate(out.path);
  return out;
}

// Batch covariance error of pretrained features on the finetune evaluation inputs.
inline std::vector<CovErrorRow> covariance_study(const ExperimentConfig& cfg, std::uint64_t seed,
                                                 const std::vector<std::size_t>& batch_sizes,
                                                 int trials) {
  const PreparedTask t = prepare_task(cfg, seed);
  return batch_cov_error(t.theta0, t.data.finetune_eval.x, batch_sizes, trials, seed);
}

}  // namespace repsim
