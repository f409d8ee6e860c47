#pragma once

// Experiment configuration as JSON. Every key is optional and falls back to
// the desk-scale defaults below; unknown keys are rejected so a typo cannot
// silently run the wrong experiment.
//
// Canonical form: keys sorted, two-space indent, trailing newline.

#include <cstdint>
#include <set>
#include <string>
#include <vector>

#include "json.hpp"
#include "repsim/analysis.hpp"
#include "repsim/data.hpp"
#include "repsim/error.hpp"
#include "repsim/losses.hpp"
#include "repsim/trainer.hpp"

namespace repsim {

using Json = nlohmann::json;

struct ExperimentConfig {
  TaskSpec task;
  std::size_t d_hidden = 32;
  std::size_t d_feat = 16;
  OptimConfig pretrain_optim{0.05, 0.0, 64, 30};
  double pretrain_min_accuracy = 90.0;

  LossConfig loss{Method::repsim};
  // The OptimConfig defaults (lr 6e-4, 50 epochs) barely move a 128-sample
  // task under plain SGD, so the desk experiments train longer and faster.
  OptimConfig optim{0.02, 0.002, 128, 1500};
  std::vector<std::uint64_t> seeds{0, 1, 2};
  SharpnessConfig sharpness;

  void validate() const {
    task.validate();
    pretrain_config().validate();
    loss.validate();
    optim.validate();
    sharpness.validate();
    if (seeds.empty()) fail(ErrorKind::config, "seeds must not be empty");
  }

  PretrainConfig pretrain_config() const {
    PretrainConfig p;
    p.dims = {task.d_in, d_hidden, d_feat, task.k0};
    p.optim = pretrain_optim;
    p.min_accuracy = pretrain_min_accuracy;
    return p;
  }

  FinetuneConfig finetune_config(Method method, std::uint64_t seed) const {
    FinetuneConfig f;
    f.loss = loss;
    f.loss.method = method;
    f.optim = optim;
    f.seed = seed;
    return f;
  }

  friend bool operator==(const ExperimentConfig& a, const ExperimentConfig& b);
};

namespace detail {

inline void reject_unknown(const Json& obj, const std::set<std::string>& allowed,
                           const std::string& where) {
  if (!obj.is_object()) fail(ErrorKind::config, where + " must be a JSON object");
  for (const auto& [key, _] : obj.items()) {
    if (!allowed.count(key)) fail(ErrorKind::config, "unknown key '" + where + key + "'");
  }
}

template <typename T>
void take(const Json& obj, const char* key, T& dst, const std::string& where) {
  const auto it = obj.find(key);
  if (it == obj.end()) return;
  const std::string name = where + key;
  if constexpr (std::is_same_v<T, bool>) {
    if (!it->is_boolean()) fail(ErrorKind::config, name + " must be a boolean");
    dst = it->template get<bool>();
  } else if constexpr (std::is_integral_v<T>) {
    if (!it->is_number_integer() || (it->is_number_integer() && !it->is_number_unsigned() &&
                                     it->template get<std::int64_t>() < 0)) {
      fail(ErrorKind::config, name + " must be a non-negative integer");
    }
    dst = static_cast<T>(it->template get<std::uint64_t>());
  } else if constexpr (std::is_floating_point_v<T>) {
    if (!it->is_number()) fail(ErrorKind::config, name + " must be a number");
    dst = it->template get<T>();
  } else {
    if (!it->is_string()) fail(ErrorKind::config, name + " must be a string");
    dst = it->template get<T>();
  }
}

}  // namespace detail

inline Json to_json(const ExperimentConfig& c) {
  const TaskSpec& t = c.task;
  Json task = {{"d_in", t.d_in},
               {"latent_dim", t.latent_dim},
               {"k0", t.k0},
               {"k1", t.k1},
               {"n0", t.n0},
               {"n1", t.n1},
               {"n_eval", t.n_eval},
               {"cluster_radius", t.cluster_radius},
               {"cluster_noise", t.cluster_noise},
               {"input_noise", t.input_noise},
               {"finetune_rotation", t.finetune_rotation},
               {"finetune_shift", t.finetune_shift},
               {"center_overlap", t.center_overlap},
               {"label_noise", t.label_noise},
               {"multilabel", t.multilabel},
               {"subtask", t.subtask}};
  Json model = {{"d_hidden", c.d_hidden}, {"d_feat", c.d_feat}};
  Json pre = {{"lr", c.pretrain_optim.lr},
              {"batch_size", c.pretrain_optim.batch_size},
              {"epochs", c.pretrain_optim.epochs},
              {"min_accuracy", c.pretrain_min_accuracy}};
  return Json{{"task", task},
              {"model", model},
              {"pretrain", pre},
              {"method", std::string(to_string(c.loss.method))},
              {"lambda", c.loss.lambda},
              {"mu_align", c.loss.mu_align},
              {"learnable_q", c.loss.learnable_q},
              {"loss", std::string(to_string(c.loss.cls_loss))},
              {"cov_weight", c.loss.cov_weight},
              {"lr", c.optim.lr},
              {"q_lr", c.optim.q_lr},
              {"batch_size", c.optim.batch_size},
              {"epochs", c.optim.epochs},
              {"seeds", c.seeds},
              {"rho", c.sharpness.rho},
              {"ascent_steps", c.sharpness.ascent_steps}};
}

inline ExperimentConfig config_from_json(const Json& j) {
  using detail::take;
  detail::reject_unknown(j,
                         {"task", "model", "pretrain", "method", "lambda", "mu_align", "learnable_q",
                          "loss", "cov_weight", "lr", "q_lr", "batch_size", "epochs", "seeds",
                          "rho", "ascent_steps"},
                         "");
  ExperimentConfig c;
  if (j.contains("task")) {
    const Json& t = j["task"];
    detail::reject_unknown(t,
                           {"d_in", "latent_dim", "k0", "k1", "n0", "n1", "n_eval", "cluster_radius",
                            "cluster_noise", "input_noise", "finetune_rotation", "finetune_shift",
                            "center_overlap", "label_noise", "multilabel", "subtask"},
                           "task.");
    TaskSpec& s = c.task;
    take(t, "d_in", s.d_in, "task.");
    take(t, "latent_dim", s.latent_dim, "task.");
    take(t, "k0", s.k0, "task.");
    take(t, "k1", s.k1, "task.");
    take(t, "n0", s.n0, "task.");
    take(t, "n1", s.n1, "task.");
    take(t, "n_eval", s.n_eval, "task.");
    take(t, "cluster_radius", s.cluster_radius, "task.");
    take(t, "cluster_noise", s.cluster_noise, "task.");
    take(t, "input_noise", s.input_noise, "task.");
    take(t, "finetune_rotation", s.finetune_rotation, "task.");
    take(t, "finetune_shift", s.finetune_shift, "task.");
    take(t, "center_overlap", s.center_overlap, "task.");
    take(t, "label_noise", s.label_noise, "task.");
    take(t, "multilabel", s.multilabel, "task.");
    take(t, "subtask", s.subtask, "task.");
  }
  if (j.contains("model")) {
    const Json& m = j["model"];
    detail::reject_unknown(m, {"d_hidden", "d_feat"}, "model.");
    take(m, "d_hidden", c.d_hidden, "model.");
    take(m, "d_feat", c.d_feat, "model.");
  }
  if (j.contains("pretrain")) {
    const Json& p = j["pretrain"];
    detail::reject_unknown(p, {"lr", "batch_size", "epochs", "min_accuracy"}, "pretrain.");
    take(p, "lr", c.pretrain_optim.lr, "pretrain.");
    take(p, "batch_size", c.pretrain_optim.batch_size, "pretrain.");
    take(p, "epochs", c.pretrain_optim.epochs, "pretrain.");
    take(p, "min_accuracy", c.pretrain_min_accuracy, "pretrain.");
  }
  std::string method(to_string(c.loss.method));
  std::string loss(to_string(c.loss.cls_loss));
  take(j, "method", method, "");
  take(j, "loss", loss, "");
  c.loss.method = parse_method(method);
  c.loss.cls_loss = parse_cls_loss(loss);
  take(j, "lambda", c.loss.lambda, "");
  take(j, "mu_align", c.loss.mu_align, "");
  take(j, "learnable_q", c.loss.learnable_q, "");
  take(j, "cov_weight", c.loss.cov_weight, "");
  take(j, "lr", c.optim.lr, "");
  take(j, "q_lr", c.optim.q_lr, "");
  take(j, "batch_size", c.optim.batch_size, "");
  take(j, "epochs", c.optim.epochs, "");
  take(j, "rho", c.sharpness.rho, "");
  take(j, "ascent_steps", c.sharpness.ascent_steps, "");
  if (j.contains("seeds")) {
    const Json& s = j["seeds"];
    if (!s.is_array()) fail(ErrorKind::config, "seeds must be an array of non-negative integers");
    c.seeds.clear();
    for (const auto& v : s) {
      if (!v.is_number_unsigned()) fail(ErrorKind::config, "seeds must be non-negative integers");
      c.seeds.push_back(v.get<std::uint64_t>());
    }
  }
  c.validate();
  return c;
}

inline ExperimentConfig parse_config(const std::string& text) {
  Json j;
  try {
    j = Json::parse(text);
  } catch (const Json::parse_error& e) {
    fail(ErrorKind::config, std::string("config is not valid JSON: ") + e.what());
  }
  return config_from_json(j);
}

inline std::string serialize_config(const ExperimentConfig& c) { return to_json(c).dump(2) + "\n"; }

inline bool operator==(const ExperimentConfig& a, const ExperimentConfig& b) {
  return to_json(a) == to_json(b);
}

}  // namespace repsim
