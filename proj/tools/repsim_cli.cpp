// repsim: command-line front end.
//
// Exit codes: 0 success, 1 I/O failure, 2 usage error, 3 validation failure,
// 4 training divergence. Failures print one line to stderr:
//   error: <category>: <message>

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "repsim/alignment.hpp"
#include "repsim/checkpoint.hpp"
#include "repsim/config.hpp"
#include "repsim/csv.hpp"
#include "repsim/experiments.hpp"
#include "repsim/npy.hpp"

namespace {

using namespace repsim;

struct CommonOptions {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::size_t jobs = 1;
  std::string out_dir;
  // Flag overrides applied after the config file.
  std::optional<std::string> method;
  std::optional<double> lambda, lr, q_lr, rho;
  std::optional<int> epochs;
  std::optional<std::size_t> batch_size;
  std::optional<std::string> loss;
  bool mu_align = false;
  bool fixed_q = false;
};

void add_common(CLI::App* cmd, CommonOptions& o) {
  cmd->add_option("--config", o.config_path, "Experiment config (JSON)")->check(CLI::ExistingFile);
  cmd->add_option("--seed", o.seed, "Run a single seed instead of the config's seed list");
  cmd->add_option("--jobs", o.jobs, "Worker threads for independent runs")->check(CLI::PositiveNumber);
  cmd->add_option("--out", o.out_dir, "Directory for CSV and JSON outputs (default: CSV to stdout)");
  cmd->add_option("--method", o.method, "scratch|linear|full|hcs|repsim");
  cmd->add_option("--lambda", o.lambda, "HCS task-loss weight");
  cmd->add_option("--lr", o.lr, "SGD learning rate");
  cmd->add_option("--q-lr", o.q_lr, "Learning rate of the orthogonal generator");
  cmd->add_option("--epochs", o.epochs, "Finetune epochs");
  cmd->add_option("--batch-size", o.batch_size, "Finetune batch size");
  cmd->add_option("--rho", o.rho, "Sharpness radius");
  cmd->add_option("--loss", o.loss, "Classification loss: ce|mse");
  cmd->add_flag("--mu-align", o.mu_align, "Add the mean alignment term to RepSim");
  cmd->add_flag("--fixed-q", o.fixed_q, "Keep Q = I instead of learning it");
}

ExperimentConfig load_config(const CommonOptions& o) {
  ExperimentConfig c;
  if (!o.config_path.empty()) c = parse_config(read_file(o.config_path));
  if (o.seed) c.seeds = {*o.seed};
  if (o.method) c.loss.method = parse_method(*o.method);
  if (o.lambda) c.loss.lambda = *o.lambda;
  if (o.lr) c.optim.lr = *o.lr;
  if (o.q_lr) c.optim.q_lr = *o.q_lr;
  if (o.epochs) c.optim.epochs = *o.epochs;
  if (o.batch_size) c.optim.batch_size = *o.batch_size;
  if (o.rho) c.sharpness.rho = *o.rho;
  if (o.loss) c.loss.cls_loss = parse_cls_loss(*o.loss);
  if (o.mu_align) c.loss.mu_align = true;
  if (o.fixed_q) c.loss.learnable_q = false;
  c.validate();
  return c;
}

// Writes `<out>/<name>.csv` plus `<out>/summary.json`, or the CSV to stdout.
void emit(const CommonOptions& o, const std::string& name, const CsvTable& table,
          const Json& summary) {
  if (o.out_dir.empty()) {
    std::cout << table.str();
    return;
  }
  std::error_code ec;
  std::filesystem::create_directories(o.out_dir, ec);
  if (ec) fail(ErrorKind::io, "cannot create '" + o.out_dir + "': " + ec.message());
  write_file(o.out_dir + "/" + name + ".csv", table.str());
  write_file(o.out_dir + "/summary.json", summary.dump(2) + "\n");
}

std::vector<Method> parse_methods(const std::string& list) {
  std::vector<Method> out;
  std::stringstream ss(list);
  for (std::string item; std::getline(ss, item, ',');) out.push_back(parse_method(item));
  if (out.empty()) fail(ErrorKind::config, "empty method list");
  return out;
}

template <typename T>
std::vector<T> parse_list(const std::string& list, const char* what) {
  std::vector<T> out;
  std::stringstream ss(list);
  for (std::string item; std::getline(ss, item, ',');) {
    std::stringstream is(item);
    T v{};
    if (!(is >> v) || !is.eof()) fail(ErrorKind::config, std::string("bad ") + what + " '" + item + "'");
    out.push_back(v);
  }
  if (out.empty()) fail(ErrorKind::config, std::string("empty ") + what + " list");
  return out;
}

std::int64_t as_int(std::uint64_t v) { return static_cast<std::int64_t>(v); }

// θ₀ for a seed: loaded from --checkpoint when given, else pretrained.
MlpModel pretrained_model(const ExperimentConfig& cfg, const SyntheticTaskPair& pair,
                          std::uint64_t seed, const std::string& checkpoint,
                          std::string* hash = nullptr) {
  if (!checkpoint.empty()) {
    Checkpoint c = load_checkpoint(checkpoint);
    if (c.model.dims().d_in != cfg.task.d_in) {
      fail(ErrorKind::dimension, "checkpoint input width does not match the task");
    }
    if (hash) *hash = c.hash;
    return c.model;
  }
  return pretrain(pair.pretrain, cfg.pretrain_config(), seed);
}

int run_cka(const std::string& a, const std::string& b) {
  const FeatureMatrix f0(read_npy(a).values);
  const FeatureMatrix f1(read_npy(b).values);
  std::printf("%.6f\n", linear_cka(f0, f1));
  return 0;
}

// Accepts d×d covariances directly; any other shape is treated as n×d features.
CovarianceStats stats_from_file(const std::string& path, bool features) {
  const Matrix m = read_npy(path).values;
  if (!features && m.rows() == m.cols()) return CovarianceStats::from_sigma(m);
  return cov_stats(FeatureMatrix(m));
}

int run_align(const std::string& a, const std::string& b, bool features, const CommonOptions& o) {
  const auto s0 = stats_from_file(a, features);
  const auto s1 = stats_from_file(b, features);
  if (s0.d() != s1.d()) fail(ErrorKind::dimension, "covariances have different dimensions");
  const auto fit = fit_alignment(s0.sigma(), s1.sigma());
  const auto oracle = procrustes_oracle(s0, s1);
  CsvTable table({"learned_loss", "oracle_loss", "abs_gap", "iterations", "orthogonality_error"});
  table.add({fit.loss, oracle.min_loss, std::abs(fit.loss - oracle.min_loss),
             static_cast<std::int64_t>(fit.iterations), orthogonality_error(fit.q)});
  Json summary = {{"learned_loss", fit.loss}, {"oracle_loss", oracle.min_loss},
                  {"iterations", fit.iterations}};
  emit(o, "align", table, summary);
  if (!o.out_dir.empty()) write_npy(fit.q, NpyDtype::f64, o.out_dir + "/q.npy");
  return 0;
}

int run_pretrain(const CommonOptions& o, const std::string& save) {
  const auto cfg = load_config(o);
  CsvTable table({"seed", "pretrain_accuracy", "checkpoint_hash"});
  Json runs = Json::array();
  for (auto seed : cfg.seeds) {
    const auto pair = make_task_pair(cfg.task, seed);
    Checkpoint c{pretrain(pair.pretrain, cfg.pretrain_config(), seed), seed, "pretrain", to_json(cfg), ""};
    const double acc = evaluate(c.model, pair.pretrain).score;
    std::string path = save;
    if (path.empty() && !o.out_dir.empty()) path = o.out_dir + "/pretrain_seed" + std::to_string(seed) + ".ckpt";
    if (!path.empty()) {
      if (cfg.seeds.size() > 1 && !save.empty()) path += "." + std::to_string(seed);
      if (!o.out_dir.empty()) std::filesystem::create_directories(o.out_dir);
      save_checkpoint(c, path);
    } else {
      c.hash = decode_bundle(encode_checkpoint(c)).manifest["hash"].get<std::string>();
    }
    table.add({as_int(seed), acc, c.hash});
    runs.push_back({{"seed", seed}, {"accuracy", acc}, {"hash", c.hash}, {"path", path}});
  }
  emit(o, "pretrain", table, Json{{"runs", runs}, {"config", to_json(cfg)}});
  return 0;
}

int run_finetune(const CommonOptions& o, const std::string& checkpoint) {
  const auto cfg = load_config(o);
  const Method method = cfg.loss.method;
  CsvTable table({"seed", "method", "epoch", "task_loss", "reg_loss", "eval_score", "eval_cka"});
  std::vector<FinetuneResult> results(cfg.seeds.size());
  std::vector<std::string> notes(cfg.seeds.size());
  parallel_for(cfg.seeds.size(), o.jobs, [&](std::size_t i) {
    const auto seed = cfg.seeds[i];
    const auto pair = make_task_pair(cfg.task, seed);
    std::string hash;
    const MlpModel theta0 = pretrained_model(cfg, pair, seed, checkpoint, &hash);
    std::optional<CovarianceStats> sigma0;
    if (method == Method::repsim && !checkpoint.empty()) {
      const std::string cache = sigma0_cache_path(checkpoint);
      const std::string fp = data_fingerprint(pair.finetune_train.x);
      sigma0 = load_sigma0_cache(cache, hash, fp);
      notes[i] = sigma0 ? "sigma0 cache hit" : "sigma0 cache rebuilt";
      if (!sigma0) {
        sigma0 = pretrained_stats(theta0, pair.finetune_train);
        if (cfg.seeds.size() == 1) save_sigma0_cache(cache, *sigma0, hash, fp);
      }
    }
    results[i] = finetune(theta0, pair.finetune_train, pair.finetune_eval,
                          cfg.finetune_config(method, seed), sigma0);
  });
  Json runs = Json::array();
  for (std::size_t i = 0; i < results.size(); ++i) {
    for (const auto& e : results[i].metrics.epochs) {
      table.add({as_int(cfg.seeds[i]), std::string(to_string(method)), static_cast<std::int64_t>(e.epoch),
                 e.task_loss, e.reg_loss, e.eval_score, e.eval_cka});
    }
    const auto& last = results[i].metrics.last();
    runs.push_back({{"seed", cfg.seeds[i]}, {"eval_score", last.eval_score},
                    {"eval_cka", last.eval_cka}, {"reg_loss", last.reg_loss}});
    if (!notes[i].empty()) runs.back()["note"] = notes[i];
    if (!o.out_dir.empty()) {
      std::filesystem::create_directories(o.out_dir);
      Checkpoint c{results[i].model, cfg.seeds[i], std::string(to_string(method)), to_json(cfg), ""};
      save_checkpoint(c, o.out_dir + "/model_seed" + std::to_string(cfg.seeds[i]) + ".ckpt");
    }
  }
  emit(o, "finetune", table, Json{{"method", to_string(method)}, {"runs", runs}, {"config", to_json(cfg)}});
  return 0;
}

int run_sweep(const CommonOptions& o, const std::string& lambdas) {
  const auto cfg = load_config(o);
  const auto grid = parse_list<double>(lambdas, "lambda");
  CsvTable table({"seed", "lambda", "eval_score", "eval_cka"});
  Json rows = Json::array();
  for (auto seed : cfg.seeds) {
    const auto t = prepare_task(cfg, seed);
    const auto sweep = lambda_sweep(t.theta0, t.data.finetune_train, t.data.finetune_eval,
                                    cfg.finetune_config(Method::hcs, seed), grid, o.jobs);
    for (const auto& r : sweep) {
      table.add({as_int(seed), r.lambda, r.score, r.cka});
      rows.push_back({{"seed", seed}, {"lambda", r.lambda}, {"eval_score", r.score}, {"eval_cka", r.cka}});
    }
  }
  emit(o, "sweep", table, Json{{"rows", rows}});
  return 0;
}

int run_sharpness(const CommonOptions& o, const std::string& methods) {
  const auto cfg = load_config(o);
  const auto list = parse_methods(methods);
  const auto runs = compare_methods(cfg, list, o.jobs);
  CsvTable table({"seed", "method", "eval_score", "eval_cka", "base_loss", "perturbed_loss", "sharpness"});
  for (const auto& r : runs) {
    const auto& last = r.result.metrics.last();
    table.add({as_int(r.seed), std::string(to_string(r.method)), last.eval_score, last.eval_cka,
               r.sharpness.base_loss, r.sharpness.perturbed_loss, r.sharpness.sharpness});
  }
  Json means = Json::array();
  for (const auto& s : summarize(runs, list)) {
    means.push_back({{"method", to_string(s.method)}, {"eval_score", s.score}, {"eval_cka", s.cka},
                     {"sharpness", s.sharpness}});
  }
  emit(o, "sharpness", table, Json{{"rho", cfg.sharpness.rho}, {"means", means}});
  return 0;
}

int run_interpolate(const CommonOptions& o, int steps) {
  const auto cfg = load_config(o);
  CsvTable table({"seed", "t", "loss", "cka"});
  Json rows = Json::array();
  for (auto seed : cfg.seeds) {
    const auto study = interpolation_study(cfg, seed, steps);
    for (const auto& p : study.path) table.add({as_int(seed), p.t, p.loss, p.cka});
    rows.push_back({{"seed", seed}, {"has_strict_intermediate", study.has_intermediate}});
  }
  emit(o, "interpolate", table, Json{{"steps", steps}, {"runs", rows}});
  return 0;
}

int run_covstudy(const CommonOptions& o, const std::string& sizes, int trials) {
  const auto cfg = load_config(o);
  const auto batch_sizes = parse_list<std::size_t>(sizes, "batch size");
  CsvTable table({"seed", "batch_size", "mean_error"});
  for (auto seed : cfg.seeds) {
    for (const auto& r : covariance_study(cfg, seed, batch_sizes, trials)) {
      table.add({as_int(seed), static_cast<std::int64_t>(r.batch_size), r.mean_error});
    }
  }
  emit(o, "covstudy", table, Json{{"trials", trials}});
  return 0;
}

std::string one_line(std::string s) {
  for (auto& c : s)
    if (c == '\n' || c == '\r') c = ' ';
  return s;
}

int exit_code(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::diverged: return 4;
    case ErrorKind::io: return 1;
    default: return 3;
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"repsim: representation-similarity finetuning toolkit"};
  app.require_subcommand(1);

  std::string file_a, file_b, checkpoint, save_path, methods = "scratch,linear,full,hcs,repsim";
  std::string lambdas = "0,0.2,0.4,0.6,0.8,1", batch_sizes = "4,32,128";
  bool as_features = false;
  int steps = 21, trials = 50;
  CommonOptions opts;

  auto* cka = app.add_subcommand("cka", "Linear CKA between two NPY feature files");
  cka->add_option("a", file_a, "n×d features")->required()->check(CLI::ExistingFile);
  cka->add_option("b", file_b, "n×d features")->required()->check(CLI::ExistingFile);

  auto* align = app.add_subcommand("align", "Fit Q aligning two covariances and compare with the oracle");
  align->add_option("sigma0", file_a, "d×d covariance or n×d features")->required()->check(CLI::ExistingFile);
  align->add_option("sigma1", file_b, "d×d covariance or n×d features")->required()->check(CLI::ExistingFile);
  align->add_flag("--features", as_features, "Treat square inputs as feature matrices too");
  align->add_option("--out", opts.out_dir, "Directory for CSV, JSON and the fitted q.npy");

  auto* pre = app.add_subcommand("pretrain", "Pretrain θ₀ and write a checkpoint");
  add_common(pre, opts);
  pre->add_option("--save", save_path, "Checkpoint path");

  auto* fine = app.add_subcommand("finetune", "Finetune with one method; per-epoch CSV");
  add_common(fine, opts);
  fine->add_option("--checkpoint", checkpoint, "Use this θ₀ instead of pretraining")->check(CLI::ExistingFile);

  auto* sweep = app.add_subcommand("sweep", "HCS λ sweep");
  add_common(sweep, opts);
  sweep->add_option("--lambdas", lambdas, "Comma-separated λ grid");

  auto* sharp = app.add_subcommand("sharpness", "Finetune several methods and measure sharpness");
  add_common(sharp, opts);
  sharp->add_option("--methods", methods, "Comma-separated methods");

  auto* interp = app.add_subcommand("interpolate", "Linear path from a RepSim model to a full-finetune model");
  add_common(interp, opts);
  interp->add_option("--steps", steps, "Grid points including endpoints")->check(CLI::Range(3, 100000));

  auto* cov = app.add_subcommand("covstudy", "Batch-size study of covariance estimates");
  add_common(cov, opts);
  cov->add_option("--batch-sizes", batch_sizes, "Comma-separated batch sizes");
  cov->add_option("--trials", trials, "Batches per size")->check(CLI::PositiveNumber);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::fprintf(stderr, "error: usage: %s\n", one_line(e.what()).c_str());
    return 2;
  }

  try {
    if (*cka) return run_cka(file_a, file_b);
    if (*align) return run_align(file_a, file_b, as_features, opts);
    if (*pre) return run_pretrain(opts, save_path);
    if (*fine) return run_finetune(opts, checkpoint);
    if (*sweep) return run_sweep(opts, lambdas);
    if (*sharp) return run_sharpness(opts, methods);
    if (*interp) return run_interpolate(opts, steps);
    if (*cov) return run_covstudy(opts, batch_sizes, trials);
  } catch (const Error& e) {
    std::fprintf(stderr, "error: %s: %s\n", std::string(to_string(e.kind())).c_str(),
                 one_line(e.what()).c_str());
    return exit_code(e.kind());
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: internal: %s\n", one_line(e.what()).c_str());
    return 1;
  }
  return 2;
}
