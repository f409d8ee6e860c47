// Acceptance run: one PASS/FAIL line per criterion, exit status 1 if any
// criterion fails. Everything uses the default experiment config unless a
// criterion says otherwise.

#include <sys/wait.h>
#include <unistd.h>

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <functional>
#include <numbers>
#include <string>
#include <vector>

#include "../unit/test_support.hpp"
#include "repsim/alignment.hpp"
#include "repsim/experiments.hpp"
#include "repsim/npy.hpp"

using namespace repsim;
namespace t = repsim::testing;

namespace {

struct Verdict {
  bool pass;
  std::string detail;
};

int failures = 0;

void report(const std::string& name, const std::function<Verdict()>& check) {
  const auto start = std::chrono::steady_clock::now();
  Verdict v;
  try {
    v = check();
  } catch (const std::exception& e) {
    v = {false, std::string("exception: ") + e.what()};
  }
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  if (!v.pass) ++failures;
  std::printf("%s  %-28s %s [%.1fs]\n", v.pass ? "PASS" : "FAIL", name.c_str(), v.detail.c_str(), secs);
  std::fflush(stdout);
}

std::string fmt(const char* f, double a) {
  char buf[128];
  std::snprintf(buf, sizeof buf, f, a);
  return buf;
}

std::string fmt(const char* f, double a, double b) {
  char buf[160];
  std::snprintf(buf, sizeof buf, f, a, b);
  return buf;
}

double mean(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

double elapsed_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

OrthogonalParam random_param(std::size_t d, SeededRng& rng) {
  OrthogonalParam p(d);
  for (auto& v : p.upper()) v = rng.normal(0.0, 0.5);
  return p;
}

// ---------------------------------------------------------------------------

Verdict cka_invariance() {
  const auto t0 = std::chrono::steady_clock::now();
  SeededRng rng(1001);
  double worst = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    const Matrix f = random_gaussian(64, 16, rng);
    const Matrix q = random_orthogonal(16, rng);
    const double alpha = 10.0 * (1.0 - rng.uniform());  // (0, 10]
    Matrix g = matmul(f, q);
    g *= alpha;
    worst = std::max(worst, std::abs(linear_cka(FeatureMatrix(f), FeatureMatrix(g)) - 1.0));
  }
  const double secs = elapsed_since(t0);
  return {worst < 1e-6 && secs < 5.0, fmt("max |CKA-1| = %.2e over 100 triples in %.3fs", worst, secs)};
}

Verdict hand_value() {
  const double v = linear_cka(FeatureMatrix(Matrix{{0.0}, {1.0}, {2.0}}), FeatureMatrix(Matrix{{1.0}, {0.0}, {2.0}}));
  return {std::abs(v - 0.25) < 1e-10, fmt("CKA = %.12f", v)};
}

Verdict gradient_suite() {
  SeededRng rng(1002);
  const int instances = 25;
  double worst_cka = 0.0, worst_cls = 0.0, worst_sigma = 0.0, worst_a = 0.0;
  for (int i = 0; i < instances; ++i) {
    // CKA loss with respect to the live features.
    {
      const std::size_t n = 5 + rng.uniform_index(8), d = 1 + rng.uniform_index(4);
      const Matrix f0 = t::random_matrix(n, 1 + rng.uniform_index(4), rng);
      const Matrix f1 = t::random_matrix(n, d, rng);
      const auto lg = cka_loss_and_grad(FeatureMatrix(f0), FeatureMatrix(f1));
      const auto num = t::numeric_gradient(
          [&](const std::vector<double>& x) { return 1.0 - t::naive_cka(f0, t::from_vector(n, d, x)); },
          t::to_vector(f1));
      worst_cka = std::max(worst_cka, t::relative_error(lg.grad.values(), num));
    }
    // Classification losses with respect to the logits.
    {
      const std::size_t n = 2 + rng.uniform_index(5), k = 2 + rng.uniform_index(3);
      const Matrix z = t::random_matrix(n, k, rng, 2.0);
      std::vector<std::size_t> labels(n);
      for (auto& l : labels) l = rng.uniform_index(k);
      Matrix multi(n, k);
      for (auto& v : multi.values()) v = rng.uniform() < 0.5 ? 1.0 : 0.0;
      for (const auto& y : {Targets::classes(labels, k), Targets::multi_hot(multi)}) {
        for (ClsLoss kind : {ClsLoss::ce, ClsLoss::mse}) {
          const auto lg = cls_loss_and_grad(z, y, kind);
          const auto num = t::numeric_gradient(
              [&](const std::vector<double>& x) { return cls_loss_and_grad(t::from_vector(n, k, x), y, kind).loss; },
              t::to_vector(z));
          worst_cls = std::max(worst_cls, t::relative_error(lg.grad.values(), num));
        }
      }
    }
    // Covariance loss with respect to Σ₁ and to the generator A.
    {
      const std::size_t d = 2 + rng.uniform_index(3);
      const auto s0 = CovarianceStats::from_sigma(random_spd(d, rng));
      const auto s1 = CovarianceStats::from_sigma(random_spd(d, rng));
      const auto p = random_param(d, rng);
      const auto g = cov_loss_and_grads(s1, s0, p);
      const Matrix eye = Matrix::identity(d);
      const auto loss_at = [&](const Matrix& sigma1, const OrthogonalParam& param) {
        const Matrix a = param.generator();
        const Matrix q = t::naive_matmul(eye + a, inverse(eye - a));
        const Matrix diff = sigma1 - t::naive_matmul(t::naive_transpose(q), t::naive_matmul(s0.sigma(), q));
        return frobenius_dot(diff, diff);
      };
      const auto num_sigma = t::numeric_gradient(
          [&](const std::vector<double>& x) { return loss_at(t::from_vector(d, d, x), p); }, t::to_vector(s1.sigma()));
      worst_sigma = std::max(worst_sigma, t::relative_error(g.grad_sigma1.values(), num_sigma));
      const auto num_a = t::numeric_gradient(
          [&](const std::vector<double>& x) {
            OrthogonalParam px(d);
            std::copy(x.begin(), x.end(), px.upper().begin());
            return loss_at(s1.sigma(), px);
          },
          std::vector<double>(p.upper().begin(), p.upper().end()));
      worst_a = std::max(worst_a, t::relative_error(g.grad_a, num_a));
    }
  }
  const double worst = std::max({worst_cka, worst_cls, worst_sigma, worst_a});
  char buf[200];
  std::snprintf(buf, sizeof buf, "%d instances each; max rel err cka %.1e cls %.1e dSigma1 %.1e dA %.1e",
                instances, worst_cka, worst_cls, worst_sigma, worst_a);
  return {worst < 1e-4, buf};
}

Verdict oracle_equivalence() {
  SeededRng rng(1003);
  double worst = 0.0;
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t d = 1 + rng.uniform_index(4);
    const auto s0 = CovarianceStats::from_sigma(random_spd(d, rng));
    const auto s1 = CovarianceStats::from_sigma(random_spd(d, rng));
    const double learned = fit_alignment(s0.sigma(), s1.sigma()).loss;
    worst = std::max(worst, std::abs(learned - procrustes_oracle(s0, s1).min_loss));
  }
  const auto s0 = CovarianceStats::from_sigma(Matrix::diag({3.0, 1.0}));
  const auto s1 = CovarianceStats::from_sigma(Matrix::diag({2.0, 2.0}));
  const double diag_min = procrustes_oracle(s0, s1).min_loss;
  double grid_best = 1e300;
  const int steps = static_cast<int>(2.0 * std::numbers::pi / 1e-3) + 1;
  for (int k = 0; k < steps; ++k) {
    const Matrix q = t::rotation2(k * 1e-3);
    grid_best = std::min(grid_best, frobenius_dist_sq(s1.sigma(), matmul_tn(q, matmul(s0.sigma(), q))));
  }
  const bool pass = worst < 1e-3 && std::abs(diag_min - 2.0) < 1e-6 && grid_best >= diag_min - 1e-12;
  char buf[200];
  std::snprintf(buf, sizeof buf, "max |learned-oracle| = %.2e over 50 pairs; diag pair %.9f; grid min %.9f",
                worst, diag_min, grid_best);
  return {pass, buf};
}

// Shared by the method comparison, sharpness and learnable-Q criteria.
struct MainRuns {
  ExperimentConfig cfg;
  std::vector<Method> methods{Method::scratch, Method::linear, Method::full, Method::hcs, Method::repsim};
  std::vector<MethodRun> runs;
  std::vector<MethodSummary> summary;
  double seconds = 0.0;

  const MethodSummary& of(Method m) const {
    for (const auto& s : summary)
      if (s.method == m) return s;
    fail(ErrorKind::config, "method not in summary");
  }
};

MainRuns& main_runs() {
  static MainRuns r = [] {
    MainRuns m;
    const auto t0 = std::chrono::steady_clock::now();
    m.runs = compare_methods(m.cfg, m.methods, 1);
    m.seconds = elapsed_since(t0);
    m.summary = summarize(m.runs, m.methods);
    for (const auto& s : m.summary) {
      std::printf("      %-8s score %.2f  cka %.4f  sharpness %.5f\n", std::string(to_string(s.method)).c_str(),
                  s.score, s.cka, s.sharpness);
    }
    return m;
  }();
  return r;
}

Verdict method_comparison() {
  const auto& m = main_runs();
  const auto& rep = m.of(Method::repsim);
  const auto& full = m.of(Method::full);
  bool scratch_lowest = true;
  for (const auto& s : m.summary)
    if (s.method != Method::scratch && s.cka <= m.of(Method::scratch).cka) scratch_lowest = false;
  bool linear_identical = true;
  for (const auto& r : m.runs)
    if (r.method == Method::linear && !r.backbone_unchanged) linear_identical = false;
  const bool cka_ok = rep.cka >= full.cka + 0.05;
  const bool acc_ok = rep.score >= full.score - 2.0;
  const bool time_ok = m.seconds < 600.0;
  char buf[300];
  std::snprintf(buf, sizeof buf,
                "CKA repsim %.4f vs full %.4f (gap %.4f); acc repsim %.2f vs full %.2f; scratch lowest %s; "
                "linear backbone identical %s; %.0fs on one core",
                rep.cka, full.cka, rep.cka - full.cka, rep.score, full.score, scratch_lowest ? "yes" : "no",
                linear_identical ? "yes" : "no", m.seconds);
  return {cka_ok && acc_ok && scratch_lowest && linear_identical && time_ok, buf};
}

Verdict sharpness_ordering() {
  const auto& m = main_runs();
  const double rep = m.of(Method::repsim).sharpness;
  const double full = m.of(Method::full).sharpness;
  const auto toy = sharpness(
      Vector{1.0}, [](const Vector& p) { return std::pair<double, Vector>{p[0] * p[0], Vector{2.0 * p[0]}}; },
      SharpnessConfig{0.01, 1});
  const bool toy_ok = std::abs(toy.sharpness - 0.0201) < 1e-9;
  char buf[200];
  std::snprintf(buf, sizeof buf, "rho %.2g: sharpness repsim %.5f vs full %.5f; quadratic toy %.12f",
                m.cfg.sharpness.rho, rep, full, toy.sharpness);
  return {rep <= full && toy_ok, buf};
}

Verdict parameter_centrality() {
  const ExperimentConfig cfg;
  const auto study = centrality_study(cfg, {Method::full, Method::repsim}, 5, 0, 1);
  const double full = mean(study.distances[0]);
  const double rep = mean(study.distances[1]);
  const double full_bb = mean(study.backbone_distances[0]);
  const double rep_bb = mean(study.backbone_distances[1]);
  char buf[200];
  std::snprintf(buf, sizeof buf,
                "mean distance to center: repsim %.4f vs full %.4f (backbone only: repsim %.4f vs full %.4f)",
                rep, full, rep_bb, full_bb);
  return {rep < full, buf};
}

Verdict learnable_q() {
  const auto& m = main_runs();
  std::vector<double> learned, fixed;
  for (const auto& r : m.runs) {
    if (r.method != Method::repsim) continue;
    learned.push_back(r.result.metrics.last().reg_loss);
    const auto task = prepare_task(m.cfg, r.seed);
    auto fc = m.cfg.finetune_config(Method::repsim, r.seed);
    fc.loss.learnable_q = false;
    fixed.push_back(finetune(task.theta0, task.data.finetune_train, task.data.finetune_eval, fc)
                        .metrics.last()
                        .reg_loss);
  }
  return {mean(learned) <= mean(fixed),
          fmt("final L_Cov learnable Q %.6f vs fixed Q=I %.6f", mean(learned), mean(fixed))};
}

Verdict mean_term() {
  const auto& m = main_runs();
  bool completed = false;
  for (const auto& r : m.runs)
    if (r.method == Method::repsim && !m.cfg.loss.mu_align && r.result.metrics.epochs.size() ==
                                                                 static_cast<std::size_t>(m.cfg.optim.epochs))
      completed = true;

  // Toggling the flag on the same batch must add exactly the mean term.
  SeededRng rng(1006);
  const MlpDims dims{4, 5, 3, 3};
  double worst = 0.0;
  for (int trial = 0; trial < 10; ++trial) {
    const auto model = MlpModel::random(dims, rng);
    const auto theta0 = MlpModel::random(dims, rng);
    const Matrix x = random_gaussian(12, 4, rng);
    std::vector<std::size_t> labels(12);
    for (auto& l : labels) l = rng.uniform_index(3);
    const Dataset batch{x, Targets::classes(labels, 3)};
    const auto s0 = cov_stats(FeatureMatrix(backbone_features(theta0, x)));
    const auto q = random_param(3, rng);
    LossConfig off;
    off.method = Method::repsim;
    LossConfig on = off;
    on.mu_align = true;
    const auto a = batch_objective(model, batch, off, {nullptr, &s0, &q});
    const auto b = batch_objective(model, batch, on, {nullptr, &s0, &q});
    const FeatureMatrix f1(backbone_features(model, x));
    const auto term = mean_align_loss_and_grads(cov_stats(f1).mu(), s0.mu(), q);
    worst = std::max({worst, std::abs(b.cls - a.cls), std::abs((b.total - a.total) - term.loss)});
    for (std::size_t i = 0; i < a.grad_a.size(); ++i)
      worst = std::max(worst, std::abs((b.grad_a[i] - a.grad_a[i]) - term.grad_a[i]));
    const auto cache = forward(model, x);
    const Matrix only = cov_stats_backward(f1, Matrix(3, 3), &term.grad_mu1);
    const auto expected = backward(model, cache, Matrix(12, 3), &only).flatten();
    const auto ga = a.grads.flatten(), gb = b.grads.flatten();
    for (std::size_t i = 0; i < ga.size(); ++i) worst = std::max(worst, std::abs((gb[i] - ga[i]) - expected[i]));
  }
  return {completed && worst < 1e-10,
          std::string("mu-off default run completed: ") + (completed ? "yes" : "no") +
              fmt("; max deviation from the mean term alone %.1e", worst)};
}

Verdict cov_batch_size() {
  const ExperimentConfig cfg;
  const auto rows = covariance_study(cfg, 0, {4, 32, 128}, 50);
  const bool dec = rows[0].mean_error > rows[1].mean_error && rows[1].mean_error > rows[2].mean_error;
  char buf[200];
  std::snprintf(buf, sizeof buf, "mean error b=4 %.5f, b=32 %.5f, b=128 %.5f", rows[0].mean_error,
                rows[1].mean_error, rows[2].mean_error);
  return {dec, buf};
}

Verdict interpolation() {
  const ExperimentConfig cfg;
  const auto study = interpolation_study(cfg, 0, 21);
  const auto& a = study.path.front();
  const auto& b = study.path.back();
  char buf[200];
  std::snprintf(buf, sizeof buf, "endpoints (loss, cka): repsim (%.4f, %.4f), full (%.4f, %.4f); intermediate %s",
                a.loss, a.cka, b.loss, b.cka, study.has_intermediate ? "found" : "none");
  return {study.has_intermediate, buf};
}

Verdict cli_determinism() {
  namespace fs = std::filesystem;
  const fs::path dir = fs::temp_directory_path() / ("repsim_accept_" + std::to_string(::getpid()));
  fs::create_directories(dir);
  const std::string cfg = (dir / "cfg.json").string();
  write_file(cfg, R"({"epochs": 40, "seeds": [0, 1]})");
  const std::vector<std::string> commands = {
      "finetune --config " + cfg + " --method repsim",
      "finetune --config " + cfg + " --method hcs --lambda 0.5 --jobs 2",
      "sweep --config " + cfg + " --lambdas 0,0.5,1 --jobs 3",
      "sharpness --config " + cfg + " --methods linear,full,repsim --jobs 2",
      "interpolate --config " + cfg + " --steps 7",
      "covstudy --config " + cfg + " --batch-sizes 4,32,128 --trials 10",
  };
  std::string mismatch;
  for (std::size_t c = 0; c < commands.size(); ++c) {
    std::string outputs[2];
    for (int rep = 0; rep < 2; ++rep) {
      const std::string file = (dir / ("out" + std::to_string(rep) + ".csv")).string();
      const std::string cmd = std::string(REPSIM_CLI_PATH) + " " + commands[c] + " >" + file + " 2>/dev/null";
      const int status = std::system(cmd.c_str());
      if (!WIFEXITED(status) || WEXITSTATUS(status) != 0) {
        fs::remove_all(dir);
        return {false, "command failed: " + commands[c]};
      }
      outputs[rep] = read_file(file);
    }
    if (outputs[0] != outputs[1] || outputs[0].empty()) mismatch += " [" + commands[c] + "]";
  }
  fs::remove_all(dir);
  if (!mismatch.empty()) return {false, "outputs differ:" + mismatch};
  return {true, std::to_string(commands.size()) + " subcommands run twice each, CSV byte-identical"};
}

Verdict npy_round_trip() {
  SeededRng rng(1007);
  int identical = 0;
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t r = 1 + rng.uniform_index(64), c = 1 + rng.uniform_index(64);
    Matrix m = random_gaussian(r, c, rng, 100.0);
    const bool f64 = decode_npy(encode_npy(m, NpyDtype::f64)).values == m;
    for (auto& v : m.values()) v = static_cast<double>(static_cast<float>(v));
    const bool f32 = decode_npy(encode_npy(m, NpyDtype::f32)).values == m;
    if (f64 && f32) ++identical;
  }
  return {identical == 50, std::to_string(identical) + "/50 shapes bit-identical in f32 and f64"};
}

}  // namespace

int main() {
  report("cka-invariance", cka_invariance);
  report("cka-hand-value", hand_value);
  report("gradient-suite", gradient_suite);
  report("oracle-equivalence", oracle_equivalence);
  report("method-comparison", method_comparison);
  report("sharpness-ordering", sharpness_ordering);
  report("parameter-centrality", parameter_centrality);
  report("learnable-q-ablation", learnable_q);
  report("mean-term-ablation", mean_term);
  report("cov-batch-size-ablation", cov_batch_size);
  report("interpolation-intermediate", interpolation);
  report("cli-determinism", cli_determinism);
  report("npy-round-trip", npy_round_trip);
  std::printf("%d criteria failed\n", failures);
  return failures == 0 ? 0 : 1;
}
