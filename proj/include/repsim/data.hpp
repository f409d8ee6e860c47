#pragma once

// Synthetic two-task data. Both tasks share one latent Gaussian-cluster
// structure pushed into input space through a fixed random mixing map; the
// finetune task sees new clusters built from a rotated and shifted copy of
// that structure, so pretrained features are useful but not sufficient.

#include <string>
#include <vector>

#include "repsim/error.hpp"
#include "repsim/linalg.hpp"
#include "repsim/losses.hpp"
#include "repsim/rng.hpp"
#include "repsim/tensor.hpp"

namespace repsim {

struct Dataset {
  Matrix x;
  Targets y;

  std::size_t size() const noexcept { return x.rows(); }

  Dataset subset(std::span<const std::size_t> rows) const {
    return {gather_rows(x, rows), y.subset(rows)};
  }
};

struct TaskSpec {
  std::size_t d_in = 16;
  std::size_t latent_dim = 8;
  std::size_t k0 = 4;
  std::size_t k1 = 4;
  std::size_t n0 = 2048;
  std::size_t n1 = 128;
  std::size_t n_eval = 1024;
  double cluster_radius = 2.0;   // stddev of latent cluster centers
  double cluster_noise = 1.0;    // within-cluster latent stddev
  double input_noise = 0.1;      // isotropic input-space noise
  double finetune_rotation = 0.6;  // size of the latent rotation for the finetune task
  double finetune_shift = 0.5;
  double center_overlap = 1.0;     // weight of the pretrain centers inside finetune centers
  double label_noise = 0.2;        // fraction of finetune training labels resampled uniformly
  bool multilabel = false;       // finetune task as two binary attributes (k1 = 2)
  std::size_t subtask = 0;       // selects one of several sibling finetune tasks

  void validate() const {
    if (d_in == 0 || latent_dim == 0) fail(ErrorKind::config, "task dims must be positive");
    if (k0 < 2) fail(ErrorKind::config, "k0 must be at least 2");
    if (!multilabel && k1 < 2) fail(ErrorKind::config, "k1 must be at least 2");
    if (n0 < 2 || n1 < 2 || n_eval < 2) fail(ErrorKind::config, "dataset sizes must be >= 2");
    if (label_noise < 0.0 || label_noise > 1.0) fail(ErrorKind::config, "label_noise must lie in [0,1]");
    if (center_overlap < 0.0 || center_overlap > 1.0) {
      fail(ErrorKind::config, "center_overlap must lie in [0,1]");
    }
    if (cluster_radius < 0 || cluster_noise < 0 || input_noise < 0 || finetune_rotation < 0 ||
        finetune_shift < 0) {
      fail(ErrorKind::config, "task scales must be non-negative");
    }
  }

  std::size_t finetune_outputs() const noexcept { return multilabel ? 2 : k1; }
};

struct SyntheticTaskPair {
  Dataset pretrain;
  Dataset finetune_train;
  Dataset finetune_eval;
  std::uint64_t seed = 0;
};

namespace detail {

inline Matrix sample_centers(std::size_t k, std::size_t dim, double radius, SeededRng& rng) {
  return random_gaussian(k, dim, rng, radius);
}

// Rows: mixing·(center[label] + noise) + input noise. Labels cycle so classes
// stay balanced, then the sample order is shuffled.
inline Matrix sample_inputs(const Matrix& mixing, const Matrix& centers,
                            const std::vector<std::size_t>& labels, const TaskSpec& spec,
                            SeededRng& rng) {
  const std::size_t latent = centers.cols();
  Matrix x(labels.size(), mixing.rows());
  Vector z(latent);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    for (std::size_t j = 0; j < latent; ++j)
      z[j] = centers(labels[i], j) + spec.cluster_noise * rng.normal();
    const Vector xi = matvec(mixing, z);
    for (std::size_t j = 0; j < xi.size(); ++j) x(i, j) = xi[j] + spec.input_noise * rng.normal();
  }
  return x;
}

inline std::vector<std::size_t> balanced_labels(std::size_t n, std::size_t k, SeededRng& rng) {
  std::vector<std::size_t> labels(n);
  for (std::size_t i = 0; i < n; ++i) labels[i] = i % k;
  rng.shuffle(std::span<std::size_t>(labels));
  return labels;
}

inline Dataset make_finetune_split(const Matrix& mixing, const Matrix& centers,
                                   const TaskSpec& spec, std::size_t n, SeededRng& rng,
                                   double label_noise) {
  const std::size_t clusters = centers.rows();
  auto cluster_ids = balanced_labels(n, clusters, rng);
  Matrix x = sample_inputs(mixing, centers, cluster_ids, spec, rng);
  // Inputs are drawn from the true cluster; only the recorded label is corrupted.
  for (auto& id : cluster_ids) {
    if (rng.uniform() < label_noise) id = static_cast<std::size_t>(rng.uniform_index(clusters));
  }
  if (!spec.multilabel) return {std::move(x), Targets::classes(std::move(cluster_ids), clusters)};
  Matrix y(n, 2);
  for (std::size_t i = 0; i < n; ++i) {
    y(i, 0) = static_cast<double>(cluster_ids[i] / 2);
    y(i, 1) = static_cast<double>(cluster_ids[i] % 2);
  }
  return {std::move(x), Targets::multi_hot(std::move(y))};
}

}  // namespace detail

// Bit-exact function of (spec, seed).
inline SyntheticTaskPair make_task_pair(const TaskSpec& spec, std::uint64_t seed) {
  spec.validate();
  const SeededRng root(seed);
  SeededRng structure = root.split(1);
  const Matrix mixing =
      random_gaussian(spec.d_in, spec.latent_dim, structure,
                      1.0 / std::sqrt(static_cast<double>(spec.latent_dim)));
  const Matrix pre_centers =
      detail::sample_centers(spec.k0, spec.latent_dim, spec.cluster_radius, structure);

  SyntheticTaskPair out;
  out.seed = seed;
  {
    SeededRng rng = root.split(2);
    auto labels = detail::balanced_labels(spec.n0, spec.k0, rng);
    Matrix x = detail::sample_inputs(mixing, pre_centers, labels, spec, rng);
    out.pretrain = {std::move(x), Targets::classes(std::move(labels), spec.k0)};
  }

  // Finetune clusters: fresh centers in the rotated and shifted latent frame.
  SeededRng task_rng = root.split(1000 + spec.subtask);
  const std::size_t clusters = spec.multilabel ? 4 : spec.k1;
  Matrix perturb = random_gaussian(spec.latent_dim, spec.latent_dim, task_rng,
                                   spec.finetune_rotation);
  const Matrix rotation =
      qr_orthogonalize(Matrix::identity(spec.latent_dim) + perturb, &task_rng);
  Matrix fresh = detail::sample_centers(clusters, spec.latent_dim, spec.cluster_radius, task_rng);
  // Finetune cluster c inherits pretrain cluster (c mod k0) with weight
  // `center_overlap`; the fresh part keeps the total spread unchanged.
  const double fresh_weight = std::sqrt(std::max(0.0, 1.0 - spec.center_overlap * spec.center_overlap));
  for (std::size_t c = 0; c < clusters; ++c)
    for (std::size_t j = 0; j < spec.latent_dim; ++j)
      fresh(c, j) = spec.center_overlap * pre_centers(c % spec.k0, j) + fresh_weight * fresh(c, j);
  Vector shift(spec.latent_dim);
  for (auto& s : shift) s = spec.finetune_shift * task_rng.normal();
  Matrix ft_centers = matmul_nt(fresh, rotation);
  for (std::size_t i = 0; i < ft_centers.rows(); ++i)
    for (std::size_t j = 0; j < ft_centers.cols(); ++j) ft_centers(i, j) += shift[j];

  SeededRng train_rng = task_rng.split(1);
  SeededRng eval_rng = task_rng.split(2);
  out.finetune_train = detail::make_finetune_split(mixing, ft_centers, spec, spec.n1, train_rng,
                                                   spec.label_noise);
  out.finetune_eval = detail::make_finetune_split(mixing, ft_centers, spec, spec.n_eval, eval_rng, 0.0);
  return out;
}

}  // namespace repsim
