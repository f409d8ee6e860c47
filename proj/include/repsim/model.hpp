#pragma once

// Small tanh MLP: d_in → d_hidden → d_feat (backbone) → k (linear head).
// The tanh output of the second layer is the feature tap every similarity
// measure consumes; logits are never compared.

#include <array>
#include <cmath>
#include <span>
#include <string>

#include "repsim/error.hpp"
#include "repsim/rng.hpp"
#include "repsim/tensor.hpp"

namespace repsim {

struct MlpDims {
  std::size_t d_in = 16;
  std::size_t d_hidden = 32;
  std::size_t d_feat = 16;
  std::size_t k = 4;

  friend bool operator==(const MlpDims&, const MlpDims&) = default;
};

struct DenseLayer {
  Matrix w;  // in × out, so a batch maps as X·W + b
  Vector b;

  std::size_t param_count() const noexcept { return w.size() + b.size(); }
};

class MlpModel {
 public:
  static constexpr std::size_t backbone_layers = 2;

  MlpModel() = default;

  // All-zero parameters; the shape of a model and of its gradient.
  explicit MlpModel(const MlpDims& dims) : dims_(dims) {
    const std::array<std::size_t, 4> widths{dims.d_in, dims.d_hidden, dims.d_feat, dims.k};
    for (std::size_t l = 0; l < layers_.size(); ++l) {
      layers_[l].w = Matrix(widths[l], widths[l + 1]);
      layers_[l].b = Vector(widths[l + 1], 0.0);
    }
  }

  static MlpModel random(const MlpDims& dims, SeededRng& rng) {
    MlpModel m(dims);
    for (std::size_t l = 0; l < m.layers_.size(); ++l) m.init_layer(l, rng);
    return m;
  }

  // Gaussian init with variance 1/fan_in, zero bias.
  void init_layer(std::size_t l, SeededRng& rng) {
    auto& layer = layers_.at(l);
    const double scale = 1.0 / std::sqrt(static_cast<double>(layer.w.rows()));
    for (auto& v : layer.w.values()) v = scale * rng.normal();
    std::fill(layer.b.begin(), layer.b.end(), 0.0);
  }

  // Same backbone, fresh head for a k-way task.
  MlpModel with_new_head(std::size_t k, SeededRng& rng) const {
    MlpDims dims = dims_;
    dims.k = k;
    MlpModel m(dims);
    for (std::size_t l = 0; l < backbone_layers; ++l) m.layers_[l] = layers_[l];
    m.init_layer(2, rng);
    return m;
  }

  const MlpDims& dims() const noexcept { return dims_; }
  std::array<DenseLayer, 3>& layers() noexcept { return layers_; }
  const std::array<DenseLayer, 3>& layers() const noexcept { return layers_; }

  std::size_t param_count() const noexcept {
    std::size_t n = 0;
    for (const auto& l : layers_) n += l.param_count();
    return n;
  }
  std::size_t backbone_param_count() const noexcept {
    return layers_[0].param_count() + layers_[1].param_count();
  }

  // Layer by layer, weights then bias. The backbone occupies the prefix.
  Vector flatten() const {
    Vector out;
    out.reserve(param_count());
    for (const auto& l : layers_) {
      out.insert(out.end(), l.w.values().begin(), l.w.values().end());
      out.insert(out.end(), l.b.begin(), l.b.end());
    }
    return out;
  }

  void assign_flat(std::span<const double> flat) {
    if (flat.size() != param_count()) {
      fail(ErrorKind::dimension, "parameter vector length " + std::to_string(flat.size()) +
                                     " != " + std::to_string(param_count()));
    }
    std::size_t k = 0;
    for (auto& l : layers_) {
      for (auto& v : l.w.values()) v = flat[k++];
      for (auto& v : l.b) v = flat[k++];
    }
  }

  static MlpModel from_flat(const MlpDims& dims, std::span<const double> flat) {
    MlpModel m(dims);
    m.assign_flat(flat);
    return m;
  }

  bool all_finite() const noexcept {
    for (const auto& l : layers_) {
      if (!l.w.all_finite()) return false;
      for (double v : l.b)
        if (!std::isfinite(v)) return false;
    }
    return true;
  }

  friend bool operator==(const MlpModel& a, const MlpModel& b) {
    if (!(a.dims_ == b.dims_)) return false;
    for (std::size_t l = 0; l < a.layers_.size(); ++l) {
      if (!(a.layers_[l].w == b.layers_[l].w) || a.layers_[l].b != b.layers_[l].b) return false;
    }
    return true;
  }

  bool backbone_equal(const MlpModel& o) const {
    for (std::size_t l = 0; l < backbone_layers; ++l) {
      if (!(layers_[l].w == o.layers_[l].w) || layers_[l].b != o.layers_[l].b) return false;
    }
    return true;
  }

 private:
  MlpDims dims_;
  std::array<DenseLayer, 3> layers_;
};

using MlpGrads = MlpModel;

struct ForwardCache {
  Matrix input;
  Matrix hidden;    // tanh(X·W₀ + b₀)
  Matrix features;  // tanh(H·W₁ + b₁), the backbone output
  Matrix logits;
};

namespace detail {

inline Matrix affine(const Matrix& x, const DenseLayer& layer) {
  Matrix y = matmul(x, layer.w);
  for (std::size_t i = 0; i < y.rows(); ++i) {
    auto r = y.row(i);
    for (std::size_t j = 0; j < y.cols(); ++j) r[j] += layer.b[j];
  }
  return y;
}

inline void tanh_inplace(Matrix& m) {
  for (auto& v : m.values()) v = std::tanh(v);
}

// Accumulates ∂/∂W = Xᵀ·δ and ∂/∂b = Σ_rows δ into `grad`.
inline void accumulate_layer_grad(const Matrix& x, const Matrix& delta, DenseLayer& grad) {
  grad.w += matmul_tn(x, delta);
  for (std::size_t i = 0; i < delta.rows(); ++i) {
    auto r = delta.row(i);
    for (std::size_t j = 0; j < delta.cols(); ++j) grad.b[j] += r[j];
  }
}

// δ ← δ ⊙ (1 − a²) for a = tanh(·)
inline void tanh_backward(Matrix& delta, const Matrix& activation) {
  auto dv = delta.values();
  auto av = activation.values();
  for (std::size_t k = 0; k < dv.size(); ++k) dv[k] *= 1.0 - av[k] * av[k];
}

}  // namespace detail

inline Matrix backbone_features(const MlpModel& m, const Matrix& x) {
  if (x.cols() != m.dims().d_in) {
    fail(ErrorKind::dimension, "input width " + std::to_string(x.cols()) + " != d_in " +
                                   std::to_string(m.dims().d_in));
  }
  Matrix h = detail::affine(x, m.layers()[0]);
  detail::tanh_inplace(h);
  Matrix f = detail::affine(h, m.layers()[1]);
  detail::tanh_inplace(f);
  return f;
}

inline ForwardCache forward(const MlpModel& m, const Matrix& x) {
  if (x.cols() != m.dims().d_in) {
    fail(ErrorKind::dimension, "input width " + std::to_string(x.cols()) + " != d_in " +
                                   std::to_string(m.dims().d_in));
  }
  ForwardCache c;
  c.input = x;
  c.hidden = detail::affine(x, m.layers()[0]);
  detail::tanh_inplace(c.hidden);
  c.features = detail::affine(c.hidden, m.layers()[1]);
  detail::tanh_inplace(c.features);
  c.logits = detail::affine(c.features, m.layers()[2]);
  return c;
}

// Backpropagates ∂L/∂logits plus an optional direct ∂L/∂features term (from a
// representation regularizer). With head_only, backbone gradients stay zero.
inline MlpGrads backward(const MlpModel& m, const ForwardCache& cache, const Matrix& grad_logits,
                         const Matrix* grad_features = nullptr, bool head_only = false) {
  MlpGrads g(m.dims());
  detail::accumulate_layer_grad(cache.features, grad_logits, g.layers()[2]);
  if (head_only) return g;

  Matrix delta = matmul_nt(grad_logits, m.layers()[2].w);
  if (grad_features != nullptr) delta += *grad_features;
  detail::tanh_backward(delta, cache.features);
  detail::accumulate_layer_grad(cache.hidden, delta, g.layers()[1]);

  Matrix delta0 = matmul_nt(delta, m.layers()[1].w);
  detail::tanh_backward(delta0, cache.hidden);
  detail::accumulate_layer_grad(cache.input, delta0, g.layers()[0]);
  return g;
}

// m ← m − lr·g, optionally leaving the backbone untouched.
inline void sgd_step(MlpModel& m, const MlpGrads& g, double lr, bool head_only = false) {
  for (std::size_t l = head_only ? MlpModel::backbone_layers : 0; l < 3; ++l) {
    auto& layer = m.layers()[l];
    const auto& gl = g.layers()[l];
    auto w = layer.w.values();
    auto gw = gl.w.values();
    for (std::size_t k = 0; k < w.size(); ++k) w[k] -= lr * gw[k];
    for (std::size_t k = 0; k < layer.b.size(); ++k) layer.b[k] -= lr * gl.b[k];
  }
}

}  // namespace repsim
