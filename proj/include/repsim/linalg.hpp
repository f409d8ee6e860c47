#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <optional>
#include <vector>

#include "repsim/error.hpp"
#include "repsim/rng.hpp"
#include "repsim/tensor.hpp"

namespace repsim {

struct SymEig {
  Vector values;   // descending
  Matrix vectors;  // column k pairs with values[k]
};

inline constexpr double symmetry_tolerance = 1e-10;

inline void require_symmetric(const Matrix& m, const char* what) {
  if (!m.is_square()) {
    fail(ErrorKind::dimension, std::string(what) + ": expected square matrix, got " +
                                   m.shape_string());
  }
  if (asymmetry(m) > symmetry_tolerance) {
    fail(ErrorKind::symmetry, std::string(what) + ": matrix is not symmetric");
  }
}

// Cyclic Jacobi eigensolver for symmetric matrices. Sweeps until the
// off-diagonal Frobenius norm drops below 1e-12·‖m‖_F (max 100 sweeps).
inline SymEig sym_eig(const Matrix& m) {
  require_symmetric(m, "sym_eig");
  const std::size_t n = m.rows();
  Matrix a = symmetrize(m);
  Matrix v = Matrix::identity(n);
  const double scale = frobenius_norm(a);

  auto off_diagonal = [&] {
    double s = 0.0;
    for (std::size_t p = 0; p < n; ++p)
      for (std::size_t q = p + 1; q < n; ++q) s += 2.0 * a(p, q) * a(p, q);
    return std::sqrt(s);
  };

  for (int sweep = 0; sweep < 100 && scale > 0.0; ++sweep) {
    if (off_diagonal() < 1e-12 * scale) break;
    for (std::size_t p = 0; p + 1 < n; ++p) {
      for (std::size_t q = p + 1; q < n; ++q) {
        const double apq = a(p, q);
        if (apq == 0.0) continue;
        const double theta = (a(q, q) - a(p, p)) / (2.0 * apq);
        const double t = (theta >= 0.0 ? 1.0 : -1.0) /
                         (std::abs(theta) + std::sqrt(theta * theta + 1.0));
        const double c = 1.0 / std::sqrt(t * t + 1.0);
        const double s = t * c;
        for (std::size_t k = 0; k < n; ++k) {
          const double akp = a(k, p);
          const double akq = a(k, q);
          a(k, p) = c * akp - s * akq;
          a(k, q) = s * akp + c * akq;
        }
        for (std::size_t k = 0; k < n; ++k) {
          const double apk = a(p, k);
          const double aqk = a(q, k);
          a(p, k) = c * apk - s * aqk;
          a(q, k) = s * apk + c * aqk;
        }
        for (std::size_t k = 0; k < n; ++k) {
          const double vkp = v(k, p);
          const double vkq = v(k, q);
          v(k, p) = c * vkp - s * vkq;
          v(k, q) = s * vkp + c * vkq;
        }
      }
    }
  }

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t i, std::size_t j) { return a(i, i) > a(j, j); });

  SymEig out{Vector(n), Matrix(n, n)};
  for (std::size_t k = 0; k < n; ++k) {
    out.values[k] = a(order[k], order[k]);
    for (std::size_t r = 0; r < n; ++r) out.vectors(r, k) = v(r, order[k]);
  }
  return out;
}

inline Matrix random_gaussian(std::size_t rows, std::size_t cols, SeededRng& rng,
                              double stddev = 1.0) {
  Matrix m(rows, cols);
  for (auto& x : m.values()) x = stddev * rng.normal();
  return m;
}

namespace detail {

// Householder QR returning Q with diag(R) > 0, or nullopt when rank deficient.
inline std::optional<Matrix> householder_q(const Matrix& m) {
  const std::size_t n = m.rows();
  Matrix r = m;
  Matrix q = Matrix::identity(n);
  const double scale = frobenius_norm(m);
  if (scale == 0.0) return std::nullopt;
  std::vector<double> diag_sign(n, 1.0);
  Vector h(n);

  for (std::size_t k = 0; k < n; ++k) {
    double col_norm = 0.0;
    for (std::size_t i = k; i < n; ++i) col_norm += r(i, k) * r(i, k);
    col_norm = std::sqrt(col_norm);
    if (col_norm < 1e-12 * scale) return std::nullopt;

    // Reflector sending r[k:, k] to ∓‖·‖ e_k.
    const double alpha = r(k, k) >= 0.0 ? -col_norm : col_norm;
    std::fill(h.begin(), h.end(), 0.0);
    for (std::size_t i = k; i < n; ++i) h[i] = r(i, k);
    h[k] -= alpha;
    const double hh = std::inner_product(h.begin() + k, h.end(), h.begin() + k, 0.0);
    if (hh > 0.0) {
      for (std::size_t j = k; j < n; ++j) {
        double s = 0.0;
        for (std::size_t i = k; i < n; ++i) s += h[i] * r(i, j);
        s *= 2.0 / hh;
        for (std::size_t i = k; i < n; ++i) r(i, j) -= s * h[i];
      }
      // Q ← Q·H
      for (std::size_t i = 0; i < n; ++i) {
        double s = 0.0;
        for (std::size_t j = k; j < n; ++j) s += q(i, j) * h[j];
        s *= 2.0 / hh;
        for (std::size_t j = k; j < n; ++j) q(i, j) -= s * h[j];
      }
    }
    diag_sign[k] = r(k, k) >= 0.0 ? 1.0 : -1.0;
  }
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) q(i, j) *= diag_sign[j];
  return q;
}

}  // namespace detail

// Orthogonal factor of m = QR with R's diagonal forced positive. A rank
// deficient input is an error unless an rng is supplied, in which case fresh
// Gaussian matrices are drawn until one is full rank.
inline Matrix qr_orthogonalize(const Matrix& m, SeededRng* rng = nullptr) {
  if (!m.is_square()) {
    fail(ErrorKind::dimension, "qr_orthogonalize: expected square, got " + m.shape_string());
  }
  if (auto q = detail::householder_q(m)) return *q;
  if (rng == nullptr) fail(ErrorKind::rank, "qr_orthogonalize: input is rank deficient");
  for (;;) {
    if (auto q = detail::householder_q(random_gaussian(m.rows(), m.cols(), *rng))) return *q;
  }
}

inline Matrix random_orthogonal(std::size_t n, SeededRng& rng) {
  return qr_orthogonalize(random_gaussian(n, n, rng), &rng);
}

// Solves a·x = b by LU with partial pivoting.
inline Matrix solve(const Matrix& a, const Matrix& b) {
  if (!a.is_square() || a.rows() != b.rows()) {
    fail(ErrorKind::dimension, "solve " + a.shape_string() + " \\ " + b.shape_string());
  }
  const std::size_t n = a.rows();
  Matrix lu = a;
  Matrix x = b;
  const double scale = std::max(frobenius_norm(a), 1e-300);
  for (std::size_t k = 0; k < n; ++k) {
    std::size_t pivot = k;
    for (std::size_t i = k + 1; i < n; ++i)
      if (std::abs(lu(i, k)) > std::abs(lu(pivot, k))) pivot = i;
    if (std::abs(lu(pivot, k)) < 1e-14 * scale) fail(ErrorKind::rank, "solve: singular matrix");
    if (pivot != k) {
      std::swap_ranges(lu.row(k).begin(), lu.row(k).end(), lu.row(pivot).begin());
      std::swap_ranges(x.row(k).begin(), x.row(k).end(), x.row(pivot).begin());
    }
    for (std::size_t i = k + 1; i < n; ++i) {
      const double f = lu(i, k) / lu(k, k);
      if (f == 0.0) continue;
      for (std::size_t j = k; j < n; ++j) lu(i, j) -= f * lu(k, j);
      for (std::size_t j = 0; j < x.cols(); ++j) x(i, j) -= f * x(k, j);
    }
  }
  for (std::size_t k = n; k-- > 0;) {
    for (std::size_t j = 0; j < x.cols(); ++j) {
      double s = x(k, j);
      for (std::size_t i = k + 1; i < n; ++i) s -= lu(k, i) * x(i, j);
      x(k, j) = s / lu(k, k);
    }
  }
  return x;
}

inline Matrix inverse(const Matrix& a) { return solve(a, Matrix::identity(a.rows())); }

inline double determinant(const Matrix& a) {
  if (!a.is_square()) fail(ErrorKind::dimension, "determinant of " + a.shape_string());
  const std::size_t n = a.rows();
  Matrix lu = a;
  double det = 1.0;
  for (std::size_t k = 0; k < n; ++k) {
    std::size_t pivot = k;
    for (std::size_t i = k + 1; i < n; ++i)
      if (std::abs(lu(i, k)) > std::abs(lu(pivot, k))) pivot = i;
    if (lu(pivot, k) == 0.0) return 0.0;
    if (pivot != k) {
      std::swap_ranges(lu.row(k).begin(), lu.row(k).end(), lu.row(pivot).begin());
      det = -det;
    }
    det *= lu(k, k);
    for (std::size_t i = k + 1; i < n; ++i) {
      const double f = lu(i, k) / lu(k, k);
      for (std::size_t j = k; j < n; ++j) lu(i, j) -= f * lu(k, j);
    }
  }
  return det;
}

// ‖mᵀm − I‖_F
inline double orthogonality_error(const Matrix& m) {
  return std::sqrt(frobenius_dist_sq(matmul_tn(m, m), Matrix::identity(m.cols())));
}

// Random symmetric positive definite matrix with eigenvalues in [lo, hi).
inline Matrix random_spd(std::size_t n, SeededRng& rng, double lo = 0.1, double hi = 3.0) {
  const Matrix u = random_orthogonal(n, rng);
  Vector lambda(n);
  for (auto& l : lambda) l = rng.uniform(lo, hi);
  return symmetrize(matmul(matmul(u, Matrix::diag(lambda)), transpose(u)));
}

}  // namespace repsim
