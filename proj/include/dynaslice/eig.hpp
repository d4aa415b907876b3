#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>
#include <vector>

#include "dynaslice/matrix.hpp"
#include "dynaslice/rng.hpp"

namespace dynaslice {

// Eigenvalues sorted descending; eigenvector columns in matching order.
struct EigenDecomposition {
  std::vector<double> eigenvalues;
  Matrix eigenvectors;
};

namespace detail {

inline double offdiag_norm_sq(const Matrix& a) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.rows; ++i)
    for (std::size_t j = i + 1; j < a.cols; ++j) s += 2.0 * a(i, j) * a(i, j);
  return s;
}

}  // namespace detail

// Symmetric eigendecomposition by cyclic Jacobi rotations. Sized for the
// residual widths this tool works at (d <= 512); accuracy is what matters,
// rotations keep the eigenvector basis orthonormal to machine precision.
inline EigenDecomposition sym_eig(const Matrix& a_in) {
  if (a_in.rows != a_in.cols)
    throw precondition_error("sym_eig: matrix must be square, got " +
                             a_in.shape_str());
  if (!is_symmetric(a_in, 1e-9))
    throw precondition_error("sym_eig: matrix not symmetric within 1e-9 (" +
                             a_in.shape_str() + ")");

  const std::size_t n = a_in.rows;
  Matrix a = a_in;
  // Symmetrize exactly so sweeps can update the upper triangle only.
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j) {
      const double m = 0.5 * (a(i, j) + a(j, i));
      a(i, j) = m;
      a(j, i) = m;
    }

  Matrix v = identity(n);
  const double norm = frobenius_norm(a);
  const double stop_sq = (norm == 0.0) ? 0.0 : (1e-14 * norm) * (1e-14 * norm);

  const int max_sweeps = 100;
  int sweep = 0;
  for (; sweep < max_sweeps; ++sweep) {
    if (detail::offdiag_norm_sq(a) <= stop_sq) break;
    for (std::size_t p = 0; p + 1 < n; ++p) {
      for (std::size_t q = p + 1; q < n; ++q) {
        const double apq = a(p, q);
        if (apq == 0.0) continue;
        const double app = a(p, p);
        const double aqq = a(q, q);
        // Skip rotations below representable resolution of the diagonal.
        if (std::abs(apq) < 1e-300 ||
            std::abs(apq) * 1e18 < std::abs(app) + std::abs(aqq))
          continue;

        const double theta = (aqq - app) / (2.0 * apq);
        double t;
        if (std::abs(theta) > 1e150) {
          t = 1.0 / (2.0 * theta);
        } else {
          t = 1.0 / (std::abs(theta) + std::sqrt(theta * theta + 1.0));
          if (theta < 0.0) t = -t;
        }
        const double c = 1.0 / std::sqrt(t * t + 1.0);
        const double s = t * c;
        const double tau = s / (1.0 + c);

        a(p, p) = app - t * apq;
        a(q, q) = aqq + t * apq;
        a(p, q) = 0.0;
        a(q, p) = 0.0;
        for (std::size_t r = 0; r < n; ++r) {
          if (r != p && r != q) {
            const double arp = a(r, p);
            const double arq = a(r, q);
            a(r, p) = arp - s * (arq + tau * arp);
            a(r, q) = arq + s * (arp - tau * arq);
            a(p, r) = a(r, p);
            a(q, r) = a(r, q);
          }
          const double vrp = v(r, p);
          const double vrq = v(r, q);
          v(r, p) = vrp - s * (vrq + tau * vrp);
          v(r, q) = vrq + s * (vrp - tau * vrq);
        }
      }
    }
  }
  if (sweep == max_sweeps && detail::offdiag_norm_sq(a) > stop_sq)
    throw numerical_error("sym_eig: Jacobi iteration did not converge for " +
                          a_in.shape_str() + " matrix");

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t i, std::size_t j) {
    return a(i, i) > a(j, j);
  });

  EigenDecomposition dec;
  dec.eigenvalues.resize(n);
  dec.eigenvectors = Matrix(n, n);
  for (std::size_t j = 0; j < n; ++j) {
    dec.eigenvalues[j] = a(order[j], order[j]);
    for (std::size_t i = 0; i < n; ++i) dec.eigenvectors(i, j) = v(i, order[j]);
  }
  return dec;
}

// acc + x^T x. Symmetric by construction; accumulators merge across corpus
// shards, order only perturbs the sums at rounding level.
inline Matrix gram_accumulate(Matrix acc, const Matrix& x) {
  if (acc.rows != acc.cols)
    throw precondition_error("gram_accumulate: accumulator must be square, got " +
                             acc.shape_str());
  if (x.cols != acc.rows)
    throw precondition_error("gram_accumulate: row width " +
                             std::to_string(x.cols) + " does not match accumulator " +
                             acc.shape_str());
  const std::size_t d = acc.rows;
  for (std::size_t r = 0; r < x.rows; ++r) {
    const double* row = x.row_ptr(r);
    for (std::size_t i = 0; i < d; ++i) {
      const double xi = row[i];
      if (xi == 0.0) continue;
      double* arow = acc.row_ptr(i);
      for (std::size_t j = i; j < d; ++j) arow[j] += xi * row[j];
    }
  }
  for (std::size_t i = 0; i < d; ++i)
    for (std::size_t j = 0; j < i; ++j) acc(i, j) = acc(j, i);
  return acc;
}

// Haar-ish random orthogonal matrix: Gaussian fill then Householder QR with
// the R diagonal forced positive. Used as the oracle rotation in optimality
// checks and for commutation properties.
inline Matrix random_orthogonal(std::size_t d, std::uint64_t seed) {
  if (d == 0) throw precondition_error("random_orthogonal: d must be >= 1");
  Rng rng(seed);
  Matrix a(d, d);
  for (double& v : a.data) v = rng.normal();

  Matrix q = identity(d);
  std::vector<double> hv(d);
  for (std::size_t k = 0; k < d; ++k) {
    double norm_sq = 0.0;
    for (std::size_t i = k; i < d; ++i) norm_sq += a(i, k) * a(i, k);
    const double norm = std::sqrt(norm_sq);
    if (norm == 0.0) continue;
    const double alpha = (a(k, k) >= 0.0) ? -norm : norm;
    double vnorm_sq = 0.0;
    for (std::size_t i = k; i < d; ++i) {
      hv[i] = a(i, k);
      if (i == k) hv[i] -= alpha;
      vnorm_sq += hv[i] * hv[i];
    }
    if (vnorm_sq == 0.0) continue;
    const double beta = 2.0 / vnorm_sq;
    // Apply H = I - beta v v^T to the remaining columns of a.
    for (std::size_t j = k; j < d; ++j) {
      double dot = 0.0;
      for (std::size_t i = k; i < d; ++i) dot += hv[i] * a(i, j);
      dot *= beta;
      for (std::size_t i = k; i < d; ++i) a(i, j) -= dot * hv[i];
    }
    // Accumulate into q (apply H from the right: q <- q H).
    for (std::size_t r = 0; r < d; ++r) {
      double dot = 0.0;
      for (std::size_t i = k; i < d; ++i) dot += q(r, i) * hv[i];
      dot *= beta;
      for (std::size_t i = k; i < d; ++i) q(r, i) -= dot * hv[i];
    }
  }

  // Fix column signs so R has a positive diagonal; keeps the draw unique.
  for (std::size_t j = 0; j < d; ++j) {
    if (a(j, j) < 0.0)
      for (std::size_t i = 0; i < d; ++i) q(i, j) = -q(i, j);
  }
  return q;
}

}  // namespace dynaslice
