#pragma once

// Dense symmetric eigendecomposition and spectral matrix functions.

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>
#include <variant>
#include <vector>

#include <Eigen/Dense>

#include "sgflow/errors.hpp"

namespace sgflow {

inline constexpr double kDefaultZeroThreshold = 1e-10;
inline constexpr double kSymmetryTolerance = 1e-10;
inline constexpr Eigen::Index kJacobiMaxDim = 50;

/// Eigen-decomposition of a symmetric matrix, eigenvalues in descending order.
///
/// Eigenvalues whose magnitude falls below `zero_threshold * max|eigenvalue|`
/// count as zero for `rank` and `smallest_nonzero`.
struct Spectrum {
  Eigen::VectorXd eigenvalues;
  Eigen::MatrixXd eigenvectors;  // column i pairs with eigenvalues[i]
  double smallest_nonzero = 0.0;
  double largest = 0.0;
  Eigen::Index rank = 0;
  double zero_threshold = kDefaultZeroThreshold;

  Eigen::Index dim() const { return eigenvalues.size(); }

  /// Absolute cutoff below which an eigenvalue is treated as zero.
  double cutoff() const {
    const double scale = eigenvalues.size() ? eigenvalues.cwiseAbs().maxCoeff() : 0.0;
    return zero_threshold * scale;
  }

  bool is_zero(Eigen::Index i) const { return std::abs(eigenvalues[i]) <= cutoff(); }

  /// Eigenvalues with the sub-threshold ones replaced by exact zeros.
  Eigen::VectorXd retained() const {
    Eigen::VectorXd s = eigenvalues;
    const double c = cutoff();
    for (Eigen::Index i = 0; i < s.size(); ++i)
      if (std::abs(s[i]) <= c) s[i] = 0.0;
    return s;
  }

  /// Eigenvectors of the nonzero eigenvalues (the leading `rank` columns when
  /// all retained eigenvalues are positive).
  Eigen::MatrixXd range_basis() const {
    Eigen::MatrixXd basis(dim(), rank);
    Eigen::Index col = 0;
    for (Eigen::Index i = 0; i < dim(); ++i)
      if (!is_zero(i)) basis.col(col++) = eigenvectors.col(i);
    return basis;
  }

  Eigen::VectorXd range_eigenvalues() const {
    Eigen::VectorXd s(rank);
    Eigen::Index j = 0;
    for (Eigen::Index i = 0; i < dim(); ++i)
      if (!is_zero(i)) s[j++] = eigenvalues[i];
    return s;
  }

  Eigen::MatrixXd reconstruct() const {
    return eigenvectors * eigenvalues.asDiagonal() * eigenvectors.transpose();
  }
};

namespace detail {

inline void check_symmetric(const Eigen::MatrixXd& a) {
  require(a.rows() == a.cols(), "sym_eig: matrix must be square");
  require(a.rows() >= 1, "sym_eig: matrix must be at least 1x1");
  require(a.allFinite(), "sym_eig: matrix has non-finite entries");
  const double scale = std::max(1.0, a.cwiseAbs().maxCoeff());
  const double asym = (a - a.transpose()).cwiseAbs().maxCoeff();
  if (asym > kSymmetryTolerance * scale)
    throw ValidationError("sym_eig: matrix is not symmetric (max |A - A^T| = " +
                          std::to_string(asym) + ")");
}

// Cyclic Jacobi rotations. Returns the number of sweeps used.
inline int jacobi_eigen(Eigen::MatrixXd a, Eigen::VectorXd& values, Eigen::MatrixXd& vectors,
                        int max_sweeps = 100) {
  const Eigen::Index n = a.rows();
  vectors = Eigen::MatrixXd::Identity(n, n);
  const double frob = a.norm();
  if (frob == 0.0) {
    values = Eigen::VectorXd::Zero(n);
    return 0;
  }
  const double target = 1e-30 * frob * frob;
  for (int sweep = 1; sweep <= max_sweeps; ++sweep) {
    double off = 0.0;
    for (Eigen::Index q = 1; q < n; ++q)
      for (Eigen::Index p = 0; p < q; ++p) off += a(p, q) * a(p, q);
    if (off <= target) {
      values = a.diagonal();
      return sweep - 1;
    }
    for (Eigen::Index p = 0; p < n - 1; ++p) {
      for (Eigen::Index q = p + 1; q < n; ++q) {
        const double apq = a(p, q);
        if (apq == 0.0) continue;
        const double theta = (a(q, q) - a(p, p)) / (2.0 * apq);
        const double t = std::copysign(1.0, theta) / (std::abs(theta) + std::hypot(theta, 1.0));
        const double c = 1.0 / std::hypot(t, 1.0);
        const double s = t * c;
        for (Eigen::Index k = 0; k < n; ++k) {
          const double akp = a(k, p);
          const double akq = a(k, q);
          a(k, p) = c * akp - s * akq;
          a(k, q) = s * akp + c * akq;
        }
        for (Eigen::Index k = 0; k < n; ++k) {
          const double apk = a(p, k);
          const double aqk = a(q, k);
          a(p, k) = c * apk - s * aqk;
          a(q, k) = s * apk + c * aqk;
        }
        a(p, q) = 0.0;
        a(q, p) = 0.0;
        for (Eigen::Index k = 0; k < n; ++k) {
          const double vkp = vectors(k, p);
          const double vkq = vectors(k, q);
          vectors(k, p) = c * vkp - s * vkq;
          vectors(k, q) = s * vkp + c * vkq;
        }
      }
    }
  }
  throw NumericError("sym_eig: Jacobi iteration did not converge after " +
                     std::to_string(max_sweeps) + " sweeps");
}

inline Spectrum finish_spectrum(Eigen::VectorXd values, Eigen::MatrixXd vectors,
                                double zero_threshold) {
  const Eigen::Index n = values.size();
  std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), Eigen::Index{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](Eigen::Index i, Eigen::Index j) { return values[i] > values[j]; });

  Spectrum spec;
  spec.zero_threshold = zero_threshold;
  spec.eigenvalues.resize(n);
  spec.eigenvectors.resize(n, n);
  for (Eigen::Index k = 0; k < n; ++k) {
    spec.eigenvalues[k] = values[order[static_cast<std::size_t>(k)]];
    spec.eigenvectors.col(k) = vectors.col(order[static_cast<std::size_t>(k)]);
  }

  const double cut = spec.cutoff();
  spec.largest = spec.eigenvalues.size() ? spec.eigenvalues[0] : 0.0;
  for (Eigen::Index k = 0; k < n; ++k) {
    if (std::abs(spec.eigenvalues[k]) > cut) {
      ++spec.rank;
      if (spec.eigenvalues[k] > 0.0) spec.smallest_nonzero = spec.eigenvalues[k];
    }
  }
  if (spec.rank == 0) spec.largest = 0.0;
  return spec;
}

}  // namespace detail

/// Eigendecomposition of a symmetric matrix.
///
/// Throws ValidationError for non-symmetric input and NumericError if the
/// eigensolver does not converge.
inline Spectrum sym_eig(const Eigen::MatrixXd& a, double zero_threshold = kDefaultZeroThreshold) {
  detail::check_symmetric(a);
  const Eigen::MatrixXd sym = 0.5 * (a + a.transpose());
  Eigen::VectorXd values;
  Eigen::MatrixXd vectors;
  if (sym.rows() <= kJacobiMaxDim) {
    detail::jacobi_eigen(sym, values, vectors);
  } else {
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(sym);
    // Eigen caps the implicit QR at 30 iterations per eigenvalue.
    if (solver.info() != Eigen::Success)
      throw NumericError("sym_eig: tridiagonal QR did not converge within " +
                         std::to_string(30 * sym.rows()) + " iterations");
    values = solver.eigenvalues();
    vectors = solver.eigenvectors();
  }
  return detail::finish_spectrum(std::move(values), std::move(vectors), zero_threshold);
}

// Spectral functions f applied as V f(S) V^T.
struct ExpScaled {
  double c = 0.0;  // exp(c * A)
};
struct PseudoInverse {};
struct PsdSqrt {};
struct Power {
  double q = 1.0;
};
using SpectralFunction = std::variant<ExpScaled, PseudoInverse, PsdSqrt, Power>;

namespace detail {

inline Eigen::VectorXd apply_scalar(const Spectrum& spec, const SpectralFunction& f) {
  const Eigen::Index n = spec.dim();
  Eigen::VectorXd out(n);
  const double cut = spec.cutoff();
  std::visit(
      [&](const auto& fn) {
        using F = std::decay_t<decltype(fn)>;
        for (Eigen::Index i = 0; i < n; ++i) {
          const double s = spec.eigenvalues[i];
          const bool zero = std::abs(s) <= cut;
          if constexpr (std::is_same_v<F, ExpScaled>) {
            out[i] = std::exp(fn.c * s);
          } else if constexpr (std::is_same_v<F, PseudoInverse>) {
            out[i] = zero ? 0.0 : 1.0 / s;
          } else if constexpr (std::is_same_v<F, PsdSqrt>) {
            if (s < -cut)
              throw NumericError("psd_sqrt: matrix is not PSD (eigenvalue " + std::to_string(s) +
                                 ")");
            out[i] = s > 0.0 ? std::sqrt(s) : 0.0;
          } else {
            if (fn.q == 0.0) {
              out[i] = 1.0;
            } else if (zero) {
              out[i] = 0.0;
            } else {
              if (s < 0.0 && std::floor(fn.q) != fn.q)
                throw NumericError("power: fractional power of a negative eigenvalue");
              out[i] = std::pow(s, fn.q);
            }
          }
        }
      },
      f);
  return out;
}

}  // namespace detail

/// V f(S) V^T. Zero eigenvalues (per the spectrum's threshold) map to 0 under
/// the pseudo-inverse and under negative or fractional powers. `PsdSqrt`
/// clamps negatives of magnitude up to the cutoff and rejects larger ones.
inline Eigen::MatrixXd spectral_apply(const Spectrum& spec, const SpectralFunction& f) {
  const Eigen::VectorXd fs = detail::apply_scalar(spec, f);
  return spec.eigenvectors * fs.asDiagonal() * spec.eigenvectors.transpose();
}

/// Symmetric PSD square root of `a`.
inline Eigen::MatrixXd psd_sqrt(const Eigen::MatrixXd& a) {
  return spectral_apply(sym_eig(a), PsdSqrt{});
}

}  // namespace sgflow
