#pragma once

// Independent reference computations used only by tests: elimination solves,
// polynomial roots, ODE integration and exhaustive enumeration over batches.

#include <algorithm>
#include <cmath>
#include <functional>
#include <numbers>
#include <vector>

#include <Eigen/Dense>

#include "sgflow/problem.hpp"
#include "sgflow/rng.hpp"

namespace oracle {

/// Gaussian elimination with partial pivoting.
inline Eigen::VectorXd gauss_solve(Eigen::MatrixXd a, Eigen::VectorXd b) {
  const Eigen::Index n = a.rows();
  for (Eigen::Index col = 0; col < n; ++col) {
    Eigen::Index piv = col;
    for (Eigen::Index r = col + 1; r < n; ++r)
      if (std::abs(a(r, col)) > std::abs(a(piv, col))) piv = r;
    a.row(col).swap(a.row(piv));
    std::swap(b[col], b[piv]);
    for (Eigen::Index r = col + 1; r < n; ++r) {
      const double f = a(r, col) / a(col, col);
      for (Eigen::Index c = col; c < n; ++c) a(r, c) -= f * a(col, c);
      b[r] -= f * b[col];
    }
  }
  Eigen::VectorXd x(n);
  for (Eigen::Index r = n - 1; r >= 0; --r) {
    double acc = b[r];
    for (Eigen::Index c = r + 1; c < n; ++c) acc -= a(r, c) * x[c];
    x[r] = acc / a(r, r);
  }
  return x;
}

/// Eigenvalues of a symmetric 2x2 by the quadratic formula, descending.
inline std::vector<double> eig2(double a, double b, double d) {
  const double tr = a + d, det = a * d - b * b;
  const double disc = std::sqrt(std::max(tr * tr / 4.0 - det, 0.0));
  return {tr / 2.0 + disc, tr / 2.0 - disc};
}

/// Eigenvalues of a symmetric 3x3 as roots of its characteristic polynomial
/// (trigonometric cubic solution), descending.
inline std::vector<double> eig3(const Eigen::Matrix3d& m) {
  const double c2 = m.trace();
  const double c1 = m(0, 0) * m(1, 1) - m(0, 1) * m(1, 0) + m(0, 0) * m(2, 2) - m(0, 2) * m(2, 0) +
                    m(1, 1) * m(2, 2) - m(1, 2) * m(2, 1);
  const double c0 = m.determinant();
  // lambda^3 - c2 lambda^2 + c1 lambda - c0 = 0; substitute lambda = x + c2/3.
  const double shift = c2 / 3.0;
  const double p = c1 - c2 * c2 / 3.0;
  const double q = -2.0 * c2 * c2 * c2 / 27.0 + c2 * c1 / 3.0 - c0;
  std::vector<double> roots(3);
  if (std::abs(p) < 1e-300) {
    roots = {shift, shift, shift};
  } else {
    const double r = 2.0 * std::sqrt(-p / 3.0);
    double arg = 3.0 * q / (p * r);
    arg = std::clamp(arg, -1.0, 1.0);
    const double phi = std::acos(arg) / 3.0;
    for (int k = 0; k < 3; ++k) roots[k] = shift + r * std::cos(phi - 2.0 * std::numbers::pi * k / 3.0);
  }
  std::sort(roots.begin(), roots.end(), std::greater<>());
  return roots;
}

/// Classical RK4 for beta' = X^T (y - X beta) / n from zero.
inline Eigen::VectorXd rk4_flow(const Eigen::MatrixXd& x, const Eigen::VectorXd& y, double t, double h) {
  const double n = static_cast<double>(x.rows());
  auto f = [&](const Eigen::VectorXd& b) -> Eigen::VectorXd { return x.transpose() * (y - x * b) / n; };
  Eigen::VectorXd b = Eigen::VectorXd::Zero(x.cols());
  const auto steps = static_cast<long long>(std::llround(t / h));
  const double dt = t / static_cast<double>(steps);
  for (long long s = 0; s < steps; ++s) {
    const Eigen::VectorXd k1 = f(b);
    const Eigen::VectorXd k2 = f(b + 0.5 * dt * k1);
    const Eigen::VectorXd k3 = f(b + 0.5 * dt * k2);
    const Eigen::VectorXd k4 = f(b + dt * k3);
    b += dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
  }
  return b;
}

/// All ordered batches of size m from {0..n-1} (with replacement).
inline std::vector<std::vector<int>> all_batches(int n, int m) {
  std::vector<std::vector<int>> out;
  std::vector<int> cur(static_cast<std::size_t>(m), 0);
  for (;;) {
    out.push_back(cur);
    int pos = m - 1;
    while (pos >= 0 && ++cur[static_cast<std::size_t>(pos)] == n) cur[static_cast<std::size_t>(pos--)] = 0;
    if (pos < 0) break;
  }
  return out;
}

inline Eigen::VectorXd batch_gradient(const Eigen::MatrixXd& x, const Eigen::VectorXd& y, const Eigen::VectorXd& beta,
                                      const std::vector<int>& batch) {
  Eigen::VectorXd g = Eigen::VectorXd::Zero(x.cols());
  for (int i : batch) g += x.row(i).transpose() * (y[i] - x.row(i).dot(beta));
  return g / static_cast<double>(batch.size());
}

/// Exact covariance of the batch gradient times eps, by enumeration.
inline Eigen::MatrixXd enumerated_diffusion(const Eigen::MatrixXd& x, const Eigen::VectorXd& y,
                                            const Eigen::VectorXd& beta, double eps, int m) {
  const auto batches = all_batches(static_cast<int>(x.rows()), m);
  Eigen::VectorXd mean = Eigen::VectorXd::Zero(x.cols());
  Eigen::MatrixXd second = Eigen::MatrixXd::Zero(x.cols(), x.cols());
  for (const auto& b : batches) {
    const Eigen::VectorXd g = batch_gradient(x, y, beta, b);
    mean += g;
    second += g * g.transpose();
  }
  const double count = static_cast<double>(batches.size());
  mean /= count;
  second /= count;
  return eps * (second - mean * mean.transpose());
}

struct Moments {
  Eigen::VectorXd mean;
  Eigen::MatrixXd cov;
};

/// Exact SGD moments after k steps by enumerating every batch sequence.
inline Moments enumerated_sgd(const Eigen::MatrixXd& x, const Eigen::VectorXd& y, double eps, int m, int k) {
  const auto batches = all_batches(static_cast<int>(x.rows()), m);
  std::vector<Eigen::VectorXd> states = {Eigen::VectorXd::Zero(x.cols())};
  for (int step = 0; step < k; ++step) {
    std::vector<Eigen::VectorXd> next;
    for (const auto& s : states)
      for (const auto& b : batches) next.push_back(s + eps * batch_gradient(x, y, s, b));
    states = std::move(next);
  }
  Moments out{Eigen::VectorXd::Zero(x.cols()), Eigen::MatrixXd::Zero(x.cols(), x.cols())};
  for (const auto& s : states) out.mean += s;
  out.mean /= static_cast<double>(states.size());
  for (const auto& s : states) out.cov += (s - out.mean) * (s - out.mean).transpose();
  out.cov /= static_cast<double>(states.size());
  return out;
}

/// Random dense matrix with i.i.d. standard-normal entries.
inline Eigen::MatrixXd random_matrix(Eigen::Index r, Eigen::Index c, std::uint64_t seed) {
  sgflow::Rng rng(seed);
  Eigen::MatrixXd a(r, c);
  for (Eigen::Index i = 0; i < r; ++i)
    for (Eigen::Index j = 0; j < c; ++j) a(i, j) = rng.normal();
  return a;
}

inline sgflow::RegressionProblem random_problem(Eigen::Index n, Eigen::Index p, double sigma, std::uint64_t seed) {
  Eigen::MatrixXd x = random_matrix(n, p, seed);
  Eigen::VectorXd beta0 = random_matrix(p, 1, seed + 1);
  Eigen::VectorXd y = sgflow::generate_response(x, beta0, sigma, seed + 2);
  return sgflow::RegressionProblem(std::move(x), std::move(y), std::move(beta0), sigma);
}

}  // namespace oracle
