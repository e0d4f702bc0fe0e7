#pragma once

// Deterministic estimator paths: ridge, gradient flow, gradient descent, the
// min-norm limit, and the gradient-flow/ridge coefficient ratio g(t).

#include <cmath>
#include <iostream>
#include <vector>

#include <Eigen/Dense>

#include "sgflow/errors.hpp"
#include "sgflow/problem.hpp"

namespace sgflow {

enum class GridScale { log, linear };

/// Strictly increasing positive times t; ridge is indexed by lambda = 1/t.
struct PathGrid {
  std::vector<double> times;
  GridScale scale = GridScale::log;

  std::size_t size() const { return times.size(); }

  void validate() const {
    detail::require(!times.empty(), "grid: empty");
    for (std::size_t i = 0; i < times.size(); ++i) {
      detail::require(std::isfinite(times[i]) && times[i] > 0.0, "grid: times must be finite and > 0");
      if (i > 0) detail::require(times[i] > times[i - 1], "grid: times must be strictly increasing");
    }
  }
};

/// `count` lambdas equally spaced in log between lambda_min and lambda_max,
/// returned as increasing t = 1/lambda.
inline PathGrid lambda_log_grid(double lambda_min = std::ldexp(1.0, -15),
                                double lambda_max = std::ldexp(1.0, 15), std::size_t count = 200) {
  detail::require(lambda_min > 0.0 && lambda_max > lambda_min, "grid: need 0 < lambda_min < lambda_max");
  detail::require(count >= 2, "grid: need at least two points");
  PathGrid grid;
  grid.times.resize(count);
  const double lo = std::log(lambda_min);
  const double hi = std::log(lambda_max);
  for (std::size_t i = 0; i < count; ++i) {
    // i = 0 is the largest lambda, i.e. the smallest t.
    const double frac = static_cast<double>(i) / static_cast<double>(count - 1);
    grid.times[i] = 1.0 / std::exp(hi + frac * (lo - hi));
  }
  return grid;
}

inline PathGrid time_log_grid(double t_min, double t_max, std::size_t count) {
  detail::require(t_min > 0.0 && t_max > t_min && count >= 2, "grid: need 0 < t_min < t_max, count >= 2");
  PathGrid grid;
  grid.times.resize(count);
  const double lo = std::log(t_min);
  const double hi = std::log(t_max);
  for (std::size_t i = 0; i < count; ++i)
    grid.times[i] = std::exp(lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(count - 1));
  return grid;
}

namespace detail {

/// V^T (X^T y / n): the data in the eigenbasis of the sample covariance.
inline Eigen::VectorXd eigen_coordinates(const RegressionProblem& problem) {
  return problem.spectrum.eigenvectors.transpose() *
         (problem.x.transpose() * problem.y / static_cast<double>(problem.n()));
}

/// 1 - (1 - x)^k, accurate for small x.
inline double one_minus_pow(double x, double k) {
  if (x < 1.0) return -std::expm1(k * std::log1p(-x));
  return 1.0 - std::pow(1.0 - x, k);
}

/// (1 - x)^k.
inline double pow_one_minus(double x, double k) {
  if (x < 1.0) return std::exp(k * std::log1p(-x));
  return std::pow(1.0 - x, k);
}

}  // namespace detail

/// Ridge estimate (X^T X + n lambda I)^{-1} X^T y.
inline Eigen::VectorXd ridge(const RegressionProblem& problem, double lambda) {
  detail::require(lambda > 0.0, "ridge: lambda must be > 0");
  const Eigen::VectorXd c = detail::eigen_coordinates(problem);
  const Eigen::VectorXd& s = problem.spectrum.eigenvalues;
  Eigen::VectorXd scaled(c.size());
  for (Eigen::Index i = 0; i < c.size(); ++i) scaled[i] = c[i] / (s[i] + lambda);
  return problem.spectrum.eigenvectors * scaled;
}

/// Gradient-flow solution (X^T X)^+ (I - exp(-t X^T X / n)) X^T y.
inline Eigen::VectorXd gradient_flow(const RegressionProblem& problem, double t) {
  detail::require(t >= 0.0, "gradient_flow: t must be >= 0");
  const Eigen::VectorXd c = detail::eigen_coordinates(problem);
  const Spectrum& spec = problem.spectrum;
  Eigen::VectorXd scaled = Eigen::VectorXd::Zero(c.size());
  for (Eigen::Index i = 0; i < c.size(); ++i) {
    if (spec.is_zero(i)) continue;
    const double s = spec.eigenvalues[i];
    scaled[i] = c[i] * (-std::expm1(-t * s)) / s;
  }
  return spec.eigenvectors * scaled;
}

/// (X^T X)^+ X^T y.
inline Eigen::VectorXd min_norm_solution(const RegressionProblem& problem) {
  const Eigen::VectorXd c = detail::eigen_coordinates(problem);
  const Spectrum& spec = problem.spectrum;
  Eigen::VectorXd scaled = Eigen::VectorXd::Zero(c.size());
  for (Eigen::Index i = 0; i < c.size(); ++i)
    if (!spec.is_zero(i)) scaled[i] = c[i] / spec.eigenvalues[i];
  return spec.eigenvectors * scaled;
}

inline void warn_if_unstable(const RegressionProblem& problem, double epsilon) {
  if (epsilon * problem.spectrum.largest >= 2.0)
    std::clog << "sgflow: warning: step size " << epsilon << " exceeds 2/L = "
              << 2.0 / problem.spectrum.largest << "; gradient descent diverges\n";
}

/// k full-batch gradient steps from zero, via the spectral closed form
/// V diag((1 - (1 - eps s_i)^k) / (n s_i)) V^T X^T y.
inline Eigen::VectorXd gradient_descent(const RegressionProblem& problem, double epsilon,
                                        long long k) {
  detail::require(epsilon > 0.0, "gradient_descent: epsilon must be > 0");
  detail::require(k >= 0, "gradient_descent: k must be >= 0");
  warn_if_unstable(problem, epsilon);
  const Eigen::VectorXd c = detail::eigen_coordinates(problem);
  const Spectrum& spec = problem.spectrum;
  Eigen::VectorXd scaled = Eigen::VectorXd::Zero(c.size());
  for (Eigen::Index i = 0; i < c.size(); ++i) {
    if (spec.is_zero(i)) continue;
    const double s = spec.eigenvalues[i];
    scaled[i] = c[i] * detail::one_minus_pow(epsilon * s, static_cast<double>(k)) / s;
  }
  return spec.eigenvectors * scaled;
}

/// The same k steps, taken explicitly.
inline Eigen::VectorXd gradient_descent_iterative(const RegressionProblem& problem, double epsilon,
                                                  long long k) {
  detail::require(epsilon > 0.0 && k >= 0, "gradient_descent_iterative: need epsilon > 0, k >= 0");
  const double step = epsilon / static_cast<double>(problem.n());
  Eigen::VectorXd beta = Eigen::VectorXd::Zero(problem.p());
  for (long long it = 0; it < k; ++it)
    beta += step * (problem.x.transpose() * (problem.y - problem.x * beta));
  return beta;
}

// g(t) bounds ||gf(t) - ridge(1/t)|| / ||ridge(1/t)|| + 1. The scalar
// f(x) = (1 - e^{-x})(1 + x)/x peaks at x = 1.7933 with value 1.2985.
inline constexpr double kGPeakLocation = 1.7933;
inline constexpr double kGPeakValue = 1.2985;

inline double g_scalar(double x) {
  if (x < 1e-8) return 1.0 + 0.5 * x;  // series: 1 + x/2 - x^2/3 + ...
  return -std::expm1(-x) * (1.0 + x) / x;
}

inline double g_of_t(double t, double mu, double big_l) {
  detail::require(t > 0.0, "g_of_t: t must be > 0");
  detail::require(mu > 0.0 && big_l >= mu, "g_of_t: need 0 < mu <= L");
  if (t <= kGPeakLocation / big_l) return g_scalar(big_l * t);
  if (t >= kGPeakLocation / mu) return g_scalar(mu * t);
  return kGPeakValue;
}

}  // namespace sgflow
