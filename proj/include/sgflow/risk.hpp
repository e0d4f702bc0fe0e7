#pragma once

// Closed-form bias/variance of ridge, gradient flow and gradient descent
// (estimation and in-sample), and the RiskCurve container.

#include <cmath>
#include <limits>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "sgflow/closed_form.hpp"
#include "sgflow/errors.hpp"
#include "sgflow/problem.hpp"
#include "sgflow/spectral.hpp"

namespace sgflow {

enum class RiskScope { estimation, in_sample };

struct BiasVariance {
  double bias_sq = 0.0;
  double variance = 0.0;
  double risk() const { return bias_sq + variance; }
};

/// Per-gridpoint risk of one estimator family, with optional named columns.
struct RiskCurve {
  std::string estimator;
  std::vector<double> t;
  std::vector<double> bias_sq;
  std::vector<double> variance;
  std::vector<double> risk;
  std::vector<std::pair<std::string, std::vector<double>>> components;

  std::size_t size() const { return t.size(); }

  void push(double time, double b2, double var) {
    t.push_back(time);
    bias_sq.push_back(b2);
    variance.push_back(var);
    risk.push_back(b2 + var);
  }

  std::vector<double>& component(const std::string& name) {
    for (auto& [key, values] : components)
      if (key == name) return values;
    components.emplace_back(name, std::vector<double>{});
    return components.back().second;
  }

  const std::vector<double>* find_component(const std::string& name) const {
    for (const auto& [key, values] : components)
      if (key == name) return &values;
    return nullptr;
  }

  std::vector<double> lambda() const {
    std::vector<double> out(t.size());
    for (std::size_t i = 0; i < t.size(); ++i)
      out[i] = t[i] > 0.0 ? 1.0 / t[i] : std::numeric_limits<double>::infinity();
    return out;
  }
};

namespace detail {

/// Squared coordinates (v_i^T beta0)^2 and retained eigenvalues.
struct ModeData {
  Eigen::VectorXd signal;
  Eigen::VectorXd s;
};

inline ModeData modes(const Spectrum& spec, const Eigen::VectorXd& beta0) {
  require(beta0.size() == spec.dim(), "risk: beta0 length must match the spectrum");
  return {(spec.eigenvectors.transpose() * beta0).array().square().matrix(), spec.retained()};
}

// Shared evaluator: bias factor b_i and variance factor c_i per mode, with
// bias^2 = sum signal_i b_i^2 w_i and variance = sigma^2/n sum c_i^2 w_i / s_i,
// w_i = s_i for in-sample risk and 1 otherwise.
template <class BiasFactor, class VarFactor>
BiasVariance evaluate(const ModeData& md, double sigma, Eigen::Index n, RiskScope scope,
                      BiasFactor bias_factor, VarFactor var_factor) {
  BiasVariance out;
  const double noise = sigma * sigma / static_cast<double>(n);
  for (Eigen::Index i = 0; i < md.s.size(); ++i) {
    const double s = md.s[i];
    const double weight = scope == RiskScope::in_sample ? s : 1.0;
    const double b = bias_factor(s);
    out.bias_sq += md.signal[i] * b * b * weight;
    if (s > 0.0) {
      const double c = var_factor(s);
      out.variance += noise * c * c * (scope == RiskScope::in_sample ? 1.0 : 1.0 / s);
    }
  }
  return out;
}

}  // namespace detail

inline BiasVariance ridge_risk(const Spectrum& spec, const Eigen::VectorXd& beta0, double sigma,
                               Eigen::Index n, double lambda,
                               RiskScope scope = RiskScope::estimation) {
  detail::require(lambda > 0.0, "ridge_risk: lambda must be > 0");
  // Ridge shrinks mode i by s/(s+lambda): bias lambda/(s+lambda), noise gain s/(s+lambda).
  return detail::evaluate(detail::modes(spec, beta0), sigma, n, scope,
                          [&](double s) { return lambda / (s + lambda); },
                          [&](double s) { return s / (s + lambda); });
}

inline BiasVariance gf_risk(const Spectrum& spec, const Eigen::VectorXd& beta0, double sigma,
                            Eigen::Index n, double t, RiskScope scope = RiskScope::estimation) {
  detail::require(t >= 0.0, "gf_risk: t must be >= 0");
  return detail::evaluate(detail::modes(spec, beta0), sigma, n, scope,
                          [&](double s) { return std::exp(-t * s); },
                          [&](double s) { return -std::expm1(-t * s); });
}

inline BiasVariance gd_risk(const Spectrum& spec, const Eigen::VectorXd& beta0, double sigma,
                            Eigen::Index n, double epsilon, long long k,
                            RiskScope scope = RiskScope::estimation) {
  detail::require(epsilon > 0.0 && k >= 0, "gd_risk: need epsilon > 0, k >= 0");
  const double kk = static_cast<double>(k);
  return detail::evaluate(detail::modes(spec, beta0), sigma, n, scope,
                          [&](double s) { return detail::pow_one_minus(epsilon * s, kk); },
                          [&](double s) { return detail::one_minus_pow(epsilon * s, kk); });
}

// Problem-level conveniences.
inline BiasVariance ridge_risk(const RegressionProblem& pr, double lambda,
                               RiskScope scope = RiskScope::estimation) {
  return ridge_risk(pr.spectrum, pr.beta0, pr.sigma, pr.n(), lambda, scope);
}
inline BiasVariance gf_risk(const RegressionProblem& pr, double t,
                            RiskScope scope = RiskScope::estimation) {
  return gf_risk(pr.spectrum, pr.beta0, pr.sigma, pr.n(), t, scope);
}
inline BiasVariance gd_risk(const RegressionProblem& pr, double epsilon, long long k,
                            RiskScope scope = RiskScope::estimation) {
  return gd_risk(pr.spectrum, pr.beta0, pr.sigma, pr.n(), epsilon, k, scope);
}

/// E_eta ||ridge(lambda)||^2 = sum_i s_i (n s_i (v_i^T beta0)^2 + sigma^2) / (n (s_i + lambda)^2).
inline double ridge_second_moment(const RegressionProblem& pr, double lambda) {
  detail::require(lambda > 0.0, "ridge_second_moment: lambda must be > 0");
  const auto md = detail::modes(pr.spectrum, pr.beta0);
  const double n = static_cast<double>(pr.n());
  double total = 0.0;
  for (Eigen::Index i = 0; i < md.s.size(); ++i) {
    const double s = md.s[i];
    if (s <= 0.0) continue;
    total += s * (n * s * md.signal[i] + pr.sigma * pr.sigma) / (n * (s + lambda) * (s + lambda));
  }
  return total;
}

inline RiskCurve ridge_curve(const RegressionProblem& pr, const PathGrid& grid,
                             RiskScope scope = RiskScope::estimation) {
  grid.validate();
  RiskCurve curve;
  curve.estimator = "ridge";
  for (double t : grid.times) {
    const auto bv = ridge_risk(pr, 1.0 / t, scope);
    curve.push(t, bv.bias_sq, bv.variance);
  }
  return curve;
}

inline RiskCurve gf_curve(const RegressionProblem& pr, const PathGrid& grid,
                          RiskScope scope = RiskScope::estimation) {
  grid.validate();
  RiskCurve curve;
  curve.estimator = "gf";
  for (double t : grid.times) {
    const auto bv = gf_risk(pr, t, scope);
    curve.push(t, bv.bias_sq, bv.variance);
  }
  return curve;
}

/// Gradient descent at k = round(t / eps) for each grid time; t is reported as k eps.
inline RiskCurve gd_curve(const RegressionProblem& pr, const PathGrid& grid, double epsilon,
                          RiskScope scope = RiskScope::estimation) {
  grid.validate();
  RiskCurve curve;
  curve.estimator = "gd";
  for (double t : grid.times) {
    const auto k = static_cast<long long>(std::llround(t / epsilon));
    const auto bv = gd_risk(pr, epsilon, k, scope);
    curve.push(static_cast<double>(k) * epsilon, bv.bias_sq, bv.variance);
  }
  return curve;
}

}  // namespace sgflow
