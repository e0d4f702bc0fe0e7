#pragma once

// Loss-decay constants, effective mini-batch variance, and the risk and
// coefficient-error bounds for stochastic gradient flow.

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "sgflow/closed_form.hpp"
#include "sgflow/errors.hpp"
#include "sgflow/parallel.hpp"
#include "sgflow/problem.hpp"
#include "sgflow/risk.hpp"
#include "sgflow/simulate.hpp"

namespace sgflow {

/// Gradient-flow variance never exceeds this multiple of ridge variance at lambda = 1/t.
inline constexpr double kVarianceInflation = 1.6862;
inline constexpr double kGammaConstant = 2.164;

enum class Regime { underparam, overparam };

inline std::string to_string(Regime r) { return r == Regime::underparam ? "underparam" : "overparam"; }

/// Constants of the exponential loss bound f(t) <= exp(-u t + w) + v, where
/// f is the half mean squared residual (projected onto col(X) when n > p).
struct TheoryConstants {
  Regime regime = Regime::overparam;
  double epsilon = 0.0;
  Eigen::Index m = 1;
  Eigen::Index n = 0;
  Eigen::Index p = 0;
  Eigen::Index rank = 0;
  double mu = 0.0;
  double big_l = 0.0;
  double max_diag_sq = 0.0;  // max_i [Sigma_hat^2]_ii
  double u = 0.0;
  double v = 0.0;
  double exp_w = 0.0;        // e^w; w itself may be -inf
  double q = 0.0;            // ||(I - P_col(X)) y||^2
  double v_tilde = 0.0;      // E_eta v
  double w_tilde = 0.0;      // E_eta e^w

  double w() const { return std::log(exp_w); }
};

namespace detail {

inline double max_diag_sq(const RegressionProblem& pr) {
  const Eigen::MatrixXd cov = pr.sample_cov();
  return cov.colwise().squaredNorm().maxCoeff();
}

/// Squared norm of the component of y outside the column space of X.
inline double orthogonal_residual_sq(const RegressionProblem& pr, const Eigen::VectorXd& y) {
  const Eigen::MatrixXd basis = pr.x * pr.spectrum.range_basis();  // orthogonal columns
  const Eigen::VectorXd s = pr.spectrum.range_eigenvalues();
  const Eigen::VectorXd coords = (basis.transpose() * y).cwiseQuotient(static_cast<double>(pr.n()) * s);
  return (y - basis * coords).squaredNorm();
}

inline double regime_coefficient(Regime r) { return r == Regime::underparam ? 2.0 : 1.0; }

}  // namespace detail

inline Regime regime_of(const RegressionProblem& pr) {
  return pr.n() > pr.p() ? Regime::underparam : Regime::overparam;
}

/// Largest step size with u > 0: sqrt(mu m / (c n^3 D)), c = 2 if n > p else 1.
inline double max_feasible_epsilon(const RegressionProblem& pr, Eigen::Index m) {
  detail::require(m >= 1, "max_feasible_epsilon: m must be >= 1");
  if (pr.spectrum.rank == 0) throw ValidationError("step size: degenerate problem (X has rank 0)");
  const double n = static_cast<double>(pr.n());
  const double c = detail::regime_coefficient(regime_of(pr));
  return std::sqrt(pr.spectrum.smallest_nonzero * static_cast<double>(m) /
                   (c * n * n * n * detail::max_diag_sq(pr)));
}

inline double choose_epsilon(const RegressionProblem& pr, Eigen::Index m, double safety_factor = 0.9) {
  detail::require(safety_factor > 0.0 && safety_factor <= 1.0, "choose_epsilon: safety factor must lie in (0, 1]");
  return safety_factor * max_feasible_epsilon(pr, m);
}

/// Loss-bound constants for step size eps, batch size m and response y.
inline TheoryConstants loss_constants(const RegressionProblem& pr, double epsilon, Eigen::Index m,
                                      const Eigen::VectorXd& y) {
  detail::require(epsilon > 0.0, "loss_constants: epsilon must be > 0");
  detail::require(m >= 1 && m <= pr.n(), "loss_constants: batch size must lie in [1, n]");
  detail::require(y.size() == pr.n(), "loss_constants: y has wrong length");
  if (pr.spectrum.rank == 0) throw ValidationError("loss_constants: degenerate problem (X has rank 0)");

  TheoryConstants k;
  k.regime = regime_of(pr);
  k.epsilon = epsilon;
  k.m = m;
  k.n = pr.n();
  k.p = pr.p();
  k.rank = pr.spectrum.rank;
  k.mu = pr.spectrum.smallest_nonzero;
  k.big_l = pr.spectrum.largest;
  k.max_diag_sq = detail::max_diag_sq(pr);

  const double n = static_cast<double>(pr.n());
  const double md = static_cast<double>(m);
  const double ne2 = (n * epsilon) * (n * epsilon);
  const double sigma_sq = pr.sigma * pr.sigma;
  const double signal = (pr.x * pr.beta0).squaredNorm();

  if (k.regime == Regime::underparam) {
    k.u = k.mu / n - 2.0 * ne2 * k.max_diag_sq / md;
    k.q = detail::orthogonal_residual_sq(pr, y);
    k.exp_w = std::max(y.squaredNorm() - k.q, 0.0) / (2.0 * n);
    k.w_tilde = (signal + static_cast<double>(k.rank) * sigma_sq) / (2.0 * n);
  } else {
    k.u = k.mu / n - ne2 * k.max_diag_sq / md;
    k.q = detail::orthogonal_residual_sq(pr, y);
    k.exp_w = y.squaredNorm() / (2.0 * n);
    k.w_tilde = (signal + n * sigma_sq) / (2.0 * n);
  }
  if (!(k.u > 0.0))
    throw StepSizeError("loss_constants: step size " + std::to_string(epsilon) +
                            " too large (u <= 0); maximal feasible step size is " +
                            std::to_string(max_feasible_epsilon(pr, m)),
                        max_feasible_epsilon(pr, m));
  if (k.regime == Regime::underparam) {
    k.v = 2.0 * ne2 * k.q * k.max_diag_sq / (md * k.u);
    const double expected_q = (n - static_cast<double>(k.rank)) * sigma_sq;
    k.v_tilde = 2.0 * ne2 * expected_q * k.max_diag_sq / (md * k.u);
  }
  return k;
}

inline TheoryConstants loss_constants(const RegressionProblem& pr, double epsilon, Eigen::Index m) {
  return loss_constants(pr, epsilon, m, pr.y);
}

/// exp(-u t + w) + v.
inline double loss_bound(const TheoryConstants& k, double t) {
  return k.exp_w * std::exp(-k.u * t) + k.v;
}

/// Half mean squared residual, projected onto col(X) in the n > p regime.
inline double training_loss(const RegressionProblem& pr, const Eigen::VectorXd& beta, Regime regime) {
  const Eigen::VectorXd h = pr.y - pr.x * beta;
  const double n = static_cast<double>(pr.n());
  if (regime == Regime::overparam) return h.squaredNorm() / (2.0 * n);
  return std::max(h.squaredNorm() - detail::orthogonal_residual_sq(pr, h), 0.0) / (2.0 * n);
}

enum class Expectation { realized, over_noise };

/// Per-mode effective variance nu_i(t); zero for zero eigenvalues.
inline Eigen::VectorXd effective_variance(const TheoryConstants& k, const Spectrum& spec, double t,
                                          Expectation which = Expectation::over_noise) {
  detail::require(t >= 0.0, "effective_variance: t must be >= 0");
  const double level = which == Expectation::realized ? k.exp_w : k.w_tilde;
  const double floor = which == Expectation::realized ? k.v : k.v_tilde;
  const Eigen::VectorXd s = spec.retained();
  Eigen::VectorXd nu = Eigen::VectorXd::Zero(s.size());
  const double decay = std::exp(-k.u * t);
  for (Eigen::Index i = 0; i < s.size(); ++i) {
    if (s[i] <= 0.0) continue;
    const double fast = std::exp(-2.0 * t * s[i]);
    nu[i] = level * s[i] / (s[i] - 0.5 * k.u) * (decay - fast) + floor * (-std::expm1(-2.0 * t * s[i]));
  }
  return nu;
}

/// eps (n/m) sum_i nu_i(t), with an extra factor s_i per mode for in-sample risk.
inline double minibatch_term(const TheoryConstants& k, const Spectrum& spec, double t,
                             Expectation which = Expectation::over_noise,
                             RiskScope scope = RiskScope::estimation) {
  const Eigen::VectorXd nu = effective_variance(k, spec, t, which);
  const double sum = scope == RiskScope::in_sample ? nu.dot(spec.retained()) : nu.sum();
  return k.epsilon * static_cast<double>(k.n) / static_cast<double>(k.m) * sum;
}

// ---------------------------------------------------------------------------
// Risk bounds

struct BoundBreakdown {
  double t = 0.0;
  double bias_sq = 0.0;    // of the reference estimator
  double variance = 0.0;   // of the reference estimator, times variance_factor
  double variance_factor = 1.0;
  double minibatch = 0.0;
  double total = 0.0;
  double u = 0.0, v_tilde = 0.0, w_tilde = 0.0;
};

struct RiskBounds {
  BoundBreakdown gf;     // relative to gradient flow at t
  BoundBreakdown ridge;  // relative to ridge at lambda = 1/t
};

inline RiskBounds sgf_risk_bound(const RegressionProblem& pr, const TheoryConstants& k, double t,
                                 RiskScope scope = RiskScope::estimation) {
  detail::require(t > 0.0, "sgf_risk_bound: t must be > 0");
  const double mb = minibatch_term(k, pr.spectrum, t, Expectation::over_noise, scope);
  auto make = [&](const BiasVariance& bv, double factor) {
    BoundBreakdown b;
    b.t = t;
    b.bias_sq = bv.bias_sq;
    b.variance_factor = factor;
    b.variance = factor * bv.variance;
    b.minibatch = mb;
    b.total = b.bias_sq + b.variance + b.minibatch;
    b.u = k.u;
    b.v_tilde = k.v_tilde;
    b.w_tilde = k.w_tilde;
    return b;
  };
  return {make(gf_risk(pr, t, scope), 1.0), make(ridge_risk(pr, 1.0 / t, scope), kVarianceInflation)};
}

/// Bound on Risk(sgf(t)) - Risk(ridge(1/t)): 0.6862 Var(ridge) + minibatch term.
inline double excess_risk_bound(const RegressionProblem& pr, const TheoryConstants& k, double t,
                                RiskScope scope = RiskScope::estimation) {
  detail::require(t > 0.0, "excess_risk_bound: t must be > 0");
  return (kVarianceInflation - 1.0) * ridge_risk(pr, 1.0 / t, scope).variance +
         minibatch_term(k, pr.spectrum, t, Expectation::over_noise, scope);
}

/// Exponent of |Bias| in the relative bound. `printed` is 1/kappa = mu/L;
/// `proven` is u/L, the exponent the bias comparison actually supports.
enum class DecayExponent { printed, proven };

struct RelativeRiskBound {
  double t = 0.0;
  double alpha = 0.0, gamma_t = 1.0, kappa = 1.0, delta = 0.0, exponent = 1.0;
  double gf_form = 0.0;
  double ridge_form = 0.0;
};

/// Interpretable relative bound:
///   bias^2 + delta |bias|^e + gamma(t) var  (gf form; ridge form inflates var by 1.6862)
/// with alpha = p w~ eps n mu / (m (mu - u/2)),
/// gamma(t) = 1 + 2.164 eps v~ n^2 max(1/t, L) / (m sigma^2),
/// kappa = L/mu and delta = alpha / ||beta0||^e.
inline RelativeRiskBound relative_risk_bound(const RegressionProblem& pr, const TheoryConstants& k, double t,
                                             DecayExponent exponent = DecayExponent::printed) {
  detail::require(t > 0.0, "relative_risk_bound: t must be > 0");
  if (!(pr.sigma > 0.0))
    throw ValidationError("relative_risk_bound: undefined for sigma = 0 (gamma divides by sigma^2); use sgf_risk_bound");
  const double b0 = pr.beta0.norm();
  detail::require(b0 > 0.0, "relative_risk_bound: beta0 must be nonzero");
  const double n = static_cast<double>(k.n), m = static_cast<double>(k.m);

  RelativeRiskBound r;
  r.t = t;
  r.kappa = k.big_l / k.mu;
  r.exponent = exponent == DecayExponent::printed ? 1.0 / r.kappa : k.u / k.big_l;
  r.alpha = static_cast<double>(k.p) * k.w_tilde * k.epsilon * n * k.mu / (m * (k.mu - 0.5 * k.u));
  r.gamma_t = 1.0 + kGammaConstant * k.epsilon * k.v_tilde * n * n * std::max(1.0 / t, k.big_l) /
                        (m * pr.sigma * pr.sigma);
  r.delta = r.alpha / std::pow(b0, r.exponent);

  const auto gf = gf_risk(pr, t);
  const auto rd = ridge_risk(pr, 1.0 / t);
  r.gf_form = gf.bias_sq + r.delta * std::pow(std::sqrt(gf.bias_sq), r.exponent) + r.gamma_t * gf.variance;
  r.ridge_form = rd.bias_sq + r.delta * std::pow(std::sqrt(rd.bias_sq), r.exponent) +
                 kVarianceInflation * r.gamma_t * rd.variance;
  return r;
}

/// Bound on E||sgf(t) - ridge(1/t)||^2:
/// (g(t) - 1)^2 E_eta||ridge(1/t)||^2 + eps (n/m) sum_i nu_i(t).
inline double coefficient_error_bound(const RegressionProblem& pr, const TheoryConstants& k, double t,
                                      Expectation which = Expectation::over_noise) {
  detail::require(t > 0.0, "coefficient_error_bound: t must be > 0");
  const double g = g_of_t(t, k.mu, k.big_l);
  const double ridge_sq = which == Expectation::over_noise ? ridge_second_moment(pr, 1.0 / t)
                                                           : ridge(pr, 1.0 / t).squaredNorm();
  return (g - 1.0) * (g - 1.0) * ridge_sq + minibatch_term(k, pr.spectrum, t, which);
}

// ---------------------------------------------------------------------------
// Constant-covariance process

/// Risk of the constant-covariance process: gradient-flow risk plus
/// (eps/(2m)) sum_{s_i > 0} (1 - exp(-2 t s_i)) (times s_i in-sample). Exact.
inline BiasVariance const_process_risk(const Spectrum& spec, const Eigen::VectorXd& beta0, double sigma,
                                       Eigen::Index n, double epsilon, Eigen::Index m, double t,
                                       RiskScope scope = RiskScope::estimation) {
  detail::require(epsilon > 0.0 && m >= 1 && t >= 0.0, "const_process_risk: need eps > 0, m >= 1, t >= 0");
  BiasVariance bv = gf_risk(spec, beta0, sigma, n, t, scope);
  const Eigen::VectorXd s = spec.retained();
  double extra = 0.0;
  for (Eigen::Index i = 0; i < s.size(); ++i)
    if (s[i] > 0.0) extra += -std::expm1(-2.0 * t * s[i]) * (scope == RiskScope::in_sample ? s[i] : 1.0);
  bv.variance += epsilon / (2.0 * static_cast<double>(m)) * extra;
  return bv;
}

inline BiasVariance const_process_risk(const RegressionProblem& pr, double epsilon, Eigen::Index m, double t,
                                       RiskScope scope = RiskScope::estimation) {
  return const_process_risk(pr.spectrum, pr.beta0, pr.sigma, pr.n(), epsilon, m, t, scope);
}

// ---------------------------------------------------------------------------
// Non-constant vs constant process

struct NonconstBoundOptions {
  std::size_t replicates = 200;
  NoiseFactor factor = NoiseFactor::residual_uncentered;
};

struct NonconstBound {
  double bound = 0.0;
  std::vector<double> times;      // k eps for k = 0..K
  std::vector<double> integrand;  // E_Z sum_i |(y_i - x_i^T beta(tau))^2 - 1|
};

/// 4 L p^3 eps / m * int_0^t E_Z sum_i |r_i(tau)^2 - 1| dtau, with the
/// integrand averaged over Euler SGF replicates (uncentered diffusion by
/// default) at every step and integrated by the trapezoid rule.
inline NonconstBound nonconst_vs_const_bound(const RegressionProblem& pr, const SgdConfig& config, double t,
                                             const NonconstBoundOptions& options = {}) {
  config.validate(pr.n());
  detail::require(t >= 0.0, "nonconst_vs_const_bound: t must be >= 0");
  detail::require(options.replicates >= 1, "nonconst_vs_const_bound: need at least one replicate");
  const auto steps = static_cast<long long>(std::llround(t / config.epsilon));
  std::vector<long long> checkpoints(static_cast<std::size_t>(steps + 1));
  for (long long k = 0; k <= steps; ++k) checkpoints[static_cast<std::size_t>(k)] = k;

  auto abs_dev = [&](const Eigen::VectorXd& beta) {
    return ((pr.y - pr.x * beta).array().square() - 1.0).abs().sum();
  };
  const ScalarSeries total = blocked_reduce(
      options.replicates, ScalarSeries(checkpoints.size()),
      [&](std::size_t begin, std::size_t end, ScalarSeries& acc) {
        for (std::size_t r = begin; r < end; ++r)
          run_replicate(pr, config, TrajectoryKind::euler_sgf, r, checkpoints,
                        [&](std::size_t c, const Eigen::VectorXd& beta) { acc.items[c].add(abs_dev(beta)); },
                        options.factor);
      });

  NonconstBound out;
  double integral = 0.0;
  for (std::size_t c = 0; c < checkpoints.size(); ++c) {
    out.times.push_back(static_cast<double>(checkpoints[c]) * config.epsilon);
    out.integrand.push_back(total.items[c].mean);
    if (c > 0) integral += 0.5 * config.epsilon * (out.integrand[c] + out.integrand[c - 1]);
  }
  const double p = static_cast<double>(pr.p());
  out.bound = 4.0 * pr.spectrum.largest * p * p * p * config.epsilon /
              static_cast<double>(config.batch_size) * integral;
  return out;
}

struct MeanEstimate {
  double mean = 0.0;
  double standard_error = 0.0;
};

/// E||beta_sgf(t) - beta_const(t)||^2 with both Euler paths driven by the same
/// n-dimensional normals, at k = round(t / eps).
inline MeanEstimate coupled_process_distance(const RegressionProblem& pr, const SgdConfig& config, double t,
                                             std::size_t replicates,
                                             NoiseFactor factor = NoiseFactor::residual_uncentered) {
  config.validate(pr.n());
  detail::require(factor != NoiseFactor::symmetric_root, "coupled_process_distance: needs a residual factor");
  detail::require(replicates >= 2, "coupled_process_distance: need at least 2 replicates");
  const auto steps = std::llround(t / config.epsilon);
  const ScalarAccumulator acc = blocked_reduce(
      replicates, ScalarAccumulator{}, [&](std::size_t begin, std::size_t end, ScalarAccumulator& a) {
        for (std::size_t r = begin; r < end; ++r) {
          Rng rng(derive_seed(config.seed, Stream::replicate, r));
          EulerSgfStepper sgf(pr, config.epsilon, config.batch_size, 0, factor);
          ConstCovStepper cst(pr, config.epsilon, config.batch_size, 0, false, NoiseFactor::residual);
          Eigen::VectorXd z(pr.n());
          for (long long k = 0; k < steps; ++k) {
            rng.fill_normal(z);
            sgf.step_with(z);
            cst.step_with(z);
          }
          a.add((sgf.state() - cst.state()).squaredNorm());
        }
      });
  return {acc.mean, acc.standard_error()};
}

// ---------------------------------------------------------------------------
// Optimal stopping

struct StoppingTimes {
  double t_star_balance = 0.0;
  double t_star_minrisk = 0.0;
  double risk_at_balance = 0.0;
  double risk_at_minrisk = 0.0;
  bool balance_found = false;   // false: bias^2 - variance has no sign change
  bool minrisk_interior = false;
};

/// Balance time where bias^2 = variance (first sign change of bias^2 - variance,
/// refined by linear interpolation between the bracketing grid points), and the
/// grid argmin of risk. Without a sign change the balance time is the grid
/// boundary toward which the difference shrinks, flagged by `balance_found`.
inline StoppingTimes optimal_stopping(const RiskCurve& curve) {
  const std::size_t n = curve.size();
  detail::require(n >= 2, "optimal_stopping: curve needs at least two points");
  StoppingTimes out;

  std::size_t best = 0;
  for (std::size_t i = 1; i < n; ++i)
    if (curve.risk[i] < curve.risk[best]) best = i;
  out.t_star_minrisk = curve.t[best];
  out.risk_at_minrisk = curve.risk[best];
  out.minrisk_interior = best > 0 && best + 1 < n;

  auto diff = [&](std::size_t i) { return curve.bias_sq[i] - curve.variance[i]; };
  for (std::size_t i = 1; i < n; ++i) {
    const double d0 = diff(i - 1), d1 = diff(i);
    if (d0 == 0.0) {
      out.balance_found = true;
      out.t_star_balance = curve.t[i - 1];
      out.risk_at_balance = curve.risk[i - 1];
      return out;
    }
    if ((d0 > 0.0) != (d1 > 0.0) || d1 == 0.0) {
      const double w = d0 / (d0 - d1);
      out.balance_found = true;
      out.t_star_balance = curve.t[i - 1] + w * (curve.t[i] - curve.t[i - 1]);
      out.risk_at_balance = curve.risk[i - 1] + w * (curve.risk[i] - curve.risk[i - 1]);
      return out;
    }
  }
  const std::size_t edge = std::abs(diff(0)) < std::abs(diff(n - 1)) ? 0 : n - 1;
  out.t_star_balance = curve.t[edge];
  out.risk_at_balance = curve.risk[edge];
  return out;
}

}  // namespace sgflow
