#pragma once

// Exact first and second moments of mini-batch SGD over batch randomness,
// the moment-matching harness, and exact SGD risk curves.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "sgflow/errors.hpp"
#include "sgflow/parallel.hpp"
#include "sgflow/problem.hpp"
#include "sgflow/risk.hpp"
#include "sgflow/rng.hpp"
#include "sgflow/simulate.hpp"

namespace sgflow {

struct MomentState {
  long long k = 0;
  Eigen::VectorXd mean;
  Eigen::MatrixXd cov;
};

/// How the response enters the covariance recursion.
///  realized: conditional on the problem's y.
///  noise_averaged: the recursion for E_eta Cov_Z given y = X beta0 + eta,
///    eta ~ (0, sigma^2 I). Since the recursion is linear in the covariance and
///    its forcing is quadratic in y, this is exact, not a bound.
enum class ResponseMode { realized, noise_averaged };

/// Covariance recursion run in the row space of X.
///
/// Every iterate lies in the span of the nonzero-eigenvalue eigenvectors V_r of
/// the sample covariance, so Cov = V_r M V_r^T with M of size rank x rank. With
/// Z = X V_r, S = diag(s), g the gradient-descent residual, a_i = z_i^T M z_i
/// and h = Z^T g, one step is
///   M <- M .* [(1 - eps s_j)(1 - eps s_l) - (eps^2/m) s_j s_l]
///        + (eps^2/(m n)) Z^T diag(g^2 + a) Z - (eps^2/(m n^2)) h h^T.
class MomentRecursion {
 public:
  MomentRecursion(const RegressionProblem& problem, double epsilon, Eigen::Index m,
                  ResponseMode mode = ResponseMode::realized)
      : epsilon_(epsilon), m_(static_cast<double>(m)), n_(static_cast<double>(problem.n())), mode_(mode) {
    detail::require(epsilon > 0.0, "moments: epsilon must be > 0");
    detail::require(m >= 1 && m <= problem.n(), "moments: batch size must lie in [1, n]");
    basis_ = problem.spectrum.range_basis();
    s_ = problem.spectrum.range_eigenvalues();
    const Eigen::Index r = s_.size();
    z_ = problem.x * basis_;
    row_norms_ = z_.rowwise().squaredNorm();
    y_ = problem.y;
    zty_ = z_.transpose() * problem.y / n_;
    c_ = Eigen::VectorXd::Zero(r);
    m_cov_ = Eigen::MatrixXd::Zero(r, r);
    factor_.resize(r, r);
    for (Eigen::Index j = 0; j < r; ++j)
      for (Eigen::Index l = 0; l < r; ++l)
        factor_(j, l) = (1.0 - epsilon * s_[j]) * (1.0 - epsilon * s_[l]) -
                        epsilon * epsilon / m_ * s_[j] * s_[l];
    if (mode_ == ResponseMode::noise_averaged) {
      sigma_sq_ = problem.sigma * problem.sigma;
      signal_ = problem.x * problem.beta0;
      zt_signal_ = z_.transpose() * signal_;
      // Orthonormal basis of col(X): U_r = Z diag(1 / sqrt(n s)).
      u_ = z_ * (n_ * s_).cwiseSqrt().cwiseInverse().asDiagonal();
      ut_signal_ = u_.transpose() * signal_;
      contraction_ = Eigen::VectorXd::Ones(r);
    }
  }

  void step() {
    const double e2 = epsilon_ * epsilon_;
    Eigen::VectorXd g_sq;
    Eigen::MatrixXd h_outer;
    if (mode_ == ResponseMode::realized) {
      const Eigen::VectorXd g = residual();
      const Eigen::VectorXd h = z_.transpose() * g;
      g_sq = g.array().square();
      h_outer = h * h.transpose();
    } else {
      // g = A y with A = I - U_r diag(1 - phi) U_r^T and phi = (1 - eps s)^k.
      // E g g^T = (A b)(A b)^T + sigma^2 A^2 with b = X beta0 and
      // A^2 = I - U_r diag(1 - phi^2) U_r^T; also Z^T A b = phi .* Z^T b and
      // Z^T A^2 Z = n S diag(phi^2).
      const Eigen::VectorXd one_minus = Eigen::VectorXd::Ones(s_.size()) - contraction_;
      const Eigen::VectorXd ab = signal_ - u_ * one_minus.cwiseProduct(ut_signal_);
      const Eigen::VectorXd shrink = Eigen::VectorXd::Ones(s_.size()) - contraction_.cwiseAbs2();
      const Eigen::VectorXd lever = u_.array().square().matrix() * shrink;
      g_sq = ab.array().square() + sigma_sq_ * (1.0 - lever.array());
      const Eigen::VectorXd zab = contraction_.cwiseProduct(zt_signal_);
      h_outer = zab * zab.transpose();
      h_outer.diagonal() += sigma_sq_ * n_ * s_.cwiseProduct(contraction_.cwiseAbs2());
    }
    const Eigen::VectorXd a = (z_ * m_cov_).cwiseProduct(z_).rowwise().sum();
    const Eigen::VectorXd weights = g_sq + a;
    scale_ = std::max(scale_, (e2 / (m_ * n_)) * weights.dot(row_norms_));
    Eigen::MatrixXd next = m_cov_.cwiseProduct(factor_);
    next.noalias() += (e2 / (m_ * n_)) * (z_.transpose() * weights.asDiagonal() * z_);
    next.noalias() -= (e2 / (m_ * n_ * n_)) * h_outer;
    m_cov_ = 0.5 * (next + next.transpose());

    // Gradient-descent mean: c <- c + eps (Z^T y / n - S c).
    c_ += epsilon_ * (zty_ - s_.cwiseProduct(c_));
    if (mode_ == ResponseMode::noise_averaged)
      contraction_ = contraction_.cwiseProduct(Eigen::VectorXd::Ones(s_.size()) - epsilon_ * s_);
    ++k_;
  }

  void advance_to(long long k) {
    detail::require(k >= k_, "moments: cannot step backwards");
    while (k_ < k) step();
  }

  long long iteration() const { return k_; }
  Eigen::VectorXd mean() const { return basis_ * c_; }
  Eigen::MatrixXd covariance() const {
    Eigen::MatrixXd cov = basis_ * m_cov_ * basis_.transpose();
    return 0.5 * (cov + cov.transpose());
  }
  double covariance_trace() const { return m_cov_.trace(); }
  /// tr(Cov Sigma_hat), the in-sample batching variance.
  double weighted_trace() const { return m_cov_.diagonal().dot(s_); }
  MomentState state() const { return {k_, mean(), covariance()}; }

  /// Throws NumericError if the covariance is non-finite or has an eigenvalue
  /// below -1e-10 times its trace (or the largest per-step forcing, when the
  /// true covariance is near zero and only rounding remains).
  void check_psd() const {
    if (!m_cov_.allFinite())
      throw NumericError("moments: covariance overflowed at k = " + std::to_string(k_) +
                         "; step size too large for stability");
    const double tol = 1e-10 * std::max(m_cov_.trace(), scale_);
    if (m_cov_.size() == 0 || tol == 0.0) return;
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(m_cov_, Eigen::EigenvaluesOnly);
    const double low = solver.eigenvalues().minCoeff();
    if (low < -tol)
      throw NumericError("moments: covariance lost positive semidefiniteness at k = " +
                         std::to_string(k_) + " (eigenvalue " + std::to_string(low) +
                         "); step size too large for stability");
  }

 private:
  Eigen::VectorXd residual() const { return y_ - z_ * c_; }

  double epsilon_, m_, n_;
  ResponseMode mode_;
  Eigen::MatrixXd basis_, z_, m_cov_, factor_, u_;
  Eigen::VectorXd s_, zty_, c_, signal_, zt_signal_, ut_signal_, contraction_;
  Eigen::VectorXd y_, row_norms_;
  double sigma_sq_ = 0.0;
  double scale_ = 0.0;
  long long k_ = 0;
};

/// Exact moments of SGD at iteration k (PSD checked at k).
inline MomentState exact_sgd_moments(const RegressionProblem& problem, const SgdConfig& config,
                                     long long k) {
  config.validate(problem.n());
  detail::require(k >= 0, "exact_sgd_moments: k must be >= 0");
  MomentRecursion rec(problem, config.epsilon, config.batch_size);
  rec.advance_to(k);
  rec.check_psd();
  return rec.state();
}

/// Exact moments at each checkpoint (sorted, deduplicated).
inline std::vector<MomentState> exact_sgd_moments(const RegressionProblem& problem,
                                                  const SgdConfig& config,
                                                  std::vector<long long> checkpoints) {
  config.validate(problem.n());
  checkpoints = normalized_checkpoints(std::move(checkpoints));
  MomentRecursion rec(problem, config.epsilon, config.batch_size);
  std::vector<MomentState> out;
  for (long long k : checkpoints) {
    rec.advance_to(k);
    rec.check_psd();
    out.push_back(rec.state());
  }
  return out;
}

// ---------------------------------------------------------------------------
// Moment matching

struct MomentMatchEntry {
  TrajectoryKind kind = TrajectoryKind::sgd;
  long long checkpoint = 0;
  double max_mean_z = 0.0;  // max |standardized deviation| over mean entries
  double max_cov_z = 0.0;   // and over upper-triangular covariance entries
  bool pass = true;
};

struct MomentMatchReport {
  double z_threshold = 4.0;
  std::size_t replicates = 0;
  std::vector<MomentMatchEntry> entries;
  bool pass = true;

  nlohmann::json to_json() const {
    nlohmann::json j;
    j["z_threshold"] = z_threshold;
    j["replicates"] = replicates;
    j["pass"] = pass;
    j["entries"] = nlohmann::json::array();
    for (const auto& e : entries)
      j["entries"].push_back({{"kind", to_string(e.kind)},
                              {"checkpoint", e.checkpoint},
                              {"max_mean_z", e.max_mean_z},
                              {"max_cov_z", e.max_cov_z},
                              {"pass", e.pass}});
    return j;
  }
};

namespace detail {

/// Sums of d, d d^T and (d d^T)^2 for deviations d from a known mean.
struct CenteredSums {
  double count = 0.0;
  Eigen::VectorXd d;
  Eigen::MatrixXd dd, dd2;

  explicit CenteredSums(Eigen::Index p = 0)
      : d(Eigen::VectorXd::Zero(p)), dd(Eigen::MatrixXd::Zero(p, p)), dd2(Eigen::MatrixXd::Zero(p, p)) {}

  void add(const Eigen::VectorXd& dev) {
    count += 1.0;
    d += dev;
    const Eigen::MatrixXd outer = dev * dev.transpose();
    dd += outer;
    dd2 += outer.cwiseAbs2();
  }

  void merge(const CenteredSums& o) {
    count += o.count;
    d += o.d;
    dd += o.dd;
    dd2 += o.dd2;
  }
};

inline double standardized(double diff, double se, double scale) {
  if (se > 0.0) return std::abs(diff) / se;
  return std::abs(diff) <= 1e-12 * std::max(scale, 1.0) ? 0.0 : std::numeric_limits<double>::infinity();
}

}  // namespace detail

/// Compares Monte Carlo ensembles of SGD and Euler SGF with the exact moments.
///
/// Deviations are taken from the exact mean. A mean entry's standard error is
/// sqrt(C_aa / R) with C the exact covariance; a covariance entry is estimated
/// by the average of d_a d_b with standard error sd(d_a d_b) / sqrt(R).
inline MomentMatchReport moment_match_report(const RegressionProblem& problem, const SgdConfig& config,
                                             std::vector<long long> checkpoints, std::size_t replicates,
                                             double z_threshold = 4.0,
                                             NoiseFactor factor = NoiseFactor::symmetric_root,
                                             bool antithetic = false) {
  detail::require(replicates >= 100, "moment_match_report: need at least 100 replicates");
  detail::require(z_threshold > 0.0, "moment_match_report: z threshold must be > 0");
  checkpoints = normalized_checkpoints(std::move(checkpoints));
  const auto exact = exact_sgd_moments(problem, config, checkpoints);
  const Eigen::Index p = problem.p();

  MomentMatchReport report;
  report.z_threshold = z_threshold;
  report.replicates = replicates;

  for (TrajectoryKind kind : {TrajectoryKind::sgd, TrajectoryKind::euler_sgf}) {
    struct Acc {
      std::vector<detail::CenteredSums> per;
      void merge(const Acc& o) {
        for (std::size_t c = 0; c < per.size(); ++c) per[c].merge(o.per[c]);
      }
    };
    const Acc empty{std::vector<detail::CenteredSums>(checkpoints.size(), detail::CenteredSums(p))};
    const Acc total = blocked_reduce(replicates, empty, [&](std::size_t begin, std::size_t end, Acc& acc) {
      for (std::size_t r = begin; r < end; ++r)
        run_replicate(
            problem, config, kind, r, checkpoints,
            [&](std::size_t c, const Eigen::VectorXd& beta) { acc.per[c].add(beta - exact[c].mean); },
            factor, antithetic && kind == TrajectoryKind::euler_sgf);
    });

    const double rr = static_cast<double>(replicates);
    for (std::size_t c = 0; c < checkpoints.size(); ++c) {
      const auto& sums = total.per[c];
      const Eigen::MatrixXd& cov = exact[c].cov;
      const double scale = cov.cwiseAbs().maxCoeff() + exact[c].mean.cwiseAbs().maxCoeff();
      MomentMatchEntry entry;
      entry.kind = kind;
      entry.checkpoint = checkpoints[c];
      for (Eigen::Index a = 0; a < p; ++a) {
        const double se = std::sqrt(std::max(cov(a, a), 0.0) / rr);
        entry.max_mean_z = std::max(entry.max_mean_z, detail::standardized(sums.d[a] / rr, se, scale));
        for (Eigen::Index b = a; b < p; ++b) {
          const double est = sums.dd(a, b) / rr;
          const double second = sums.dd2(a, b) / rr;
          const double var = std::max(second - est * est, 0.0) * rr / (rr - 1.0);
          const double z = detail::standardized(est - cov(a, b), std::sqrt(var / rr), scale);
          entry.max_cov_z = std::max(entry.max_cov_z, z);
        }
      }
      entry.pass = entry.max_mean_z <= z_threshold && entry.max_cov_z <= z_threshold;
      report.pass = report.pass && entry.pass;
      report.entries.push_back(entry);
    }
  }
  return report;
}

// ---------------------------------------------------------------------------
// Exact SGD risk

struct SgdRiskOptions {
  std::size_t eta_draws = 30;           // Monte Carlo draws of the response noise
  ResponseMode averaging = ResponseMode::realized;  // noise_averaged: exact E_eta, no draws
  RiskScope scope = RiskScope::estimation;
  std::uint64_t seed = 0;
};

/// Risk of SGD at each checkpoint: Bias^2(gd) + Var_eta(gd) + E_eta tr Cov_Z,
/// reported at t = k eps.
///
/// With `averaging = realized` the batching term is averaged over `eta_draws`
/// responses y = X beta0 + sigma z (draw d seeded by derive_seed(seed, eta, d)),
/// and its standard error is reported as `var_batch_se`. With
/// `noise_averaged` the expectation is computed exactly.
inline RiskCurve sgd_risk_exact(const RegressionProblem& problem, const SgdConfig& config,
                                std::vector<long long> checkpoints, const SgdRiskOptions& options = {}) {
  config.validate(problem.n());
  checkpoints = normalized_checkpoints(std::move(checkpoints));
  const std::size_t nc = checkpoints.size();
  const bool in_sample = options.scope == RiskScope::in_sample;

  auto batch_term = [&](const MomentRecursion& rec) {
    return in_sample ? rec.weighted_trace() : rec.covariance_trace();
  };

  std::vector<double> mean(nc, 0.0), se(nc, 0.0);
  if (options.averaging == ResponseMode::noise_averaged) {
    MomentRecursion rec(problem, config.epsilon, config.batch_size, ResponseMode::noise_averaged);
    for (std::size_t c = 0; c < nc; ++c) {
      rec.advance_to(checkpoints[c]);
      rec.check_psd();
      mean[c] = batch_term(rec);
    }
  } else {
    detail::require(options.eta_draws >= 1, "sgd_risk_exact: need at least one eta draw");
    const Eigen::VectorXd signal = problem.x * problem.beta0;
    const ScalarSeries total = blocked_reduce(
        options.eta_draws, ScalarSeries(nc),
        [&](std::size_t begin, std::size_t end, ScalarSeries& acc) {
          for (std::size_t d = begin; d < end; ++d) {
            const Eigen::VectorXd y =
                generate_response(problem.x, problem.beta0, problem.sigma,
                                  derive_seed(options.seed, Stream::eta, d));
            const RegressionProblem draw = problem.with_response(y);
            MomentRecursion rec(draw, config.epsilon, config.batch_size);
            for (std::size_t c = 0; c < nc; ++c) {
              rec.advance_to(checkpoints[c]);
              rec.check_psd();
              acc.items[c].add(batch_term(rec));
            }
          }
        },
        1);
    for (std::size_t c = 0; c < nc; ++c) {
      mean[c] = total.items[c].mean;
      se[c] = total.items[c].standard_error();
    }
  }

  RiskCurve curve;
  curve.estimator = "sgd_exact";
  std::vector<double> var_eta, var_batch, var_batch_se;
  for (std::size_t c = 0; c < nc; ++c) {
    const auto gd = gd_risk(problem, config.epsilon, checkpoints[c], options.scope);
    curve.push(static_cast<double>(checkpoints[c]) * config.epsilon, gd.bias_sq, gd.variance + mean[c]);
    var_eta.push_back(gd.variance);
    var_batch.push_back(mean[c]);
    var_batch_se.push_back(se[c]);
  }
  curve.component("var_eta") = std::move(var_eta);
  curve.component("var_batch") = std::move(var_batch);
  if (options.averaging == ResponseMode::realized) curve.component("var_batch_se") = std::move(var_batch_se);
  return curve;
}

}  // namespace sgflow
