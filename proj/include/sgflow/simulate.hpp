#pragma once

// Stochastic dynamics for least squares: mini-batch SGD, the Euler-discretized
// stochastic gradient flow (state-dependent and constant diffusion), the
// univariate GBM/OU pair, and seeded Monte Carlo ensembles.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "sgflow/errors.hpp"
#include "sgflow/parallel.hpp"
#include "sgflow/problem.hpp"
#include "sgflow/rng.hpp"
#include "sgflow/spectral.hpp"

namespace sgflow {

// Mini-batches are always drawn with replacement; the enum keeps that explicit.
enum class Sampling { with_replacement };

struct SgdConfig {
  double epsilon = 0.01;
  Eigen::Index batch_size = 1;
  long long iterations = 0;
  Sampling sampling = Sampling::with_replacement;
  std::uint64_t seed = 0;

  void validate(Eigen::Index n) const {
    detail::require(epsilon > 0.0, "sgd config: epsilon must be > 0");
    detail::require(batch_size >= 1 && batch_size <= n, "sgd config: batch size must lie in [1, n]");
    detail::require(iterations >= 0, "sgd config: iterations must be >= 0");
  }
};

enum class TrajectoryKind { sgd, euler_sgf, const_cov_sgf };

inline std::string to_string(TrajectoryKind kind) {
  switch (kind) {
    case TrajectoryKind::sgd: return "sgd";
    case TrajectoryKind::euler_sgf: return "euler_sgf";
    case TrajectoryKind::const_cov_sgf: return "const_cov_sgf";
  }
  return "sgd";
}

/// How the Euler step realizes a Gaussian with covariance eps * Q_eps(beta).
///
/// `symmetric_root` multiplies the PSD square root of Q_eps by a p-vector of
/// normals. `residual` uses the exact factor Q_eps = B^T B with
/// B = J diag(h) X * sqrt(eps / (n m)), J the centering matrix, and an
/// n-vector of normals; it skips the per-step eigendecomposition and yields
/// the same step distribution.
///
/// `residual_uncentered` drops the centering (J = I), which simulates the
/// process driven by the uncentered gradient second moment instead.
enum class NoiseFactor { symmetric_root, residual, residual_uncentered };

struct Trajectory {
  Eigen::MatrixXd states;  // (iterations + 1) x p, row 0 is the zero start
  SgdConfig config;
  TrajectoryKind kind = TrajectoryKind::sgd;

  double effective_time(Eigen::Index k) const { return static_cast<double>(k) * config.epsilon; }
};

namespace detail {

/// (eps / (n m)) X^T (diag(h)^2 - h h^T / n) X for residuals h.
inline Eigen::MatrixXd diffusion_from_residual(const Eigen::MatrixXd& x, const Eigen::VectorXd& h,
                                               double epsilon, Eigen::Index m) {
  const double n = static_cast<double>(x.rows());
  const Eigen::MatrixXd weighted = x.array().colwise() * h.array().square();
  const Eigen::VectorXd g = x.transpose() * h;
  Eigen::MatrixXd q = x.transpose() * weighted;
  q.noalias() -= g * g.transpose() / n;
  q *= epsilon / (n * static_cast<double>(m));
  return 0.5 * (q + q.transpose());
}

/// Trace of the positive part (eps / (n m)) sum_i h_i^2 ||x_i||^2; the scale
/// for deciding whether a negative eigenvalue is rounding or a real failure.
inline double diffusion_scale(const Eigen::MatrixXd& x, const Eigen::VectorXd& h, double epsilon,
                              Eigen::Index m) {
  return epsilon / (static_cast<double>(x.rows()) * static_cast<double>(m)) *
         h.array().square().matrix().dot(x.rowwise().squaredNorm());
}

/// Eigendecomposition of Q with rounding-level eigenvalues set to zero.
inline Spectrum clamped_spectrum(const Eigen::MatrixXd& q, double scale, const char* what) {
  Spectrum spec = sym_eig(q, 0.0);
  for (Eigen::Index i = 0; i < spec.dim(); ++i) {
    if (spec.eigenvalues[i] < -1e-10 * scale)
      throw NumericError(std::string(what) + ": diffusion is not PSD (eigenvalue " +
                         std::to_string(spec.eigenvalues[i]) + ")");
    if (spec.eigenvalues[i] <= 1e-10 * scale) spec.eigenvalues[i] = 0.0;
  }
  return spec;
}

}  // namespace detail

/// Q_eps(beta) = eps * Cov_I[(1/m) X_I^T (y_I - X_I beta)] for batches of size
/// m drawn with replacement.
inline Eigen::MatrixXd diffusion_coefficient(const RegressionProblem& problem,
                                             const Eigen::VectorXd& beta, double epsilon,
                                             Eigen::Index m) {
  detail::require(beta.size() == problem.p(), "diffusion_coefficient: beta has wrong length");
  detail::require(epsilon > 0.0 && m >= 1, "diffusion_coefficient: need epsilon > 0, m >= 1");
  const Eigen::VectorXd h = problem.y - problem.x * beta;
  Eigen::MatrixXd q = detail::diffusion_from_residual(problem.x, h, epsilon, m);
  const double scale = detail::diffusion_scale(problem.x, h, epsilon, m);
  if (scale > 0.0) detail::clamped_spectrum(q, scale, "diffusion_coefficient");
  return q;
}

// ---------------------------------------------------------------------------
// Steppers

class Stepper {
 public:
  virtual ~Stepper() = default;
  virtual void step() = 0;

  const Eigen::VectorXd& state() const { return beta_; }
  long long iteration() const { return k_; }

 protected:
  explicit Stepper(Eigen::Index p) : beta_(Eigen::VectorXd::Zero(p)) {}
  Eigen::VectorXd beta_;
  long long k_ = 0;
};

/// beta <- beta + (eps/m) X_I^T (y_I - X_I beta), I drawn uniformly with replacement.
class SgdStepper final : public Stepper {
 public:
  SgdStepper(const RegressionProblem& problem, double epsilon, Eigen::Index m, std::uint64_t seed)
      : Stepper(problem.p()),
        problem_(problem),
        xt_(problem.x.transpose()),
        epsilon_(epsilon),
        m_(m),
        rng_(seed),
        grad_(problem.p()) {}

  void step() override {
    grad_.setZero();
    const auto n = static_cast<std::size_t>(problem_.n());
    for (Eigen::Index j = 0; j < m_; ++j) {
      const auto i = static_cast<Eigen::Index>(rng_.index(n));
      const double r = problem_.y[i] - xt_.col(i).dot(beta_);
      grad_ += r * xt_.col(i);
    }
    beta_ += (epsilon_ / static_cast<double>(m_)) * grad_;
    ++k_;
  }

 private:
  const RegressionProblem& problem_;
  Eigen::MatrixXd xt_;
  double epsilon_;
  Eigen::Index m_;
  Rng rng_;
  Eigen::VectorXd grad_;
};

/// One Euler-Maruyama step of dB = (1/n) X^T (y - X B) dt + Q_eps(B)^{1/2} dW
/// with dt = eps:
///   beta <- beta + (eps/n) X^T h + sqrt(eps) Q_eps(beta)^{1/2} z.
/// Since Q_eps carries one factor of eps, the noise is eps Cov^{1/2} z and
/// iteration k sits at effective time k eps.
class EulerSgfStepper final : public Stepper {
 public:
  EulerSgfStepper(const RegressionProblem& problem, double epsilon, Eigen::Index m,
                  std::uint64_t seed, NoiseFactor factor = NoiseFactor::symmetric_root,
                  bool antithetic = false)
      : Stepper(problem.p()),
        problem_(problem),
        epsilon_(epsilon),
        m_(m),
        factor_(factor),
        sign_(antithetic ? -1.0 : 1.0),
        rng_(seed),
        draw_(factor == NoiseFactor::symmetric_root ? problem.p() : problem.n()) {}

  void step() override {
    rng_.fill_normal(draw_);
    step_with(draw_);
  }

  /// Length of the normal vector consumed per step.
  Eigen::Index noise_dim() const { return draw_.size(); }

  /// Step with caller-supplied normals (length p for symmetric_root, n otherwise).
  void step_with(const Eigen::VectorXd& z) {
    const Eigen::MatrixXd& x = problem_.x;
    const double n = static_cast<double>(problem_.n());
    residual_ = problem_.y - x * beta_;
    if (factor_ == NoiseFactor::symmetric_root) {
      detail::require(z.size() == problem_.p(), "euler step: noise must have length p");
      const Eigen::MatrixXd q = detail::diffusion_from_residual(x, residual_, epsilon_, m_);
      const Eigen::MatrixXd root = spectral_apply(
          detail::clamped_spectrum(q, detail::diffusion_scale(x, residual_, epsilon_, m_), "euler step"),
          PsdSqrt{});
      beta_ += (epsilon_ / n) * (x.transpose() * residual_);
      beta_ += (sign_ * std::sqrt(epsilon_)) * (root * z);
    } else {
      detail::require(z.size() == problem_.n(), "euler step: noise must have length n");
      const double scale = sign_ * epsilon_ / std::sqrt(n * static_cast<double>(m_));
      const double zbar = factor_ == NoiseFactor::residual ? z.mean() : 0.0;
      weights_ = residual_.array() * (epsilon_ / n + scale * (z.array() - zbar));
      beta_ += x.transpose() * weights_;
    }
    ++k_;
  }

  /// Residual y - X beta at the start of the last step.
  const Eigen::VectorXd& last_residual() const { return residual_; }

 private:
  const RegressionProblem& problem_;
  double epsilon_;
  Eigen::Index m_;
  NoiseFactor factor_;
  double sign_;
  Rng rng_;
  Eigen::VectorXd draw_;
  Eigen::VectorXd residual_;
  Eigen::VectorXd weights_;
};

/// Euler step of the constant-covariance process, diffusion ((eps/m) Sigma_hat)^{1/2}.
///
/// With a residual factor the noise is eps / sqrt(n m) X^T z for z in R^n,
/// which has the same law and lets a caller couple it to an Euler SGF path.
class ConstCovStepper final : public Stepper {
 public:
  ConstCovStepper(const RegressionProblem& problem, double epsilon, Eigen::Index m,
                  std::uint64_t seed, bool antithetic = false,
                  NoiseFactor factor = NoiseFactor::symmetric_root)
      : Stepper(problem.p()),
        problem_(problem),
        epsilon_(epsilon),
        m_(m),
        factor_(factor),
        sign_(antithetic ? -1.0 : 1.0),
        rng_(seed),
        draw_(factor == NoiseFactor::symmetric_root ? problem.p() : problem.n()) {
    if (factor_ == NoiseFactor::symmetric_root)
      root_ = std::sqrt(epsilon * epsilon / static_cast<double>(m)) *
              spectral_apply(problem.spectrum, PsdSqrt{});
  }

  void step() override {
    rng_.fill_normal(draw_);
    step_with(draw_);
  }

  Eigen::Index noise_dim() const { return draw_.size(); }

  void step_with(const Eigen::VectorXd& z) {
    const double n = static_cast<double>(problem_.n());
    const Eigen::VectorXd h = problem_.y - problem_.x * beta_;
    if (factor_ == NoiseFactor::symmetric_root) {
      detail::require(z.size() == problem_.p(), "const-cov step: noise must have length p");
      beta_ += (epsilon_ / n) * (problem_.x.transpose() * h);
      beta_ += sign_ * (root_ * z);
    } else {
      detail::require(z.size() == problem_.n(), "const-cov step: noise must have length n");
      const double scale = sign_ * epsilon_ / std::sqrt(n * static_cast<double>(m_));
      beta_ += problem_.x.transpose() * ((epsilon_ / n) * h + scale * z);
    }
    ++k_;
  }

 private:
  const RegressionProblem& problem_;
  double epsilon_;
  Eigen::Index m_;
  NoiseFactor factor_;
  Eigen::MatrixXd root_;  // sqrt(eps) * ((eps/m) Sigma_hat)^{1/2}
  double sign_;
  Rng rng_;
  Eigen::VectorXd draw_;
};

inline std::unique_ptr<Stepper> make_stepper(const RegressionProblem& problem, const SgdConfig& config,
                                             TrajectoryKind kind, std::uint64_t seed,
                                             NoiseFactor factor = NoiseFactor::symmetric_root,
                                             bool antithetic = false) {
  switch (kind) {
    case TrajectoryKind::sgd:
      return std::make_unique<SgdStepper>(problem, config.epsilon, config.batch_size, seed);
    case TrajectoryKind::euler_sgf:
      return std::make_unique<EulerSgfStepper>(problem, config.epsilon, config.batch_size, seed,
                                               factor, antithetic);
    case TrajectoryKind::const_cov_sgf:
      return std::make_unique<ConstCovStepper>(problem, config.epsilon, config.batch_size, seed,
                                               antithetic, factor);
  }
  throw ValidationError("unknown trajectory kind");
}

namespace detail {

inline Trajectory record(Stepper& stepper, const SgdConfig& config, TrajectoryKind kind,
                         Eigen::Index p) {
  Trajectory traj;
  traj.config = config;
  traj.kind = kind;
  traj.states.resize(config.iterations + 1, p);
  traj.states.row(0).setZero();
  for (long long k = 1; k <= config.iterations; ++k) {
    stepper.step();
    traj.states.row(k) = stepper.state().transpose();
  }
  return traj;
}

}  // namespace detail

/// Mini-batch SGD from zero; deterministic given config.seed.
inline Trajectory sgd_run(const RegressionProblem& problem, const SgdConfig& config) {
  config.validate(problem.n());
  SgdStepper stepper(problem, config.epsilon, config.batch_size, config.seed);
  return detail::record(stepper, config, TrajectoryKind::sgd, problem.p());
}

inline Trajectory euler_sgf_run(const RegressionProblem& problem, const SgdConfig& config,
                                NoiseFactor factor = NoiseFactor::symmetric_root) {
  config.validate(problem.n());
  EulerSgfStepper stepper(problem, config.epsilon, config.batch_size, config.seed, factor);
  return detail::record(stepper, config, TrajectoryKind::euler_sgf, problem.p());
}

inline Trajectory const_cov_run(const RegressionProblem& problem, const SgdConfig& config) {
  config.validate(problem.n());
  ConstCovStepper stepper(problem, config.epsilon, config.batch_size, config.seed);
  return detail::record(stepper, config, TrajectoryKind::const_cov_sgf, problem.p());
}

// ---------------------------------------------------------------------------
// Accumulators (mergeable, deterministic when merged in a fixed order)

/// Streaming mean and scatter matrix with Chan's pairwise merge.
struct MomentAccumulator {
  double count = 0.0;
  Eigen::VectorXd mean;
  Eigen::MatrixXd scatter;

  explicit MomentAccumulator(Eigen::Index p = 0)
      : mean(Eigen::VectorXd::Zero(p)), scatter(Eigen::MatrixXd::Zero(p, p)) {}

  void add(const Eigen::VectorXd& x) {
    count += 1.0;
    const Eigen::VectorXd delta = x - mean;
    mean += delta / count;
    scatter.noalias() += delta * (x - mean).transpose();
  }

  void merge(const MomentAccumulator& other) {
    if (other.count == 0.0) return;
    if (count == 0.0) {
      *this = other;
      return;
    }
    const double total = count + other.count;
    const Eigen::VectorXd delta = other.mean - mean;
    scatter += other.scatter + (count * other.count / total) * (delta * delta.transpose());
    mean += (other.count / total) * delta;
    count = total;
  }

  Eigen::MatrixXd covariance() const {
    Eigen::MatrixXd c = scatter / std::max(count - 1.0, 1.0);
    return 0.5 * (c + c.transpose());
  }
};

/// Streaming mean and variance of a scalar.
struct ScalarAccumulator {
  double count = 0.0;
  double mean = 0.0;
  double m2 = 0.0;

  void add(double x) {
    count += 1.0;
    const double delta = x - mean;
    mean += delta / count;
    m2 += delta * (x - mean);
  }

  void merge(const ScalarAccumulator& other) {
    if (other.count == 0.0) return;
    if (count == 0.0) {
      *this = other;
      return;
    }
    const double total = count + other.count;
    const double delta = other.mean - mean;
    m2 += other.m2 + delta * delta * count * other.count / total;
    mean += delta * other.count / total;
    count = total;
  }

  double variance() const { return count > 1.0 ? m2 / (count - 1.0) : 0.0; }
  double standard_error() const { return count > 0.0 ? std::sqrt(variance() / count) : 0.0; }
};

/// A fixed-length vector of scalar accumulators.
struct ScalarSeries {
  std::vector<ScalarAccumulator> items;

  explicit ScalarSeries(std::size_t n = 0) : items(n) {}

  void merge(const ScalarSeries& other) {
    for (std::size_t i = 0; i < items.size(); ++i) items[i].merge(other.items[i]);
  }
};

// ---------------------------------------------------------------------------
// Ensembles

struct EnsembleMoments {
  std::vector<long long> checkpoints;
  std::vector<Eigen::VectorXd> mean;
  std::vector<Eigen::MatrixXd> covariance;  // unbiased sample covariance
  std::size_t replicates = 0;
};

inline std::vector<long long> normalized_checkpoints(std::vector<long long> checkpoints) {
  detail::require(!checkpoints.empty(), "checkpoints: empty");
  std::sort(checkpoints.begin(), checkpoints.end());
  checkpoints.erase(std::unique(checkpoints.begin(), checkpoints.end()), checkpoints.end());
  detail::require(checkpoints.front() >= 0, "checkpoints: must be >= 0");
  return checkpoints;
}

/// Runs replicate r of `kind` with seed derive_seed(config.seed, replicate, r)
/// and calls visit(checkpoint_index, state) at each checkpoint.
template <class Visit>
void run_replicate(const RegressionProblem& problem, const SgdConfig& config, TrajectoryKind kind,
                   std::size_t replicate, const std::vector<long long>& checkpoints, Visit&& visit,
                   NoiseFactor factor = NoiseFactor::symmetric_root, bool antithetic = false) {
  auto stepper = make_stepper(problem, config, kind,
                              derive_seed(config.seed, Stream::replicate, replicate), factor,
                              antithetic);
  for (std::size_t c = 0; c < checkpoints.size(); ++c) {
    while (stepper->iteration() < checkpoints[c]) stepper->step();
    visit(c, stepper->state());
  }
}

/// Per-checkpoint sample mean and covariance over R independent trajectories.
inline EnsembleMoments monte_carlo(const RegressionProblem& problem, const SgdConfig& config,
                                   TrajectoryKind kind, std::size_t replicates,
                                   std::vector<long long> checkpoints,
                                   NoiseFactor factor = NoiseFactor::symmetric_root) {
  config.validate(problem.n());
  detail::require(replicates >= 2, "monte_carlo: need at least 2 replicates");
  checkpoints = normalized_checkpoints(std::move(checkpoints));

  struct Acc {
    std::vector<MomentAccumulator> per_checkpoint;
    void merge(const Acc& other) {
      for (std::size_t c = 0; c < per_checkpoint.size(); ++c)
        per_checkpoint[c].merge(other.per_checkpoint[c]);
    }
  };
  const Acc empty{std::vector<MomentAccumulator>(checkpoints.size(), MomentAccumulator(problem.p()))};

  const Acc total = blocked_reduce(replicates, empty, [&](std::size_t begin, std::size_t end, Acc& acc) {
    for (std::size_t r = begin; r < end; ++r)
      run_replicate(problem, config, kind, r, checkpoints,
                    [&](std::size_t c, const Eigen::VectorXd& beta) { acc.per_checkpoint[c].add(beta); },
                    factor);
  });

  EnsembleMoments out;
  out.checkpoints = checkpoints;
  out.replicates = replicates;
  for (const auto& acc : total.per_checkpoint) {
    out.mean.push_back(acc.mean);
    out.covariance.push_back(acc.covariance());
  }
  return out;
}

// ---------------------------------------------------------------------------
// Univariate responseless example

struct UnivariateConfig {
  std::vector<double> x;
  double epsilon = 0.01;
  Eigen::Index batch_size = 1;
  double beta_init = 1.0;
  long long iterations = 1000;
  std::uint64_t seed = 0;
  std::size_t replicates = 1000;
};

struct ProcessSummary {
  double terminal_mean = 0.0;
  double terminal_variance = 0.0;
};

struct UnivariatePaths {
  std::vector<double> sgd, gbm, ou;  // replicate 0, iterations + 1 entries each
  double g = 0.0;                    // mean of x_i^2
  double theta = 0.0;                // sqrt(eps g / m)
  ProcessSummary sgd_summary, gbm_summary, ou_summary;
};

/// Responseless 1-D least squares: SGD beta_k = (1 - eps G_k) beta_{k-1}, and
/// Euler paths (dt = eps) of the geometric Brownian motion
/// dB = -G B dt + theta B dW and the Ornstein-Uhlenbeck process
/// dB = -G B dt + theta dW.
inline UnivariatePaths univariate_paths(const UnivariateConfig& config) {
  const auto n = static_cast<Eigen::Index>(config.x.size());
  detail::require(n >= 1, "univariate: need data");
  detail::require(config.beta_init != 0.0, "univariate: initial point must be nonzero");
  detail::require(config.epsilon > 0.0 && config.epsilon < 1.0, "univariate: need 0 < eps < 1");
  detail::require(config.batch_size >= 1 && config.batch_size <= n, "univariate: batch size in [1, n]");
  detail::require(config.replicates >= 2, "univariate: need at least 2 replicates");

  std::vector<double> sq(config.x.size());
  double g = 0.0;
  for (std::size_t i = 0; i < sq.size(); ++i) {
    sq[i] = config.x[i] * config.x[i];
    g += sq[i];
  }
  g /= static_cast<double>(n);
  const double eps = config.epsilon;
  const double m = static_cast<double>(config.batch_size);
  const double theta = std::sqrt(eps * g / m);
  const double root_dt = std::sqrt(eps);

  // Each replicate uses three independent streams.
  auto simulate = [&](std::size_t r, std::vector<double>* sgd, std::vector<double>* gbm,
                      std::vector<double>* ou) {
    Rng batch_rng(derive_seed(config.seed, Stream::replicate, 3 * r));
    Rng gbm_rng(derive_seed(config.seed, Stream::replicate, 3 * r + 1));
    Rng ou_rng(derive_seed(config.seed, Stream::replicate, 3 * r + 2));
    double b_sgd = config.beta_init, b_gbm = config.beta_init, b_ou = config.beta_init;
    if (sgd) sgd->push_back(b_sgd);
    if (gbm) gbm->push_back(b_gbm);
    if (ou) ou->push_back(b_ou);
    for (long long k = 1; k <= config.iterations; ++k) {
      double gk = 0.0;
      for (Eigen::Index j = 0; j < config.batch_size; ++j)
        gk += sq[batch_rng.index(static_cast<std::size_t>(n))];
      gk /= m;
      b_sgd -= eps * gk * b_sgd;
      b_gbm += -eps * g * b_gbm + root_dt * theta * b_gbm * gbm_rng.normal();
      b_ou += -eps * g * b_ou + root_dt * theta * ou_rng.normal();
      if (sgd) sgd->push_back(b_sgd);
      if (gbm) gbm->push_back(b_gbm);
      if (ou) ou->push_back(b_ou);
    }
    return std::array<double, 3>{b_sgd, b_gbm, b_ou};
  };

  UnivariatePaths out;
  out.g = g;
  out.theta = theta;
  simulate(0, &out.sgd, &out.gbm, &out.ou);

  struct Acc {
    std::array<ScalarAccumulator, 3> items{};
    void merge(const Acc& other) {
      for (std::size_t i = 0; i < 3; ++i) items[i].merge(other.items[i]);
    }
  };
  const Acc total = blocked_reduce(config.replicates, Acc{}, [&](std::size_t begin, std::size_t end, Acc& acc) {
    for (std::size_t r = begin; r < end; ++r) {
      const auto terminal = simulate(r, nullptr, nullptr, nullptr);
      for (std::size_t i = 0; i < 3; ++i) acc.items[i].add(terminal[i]);
    }
  });
  out.sgd_summary = {total.items[0].mean, total.items[0].variance()};
  out.gbm_summary = {total.items[1].mean, total.items[1].variance()};
  out.ou_summary = {total.items[2].mean, total.items[2].variance()};
  return out;
}

}  // namespace sgflow
