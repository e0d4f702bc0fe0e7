#pragma once

// Fixed-design regression problems: synthetic designs, responses, SNR scaling
// and JSON (de)serialization.

#include <cmath>
#include <cstdint>
#include <optional>
#include <random>
#include <string>

#include <Eigen/Dense>
#include <json.hpp>

#include "sgflow/errors.hpp"
#include "sgflow/rng.hpp"
#include "sgflow/spectral.hpp"

namespace sgflow {

enum class DesignFamily { gaussian, student_t, bernoulli };

inline std::string to_string(DesignFamily f) {
  switch (f) {
    case DesignFamily::gaussian: return "gaussian";
    case DesignFamily::student_t: return "student_t";
    case DesignFamily::bernoulli: return "bernoulli";
  }
  return "gaussian";
}

inline DesignFamily design_family_from_string(const std::string& name) {
  if (name == "gaussian") return DesignFamily::gaussian;
  if (name == "student_t") return DesignFamily::student_t;
  if (name == "bernoulli") return DesignFamily::bernoulli;
  throw ValidationError("unknown design family '" + name + "'");
}

struct DesignSpec {
  Eigen::Index n = 1;
  Eigen::Index p = 1;
  DesignFamily family = DesignFamily::gaussian;
  double df = 5.0;     // student_t degrees of freedom
  double prob = 0.5;   // bernoulli success probability
  double rho = 0.0;    // equicorrelation of the population covariance
  std::uint64_t seed = 0;

  void validate() const {
    detail::require(n >= 1 && p >= 1, "design: n and p must be >= 1");
    detail::require(rho >= 0.0 && rho < 1.0, "design: rho must lie in [0, 1)");
    if (family == DesignFamily::student_t)
      detail::require(df > 2.0, "design: student_t needs df > 2 for finite variance");
    if (family == DesignFamily::bernoulli)
      detail::require(prob > 0.0 && prob < 1.0, "design: bernoulli prob must lie in (0, 1)");
  }
};

/// Population covariance with unit diagonal and constant off-diagonal rho.
inline Eigen::MatrixXd equicorrelation(Eigen::Index p, double rho) {
  Eigen::MatrixXd sigma = Eigen::MatrixXd::Constant(p, p, rho);
  sigma.diagonal().setOnes();
  return sigma;
}

/// X = W Sigma^{1/2} (rows x_i = Sigma^{1/2} w_i) with W i.i.d. from the
/// family, standardized to mean 0 and variance 1. Entries are drawn row by row.
inline Eigen::MatrixXd generate_design(const DesignSpec& spec) {
  spec.validate();
  Rng rng(derive_seed(spec.seed, Stream::design));
  Eigen::MatrixXd w(spec.n, spec.p);

  switch (spec.family) {
    case DesignFamily::gaussian:
      for (Eigen::Index i = 0; i < spec.n; ++i)
        for (Eigen::Index j = 0; j < spec.p; ++j) w(i, j) = rng.normal();
      break;
    case DesignFamily::student_t: {
      std::student_t_distribution<double> dist(spec.df);
      const double scale = std::sqrt((spec.df - 2.0) / spec.df);
      for (Eigen::Index i = 0; i < spec.n; ++i)
        for (Eigen::Index j = 0; j < spec.p; ++j) w(i, j) = scale * dist(rng.engine());
      break;
    }
    case DesignFamily::bernoulli: {
      const double q = spec.prob;
      const double sd = std::sqrt(q * (1.0 - q));
      for (Eigen::Index i = 0; i < spec.n; ++i)
        for (Eigen::Index j = 0; j < spec.p; ++j)
          w(i, j) = ((rng.uniform() < q ? 1.0 : 0.0) - q) / sd;
      break;
    }
  }

  if (spec.rho == 0.0) return w;
  const Eigen::MatrixXd root = psd_sqrt(equicorrelation(spec.p, spec.rho));
  return w * root;
}

/// Spectrum of the sample covariance X^T X / n.
inline Spectrum sample_covariance(const Eigen::MatrixXd& x,
                                  double zero_threshold = kDefaultZeroThreshold) {
  detail::require(x.allFinite(), "sample_covariance: X has non-finite entries");
  detail::require(x.rows() >= 1, "sample_covariance: X has no rows");
  const double n = static_cast<double>(x.rows());
  Eigen::MatrixXd cov = x.transpose() * x / n;
  cov = 0.5 * (cov + cov.transpose());
  return sym_eig(cov, zero_threshold);
}

/// y = X beta0 + sigma z with z i.i.d. standard normal.
inline Eigen::VectorXd generate_response(const Eigen::MatrixXd& x, const Eigen::VectorXd& beta0,
                                         double sigma, std::uint64_t seed) {
  detail::require(x.cols() == beta0.size(), "generate_response: dimension mismatch");
  detail::require(sigma >= 0.0, "generate_response: sigma must be >= 0");
  Eigen::VectorXd y = x * beta0;
  if (sigma == 0.0) return y;
  Rng rng(seed);
  for (Eigen::Index i = 0; i < y.size(); ++i) y[i] += sigma * rng.normal();
  return y;
}

/// Rescales beta0_raw so that ||X beta0||^2 / (n sigma^2) equals target_snr.
inline Eigen::VectorXd scale_to_snr(const Eigen::VectorXd& beta0_raw, const Eigen::MatrixXd& x,
                                    double sigma, double target_snr) {
  detail::require(x.cols() == beta0_raw.size(), "scale_to_snr: dimension mismatch");
  detail::require(sigma > 0.0, "scale_to_snr: sigma must be > 0");
  detail::require(target_snr > 0.0, "scale_to_snr: target_snr must be > 0");
  const double signal = (x * beta0_raw).squaredNorm();
  if (!(signal > 0.0)) throw ValidationError("scale_to_snr: degenerate signal (X beta0 = 0)");
  const double n = static_cast<double>(x.rows());
  const double c = std::sqrt(target_snr * n * sigma * sigma / signal);
  return c * beta0_raw;
}

inline double snr(const Eigen::VectorXd& beta0, const Eigen::MatrixXd& x, double sigma) {
  return (x * beta0).squaredNorm() / (static_cast<double>(x.rows()) * sigma * sigma);
}

/// A fixed-design linear model y = X beta0 + eta, eta ~ (0, sigma^2 I), with
/// the sample-covariance spectrum cached.
struct RegressionProblem {
  Eigen::MatrixXd x;
  Eigen::VectorXd y;
  Eigen::VectorXd beta0;
  double sigma = 0.0;
  Spectrum spectrum;

  // Provenance, carried through serialization when known.
  std::optional<DesignSpec> design;
  std::optional<double> target_snr;

  RegressionProblem() = default;

  RegressionProblem(Eigen::MatrixXd x_in, Eigen::VectorXd y_in, Eigen::VectorXd beta0_in,
                    double sigma_in)
      : x(std::move(x_in)), y(std::move(y_in)), beta0(std::move(beta0_in)), sigma(sigma_in) {
    detail::require(x.rows() == y.size(), "problem: X rows must match y length");
    detail::require(x.cols() == beta0.size(), "problem: X cols must match beta0 length");
    detail::require(sigma >= 0.0, "problem: sigma must be >= 0");
    spectrum = sample_covariance(x);
  }

  Eigen::Index n() const { return x.rows(); }
  Eigen::Index p() const { return x.cols(); }

  /// Same design and model, different realized response.
  RegressionProblem with_response(Eigen::VectorXd new_y) const {
    detail::require(new_y.size() == n(), "with_response: length mismatch");
    RegressionProblem out = *this;
    out.y = std::move(new_y);
    return out;
  }

  Eigen::MatrixXd sample_cov() const { return x.transpose() * x / static_cast<double>(n()); }
};

/// Design from `spec`, beta0 ~ N(0, I) scaled to `target_snr`, and one noisy
/// response, each from its own derived stream of `spec.seed`.
inline RegressionProblem make_problem(const DesignSpec& spec, double sigma, double target_snr) {
  Eigen::MatrixXd x = generate_design(spec);
  Rng coef_rng(derive_seed(spec.seed, Stream::coefficients));
  Eigen::VectorXd raw = coef_rng.normal_vector(spec.p);
  Eigen::VectorXd beta0 = sigma > 0.0 ? scale_to_snr(raw, x, sigma, target_snr) : raw;
  Eigen::VectorXd y = generate_response(x, beta0, sigma, derive_seed(spec.seed, Stream::response));
  RegressionProblem problem(std::move(x), std::move(y), std::move(beta0), sigma);
  problem.design = spec;
  problem.target_snr = target_snr;
  return problem;
}

// ---------------------------------------------------------------------------
// JSON
//
// {n, p, family, rho, seed, sigma, snr, beta0: [...], X: row-major [...], y: [...]}

inline nlohmann::json to_json(const RegressionProblem& problem) {
  nlohmann::json j;
  j["n"] = problem.n();
  j["p"] = problem.p();
  if (problem.design) {
    j["family"] = to_string(problem.design->family);
    j["rho"] = problem.design->rho;
    j["seed"] = problem.design->seed;
    if (problem.design->family == DesignFamily::student_t) j["df"] = problem.design->df;
    if (problem.design->family == DesignFamily::bernoulli) j["prob"] = problem.design->prob;
  } else {
    j["family"] = nullptr;
    j["rho"] = nullptr;
    j["seed"] = nullptr;
  }
  j["sigma"] = problem.sigma;
  j["snr"] = problem.target_snr ? nlohmann::json(*problem.target_snr) : nlohmann::json(nullptr);
  j["beta0"] = std::vector<double>(problem.beta0.data(), problem.beta0.data() + problem.p());
  std::vector<double> rows;
  rows.reserve(static_cast<std::size_t>(problem.n() * problem.p()));
  for (Eigen::Index i = 0; i < problem.n(); ++i)
    for (Eigen::Index k = 0; k < problem.p(); ++k) rows.push_back(problem.x(i, k));
  j["X"] = std::move(rows);
  j["y"] = std::vector<double>(problem.y.data(), problem.y.data() + problem.n());
  return j;
}

inline RegressionProblem problem_from_json(const nlohmann::json& j) {
  try {
    const auto n = j.at("n").get<Eigen::Index>();
    const auto p = j.at("p").get<Eigen::Index>();
    const auto xs = j.at("X").get<std::vector<double>>();
    const auto ys = j.at("y").get<std::vector<double>>();
    const auto bs = j.at("beta0").get<std::vector<double>>();
    detail::require(static_cast<Eigen::Index>(xs.size()) == n * p, "problem json: X size != n*p");
    detail::require(static_cast<Eigen::Index>(ys.size()) == n, "problem json: y size != n");
    detail::require(static_cast<Eigen::Index>(bs.size()) == p, "problem json: beta0 size != p");
    Eigen::MatrixXd x(n, p);
    for (Eigen::Index i = 0; i < n; ++i)
      for (Eigen::Index k = 0; k < p; ++k) x(i, k) = xs[static_cast<std::size_t>(i * p + k)];
    RegressionProblem problem(std::move(x), Eigen::Map<const Eigen::VectorXd>(ys.data(), n),
                              Eigen::Map<const Eigen::VectorXd>(bs.data(), p),
                              j.at("sigma").get<double>());
    if (j.contains("family") && !j["family"].is_null()) {
      DesignSpec spec;
      spec.n = n;
      spec.p = p;
      spec.family = design_family_from_string(j["family"].get<std::string>());
      spec.rho = j.value("rho", 0.0);
      spec.seed = j.value("seed", std::uint64_t{0});
      spec.df = j.value("df", 5.0);
      spec.prob = j.value("prob", 0.5);
      problem.design = spec;
    }
    if (j.contains("snr") && !j["snr"].is_null()) problem.target_snr = j["snr"].get<double>();
    return problem;
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("problem json: ") + e.what());
  }
}

}  // namespace sgflow
