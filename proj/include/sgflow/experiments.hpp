#pragma once

// Named experiments behind the command-line runner: configuration handling
// (defaults, file, overrides) and the studies that produce curve tables.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "sgflow/closed_form.hpp"
#include "sgflow/errors.hpp"
#include "sgflow/io.hpp"
#include "sgflow/moments.hpp"
#include "sgflow/problem.hpp"
#include "sgflow/risk.hpp"
#include "sgflow/simulate.hpp"
#include "sgflow/theory.hpp"

namespace sgflow::experiments {

using nlohmann::json;

class ConfigError : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

inline const std::vector<std::string>& names() {
  static const std::vector<std::string> all = {"paths",       "contour1d",      "g_curve", "risk_curves",
                                               "coeff_error", "verify_moments", "ratios"};
  return all;
}

// ---------------------------------------------------------------------------
// Configuration

namespace detail {

inline json problem_defaults(long long n, long long p, double rho) {
  return {{"n", n},         {"p", p},         {"family", "gaussian"}, {"df", 5.0},
          {"prob", 0.5},    {"rho", rho},     {"sigma", 1.0},         {"snr", 1.0},
          {"beta0_in_row_space", false}};
}

inline json sgd_defaults(json epsilon, long long m, long long iterations) {
  return {{"epsilon", std::move(epsilon)}, {"safety", 0.9}, {"batch_size", m}, {"iterations", iterations}};
}

inline json lambda_grid_defaults() {
  return {{"lambda_min", std::ldexp(1.0, -15)}, {"lambda_max", std::ldexp(1.0, 15)}, {"count", 200}};
}

inline std::string type_name(const json& j) {
  if (j.is_number()) return "number";
  return j.type_name();
}

inline bool compatible(const json& slot, const json& value) {
  if (slot.is_null()) return value.is_null() || value.is_number();  // nullable number: null means automatic
  if (slot.is_number()) return value.is_number();
  if (slot.is_boolean()) return value.is_boolean();
  if (slot.is_string()) return value.is_string();
  if (slot.is_array()) return value.is_array();
  return false;
}

inline std::vector<std::string> split_path(const std::string& path) {
  std::vector<std::string> parts;
  std::size_t start = 0;
  for (;;) {
    const std::size_t dot = path.find('.', start);
    parts.push_back(path.substr(start, dot - start));
    if (parts.back().empty()) throw ConfigError("config: malformed field path '" + path + "'");
    if (dot == std::string::npos) break;
    start = dot + 1;
  }
  return parts;
}

}  // namespace detail

/// Default configuration of an experiment; every accepted field appears here.
inline json defaults(const std::string& experiment) {
  using detail::lambda_grid_defaults;
  using detail::problem_defaults;
  using detail::sgd_defaults;
  json c;
  if (experiment == "paths") {
    c = {{"problem", problem_defaults(50, 10, 0.0)},
         {"sgd", sgd_defaults(0.01, 10, 10000)},
         {"grid", lambda_grid_defaults()},
         {"noise_factor", "residual"}};
  } else if (experiment == "contour1d") {
    c = {{"problem", problem_defaults(3, 2, 0.0)},
         {"sgd", sgd_defaults(0.01, 2, 1000)},
         {"noise_factor", "symmetric_root"},
         {"contour", {{"points", 41}}},
         {"univariate", {{"x", {0.5, 1.0, 1.5}}, {"beta_init", 1.0}, {"horizon", 20.0}, {"replicates", 10000}}}};
  } else if (experiment == "g_curve") {
    c = {{"g_curve", {{"mu", 1.0}, {"L", 1.0}, {"t_min", 1e-3}, {"t_max", 1e3}, {"points", 10000}}}};
  } else if (experiment == "risk_curves" || experiment == "ratios") {
    c = {{"problem", problem_defaults(100, 500, 0.5)},
         {"sgd", sgd_defaults(nullptr, 20, 0)},
         {"grid", lambda_grid_defaults()},
         {"scope", "estimation"},
         {"sgd_exact", {{"t_max", 20.0}, {"averaging", "noise_averaged"}, {"eta_draws", 30}}}};
  } else if (experiment == "coeff_error") {
    c = {{"problem", problem_defaults(40, 80, 0.0)},
         {"sgd", sgd_defaults(nullptr, 10, 0)},
         {"grid", {{"t_min", 0.01}, {"t_max", 10.0}, {"count", 20}}},
         {"mc", {{"eta_draws", 30}, {"replicates", 500}, {"noise_factor", "residual"}}}};
  } else if (experiment == "verify_moments") {
    c = {{"problem", problem_defaults(50, 10, 0.0)},
         {"sgd", sgd_defaults(0.01, 10, 0)},
         {"mc", {{"replicates", 20000}, {"checkpoints", {10, 100, 500}}, {"z", 4.0},
                 {"noise_factor", "symmetric_root"}, {"antithetic", false}}}};
  } else {
    throw ConfigError("config: unknown experiment '" + experiment + "'");
  }
  c["experiment"] = experiment;
  c["seed"] = 0;
  c["out"] = "out";
  return c;
}

namespace detail {

inline void merge_into(json& base, const json& schema, const json& overlay, const std::string& path) {
  if (!overlay.is_object())
    throw ConfigError(path.empty() ? "config: top level must be a JSON object"
                                   : "config: field '" + path + "' must be an object");
  for (auto it = overlay.begin(); it != overlay.end(); ++it) {
    const std::string key = path.empty() ? it.key() : path + "." + it.key();
    if (!schema.contains(it.key())) throw ConfigError("config: unknown field '" + key + "'");
    const json& kind = schema[it.key()];
    json& slot = base[it.key()];
    if (kind.is_object()) {
      merge_into(slot, kind, it.value(), key);
    } else {
      if (key == "experiment" && it.value() != slot)
        throw ConfigError("config: field 'experiment' is '" + it.value().dump() + "' but the command runs '" +
                          slot.get<std::string>() + "'");
      if (!compatible(kind, it.value()))
        throw ConfigError("config: field '" + key + "' expects " +
                          (kind.is_null() ? std::string("a number or null") : type_name(kind)) + ", got " +
                          type_name(it.value()));
      slot = it.value();
    }
  }
}

}  // namespace detail

/// Overlays `overlay` onto `base`. Unknown fields and type mismatches are
/// rejected with their dotted field path; types come from the experiment's
/// defaults, so a nullable field accepts null again after holding a number.
inline void merge_config(json& base, const json& overlay) {
  const auto exp = base.find("experiment");
  const json schema = exp != base.end() && exp->is_string() ? defaults(exp->get<std::string>()) : base;
  detail::merge_into(base, schema, overlay, "");
}

/// Applies "a.b.c=value"; the value is parsed as JSON, or taken as a string.
inline void apply_override(json& config, const std::string& assignment) {
  const std::size_t eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0)
    throw ConfigError("config: override '" + assignment + "' must have the form key=value");
  const std::string path = assignment.substr(0, eq);
  const std::string text = assignment.substr(eq + 1);
  json value = json::parse(text, nullptr, false);
  if (value.is_discarded()) value = text;
  const auto parts = detail::split_path(path);
  json overlay = value;
  for (auto it = parts.rbegin(); it != parts.rend(); ++it) overlay = json{{*it, overlay}};
  merge_config(config, overlay);
}

/// defaults < file < overrides < explicit flags.
inline json resolve_config(const std::string& experiment, const std::optional<json>& file,
                           const std::vector<std::string>& overrides, std::optional<std::uint64_t> seed,
                           std::optional<std::string> out) {
  json config = defaults(experiment);
  if (file) merge_config(config, *file);
  for (const auto& o : overrides) apply_override(config, o);
  if (seed) config["seed"] = *seed;
  if (out) config["out"] = *out;
  return config;
}

// Typed field access; fields exist because configs start from defaults.

inline const json& field(const json& config, const std::string& path) {
  const json* node = &config;
  for (const auto& part : detail::split_path(path)) {
    if (!node->is_object() || !node->contains(part)) throw ConfigError("config: missing field '" + path + "'");
    node = &(*node)[part];
  }
  return *node;
}

inline double number(const json& config, const std::string& path) {
  const json& v = field(config, path);
  if (!v.is_number()) throw ConfigError("config: field '" + path + "' must be a number");
  return v.get<double>();
}

inline std::optional<double> optional_number(const json& config, const std::string& path) {
  const json& v = field(config, path);
  if (v.is_null()) return std::nullopt;
  return number(config, path);
}

inline long long integer(const json& config, const std::string& path, long long min_value) {
  const double v = number(config, path);
  if (v != std::floor(v) || v < static_cast<double>(min_value) || v > 9.0e15)
    throw ConfigError("config: field '" + path + "' must be an integer >= " + std::to_string(min_value));
  return static_cast<long long>(v);
}

inline std::string text(const json& config, const std::string& path) {
  const json& v = field(config, path);
  if (!v.is_string()) throw ConfigError("config: field '" + path + "' must be a string");
  return v.get<std::string>();
}

inline bool flag(const json& config, const std::string& path) {
  const json& v = field(config, path);
  if (!v.is_boolean()) throw ConfigError("config: field '" + path + "' must be true or false");
  return v.get<bool>();
}

inline std::vector<double> numbers(const json& config, const std::string& path) {
  const json& v = field(config, path);
  std::vector<double> out;
  for (const auto& e : v) {
    if (!e.is_number()) throw ConfigError("config: field '" + path + "' must be an array of numbers");
    out.push_back(e.get<double>());
  }
  return out;
}

inline std::uint64_t seed_of(const json& config) {
  const json& v = field(config, "seed");
  if (!v.is_number_integer() || (v.is_number_integer() && !v.is_number_unsigned() && v.get<long long>() < 0))
    throw ConfigError("config: field 'seed' must be a non-negative integer");
  return v.get<std::uint64_t>();
}

template <class Parse>
auto checked(const std::string& path, Parse&& parse) {
  try {
    return parse();
  } catch (const ConfigError&) {
    throw;
  } catch (const ValidationError& e) {
    throw ConfigError("config: field '" + path + "': " + e.what());
  }
}

inline NoiseFactor noise_factor(const json& config, const std::string& path) {
  const std::string name = text(config, path);
  if (name == "symmetric_root") return NoiseFactor::symmetric_root;
  if (name == "residual") return NoiseFactor::residual;
  if (name == "residual_uncentered") return NoiseFactor::residual_uncentered;
  throw ConfigError("config: field '" + path + "' must be symmetric_root, residual or residual_uncentered");
}

inline RiskScope scope_of(const json& config, const std::string& path) {
  const std::string name = text(config, path);
  if (name == "estimation") return RiskScope::estimation;
  if (name == "in_sample") return RiskScope::in_sample;
  throw ConfigError("config: field '" + path + "' must be estimation or in_sample");
}

inline ResponseMode averaging_of(const json& config, const std::string& path) {
  const std::string name = text(config, path);
  if (name == "noise_averaged") return ResponseMode::noise_averaged;
  if (name == "realized") return ResponseMode::realized;
  throw ConfigError("config: field '" + path + "' must be noise_averaged or realized");
}

/// Problem from the "problem" section, with design seed = config seed.
inline RegressionProblem build_problem(const json& config) {
  DesignSpec spec;
  spec.n = integer(config, "problem.n", 1);
  spec.p = integer(config, "problem.p", 1);
  spec.family = checked("problem.family", [&] { return design_family_from_string(text(config, "problem.family")); });
  spec.df = number(config, "problem.df");
  spec.prob = number(config, "problem.prob");
  spec.rho = number(config, "problem.rho");
  spec.seed = seed_of(config);
  checked("problem", [&] { spec.validate(); return 0; });
  const double sigma = number(config, "problem.sigma");
  const double target = number(config, "problem.snr");
  if (sigma < 0.0) throw ConfigError("config: field 'problem.sigma' must be >= 0");
  if (target <= 0.0) throw ConfigError("config: field 'problem.snr' must be > 0");
  RegressionProblem pr = make_problem(spec, sigma, target);
  if (flag(config, "problem.beta0_in_row_space")) {
    const Eigen::MatrixXd basis = pr.spectrum.range_basis();
    Eigen::VectorXd beta0 = basis * (basis.transpose() * pr.beta0);
    if (sigma > 0.0) beta0 = scale_to_snr(beta0, pr.x, sigma, target);
    const Eigen::VectorXd y = generate_response(pr.x, beta0, sigma, derive_seed(spec.seed, Stream::response));
    pr.beta0 = beta0;
    pr.y = y;
  }
  return pr;
}

/// SGD settings; a null epsilon is chosen from the loss-contraction limit.
inline SgdConfig build_sgd(const json& config, const RegressionProblem& pr) {
  SgdConfig c;
  c.batch_size = integer(config, "sgd.batch_size", 1);
  if (c.batch_size > pr.n()) throw ConfigError("config: field 'sgd.batch_size' must be <= problem.n");
  c.iterations = integer(config, "sgd.iterations", 0);
  c.seed = seed_of(config);
  if (const auto eps = optional_number(config, "sgd.epsilon")) {
    if (*eps <= 0.0) throw ConfigError("config: field 'sgd.epsilon' must be > 0");
    c.epsilon = *eps;
  } else {
    const double safety = number(config, "sgd.safety");
    c.epsilon = checked("sgd.safety", [&] { return choose_epsilon(pr, c.batch_size, safety); });
  }
  return c;
}

inline PathGrid build_lambda_grid(const json& config) {
  const double lo = number(config, "grid.lambda_min"), hi = number(config, "grid.lambda_max");
  const auto count = integer(config, "grid.count", 2);
  return checked("grid", [&] { return lambda_log_grid(lo, hi, static_cast<std::size_t>(count)); });
}

// ---------------------------------------------------------------------------
// Studies

/// t, lambda, beta_1..beta_p for an estimator evaluated along a grid.
template <class Estimator>
Table path_table(const PathGrid& grid, Eigen::Index p, Estimator&& estimate) {
  Table table;
  table.columns = {"t", "lambda"};
  for (Eigen::Index j = 0; j < p; ++j) table.columns.push_back("beta_" + std::to_string(j + 1));
  for (double t : grid.times) {
    const Eigen::VectorXd b = estimate(t);
    std::vector<double> row = {t, 1.0 / t};
    for (Eigen::Index j = 0; j < p; ++j) row.push_back(b[j]);
    table.rows.push_back(std::move(row));
  }
  return table;
}

/// Ridge-form bound along a grid. bias_sq is the ridge bias, variance the
/// inflated ridge variance plus the mini-batch term, risk the bound itself.
inline RiskCurve bound_curve(const RegressionProblem& pr, const TheoryConstants& k, const PathGrid& grid,
                             RiskScope scope = RiskScope::estimation) {
  RiskCurve curve;
  curve.estimator = "sgf_bound";
  const bool relative = pr.sigma > 0.0 && pr.beta0.norm() > 0.0 && scope == RiskScope::estimation;
  const double nan = std::numeric_limits<double>::quiet_NaN();
  std::vector<double> inflated, minibatch, gf_bound, excess, rel_gf, rel_ridge, rel_gf_proven, rel_ridge_proven;
  for (double t : grid.times) {
    const auto b = sgf_risk_bound(pr, k, t, scope);
    curve.push(t, b.ridge.bias_sq, b.ridge.variance + b.ridge.minibatch);
    inflated.push_back(b.ridge.variance);
    minibatch.push_back(b.ridge.minibatch);
    gf_bound.push_back(b.gf.total);
    excess.push_back(excess_risk_bound(pr, k, t, scope));
    if (relative) {
      const auto printed = relative_risk_bound(pr, k, t, DecayExponent::printed);
      const auto proven = relative_risk_bound(pr, k, t, DecayExponent::proven);
      rel_gf.push_back(printed.gf_form);
      rel_ridge.push_back(printed.ridge_form);
      rel_gf_proven.push_back(proven.gf_form);
      rel_ridge_proven.push_back(proven.ridge_form);
    } else {
      for (auto* v : {&rel_gf, &rel_ridge, &rel_gf_proven, &rel_ridge_proven}) v->push_back(nan);
    }
  }
  curve.component("ridge_variance_inflated") = std::move(inflated);
  curve.component("minibatch") = std::move(minibatch);
  curve.component("gf_bound") = std::move(gf_bound);
  curve.component("excess") = std::move(excess);
  curve.component("relative_gf") = std::move(rel_gf);
  curve.component("relative_ridge") = std::move(rel_ridge);
  curve.component("relative_gf_proven") = std::move(rel_gf_proven);
  curve.component("relative_ridge_proven") = std::move(rel_ridge_proven);
  return curve;
}

struct RiskStudy {
  SgdConfig sgd;
  TheoryConstants constants;
  RiskCurve ridge, gf, gd, sgd_exact, bound;
};

struct SgdExactOptions {
  double t_max = 20.0;
  SgdRiskOptions risk;
};

/// Iteration counts aligned with grid times up to t_max (k = round(t / eps)),
/// with the grid time each count was first matched to.
inline std::pair<std::vector<long long>, std::vector<double>> aligned_checkpoints(const PathGrid& grid,
                                                                                  double epsilon,
                                                                                  double t_max) {
  std::vector<long long> ks;
  std::vector<double> ts;
  for (double t : grid.times) {
    if (t > t_max) break;
    const auto k = std::llround(t / epsilon);
    if (!ks.empty() && ks.back() == k) continue;
    ks.push_back(k);
    ts.push_back(t);
  }
  return {ks, ts};
}

inline RiskStudy risk_study(const RegressionProblem& pr, const SgdConfig& sgd, const PathGrid& grid,
                            const SgdExactOptions& exact, RiskScope scope = RiskScope::estimation) {
  RiskStudy s;
  s.sgd = sgd;
  s.constants = loss_constants(pr, sgd.epsilon, sgd.batch_size);
  s.ridge = ridge_curve(pr, grid, scope);
  s.gf = gf_curve(pr, grid, scope);
  s.gd = gd_curve(pr, grid, sgd.epsilon, scope);
  s.bound = bound_curve(pr, s.constants, grid, scope);
  auto [ks, ts] = aligned_checkpoints(grid, sgd.epsilon, exact.t_max);
  if (ks.empty()) throw ConfigError("config: field 'sgd_exact.t_max' is below the first grid time");
  SgdRiskOptions opt = exact.risk;
  opt.scope = scope;
  s.sgd_exact = sgd_risk_exact(pr, sgd, ks, opt);
  std::vector<double> mismatch;
  for (std::size_t i = 0; i < ts.size(); ++i) mismatch.push_back(s.sgd_exact.t[i] - ts[i]);
  s.sgd_exact.component("t_grid") = ts;
  s.sgd_exact.component("t_mismatch") = std::move(mismatch);
  return s;
}

inline json stopping_json(const StoppingTimes& s) {
  return {{"t_star_balance", s.t_star_balance}, {"risk_at_balance", s.risk_at_balance},
          {"balance_found", s.balance_found},   {"t_star_minrisk", s.t_star_minrisk},
          {"risk_at_minrisk", s.risk_at_minrisk}, {"minrisk_interior", s.minrisk_interior}};
}

struct RatioSummary {
  double max_bound_ratio_ridge_form = 0.0;
  double max_bound_ratio_gf_form = 0.0;
  double max_sgd_ridge_ratio = 0.0;
  double optimal_risk_ratio = 0.0;    // at balance times when both curves balance, else at minimal risk
  bool optimal_uses_balance = false;
  double minrisk_ratio = 0.0;
  StoppingTimes sgd_stop, ridge_stop;

  json to_json() const {
    return {{"max_bound_ridge_ratio_ridge_form", max_bound_ratio_ridge_form},
            {"max_bound_ridge_ratio_gf_form", max_bound_ratio_gf_form},
            {"max_sgd_ridge_ratio", max_sgd_ridge_ratio},
            {"optimal_risk_ratio", optimal_risk_ratio},
            {"optimal_rule", optimal_uses_balance ? "balance" : "min_risk"},
            {"minrisk_ratio", minrisk_ratio},
            {"sgd_stopping", stopping_json(sgd_stop)},
            {"ridge_stopping", stopping_json(ridge_stop)}};
  }
};

inline RatioSummary ratio_summary(const RegressionProblem& pr, const RiskStudy& s,
                                  RiskScope scope = RiskScope::estimation) {
  RatioSummary r;
  const auto* gf_bound = s.bound.find_component("gf_bound");
  for (std::size_t i = 0; i < s.bound.size(); ++i) {
    r.max_bound_ratio_ridge_form = std::max(r.max_bound_ratio_ridge_form, s.bound.risk[i] / s.ridge.risk[i]);
    r.max_bound_ratio_gf_form = std::max(r.max_bound_ratio_gf_form, (*gf_bound)[i] / s.ridge.risk[i]);
  }
  for (std::size_t i = 0; i < s.sgd_exact.size(); ++i) {
    const double t = s.sgd_exact.t[i];
    if (t <= 0.0) continue;
    r.max_sgd_ridge_ratio = std::max(r.max_sgd_ridge_ratio, s.sgd_exact.risk[i] / ridge_risk(pr, 1.0 / t, scope).risk());
  }
  r.sgd_stop = optimal_stopping(s.sgd_exact);
  r.ridge_stop = optimal_stopping(s.ridge);
  r.optimal_uses_balance = r.sgd_stop.balance_found && r.ridge_stop.balance_found;
  r.minrisk_ratio = r.sgd_stop.risk_at_minrisk / r.ridge_stop.risk_at_minrisk;
  r.optimal_risk_ratio = r.optimal_uses_balance ? r.sgd_stop.risk_at_balance / r.ridge_stop.risk_at_balance
                                                : r.minrisk_ratio;
  return r;
}

/// Monte Carlo of Euler SGF over response draws and replicates, against the
/// coefficient-error and ridge-form risk bounds.
struct CoefficientStudy {
  std::vector<double> t;
  std::vector<long long> k;
  std::vector<double> coef_bound, coef_mc, coef_se;
  std::vector<double> risk_bound_ridge, risk_bound_gf, risk_mc, risk_se;

  Table table() const {
    Table out;
    out.columns = {"t",        "lambda",        "iter",         "coef_bound",       "coef_mc", "coef_mc_se",
                   "risk_bound_ridge", "risk_bound_gf", "risk_mc", "risk_mc_se"};
    for (std::size_t i = 0; i < t.size(); ++i)
      out.rows.push_back({t[i], 1.0 / t[i], static_cast<double>(k[i]), coef_bound[i], coef_mc[i], coef_se[i],
                          risk_bound_ridge[i], risk_bound_gf[i], risk_mc[i], risk_se[i]});
    return out;
  }
};

/// Standard errors come from the spread of per-draw means, since replicates
/// sharing a response draw are correlated.
inline CoefficientStudy coefficient_study(const RegressionProblem& pr, const SgdConfig& sgd,
                                          const std::vector<double>& times, std::size_t eta_draws,
                                          std::size_t replicates, NoiseFactor factor) {
  sgflow::detail::require(eta_draws >= 2 && replicates >= 1, "coefficient_study: need >= 2 draws and >= 1 replicate");
  const auto k = loss_constants(pr, sgd.epsilon, sgd.batch_size);
  CoefficientStudy out;
  std::vector<long long> ks;
  for (double t : times) {
    const auto kk = std::max<long long>(1, std::llround(t / sgd.epsilon));
    sgflow::detail::require(ks.empty() || kk > ks.back(), "coefficient_study: times too close for the step size");
    ks.push_back(kk);
  }
  std::vector<RegressionProblem> draws;
  std::vector<std::vector<Eigen::VectorXd>> ridges(eta_draws);
  std::vector<SgdConfig> configs(eta_draws, sgd);
  for (std::size_t d = 0; d < eta_draws; ++d) {
    draws.push_back(pr.with_response(
        generate_response(pr.x, pr.beta0, pr.sigma, derive_seed(sgd.seed, Stream::eta, d))));
    configs[d].seed = derive_seed(sgd.seed, Stream::replicate, d);
    for (long long kk : ks) ridges[d].push_back(ridge(draws[d], 1.0 / (static_cast<double>(kk) * sgd.epsilon)));
  }

  const std::size_t nc = ks.size();
  struct Acc {
    std::vector<ScalarSeries> coef, risk;  // per draw
    void merge(const Acc& o) {
      for (std::size_t d = 0; d < coef.size(); ++d) {
        coef[d].merge(o.coef[d]);
        risk[d].merge(o.risk[d]);
      }
    }
  };
  const Acc empty{std::vector<ScalarSeries>(eta_draws, ScalarSeries(nc)),
                  std::vector<ScalarSeries>(eta_draws, ScalarSeries(nc))};
  const Acc total = blocked_reduce(eta_draws * replicates, empty, [&](std::size_t begin, std::size_t end, Acc& acc) {
    for (std::size_t i = begin; i < end; ++i) {
      const std::size_t d = i / replicates, r = i % replicates;
      run_replicate(draws[d], configs[d], TrajectoryKind::euler_sgf, r, ks,
                    [&](std::size_t c, const Eigen::VectorXd& beta) {
                      acc.coef[d].items[c].add((beta - ridges[d][c]).squaredNorm());
                      acc.risk[d].items[c].add((beta - pr.beta0).squaredNorm());
                    },
                    factor);
    }
  });

  for (std::size_t c = 0; c < nc; ++c) {
    ScalarAccumulator coef, risk;
    for (std::size_t d = 0; d < eta_draws; ++d) {
      coef.add(total.coef[d].items[c].mean);
      risk.add(total.risk[d].items[c].mean);
    }
    const double t = static_cast<double>(ks[c]) * sgd.epsilon;
    const auto b = sgf_risk_bound(pr, k, t);
    out.t.push_back(t);
    out.k.push_back(ks[c]);
    out.coef_bound.push_back(coefficient_error_bound(pr, k, t));
    out.coef_mc.push_back(coef.mean);
    out.coef_se.push_back(coef.standard_error());
    out.risk_bound_ridge.push_back(b.ridge.total);
    out.risk_bound_gf.push_back(b.gf.total);
    out.risk_mc.push_back(risk.mean);
    out.risk_se.push_back(risk.standard_error());
  }
  return out;
}

struct GCurve {
  std::vector<double> t, g;
  double max_value = 0.0;
  double argmax = 0.0;
};

inline GCurve g_curve(double mu, double big_l, double t_min, double t_max, std::size_t points) {
  GCurve out;
  for (double t : time_log_grid(t_min, t_max, points).times) {
    const double g = g_of_t(t, mu, big_l);
    out.t.push_back(t);
    out.g.push_back(g);
    if (g > out.max_value) {
      out.max_value = g;
      out.argmax = t;
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Runner

/// Collects emitted files under one directory.
class Output {
 public:
  explicit Output(std::filesystem::path dir) : dir_(std::move(dir)) {}

  void csv(const std::string& name, const Table& table) {
    write_csv(dir_ / name, table);
    files_.push_back(name);
  }
  void json_file(const std::string& name, const json& j) {
    write_json(dir_ / name, j);
    files_.push_back(name);
  }
  const std::vector<std::string>& files() const { return files_; }
  const std::filesystem::path& dir() const { return dir_; }

 private:
  std::filesystem::path dir_;
  std::vector<std::string> files_;
};

namespace detail {

inline Table gd_path_table(const RegressionProblem& pr, const SgdConfig& sgd) {
  Trajectory traj;
  traj.config = sgd;
  traj.states.resize(sgd.iterations + 1, pr.p());
  Eigen::VectorXd beta = Eigen::VectorXd::Zero(pr.p());
  traj.states.row(0) = beta.transpose();
  const double scale = sgd.epsilon / static_cast<double>(pr.n());
  for (long long k = 1; k <= sgd.iterations; ++k) {
    beta += scale * pr.x.transpose() * (pr.y - pr.x * beta);
    traj.states.row(k) = beta.transpose();
  }
  return trajectory_table(traj);
}

inline json run_paths(const json& config, Output& out) {
  const auto pr = build_problem(config);
  const auto sgd = build_sgd(config, pr);
  const auto grid = build_lambda_grid(config);
  const auto factor = noise_factor(config, "noise_factor");
  out.csv("ridge_path.csv", path_table(grid, pr.p(), [&](double t) { return ridge(pr, 1.0 / t); }));
  out.csv("gf_path.csv", path_table(grid, pr.p(), [&](double t) { return gradient_flow(pr, t); }));
  out.csv("gd_path.csv", gd_path_table(pr, sgd));
  const auto sgd_traj = sgd_run(pr, sgd);
  const auto sgf_traj = euler_sgf_run(pr, sgd, factor);
  out.csv("sgd_path.csv", trajectory_table(sgd_traj));
  out.csv("sgf_path.csv", trajectory_table(sgf_traj));
  const double t_end = static_cast<double>(sgd.iterations) * sgd.epsilon;
  json summary = {{"epsilon", sgd.epsilon}, {"iterations", sgd.iterations}, {"t_final", t_end}};
  if (t_end > 0.0) {
    const Eigen::VectorXd r = ridge(pr, 1.0 / t_end);
    summary["final_distance_to_ridge"] = {
        {"sgd", (sgd_traj.states.bottomRows(1).transpose() - r).norm()},
        {"sgf", (sgf_traj.states.bottomRows(1).transpose() - r).norm()},
        {"gf", (gradient_flow(pr, t_end) - r).norm()}};
  }
  return summary;
}

inline json run_contour1d(const json& config, Output& out) {
  const auto pr = build_problem(config);
  const auto sgd = build_sgd(config, pr);
  const auto factor = noise_factor(config, "noise_factor");
  out.csv("sgd_path.csv", trajectory_table(sgd_run(pr, sgd)));
  out.csv("sgf_path.csv", trajectory_table(euler_sgf_run(pr, sgd, factor)));
  out.csv("const_sgf_path.csv", trajectory_table(const_cov_run(pr, sgd)));

  if (pr.p() == 2) {
    const auto points = integer(config, "contour.points", 2);
    const Eigen::VectorXd centre = min_norm_solution(pr);
    const double half = std::max(1.0, 1.5 * centre.norm());
    Table contour;
    contour.columns = {"beta_1", "beta_2", "loss"};
    for (long long i = 0; i < points; ++i)
      for (long long j = 0; j < points; ++j) {
        Eigen::Vector2d b;
        b << centre[0] - half + 2.0 * half * static_cast<double>(i) / static_cast<double>(points - 1),
            centre[1] - half + 2.0 * half * static_cast<double>(j) / static_cast<double>(points - 1);
        const double loss = (pr.y - pr.x * b).squaredNorm() / (2.0 * static_cast<double>(pr.n()));
        contour.rows.push_back({b[0], b[1], loss});
      }
    out.csv("loss_contour.csv", contour);
  }

  UnivariateConfig uc;
  uc.x = numbers(config, "univariate.x");
  uc.epsilon = sgd.epsilon;
  uc.batch_size = sgd.batch_size;
  uc.beta_init = number(config, "univariate.beta_init");
  uc.seed = sgd.seed;
  uc.replicates = static_cast<std::size_t>(integer(config, "univariate.replicates", 2));
  double g = 0.0;
  for (double x : uc.x) g += x * x;
  if (uc.x.empty() || g <= 0.0) throw ConfigError("config: field 'univariate.x' must contain a nonzero value");
  g /= static_cast<double>(uc.x.size());
  const double horizon = number(config, "univariate.horizon");
  if (horizon <= 0.0) throw ConfigError("config: field 'univariate.horizon' must be > 0");
  uc.iterations = std::llround(horizon / (g * uc.epsilon));
  const auto paths = checked("univariate", [&] { return univariate_paths(uc); });

  Table uni;
  uni.columns = {"iter", "t_effective", "sgd", "gbm", "ou"};
  for (std::size_t k = 0; k < paths.sgd.size(); ++k)
    uni.rows.push_back({static_cast<double>(k), static_cast<double>(k) * uc.epsilon, paths.sgd[k], paths.gbm[k],
                        paths.ou[k]});
  out.csv("univariate.csv", uni);
  const double ou_limit = uc.epsilon / (2.0 * static_cast<double>(uc.batch_size));
  Table term;
  term.columns = {"t_final",  "sgd_mean", "sgd_variance", "gbm_mean", "gbm_variance",
                  "ou_mean",  "ou_variance", "ou_limit",  "initial_sq"};
  term.rows.push_back({static_cast<double>(uc.iterations) * uc.epsilon, paths.sgd_summary.terminal_mean,
                       paths.sgd_summary.terminal_variance, paths.gbm_summary.terminal_mean,
                       paths.gbm_summary.terminal_variance, paths.ou_summary.terminal_mean,
                       paths.ou_summary.terminal_variance, ou_limit, uc.beta_init * uc.beta_init});
  out.csv("terminal_variance.csv", term);
  return {{"epsilon", sgd.epsilon},
          {"univariate_iterations", uc.iterations},
          {"ou_terminal_variance", paths.ou_summary.terminal_variance},
          {"ou_limit", ou_limit},
          {"gbm_terminal_variance", paths.gbm_summary.terminal_variance}};
}

inline json run_g_curve(const json& config, Output& out) {
  const double mu = number(config, "g_curve.mu"), big_l = number(config, "g_curve.L");
  const double t_min = number(config, "g_curve.t_min"), t_max = number(config, "g_curve.t_max");
  const auto points = integer(config, "g_curve.points", 2);
  const auto curve = checked("g_curve", [&] {
    return g_curve(mu, big_l, t_min, t_max, static_cast<std::size_t>(points));
  });
  Table table;
  table.columns = {"t", "g"};
  for (std::size_t i = 0; i < curve.t.size(); ++i) table.rows.push_back({curve.t[i], curve.g[i]});
  out.csv("g_curve.csv", table);
  return {{"max", curve.max_value},
          {"argmax", curve.argmax},
          {"band", {kGPeakLocation / big_l, kGPeakLocation / mu}}};
}

inline SgdExactOptions sgd_exact_options(const json& config) {
  SgdExactOptions o;
  o.t_max = number(config, "sgd_exact.t_max");
  if (o.t_max <= 0.0) throw ConfigError("config: field 'sgd_exact.t_max' must be > 0");
  o.risk.averaging = averaging_of(config, "sgd_exact.averaging");
  o.risk.eta_draws = static_cast<std::size_t>(integer(config, "sgd_exact.eta_draws", 1));
  o.risk.seed = seed_of(config);
  return o;
}

inline json run_risk_curves(const json& config, Output& out, bool curves) {
  const auto pr = build_problem(config);
  const auto sgd = build_sgd(config, pr);
  const auto grid = build_lambda_grid(config);
  const auto scope = scope_of(config, "scope");
  const auto study = risk_study(pr, sgd, grid, sgd_exact_options(config), scope);
  const auto ratios = ratio_summary(pr, study, scope);
  if (curves) {
    out.csv("ridge.csv", risk_curve_table(study.ridge));
    out.csv("gf.csv", risk_curve_table(study.gf));
    out.csv("gd.csv", risk_curve_table(study.gd));
    out.csv("sgd_exact.csv", risk_curve_table(study.sgd_exact));
    out.csv("sgf_bound.csv", risk_curve_table(study.bound));
    json stops;
    for (const RiskCurve* c : {&study.ridge, &study.gf, &study.gd, &study.sgd_exact, &study.bound})
      stops[c->estimator] = stopping_json(optimal_stopping(*c));
    out.json_file("stopping_times.json", stops);
  } else {
    out.json_file("ratios.json", ratios.to_json());
  }
  const auto& k = study.constants;
  return {{"epsilon", sgd.epsilon},
          {"regime", to_string(k.regime)},
          {"constants", {{"u", k.u}, {"v", k.v}, {"exp_w", k.exp_w}, {"v_tilde", k.v_tilde}, {"w_tilde", k.w_tilde},
                         {"mu", k.mu}, {"L", k.big_l}}},
          {"ratios", ratios.to_json()}};
}

inline json run_coeff_error(const json& config, Output& out) {
  const auto pr = build_problem(config);
  const auto sgd = build_sgd(config, pr);
  const double t_min = number(config, "grid.t_min"), t_max = number(config, "grid.t_max");
  const auto count = integer(config, "grid.count", 2);
  const auto grid = checked("grid", [&] { return time_log_grid(t_min, t_max, static_cast<std::size_t>(count)); });
  const auto study = checked("grid", [&] {
    return coefficient_study(pr, sgd, grid.times, static_cast<std::size_t>(integer(config, "mc.eta_draws", 2)),
                             static_cast<std::size_t>(integer(config, "mc.replicates", 1)),
                             noise_factor(config, "mc.noise_factor"));
  });
  out.csv("coeff_error.csv", study.table());
  bool dominated = true;
  for (std::size_t i = 0; i < study.t.size(); ++i)
    dominated = dominated && study.coef_bound[i] + 3.0 * study.coef_se[i] >= study.coef_mc[i] &&
                study.risk_bound_ridge[i] + 3.0 * study.risk_se[i] >= study.risk_mc[i];
  return {{"epsilon", sgd.epsilon}, {"bounds_dominate", dominated}};
}

inline json run_verify_moments(const json& config, Output& out) {
  const auto pr = build_problem(config);
  const auto sgd = build_sgd(config, pr);
  std::vector<long long> cps;
  for (double c : numbers(config, "mc.checkpoints")) {
    if (c != std::floor(c) || c < 0.0) throw ConfigError("config: field 'mc.checkpoints' must hold integers >= 0");
    cps.push_back(static_cast<long long>(c));
  }
  if (cps.empty()) throw ConfigError("config: field 'mc.checkpoints' must not be empty");
  const auto replicates = static_cast<std::size_t>(integer(config, "mc.replicates", 100));
  const auto report = moment_match_report(pr, sgd, cps, replicates, number(config, "mc.z"),
                                          noise_factor(config, "mc.noise_factor"), flag(config, "mc.antithetic"));
  out.json_file("moment_match.json", report.to_json());
  return {{"pass", report.pass}};
}

}  // namespace detail

/// Runs a resolved configuration; writes files plus metadata.json into config["out"].
inline json run(const json& config) {
  const std::string experiment = text(config, "experiment");
  Output out(text(config, "out"));
  json summary;
  if (experiment == "paths") summary = detail::run_paths(config, out);
  else if (experiment == "contour1d") summary = detail::run_contour1d(config, out);
  else if (experiment == "g_curve") summary = detail::run_g_curve(config, out);
  else if (experiment == "risk_curves") summary = detail::run_risk_curves(config, out, true);
  else if (experiment == "ratios") summary = detail::run_risk_curves(config, out, false);
  else if (experiment == "coeff_error") summary = detail::run_coeff_error(config, out);
  else if (experiment == "verify_moments") summary = detail::run_verify_moments(config, out);
  else throw ConfigError("config: unknown experiment '" + experiment + "'");

  json identity = config;
  identity.erase("out");  // the output location does not change results
  json meta = {{"metadata", run_metadata(identity, seed_of(config))},
               {"config", config},
               {"files", out.files()},
               {"summary", summary}};
  out.json_file("metadata.json", meta);
  return meta;
}

}  // namespace sgflow::experiments
