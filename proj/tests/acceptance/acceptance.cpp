// Acceptance suite: one PASS/FAIL line per criterion. Optional arguments
// select a subset of criteria, e.g. `acceptance 1 4`.

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <functional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "oracles.hpp"
#include "sgflow/closed_form.hpp"
#include "sgflow/experiments.hpp"
#include "sgflow/moments.hpp"
#include "sgflow/risk.hpp"
#include "sgflow/simulate.hpp"
#include "sgflow/theory.hpp"

using namespace sgflow;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(double x) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6g", x);
  return buf;
}

RegressionProblem design_problem(Eigen::Index n, Eigen::Index p, double rho, std::uint64_t seed) {
  DesignSpec spec;
  spec.n = n;
  spec.p = p;
  spec.rho = rho;
  spec.seed = seed;
  return make_problem(spec, 1.0, 1.0);
}

// 1. Peak of g over a 10^4-point grid and its location.
Outcome g_maximum() {
  const double mu = 0.2, big_l = 5.0;
  const auto c = experiments::g_curve(mu, big_l, 1e-3, 1e3, 10000);
  const bool value = std::abs(c.max_value - 1.2985) <= 5e-4;
  const bool band = c.argmax >= kGPeakLocation / big_l && c.argmax <= kGPeakLocation / mu;
  return {value && band, "max " + fmt(c.max_value) + " at t " + fmt(c.argmax) + ", band [" +
                             fmt(kGPeakLocation / big_l) + ", " + fmt(kGPeakLocation / mu) + "]"};
}

// 2. Univariate constant- and state-dependent-noise processes.
Outcome ou_limit() {
  UnivariateConfig c;
  c.x = {0.5, 1.0, 1.5};
  c.epsilon = 0.01;
  c.batch_size = 2;
  c.beta_init = 1.0;
  c.replicates = 10000;
  c.seed = 2;
  const double g = (0.25 + 1.0 + 2.25) / 3.0;
  c.iterations = std::llround(20.0 / (g * c.epsilon));
  const auto paths = univariate_paths(c);
  const double limit = c.epsilon / (2.0 * static_cast<double>(c.batch_size));
  const double rel = std::abs(paths.ou_summary.terminal_variance - limit) / limit;
  const double gbm = paths.gbm_summary.terminal_variance;
  return {rel <= 0.10 && gbm < 0.05 * c.beta_init * c.beta_init,
          "OU variance " + fmt(paths.ou_summary.terminal_variance) + " vs " + fmt(limit) + " (rel " + fmt(rel) +
              "), GBM variance " + fmt(gbm)};
}

// 3. Exact moments against SGD and Euler SGF ensembles.
Outcome moment_matching() {
  const auto pr = design_problem(50, 10, 0.0, 3);
  SgdConfig cfg;
  cfg.epsilon = 0.01;
  cfg.batch_size = 10;
  cfg.seed = 3;
  const auto report = moment_match_report(pr, cfg, {10, 100, 500}, 20000, 4.0, NoiseFactor::residual);
  double worst = 0.0;
  for (const auto& e : report.entries) worst = std::max({worst, e.max_mean_z, e.max_cov_z});
  return {report.pass, "max standardized deviation " + fmt(worst) + " over " +
                           std::to_string(report.entries.size()) + " (kind, checkpoint) pairs"};
}

// 4. Exhaustive enumeration over batch sequences.
Outcome enumeration() {
  double worst_moment = 0.0, worst_diffusion = 0.0;
  int cases = 0;
  for (int n = 1; n <= 3; ++n)
    for (int m = 1; m <= std::min(n, 2); ++m)
      for (Eigen::Index p : {1, 2, 3}) {
        const auto pr = oracle::random_problem(n, p, 1.0, static_cast<std::uint64_t>(40 + 10 * n + 3 * m + p));
        const double eps = 0.2;
        const Eigen::VectorXd beta = oracle::random_matrix(p, 1, static_cast<std::uint64_t>(n * m + p));
        const Eigen::MatrixXd q = diffusion_coefficient(pr, beta, eps, m);
        worst_diffusion = std::max(worst_diffusion,
                                   (q - oracle::enumerated_diffusion(pr.x, pr.y, beta, eps, m)).cwiseAbs().maxCoeff());
        for (int k = 0; k <= 2; ++k) {
          SgdConfig cfg;
          cfg.epsilon = eps;
          cfg.batch_size = m;
          const auto s = exact_sgd_moments(pr, cfg, k);
          const auto e = oracle::enumerated_sgd(pr.x, pr.y, eps, m, k);
          worst_moment = std::max({worst_moment, (s.mean - e.mean).cwiseAbs().maxCoeff(),
                                   (s.cov - e.cov).cwiseAbs().maxCoeff()});
          ++cases;
        }
      }
  return {worst_moment <= 1e-12 && worst_diffusion <= 1e-12,
          std::to_string(cases) + " cases, max moment error " + fmt(worst_moment) + ", max diffusion error " +
              fmt(worst_diffusion)};
}

// 5. Risk and coefficient-error bounds against Monte Carlo.
Outcome bound_domination() {
  const auto pr = design_problem(40, 80, 0.0, 5);
  SgdConfig cfg;
  cfg.batch_size = 10;
  cfg.epsilon = choose_epsilon(pr, 10);
  cfg.seed = 5;
  const auto grid = time_log_grid(0.01, 10.0, 20);
  const auto s = experiments::coefficient_study(pr, cfg, grid.times, 30, 500, NoiseFactor::residual);
  bool ok = true;
  double risk_slack = 1e300, coef_slack = 1e300;
  for (std::size_t i = 0; i < s.t.size(); ++i) {
    const double rs = s.risk_bound_ridge[i] + 3.0 * s.risk_se[i] - s.risk_mc[i];
    const double cs = s.coef_bound[i] + 3.0 * s.coef_se[i] - s.coef_mc[i];
    ok = ok && rs >= 0.0 && cs >= 0.0;
    risk_slack = std::min(risk_slack, rs);
    coef_slack = std::min(coef_slack, cs);
  }
  return {ok, "eps " + fmt(cfg.epsilon) + ", min risk slack " + fmt(risk_slack) + ", min coefficient slack " +
                  fmt(coef_slack) + " over " + std::to_string(s.t.size()) + " grid points"};
}

// 6. Gradient flow against ridge on random instances.
Outcome flow_vs_ridge() {
  Rng rng(6);
  const auto grid = lambda_log_grid();
  double worst_bias = -1e300, worst_var = -1e300;
  for (std::uint64_t inst = 0; inst < 20; ++inst) {
    const auto n = static_cast<Eigen::Index>(2 + rng.index(99));
    const auto p = static_cast<Eigen::Index>(1 + rng.index(100));
    const auto pr = oracle::random_problem(n, p, 0.5 + rng.uniform(), 600 + inst);
    for (double t : grid.times) {
      const auto gf = gf_risk(pr, t);
      const auto rd = ridge_risk(pr, 1.0 / t);
      worst_bias = std::max(worst_bias, gf.bias_sq - rd.bias_sq);
      worst_var = std::max(worst_var, gf.variance - kVarianceInflation * rd.variance);
    }
  }
  return {worst_bias <= 1e-10 && worst_var <= 1e-10,
          "max bias excess " + fmt(worst_bias) + ", max variance excess " + fmt(worst_var)};
}

// 7. Exponential loss bound against simulated Euler SGF losses.
Outcome loss_bound_domination() {
  std::ostringstream detail;
  bool ok = true;
  for (auto [n, p] : {std::pair<Eigen::Index, Eigen::Index>{30, 60}, {60, 15}}) {
    const auto pr = design_problem(n, p, 0.0, 7);
    SgdConfig cfg;
    cfg.batch_size = 5;
    cfg.epsilon = choose_epsilon(pr, 5);
    cfg.seed = 7;
    const auto k = loss_constants(pr, cfg.epsilon, 5);
    std::vector<long long> cps;
    for (double t : time_log_grid(0.01, 100.0, 25).times) cps.push_back(std::llround(t / cfg.epsilon));
    cps = normalized_checkpoints(cps);
    const ScalarSeries loss = blocked_reduce(200, ScalarSeries(cps.size()), [&](std::size_t b, std::size_t e, ScalarSeries& acc) {
      for (std::size_t r = b; r < e; ++r)
        run_replicate(pr, cfg, TrajectoryKind::euler_sgf, r, cps,
                      [&](std::size_t c, const Eigen::VectorXd& beta) { acc.items[c].add(training_loss(pr, beta, k.regime)); },
                      NoiseFactor::residual);
    });
    double slack = 1e300;
    for (std::size_t c = 0; c < cps.size(); ++c) {
      const double s = loss_bound(k, static_cast<double>(cps[c]) * cfg.epsilon) + 3.0 * loss.items[c].standard_error() -
                       loss.items[c].mean;
      slack = std::min(slack, s);
    }
    ok = ok && slack >= 0.0;
    detail << to_string(k.regime) << " (n " << n << ", p " << p << ") min slack " << fmt(slack) << "; ";
  }
  return {ok, detail.str()};
}

// 8. Constant-covariance process risk formula against simulation.
Outcome const_process() {
  const auto pr = design_problem(20, 5, 0.0, 8);
  SgdConfig cfg;
  cfg.epsilon = 0.02;
  cfg.batch_size = 4;
  cfg.seed = 8;
  const long long steps = 150;
  const Eigen::VectorXd signal = pr.x * pr.beta0;
  const ScalarAccumulator acc = blocked_reduce(20000, ScalarAccumulator{}, [&](std::size_t b, std::size_t e, ScalarAccumulator& a) {
    for (std::size_t d = b; d < e; ++d) {
      const auto draw = pr.with_response(signal + pr.sigma * Rng(derive_seed(cfg.seed, Stream::eta, d)).normal_vector(20));
      ConstCovStepper s(draw, cfg.epsilon, cfg.batch_size, derive_seed(cfg.seed, Stream::replicate, d));
      for (long long i = 0; i < steps; ++i) s.step();
      a.add((s.state() - pr.beta0).squaredNorm());
    }
  });
  const double formula = const_process_risk(pr, cfg.epsilon, cfg.batch_size, static_cast<double>(steps) * cfg.epsilon).risk();
  const double allowance = 2.0 * cfg.epsilon * pr.spectrum.largest * formula;
  const double gap = std::abs(acc.mean - formula);
  return {gap <= 3.0 * acc.standard_error() + allowance,
          "formula " + fmt(formula) + ", MC " + fmt(acc.mean) + " +- " + fmt(acc.standard_error()) +
              ", allowance " + fmt(allowance)};
}

// 9. Reference-configuration ratios on five seeds.
Outcome ratios() {
  std::ostringstream detail;
  bool ok = true;
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const auto pr = design_problem(100, 500, 0.5, seed);
    SgdConfig cfg;
    cfg.batch_size = 20;
    cfg.epsilon = choose_epsilon(pr, 20);
    cfg.seed = seed;
    experiments::SgdExactOptions opt;
    opt.t_max = 20.0;
    opt.risk.averaging = ResponseMode::noise_averaged;
    const auto study = experiments::risk_study(pr, cfg, lambda_log_grid(), opt);
    const auto r = experiments::ratio_summary(pr, study);
    const bool a = r.optimal_risk_ratio >= 1.0 && r.optimal_risk_ratio <= 1.10;
    const bool b = r.max_bound_ratio_ridge_form >= 1.5 && r.max_bound_ratio_ridge_form <= 4.0;
    ok = ok && a && b;
    detail << "seed " << seed << ": optimal " << fmt(r.optimal_risk_ratio) << " ("
           << (r.optimal_uses_balance ? "balance" : "min risk") << "), bound/ridge " << fmt(r.max_bound_ratio_ridge_form)
           << " (gf form " << fmt(r.max_bound_ratio_gf_form) << "); ";
  }
  return {ok, detail.str()};
}

// 10. Closed forms against an ODE integrator and Monte Carlo over the noise.
Outcome closed_forms() {
  const auto pr = design_problem(8, 4, 0.0, 10);
  const double flow_err = (gradient_flow(pr, 2.0) - oracle::rk4_flow(pr.x, pr.y, 2.0, 1e-4)).norm();
  const double lambda = 0.5, t = 2.0, eps = 0.05;
  const long long k = 40;
  ScalarAccumulator ridge_mc, gf_mc, gd_mc;
  const Eigen::VectorXd signal = pr.x * pr.beta0;
  Rng rng(10);
  for (int d = 0; d < 100000; ++d) {
    const auto draw = pr.with_response(signal + pr.sigma * rng.normal_vector(8));
    ridge_mc.add((ridge(draw, lambda) - pr.beta0).squaredNorm());
    gf_mc.add((gradient_flow(draw, t) - pr.beta0).squaredNorm());
    gd_mc.add((gradient_descent(draw, eps, k) - pr.beta0).squaredNorm());
  }
  auto z = [](double exact, const ScalarAccumulator& a) { return std::abs(exact - a.mean) / a.standard_error(); };
  const double zr = z(ridge_risk(pr, lambda).risk(), ridge_mc);
  const double zg = z(gf_risk(pr, t).risk(), gf_mc);
  const double zd = z(gd_risk(pr, eps, k).risk(), gd_mc);
  return {flow_err <= 1e-6 && zr <= 3.0 && zg <= 3.0 && zd <= 3.0,
          "flow error " + fmt(flow_err) + ", z ridge " + fmt(zr) + ", gf " + fmt(zg) + ", gd " + fmt(zd)};
}

struct Criterion {
  int id;
  const char* name;
  double budget_seconds;
  std::function<Outcome()> run;
};

}  // namespace

int main(int argc, char** argv) {
  const std::vector<Criterion> criteria = {
      {1, "g(t) maximum", 1.0, g_maximum},
      {2, "OU limiting variance", 30.0, ou_limit},
      {3, "moment matching", 300.0, moment_matching},
      {4, "exhaustive enumeration", 1.0, enumeration},
      {5, "bound domination", 600.0, bound_domination},
      {6, "gradient flow vs ridge constants", 30.0, flow_vs_ridge},
      {7, "loss bound domination", 120.0, loss_bound_domination},
      {8, "constant-process risk", 120.0, const_process},
      {9, "reference-configuration ratios", 900.0, ratios},
      {10, "closed forms vs oracles", 120.0, closed_forms},
  };
  std::set<int> selected;
  for (int i = 1; i < argc; ++i) selected.insert(std::atoi(argv[i]));

  int failures = 0;
  for (const auto& c : criteria) {
    if (!selected.empty() && !selected.count(c.id)) continue;
    const auto start = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    const bool in_time = secs <= c.budget_seconds;
    const bool pass = o.pass && in_time;
    if (!pass) ++failures;
    std::printf("criterion %d (%s): %s | %s | %.2f s (budget %.0f s%s)\n", c.id, c.name, pass ? "PASS" : "FAIL",
                o.detail.c_str(), secs, c.budget_seconds, in_time ? "" : ", exceeded");
    std::fflush(stdout);
  }
  return failures == 0 ? 0 : 1;
}
