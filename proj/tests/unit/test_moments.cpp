#include <gtest/gtest.h>

#include "oracles.hpp"
#include "sgflow/closed_form.hpp"
#include "sgflow/moments.hpp"
#include "sgflow/theory.hpp"

using namespace sgflow;

namespace {

SgdConfig make_config(double eps, Eigen::Index m, std::uint64_t seed = 1) {
  SgdConfig c;
  c.epsilon = eps;
  c.batch_size = m;
  c.seed = seed;
  return c;
}

}  // namespace

TEST(ExactMoments, StartsAtZero) {
  const auto pr = oracle::random_problem(5, 3, 1.0, 1);
  const MomentState s = exact_sgd_moments(pr, make_config(0.1, 2), 0);
  EXPECT_EQ(s.k, 0);
  EXPECT_EQ(s.mean.norm(), 0.0);
  EXPECT_EQ(s.cov.norm(), 0.0);
}

TEST(ExactMoments, SinglePointHasNoBatchNoise) {
  const auto pr = oracle::random_problem(1, 3, 1.0, 2);
  const auto states = exact_sgd_moments(pr, make_config(0.1, 1), {1, 5, 30});
  for (const auto& s : states) {
    EXPECT_LT(s.cov.norm(), 1e-15);
    EXPECT_LT((s.mean - gradient_descent_iterative(pr, 0.1, s.k)).norm(), 1e-12);
  }
}

TEST(ExactMoments, MatchesEnumerationForAllTinyShapes) {
  for (int n = 1; n <= 3; ++n)
    for (int m = 1; m <= 2; ++m)
      for (int k = 0; k <= 2; ++k)
        for (Eigen::Index p : {1, 2, 4}) {
          if (m > n) continue;  // batch size is limited to n
          const auto pr = oracle::random_problem(n, p, 1.0, static_cast<std::uint64_t>(100 * n + 10 * m + p));
          const double eps = 0.15;
          const auto exact = oracle::enumerated_sgd(pr.x, pr.y, eps, m, k);
          const MomentState s = exact_sgd_moments(pr, make_config(eps, m), k);
          EXPECT_LT((s.mean - exact.mean).cwiseAbs().maxCoeff(), 1e-12) << n << m << k << p;
          EXPECT_LT((s.cov - exact.cov).cwiseAbs().maxCoeff(), 1e-12) << n << m << k << p;
        }
}

TEST(ExactMoments, MeanIsGradientDescent) {
  const auto pr = oracle::random_problem(30, 12, 1.0, 3);
  MomentRecursion rec(pr, 0.02, 5);
  for (long long k : {1LL, 10LL, 200LL}) {
    rec.advance_to(k);
    EXPECT_LT((rec.mean() - gradient_descent(pr, 0.02, k)).norm(), 1e-10);
  }
}

TEST(ExactMoments, CovarianceStaysBoundedForInterpolation) {
  // Step below 1 / max ||x_i||^2, so every single-sample update contracts.
  const auto pr = oracle::random_problem(10, 20, 0.0, 4);
  const double eps = 0.5 / pr.x.rowwise().squaredNorm().maxCoeff();
  MomentRecursion rec(pr, eps, 2);
  double peak = 0.0;
  for (long long k = 1; k <= 10000; ++k) {
    rec.step();
    EXPECT_GE(rec.covariance_trace(), 0.0);
    peak = std::max(peak, rec.covariance_trace());
  }
  rec.check_psd();
  EXPECT_LT(rec.covariance_trace(), peak);
  EXPECT_LT(peak, 1e3);
}

TEST(ExactMoments, DetectsInstability) {
  const auto pr = oracle::random_problem(10, 4, 1.0, 5);
  const double eps = 5.0 / pr.spectrum.largest;
  EXPECT_THROW(exact_sgd_moments(pr, make_config(eps, 1), 2000), NumericError);
}

TEST(ExactMoments, NoiseAveragedMatchesAnalyticExpectation) {
  // For tiny problems, E_eta of the realized recursion can be computed by
  // averaging over a symmetric quadrature in eta: the forcing is quadratic
  // in y, so +-e_j sigma-point pairs reproduce E exactly.
  const auto pr = oracle::random_problem(3, 2, 0.7, 6);
  const double eps = 0.2;
  const Eigen::Index n = 3;
  const Eigen::VectorXd signal = pr.x * pr.beta0;
  const double scale = std::sqrt(static_cast<double>(n)) * pr.sigma;
  Eigen::MatrixXd avg = Eigen::MatrixXd::Zero(2, 2);
  for (Eigen::Index j = 0; j < n; ++j)
    for (double sign : {-1.0, 1.0}) {
      const Eigen::VectorXd y = signal + sign * scale * Eigen::VectorXd::Unit(n, j);
      const auto draw = pr.with_response(y);
      MomentRecursion rec(draw, eps, 1);
      rec.advance_to(4);
      avg += rec.covariance() / (2.0 * static_cast<double>(n));
    }
  MomentRecursion averaged(pr, eps, 1, ResponseMode::noise_averaged);
  averaged.advance_to(4);
  EXPECT_LT((averaged.covariance() - avg).norm(), 1e-13);
}

TEST(MomentMatch, DeterministicCaseHasZeroDeviation) {
  const auto pr = oracle::random_problem(1, 2, 1.0, 7);
  const auto report = moment_match_report(pr, make_config(0.1, 1), {1, 5}, 100);
  EXPECT_TRUE(report.pass);
  for (const auto& e : report.entries) {
    EXPECT_EQ(e.max_mean_z, 0.0);
    EXPECT_EQ(e.max_cov_z, 0.0);
  }
}

TEST(MomentMatch, SmallProblemPasses) {
  DesignSpec spec;
  spec.n = 20;
  spec.p = 4;
  spec.seed = 8;
  const auto pr = make_problem(spec, 1.0, 1.0);
  const auto report = moment_match_report(pr, make_config(0.02, 4, 3), {10, 60}, 3000, 4.0, NoiseFactor::residual);
  EXPECT_TRUE(report.pass) << report.to_json().dump(2);
  EXPECT_EQ(report.entries.size(), 4u);
  const auto anti = moment_match_report(pr, make_config(0.02, 4, 3), {10, 60}, 3000, 4.0, NoiseFactor::residual, true);
  EXPECT_TRUE(anti.pass) << anti.to_json().dump(2);
  EXPECT_THROW(moment_match_report(pr, make_config(0.02, 4), {10}, 50), ValidationError);
}

TEST(MomentMatch, DetectsWrongDynamics) {
  // Doubling the step for the simulated ensembles must be caught.
  DesignSpec spec;
  spec.n = 20;
  spec.p = 3;
  spec.seed = 9;
  const auto pr = make_problem(spec, 1.0, 1.0);
  const auto exact = exact_sgd_moments(pr, make_config(0.02, 2), std::vector<long long>{40});
  const auto mc = monte_carlo(pr, make_config(0.04, 2), TrajectoryKind::sgd, 2000, {40});
  double worst = 0.0;
  for (Eigen::Index a = 0; a < 3; ++a)
    worst = std::max(worst, std::abs(mc.mean[0][a] - exact[0].mean[a]) / std::sqrt(exact[0].cov(a, a) / 2000.0));
  EXPECT_GT(worst, 4.0);
}

TEST(SgdRiskExact, NullEstimatorAtZero) {
  const auto pr = oracle::random_problem(6, 3, 1.0, 10);
  const auto curve = sgd_risk_exact(pr, make_config(0.05, 2), {0, 3});
  EXPECT_DOUBLE_EQ(curve.t[0], 0.0);
  EXPECT_NEAR(curve.risk[0], pr.beta0.squaredNorm(), 1e-12);
}

TEST(SgdRiskExact, InterpolatingNoiselessBatchTermVanishes) {
  const auto pr = oracle::random_problem(8, 20, 0.0, 11);
  const double eps = 0.5 / pr.x.rowwise().squaredNorm().maxCoeff();
  const auto curve = sgd_risk_exact(pr, make_config(eps, 2), {50, 200000}, {3, ResponseMode::realized});
  const auto* batch = curve.find_component("var_batch");
  ASSERT_NE(batch, nullptr);
  EXPECT_GT((*batch)[0], 1e-6);
  EXPECT_LT((*batch)[1], 1e-12);
  EXPECT_NEAR(curve.risk[1], gd_risk(pr, eps, 200000).bias_sq, 1e-10);
}

TEST(SgdRiskExact, MatchesTwoLevelBruteForce) {
  const auto pr = oracle::random_problem(3, 2, 0.8, 12);
  const double eps = 0.2;
  SgdRiskOptions opt;
  opt.eta_draws = 2000;
  opt.seed = 5;
  const auto curve = sgd_risk_exact(pr, make_config(eps, 1), {2}, opt);

  // Brute force: enumerate batch sequences per eta draw, then average.
  ScalarAccumulator acc;
  for (std::size_t d = 0; d < 2000; ++d) {
    const Eigen::VectorXd y = pr.x * pr.beta0 + pr.sigma * Rng(1000 + d).normal_vector(3);
    const auto ex = oracle::enumerated_sgd(pr.x, y, eps, 1, 2);
    acc.add((ex.mean - pr.beta0).squaredNorm() + ex.cov.trace());
  }
  EXPECT_LT(std::abs(curve.risk[0] - acc.mean), 3.0 * acc.standard_error());

  // Exact averaging agrees with the sampled average too.
  SgdRiskOptions exact_opt;
  exact_opt.averaging = ResponseMode::noise_averaged;
  const auto exact = sgd_risk_exact(pr, make_config(eps, 1), {2}, exact_opt);
  EXPECT_LT(std::abs(exact.risk[0] - acc.mean), 3.0 * acc.standard_error());
  const auto* se = curve.find_component("var_batch_se");
  ASSERT_NE(se, nullptr);
  EXPECT_LT(std::abs(exact.find_component("var_batch")->at(0) - curve.find_component("var_batch")->at(0)),
            4.0 * se->at(0));
}

TEST(SgdRiskExact, BatchVarianceBelowContinuousBound) {
  // Discrete-vs-continuous sanity check on a path-experiment-sized problem.
  DesignSpec spec;
  spec.n = 50;
  spec.p = 10;
  spec.seed = 13;
  const auto pr = make_problem(spec, 1.0, 1.0);
  const double eps = choose_epsilon(pr, 10);
  const auto k = loss_constants(pr, eps, 10);
  std::vector<long long> cps;
  for (double t : {0.5, 2.0, 10.0, 50.0}) cps.push_back(std::llround(t / eps));
  SgdRiskOptions opt;
  opt.averaging = ResponseMode::noise_averaged;
  const auto curve = sgd_risk_exact(pr, make_config(eps, 10), cps, opt);
  const auto& batch = *curve.find_component("var_batch");
  for (std::size_t i = 0; i < cps.size(); ++i)
    EXPECT_LE(batch[i], minibatch_term(k, pr.spectrum, curve.t[i]) * (1.0 + 1e-9));
}
