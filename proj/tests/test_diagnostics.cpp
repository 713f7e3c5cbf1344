#include "lcbias/diagnostics.hpp"

#include "oracles.hpp"

#include <gtest/gtest.h>

#include <boost/math/distributions/chi_squared.hpp>

#include <sstream>

using namespace lcbias;

namespace {

// Standard normal quantile by bisection on erfc; independent of Boost.
double normal_quantile(double p) {
  double lo = -40.0, hi = 40.0;
  for (int i = 0; i < 200; ++i) {
    const double mid = 0.5 * (lo + hi);
    (oracle::normal_cdf(mid) < p ? lo : hi) = mid;
  }
  return 0.5 * (lo + hi);
}

ExperimentConfig small_gaussian_quadratic() {
  ExperimentConfig c;
  c.family.family = "gaussian";
  c.grid = {{100, 5}};
  c.functional.functional = "quadratic";
  c.k_values = {1, 2};
  c.estimators = {EstimatorKind::plugin_mle, EstimatorKind::fk_mle, EstimatorKind::plugin_mean, EstimatorKind::fk_mean};
  c.outer_reps = 600;
  c.replications = 40;
  c.seed = 99;
  return c;
}

}  // namespace

TEST(Normality, ExactNormalErrors) {
  const double sigma = 1.7, n = 400;
  Engine e(5);
  std::vector<double> errs(10000);
  for (double& x : errs) x = sigma / std::sqrt(n) * e.normal();
  const auto r = normality_diagnostic(errs, sigma, n);
  EXPECT_LE(r.w2, 0.05);
  EXPECT_LE(r.ks, oracle::dkw_epsilon(errs.size(), 0.01));

  // Independent recomputation.
  std::vector<double> z = errs;
  for (double& x : z) x *= std::sqrt(n) / sigma;
  std::sort(z.begin(), z.end());
  double ss = 0.0;
  for (std::size_t i = 0; i < z.size(); ++i) ss += std::pow(z[i] - normal_quantile((i + 0.5) / z.size()), 2);
  EXPECT_NEAR(r.w2, std::sqrt(ss / z.size()), 1e-10);
  EXPECT_NEAR(r.ks, oracle::ks_distance(z, oracle::normal_cdf), 1e-14);
}

TEST(Normality, DetectsWrongScale) {
  Engine e(6);
  std::vector<double> errs(5000);
  for (double& x : errs) x = 2.0 * e.normal();
  const auto r = normality_diagnostic(errs, 1.0);
  EXPECT_GT(r.w2, 0.5);
  EXPECT_GT(r.ks, 0.1);
}

TEST(Normality, Errors) {
  try {
    normality_diagnostic(std::vector<double>(200, 0.3), 1.0);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::degenerate_sample);
  }
  EXPECT_THROW(normality_diagnostic(std::vector<double>(99, 0.3), 1.0), Error);
  std::vector<double> ok(200);
  for (std::size_t i = 0; i < ok.size(); ++i) ok[i] = double(i);
  EXPECT_THROW(normality_diagnostic(ok, 0.0), Error);
}

TEST(Quantiles, TypeSeven) {
  const std::vector<double> xs{1.0, 2.0, 4.0, 8.0};
  EXPECT_EQ(sorted_quantile(xs, 0.0), 1.0);
  EXPECT_EQ(sorted_quantile(xs, 1.0), 8.0);
  EXPECT_EQ(sorted_quantile(xs, 0.5), 3.0);
  EXPECT_NEAR(sorted_quantile(xs, 0.9), 4.0 + 0.7 * 4.0, 1e-15);
}

TEST(Concentration, GaussianChiSquareOracle) {
  const int d = 10, n = 1000;
  NoiseSampler s(make_gaussian(d));
  const auto c = concentration_diagnostic(s, Vector::Constant(d, 0.3), n, 3000, StreamKey(7));
  EXPECT_LT(std::abs(c.mean_scaled_sq - 1.0), 3.0 * c.mean_scaled_sq_se);
  EXPECT_GE(c.q50, 0.9);
  EXPECT_LE(c.q50, 1.0);
  // Chi quantiles: sqrt(chi2_d(p) / d).
  boost::math::chi_squared chi(d);
  EXPECT_NEAR(c.q90, std::sqrt(boost::math::quantile(chi, 0.9) / d), 0.03);
  EXPECT_LE(c.q50, c.q90);
  EXPECT_LE(c.q90, c.q99);
  EXPECT_FALSE(c.flagged);
  EXPECT_EQ(c.threshold, 10.0);
  EXPECT_EQ(c.reps, 3000u);
}

TEST(Concentration, ProductFamilyQuantilesOrdered) {
  NoiseSampler s(make_product_logcosh(3));
  const auto c = concentration_diagnostic(s, Vector::Zero(3), 200, 300, StreamKey(8), 4);
  EXPECT_LE(c.q50, c.q90);
  EXPECT_LE(c.q90, c.q99);
  EXPECT_FALSE(c.flagged);
  EXPECT_THROW(concentration_diagnostic(s, Vector::Zero(3), 200, 99, StreamKey(8)), Error);
}

TEST(MeanBased, CoincidesWithMleForGaussian) {
  NoiseSampler s(make_gaussian(3));
  Engine e = StreamKey(9).engine();
  const Dataset x = s.sample_data(e, Vector::Ones(3), 60);
  const auto f = builtin_functional(FunctionalKind::sin_linear, Vector::Constant(3, 0.8));
  ChainOptions o;
  o.k = 2;
  o.replications = 30;
  const FkEstimate a = mean_based_estimator(s, x, f, o, StreamKey(10));
  const FkEstimate b = estimate_fk(s, x, f, o, StreamKey(10));
  EXPECT_NEAR(a.value, b.value, 1e-12);
  o.k = 0;
  EXPECT_EQ(mean_based_estimator(s, x, f, o, StreamKey(10)).value, f.value(sample_mean(x)));
}

TEST(MeanBased, LargerVarianceForLogCosh) {
  // Var(mean) / Var(MLE) approaches Var(xi) * I > 1.
  auto v = make_product_logcosh(1, 0.1, 1.0);
  NoiseSampler s(v);
  const auto f = builtin_functional(FunctionalKind::linear, Vector::Ones(1));
  std::vector<double> a, b;
  for (std::uint64_t r = 0; r < 1500; ++r) {
    Engine e = StreamKey(11).child(r).engine();
    const Dataset x = s.sample_data(e, Vector::Zero(1), 200);
    a.push_back(f.value(sample_mean(x)));
    b.push_back(f.value(fit_mle(*v, x).theta_hat));
  }
  const double ratio = oracle::moments(a).var / oracle::moments(b).var;
  const double oracle_ratio = v->constants().noise_variance * v->constants().fisher_scale;
  EXPECT_GT(oracle_ratio, 1.05);
  EXPECT_NEAR(ratio, oracle_ratio, 0.1);
}

TEST(RiskExperiment, GaussianQuadraticOracles) {
  const auto c = small_gaussian_quadratic();
  const RiskReport rep = run_risk_experiment(c);
  // plugin_mle, fk_mle k=1, fk_mle k=2, plugin_mean, fk_mean k=1, fk_mean k=2.
  ASSERT_EQ(rep.rows.size(), 6u);
  EXPECT_EQ(rep.rows[0].estimator, EstimatorKind::plugin_mle);
  EXPECT_EQ(rep.rows[0].k, 0);
  EXPECT_EQ(rep.rows[2].k, 2);
  EXPECT_EQ(rep.rows[5].estimator, EstimatorKind::fk_mean);
  for (const auto& r : rep.rows) {
    EXPECT_EQ(r.reps, c.outer_reps);
    EXPECT_EQ(r.failed, 0u);
    EXPECT_NEAR(r.rmse * r.rmse, r.bias * r.bias + r.variance, 1e-10 * r.rmse * r.rmse);
    EXPECT_GT(r.efficiency, 0.0);
    const double expected_bias = r.k == 0 ? 5.0 / 100.0 : 0.0;
    EXPECT_LT(std::abs(r.bias - expected_bias), 3.0 * r.bias_se) << to_string(r.estimator) << " k=" << r.k;
    EXPECT_EQ(r.seed, 99u);
  }
  // The Gaussian MLE is the mean, so MLE and mean rows coincide.
  EXPECT_NEAR(rep.rows[0].bias, rep.rows[3].bias, 1e-12);
  EXPECT_NEAR(rep.rows[1].bias, rep.rows[4].bias, 1e-12);
}

TEST(RiskExperiment, SinLinearBiasMatchesSmoothingOracle) {
  ExperimentConfig c;
  c.grid = {{10, 2}};
  c.functional.functional = "sin_linear";
  c.functional.w_norm = 2.0;
  const double a = 4.0 / 10.0;
  // <w, theta> = pi / 2 with w = (sqrt 2, sqrt 2).
  const double t = std::numbers::pi / 2.0 / (2.0 * std::sqrt(2.0));
  c.theta_truth.point = {t, t};
  c.k_values = {0, 1};
  c.estimators = {EstimatorKind::fk_mle};
  c.outer_reps = 4000;
  c.replications = 4;
  c.seed = 3;
  const RiskReport rep = run_risk_experiment(c);
  ASSERT_EQ(rep.rows.size(), 2u);
  for (const auto& r : rep.rows) {
    const double oracle_bias = std::pow(-1.0, r.k) * std::pow(std::exp(-a / 2.0) - 1.0, r.k + 1);
    EXPECT_LT(std::abs(r.bias - oracle_bias), 3.0 * r.bias_se) << r.k;
  }
  EXPECT_LT(std::abs(rep.rows[1].bias), std::abs(rep.rows[0].bias));
}

TEST(RiskExperiment, DeterministicAcrossWorkers) {
  auto c = small_gaussian_quadratic();
  c.family.family = "product_logcosh";
  c.outer_reps = 40;
  c.replications = 5;
  c.grid = {{30, 2}, {20, 1}};
  c.workers = 1;
  std::ostringstream a, b, d;
  write_risk_csv(a, run_risk_experiment(c));
  c.workers = 8;
  write_risk_csv(b, run_risk_experiment(c));
  c.workers = 3;
  write_risk_csv(d, run_risk_experiment(c));
  EXPECT_EQ(a.str(), b.str());
  EXPECT_EQ(a.str(), d.str());
  EXPECT_EQ(a.str().substr(0, a.str().find('\n')),
            "n,d,k,estimator,functional,bias,bias_se,variance,rmse,sigma_f,efficiency,w2,ks,reps,seed");
}

TEST(RiskExperiment, ValidationListsAllViolations) {
  ExperimentConfig c;
  c.outer_reps = 0;
  c.functional.functional = "sin_linear";
  c.k_values = {-1};
  try {
    run_risk_experiment(c);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::validation_error);
    const std::string msg = e.what();
    for (const char* field : {"grid", "outer_reps", "w:", "k:"}) EXPECT_NE(msg.find(field), std::string::npos) << field;
  }
}

TEST(FormatDouble, RoundTrips) {
  Engine e(12);
  for (int i = 0; i < 10000; ++i) {
    const double x = std::ldexp(e.uniform() - 0.5, int(e.bits() % 200) - 100);
    EXPECT_EQ(std::stod(format_double(x)), x);
  }
  EXPECT_EQ(format_double(0.1), "0.1");
  EXPECT_EQ(format_double(std::numeric_limits<double>::infinity()), "inf");
  EXPECT_EQ(format_double(std::numeric_limits<double>::quiet_NaN()), "nan");
}
