#include "lcbias/model.hpp"
#include "lcbias/potential.hpp"

#include "oracles.hpp"

#include <gtest/gtest.h>

using namespace lcbias;

namespace {

std::vector<PotentialPtr> builtins(int d) {
  return {make_gaussian(d), make_product_logcosh(d), make_product_logcosh(d, 0.1, 1.0), make_radial_smooth(d),
          make_radial_smooth(d, 2.5)};
}

}  // namespace

TEST(Potential, DerivativeOraclesPassProbes) {
  for (int d : {1, 3, 6}) {
    for (const auto& v : builtins(d)) {
      const PotentialCheck c = check_potential(*v, 100, StreamKey(2024).child(d));
      EXPECT_TRUE(c.passes()) << v->name() << " d=" << d << " grad " << c.gradient_rel_error << " hess "
                              << c.hessian_rel_error << " asym " << c.asymmetry << " min eig "
                              << c.min_eigenvalue << " M ratio " << c.hessian_norm_ratio << " L ratio "
                              << c.lipschitz_ratio;
      EXPECT_EQ(c.probes, 100);
    }
  }
}

TEST(Potential, CheckDetectsWrongConstants) {
  // A Gaussian claiming M = 0.5 must fail the norm check.
  struct Liar final : Potential {
    Liar() : Potential(2) {
      RegularityConstants c;
      c.M = 0.5;
      c.m = 1.0;
      set_constants(c);
    }
    FamilyKind kind() const override { return FamilyKind::custom; }
    std::string name() const override { return "liar"; }
    double value(VectorCRef x) const override { return 0.5 * x.squaredNorm(); }
    void gradient(VectorCRef x, VectorRef out) const override { out = x; }
    void hessian(VectorCRef, MatrixRef out) const override { out.setIdentity(); }
  };
  EXPECT_FALSE(check_potential(Liar(), 10, StreamKey(1)).passes());
}

TEST(Potential, GaussianConstants) {
  auto v = make_gaussian(4);
  EXPECT_EQ(v->constants().M, 1.0);
  EXPECT_EQ(v->constants().L, 0.0);
  EXPECT_EQ(v->constants().m, 1.0);
  EXPECT_TRUE(v->constants().strongly_convex);
  EXPECT_TRUE(v->reference_fisher().isIdentity());
  ASSERT_TRUE(v->constants().poincare_upper.has_value());
  EXPECT_NEAR(*v->constants().poincare_upper, std::pow(4.0, 0.1), 1e-15);
}

TEST(Potential, ProductConstantsMatchQuadratureOracle) {
  for (auto [a, b] : {std::pair{1.0, 1.0}, std::pair{0.1, 1.0}, std::pair{1.0, 0.0}}) {
    auto v = make_product_logcosh(2, a, b);
    auto pot = [a, b](double t) { return 0.5 * a * t * t + b * oracle::log_cosh(t); };
    const double fisher_hess = oracle::density_expectation(
        pot, [a, b](double t) { return a + b / (std::cosh(t) * std::cosh(t)); }, -60.0, 60.0);
    const double fisher_score = oracle::density_expectation(
        pot, [a, b](double t) { return std::pow(a * t + b * std::tanh(t), 2); }, -60.0, 60.0);
    const double var = oracle::density_expectation(pot, [](double t) { return t * t; }, -60.0, 60.0);
    EXPECT_NEAR(v->constants().fisher_scale, fisher_hess, 1e-9) << a << "," << b;
    EXPECT_NEAR(v->constants().fisher_scale, fisher_score, 1e-9) << a << "," << b;
    EXPECT_NEAR(v->constants().noise_variance, var, 1e-9) << a << "," << b;
    EXPECT_EQ(v->constants().M, a + b);
    EXPECT_EQ(v->constants().strongly_convex, a > 0.0);
  }
  // Pure quadratic: the standard normal.
  auto g = make_product_logcosh(1, 1.0, 0.0);
  EXPECT_NEAR(g->constants().fisher_scale, 1.0, 1e-12);
  EXPECT_NEAR(g->constants().noise_variance, 1.0, 1e-11);
}

TEST(Potential, ProductRejectsBadWeights) {
  EXPECT_THROW(make_product_logcosh(1, -1.0, 1.0), Error);
  EXPECT_THROW(make_product_logcosh(1, 0.0, 0.0), Error);
  EXPECT_THROW(make_gaussian(0), Error);
}

TEST(BumpProfile, ShapeAndContinuity) {
  for (double a : {1.0, 2.5}) {
    BumpProfile phi(a);
    const double mass = oracle::midpoint([](double s) { return BumpProfile::bump(s); }, 0.0, 1.0, 1'000'000);
    EXPECT_NEAR(phi.bump_mass(), mass, 1e-14);
    EXPECT_EQ(phi.d1(0.0), 0.0);
    EXPECT_EQ(phi.d1(a), 0.5);
    EXPECT_NEAR(phi.d1(a * (1 - 1e-9)), 0.5, 1e-12);
    EXPECT_NEAR(phi.value(a * (1 - 1e-12)), 0.25 * a, 1e-10);
    EXPECT_EQ(phi.value(3.0 * a), 1.25 * a);
    // phi' = int phi'' and phi = int phi', both by an independent rule.
    for (double t : {0.1 * a, 0.37 * a, 0.5 * a, 0.81 * a}) {
      EXPECT_NEAR(phi.d1(t), oracle::midpoint([&](double u) { return phi.d2(u); }, 0.0, t, 200000), 1e-11);
      EXPECT_NEAR(phi.value(t), oracle::midpoint([&](double u) { return phi.d1(u); }, 0.0, t, 200000), 1e-11);
    }
  }
}

TEST(Potential, RadialFisherMatchesScoreForm) {
  // Hessian form (library) against the score form E |V'(xi)|^2 / d computed
  // on the radius density with a midpoint rule.
  for (int d : {1, 2, 5}) {
    auto v = make_radial_smooth(d);
    const auto& phi = dynamic_cast<const RadialSmoothPotential&>(*v).profile();
    auto log_w = [&](double r) { return (d - 1) * std::log(r) - phi.value(r * r); };
    const double z = oracle::midpoint([&](double r) { return std::exp(log_w(r)); }, 0.0, 40.0, 2'000'000);
    const double score = oracle::midpoint(
                             [&](double r) {
                               const double g = 2.0 * phi.d1(r * r) * r;
                               return g * g * std::exp(log_w(r));
                             },
                             0.0, 40.0, 2'000'000) /
                         z / d;
    const double second =
        oracle::midpoint([&](double r) { return r * r * std::exp(log_w(r)); }, 0.0, 40.0, 2'000'000) / z / d;
    EXPECT_NEAR(v->constants().fisher_scale, score, 1e-8) << "d=" << d;
    EXPECT_NEAR(v->constants().noise_variance, second, 1e-8) << "d=" << d;
    EXPECT_GT(v->constants().m, 0.0);
    EXPECT_LE(v->constants().m, v->constants().M);
    EXPECT_FALSE(v->constants().strongly_convex);
  }
}
