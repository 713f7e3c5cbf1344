#pragma once

#include "lcbias/core.hpp"
#include "lcbias/density1d.hpp"
#include "lcbias/quadrature.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>
#include <numbers>
#include <optional>
#include <string>

namespace lcbias {

enum class FamilyKind { gaussian, product, radial, custom };

/// Regularity constants of a potential.
///
/// M bounds the operator norm of V'' and L its Lipschitz constant; m is the
/// smallest eigenvalue of the Fisher information. For the builtin families the
/// Fisher information and the noise covariance are multiples of the identity,
/// recorded exactly (closed form or quadrature) in fisher_scale and
/// noise_variance.
struct RegularityConstants {
  double M = 0.0;
  double L = 0.0;
  double m = 0.0;
  bool strongly_convex = false;
  double fisher_scale = std::numeric_limits<double>::quiet_NaN();
  double noise_variance = std::numeric_limits<double>::quiet_NaN();
  /// Reported bound on the Poincare constant, ||Sigma|| d^0.1. Heuristic.
  std::optional<double> poincare_upper;
};

/// Convex potential V of a log-concave location family, density exp(-V).
/// Immutable after construction.
class Potential {
 public:
  virtual ~Potential() = default;

  virtual FamilyKind kind() const = 0;
  virtual std::string name() const = 0;

  int dim() const { return dim_; }
  const RegularityConstants& constants() const { return constants_; }

  virtual double value(VectorCRef x) const = 0;
  virtual void gradient(VectorCRef x, VectorRef out) const = 0;
  virtual void hessian(VectorCRef x, MatrixRef out) const = 0;

  /// Adds V(x), V'(x) and V''(x) to the accumulators. Builtins override this
  /// to share work between the three.
  virtual void accumulate(VectorCRef x, double& value_sum, VectorRef grad_sum,
                          MatrixRef hess_sum) const {
    Vector g(dim_);
    Matrix h(dim_, dim_);
    gradient(x, g);
    hessian(x, h);
    value_sum += value(x);
    grad_sum += g;
    hess_sum += h;
  }

  Vector gradient(VectorCRef x) const {
    Vector g(dim_);
    gradient(x, g);
    return g;
  }

  Matrix hessian(VectorCRef x) const {
    Matrix h(dim_, dim_);
    hessian(x, h);
    return h;
  }

  /// Exact Fisher information for the builtin families (fisher_scale * I).
  Matrix reference_fisher() const {
    require(std::isfinite(constants_.fisher_scale), ErrorKind::invalid_parameter,
            name() + " has no reference Fisher information");
    return constants_.fisher_scale * Matrix::Identity(dim_, dim_);
  }

 protected:
  explicit Potential(int dim) : dim_(dim) {
    require(dim >= 1, ErrorKind::invalid_parameter, "dimension must be positive");
  }

  void set_constants(const RegularityConstants& c) {
    constants_ = c;
    if (!constants_.poincare_upper && std::isfinite(constants_.noise_variance))
      constants_.poincare_upper = constants_.noise_variance * std::pow(double(dim_), 0.1);
  }

 private:
  int dim_;
  RegularityConstants constants_;
};

using PotentialPtr = std::shared_ptr<const Potential>;

// --------------------------------------------------------------------------

/// V(x) = ||x||^2 / 2.
class GaussianPotential final : public Potential {
 public:
  explicit GaussianPotential(int dim) : Potential(dim) {
    RegularityConstants c;
    c.M = 1.0;
    c.L = 0.0;
    c.m = 1.0;
    c.strongly_convex = true;
    c.fisher_scale = 1.0;
    c.noise_variance = 1.0;
    set_constants(c);
  }

  FamilyKind kind() const override { return FamilyKind::gaussian; }
  std::string name() const override { return "gaussian"; }

  double value(VectorCRef x) const override { return 0.5 * x.squaredNorm(); }
  void gradient(VectorCRef x, VectorRef out) const override { out = x; }
  void hessian(VectorCRef, MatrixRef out) const override { out.setIdentity(); }

  void accumulate(VectorCRef x, double& value_sum, VectorRef grad_sum,
                  MatrixRef hess_sum) const override {
    value_sum += 0.5 * x.squaredNorm();
    grad_sum += x;
    hess_sum.diagonal().array() += 1.0;
  }
};

// --------------------------------------------------------------------------

/// One-dimensional potential v(t) = a t^2/2 + b log cosh t with a, b >= 0 and
/// a + b > 0. v'' = a + b sech^2 t lies in [a, a + b].
struct LogCoshScalar {
  double quad_weight = 1.0;
  double logcosh_weight = 1.0;

  static double log_cosh(double t) {
    const double a = std::abs(t);
    return a + std::log1p(std::exp(-2.0 * a)) - std::numbers::ln2;
  }
  static double sech2(double t) {
    const double c = std::cosh(t);
    return std::isfinite(c) ? 1.0 / (c * c) : 0.0;
  }

  double value(double t) const { return 0.5 * quad_weight * t * t + logcosh_weight * log_cosh(t); }
  double d1(double t) const { return quad_weight * t + logcosh_weight * std::tanh(t); }
  double d2(double t) const { return quad_weight + logcosh_weight * sech2(t); }
  double d3(double t) const { return -2.0 * logcosh_weight * sech2(t) * std::tanh(t); }

  /// sup |v'''| is attained where tanh^2 = 1/3, giving 4/(3 sqrt 3) per unit weight.
  double lipschitz_d2() const { return logcosh_weight * 4.0 / (3.0 * std::sqrt(3.0)); }
};

/// V(x) = sum_i v(x_i) for the log-cosh scalar potential v.
class ProductPotential final : public Potential {
 public:
  ProductPotential(int dim, LogCoshScalar v) : Potential(dim), v_(v) {
    require(v.quad_weight >= 0.0 && v.logcosh_weight >= 0.0 &&
                v.quad_weight + v.logcosh_weight > 0.0 && std::isfinite(v.quad_weight) &&
                std::isfinite(v.logcosh_weight),
            ErrorKind::invalid_parameter, "log-cosh weights must be nonnegative, not both zero");
    marginal_ = LogDensity1D{[v](double t) { return -v.value(t); },
                             [v](double t) { return -v.d1(t); }};
    support_ = effective_support(marginal_);

    RegularityConstants c;
    c.M = v.quad_weight + v.logcosh_weight;
    c.L = v.lipschitz_d2();
    c.fisher_scale = expectation(marginal_, support_, [v](double t) { return v.d2(t); });
    c.m = c.fisher_scale;
    c.strongly_convex = v.quad_weight > 0.0;
    c.noise_variance = expectation(marginal_, support_, [](double t) { return t * t; });
    set_constants(c);
  }

  FamilyKind kind() const override { return FamilyKind::product; }
  std::string name() const override { return "product_logcosh"; }

  const LogCoshScalar& scalar() const { return v_; }
  const LogDensity1D& marginal() const { return marginal_; }
  const EffectiveSupport& marginal_support() const { return support_; }

  double value(VectorCRef x) const override {
    double s = 0.0;
    for (Eigen::Index i = 0; i < x.size(); ++i) s += v_.value(x[i]);
    return s;
  }
  void gradient(VectorCRef x, VectorRef out) const override {
    for (Eigen::Index i = 0; i < x.size(); ++i) out[i] = v_.d1(x[i]);
  }
  void hessian(VectorCRef x, MatrixRef out) const override {
    out.setZero();
    for (Eigen::Index i = 0; i < x.size(); ++i) out(i, i) = v_.d2(x[i]);
  }

  void accumulate(VectorCRef x, double& value_sum, VectorRef grad_sum,
                  MatrixRef hess_sum) const override {
    for (Eigen::Index i = 0; i < x.size(); ++i) {
      const double t = x[i];
      const double th = std::tanh(t);
      value_sum += v_.value(t);
      grad_sum[i] += v_.quad_weight * t + v_.logcosh_weight * th;
      hess_sum(i, i) += v_.quad_weight + v_.logcosh_weight * (1.0 - th * th);
    }
  }

 private:
  LogCoshScalar v_;
  LogDensity1D marginal_;
  EffectiveSupport support_;
};

// --------------------------------------------------------------------------

/// Convex profile phi on [0, inf) whose second derivative is a smooth bump
/// supported on [0, a]:
///   phi''(t) = b(t/a) / (2 a B),  b(s) = exp(-1/(s(1-s))),  B = int_0^1 b,
/// so phi'(0) = 0, phi' rises to 1/2 at t = a and phi(t) = t/2 - a/4 beyond.
class BumpProfile {
 public:
  explicit BumpProfile(double support = 1.0) : a_(support) {
    require(support > 0.0 && std::isfinite(support), ErrorKind::invalid_parameter,
            "radial support must be positive");
    mass_ = quadrature::integrate([](double s) { return bump(s); }, 0.0, 1.0, 1e-18);
  }

  static double bump(double s) {
    if (s <= 0.0 || s >= 1.0) return 0.0;
    return std::exp(-1.0 / (s * (1.0 - s)));
  }
  static double bump_d1(double s) {
    if (s <= 0.0 || s >= 1.0) return 0.0;
    const double q = s * (1.0 - s);
    return bump(s) * (1.0 - 2.0 * s) / (q * q);
  }

  double support() const { return a_; }
  double bump_mass() const { return mass_; }

  double d1(double t) const {
    if (t <= 0.0) return 0.0;
    if (t >= a_) return 0.5;
    return 0.5 * bump_cdf(t / a_) / mass_;
  }
  double d2(double t) const { return 0.5 * bump(t / a_) / (a_ * mass_); }
  double d3(double t) const { return 0.5 * bump_d1(t / a_) / (a_ * a_ * mass_); }

  /// phi(t) = t phi'(t) - int_0^t u phi''(u) du.
  double value(double t) const {
    if (t <= 0.0) return 0.0;
    if (t >= a_) return 0.5 * t - 0.25 * a_;
    return t * d1(t) - 0.5 * a_ * bump_first_moment(t / a_) / mass_;
  }

 private:
  // int_0^x b, using the symmetry b(s) = b(1-s) to keep ranges short.
  double bump_cdf(double x) const {
    if (x <= 0.5) return quadrature::gauss_legendre(bump, 0.0, x);
    return mass_ - quadrature::gauss_legendre(bump, x, 1.0);
  }
  // int_0^x s b(s); the full integral is B/2 by symmetry.
  double bump_first_moment(double x) const {
    auto sb = [](double s) { return s * bump(s); };
    if (x <= 0.5) return quadrature::gauss_legendre(sb, 0.0, x);
    return 0.5 * mass_ - quadrature::gauss_legendre(sb, x, 1.0);
  }

  double a_;
  double mass_;
};

/// V(x) = phi(||x||^2) with phi a BumpProfile. Convex with V'' = I outside the
/// ball of radius sqrt(a) and degenerate (V''(0) = 0) at the origin, so only
/// the Fisher information, not V'', is bounded below.
class RadialSmoothPotential final : public Potential {
 public:
  RadialSmoothPotential(int dim, double support = 1.0) : Potential(dim), phi_(support) {
    const double d = dim;
    const BumpProfile phi = phi_;
    radius_ = LogDensity1D{
        [phi, d](double r) {
          if (r <= 0.0) return d == 1.0 ? -phi.value(0.0) : -std::numeric_limits<double>::infinity();
          return (d - 1.0) * std::log(r) - phi.value(r * r);
        },
        [phi, d](double r) {
          if (r <= 0.0) return d == 1.0 ? 0.0 : std::numeric_limits<double>::infinity();
          return (d - 1.0) / r - 2.0 * r * phi.d1(r * r);
        },
        0.0};
    radius_support_ = effective_support(radius_);

    RegularityConstants c;
    const double a = phi_.support();
    double sup_eig = 1.0;
    double sup_third = 0.0;
    constexpr int grid = 20000;
    for (int i = 0; i <= grid; ++i) {
      const double t = a * i / grid;
      sup_eig = std::max(sup_eig, 2.0 * phi_.d1(t) + 4.0 * t * phi_.d2(t));
      const double r = std::sqrt(t);
      sup_third = std::max(sup_third, 12.0 * r * std::abs(phi_.d2(t)) + 8.0 * r * t * std::abs(phi_.d3(t)));
    }
    c.M = sup_eig;
    c.L = 1.01 * sup_third;
    c.fisher_scale = expectation(radius_, radius_support_, [phi, d](double r) {
      const double t = r * r;
      return 2.0 * phi.d1(t) + 4.0 * t * phi.d2(t) / d;
    });
    c.m = c.fisher_scale;
    c.strongly_convex = false;
    c.noise_variance = expectation(radius_, radius_support_, [](double r) { return r * r; }) / d;
    set_constants(c);
  }

  FamilyKind kind() const override { return FamilyKind::radial; }
  std::string name() const override { return "radial_smooth"; }

  const BumpProfile& profile() const { return phi_; }
  const LogDensity1D& radius_density() const { return radius_; }
  const EffectiveSupport& radius_support() const { return radius_support_; }

  double value(VectorCRef x) const override { return phi_.value(x.squaredNorm()); }
  void gradient(VectorCRef x, VectorRef out) const override {
    out = (2.0 * phi_.d1(x.squaredNorm())) * x;
  }
  void hessian(VectorCRef x, MatrixRef out) const override {
    const double t = x.squaredNorm();
    out.noalias() = (4.0 * phi_.d2(t)) * x * x.transpose();
    out.diagonal().array() += 2.0 * phi_.d1(t);
  }

  void accumulate(VectorCRef x, double& value_sum, VectorRef grad_sum,
                  MatrixRef hess_sum) const override {
    const double t = x.squaredNorm();
    const double p1 = phi_.d1(t);
    value_sum += phi_.value(t);
    grad_sum += (2.0 * p1) * x;
    hess_sum.noalias() += (4.0 * phi_.d2(t)) * x * x.transpose();
    hess_sum.diagonal().array() += 2.0 * p1;
  }

 private:
  BumpProfile phi_;
  LogDensity1D radius_;
  EffectiveSupport radius_support_;
};

// --------------------------------------------------------------------------

inline PotentialPtr make_gaussian(int dim) { return std::make_shared<GaussianPotential>(dim); }

inline PotentialPtr make_product_logcosh(int dim, double quad_weight = 1.0, double logcosh_weight = 1.0) {
  return std::make_shared<ProductPotential>(dim, LogCoshScalar{quad_weight, logcosh_weight});
}

inline PotentialPtr make_radial_smooth(int dim, double support = 1.0) {
  return std::make_shared<RadialSmoothPotential>(dim, support);
}

}  // namespace lcbias
