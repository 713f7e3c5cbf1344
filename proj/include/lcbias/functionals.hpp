#pragma once

#include "lcbias/core.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <string>

namespace lcbias {

/// Smooth scalar functional f with its gradient and Holder-class metadata.
///
/// smoothness_s is the exponent s of the class C^s the functional is used in,
/// and cs_norm_bound a claimed upper bound on ||f||_{C^s}; +infinity marks an
/// unbounded functional (linear, quadratic) for which the bound is vacuous.
struct FunctionalSpec {
  std::string name;
  std::function<double(const Vector&)> value;
  std::function<Vector(const Vector&)> gradient;
  double smoothness_s = 3.0;
  double cs_norm_bound = std::numeric_limits<double>::infinity();

  bool bounded() const { return std::isfinite(cs_norm_bound); }
};

enum class FunctionalKind { linear, quadratic, sin_linear, neg_exp_sq };

/// Order split of s = k + 1 + rho with rho in (0, 1].
struct HolderSplit {
  int k = 0;
  double rho = 1.0;
};

inline HolderSplit holder_split(double s) {
  require(std::isfinite(s), ErrorKind::invalid_parameter, "smoothness must be finite");
  require(s > 1.0, ErrorKind::too_rough, "smoothness s must exceed 1, got " + std::to_string(s));
  // Integer s takes rho = 1, so the order is ceil(s - 1) - 1.
  const int k = static_cast<int>(std::ceil(s - 1.0)) - 1;
  return {k, s - 1.0 - k};
}

/// Bias-reduction order k for the functional's smoothness.
inline int holder_order_k(const FunctionalSpec& spec) { return holder_split(spec.smoothness_s).k; }

namespace detail {

// ||f||_{C^s} for s = l + rho, given sup-norm bounds D(j) on the j-th
// derivatives: max_{j<=l} D(j) together with the rho-Holder seminorm of
// f^{(l)}, bounded by (2 D(l))^{1-rho} D(l+1)^rho.
template <class Bound>
double cs_norm_from_derivative_bounds(double s, const Bound& derivative_bound) {
  const int l = static_cast<int>(std::ceil(s)) - 1;
  const double rho = s - l;
  double norm = 0.0;
  for (int j = 0; j <= l; ++j) norm = std::max(norm, derivative_bound(j));
  const double holder = std::pow(2.0 * derivative_bound(l), 1.0 - rho) * std::pow(derivative_bound(l + 1), rho);
  return std::max(norm, holder);
}

}  // namespace detail

/// Builtin test functionals. `w` is ignored by quadratic and neg_exp_sq.
///
///   linear      f = <w, theta>
///   quadratic   f = ||theta||^2
///   sin_linear  f = sin <w, theta>,       ||f^{(j)}|| <= ||w||^j
///   neg_exp_sq  f = exp(-||theta||^2 / 2), ||f^{(j)}|| <= K sqrt(j!) (Cramer's bound)
inline FunctionalSpec builtin_functional(FunctionalKind kind, const Vector& w = Vector(),
                                         double smoothness_s = 3.0) {
  require(std::isfinite(smoothness_s) && smoothness_s > 0.0, ErrorKind::invalid_parameter,
          "smoothness must be positive and finite");
  const bool needs_w = kind == FunctionalKind::linear || kind == FunctionalKind::sin_linear;
  if (needs_w) {
    require(w.size() > 0 && w.allFinite(), ErrorKind::invalid_parameter, "weight vector must be finite");
    require(w.squaredNorm() > 0.0, ErrorKind::invalid_parameter, "weight vector must be nonzero");
  }

  FunctionalSpec f;
  f.smoothness_s = smoothness_s;
  switch (kind) {
    case FunctionalKind::linear:
      f.name = "linear";
      f.value = [w](const Vector& t) { return w.dot(t); };
      f.gradient = [w](const Vector&) { return w; };
      break;
    case FunctionalKind::quadratic:
      f.name = "quadratic";
      f.value = [](const Vector& t) { return t.squaredNorm(); };
      f.gradient = [](const Vector& t) { return Vector(2.0 * t); };
      break;
    case FunctionalKind::sin_linear: {
      f.name = "sin_linear";
      f.value = [w](const Vector& t) { return std::sin(w.dot(t)); };
      f.gradient = [w](const Vector& t) { return Vector(std::cos(w.dot(t)) * w); };
      const double wn = w.norm();
      f.cs_norm_bound = detail::cs_norm_from_derivative_bounds(
          smoothness_s, [wn](int j) { return std::pow(wn, j); });
      break;
    }
    case FunctionalKind::neg_exp_sq: {
      f.name = "neg_exp_sq";
      f.value = [](const Vector& t) { return std::exp(-0.5 * t.squaredNorm()); };
      f.gradient = [](const Vector& t) { return Vector(-std::exp(-0.5 * t.squaredNorm()) * t); };
      constexpr double cramer = 1.086435;
      f.cs_norm_bound = detail::cs_norm_from_derivative_bounds(smoothness_s, [](int j) {
        return cramer * std::sqrt(std::tgamma(j + 1.0));
      });
      break;
    }
  }
  return f;
}

/// g(theta) = f(theta + u).
inline FunctionalSpec shifted(const FunctionalSpec& f, const Vector& u) {
  FunctionalSpec g = f;
  g.name = f.name + "_shifted";
  g.value = [v = f.value, u](const Vector& t) { return v(t + u); };
  g.gradient = [d = f.gradient, u](const Vector& t) { return d(t + u); };
  return g;
}

}  // namespace lcbias
