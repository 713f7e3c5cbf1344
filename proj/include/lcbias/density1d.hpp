#pragma once

#include "lcbias/core.hpp"
#include "lcbias/quadrature.hpp"

#include <cmath>
#include <functional>
#include <limits>

namespace lcbias {

/// Unnormalized one-dimensional log-concave density exp(g(x)) on
/// [lower, +inf), with g concave and its derivative available.
struct LogDensity1D {
  std::function<double(double)> log_density;
  std::function<double(double)> derivative;
  double lower = -std::numeric_limits<double>::infinity();
};

/// Interval carrying all but `tail_mass` of the probability, plus the
/// normalizing constant. All internal integrals are taken against
/// exp(g(x) - log_peak) to stay in range.
struct EffectiveSupport {
  double lo = 0.0;
  double hi = 0.0;
  double mode = 0.0;
  double log_peak = 0.0;
  /// log of the integral of exp(g) over the real line (up to tail_mass).
  double log_normalizer = 0.0;
};

namespace detail {

inline double find_mode(const LogDensity1D& density) {
  const auto& dg = density.derivative;
  const bool bounded_below = std::isfinite(density.lower);
  if (bounded_below && !(dg(density.lower) > 0.0)) return density.lower;

  // Bracket the root of the nonincreasing derivative.
  double left = bounded_below ? density.lower : -1.0;
  double right = bounded_below ? density.lower + 1.0 : 1.0;
  for (int i = 0; i < 200 && dg(right) > 0.0; ++i) right = left + 2.0 * (right - left);
  for (int i = 0; i < 200 && !bounded_below && dg(left) < 0.0; ++i) left = right - 2.0 * (right - left);
  require(dg(right) <= 0.0 && (bounded_below || dg(left) >= 0.0), ErrorKind::invalid_parameter,
          "density has no mode (not log-concave with vanishing tails)");
  for (int i = 0; i < 200 && right - left > 1e-14 * (1.0 + std::abs(left)); ++i) {
    const double mid = 0.5 * (left + right);
    (dg(mid) > 0.0 ? left : right) = mid;
  }
  return 0.5 * (left + right);
}

}  // namespace detail

/// Locates a window outside of which the density has relative mass below
/// `tail_mass`. For log-concave g and x beyond the mode, the tail satisfies
/// int_x^inf e^g <= e^{g(x)} / |g'(x)|, which is the stopping test.
inline EffectiveSupport effective_support(const LogDensity1D& density, double tail_mass = 1e-13) {
  EffectiveSupport s;
  s.mode = detail::find_mode(density);
  s.log_peak = density.log_density(s.mode);
  require(std::isfinite(s.log_peak), ErrorKind::non_finite, "log-density not finite at its mode");

  auto shifted = [&](double x) { return std::exp(density.log_density(x) - s.log_peak); };
  const double core_lo = std::isfinite(density.lower) ? std::max(density.lower, s.mode - 1.0) : s.mode - 1.0;
  const double core_mass = quadrature::integrate(shifted, core_lo, s.mode + 1.0, 1e-10);
  const double budget = 0.5 * tail_mass * core_mass;

  auto tail_ok = [&](double x, double direction) {
    const double slope = density.derivative(x) * direction;
    if (!(slope < 0.0)) return false;
    return std::exp(density.log_density(x) - s.log_peak) / (-slope) <= budget;
  };

  double step = 1.0;
  s.hi = s.mode + step;
  for (int i = 0; i < 200 && !tail_ok(s.hi, 1.0); ++i) s.hi = s.mode + (step *= 1.5);
  require(tail_ok(s.hi, 1.0), ErrorKind::invalid_parameter, "right tail does not decay");

  if (std::isfinite(density.lower)) {
    s.lo = density.lower;
  } else {
    step = 1.0;
    s.lo = s.mode - step;
    for (int i = 0; i < 200 && !tail_ok(s.lo, -1.0); ++i) s.lo = s.mode - (step *= 1.5);
    require(tail_ok(s.lo, -1.0), ErrorKind::invalid_parameter, "left tail does not decay");
  }

  const double total = quadrature::integrate(shifted, s.lo, s.hi, 1e-14 * core_mass);
  s.log_normalizer = s.log_peak + std::log(total);
  return s;
}

/// E h(X) for X with density proportional to exp(g), by adaptive quadrature.
template <class H>
double expectation(const LogDensity1D& density, const EffectiveSupport& support, const H& h,
                   double abs_tol = 1e-13) {
  auto weighted = [&](double x) {
    return h(x) * std::exp(density.log_density(x) - support.log_normalizer);
  };
  return quadrature::integrate(weighted, support.lo, support.hi, abs_tol);
}

}  // namespace lcbias
