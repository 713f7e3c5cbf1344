#pragma once

#include "lcbias/core.hpp"

#include <boost/math/quadrature/gauss.hpp>
#include <boost/math/quadrature/gauss_kronrod.hpp>

#include <algorithm>
#include <cmath>
#include <limits>
#include <utility>
#include <vector>
#include <string>

namespace lcbias::quadrature {

namespace detail {

struct Piece {
  double a, b, value, error;
};

// Boost reports the non-adaptive error estimate on the reference interval
// [-1, 1], so the rule is applied there and both outputs are rescaled.
template <class F>
Piece kronrod_piece(const F& f, double a, double b) {
  const double half = 0.5 * (b - a), mid = 0.5 * (a + b);
  auto g = [&](double x) { return f(half * x + mid); };
  double error = 0.0;
  const double value =
      boost::math::quadrature::gauss_kronrod<double, 15>::integrate(g, -1.0, 1.0, 0, 0.0, &error);
  return {a, b, half * value, half * error};
}

}  // namespace detail

/// Globally adaptive Gauss-Kronrod (7/15) integration of f over [a, b].
///
/// Repeatedly bisects the piece with the largest error estimate until the
/// summed estimate is below abs_tol, or below the rounding level of the
/// result. Throws NonIntegrable when `max_pieces` is reached first or the
/// integrand produces non-finite values.
template <class F>
double integrate(const F& f, double a, double b, double abs_tol, int max_pieces = 4000) {
  if (a == b) return 0.0;
  if (b < a) return -integrate(f, b, a, abs_tol, max_pieces);

  auto worse = [](const detail::Piece& x, const detail::Piece& y) { return x.error < y.error; };
  std::vector<detail::Piece> heap{detail::kronrod_piece(f, a, b)};
  auto totals = [&] {
    double err = 0.0, mag = 0.0;
    for (const auto& p : heap) {
      err += p.error;
      mag += std::abs(p.value);
    }
    return std::pair{err, mag};
  };
  for (;;) {
    const auto [err, mag] = totals();
    if (!std::isfinite(err) || !std::isfinite(mag)) break;
    if (err <= abs_tol || err <= 64.0 * std::numeric_limits<double>::epsilon() * mag) {
      // Sum in order of position so the result does not depend on the
      // order in which pieces were refined.
      std::sort(heap.begin(), heap.end(), [](const auto& x, const auto& y) { return x.a < y.a; });
      double sum = 0.0;
      for (const auto& p : heap) sum += p.value;
      return sum;
    }
    if (int(heap.size()) >= max_pieces) break;
    std::pop_heap(heap.begin(), heap.end(), worse);
    const detail::Piece worst = heap.back();
    heap.pop_back();
    const double mid = 0.5 * (worst.a + worst.b);
    if (!(mid > worst.a && mid < worst.b)) break;
    heap.push_back(detail::kronrod_piece(f, worst.a, mid));
    std::push_heap(heap.begin(), heap.end(), worse);
    heap.push_back(detail::kronrod_piece(f, mid, worst.b));
    std::push_heap(heap.begin(), heap.end(), worse);
  }
  throw Error(ErrorKind::non_integrable,
              "quadrature on [" + std::to_string(a) + ", " + std::to_string(b) +
                  "] did not reach tolerance " + std::to_string(abs_tol));
}

/// Fixed 30-point Gauss-Legendre rule; for smooth integrands on short ranges
/// where an adaptive driver would be wasteful.
template <class F>
double gauss_legendre(const F& f, double a, double b) {
  return boost::math::quadrature::gauss<double, 30>::integrate(f, a, b);
}

}  // namespace lcbias::quadrature
