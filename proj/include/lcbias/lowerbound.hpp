#pragma once

#include "lcbias/core.hpp"
#include "lcbias/quadrature.hpp"

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>
#include <functional>
#include <numbers>
#include <string>
#include <utility>
#include <vector>

namespace lcbias {

/// Prior density on a bounded interval [lower, upper], with its derivative.
struct Prior1D {
  std::string name;
  std::function<double(double)> density;
  std::function<double(double)> derivative;
  double lower = 0.0;
  double upper = 0.0;
};

/// (3/4) cos^3 s on [-pi/2, pi/2].
inline Prior1D cos3_prior() {
  const double h = std::numbers::pi / 2.0;
  return {"cos3",
          [h](double s) { return std::abs(s) >= h ? 0.0 : 0.75 * std::pow(std::cos(s), 3); },
          [h](double s) { return std::abs(s) >= h ? 0.0 : -2.25 * std::pow(std::cos(s), 2) * std::sin(s); },
          -h, h};
}

/// exp(-1/(1 - s^2)) on [-1, 1], normalized numerically.
inline Prior1D bump_prior() {
  auto raw = [](double s) { return std::abs(s) >= 1.0 ? 0.0 : std::exp(-1.0 / (1.0 - s * s)); };
  const double z = quadrature::integrate(raw, -1.0, 1.0, 1e-15);
  return {"bump",
          [raw, z](double s) { return raw(s) / z; },
          [raw, z](double s) {
            if (std::abs(s) >= 1.0) return 0.0;
            const double q = 1.0 - s * s;
            return raw(s) / z * (-2.0 * s / (q * q));
          },
          -1.0, 1.0};
}

/// pi_delta(s) = pi(s / delta) / delta.
inline Prior1D rescaled(const Prior1D& p, double delta) {
  require(delta > 0.0 && std::isfinite(delta), ErrorKind::invalid_parameter, "delta must be positive");
  return {p.name + "_rescaled",
          [f = p.density, delta](double s) { return f(s / delta) / delta; },
          [g = p.derivative, delta](double s) { return g(s / delta) / (delta * delta); },
          delta * p.lower, delta * p.upper};
}

/// J_pi = int pi'^2 / pi over the support. Points where pi < 1e-300
/// contribute nothing, which takes care of 0/0 at boundary zeros.
inline double prior_fisher_info(const Prior1D& prior, double abs_tol = 1e-9) {
  require(prior.lower < prior.upper, ErrorKind::invalid_parameter, "prior support is empty");
  auto integrand = [&](double s) {
    const double p = prior.density(s);
    if (p < 1e-300) return 0.0;
    const double d = prior.derivative(s);
    return d * d / p;
  };
  return quadrature::integrate(integrand, prior.lower, prior.upper, abs_tol);
}

namespace detail {

inline Eigen::VectorXd checked_eigenvalues(const Matrix& a, const char* what) {
  require(a.rows() == a.cols() && a.rows() > 0, ErrorKind::dimension_mismatch, std::string(what) + " must be square");
  require(a.allFinite(), ErrorKind::non_finite, std::string(what) + " has non-finite entries");
  Eigen::SelfAdjointEigenSolver<Matrix> eig(0.5 * (a + a.transpose()), Eigen::EigenvaluesOnly);
  const Eigen::VectorXd ev = eig.eigenvalues();
  const double scale = std::max(1.0, ev.cwiseAbs().maxCoeff());
  require(ev.minCoeff() > 1e-14 * scale, ErrorKind::singular_matrix, std::string(what) + " is singular");
  return ev;
}

}  // namespace detail

/// (1/n) tr((I + J / (delta^2 n))^{-1}) for a prior Fisher matrix J.
inline double van_trees_theta(const Matrix& fisher, const Matrix& j_pi, double delta, double n) {
  require(delta > 0.0 && n > 0.0, ErrorKind::invalid_parameter, "delta and n must be positive");
  require(j_pi.rows() == fisher.rows() && j_pi.cols() == fisher.cols(), ErrorKind::dimension_mismatch,
          "prior and model Fisher matrices differ in size");
  const Matrix a = fisher + j_pi / (delta * delta * n);
  return detail::checked_eigenvalues(a, "I + J/(delta^2 n)").cwiseInverse().sum() / n;
}

/// Product prior: J = j_pi * I.
inline double van_trees_theta(const Matrix& fisher, double j_pi, double delta, double n) {
  require(j_pi >= 0.0, ErrorKind::invalid_parameter, "prior Fisher information must be nonnegative");
  return van_trees_theta(fisher, j_pi * Matrix::Identity(fisher.rows(), fisher.cols()), delta, n);
}

/// ||I^{-1/2} f'|| - sqrt(J / (delta^2 n)) ||I^{-1} f'|| - int omega(|s|) Pi_delta(ds),
/// with Pi_delta the prior rescaled by delta. May be negative.
inline double van_trees_functional(double sigma_inv_grad_norm, double inv_grad_norm, double j_pi, double delta,
                                   double n, const std::function<double(double)>& modulus, const Prior1D& prior,
                                   double abs_tol = 1e-10) {
  require(sigma_inv_grad_norm >= 0.0 && inv_grad_norm >= 0.0 && j_pi >= 0.0, ErrorKind::invalid_parameter,
          "norms and prior information must be nonnegative");
  require(delta > 0.0 && n > 0.0, ErrorKind::invalid_parameter, "delta and n must be positive");
  // int omega(delta |u|) pi(u) du, split at 0 where |u| has its kink.
  auto integrand = [&](double u) { return modulus(delta * std::abs(u)) * prior.density(u); };
  double penalty = 0.0;
  if (prior.lower < 0.0 && prior.upper > 0.0) {
    penalty = quadrature::integrate(integrand, prior.lower, 0.0, abs_tol / 2) +
              quadrature::integrate(integrand, 0.0, prior.upper, abs_tol / 2);
  } else {
    penalty = quadrature::integrate(integrand, prior.lower, prior.upper, abs_tol);
  }
  return sigma_inv_grad_norm - std::sqrt(j_pi / (delta * delta * n)) * inv_grad_norm - penalty;
}

/// 1 - 3 pi / (sqrt(8 m) c) - (2 / sqrt(m)) cs_over_sigma (c / sqrt(n))^rho.
inline double local_minimax_bound(double m, double c, double cs_over_sigma, double rho, double n) {
  require(m > 0.0 && c > 0.0 && n > 0.0, ErrorKind::invalid_parameter, "m, c and n must be positive");
  require(rho > 0.0 && rho <= 1.0, ErrorKind::invalid_parameter, "rho must lie in (0, 1]");
  require(cs_over_sigma >= 0.0, ErrorKind::invalid_parameter, "norm ratio must be nonnegative");
  return 1.0 - 3.0 * std::numbers::pi / (std::sqrt(8.0 * m) * c) -
         2.0 / std::sqrt(m) * cs_over_sigma * std::pow(c / std::sqrt(n), rho);
}

/// (n^{-1/2} v (d/n)^{s/2}) ^ 1, the minimax rate up to its constant.
inline double global_minimax_rate(double n, double d, double s) {
  require(n >= 1.0 && d >= 1.0 && s > 0.0, ErrorKind::invalid_parameter, "need n, d >= 1 and s > 0");
  return std::min(1.0, std::max(1.0 / std::sqrt(n), std::pow(d / n, s / 2.0)));
}

/// A bound value with the inputs that produced it.
struct BoundReport {
  std::string formula_id;
  double bound_value = 0.0;
  std::vector<std::pair<std::string, double>> inputs;
};

}  // namespace lcbias
