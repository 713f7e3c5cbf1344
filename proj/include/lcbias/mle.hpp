#pragma once

#include "lcbias/core.hpp"
#include "lcbias/potential.hpp"

#include <Eigen/Cholesky>
#include <Eigen/Eigenvalues>

#include <cmath>
#include <vector>

namespace lcbias {

/// Empirical objective g(theta) = (1/n) sum_j V(X_j - theta) and its derivatives.
struct ObjectiveValue {
  double value = 0.0;
  Vector grad;
  Matrix hess;
};

inline void check_data(const Potential& v, const Dataset& data, const Vector& theta) {
  require(data.rows() >= 1, ErrorKind::invalid_parameter, "data set is empty");
  require(data.cols() == v.dim() && theta.size() == v.dim(), ErrorKind::dimension_mismatch,
          "data has " + std::to_string(data.cols()) + " columns, potential dimension is " +
              std::to_string(v.dim()));
}

inline ObjectiveValue objective(const Potential& v, const Dataset& data, const Vector& theta) {
  check_data(v, data, theta);
  const Eigen::Index d = v.dim();
  ObjectiveValue out{0.0, Vector::Zero(d), Matrix::Zero(d, d)};
  Vector residual(d);
  for (Eigen::Index j = 0; j < data.rows(); ++j) {
    residual = data.row(j).transpose() - theta;
    v.accumulate(residual, out.value, out.grad, out.hess);
  }
  const double inv_n = 1.0 / double(data.rows());
  out.value *= inv_n;
  out.grad *= -inv_n;
  out.hess *= inv_n;
  return out;
}

inline double objective_value(const Potential& v, const Dataset& data, const Vector& theta) {
  double s = 0.0;
  Vector residual(v.dim());
  for (Eigen::Index j = 0; j < data.rows(); ++j) {
    residual = data.row(j).transpose() - theta;
    s += v.value(residual);
  }
  return s / double(data.rows());
}

struct MleOptions {
  double tol = 1e-10;
  int max_iter = 100;
  double armijo = 1e-4;
  double backtrack = 0.5;
};

struct MleResult {
  Vector theta_hat;
  double grad_norm = 0.0;
  int iterations = 0;
  double hessian_min_eig = 0.0;
  bool converged = false;
  /// Objective value at the start and after every accepted step.
  std::vector<double> objective_trace;
};

inline Vector sample_mean(const Dataset& data) { return data.colwise().mean().transpose(); }

/// Maximum likelihood location estimate by damped Newton iteration.
///
/// Starts at `start` (the sample mean when empty). Each step solves the
/// Newton system by Cholesky, retrying with a 1e-12 ridge and falling back to
/// steepest descent if that fails, then backtracks until the Armijo condition
/// holds. Stops on ||grad|| <= tol or on an accepted step shorter than
/// tol (1 + ||theta||). If no step can decrease the objective in floating
/// point the current iterate is returned, converged when the Newton step there
/// already meets the step criterion. A run that exhausts max_iter comes back
/// with converged = false rather than throwing.
inline MleResult fit_mle(const Potential& v, const Dataset& data, const MleOptions& opts = {},
                         const Vector& start = Vector()) {
  MleResult r;
  r.theta_hat = start.size() == 0 ? sample_mean(data) : start;
  check_data(v, data, r.theta_hat);
  const Eigen::Index d = v.dim();

  // Line searches and the recorded trace use objective_value() so that the
  // descent test always compares identically computed sums.
  ObjectiveValue obj = objective(v, data, r.theta_hat);
  obj.value = objective_value(v, data, r.theta_hat);
  require(std::isfinite(obj.value) && obj.grad.allFinite(), ErrorKind::non_finite,
          "objective is not finite at the starting point");
  r.objective_trace.push_back(obj.value);

  auto finish = [&](bool converged) {
    r.grad_norm = obj.grad.norm();
    r.hessian_min_eig =
        Eigen::SelfAdjointEigenSolver<Matrix>(obj.hess, Eigen::EigenvaluesOnly).eigenvalues().minCoeff();
    r.converged = converged;
    return r;
  };

  Eigen::LLT<Matrix> llt;
  for (;;) {
    if (obj.grad.norm() <= opts.tol) return finish(true);
    if (r.iterations >= opts.max_iter) return finish(false);

    Vector step;
    llt.compute(obj.hess);
    if (llt.info() != Eigen::Success) llt.compute(obj.hess + 1e-12 * Matrix::Identity(d, d));
    if (llt.info() == Eigen::Success) step = llt.solve(-obj.grad);
    double slope = step.size() == d && step.allFinite() ? obj.grad.dot(step) : 0.0;
    if (!(slope < 0.0)) {
      step = -obj.grad;
      slope = -obj.grad.squaredNorm();
    }

    const double small_step = opts.tol * (1.0 + r.theta_hat.norm());
    double t = 1.0;
    double f = 0.0;
    Vector candidate;
    bool accepted = false;
    for (int k = 0; k < 60; ++k, t *= opts.backtrack) {
      candidate = r.theta_hat + t * step;
      f = objective_value(v, data, candidate);
      if (f <= obj.value + opts.armijo * t * slope) {
        accepted = true;
        break;
      }
    }
    if (!accepted) return finish(step.norm() <= small_step);

    const double moved = t * step.norm();
    r.theta_hat = candidate;
    ++r.iterations;
    obj = objective(v, data, r.theta_hat);
    obj.value = f;
    require(obj.grad.allFinite(), ErrorKind::non_finite, "gradient is not finite along the Newton path");
    r.objective_trace.push_back(obj.value);
    if (moved <= small_step) return finish(true);
  }
}

}  // namespace lcbias
