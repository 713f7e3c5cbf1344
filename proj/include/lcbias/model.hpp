#pragma once

#include "lcbias/core.hpp"
#include "lcbias/functionals.hpp"
#include "lcbias/parallel.hpp"
#include "lcbias/potential.hpp"
#include "lcbias/random.hpp"
#include "lcbias/sampler.hpp"

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

namespace lcbias {

enum class FisherMethod { score, hessian };

inline std::string_view to_string(FisherMethod m) {
  return m == FisherMethod::score ? "score" : "hessian";
}

/// Monte Carlo estimate of the Fisher information with entrywise standard errors.
struct FisherEstimate {
  Matrix matrix;
  Matrix mc_se;
  FisherMethod method = FisherMethod::hessian;
  std::size_t samples = 0;
};

namespace detail {

/// Entrywise running mean and sum of squared deviations (Welford), mergeable
/// in a fixed order (Chan et al.).
struct MomentAccumulator {
  std::size_t count = 0;
  Matrix mean;
  Matrix m2;

  MomentAccumulator(Eigen::Index rows, Eigen::Index cols)
      : mean(Matrix::Zero(rows, cols)), m2(Matrix::Zero(rows, cols)) {}

  void add(const Matrix& x) {
    ++count;
    const Matrix delta = x - mean;
    mean += delta / double(count);
    m2.array() += delta.array() * (x - mean).array();
  }

  void merge(const MomentAccumulator& other) {
    if (other.count == 0) return;
    const double n1 = double(count), n2 = double(other.count), n = n1 + n2;
    const Matrix delta = other.mean - mean;
    mean += delta * (n2 / n);
    m2 += other.m2 + (delta.array().square() * (n1 * n2 / n)).matrix();
    count += other.count;
  }

  Matrix standard_error() const {
    if (count < 2) return Matrix::Constant(mean.rows(), mean.cols(), std::numeric_limits<double>::infinity());
    return (m2.array() / (double(count) * double(count - 1))).sqrt().matrix();
  }
};

inline constexpr std::size_t kChunk = 4096;

/// Draws `samples` noise points in fixed-size chunks (chunk c uses key.child(c))
/// and folds per_point(xi) into a MomentAccumulator. Chunks are merged in
/// index order, so the result does not depend on the number of workers.
template <class PerPoint>
MomentAccumulator chunked_moments(const NoiseSampler& sampler, std::size_t samples,
                                  const StreamKey& key, unsigned workers, Eigen::Index rows,
                                  Eigen::Index cols, const PerPoint& per_point) {
  const std::size_t chunks = (samples + kChunk - 1) / kChunk;
  std::vector<MomentAccumulator> partial(chunks, MomentAccumulator(rows, cols));
  parallel_for(chunks, workers, [&](std::size_t c) {
    const std::size_t count = std::min(kChunk, samples - c * kChunk);
    Engine engine = key.child(c).engine();
    const Dataset xi = sampler.sample_noise(engine, Eigen::Index(count));
    Matrix value(rows, cols);
    for (Eigen::Index j = 0; j < xi.rows(); ++j) {
      per_point(Vector(xi.row(j).transpose()), value);
      require(value.allFinite(), ErrorKind::non_finite, "non-finite Monte Carlo sample");
      partial[c].add(value);
    }
  });
  MomentAccumulator total(rows, cols);
  for (const auto& p : partial) total.merge(p);
  return total;
}

}  // namespace detail

/// Fisher information E V'(xi) V'(xi)^T (score) or E V''(xi) (hessian) by
/// Monte Carlo over xi ~ exp(-V). The returned matrix is symmetrized.
inline FisherEstimate fisher_information(const NoiseSampler& sampler, FisherMethod method,
                                         std::size_t samples, const StreamKey& key,
                                         unsigned workers = 1) {
  require(samples >= 100, ErrorKind::invalid_parameter, "at least 100 samples required");
  const Potential& v = sampler.potential();
  const Eigen::Index d = v.dim();
  auto moments = detail::chunked_moments(
      sampler, samples, key, workers, d, d, [&](const Vector& xi, Matrix& out) {
        if (method == FisherMethod::score) {
          const Vector g = v.gradient(xi);
          out.noalias() = g * g.transpose();
        } else {
          v.hessian(xi, out);
        }
      });
  FisherEstimate f;
  f.matrix = 0.5 * (moments.mean + moments.mean.transpose());
  f.mc_se = moments.standard_error();
  f.method = method;
  f.samples = samples;
  return f;
}

inline FisherEstimate fisher_information(const PotentialPtr& potential, FisherMethod method,
                                         std::size_t samples, const StreamKey& key,
                                         unsigned workers = 1) {
  return fisher_information(make_sampler(potential), method, samples, key, workers);
}

/// sqrt(<I^{-1} f'(theta), f'(theta)>), inverting through the symmetric
/// eigendecomposition. Eigenvalues below 1e-10 raise SingularFisher.
inline double sigma_f(const Matrix& fisher, const FunctionalSpec& functional, const Vector& theta) {
  require(fisher.rows() == fisher.cols() && fisher.rows() == theta.size(), ErrorKind::dimension_mismatch,
          "Fisher matrix and theta dimensions differ");
  Eigen::SelfAdjointEigenSolver<Matrix> eig(0.5 * (fisher + fisher.transpose()));
  const double floor = 1e-10;
  require(eig.eigenvalues().minCoeff() > floor, ErrorKind::singular_fisher,
          "Fisher information has an eigenvalue below " + std::to_string(floor));
  const Vector g = functional.gradient(theta);
  const Vector coords = eig.eigenvectors().transpose() * g;
  return std::sqrt((coords.array().square() / eig.eigenvalues().array()).sum());
}

inline double sigma_f(const FisherEstimate& fisher, const FunctionalSpec& functional, const Vector& theta) {
  return sigma_f(fisher.matrix, functional, theta);
}

/// K(P_theta || P_theta') = E V(xi + theta - theta') - V(xi) by Monte Carlo.
inline ScalarEstimate kl_divergence_mc(const NoiseSampler& sampler, const Vector& theta,
                                       const Vector& theta_prime, std::size_t samples,
                                       const StreamKey& key, unsigned workers = 1) {
  require(samples >= 100, ErrorKind::invalid_parameter, "at least 100 samples required");
  require(theta.size() == sampler.dim() && theta_prime.size() == sampler.dim(),
          ErrorKind::dimension_mismatch, "parameter dimension mismatch");
  const Potential& v = sampler.potential();
  const Vector shift = theta - theta_prime;
  auto moments = detail::chunked_moments(sampler, samples, key, workers, 1, 1,
                                         [&](const Vector& xi, Matrix& out) {
                                           out(0, 0) = v.value(xi + shift) - v.value(xi);
                                         });
  return {moments.mean(0, 0), moments.standard_error()(0, 0), samples};
}

// --------------------------------------------------------------------------

/// Worst-case discrepancies found by probing a potential's derivative oracles.
struct PotentialCheck {
  double gradient_rel_error = 0.0;   // ||V' - FD(V)|| / max(||V'||, 1)
  double hessian_rel_error = 0.0;    // ||V'' - FD(V')||_F / max(||V''||_F, 1)
  double asymmetry = 0.0;            // ||V'' - V''^T||_F
  double min_eigenvalue = 0.0;       // smallest eigenvalue of V'' seen
  double hessian_norm_ratio = 0.0;   // ||V''|| / M
  double lipschitz_ratio = 0.0;      // ||V''(x) - V''(y)|| / (L ||x - y||)
  int probes = 0;

  bool passes() const {
    return gradient_rel_error <= 1e-5 && hessian_rel_error <= 1e-4 && asymmetry <= 1e-12 &&
           min_eigenvalue >= -1e-12 && hessian_norm_ratio <= 1.0 + 1e-8 &&
           lipschitz_ratio <= 1.0 + 1e-6;
  }
};

/// Probes the value/gradient/hessian oracles and the claimed constants M, L at
/// points drawn from N(0, 4 I), pairing each probe with a nearby and a distant
/// partner for the Lipschitz check.
inline PotentialCheck check_potential(const Potential& v, int probes, const StreamKey& key) {
  const int d = v.dim();
  Engine engine = key.engine();
  auto draw = [&] {
    Vector x(d);
    for (int i = 0; i < d; ++i) x[i] = 2.0 * engine.normal();
    return x;
  };
  auto op_norm = [](const Matrix& a) {
    return Eigen::SelfAdjointEigenSolver<Matrix>(0.5 * (a + a.transpose()), Eigen::EigenvaluesOnly)
        .eigenvalues()
        .cwiseAbs()
        .maxCoeff();
  };

  PotentialCheck c;
  c.min_eigenvalue = std::numeric_limits<double>::infinity();
  const double M = v.constants().M;
  const double L = v.constants().L;
  for (int p = 0; p < probes; ++p) {
    const Vector x = draw();
    const Vector g = v.gradient(x);
    const Matrix h = v.hessian(x);

    Vector g_fd(d);
    Matrix h_fd(d, d);
    for (int i = 0; i < d; ++i) {
      const double step = 1e-5 * std::max(1.0, std::abs(x[i]));
      Vector xp = x, xm = x;
      xp[i] += step;
      xm[i] -= step;
      const double width = xp[i] - xm[i];
      g_fd[i] = (v.value(xp) - v.value(xm)) / width;
      h_fd.col(i) = (v.gradient(xp) - v.gradient(xm)) / width;
    }
    c.gradient_rel_error = std::max(c.gradient_rel_error, (g - g_fd).norm() / std::max(g.norm(), 1.0));
    c.hessian_rel_error = std::max(c.hessian_rel_error, (h - h_fd).norm() / std::max(h.norm(), 1.0));
    c.asymmetry = std::max(c.asymmetry, (h - h.transpose()).norm());

    Eigen::SelfAdjointEigenSolver<Matrix> eig(h, Eigen::EigenvaluesOnly);
    c.min_eigenvalue = std::min(c.min_eigenvalue, eig.eigenvalues().minCoeff());
    const double hn = eig.eigenvalues().cwiseAbs().maxCoeff();
    c.hessian_norm_ratio = std::max(c.hessian_norm_ratio, M > 0.0 ? hn / M : (hn > 0.0 ? INFINITY : 0.0));

    const Vector near = x + 0.1 * draw();
    for (const Vector& y : {near, draw()}) {
      const double diff = op_norm(h - v.hessian(y));
      const double allowed = L * (x - y).norm();
      const double ratio = allowed > 0.0 ? diff / allowed : (diff > 0.0 ? INFINITY : 0.0);
      c.lipschitz_ratio = std::max(c.lipschitz_ratio, ratio);
    }
    ++c.probes;
  }
  return c;
}

}  // namespace lcbias
