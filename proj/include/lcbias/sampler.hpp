#pragma once

#include "lcbias/core.hpp"
#include "lcbias/density1d.hpp"
#include "lcbias/potential.hpp"
#include "lcbias/quadrature.hpp"
#include "lcbias/random.hpp"

#include <algorithm>
#include <cmath>
#include <memory>
#include <optional>
#include <vector>

namespace lcbias {

/// Tabulated inverse CDF of a one-dimensional log-concave density.
///
/// Nodes (u_i, x_i) carry the exact CDF u_i = F(x_i). Between nodes the
/// inverse is a cubic Hermite segment whose end slopes start from the exact
/// derivative 1/p(x_i) and are then limited (Fritsch-Carlson) so that every
/// segment is monotone. Segments whose midpoint misses the true CDF by more
/// than the refinement tolerance are split.
class InverseCdfTable {
 public:
  struct Options {
    int base_nodes = 4096;
    double refine_tol = 1e-10;
    int max_refine_depth = 24;
  };

  InverseCdfTable() = default;

  InverseCdfTable(const LogDensity1D& density, const EffectiveSupport& support)
      : InverseCdfTable(density, support, Options{}) {}

  InverseCdfTable(const LogDensity1D& density, const EffectiveSupport& support, Options opts)
      : density_(density), support_(support) {
    const int nodes = std::max(2, opts.base_nodes);
    std::vector<double> xs(nodes + 1);
    for (int i = 0; i <= nodes; ++i)
      xs[i] = support.lo + (support.hi - support.lo) * double(i) / nodes;
    xs.back() = support.hi;

    // Mass of the window, used to renormalize the truncated density.
    std::vector<double> masses(nodes);
    double total = 0.0;
    for (int i = 0; i < nodes; ++i) {
      masses[i] = raw_mass(xs[i], xs[i + 1]);
      total += masses[i];
    }
    log_normalizer_ = support_.log_normalizer + std::log(total);

    // Segments whose mass does not register in double precision are merged
    // into their neighbour so both coordinates stay strictly increasing.
    double x_left = xs[0];
    double u_left = 0.0;
    double cumulative = 0.0;
    for (int i = 0; i < nodes; ++i) {
      cumulative += masses[i];
      const double u_right = i + 1 == nodes ? 1.0 : std::min(1.0, cumulative / total);
      if (!(u_right > u_left)) {
        if (u_left == 0.0) x_left = xs[i + 1];
        continue;
      }
      if (u_.empty()) {
        u_.push_back(u_left);
        x_.push_back(x_left);
      }
      refine(x_left, u_left, xs[i + 1], u_right, 0, opts);
      x_left = xs[i + 1];
      u_left = u_right;
    }
  }

  bool empty() const { return u_.empty(); }
  std::size_t size() const { return u_.size(); }
  const std::vector<double>& u_nodes() const { return u_; }
  const std::vector<double>& x_nodes() const { return x_; }
  double log_normalizer() const { return log_normalizer_; }

  /// Normalized density of the tabulated law.
  double density(double x) const {
    return std::exp(density_.log_density(x) - log_normalizer_);
  }

  /// F(x) by quadrature from the nearest node on the left.
  double exact_cdf(double x) const {
    if (x <= x_.front()) return 0.0;
    if (x >= x_.back()) return 1.0;
    const auto i = std::size_t(std::upper_bound(x_.begin(), x_.end(), x) - x_.begin()) - 1;
    return u_[i] + mass(x_[i], x);
  }

  double quantile(double u) const {
    require(!empty(), ErrorKind::table_not_built, "inverse CDF table is empty");
    if (u <= u_.front()) return x_.front();
    if (u >= u_.back()) return x_.back();
    const auto i = std::size_t(std::upper_bound(u_.begin(), u_.end(), u) - u_.begin()) - 1;
    return hermite(i, u);
  }

  /// Largest |F(q(u)) - u| over the nodes and segment midpoints.
  double tabulation_error() const {
    double worst = 0.0;
    for (std::size_t i = 0; i < u_.size(); ++i)
      worst = std::max(worst, std::abs(exact_cdf(x_[i]) - u_[i]));
    for (std::size_t i = 0; i + 1 < u_.size(); ++i) {
      const double um = 0.5 * (u_[i] + u_[i + 1]);
      worst = std::max(worst, std::abs(u_[i] + mass(x_[i], hermite(i, um)) - um));
    }
    return worst;
  }

 private:
  double raw_mass(double a, double b) const {
    auto p = [&](double x) { return std::exp(density_.log_density(x) - support_.log_normalizer); };
    return quadrature::integrate(p, a, b, 1e-16);
  }
  double mass(double a, double b) const {
    auto p = [&](double x) { return density(x); };
    return quadrature::integrate(p, a, b, 1e-15);
  }

  // Appends the segment (x0,u0)-(x1,u1), u0 < u1, splitting it while the
  // Hermite midpoint misses the CDF. The left node is already in the table.
  void refine(double x0, double u0, double x1, double u1, int depth, const Options& opts) {
    auto [ml, mr] = limited_slopes(x0, u0, x1, u1);
    const double um = 0.5 * (u0 + u1);
    const double err = std::abs(u0 + mass(x0, hermite_eval(x0, u0, ml, x1, u1, mr, um)) - um);
    if (err > opts.refine_tol && depth < opts.max_refine_depth) {
      const double xm = 0.5 * (x0 + x1);
      const double u_mid = u0 + mass(x0, xm);
      if (u_mid > u0 && u_mid < u1) {
        refine(x0, u0, xm, u_mid, depth + 1, opts);
        refine(xm, u_mid, x1, u1, depth + 1, opts);
        return;
      }
    }
    u_.push_back(u1);
    x_.push_back(x1);
    slope_left_.push_back(ml);
    slope_right_.push_back(mr);
  }

  std::pair<double, double> limited_slopes(double x0, double u0, double x1, double u1) const {
    const double secant = (x1 - x0) / (u1 - u0);
    auto exact = [&](double x) {
      const double p = density(x);
      return p > 0.0 ? 1.0 / p : std::numeric_limits<double>::infinity();
    };
    double alpha = std::min(exact(x0) / secant, 3.0);
    double beta = std::min(exact(x1) / secant, 3.0);
    const double r2 = alpha * alpha + beta * beta;
    if (r2 > 9.0) {
      const double tau = 3.0 / std::sqrt(r2);
      alpha *= tau;
      beta *= tau;
    }
    return {alpha * secant, beta * secant};
  }

  static double hermite_eval(double x0, double u0, double ml, double x1, double u1, double mr,
                             double u) {
    const double h = u1 - u0;
    const double t = (u - u0) / h;
    const double t2 = t * t, t3 = t2 * t;
    return (2 * t3 - 3 * t2 + 1) * x0 + (t3 - 2 * t2 + t) * h * ml + (-2 * t3 + 3 * t2) * x1 +
           (t3 - t2) * h * mr;
  }

  double hermite(std::size_t i, double u) const {
    return hermite_eval(x_[i], u_[i], slope_left_[i], x_[i + 1], u_[i + 1], slope_right_[i], u);
  }

  LogDensity1D density_;
  EffectiveSupport support_;
  double log_normalizer_ = 0.0;
  std::vector<double> u_;
  std::vector<double> x_;
  std::vector<double> slope_left_;
  std::vector<double> slope_right_;
};

enum class SamplerMethod { exact_gaussian, product_inverse_cdf, radial_inverse_cdf };

/// Draws i.i.d. noise xi ~ exp(-V) for a builtin potential. Immutable after
/// construction; share freely and give each thread its own Engine.
class NoiseSampler {
 public:
  NoiseSampler() = default;

  explicit NoiseSampler(PotentialPtr potential) : potential_(std::move(potential)) {
    require(potential_ != nullptr, ErrorKind::invalid_parameter, "null potential");
    switch (potential_->kind()) {
      case FamilyKind::gaussian:
        method_ = SamplerMethod::exact_gaussian;
        break;
      case FamilyKind::product: {
        const auto& p = dynamic_cast<const ProductPotential&>(*potential_);
        method_ = SamplerMethod::product_inverse_cdf;
        table_ = std::make_shared<const InverseCdfTable>(p.marginal(), p.marginal_support());
        break;
      }
      case FamilyKind::radial: {
        const auto& p = dynamic_cast<const RadialSmoothPotential&>(*potential_);
        method_ = SamplerMethod::radial_inverse_cdf;
        table_ = std::make_shared<const InverseCdfTable>(p.radius_density(), p.radius_support());
        break;
      }
      case FamilyKind::custom:
        throw Error(ErrorKind::unsupported_sampler, "no sampler registered for " + potential_->name());
    }
  }

  const Potential& potential() const { return *potential_; }
  const PotentialPtr& potential_ptr() const { return potential_; }
  SamplerMethod method() const { return method_; }
  int dim() const { return potential_->dim(); }
  const InverseCdfTable* table() const { return table_.get(); }

  /// Fills `out` (n rows, d columns) with noise draws, row by row.
  void sample_noise_into(Engine& engine, Eigen::Ref<Dataset> out) const {
    require(potential_ != nullptr, ErrorKind::table_not_built, "sampler is not initialized");
    require(out.cols() == dim(), ErrorKind::dimension_mismatch, "output has wrong dimension");
    switch (method_) {
      case SamplerMethod::exact_gaussian:
        for (Eigen::Index j = 0; j < out.rows(); ++j)
          for (Eigen::Index i = 0; i < out.cols(); ++i) out(j, i) = engine.normal();
        return;
      case SamplerMethod::product_inverse_cdf: {
        const InverseCdfTable& t = checked_table();
        for (Eigen::Index j = 0; j < out.rows(); ++j)
          for (Eigen::Index i = 0; i < out.cols(); ++i) out(j, i) = t.quantile(engine.uniform());
        return;
      }
      case SamplerMethod::radial_inverse_cdf: {
        const InverseCdfTable& t = checked_table();
        for (Eigen::Index j = 0; j < out.rows(); ++j) {
          const double radius = t.quantile(engine.uniform());
          auto row = out.row(j);
          double norm = 0.0;
          do {
            for (Eigen::Index i = 0; i < out.cols(); ++i) row[i] = engine.normal();
            norm = row.norm();
          } while (norm == 0.0);
          row *= radius / norm;
        }
        return;
      }
    }
  }

  Dataset sample_noise(Engine& engine, Eigen::Index n) const {
    require(n >= 1, ErrorKind::invalid_parameter, "sample size must be positive");
    Dataset out(n, dim());
    sample_noise_into(engine, out);
    return out;
  }

  /// X_j = theta + xi_j, consuming the engine exactly as sample_noise does.
  Dataset sample_data(Engine& engine, VectorCRef theta, Eigen::Index n) const {
    require(theta.size() == dim(), ErrorKind::dimension_mismatch, "theta has wrong dimension");
    Dataset out = sample_noise(engine, n);
    out.rowwise() += theta.transpose();
    return out;
  }

 private:
  const InverseCdfTable& checked_table() const {
    require(table_ && !table_->empty(), ErrorKind::table_not_built, "inverse CDF table missing");
    return *table_;
  }

  PotentialPtr potential_;
  SamplerMethod method_ = SamplerMethod::exact_gaussian;
  std::shared_ptr<const InverseCdfTable> table_;
};

inline NoiseSampler make_sampler(const PotentialPtr& potential) { return NoiseSampler(potential); }

}  // namespace lcbias
