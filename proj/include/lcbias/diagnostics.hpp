#pragma once

#include "lcbias/biasreduce.hpp"
#include "lcbias/core.hpp"
#include "lcbias/family.hpp"
#include "lcbias/mle.hpp"
#include "lcbias/model.hpp"
#include "lcbias/parallel.hpp"
#include "lcbias/random.hpp"
#include "lcbias/sampler.hpp"

#include <boost/math/distributions/normal.hpp>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

namespace lcbias {

enum class EstimatorKind { plugin_mle, fk_mle, plugin_mean, fk_mean };

inline std::string_view to_string(EstimatorKind e) {
  switch (e) {
    case EstimatorKind::plugin_mle: return "plugin_mle";
    case EstimatorKind::fk_mle: return "fk_mle";
    case EstimatorKind::plugin_mean: return "plugin_mean";
    case EstimatorKind::fk_mean: return "fk_mean";
  }
  return "unknown";
}

inline std::optional<EstimatorKind> estimator_kind(std::string_view name) {
  for (auto e : {EstimatorKind::plugin_mle, EstimatorKind::fk_mle, EstimatorKind::plugin_mean, EstimatorKind::fk_mean})
    if (to_string(e) == name) return e;
  return std::nullopt;
}

inline bool is_bias_reduced(EstimatorKind e) { return e == EstimatorKind::fk_mle || e == EstimatorKind::fk_mean; }
inline bool uses_mle(EstimatorKind e) { return e == EstimatorKind::plugin_mle || e == EstimatorKind::fk_mle; }

struct GridCell {
  std::int64_t n = 100;
  int d = 1;
  bool operator==(const GridCell&) const = default;
};

/// True parameter of an experiment: a fixed point, or a point drawn uniformly
/// from the sphere of the given radius (one draw per grid cell).
struct ThetaTruth {
  std::vector<double> point;
  std::optional<double> sphere_radius = 1.0;
  bool operator==(const ThetaTruth&) const = default;
};

struct ExperimentConfig {
  FamilySpec family;
  std::vector<GridCell> grid;
  FunctionalChoice functional;
  std::vector<int> k_values{1};
  std::vector<EstimatorKind> estimators{EstimatorKind::plugin_mle, EstimatorKind::fk_mle};
  std::size_t outer_reps = 2000;
  std::size_t replications = 200;  // R
  ThetaTruth theta_truth;
  std::uint64_t seed = 0;
  ChainMode mode = ChainMode::equivariant;
  MleOptions mle;
  unsigned workers = 1;
  /// Keep the per-replicate errors in each row (needed for normality checks
  /// downstream; costs memory on large runs).
  bool keep_errors = false;
};

/// Every violated constraint, one message each.
inline std::vector<std::string> violations(const ExperimentConfig& c) {
  std::vector<std::string> out;
  if (!is_known_family(c.family.family)) out.push_back("family: unknown family '" + c.family.family + "'");
  if (c.grid.empty()) out.push_back("grid: must be nonempty");
  for (std::size_t i = 0; i < c.grid.size(); ++i) {
    if (c.grid[i].n < 1) out.push_back("grid[" + std::to_string(i) + "].n: must be positive");
    if (c.grid[i].d < 1) out.push_back("grid[" + std::to_string(i) + "].d: must be positive");
    if (!c.theta_truth.point.empty() && int(c.theta_truth.point.size()) != c.grid[i].d)
      out.push_back("theta_truth: length differs from grid[" + std::to_string(i) + "].d");
    if (!c.functional.w.empty() && int(c.functional.w.size()) != c.grid[i].d)
      out.push_back("w: length differs from grid[" + std::to_string(i) + "].d");
  }
  if (!functional_kind(c.functional.functional))
    out.push_back("functional: unknown functional '" + c.functional.functional + "'");
  else if (functional_needs_w(c.functional.functional) && c.functional.w.empty() && !c.functional.w_norm)
    out.push_back("w: '" + c.functional.functional + "' needs w or w_norm");
  if (c.k_values.empty()) out.push_back("k: must list at least one order");
  for (int k : c.k_values)
    if (k < 0) out.push_back("k: orders must be nonnegative");
  if (c.estimators.empty()) out.push_back("estimators: must be nonempty");
  if (c.outer_reps < 1) out.push_back("outer_reps: must be positive");
  if (c.replications < 1) out.push_back("R: must be positive");
  if (c.theta_truth.point.empty() && !(c.theta_truth.sphere_radius && *c.theta_truth.sphere_radius >= 0.0))
    out.push_back("theta_truth: needs a point or a nonnegative sphere radius");
  return out;
}

inline void validate(const ExperimentConfig& c) {
  const auto v = violations(c);
  if (v.empty()) return;
  std::string msg;
  for (const auto& s : v) msg += (msg.empty() ? "" : "; ") + s;
  throw Error(ErrorKind::validation_error, msg);
}

// --------------------------------------------------------------------------

struct NormalityResult {
  double w2 = 0.0;
  double ks = 0.0;
};

/// Distance of the empirical law of z_i = sqrt(n) e_i / sigma to N(0, 1):
/// w2 pairs the sorted z with the normal quantiles at (i - 1/2)/N, ks is the
/// supremum gap between the empirical and normal CDFs. Pass n = 1 for errors
/// that are already on the sqrt(n) scale.
inline NormalityResult normality_diagnostic(std::vector<double> errors, double sigma, double n = 1.0) {
  require(errors.size() >= 100, ErrorKind::invalid_parameter, "normality diagnostic needs at least 100 errors");
  require(sigma > 0.0 && std::isfinite(sigma), ErrorKind::invalid_parameter, "sigma must be positive");
  require(n > 0.0, ErrorKind::invalid_parameter, "n must be positive");
  const auto [lo, hi] = std::minmax_element(errors.begin(), errors.end());
  require(*lo != *hi, ErrorKind::degenerate_sample, "all errors are equal");

  std::sort(errors.begin(), errors.end());
  const double scale = std::sqrt(n) / sigma;
  const double N = double(errors.size());
  const boost::math::normal_distribution<double> z;
  double ss = 0.0, ks = 0.0;
  for (std::size_t i = 0; i < errors.size(); ++i) {
    const double x = errors[i] * scale;
    const double q = boost::math::quantile(z, (double(i) + 0.5) / N);
    ss += (x - q) * (x - q);
    const double F = 0.5 * std::erfc(-x / std::numbers::sqrt2);
    ks = std::max({ks, std::abs(F - double(i) / N), std::abs(double(i + 1) / N - F)});
  }
  return {std::sqrt(ss / N), ks};
}

/// Type-7 (linear interpolation) sample quantile of sorted data.
inline double sorted_quantile(const std::vector<double>& sorted, double p) {
  require(!sorted.empty(), ErrorKind::invalid_parameter, "quantile of empty sample");
  const double h = (double(sorted.size()) - 1.0) * p;
  const auto i = std::size_t(std::floor(h));
  if (i + 1 >= sorted.size()) return sorted.back();
  return sorted[i] + (h - double(i)) * (sorted[i + 1] - sorted[i]);
}

struct ConcentrationReport {
  std::size_t reps = 0;
  std::size_t failed = 0;
  double q50 = 0.0;  // quantiles of sqrt(n/d) ||theta_hat - theta||
  double q90 = 0.0;
  double q99 = 0.0;
  double mean_scaled_sq = 0.0;  // mean of (n/d) ||theta_hat - theta||^2
  double mean_scaled_sq_se = 0.0;
  double threshold = 0.0;  // 10 sqrt(M) / m
  bool flagged = false;    // q99 > threshold
};

/// Replicate r fits the MLE to n draws from P_theta generated by key.child(r).
inline ConcentrationReport concentration_diagnostic(const NoiseSampler& sampler, const Vector& theta,
                                                    std::int64_t n, std::size_t reps, const StreamKey& key,
                                                    unsigned workers = 1, const MleOptions& mle = {}) {
  require(reps >= 100, ErrorKind::invalid_parameter, "concentration diagnostic needs at least 100 replicates");
  require(n >= 1, ErrorKind::invalid_parameter, "sample size must be positive");
  const Potential& v = sampler.potential();
  const double d = v.dim();
  std::vector<double> dist(reps, std::numeric_limits<double>::quiet_NaN());
  parallel_for(reps, workers, [&](std::size_t r) {
    Engine e = key.child(r).engine();
    const MleResult fit = fit_mle(v, sampler.sample_data(e, theta, n), mle);
    if (fit.converged) dist[r] = std::sqrt(double(n) / d) * (fit.theta_hat - theta).norm();
  });

  ConcentrationReport c;
  std::vector<double> kept, sq;
  for (double x : dist) {
    if (std::isnan(x)) {
      ++c.failed;
      continue;
    }
    kept.push_back(x);
    sq.push_back(x * x);
  }
  c.reps = kept.size();
  require(c.reps >= 2, ErrorKind::all_replicates_failed, "too few converged fits");
  double mean = 0.0;
  for (double s : sq) mean += s;
  mean /= double(sq.size());
  double ss = 0.0;
  for (double s : sq) ss += (s - mean) * (s - mean);
  c.mean_scaled_sq = mean;
  c.mean_scaled_sq_se = std::sqrt(ss / double(sq.size() - 1) / double(sq.size()));
  std::sort(kept.begin(), kept.end());
  c.q50 = sorted_quantile(kept, 0.5);
  c.q90 = sorted_quantile(kept, 0.9);
  c.q99 = sorted_quantile(kept, 0.99);
  c.threshold = 10.0 * std::sqrt(v.constants().M) / v.constants().m;
  c.flagged = c.q99 > c.threshold;
  return c;
}

/// The bias-reduction construction with the sample mean in place of the MLE,
/// both at the start point and along the chain.
inline FkEstimate mean_based_estimator(const NoiseSampler& sampler, const Dataset& data,
                                       const FunctionalSpec& functional, const ChainOptions& opts,
                                       const StreamKey& key) {
  return estimate_fk_at(sampler, MeanEstimator{}, functional, data.rows(), sample_mean(data), opts, key);
}

// --------------------------------------------------------------------------

struct RiskRow {
  std::int64_t n = 0;
  int d = 0;
  int k = 0;
  EstimatorKind estimator = EstimatorKind::plugin_mle;
  std::string functional;
  double bias = 0.0;
  double bias_se = 0.0;
  double variance = 0.0;  // population variance of the errors
  double rmse = 0.0;
  double sigma_f = 0.0;
  double efficiency = 0.0;  // sqrt(n) rmse / sigma_f
  double w2 = std::numeric_limits<double>::quiet_NaN();
  double ks = std::numeric_limits<double>::quiet_NaN();
  std::size_t reps = 0;            // outer replicates that produced an estimate
  std::size_t failed = 0;          // outer replicates lost to a module error
  std::size_t invalid_chains = 0;  // estimates whose chain set lost more than 1%
  std::uint64_t seed = 0;
  std::vector<double> theta;
  std::vector<double> errors;  // filled when keep_errors is set
};

struct RiskReport {
  std::vector<RiskRow> rows;
};

namespace detail {

struct CellPlan {
  GridCell cell;
  NoiseSampler sampler;
  FunctionalSpec functional;
  Vector theta;
  double sigma_f = 0.0;
  int kmax = 0;
  // Output slots: (estimator, k) per row, in report order.
  std::vector<std::pair<EstimatorKind, int>> slots;
};

inline Vector uniform_on_sphere(int d, double radius, Engine& e) {
  Vector x(d);
  double norm = 0.0;
  do {
    for (int i = 0; i < d; ++i) x[i] = e.normal();
    norm = x.norm();
  } while (norm == 0.0);
  return x * (radius / norm);
}

}  // namespace detail

/// Monte Carlo risk of the configured estimators over the grid.
///
/// Random streams: data for (cell c, replicate r) from seed/(0, c, r); chains
/// from seed/(1, c, r), shared by fk_mle and fk_mean; the true parameter of
/// cell c from seed/(2, c). All k values of one estimator reuse the same
/// chains, run to the largest k. Results do not depend on the worker count.
inline RiskReport run_risk_experiment(const ExperimentConfig& config) {
  validate(config);
  const StreamKey root(config.seed);

  std::vector<detail::CellPlan> plans;
  for (std::size_t c = 0; c < config.grid.size(); ++c) {
    detail::CellPlan p;
    p.cell = config.grid[c];
    p.sampler = NoiseSampler(make_potential(config.family, p.cell.d));
    p.functional = make_functional(config.functional, p.cell.d);
    if (!config.theta_truth.point.empty()) {
      p.theta = Eigen::Map<const Vector>(config.theta_truth.point.data(), p.cell.d);
    } else {
      Engine e = root.child({2, c}).engine();
      p.theta = detail::uniform_on_sphere(p.cell.d, *config.theta_truth.sphere_radius, e);
    }
    p.sigma_f = sigma_f(p.sampler.potential().reference_fisher(), p.functional, p.theta);
    p.kmax = *std::max_element(config.k_values.begin(), config.k_values.end());
    for (auto est : config.estimators) {
      if (is_bias_reduced(est)) {
        for (int k : config.k_values) p.slots.emplace_back(est, k);
      } else {
        p.slots.emplace_back(est, 0);
      }
    }
    plans.push_back(std::move(p));
  }

  // Flattened (cell, replicate) tasks; each writes only its own slot range.
  std::vector<std::size_t> offset(plans.size() + 1, 0);
  for (std::size_t c = 0; c < plans.size(); ++c) offset[c + 1] = offset[c] + plans[c].slots.size() * config.outer_reps;
  const double nan = std::numeric_limits<double>::quiet_NaN();
  std::vector<double> errors(offset.back(), nan);
  std::vector<char> invalid(offset.back(), 0);

  const std::size_t tasks = plans.size() * config.outer_reps;
  parallel_for(tasks, config.workers, [&](std::size_t t) {
    const std::size_t c = t / config.outer_reps, r = t % config.outer_reps;
    const detail::CellPlan& p = plans[c];
    const std::size_t base = offset[c] + r * p.slots.size();
    const double truth = p.functional.value(p.theta);
    Engine e = root.child({0, c, r}).engine();
    const Dataset data = p.sampler.sample_data(e, p.theta, p.cell.n);

    ChainOptions chain;
    chain.k = p.kmax;
    chain.replications = config.replications;
    chain.mode = config.mode;
    const StreamKey chain_key = root.child({1, c, r});

    // One start point and chain set per estimator family (MLE or mean).
    for (bool mle_based : {true, false}) {
      bool needed = false, needs_chain = false;
      for (const auto& [est, k] : p.slots)
        if (uses_mle(est) == mle_based) {
          needed = true;
          needs_chain = needs_chain || (is_bias_reduced(est) && k > 0);
        }
      if (!needed) continue;
      try {
        std::optional<ChainEvaluations> ev;
        Vector start;
        if (mle_based) {
          const MleEstimator est{&p.sampler.potential(), config.mle};
          const LocationFit fit = est(data);
          if (!fit.converged) continue;
          start = fit.theta;
          if (needs_chain)
            ev = evaluate_chains(p.sampler, est, p.functional, p.cell.n, start, chain, chain_key);
        } else {
          start = sample_mean(data);
          if (needs_chain)
            ev = evaluate_chains(p.sampler, MeanEstimator{}, p.functional, p.cell.n, start, chain, chain_key);
        }
        const double plug = p.functional.value(start);
        for (std::size_t s = 0; s < p.slots.size(); ++s) {
          const auto [est, k] = p.slots[s];
          if (uses_mle(est) != mle_based) continue;
          if (!is_bias_reduced(est) || k == 0) {
            errors[base + s] = plug - truth;
          } else {
            errors[base + s] = summarize_fk(*ev, k, start).value - truth;
            invalid[base + s] = !ev->valid();
          }
        }
      } catch (const Error&) {
        // Left as NaN; counted as a failed replicate for these rows.
      }
    }
  });

  RiskReport report;
  for (std::size_t c = 0; c < plans.size(); ++c) {
    const detail::CellPlan& p = plans[c];
    for (std::size_t s = 0; s < p.slots.size(); ++s) {
      RiskRow row;
      row.n = p.cell.n;
      row.d = p.cell.d;
      row.estimator = p.slots[s].first;
      row.k = p.slots[s].second;
      row.functional = p.functional.name;
      row.sigma_f = p.sigma_f;
      row.seed = config.seed;
      row.theta.assign(p.theta.data(), p.theta.data() + p.theta.size());
      std::vector<double> errs;
      errs.reserve(config.outer_reps);
      for (std::size_t r = 0; r < config.outer_reps; ++r) {
        const std::size_t i = offset[c] + r * p.slots.size() + s;
        if (std::isnan(errors[i])) {
          ++row.failed;
          continue;
        }
        errs.push_back(errors[i]);
        row.invalid_chains += invalid[i];
      }
      row.reps = errs.size();
      if (!errs.empty()) {
        const double N = double(errs.size());
        double sum = 0.0, sum_sq = 0.0;
        for (double x : errs) {
          sum += x;
          sum_sq += x * x;
        }
        row.bias = sum / N;
        double ss = 0.0;
        for (double x : errs) ss += (x - row.bias) * (x - row.bias);
        row.variance = ss / N;
        row.bias_se = errs.size() > 1 ? std::sqrt(ss / (N - 1.0) / N) : std::numeric_limits<double>::infinity();
        row.rmse = std::sqrt(sum_sq / N);
        row.efficiency = std::sqrt(double(p.cell.n)) * row.rmse / p.sigma_f;
        if (errs.size() >= 100 && p.sigma_f > 0.0) {
          try {
            const auto nd = normality_diagnostic(errs, p.sigma_f, double(p.cell.n));
            row.w2 = nd.w2;
            row.ks = nd.ks;
          } catch (const Error&) {
            // Degenerate error sample: w2/ks stay NaN.
          }
        }
      } else {
        row.bias = row.bias_se = row.variance = row.rmse = row.efficiency = nan;
      }
      if (config.keep_errors) row.errors = std::move(errs);
      report.rows.push_back(std::move(row));
    }
  }
  return report;
}

// --------------------------------------------------------------------------

/// Shortest decimal that reads back to the same double.
inline std::string format_double(double x) {
  if (std::isnan(x)) return "nan";
  if (std::isinf(x)) return x > 0 ? "inf" : "-inf";
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, x);
  return std::string(buf, res.ptr);
}

inline constexpr std::string_view kRiskCsvHeader =
    "n,d,k,estimator,functional,bias,bias_se,variance,rmse,sigma_f,efficiency,w2,ks,reps,seed";

inline void write_risk_csv(std::ostream& out, const RiskReport& report) {
  out << kRiskCsvHeader << '\n';
  for (const auto& r : report.rows) {
    out << r.n << ',' << r.d << ',' << r.k << ',' << to_string(r.estimator) << ',' << r.functional << ','
        << format_double(r.bias) << ',' << format_double(r.bias_se) << ',' << format_double(r.variance) << ','
        << format_double(r.rmse) << ',' << format_double(r.sigma_f) << ',' << format_double(r.efficiency) << ','
        << format_double(r.w2) << ',' << format_double(r.ks) << ',' << r.reps << ',' << r.seed << '\n';
  }
}

}  // namespace lcbias
