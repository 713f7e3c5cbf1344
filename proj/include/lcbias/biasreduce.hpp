#pragma once

#include "lcbias/core.hpp"
#include "lcbias/functionals.hpp"
#include "lcbias/mle.hpp"
#include "lcbias/parallel.hpp"
#include "lcbias/random.hpp"
#include "lcbias/sampler.hpp"

#include <cmath>
#include <concepts>
#include <cstdint>
#include <limits>
#include <optional>
#include <string>
#include <vector>

namespace lcbias {

enum class ChainMode { nested, equivariant };

inline std::string_view to_string(ChainMode m) {
  return m == ChainMode::nested ? "nested" : "equivariant";
}

/// Output of a location estimator applied to one data set.
struct LocationFit {
  Vector theta;
  bool converged = true;
};

template <class E>
concept LocationEstimator = requires(const E& e, const Dataset& x) {
  { e(x) } -> std::same_as<LocationFit>;
};

/// The MLE of the location family.
struct MleEstimator {
  const Potential* potential = nullptr;
  MleOptions options{};

  LocationFit operator()(const Dataset& x) const {
    MleResult r = fit_mle(*potential, x, options);
    return {std::move(r.theta_hat), r.converged};
  }
};

/// The sample mean, the estimator behind the mean-based construction.
struct MeanEstimator {
  LocationFit operator()(const Dataset& x) const { return {sample_mean(x), true}; }
};

// --------------------------------------------------------------------------

/// Signed weights (-1)^j C(k+1, j+1), j = 0..k, of f(theta^(j)) in f_k.
inline std::vector<std::int64_t> binomial_weights_fk(int k) {
  require(k >= 0, ErrorKind::invalid_parameter, "order must be nonnegative");
  std::vector<std::int64_t> w(k + 1);
  std::int64_t c = k + 1;  // C(k+1, 1)
  for (int j = 0; j <= k; ++j) {
    w[j] = (j % 2 == 0) ? c : -c;
    c = c * (k + 1 - (j + 1)) / (j + 2);
  }
  return w;
}

/// Signed weights (-1)^(k-j) C(k, j), j = 0..k, of the k-th order difference.
inline std::vector<std::int64_t> binomial_weights_bk(int k) {
  require(k >= 0, ErrorKind::invalid_parameter, "order must be nonnegative");
  std::vector<std::int64_t> w(k + 1);
  std::int64_t c = 1;  // C(k, 0)
  for (int j = 0; j <= k; ++j) {
    w[j] = ((k - j) % 2 == 0) ? c : -c;
    c = c * (k - j) / (j + 1);
  }
  return w;
}

// --------------------------------------------------------------------------

/// One realization theta^(0), ..., theta^(k) of the bootstrap chain.
struct ChainPath {
  std::vector<Vector> states;
  ChainMode mode = ChainMode::equivariant;
  StreamKey seed_key{0};
};

/// Simulates the bootstrap chain; step j draws its sample from key.child(j).
///
/// nested:      theta^(j+1) = estimator(n fresh draws from P_{theta^(j)})
/// equivariant: theta^(j+1) = theta^(j) + estimator(n draws of pure noise)
///
/// The two modes agree in law for translation-equivariant estimators. Returns
/// nullopt if any inner fit fails to converge.
template <LocationEstimator E>
std::optional<ChainPath> try_simulate_chain(const NoiseSampler& sampler, const E& estimator,
                                            Eigen::Index n, const Vector& start, int k,
                                            ChainMode mode, const StreamKey& key) {
  require(k >= 0, ErrorKind::invalid_parameter, "chain length must be nonnegative");
  require(n >= 1, ErrorKind::invalid_parameter, "sample size must be positive");
  require(start.size() == sampler.dim(), ErrorKind::dimension_mismatch, "start point has wrong dimension");
  ChainPath path{{start}, mode, key};
  path.states.reserve(k + 1);
  for (int j = 1; j <= k; ++j) {
    Engine engine = key.child(j).engine();
    const Vector& current = path.states.back();
    if (mode == ChainMode::nested) {
      LocationFit fit = estimator(sampler.sample_data(engine, current, n));
      if (!fit.converged) return std::nullopt;
      path.states.push_back(std::move(fit.theta));
    } else {
      LocationFit fit = estimator(sampler.sample_noise(engine, n));
      if (!fit.converged) return std::nullopt;
      path.states.push_back(current + fit.theta);
    }
  }
  return path;
}

template <LocationEstimator E>
ChainPath simulate_chain(const NoiseSampler& sampler, const E& estimator, Eigen::Index n,
                         const Vector& start, int k, ChainMode mode, const StreamKey& key) {
  auto path = try_simulate_chain(sampler, estimator, n, start, k, mode, key);
  if (!path) throw Error(ErrorKind::mle_failure, "an inner fit along the bootstrap chain did not converge");
  return *std::move(path);
}

inline ChainPath simulate_chain(const NoiseSampler& sampler, Eigen::Index n, const Vector& start, int k,
                                ChainMode mode, const StreamKey& key, const MleOptions& opts = {}) {
  return simulate_chain(sampler, MleEstimator{&sampler.potential(), opts}, n, start, k, mode, key);
}

// --------------------------------------------------------------------------

/// f evaluated along R independent chains: row r holds f(theta_r^(j)),
/// j = 0..k. Replicate r uses key.child(r); failed replicates are dropped
/// and counted.
struct ChainEvaluations {
  Matrix values;
  std::size_t requested = 0;
  std::size_t dropped = 0;
  ChainMode mode = ChainMode::equivariant;

  std::size_t kept() const { return std::size_t(values.rows()); }
  int order() const { return int(values.cols()) - 1; }
  /// At most 1% of replicates may be lost before the estimate is flagged.
  bool valid() const { return dropped * 100 <= requested; }
};

struct ChainOptions {
  int k = 1;
  std::size_t replications = 200;
  ChainMode mode = ChainMode::equivariant;
  unsigned workers = 1;
};

template <LocationEstimator E>
ChainEvaluations evaluate_chains(const NoiseSampler& sampler, const E& estimator,
                                 const FunctionalSpec& functional, Eigen::Index n, const Vector& start,
                                 const ChainOptions& opts, const StreamKey& key) {
  require(opts.replications >= 1, ErrorKind::invalid_parameter, "at least one replicate required");
  const int k = opts.k;
  std::vector<std::optional<Eigen::RowVectorXd>> rows(opts.replications);
  parallel_for(opts.replications, opts.workers, [&](std::size_t r) {
    auto path = try_simulate_chain(sampler, estimator, n, start, k, opts.mode, key.child(r));
    if (!path) return;
    Eigen::RowVectorXd row(k + 1);
    for (int j = 0; j <= k; ++j) row[j] = functional.value(path->states[j]);
    rows[r] = std::move(row);
  });

  ChainEvaluations out;
  out.requested = opts.replications;
  out.mode = opts.mode;
  std::size_t kept = 0;
  for (const auto& row : rows) kept += row.has_value();
  out.dropped = opts.replications - kept;
  if (kept == 0) throw Error(ErrorKind::all_replicates_failed, "every bootstrap chain failed");
  out.values.resize(Eigen::Index(kept), k + 1);
  Eigen::Index i = 0;
  for (const auto& row : rows)
    if (row) out.values.row(i++) = *row;
  return out;
}

namespace detail {

inline ScalarEstimate weighted_replicate_mean(const ChainEvaluations& ev,
                                              const std::vector<std::int64_t>& weights) {
  require(int(weights.size()) <= ev.values.cols(), ErrorKind::invalid_parameter,
          "requested order exceeds the simulated chain length");
  const Eigen::Index R = ev.values.rows();
  std::vector<double> sums(R);
  for (Eigen::Index r = 0; r < R; ++r) {
    double s = 0.0;
    for (std::size_t j = 0; j < weights.size(); ++j) s += double(weights[j]) * ev.values(r, Eigen::Index(j));
    sums[r] = s;
  }
  double mean = 0.0;
  for (double s : sums) mean += s;
  mean /= double(R);
  double ss = 0.0;
  for (double s : sums) ss += (s - mean) * (s - mean);
  const double se = R > 1 ? std::sqrt(ss / double(R - 1) / double(R)) : std::numeric_limits<double>::infinity();
  return {mean, se, std::size_t(R)};
}

}  // namespace detail

/// Monte Carlo estimate of f_k at the chain start.
struct FkEstimate {
  double value = 0.0;
  double se = 0.0;
  int k = 0;
  std::size_t replications = 0;  // chains kept
  std::size_t requested = 0;
  std::size_t dropped = 0;
  bool valid = true;
  ChainMode mode = ChainMode::equivariant;
  Vector start;
  /// (B^j f)(start) for j = 0..k from the same chains; entry 0 is f(start).
  std::vector<double> per_order;
  std::vector<double> per_order_se;
};

/// (B^order f)(start) from chain evaluations (order <= simulated length).
inline ScalarEstimate summarize_bk(const ChainEvaluations& ev, int order) {
  return detail::weighted_replicate_mean(ev, binomial_weights_bk(order));
}

/// f_order(start) = E sum_j (-1)^j C(order+1, j+1) f(theta^(j)).
inline FkEstimate summarize_fk(const ChainEvaluations& ev, int order, const Vector& start) {
  const ScalarEstimate total = detail::weighted_replicate_mean(ev, binomial_weights_fk(order));
  FkEstimate e;
  e.value = total.value;
  e.se = total.se;
  e.k = order;
  e.replications = ev.kept();
  e.requested = ev.requested;
  e.dropped = ev.dropped;
  e.valid = ev.valid();
  e.mode = ev.mode;
  e.start = start;
  // Every chain starts at `start`, so column 0 is the constant f(start).
  e.per_order.push_back(ev.values(0, 0));
  e.per_order_se.push_back(0.0);
  for (int j = 1; j <= order; ++j) {
    const ScalarEstimate b = summarize_bk(ev, j);
    e.per_order.push_back(b.value);
    e.per_order_se.push_back(b.se);
  }
  return e;
}

/// Plug-in value f(start) as an order-0 estimate (no simulation).
inline FkEstimate plugin_estimate(const FunctionalSpec& functional, const Vector& start, ChainMode mode) {
  FkEstimate e;
  e.value = functional.value(start);
  e.k = 0;
  e.mode = mode;
  e.start = start;
  e.per_order = {e.value};
  e.per_order_se = {0.0};
  return e;
}

/// f_k evaluated at `start` using chains built from `estimator`.
template <LocationEstimator E>
FkEstimate estimate_fk_at(const NoiseSampler& sampler, const E& estimator, const FunctionalSpec& functional,
                          Eigen::Index n, const Vector& start, const ChainOptions& opts, const StreamKey& key) {
  require(opts.k >= 0, ErrorKind::invalid_parameter, "order must be nonnegative");
  if (opts.k == 0) return plugin_estimate(functional, start, opts.mode);
  const ChainEvaluations ev = evaluate_chains(sampler, estimator, functional, n, start, opts, key);
  return summarize_fk(ev, opts.k, start);
}

/// The bias-reduced estimator f_k(theta_hat): fits the MLE on `data` once and
/// runs R chains of length k from it, each on samples of the data's size.
inline FkEstimate estimate_fk(const NoiseSampler& sampler, const Dataset& data, const FunctionalSpec& functional,
                              const ChainOptions& opts, const StreamKey& key, const MleOptions& mle = {}) {
  const MleEstimator estimator{&sampler.potential(), mle};
  const LocationFit fit = estimator(data);
  if (!fit.converged) throw Error(ErrorKind::mle_failure, "MLE on the observed data did not converge");
  return estimate_fk_at(sampler, estimator, functional, data.rows(), fit.theta, opts, key);
}

/// (B^k f)(start) as the mean k-th order difference along R chains.
template <LocationEstimator E>
ScalarEstimate estimate_bk_at(const NoiseSampler& sampler, const E& estimator, const FunctionalSpec& functional,
                              Eigen::Index n, const Vector& start, const ChainOptions& opts, const StreamKey& key) {
  require(opts.k >= 1, ErrorKind::invalid_parameter, "difference order must be at least 1");
  return summarize_bk(evaluate_chains(sampler, estimator, functional, n, start, opts, key), opts.k);
}

inline ScalarEstimate estimate_bk(const NoiseSampler& sampler, const Vector& start, const FunctionalSpec& functional,
                                  Eigen::Index n, const ChainOptions& opts, const StreamKey& key,
                                  const MleOptions& mle = {}) {
  return estimate_bk_at(sampler, MleEstimator{&sampler.potential(), mle}, functional, n, start, opts, key);
}

}  // namespace lcbias
