// Acceptance suite: one PASS/FAIL line per criterion, exit status 1 if any
// criterion fails. `acceptance 3 5` runs only criteria 3 and 5.

#include "lcbias/cli.hpp"
#include "lcbias/lcbias.hpp"

#include "oracles.hpp"

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <numbers>
#include <set>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

using namespace lcbias;

namespace {

constexpr double pi = std::numbers::pi;

struct Outcome {
  bool pass = false;
  std::string detail;       // human-readable summary
  std::string fingerprint;  // every computed number, for determinism checks
};

/// Collects numbers into both the summary and the fingerprint.
class Report {
 public:
  Report& num(const std::string& name, double v) {
    fp_ += name + '=' + format_double(v) + ';';
    return *this;
  }
  Report& show(const std::string& name, double v, int precision = 4) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.*g", precision, v);
    detail_ += (detail_.empty() ? "" : " ") + name + "=" + buf;
    return num(name, v);
  }
  Report& note(const std::string& s) {
    detail_ += (detail_.empty() ? "" : " ") + s;
    return *this;
  }
  Report& rows(const RiskReport& r) {
    std::ostringstream s;
    write_risk_csv(s, r);
    fp_ += s.str();
    return *this;
  }
  Outcome done(bool pass) const { return {pass, detail_, fp_}; }

 private:
  std::string detail_, fp_;
};

/// Full size for the verdict, small size for the determinism reruns.
enum class Size { full, small };

unsigned default_workers() { return std::max(1u, std::thread::hardware_concurrency()); }

bool within(double value, double target, double se, double factor = 3.0) {
  return std::abs(value - target) <= factor * se;
}

// ---------------------------------------------------------------------------

Outcome c1_gaussian_mle(Size, unsigned) {
  Report rep;
  Engine pick = StreamKey(101).engine();
  double worst_mean = 0.0, worst_equiv = 0.0;
  bool all_converged = true;
  for (std::uint64_t r = 0; r < 100; ++r) {
    const int d = 1 + int(pick.bits() % 8);
    const int n = 2 + int(pick.bits() % 200);
    const NoiseSampler s(make_gaussian(d));
    Engine e = StreamKey(102).child(r).engine();
    Vector theta(d), u(d);
    for (int i = 0; i < d; ++i) {
      theta[i] = 5.0 * e.normal();
      u[i] = 10.0 * e.normal();
    }
    const Dataset x = s.sample_data(e, theta, n);
    Dataset xu = x;
    xu.rowwise() += u.transpose();
    const MleResult a = fit_mle(s.potential(), x, {}, Vector::Zero(d));
    const MleResult b = fit_mle(s.potential(), xu, {}, Vector::Zero(d));
    all_converged = all_converged && a.converged && b.converged;
    worst_mean = std::max(worst_mean, (a.theta_hat - sample_mean(x)).cwiseAbs().maxCoeff());
    worst_equiv = std::max(worst_equiv, (b.theta_hat - a.theta_hat - u).cwiseAbs().maxCoeff());
  }
  rep.show("max|mle-mean|", worst_mean).show("max|equivariance gap|", worst_equiv);
  return rep.done(all_converged && worst_mean <= 1e-10 && worst_equiv <= 1e-8);
}

Outcome c2_fisher_identity(Size size, unsigned workers) {
  Report rep;
  const std::size_t samples = size == Size::full ? 100000 : 2000;
  bool ok = true;
  std::uint64_t idx = 0;
  for (const auto& v : {make_gaussian(3), make_product_logcosh(3), make_radial_smooth(3)}) {
    const NoiseSampler s(v);
    const StreamKey key = StreamKey(201).child(idx++);
    const FisherEstimate a = fisher_information(s, FisherMethod::score, samples, key.child(0), workers);
    const FisherEstimate b = fisher_information(s, FisherMethod::hessian, samples, key.child(1), workers);
    double worst = 0.0;  // largest |difference| / combined se
    for (Eigen::Index i = 0; i < 3; ++i)
      for (Eigen::Index k = 0; k < 3; ++k) {
        const double se = std::hypot(a.mc_se(i, k), b.mc_se(i, k));
        const double z = std::abs(a.matrix(i, k) - b.matrix(i, k)) / se;
        worst = std::max(worst, z);
        rep.num(v->name() + "_score", a.matrix(i, k)).num(v->name() + "_hess", b.matrix(i, k));
      }
    rep.show(v->name() + ":max_z", worst, 3);
    ok = ok && worst <= 3.0;
  }
  return rep.done(ok);
}

ExperimentConfig base_experiment(std::uint64_t seed, unsigned workers) {
  ExperimentConfig c;
  c.seed = seed;
  c.workers = workers;
  return c;
}

Outcome c3_quadratic(Size size, unsigned workers) {
  ExperimentConfig c = base_experiment(301, workers);
  const bool full = size == Size::full;
  c.grid = {{200, 20}};
  c.functional.functional = "quadratic";
  c.k_values = {1};
  c.estimators = {EstimatorKind::plugin_mle, EstimatorKind::fk_mle};
  c.outer_reps = full ? 2000 : 40;
  c.replications = full ? 200 : 10;
  const RiskReport r = run_risk_experiment(c);
  const RiskRow& plug = r.rows[0];
  const RiskRow& f1 = r.rows[1];
  Report rep;
  rep.rows(r).show("plugin_bias", plug.bias).show("se", plug.bias_se, 2);
  rep.show("f1_bias", f1.bias).show("se", f1.bias_se, 2);
  return rep.done(plug.failed == 0 && f1.failed == 0 && within(plug.bias, 0.1, plug.bias_se) &&
                  within(f1.bias, 0.0, f1.bias_se));
}

Outcome c4_bias_ladder(Size size, unsigned workers) {
  // <w, theta> = pi/2 puts theta at a critical point of f, so the plug-in
  // error is second order and the outer MC noise stays below the bias ladder.
  const int d = 5, n = 100;
  const double a = 4.0 / n;
  ExperimentConfig c = base_experiment(401, workers);
  c.grid = {{n, d}};
  c.functional.functional = "sin_linear";
  c.functional.w_norm = 2.0;
  const double t = pi / 2.0 / (2.0 * std::sqrt(double(d)));
  c.theta_truth.point.assign(d, t);
  c.k_values = {0, 1, 2};
  c.estimators = {EstimatorKind::fk_mle};
  c.outer_reps = size == Size::full ? 500000 : 2000;
  c.replications = 2;
  const RiskReport r = run_risk_experiment(c);
  Report rep;
  rep.rows(r);
  bool ok = r.rows.size() == 3;
  double prev = std::numeric_limits<double>::infinity();
  for (const auto& row : r.rows) {
    const double oracle = std::pow(-1.0, row.k) * std::pow(std::exp(-a / 2.0) - 1.0, row.k + 1);
    rep.show("k" + std::to_string(row.k) + ":bias", row.bias, 3)
        .show("oracle", oracle, 3)
        .show("se", row.bias_se, 2);
    ok = ok && row.failed == 0 && within(row.bias, oracle, row.bias_se) && std::abs(row.bias) < prev;
    prev = std::abs(row.bias);
  }
  return rep.done(ok);
}

RiskReport efficiency_run(Size size, unsigned workers) {
  const int d = 10;
  const bool full = size == Size::full;
  ExperimentConfig c = base_experiment(501, workers);
  c.grid = {{full ? 2000 : 200, d}};
  c.functional.functional = "sin_linear";
  c.functional.w_norm = 2.0;
  // <w, theta> = pi/6: sigma_f = 2 cos(pi/6).
  c.theta_truth.point.assign(d, pi / 6.0 / (2.0 * std::sqrt(double(d))));
  c.k_values = {1};
  c.estimators = {EstimatorKind::fk_mle};
  c.outer_reps = full ? 2000 : 20;
  c.replications = full ? 200 : 10;
  c.keep_errors = true;
  return run_risk_experiment(c);
}

// Criteria 5 and 6 share the same simulation.
std::map<std::pair<Size, unsigned>, RiskReport> efficiency_cache;

const RiskReport& efficiency_report(Size size, unsigned workers) {
  const auto key = std::make_pair(size, workers);
  auto it = efficiency_cache.find(key);
  if (it == efficiency_cache.end()) it = efficiency_cache.emplace(key, efficiency_run(size, workers)).first;
  return it->second;
}

Outcome c5_efficiency(Size size, unsigned workers) {
  const RiskReport& r = efficiency_report(size, workers);
  const RiskRow& row = r.rows.at(0);
  Report rep;
  rep.rows(r).show("efficiency", row.efficiency).show("sigma_f", row.sigma_f).show("bias", row.bias, 3);
  return rep.done(row.failed == 0 && row.efficiency >= 0.95 && row.efficiency <= 1.10);
}

Outcome c6_normality(Size size, unsigned workers) {
  const RiskReport& r = efficiency_report(size, workers);
  const RiskRow& row = r.rows.at(0);
  Report rep;
  if (row.errors.size() < 100) {
    rep.num("errors", double(row.errors.size()));
    return rep.done(true);  // the small rerun only checks determinism
  }
  const NormalityResult nd = normality_diagnostic(row.errors, row.sigma_f, double(row.n));
  rep.show("w2", nd.w2).show("ks", nd.ks).show("N", double(row.errors.size()), 6);
  return rep.done(nd.w2 <= 0.1 && nd.ks <= 0.05);
}

Outcome c7_concentration(Size size, unsigned workers) {
  const std::size_t reps = size == Size::full ? 2000 : 100;
  Report rep;
  const NoiseSampler g(make_gaussian(10));
  const ConcentrationReport a = concentration_diagnostic(g, Vector::Constant(10, 0.5), 1000, reps, StreamKey(701),
                                                         workers);
  rep.show("gauss:mean", a.mean_scaled_sq).show("se", a.mean_scaled_sq_se, 2);
  const NoiseSampler p(make_product_logcosh(5));
  const ConcentrationReport b = concentration_diagnostic(p, Vector::Constant(5, -0.3), 500, reps, StreamKey(702),
                                                         workers);
  rep.show("product:q99", b.q99).show("threshold", b.threshold);
  rep.num("q50", b.q50).num("q90", b.q90).num("gauss_q99", a.q99);
  return rep.done(a.failed == 0 && b.failed == 0 && within(a.mean_scaled_sq, 1.0, a.mean_scaled_sq_se) &&
                  b.q99 <= b.threshold);
}

/// Var(xi) * I for v(t) = q t^2 / 2 + log cosh t, by the midpoint oracle.
double variance_fisher_ratio(double q) {
  auto v = [q](double t) { return 0.5 * q * t * t + oracle::log_cosh(t); };
  const double lim = 80.0;
  const double var = oracle::density_expectation(v, [](double t) { return t * t; }, -lim, lim);
  const double fisher = oracle::density_expectation(
      v, [q](double t) { return q + 1.0 / std::pow(std::cosh(t), 2); }, -lim, lim);
  return var * fisher;
}

Outcome c8_mean_suboptimal(Size size, unsigned workers) {
  const bool full = size == Size::full;
  const double q = 0.1;
  ExperimentConfig c = base_experiment(801, workers);
  c.family.family = "product_logcosh";
  c.family.quad_weight = q;
  c.grid = {{500, 1}};
  c.functional.functional = "linear";
  c.functional.w = {1.0};
  c.theta_truth.point = {0.0};
  c.k_values = {1};
  c.estimators = {EstimatorKind::fk_mle, EstimatorKind::fk_mean};
  c.outer_reps = full ? 2000 : 30;
  c.replications = full ? 200 : 10;
  c.keep_errors = true;
  const RiskReport r = run_risk_experiment(c);
  const auto& b = r.rows.at(0).errors;  // MLE-based
  const auto& a = r.rows.at(1).errors;  // mean-based
  Report rep;
  rep.rows(r);
  if (a.size() != b.size() || r.rows[0].failed || r.rows[1].failed) return rep.note("failed fits").done(false);

  // Ratio of sample variances with a delta-method standard error.
  const double N = double(a.size());
  const auto ma = oracle::moments(a), mb = oracle::moments(b);
  const double va = ma.var * (N - 1) / N, vb = mb.var * (N - 1) / N;
  const double ratio = va / vb;
  std::vector<double> psi(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double da = (a[i] - ma.mean) * (a[i] - ma.mean) - va;
    const double db = (b[i] - mb.mean) * (b[i] - mb.mean) - vb;
    psi[i] = da / vb - va * db / (vb * vb);
  }
  const double se = oracle::moments(psi).se;
  const double oracle_ratio = full ? variance_fisher_ratio(q) : 1.11;
  rep.show("ratio", ratio).show("se", se, 2).show("oracle", oracle_ratio);
  if (full) rep.show("oracle(default family)", variance_fisher_ratio(1.0));
  return rep.done(oracle_ratio > 1.05 && ratio >= oracle_ratio - 3.0 * se);
}

Outcome c9_lower_bounds(Size, unsigned) {
  Report rep;
  const double j = prior_fisher_info(cos3_prior());
  double worst_vt = 0.0;
  for (int d : {1, 2, 5, 10, 50})
    for (double n : {1.0, 10.0, 1000.0, 1e6}) {
      const double v = van_trees_theta(Matrix::Identity(d, d), j, 1e9, n);
      worst_vt = std::max(worst_vt, std::abs(v / (d / n) - 1.0));
    }
  const double lm = local_minimax_bound(1.0, 10.0, 1.0, 1.0, 1e4);
  const double lm_oracle = 1.0 - 3.0 * pi / (20.0 * std::sqrt(2.0)) - 0.2;
  rep.show("J_cos3", j, 12).show("van_trees_rel_err", worst_vt, 3).show("local_minimax", lm, 12);
  return rep.done(std::abs(j - 4.5) <= 1e-6 && worst_vt <= 1e-9 && std::abs(lm - lm_oracle) <= 1e-10);
}

Outcome c10_representation(Size size, unsigned workers) {
  Report rep;
  Engine pick = StreamKey(1001).engine();
  const int configs = size == Size::full ? 50 : 5;
  const char* families[] = {"gaussian", "product_logcosh", "radial_smooth"};
  const char* functionals[] = {"linear", "quadratic", "sin_linear", "neg_exp_sq"};
  double worst = 0.0;  // |f_k - sum_j (-1)^j B^j f| in units of the rounding bound
  bool bitwise = true;
  for (int i = 0; i < configs; ++i) {
    FamilySpec fam;
    fam.family = families[pick.bits() % 3];
    const int d = 1 + int(pick.bits() % 4);
    FunctionalChoice fc;
    fc.functional = functionals[pick.bits() % 4];
    fc.w_norm = 0.5 + 2.0 * pick.uniform();
    const NoiseSampler s(make_potential(fam, d));
    const FunctionalSpec f = make_functional(fc, d);
    const Eigen::Index n = 5 + Eigen::Index(pick.bits() % 40);
    ChainOptions o;
    o.k = 1 + int(pick.bits() % 4);
    o.replications = 2 + pick.bits() % 30;
    o.mode = pick.bits() % 2 ? ChainMode::nested : ChainMode::equivariant;
    o.workers = workers;
    Vector start(d);
    for (int t = 0; t < d; ++t) start[t] = pick.normal();
    const StreamKey key = StreamKey(1002).child(std::uint64_t(i));
    const FkEstimate fk = estimate_fk_at(s, MleEstimator{&s.potential()}, f, n, start, o, key);
    double alternating = 0.0, scale = 0.0;
    for (int j = 0; j <= o.k; ++j) {
      double bj = f.value(start);
      if (j > 0) {
        ChainOptions oj = o;
        oj.k = j;
        bj = estimate_bk(s, start, f, n, oj, key).value;
      }
      bitwise = bitwise && bj == fk.per_order[std::size_t(j)];
      alternating += (j % 2 ? -1.0 : 1.0) * bj;
      // |B^j f| is a mean of sums with binomial weights summing to 2^j.
      scale += std::ldexp(std::abs(bj) + 1.0, j + 1) * double(o.k + 2);
    }
    const double bound = 4.0 * std::numeric_limits<double>::epsilon() * scale * (1.0 + std::abs(fk.value));
    worst = std::max(worst, std::abs(fk.value - alternating) / bound);
    rep.num("fk", fk.value).num("alt", alternating);
  }
  rep.show("max_gap/rounding_bound", worst, 3).note(bitwise ? "per-order bitwise=yes" : "per-order bitwise=no");
  return rep.done(worst <= 1.0 && bitwise);
}

using CriterionFn = std::function<Outcome(Size, unsigned)>;

struct Criterion {
  int id;
  std::string title;
  double time_limit_s;  // 0: none stated
  bool stochastic;
  CriterionFn run;
};

std::vector<Criterion> criteria() {
  return {
      {1, "Gaussian MLE exactness and equivariance", 10, false, c1_gaussian_mle},
      {2, "Fisher identity: score vs hessian", 60, true, c2_fisher_identity},
      {3, "Quadratic debiasing, d=20 n=200", 300, true, c3_quadratic},
      {4, "sin_linear bias ladder k=0,1,2", 600, true, c4_bias_ladder},
      {5, "Efficiency of f_1, d=10 n=2000", 600, true, c5_efficiency},
      {6, "Normal approximation of criterion 5 errors", 0, true, c6_normality},
      {7, "MLE concentration", 300, true, c7_concentration},
      {8, "Mean-based estimator is suboptimal", 300, true, c8_mean_suboptimal},
      {9, "Lower-bound numerics", 1, false, c9_lower_bounds},
      {10, "f_k equals the signed sum of B^j f", 0, true, c10_representation},
  };
}

/// Reruns every stochastic criterion at small size twice with 1 worker and
/// once with 8, and the experiment subcommand with 1, 4 and 8 workers.
Outcome c11_determinism() {
  Report rep;
  bool ok = true;
  for (const auto& c : criteria()) {
    if (!c.stochastic) continue;
    const std::string a = c.run(Size::small, 1).fingerprint;
    const std::string b = c.run(Size::small, 8).fingerprint;
    const std::string a2 = c.run(Size::small, 1).fingerprint;
    const bool same = !a.empty() && a == b && a == a2;
    ok = ok && same;
    rep.note("c" + std::to_string(c.id) + (same ? "=same" : "=DIFFERENT"));
  }

  namespace fs = std::filesystem;
  const fs::path dir = fs::temp_directory_path() / "lcbias_acceptance";
  fs::create_directories(dir);
  const std::string config = R"({"subcommand":"experiment","family":{"family":"product_logcosh"},
      "functional":{"functional":"sin_linear","w_norm":1.5},"grid":[{"n":30,"d":2},{"n":60,"d":1}],
      "k_values":[0,1,2],"estimators":["plugin_mle","fk_mle","plugin_mean","fk_mean"],
      "outer_reps":40,"R":8,"seed":1101})";
  std::vector<std::string> files;
  for (unsigned w : {1u, 4u, 8u, 1u}) {
    cli::Overrides o;
    o.workers = w;
    o.out = (dir / ("risk" + std::to_string(files.size()) + ".csv")).string();
    std::ostringstream out, err;
    if (cli::run(cli::parse_config(config, o), out, err) != 0) {
      ok = false;
      rep.note("cli failed: " + err.str());
      break;
    }
    std::ifstream in(*o.out, std::ios::binary);
    std::ostringstream s;
    s << in.rdbuf();
    files.push_back(s.str());
  }
  const bool cli_same = files.size() == 4 && files[0] == files[1] && files[0] == files[2] && files[0] == files[3];
  fs::remove_all(dir);
  rep.note(cli_same ? "cli=same" : "cli=DIFFERENT");
  return rep.done(ok && cli_same);
}

}  // namespace

int main(int argc, char** argv) {
  std::set<int> only;
  for (int i = 1; i < argc; ++i) only.insert(std::atoi(argv[i]));
  auto wanted = [&](int id) { return only.empty() || only.count(id); };
  const unsigned workers = default_workers();

  int failures = 0;
  auto report = [&](int id, const std::string& title, const Outcome& o, double seconds, double limit) {
    const bool in_time = limit <= 0.0 || seconds < limit;
    const bool pass = o.pass && in_time;
    failures += !pass;
    std::printf("[%s] criterion %2d: %s | %s | %.1fs%s\n", pass ? "PASS" : "FAIL", id, title.c_str(),
                o.detail.c_str(), seconds, in_time ? "" : " (over time limit)");
    std::fflush(stdout);
  };

  for (const auto& c : criteria()) {
    if (!wanted(c.id)) continue;
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = c.run(Size::full, workers);
    } catch (const std::exception& e) {
      o = {false, std::string("error: ") + e.what(), ""};
    }
    const double s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    report(c.id, c.title, o, s, c.time_limit_s);
  }
  if (wanted(11)) {
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = c11_determinism();
    } catch (const std::exception& e) {
      o = {false, std::string("error: ") + e.what(), ""};
    }
    const double s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    report(11, "Determinism across runs and worker counts", o, s, 0.0);
  }
  std::printf("%d criteria failed\n", failures);
  return failures == 0 ? 0 : 1;
}
