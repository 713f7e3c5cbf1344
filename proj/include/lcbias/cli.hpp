#pragma once

// Run configuration, dispatch and structured output for the lcbias tool.
// Needs nlohmann/json on the include path (target lcbias_vendor).

#include "lcbias/biasreduce.hpp"
#include "lcbias/core.hpp"
#include "lcbias/diagnostics.hpp"
#include "lcbias/family.hpp"
#include "lcbias/lowerbound.hpp"
#include "lcbias/mle.hpp"
#include "lcbias/model.hpp"
#include "lcbias/sampler.hpp"

#include <json.hpp>

#include <algorithm>
#include <charconv>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <ostream>
#include <set>
#include <string>
#include <vector>

namespace lcbias::cli {

using Json = nlohmann::ordered_json;

enum class Subcommand { fit, fisher, estimate, experiment, lowerbound, diagnose };
enum class OutputFormat { csv, jsonl };

inline constexpr Subcommand kSubcommands[] = {Subcommand::fit,        Subcommand::fisher,     Subcommand::estimate,
                                              Subcommand::experiment, Subcommand::lowerbound, Subcommand::diagnose};

inline std::string_view to_string(Subcommand s) {
  switch (s) {
    case Subcommand::fit: return "fit";
    case Subcommand::fisher: return "fisher";
    case Subcommand::estimate: return "estimate";
    case Subcommand::experiment: return "experiment";
    case Subcommand::lowerbound: return "lowerbound";
    case Subcommand::diagnose: return "diagnose";
  }
  return "unknown";
}

inline std::optional<Subcommand> subcommand_from(std::string_view name) {
  for (auto s : kSubcommands)
    if (to_string(s) == name) return s;
  return std::nullopt;
}

inline std::string_view to_string(OutputFormat f) { return f == OutputFormat::csv ? "csv" : "jsonl"; }

/// Parameters of the `lowerbound` subcommand: a formula name, an optional
/// prior and named numeric inputs.
struct BoundSpec {
  std::string formula;
  std::string prior = "cos3";
  std::map<std::string, double> params;
  bool operator==(const BoundSpec&) const = default;
};

struct RunConfig {
  Subcommand subcommand = Subcommand::fit;
  FamilySpec family;
  std::optional<FunctionalChoice> functional;
  std::string data;           // CSV path: fit, estimate, diagnose/normality
  std::vector<double> theta;  // fisher (sigma_f point), diagnose/concentration truth
  std::optional<std::uint64_t> seed;
  std::string out;  // empty: stdout
  OutputFormat format = OutputFormat::jsonl;
  unsigned workers = 1;
  double tol = 1e-10;
  int max_iter = 100;
  // estimate
  int k = 1;
  std::size_t replications = 200;  // "R"
  ChainMode mode = ChainMode::equivariant;
  std::string estimator = "mle";  // mle | mean
  // fisher
  std::size_t samples = 100000;
  std::string fisher_method = "both";  // score | hessian | both
  // experiment
  std::vector<GridCell> grid;
  std::vector<int> k_values{1};
  std::vector<EstimatorKind> estimators{EstimatorKind::plugin_mle, EstimatorKind::fk_mle};
  std::size_t outer_reps = 2000;
  ThetaTruth theta_truth;
  // lowerbound
  std::optional<BoundSpec> bound;
  // diagnose
  std::string diagnostic = "concentration";  // concentration | normality
  std::int64_t n = 0;
  std::size_t reps = 1000;
  double sigma = 0.0;

  bool operator==(const RunConfig&) const = default;
};

/// Command-line values that take precedence over the config document.
struct Overrides {
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out;
  std::optional<unsigned> workers;
  std::optional<OutputFormat> format;
};

inline bool is_stochastic(const RunConfig& c) {
  switch (c.subcommand) {
    case Subcommand::fit:
    case Subcommand::lowerbound: return false;
    case Subcommand::diagnose: return c.diagnostic != "normality";
    default: return true;
  }
}

// --------------------------------------------------------------------------
// Parsing

namespace detail {

inline const std::set<std::string>& top_level_fields() {
  static const std::set<std::string> f{
      "subcommand", "family",  "functional",    "data",       "theta",     "seed",    "out",
      "format",     "workers", "tol",           "max_iter",   "k",         "R",       "mode",
      "estimator",  "samples", "fisher_method", "grid",       "k_values",  "estimators",
      "outer_reps", "theta_truth", "bound",     "diagnostic", "n",         "reps",    "sigma"};
  return f;
}

/// Line and column (1-based) of a byte offset.
inline std::pair<std::size_t, std::size_t> line_col(const std::string& text, std::size_t byte) {
  std::size_t line = 1, col = 1;
  for (std::size_t i = 0; i < std::min(byte, text.size()); ++i) {
    if (text[i] == '\n') {
      ++line;
      col = 1;
    } else {
      ++col;
    }
  }
  return {line, col};
}

[[noreturn]] inline void field_error(const std::string& field, const std::string& what) {
  throw Error(ErrorKind::parse_error, "field '" + field + "': " + what);
}

inline void reject_unknown(const Json& obj, const std::set<std::string>& allowed, const std::string& prefix) {
  for (const auto& [key, value] : obj.items())
    if (!allowed.count(key)) field_error(prefix + key, "unknown field");
}

inline const Json& expect_object(const Json& j, const std::string& field) {
  if (!j.is_object()) field_error(field, "expected an object");
  return j;
}

inline double as_double(const Json& j, const std::string& field) {
  if (!j.is_number()) field_error(field, "expected a number");
  return j.get<double>();
}

inline std::int64_t as_int(const Json& j, const std::string& field) {
  if (!j.is_number_integer()) field_error(field, "expected an integer");
  return j.get<std::int64_t>();
}

inline std::uint64_t as_uint64(const Json& j, const std::string& field) {
  if (j.is_number_unsigned()) return j.get<std::uint64_t>();
  if (j.is_number_integer()) field_error(field, "expected a nonnegative integer");
  field_error(field, "expected an integer");
}

inline std::string as_string(const Json& j, const std::string& field) {
  if (!j.is_string()) field_error(field, "expected a string");
  return j.get<std::string>();
}

inline std::vector<double> as_doubles(const Json& j, const std::string& field) {
  if (!j.is_array()) field_error(field, "expected an array of numbers");
  std::vector<double> out;
  for (std::size_t i = 0; i < j.size(); ++i) out.push_back(as_double(j[i], field + "[" + std::to_string(i) + "]"));
  return out;
}

inline std::size_t as_count(const Json& j, const std::string& field, std::vector<std::string>& violations) {
  const std::int64_t v = as_int(j, field);
  if (v < 0) {
    violations.push_back(field + ": must be nonnegative");
    return 0;
  }
  return std::size_t(v);
}

inline FamilySpec parse_family(const Json& j) {
  expect_object(j, "family");
  reject_unknown(j, {"family", "dim", "quad_weight", "logcosh_weight", "support"}, "family.");
  FamilySpec f;
  if (j.contains("family")) f.family = as_string(j["family"], "family.family");
  if (j.contains("dim")) f.dim = int(as_int(j["dim"], "family.dim"));
  if (j.contains("quad_weight")) f.quad_weight = as_double(j["quad_weight"], "family.quad_weight");
  if (j.contains("logcosh_weight")) f.logcosh_weight = as_double(j["logcosh_weight"], "family.logcosh_weight");
  if (j.contains("support")) f.support = as_double(j["support"], "family.support");
  return f;
}

inline FunctionalChoice parse_functional(const Json& j) {
  expect_object(j, "functional");
  reject_unknown(j, {"functional", "w", "w_norm", "smoothness"}, "functional.");
  FunctionalChoice f;
  if (j.contains("functional")) f.functional = as_string(j["functional"], "functional.functional");
  if (j.contains("w")) f.w = as_doubles(j["w"], "functional.w");
  if (j.contains("w_norm")) f.w_norm = as_double(j["w_norm"], "functional.w_norm");
  if (j.contains("smoothness")) f.smoothness = as_double(j["smoothness"], "functional.smoothness");
  return f;
}

inline std::optional<ChainMode> chain_mode_from(std::string_view s) {
  if (s == "nested") return ChainMode::nested;
  if (s == "equivariant") return ChainMode::equivariant;
  return std::nullopt;
}

inline std::optional<OutputFormat> format_from(std::string_view s) {
  if (s == "csv") return OutputFormat::csv;
  if (s == "jsonl" || s == "json-lines") return OutputFormat::jsonl;
  return std::nullopt;
}

/// Inputs each bound formula accepts; the bool marks required ones.
inline const std::map<std::string, std::map<std::string, bool>>& bound_inputs() {
  static const std::map<std::string, std::map<std::string, bool>> m{
      {"prior_fisher_info", {{"delta", false}}},
      {"van_trees_theta", {{"n", true}, {"delta", true}, {"j_pi", false}}},
      {"van_trees_functional",
       {{"n", true},
        {"delta", true},
        {"sigma_inv_grad_norm", true},
        {"inv_grad_norm", true},
        {"j_pi", false},
        {"modulus_c1", false},
        {"modulus_alpha", false}}},
      {"local_minimax", {{"m", true}, {"c", true}, {"cs_over_sigma", true}, {"rho", true}, {"n", true}}},
      {"global_rate", {{"n", true}, {"d", true}, {"s", true}}},
  };
  return m;
}

inline BoundSpec parse_bound(const Json& j) {
  expect_object(j, "bound");
  BoundSpec b;
  for (const auto& [key, value] : j.items()) {
    if (key == "formula") {
      b.formula = as_string(value, "bound.formula");
    } else if (key == "prior") {
      b.prior = as_string(value, "bound.prior");
    } else {
      b.params[key] = as_double(value, "bound." + key);
    }
  }
  return b;
}

inline std::vector<std::string> bound_violations(const BoundSpec& b) {
  std::vector<std::string> out;
  const auto& table = bound_inputs();
  const auto it = table.find(b.formula);
  if (it == table.end()) {
    out.push_back("bound.formula: unknown formula '" + b.formula + "'");
    return out;
  }
  if (b.prior != "cos3" && b.prior != "bump") out.push_back("bound.prior: must be cos3 or bump");
  for (const auto& [key, value] : b.params)
    if (!it->second.count(key)) out.push_back("bound." + key + ": not an input of " + b.formula);
  for (const auto& [key, required] : it->second)
    if (required && !b.params.count(key)) out.push_back("bound." + key + ": required by " + b.formula);
  return out;
}

}  // namespace detail

/// Every violated constraint of a parsed config.
inline std::vector<std::string> violations(const RunConfig& c) {
  std::vector<std::string> out;
  if (!is_known_family(c.family.family)) out.push_back("family.family: unknown family '" + c.family.family + "'");
  if (c.family.dim < 1) out.push_back("family.dim: must be positive");
  if (!(c.family.quad_weight > 0.0)) out.push_back("family.quad_weight: must be positive");
  if (!(c.family.logcosh_weight >= 0.0)) out.push_back("family.logcosh_weight: must be nonnegative");
  if (!(c.family.support > 0.0)) out.push_back("family.support: must be positive");
  if (is_stochastic(c) && !c.seed) out.push_back("seed: required for " + std::string(to_string(c.subcommand)));
  if (c.workers < 1) out.push_back("workers: must be positive");
  if (!(c.tol > 0.0)) out.push_back("tol: must be positive");
  if (c.max_iter < 1) out.push_back("max_iter: must be positive");
  auto needs_data = [&] {
    if (c.data.empty()) out.push_back("data: required for " + std::string(to_string(c.subcommand)));
  };
  auto needs_functional = [&] {
    if (!c.functional) {
      out.push_back("functional: required for " + std::string(to_string(c.subcommand)));
    } else if (!functional_kind(c.functional->functional)) {
      out.push_back("functional.functional: unknown functional '" + c.functional->functional + "'");
    } else if (functional_needs_w(c.functional->functional) && c.functional->w.empty() && !c.functional->w_norm) {
      out.push_back("functional.w: '" + c.functional->functional + "' needs w or w_norm");
    }
  };
  auto theta_matches_dim = [&] {
    if (!c.theta.empty() && int(c.theta.size()) != c.family.dim)
      out.push_back("theta: length differs from family.dim");
  };
  switch (c.subcommand) {
    case Subcommand::fit: needs_data(); break;
    case Subcommand::fisher:
      if (c.samples < 100) out.push_back("samples: must be at least 100");
      if (c.fisher_method != "score" && c.fisher_method != "hessian" && c.fisher_method != "both")
        out.push_back("fisher_method: must be score, hessian or both");
      if (c.functional) needs_functional();
      theta_matches_dim();
      break;
    case Subcommand::estimate:
      needs_data();
      needs_functional();
      if (c.k < 0) out.push_back("k: must be nonnegative");
      if (c.replications < 1) out.push_back("R: must be positive");
      if (c.estimator != "mle" && c.estimator != "mean") out.push_back("estimator: must be mle or mean");
      break;
    case Subcommand::experiment: {
      ExperimentConfig e;
      e.family = c.family;
      e.grid = c.grid;
      e.functional = c.functional.value_or(FunctionalChoice{});
      e.k_values = c.k_values;
      e.estimators = c.estimators;
      e.outer_reps = c.outer_reps;
      e.replications = c.replications;
      e.theta_truth = c.theta_truth;
      needs_functional();
      // Family and functional problems are already reported above.
      for (auto& v : lcbias::violations(e))
        if (v.rfind("functional", 0) != 0 && v.rfind("family", 0) != 0 && v.rfind("w:", 0) != 0)
          out.push_back(v);
      if (c.functional)
        for (std::size_t i = 0; i < c.grid.size(); ++i)
          if (!c.functional->w.empty() && int(c.functional->w.size()) != c.grid[i].d)
            out.push_back("functional.w: length differs from grid[" + std::to_string(i) + "].d");
      break;
    }
    case Subcommand::lowerbound:
      if (!c.bound) {
        out.push_back("bound: required for lowerbound");
      } else {
        for (auto& v : detail::bound_violations(*c.bound)) out.push_back(v);
      }
      break;
    case Subcommand::diagnose:
      if (c.diagnostic == "concentration") {
        if (c.n < 1) out.push_back("n: must be positive");
        if (c.reps < 100) out.push_back("reps: must be at least 100");
        theta_matches_dim();
      } else if (c.diagnostic == "normality") {
        needs_data();
        if (!(c.sigma > 0.0)) out.push_back("sigma: must be positive");
        if (c.n < 1) out.push_back("n: must be positive");
      } else {
        out.push_back("diagnostic: must be concentration or normality");
      }
      break;
  }
  return out;
}

inline void validate(const RunConfig& c) {
  const auto v = violations(c);
  if (v.empty()) return;
  std::string msg;
  for (const auto& s : v) msg += (msg.empty() ? "" : "; ") + s;
  throw Error(ErrorKind::validation_error, msg);
}

/// Reads the JSON document into a RunConfig without validating it. Syntax
/// and type errors raise ParseError naming the line or the field.
inline RunConfig parse_config_unvalidated(const std::string& text) {
  Json j;
  try {
    j = Json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    const auto [line, col] = detail::line_col(text, e.byte == 0 ? 0 : e.byte - 1);
    throw Error(ErrorKind::parse_error,
                "line " + std::to_string(line) + ", column " + std::to_string(col) + ": malformed JSON");
  }
  if (!j.is_object()) throw Error(ErrorKind::parse_error, "line 1: config must be a JSON object");
  detail::reject_unknown(j, detail::top_level_fields(), "");

  using namespace detail;
  RunConfig c;
  std::vector<std::string> bad;  // range problems found while reading counts
  if (!j.contains("subcommand")) field_error("subcommand", "missing");
  const std::string sub = as_string(j["subcommand"], "subcommand");
  const auto s = subcommand_from(sub);
  if (!s) field_error("subcommand", "unknown subcommand '" + sub + "'");
  c.subcommand = *s;
  c.format = c.subcommand == Subcommand::experiment ? OutputFormat::csv : OutputFormat::jsonl;

  if (j.contains("family")) c.family = parse_family(j["family"]);
  if (j.contains("functional")) c.functional = parse_functional(j["functional"]);
  if (j.contains("data")) c.data = as_string(j["data"], "data");
  if (j.contains("theta")) c.theta = as_doubles(j["theta"], "theta");
  if (j.contains("seed")) c.seed = as_uint64(j["seed"], "seed");
  if (j.contains("out")) c.out = as_string(j["out"], "out");
  if (j.contains("format")) {
    const auto f = format_from(as_string(j["format"], "format"));
    if (!f) field_error("format", "must be csv or jsonl");
    c.format = *f;
  }
  if (j.contains("workers")) c.workers = unsigned(as_count(j["workers"], "workers", bad));
  if (j.contains("tol")) c.tol = as_double(j["tol"], "tol");
  if (j.contains("max_iter")) c.max_iter = int(as_int(j["max_iter"], "max_iter"));
  if (j.contains("k")) c.k = int(as_int(j["k"], "k"));
  if (j.contains("R")) c.replications = as_count(j["R"], "R", bad);
  if (j.contains("mode")) {
    const auto m = chain_mode_from(as_string(j["mode"], "mode"));
    if (!m) field_error("mode", "must be nested or equivariant");
    c.mode = *m;
  }
  if (j.contains("estimator")) c.estimator = as_string(j["estimator"], "estimator");
  if (j.contains("samples")) c.samples = as_count(j["samples"], "samples", bad);
  if (j.contains("fisher_method")) c.fisher_method = as_string(j["fisher_method"], "fisher_method");
  if (j.contains("grid")) {
    if (!j["grid"].is_array()) field_error("grid", "expected an array of {n, d} objects");
    for (std::size_t i = 0; i < j["grid"].size(); ++i) {
      const std::string field = "grid[" + std::to_string(i) + "]";
      const Json& g = expect_object(j["grid"][i], field);
      reject_unknown(g, {"n", "d"}, field + ".");
      if (!g.contains("n") || !g.contains("d")) field_error(field, "needs both n and d");
      c.grid.push_back({as_int(g["n"], field + ".n"), int(as_int(g["d"], field + ".d"))});
    }
  }
  if (j.contains("k_values")) {
    if (!j["k_values"].is_array()) field_error("k_values", "expected an array of integers");
    c.k_values.clear();
    for (std::size_t i = 0; i < j["k_values"].size(); ++i)
      c.k_values.push_back(int(as_int(j["k_values"][i], "k_values[" + std::to_string(i) + "]")));
  }
  if (j.contains("estimators")) {
    if (!j["estimators"].is_array()) field_error("estimators", "expected an array of names");
    c.estimators.clear();
    for (std::size_t i = 0; i < j["estimators"].size(); ++i) {
      const std::string field = "estimators[" + std::to_string(i) + "]";
      const auto e = estimator_kind(as_string(j["estimators"][i], field));
      if (!e) field_error(field, "must be plugin_mle, fk_mle, plugin_mean or fk_mean");
      c.estimators.push_back(*e);
    }
  }
  if (j.contains("outer_reps")) c.outer_reps = as_count(j["outer_reps"], "outer_reps", bad);
  if (j.contains("theta_truth")) {
    const Json& t = expect_object(j["theta_truth"], "theta_truth");
    reject_unknown(t, {"point", "sphere_radius"}, "theta_truth.");
    if (t.contains("point")) {
      c.theta_truth.point = as_doubles(t["point"], "theta_truth.point");
      c.theta_truth.sphere_radius.reset();
    }
    if (t.contains("sphere_radius"))
      c.theta_truth.sphere_radius = as_double(t["sphere_radius"], "theta_truth.sphere_radius");
  }
  if (j.contains("bound")) c.bound = parse_bound(j["bound"]);
  if (j.contains("diagnostic")) c.diagnostic = as_string(j["diagnostic"], "diagnostic");
  if (j.contains("n")) c.n = as_int(j["n"], "n");
  if (j.contains("reps")) c.reps = as_count(j["reps"], "reps", bad);
  if (j.contains("sigma")) c.sigma = as_double(j["sigma"], "sigma");
  if (!bad.empty()) {
    std::string msg;
    for (const auto& v : bad) msg += (msg.empty() ? "" : "; ") + v;
    throw Error(ErrorKind::validation_error, msg);
  }
  return c;
}

inline void apply(RunConfig& c, const Overrides& o) {
  if (o.seed) c.seed = o.seed;
  if (o.out) c.out = *o.out;
  if (o.workers) c.workers = *o.workers;
  if (o.format) c.format = *o.format;
}

/// Parses, applies command-line overrides and validates.
inline RunConfig parse_config(const std::string& text, const Overrides& overrides = {}) {
  RunConfig c = parse_config_unvalidated(text);
  apply(c, overrides);
  validate(c);
  return c;
}

/// The resolved config as JSON. With `runtime` false the fields that do not
/// affect results (workers, out) are left out; that form is what outputs echo.
inline Json to_json(const RunConfig& c, bool runtime = true) {
  Json j;
  j["subcommand"] = to_string(c.subcommand);
  j["family"] = {{"family", c.family.family},
                 {"dim", c.family.dim},
                 {"quad_weight", c.family.quad_weight},
                 {"logcosh_weight", c.family.logcosh_weight},
                 {"support", c.family.support}};
  if (c.functional) {
    Json f;
    f["functional"] = c.functional->functional;
    if (!c.functional->w.empty()) f["w"] = c.functional->w;
    if (c.functional->w_norm) f["w_norm"] = *c.functional->w_norm;
    f["smoothness"] = c.functional->smoothness;
    j["functional"] = f;
  }
  if (!c.data.empty()) j["data"] = c.data;
  if (!c.theta.empty()) j["theta"] = c.theta;
  if (c.seed) j["seed"] = *c.seed;
  if (runtime && !c.out.empty()) j["out"] = c.out;
  j["format"] = to_string(c.format);
  if (runtime) j["workers"] = c.workers;
  j["tol"] = c.tol;
  j["max_iter"] = c.max_iter;
  j["k"] = c.k;
  j["R"] = c.replications;
  j["mode"] = to_string(c.mode);
  j["estimator"] = c.estimator;
  j["samples"] = c.samples;
  j["fisher_method"] = c.fisher_method;
  Json grid = Json::array();
  for (const auto& g : c.grid) grid.push_back({{"n", g.n}, {"d", g.d}});
  j["grid"] = grid;
  j["k_values"] = c.k_values;
  Json est = Json::array();
  for (auto e : c.estimators) est.push_back(to_string(e));
  j["estimators"] = est;
  j["outer_reps"] = c.outer_reps;
  Json truth = Json::object();
  if (!c.theta_truth.point.empty()) truth["point"] = c.theta_truth.point;
  if (c.theta_truth.sphere_radius) truth["sphere_radius"] = *c.theta_truth.sphere_radius;
  j["theta_truth"] = truth;
  if (c.bound) {
    Json b;
    b["formula"] = c.bound->formula;
    b["prior"] = c.bound->prior;
    for (const auto& [key, value] : c.bound->params) b[key] = value;
    j["bound"] = b;
  }
  j["diagnostic"] = c.diagnostic;
  j["n"] = c.n;
  j["reps"] = c.reps;
  j["sigma"] = c.sigma;
  return j;
}

inline std::string serialize(const RunConfig& c) { return to_json(c).dump(2); }

// --------------------------------------------------------------------------
// Data files

/// CSV without header, one observation per row. Blank lines are skipped.
inline Dataset read_csv_matrix(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::io_error, "cannot open '" + path + "'");
  std::vector<double> values;
  std::size_t cols = 0, rows = 0, line_no = 0;
  std::string line;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.find_first_not_of(" \t") == std::string::npos) continue;
    std::size_t count = 0, pos = 0;
    for (;;) {
      const std::size_t comma = line.find(',', pos);
      std::string cell = line.substr(pos, comma == std::string::npos ? std::string::npos : comma - pos);
      const auto first = cell.find_first_not_of(" \t");
      const auto last = cell.find_last_not_of(" \t");
      cell = first == std::string::npos ? "" : cell.substr(first, last - first + 1);
      if (!cell.empty() && cell[0] == '+') cell.erase(0, 1);
      double v = 0.0;
      const auto res = std::from_chars(cell.data(), cell.data() + cell.size(), v);
      if (cell.empty() || res.ec != std::errc() || res.ptr != cell.data() + cell.size())
        throw Error(ErrorKind::parse_error, path + ": line " + std::to_string(line_no) + ", column " +
                                                std::to_string(count + 1) + ": not a number");
      values.push_back(v);
      ++count;
      if (comma == std::string::npos) break;
      pos = comma + 1;
    }
    if (rows == 0) cols = count;
    if (count != cols)
      throw Error(ErrorKind::parse_error, path + ": line " + std::to_string(line_no) + ": expected " +
                                              std::to_string(cols) + " columns, found " + std::to_string(count));
    ++rows;
  }
  if (rows == 0) throw Error(ErrorKind::parse_error, path + ": no data rows");
  return Eigen::Map<const Dataset>(values.data(), Eigen::Index(rows), Eigen::Index(cols));
}

// --------------------------------------------------------------------------
// Output

/// Writes `content` to `path` through a temporary file in the same directory
/// and a rename, so readers never see a partial file.
inline void write_atomic(const std::string& path, const std::string& content) {
  namespace fs = std::filesystem;
  const fs::path target(path);
  const fs::path tmp = target.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(ErrorKind::io_error, "cannot write '" + tmp.string() + "'");
    out << content;
    out.flush();
    if (!out) throw Error(ErrorKind::io_error, "write to '" + tmp.string() + "' failed");
  }
  std::error_code ec;
  fs::rename(tmp, target, ec);
  if (ec) {
    fs::remove(tmp, ec);
    throw Error(ErrorKind::io_error, "cannot rename onto '" + path + "'");
  }
}

/// One result table: JSON records, plus the CSV layout of the same values.
struct Output {
  std::vector<Json> records;
  std::vector<std::string> csv_header;
  std::vector<std::vector<std::string>> csv_rows;
};

namespace detail {

inline Json vec_json(const Vector& v) { return std::vector<double>(v.data(), v.data() + v.size()); }

inline Json mat_json(const Matrix& m) {
  Json rows = Json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    std::vector<double> row(std::size_t(m.cols()));
    for (Eigen::Index k = 0; k < m.cols(); ++k) row[std::size_t(k)] = m(i, k);
    rows.push_back(row);
  }
  return rows;
}

inline Json num(double x) { return std::isfinite(x) ? Json(x) : Json(format_double(x)); }

inline Vector theta_or_zero(const RunConfig& c) {
  if (c.theta.empty()) return Vector::Zero(c.family.dim);
  return Eigen::Map<const Vector>(c.theta.data(), Eigen::Index(c.theta.size()));
}

inline MleOptions mle_options(const RunConfig& c) {
  MleOptions o;
  o.tol = c.tol;
  o.max_iter = c.max_iter;
  return o;
}

inline Dataset read_data(const RunConfig& c) {
  Dataset data = read_csv_matrix(c.data);
  require(data.cols() == c.family.dim, ErrorKind::dimension_mismatch,
          c.data + " has " + std::to_string(data.cols()) + " columns, family.dim is " + std::to_string(c.family.dim));
  return data;
}

inline Output run_fit(const RunConfig& c) {
  const auto v = make_potential(c.family);
  const Dataset data = read_data(c);
  const MleResult r = fit_mle(*v, data, mle_options(c));
  Output o;
  o.records.push_back({{"record", "fit"},
                       {"n", data.rows()},
                       {"theta_hat", vec_json(r.theta_hat)},
                       {"grad_norm", r.grad_norm},
                       {"iterations", r.iterations},
                       {"hessian_min_eig", r.hessian_min_eig},
                       {"converged", r.converged}});
  for (Eigen::Index i = 0; i < r.theta_hat.size(); ++i) o.csv_header.push_back("theta_hat_" + std::to_string(i));
  for (const char* h : {"n", "grad_norm", "iterations", "hessian_min_eig", "converged"}) o.csv_header.push_back(h);
  std::vector<std::string> row;
  for (Eigen::Index i = 0; i < r.theta_hat.size(); ++i) row.push_back(format_double(r.theta_hat[i]));
  row.insert(row.end(), {std::to_string(data.rows()), format_double(r.grad_norm), std::to_string(r.iterations),
                         format_double(r.hessian_min_eig), r.converged ? "true" : "false"});
  o.csv_rows.push_back(row);
  return o;
}

inline Output run_fisher(const RunConfig& c) {
  const auto v = make_potential(c.family);
  const NoiseSampler sampler(v);
  const StreamKey key(*c.seed);
  std::vector<FisherMethod> methods;
  if (c.fisher_method != "hessian") methods.push_back(FisherMethod::score);
  if (c.fisher_method != "score") methods.push_back(FisherMethod::hessian);
  Output o;
  o.csv_header = {"method", "i", "j", "value", "se", "reference"};
  const Matrix reference = v->reference_fisher();
  for (std::size_t m = 0; m < methods.size(); ++m) {
    // Both methods draw from the same substream, as a paired comparison.
    const FisherEstimate f = fisher_information(sampler, methods[m], c.samples, key.child(0), c.workers);
    Json rec{{"record", "fisher"},
             {"method", to_string(f.method)},
             {"samples", f.samples},
             {"matrix", mat_json(f.matrix)},
             {"mc_se", mat_json(f.mc_se)},
             {"reference", mat_json(reference)}};
    if (c.functional) {
      const FunctionalSpec fs = make_functional(*c.functional, c.family.dim);
      const Vector theta = theta_or_zero(c);
      rec["sigma_f"] = num(sigma_f(f, fs, theta));
      rec["sigma_f_reference"] = num(sigma_f(reference, fs, theta));
    }
    o.records.push_back(rec);
    for (Eigen::Index i = 0; i < f.matrix.rows(); ++i)
      for (Eigen::Index k = 0; k < f.matrix.cols(); ++k)
        o.csv_rows.push_back({std::string(to_string(f.method)), std::to_string(i), std::to_string(k),
                              format_double(f.matrix(i, k)), format_double(f.mc_se(i, k)),
                              format_double(reference(i, k))});
  }
  return o;
}

inline Output run_estimate(const RunConfig& c) {
  const auto v = make_potential(c.family);
  const NoiseSampler sampler(v);
  const Dataset data = read_data(c);
  const FunctionalSpec f = make_functional(*c.functional, c.family.dim);
  ChainOptions opts;
  opts.k = c.k;
  opts.replications = c.replications;
  opts.mode = c.mode;
  opts.workers = c.workers;
  const StreamKey key(*c.seed);
  const FkEstimate e = c.estimator == "mean" ? mean_based_estimator(sampler, data, f, opts, key)
                                             : estimate_fk(sampler, data, f, opts, key, mle_options(c));
  Json per_order = Json::array(), per_order_se = Json::array();
  for (double x : e.per_order) per_order.push_back(num(x));
  for (double x : e.per_order_se) per_order_se.push_back(num(x));
  Output o;
  o.records.push_back({{"record", "estimate"},
                       {"value", num(e.value)},
                       {"se", num(e.se)},
                       {"k", e.k},
                       {"R", c.replications},
                       {"kept", e.replications},
                       {"dropped", e.dropped},
                       {"valid", e.valid},
                       {"mode", to_string(e.mode)},
                       {"estimator", c.estimator},
                       {"functional", f.name},
                       {"plugin", num(f.value(e.start))},
                       {"start", vec_json(e.start)},
                       {"per_order", per_order},
                       {"per_order_se", per_order_se}});
  o.csv_header = {"value", "se", "k", "R", "kept", "dropped", "valid", "plugin"};
  std::vector<std::string> row{format_double(e.value),    format_double(e.se),          std::to_string(e.k),
                               std::to_string(c.replications), std::to_string(e.replications),
                               std::to_string(e.dropped), e.valid ? "true" : "false", format_double(f.value(e.start))};
  for (std::size_t j = 0; j < e.per_order.size(); ++j) {
    o.csv_header.push_back("per_order_" + std::to_string(j));
    row.push_back(format_double(e.per_order[j]));
  }
  o.csv_rows.push_back(row);
  return o;
}

inline Output run_experiment(const RunConfig& c) {
  ExperimentConfig e;
  e.family = c.family;
  e.grid = c.grid;
  e.functional = *c.functional;
  e.k_values = c.k_values;
  e.estimators = c.estimators;
  e.outer_reps = c.outer_reps;
  e.replications = c.replications;
  e.theta_truth = c.theta_truth;
  e.seed = *c.seed;
  e.mode = c.mode;
  e.mle = mle_options(c);
  e.workers = c.workers;
  const RiskReport report = run_risk_experiment(e);

  Output o;
  std::string header(kRiskCsvHeader);
  for (std::size_t pos = 0;;) {
    const std::size_t comma = header.find(',', pos);
    o.csv_header.push_back(header.substr(pos, comma - pos));
    if (comma == std::string::npos) break;
    pos = comma + 1;
  }
  for (const auto& r : report.rows) {
    o.records.push_back({{"record", "risk"},
                         {"n", r.n},
                         {"d", r.d},
                         {"k", r.k},
                         {"estimator", to_string(r.estimator)},
                         {"functional", r.functional},
                         {"bias", num(r.bias)},
                         {"bias_se", num(r.bias_se)},
                         {"variance", num(r.variance)},
                         {"rmse", num(r.rmse)},
                         {"sigma_f", num(r.sigma_f)},
                         {"efficiency", num(r.efficiency)},
                         {"w2", num(r.w2)},
                         {"ks", num(r.ks)},
                         {"reps", r.reps},
                         {"failed", r.failed},
                         {"invalid_chains", r.invalid_chains},
                         {"seed", r.seed},
                         {"theta", r.theta}});
    o.csv_rows.push_back({std::to_string(r.n), std::to_string(r.d), std::to_string(r.k),
                          std::string(to_string(r.estimator)), r.functional, format_double(r.bias),
                          format_double(r.bias_se), format_double(r.variance), format_double(r.rmse),
                          format_double(r.sigma_f), format_double(r.efficiency), format_double(r.w2),
                          format_double(r.ks), std::to_string(r.reps), std::to_string(r.seed)});
  }
  return o;
}

inline BoundReport evaluate_bound(const RunConfig& c) {
  const BoundSpec& b = *c.bound;
  auto get = [&](const std::string& key, double fallback) {
    const auto it = b.params.find(key);
    return it == b.params.end() ? fallback : it->second;
  };
  const Prior1D prior = b.prior == "bump" ? bump_prior() : cos3_prior();
  auto prior_j = [&] { return b.params.count("j_pi") ? b.params.at("j_pi") : prior_fisher_info(prior); };
  BoundReport r;
  r.formula_id = b.formula;
  if (b.formula == "prior_fisher_info") {
    const double delta = get("delta", 1.0);
    r.inputs = {{"delta", delta}};
    r.bound_value = prior_fisher_info(rescaled(prior, delta));
  } else if (b.formula == "van_trees_theta") {
    const auto v = make_potential(c.family);
    const double j = prior_j(), delta = get("delta", 0.0), n = get("n", 0.0);
    r.inputs = {{"d", double(c.family.dim)}, {"n", n}, {"delta", delta}, {"j_pi", j},
                {"fisher_scale", v->constants().fisher_scale}};
    r.bound_value = van_trees_theta(v->reference_fisher(), j, delta, n);
  } else if (b.formula == "van_trees_functional") {
    const double j = prior_j(), delta = get("delta", 0.0), n = get("n", 0.0);
    const double c1 = get("modulus_c1", 0.0), alpha = get("modulus_alpha", 1.0);
    const double a = get("sigma_inv_grad_norm", 0.0), g = get("inv_grad_norm", 0.0);
    r.inputs = {{"sigma_inv_grad_norm", a}, {"inv_grad_norm", g}, {"j_pi", j}, {"delta", delta},
                {"n", n},                   {"modulus_c1", c1},   {"modulus_alpha", alpha}};
    r.bound_value = van_trees_functional(
        a, g, j, delta, n, [c1, alpha](double t) { return c1 * std::pow(t, alpha); }, prior);
  } else if (b.formula == "local_minimax") {
    const double m = get("m", 0.0), cc = get("c", 0.0), cs = get("cs_over_sigma", 0.0), rho = get("rho", 0.0),
                 n = get("n", 0.0);
    r.inputs = {{"m", m}, {"c", cc}, {"cs_over_sigma", cs}, {"rho", rho}, {"n", n}};
    r.bound_value = local_minimax_bound(m, cc, cs, rho, n);
  } else {
    const double n = get("n", 0.0), d = get("d", 0.0), s = get("s", 0.0);
    r.inputs = {{"n", n}, {"d", d}, {"s", s}};
    r.bound_value = global_minimax_rate(n, d, s);
  }
  return r;
}

inline Output run_lowerbound(const RunConfig& c) {
  const BoundReport r = evaluate_bound(c);
  Json inputs = Json::object();
  for (const auto& [key, value] : r.inputs) inputs[key] = num(value);
  Output o;
  Json rec{{"record", "bound"}, {"formula_id", r.formula_id}, {"inputs", inputs}, {"bound_value", num(r.bound_value)}};
  if (c.bound->formula != "local_minimax" && c.bound->formula != "global_rate") rec["prior"] = c.bound->prior;
  o.records.push_back(rec);
  o.csv_header = {"formula_id", "bound_value"};
  std::vector<std::string> row{r.formula_id, format_double(r.bound_value)};
  for (const auto& [key, value] : r.inputs) {
    o.csv_header.push_back(key);
    row.push_back(format_double(value));
  }
  o.csv_rows.push_back(row);
  return o;
}

inline Output run_diagnose(const RunConfig& c) {
  Output o;
  if (c.diagnostic == "normality") {
    const Dataset data = read_csv_matrix(c.data);
    require(data.cols() == 1, ErrorKind::dimension_mismatch, "normality data must have a single column");
    const std::vector<double> errs(data.data(), data.data() + data.rows());
    const NormalityResult r = normality_diagnostic(errs, c.sigma, double(c.n));
    o.records.push_back({{"record", "normality"}, {"N", errs.size()}, {"w2", r.w2}, {"ks", r.ks}});
    o.csv_header = {"N", "w2", "ks"};
    o.csv_rows.push_back({std::to_string(errs.size()), format_double(r.w2), format_double(r.ks)});
    return o;
  }
  const NoiseSampler sampler(make_potential(c.family));
  const ConcentrationReport r =
      concentration_diagnostic(sampler, theta_or_zero(c), c.n, c.reps, StreamKey(*c.seed), c.workers, mle_options(c));
  o.records.push_back({{"record", "concentration"},
                       {"reps", r.reps},
                       {"failed", r.failed},
                       {"q50", r.q50},
                       {"q90", r.q90},
                       {"q99", r.q99},
                       {"mean_scaled_sq", r.mean_scaled_sq},
                       {"mean_scaled_sq_se", r.mean_scaled_sq_se},
                       {"threshold", num(r.threshold)},
                       {"flagged", r.flagged}});
  o.csv_header = {"reps", "failed", "q50", "q90", "q99", "mean_scaled_sq", "mean_scaled_sq_se", "threshold", "flagged"};
  o.csv_rows.push_back({std::to_string(r.reps), std::to_string(r.failed), format_double(r.q50), format_double(r.q90),
                        format_double(r.q99), format_double(r.mean_scaled_sq), format_double(r.mean_scaled_sq_se),
                        format_double(r.threshold), r.flagged ? "true" : "false"});
  return o;
}

inline std::string csv_text(const Output& o) {
  std::string s;
  auto line = [&](const std::vector<std::string>& cells) {
    for (std::size_t i = 0; i < cells.size(); ++i) s += (i ? "," : "") + cells[i];
    s += '\n';
  };
  line(o.csv_header);
  for (const auto& r : o.csv_rows) line(r);
  return s;
}

}  // namespace detail

/// Runs the subcommand and returns its results without writing anything.
inline Output execute(const RunConfig& c) {
  switch (c.subcommand) {
    case Subcommand::fit: return detail::run_fit(c);
    case Subcommand::fisher: return detail::run_fisher(c);
    case Subcommand::estimate: return detail::run_estimate(c);
    case Subcommand::experiment: return detail::run_experiment(c);
    case Subcommand::lowerbound: return detail::run_lowerbound(c);
    case Subcommand::diagnose: return detail::run_diagnose(c);
  }
  throw Error(ErrorKind::validation_error, "unknown subcommand");
}

inline int exit_code(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::parse_error:
    case ErrorKind::validation_error:
    case ErrorKind::invalid_parameter:
    case ErrorKind::dimension_mismatch:
    case ErrorKind::unsupported_sampler: return 1;
    case ErrorKind::io_error: return 3;
    default: return 2;
  }
}

/// Machine-readable error record, one JSON line.
inline std::string error_record(ErrorKind kind, const std::string& message) {
  return Json{{"error", to_string(kind)}, {"message", message}, {"exit_code", exit_code(kind)}}.dump();
}

/// Executes the config and writes its artifacts. JSON-lines output starts with
/// a {"config": ...} record; CSV output gets the config in a sidecar
/// `<out>.config.json` (not written when printing to stdout). Returns the
/// exit status; failures are reported on `err` as an error record.
inline int run(const RunConfig& c, std::ostream& stdout_stream, std::ostream& err) {
  try {
    validate(c);
    const Output o = execute(c);
    const Json echo = to_json(c, false);
    std::string text;
    if (c.format == OutputFormat::jsonl) {
      text = Json{{"config", echo}}.dump() + '\n';
      for (const auto& r : o.records) text += r.dump() + '\n';
    } else {
      text = detail::csv_text(o);
    }
    if (c.out.empty()) {
      stdout_stream << text << std::flush;
    } else {
      if (c.format == OutputFormat::csv) write_atomic(c.out + ".config.json", echo.dump(2) + '\n');
      write_atomic(c.out, text);
    }
    return 0;
  } catch (const Error& e) {
    err << error_record(e.kind(), e.what()) << '\n';
    return exit_code(e.kind());
  }
}

}  // namespace lcbias::cli
