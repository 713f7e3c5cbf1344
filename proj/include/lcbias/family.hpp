#pragma once

#include "lcbias/core.hpp"
#include "lcbias/functionals.hpp"
#include "lcbias/potential.hpp"

#include <optional>
#include <string>
#include <vector>

namespace lcbias {

/// Named builtin family plus its parameters, as it appears in run configs.
struct FamilySpec {
  std::string family = "gaussian";  // gaussian | product_logcosh | radial_smooth
  int dim = 1;
  double quad_weight = 1.0;     // product_logcosh
  double logcosh_weight = 1.0;  // product_logcosh
  double support = 1.0;         // radial_smooth

  bool operator==(const FamilySpec&) const = default;
};

inline bool is_known_family(const std::string& name) {
  return name == "gaussian" || name == "product_logcosh" || name == "radial_smooth";
}

/// Builds the potential in dimension `dim` (`spec.dim` is ignored, so
/// experiment grids can vary it).
inline PotentialPtr make_potential(const FamilySpec& spec, int dim) {
  if (spec.family == "gaussian") return make_gaussian(dim);
  if (spec.family == "product_logcosh") return make_product_logcosh(dim, spec.quad_weight, spec.logcosh_weight);
  if (spec.family == "radial_smooth") return make_radial_smooth(dim, spec.support);
  throw Error(ErrorKind::invalid_parameter, "unknown family '" + spec.family + "'");
}

inline PotentialPtr make_potential(const FamilySpec& spec) { return make_potential(spec, spec.dim); }

/// Functional selection as it appears in run configs. Either an explicit
/// weight vector `w` or a norm `w_norm`, which expands to the vector with
/// equal coordinates w_norm / sqrt(d).
struct FunctionalChoice {
  std::string functional = "linear";  // linear | quadratic | sin_linear | neg_exp_sq
  std::vector<double> w;
  std::optional<double> w_norm;
  double smoothness = 3.0;

  bool operator==(const FunctionalChoice&) const = default;
};

inline std::optional<FunctionalKind> functional_kind(const std::string& name) {
  if (name == "linear") return FunctionalKind::linear;
  if (name == "quadratic") return FunctionalKind::quadratic;
  if (name == "sin_linear") return FunctionalKind::sin_linear;
  if (name == "neg_exp_sq") return FunctionalKind::neg_exp_sq;
  return std::nullopt;
}

inline bool functional_needs_w(const std::string& name) { return name == "linear" || name == "sin_linear"; }

inline Vector functional_weights(const FunctionalChoice& c, int dim) {
  if (!c.w.empty()) {
    require(int(c.w.size()) == dim, ErrorKind::dimension_mismatch,
            "w has " + std::to_string(c.w.size()) + " entries, dimension is " + std::to_string(dim));
    return Eigen::Map<const Vector>(c.w.data(), Eigen::Index(c.w.size()));
  }
  if (c.w_norm) return Vector::Constant(dim, *c.w_norm / std::sqrt(double(dim)));
  return Vector();
}

inline FunctionalSpec make_functional(const FunctionalChoice& c, int dim) {
  const auto kind = functional_kind(c.functional);
  require(kind.has_value(), ErrorKind::invalid_parameter, "unknown functional '" + c.functional + "'");
  return builtin_functional(*kind, functional_weights(c, dim), c.smoothness);
}

}  // namespace lcbias
