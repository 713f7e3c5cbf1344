#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <string>
#include <string_view>

namespace lcbias {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;
/// One observation per row.
using Dataset = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

using VectorCRef = Eigen::Ref<const Vector>;
using VectorRef = Eigen::Ref<Vector>;
using MatrixRef = Eigen::Ref<Matrix>;

enum class ErrorKind {
  unsupported_sampler,
  non_finite,
  singular_fisher,
  singular_matrix,
  dimension_mismatch,
  not_converged,
  mle_failure,
  all_replicates_failed,
  invalid_parameter,
  too_rough,
  table_not_built,
  degenerate_sample,
  non_integrable,
  parse_error,
  validation_error,
  io_error,
};

inline std::string_view to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::unsupported_sampler: return "UnsupportedSampler";
    case ErrorKind::non_finite: return "NonFinite";
    case ErrorKind::singular_fisher: return "SingularFisher";
    case ErrorKind::singular_matrix: return "SingularMatrix";
    case ErrorKind::dimension_mismatch: return "DimensionMismatch";
    case ErrorKind::not_converged: return "NotConverged";
    case ErrorKind::mle_failure: return "MleFailure";
    case ErrorKind::all_replicates_failed: return "AllReplicatesFailed";
    case ErrorKind::invalid_parameter: return "InvalidParameter";
    case ErrorKind::too_rough: return "TooRough";
    case ErrorKind::table_not_built: return "TableNotBuilt";
    case ErrorKind::degenerate_sample: return "DegenerateSample";
    case ErrorKind::non_integrable: return "NonIntegrable";
    case ErrorKind::parse_error: return "ParseError";
    case ErrorKind::validation_error: return "ValidationError";
    case ErrorKind::io_error: return "IoError";
  }
  return "Unknown";
}

/// Base of every error raised by the library. The kind is stable and is what
/// the command line tool maps onto exit codes.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(std::string(to_string(kind)) + ": " + what), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

/// Monte Carlo estimate of a scalar together with its standard error.
struct ScalarEstimate {
  double value = 0.0;
  double se = 0.0;
  std::size_t samples = 0;
};

inline void require(bool condition, ErrorKind kind, const std::string& what) {
  if (!condition) throw Error(kind, what);
}

inline bool all_finite(const Eigen::Ref<const Matrix>& m) { return m.allFinite(); }

}  // namespace lcbias
