#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

#include <Eigen/Dense>

namespace rtrace {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

enum class ErrorKind {
  invalid_argument,
  decomposition_failure,
  index_out_of_range,
  undefined_phase,
  singular_jacobian,
  no_convergence,
  ill_conditioned_condition,
  turning_point_in_omega,
  file_not_found,
  schema_violation,
  study_failure,
  io_failure,
};

inline std::string_view to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::invalid_argument: return "invalid-argument";
    case ErrorKind::decomposition_failure: return "decomposition-failure";
    case ErrorKind::index_out_of_range: return "index-out-of-range";
    case ErrorKind::undefined_phase: return "undefined-phase";
    case ErrorKind::singular_jacobian: return "singular-jacobian";
    case ErrorKind::no_convergence: return "no-convergence";
    case ErrorKind::ill_conditioned_condition: return "ill-conditioned-condition";
    case ErrorKind::turning_point_in_omega: return "turning-point-in-omega";
    case ErrorKind::file_not_found: return "file-not-found";
    case ErrorKind::schema_violation: return "schema-violation";
    case ErrorKind::study_failure: return "study-failure";
    case ErrorKind::io_failure: return "io-failure";
  }
  return "unknown";
}

// Every failure raised by the library carries a machine-readable kind.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message)
      : std::runtime_error(std::string(to_string(kind)) + ": " + message), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& message) {
  throw Error(kind, message);
}

}  // namespace rtrace
