#pragma once

// Damped Newton iteration for square systems, central-difference Jacobians and
// a Jacobian cross-check.

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "resonance_tracer/error.hpp"

namespace rtrace {

using ResidualFn = std::function<Vector(const Vector&)>;
using JacobianFn = std::function<Matrix(const Vector&)>;

// Reciprocal condition estimate that also catches exact zero pivots, which
// Eigen's estimator can report as well conditioned.
inline double safe_rcond(const Eigen::PartialPivLU<Matrix>& lu) {
  const Vector d = lu.matrixLU().diagonal().cwiseAbs();
  if (d.size() == 0) return 1.0;
  const double big = d.maxCoeff();
  if (!(big > 0.0)) return 0.0;
  return std::min(lu.rcond(), d.minCoeff() / big);
}

enum class JacobianMode { analytical, finite_difference };

struct NewtonSettings {
  double epsilon = 1e-8;  // absolute tolerance on the residual 2-norm
  int max_iterations = 50;
  JacobianMode jacobian_mode = JacobianMode::analytical;
  double fd_step = 1e-7;
  bool damping = true;
  int max_halvings = 8;

  void validate() const {
    if (!(epsilon > 0.0)) fail(ErrorKind::invalid_argument, "epsilon must be positive");
    if (max_iterations < 1) fail(ErrorKind::invalid_argument, "max_iterations must be >= 1");
    if (!(fd_step > 0.0)) fail(ErrorKind::invalid_argument, "fd_step must be positive");
  }
};

struct SolveReport {
  Vector solution;
  int iterations = 0;
  double residual_norm = 0.0;
  bool converged = false;
  std::vector<double> norm_history;  // norm at each accepted iterate, starting with x0
};

// Raised by newton_solve; the report holds the last iterate.
class SolverError : public Error {
 public:
  SolverError(ErrorKind kind, const std::string& message, SolveReport report)
      : Error(kind, message), report_(std::move(report)) {}

  const SolveReport& report() const noexcept { return report_; }

 private:
  SolveReport report_;
};

/// Central differences, column j perturbed by fd_step * max(1, |x_j|).
inline Matrix fd_jacobian(const ResidualFn& residual, const Vector& x, double fd_step = 1e-7) {
  Matrix jac;
  Vector xp = x;
  for (Eigen::Index j = 0; j < x.size(); ++j) {
    const double h = fd_step * std::max(1.0, std::abs(x[j]));
    xp[j] = x[j] + h;
    const Vector rp = residual(xp);
    xp[j] = x[j] - h;
    const Vector rm = residual(xp);
    xp[j] = x[j];
    if (j == 0) jac.resize(rp.size(), x.size());
    jac.col(j) = (rp - rm) / (2.0 * h);
  }
  return jac;
}

struct JacobianCheck {
  double max_discrepancy = 0.0;
  Eigen::Index row = -1;
  Eigen::Index col = -1;
};

/// Elementwise max of |J - J_fd| / (1 + |J_fd|), with the offending entry.
inline JacobianCheck verify_jacobian_detail(const ResidualFn& residual, const JacobianFn& jacobian,
                                            const Vector& x, double fd_step = 1e-7) {
  const Matrix fd = fd_jacobian(residual, x, fd_step);
  const Matrix an = jacobian(x);
  if (an.rows() != fd.rows() || an.cols() != fd.cols())
    fail(ErrorKind::invalid_argument, "jacobian shape does not match residual");
  const Matrix rel = (an - fd).cwiseAbs().cwiseQuotient((1.0 + fd.array().abs()).matrix());
  JacobianCheck out;
  out.max_discrepancy = rel.maxCoeff(&out.row, &out.col);
  return out;
}

inline double verify_jacobian(const ResidualFn& residual, const JacobianFn& jacobian,
                              const Vector& x, double fd_step = 1e-7) {
  return verify_jacobian_detail(residual, jacobian, x, fd_step).max_discrepancy;
}

namespace detail {

inline bool finite(const Vector& v) { return v.allFinite(); }

}  // namespace detail

/// Newton iteration x <- x - J^-1 r, optionally step-halved until the residual
/// norm decreases. Throws SolverError on a singular Jacobian or when the
/// iteration budget is exhausted.
inline SolveReport newton_solve(const ResidualFn& residual, const JacobianFn& jacobian,
                                const Vector& x0, const NewtonSettings& settings = {}) {
  settings.validate();
  const bool use_fd = settings.jacobian_mode == JacobianMode::finite_difference || !jacobian;

  SolveReport report;
  report.solution = x0;
  Vector r = residual(report.solution);
  if (r.size() != x0.size()) fail(ErrorKind::invalid_argument, "residual is not square");
  report.residual_norm = r.norm();
  report.norm_history.push_back(report.residual_norm);

  while (true) {
    if (!std::isfinite(report.residual_norm)) {
      report.converged = false;
      throw SolverError(ErrorKind::no_convergence, "residual is not finite", report);
    }
    if (report.residual_norm < settings.epsilon) {
      report.converged = true;
      return report;
    }
    if (report.iterations >= settings.max_iterations) {
      throw SolverError(ErrorKind::no_convergence,
                        "iteration budget exhausted, |r| = " + std::to_string(report.residual_norm),
                        report);
    }

    const Matrix jac = use_fd ? fd_jacobian(residual, report.solution, settings.fd_step)
                              : jacobian(report.solution);
    if (jac.rows() != r.size() || jac.cols() != r.size())
      fail(ErrorKind::invalid_argument, "jacobian dimensions are inconsistent");
    Eigen::PartialPivLU<Matrix> lu(jac);
    const double rcond = safe_rcond(lu);
    if (!(rcond > 1e-15) || !jac.allFinite())
      throw SolverError(ErrorKind::singular_jacobian, "linear solve failed", report);
    const Vector step = lu.solve(r);
    if (!detail::finite(step))
      throw SolverError(ErrorKind::singular_jacobian, "linear solve produced non-finite step",
                        report);

    double alpha = 1.0;
    Vector trial = report.solution - step;
    Vector r_trial = residual(trial);
    double n_trial = r_trial.norm();
    if (settings.damping) {
      int halvings = 0;
      while (!(n_trial < report.residual_norm) && halvings < settings.max_halvings) {
        alpha *= 0.5;
        ++halvings;
        trial = report.solution - alpha * step;
        r_trial = residual(trial);
        n_trial = r_trial.norm();
      }
      if (!(n_trial < report.residual_norm)) {
        throw SolverError(ErrorKind::no_convergence,
                          "line search could not reduce |r| = " +
                              std::to_string(report.residual_norm),
                          report);
      }
    }
    report.solution = std::move(trial);
    r = std::move(r_trial);
    report.residual_norm = n_trial;
    ++report.iterations;
    report.norm_history.push_back(n_trial);
  }
}

}  // namespace rtrace
