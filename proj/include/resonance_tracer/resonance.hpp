#pragma once

// Extended resonance-point systems. The unknowns are X = (Q, omega_res); the
// harmonic balance equations are closed by one scalar resonance condition:
//
//  * phase-lag: the fundamental-harmonic phase of coordinate k is held at its
//    value at the linear resonance,
//  * horizontal tangent: d(a_k^2/2)/domega = 0 along the forced-response branch
//    (reference method, needs second derivatives, solved with FD Jacobians).

#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <optional>
#include <string_view>
#include <utility>

#include <Eigen/Dense>

#include "resonance_tracer/error.hpp"
#include "resonance_tracer/harmonics.hpp"
#include "resonance_tracer/model.hpp"
#include "resonance_tracer/newton.hpp"

namespace rtrace {

struct ExtendedState {
  HarmonicCoefficients q;
  double omega_res = 0.0;

  Vector to_vector() const {
    Vector x(q.values().size() + 1);
    x.head(q.values().size()) = q.values();
    x[x.size() - 1] = omega_res;
    return x;
  }

  static ExtendedState from_vector(const HarmonicLayout& layout, const Vector& x) {
    if (x.size() != layout.size() + 1)
      fail(ErrorKind::invalid_argument, "extended state has wrong length");
    return {HarmonicCoefficients(layout, x.head(layout.size())), x[layout.size()]};
  }
};

enum class PhaseForm {
  normalized,  // cos(phi) Qs - sin(phi) Qc
  tangent,     // -tan(phi) Qc + Qs
};

struct PhaseLagCondition {
  double phi_ref = -std::numbers::pi / 2;
  int k = 0;
  PhaseForm form = PhaseForm::normalized;

  void validate() const {
    if (!(phi_ref > -std::numbers::pi && phi_ref <= std::numbers::pi))
      fail(ErrorKind::invalid_argument, "phi_ref must lie in (-pi, pi]");
    if (form == PhaseForm::tangent && std::abs(std::cos(phi_ref)) < 1e-3)
      fail(ErrorKind::ill_conditioned_condition,
           "tangent form is singular for |cos(phi_ref)| < 1e-3; use the normalized form");
  }

  // Coefficients of Q1c[k] and Q1s[k] in r.
  std::pair<double, double> weights() const {
    validate();
    if (form == PhaseForm::normalized) return {-std::sin(phi_ref), std::cos(phi_ref)};
    return {-std::tan(phi_ref), 1.0};
  }
};

struct HorizontalTangentCondition {
  int k = 0;
};

struct ResonancePoint {
  double lambda = 0.0;
  double omega_res = 0.0;
  HarmonicCoefficients q;
  double amplitude = 0.0;
  double phase = 0.0;
  int iterations = 0;
  double residual_norm = 0.0;
};

struct LinearReference {
  double phi_ref = 0.0;
  double omega_res_lin = 0.0;
  Vector q1_cos;
  Vector q1_sin;
};

struct LinearReferenceOptions {
  double lambda = 0.0;           // used to evaluate lambda-bound excitation entries
  bool use_damped_peak = false;  // omega0 sqrt(1 - 2 zeta^2) instead of omega0
};

/// First-harmonic linear response at the selected mode's resonance frequency.
inline LinearReference linear_reference_phase(const Model& model, int mode_index, int k,
                                              const LinearReferenceOptions& options = {}) {
  const int n = model.ndof();
  if (k < 0 || k >= n) fail(ErrorKind::index_out_of_range, "monitored coordinate out of range");
  if (mode_index < 0 || mode_index >= n) fail(ErrorKind::index_out_of_range, "mode index out of range");
  const ModalBasis modes = natural_modes(model.mass(), model.stiffness());
  const double omega0 = modes.frequencies[mode_index];
  const double tol = 1e-8 * std::max(1.0, modes.frequencies.maxCoeff());
  if (!(omega0 > 0.0)) fail(ErrorKind::invalid_argument, "selected mode is a rigid-body mode");
  if ((mode_index > 0 && std::abs(modes.frequencies[mode_index - 1] - omega0) < tol) ||
      (mode_index + 1 < n && std::abs(modes.frequencies[mode_index + 1] - omega0) < tol))
    fail(ErrorKind::invalid_argument, "selected natural frequency is not distinct");

  double omega = omega0;
  if (options.use_damped_peak) {
    const Vector phi = modes.shapes.col(mode_index);
    const double zeta = phi.dot(model.damping() * phi) / (2.0 * omega0);
    omega = omega0 * std::sqrt(std::max(0.0, 1.0 - 2.0 * zeta * zeta));
  }

  const Vector fc = model.excitation().cosine_at(options.lambda);
  const Vector fs = model.excitation().sine_at(options.lambda);
  if (fc.norm() == 0.0 && fs.norm() == 0.0)
    fail(ErrorKind::invalid_argument, "excitation vanishes at the reference lambda");

  const Matrix diag = model.stiffness() - omega * omega * model.mass();
  const Matrix off = omega * model.damping();
  Matrix s1(2 * n, 2 * n);
  s1 << diag, off, -off, diag;
  Vector rhs(2 * n);
  rhs << fc, fs;
  Eigen::FullPivLU<Matrix> lu(s1);
  if (!lu.isInvertible() || lu.rcond() < 1e-14)
    fail(ErrorKind::decomposition_failure,
         "first-harmonic dynamic stiffness is singular at resonance; add damping");
  const Vector x = lu.solve(rhs);

  LinearReference out;
  out.omega_res_lin = omega;
  out.q1_cos = x.head(n);
  out.q1_sin = x.tail(n);
  const double c = out.q1_cos[k];
  const double s = out.q1_sin[k];
  if (std::hypot(c, s) == 0.0)
    fail(ErrorKind::undefined_phase, "linear response vanishes at the monitored coordinate");
  out.phi_ref = std::atan2(s, c);
  if (out.phi_ref <= -std::numbers::pi) out.phi_ref = std::numbers::pi;
  return out;
}

/// Extended state seeded with the linear first-harmonic solution.
inline ExtendedState linear_resonance_state(const Model& model, int nh, const LinearReference& ref) {
  HarmonicCoefficients q(HarmonicLayout{nh, model.ndof()});
  for (int k = 0; k < model.ndof(); ++k) {
    q.cosine(1, k) = ref.q1_cos[k];
    q.sine(1, k) = ref.q1_sin[k];
  }
  return {std::move(q), ref.omega_res_lin};
}

inline double phase_lag_condition_value(const HarmonicCoefficients& q,
                                        const PhaseLagCondition& cond) {
  const auto [wc, ws] = cond.weights();
  return wc * q.cosine(1, cond.k) + ws * q.sine(1, cond.k);
}

/// (R_hbm(Q, omega_res), r) with r = g^T X.
inline Vector phase_lag_residual(const ExtendedState& x, double lambda,
                                 const PhaseLagCondition& cond, const Model& model,
                                 const AftGrid& grid) {
  const int size = x.q.layout().size();
  Vector r(size + 1);
  r.head(size) = hbm_residual(x.q, x.omega_res, lambda, model, grid);
  r[size] = phase_lag_condition_value(x.q, cond);
  return r;
}

inline Matrix phase_lag_jacobian(const ExtendedState& x, double lambda,
                                 const PhaseLagCondition& cond, const Model& model,
                                 const AftGrid& grid) {
  const int size = x.q.layout().size();
  const HbmJacobians jac = hbm_jacobians(x.q, x.omega_res, lambda, model, grid);
  Matrix out = Matrix::Zero(size + 1, size + 1);
  out.topLeftCorner(size, size) = jac.dq;
  out.topRightCorner(size, 1) = jac.domega;
  const auto [wc, ws] = cond.weights();
  out(size, x.q.layout().cosine_index(1, cond.k)) = wc;
  out(size, x.q.layout().sine_index(1, cond.k)) = ws;
  return out;
}

/// (R_hbm, Q1c[k] u_c + Q1s[k] u_s) with u = dQ/domega along the FRF branch.
inline Vector horizontal_tangent_residual(const ExtendedState& x, double lambda,
                                          const HorizontalTangentCondition& cond,
                                          const Model& model, const AftGrid& grid) {
  const int size = x.q.layout().size();
  Vector r(size + 1);
  r.head(size) = hbm_residual(x.q, x.omega_res, lambda, model, grid);
  const HbmJacobians jac = hbm_jacobians(x.q, x.omega_res, lambda, model, grid);
  Eigen::PartialPivLU<Matrix> lu(jac.dq);
  if (!(safe_rcond(lu) > 1e-14))
    fail(ErrorKind::turning_point_in_omega, "dR/dQ is singular; the FRF tangent is vertical");
  const Vector u = -lu.solve(jac.domega);
  const int ic = x.q.layout().cosine_index(1, cond.k);
  const int is = x.q.layout().sine_index(1, cond.k);
  r[size] = x.q.values()[ic] * u[ic] + x.q.values()[is] * u[is];
  return r;
}

enum class ResonanceMethod { phase_lag, horizontal_tangent };

inline std::string_view to_string(ResonanceMethod m) {
  return m == ResonanceMethod::phase_lag ? "phase-lag" : "tangent";
}

// A resonance-point system bound to a model, harmonic order and condition.
// Unknown vector x = (Q, omega_res); the parameter is lambda.
class ResonanceProblem {
 public:
  ResonanceProblem(Model model, int nh, ResonanceMethod method, PhaseLagCondition phase,
                   std::optional<AftGrid> grid = std::nullopt)
      : model_(std::move(model)),
        layout_{nh, model_.ndof()},
        grid_(grid ? *grid : AftGrid::for_model(model_, nh)),
        method_(method),
        phase_(phase),
        tangent_{phase.k} {
    if (phase_.k < 0 || phase_.k >= model_.ndof())
      fail(ErrorKind::index_out_of_range, "monitored coordinate out of range");
    if (method_ == ResonanceMethod::phase_lag) phase_.validate();
  }

  const Model& model() const noexcept { return model_; }
  const HarmonicLayout& layout() const noexcept { return layout_; }
  const AftGrid& grid() const noexcept { return grid_; }
  ResonanceMethod method() const noexcept { return method_; }
  const PhaseLagCondition& phase_condition() const noexcept { return phase_; }
  int monitored() const noexcept { return phase_.k; }
  int size() const noexcept { return layout_.size() + 1; }

  ExtendedState state(const Vector& x) const { return ExtendedState::from_vector(layout_, x); }

  // Accepted resonance frequencies; solutions outside count as failures.
  void set_omega_range(double lo, double hi) {
    if (!(lo >= 0.0 && hi > lo)) fail(ErrorKind::invalid_argument, "invalid omega range");
    omega_lo_ = lo;
    omega_hi_ = hi;
  }
  bool admissible_omega(double omega) const { return omega > omega_lo_ && omega < omega_hi_; }

  Vector residual(const Vector& x, double lambda) const {
    const ExtendedState s = state(x);
    if (method_ == ResonanceMethod::phase_lag)
      return phase_lag_residual(s, lambda, phase_, model_, grid_);
    return horizontal_tangent_residual(s, lambda, tangent_, model_, grid_);
  }

  // Phase-lag: analytical. Horizontal tangent: central differences of the
  // extended residual (second derivatives of F_nl are never formed).
  Matrix jacobian(const Vector& x, double lambda, double fd_step = 1e-7) const {
    if (method_ == ResonanceMethod::phase_lag)
      return phase_lag_jacobian(state(x), lambda, phase_, model_, grid_);
    return fd_jacobian([&](const Vector& v) { return residual(v, lambda); }, x, fd_step);
  }

  Vector dlambda(const Vector& x, double lambda) const {
    const double h = 1e-6 * std::max(1.0, std::abs(lambda));
    return (residual(x, lambda + h) - residual(x, lambda - h)) / (2.0 * h);
  }

  ResonancePoint make_point(const Vector& x, double lambda, int iterations = 0) const {
    ResonancePoint p;
    p.lambda = lambda;
    const ExtendedState s = state(x);
    p.omega_res = s.omega_res;
    p.q = s.q;
    p.amplitude = amplitude(s.q, phase_.k);
    p.phase = response_phase(s.q, phase_.k);
    p.iterations = iterations;
    p.residual_norm = residual(x, lambda).norm();
    return p;
  }

 private:
  Model model_;
  HarmonicLayout layout_;
  AftGrid grid_;
  ResonanceMethod method_;
  PhaseLagCondition phase_;
  HorizontalTangentCondition tangent_;
  double omega_lo_ = 0.0;
  double omega_hi_ = std::numeric_limits<double>::infinity();
};

/// Build a problem whose phase reference comes from the linear resonance of
/// the given mode.
inline ResonanceProblem make_resonance_problem(const Model& model, int nh, ResonanceMethod method,
                                               int mode_index, int k,
                                               PhaseForm form = PhaseForm::normalized,
                                               const LinearReferenceOptions& options = {}) {
  const LinearReference ref = linear_reference_phase(model, mode_index, k, options);
  return {model, nh, method, PhaseLagCondition{ref.phi_ref, k, form}};
}

inline ResonancePoint solve_resonance_point(const ResonanceProblem& problem, double lambda,
                                            const Vector& x0, const NewtonSettings& settings = {}) {
  NewtonSettings s = settings;
  if (problem.method() == ResonanceMethod::horizontal_tangent)
    s.jacobian_mode = JacobianMode::finite_difference;
  const SolveReport rep = newton_solve(
      [&](const Vector& x) { return problem.residual(x, lambda); },
      [&](const Vector& x) { return problem.jacobian(x, lambda, s.fd_step); }, x0, s);
  if (!problem.admissible_omega(rep.solution[rep.solution.size() - 1]))
    fail(ErrorKind::no_convergence, "resonance frequency outside the admissible range");
  return problem.make_point(rep.solution, lambda, rep.iterations);
}

struct ComplexityRatios {
  double additions = 0.0;        // Z_a
  double multiplications = 0.0;  // Z_m
};

/// Operation-count ratios (horizontal tangent over phase lag) for one
/// extended-residual evaluation.
inline ComplexityRatios complexity_ratios(int nh, int ndof) {
  if (nh < 1 || ndof < 1) fail(ErrorKind::invalid_argument, "nh and ndof must be >= 1");
  const std::int64_t h = nh;
  const std::int64_t d = ndof;
  const std::int64_t a_num = 8 * h * h * h + 4 * h * h * (5 * d * d + 2) +
                             2 * h * (10 * d * d - 3 * d + 1) + 5 * d * d - 3 * d - 1;
  const std::int64_t a_den = d * (2 * h + 1) - 1;
  const std::int64_t m_num =
      (2 * h + 1) * (d * d * d * (6 * h + 3) + 2 * d * d + 4 * h * (h + 1) + 2);
  return {static_cast<double>(a_num) / static_cast<double>(a_den),
          static_cast<double>(m_num) / static_cast<double>(d)};
}

}  // namespace rtrace
