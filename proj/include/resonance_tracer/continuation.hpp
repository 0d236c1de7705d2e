#pragma once

// Sequential and pseudo-arclength continuation of solution branches, with
// fold detection, fixed-parameter extraction, FRF peak detection and branch
// connectivity.
//
// A ContinuationProblem is a square system F(u, p) = 0 in the unknowns u with
// one active parameter p: lambda for resonance curves (u = (Q, omega_res)) or
// omega for frequency responses (u = Q).

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <numbers>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "resonance_tracer/error.hpp"
#include "resonance_tracer/harmonics.hpp"
#include "resonance_tracer/model.hpp"
#include "resonance_tracer/newton.hpp"
#include "resonance_tracer/resonance.hpp"

namespace rtrace {

struct Observation {
  double omega = 0.0;
  double amplitude = 0.0;
  double phase = 0.0;
};

struct ContinuationProblem {
  int size = 0;
  std::function<Vector(const Vector&, double)> residual;
  // (dF/du, dF/dp)
  std::function<std::pair<Matrix, Vector>(const Vector&, double)> jacobians;
  std::function<Observation(const Vector&, double)> observe;
  // Optional filter for converged points, e.g. omega_res > 0.
  std::function<bool(const Vector&, double)> admissible;

  bool accepts(const Vector& u, double p) const { return !admissible || admissible(u, p); }
};

struct StudyDescriptor {
  std::string kind;       // "frf", "trace-phase-lag", ...
  std::string parameter;  // "lambda" or "omega"
  std::string method;     // "phase-lag", "tangent" or "hbm"
  int coordinate = 0;     // 0-based monitored coordinate
  int nh = 0;
  int nt = 0;
  int ndof = 0;
  double window_min = 0.0;
  double window_max = 0.0;
  double lambda = std::numeric_limits<double>::quiet_NaN();  // fixed lambda of an FRF
};

struct BranchPoint {
  Vector u;
  double parameter = 0.0;
  double omega = 0.0;
  double amplitude = 0.0;
  double phase = 0.0;
  double residual_norm = 0.0;
  double step = 0.0;  // predictor length that produced this point
  int iterations = 0;
};

struct Branch {
  std::vector<BranchPoint> points;
  StudyDescriptor study;
  bool complete = true;  // false when continuation aborted
  bool closed = false;   // arclength run returned to its start
  std::string diagnostic;
  long total_iterations = 0;  // Newton iterations of accepted and rejected attempts
  int rejected_steps = 0;     // failed corrector attempts

  std::size_t size() const noexcept { return points.size(); }
  bool empty() const noexcept { return points.empty(); }
};

enum class ContinuationMode { sequential, arclength };

struct ContinuationSettings {
  ContinuationMode mode = ContinuationMode::arclength;
  // Arclength steps are measured in scaled coordinates: unknowns divided by
  // max(1, running amplitude scale), parameter divided by the window width.
  double initial_step = 1e-3;
  double min_step = 1e-7;
  double max_step = 5e-2;
  int target_iterations = 4;
  double window_min = 0.0;
  double window_max = 1.0;
  int max_points = 100000;
  int corrector_max_iterations = 12;
  double min_turn_cosine = 0.5;  // reject corrector results that bend the branch sharply
  NewtonSettings newton;

  void validate() const {
    if (!(min_step > 0.0 && min_step <= initial_step && initial_step <= max_step))
      fail(ErrorKind::invalid_argument, "require 0 < min_step <= initial_step <= max_step");
    if (!(window_max >= window_min)) fail(ErrorKind::invalid_argument, "window is empty");
    if (target_iterations < 1) fail(ErrorKind::invalid_argument, "target_iterations must be >= 1");
    newton.validate();
  }
};

// ---------------------------------------------------------------------------
// Problem adapters

inline Observation safe_observation(const HarmonicCoefficients& q, int k, double omega) {
  Observation o;
  o.omega = omega;
  o.amplitude = amplitude(q, k);
  o.phase = o.amplitude > 0.0 ? response_phase(q, k) : std::numeric_limits<double>::quiet_NaN();
  return o;
}

/// Resonance curve: u = (Q, omega_res), p = lambda.
inline ContinuationProblem resonance_curve_problem(const ResonanceProblem& problem) {
  ContinuationProblem cp;
  cp.size = problem.size();
  cp.residual = [&problem](const Vector& u, double p) { return problem.residual(u, p); };
  cp.jacobians = [&problem](const Vector& u, double p) {
    return std::make_pair(problem.jacobian(u, p), problem.dlambda(u, p));
  };
  cp.observe = [&problem](const Vector& u, double) {
    const ExtendedState s = problem.state(u);
    return safe_observation(s.q, problem.monitored(), s.omega_res);
  };
  cp.admissible = [&problem](const Vector& u, double) {
    return problem.admissible_omega(u[u.size() - 1]);
  };
  return cp;
}

// Owns what a frequency-response problem closes over.
struct FrfSystem {
  Model model;
  HarmonicLayout layout;
  AftGrid grid;
  int k = 0;
  double lambda = 0.0;

  FrfSystem(Model m, int nh, int coordinate, double lam, std::optional<AftGrid> g = std::nullopt)
      : model(std::move(m)),
        layout{nh, model.ndof()},
        grid(g ? *g : AftGrid::for_model(model, nh)),
        k(coordinate),
        lambda(lam) {
    if (k < 0 || k >= model.ndof()) fail(ErrorKind::index_out_of_range, "coordinate out of range");
  }

  HarmonicCoefficients coefficients(const Vector& u) const { return {layout, u}; }

  /// First-harmonic linear solution, a standard initial guess.
  Vector linear_guess(double omega) const {
    const int n = model.ndof();
    const Matrix diag = model.stiffness() - omega * omega * model.mass();
    const Matrix off = omega * model.damping();
    Matrix s1(2 * n, 2 * n);
    s1 << diag, off, -off, diag;
    Vector rhs(2 * n);
    rhs << model.excitation().cosine_at(lambda), model.excitation().sine_at(lambda);
    const Vector x = s1.fullPivLu().solve(rhs);
    HarmonicCoefficients q(layout);
    for (int j = 0; j < n; ++j) {
      q.cosine(1, j) = x[j];
      q.sine(1, j) = x[n + j];
    }
    return q.values();
  }
};

/// Frequency response: u = Q, p = omega, lambda frozen.
inline ContinuationProblem frf_problem(const FrfSystem& sys) {
  ContinuationProblem cp;
  cp.size = sys.layout.size();
  cp.residual = [&sys](const Vector& u, double omega) {
    return hbm_residual(sys.coefficients(u), omega, sys.lambda, sys.model, sys.grid);
  };
  cp.jacobians = [&sys](const Vector& u, double omega) {
    HbmJacobians j = hbm_jacobians(sys.coefficients(u), omega, sys.lambda, sys.model, sys.grid);
    return std::make_pair(std::move(j.dq), std::move(j.domega));
  };
  cp.observe = [&sys](const Vector& u, double omega) {
    return safe_observation(sys.coefficients(u), sys.k, omega);
  };
  return cp;
}

// ---------------------------------------------------------------------------

namespace detail {

inline BranchPoint make_branch_point(const ContinuationProblem& problem, const Vector& u, double p,
                                     int iterations, double step) {
  BranchPoint bp;
  bp.u = u;
  bp.parameter = p;
  const Observation o = problem.observe(u, p);
  bp.omega = o.omega;
  bp.amplitude = o.amplitude;
  bp.phase = o.phase;
  bp.residual_norm = problem.residual(u, p).norm();
  bp.iterations = iterations;
  bp.step = step;
  return bp;
}

inline SolveReport solve_fixed(const ContinuationProblem& problem, const Vector& u0, double p,
                               const NewtonSettings& settings) {
  SolveReport rep = newton_solve([&](const Vector& u) { return problem.residual(u, p); },
                                 [&](const Vector& u) { return problem.jacobians(u, p).first; },
                                 u0, settings);
  if (!problem.accepts(rep.solution, p))
    throw SolverError(ErrorKind::no_convergence, "converged to an inadmissible point", rep);
  return rep;
}

inline int attempted_iterations(const Error& e) {
  if (const auto* se = dynamic_cast<const SolverError*>(&e)) return se->report().iterations;
  return 0;
}

struct Scaling {
  double unknowns = 1.0;
  double parameter = 1.0;

  Vector scaled(const Vector& u, double p) const {
    Vector z(u.size() + 1);
    z.head(u.size()) = u / unknowns;
    z[u.size()] = p / parameter;
    return z;
  }
};

// Corrector on the hyperplane tangent^T (zhat - zhat_pred) = 0.
inline SolveReport correct_on_hyperplane(const ContinuationProblem& problem, const Vector& z0,
                                         const Vector& tangent, const Vector& zhat_pred,
                                         const Scaling& scale, const NewtonSettings& settings) {
  const Eigen::Index n = problem.size;
  auto residual = [&](const Vector& z) {
    Vector g(n + 1);
    g.head(n) = problem.residual(z.head(n), z[n]);
    g[n] = tangent.dot(scale.scaled(z.head(n), z[n]) - zhat_pred);
    return g;
  };
  auto jacobian = [&](const Vector& z) {
    auto [fu, fp] = problem.jacobians(z.head(n), z[n]);
    Matrix j(n + 1, n + 1);
    j.topLeftCorner(n, n) = fu;
    j.topRightCorner(n, 1) = fp;
    j.bottomLeftCorner(1, n) = tangent.head(n).transpose() / scale.unknowns;
    j(n, n) = tangent[n] / scale.parameter;
    return j;
  };
  SolveReport rep = newton_solve(residual, jacobian, z0, settings);
  if (!problem.accepts(rep.solution.head(n), rep.solution[n]))
    throw SolverError(ErrorKind::no_convergence, "converged to an inadmissible point", rep);
  return rep;
}

inline double point_segment_distance(const Vector& x, const Vector& a, const Vector& b) {
  const Vector ab = b - a;
  const double len2 = ab.squaredNorm();
  double t = len2 > 0.0 ? (x - a).dot(ab) / len2 : 0.0;
  t = std::clamp(t, 0.0, 1.0);
  return (a + t * ab - x).norm();
}

}  // namespace detail

/// Steps the parameter monotonically from p_start to p_end, each solve seeded
/// by the previous solution. The first point is converged from u0 at p_start.
/// With max_halvings = 0 the grid is fixed and the first failure ends the run;
/// otherwise a failed step is retried at half length (at most max_halvings
/// times in a row) and the step grows back towards `step` after successes.
inline Branch sequential_continuation(const ContinuationProblem& problem, const Vector& u0,
                                      double p_start, double p_end, double step,
                                      const NewtonSettings& settings = {}, int max_halvings = 0) {
  if (!(step > 0.0)) fail(ErrorKind::invalid_argument, "step must be positive");
  if (max_halvings < 0) fail(ErrorKind::invalid_argument, "max_halvings must be >= 0");
  Branch branch;
  const double span = p_end - p_start;
  const double dir = span < 0.0 ? -1.0 : 1.0;
  auto failure = [&](long index, double p, const Error& e) {
    branch.complete = false;
    branch.diagnostic = "no-convergence at index " + std::to_string(index) + " (parameter " +
                        std::to_string(p) + "): " + e.what();
  };

  Vector u = u0;
  try {
    const SolveReport rep = detail::solve_fixed(problem, u, p_start, settings);
    u = rep.solution;
    branch.total_iterations += rep.iterations;
    branch.points.push_back(detail::make_branch_point(problem, u, p_start, rep.iterations, 0.0));
  } catch (const Error& e) {
    branch.total_iterations += detail::attempted_iterations(e);
    failure(0, p_start, e);
    return branch;
  }

  if (max_halvings == 0) {
    const long count = std::lround(std::abs(span) / step);
    for (long j = 1; j <= count; ++j) {
      const double p = j == count ? p_end : p_start + dir * step * static_cast<double>(j);
      try {
        const SolveReport rep = detail::solve_fixed(problem, u, p, settings);
        u = rep.solution;
        branch.total_iterations += rep.iterations;
        branch.points.push_back(detail::make_branch_point(problem, u, p, rep.iterations, step));
      } catch (const Error& e) {
        branch.total_iterations += detail::attempted_iterations(e);
        ++branch.rejected_steps;
        failure(j, p, e);
        break;
      }
    }
    return branch;
  }

  double p = p_start;
  double h = step;
  int halvings = 0;
  const double tiny = 1e-12 * std::max(1.0, std::abs(span));
  while (dir * (p_end - p) > tiny) {
    const double trial = dir * (p_end - p) <= h * (1.0 + 1e-9) ? p_end : p + dir * h;
    try {
      const SolveReport rep = detail::solve_fixed(problem, u, trial, settings);
      u = rep.solution;
      branch.total_iterations += rep.iterations;
      branch.points.push_back(
          detail::make_branch_point(problem, u, trial, rep.iterations, std::abs(trial - p)));
      p = trial;
      halvings = 0;
      h = std::min(step, 2.0 * h);
    } catch (const Error& e) {
      branch.total_iterations += detail::attempted_iterations(e);
      ++branch.rejected_steps;
      if (++halvings > max_halvings) {
        failure(static_cast<long>(branch.points.size()), trial, e);
        break;
      }
      h *= 0.5;
    }
  }
  return branch;
}

/// Pseudo-arclength continuation from a (possibly unconverged) start point at
/// p_start, initially moving in the direction sign(direction) of the parameter.
/// Stops on leaving the window (the crossing is clipped onto the boundary), on
/// returning to the start point, on reaching max_points, or on step underflow.
inline Branch arclength_continuation(const ContinuationProblem& problem, const Vector& u_start,
                                     double p_start, const ContinuationSettings& settings,
                                     double direction = 1.0) {
  settings.validate();
  Branch branch;
  const double width = std::max(settings.window_max - settings.window_min,
                                std::numeric_limits<double>::epsilon());
  const Eigen::Index n = problem.size;
  NewtonSettings corrector = settings.newton;
  corrector.max_iterations = settings.corrector_max_iterations;

  auto inside = [&](double p) {
    const double tol = 1e-12 * width;
    return p >= settings.window_min - tol && p <= settings.window_max + tol;
  };

  // Start point.
  SolveReport start;
  try {
    start = detail::solve_fixed(problem, u_start, p_start, settings.newton);
  } catch (const Error& e) {
    branch.complete = false;
    branch.diagnostic = std::string("start point did not converge: ") + e.what();
    return branch;
  }
  branch.total_iterations += start.iterations;
  branch.points.push_back(
      detail::make_branch_point(problem, start.solution, p_start, start.iterations, 0.0));

  detail::Scaling scale;
  scale.parameter = width;
  auto update_scale = [&](const Vector& u) {
    scale.unknowns = std::max(scale.unknowns, std::max(1.0, u.cwiseAbs().maxCoeff()));
  };
  update_scale(start.solution);
  if (settings.window_max == settings.window_min) return branch;  // single-point window

  // One sequential step fixes the initial direction.
  const double sgn = direction >= 0.0 ? 1.0 : -1.0;
  double dp = settings.initial_step * width;
  bool seeded = false;
  while (dp >= settings.min_step * width) {
    const double p1 = p_start + sgn * dp;
    if (!inside(p1)) {
      dp *= 0.5;
      continue;
    }
    try {
      const SolveReport rep = detail::solve_fixed(problem, start.solution, p1, settings.newton);
      branch.total_iterations += rep.iterations;
      branch.points.push_back(detail::make_branch_point(problem, rep.solution, p1, rep.iterations,
                                                        dp / width));
      update_scale(rep.solution);
      seeded = true;
      break;
    } catch (const Error& e) {
      branch.total_iterations += detail::attempted_iterations(e);
      ++branch.rejected_steps;
      dp *= 0.5;
    }
  }
  if (!seeded) {
    branch.complete = false;
    branch.diagnostic = "initial sequential step failed";
    return branch;
  }

  double h = settings.initial_step;
  double max_start_distance = 0.0;
  while (static_cast<int>(branch.points.size()) < settings.max_points) {
    const BranchPoint& cur = branch.points.back();
    const BranchPoint& prev = branch.points[branch.points.size() - 2];
    const Vector zc = scale.scaled(cur.u, cur.parameter);
    const Vector secant = zc - scale.scaled(prev.u, prev.parameter);
    if (!(secant.norm() > 0.0)) {
      branch.complete = false;
      branch.diagnostic = "degenerate secant";
      return branch;
    }
    const Vector tangent = secant.normalized();

    bool accepted = false;
    while (!accepted) {
      if (h < settings.min_step) {
        branch.complete = false;
        branch.diagnostic = "step size underflow at parameter " + std::to_string(cur.parameter);
        return branch;
      }
      const Vector zhat_pred = zc + h * tangent;
      Vector z0(n + 1);
      z0.head(n) = zhat_pred.head(n) * scale.unknowns;
      z0[n] = zhat_pred[n] * scale.parameter;
      SolveReport rep;
      try {
        rep = detail::correct_on_hyperplane(problem, z0, tangent, zhat_pred, scale, corrector);
      } catch (const Error& e) {
        branch.total_iterations += detail::attempted_iterations(e);
        ++branch.rejected_steps;
        h *= 0.5;
        continue;
      }
      branch.total_iterations += rep.iterations;
      const Vector znew = scale.scaled(rep.solution.head(n), rep.solution[n]);
      const Vector chord = znew - zc;
      if (!(chord.norm() > 0.0) || chord.normalized().dot(tangent) < settings.min_turn_cosine) {
        ++branch.rejected_steps;
        h *= 0.5;
        continue;
      }

      double p_new = rep.solution[n];
      Vector u_new = rep.solution.head(n);
      bool leaving = !inside(p_new);
      if (leaving) {
        // Clip the crossing onto the window boundary.
        const double bound = p_new > settings.window_max ? settings.window_max : settings.window_min;
        const double t = (bound - cur.parameter) / (p_new - cur.parameter);
        const Vector guess = cur.u + t * (u_new - cur.u);
        try {
          const SolveReport clip = detail::solve_fixed(problem, guess, bound, settings.newton);
          u_new = clip.solution;
          p_new = bound;
        } catch (const Error&) {
          ++branch.rejected_steps;
          h *= 0.5;
          continue;
        }
      }

      accepted = true;
      branch.points.push_back(
          detail::make_branch_point(problem, u_new, p_new, rep.iterations, h));
      update_scale(u_new);
      if (leaving) return branch;

      // Closed loop: the new chord passes by the start point.
      const Vector z_first = scale.scaled(branch.points.front().u, branch.points.front().parameter);
      const Vector z_last = scale.scaled(u_new, p_new);
      max_start_distance = std::max(max_start_distance, (z_last - z_first).norm());
      if (branch.points.size() > 3 && max_start_distance > 4.0 * settings.max_step &&
          detail::point_segment_distance(z_first, zc, z_last) < 0.5 * h + 1e-12) {
        branch.closed = true;
        return branch;
      }

      const double ratio = static_cast<double>(settings.target_iterations) /
                           static_cast<double>(std::max(rep.iterations, 1));
      h = std::clamp(h * std::clamp(ratio, 0.5, 2.0), settings.min_step, settings.max_step);
    }
  }
  branch.complete = false;
  branch.diagnostic = "maximum number of points reached";
  return branch;
}

/// Continue in both parameter directions from one point and join the halves.
inline Branch arclength_both_ways(const ContinuationProblem& problem, const Vector& u_seed,
                                  double p_seed, const ContinuationSettings& settings) {
  Branch forward = arclength_continuation(problem, u_seed, p_seed, settings, +1.0);
  if (forward.closed || forward.empty()) return forward;
  Branch backward = arclength_continuation(problem, u_seed, p_seed, settings, -1.0);
  Branch joined;
  joined.study = forward.study;
  for (auto it = backward.points.rbegin(); it != backward.points.rend(); ++it)
    joined.points.push_back(*it);
  if (!joined.points.empty() && !forward.points.empty())
    joined.points.insert(joined.points.end(), forward.points.begin() + 1, forward.points.end());
  else
    joined.points = forward.points;
  joined.closed = backward.closed;
  joined.total_iterations = forward.total_iterations + backward.total_iterations;
  joined.rejected_steps = forward.rejected_steps + backward.rejected_steps;
  joined.complete = forward.complete && backward.complete;
  joined.diagnostic = forward.diagnostic.empty() ? backward.diagnostic : forward.diagnostic;
  return joined;
}

inline StudyDescriptor frf_descriptor(const FrfSystem& sys, double omega_min, double omega_max) {
  StudyDescriptor d;
  d.kind = "frf";
  d.parameter = "omega";
  d.method = "hbm";
  d.coordinate = sys.k;
  d.nh = sys.layout.nh;
  d.nt = sys.grid.nt();
  d.ndof = sys.layout.ndof;
  d.window_min = omega_min;
  d.window_max = omega_max;
  d.lambda = sys.lambda;
  return d;
}

/// FRF branch over [settings.window_min, settings.window_max] by arclength
/// continuation in omega, started from the linear solution at window start.
inline Branch frequency_response(const FrfSystem& sys, const ContinuationSettings& settings) {
  const ContinuationProblem cp = frf_problem(sys);
  const double w0 = settings.window_min;
  if (!(w0 > 0.0)) fail(ErrorKind::invalid_argument, "omega window must be positive");
  Branch b = arclength_continuation(cp, sys.linear_guess(w0), w0, settings, +1.0);
  b.study = frf_descriptor(sys, settings.window_min, settings.window_max);
  return b;
}

/// FRF branch through a given solution (e.g. a resonance point), both ways.
inline Branch frequency_response_from(const FrfSystem& sys, const Vector& q_seed, double omega_seed,
                                      const ContinuationSettings& settings) {
  const ContinuationProblem cp = frf_problem(sys);
  Branch b = arclength_both_ways(cp, q_seed, omega_seed, settings);
  b.study = frf_descriptor(sys, settings.window_min, settings.window_max);
  return b;
}

// ---------------------------------------------------------------------------
// Branch analysis

struct TurningPoint {
  std::size_t before = 0;  // bracketing indices
  std::size_t after = 0;
  double parameter = 0.0;  // refined extremal parameter value
  Vector u;                // refined unknowns (empty without a problem)
};

namespace detail {

inline double quadratic_vertex(double x0, double y0, double x1, double y1, double x2, double y2,
                               double* vertex_y = nullptr) {
  const double d0 = (y1 - y0) / (x1 - x0);
  const double d1 = (y2 - y1) / (x2 - x1);
  const double a = (d1 - d0) / (x2 - x0);
  if (a == 0.0) {
    if (vertex_y) *vertex_y = y1;
    return x1;
  }
  const double b = d0 - a * (x0 + x1);
  const double xv = -b / (2.0 * a);
  if (vertex_y) *vertex_y = y0 + d0 * (xv - x0) + a * (xv - x0) * (xv - x1);
  return xv;
}

}  // namespace detail

/// Parameter reversals along an arclength branch. Without a problem the fold
/// is located by a quadratic fit in arclength; with one it is refined by a
/// golden-section search over hyperplanes normal to the bracketing chord.
inline std::vector<TurningPoint> find_turning_points(
    const Branch& branch, const ContinuationProblem* problem = nullptr,
    const NewtonSettings& settings = {}, double parameter_tolerance = 1e-6) {
  std::vector<TurningPoint> out;
  const auto& pts = branch.points;
  if (pts.size() < 3) return out;

  double unknown_scale = 1.0;
  for (const auto& p : pts) unknown_scale = std::max(unknown_scale, p.u.cwiseAbs().maxCoeff());
  double pmin = pts.front().parameter;
  double pmax = pmin;
  for (const auto& p : pts) {
    pmin = std::min(pmin, p.parameter);
    pmax = std::max(pmax, p.parameter);
  }
  detail::Scaling scale{unknown_scale, std::max(pmax - pmin, 1e-12)};

  // Indices with nonzero increments, so flat (clipped) steps are skipped.
  std::size_t last_idx = 0;
  double last_inc = 0.0;
  for (std::size_t i = 0; i + 1 < pts.size(); ++i) {
    const double inc = pts[i + 1].parameter - pts[i].parameter;
    if (inc == 0.0) continue;
    if (last_inc != 0.0 && inc * last_inc < 0.0) {
      TurningPoint tp;
      const std::size_t mid = i;  // extremal stored point
      tp.before = last_idx;
      tp.after = i + 1;
      const auto& a = pts[tp.before];
      const auto& m = pts[mid];
      const auto& b = pts[tp.after];
      const Vector za = scale.scaled(a.u, a.parameter);
      const Vector zm = scale.scaled(m.u, m.parameter);
      const Vector zb = scale.scaled(b.u, b.parameter);
      const double s1 = (zm - za).norm();
      const double s2 = s1 + (zb - zm).norm();
      double pv = m.parameter;
      detail::quadratic_vertex(0.0, a.parameter, s1, m.parameter, s2, b.parameter, &pv);
      tp.parameter = pv;

      if (problem) {
        const Eigen::Index n = problem->size;
        const Vector chord = zb - za;
        const Vector dir = chord.normalized();
        auto solve_at = [&](double s, const Vector& guess) -> std::optional<Vector> {
          const Vector zhat = za + s * chord;
          try {
            return detail::correct_on_hyperplane(*problem, guess, dir, zhat, scale, settings)
                .solution;
          } catch (const Error&) {
            return std::nullopt;
          }
        };
        auto unscale = [&](double s) {
          const Vector zhat = za + s * chord;
          Vector z(n + 1);
          z.head(n) = zhat.head(n) * scale.unknowns;
          z[n] = zhat[n] * scale.parameter;
          return z;
        };
        const double sign = (m.parameter - a.parameter) > 0.0 ? 1.0 : -1.0;  // max or min
        const double g = (std::sqrt(5.0) - 1.0) / 2.0;
        double lo = 0.0;
        double hi = 1.0;
        double x1 = hi - g * (hi - lo);
        double x2 = lo + g * (hi - lo);
        auto z1 = solve_at(x1, unscale(x1));
        auto z2 = solve_at(x2, unscale(x2));
        bool ok = z1 && z2;
        for (int it = 0; ok && it < 100; ++it) {
          const double f1 = sign * (*z1)[n];
          const double f2 = sign * (*z2)[n];
          if (std::abs((*z1)[n] - (*z2)[n]) < 0.1 * parameter_tolerance && hi - lo < 1e-6) break;
          if (f1 > f2) {
            hi = x2;
            x2 = x1;
            z2 = z1;
            x1 = hi - g * (hi - lo);
            z1 = solve_at(x1, *z2);
          } else {
            lo = x1;
            x1 = x2;
            z1 = z2;
            x2 = lo + g * (hi - lo);
            z2 = solve_at(x2, *z1);
          }
          ok = z1 && z2;
        }
        if (ok) {
          const Vector& best = sign * (*z1)[n] > sign * (*z2)[n] ? *z1 : *z2;
          tp.parameter = best[n];
          tp.u = best.head(n);
        }
      }
      out.push_back(std::move(tp));
    }
    last_inc = inc;
    last_idx = i;
  }
  return out;
}

/// Every crossing of p = p_star along the branch, re-converged with p frozen
/// and deduplicated in (omega, amplitude).
inline std::vector<BranchPoint> solutions_at_parameter(const Branch& branch, double p_star,
                                                       const ContinuationProblem& problem,
                                                       const NewtonSettings& settings = {},
                                                       double dedup_tolerance = 1e-6) {
  std::vector<BranchPoint> out;
  const auto& pts = branch.points;
  for (std::size_t i = 0; i + 1 < pts.size() || (pts.size() == 1 && i == 0); ++i) {
    Vector guess;
    if (pts.size() == 1) {
      if (pts[0].parameter != p_star) break;
      guess = pts[0].u;
    } else {
      const double a = pts[i].parameter - p_star;
      const double b = pts[i + 1].parameter - p_star;
      if (a * b > 0.0) continue;
      if (a == b) {
        guess = pts[i].u;
      } else {
        const double t = a / (a - b);
        guess = pts[i].u + t * (pts[i + 1].u - pts[i].u);
      }
    }
    try {
      const SolveReport rep = detail::solve_fixed(problem, guess, p_star, settings);
      BranchPoint bp = detail::make_branch_point(problem, rep.solution, p_star, rep.iterations, 0.0);
      const bool duplicate = std::any_of(out.begin(), out.end(), [&](const BranchPoint& o) {
        return std::abs(o.omega - bp.omega) < dedup_tolerance &&
               std::abs(o.amplitude - bp.amplitude) < dedup_tolerance;
      });
      if (!duplicate) out.push_back(std::move(bp));
    } catch (const Error&) {
      // a bracket that does not re-converge is dropped
    }
    if (pts.size() == 1) break;
  }
  return out;
}

/// Resonance-curve flavour: returns packaged resonance points.
inline std::vector<ResonancePoint> solutions_at_parameter(const Branch& branch, double lambda_star,
                                                          const ResonanceProblem& problem,
                                                          const NewtonSettings& settings = {}) {
  const ContinuationProblem cp = resonance_curve_problem(problem);
  std::vector<ResonancePoint> out;
  for (const BranchPoint& bp : solutions_at_parameter(branch, lambda_star, cp, settings))
    out.push_back(problem.make_point(bp.u, lambda_star, bp.iterations));
  return out;
}

struct Peak {
  std::size_t index = 0;
  double omega = 0.0;
  double amplitude = 0.0;
};

/// Interior local maxima of the stored amplitude along the branch, refined by
/// a parabola through the 3-point stencil when the stencil is monotone in omega.
inline std::vector<Peak> detect_local_maxima(const Branch& branch) {
  std::vector<Peak> out;
  const auto& pts = branch.points;
  for (std::size_t i = 1; i + 1 < pts.size(); ++i) {
    const double a0 = pts[i - 1].amplitude;
    const double a1 = pts[i].amplitude;
    const double a2 = pts[i + 1].amplitude;
    if (!(a1 > a0 && a1 >= a2)) continue;
    if (a1 == a2) {
      // plateau: count once, at its first point, if it falls afterwards
      std::size_t j = i + 1;
      while (j + 1 < pts.size() && pts[j + 1].amplitude == a1) ++j;
      if (j + 1 >= pts.size() || pts[j + 1].amplitude > a1) continue;
    }
    Peak pk{i, pts[i].omega, a1};
    const double w0 = pts[i - 1].omega;
    const double w1 = pts[i].omega;
    const double w2 = pts[i + 1].omega;
    const bool monotone = (w0 < w1 && w1 < w2) || (w0 > w1 && w1 > w2);
    if (monotone) {
      double av = a1;
      const double wv = detail::quadratic_vertex(w0, a0, w1, a1, w2, a2, &av);
      if (wv >= std::min(w0, w2) && wv <= std::max(w0, w2) && av >= a1) {
        pk.omega = wv;
        pk.amplitude = av;
      }
    }
    out.push_back(pk);
  }
  return out;
}

/// Recompute amplitudes of an FRF branch for another coordinate.
inline Branch with_coordinate(Branch branch, int k) {
  const HarmonicLayout layout{branch.study.nh, branch.study.ndof};
  for (auto& p : branch.points) {
    const HarmonicCoefficients q(layout, p.u.head(layout.size()));
    const Observation o = safe_observation(q, k, p.omega);
    p.amplitude = o.amplitude;
    p.phase = o.phase;
  }
  branch.study.coordinate = k;
  return branch;
}

struct Connectivity {
  bool connected = false;
  double min_distance = std::numeric_limits<double>::infinity();
};

/// Two FRF branches touch iff some point of one lies within tolerance of the
/// other's polyline in the normalized (omega, Q) metric: omega over the joint
/// omega range, Q over max(1, largest coefficient magnitude).
inline Connectivity branch_connectivity(const Branch& a, const Branch& b, double tolerance) {
  Connectivity out;
  if (a.empty() || b.empty()) return out;
  double wmin = std::numeric_limits<double>::infinity();
  double wmax = -wmin;
  double qscale = 1.0;
  for (const Branch* br : {&a, &b})
    for (const auto& p : br->points) {
      wmin = std::min(wmin, p.omega);
      wmax = std::max(wmax, p.omega);
      qscale = std::max(qscale, p.u.cwiseAbs().maxCoeff());
    }
  const double wscale = std::max(wmax - wmin, 1e-12);
  auto embed = [&](const BranchPoint& p) {
    const Eigen::Index n = p.u.size();
    Vector z(n + 1);
    z.head(n) = p.u / qscale;
    z[n] = p.omega / wscale;
    return z;
  };
  std::vector<Vector> za;
  std::vector<Vector> zb;
  for (const auto& p : a.points) za.push_back(embed(p));
  for (const auto& p : b.points) zb.push_back(embed(p));

  auto scan = [&](const std::vector<Vector>& pts, const std::vector<Vector>& line) {
    for (const auto& x : pts) {
      if (line.size() == 1) {
        out.min_distance = std::min(out.min_distance, (x - line[0]).norm());
        continue;
      }
      for (std::size_t j = 0; j + 1 < line.size(); ++j)
        out.min_distance =
            std::min(out.min_distance, detail::point_segment_distance(x, line[j], line[j + 1]));
    }
  };
  scan(za, zb);
  scan(zb, za);
  out.connected = out.min_distance <= tolerance;
  return out;
}

}  // namespace rtrace
