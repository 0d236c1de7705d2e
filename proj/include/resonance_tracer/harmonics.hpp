#pragma once

// Harmonic balance building blocks: coefficient layout, dynamic stiffness,
// alternating frequency/time (AFT) evaluation of the nonlinear forces, and the
// HBM residual with its analytical derivatives.
//
// Real block layout, harmonic-basis index h = 0..2*nh:
//   h = 0      constant block Q0
//   h = 2n-1   cosine block Qn^(c)
//   h = 2n     sine block   Qn^(s)
// coefficient of coordinate k (0-based) sits at data[h * ndof + k].

#include <cmath>
#include <limits>
#include <numbers>
#include <utility>

#include <Eigen/Dense>

#include "resonance_tracer/error.hpp"
#include "resonance_tracer/model.hpp"

namespace rtrace {

struct HarmonicLayout {
  int nh = 1;
  int ndof = 1;

  int blocks() const noexcept { return 2 * nh + 1; }
  int size() const noexcept { return blocks() * ndof; }

  int constant_index(int k) const { return checked(0, k); }
  int cosine_index(int n, int k) const { return checked(2 * n - 1, k, n); }
  int sine_index(int n, int k) const { return checked(2 * n, k, n); }

  friend bool operator==(const HarmonicLayout&, const HarmonicLayout&) = default;

 private:
  int checked(int h, int k, int n = 1) const {
    if (k < 0 || k >= ndof) fail(ErrorKind::index_out_of_range, "coordinate index out of range");
    if (n < 1 || n > nh) fail(ErrorKind::index_out_of_range, "harmonic index out of range");
    return h * ndof + k;
  }
};

class HarmonicCoefficients {
 public:
  HarmonicCoefficients() = default;
  explicit HarmonicCoefficients(HarmonicLayout layout)
      : layout_(layout), data_(Vector::Zero(layout.size())) {}
  HarmonicCoefficients(HarmonicLayout layout, Vector data)
      : layout_(layout), data_(std::move(data)) {
    if (data_.size() != layout_.size())
      fail(ErrorKind::invalid_argument, "coefficient vector length does not match layout");
  }

  const HarmonicLayout& layout() const noexcept { return layout_; }
  int nh() const noexcept { return layout_.nh; }
  int ndof() const noexcept { return layout_.ndof; }

  const Vector& values() const noexcept { return data_; }
  Vector& values() noexcept { return data_; }

  double constant(int k) const { return data_[layout_.constant_index(k)]; }
  double& constant(int k) { return data_[layout_.constant_index(k)]; }
  double cosine(int n, int k) const { return data_[layout_.cosine_index(n, k)]; }
  double& cosine(int n, int k) { return data_[layout_.cosine_index(n, k)]; }
  double sine(int n, int k) const { return data_[layout_.sine_index(n, k)]; }
  double& sine(int n, int k) { return data_[layout_.sine_index(n, k)]; }

  // ndof x (2nh+1) view, column h is block h.
  Eigen::Map<const Matrix> blocks() const {
    return {data_.data(), layout_.ndof, layout_.blocks()};
  }

 private:
  HarmonicLayout layout_;
  Vector data_;
};

/// Frequency-domain derivative matrix D(omega), dimension 2nh+1.
inline Matrix derivative_matrix(double omega, int nh) {
  Matrix d = Matrix::Zero(2 * nh + 1, 2 * nh + 1);
  for (int n = 1; n <= nh; ++n) {
    d(2 * n - 1, 2 * n) = n * omega;
    d(2 * n, 2 * n - 1) = -n * omega;
  }
  return d;
}

/// dD/domega, the unit-frequency pattern of D.
inline Matrix derivative_matrix_domega(int nh) { return derivative_matrix(1.0, nh); }

inline Matrix kron(const Matrix& a, const Matrix& b) {
  Matrix out(a.rows() * b.rows(), a.cols() * b.cols());
  for (Eigen::Index i = 0; i < a.rows(); ++i)
    for (Eigen::Index j = 0; j < a.cols(); ++j)
      out.block(i * b.rows(), j * b.cols(), b.rows(), b.cols()) = a(i, j) * b;
  return out;
}

/// S(omega) = D^2 (x) M + D (x) C + I (x) K.
inline Matrix dynamic_stiffness(const Model& model, double omega, int nh) {
  const int n = model.ndof();
  const int size = (2 * nh + 1) * n;
  Matrix s = Matrix::Zero(size, size);
  s.topLeftCorner(n, n) = model.stiffness();
  for (int h = 1; h <= nh; ++h) {
    const double w = h * omega;
    const Matrix diag = model.stiffness() - w * w * model.mass();
    const Matrix off = w * model.damping();
    const int c = (2 * h - 1) * n;
    const int sn = 2 * h * n;
    s.block(c, c, n, n) = diag;
    s.block(sn, sn, n, n) = diag;
    s.block(c, sn, n, n) = off;
    s.block(sn, c, n, n) = -off;
  }
  return s;
}

/// dS/domega = (2 D dD/domega) (x) M + dD/domega (x) C.
inline Matrix dynamic_stiffness_domega(const Model& model, double omega, int nh) {
  const int n = model.ndof();
  const int size = (2 * nh + 1) * n;
  Matrix s = Matrix::Zero(size, size);
  for (int h = 1; h <= nh; ++h) {
    const Matrix diag = (-2.0 * h * h * omega) * model.mass();
    const Matrix off = static_cast<double>(h) * model.damping();
    const int c = (2 * h - 1) * n;
    const int sn = 2 * h * n;
    s.block(c, c, n, n) = diag;
    s.block(sn, sn, n, n) = diag;
    s.block(c, sn, n, n) = off;
    s.block(sn, c, n, n) = -off;
  }
  return s;
}

/// Smallest power of two >= 2*(degree*nh)+2, the alias-free sample count for
/// polynomial nonlinearities of the given degree.
inline int default_sample_count(int nh, int degree = 3) {
  const int bound = 2 * (degree * nh) + 2;
  int nt = 1;
  while (nt < bound) nt *= 2;
  return nt;
}

// Equispaced samples over one period and the matching DFT operators up to
// harmonic nh. Immutable after construction.
class AftGrid {
 public:
  AftGrid(int nh, int nt) : nh_(nh), nt_(nt) {
    if (nh < 1) fail(ErrorKind::invalid_argument, "harmonic order must be >= 1");
    if (nt < 2 * nh + 2 || (nt & (nt - 1)) != 0)
      fail(ErrorKind::invalid_argument, "sample count must be a power of two above 2*nh+1");
    const int hb = 2 * nh + 1;
    synthesis_.resize(nt, hb);
    velocity_.resize(nt, hb);
    forward_.resize(hb, nt);
    for (int i = 0; i < nt; ++i) {
      const double theta = 2.0 * std::numbers::pi * i / nt;
      synthesis_(i, 0) = 1.0;
      velocity_(i, 0) = 0.0;
      forward_(0, i) = 1.0 / nt;
      for (int n = 1; n <= nh; ++n) {
        const double c = std::cos(n * theta);
        const double s = std::sin(n * theta);
        synthesis_(i, 2 * n - 1) = c;
        synthesis_(i, 2 * n) = s;
        velocity_(i, 2 * n - 1) = -n * s;
        velocity_(i, 2 * n) = n * c;
        forward_(2 * n - 1, i) = 2.0 * c / nt;
        forward_(2 * n, i) = 2.0 * s / nt;
      }
    }
  }

  explicit AftGrid(int nh) : AftGrid(nh, default_sample_count(nh)) {}

  static AftGrid for_model(const Model& model, int nh) {
    return {nh, default_sample_count(nh, std::max(3, model.max_polynomial_degree()))};
  }

  int nh() const noexcept { return nh_; }
  int nt() const noexcept { return nt_; }

  // nt x (2nh+1): basis functions at t_i.
  const Matrix& synthesis() const noexcept { return synthesis_; }
  // nt x (2nh+1): time derivative of the basis at unit frequency.
  const Matrix& velocity_synthesis() const noexcept { return velocity_; }
  // (2nh+1) x nt: Fourier-Galerkin projection of samples.
  const Matrix& forward() const noexcept { return forward_; }

  bool alias_free_for(int degree) const { return nt_ >= 2 * (degree * nh_) + 2; }

 private:
  int nh_;
  int nt_;
  Matrix synthesis_;
  Matrix velocity_;
  Matrix forward_;
};

struct TimeSamples {
  Matrix q;     // ndof x nt
  Matrix qdot;  // ndof x nt
};

inline void check_grid(const HarmonicCoefficients& q, const AftGrid& grid) {
  if (q.nh() != grid.nh()) fail(ErrorKind::invalid_argument, "grid and coefficients disagree on nh");
}

/// Truncated series and its time derivative at t_i = i 2 pi / (omega nt).
inline TimeSamples synthesize_time(const HarmonicCoefficients& q, double omega,
                                   const AftGrid& grid) {
  check_grid(q, grid);
  if (!(omega > 0.0)) fail(ErrorKind::invalid_argument, "velocity synthesis needs omega > 0");
  TimeSamples out;
  out.q = q.blocks() * grid.synthesis().transpose();
  out.qdot = omega * (q.blocks() * grid.velocity_synthesis().transpose());
  return out;
}

/// Fourier coefficients (through nh) of sampled signals, ndof x nt.
inline HarmonicCoefficients forward_transform(const Matrix& samples, const AftGrid& grid) {
  HarmonicLayout layout{grid.nh(), static_cast<int>(samples.rows())};
  Matrix blocks = samples * grid.forward().transpose();
  return {layout, Eigen::Map<const Vector>(blocks.data(), blocks.size())};
}

namespace detail {

inline void require_alias_free(const Model& model, const AftGrid& grid) {
  if (!grid.alias_free_for(model.max_polynomial_degree()))
    fail(ErrorKind::invalid_argument, "AFT grid too coarse for the model's nonlinearity degree");
}

inline TimeSamples trajectory(const Model& model, const HarmonicCoefficients& q, double omega,
                              const AftGrid& grid) {
  check_grid(q, grid);
  TimeSamples out;
  out.q = q.blocks() * grid.synthesis().transpose();
  if (model.velocity_dependent()) {
    if (!(omega > 0.0)) fail(ErrorKind::invalid_argument, "velocity synthesis needs omega > 0");
    out.qdot = omega * (q.blocks() * grid.velocity_synthesis().transpose());
  } else {
    out.qdot = Matrix::Zero(out.q.rows(), out.q.cols());
  }
  return out;
}

}  // namespace detail

/// F_nl = DFT[f_nl(iDFT[Q])].
inline HarmonicCoefficients aft_force(const HarmonicCoefficients& q, double omega, double lambda,
                                      const Model& model, const AftGrid& grid) {
  detail::require_alias_free(model, grid);
  const TimeSamples traj = detail::trajectory(model, q, omega, grid);
  Matrix f = Matrix::Zero(traj.q.rows(), traj.q.cols());
  for (int i = 0; i < grid.nt(); ++i) {
    auto fi = f.col(i);
    const auto qi = traj.q.col(i);
    const auto vi = traj.qdot.col(i);
    for (const auto& e : model.elements())
      std::visit([&](const auto& el) { el.add_force(qi, vi, lambda, fi); }, e);
  }
  return forward_transform(f, grid);
}

struct AftJacobian {
  Matrix dq;      // dF_nl / dQ
  Vector domega;  // dF_nl / domega
};

/// Galerkin lift of the pointwise time-domain Jacobians.
inline AftJacobian aft_force_jacobian(const HarmonicCoefficients& q, double omega, double lambda,
                                      const Model& model, const AftGrid& grid) {
  detail::require_alias_free(model, grid);
  const TimeSamples traj = detail::trajectory(model, q, omega, grid);
  const int ndof = q.ndof();
  const int hb = q.layout().blocks();
  const int size = q.layout().size();
  const bool with_velocity = model.velocity_dependent();
  const Matrix& e = grid.synthesis();
  const Matrix& ev = grid.velocity_synthesis();
  const Matrix& p = grid.forward();

  AftJacobian out{Matrix::Zero(size, size), Vector::Zero(size)};
  Matrix jq(ndof, ndof);
  Matrix jv(ndof, ndof);
  for (int i = 0; i < grid.nt(); ++i) {
    jq.setZero();
    jv.setZero();
    const auto qi = traj.q.col(i);
    const auto vi = traj.qdot.col(i);
    for (const auto& el : model.elements())
      std::visit([&](const auto& x) { x.add_jacobian(qi, vi, lambda, jq, jv); }, el);
    for (int a = 0; a < hb; ++a) {
      const double pa = p(a, i);
      for (int b = 0; b < hb; ++b) {
        double wb = pa * e(i, b);
        out.dq.block(a * ndof, b * ndof, ndof, ndof) += wb * jq;
        if (with_velocity) {
          wb = pa * omega * ev(i, b);
          out.dq.block(a * ndof, b * ndof, ndof, ndof) += wb * jv;
        }
      }
    }
    if (with_velocity) {
      // qdot = omega * (velocity basis) Q, so d qdot / d omega = qdot / omega.
      const Vector dv = traj.qdot.col(i) / omega;
      const Vector df = jv * dv;
      for (int a = 0; a < hb; ++a) out.domega.segment(a * ndof, ndof) += p(a, i) * df;
    }
  }
  return out;
}

/// Excitation coefficient vector: only the first harmonic is populated.
inline HarmonicCoefficients excitation_coefficients(const Model& model, int nh, double lambda) {
  HarmonicCoefficients f(HarmonicLayout{nh, model.ndof()});
  const Vector c = model.excitation().cosine_at(lambda);
  const Vector s = model.excitation().sine_at(lambda);
  for (int k = 0; k < model.ndof(); ++k) {
    f.cosine(1, k) = c[k];
    f.sine(1, k) = s[k];
  }
  return f;
}

/// R = S(omega) Q + F_nl(Q) - F_ex.
inline Vector hbm_residual(const HarmonicCoefficients& q, double omega, double lambda,
                           const Model& model, const AftGrid& grid) {
  Vector r = dynamic_stiffness(model, omega, q.nh()) * q.values();
  r -= excitation_coefficients(model, q.nh(), lambda).values();
  if (!model.is_linear()) r += aft_force(q, omega, lambda, model, grid).values();
  return r;
}

struct HbmJacobians {
  Matrix dq;
  Vector domega;
};

inline HbmJacobians hbm_jacobians(const HarmonicCoefficients& q, double omega, double lambda,
                                  const Model& model, const AftGrid& grid) {
  HbmJacobians out{dynamic_stiffness(model, omega, q.nh()),
                   dynamic_stiffness_domega(model, omega, q.nh()) * q.values()};
  if (!model.is_linear()) {
    const AftJacobian nl = aft_force_jacobian(q, omega, lambda, model, grid);
    out.dq += nl.dq;
    out.domega += nl.domega;
  }
  return out;
}

/// Magnitude of the fundamental harmonic at coordinate k.
inline double amplitude(const HarmonicCoefficients& q, int k) {
  return std::hypot(q.cosine(1, k), q.sine(1, k));
}

/// atan2(Q1s[k], Q1c[k]) in (-pi, pi].
inline double response_phase(const HarmonicCoefficients& q, int k) {
  const double c = q.cosine(1, k);
  const double s = q.sine(1, k);
  if (std::hypot(c, s) < std::numeric_limits<double>::min())
    fail(ErrorKind::undefined_phase, "fundamental harmonic vanishes at the monitored coordinate");
  const double phi = std::atan2(s, c);
  return phi <= -std::numbers::pi ? std::numbers::pi : phi;
}

}  // namespace rtrace
