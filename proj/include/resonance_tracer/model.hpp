#pragma once

// Mechanical system description: structural matrices, essentially nonlinear
// force elements and the harmonic excitation, with an optional binding of one
// scalar design parameter (lambda) into element parameters or forcing entries.
//
// Coordinates are 0-based in this API. Files and reports use 1-based indices.

#include <algorithm>
#include <cmath>
#include <string>
#include <string_view>
#include <utility>
#include <variant>
#include <vector>

#include <Eigen/Dense>

#include "resonance_tracer/error.hpp"

namespace rtrace {

// A scalar that is either a fixed number or the study parameter lambda.
class Parameter {
 public:
  Parameter() = default;
  Parameter(double value) : value_(value) {}  // NOLINT(google-explicit-constructor)

  static Parameter lambda() {
    Parameter p;
    p.bound_ = true;
    return p;
  }

  bool bound() const noexcept { return bound_; }
  double fixed_value() const noexcept { return value_; }
  double resolve(double lambda) const noexcept { return bound_ ? lambda : value_; }

  friend bool operator==(const Parameter&, const Parameter&) = default;

 private:
  double value_ = 0.0;
  bool bound_ = false;
};

// f_k = k_nl * q_k^3, all other entries zero.
struct CubicSpring {
  int coordinate = 0;
  Parameter k_nl;

  static constexpr std::string_view kind = "cubic_spring";
  static constexpr int polynomial_degree = 3;
  static constexpr bool velocity_dependent = false;

  template <class V, class F>
  void add_force(const V& q, const V& /*qdot*/, double lambda, F& f) const {
    const double x = q[coordinate];
    f[coordinate] += k_nl.resolve(lambda) * x * x * x;
  }

  template <class V, class J>
  void add_jacobian(const V& q, const V& /*qdot*/, double lambda, J& dq, J& /*dqdot*/) const {
    const double x = q[coordinate];
    dq(coordinate, coordinate) += 3.0 * k_nl.resolve(lambda) * x * x;
  }

  std::vector<int> coordinates() const { return {coordinate}; }
  bool uses_lambda() const { return k_nl.bound(); }
};

using NonlinearElement = std::variant<CubicSpring>;

inline std::string_view element_kind(const NonlinearElement& e) {
  return std::visit([](const auto& el) { return std::decay_t<decltype(el)>::kind; }, e);
}

inline int element_degree(const NonlinearElement& e) {
  return std::visit([](const auto& el) { return std::decay_t<decltype(el)>::polynomial_degree; }, e);
}

inline bool element_velocity_dependent(const NonlinearElement& e) {
  return std::visit([](const auto& el) { return std::decay_t<decltype(el)>::velocity_dependent; },
                    e);
}

struct HarmonicExcitation {
  std::vector<Parameter> cosine;
  std::vector<Parameter> sine;

  Vector cosine_at(double lambda) const { return resolve(cosine, lambda); }
  Vector sine_at(double lambda) const { return resolve(sine, lambda); }

  bool uses_lambda() const {
    auto bound = [](const Parameter& p) { return p.bound(); };
    return std::any_of(cosine.begin(), cosine.end(), bound) ||
           std::any_of(sine.begin(), sine.end(), bound);
  }

 private:
  static Vector resolve(const std::vector<Parameter>& v, double lambda) {
    Vector out(static_cast<Eigen::Index>(v.size()));
    for (std::size_t i = 0; i < v.size(); ++i) out[static_cast<Eigen::Index>(i)] = v[i].resolve(lambda);
    return out;
  }
};

/// C = (2 D1 / omega1) K.
inline Matrix build_proportional_damping(const Matrix& stiffness, double modal_damping,
                                         double omega1) {
  if (!(omega1 > 0.0)) fail(ErrorKind::invalid_argument, "omega1 must be positive");
  return (2.0 * modal_damping / omega1) * stiffness;
}

struct ModalBasis {
  Vector frequencies;  // ascending, rad/s
  Matrix shapes;       // mass-normalized columns
};

inline ModalBasis natural_modes(const Matrix& mass, const Matrix& stiffness) {
  if (mass.rows() != mass.cols() || stiffness.rows() != stiffness.cols() ||
      mass.rows() != stiffness.rows() || mass.rows() == 0)
    fail(ErrorKind::invalid_argument, "mass and stiffness must be square and of equal size");
  Eigen::LLT<Matrix> llt(mass);
  if (llt.info() != Eigen::Success)
    fail(ErrorKind::decomposition_failure, "mass matrix is not positive definite");
  Eigen::GeneralizedSelfAdjointEigenSolver<Matrix> solver(stiffness, mass);
  if (solver.info() != Eigen::Success)
    fail(ErrorKind::decomposition_failure, "generalized eigenproblem failed");
  ModalBasis basis;
  basis.frequencies = solver.eigenvalues().cwiseMax(0.0).cwiseSqrt();
  basis.shapes = solver.eigenvectors();
  return basis;
}

/// Undamped natural frequencies, ascending.
inline Vector natural_frequencies(const Matrix& mass, const Matrix& stiffness) {
  return natural_modes(mass, stiffness).frequencies;
}

class Model {
 public:
  Model(Matrix mass, Matrix damping, Matrix stiffness, std::vector<NonlinearElement> elements,
        HarmonicExcitation excitation)
      : mass_(std::move(mass)),
        damping_(std::move(damping)),
        stiffness_(std::move(stiffness)),
        elements_(std::move(elements)),
        excitation_(std::move(excitation)) {
    validate();
  }

  int ndof() const noexcept { return static_cast<int>(mass_.rows()); }
  const Matrix& mass() const noexcept { return mass_; }
  const Matrix& damping() const noexcept { return damping_; }
  const Matrix& stiffness() const noexcept { return stiffness_; }
  const std::vector<NonlinearElement>& elements() const noexcept { return elements_; }
  const HarmonicExcitation& excitation() const noexcept { return excitation_; }

  bool velocity_dependent() const {
    return std::any_of(elements_.begin(), elements_.end(), element_velocity_dependent);
  }

  int max_polynomial_degree() const {
    int d = 1;
    for (const auto& e : elements_) d = std::max(d, element_degree(e));
    return d;
  }

  bool is_linear() const noexcept { return elements_.empty(); }

 private:
  void validate() const {
    const auto n = mass_.rows();
    if (n == 0) fail(ErrorKind::invalid_argument, "ndof must be positive");
    auto square = [n](const Matrix& m) { return m.rows() == n && m.cols() == n; };
    if (!square(mass_) || !square(damping_) || !square(stiffness_))
      fail(ErrorKind::invalid_argument, "structural matrices must be square with dimension ndof");
    const double scale = std::max(1.0, mass_.cwiseAbs().maxCoeff());
    if ((mass_ - mass_.transpose()).cwiseAbs().maxCoeff() > 1e-12 * scale)
      fail(ErrorKind::invalid_argument, "mass matrix must be symmetric");
    const double kscale = std::max(1.0, stiffness_.cwiseAbs().maxCoeff());
    if ((stiffness_ - stiffness_.transpose()).cwiseAbs().maxCoeff() > 1e-12 * kscale)
      fail(ErrorKind::invalid_argument, "stiffness matrix must be symmetric");
    if (Eigen::LLT<Matrix>(mass_).info() != Eigen::Success)
      fail(ErrorKind::invalid_argument, "mass matrix must be positive definite");
    Eigen::SelfAdjointEigenSolver<Matrix> keig(stiffness_, Eigen::EigenvaluesOnly);
    if (keig.eigenvalues().minCoeff() < -1e-10 * kscale)
      fail(ErrorKind::invalid_argument, "stiffness matrix must be positive semi-definite");
    for (const auto& e : elements_) {
      for (int c : std::visit([](const auto& el) { return el.coordinates(); }, e))
        if (c < 0 || c >= n)
          fail(ErrorKind::invalid_argument, "element coordinate out of range");
    }
    if (static_cast<Eigen::Index>(excitation_.cosine.size()) != n ||
        static_cast<Eigen::Index>(excitation_.sine.size()) != n)
      fail(ErrorKind::invalid_argument, "excitation vectors must have length ndof");
  }

  Matrix mass_;
  Matrix damping_;
  Matrix stiffness_;
  std::vector<NonlinearElement> elements_;
  HarmonicExcitation excitation_;
};

/// Time-domain nonlinear force of one element; zero at the origin.
inline Vector eval_element_force(const NonlinearElement& element, const Vector& q,
                                 const Vector& qdot, double lambda) {
  Vector f = Vector::Zero(q.size());
  std::visit([&](const auto& el) { el.add_force(q, qdot, lambda, f); }, element);
  return f;
}

struct ElementJacobian {
  Matrix dq;
  Matrix dqdot;
};

inline ElementJacobian eval_element_jacobian(const NonlinearElement& element, const Vector& q,
                                             const Vector& qdot, double lambda) {
  ElementJacobian jac{Matrix::Zero(q.size(), q.size()), Matrix::Zero(q.size(), q.size())};
  std::visit([&](const auto& el) { el.add_jacobian(q, qdot, lambda, jac.dq, jac.dqdot); }, element);
  return jac;
}

}  // namespace rtrace
