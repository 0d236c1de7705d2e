#pragma once

// Shared test models.

#include <random>
#include <vector>

#include "resonance_tracer/model.hpp"

namespace fixtures {

using rtrace::Matrix;
using rtrace::Parameter;
using rtrace::Vector;

// Two unit masses between three unit springs, 1% proportional damping on the
// first mode, cubic spring (k_nl = lambda) on coordinate `cubic`, force
// 2 cos(omega t) on coordinate `forced` (0-based).
inline rtrace::Model two_dof(int forced = 0, int cubic = 0) {
  Matrix k(2, 2);
  k << 2, -1, -1, 2;
  const Matrix c = rtrace::build_proportional_damping(k, 0.01, 1.0);
  rtrace::HarmonicExcitation f{{0.0, 0.0}, {0.0, 0.0}};
  f.cosine[static_cast<std::size_t>(forced)] = 2.0;
  return {Matrix::Identity(2, 2), c, k, {rtrace::CubicSpring{cubic, Parameter::lambda()}}, f};
}

inline rtrace::Model linear_sdof(double m = 1.0, double c = 0.02, double k = 1.0, double f = 1.0) {
  return {Matrix::Constant(1, 1, m), Matrix::Constant(1, 1, c), Matrix::Constant(1, 1, k), {},
          rtrace::HarmonicExcitation{{f}, {0.0}}};
}

inline rtrace::Model cubic_sdof(double k_nl, double c = 0.0) {
  return {Matrix::Identity(1, 1), Matrix::Constant(1, 1, c), Matrix::Identity(1, 1),
          {rtrace::CubicSpring{0, k_nl}}, rtrace::HarmonicExcitation{{1.0}, {0.0}}};
}

inline Vector random_vector(std::mt19937& rng, int n, double scale) {
  std::uniform_real_distribution<double> u(-scale, scale);
  Vector v(n);
  for (int i = 0; i < n; ++i) v[i] = u(rng);
  return v;
}

}  // namespace fixtures
