#include <cmath>
#include <random>

#include <gtest/gtest.h>

#include "resonance_tracer/model.hpp"
#include "resonance_tracer/model_io.hpp"

using namespace rtrace;

namespace {

Matrix chain_stiffness() {
  Matrix k(2, 2);
  k << 2, -1, -1, 2;
  return k;
}

HarmonicExcitation zero_excitation(int n) {
  return {std::vector<Parameter>(n), std::vector<Parameter>(n)};
}

}  // namespace

TEST(ProportionalDamping, ChainValues) {
  const Matrix c = build_proportional_damping(chain_stiffness(), 0.01, 1.0);
  Matrix expected(2, 2);
  expected << 0.04, -0.02, -0.02, 0.04;
  EXPECT_LT((c - expected).cwiseAbs().maxCoeff(), 1e-15);
}

TEST(ProportionalDamping, UndampedIsZero) {
  EXPECT_EQ(build_proportional_damping(chain_stiffness(), 0.0, 1.0).cwiseAbs().maxCoeff(), 0.0);
}

TEST(ProportionalDamping, IdentityScaling) {
  const Matrix c = build_proportional_damping(Matrix::Identity(3, 3), 0.05, 2.0);
  EXPECT_LT((c - 0.05 * Matrix::Identity(3, 3)).cwiseAbs().maxCoeff(), 1e-16);
}

TEST(ProportionalDamping, RejectsNonPositiveFrequency) {
  try {
    build_proportional_damping(chain_stiffness(), 0.01, 0.0);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::invalid_argument);
  }
  EXPECT_THROW(build_proportional_damping(chain_stiffness(), 0.01, -1.0), Error);
}

TEST(NaturalFrequencies, Chain) {
  const Vector w = natural_frequencies(Matrix::Identity(2, 2), chain_stiffness());
  ASSERT_EQ(w.size(), 2);
  EXPECT_NEAR(w[0], 1.0, 1e-14);
  EXPECT_NEAR(w[1], std::sqrt(3.0), 1e-14);
}

TEST(NaturalFrequencies, IdentityPair) {
  const Vector w = natural_frequencies(Matrix::Identity(2, 2), Matrix::Identity(2, 2));
  EXPECT_NEAR(w[0], 1.0, 1e-14);
  EXPECT_NEAR(w[1], 1.0, 1e-14);
}

TEST(NaturalFrequencies, SingleDof) {
  const Vector w = natural_frequencies(4.0 * Matrix::Identity(1, 1), Matrix::Identity(1, 1));
  EXPECT_NEAR(w[0], 0.5, 1e-15);
}

TEST(NaturalFrequencies, SingularMassFails) {
  Matrix m = Matrix::Zero(2, 2);
  m(0, 0) = 1.0;
  try {
    natural_frequencies(m, chain_stiffness());
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::decomposition_failure);
  }
}

TEST(NaturalFrequencies, ScaleInvariant) {
  std::mt19937 rng(7);
  std::uniform_real_distribution<double> u(0.1, 10.0);
  for (int trial = 0; trial < 20; ++trial) {
    Matrix a = Matrix::Random(3, 3);
    const Matrix m = a * a.transpose() + 3.0 * Matrix::Identity(3, 3);
    Matrix b = Matrix::Random(3, 3);
    const Matrix k = b * b.transpose() + 0.5 * Matrix::Identity(3, 3);
    const double alpha = u(rng);
    const Vector w1 = natural_frequencies(m, k);
    const Vector w2 = natural_frequencies(alpha * m, alpha * k);
    for (int i = 0; i < 3; ++i) EXPECT_NEAR(w2[i] / w1[i], 1.0, 1e-12);
    for (int i = 1; i < 3; ++i) EXPECT_LE(w1[i - 1], w1[i]);
  }
}

TEST(CubicSpring, ForceOnSecondCoordinate) {
  const NonlinearElement e = CubicSpring{1, Parameter::lambda()};
  Vector q(2);
  q << 5.0, 0.5;
  const Vector f = eval_element_force(e, q, Vector::Zero(2), 2.0);
  EXPECT_EQ(f[0], 0.0);
  EXPECT_DOUBLE_EQ(f[1], 0.25);
  const ElementJacobian j = eval_element_jacobian(e, q, Vector::Zero(2), 2.0);
  EXPECT_DOUBLE_EQ(j.dq(1, 1), 1.5);
  EXPECT_EQ(j.dq(0, 0), 0.0);
  EXPECT_EQ(j.dq(0, 1), 0.0);
  EXPECT_EQ(j.dq(1, 0), 0.0);
  EXPECT_EQ(j.dqdot.cwiseAbs().maxCoeff(), 0.0);
}

TEST(CubicSpring, OddAtNegativeUnit) {
  const NonlinearElement e = CubicSpring{0, 1.0};
  Vector q(1);
  q << -1.0;
  EXPECT_DOUBLE_EQ(eval_element_force(e, q, Vector::Zero(1), 0.0)[0], -1.0);
}

TEST(CubicSpring, ZeroAtOriginForAnyLambda) {
  const NonlinearElement e = CubicSpring{1, Parameter::lambda()};
  for (double lam : {-3.0, 0.0, 0.7, 5.0}) {
    EXPECT_EQ(eval_element_force(e, Vector::Zero(2), Vector::Zero(2), lam).cwiseAbs().maxCoeff(), 0.0);
    const ElementJacobian j = eval_element_jacobian(e, Vector::Zero(2), Vector::Zero(2), lam);
    EXPECT_EQ(j.dq.cwiseAbs().maxCoeff(), 0.0);
    EXPECT_EQ(j.dqdot.cwiseAbs().maxCoeff(), 0.0);
  }
}

TEST(CubicSpring, JacobianMatchesCentralDifferencesAtFixedState) {
  const NonlinearElement e = CubicSpring{1, 1.3};
  Vector q(2);
  q << 0.3, -0.7;
  const Matrix an = eval_element_jacobian(e, q, Vector::Zero(2), 0.0).dq;
  const double h = 1e-6;
  for (int j = 0; j < 2; ++j) {
    Vector qp = q, qm = q;
    qp[j] += h;
    qm[j] -= h;
    const Vector col = (eval_element_force(e, qp, Vector::Zero(2), 0.0) -
                        eval_element_force(e, qm, Vector::Zero(2), 0.0)) /
                       (2 * h);
    for (int i = 0; i < 2; ++i) EXPECT_LE(std::abs(an(i, j) - col[i]), 1e-8 * (1.0 + std::abs(col[i])));
  }
}

TEST(CubicSpring, PropertyJacobianAndOddness) {
  std::mt19937 rng(11);
  std::uniform_real_distribution<double> u(-2.0, 2.0);
  for (int trial = 0; trial < 100; ++trial) {
    const int n = 3;
    const NonlinearElement e = CubicSpring{trial % n, Parameter::lambda()};
    const double lam = u(rng);
    Vector q(n), qd(n);
    for (int i = 0; i < n; ++i) {
      q[i] = u(rng);
      qd[i] = u(rng);
    }
    const Vector f = eval_element_force(e, q, qd, lam);
    EXPECT_LT((eval_element_force(e, -q, -qd, lam) + f).cwiseAbs().maxCoeff(), 1e-15);
    const Matrix an = eval_element_jacobian(e, q, qd, lam).dq;
    const double h = 1e-6;
    for (int j = 0; j < n; ++j) {
      Vector qp = q, qm = q;
      qp[j] += h;
      qm[j] -= h;
      const Vector col = (eval_element_force(e, qp, qd, lam) - eval_element_force(e, qm, qd, lam)) / (2 * h);
      for (int i = 0; i < n; ++i)
        EXPECT_LE(std::abs(an(i, j) - col[i]), 1e-6 * (1.0 + std::abs(col[i])));
    }
  }
}

TEST(ModelValidation, RejectsBadInputs) {
  const Matrix k = chain_stiffness();
  const Matrix i2 = Matrix::Identity(2, 2);
  EXPECT_NO_THROW(Model(i2, Matrix::Zero(2, 2), k, {}, zero_excitation(2)));
  Matrix asym = k;
  asym(0, 1) = -0.5;
  EXPECT_THROW(Model(i2, Matrix::Zero(2, 2), asym, {}, zero_excitation(2)), Error);
  EXPECT_THROW(Model(-i2, Matrix::Zero(2, 2), k, {}, zero_excitation(2)), Error);
  EXPECT_THROW(Model(i2, Matrix::Zero(2, 2), -k, {}, zero_excitation(2)), Error);
  EXPECT_THROW(Model(i2, Matrix::Zero(3, 3), k, {}, zero_excitation(2)), Error);
  EXPECT_THROW(Model(i2, Matrix::Zero(2, 2), k, {CubicSpring{2, 1.0}}, zero_excitation(2)), Error);
  EXPECT_THROW(Model(i2, Matrix::Zero(2, 2), k, {}, zero_excitation(3)), Error);
}

TEST(ModelFileIo, LoadsShippedModels) {
  const std::string dir = RESONANCE_TRACER_MODEL_DIR;
  const ModelFile m1 = load_model(dir + "/twodof_m1.json");
  EXPECT_EQ(m1.model.ndof(), 2);
  EXPECT_EQ(m1.monitor.value(), 1);
  Matrix c(2, 2);
  c << 0.04, -0.02, -0.02, 0.04;
  EXPECT_LT((m1.model.damping() - c).cwiseAbs().maxCoeff(), 1e-15);
  ASSERT_EQ(m1.model.elements().size(), 1u);
  const auto& spring = std::get<CubicSpring>(m1.model.elements()[0]);
  EXPECT_EQ(spring.coordinate, 0);
  EXPECT_TRUE(spring.k_nl.bound());
  EXPECT_DOUBLE_EQ(m1.model.excitation().cosine_at(0.0)[0], 2.0);

  const ModelFile m2 = load_model(dir + "/twodof_m2.json");
  EXPECT_DOUBLE_EQ(m2.model.excitation().cosine_at(0.0)[1], 2.0);
  EXPECT_DOUBLE_EQ(m2.model.excitation().cosine_at(0.0)[0], 0.0);

  const ModelFile s = load_model(dir + "/linear_sdof.json");
  EXPECT_TRUE(s.model.is_linear());
  EXPECT_DOUBLE_EQ(s.model.damping()(0, 0), 0.02);
}

TEST(ModelFileIo, LambdaBoundExcitation) {
  const ModelFile f = parse_model(R"({"ndof":1,"mass":[[1]],"stiffness":[[1]],"damping":[[0.1]],
    "elements":[{"kind":"cubic_spring","coordinate":1,"k_nl":0.5}],
    "excitation":{"cosine":["lambda"],"sine":[0]}})");
  EXPECT_DOUBLE_EQ(f.model.excitation().cosine_at(3.5)[0], 3.5);
  EXPECT_TRUE(f.model.excitation().uses_lambda());
  EXPECT_FALSE(std::get<CubicSpring>(f.model.elements()[0]).k_nl.bound());
}

TEST(ModelFileIo, SchemaViolations) {
  auto kind_of = [](const std::string& text) {
    try {
      parse_model(text);
    } catch (const Error& e) {
      return e.kind();
    }
    return ErrorKind::study_failure;  // no error
  };
  const std::string base_tail = R"("mass":[[1]],"stiffness":[[1]],"damping":[[0]],"excitation":{"cosine":[1],"sine":[0]})";
  EXPECT_EQ(kind_of("{\"ndof\":1," + base_tail + "}"), ErrorKind::study_failure);
  EXPECT_EQ(kind_of("{\"ndof\":1,\"colour\":3," + base_tail + "}"), ErrorKind::schema_violation);
  EXPECT_EQ(kind_of("{\"ndof\":2," + base_tail + "}"), ErrorKind::schema_violation);
  EXPECT_EQ(kind_of("{" + base_tail + "}"), ErrorKind::schema_violation);
  EXPECT_EQ(kind_of("{\"ndof\":1,\"elements\":[{\"kind\":\"cubic_spring\",\"coordinate\":2,\"k_nl\":1}]," +
                    base_tail + "}"),
            ErrorKind::schema_violation);
  EXPECT_EQ(kind_of("{\"ndof\":1,\"elements\":[{\"kind\":\"friction\",\"coordinate\":1}]," + base_tail + "}"),
            ErrorKind::schema_violation);
  EXPECT_EQ(kind_of("{\"ndof\":1,\"elements\":[{\"kind\":\"cubic_spring\",\"coordinate\":1,\"k_nl\":\"mu\"}]," +
                    base_tail + "}"),
            ErrorKind::schema_violation);
  EXPECT_EQ(kind_of("{not json"), ErrorKind::schema_violation);
  try {
    load_model("/nonexistent/model.json");
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::file_not_found);
  }
}
