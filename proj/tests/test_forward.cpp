#include "helpers.hpp"

#include <lapqmc/forward.hpp>

#include <gtest/gtest.h>

using namespace lapqmc;
using lapqmc::testing::vec;

namespace {

double closed_form(double t) { return 100.0 / 6.0 * (t - t * t * t); }

}  // namespace

TEST(Algebraic, ForwardExamples) {
  EXPECT_EQ(AlgebraicModel(4).forward(Vector::Zero(4)), vec({1, 0, 0, 0}));
  const Vector f2 = AlgebraicModel(2).forward(vec({0.25, 0.25}));
  EXPECT_NEAR(f2[0], 1.0512711, 1e-7);
  EXPECT_EQ(f2[1], 0.1875);
  const Vector f4 = AlgebraicModel(4).forward(Vector::Constant(4, 0.25));
  EXPECT_NEAR(f4[0], std::exp(0.05), 1e-15);
  EXPECT_EQ(f4[1], 0.1875);
  EXPECT_EQ(f4[2], 0.25);
  EXPECT_EQ(f4[3], 0.5625);
}

TEST(Algebraic, JacobianMatchesFiniteDifferences) {
  const AlgebraicModel m(4);
  Rng rng = make_stream(12);
  for (int k = 0; k < 20; ++k) {
    const Vector x = m.prior().sample(rng);
    const Matrix j = m.jacobian(x);
    const Matrix jfd = fd_jacobian([&](const Vector& v) { return m.forward(v); }, x);
    EXPECT_LT((j - jfd).norm() / j.norm(), 1e-6);
    const auto hs = m.component_hessians(x);
    for (int i = 0; i < 4; ++i) {
      const Matrix hfd = fd_hessian([&](const Vector& v) { return m.forward(v)[i]; }, x);
      EXPECT_LT((hs[static_cast<std::size_t>(i)] - hfd).norm(), 1e-5);
    }
  }
}

TEST(Algebraic, Validation) {
  EXPECT_THROW(AlgebraicModel(0), ConfigError);
  EXPECT_THROW(AlgebraicModel(5), ConfigError);
  EXPECT_THROW(AlgebraicModel(2, 0.0), ConfigError);
  EXPECT_THROW(AlgebraicModel(2).forward(Vector::Zero(3)), ConfigError);
  EXPECT_EQ(AlgebraicModel(3).noise_covariance(), 0.1 * Matrix::Identity(3, 3));
  EXPECT_EQ(AlgebraicModel::qoi(vec({0.1, 0.2, 0.3})), 0.1 + 0.2 + 0.3);
}

TEST(Elliptic, ConstantCoefficientClosedForm) {
  const EllipticModel m(1, 1024);
  const Vector q = m.solve(Vector::Zero(1));
  EXPECT_NEAR(m.qoi(Vector::Zero(1)), 6.25, 1e-4);
  EXPECT_NEAR(m.interpolate(q, 0.25), 3.90625, 1e-4);
  const Vector obs = m.observe(Vector::Zero(1));
  ASSERT_EQ(obs.size(), 2);
  EXPECT_NEAR(obs[0], 3.90625, 1e-4);
  EXPECT_NEAR(obs[1], 5.46875, 1e-4);
  // linear elements reproduce the exact solution at the nodes in 1D
  double worst = 0;
  for (int i = 0; i <= 1024; ++i) worst = std::max(worst, std::abs(q[i] - closed_form(i / 1024.0)));
  EXPECT_LT(worst, 1e-9);
}

TEST(Elliptic, MeshSelfConvergence) {
  Rng rng = make_stream(13);
  for (int k = 0; k < 5; ++k) {
    Vector x(3);
    for (int j = 0; j < 3; ++j) x[j] = 4.0 * (uniform01(rng) - 0.5);
    auto sup_diff = [&](int coarse) {
      const Vector a = EllipticModel(3, coarse).solve(x);
      const Vector b = EllipticModel(3, 2 * coarse).solve(x);
      double worst = 0;
      for (int i = 0; i <= coarse; ++i) worst = std::max(worst, std::abs(a[i] - b[2 * i]));
      return worst;
    };
    const double factor = sup_diff(256) / sup_diff(512);
    EXPECT_NEAR(factor, 4.0, 0.4);
  }
}

TEST(Elliptic, MaximumPrincipleAndMonotonicity) {
  const EllipticModel m(2, 512);
  Rng rng = make_stream(14);
  for (int k = 0; k < 10; ++k) {
    const Vector x = vec({6 * (uniform01(rng) - 0.5), 6 * (uniform01(rng) - 0.5)});
    const Vector q = m.solve(x);
    EXPECT_EQ(q[0], 0.0);
    EXPECT_EQ(q[512], 0.0);
    EXPECT_GE(q.minCoeff(), 0.0);
    // a larger diffusion coefficient lowers the solution
    EXPECT_LT(m.qoi(x + vec({0.5, 0})), m.qoi(x));
  }
}

TEST(Elliptic, ObservationIsLinearInSolution) {
  const EllipticModel m(1, 128, {0.1, 0.33, 0.5, 0.9});
  Rng rng = make_stream(15);
  Vector a = Vector::Zero(129), b = Vector::Zero(129);
  for (int i = 1; i < 128; ++i) {
    a[i] = standard_normal(rng);
    b[i] = standard_normal(rng);
  }
  for (double t : m.obs_points) {
    EXPECT_NEAR(m.interpolate(2.0 * a - 3.0 * b, t), 2.0 * m.interpolate(a, t) - 3.0 * m.interpolate(b, t), 1e-13);
  }
}

TEST(Elliptic, Configuration) {
  EXPECT_EQ(EllipticModel(1).obs_points, (std::vector<double>{0.25, 0.75}));
  EXPECT_EQ(EllipticModel(3).obs_points.size(), 6u);
  EXPECT_EQ(EllipticModel(3).obs_points[3], 0.6125);
  EXPECT_THROW(EllipticModel(4), ConfigError);
  EXPECT_THROW(EllipticModel(1, 32), ConfigError);
  EXPECT_THROW(EllipticModel(1, 128, {0.5, 0.25}), ConfigError);
  EXPECT_THROW(EllipticModel(1, 128, {0.0, 0.5}), ConfigError);
  EXPECT_THROW(EllipticModel(2).solve(Vector::Zero(1)), ConfigError);
  EXPECT_NEAR(EllipticModel::psi(2, 0.25), 0.05, 1e-15);
  const EllipticModel m(2);
  EXPECT_EQ(m.likelihood(0.01).value(m.truth()), 0.0);
}
