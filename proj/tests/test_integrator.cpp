#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "blocktr1/errors.hpp"
#include "blocktr1/integrator.hpp"
#include "test_util.hpp"

using namespace blocktr1;
using blocktr1::testutil::scalar_linear_model;

namespace {

double rk4_error(double h) {
  const OcpModel m = scalar_linear_model(-1.0, 0.0, 1, h);
  const Eigen::VectorXd x = rk4_map(m, Eigen::VectorXd::Constant(1, 1.0), Eigen::VectorXd::Zero(1), 1);
  return std::abs(x[0] - std::exp(-h));
}

double gl_error(int s, double h) {
  const OcpModel m = scalar_linear_model(-1.0, 0.0, 1, h);
  const Eigen::VectorXd x = collocation_step(m, Eigen::VectorXd::Constant(1, 1.0),
                                             Eigen::VectorXd::Zero(1), make_collocation_stage(m, s));
  return std::abs(x[0] - std::exp(-h));
}

/// Local one-step errors scale as h^(p+1).
double empirical_order(const std::function<double(double)>& err) {
  const std::vector<double> hs{0.2, 0.1, 0.05, 0.025};
  double slope = 0.0;
  for (std::size_t k = 0; k + 1 < hs.size(); ++k) {
    slope += std::log(err(hs[k]) / err(hs[k + 1])) / std::log(2.0);
  }
  return slope / (hs.size() - 1) - 1.0;
}

}  // namespace

TEST(Integrator, Rk4ZeroDynamicsIsIdentity) {
  const OcpModel m = scalar_linear_model(0.0, 0.0, 1, 0.3);
  EXPECT_EQ(rk4_map(m, Eigen::VectorXd::Constant(1, 2.5), Eigen::VectorXd::Zero(1), 3)[0], 2.5);
  const Eigen::MatrixXd J = rk4_jacobian(m, Eigen::VectorXd::Constant(1, 2.5), Eigen::VectorXd::Zero(1), 3);
  EXPECT_DOUBLE_EQ(J(0, 0), 1.0);
  EXPECT_DOUBLE_EQ(J(0, 1), 0.0);
}

TEST(Integrator, Rk4StabilityPolynomial) {
  const OcpModel m = scalar_linear_model(-1.0, 0.0, 1, 0.1);
  const double x = rk4_map(m, Eigen::VectorXd::Constant(1, 1.0), Eigen::VectorXd::Zero(1), 1)[0];
  const double z = -0.1;
  EXPECT_NEAR(x, 1 + z + z * z / 2 + z * z * z / 6 + z * z * z * z / 24, 1e-15);
  EXPECT_NEAR(x, 0.9048375, 1e-7);
}

TEST(Integrator, Rk4LinearJacobianClosedForm) {
  const double a = -0.7;
  const double b = 1.3;
  const double h = 0.2;
  const OcpModel m = scalar_linear_model(a, b, 1, h);
  const Eigen::MatrixXd J = rk4_jacobian(m, Eigen::VectorXd::Constant(1, 0.4), Eigen::VectorXd::Constant(1, -0.2), 1);
  const double z = a * h;
  const double R = 1 + z + z * z / 2 + z * z * z / 6 + z * z * z * z / 24;
  const double Ru = b * h * (1 + z / 2 + z * z / 6 + z * z * z / 24);
  EXPECT_NEAR(J(0, 0), R, 1e-14);
  EXPECT_NEAR(J(0, 1), Ru, 1e-14);
  const Eigen::VectorXd g = rk4_adjoint(m, Eigen::VectorXd::Constant(1, 0.4), Eigen::VectorXd::Constant(1, -0.2), 1,
                                        Eigen::VectorXd::Constant(1, 2.0));
  EXPECT_NEAR(g[0], 2 * R, 1e-14);
  EXPECT_NEAR(g[1], 2 * Ru, 1e-14);
}

TEST(Integrator, Rk4AdjointMatchesJacobianTransposeOnChain) {
  const OcpModel m = chain_of_masses(3, 20, 4.0);
  std::mt19937 rng(3);
  const Eigen::VectorXd x = m.x0_hat + testutil::random_vector(rng, m.nx, 0.01);
  const Eigen::VectorXd u = testutil::random_vector(rng, m.nu, 0.1);
  const Eigen::MatrixXd J = rk4_jacobian(m, x, u, 10);
  for (int t = 0; t < 5; ++t) {
    const Eigen::VectorXd s = testutil::random_vector(rng, m.nx);
    const Eigen::VectorXd g = rk4_adjoint(m, x, u, 10, s);
    EXPECT_LE((g - J.transpose() * s).cwiseAbs().maxCoeff(), 1e-12 * (1 + g.cwiseAbs().maxCoeff()));
  }
  EXPECT_EQ(rk4_adjoint(m, x, u, 10, Eigen::VectorXd::Zero(m.nx)).cwiseAbs().maxCoeff(), 0.0);
}

TEST(Integrator, Rk4Order) { EXPECT_NEAR(empirical_order(rk4_error), 4.0, 0.1); }

TEST(Integrator, GaussLegendreTableaus) {
  const ButcherTableau t1 = gauss_legendre_tableau(1);
  EXPECT_NEAR(t1.c[0], 0.5, 1e-15);
  EXPECT_NEAR(t1.b[0], 1.0, 1e-15);
  EXPECT_NEAR(t1.A(0, 0), 0.5, 1e-15);
  const ButcherTableau t2 = gauss_legendre_tableau(2);
  EXPECT_NEAR(t2.c[0], 0.5 - std::sqrt(3.0) / 6, 1e-14);
  EXPECT_NEAR(t2.c[1], 0.5 + std::sqrt(3.0) / 6, 1e-14);
  EXPECT_NEAR(t2.A(0, 0), 0.25, 1e-14);
  EXPECT_NEAR(t2.A(0, 1), 0.25 - std::sqrt(3.0) / 6, 1e-14);
  for (int s = 1; s <= 4; ++s) {
    const ButcherTableau t = gauss_legendre_tableau(s);
    EXPECT_NEAR(t.b.sum(), 1.0, 1e-14);
    EXPECT_LE((t.A.rowwise().sum() - t.c).cwiseAbs().maxCoeff(), 1e-14);
  }
  EXPECT_THROW(gauss_legendre_tableau(0), ConfigError);
  EXPECT_THROW(gauss_legendre_tableau(5), ConfigError);
}

TEST(Integrator, GaussLegendreOrders) {
  for (int s = 1; s <= 2; ++s) {
    const double order = empirical_order([s](double h) { return gl_error(s, h); });
    EXPECT_NEAR(order, 2.0 * s, 0.1) << "s = " << s;
  }
}

TEST(Integrator, StiffStability) {
  const OcpModel m = scalar_linear_model(-50.0, 0.0, 1, 1.0);
  const Eigen::VectorXd one = Eigen::VectorXd::Constant(1, 1.0);
  const double gl = collocation_step(m, one, Eigen::VectorXd::Zero(1), make_collocation_stage(m, 2))[0];
  const double rk = rk4_map(m, one, Eigen::VectorXd::Zero(1), 1)[0];
  EXPECT_LT(std::abs(gl), 1.0);
  EXPECT_GT(std::abs(rk), 1.0);
}

TEST(Integrator, CollocationScalarSolve) {
  const OcpModel m = scalar_linear_model(-1.0, 0.0, 1, 0.1);
  const CollocationStage st = make_collocation_stage(m, 1);
  const CollocationSolve sol = solve_collocation(m, Eigen::VectorXd::Constant(1, 1.0), Eigen::VectorXd::Zero(1), st,
                                                 Eigen::VectorXd::Zero(1));
  EXPECT_NEAR(sol.K[0], -1.0 / 1.05, 1e-12);
  EXPECT_LE(collocation_residual(m, Eigen::VectorXd::Constant(1, 1.0), Eigen::VectorXd::Zero(1), sol.K, st).norm(),
            1e-10);
}

TEST(Integrator, CollocationScalarJacobians) {
  const double lam = -1.0;
  const double h = 0.1;
  const OcpModel m = scalar_linear_model(lam, 0.0, 1, h);
  const CollocationStage st = make_collocation_stage(m, 1);
  const CollocationJacobians J = collocation_jacobians(m, Eigen::VectorXd::Constant(1, 0.3),
                                                       Eigen::VectorXd::Zero(1), Eigen::VectorXd::Constant(1, 0.2), st);
  EXPECT_NEAR(J.D(0, 0), -lam, 1e-15);
  EXPECT_NEAR(J.D(0, 1), 0.0, 1e-15);
  EXPECT_NEAR(J.C(0, 0), 1.0 - h * lam / 2, 1e-15);
}

TEST(Integrator, CollocationZeroDynamics) {
  const OcpModel m = scalar_linear_model(0.0, 0.0, 1, 0.5);
  const CollocationStage st = make_collocation_stage(m, 3);
  const Eigen::VectorXd K = Eigen::VectorXd::Zero(3);
  EXPECT_EQ(collocation_residual(m, Eigen::VectorXd::Constant(1, 1.0), Eigen::VectorXd::Zero(1), K, st).norm(), 0.0);
  const CollocationJacobians J = collocation_jacobians(m, Eigen::VectorXd::Constant(1, 1.0), Eigen::VectorXd::Zero(1), K, st);
  EXPECT_TRUE(J.C.isApprox(Eigen::MatrixXd::Identity(3, 3), 0.0));
}

TEST(Integrator, CollocationDerivativesOnChain) {
  ChainParameters p;
  p.n_m = 2;
  p.N = 5;
  p.T = 1.0;
  p.force_input = true;
  const OcpModel m = chain_of_masses(p);
  const CollocationStage st = make_collocation_stage(m, 2);
  std::mt19937 rng(5);
  const Eigen::VectorXd x = m.x0_hat;
  const Eigen::VectorXd u = m.u_ref + testutil::random_vector(rng, m.nu, 0.01);
  const Eigen::VectorXd K = testutil::random_vector(rng, 2 * m.nx, 0.1);
  const CollocationJacobians J = collocation_jacobians(m, x, u, K, st);
  const double h = 1e-6;
  Eigen::VectorXd z(m.nx + m.nu + K.size());
  z << x, u, K;
  auto G = [&](const Eigen::VectorXd& v) {
    return collocation_residual(m, v.head(m.nx), v.segment(m.nx, m.nu), v.tail(K.size()), st);
  };
  Eigen::MatrixXd full(K.size(), z.size());
  full << J.D, J.C;
  for (int j = 0; j < z.size(); ++j) {
    Eigen::VectorXd zp = z;
    Eigen::VectorXd zm = z;
    zp[j] += h;
    zm[j] -= h;
    const Eigen::VectorXd fd = (G(zp) - G(zm)) / (2 * h);
    EXPECT_LE((fd - full.col(j)).cwiseAbs().maxCoeff(), 1e-6 * (1 + full.col(j).cwiseAbs().maxCoeff()));
  }
  const Eigen::VectorXd sigma = testutil::random_vector(rng, K.size());
  const Eigen::VectorXd g = collocation_adjoint(m, x, u, K, st, sigma);
  EXPECT_LE((g - full.transpose() * sigma).cwiseAbs().maxCoeff(), 1e-11);
  EXPECT_EQ(collocation_adjoint(m, x, u, K, st, Eigen::VectorXd::Zero(K.size())).cwiseAbs().maxCoeff(), 0.0);
}

TEST(Integrator, KroneckerHelpersMatchExplicitB) {
  const OcpModel m = chain_of_masses(3, 20, 4.0);
  const CollocationStage st = make_collocation_stage(m, 3);
  std::mt19937 rng(11);
  const Eigen::MatrixXd B = st.B();
  const Eigen::VectorXd K = testutil::random_vector(rng, 3 * m.nx);
  const Eigen::VectorXd v = testutil::random_vector(rng, m.nx);
  const Eigen::MatrixXd M = testutil::random_matrix(rng, 3 * m.nx, 4);
  EXPECT_LE((st.apply_B(K) - B * K).norm(), 1e-14);
  EXPECT_LE((st.apply_Bt(v) - B.transpose() * v).norm(), 1e-14);
  EXPECT_LE((st.apply_B(M) - B * M).norm(), 1e-13);
}
