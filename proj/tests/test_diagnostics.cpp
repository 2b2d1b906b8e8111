#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "blocktr1/diagnostics.hpp"
#include "blocktr1/errors.hpp"
#include "test_util.hpp"

using namespace blocktr1;

TEST(NullSpace, NoActiveRowsGivesIdentity) {
  EXPECT_EQ(null_space(Eigen::MatrixXd::Zero(0, 3), 3), Eigen::MatrixXd::Identity(3, 3));
}

TEST(NullSpace, SingleRowHandExample) {
  Eigen::MatrixXd P(1, 2);
  P << 1.0, 0.0;
  const Eigen::MatrixXd N = null_space(P, 2);
  ASSERT_EQ(N.cols(), 1);
  EXPECT_NEAR(N(0, 0), 0.0, 1e-15);
  EXPECT_NEAR(std::abs(N(1, 0)), 1.0, 1e-15);
}

TEST(NullSpace, RandomOrthonormalAndAnnihilating) {
  std::mt19937 rng(3);
  for (int t = 0; t < 20; ++t) {
    const Eigen::MatrixXd P = testutil::random_matrix(rng, 3, 7);
    const Eigen::MatrixXd N = null_space(P, 7);
    ASSERT_EQ(N.cols(), 4);
    EXPECT_LE((N.transpose() * N - Eigen::MatrixXd::Identity(4, 4)).cwiseAbs().maxCoeff(), 1e-12);
    EXPECT_LE((P * N).cwiseAbs().maxCoeff(), 1e-12);
  }
}

TEST(NullSpace, RankDeficientRowsThrow) {
  Eigen::MatrixXd P(2, 3);
  P << 1, 2, 3, 2, 4, 6;
  EXPECT_THROW(null_space(P, 3), NumericalError);
}

TEST(ProjectedError, ExactJacobianAndEmptyBasis) {
  std::mt19937 rng(4);
  const Eigen::MatrixXd J = testutil::random_matrix(rng, 3, 5);
  const Eigen::MatrixXd N = null_space(testutil::random_matrix(rng, 2, 5), 5);
  EXPECT_EQ(projected_jacobian_error(J, J, N), 0.0);
  EXPECT_EQ(projected_jacobian_error(J + testutil::random_matrix(rng, 3, 5), J, Eigen::MatrixXd::Zero(5, 0)), 0.0);
}

TEST(ProjectedError, RankOnePerturbationIdentity) {
  std::mt19937 rng(5);
  const Eigen::MatrixXd J = testutil::random_matrix(rng, 3, 5);
  const Eigen::MatrixXd N = null_space(testutil::random_matrix(rng, 2, 5), 5);
  const Eigen::VectorXd u = testutil::random_vector(rng, 3);
  const Eigen::VectorXd v = N * testutil::random_vector(rng, 3);
  const double delta = 0.37;
  const double expected = delta * u.norm() * (N.transpose() * v).norm();
  const Eigen::MatrixXd A = J + delta * u * v.transpose();
  EXPECT_NEAR(projected_jacobian_error(A, J, N), expected, 1e-12);
  EXPECT_NEAR(projected_jacobian_error(A, J, N, MatrixNorm::spectral), expected, 1e-12);
}

TEST(ProjectedError, InvariantToComplementPerturbations) {
  std::mt19937 rng(6);
  const Eigen::MatrixXd J = testutil::random_matrix(rng, 3, 5);
  const Eigen::MatrixXd P = testutil::random_matrix(rng, 2, 5);
  const Eigen::MatrixXd N = null_space(P, 5);
  const Eigen::MatrixXd A = J + 0.1 * testutil::random_matrix(rng, 3, 5);
  const Eigen::MatrixXd B = A + testutil::random_matrix(rng, 3, 2) * P;
  EXPECT_NEAR(projected_jacobian_error(A, J, N), projected_jacobian_error(B, J, N), 1e-12);
}

TEST(RateEstimate, GeometricSequences) {
  std::vector<double> a;
  std::vector<double> b;
  for (int k = 0; k < 12; ++k) {
    a.push_back(std::pow(0.5, k));
    b.push_back(3.0 * std::pow(0.25, k));
  }
  EXPECT_NEAR(estimate_rate(a).rate, 0.5, 1e-14);
  EXPECT_NEAR(estimate_rate(b).rate, 0.25, 1e-14);
  EXPECT_FALSE(estimate_rate(a).insufficient_decay);
}

TEST(RateEstimate, ScaleInvariantAndFlagsGrowth) {
  const std::vector<double> e{1.0, 0.7, 0.4, 0.3, 0.2, 0.15, 0.1};
  std::vector<double> s = e;
  for (double& v : s) v *= 1234.5;
  EXPECT_NEAR(estimate_rate(e).rate, estimate_rate(s).rate, 1e-15);
  EXPECT_TRUE(estimate_rate({1.0, 0.5, 0.6, 0.3, 0.2, 0.1}).insufficient_decay);
  EXPECT_THROW(estimate_rate({1.0, 0.5}), ConfigError);
}

TEST(ReducedKkt, ExactBlocksGiveZero) {
  std::mt19937 rng(7);
  std::vector<Eigen::MatrixXd> H{Eigen::MatrixXd::Identity(3, 3), Eigen::MatrixXd::Identity(2, 2)};
  std::vector<Eigen::MatrixXd> A{testutil::random_matrix(rng, 2, 3)};
  NullSpaceBasis N;
  N.stage = {null_space(testutil::random_matrix(rng, 1, 3), 3), Eigen::MatrixXd::Identity(2, 2)};
  EXPECT_EQ(reduced_kkt_error(H, A, H, A, N), 0.0);
  std::vector<Eigen::MatrixXd> Ap = A;
  const Eigen::MatrixXd dA = 1e-2 * testutil::random_matrix(rng, 2, 3);
  Ap[0] += dA;
  const double expected = std::sqrt(2.0) * (dA * N.stage[0]).norm();
  EXPECT_NEAR(reduced_kkt_error(H, Ap, H, A, N), expected, 1e-14);
}

TEST(ReducedKkt, GaussNewtonExactAtZeroResidualOptimum) {
  const OcpModel m = testutil::scalar_linear_model(-1.0, 0.0, 3, 1.5);
  Iterate star = make_initial_iterate(m);
  for (auto& x : star.x) x.setZero();
  for (auto& u : star.u) u.setZero();
  std::vector<Eigen::MatrixXd> H;
  std::vector<Eigen::MatrixXd> A;
  for (int i = 0; i <= m.N; ++i) H.push_back(gauss_newton_hessian(m, i, star.w(i)));
  for (int i = 0; i < m.N; ++i) A.push_back(shooting_jacobian(m, star.w(i)));
  const NullSpaceBasis N = null_space(active_rows(m, {}));
  EXPECT_LE(reduced_kkt_error(H, A, m, star, N), 1e-6);
}

TEST(Reference, ChainRunIsConvergedWithFiniteRate) {
  const OcpModel m = chain_of_masses(3, 10, 2.0);
  const SolutionReference ref = compute_reference(m, make_initial_iterate(m));
  EXPECT_LE(ref.kkt, 1e-12);
  EXPECT_EQ(distance_to_solution(ref.star, ref.star), 0.0);
  const std::vector<double> pe = stage_projected_errors(ref, ref.exact_jacobians);
  for (double v : pe) EXPECT_EQ(v, 0.0);
  EXPECT_EQ(make_projected_error_monitor(ref)(ref.exact_jacobians), 0.0);
}
