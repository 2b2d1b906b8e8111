#pragma once

#include <Eigen/Core>

#include "blocktr1/autodiff.hpp"
#include "blocktr1/ocp_model.hpp"

namespace blocktr1 {

struct ButcherTableau {
  int s = 0;
  Eigen::MatrixXd A;
  Eigen::VectorXd b;
  Eigen::VectorXd c;
};

ButcherTableau rk4_tableau();

/// Gauss-Legendre collocation with s nodes (1 <= s <= 4): nodes are the roots of
/// the shifted Legendre polynomial, A and b come from integrating the Lagrange basis.
ButcherTableau gauss_legendre_tableau(int s);

// ---------------------------------------------------------------------------
// Explicit RK4 shooting map
// ---------------------------------------------------------------------------

Eigen::VectorXd rk4_map(const OcpModel& model, const Eigen::VectorXd& x,
                        const Eigen::VectorXd& u, int n_steps);

/// dF/d(x,u), nx x (nx + nu), by forward dual propagation through every stage.
Eigen::MatrixXd rk4_jacobian(const OcpModel& model, const Eigen::VectorXd& x,
                             const Eigen::VectorXd& u, int n_steps);

/// dF/d(x,u)^T sigma by a reverse sweep over the stored RK stages.
Eigen::VectorXd rk4_adjoint(const OcpModel& model, const Eigen::VectorXd& x,
                            const Eigen::VectorXd& u, int n_steps, const Eigen::VectorXd& sigma);

/// Generic RK4 over any scalar type; used for dual propagation and by tests.
template <class T>
VecX<T> rk4_generic(const VectorFunction& phi, const VecX<T>& x, const VecX<T>& u, double h,
                    int n_steps) {
  const Eigen::Index nx = x.size();
  const Eigen::Index nu = u.size();
  const double dt = h / n_steps;
  VecX<T> xu(nx + nu);
  xu.tail(nu) = u;
  VecX<T> xk = x;
  auto eval = [&](const VecX<T>& z) {
    xu.head(nx) = z;
    return phi(xu);
  };
  for (int step = 0; step < n_steps; ++step) {
    const VecX<T> k1 = eval(xk);
    VecX<T> z(nx);
    for (Eigen::Index i = 0; i < nx; ++i) z[i] = xk[i] + T(0.5 * dt) * k1[i];
    const VecX<T> k2 = eval(z);
    for (Eigen::Index i = 0; i < nx; ++i) z[i] = xk[i] + T(0.5 * dt) * k2[i];
    const VecX<T> k3 = eval(z);
    for (Eigen::Index i = 0; i < nx; ++i) z[i] = xk[i] + T(dt) * k3[i];
    const VecX<T> k4 = eval(z);
    for (Eigen::Index i = 0; i < nx; ++i) {
      xk[i] = xk[i] + T(dt / 6.0) * (k1[i] + T(2.0) * k2[i] + T(2.0) * k3[i] + k4[i]);
    }
  }
  return xk;
}

// ---------------------------------------------------------------------------
// Collocation
// ---------------------------------------------------------------------------

struct CollocationStage {
  double h = 0.0;
  ButcherTableau tableau;
  int nx = 0;

  /// B = h (b^T kron I_nx), nx x (s nx).
  Eigen::MatrixXd B() const;
  /// B K without forming B.
  Eigen::VectorXd apply_B(const Eigen::VectorXd& K) const;
  /// B^T v without forming B.
  Eigen::VectorXd apply_Bt(const Eigen::VectorXd& v) const;
  /// B M for a (s nx) x m matrix M, exploiting the Kronecker structure.
  Eigen::MatrixXd apply_B(const Eigen::MatrixXd& M) const;
};

CollocationStage make_collocation_stage(const OcpModel& model, int s);

/// G(x, u, K): block j is f(K_j, x + h sum_l a_jl K_l, u).
Eigen::VectorXd collocation_residual(const OcpModel& model, const Eigen::VectorXd& x,
                                     const Eigen::VectorXd& u, const Eigen::VectorXd& K,
                                     const CollocationStage& stage);

struct CollocationJacobians {
  Eigen::MatrixXd D;  // dG/dw, (s nx) x (nx + nu)
  Eigen::MatrixXd C;  // dG/dK, (s nx) x (s nx)
};

CollocationJacobians collocation_jacobians(const OcpModel& model, const Eigen::VectorXd& x,
                                           const Eigen::VectorXd& u, const Eigen::VectorXd& K,
                                           const CollocationStage& stage);

/// [dG/dw dG/dK]^T sigma, length nx + nu + s nx, by per-node reverse sweeps.
Eigen::VectorXd collocation_adjoint(const OcpModel& model, const Eigen::VectorXd& x,
                                    const Eigen::VectorXd& u, const Eigen::VectorXd& K,
                                    const CollocationStage& stage, const Eigen::VectorXd& sigma);

struct CollocationSolve {
  Eigen::VectorXd K;
  int iterations = 0;
  double residual = 0.0;
};

/// Full Newton on G(x, u, K) = 0 with exact dG/dK.
CollocationSolve solve_collocation(const OcpModel& model, const Eigen::VectorXd& x,
                                   const Eigen::VectorXd& u, const CollocationStage& stage,
                                   const Eigen::VectorXd& K_guess, double tol = 1e-10,
                                   int max_iter = 50);

/// One implicit collocation step of length stage.h from x under constant u.
Eigen::VectorXd collocation_step(const OcpModel& model, const Eigen::VectorXd& x,
                                 const Eigen::VectorXd& u, const CollocationStage& stage);

/// Simulates the model over `duration` with `substeps` equal collocation steps.
Eigen::VectorXd simulate_collocation(const OcpModel& model, const Eigen::VectorXd& x,
                                     const Eigen::VectorXd& u, double duration, int s,
                                     int substeps);

}  // namespace blocktr1
