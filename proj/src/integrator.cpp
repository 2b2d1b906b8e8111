#include "blocktr1/integrator.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <vector>

namespace blocktr1 {

namespace {

// Legendre polynomial P_n(t) and its derivative on [-1, 1].
std::pair<double, double> legendre(int n, double t) {
  double p0 = 1.0;
  double p1 = t;
  if (n == 0) return {1.0, 0.0};
  for (int k = 2; k <= n; ++k) {
    const double pk = ((2.0 * k - 1.0) * t * p1 - (k - 1.0) * p0) / k;
    p0 = p1;
    p1 = pk;
  }
  const double dp = n * (t * p1 - p0) / (t * t - 1.0);
  return {p1, dp};
}

std::vector<double> shifted_legendre_roots(int s) {
  // Bracket sign changes on a fine grid, bisect, then polish with Newton.
  std::vector<double> roots;
  const int grid = 4000;
  double a = -1.0;
  double fa = legendre(s, a).first;
  for (int g = 1; g <= grid; ++g) {
    const double b = -1.0 + 2.0 * g / grid;
    const double fb = legendre(s, b).first;
    if (fa == 0.0) {
      roots.push_back(a);
    } else if (fa * fb < 0.0) {
      double lo = a;
      double hi = b;
      double flo = fa;
      for (int it = 0; it < 60; ++it) {
        const double mid = 0.5 * (lo + hi);
        const double fm = legendre(s, mid).first;
        if (flo * fm <= 0.0) {
          hi = mid;
        } else {
          lo = mid;
          flo = fm;
        }
      }
      double t = 0.5 * (lo + hi);
      for (int it = 0; it < 5; ++it) {
        const auto [p, dp] = legendre(s, t);
        if (dp == 0.0) break;
        const double dt = p / dp;
        t -= dt;
        if (std::abs(dt) < 1e-16) break;
      }
      roots.push_back(t);
    }
    a = b;
    fa = fb;
  }
  for (double& r : roots) r = 0.5 * (r + 1.0);
  std::sort(roots.begin(), roots.end());
  return roots;
}

template <class T>
VecX<T> collocation_residual_generic(const OcpModel& model, const VecX<T>& x, const VecX<T>& u,
                                     const VecX<T>& K, const CollocationStage& stage) {
  const int nx = model.nx;
  const int nu = model.nu;
  const int s = stage.tableau.s;
  VecX<T> G(s * nx);
  VecX<T> q(2 * nx + nu);
  for (int j = 0; j < s; ++j) {
    for (int i = 0; i < nx; ++i) {
      T z = x[i];
      for (int l = 0; l < s; ++l) {
        const double a = stage.tableau.A(j, l);
        if (a != 0.0) z = z + T(stage.h * a) * K[l * nx + i];
      }
      q[i] = K[j * nx + i];
      q[nx + i] = z;
    }
    for (int i = 0; i < nu; ++i) q[2 * nx + i] = u[i];
    G.segment(j * nx, nx) = model.implicit_rhs(q);
  }
  return G;
}

Eigen::VectorXd node_point(const OcpModel& model, const Eigen::VectorXd& x,
                           const Eigen::VectorXd& u, const Eigen::VectorXd& K,
                           const CollocationStage& stage, int j) {
  const int nx = model.nx;
  Eigen::VectorXd q(2 * nx + model.nu);
  q.head(nx) = K.segment(j * nx, nx);
  Eigen::VectorXd z = x;
  for (int l = 0; l < stage.tableau.s; ++l) {
    const double a = stage.tableau.A(j, l);
    if (a != 0.0) z += stage.h * a * K.segment(l * nx, nx);
  }
  q.segment(nx, nx) = z;
  q.tail(model.nu) = u;
  return q;
}

void require_explicit(const OcpModel& model) {
  if (!model.explicit_form || model.explicit_rhs.empty()) {
    throw ConfigError("RK4 requires a model in explicit form xdot = phi(x, u)");
  }
}

}  // namespace

ButcherTableau rk4_tableau() {
  ButcherTableau t;
  t.s = 4;
  t.A = Eigen::MatrixXd::Zero(4, 4);
  t.A(1, 0) = 0.5;
  t.A(2, 1) = 0.5;
  t.A(3, 2) = 1.0;
  t.b = Eigen::Vector4d(1.0 / 6.0, 1.0 / 3.0, 1.0 / 3.0, 1.0 / 6.0);
  t.c = Eigen::Vector4d(0.0, 0.5, 0.5, 1.0);
  return t;
}

ButcherTableau gauss_legendre_tableau(int s) {
  if (s < 1 || s > 4) {
    throw ConfigError("gauss_legendre_tableau: supported stage counts are 1..4, got " +
                      std::to_string(s));
  }
  const std::vector<double> nodes = shifted_legendre_roots(s);
  if (static_cast<int>(nodes.size()) != s) {
    throw NumericalError("gauss_legendre_tableau: root isolation failed");
  }
  ButcherTableau t;
  t.s = s;
  t.c = Eigen::Map<const Eigen::VectorXd>(nodes.data(), s);

  // Collocation conditions: sum_l c_l^k A_jl = c_j^(k+1) / (k+1), sum_l c_l^k b_l = 1/(k+1).
  Eigen::MatrixXd V(s, s);
  for (int k = 0; k < s; ++k) {
    for (int l = 0; l < s; ++l) V(k, l) = std::pow(t.c[l], k);
  }
  const Eigen::FullPivLU<Eigen::MatrixXd> lu(V);
  Eigen::VectorXd rhs(s);
  for (int k = 0; k < s; ++k) rhs[k] = 1.0 / (k + 1);
  t.b = lu.solve(rhs);
  t.A.resize(s, s);
  for (int j = 0; j < s; ++j) {
    for (int k = 0; k < s; ++k) rhs[k] = std::pow(t.c[j], k + 1) / (k + 1);
    t.A.row(j) = lu.solve(rhs).transpose();
  }
  return t;
}

Eigen::VectorXd rk4_map(const OcpModel& model, const Eigen::VectorXd& x,
                        const Eigen::VectorXd& u, int n_steps) {
  require_explicit(model);
  require_dim(x.size(), model.nx, "rk4_map x");
  require_dim(u.size(), model.nu, "rk4_map u");
  if (n_steps < 1) throw ConfigError("rk4_map: n_steps must be >= 1");
  return rk4_generic<double>(model.explicit_rhs, x, u, model.interval(), n_steps);
}

Eigen::MatrixXd rk4_jacobian(const OcpModel& model, const Eigen::VectorXd& x,
                             const Eigen::VectorXd& u, int n_steps) {
  require_explicit(model);
  require_dim(x.size(), model.nx, "rk4_jacobian x");
  require_dim(u.size(), model.nu, "rk4_jacobian u");
  if (n_steps < 1) throw ConfigError("rk4_jacobian: n_steps must be >= 1");
  const int nx = model.nx;
  const int nu = model.nu;
  Eigen::MatrixXd J(nx, nx + nu);
  DualVector xd(nx);
  DualVector ud(nu);
  for (int i = 0; i < nx; ++i) xd[i] = Dual(x[i]);
  for (int i = 0; i < nu; ++i) ud[i] = Dual(u[i]);
  for (int col = 0; col < nx + nu; ++col) {
    if (col < nx) {
      xd[col].derivative = 1.0;
    } else {
      ud[col - nx].derivative = 1.0;
    }
    const DualVector y = rk4_generic<Dual>(model.explicit_rhs, xd, ud, model.interval(), n_steps);
    for (int i = 0; i < nx; ++i) J(i, col) = y[i].derivative;
    if (col < nx) {
      xd[col].derivative = 0.0;
    } else {
      ud[col - nx].derivative = 0.0;
    }
  }
  ad_counters().forward_passes.fetch_add(nx + nu, std::memory_order_relaxed);
  return J;
}

Eigen::VectorXd rk4_adjoint(const OcpModel& model, const Eigen::VectorXd& x,
                            const Eigen::VectorXd& u, int n_steps, const Eigen::VectorXd& sigma) {
  require_explicit(model);
  require_dim(x.size(), model.nx, "rk4_adjoint x");
  require_dim(u.size(), model.nu, "rk4_adjoint u");
  require_dim(sigma.size(), model.nx, "rk4_adjoint sigma");
  if (n_steps < 1) throw ConfigError("rk4_adjoint: n_steps must be >= 1");
  const int nx = model.nx;
  const int nu = model.nu;
  const double dt = model.interval() / n_steps;
  const VectorFunction& phi = model.explicit_rhs;

  // Forward sweep: keep the four stage evaluation points of every sub-step.
  std::vector<Eigen::VectorXd> points(4 * n_steps, Eigen::VectorXd(nx + nu));
  Eigen::VectorXd xk = x;
  Eigen::VectorXd xu(nx + nu);
  xu.tail(nu) = u;
  for (int step = 0; step < n_steps; ++step) {
    Eigen::VectorXd* p = &points[4 * step];
    p[0].head(nx) = xk;
    p[0].tail(nu) = u;
    const Eigen::VectorXd k1 = phi(p[0]);
    p[1].head(nx) = xk + 0.5 * dt * k1;
    p[1].tail(nu) = u;
    const Eigen::VectorXd k2 = phi(p[1]);
    p[2].head(nx) = xk + 0.5 * dt * k2;
    p[2].tail(nu) = u;
    const Eigen::VectorXd k3 = phi(p[2]);
    p[3].head(nx) = xk + dt * k3;
    p[3].tail(nu) = u;
    const Eigen::VectorXd k4 = phi(p[3]);
    xk += dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
  }

  // Reverse sweep with stage-local vector-Jacobian products.
  Eigen::VectorXd xbar = sigma;
  Eigen::VectorXd ubar = Eigen::VectorXd::Zero(nu);
  for (int step = n_steps - 1; step >= 0; --step) {
    const Eigen::VectorXd* p = &points[4 * step];
    Eigen::VectorXd kbar4 = dt / 6.0 * xbar;
    Eigen::VectorXd kbar3 = dt / 3.0 * xbar;
    Eigen::VectorXd kbar2 = dt / 3.0 * xbar;
    Eigen::VectorXd kbar1 = dt / 6.0 * xbar;

    Eigen::VectorXd g = vjp(phi, p[3], kbar4);
    xbar += g.head(nx);
    ubar += g.tail(nu);
    kbar3 += dt * g.head(nx);

    g = vjp(phi, p[2], kbar3);
    xbar += g.head(nx);
    ubar += g.tail(nu);
    kbar2 += 0.5 * dt * g.head(nx);

    g = vjp(phi, p[1], kbar2);
    xbar += g.head(nx);
    ubar += g.tail(nu);
    kbar1 += 0.5 * dt * g.head(nx);

    g = vjp(phi, p[0], kbar1);
    xbar += g.head(nx);
    ubar += g.tail(nu);
  }
  Eigen::VectorXd out(nx + nu);
  out << xbar, ubar;
  return out;
}

Eigen::MatrixXd CollocationStage::B() const {
  const int s = tableau.s;
  Eigen::MatrixXd out(nx, s * nx);
  for (int j = 0; j < s; ++j) {
    out.block(0, j * nx, nx, nx) = h * tableau.b[j] * Eigen::MatrixXd::Identity(nx, nx);
  }
  return out;
}

Eigen::VectorXd CollocationStage::apply_B(const Eigen::VectorXd& K) const {
  require_dim(K.size(), tableau.s * nx, "apply_B K");
  Eigen::VectorXd out = Eigen::VectorXd::Zero(nx);
  for (int j = 0; j < tableau.s; ++j) out += h * tableau.b[j] * K.segment(j * nx, nx);
  return out;
}

Eigen::VectorXd CollocationStage::apply_Bt(const Eigen::VectorXd& v) const {
  require_dim(v.size(), nx, "apply_Bt v");
  Eigen::VectorXd out(tableau.s * nx);
  for (int j = 0; j < tableau.s; ++j) out.segment(j * nx, nx) = h * tableau.b[j] * v;
  return out;
}

Eigen::MatrixXd CollocationStage::apply_B(const Eigen::MatrixXd& M) const {
  require_dim(M.rows(), tableau.s * nx, "apply_B M");
  Eigen::MatrixXd out = Eigen::MatrixXd::Zero(nx, M.cols());
  for (int j = 0; j < tableau.s; ++j) out += h * tableau.b[j] * M.middleRows(j * nx, nx);
  return out;
}

CollocationStage make_collocation_stage(const OcpModel& model, int s) {
  CollocationStage st;
  st.h = model.interval();
  st.tableau = gauss_legendre_tableau(s);
  st.nx = model.nx;
  return st;
}

Eigen::VectorXd collocation_residual(const OcpModel& model, const Eigen::VectorXd& x,
                                     const Eigen::VectorXd& u, const Eigen::VectorXd& K,
                                     const CollocationStage& stage) {
  require_dim(x.size(), model.nx, "collocation_residual x");
  require_dim(u.size(), model.nu, "collocation_residual u");
  require_dim(K.size(), stage.tableau.s * model.nx, "collocation_residual K");
  return collocation_residual_generic<double>(model, x, u, K, stage);
}

CollocationJacobians collocation_jacobians(const OcpModel& model, const Eigen::VectorXd& x,
                                           const Eigen::VectorXd& u, const Eigen::VectorXd& K,
                                           const CollocationStage& stage) {
  require_dim(x.size(), model.nx, "collocation_jacobians x");
  require_dim(u.size(), model.nu, "collocation_jacobians u");
  require_dim(K.size(), stage.tableau.s * model.nx, "collocation_jacobians K");
  const int nx = model.nx;
  const int nu = model.nu;
  const int s = stage.tableau.s;
  CollocationJacobians out;
  out.D.resize(s * nx, nx + nu);
  out.C = Eigen::MatrixXd::Zero(s * nx, s * nx);
  for (int j = 0; j < s; ++j) {
    const Eigen::MatrixXd Jf = jacobian(model.implicit_rhs, node_point(model, x, u, K, stage, j));
    const auto f_xdot = Jf.leftCols(nx);
    const auto f_x = Jf.middleCols(nx, nx);
    out.D.middleRows(j * nx, nx) = Jf.rightCols(nx + nu);
    for (int l = 0; l < s; ++l) {
      auto blk = out.C.block(j * nx, l * nx, nx, nx);
      const double a = stage.tableau.A(j, l);
      if (a != 0.0) blk = stage.h * a * f_x;
      if (l == j) blk += f_xdot;
    }
  }
  return out;
}

Eigen::VectorXd collocation_adjoint(const OcpModel& model, const Eigen::VectorXd& x,
                                    const Eigen::VectorXd& u, const Eigen::VectorXd& K,
                                    const CollocationStage& stage, const Eigen::VectorXd& sigma) {
  const int nx = model.nx;
  const int nu = model.nu;
  const int s = stage.tableau.s;
  require_dim(x.size(), nx, "collocation_adjoint x");
  require_dim(u.size(), nu, "collocation_adjoint u");
  require_dim(K.size(), s * nx, "collocation_adjoint K");
  require_dim(sigma.size(), s * nx, "collocation_adjoint sigma");
  Eigen::VectorXd out = Eigen::VectorXd::Zero(nx + nu + s * nx);
  for (int j = 0; j < s; ++j) {
    const Eigen::VectorXd g = vjp(model.implicit_rhs, node_point(model, x, u, K, stage, j),
                                  sigma.segment(j * nx, nx));
    const auto g_xdot = g.head(nx);
    const auto g_x = g.segment(nx, nx);
    out.head(nx) += g_x;
    out.segment(nx, nu) += g.tail(nu);
    out.segment(nx + nu + j * nx, nx) += g_xdot;
    for (int l = 0; l < s; ++l) {
      const double a = stage.tableau.A(j, l);
      if (a != 0.0) out.segment(nx + nu + l * nx, nx) += stage.h * a * g_x;
    }
  }
  return out;
}

CollocationSolve solve_collocation(const OcpModel& model, const Eigen::VectorXd& x,
                                   const Eigen::VectorXd& u, const CollocationStage& stage,
                                   const Eigen::VectorXd& K_guess, double tol, int max_iter) {
  CollocationSolve out;
  out.K = K_guess;
  Eigen::VectorXd G = collocation_residual(model, x, u, out.K, stage);
  out.residual = G.lpNorm<Eigen::Infinity>();
  while (out.residual > tol && out.iterations < max_iter) {
    const CollocationJacobians jac = collocation_jacobians(model, x, u, out.K, stage);
    out.K -= jac.C.partialPivLu().solve(G);
    G = collocation_residual(model, x, u, out.K, stage);
    out.residual = G.lpNorm<Eigen::Infinity>();
    ++out.iterations;
    if (!std::isfinite(out.residual)) break;
  }
  if (!(out.residual <= tol)) {
    throw NumericalError("solve_collocation: Newton did not converge (residual " +
                         std::to_string(out.residual) + ")");
  }
  return out;
}

Eigen::VectorXd collocation_step(const OcpModel& model, const Eigen::VectorXd& x,
                                 const Eigen::VectorXd& u, const CollocationStage& stage) {
  const Eigen::VectorXd guess = Eigen::VectorXd::Zero(stage.tableau.s * model.nx);
  const CollocationSolve sol = solve_collocation(model, x, u, stage, guess);
  return x + stage.apply_B(sol.K);
}

Eigen::VectorXd simulate_collocation(const OcpModel& model, const Eigen::VectorXd& x,
                                     const Eigen::VectorXd& u, double duration, int s,
                                     int substeps) {
  if (substeps < 1) throw ConfigError("simulate_collocation: substeps must be >= 1");
  CollocationStage stage;
  stage.h = duration / substeps;
  stage.tableau = gauss_legendre_tableau(s);
  stage.nx = model.nx;
  Eigen::VectorXd xk = x;
  Eigen::VectorXd K = Eigen::VectorXd::Zero(s * model.nx);
  for (int i = 0; i < substeps; ++i) {
    K = solve_collocation(model, xk, u, stage, K).K;
    xk += stage.apply_B(K);
  }
  return xk;
}

}  // namespace blocktr1
