#pragma once

#include <Eigen/Dense>

#include <random>
#include <vector>

#include "blocktr1/autodiff.hpp"
#include "blocktr1/block_qp.hpp"
#include "blocktr1/ocp_model.hpp"

namespace blocktr1::testutil {

/// xdot = lam x + b u, unit least-squares weights, no path constraints.
inline OcpModel scalar_linear_model(double lam, double b, int N, double T, int substeps = 1) {
  OcpModel m;
  m.nx = 1;
  m.nu = 1;
  m.N = N;
  m.T = T;
  set_explicit_dynamics(m, VectorFunction(2, 1, [lam, b](const auto& xu) {
                          using S = typename std::decay_t<decltype(xu)>::Scalar;
                          VecX<S> out(1);
                          out[0] = S(lam) * xu[0] + S(b) * xu[1];
                          return out;
                        }));
  m.stage_residuals.assign(N, VectorFunction(2, 2, [](const auto& w) { return w; }));
  m.terminal_residual = VectorFunction(1, 1, [](const auto& x) { return x; });
  m.affine_residuals = true;
  m.path_rows.assign(N + 1, Eigen::MatrixXd::Zero(0, 2));
  m.path_rows[N] = Eigen::MatrixXd::Zero(0, 1);
  m.path_bounds.assign(N + 1, Eigen::VectorXd::Zero(0));
  m.x0_hat = Eigen::VectorXd::Constant(1, 1.0);
  m.discretization.type = IntegratorType::rk4;
  m.discretization.substeps = substeps;
  return m;
}

/// Max-abs difference, zero for empty operands.
inline double max_abs_diff(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
  return a.size() == 0 ? 0.0 : (a - b).cwiseAbs().maxCoeff();
}

inline Eigen::MatrixXd random_matrix(std::mt19937& rng, int r, int c, double scale = 1.0) {
  std::normal_distribution<double> nd(0.0, scale);
  Eigen::MatrixXd M(r, c);
  for (int i = 0; i < r; ++i)
    for (int j = 0; j < c; ++j) M(i, j) = nd(rng);
  return M;
}

inline Eigen::VectorXd random_vector(std::mt19937& rng, int n, double scale = 1.0) {
  return random_matrix(rng, n, 1, scale);
}

/// Dense form of a staged QP: min 1/2 z^T H z + h^T z, Ae z = be, Ai z <= bi.
struct DenseQp {
  Eigen::MatrixXd H;
  Eigen::VectorXd h;
  Eigen::MatrixXd Ae;
  Eigen::VectorXd be;
  Eigen::MatrixXd Ai;
  Eigen::VectorXd bi;
  std::vector<int> offsets;
};

inline DenseQp densify(const std::vector<StageQpData>& st) {
  DenseQp d;
  d.offsets.assign(st.size() + 1, 0);
  for (std::size_t i = 0; i < st.size(); ++i) d.offsets[i + 1] = d.offsets[i] + st[i].nw();
  const int n = d.offsets.back();
  int me = 0;
  int mi = 0;
  for (const auto& s : st) {
    me += static_cast<int>(s.A.rows() + s.Eq.rows());
    mi += static_cast<int>(s.P.rows());
  }
  d.H = Eigen::MatrixXd::Zero(n, n);
  d.h = Eigen::VectorXd::Zero(n);
  d.Ae = Eigen::MatrixXd::Zero(me, n);
  d.be = Eigen::VectorXd::Zero(me);
  d.Ai = Eigen::MatrixXd::Zero(mi, n);
  d.bi = Eigen::VectorXd::Zero(mi);
  int re = 0;
  int ri = 0;
  for (std::size_t i = 0; i < st.size(); ++i) {
    const auto& s = st[i];
    const int o = d.offsets[i];
    const int nw = s.nw();
    d.H.block(o, o, nw, nw) = s.H;
    d.h.segment(o, nw) = s.h;
    for (int r = 0; r < s.A.rows(); ++r, ++re) {
      d.Ae.block(re, o, 1, nw) = s.A.row(r);
      d.Ae(re, d.offsets[i + 1] + r) = -1.0;
      d.be[re] = -s.a[r];
    }
    for (int r = 0; r < s.Eq.rows(); ++r, ++re) {
      d.Ae.block(re, o, 1, nw) = s.Eq.row(r);
      d.be[re] = s.eq[r];
    }
    for (int r = 0; r < s.P.rows(); ++r, ++ri) {
      d.Ai.block(ri, o, 1, nw) = s.P.row(r);
      d.bi[ri] = s.p[r];
    }
  }
  return d;
}

/// Enumerates every active subset of the inequality rows and returns the best KKT point.
struct BruteForceResult {
  bool found = false;
  double objective = 0.0;
  Eigen::VectorXd z;
};

inline BruteForceResult brute_force_qp(const DenseQp& d) {
  BruteForceResult best;
  const int n = static_cast<int>(d.H.rows());
  const int me = static_cast<int>(d.Ae.rows());
  const int mi = static_cast<int>(d.Ai.rows());
  for (int mask = 0; mask < (1 << mi); ++mask) {
    std::vector<int> act;
    for (int r = 0; r < mi; ++r)
      if (mask & (1 << r)) act.push_back(r);
    const int ma = static_cast<int>(act.size());
    Eigen::MatrixXd K = Eigen::MatrixXd::Zero(n + me + ma, n + me + ma);
    Eigen::VectorXd rhs = Eigen::VectorXd::Zero(n + me + ma);
    K.topLeftCorner(n, n) = d.H;
    K.block(0, n, n, me) = d.Ae.transpose();
    K.block(n, 0, me, n) = d.Ae;
    rhs.head(n) = -d.h;
    rhs.segment(n, me) = d.be;
    for (int k = 0; k < ma; ++k) {
      K.block(0, n + me + k, n, 1) = d.Ai.row(act[k]).transpose();
      K.block(n + me + k, 0, 1, n) = d.Ai.row(act[k]);
      rhs[n + me + k] = d.bi[act[k]];
    }
    const Eigen::FullPivLU<Eigen::MatrixXd> lu(K);
    if (!lu.isInvertible()) continue;
    const Eigen::VectorXd sol = lu.solve(rhs);
    const Eigen::VectorXd z = sol.head(n);
    if (mi > 0 && (d.Ai * z - d.bi).maxCoeff() > 1e-9) continue;
    bool dual_ok = true;
    for (int k = 0; k < ma; ++k) dual_ok = dual_ok && sol[n + me + k] >= -1e-9;
    if (!dual_ok) continue;
    const double obj = 0.5 * z.dot(d.H * z) + d.h.dot(z);
    if (!best.found || obj < best.objective) {
      best.found = true;
      best.objective = obj;
      best.z = z;
    }
  }
  return best;
}

/// Random feasible staged QP with positive definite Hessian blocks. Stage 0 carries
/// an initial-state equality row when `with_x0` is set.
inline std::vector<StageQpData> random_staged_qp(std::mt19937& rng, int stages, int nx, int nu,
                                                 int total_rows, bool with_x0 = true) {
  std::vector<StageQpData> st(stages);
  std::vector<Eigen::VectorXd> wf(stages);
  std::uniform_int_distribution<int> pick(0, stages - 1);
  std::vector<int> rows(stages, 0);
  for (int r = 0; r < total_rows; ++r) ++rows[pick(rng)];
  for (int i = 0; i < stages; ++i) {
    const int nw = i + 1 < stages ? nx + nu : nx;
    const Eigen::MatrixXd M = random_matrix(rng, nw, nw);
    st[i].H = M * M.transpose() + 0.1 * Eigen::MatrixXd::Identity(nw, nw);
    st[i].h = random_vector(rng, nw);
    wf[i] = random_vector(rng, nw);
  }
  std::uniform_real_distribution<double> slack(0.0, 1.0);
  for (int i = 0; i < stages; ++i) {
    const int nw = static_cast<int>(wf[i].size());
    if (i + 1 < stages) {
      st[i].A = random_matrix(rng, nx, nw);
      st[i].a = -(st[i].A * wf[i] - wf[i + 1].head(nx));
    } else {
      st[i].A = Eigen::MatrixXd::Zero(0, nw);
      st[i].a = Eigen::VectorXd::Zero(0);
    }
    st[i].P = random_matrix(rng, rows[i], nw);
    st[i].p = st[i].P * wf[i];
    for (int r = 0; r < rows[i]; ++r) st[i].p[r] += slack(rng) - 0.5 * (r % 2);
    st[i].p = st[i].p.cwiseMax(st[i].P * wf[i]);
    if (i == 0 && with_x0) {
      st[i].Eq = Eigen::MatrixXd::Zero(nx, nw);
      st[i].Eq.leftCols(nx).setIdentity();
      st[i].eq = wf[i].head(nx);
    } else {
      st[i].Eq = Eigen::MatrixXd::Zero(0, nw);
      st[i].eq = Eigen::VectorXd::Zero(0);
    }
  }
  return st;
}

}  // namespace blocktr1::testutil
