#include "blocktr1/lifted.hpp"

#include <Eigen/Dense>

#include <cmath>
#include <iomanip>
#include <limits>
#include <sstream>

#include "blocktr1/errors.hpp"

namespace blocktr1 {

namespace {

bool is_tr1(JacobianStrategy s) {
  return s == JacobianStrategy::block_tr1_forward || s == JacobianStrategy::block_tr1_adjoint ||
         s == JacobianStrategy::block_tr1_dynamic;
}

Tr1Variant variant_of(JacobianStrategy s) {
  if (s == JacobianStrategy::block_tr1_forward) return Tr1Variant::forward;
  if (s == JacobianStrategy::block_tr1_adjoint) return Tr1Variant::adjoint;
  return Tr1Variant::dynamic;
}

void check_strategy(const LiftedOptions& o) {
  if (o.strategy != JacobianStrategy::exact && !is_tr1(o.strategy)) {
    throw ConfigError("lifted collocation supports exact and block_tr1_* strategies, got " +
                      to_string(o.strategy));
  }
  if (o.collocation_nodes < 1 || o.collocation_nodes > 4) {
    throw ConfigError("lifted collocation: collocation_nodes must lie in 1..4");
  }
  if (!(o.c1 > 0.0 && o.c1 < 1.0)) throw ConfigError("lifted collocation: c1 must lie in (0, 1)");
  if (!(o.tol > 0.0)) throw ConfigError("lifted collocation: tol must be positive");
}

Eigen::VectorXd matvec(const Eigen::MatrixXd& M, const Eigen::VectorXd& v, LiftedCounters* c) {
  if (c) {
    ++c->matvec;
    c->multiplications += M.rows() * M.cols();
  }
  return M * v;
}

Eigen::VectorXd matvec_t(const Eigen::MatrixXd& M, const Eigen::VectorXd& v, LiftedCounters* c) {
  if (c) {
    ++c->matvec;
    c->multiplications += M.rows() * M.cols();
  }
  return M.transpose() * v;
}

void outer(Eigen::MatrixXd& M, double scale, const Eigen::VectorXd& a, const Eigen::VectorXd& b,
           LiftedCounters* c) {
  if (c) {
    ++c->outer_product;
    c->multiplications += M.rows() * M.cols();
  }
  M.noalias() += (scale * a) * b.transpose();
}

Eigen::VectorXd probe_vector(Eigen::Index n) {
  Eigen::VectorXd p(n);
  for (Eigen::Index k = 0; k < n; ++k) p[k] = 1.0 + 0.5 * static_cast<double>(k % 3);
  return p / p.norm();
}

}  // namespace

LiftedStageState lifted_initialize_stage(const OcpModel& model, const CollocationStage& stage,
                                         const Eigen::VectorXd& w, const Eigen::VectorXd& K) {
  const CollocationJacobians J =
      collocation_jacobians(model, w.head(model.nx), w.tail(model.nu), K, stage);
  LiftedStageState st;
  st.D = J.D;
  st.C = J.C;
  const Eigen::FullPivLU<Eigen::MatrixXd> lu(st.C);
  if (!lu.isInvertible()) throw NumericalError("lifted_initialize: collocation matrix C is singular");
  st.C_inv = lu.inverse();
  st.E = st.C_inv * st.D;
  return st;
}

std::vector<LiftedStageState> lifted_initialize(const OcpModel& model, const CollocationStage& stage,
                                                const Iterate& it) {
  if (static_cast<int>(it.k.size()) != model.N) {
    throw DimensionError("lifted_initialize: iterate has no collocation variables");
  }
  std::vector<LiftedStageState> out;
  out.reserve(model.N);
  for (int i = 0; i < model.N; ++i) out.push_back(lifted_initialize_stage(model, stage, it.w(i), it.k[i]));
  return out;
}

UpdateVectors collocation_update_vectors(const LiftedStageState& st, const Eigen::VectorXd& s,
                                         const Eigen::VectorXd& sigma, const Eigen::VectorXd& y,
                                         const Eigen::VectorXd& gamma, LiftedCounters* counters) {
  const Eigen::Index nw = st.D.cols();
  const Eigen::Index nk = st.C.cols();
  require_dim(s.size(), nw + nk, "collocation update s");
  require_dim(gamma.size(), nw + nk, "collocation update gamma");
  require_dim(sigma.size(), st.C.rows(), "collocation update sigma");
  require_dim(y.size(), st.C.rows(), "collocation update y");
  UpdateVectors uv;
  uv.rho = y - matvec(st.D, s.head(nw), counters) - matvec(st.C, s.tail(nk), counters);
  uv.tau.resize(nw + nk);
  uv.tau.head(nw) = gamma.head(nw) - matvec_t(st.D, sigma, counters);
  uv.tau.tail(nk) = gamma.tail(nk) - matvec_t(st.C, sigma, counters);
  uv.s = s;
  uv.sigma = sigma;
  uv.y = y;
  uv.gamma = gamma;
  return uv;
}

Tr1Result tr1_update_DC(LiftedStageState& st, const UpdateVectors& uv, Tr1Variant variant,
                        double c1, LiftedCounters* counters, double sm_tol) {
  Tr1Result res = tr1_scaling(uv, variant, c1);
  if (res.skipped || res.alpha == 0.0) return res;
  const Eigen::Index nw = st.D.cols();
  const Eigen::Index nk = st.C.cols();
  const double alpha = res.alpha;
  const Eigen::VectorXd tau_D = uv.tau.head(nw);
  const Eigen::VectorXd tau_C = uv.tau.tail(nk);

  const Eigen::VectorXd rho_t = matvec(st.C_inv, uv.rho, counters);
  const double tc_rho = tau_C.dot(rho_t);
  const double den = 1.0 + alpha * tc_rho;
  if (!(std::abs(den) >= sm_tol)) {
    res.skipped = true;
    return res;
  }
  const double beta = 1.0 / den;
  const Eigen::VectorXd v = matvec_t(st.C_inv, tau_C, counters);
  const Eigen::VectorXd Et_tc = matvec_t(st.E, tau_C, counters);
  const Eigen::VectorXd tau_t = tau_D - beta * Et_tc - (alpha * beta * tc_rho) * tau_D;

  outer(st.D, alpha, uv.rho, tau_D, counters);
  outer(st.C, alpha, uv.rho, tau_C, counters);
  outer(st.C_inv, -alpha * beta, rho_t, v, counters);
  outer(st.E, alpha, rho_t, tau_t, counters);
  return res;
}

double lifted_drift(const LiftedStageState& st) {
  const Eigen::Index n = st.C.rows();
  const double d1 = (st.C_inv * st.C - Eigen::MatrixXd::Identity(n, n)).cwiseAbs().maxCoeff();
  const double d2 = (st.E - st.C_inv * st.D).cwiseAbs().maxCoeff();
  return std::max(d1, d2);
}

Iterate make_lifted_iterate(const OcpModel& model, const CollocationStage& stage, const Iterate& base) {
  Iterate it = base;
  const int nk = stage.tableau.s * model.nx;
  it.k.assign(model.N, Eigen::VectorXd::Zero(nk));
  it.omega.assign(model.N, Eigen::VectorXd::Zero(nk));
  for (int i = 0; i < model.N; ++i) {
    it.k[i] = solve_collocation(model, it.x[i], it.u[i], stage, Eigen::VectorXd::Zero(nk)).K;
  }
  return it;
}

double lifted_kkt_residual(const OcpModel& model, const CollocationStage& stage, const Iterate& it,
                           const std::vector<int>& active_set) {
  const int N = model.N;
  const int nx = model.nx;
  double res = 0.0;
  auto upd = [&res](double v) {
    res = std::max(res, std::isfinite(v) ? std::abs(v) : std::numeric_limits<double>::infinity());
  };
  std::vector<Eigen::VectorXd> mu(N + 1);
  const std::vector<int> off = path_row_offsets(model);
  for (int i = 0; i <= N; ++i) mu[i] = Eigen::VectorXd::Zero(model.num_path_rows(i));
  for (int id : active_set) {
    const RowId r = locate_row(off, id);
    if (r.row < it.mu[r.stage].size()) mu[r.stage][r.row] = it.mu[r.stage][r.row];
  }
  upd((it.x[0] - model.x0_hat).lpNorm<Eigen::Infinity>());
  for (int i = 0; i <= N; ++i) {
    const Eigen::VectorXd w = it.w(i);
    Eigen::VectorXd g = objective_gradient(model, i, w);
    if (i < N) {
      const Eigen::VectorXd& x = it.x[i];
      const Eigen::VectorXd& u = it.u[i];
      const Eigen::VectorXd& K = it.k[i];
      upd((x + stage.apply_B(K) - it.x[i + 1]).lpNorm<Eigen::Infinity>());
      upd(collocation_residual(model, x, u, K, stage).lpNorm<Eigen::Infinity>());
      const Eigen::VectorXd gam = collocation_adjoint(model, x, u, K, stage, it.omega[i]);
      g += gam.head(model.nw(i));
      g.head(nx) += it.lambda[i];
      upd((gam.tail(K.size()) + stage.apply_Bt(it.lambda[i])).lpNorm<Eigen::Infinity>());
    }
    if (i > 0) g.head(nx) -= it.lambda[i - 1];
    if (i == 0 && it.x0_multiplier.size() == nx) g.head(nx) += it.x0_multiplier;
    if (model.num_path_rows(i) > 0) {
      g += model.path_rows[i].transpose() * mu[i];
      const Eigen::VectorXd slack = model.path_bounds[i] - model.path_rows[i] * w;
      for (Eigen::Index r = 0; r < slack.size(); ++r) {
        upd(std::max(0.0, -slack[r]));
        upd(std::max(0.0, -mu[i][r]));
        upd(mu[i][r] * slack[r]);
      }
    }
    upd(g.lpNorm<Eigen::Infinity>());
  }
  return res;
}

// ---------------------------------------------------------------------------
// LiftedSolver
// ---------------------------------------------------------------------------

LiftedSolver::LiftedSolver(const OcpModel& model, LiftedOptions options)
    : model_(model), opts_(std::move(options)) {
  model_.validate();
  check_strategy(opts_);
  stage_ = make_collocation_stage(model_, opts_.collocation_nodes);
}

const Eigen::MatrixXd& LiftedSolver::gn_hessian(int stage, const Eigen::VectorXd& w) {
  if (gn_cache_.size() != static_cast<std::size_t>(model_.N + 1)) gn_cache_.resize(model_.N + 1);
  if (!model_.affine_residuals || gn_cache_[stage].size() == 0) {
    gn_cache_[stage] = gauss_newton_hessian(model_, stage, w);
  }
  return gn_cache_[stage];
}

void LiftedSolver::initialize(const Iterate& it) {
  check_iterate(model_, it);
  const int nk = stage_.tableau.s * model_.nx;
  if (static_cast<int>(it.k.size()) != model_.N || static_cast<int>(it.omega.size()) != model_.N) {
    throw DimensionError("LiftedSolver: iterate needs K and omega on every interval");
  }
  for (int i = 0; i < model_.N; ++i) {
    require_dim(it.k[i].size(), nk, "LiftedSolver K");
    require_dim(it.omega[i].size(), nk, "LiftedSolver omega");
  }
  it_ = it;
  states_ = lifted_initialize(model_, stage_, it_);
  c_valid_ = false;
  pending_ = false;
  relinearize_ = false;
  active_set_.clear();
  probe_ = probe_vector(nk);
}

void LiftedSolver::refresh(int i) {
  LiftedStageState& st = states_[i];
  const Eigen::PartialPivLU<Eigen::MatrixXd> lu(st.C);
  st.C_inv = lu.inverse();
  st.E = st.C_inv * st.D;
  ++counters_.refactorizations;
}

void LiftedSolver::prepare() {
  const int N = model_.N;
  const int nx = model_.nx;
  const bool exact = opts_.strategy == JacobianStrategy::exact || relinearize_;
  if (!c_valid_) {
    c_.resize(N);
    for (int i = 0; i < N; ++i) c_[i] = collocation_residual(model_, it_.x[i], it_.u[i], it_.k[i], stage_);
    c_valid_ = true;
  }
  gK_.resize(N);
  stages_.resize(N + 1);
  for (int i = 0; i <= N; ++i) {
    const Eigen::VectorXd wi = it_.w(i);
    StageQpData& q = stages_[i];
    q.h = objective_gradient(model_, i, wi);
    q.H = gn_hessian(i, wi);
    q.P = model_.path_rows[i];
    q.p = model_.path_bounds[i] - q.P * wi;
    q.Eq = Eigen::MatrixXd::Zero(0, model_.nw(i));
    q.eq = Eigen::VectorXd::Zero(0);
    if (i == N) {
      q.A = Eigen::MatrixXd::Zero(0, nx);
      q.a = Eigen::VectorXd::Zero(0);
      continue;
    }
    if (exact) states_[i] = lifted_initialize_stage(model_, stage_, wi, it_.k[i]);
    const LiftedStageState& st = states_[i];
    const Eigen::VectorXd& K = it_.k[i];
    if (it_.omega[i].squaredNorm() > 0.0) {
      const Eigen::VectorXd gam =
          collocation_adjoint(model_, it_.x[i], it_.u[i], K, stage_, it_.omega[i]);
      gK_[i] = gam.tail(K.size());
      q.h += gam.head(model_.nw(i)) - st.E.transpose() * gK_[i];
    } else {
      gK_[i] = Eigen::VectorXd::Zero(K.size());
    }
    q.A = -stage_.apply_B(st.E);
    q.A.leftCols(nx) += Eigen::MatrixXd::Identity(nx, nx);
    q.a = it_.x[i] + stage_.apply_B(Eigen::VectorXd(K - st.C_inv * c_[i])) - it_.x[i + 1];
  }
  relinearize_ = false;
}

QpSolution LiftedSolver::feedback(const Eigen::VectorXd& x0_hat) {
  require_dim(x0_hat.size(), model_.nx, "feedback x0_hat");
  if (stages_.empty()) throw ConfigError("LiftedSolver::feedback called before prepare");
  const int N = model_.N;
  QpSolution sol = solve_qp(stages_, Eigen::VectorXd(x0_hat - it_.x[0]), active_set_, opts_.qp);
  if (sol.status != QpStatus::optimal) return sol;
  prev_ = it_;
  c_prev_ = c_;
  dw_.resize(N + 1);
  dK_.resize(N);
  double sq = 0.0;
  for (int i = 0; i <= N; ++i) {
    dw_[i] = sol.dw[i];
    it_.set_w(i, it_.w(i) + dw_[i]);
    it_.mu[i] = sol.mu[i];
    sq += dw_[i].squaredNorm();
    if (i == N) break;
    const LiftedStageState& st = states_[i];
    dK_[i] = -(st.C_inv * c_[i] + st.E * dw_[i]);
    it_.k[i] += dK_[i];
    it_.lambda[i] = sol.lambda[i];
    it_.omega[i] -= st.C_inv.transpose() * (gK_[i] + stage_.apply_Bt(sol.lambda[i]));
    sq += dK_[i].squaredNorm();
  }
  it_.x0_multiplier = sol.nu[0].head(model_.nx);
  last_step_norm_ = std::sqrt(sq);
  active_set_ = sol.active_set;
  pending_ = true;
  c_valid_ = false;
  return sol;
}

int LiftedSolver::update() {
  if (!pending_) return 0;
  pending_ = false;
  const int N = model_.N;
  c_.resize(N);
  for (int i = 0; i < N; ++i) c_[i] = collocation_residual(model_, it_.x[i], it_.u[i], it_.k[i], stage_);
  c_valid_ = true;
  int skipped = 0;
  if (!is_tr1(opts_.strategy)) {
    last_skipped_ = 0;
    return 0;
  }
  const int nw = model_.nx + model_.nu;
  for (int i = 0; i < N; ++i) {
    const Eigen::VectorXd sigma = it_.omega[i] - prev_.omega[i];
    Eigen::VectorXd s(nw + dK_[i].size());
    s << dw_[i], dK_[i];
    if (sigma.squaredNorm() == 0.0 || s.squaredNorm() == 0.0) {
      ++skipped;
      continue;
    }
    const Eigen::VectorXd gamma =
        collocation_adjoint(model_, it_.x[i], it_.u[i], it_.k[i], stage_, sigma);
    const UpdateVectors uv = collocation_update_vectors(states_[i], s, sigma, c_[i] - c_prev_[i],
                                                        gamma, &counters_);
    LiftedStageState& st = states_[i];
    if (tr1_update_DC(st, uv, variant_of(opts_.strategy), opts_.c1, &counters_).skipped) ++skipped;
    if (opts_.check_drift) {
      const Eigen::VectorXd q = probe_vector(nw);
      const double d1 =
          (matvec(st.C_inv, matvec(st.C, probe_, &counters_), &counters_) - probe_).cwiseAbs().maxCoeff();
      const double d2 = (matvec(st.E, q, &counters_) - matvec(st.C_inv, matvec(st.D, q, &counters_), &counters_))
                            .cwiseAbs()
                            .maxCoeff();
      if (std::max(d1, d2) > opts_.drift_tol) refresh(i);
    }
  }
  last_skipped_ = skipped;
  return skipped;
}

LiftedRecord LiftedSolver::iterate() {
  LiftedRecord rec;
  prepare();
  const QpSolution sol = feedback(model_.x0_hat);
  rec.qp_status = sol.status;
  if (sol.status != QpStatus::optimal) {
    rec.kkt = std::numeric_limits<double>::infinity();
    return rec;
  }
  rec.n_skipped = update();
  rec.step_norm = last_step_norm_;
  rec.active_set_size = static_cast<int>(active_set_.size());
  rec.kkt = lifted_kkt_residual(model_, stage_, it_, active_set_);
  rec.n_refactorizations = counters_.refactorizations;
  rec.matvec_count = counters_.matvec;
  rec.outer_product_count = counters_.outer_product;
  return rec;
}

void LiftedSolver::shift() {
  it_ = shift_warm_start(it_);
  for (int i = 0; i + 1 < model_.N; ++i) states_[i] = states_[i + 1];
  active_set_ = shift_active_set(model_, active_set_);
  c_valid_ = false;
  pending_ = false;
}

LiftedResult run_lifted(const OcpModel& model, const LiftedOptions& options, const Iterate& initial,
                        bool record_history) {
  LiftedSolver solver(model, options);
  solver.initialize(initial);
  LiftedResult res;
  res.status = "max_iterations";
  if (record_history) res.history.push_back(solver.current());
  for (int k = 0; k < options.max_iter; ++k) {
    LiftedRecord rec = solver.iterate();
    rec.iter = k + 1;
    res.records.push_back(rec);
    if (rec.qp_status != QpStatus::optimal) {
      res.status = "qp_failure";
      break;
    }
    if (record_history) res.history.push_back(solver.current());
    if (!std::isfinite(rec.kkt) || rec.kkt > options.divergence_threshold) {
      res.status = "diverged";
      break;
    }
    if (rec.kkt <= options.tol) {
      res.status = "converged";
      res.converged = true;
      break;
    }
  }
  res.solution = solver.current();
  res.active_set = solver.active_set();
  return res;
}

// ---------------------------------------------------------------------------
// DirectCollocationSolver
// ---------------------------------------------------------------------------

DirectCollocationSolver::DirectCollocationSolver(const OcpModel& model, LiftedOptions options)
    : model_(model), opts_(std::move(options)) {
  model_.validate();
  check_strategy(opts_);
  stage_ = make_collocation_stage(model_, opts_.collocation_nodes);
}

void DirectCollocationSolver::initialize(const Iterate& it) {
  check_iterate(model_, it);
  if (static_cast<int>(it.k.size()) != model_.N || static_cast<int>(it.omega.size()) != model_.N) {
    throw DimensionError("DirectCollocationSolver: iterate needs K and omega on every interval");
  }
  it_ = it;
  active_set_.clear();
  DC_.resize(model_.N);
  for (int i = 0; i < model_.N; ++i) {
    const CollocationJacobians J = collocation_jacobians(model_, it_.x[i], it_.u[i], it_.k[i], stage_);
    DC_[i].resize(J.D.rows(), J.D.cols() + J.C.cols());
    DC_[i] << J.D, J.C;
  }
}

QpSolution DirectCollocationSolver::iterate(const Eigen::VectorXd& x0_hat) {
  const int N = model_.N;
  const int nx = model_.nx;
  const int nw = nx + model_.nu;
  const int nk = stage_.tableau.s * nx;
  const bool exact = opts_.strategy == JacobianStrategy::exact;
  const Eigen::MatrixXd B = stage_.B();
  std::vector<Eigen::VectorXd> c(N);
  std::vector<StageQpData> stages(N + 1);
  for (int i = 0; i <= N; ++i) {
    StageQpData& q = stages[i];
    const Eigen::VectorXd wi = it_.w(i);
    if (i == N) {
      q.H = gauss_newton_hessian(model_, i, wi);
      q.h = objective_gradient(model_, i, wi);
      q.A = Eigen::MatrixXd::Zero(0, nx);
      q.a = Eigen::VectorXd::Zero(0);
      q.P = model_.path_rows[i];
      q.Eq = Eigen::MatrixXd::Zero(0, nx);
      q.eq = Eigen::VectorXd::Zero(0);
    } else {
      const Eigen::VectorXd& K = it_.k[i];
      if (exact) {
        const CollocationJacobians J = collocation_jacobians(model_, it_.x[i], it_.u[i], K, stage_);
        DC_[i] << J.D, J.C;
      }
      c[i] = collocation_residual(model_, it_.x[i], it_.u[i], K, stage_);
      q.H = Eigen::MatrixXd::Zero(nw + nk, nw + nk);
      q.H.topLeftCorner(nw, nw) = gauss_newton_hessian(model_, i, wi);
      q.h = Eigen::VectorXd::Zero(nw + nk);
      q.h.head(nw) = objective_gradient(model_, i, wi);
      q.h += collocation_adjoint(model_, it_.x[i], it_.u[i], K, stage_, it_.omega[i]) -
             DC_[i].transpose() * it_.omega[i];
      q.A = Eigen::MatrixXd::Zero(nx, nw + nk);
      q.A.leftCols(nx).setIdentity();
      q.A.rightCols(nk) = B;
      q.a = it_.x[i] + B * K - it_.x[i + 1];
      q.P = Eigen::MatrixXd::Zero(model_.num_path_rows(i), nw + nk);
      q.P.leftCols(nw) = model_.path_rows[i];
      q.Eq = DC_[i];
      q.eq = -c[i];
    }
    q.p = model_.path_bounds[i] - model_.path_rows[i] * wi;
  }
  QpSolution sol = solve_qp(stages, Eigen::VectorXd(x0_hat - it_.x[0]), active_set_, opts_.qp);
  if (sol.status != QpStatus::optimal) return sol;
  const Iterate prev = it_;
  for (int i = 0; i <= N; ++i) {
    it_.mu[i] = sol.mu[i];
    if (i == N) {
      it_.x[N] += sol.dw[N];
      break;
    }
    it_.x[i] += sol.dw[i].head(nx);
    it_.u[i] += sol.dw[i].segment(nx, model_.nu);
    it_.k[i] += sol.dw[i].tail(nk);
    it_.lambda[i] = sol.lambda[i];
    it_.omega[i] = i == 0 ? Eigen::VectorXd(sol.nu[0].tail(nk)) : sol.nu[i];
  }
  it_.x0_multiplier = sol.nu[0].head(nx);
  active_set_ = sol.active_set;
  if (is_tr1(opts_.strategy)) {
    for (int i = 0; i < N; ++i) {
      const Eigen::VectorXd sigma = it_.omega[i] - prev.omega[i];
      const Eigen::VectorXd& s = sol.dw[i];
      if (sigma.squaredNorm() == 0.0 || s.squaredNorm() == 0.0) continue;
      const Eigen::VectorXd y = collocation_residual(model_, it_.x[i], it_.u[i], it_.k[i], stage_) - c[i];
      const Eigen::VectorXd gamma =
          collocation_adjoint(model_, it_.x[i], it_.u[i], it_.k[i], stage_, sigma);
      const UpdateVectors uv = make_update_vectors(DC_[i], s, sigma, y, gamma);
      block_tr1_update(DC_[i], uv, variant_of(opts_.strategy), opts_.c1);
    }
  }
  return sol;
}

std::string lifted_records_to_csv(const std::vector<LiftedRecord>& records, bool header) {
  std::ostringstream os;
  os << std::setprecision(17);
  if (header) {
    os << "iter,kkt_inf_norm,step_norm,n_skipped,active_set_size,n_refactorizations,matvec_count,"
          "outer_product_count\n";
  }
  for (const LiftedRecord& r : records) {
    os << r.iter << ',' << r.kkt << ',' << r.step_norm << ',' << r.n_skipped << ','
       << r.active_set_size << ',' << r.n_refactorizations << ',' << r.matvec_count << ','
       << r.outer_product_count << '\n';
  }
  return os.str();
}

}  // namespace blocktr1
