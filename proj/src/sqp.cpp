#include "blocktr1/sqp.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <limits>
#include <sstream>

#include "blocktr1/errors.hpp"

namespace blocktr1 {

std::string to_string(JacobianStrategy s) {
  switch (s) {
    case JacobianStrategy::exact:
      return "exact";
    case JacobianStrategy::block_tr1_forward:
      return "block_tr1_forward";
    case JacobianStrategy::block_tr1_adjoint:
      return "block_tr1_adjoint";
    case JacobianStrategy::block_tr1_dynamic:
      return "block_tr1_dynamic";
    case JacobianStrategy::dense_tr1:
      return "dense_tr1";
    case JacobianStrategy::broyden_good:
      return "broyden_good";
    case JacobianStrategy::broyden_bad:
      return "broyden_bad";
  }
  return "unknown";
}

JacobianStrategy strategy_from_string(const std::string& name) {
  for (JacobianStrategy s :
       {JacobianStrategy::exact, JacobianStrategy::block_tr1_forward,
        JacobianStrategy::block_tr1_adjoint, JacobianStrategy::block_tr1_dynamic,
        JacobianStrategy::dense_tr1, JacobianStrategy::broyden_good, JacobianStrategy::broyden_bad}) {
    if (to_string(s) == name) return s;
  }
  throw ConfigError("unknown Jacobian strategy '" + name + "'");
}

std::string to_string(HessianType h) {
  return h == HessianType::gauss_newton ? "gauss_newton" : "block_sr1";
}

HessianType hessian_from_string(const std::string& name) {
  if (name == "gauss_newton" || name == "gn") return HessianType::gauss_newton;
  if (name == "block_sr1" || name == "sr1") return HessianType::block_sr1;
  throw ConfigError("unknown Hessian scheme '" + name + "'");
}

UpdateVectors make_update_vectors(const Eigen::MatrixXd& A, Eigen::VectorXd s,
                                  Eigen::VectorXd sigma, Eigen::VectorXd y, Eigen::VectorXd gamma) {
  require_dim(s.size(), A.cols(), "update vectors s");
  require_dim(sigma.size(), A.rows(), "update vectors sigma");
  require_dim(y.size(), A.rows(), "update vectors y");
  require_dim(gamma.size(), A.cols(), "update vectors gamma");
  UpdateVectors uv;
  uv.rho = y - A * s;
  uv.tau = gamma - A.transpose() * sigma;
  uv.s = std::move(s);
  uv.sigma = std::move(sigma);
  uv.y = std::move(y);
  uv.gamma = std::move(gamma);
  return uv;
}

Tr1Result tr1_scaling(const UpdateVectors& uv, Tr1Variant variant, double c1) {
  if (!(c1 > 0.0 && c1 < 1.0)) throw ConfigError("block_tr1_update: c1 must lie in (0, 1)");
  Tr1Result res;
  res.used = variant;
  const double ns = uv.s.norm();
  const double nsig = uv.sigma.norm();
  const double nrho = uv.rho.norm();
  const double ntau = uv.tau.norm();
  if (ns == 0.0 || nsig == 0.0) {
    res.skipped = true;
    return res;
  }
  if (nrho == 0.0 || ntau == 0.0) {
    res.skipped = nrho != ntau;
    return res;
  }
  const double dF = uv.tau.dot(uv.s);
  const double dA = uv.sigma.dot(uv.rho);
  if (variant == Tr1Variant::dynamic) {
    const double qF = std::abs(dF) / (nsig * nrho);
    const double qA = std::abs(dA) / (ns * ntau);
    res.used = qF >= qA ? Tr1Variant::forward : Tr1Variant::adjoint;
  }
  if (res.used == Tr1Variant::forward) {
    if (!(std::abs(dF) >= c1 * nsig * nrho)) {
      res.skipped = true;
      return res;
    }
    res.alpha = 1.0 / dF;
  } else {
    if (!(std::abs(dA) >= c1 * ns * ntau)) {
      res.skipped = true;
      return res;
    }
    res.alpha = 1.0 / dA;
  }
  return res;
}

Tr1Result block_tr1_update(Eigen::MatrixXd& A, const UpdateVectors& uv, Tr1Variant variant,
                           double c1) {
  const Tr1Result res = tr1_scaling(uv, variant, c1);
  if (!res.skipped && res.alpha != 0.0) A.noalias() += res.alpha * uv.rho * uv.tau.transpose();
  return res;
}

bool broyden_update(Eigen::MatrixXd& A, const Eigen::VectorXd& s, const Eigen::VectorXd& y,
                    bool good, double c1) {
  require_dim(s.size(), A.cols(), "broyden_update s");
  require_dim(y.size(), A.rows(), "broyden_update y");
  const Eigen::VectorXd As = A * s;
  const Eigen::VectorXd r = y - As;
  if (r.norm() == 0.0) return true;
  if (good) {
    const double ss = s.squaredNorm();
    if (ss == 0.0) return false;
    A.noalias() += r * (s.transpose() / ss);
    return true;
  }
  const Eigen::VectorXd Aty = A.transpose() * y;
  const double den = y.dot(As);
  if (!(std::abs(den) >= c1 * Aty.norm() * s.norm()) || den == 0.0) return false;
  A.noalias() += r * (Aty.transpose() / den);
  return true;
}

bool sr1_update(Eigen::MatrixXd& H, const Eigen::VectorXd& s, const Eigen::VectorXd& z, double r) {
  require_dim(s.size(), H.cols(), "sr1_update s");
  require_dim(z.size(), H.rows(), "sr1_update z");
  const Eigen::VectorXd v = z - H * s;
  const double den = v.dot(s);
  const double nv = v.norm();
  if (nv == 0.0) return true;
  if (!(std::abs(den) >= r * nv * s.norm()) || den == 0.0) return false;
  H.noalias() += v * (v.transpose() / den);
  H = 0.5 * (H + H.transpose()).eval();
  return true;
}

// ---------------------------------------------------------------------------
// SqpSolver
// ---------------------------------------------------------------------------

namespace {

bool is_block_tr1(JacobianStrategy s) {
  return s == JacobianStrategy::block_tr1_forward || s == JacobianStrategy::block_tr1_adjoint ||
         s == JacobianStrategy::block_tr1_dynamic;
}

Tr1Variant variant_of(JacobianStrategy s) {
  switch (s) {
    case JacobianStrategy::block_tr1_forward:
      return Tr1Variant::forward;
    case JacobianStrategy::block_tr1_adjoint:
      return Tr1Variant::adjoint;
    default:
      return Tr1Variant::dynamic;
  }
}

std::vector<int> stage_offsets(const OcpModel& model) {
  std::vector<int> off(model.N + 2, 0);
  for (int i = 0; i <= model.N; ++i) off[i + 1] = off[i] + model.nw(i);
  return off;
}

}  // namespace

SqpSolver::SqpSolver(const OcpModel& model, SqpOptions options)
    : model_(model), opts_(std::move(options)) {
  model_.validate();
  if (!(opts_.tol > 0.0)) throw ConfigError("SqpOptions: tol must be positive");
  if (opts_.max_iter < 0) throw ConfigError("SqpOptions: max_iter must be >= 0");
  if (!(opts_.c1 > 0.0 && opts_.c1 < 1.0)) throw ConfigError("SqpOptions: c1 must lie in (0, 1)");
  if (!(opts_.hessian_floor >= 0.0)) throw ConfigError("SqpOptions: hessian_floor must be >= 0");
}

Eigen::MatrixXd SqpSolver::gn_hessian(int stage, const Eigen::VectorXd& w) {
  if (!model_.affine_residuals) return gauss_newton_hessian(model_, stage, w);
  if (gn_cache_.empty()) gn_cache_.resize(model_.N + 1);
  if (gn_cache_[stage].size() == 0) gn_cache_[stage] = gauss_newton_hessian(model_, stage, w);
  return gn_cache_[stage];
}

void SqpSolver::initialize(const Iterate& it) {
  check_iterate(model_, it);
  it_ = it;
  pending_ = false;
  relinearize_ = false;
  F_valid_ = false;
  active_set_.clear();
  const int N = model_.N;
  const int nx = model_.nx;
  const int nu = model_.nu;
  A_.assign(N, Eigen::MatrixXd::Zero(nx, nx + nu));
  if (!opts_.zero_initial_jacobian) {
    for (int i = 0; i < N; ++i) A_[i] = shooting_jacobian(model_, it_.w(i));
  }
  if (opts_.strategy == JacobianStrategy::dense_tr1) {
    const std::vector<int> off = stage_offsets(model_);
    J_dense_ = Eigen::MatrixXd::Zero(N * nx, off.back());
    for (int i = 0; i < N; ++i) {
      J_dense_.block(i * nx, off[i], nx, nx + nu) = A_[i];
      J_dense_.block(i * nx, off[i + 1], nx, nx) = -Eigen::MatrixXd::Identity(nx, nx);
    }
  } else {
    J_dense_.resize(0, 0);
  }
  H_.clear();
  if (opts_.hessian == HessianType::block_sr1) {
    H_.resize(N + 1);
    for (int i = 0; i <= N; ++i) H_[i] = gn_hessian(i, it_.w(i));
  }
}

std::vector<Eigen::MatrixXd> SqpSolver::stage_jacobians() const {
  if (opts_.strategy != JacobianStrategy::dense_tr1) return A_;
  const std::vector<int> off = stage_offsets(model_);
  std::vector<Eigen::MatrixXd> out(model_.N);
  for (int i = 0; i < model_.N; ++i) {
    out[i] = J_dense_.block(i * model_.nx, off[i], model_.nx, model_.nx + model_.nu);
  }
  return out;
}

void SqpSolver::prepare() {
  const int N = model_.N;
  const int nx = model_.nx;
  const bool exact = opts_.strategy == JacobianStrategy::exact || relinearize_;
  const bool dense = opts_.strategy == JacobianStrategy::dense_tr1;
  if (!F_valid_) {
    F_.resize(N);
    for (int i = 0; i < N; ++i) F_[i] = shooting_map(model_, it_.w(i));
    F_valid_ = true;
  }
  grad_.resize(N + 1);
  stages_.resize(N + 1);
  const std::vector<int> off = stage_offsets(model_);
  for (int i = 0; i <= N; ++i) {
    const Eigen::VectorXd wi = it_.w(i);
    StageQpData& st = stages_[i];
    grad_[i] = objective_gradient(model_, i, wi);
    st.h = grad_[i];
    if (i < N) {
      if (exact) {
        A_[i] = shooting_jacobian(model_, wi);
        if (dense) {
          J_dense_.block(i * nx, off[i], nx, nx + model_.nu) = A_[i];
          J_dense_.block(i * nx, off[i + 1], nx, nx) = -Eigen::MatrixXd::Identity(nx, nx);
        }
      } else if (!dense && it_.lambda[i].squaredNorm() > 0.0) {
        st.h += shooting_adjoint(model_, wi, it_.lambda[i]) - A_[i].transpose() * it_.lambda[i];
      }
      st.A = A_[i];
      st.a = F_[i] - it_.x[i + 1];
    } else {
      st.A = Eigen::MatrixXd::Zero(0, nx);
      st.a = Eigen::VectorXd::Zero(0);
    }
    st.H = opts_.hessian == HessianType::block_sr1 ? H_[i] : gn_hessian(i, wi);
    st.P = model_.path_rows[i];
    st.p = model_.path_bounds[i] - st.P * wi;
    st.Eq = Eigen::MatrixXd::Zero(0, model_.nw(i));
    st.eq = Eigen::VectorXd::Zero(0);
  }
  if (dense) build_dense_qp();
  hessian_shift_ = 0.0;
  if (opts_.hessian == HessianType::block_sr1) {
    const double lmin = reduced_hessian_min_eigenvalue(stages_, model_.nx);
    hessian_shift_ = std::max(0.0, opts_.hessian_floor - lmin);
    if (hessian_shift_ > 0.0) {
      for (auto& st : stages_) st.H.diagonal().array() += hessian_shift_;
    }
  }
  relinearize_ = false;
}

void SqpSolver::build_dense_qp() {
  const int N = model_.N;
  const int nx = model_.nx;
  const std::vector<int> off = stage_offsets(model_);
  const int nW = off.back();
  StageQpData d;
  d.H = Eigen::MatrixXd::Zero(nW, nW);
  d.h = Eigen::VectorXd::Zero(nW);
  int rows = 0;
  for (int i = 0; i <= N; ++i) rows += stages_[i].num_rows();
  d.P = Eigen::MatrixXd::Zero(rows, nW);
  d.p = Eigen::VectorXd::Zero(rows);
  Eigen::VectorXd lam(N * nx);
  Eigen::VectorXd exact_t_lam = Eigen::VectorXd::Zero(nW);
  int r = 0;
  for (int i = 0; i <= N; ++i) {
    const int nw = model_.nw(i);
    d.H.block(off[i], off[i], nw, nw) = stages_[i].H;
    d.h.segment(off[i], nw) = stages_[i].h;
    const int nr = stages_[i].num_rows();
    if (nr > 0) {
      d.P.block(r, off[i], nr, nw) = stages_[i].P;
      d.p.segment(r, nr) = stages_[i].p;
    }
    r += nr;
    if (i < N) {
      lam.segment(i * nx, nx) = it_.lambda[i];
      if (it_.lambda[i].squaredNorm() > 0.0) {
        exact_t_lam.segment(off[i], nw) += shooting_adjoint(model_, it_.w(i), it_.lambda[i]);
      }
      exact_t_lam.segment(off[i + 1], nx) -= it_.lambda[i];
    }
  }
  d.h += exact_t_lam - J_dense_.transpose() * lam;
  d.Eq = J_dense_;
  d.eq.resize(N * nx);
  for (int i = 0; i < N; ++i) d.eq.segment(i * nx, nx) = -stages_[i].a;
  d.A = Eigen::MatrixXd::Zero(0, nW);
  d.a = Eigen::VectorXd::Zero(0);
  stages_.assign(1, std::move(d));
}

QpSolution SqpSolver::feedback(const Eigen::VectorXd& x0_hat) {
  require_dim(x0_hat.size(), model_.nx, "feedback x0_hat");
  const int N = model_.N;
  const int nx = model_.nx;
  if (stages_.empty()) throw ConfigError("SqpSolver::feedback called before prepare");
  QpSolution sol = solve_qp(stages_, Eigen::VectorXd(x0_hat - it_.x[0]), active_set_, opts_.qp);
  if (sol.status != QpStatus::optimal) return sol;

  prev_ = it_;
  F_prev_ = F_;
  step_.resize(N + 1);
  double sq = 0.0;
  if (opts_.strategy == JacobianStrategy::dense_tr1) {
    const std::vector<int> off = stage_offsets(model_);
    const Eigen::VectorXd& dw = sol.dw[0];
    const Eigen::VectorXd& nu = sol.nu[0];
    it_.x0_multiplier = nu.head(nx);
    int r = 0;
    for (int i = 0; i <= N; ++i) {
      step_[i] = dw.segment(off[i], model_.nw(i));
      if (i < N) it_.lambda[i] = nu.segment(nx + i * nx, nx);
      const int nr = model_.num_path_rows(i);
      it_.mu[i] = sol.mu[0].segment(r, nr);
      r += nr;
    }
  } else {
    for (int i = 0; i <= N; ++i) {
      step_[i] = sol.dw[i];
      if (i < N) it_.lambda[i] = sol.lambda[i];
      it_.mu[i] = sol.mu[i];
    }
    it_.x0_multiplier = sol.nu[0].head(nx);
  }
  for (int i = 0; i <= N; ++i) {
    it_.set_w(i, it_.w(i) + step_[i]);
    sq += step_[i].squaredNorm();
  }
  last_step_norm_ = std::sqrt(sq);
  active_set_ = sol.active_set;
  pending_ = true;
  F_valid_ = false;
  return sol;
}

int SqpSolver::update() {
  if (!pending_) return 0;
  pending_ = false;
  const int N = model_.N;
  const int nx = model_.nx;
  const JacobianStrategy strat = opts_.strategy;
  int skipped = 0;

  F_.resize(N);
  for (int i = 0; i < N; ++i) F_[i] = shooting_map(model_, it_.w(i));
  F_valid_ = true;

  if (is_block_tr1(strat) || strat == JacobianStrategy::broyden_good ||
      strat == JacobianStrategy::broyden_bad) {
    for (int i = 0; i < N; ++i) {
      const Eigen::VectorXd y = F_[i] - F_prev_[i];
      if (is_block_tr1(strat)) {
        const Eigen::VectorXd sigma = it_.lambda[i] - prev_.lambda[i];
        if (sigma.squaredNorm() == 0.0 || step_[i].squaredNorm() == 0.0) {
          ++skipped;
          continue;
        }
        const Eigen::VectorXd gamma = shooting_adjoint(model_, it_.w(i), sigma);
        const UpdateVectors uv = make_update_vectors(A_[i], step_[i], sigma, y, gamma);
        if (block_tr1_update(A_[i], uv, variant_of(strat), opts_.c1).skipped) ++skipped;
      } else {
        if (!broyden_update(A_[i], step_[i], y, strat == JacobianStrategy::broyden_good, opts_.c1)) {
          ++skipped;
        }
      }
    }
  } else if (strat == JacobianStrategy::dense_tr1) {
    const std::vector<int> off = stage_offsets(model_);
    const int nW = off.back();
    Eigen::VectorXd s(nW);
    Eigen::VectorXd sigma(N * nx);
    Eigen::VectorXd y(N * nx);
    Eigen::VectorXd gamma = Eigen::VectorXd::Zero(nW);
    for (int i = 0; i <= N; ++i) s.segment(off[i], model_.nw(i)) = step_[i];
    for (int i = 0; i < N; ++i) {
      const Eigen::VectorXd sig = it_.lambda[i] - prev_.lambda[i];
      sigma.segment(i * nx, nx) = sig;
      y.segment(i * nx, nx) = (F_[i] - it_.x[i + 1]) - (F_prev_[i] - prev_.x[i + 1]);
      if (sig.squaredNorm() > 0.0) {
        gamma.segment(off[i], model_.nw(i)) += shooting_adjoint(model_, it_.w(i), sig);
      }
      gamma.segment(off[i + 1], nx) -= sig;
    }
    if (sigma.squaredNorm() == 0.0 || s.squaredNorm() == 0.0) {
      skipped = 1;
    } else {
      const UpdateVectors uv = make_update_vectors(J_dense_, s, sigma, y, gamma);
      if (block_tr1_update(J_dense_, uv, Tr1Variant::adjoint, opts_.c1).skipped) skipped = 1;
    }
  }

  if (opts_.hessian == HessianType::block_sr1) {
    for (int i = 0; i <= N; ++i) {
      const Eigen::VectorXd w_new = it_.w(i);
      const Eigen::VectorXd w_old = prev_.w(i);
      Eigen::VectorXd z = objective_gradient(model_, i, w_new) - objective_gradient(model_, i, w_old);
      if (i < N && it_.lambda[i].squaredNorm() > 0.0) {
        z += shooting_adjoint(model_, w_new, it_.lambda[i]) -
             shooting_adjoint(model_, w_old, it_.lambda[i]);
      }
      if (step_[i].squaredNorm() > 0.0) sr1_update(H_[i], step_[i], z, opts_.sr1_threshold);
    }
  }
  last_skipped_ = skipped;
  return skipped;
}

IterationRecord SqpSolver::iterate() {
  IterationRecord rec;
  rec.strategy = to_string(opts_.strategy);
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
  rec.kkt = kkt_residual(model_, it_, active_set_);
  rec.proj_jac_err = opts_.jacobian_monitor ? opts_.jacobian_monitor(stage_jacobians())
                                            : std::numeric_limits<double>::quiet_NaN();
  return rec;
}

void SqpSolver::shift() {
  if (opts_.strategy == JacobianStrategy::dense_tr1) {
    throw ConfigError("dense_tr1 does not support shifting");
  }
  const int N = model_.N;
  it_ = shift_warm_start(it_);
  for (int i = 0; i + 1 < N; ++i) A_[i] = A_[i + 1];
  if (opts_.hessian == HessianType::block_sr1) {
    for (int i = 0; i + 1 < N; ++i) H_[i] = H_[i + 1];
  }
  active_set_ = shift_active_set(model_, active_set_);
  F_valid_ = false;
  pending_ = false;
}

SqpResult run_sqp(const OcpModel& model, const SqpOptions& options, const Iterate& initial) {
  SqpSolver solver(model, options);
  solver.initialize(initial);
  SqpResult res;
  res.status = "max_iterations";
  if (options.record_history) {
    res.history.push_back(solver.current());
    res.jacobian_history.push_back(solver.stage_jacobians());
  }
  for (int k = 0; k < options.max_iter; ++k) {
    IterationRecord rec = solver.iterate();
    rec.iter = k + 1;
    res.records.push_back(rec);
    if (rec.qp_status != QpStatus::optimal) {
      res.status = "qp_failure";
      break;
    }
    if (options.record_history) {
      res.history.push_back(solver.current());
      res.jacobian_history.push_back(solver.stage_jacobians());
    }
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

std::string records_to_csv(const std::vector<IterationRecord>& records, bool header) {
  std::ostringstream os;
  os << std::setprecision(17);
  if (header) os << "iter,kkt_inf_norm,step_norm,proj_jac_err,n_skipped,active_set_size,strategy\n";
  for (const IterationRecord& r : records) {
    os << r.iter << ',' << r.kkt << ',' << r.step_norm << ',' << r.proj_jac_err << ','
       << r.n_skipped << ',' << r.active_set_size << ',' << r.strategy << '\n';
  }
  return os.str();
}

}  // namespace blocktr1
