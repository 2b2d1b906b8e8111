#include "blocktr1/ocp_model.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <set>
#include <utility>

#include "blocktr1/errors.hpp"
#include "blocktr1/integrator.hpp"

namespace blocktr1 {

int OcpModel::total_path_rows() const {
  int total = 0;
  for (const auto& P : path_rows) total += static_cast<int>(P.rows());
  return total;
}

void OcpModel::validate() const {
  if (nx < 1 || nu < 0) throw ConfigError("OcpModel: nx must be >= 1 and nu >= 0");
  if (N < 1) throw ConfigError("OcpModel: N must be >= 1");
  if (!(T > 0.0)) throw ConfigError("OcpModel: T must be positive");
  if (implicit_rhs.empty()) throw ConfigError("OcpModel: implicit_rhs is not set");
  require_dim(implicit_rhs.input_dim(), 2 * nx + nu, "OcpModel implicit_rhs input");
  require_dim(implicit_rhs.output_dim(), nx, "OcpModel implicit_rhs output");
  if (explicit_form) {
    require_dim(explicit_rhs.input_dim(), nx + nu, "OcpModel explicit_rhs input");
    require_dim(explicit_rhs.output_dim(), nx, "OcpModel explicit_rhs output");
  }
  require_dim(static_cast<long>(stage_residuals.size()), N, "OcpModel stage_residuals");
  for (const auto& r : stage_residuals) {
    require_dim(r.input_dim(), nx + nu, "OcpModel stage residual input");
  }
  require_dim(terminal_residual.input_dim(), nx, "OcpModel terminal residual input");
  require_dim(static_cast<long>(path_rows.size()), N + 1, "OcpModel path_rows");
  require_dim(static_cast<long>(path_bounds.size()), N + 1, "OcpModel path_bounds");
  for (int i = 0; i <= N; ++i) {
    if (path_rows[i].rows() > 0) require_dim(path_rows[i].cols(), nw(i), "OcpModel path_rows columns");
    require_dim(path_bounds[i].size(), path_rows[i].rows(), "OcpModel path_bounds");
  }
  require_dim(x0_hat.size(), nx, "OcpModel x0_hat");
  if (discretization.type == IntegratorType::rk4 && !explicit_form) {
    throw ConfigError("OcpModel: RK4 discretization needs an explicit model");
  }
  if (discretization.substeps < 1) throw ConfigError("OcpModel: substeps must be >= 1");
  if (discretization.stages < 1 || discretization.stages > 4) {
    throw ConfigError("OcpModel: collocation stages must be in 1..4");
  }
}

void set_explicit_dynamics(OcpModel& model, VectorFunction phi) {
  const int nx = model.nx;
  const int nu = model.nu;
  require_dim(phi.input_dim(), nx + nu, "set_explicit_dynamics phi input");
  require_dim(phi.output_dim(), nx, "set_explicit_dynamics phi output");
  model.explicit_rhs = std::move(phi);
  const VectorFunction f = model.explicit_rhs;
  model.implicit_rhs = VectorFunction(2 * nx + nu, nx, [f, nx, nu](const auto& q) {
    using T = typename std::decay_t<decltype(q)>::Scalar;
    const VecX<T> xu = q.tail(nx + nu);
    const VecX<T> phi_val = f(xu);
    VecX<T> out(nx);
    for (int i = 0; i < nx; ++i) out[i] = q[i] - phi_val[i];
    return out;
  });
  model.explicit_form = true;
}

// ---------------------------------------------------------------------------
// Iterate
// ---------------------------------------------------------------------------

Eigen::VectorXd Iterate::w(int stage) const {
  if (stage == N()) return x[stage];
  Eigen::VectorXd out(x[stage].size() + u[stage].size());
  out << x[stage], u[stage];
  return out;
}

void Iterate::set_w(int stage, const Eigen::VectorXd& w) {
  const auto nx = x[stage].size();
  if (stage == N()) {
    require_dim(w.size(), nx, "Iterate::set_w");
    x[stage] = w;
    return;
  }
  require_dim(w.size(), nx + u[stage].size(), "Iterate::set_w");
  x[stage] = w.head(nx);
  u[stage] = w.tail(u[stage].size());
}

Eigen::VectorXd Iterate::primal() const {
  Eigen::Index n = 0;
  for (int i = 0; i <= N(); ++i) n += x[i].size() + (i < N() ? u[i].size() : 0);
  Eigen::VectorXd out(n);
  Eigen::Index o = 0;
  for (int i = 0; i <= N(); ++i) {
    const Eigen::VectorXd wi = w(i);
    out.segment(o, wi.size()) = wi;
    o += wi.size();
  }
  return out;
}

Eigen::VectorXd Iterate::dual() const {
  Eigen::Index n = 0;
  for (const auto& l : lambda) n += l.size();
  Eigen::VectorXd out(n);
  Eigen::Index o = 0;
  for (const auto& l : lambda) {
    out.segment(o, l.size()) = l;
    o += l.size();
  }
  return out;
}

Iterate make_initial_iterate(const OcpModel& model) {
  Iterate it;
  const Eigen::VectorXd xr =
      model.x_ref.size() == model.nx ? model.x_ref : Eigen::VectorXd(model.x0_hat);
  const Eigen::VectorXd ur =
      model.u_ref.size() == model.nu ? model.u_ref : Eigen::VectorXd(Eigen::VectorXd::Zero(model.nu));
  it.x.assign(model.N + 1, xr);
  it.x[0] = model.x0_hat;
  it.u.assign(model.N, ur);
  it.lambda.assign(model.N, Eigen::VectorXd::Zero(model.nx));
  it.mu.resize(model.N + 1);
  for (int i = 0; i <= model.N; ++i) it.mu[i] = Eigen::VectorXd::Zero(model.num_path_rows(i));
  it.x0_multiplier = Eigen::VectorXd::Zero(model.nx);
  return it;
}

void check_iterate(const OcpModel& model, const Iterate& it) {
  require_dim(static_cast<long>(it.x.size()), model.N + 1, "Iterate x");
  require_dim(static_cast<long>(it.u.size()), model.N, "Iterate u");
  require_dim(static_cast<long>(it.lambda.size()), model.N, "Iterate lambda");
  require_dim(static_cast<long>(it.mu.size()), model.N + 1, "Iterate mu");
  for (int i = 0; i <= model.N; ++i) {
    require_dim(it.x[i].size(), model.nx, "Iterate x_i");
    require_dim(it.mu[i].size(), model.num_path_rows(i), "Iterate mu_i");
    if (i < model.N) {
      require_dim(it.u[i].size(), model.nu, "Iterate u_i");
      require_dim(it.lambda[i].size(), model.nx, "Iterate lambda_i");
    }
  }
  require_dim(it.x0_multiplier.size(), model.nx, "Iterate x0_multiplier");
}

std::vector<int> path_row_offsets(const OcpModel& model) {
  std::vector<int> offsets(model.N + 2, 0);
  for (int i = 0; i <= model.N; ++i) offsets[i + 1] = offsets[i] + model.num_path_rows(i);
  return offsets;
}

RowId locate_row(const std::vector<int>& offsets, int id) {
  if (id < 0 || id >= offsets.back()) {
    throw DimensionError("locate_row: row id " + std::to_string(id) + " out of range");
  }
  const auto pos = std::upper_bound(offsets.begin(), offsets.end(), id);
  const int stage = static_cast<int>(pos - offsets.begin()) - 1;
  return {stage, id - offsets[stage]};
}

std::vector<int> shift_active_set(const OcpModel& model, const std::vector<int>& active_set) {
  const std::vector<int> roff = path_row_offsets(model);
  std::vector<int> shifted;
  for (int id : active_set) {
    const RowId rid = locate_row(roff, id);
    if (rid.stage >= 2 && model.num_path_rows(rid.stage - 1) == model.num_path_rows(rid.stage)) {
      shifted.push_back(roff[rid.stage - 1] + rid.row);
    }
    if (rid.stage == model.N) shifted.push_back(id);
  }
  std::sort(shifted.begin(), shifted.end());
  shifted.erase(std::unique(shifted.begin(), shifted.end()), shifted.end());
  return shifted;
}

Iterate shift_warm_start(const Iterate& in) {
  Iterate it = in;
  const int N = it.N();
  for (int i = 0; i < N; ++i) it.x[i] = it.x[i + 1];
  for (int i = 0; i + 1 < N; ++i) {
    it.u[i] = it.u[i + 1];
    it.lambda[i] = it.lambda[i + 1];
    if (!it.k.empty()) {
      it.k[i] = it.k[i + 1];
      it.omega[i] = it.omega[i + 1];
    }
  }
  for (int i = 1; i < N; ++i) {
    if (it.mu[i].size() == it.mu[i + 1].size()) it.mu[i] = it.mu[i + 1];
  }
  return it;
}

// ---------------------------------------------------------------------------
// Chain of masses
// ---------------------------------------------------------------------------

namespace {

// Net spring force on inner masses 1..M-1 with mass M pinned, plus gravity.
template <class T>
VecX<T> inner_force_balance(const ChainParameters& prm, const VecX<T>& q) {
  const int M = prm.n_m - 1;
  const int n_inner = M - 1;
  std::vector<std::array<T, 3>> p(M + 1);
  for (int d = 0; d < 3; ++d) {
    p[0][d] = T(0.0);
    p[M][d] = T(prm.end_position[d]);
  }
  for (int j = 1; j < M; ++j) {
    for (int d = 0; d < 3; ++d) p[j][d] = q[3 * (j - 1) + d];
  }
  VecX<T> out(3 * n_inner);
  for (int j = 1; j < M; ++j) {
    const auto left = spring_force<T>(p[j].data(), p[j - 1].data(), prm.spring_constant,
                                      prm.rest_length);
    const auto right = spring_force<T>(p[j].data(), p[j + 1].data(), prm.spring_constant,
                                       prm.rest_length);
    for (int d = 0; d < 3; ++d) {
      out[3 * (j - 1) + d] = left[d] + right[d] + T(prm.mass * prm.gravity[d]);
    }
  }
  return out;
}

void check_chain_parameters(const ChainParameters& prm) {
  if (prm.n_m < 2) throw ConfigError("chain_of_masses: n_m must be >= 2");
  if (prm.N < 1) throw ConfigError("chain_of_masses: N must be >= 1");
  if (!(prm.T > 0.0)) throw ConfigError("chain_of_masses: T must be positive");
  if (!(prm.mass > 0.0)) throw ConfigError("chain_of_masses: mass must be positive");
  if (!(prm.rest_length >= 0.0)) throw ConfigError("chain_of_masses: rest_length must be >= 0");
  if (prm.state_weight < 0.0 || prm.terminal_weight < 0.0 || prm.control_weight < 0.0) {
    throw ConfigError("chain_of_masses: weights must be nonnegative");
  }
  if (prm.perturbation_time < 0.0) {
    throw ConfigError("chain_of_masses: perturbation_time must be >= 0");
  }
}

}  // namespace

ChainSteadyState chain_steady_state(const ChainParameters& prm) {
  check_chain_parameters(prm);
  const int M = prm.n_m - 1;
  const int n_inner = M - 1;
  ChainSteadyState ss;

  Eigen::VectorXd q(3 * n_inner);
  for (int j = 1; j < M; ++j) {
    for (int d = 0; d < 3; ++d) q[3 * (j - 1) + d] = prm.end_position[d] * j / M;
  }
  if (n_inner > 0) {
    const VectorFunction balance(3 * n_inner, 3 * n_inner, [prm](const auto& v) {
      using T = typename std::decay_t<decltype(v)>::Scalar;
      return inner_force_balance<T>(prm, VecX<T>(v));
    });
    Eigen::VectorXd r = balance(q);
    double norm = r.norm();
    while (norm > 1e-10 && ss.newton_iterations < 100) {
      const Eigen::VectorXd dq = -jacobian(balance, q).fullPivLu().solve(r);
      double t = 1.0;
      Eigen::VectorXd q_new = q + dq;
      Eigen::VectorXd r_new = balance(q_new);
      while (!(r_new.norm() < (1.0 - 1e-4 * t) * norm) && t > 1e-8) {
        t *= 0.5;
        q_new = q + t * dq;
        r_new = balance(q_new);
      }
      q = q_new;
      r = r_new;
      norm = r.norm();
      ++ss.newton_iterations;
    }
    if (!(norm <= 1e-10)) {
      throw NumericalError("chain_steady_state: Newton did not converge (residual " +
                           std::to_string(norm) + ")");
    }
    ss.residual = norm;
  }

  ss.x = Eigen::VectorXd::Zero(6 * M);
  for (int j = 1; j < M; ++j) ss.x.segment(6 * (j - 1), 3) = q.segment(3 * (j - 1), 3);
  for (int d = 0; d < 3; ++d) ss.x[6 * (M - 1) + d] = prm.end_position[d];

  ss.u = Eigen::VectorXd::Zero(3);
  if (prm.force_input) {
    const double* pm = ss.x.data() + 6 * (M - 1);
    const double origin[3] = {0.0, 0.0, 0.0};
    const double* prev = M > 1 ? ss.x.data() + 6 * (M - 2) : origin;
    const auto f = spring_force<double>(pm, prev, prm.spring_constant, prm.rest_length);
    for (int d = 0; d < 3; ++d) ss.u[d] = -f[d] - prm.mass * prm.gravity[d];
  }
  return ss;
}

OcpModel chain_of_masses(const ChainParameters& prm) {
  check_chain_parameters(prm);
  const int M = prm.n_m - 1;
  const int nx = 6 * M;
  const int nu = 3;

  OcpModel model;
  model.nx = nx;
  model.nu = nu;
  model.N = prm.N;
  model.T = prm.T;
  model.discretization = prm.discretization;
  set_explicit_dynamics(model, VectorFunction(nx + nu, nx, [prm](const auto& xu) {
                          using T = typename std::decay_t<decltype(xu)>::Scalar;
                          return chain_rhs<T>(prm, VecX<T>(xu));
                        }));

  const ChainSteadyState ss = chain_steady_state(prm);
  model.x_ref = ss.x;
  model.u_ref = ss.u;

  const double sq = std::sqrt(prm.state_weight);
  const double sr = std::sqrt(prm.control_weight);
  const double sN = std::sqrt(prm.terminal_weight);
  const Eigen::VectorXd xs = ss.x;
  const Eigen::VectorXd us = ss.u;
  const VectorFunction stage(nx + nu, nx + nu, [xs, us, sq, sr, nx, nu](const auto& w) {
    using T = typename std::decay_t<decltype(w)>::Scalar;
    VecX<T> r(nx + nu);
    for (int i = 0; i < nx; ++i) r[i] = T(sq) * (w[i] - T(xs[i]));
    for (int i = 0; i < nu; ++i) r[nx + i] = T(sr) * (w[nx + i] - T(us[i]));
    return r;
  });
  model.stage_residuals.assign(prm.N, stage);
  model.terminal_residual = VectorFunction(nx, nx, [xs, sN, nx](const auto& x) {
    using T = typename std::decay_t<decltype(x)>::Scalar;
    VecX<T> r(nx);
    for (int i = 0; i < nx; ++i) r[i] = T(sN) * (x[i] - T(xs[i]));
    return r;
  });
  model.affine_residuals = true;

  model.path_rows.resize(prm.N + 1);
  model.path_bounds.resize(prm.N + 1);
  model.path_rows[0] = Eigen::MatrixXd::Zero(0, nx + nu);
  model.path_bounds[0] = Eigen::VectorXd::Zero(0);
  for (int i = 1; i <= prm.N; ++i) {
    Eigen::MatrixXd P = Eigen::MatrixXd::Zero(M, model.nw(i));
    for (int j = 0; j < M; ++j) P(j, 6 * j + 1) = -1.0;
    model.path_rows[i] = P;
    model.path_bounds[i] = Eigen::VectorXd::Constant(M, -prm.wall_y);
  }

  Eigen::VectorXd u_pert = ss.u;
  const double scale = prm.force_input ? prm.mass : 1.0;
  for (int d = 0; d < 3; ++d) u_pert[d] += scale * prm.perturbation_control[d];
  model.x0_hat = ss.x;
  if (prm.perturbation_time > 0.0) {
    const int steps = std::max(1, static_cast<int>(std::ceil(prm.perturbation_time / 0.005)));
    model.x0_hat = rk4_generic<double>(model.explicit_rhs, ss.x, u_pert, prm.perturbation_time,
                                       steps);
  }
  model.validate();
  return model;
}

OcpModel chain_of_masses(int n_m, int N, double T) {
  ChainParameters prm;
  prm.n_m = n_m;
  prm.N = N;
  prm.T = T;
  return chain_of_masses(prm);
}

// ---------------------------------------------------------------------------
// Stage quantities
// ---------------------------------------------------------------------------

namespace {

const VectorFunction& residual_of(const OcpModel& model, int stage) {
  if (stage < 0 || stage > model.N) {
    throw DimensionError("stage index " + std::to_string(stage) + " out of range");
  }
  return stage < model.N ? model.stage_residuals[stage] : model.terminal_residual;
}

}  // namespace

Eigen::VectorXd objective_gradient(const OcpModel& model, int stage, const Eigen::VectorXd& w) {
  const VectorFunction& R = residual_of(model, stage);
  require_dim(w.size(), model.nw(stage), "objective_gradient w");
  return jacobian(R, w).transpose() * R(w);
}

Eigen::MatrixXd gauss_newton_hessian(const OcpModel& model, int stage, const Eigen::VectorXd& w) {
  const VectorFunction& R = residual_of(model, stage);
  require_dim(w.size(), model.nw(stage), "gauss_newton_hessian w");
  const Eigen::MatrixXd J = jacobian(R, w);
  return J.transpose() * J;
}

double objective_value(const OcpModel& model, const Iterate& it) {
  double v = 0.0;
  for (int i = 0; i <= model.N; ++i) v += 0.5 * residual_of(model, i)(it.w(i)).squaredNorm();
  return v;
}

namespace {

struct GlShooting {
  CollocationStage stage;
  Eigen::VectorXd K;
  CollocationJacobians jac;
};

GlShooting gl_shooting(const OcpModel& model, const Eigen::VectorXd& w, bool with_jacobians) {
  GlShooting g;
  g.stage = make_collocation_stage(model, model.discretization.stages);
  const Eigen::VectorXd x = w.head(model.nx);
  const Eigen::VectorXd u = w.tail(model.nu);
  g.K = solve_collocation(model, x, u, g.stage,
                          Eigen::VectorXd::Zero(g.stage.tableau.s * model.nx))
            .K;
  if (with_jacobians) g.jac = collocation_jacobians(model, x, u, g.K, g.stage);
  return g;
}

}  // namespace

Eigen::VectorXd shooting_map(const OcpModel& model, const Eigen::VectorXd& w) {
  require_dim(w.size(), model.nx + model.nu, "shooting_map w");
  if (model.discretization.type == IntegratorType::rk4) {
    return rk4_map(model, w.head(model.nx), w.tail(model.nu), model.discretization.substeps);
  }
  const GlShooting g = gl_shooting(model, w, false);
  return w.head(model.nx) + g.stage.apply_B(g.K);
}

Eigen::VectorXd shooting_adjoint(const OcpModel& model, const Eigen::VectorXd& w,
                                 const Eigen::VectorXd& seed) {
  require_dim(w.size(), model.nx + model.nu, "shooting_adjoint w");
  require_dim(seed.size(), model.nx, "shooting_adjoint seed");
  if (model.discretization.type == IntegratorType::rk4) {
    return rk4_adjoint(model, w.head(model.nx), w.tail(model.nu), model.discretization.substeps,
                       seed);
  }
  // F = x + B K(w) with G(w, K(w)) = 0, so dF/dw^T seed = [seed; 0] - D^T C^-T B^T seed.
  const GlShooting g = gl_shooting(model, w, true);
  const Eigen::VectorXd v = g.jac.C.transpose().partialPivLu().solve(g.stage.apply_Bt(seed));
  Eigen::VectorXd out = -g.jac.D.transpose() * v;
  out.head(model.nx) += seed;
  return out;
}

Eigen::MatrixXd shooting_jacobian(const OcpModel& model, const Eigen::VectorXd& w) {
  require_dim(w.size(), model.nx + model.nu, "shooting_jacobian w");
  if (model.discretization.type == IntegratorType::rk4) {
    return rk4_jacobian(model, w.head(model.nx), w.tail(model.nu), model.discretization.substeps);
  }
  const GlShooting g = gl_shooting(model, w, true);
  Eigen::MatrixXd J = -g.stage.apply_B(Eigen::MatrixXd(g.jac.C.partialPivLu().solve(g.jac.D)));
  J.leftCols(model.nx) += Eigen::MatrixXd::Identity(model.nx, model.nx);
  return J;
}

std::vector<Eigen::VectorXd> evaluate_lagrangian_gradient(const OcpModel& model,
                                                          const Iterate& it,
                                                          const std::vector<Eigen::MatrixXd>& A) {
  check_iterate(model, it);
  require_dim(static_cast<long>(A.size()), model.N, "evaluate_lagrangian_gradient A");
  std::vector<Eigen::VectorXd> h(model.N + 1);
  for (int i = 0; i < model.N; ++i) {
    require_dim(A[i].rows(), model.nx, "evaluate_lagrangian_gradient A_i rows");
    require_dim(A[i].cols(), model.nx + model.nu, "evaluate_lagrangian_gradient A_i cols");
    const Eigen::VectorXd wi = it.w(i);
    h[i] = objective_gradient(model, i, wi);
    if (it.lambda[i].squaredNorm() > 0.0) {
      h[i] += shooting_adjoint(model, wi, it.lambda[i]) - A[i].transpose() * it.lambda[i];
    }
  }
  h[model.N] = objective_gradient(model, model.N, it.x[model.N]);
  return h;
}

double kkt_residual(const OcpModel& model, const Iterate& it, const std::vector<int>& active_set) {
  check_iterate(model, it);
  const std::vector<int> offsets = path_row_offsets(model);
  const std::set<int> active(active_set.begin(), active_set.end());
  double res = 0.0;
  auto upd = [&res](double v) {
    if (!std::isfinite(v)) {
      res = std::numeric_limits<double>::infinity();
    } else {
      res = std::max(res, std::abs(v));
    }
  };

  upd((it.x[0] - model.x0_hat).lpNorm<Eigen::Infinity>());
  for (int i = 0; i <= model.N; ++i) {
    const Eigen::VectorXd wi = it.w(i);
    Eigen::VectorXd g = objective_gradient(model, i, wi);
    if (i < model.N) {
      upd((shooting_map(model, wi) - it.x[i + 1]).lpNorm<Eigen::Infinity>());
      g += shooting_adjoint(model, wi, it.lambda[i]);
    }
    if (i > 0) g.head(model.nx) -= it.lambda[i - 1];
    if (i == 0) g.head(model.nx) += it.x0_multiplier;
    const Eigen::MatrixXd& P = model.path_rows[i];
    Eigen::VectorXd mu = Eigen::VectorXd::Zero(P.rows());
    for (int r = 0; r < P.rows(); ++r) {
      if (active.count(offsets[i] + r) != 0) mu[r] = it.mu[i][r];
    }
    if (P.rows() > 0) {
      g += P.transpose() * mu;
      const Eigen::VectorXd slack = P * wi - model.path_bounds[i];
      for (int r = 0; r < P.rows(); ++r) {
        upd(std::max(0.0, slack[r]));
        upd(std::max(0.0, -mu[r]));
        upd(mu[r] * slack[r]);
        if (active.count(offsets[i] + r) != 0) upd(slack[r]);
      }
    }
    upd(g.lpNorm<Eigen::Infinity>());
  }
  return res;
}

// ---------------------------------------------------------------------------
// JSON
// ---------------------------------------------------------------------------

namespace {

void reject_unknown(const nlohmann::json& j, const std::set<std::string>& allowed,
                    const std::string& where) {
  if (!j.is_object()) throw ConfigError(where + ": expected a JSON object");
  for (const auto& item : j.items()) {
    if (allowed.count(item.key()) == 0) {
      throw ConfigError(where + ": unknown key '" + item.key() + "'");
    }
  }
}

template <class T>
void read(const nlohmann::json& j, const char* key, T& out, const std::string& where) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(where + ": invalid value for '" + key + "': " + e.what());
  }
}

}  // namespace

Discretization discretization_from_json(const nlohmann::json& j) {
  reject_unknown(j, {"type", "stages", "substeps"}, "integrator");
  Discretization d;
  std::string type = "rk4";
  read(j, "type", type, "integrator");
  if (type == "rk4") {
    d.type = IntegratorType::rk4;
  } else if (type == "gl" || type == "gauss_legendre") {
    d.type = IntegratorType::gauss_legendre;
  } else {
    throw ConfigError("integrator: unknown type '" + type + "'");
  }
  read(j, "stages", d.stages, "integrator");
  read(j, "substeps", d.substeps, "integrator");
  if (d.stages < 1 || d.stages > 4) throw ConfigError("integrator: stages must be in 1..4");
  if (d.substeps < 1) throw ConfigError("integrator: substeps must be >= 1");
  return d;
}

ChainParameters chain_parameters_from_json(const nlohmann::json& j) {
  const std::string where = "problem";
  reject_unknown(j,
                 {"problem", "n_m", "N", "T", "wall_y", "mass", "spring_constant", "rest_length",
                  "gravity", "end_position", "force_input", "state_weight", "terminal_weight",
                  "control_weight", "perturbation_control", "perturbation_time", "integrator"},
                 where);
  if (!j.contains("problem")) throw ConfigError("problem: missing key 'problem'");
  if (j.at("problem") != "chain") {
    throw ConfigError("problem: unsupported problem '" + j.at("problem").dump() + "'");
  }
  ChainParameters prm;
  read(j, "n_m", prm.n_m, where);
  read(j, "N", prm.N, where);
  read(j, "T", prm.T, where);
  read(j, "wall_y", prm.wall_y, where);
  read(j, "mass", prm.mass, where);
  read(j, "spring_constant", prm.spring_constant, where);
  read(j, "rest_length", prm.rest_length, where);
  read(j, "gravity", prm.gravity, where);
  read(j, "end_position", prm.end_position, where);
  read(j, "force_input", prm.force_input, where);
  read(j, "state_weight", prm.state_weight, where);
  read(j, "terminal_weight", prm.terminal_weight, where);
  read(j, "control_weight", prm.control_weight, where);
  read(j, "perturbation_control", prm.perturbation_control, where);
  read(j, "perturbation_time", prm.perturbation_time, where);
  if (j.contains("integrator")) prm.discretization = discretization_from_json(j.at("integrator"));
  check_chain_parameters(prm);
  return prm;
}

nlohmann::json chain_parameters_to_json(const ChainParameters& prm) {
  nlohmann::json j;
  j["problem"] = "chain";
  j["n_m"] = prm.n_m;
  j["N"] = prm.N;
  j["T"] = prm.T;
  j["wall_y"] = prm.wall_y;
  j["mass"] = prm.mass;
  j["spring_constant"] = prm.spring_constant;
  j["rest_length"] = prm.rest_length;
  j["gravity"] = prm.gravity;
  j["end_position"] = prm.end_position;
  j["force_input"] = prm.force_input;
  j["state_weight"] = prm.state_weight;
  j["terminal_weight"] = prm.terminal_weight;
  j["control_weight"] = prm.control_weight;
  j["perturbation_control"] = prm.perturbation_control;
  j["perturbation_time"] = prm.perturbation_time;
  j["integrator"] = {
      {"type", prm.discretization.type == IntegratorType::rk4 ? "rk4" : "gl"},
      {"stages", prm.discretization.stages},
      {"substeps", prm.discretization.substeps}};
  return j;
}

}  // namespace blocktr1
