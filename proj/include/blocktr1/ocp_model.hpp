#pragma once

#include <Eigen/Core>

#include <array>
#include <string>
#include <vector>

#include <json.hpp>

#include "blocktr1/autodiff.hpp"

namespace blocktr1 {

enum class IntegratorType { rk4, gauss_legendre };

/// How the continuous dynamics are turned into the stage maps.
struct Discretization {
  IntegratorType type = IntegratorType::rk4;
  int stages = 2;     // collocation nodes (gauss_legendre)
  int substeps = 10;  // RK4 sub-steps per shooting interval
};

/// Discrete-time optimal control problem over N shooting intervals:
///
///   min  sum_i 1/2 |R_i(x_i, u_i)|^2 + 1/2 |R_N(x_N)|^2
///   s.t. x_0 = x0_hat,  x_{i+1} = F_i(x_i, u_i),  P_i w_i <= p_i,
///
/// with w_i = (x_i, u_i) for i < N and w_N = x_N.
struct OcpModel {
  int nx = 0;
  int nu = 0;
  int N = 0;
  double T = 0.0;

  /// phi(x, u) on the stacked (x, u); set when explicit_form is true.
  VectorFunction explicit_rhs;
  /// f(xdot, x, u) on the stacked (xdot, x, u); always set.
  VectorFunction implicit_rhs;
  bool explicit_form = false;

  std::vector<VectorFunction> stage_residuals;  // N entries, input nx + nu
  VectorFunction terminal_residual;             // input nx
  /// Residual Jacobians are constant, so Gauss-Newton blocks can be cached.
  bool affine_residuals = false;

  std::vector<Eigen::MatrixXd> path_rows;  // N + 1 entries
  std::vector<Eigen::VectorXd> path_bounds;

  Eigen::VectorXd x0_hat;
  Discretization discretization;

  /// Optional steady state used for initial guesses and closed-loop checks.
  Eigen::VectorXd x_ref;
  Eigen::VectorXd u_ref;

  int nw(int stage) const { return stage < N ? nx + nu : nx; }
  double interval() const { return T / N; }
  int num_path_rows(int stage) const { return static_cast<int>(path_rows[stage].rows()); }
  int total_path_rows() const;

  /// Throws ConfigError/DimensionError when the fields are inconsistent.
  void validate() const;
};

/// Builds implicit_rhs = xdot - phi(x, u) and sets explicit_form.
void set_explicit_dynamics(OcpModel& model, VectorFunction phi);

/// One SQP state: primal trajectories and multipliers.
struct Iterate {
  std::vector<Eigen::VectorXd> x;       // N + 1
  std::vector<Eigen::VectorXd> u;       // N
  std::vector<Eigen::VectorXd> lambda;  // N, continuity multipliers
  std::vector<Eigen::VectorXd> mu;      // N + 1, inequality multipliers per stage
  Eigen::VectorXd x0_multiplier;        // initial-condition multiplier
  std::vector<Eigen::VectorXd> k;       // N collocation variables (optional)
  std::vector<Eigen::VectorXd> omega;   // N collocation multipliers (optional)

  int N() const { return static_cast<int>(u.size()); }
  Eigen::VectorXd w(int stage) const;
  void set_w(int stage, const Eigen::VectorXd& w);
  bool has_collocation() const { return !k.empty(); }

  /// Stacked primal vector (w_0, ..., w_N).
  Eigen::VectorXd primal() const;
  /// Stacked continuity multipliers.
  Eigen::VectorXd dual() const;
};

/// All trajectories set to the model's reference (x_0 = x0_hat), zero multipliers.
Iterate make_initial_iterate(const OcpModel& model);
void check_iterate(const OcpModel& model, const Iterate& it);

/// Shifts x, u, lambda, mu (and K, omega) one stage forward; the last stage keeps its values.
Iterate shift_warm_start(const Iterate& it);

/// Global inequality-row identifiers are stage-major: stage 0 rows first.
struct RowId {
  int stage;
  int row;
};
std::vector<int> path_row_offsets(const OcpModel& model);
RowId locate_row(const std::vector<int>& offsets, int id);
/// Active rows moved one stage forward; rows on the last stage are kept.
std::vector<int> shift_active_set(const OcpModel& model, const std::vector<int>& active_set);

// ---------------------------------------------------------------------------
// Chain of masses
// ---------------------------------------------------------------------------

struct ChainParameters {
  int n_m = 3;
  int N = 20;
  double T = 4.0;
  double wall_y = -0.01;
  double mass = 0.03;
  double spring_constant = 0.1;
  double rest_length = 0.033;
  std::array<double, 3> gravity{0.0, 0.0, -9.81};
  std::array<double, 3> end_position{1.0, 0.0, 0.0};
  /// false: the controlled end mass has vdot = u. true: u is a force, vdot = (u + springs)/m + g.
  bool force_input = false;
  double state_weight = 0.1;
  double terminal_weight = 1.0;
  double control_weight = 0.05;
  /// x0_hat is the steady state driven by this control for perturbation_time.
  std::array<double, 3> perturbation_control{-1.0, 1.0, 1.0};
  double perturbation_time = 0.5;
  Discretization discretization;
};

/// Spring force acting on mass a from mass b: D (1 - L/|b - a|) (b - a).
template <class T>
std::array<T, 3> spring_force(const T* pa, const T* pb, double spring_constant,
                              double rest_length) {
  using std::sqrt;
  const T dx = pb[0] - pa[0];
  const T dy = pb[1] - pa[1];
  const T dz = pb[2] - pa[2];
  const T len = sqrt(dx * dx + dy * dy + dz * dz);
  const T scale = spring_constant * (T(1.0) - rest_length / len);
  return {scale * dx, scale * dy, scale * dz};
}

/// Right-hand side phi(x, u) of the chain; x = (p^1, v^1, ..., p^M, v^M), M = n_m - 1.
template <class T>
VecX<T> chain_rhs(const ChainParameters& prm, const VecX<T>& xu) {
  const int M = prm.n_m - 1;
  const int nx = 6 * M;
  VecX<T> dx(nx);
  const T zero(0.0);
  const T origin[3] = {zero, zero, zero};
  auto pos = [&](int j) -> const T* { return j == 0 ? origin : xu.data() + 6 * (j - 1); };
  for (int j = 1; j <= M; ++j) {
    const int o = 6 * (j - 1);
    for (int d = 0; d < 3; ++d) dx[o + d] = xu[o + 3 + d];
    const bool controlled = (j == M);
    if (controlled && !prm.force_input) {
      for (int d = 0; d < 3; ++d) dx[o + 3 + d] = xu[nx + d];
      continue;
    }
    std::array<T, 3> acc{zero, zero, zero};
    const auto left = spring_force<T>(pos(j), pos(j - 1), prm.spring_constant, prm.rest_length);
    for (int d = 0; d < 3; ++d) acc[d] += left[d];
    if (!controlled) {
      const auto right = spring_force<T>(pos(j), pos(j + 1), prm.spring_constant, prm.rest_length);
      for (int d = 0; d < 3; ++d) acc[d] += right[d];
    } else {
      for (int d = 0; d < 3; ++d) acc[d] += xu[nx + d];
    }
    for (int d = 0; d < 3; ++d) dx[o + 3 + d] = acc[d] / T(prm.mass) + T(prm.gravity[d]);
  }
  return dx;
}

struct ChainSteadyState {
  Eigen::VectorXd x;
  Eigen::VectorXd u;
  int newton_iterations = 0;
  double residual = 0.0;
};

/// Rest configuration with the end mass pinned at end_position and zero velocities.
ChainSteadyState chain_steady_state(const ChainParameters& prm);

OcpModel chain_of_masses(const ChainParameters& prm);
OcpModel chain_of_masses(int n_m, int N, double T);

// ---------------------------------------------------------------------------
// Stage quantities shared by the SQP variants
// ---------------------------------------------------------------------------

/// grad l_i(w_i) = dR/dw^T R.
Eigen::VectorXd objective_gradient(const OcpModel& model, int stage, const Eigen::VectorXd& w);
/// Gauss-Newton block dR/dw^T dR/dw.
Eigen::MatrixXd gauss_newton_hessian(const OcpModel& model, int stage, const Eigen::VectorXd& w);
double objective_value(const OcpModel& model, const Iterate& it);

/// Shooting map F_i(w_i) and its exact adjoint dF_i/dw_i(w_i)^T seed, using the
/// model's discretization (RK4 with the configured sub-steps).
Eigen::VectorXd shooting_map(const OcpModel& model, const Eigen::VectorXd& w);
Eigen::VectorXd shooting_adjoint(const OcpModel& model, const Eigen::VectorXd& w,
                                 const Eigen::VectorXd& seed);
Eigen::MatrixXd shooting_jacobian(const OcpModel& model, const Eigen::VectorXd& w);

/// h_i = grad l(w_i) + (dF_i/dw_i(w_i) - A_i)^T lambda_i for i < N; h_N = grad l_N.
std::vector<Eigen::VectorXd> evaluate_lagrangian_gradient(const OcpModel& model,
                                                          const Iterate& it,
                                                          const std::vector<Eigen::MatrixXd>& A);

/// Max-norm of the KKT conditions for the multiple-shooting NLP; multipliers of
/// rows outside `active_set` are treated as zero.
double kkt_residual(const OcpModel& model, const Iterate& it, const std::vector<int>& active_set);

// ---------------------------------------------------------------------------
// JSON problem configuration
// ---------------------------------------------------------------------------

/// Parses `{ "problem": "chain", "n_m": .., "N": .., "T": .., "wall_y": .., ... }`.
/// Unknown keys are rejected with ConfigError.
ChainParameters chain_parameters_from_json(const nlohmann::json& j);
nlohmann::json chain_parameters_to_json(const ChainParameters& prm);

Discretization discretization_from_json(const nlohmann::json& j);

}  // namespace blocktr1
