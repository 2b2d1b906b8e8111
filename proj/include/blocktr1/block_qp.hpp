#pragma once

#include <Eigen/Core>

#include <string>
#include <vector>

#include <json.hpp>

namespace blocktr1 {

/// One stage of the structured QP
///
///   min  sum_i 1/2 w_i^T H_i w_i + h_i^T w_i
///   s.t. A_i w_i - S_i w_{i+1} = -a_i,   Eq_i w_i = eq_i,   P_i w_i <= p_i,
///
/// where S_i selects the leading A_i.rows() entries of w_{i+1}. The last stage has
/// an empty A. Stage sizes may differ.
struct StageQpData {
  Eigen::MatrixXd H;
  Eigen::VectorXd h;
  Eigen::MatrixXd A;
  Eigen::VectorXd a;
  Eigen::MatrixXd P;
  Eigen::VectorXd p;
  Eigen::MatrixXd Eq;
  Eigen::VectorXd eq;

  int nw() const { return static_cast<int>(h.size()); }
  int num_rows() const { return static_cast<int>(P.rows()); }
};

enum class QpStatus { optimal, infeasible, max_iterations, degenerate };
std::string to_string(QpStatus status);

struct QpSolution {
  std::vector<Eigen::VectorXd> dw;      // per stage
  std::vector<Eigen::VectorXd> lambda;  // per stage, A_i.rows() entries
  std::vector<Eigen::VectorXd> mu;      // per stage, P_i.rows() entries, zero off the active set
  std::vector<Eigen::VectorXd> nu;      // per stage, Eq_i.rows() entries
  std::vector<int> active_set;          // sorted global row ids (stage-major)
  QpStatus status = QpStatus::optimal;
  int iterations = 0;
  int kkt_solves = 0;
  bool phase1 = false;
  double objective = 0.0;
};

struct QpOptions {
  double feasibility_tol = 1e-9;
  double multiplier_tol = 1e-10;
  /// Default 50 + 10 * (number of inequality rows) when negative.
  int max_iterations = -1;
  double phase1_proximal_weight = 1e-6;
  double phase1_infeasibility_tol = 1e-8;
};

/// Solution of the equality-constrained QP where the rows in `working_set` are
/// imposed as equalities.
struct KktResult {
  std::vector<Eigen::VectorXd> w;
  std::vector<Eigen::VectorXd> lambda;
  std::vector<Eigen::VectorXd> nu;
  /// Multipliers of the working rows, in the order of `working_set`.
  Eigen::VectorXd mu_working;
  bool ok = false;
  bool regularized = false;
};

/// Banded LU of the stage-ordered KKT matrix, variables ordered [w_i, nu_i, lambda_i].
KktResult kkt_solve_structured(const std::vector<StageQpData>& stages,
                               const std::vector<int>& working_set);
/// Same system assembled densely and solved by full-pivoting LU; test oracle.
KktResult kkt_solve_dense(const std::vector<StageQpData>& stages,
                          const std::vector<int>& working_set);

/// Primal active-set method with Phase-1 start; `warm_active_set` is tried first.
QpSolution solve_qp(const std::vector<StageQpData>& stages,
                    const std::vector<int>& warm_active_set = {}, const QpOptions& opts = {});

/// Convenience form: imposes the initial-condition row [I 0] dw_0 = initial_defect on stage 0.
QpSolution solve_qp(std::vector<StageQpData> stages, const Eigen::VectorXd& initial_defect,
                    const std::vector<int>& warm_active_set, const QpOptions& opts = {});

/// Smallest eigenvalue of the Hessian reduced to the null space of the dynamics and
/// equality rows, plus `initial_rows` rows [I 0] on stage 0.
double reduced_hessian_min_eigenvalue(const std::vector<StageQpData>& stages, int initial_rows = 0);

void validate_stages(const std::vector<StageQpData>& stages);
std::vector<int> qp_row_offsets(const std::vector<StageQpData>& stages);
double qp_objective(const std::vector<StageQpData>& stages, const std::vector<Eigen::VectorXd>& w);
/// Max-norm of stationarity, primal feasibility, dual feasibility and complementarity.
double qp_kkt_residual(const std::vector<StageQpData>& stages, const QpSolution& sol);

nlohmann::json qp_to_json(const std::vector<StageQpData>& stages);

}  // namespace blocktr1
