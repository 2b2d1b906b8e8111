#pragma once

#include <Eigen/Core>

#include <functional>
#include <string>
#include <vector>

#include "blocktr1/block_qp.hpp"
#include "blocktr1/ocp_model.hpp"

namespace blocktr1 {

enum class JacobianStrategy {
  exact,
  block_tr1_forward,
  block_tr1_adjoint,
  block_tr1_dynamic,
  dense_tr1,
  broyden_good,
  broyden_bad
};
std::string to_string(JacobianStrategy s);
JacobianStrategy strategy_from_string(const std::string& name);

enum class HessianType { gauss_newton, block_sr1 };
std::string to_string(HessianType h);
HessianType hessian_from_string(const std::string& name);

enum class Tr1Variant { forward, adjoint, dynamic };

/// s = w+ - w, sigma = lambda+ - lambda, y = F(w+) - F(w), gamma = dF/dw(w+)^T sigma,
/// rho = y - A s, tau = gamma - A^T sigma.
struct UpdateVectors {
  Eigen::VectorXd s;
  Eigen::VectorXd sigma;
  Eigen::VectorXd y;
  Eigen::VectorXd gamma;
  Eigen::VectorXd rho;
  Eigen::VectorXd tau;
};
UpdateVectors make_update_vectors(const Eigen::MatrixXd& A, Eigen::VectorXd s,
                                  Eigen::VectorXd sigma, Eigen::VectorXd y, Eigen::VectorXd gamma);

struct Tr1Result {
  bool skipped = false;
  double alpha = 0.0;
  Tr1Variant used = Tr1Variant::forward;
};

/// Skip test and scaling factor alpha without touching any matrix.
Tr1Result tr1_scaling(const UpdateVectors& uv, Tr1Variant variant, double c1 = 1e-8);

/// A+ = A + alpha rho tau^T with alpha = 1/(tau^T s) (forward) or 1/(sigma^T rho) (adjoint).
/// The dynamic variant picks the larger of |tau^T s|/(|sigma||rho|) and |sigma^T rho|/(|s||tau|).
Tr1Result block_tr1_update(Eigen::MatrixXd& A, const UpdateVectors& uv, Tr1Variant variant,
                           double c1 = 1e-8);

/// Good: A+ = A + (y - A s) s^T / (s^T s). Bad: A+ = A + (y - A s)(A^T y)^T / (y^T A s).
/// Returns false when the update was skipped.
bool broyden_update(Eigen::MatrixXd& A, const Eigen::VectorXd& s, const Eigen::VectorXd& y,
                    bool good, double c1 = 1e-8);

/// H+ = H + v v^T / (v^T s), v = z - H s; skipped when |v^T s| < r |v||s|.
bool sr1_update(Eigen::MatrixXd& H, const Eigen::VectorXd& s, const Eigen::VectorXd& z,
                double r = 1e-8);

struct SqpOptions {
  JacobianStrategy strategy = JacobianStrategy::exact;
  HessianType hessian = HessianType::gauss_newton;
  double c1 = 1e-8;
  double sr1_threshold = 1e-8;
  /// SR1 blocks are shifted by max(0, floor - lambda_min) of the Hessian reduced to
  /// the null space of the equality rows.
  double hessian_floor = 1e-2;
  double tol = 1e-8;
  int max_iter = 100;
  double divergence_threshold = 1e6;
  /// Start quasi-Newton Jacobians from zero instead of the exact Jacobian.
  bool zero_initial_jacobian = false;
  bool record_history = false;
  QpOptions qp;
  /// Optional per-iteration measurement of the Jacobian error (see diagnostics).
  std::function<double(const std::vector<Eigen::MatrixXd>&)> jacobian_monitor;
};

struct IterationRecord {
  int iter = 0;
  double kkt = 0.0;
  double step_norm = 0.0;
  double proj_jac_err = 0.0;
  int n_skipped = 0;
  int active_set_size = 0;
  std::string strategy;
  QpStatus qp_status = QpStatus::optimal;
};

/// Adjoint-based inexact SQP on the multiple-shooting problem, split into the
/// preparation, feedback and update phases so that RTI can interleave them.
class SqpSolver {
 public:
  SqpSolver(const OcpModel& model, SqpOptions options);

  /// Sets the iterate and initializes the Jacobian and Hessian stores at it.
  void initialize(const Iterate& it);

  /// Linearizes at the current iterate and builds the QP (without the initial-state row).
  void prepare();
  /// Solves the prepared QP with x_0 + dx_0 = x0_hat and takes the full step.
  QpSolution feedback(const Eigen::VectorXd& x0_hat);
  /// Quasi-Newton updates from the last accepted step. Returns the number of skipped blocks.
  int update();

  /// prepare + feedback(model.x0_hat) + update, with diagnostics.
  IterationRecord iterate();

  /// Shifts iterate, Jacobian and Hessian blocks one stage forward.
  void shift();
  /// Next prepare() uses exact Jacobians at the current iterate.
  void request_exact_relinearization() { relinearize_ = true; }

  const Iterate& current() const { return it_; }
  Iterate& mutable_iterate() { return it_; }
  const std::vector<Eigen::MatrixXd>& jacobians() const { return A_; }
  std::vector<Eigen::MatrixXd>& mutable_jacobians() { return A_; }
  const Eigen::MatrixXd& dense_jacobian() const { return J_dense_; }
  const std::vector<Eigen::MatrixXd>& hessians() const { return H_; }
  const std::vector<int>& active_set() const { return active_set_; }
  const std::vector<StageQpData>& qp_stages() const { return stages_; }
  const SqpOptions& options() const { return opts_; }
  const OcpModel& model() const { return model_; }
  int last_skipped() const { return last_skipped_; }
  double last_step_norm() const { return last_step_norm_; }
  /// Diagonal shift applied to the SR1 blocks by the last prepare().
  double hessian_shift() const { return hessian_shift_; }

  /// Current Jacobian blocks viewed per stage (the dense store is sliced).
  std::vector<Eigen::MatrixXd> stage_jacobians() const;

 private:
  Eigen::MatrixXd gn_hessian(int stage, const Eigen::VectorXd& w);
  void build_dense_qp();

  const OcpModel& model_;
  SqpOptions opts_;
  Iterate it_;
  Iterate prev_;
  bool pending_ = false;
  bool relinearize_ = false;
  std::vector<Eigen::MatrixXd> A_;
  Eigen::MatrixXd J_dense_;
  std::vector<Eigen::MatrixXd> H_;
  std::vector<Eigen::MatrixXd> gn_cache_;
  std::vector<Eigen::VectorXd> F_;      // F_i at the current iterate
  std::vector<Eigen::VectorXd> F_prev_;
  bool F_valid_ = false;
  std::vector<Eigen::VectorXd> grad_;
  std::vector<StageQpData> stages_;
  std::vector<int> active_set_;
  std::vector<Eigen::VectorXd> step_;
  int last_skipped_ = 0;
  double last_step_norm_ = 0.0;
  double hessian_shift_ = 0.0;
};

struct SqpResult {
  Iterate solution;
  std::vector<IterationRecord> records;
  std::vector<Iterate> history;  // iterates 0..k when record_history is set
  std::vector<std::vector<Eigen::MatrixXd>> jacobian_history;
  std::vector<int> active_set;
  std::string status;  // converged | max_iterations | diverged | qp_failure
  bool converged = false;
};

SqpResult run_sqp(const OcpModel& model, const SqpOptions& options, const Iterate& initial);

/// Writes `iter, kkt_inf_norm, step_norm, proj_jac_err, n_skipped, active_set_size, strategy`.
std::string records_to_csv(const std::vector<IterationRecord>& records, bool header = true);

}  // namespace blocktr1
