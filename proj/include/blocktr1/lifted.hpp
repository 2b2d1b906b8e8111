#pragma once

#include <Eigen/Core>

#include <string>
#include <vector>

#include "blocktr1/block_qp.hpp"
#include "blocktr1/integrator.hpp"
#include "blocktr1/ocp_model.hpp"
#include "blocktr1/sqp.hpp"

namespace blocktr1 {

/// Per-stage collocation Jacobian store. C_inv approximates C^{-1} and E = C_inv D.
struct LiftedStageState {
  Eigen::MatrixXd D;      // (s nx) x (nx + nu)
  Eigen::MatrixXd C;      // (s nx) x (s nx)
  Eigen::MatrixXd C_inv;
  Eigen::MatrixXd E;
};

/// Scalar multiplications spent in the lifted update, split by kernel.
struct LiftedCounters {
  long long matvec = 0;
  long long outer_product = 0;
  long long multiplications = 0;
  int refactorizations = 0;
};

/// Exact D, C at (w, K) and one LU factorization of C. Throws NumericalError if C is singular.
LiftedStageState lifted_initialize_stage(const OcpModel& model, const CollocationStage& stage,
                                         const Eigen::VectorXd& w, const Eigen::VectorXd& K);
std::vector<LiftedStageState> lifted_initialize(const OcpModel& model, const CollocationStage& stage,
                                                const Iterate& it);

/// rho = y - D s_w - C s_K and tau = gamma - [D C]^T sigma from matrix-vector products only.
UpdateVectors collocation_update_vectors(const LiftedStageState& st, const Eigen::VectorXd& s,
                                         const Eigen::VectorXd& sigma, const Eigen::VectorXd& y,
                                         const Eigen::VectorXd& gamma,
                                         LiftedCounters* counters = nullptr);

/// TR1 update of [D C] with Sherman-Morrison on C_inv and a rank-one update of E.
/// A skipped update (including |1 + alpha tau_C^T C_inv rho| < sm_tol) leaves all four unchanged.
Tr1Result tr1_update_DC(LiftedStageState& st, const UpdateVectors& uv, Tr1Variant variant,
                        double c1 = 1e-8, LiftedCounters* counters = nullptr,
                        double sm_tol = 1e-12);

/// max(|C_inv C - I|_max, |E - C_inv D|_max) with explicit products (tests and diagnostics).
double lifted_drift(const LiftedStageState& st);

/// Initial guess with K_i from a converged collocation solve at each (x_i, u_i) and zero omega.
Iterate make_lifted_iterate(const OcpModel& model, const CollocationStage& stage, const Iterate& base);

/// KKT residual of the direct collocation NLP at (w, K, lambda, omega, mu).
double lifted_kkt_residual(const OcpModel& model, const CollocationStage& stage, const Iterate& it,
                           const std::vector<int>& active_set);

struct LiftedOptions {
  /// exact, block_tr1_forward, block_tr1_adjoint or block_tr1_dynamic.
  JacobianStrategy strategy = JacobianStrategy::block_tr1_dynamic;
  int collocation_nodes = 2;
  double c1 = 1e-8;
  double tol = 1e-8;
  int max_iter = 100;
  double divergence_threshold = 1e6;
  /// Probe-vector drift threshold that triggers a refactorization of C.
  double drift_tol = 1e-8;
  bool check_drift = true;
  QpOptions qp;
};

struct LiftedRecord {
  int iter = 0;
  double kkt = 0.0;
  double step_norm = 0.0;
  int n_skipped = 0;
  int active_set_size = 0;
  int n_refactorizations = 0;
  long long matvec_count = 0;
  long long outer_product_count = 0;
  QpStatus qp_status = QpStatus::optimal;
};

/// Lifted collocation SQP: the QP is condensed to multiple-shooting size,
/// ΔK and omega are recovered by expansion.
class LiftedSolver {
 public:
  LiftedSolver(const OcpModel& model, LiftedOptions options);

  /// `it` must carry K and omega. Performs the only factorization of C per stage.
  void initialize(const Iterate& it);

  /// Condensing at the current iterate (with exact relinearization in exact mode).
  void prepare();
  /// QP solve and expansion of ΔK and omega.
  QpSolution feedback(const Eigen::VectorXd& x0_hat);
  /// TR1 updates of [D C], C_inv and E from the last step. Returns the number of skipped stages.
  int update();
  LiftedRecord iterate();

  void shift();
  void request_exact_relinearization() { relinearize_ = true; }

  const Iterate& current() const { return it_; }
  const std::vector<LiftedStageState>& states() const { return states_; }
  std::vector<LiftedStageState>& mutable_states() { return states_; }
  const std::vector<int>& active_set() const { return active_set_; }
  const std::vector<StageQpData>& qp_stages() const { return stages_; }
  const LiftedCounters& counters() const { return counters_; }
  void reset_counters() { counters_ = LiftedCounters{}; }
  const CollocationStage& stage() const { return stage_; }
  const OcpModel& model() const { return model_; }
  const LiftedOptions& options() const { return opts_; }
  double last_step_norm() const { return last_step_norm_; }
  int last_skipped() const { return last_skipped_; }

 private:
  void refresh(int i);
  const Eigen::MatrixXd& gn_hessian(int stage, const Eigen::VectorXd& w);

  const OcpModel& model_;
  LiftedOptions opts_;
  CollocationStage stage_;
  Iterate it_;
  Iterate prev_;
  std::vector<LiftedStageState> states_;
  std::vector<Eigen::VectorXd> c_;       // G_i at the current iterate
  std::vector<Eigen::VectorXd> c_prev_;
  bool c_valid_ = false;
  std::vector<Eigen::VectorXd> gK_;      // dG/dK^T omega at the current iterate
  std::vector<Eigen::VectorXd> dw_;
  std::vector<Eigen::VectorXd> dK_;
  std::vector<Eigen::MatrixXd> gn_cache_;
  std::vector<StageQpData> stages_;
  std::vector<int> active_set_;
  Eigen::VectorXd probe_;
  LiftedCounters counters_;
  bool pending_ = false;
  bool relinearize_ = false;
  double last_step_norm_ = 0.0;
  int last_skipped_ = 0;
};

struct LiftedResult {
  Iterate solution;
  std::vector<LiftedRecord> records;
  std::vector<Iterate> history;
  std::vector<int> active_set;
  std::string status;
  bool converged = false;
};
LiftedResult run_lifted(const OcpModel& model, const LiftedOptions& options, const Iterate& initial,
                        bool record_history = false);

/// Reference SQP on the uncondensed direct collocation NLP with stage variables
/// (x_i, u_i, K_i) and [D C] as equality-constraint blocks. Shares the TR1 rule
/// but no condensing, expansion or Sherman-Morrison code with LiftedSolver.
class DirectCollocationSolver {
 public:
  DirectCollocationSolver(const OcpModel& model, LiftedOptions options);
  void initialize(const Iterate& it);
  QpSolution iterate(const Eigen::VectorXd& x0_hat);

  const Iterate& current() const { return it_; }
  /// [D C] per stage.
  const std::vector<Eigen::MatrixXd>& jacobians() const { return DC_; }
  const std::vector<int>& active_set() const { return active_set_; }

 private:
  const OcpModel& model_;
  LiftedOptions opts_;
  CollocationStage stage_;
  Iterate it_;
  std::vector<Eigen::MatrixXd> DC_;
  std::vector<int> active_set_;
};

std::string lifted_records_to_csv(const std::vector<LiftedRecord>& records, bool header = true);

}  // namespace blocktr1
