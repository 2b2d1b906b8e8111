#pragma once

#include <Eigen/Core>

#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "blocktr1/block_qp.hpp"
#include "blocktr1/lifted.hpp"
#include "blocktr1/ocp_model.hpp"
#include "blocktr1/sqp.hpp"

namespace blocktr1 {

struct RtiOptions {
  JacobianStrategy strategy = JacobianStrategy::block_tr1_dynamic;
  HessianType hessian = HessianType::gauss_newton;
  /// Lifted collocation instead of multiple shooting with the model's integrator.
  bool lifted = false;
  int collocation_nodes = 2;
  double c1 = 1e-8;
  double hessian_floor = 1e-2;
  /// Shift the warm start by one interval between samples.
  bool shift = true;
  QpOptions qp;
};

struct RtiStepResult {
  Eigen::VectorXd u;
  long long prep_ns = 0;
  long long feedback_ns = 0;
  QpStatus status = QpStatus::optimal;
  /// QP infeasible or not solved: u is the previous control.
  bool failed = false;
  double step_norm = 0.0;
  int active_set_size = 0;
  int qp_kkt_solves = 0;
};

/// One SQP iteration per sample. Preparation applies the pending quasi-Newton
/// update, shifts and builds the QP; feedback injects x0_hat and solves it.
class RtiController {
 public:
  RtiController(const OcpModel& model, RtiOptions options);
  ~RtiController();
  RtiController(const RtiController&) = delete;
  RtiController& operator=(const RtiController&) = delete;

  /// K and omega are added for the lifted variant when missing.
  void initialize(const Iterate& it);
  RtiStepResult step(const Eigen::VectorXd& x0_hat);

  /// KKT residual of the current iterate for the last measured x0_hat.
  double kkt() const;
  const Iterate& current() const;
  const std::vector<int>& active_set() const;
  const OcpModel& model() const { return model_; }
  const RtiOptions& options() const { return opts_; }
  std::string name() const;
  /// Update instrumentation of the lifted variant; nullptr for multiple shooting.
  const LiftedCounters* lifted_counters() const;

  struct Backend;

 private:
  OcpModel model_;
  RtiOptions opts_;
  std::unique_ptr<Backend> backend_;
  Eigen::VectorXd last_u_;
  bool started_ = false;
};

struct PlantOptions {
  int collocation_nodes = 4;
  /// Collocation steps per sampling interval; <= 0 means 4x the controller's sub-steps.
  int substeps = 0;
};

struct ClosedLoopSample {
  double t = 0.0;
  Eigen::VectorXd x;
  Eigen::VectorXd u;
  double kkt = 0.0;
  long long prep_ns = 0;
  long long feedback_ns = 0;
  int active_set_size = 0;
  /// Largest violation of the state-only path rows at the plant state.
  double violation = 0.0;
  bool violated = false;
  bool qp_failed = false;
};

struct ClosedLoopTrace {
  std::vector<ClosedLoopSample> samples;
  bool aborted = false;
  std::string message;
};

using Disturbance = std::function<Eigen::VectorXd(int step, const Eigen::VectorXd& x)>;

/// Alternates rti_step and plant propagation over `steps` samples of length T/N.
ClosedLoopTrace simulate_closed_loop(RtiController& ctrl, const Eigen::VectorXd& x_start, int steps,
                                     const PlantOptions& plant = {},
                                     const Disturbance& disturbance = nullptr);

/// `t, x..., u..., kkt, prep_ns, fb_ns, active_set_size, violated`
std::string trace_to_csv(const ClosedLoopTrace& trace, bool include_timing = true);

/// Max over samples of |x_a - x_b|_inf / max(1, |x_b|_inf).
double max_relative_deviation(const ClosedLoopTrace& a, const ClosedLoopTrace& b);

}  // namespace blocktr1
