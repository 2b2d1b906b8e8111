#include "blocktr1/rti.hpp"

#include <chrono>
#include <cmath>
#include <iomanip>
#include <sstream>

#include "blocktr1/errors.hpp"
#include "blocktr1/integrator.hpp"

namespace blocktr1 {

struct RtiController::Backend {
  virtual ~Backend() = default;
  virtual void initialize(const Iterate& it) = 0;
  virtual void update() = 0;
  virtual void shift() = 0;
  virtual void prepare() = 0;
  virtual QpSolution feedback(const Eigen::VectorXd& x0_hat) = 0;
  virtual void relinearize() = 0;
  virtual double kkt() const = 0;
  virtual double step_norm() const = 0;
  virtual const Iterate& current() const = 0;
  virtual const std::vector<int>& active_set() const = 0;
  virtual const LiftedCounters* counters() const { return nullptr; }
};

namespace {

struct ShootingBackend : RtiController::Backend {
  ShootingBackend(const OcpModel& m, SqpOptions o) : model(m), solver(m, std::move(o)) {}
  void initialize(const Iterate& it) override { solver.initialize(it); }
  void update() override { solver.update(); }
  void shift() override { solver.shift(); }
  void prepare() override { solver.prepare(); }
  QpSolution feedback(const Eigen::VectorXd& x0) override { return solver.feedback(x0); }
  void relinearize() override { solver.request_exact_relinearization(); }
  double kkt() const override { return kkt_residual(model, solver.current(), solver.active_set()); }
  double step_norm() const override { return solver.last_step_norm(); }
  const Iterate& current() const override { return solver.current(); }
  const std::vector<int>& active_set() const override { return solver.active_set(); }
  const OcpModel& model;
  SqpSolver solver;
};

struct LiftedBackend : RtiController::Backend {
  LiftedBackend(const OcpModel& m, LiftedOptions o) : model(m), solver(m, std::move(o)) {}
  void initialize(const Iterate& it) override {
    solver.initialize(it.has_collocation() ? it : make_lifted_iterate(model, solver.stage(), it));
  }
  void update() override { solver.update(); }
  void shift() override { solver.shift(); }
  void prepare() override { solver.prepare(); }
  QpSolution feedback(const Eigen::VectorXd& x0) override { return solver.feedback(x0); }
  void relinearize() override { solver.request_exact_relinearization(); }
  double kkt() const override {
    return lifted_kkt_residual(model, solver.stage(), solver.current(), solver.active_set());
  }
  double step_norm() const override { return solver.last_step_norm(); }
  const Iterate& current() const override { return solver.current(); }
  const std::vector<int>& active_set() const override { return solver.active_set(); }
  const LiftedCounters* counters() const override { return &solver.counters(); }
  const OcpModel& model;
  LiftedSolver solver;
};

long long elapsed_ns(std::chrono::steady_clock::time_point a, std::chrono::steady_clock::time_point b) {
  return std::chrono::duration_cast<std::chrono::nanoseconds>(b - a).count();
}

}  // namespace

RtiController::RtiController(const OcpModel& model, RtiOptions options)
    : model_(model), opts_(std::move(options)) {
  if (opts_.lifted) {
    LiftedOptions lo;
    lo.strategy = opts_.strategy;
    lo.collocation_nodes = opts_.collocation_nodes;
    lo.c1 = opts_.c1;
    lo.qp = opts_.qp;
    backend_ = std::make_unique<LiftedBackend>(model_, lo);
  } else {
    SqpOptions so;
    so.strategy = opts_.strategy;
    so.hessian = opts_.hessian;
    so.c1 = opts_.c1;
    so.hessian_floor = opts_.hessian_floor;
    so.qp = opts_.qp;
    backend_ = std::make_unique<ShootingBackend>(model_, so);
  }
}

RtiController::~RtiController() = default;

void RtiController::initialize(const Iterate& it) {
  backend_->initialize(it);
  last_u_ = it.u.empty() ? Eigen::VectorXd::Zero(model_.nu) : it.u[0];
  started_ = false;
}

RtiStepResult RtiController::step(const Eigen::VectorXd& x0_hat) {
  require_dim(x0_hat.size(), model_.nx, "rti_step x0_hat");
  RtiStepResult res;
  const auto t0 = std::chrono::steady_clock::now();
  if (started_) {
    backend_->update();
    if (opts_.shift) backend_->shift();
  }
  backend_->prepare();
  const auto t1 = std::chrono::steady_clock::now();
  model_.x0_hat = x0_hat;
  const QpSolution sol = backend_->feedback(x0_hat);
  const auto t2 = std::chrono::steady_clock::now();
  started_ = true;
  res.prep_ns = elapsed_ns(t0, t1);
  res.feedback_ns = elapsed_ns(t1, t2);
  res.status = sol.status;
  res.qp_kkt_solves = sol.kkt_solves;
  if (sol.status != QpStatus::optimal) {
    res.failed = true;
    res.u = last_u_;
    backend_->relinearize();
    return res;
  }
  res.u = backend_->current().u[0];
  res.step_norm = backend_->step_norm();
  res.active_set_size = static_cast<int>(backend_->active_set().size());
  last_u_ = res.u;
  return res;
}

double RtiController::kkt() const { return backend_->kkt(); }
const Iterate& RtiController::current() const { return backend_->current(); }
const std::vector<int>& RtiController::active_set() const { return backend_->active_set(); }

const LiftedCounters* RtiController::lifted_counters() const { return backend_->counters(); }

std::string RtiController::name() const {
  return (opts_.lifted ? "lifted_" : "shooting_") + to_string(opts_.strategy);
}

ClosedLoopTrace simulate_closed_loop(RtiController& ctrl, const Eigen::VectorXd& x_start, int steps,
                                     const PlantOptions& plant, const Disturbance& disturbance) {
  const OcpModel& model = ctrl.model();
  require_dim(x_start.size(), model.nx, "simulate_closed_loop x_start");
  if (steps < 0) throw ConfigError("simulate_closed_loop: steps must be >= 0");
  int substeps = plant.substeps;
  if (substeps <= 0) {
    const bool rk4 = !ctrl.options().lifted && model.discretization.type == IntegratorType::rk4;
    substeps = 4 * (rk4 ? model.discretization.substeps : 1);
  }
  const double dt = model.interval();
  const Eigen::MatrixXd& Px = model.path_rows[model.N];
  const Eigen::VectorXd& px = model.path_bounds[model.N];
  ClosedLoopTrace trace;
  Eigen::VectorXd x = x_start;
  for (int k = 0; k < steps; ++k) {
    ClosedLoopSample smp;
    smp.t = k * dt;
    smp.x = x;
    if (Px.rows() > 0) {
      smp.violation = std::max(0.0, (Px * x - px).maxCoeff());
      smp.violated = smp.violation > 1e-6;
    }
    const RtiStepResult r = ctrl.step(x);
    smp.u = r.u;
    smp.prep_ns = r.prep_ns;
    smp.feedback_ns = r.feedback_ns;
    smp.active_set_size = r.active_set_size;
    smp.qp_failed = r.failed;
    smp.kkt = ctrl.kkt();
    trace.samples.push_back(smp);
    try {
      x = simulate_collocation(model, x, r.u, dt, plant.collocation_nodes, substeps);
    } catch (const NumericalError& e) {
      trace.aborted = true;
      trace.message = e.what();
      break;
    }
    if (disturbance) x += disturbance(k, x);
    if (!x.allFinite()) {
      trace.aborted = true;
      trace.message = "plant state is not finite";
      break;
    }
  }
  return trace;
}

std::string trace_to_csv(const ClosedLoopTrace& trace, bool include_timing) {
  std::ostringstream os;
  os << std::setprecision(17);
  const Eigen::Index nx = trace.samples.empty() ? 0 : trace.samples.front().x.size();
  const Eigen::Index nu = trace.samples.empty() ? 0 : trace.samples.front().u.size();
  os << "t";
  for (Eigen::Index i = 0; i < nx; ++i) os << ",x" << i;
  for (Eigen::Index i = 0; i < nu; ++i) os << ",u" << i;
  os << ",kkt,prep_ns,fb_ns,active_set_size,violated\n";
  for (const ClosedLoopSample& s : trace.samples) {
    os << s.t;
    for (Eigen::Index i = 0; i < nx; ++i) os << ',' << s.x[i];
    for (Eigen::Index i = 0; i < nu; ++i) os << ',' << s.u[i];
    os << ',' << s.kkt << ',' << (include_timing ? s.prep_ns : 0) << ','
       << (include_timing ? s.feedback_ns : 0) << ',' << s.active_set_size << ','
       << (s.violated ? 1 : 0) << '\n';
  }
  return os.str();
}

double max_relative_deviation(const ClosedLoopTrace& a, const ClosedLoopTrace& b) {
  const std::size_t n = std::min(a.samples.size(), b.samples.size());
  double dev = 0.0;
  for (std::size_t k = 0; k < n; ++k) {
    const double scale = std::max(1.0, b.samples[k].x.lpNorm<Eigen::Infinity>());
    dev = std::max(dev, (a.samples[k].x - b.samples[k].x).lpNorm<Eigen::Infinity>() / scale);
  }
  return dev;
}

}  // namespace blocktr1
