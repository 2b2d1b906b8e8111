#include "blocktr1/autodiff.hpp"

namespace blocktr1 {

Tape& Tape::local() {
  thread_local Tape tape;
  return tape;
}

void Tape::sweep(std::vector<double>& adjoint) const {
  adjoint.resize(nodes_.size(), 0.0);
  for (std::size_t k = nodes_.size(); k-- > 0;) {
    const double a = adjoint[k];
    if (a == 0.0) continue;
    const Node& n = nodes_[k];
    if (n.parent[0] >= 0) adjoint[n.parent[0]] += a * n.partial[0];
    if (n.parent[1] >= 0) adjoint[n.parent[1]] += a * n.partial[1];
  }
}

AdCounters& ad_counters() {
  static AdCounters counters;
  return counters;
}

void VectorFunction::check_input(Eigen::Index n) const {
  if (!real_) throw ConfigError("VectorFunction: evaluation of an empty function");
  require_dim(n, input_dim_, "VectorFunction input");
}

void VectorFunction::check_output(Eigen::Index m) const {
  require_dim(m, output_dim_, "VectorFunction output");
}

Eigen::VectorXd VectorFunction::operator()(const Eigen::VectorXd& x) const {
  check_input(x.size());
  ad_counters().evaluations.fetch_add(1, std::memory_order_relaxed);
  Eigen::VectorXd y = real_(x);
  check_output(y.size());
  return y;
}

DualVector VectorFunction::operator()(const DualVector& x) const {
  check_input(x.size());
  DualVector y = dual_(x);
  check_output(y.size());
  return y;
}

VarVector VectorFunction::operator()(const VarVector& x) const {
  check_input(x.size());
  VarVector y = var_(x);
  check_output(y.size());
  return y;
}

DualVector make_dual(const Eigen::VectorXd& point, const Eigen::VectorXd& direction) {
  require_dim(direction.size(), point.size(), "make_dual direction");
  DualVector d(point.size());
  for (Eigen::Index i = 0; i < point.size(); ++i) d[i] = Dual(point[i], direction[i]);
  return d;
}

Eigen::VectorXd dual_values(const DualVector& v) {
  Eigen::VectorXd out(v.size());
  for (Eigen::Index i = 0; i < v.size(); ++i) out[i] = v[i].value;
  return out;
}

Eigen::VectorXd dual_derivatives(const DualVector& v) {
  Eigen::VectorXd out(v.size());
  for (Eigen::Index i = 0; i < v.size(); ++i) out[i] = v[i].derivative;
  return out;
}

Eigen::MatrixXd jacobian(const VectorFunction& fn, const Eigen::VectorXd& point) {
  require_dim(point.size(), fn.input_dim(), "jacobian point");
  const Eigen::Index n = fn.input_dim();
  Eigen::MatrixXd J(fn.output_dim(), n);
  DualVector x(n);
  for (Eigen::Index i = 0; i < n; ++i) x[i] = Dual(point[i], 0.0);
  for (Eigen::Index j = 0; j < n; ++j) {
    x[j].derivative = 1.0;
    const DualVector y = fn(x);
    for (Eigen::Index i = 0; i < y.size(); ++i) J(i, j) = y[i].derivative;
    x[j].derivative = 0.0;
  }
  ad_counters().forward_passes.fetch_add(n, std::memory_order_relaxed);
  return J;
}

Eigen::VectorXd directional_derivative(const VectorFunction& fn, const Eigen::VectorXd& point,
                                       const Eigen::VectorXd& direction) {
  require_dim(point.size(), fn.input_dim(), "directional_derivative point");
  require_dim(direction.size(), fn.input_dim(), "directional_derivative direction");
  ad_counters().forward_passes.fetch_add(1, std::memory_order_relaxed);
  return dual_derivatives(fn(make_dual(point, direction)));
}

Eigen::VectorXd vjp_with_value(const VectorFunction& fn, const Eigen::VectorXd& point,
                               const Eigen::VectorXd& seed, Eigen::VectorXd* value) {
  require_dim(point.size(), fn.input_dim(), "vjp point");
  require_dim(seed.size(), fn.output_dim(), "vjp seed");
  Tape& tape = Tape::local();
  tape.clear();
  const Eigen::Index n = point.size();
  VarVector x(n);
  for (Eigen::Index i = 0; i < n; ++i) x[i] = Var(point[i], tape.new_input());
  const VarVector y = fn(x);

  thread_local std::vector<double> adjoint;
  adjoint.assign(tape.size(), 0.0);
  for (Eigen::Index i = 0; i < y.size(); ++i) {
    if (y[i].index >= 0) adjoint[y[i].index] += seed[i];
  }
  tape.sweep(adjoint);

  Eigen::VectorXd out(n);
  for (Eigen::Index i = 0; i < n; ++i) out[i] = adjoint[x[i].index];
  if (value != nullptr) {
    value->resize(y.size());
    for (Eigen::Index i = 0; i < y.size(); ++i) (*value)[i] = y[i].value;
  }
  tape.clear();
  ad_counters().reverse_sweeps.fetch_add(1, std::memory_order_relaxed);
  return out;
}

Eigen::VectorXd vjp(const VectorFunction& fn, const Eigen::VectorXd& point,
                    const Eigen::VectorXd& seed) {
  return vjp_with_value(fn, point, seed, nullptr);
}

}  // namespace blocktr1
