#pragma once

// Forward (dual number) and reverse (tape) first-derivative services.
//
// Model functions are written once as generic lambdas over a scalar type T
// and wrapped in a VectorFunction, which can then be evaluated on doubles,
// on Dual numbers (one directional derivative per pass) and on tape-recorded
// Var scalars (one reverse sweep per vector-Jacobian product).

#include <Eigen/Core>

#include <atomic>
#include <cmath>
#include <cstdint>
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

#include "blocktr1/errors.hpp"

namespace blocktr1 {

// ---------------------------------------------------------------------------
// Dual numbers
// ---------------------------------------------------------------------------

struct Dual {
  double value = 0.0;
  double derivative = 0.0;

  Dual() = default;
  Dual(double v) : value(v) {}  // NOLINT(google-explicit-constructor)
  Dual(double v, double d) : value(v), derivative(d) {}

  Dual& operator+=(const Dual& o) {
    value += o.value;
    derivative += o.derivative;
    return *this;
  }
  Dual& operator-=(const Dual& o) {
    value -= o.value;
    derivative -= o.derivative;
    return *this;
  }
  Dual& operator*=(const Dual& o) {
    derivative = derivative * o.value + value * o.derivative;
    value *= o.value;
    return *this;
  }
  Dual& operator/=(const Dual& o) {
    const double inv = 1.0 / o.value;
    derivative = (derivative - value * inv * o.derivative) * inv;
    value *= inv;
    return *this;
  }
};

inline Dual operator+(Dual a, const Dual& b) { return a += b; }
inline Dual operator-(Dual a, const Dual& b) { return a -= b; }
inline Dual operator*(Dual a, const Dual& b) { return a *= b; }
inline Dual operator/(Dual a, const Dual& b) { return a /= b; }
inline Dual operator-(const Dual& a) { return {-a.value, -a.derivative}; }
inline Dual operator+(const Dual& a) { return a; }
inline bool operator<(const Dual& a, const Dual& b) { return a.value < b.value; }
inline bool operator>(const Dual& a, const Dual& b) { return a.value > b.value; }
inline bool operator<=(const Dual& a, const Dual& b) { return a.value <= b.value; }
inline bool operator>=(const Dual& a, const Dual& b) { return a.value >= b.value; }
inline bool operator==(const Dual& a, const Dual& b) { return a.value == b.value; }
inline bool operator!=(const Dual& a, const Dual& b) { return a.value != b.value; }

inline Dual sqrt(const Dual& a) {
  const double s = std::sqrt(a.value);
  return {s, a.derivative / (2.0 * s)};
}
inline Dual sin(const Dual& a) { return {std::sin(a.value), a.derivative * std::cos(a.value)}; }
inline Dual cos(const Dual& a) { return {std::cos(a.value), -a.derivative * std::sin(a.value)}; }
inline Dual exp(const Dual& a) {
  const double e = std::exp(a.value);
  return {e, a.derivative * e};
}
inline Dual log(const Dual& a) { return {std::log(a.value), a.derivative / a.value}; }
inline Dual tanh(const Dual& a) {
  const double t = std::tanh(a.value);
  return {t, a.derivative * (1.0 - t * t)};
}
inline Dual pow(const Dual& a, double p) {
  const double v = std::pow(a.value, p);
  return {v, a.derivative * p * std::pow(a.value, p - 1.0)};
}
inline Dual abs(const Dual& a) { return a.value < 0.0 ? -a : a; }

// ---------------------------------------------------------------------------
// Reverse mode: per-thread tape of elementary operations
// ---------------------------------------------------------------------------

class Tape {
 public:
  struct Node {
    std::int32_t parent[2];
    double partial[2];
  };

  static Tape& local();

  void clear() { nodes_.clear(); }
  std::int32_t push(std::int32_t p0, double d0, std::int32_t p1, double d1) {
    nodes_.push_back({{p0, p1}, {d0, d1}});
    return static_cast<std::int32_t>(nodes_.size() - 1);
  }
  std::int32_t new_input() { return push(-1, 0.0, -1, 0.0); }
  std::size_t size() const { return nodes_.size(); }

  // Propagates adjoints from the end of the tape to its start, in place.
  void sweep(std::vector<double>& adjoint) const;

 private:
  std::vector<Node> nodes_;
};

struct Var {
  double value = 0.0;
  std::int32_t index = -1;  // -1: constant, not recorded

  Var() = default;
  Var(double v) : value(v) {}  // NOLINT(google-explicit-constructor)
  Var(double v, std::int32_t i) : value(v), index(i) {}
};

namespace detail {
inline Var unary(const Var& a, double v, double da) {
  if (a.index < 0) return Var(v);
  return {v, Tape::local().push(a.index, da, -1, 0.0)};
}
inline Var binary(const Var& a, const Var& b, double v, double da, double db) {
  if (a.index < 0 && b.index < 0) return Var(v);
  return {v, Tape::local().push(a.index, da, b.index, db)};
}
}  // namespace detail

inline Var operator+(const Var& a, const Var& b) {
  return detail::binary(a, b, a.value + b.value, 1.0, 1.0);
}
inline Var operator-(const Var& a, const Var& b) {
  return detail::binary(a, b, a.value - b.value, 1.0, -1.0);
}
inline Var operator*(const Var& a, const Var& b) {
  return detail::binary(a, b, a.value * b.value, b.value, a.value);
}
inline Var operator/(const Var& a, const Var& b) {
  const double inv = 1.0 / b.value;
  return detail::binary(a, b, a.value * inv, inv, -a.value * inv * inv);
}
inline Var operator-(const Var& a) { return detail::unary(a, -a.value, -1.0); }
inline Var operator+(const Var& a) { return a; }
inline Var& operator+=(Var& a, const Var& b) { return a = a + b; }
inline Var& operator-=(Var& a, const Var& b) { return a = a - b; }
inline Var& operator*=(Var& a, const Var& b) { return a = a * b; }
inline Var& operator/=(Var& a, const Var& b) { return a = a / b; }
inline bool operator<(const Var& a, const Var& b) { return a.value < b.value; }
inline bool operator>(const Var& a, const Var& b) { return a.value > b.value; }
inline bool operator<=(const Var& a, const Var& b) { return a.value <= b.value; }
inline bool operator>=(const Var& a, const Var& b) { return a.value >= b.value; }
inline bool operator==(const Var& a, const Var& b) { return a.value == b.value; }
inline bool operator!=(const Var& a, const Var& b) { return a.value != b.value; }

inline Var sqrt(const Var& a) {
  const double s = std::sqrt(a.value);
  return detail::unary(a, s, 0.5 / s);
}
inline Var sin(const Var& a) { return detail::unary(a, std::sin(a.value), std::cos(a.value)); }
inline Var cos(const Var& a) { return detail::unary(a, std::cos(a.value), -std::sin(a.value)); }
inline Var exp(const Var& a) {
  const double e = std::exp(a.value);
  return detail::unary(a, e, e);
}
inline Var log(const Var& a) { return detail::unary(a, std::log(a.value), 1.0 / a.value); }
inline Var tanh(const Var& a) {
  const double t = std::tanh(a.value);
  return detail::unary(a, t, 1.0 - t * t);
}
inline Var pow(const Var& a, double p) {
  return detail::unary(a, std::pow(a.value, p), p * std::pow(a.value, p - 1.0));
}
inline Var abs(const Var& a) { return a.value < 0.0 ? -a : a; }

}  // namespace blocktr1

namespace Eigen {

template <>
struct NumTraits<blocktr1::Dual> : NumTraits<double> {
  using Real = blocktr1::Dual;
  using NonInteger = blocktr1::Dual;
  using Nested = blocktr1::Dual;
  using Literal = blocktr1::Dual;
  enum { IsComplex = 0, IsInteger = 0, IsSigned = 1, RequireInitialization = 1,
         ReadCost = 2, AddCost = 2, MulCost = 3 };
};

template <>
struct NumTraits<blocktr1::Var> : NumTraits<double> {
  using Real = blocktr1::Var;
  using NonInteger = blocktr1::Var;
  using Nested = blocktr1::Var;
  using Literal = blocktr1::Var;
  enum { IsComplex = 0, IsInteger = 0, IsSigned = 1, RequireInitialization = 1,
         ReadCost = 2, AddCost = 4, MulCost = 4 };
};

}  // namespace Eigen

namespace blocktr1 {

template <class T>
using VecX = Eigen::Matrix<T, Eigen::Dynamic, 1>;
using DualVector = VecX<Dual>;
using VarVector = VecX<Var>;

/// Counts of derivative work, used to check which phase of an algorithm
/// touches the model.
struct AdCounters {
  std::atomic<std::int64_t> evaluations{0};
  std::atomic<std::int64_t> forward_passes{0};
  std::atomic<std::int64_t> reverse_sweeps{0};

  void reset() {
    evaluations = 0;
    forward_passes = 0;
    reverse_sweeps = 0;
  }
};
AdCounters& ad_counters();

/// A smooth map R^n -> R^m evaluable on double, Dual and Var scalars.
class VectorFunction {
 public:
  VectorFunction() = default;

  /// `f` must be callable as `f(const VecX<T>&) -> VecX<T>` for each of
  /// double, Dual and Var (a generic lambda).
  template <class F>
  VectorFunction(Eigen::Index input_dim, Eigen::Index output_dim, F f)
      : input_dim_(input_dim),
        output_dim_(output_dim),
        real_([f](const Eigen::VectorXd& x) { return Eigen::VectorXd(f(x)); }),
        dual_([f](const DualVector& x) { return DualVector(f(x)); }),
        var_([f](const VarVector& x) { return VarVector(f(x)); }) {}

  Eigen::Index input_dim() const { return input_dim_; }
  Eigen::Index output_dim() const { return output_dim_; }
  bool empty() const { return !real_; }

  Eigen::VectorXd operator()(const Eigen::VectorXd& x) const;
  DualVector operator()(const DualVector& x) const;
  VarVector operator()(const VarVector& x) const;

 private:
  void check_input(Eigen::Index n) const;
  void check_output(Eigen::Index m) const;

  Eigen::Index input_dim_ = 0;
  Eigen::Index output_dim_ = 0;
  std::function<Eigen::VectorXd(const Eigen::VectorXd&)> real_;
  std::function<DualVector(const DualVector&)> dual_;
  std::function<VarVector(const VarVector&)> var_;
};

/// Exact Jacobian, one dual pass per column.
Eigen::MatrixXd jacobian(const VectorFunction& fn, const Eigen::VectorXd& point);

/// J(point)^T seed by a single reverse sweep.
Eigen::VectorXd vjp(const VectorFunction& fn, const Eigen::VectorXd& point,
                    const Eigen::VectorXd& seed);

/// J(point) direction by a single dual pass.
Eigen::VectorXd directional_derivative(const VectorFunction& fn,
                                       const Eigen::VectorXd& point,
                                       const Eigen::VectorXd& direction);

/// Value and J^T seed in one recording. Used by integrator sweeps.
Eigen::VectorXd vjp_with_value(const VectorFunction& fn, const Eigen::VectorXd& point,
                               const Eigen::VectorXd& seed, Eigen::VectorXd* value);

/// Seeds a dual vector with value `point` and derivative `direction`.
DualVector make_dual(const Eigen::VectorXd& point, const Eigen::VectorXd& direction);
Eigen::VectorXd dual_values(const DualVector& v);
Eigen::VectorXd dual_derivatives(const DualVector& v);

}  // namespace blocktr1
