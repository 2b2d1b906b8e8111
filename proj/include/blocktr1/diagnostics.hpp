#pragma once

#include <Eigen/Core>

#include <functional>
#include <vector>

#include "blocktr1/ocp_model.hpp"
#include "blocktr1/sqp.hpp"

namespace blocktr1 {

/// Orthonormal basis of null(P_A) with n columns in the ambient space, via
/// Householder QR of P_A^T. Throws NumericalError when P_A is rank deficient.
Eigen::MatrixXd null_space(const Eigen::MatrixXd& P_A, int n);

struct NullSpaceBasis {
  std::vector<Eigen::MatrixXd> stage;  // N_i per stage
  /// Block-diagonal assembly over all stages.
  Eigen::MatrixXd full() const;
};
NullSpaceBasis null_space(const std::vector<Eigen::MatrixXd>& P_A_rows);

enum class MatrixNorm { frobenius, spectral };

/// |(A_i - J_exact) N_i| for a precomputed exact Jacobian.
double projected_jacobian_error(const Eigen::MatrixXd& A, const Eigen::MatrixXd& J_exact,
                                const Eigen::MatrixXd& N, MatrixNorm norm = MatrixNorm::frobenius);
/// Same with the exact Jacobian of the model's shooting map at w_star.
double projected_jacobian_error(const Eigen::MatrixXd& A, const OcpModel& model,
                                const Eigen::VectorXd& w_star, const Eigen::MatrixXd& N,
                                MatrixNorm norm = MatrixNorm::frobenius);

struct RateEstimate {
  double rate = 0.0;
  /// Some tail quotient was >= 1.
  bool insufficient_decay = false;
};
/// Geometric mean of the last `tail` quotients e_{k+1}/e_k.
RateEstimate estimate_rate(const std::vector<double>& errors, int tail = 5);

/// Active rows per stage at a solution, including the initial-state rows on stage 0.
std::vector<Eigen::MatrixXd> active_rows(const OcpModel& model, const std::vector<int>& active_set);

/// Hessian of the exact stage Lagrangian l_i(w) + lambda_i^T F_i(w) by central
/// differences of exact gradients.
Eigen::MatrixXd lagrangian_hessian(const OcpModel& model, int stage, const Eigen::VectorXd& w,
                                   const Eigen::VectorXd& lambda, double step = 1e-5);

/// Frobenius norm of [[N^T H N, N^T A^T], [A N, 0]] minus its exact counterpart at
/// (w*, lambda*). H and A are per-stage blocks; A spans the dynamics rows only.
double reduced_kkt_error(const std::vector<Eigen::MatrixXd>& H, const std::vector<Eigen::MatrixXd>& A,
                         const OcpModel& model, const Iterate& star, const NullSpaceBasis& N);
/// Variant with the exact Hessian blocks supplied by the caller.
double reduced_kkt_error(const std::vector<Eigen::MatrixXd>& H, const std::vector<Eigen::MatrixXd>& A,
                         const std::vector<Eigen::MatrixXd>& H_exact,
                         const std::vector<Eigen::MatrixXd>& A_exact, const NullSpaceBasis& N);

/// Ground truth from an exact-Jacobian Gauss-Newton run.
struct SolutionReference {
  Iterate star;
  std::vector<int> active_set;
  std::vector<Eigen::MatrixXd> exact_jacobians;
  NullSpaceBasis null_basis;
  std::vector<double> gn_errors;  // distance-to-solution of the reference run
  int iterations = 0;
  double kkt = 0.0;
};
SolutionReference compute_reference(const OcpModel& model, const Iterate& initial,
                                    double tol = 1e-12, int max_iter = 300);

/// Root-sum-square over stages of the projected Jacobian errors.
std::function<double(const std::vector<Eigen::MatrixXd>&)> make_projected_error_monitor(
    const SolutionReference& ref);
std::vector<double> stage_projected_errors(const SolutionReference& ref,
                                           const std::vector<Eigen::MatrixXd>& A);
std::vector<double> stage_unprojected_errors(const SolutionReference& ref,
                                             const std::vector<Eigen::MatrixXd>& A);

/// |(w, lambda) - (w*, lambda*)| in the Euclidean norm.
double distance_to_solution(const Iterate& it, const Iterate& star);

}  // namespace blocktr1
