#include "blocktr1/diagnostics.hpp"

#include <Eigen/Dense>

#include <cmath>

#include "blocktr1/errors.hpp"

namespace blocktr1 {

Eigen::MatrixXd null_space(const Eigen::MatrixXd& P_A, int n) {
  const auto m = P_A.rows();
  if (m == 0) return Eigen::MatrixXd::Identity(n, n);
  require_dim(P_A.cols(), n, "null_space columns");
  if (m > n) throw NumericalError("null_space: more active rows than variables (LICQ violated)");
  const Eigen::HouseholderQR<Eigen::MatrixXd> qr(P_A.transpose());
  const Eigen::MatrixXd R = qr.matrixQR().topRows(m).triangularView<Eigen::Upper>();
  const double scale = std::max(1.0, P_A.cwiseAbs().maxCoeff());
  for (Eigen::Index k = 0; k < m; ++k) {
    if (std::abs(R(k, k)) <= 1e-12 * scale) {
      throw NumericalError("null_space: active rows are linearly dependent (LICQ violated)");
    }
  }
  const Eigen::MatrixXd Q = qr.householderQ() * Eigen::MatrixXd::Identity(n, n);
  return Q.rightCols(n - m);
}

Eigen::MatrixXd NullSpaceBasis::full() const {
  Eigen::Index rows = 0;
  Eigen::Index cols = 0;
  for (const auto& N : stage) {
    rows += N.rows();
    cols += N.cols();
  }
  Eigen::MatrixXd out = Eigen::MatrixXd::Zero(rows, cols);
  Eigen::Index r = 0;
  Eigen::Index c = 0;
  for (const auto& N : stage) {
    out.block(r, c, N.rows(), N.cols()) = N;
    r += N.rows();
    c += N.cols();
  }
  return out;
}

NullSpaceBasis null_space(const std::vector<Eigen::MatrixXd>& P_A_rows) {
  NullSpaceBasis b;
  b.stage.reserve(P_A_rows.size());
  for (const auto& P : P_A_rows) b.stage.push_back(null_space(P, static_cast<int>(P.cols())));
  return b;
}

double projected_jacobian_error(const Eigen::MatrixXd& A, const Eigen::MatrixXd& J_exact,
                                const Eigen::MatrixXd& N, MatrixNorm norm) {
  require_dim(A.rows(), J_exact.rows(), "projected_jacobian_error rows");
  require_dim(A.cols(), J_exact.cols(), "projected_jacobian_error cols");
  if (N.cols() == 0) return 0.0;
  require_dim(N.rows(), A.cols(), "projected_jacobian_error N rows");
  const Eigen::MatrixXd E = (A - J_exact) * N;
  if (norm == MatrixNorm::frobenius) return E.norm();
  const Eigen::JacobiSVD<Eigen::MatrixXd> svd(E);
  return svd.singularValues().size() > 0 ? svd.singularValues()[0] : 0.0;
}

double projected_jacobian_error(const Eigen::MatrixXd& A, const OcpModel& model,
                                const Eigen::VectorXd& w_star, const Eigen::MatrixXd& N,
                                MatrixNorm norm) {
  return projected_jacobian_error(A, shooting_jacobian(model, w_star), N, norm);
}

RateEstimate estimate_rate(const std::vector<double>& errors, int tail) {
  if (tail < 1) throw ConfigError("estimate_rate: tail must be >= 1");
  if (static_cast<int>(errors.size()) < tail + 1) {
    throw ConfigError("estimate_rate: need at least tail + 1 entries");
  }
  RateEstimate est;
  double log_sum = 0.0;
  const std::size_t n = errors.size();
  for (std::size_t k = n - tail - 1; k + 1 < n; ++k) {
    if (!(errors[k] > 0.0) || !(errors[k + 1] > 0.0)) {
      throw ConfigError("estimate_rate: entries must be positive");
    }
    const double q = errors[k + 1] / errors[k];
    if (q >= 1.0) est.insufficient_decay = true;
    log_sum += std::log(q);
  }
  est.rate = std::exp(log_sum / tail);
  return est;
}

std::vector<Eigen::MatrixXd> active_rows(const OcpModel& model, const std::vector<int>& active_set) {
  const std::vector<int> off = path_row_offsets(model);
  std::vector<std::vector<int>> rows(model.N + 1);
  for (int id : active_set) {
    const RowId r = locate_row(off, id);
    rows[r.stage].push_back(r.row);
  }
  std::vector<Eigen::MatrixXd> out(model.N + 1);
  for (int i = 0; i <= model.N; ++i) {
    const int extra = i == 0 ? model.nx : 0;
    Eigen::MatrixXd P = Eigen::MatrixXd::Zero(extra + static_cast<int>(rows[i].size()), model.nw(i));
    if (extra > 0) P.leftCols(model.nx).setIdentity();
    for (std::size_t k = 0; k < rows[i].size(); ++k) {
      P.row(extra + static_cast<int>(k)) = model.path_rows[i].row(rows[i][k]);
    }
    out[i] = P;
  }
  return out;
}

Eigen::MatrixXd lagrangian_hessian(const OcpModel& model, int stage, const Eigen::VectorXd& w,
                                   const Eigen::VectorXd& lambda, double step) {
  const int n = model.nw(stage);
  require_dim(w.size(), n, "lagrangian_hessian w");
  auto grad = [&](const Eigen::VectorXd& v) {
    Eigen::VectorXd g = objective_gradient(model, stage, v);
    if (stage < model.N && lambda.squaredNorm() > 0.0) g += shooting_adjoint(model, v, lambda);
    return g;
  };
  Eigen::MatrixXd Hs(n, n);
  for (int j = 0; j < n; ++j) {
    const double hj = step * std::max(1.0, std::abs(w[j]));
    Eigen::VectorXd wp = w;
    Eigen::VectorXd wm = w;
    wp[j] += hj;
    wm[j] -= hj;
    Hs.col(j) = (grad(wp) - grad(wm)) / (2.0 * hj);
  }
  return 0.5 * (Hs + Hs.transpose());
}

namespace {

Eigen::MatrixXd reduced_matrix(const std::vector<Eigen::MatrixXd>& H,
                               const std::vector<Eigen::MatrixXd>& A, const NullSpaceBasis& N) {
  const int ns = static_cast<int>(N.stage.size());
  require_dim(static_cast<long>(H.size()), ns, "reduced_kkt H blocks");
  require_dim(static_cast<long>(A.size()), ns - 1, "reduced_kkt A blocks");
  const Eigen::MatrixXd Nf = N.full();
  const Eigen::Index nW = Nf.rows();
  Eigen::MatrixXd Hf = Eigen::MatrixXd::Zero(nW, nW);
  Eigen::Index m = 0;
  for (const auto& a : A) m += a.rows();
  Eigen::MatrixXd Af = Eigen::MatrixXd::Zero(m, nW);
  Eigen::Index o = 0;
  Eigen::Index r = 0;
  for (int i = 0; i < ns; ++i) {
    const Eigen::Index nw = N.stage[i].rows();
    require_dim(H[i].rows(), nw, "reduced_kkt H block size");
    Hf.block(o, o, nw, nw) = H[i];
    if (i + 1 < ns) {
      Af.block(r, o, A[i].rows(), nw) = A[i];
      Af.block(r, o + nw, A[i].rows(), A[i].rows()) =
          -Eigen::MatrixXd::Identity(A[i].rows(), A[i].rows());
      r += A[i].rows();
    }
    o += nw;
  }
  const Eigen::Index q = Nf.cols();
  Eigen::MatrixXd K = Eigen::MatrixXd::Zero(q + m, q + m);
  K.topLeftCorner(q, q) = Nf.transpose() * Hf * Nf;
  K.topRightCorner(q, m) = (Af * Nf).transpose();
  K.bottomLeftCorner(m, q) = Af * Nf;
  return K;
}

}  // namespace

double reduced_kkt_error(const std::vector<Eigen::MatrixXd>& H, const std::vector<Eigen::MatrixXd>& A,
                         const std::vector<Eigen::MatrixXd>& H_exact,
                         const std::vector<Eigen::MatrixXd>& A_exact, const NullSpaceBasis& N) {
  return (reduced_matrix(H, A, N) - reduced_matrix(H_exact, A_exact, N)).norm();
}

double reduced_kkt_error(const std::vector<Eigen::MatrixXd>& H, const std::vector<Eigen::MatrixXd>& A,
                         const OcpModel& model, const Iterate& star, const NullSpaceBasis& N) {
  std::vector<Eigen::MatrixXd> He(model.N + 1);
  std::vector<Eigen::MatrixXd> Ae(model.N);
  for (int i = 0; i <= model.N; ++i) {
    const Eigen::VectorXd lam = i < model.N ? star.lambda[i] : Eigen::VectorXd();
    He[i] = lagrangian_hessian(model, i, star.w(i), lam);
    if (i < model.N) Ae[i] = shooting_jacobian(model, star.w(i));
  }
  return reduced_kkt_error(H, A, He, Ae, N);
}

double distance_to_solution(const Iterate& it, const Iterate& star) {
  return std::sqrt((it.primal() - star.primal()).squaredNorm() +
                   (it.dual() - star.dual()).squaredNorm());
}

SolutionReference compute_reference(const OcpModel& model, const Iterate& initial, double tol,
                                    int max_iter) {
  SqpOptions opts;
  opts.strategy = JacobianStrategy::exact;
  opts.hessian = HessianType::gauss_newton;
  opts.tol = tol;
  opts.max_iter = max_iter;
  opts.record_history = true;
  const SqpResult run = run_sqp(model, opts, initial);
  if (!run.converged) {
    throw NumericalError("compute_reference: exact Gauss-Newton run did not converge (" +
                         run.status + ")");
  }
  SolutionReference ref;
  ref.star = run.solution;
  ref.active_set = run.active_set;
  ref.iterations = static_cast<int>(run.records.size());
  ref.kkt = run.records.empty() ? 0.0 : run.records.back().kkt;
  ref.exact_jacobians.resize(model.N);
  for (int i = 0; i < model.N; ++i) ref.exact_jacobians[i] = shooting_jacobian(model, ref.star.w(i));
  ref.null_basis = null_space(active_rows(model, ref.active_set));
  for (const Iterate& h : run.history) ref.gn_errors.push_back(distance_to_solution(h, ref.star));
  return ref;
}

std::vector<double> stage_projected_errors(const SolutionReference& ref,
                                           const std::vector<Eigen::MatrixXd>& A) {
  std::vector<double> out(A.size());
  for (std::size_t i = 0; i < A.size(); ++i) {
    out[i] = projected_jacobian_error(A[i], ref.exact_jacobians[i], ref.null_basis.stage[i]);
  }
  return out;
}

std::vector<double> stage_unprojected_errors(const SolutionReference& ref,
                                             const std::vector<Eigen::MatrixXd>& A) {
  std::vector<double> out(A.size());
  for (std::size_t i = 0; i < A.size(); ++i) out[i] = (A[i] - ref.exact_jacobians[i]).norm();
  return out;
}

std::function<double(const std::vector<Eigen::MatrixXd>&)> make_projected_error_monitor(
    const SolutionReference& ref) {
  return [ref](const std::vector<Eigen::MatrixXd>& A) {
    double sq = 0.0;
    for (double e : stage_projected_errors(ref, A)) sq += e * e;
    return std::sqrt(sq);
  };
}

}  // namespace blocktr1
