#include "blocktr1/block_qp.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <limits>
#include <set>

#include "blocktr1/errors.hpp"

namespace blocktr1 {

std::string to_string(QpStatus status) {
  switch (status) {
    case QpStatus::optimal:
      return "optimal";
    case QpStatus::infeasible:
      return "infeasible";
    case QpStatus::max_iterations:
      return "max_iterations";
    case QpStatus::degenerate:
      return "degenerate";
  }
  return "unknown";
}

void validate_stages(const std::vector<StageQpData>& stages) {
  if (stages.empty()) throw DimensionError("solve_qp: no stages");
  const std::size_t n = stages.size();
  for (std::size_t i = 0; i < n; ++i) {
    const StageQpData& s = stages[i];
    const int nw = s.nw();
    require_dim(s.H.rows(), nw, "StageQpData H rows");
    require_dim(s.H.cols(), nw, "StageQpData H cols");
    if (s.A.rows() > 0 || s.A.cols() > 0) require_dim(s.A.cols(), nw, "StageQpData A cols");
    require_dim(s.a.size(), s.A.rows(), "StageQpData a");
    if (s.P.rows() > 0) require_dim(s.P.cols(), nw, "StageQpData P cols");
    require_dim(s.p.size(), s.P.rows(), "StageQpData p");
    if (s.Eq.rows() > 0) require_dim(s.Eq.cols(), nw, "StageQpData Eq cols");
    require_dim(s.eq.size(), s.Eq.rows(), "StageQpData eq");
    if (i + 1 == n) {
      require_dim(s.A.rows(), 0, "StageQpData A rows on the last stage");
    } else if (s.A.rows() > stages[i + 1].nw()) {
      throw DimensionError("StageQpData: coupling rows exceed the next stage's size");
    }
  }
}

std::vector<int> qp_row_offsets(const std::vector<StageQpData>& stages) {
  std::vector<int> off(stages.size() + 1, 0);
  for (std::size_t i = 0; i < stages.size(); ++i) off[i + 1] = off[i] + stages[i].num_rows();
  return off;
}

double qp_objective(const std::vector<StageQpData>& stages, const std::vector<Eigen::VectorXd>& w) {
  double v = 0.0;
  for (std::size_t i = 0; i < stages.size(); ++i) {
    v += 0.5 * w[i].dot(stages[i].H * w[i]) + stages[i].h.dot(w[i]);
  }
  return v;
}

namespace {

// General band matrix with partial-pivoting LU, LAPACK gbtrf layout.
class BandLu {
 public:
  BandLu(int n, int kl, int ku)
      : n_(n), kl_(kl), ku_(ku), ld_(2 * kl + ku + 1), ab_(static_cast<std::size_t>(ld_) * n, 0.0),
        piv_(n) {}

  double& at(int i, int j) { return ab_[static_cast<std::size_t>(j) * ld_ + kl_ + ku_ + i - j]; }

  bool factor(double pivot_tol) {
    int ju = 0;
    for (int j = 0; j < n_; ++j) {
      const int km = std::min(kl_, n_ - 1 - j);
      int p = j;
      double best = std::abs(at(j, j));
      for (int i = j + 1; i <= j + km; ++i) {
        const double v = std::abs(at(i, j));
        if (v > best) {
          best = v;
          p = i;
        }
      }
      piv_[j] = p;
      if (!(best > pivot_tol)) return false;
      ju = std::max(ju, std::min(j + ku_ + (p - j), n_ - 1));
      if (p != j) {
        for (int c = j; c <= ju; ++c) std::swap(at(j, c), at(p, c));
      }
      const double inv = 1.0 / at(j, j);
      for (int i = j + 1; i <= j + km; ++i) at(i, j) *= inv;
      for (int c = j + 1; c <= ju; ++c) {
        const double ujc = at(j, c);
        if (ujc == 0.0) continue;
        for (int i = j + 1; i <= j + km; ++i) at(i, c) -= at(i, j) * ujc;
      }
    }
    return true;
  }

  void solve(Eigen::VectorXd& b) {
    for (int j = 0; j < n_; ++j) {
      if (piv_[j] != j) std::swap(b[j], b[piv_[j]]);
      const int km = std::min(kl_, n_ - 1 - j);
      for (int i = j + 1; i <= j + km; ++i) b[i] -= at(i, j) * b[j];
    }
    const int kuu = kl_ + ku_;
    for (int j = n_ - 1; j >= 0; --j) {
      b[j] /= at(j, j);
      const int lo = std::max(0, j - kuu);
      for (int i = lo; i < j; ++i) b[i] -= at(i, j) * b[j];
    }
  }

 private:
  int n_;
  int kl_;
  int ku_;
  int ld_;
  std::vector<double> ab_;
  std::vector<int> piv_;
};

struct Entry {
  int r;
  int c;
  double v;
};

struct KktLayout {
  std::vector<int> off_w;
  std::vector<int> off_nu;
  std::vector<int> off_lam;
  std::vector<std::vector<int>> working_rows;  // per stage local row indices
  std::vector<std::vector<int>> working_pos;   // position in the caller's working set
  int n = 0;
};

KktLayout make_layout(const std::vector<StageQpData>& stages, const std::vector<int>& working_set) {
  const std::vector<int> off = qp_row_offsets(stages);
  KktLayout L;
  const std::size_t ns = stages.size();
  L.working_rows.resize(ns);
  L.working_pos.resize(ns);
  for (std::size_t k = 0; k < working_set.size(); ++k) {
    const int id = working_set[k];
    if (id < 0 || id >= off.back()) {
      throw DimensionError("working set row id " + std::to_string(id) + " out of range");
    }
    const int stage = static_cast<int>(std::upper_bound(off.begin(), off.end(), id) - off.begin()) - 1;
    L.working_rows[stage].push_back(id - off[stage]);
    L.working_pos[stage].push_back(static_cast<int>(k));
  }
  L.off_w.resize(ns);
  L.off_nu.resize(ns);
  L.off_lam.resize(ns);
  int o = 0;
  for (std::size_t i = 0; i < ns; ++i) {
    L.off_w[i] = o;
    o += stages[i].nw();
    L.off_nu[i] = o;
    o += static_cast<int>(stages[i].Eq.rows() + L.working_rows[i].size());
    L.off_lam[i] = o;
    o += static_cast<int>(stages[i].A.rows());
  }
  L.n = o;
  return L;
}

void assemble(const std::vector<StageQpData>& stages, const KktLayout& L, double reg,
              std::vector<Entry>& entries, Eigen::VectorXd& rhs) {
  entries.clear();
  rhs = Eigen::VectorXd::Zero(L.n);
  auto add = [&entries](int r, int c, double v) {
    if (v != 0.0) entries.push_back({r, c, v});
  };
  const std::size_t ns = stages.size();
  for (std::size_t i = 0; i < ns; ++i) {
    const StageQpData& s = stages[i];
    const int ow = L.off_w[i];
    const int on = L.off_nu[i];
    const int ol = L.off_lam[i];
    const int nw = s.nw();
    for (int c = 0; c < nw; ++c) {
      for (int r = 0; r < nw; ++r) add(ow + r, ow + c, s.H(r, c));
      if (reg != 0.0) entries.push_back({ow + c, ow + c, reg});
    }
    rhs.segment(ow, nw) = -s.h;
    int row = on;
    for (int e = 0; e < s.Eq.rows(); ++e, ++row) {
      for (int c = 0; c < nw; ++c) {
        add(row, ow + c, s.Eq(e, c));
        add(ow + c, row, s.Eq(e, c));
      }
      rhs[row] = s.eq[e];
    }
    for (int r : L.working_rows[i]) {
      for (int c = 0; c < nw; ++c) {
        add(row, ow + c, s.P(r, c));
        add(ow + c, row, s.P(r, c));
      }
      rhs[row] = s.p[r];
      ++row;
    }
    for (int d = 0; d < s.A.rows(); ++d) {
      for (int c = 0; c < nw; ++c) {
        add(ol + d, ow + c, s.A(d, c));
        add(ow + c, ol + d, s.A(d, c));
      }
      const int onext = L.off_w[i + 1];
      entries.push_back({ol + d, onext + d, -1.0});
      entries.push_back({onext + d, ol + d, -1.0});
      rhs[ol + d] = -s.a[d];
    }
  }
}

KktResult unpack(const std::vector<StageQpData>& stages, const KktLayout& L,
                 const Eigen::VectorXd& sol, std::size_t n_working) {
  KktResult res;
  const std::size_t ns = stages.size();
  res.w.resize(ns);
  res.nu.resize(ns);
  res.lambda.resize(ns);
  res.mu_working = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(n_working));
  for (std::size_t i = 0; i < ns; ++i) {
    res.w[i] = sol.segment(L.off_w[i], stages[i].nw());
    const int neq = static_cast<int>(stages[i].Eq.rows());
    res.nu[i] = sol.segment(L.off_nu[i], neq);
    for (std::size_t k = 0; k < L.working_rows[i].size(); ++k) {
      res.mu_working[L.working_pos[i][k]] = sol[L.off_nu[i] + neq + static_cast<int>(k)];
    }
    res.lambda[i] = sol.segment(L.off_lam[i], stages[i].A.rows());
  }
  res.ok = sol.allFinite();
  return res;
}

}  // namespace

KktResult kkt_solve_structured(const std::vector<StageQpData>& stages,
                               const std::vector<int>& working_set) {
  const KktLayout L = make_layout(stages, working_set);
  std::vector<Entry> entries;
  Eigen::VectorXd rhs;
  for (int attempt = 0; attempt < 2; ++attempt) {
    const double reg = attempt == 0 ? 0.0 : 1e-10;
    assemble(stages, L, reg, entries, rhs);
    int kl = 0;
    int ku = 0;
    double scale = 0.0;
    for (const Entry& e : entries) {
      kl = std::max(kl, e.r - e.c);
      ku = std::max(ku, e.c - e.r);
      scale = std::max(scale, std::abs(e.v));
    }
    BandLu lu(L.n, kl, ku);
    for (const Entry& e : entries) lu.at(e.r, e.c) += e.v;
    if (!lu.factor(1e-12 * std::max(scale, 1.0))) continue;
    Eigen::VectorXd x = rhs;
    lu.solve(x);
    KktResult res = unpack(stages, L, x, working_set.size());
    res.regularized = attempt == 1;
    if (res.ok) return res;
  }
  KktResult fail;
  fail.ok = false;
  return fail;
}

KktResult kkt_solve_dense(const std::vector<StageQpData>& stages,
                          const std::vector<int>& working_set) {
  const KktLayout L = make_layout(stages, working_set);
  std::vector<Entry> entries;
  Eigen::VectorXd rhs;
  assemble(stages, L, 0.0, entries, rhs);
  Eigen::MatrixXd K = Eigen::MatrixXd::Zero(L.n, L.n);
  for (const Entry& e : entries) K(e.r, e.c) += e.v;
  const Eigen::FullPivLU<Eigen::MatrixXd> lu(K);
  if (lu.rank() < L.n) {
    KktResult fail;
    fail.ok = false;
    return fail;
  }
  return unpack(stages, L, lu.solve(rhs), working_set.size());
}

namespace {

double row_slack(const StageQpData& s, int r, const Eigen::VectorXd& w) {
  return s.P.row(r).dot(w) - s.p[r];
}

double max_violation(const std::vector<StageQpData>& stages, const std::vector<Eigen::VectorXd>& w) {
  double v = 0.0;
  for (std::size_t i = 0; i < stages.size(); ++i) {
    if (stages[i].num_rows() == 0) continue;
    v = std::max(v, (stages[i].P * w[i] - stages[i].p).maxCoeff());
  }
  return v;
}

struct LoopResult {
  KktResult kkt;
  std::vector<Eigen::VectorXd> w;
  std::vector<int> working;
  QpStatus status = QpStatus::optimal;
  int iterations = 0;
  int kkt_solves = 0;
};

// Primal active-set iterations from a feasible point w whose working rows are active.
LoopResult active_set_loop(const std::vector<StageQpData>& stages, std::vector<Eigen::VectorXd> w,
                           std::vector<int> working, const QpOptions& opts, int max_iter,
                           KktResult first) {
  const std::vector<int> off = qp_row_offsets(stages);
  const int total_rows = off.back();
  LoopResult out;
  KktResult eqp = std::move(first);
  bool have_eqp = eqp.ok;
  for (;;) {
    if (!have_eqp) {
      eqp = kkt_solve_structured(stages, working);
      ++out.kkt_solves;
      if (!eqp.ok) {
        out.status = QpStatus::degenerate;
        break;
      }
    }
    have_eqp = false;

    double dnorm = 0.0;
    double wnorm = 0.0;
    std::vector<Eigen::VectorXd> d(stages.size());
    for (std::size_t i = 0; i < stages.size(); ++i) {
      d[i] = eqp.w[i] - w[i];
      dnorm = std::max(dnorm, d[i].lpNorm<Eigen::Infinity>());
      wnorm = std::max(wnorm, w[i].lpNorm<Eigen::Infinity>());
    }

    if (dnorm <= 1e-12 * (1.0 + wnorm)) {
      w = eqp.w;
      int drop = -1;
      double most_negative = -opts.multiplier_tol;
      for (std::size_t k = 0; k < working.size(); ++k) {
        const double m = eqp.mu_working[static_cast<Eigen::Index>(k)];
        if (m < most_negative || (drop >= 0 && m == most_negative && working[k] < working[drop])) {
          most_negative = m;
          drop = static_cast<int>(k);
        }
      }
      if (drop < 0) {
        out.status = QpStatus::optimal;
        break;
      }
      working.erase(working.begin() + drop);
    } else {
      double t = 1.0;
      int blocking = -1;
      std::set<int> in_working(working.begin(), working.end());
      for (int id = 0; id < total_rows; ++id) {
        if (in_working.count(id) != 0) continue;
        const int stage =
            static_cast<int>(std::upper_bound(off.begin(), off.end(), id) - off.begin()) - 1;
        const int r = id - off[stage];
        const StageQpData& s = stages[stage];
        const double pd = s.P.row(r).dot(d[stage]);
        if (pd <= 1e-14 * (1.0 + s.P.row(r).lpNorm<Eigen::Infinity>() * dnorm)) continue;
        const double tj = std::max(0.0, -row_slack(s, r, w[stage])) / pd;
        if (tj < t - 1e-14 || (blocking < 0 && tj < t)) {
          t = tj;
          blocking = id;
        }
      }
      for (std::size_t i = 0; i < stages.size(); ++i) w[i] += t * d[i];
      if (blocking >= 0) {
        working.insert(std::upper_bound(working.begin(), working.end(), blocking), blocking);
      } else {
        w = eqp.w;
        have_eqp = true;
      }
    }
    ++out.iterations;
    if (out.iterations >= max_iter) {
      out.status = QpStatus::max_iterations;
      break;
    }
  }
  out.kkt = std::move(eqp);
  out.w = std::move(w);
  out.working = std::move(working);
  return out;
}

QpSolution finish(const std::vector<StageQpData>& stages, const LoopResult& lr, int extra_solves) {
  QpSolution sol;
  const std::vector<int> off = qp_row_offsets(stages);
  sol.status = lr.status;
  sol.iterations = lr.iterations;
  sol.kkt_solves = lr.kkt_solves + extra_solves;
  sol.dw = lr.w;
  sol.active_set = lr.working;
  const std::size_t ns = stages.size();
  sol.mu.resize(ns);
  sol.lambda.resize(ns);
  sol.nu.resize(ns);
  for (std::size_t i = 0; i < ns; ++i) {
    sol.mu[i] = Eigen::VectorXd::Zero(stages[i].num_rows());
    if (lr.kkt.ok) {
      sol.lambda[i] = lr.kkt.lambda[i];
      sol.nu[i] = lr.kkt.nu[i];
    } else {
      sol.lambda[i] = Eigen::VectorXd::Zero(stages[i].A.rows());
      sol.nu[i] = Eigen::VectorXd::Zero(stages[i].Eq.rows());
    }
  }
  if (lr.kkt.ok) {
    for (std::size_t k = 0; k < lr.working.size(); ++k) {
      const int id = lr.working[k];
      const int stage =
          static_cast<int>(std::upper_bound(off.begin(), off.end(), id) - off.begin()) - 1;
      sol.mu[stage][id - off[stage]] = lr.kkt.mu_working[static_cast<Eigen::Index>(k)];
    }
  }
  sol.objective = qp_objective(stages, sol.dw);
  return sol;
}

}  // namespace

QpSolution solve_qp(const std::vector<StageQpData>& stages,
                    const std::vector<int>& warm_active_set, const QpOptions& opts) {
  validate_stages(stages);
  const std::vector<int> off = qp_row_offsets(stages);
  const int total_rows = off.back();
  const int max_iter = opts.max_iterations >= 0 ? opts.max_iterations : 50 + 10 * total_rows;
  const std::size_t ns = stages.size();

  std::vector<int> warm(warm_active_set);
  std::sort(warm.begin(), warm.end());
  warm.erase(std::unique(warm.begin(), warm.end()), warm.end());
  for (int id : warm) {
    if (id < 0 || id >= total_rows) {
      throw DimensionError("solve_qp: warm-start row id " + std::to_string(id) + " out of range");
    }
  }

  int solves = 0;
  KktResult start = kkt_solve_structured(stages, warm);
  ++solves;
  if (start.ok && max_violation(stages, start.w) <= opts.feasibility_tol) {
    LoopResult lr = active_set_loop(stages, start.w, warm, opts, max_iter, start);
    return finish(stages, lr, solves);
  }
  KktResult unconstrained = start;
  if (!warm.empty() || !start.ok) {
    unconstrained = kkt_solve_structured(stages, {});
    ++solves;
    if (unconstrained.ok && max_violation(stages, unconstrained.w) <= opts.feasibility_tol) {
      LoopResult lr = active_set_loop(stages, unconstrained.w, {}, opts, max_iter, unconstrained);
      return finish(stages, lr, solves);
    }
  }

  // Phase 1 on (w, t): eps/2 |w - w_ref|^2 + 1/2 |t|^2 + sum t, P w - t <= p, -t <= 0.
  const double eps = opts.phase1_proximal_weight;
  std::vector<StageQpData> aug(ns);
  for (std::size_t i = 0; i < ns; ++i) {
    const StageQpData& s = stages[i];
    aug[i].H = Eigen::MatrixXd::Identity(s.nw(), s.nw()) * eps;
    aug[i].h = Eigen::VectorXd::Zero(s.nw());
    aug[i].A = s.A;
    aug[i].a = s.a;
    aug[i].Eq = s.Eq;
    aug[i].eq = s.eq;
  }
  KktResult ref = unconstrained;
  if (!ref.ok) {
    ref = kkt_solve_structured(aug, {});
    ++solves;
    if (!ref.ok) {
      QpSolution sol;
      sol.status = QpStatus::degenerate;
      sol.kkt_solves = solves;
      return sol;
    }
  }
  std::vector<Eigen::VectorXd> w1(ns);
  for (std::size_t i = 0; i < ns; ++i) {
    const StageQpData& s = stages[i];
    const int nw = s.nw();
    const int r = s.num_rows();
    StageQpData& g = aug[i];
    g.H = Eigen::MatrixXd::Zero(nw + r, nw + r);
    g.H.topLeftCorner(nw, nw).diagonal().setConstant(eps);
    g.H.bottomRightCorner(r, r).diagonal().setOnes();
    g.h.resize(nw + r);
    g.h.head(nw) = -eps * ref.w[i];
    g.h.tail(r).setOnes();
    if (s.A.rows() > 0) {
      g.A = Eigen::MatrixXd::Zero(s.A.rows(), nw + r);
      g.A.leftCols(nw) = s.A;
    } else {
      g.A = Eigen::MatrixXd::Zero(0, nw + r);
    }
    if (s.Eq.rows() > 0) {
      g.Eq = Eigen::MatrixXd::Zero(s.Eq.rows(), nw + r);
      g.Eq.leftCols(nw) = s.Eq;
    } else {
      g.Eq = Eigen::MatrixXd::Zero(0, nw + r);
    }
    g.P = Eigen::MatrixXd::Zero(2 * r, nw + r);
    g.p = Eigen::VectorXd::Zero(2 * r);
    if (r > 0) {
      g.P.topLeftCorner(r, nw) = s.P;
      g.P.topRightCorner(r, r) = -Eigen::MatrixXd::Identity(r, r);
      g.P.bottomRightCorner(r, r) = -Eigen::MatrixXd::Identity(r, r);
      g.p.head(r) = s.p;
    }
    w1[i].resize(nw + r);
    w1[i].head(nw) = ref.w[i];
    if (r > 0) w1[i].tail(r) = (s.P * ref.w[i] - s.p).cwiseMax(0.0);
  }
  const std::vector<int> off1 = qp_row_offsets(aug);
  const int max_iter1 = 50 + 10 * off1.back();
  LoopResult p1 = active_set_loop(aug, w1, {}, opts, max_iter1, KktResult{});
  solves += p1.kkt_solves;

  QpSolution fail;
  fail.phase1 = true;
  fail.iterations = p1.iterations;
  fail.kkt_solves = solves;
  if (p1.status != QpStatus::optimal) {
    fail.status = p1.status == QpStatus::max_iterations ? QpStatus::max_iterations
                                                        : QpStatus::degenerate;
    return fail;
  }
  double tmax = 0.0;
  std::vector<Eigen::VectorXd> w(ns);
  for (std::size_t i = 0; i < ns; ++i) {
    const int nw = stages[i].nw();
    w[i] = p1.w[i].head(nw);
    if (stages[i].num_rows() > 0) tmax = std::max(tmax, p1.w[i].tail(stages[i].num_rows()).maxCoeff());
  }
  if (tmax > opts.phase1_infeasibility_tol) {
    fail.status = QpStatus::infeasible;
    return fail;
  }

  const std::set<int> w1set(p1.working.begin(), p1.working.end());
  std::vector<int> working;
  for (std::size_t i = 0; i < ns; ++i) {
    const int r = stages[i].num_rows();
    for (int j = 0; j < r; ++j) {
      if (w1set.count(off1[i] + j) != 0 && w1set.count(off1[i] + r + j) != 0) {
        working.push_back(off[i] + j);
      }
    }
  }
  KktResult first = kkt_solve_structured(stages, working);
  ++solves;
  if (!first.ok) {
    working.clear();
    first = KktResult{};
  }
  LoopResult lr = active_set_loop(stages, w, working, opts, max_iter, first);
  QpSolution sol = finish(stages, lr, solves);
  sol.phase1 = true;
  sol.iterations += p1.iterations;
  return sol;
}

QpSolution solve_qp(std::vector<StageQpData> stages, const Eigen::VectorXd& initial_defect,
                    const std::vector<int>& warm_active_set, const QpOptions& opts) {
  if (stages.empty()) throw DimensionError("solve_qp: no stages");
  StageQpData& s0 = stages.front();
  const int nx = static_cast<int>(initial_defect.size());
  if (nx > s0.nw()) throw DimensionError("solve_qp: initial defect longer than stage 0");
  const Eigen::Index prev = s0.Eq.rows();
  Eigen::MatrixXd Eq = Eigen::MatrixXd::Zero(prev + nx, s0.nw());
  Eigen::VectorXd eq(prev + nx);
  Eq.topRows(nx).leftCols(nx).setIdentity();
  eq.head(nx) = initial_defect;
  if (prev > 0) {
    Eq.bottomRows(prev) = s0.Eq;
    eq.tail(prev) = s0.eq;
  }
  s0.Eq = Eq;
  s0.eq = eq;
  return solve_qp(stages, warm_active_set, opts);
}

double reduced_hessian_min_eigenvalue(const std::vector<StageQpData>& stages, int initial_rows) {
  validate_stages(stages);
  std::vector<int> off(stages.size() + 1, 0);
  for (std::size_t i = 0; i < stages.size(); ++i) off[i + 1] = off[i] + stages[i].nw();
  const int n = off.back();
  int m = initial_rows;
  for (const auto& s : stages) m += static_cast<int>(s.A.rows() + s.Eq.rows());
  Eigen::MatrixXd Ae = Eigen::MatrixXd::Zero(m, n);
  Eigen::MatrixXd H = Eigen::MatrixXd::Zero(n, n);
  int r = 0;
  for (int k = 0; k < initial_rows; ++k) Ae(r++, k) = 1.0;
  for (std::size_t i = 0; i < stages.size(); ++i) {
    const auto& s = stages[i];
    const int nw = s.nw();
    H.block(off[i], off[i], nw, nw) = s.H;
    for (int k = 0; k < s.A.rows(); ++k, ++r) {
      Ae.block(r, off[i], 1, nw) = s.A.row(k);
      Ae(r, off[i + 1] + k) = -1.0;
    }
    for (int k = 0; k < s.Eq.rows(); ++k, ++r) Ae.block(r, off[i], 1, nw) = s.Eq.row(k);
  }
  Eigen::MatrixXd Z;
  if (m == 0) {
    Z = Eigen::MatrixXd::Identity(n, n);
  } else {
    const Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(Ae.transpose());
    const int rank = static_cast<int>(qr.rank());
    if (rank == n) return std::numeric_limits<double>::infinity();
    const Eigen::MatrixXd Q = qr.householderQ();
    Z = Q.rightCols(n - rank);
  }
  const Eigen::MatrixXd R = Z.transpose() * H * Z;
  const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(0.5 * (R + R.transpose()), Eigen::EigenvaluesOnly);
  return es.eigenvalues().minCoeff();
}

double qp_kkt_residual(const std::vector<StageQpData>& stages, const QpSolution& sol) {
  double res = 0.0;
  auto upd = [&res](double v) { res = std::max(res, std::isfinite(v) ? std::abs(v) : INFINITY); };
  const std::size_t ns = stages.size();
  for (std::size_t i = 0; i < ns; ++i) {
    const StageQpData& s = stages[i];
    Eigen::VectorXd g = s.H * sol.dw[i] + s.h;
    if (s.A.rows() > 0) {
      g += s.A.transpose() * sol.lambda[i];
      upd((s.A * sol.dw[i] - sol.dw[i + 1].head(s.A.rows()) + s.a).lpNorm<Eigen::Infinity>());
    }
    if (i > 0 && stages[i - 1].A.rows() > 0) {
      g.head(stages[i - 1].A.rows()) -= sol.lambda[i - 1];
    }
    if (s.Eq.rows() > 0) {
      g += s.Eq.transpose() * sol.nu[i];
      upd((s.Eq * sol.dw[i] - s.eq).lpNorm<Eigen::Infinity>());
    }
    if (s.num_rows() > 0) {
      g += s.P.transpose() * sol.mu[i];
      const Eigen::VectorXd slack = s.P * sol.dw[i] - s.p;
      for (int r = 0; r < s.num_rows(); ++r) {
        upd(std::max(0.0, slack[r]));
        upd(std::max(0.0, -sol.mu[i][r]));
        upd(sol.mu[i][r] * slack[r]);
      }
    }
    upd(g.lpNorm<Eigen::Infinity>());
  }
  return res;
}

nlohmann::json qp_to_json(const std::vector<StageQpData>& stages) {
  auto mat = [](const Eigen::MatrixXd& M) {
    nlohmann::json rows = nlohmann::json::array();
    for (Eigen::Index r = 0; r < M.rows(); ++r) {
      std::vector<double> row(M.cols());
      for (Eigen::Index c = 0; c < M.cols(); ++c) row[c] = M(r, c);
      rows.push_back(row);
    }
    return rows;
  };
  auto vec = [](const Eigen::VectorXd& v) { return std::vector<double>(v.data(), v.data() + v.size()); };
  nlohmann::json out = nlohmann::json::array();
  for (const StageQpData& s : stages) {
    out.push_back({{"H", mat(s.H)}, {"h", vec(s.h)}, {"A", mat(s.A)}, {"a", vec(s.a)},
                   {"P", mat(s.P)}, {"p", vec(s.p)}, {"Eq", mat(s.Eq)}, {"eq", vec(s.eq)}});
  }
  return out;
}

}  // namespace blocktr1
