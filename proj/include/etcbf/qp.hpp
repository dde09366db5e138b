#pragma once

#include <etcbf/numerics.hpp>

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <vector>

namespace etcbf::qp {

enum class Status { optimal, infeasible, numerical_failure };

/// Dense convex QP:  min ½ zᵀHz + cᵀz  s.t.  A z ≤ b,  box_lower ≤ z ≤ box_upper.
/// Box vectors may be empty (absent) or carry ±inf entries for unbounded
/// components.
struct QpProblem {
  Mat hessian;
  Vec linear_cost;
  Mat ineq_matrix;  // may have zero rows
  Vec ineq_bound;
  Vec box_lower;  // size 0 or n
  Vec box_upper;  // size 0 or n
  int max_iterations = 100;
};

struct QpSolution {
  Vec optimizer;  // empty unless status == optimal
  double objective = std::numeric_limits<double>::quiet_NaN();
  Status status = Status::numerical_failure;
  std::vector<int> active_set;  // row indices into the stacked constraint matrix
  Vec multipliers;              // one per stacked row, nonnegative
};

struct KktReport {
  double stationarity = 0.0;
  double primal = 0.0;
  double complementarity = 0.0;
  [[nodiscard]] bool within(double tol) const {
    return stationarity <= tol && primal <= tol && complementarity <= tol;
  }
};

namespace detail {

/// All inequality rows in one matrix: general rows first, then finite lower
/// bounds as -zᵢ ≤ -lo, then finite upper bounds as zᵢ ≤ hi. Multipliers and
/// active-set indices refer to this stacking.
inline void stack_rows(const QpProblem& p, Mat& A, Vec& b) {
  const Eigen::Index n = p.hessian.rows();
  const Eigen::Index m = p.ineq_matrix.rows();
  std::vector<std::pair<Eigen::Index, int>> box_rows;  // (dim, -1 lower / +1 upper)
  if (p.box_lower.size() == n) {
    for (Eigen::Index i = 0; i < n; ++i)
      if (std::isfinite(p.box_lower[i])) box_rows.emplace_back(i, -1);
  }
  if (p.box_upper.size() == n) {
    for (Eigen::Index i = 0; i < n; ++i)
      if (std::isfinite(p.box_upper[i])) box_rows.emplace_back(i, +1);
  }
  std::stable_sort(box_rows.begin(), box_rows.end(),
                   [](auto& a, auto& c) { return a.second < c.second; });
  A.setZero(m + static_cast<Eigen::Index>(box_rows.size()), n);
  b.resize(A.rows());
  if (m > 0) {
    A.topRows(m) = p.ineq_matrix;
    b.head(m) = p.ineq_bound;
  }
  for (size_t k = 0; k < box_rows.size(); ++k) {
    const Eigen::Index r = m + static_cast<Eigen::Index>(k);
    const auto [dim, side] = box_rows[k];
    if (side < 0) {
      A(r, dim) = -1.0;
      b[r] = -p.box_lower[dim];
    } else {
      A(r, dim) = 1.0;
      b[r] = p.box_upper[dim];
    }
  }
}

struct CoreResult {
  Vec z;
  std::vector<int> working;  // active rows at exit
  Vec lambda_w;              // multipliers for `working`, same order
  bool converged = false;
};

/// Primal active-set iteration from a feasible start. Equality subproblems are
/// solved through the full KKT system; ties are broken toward the lowest row
/// index both when blocking and when dropping.
inline CoreResult active_set_core(const Mat& H, const Vec& c, const Mat& A, const Vec& b,
                                  Vec z, int cap) {
  const Eigen::Index n = H.rows();
  const Eigen::Index m = A.rows();
  CoreResult res;
  std::vector<int> W;
  const double zero_step = 1e-11;
  const double lambda_tol = 1e-11 * std::max(1.0, H.cwiseAbs().maxCoeff());
  // Degenerate vertices can make the most-negative-multiplier drop rule cycle;
  // past this iteration count the drop switches to lowest-index selection,
  // which terminates finitely.
  const int bland_after = 3 * static_cast<int>(m) + 12;

  for (int it = 0; it < cap; ++it) {
    const Eigen::Index q = static_cast<Eigen::Index>(W.size());
    Mat kkt(n + q, n + q);
    kkt.setZero();
    kkt.topLeftCorner(n, n) = H;
    for (Eigen::Index j = 0; j < q; ++j) {
      kkt.block(0, n + j, n, 1) = A.row(W[static_cast<size_t>(j)]).transpose();
      kkt.block(n + j, 0, 1, n) = A.row(W[static_cast<size_t>(j)]);
    }
    Vec rhs(n + q);
    rhs.head(n) = -(H * z + c);
    rhs.tail(q).setZero();
    Eigen::FullPivLU<Mat> lu(kkt);
    if (!lu.isInvertible()) return res;  // degenerate working set
    const Vec sol = lu.solve(rhs);
    const Vec p = sol.head(n);
    const Vec lam = sol.tail(q);
    // Steps below the KKT solve's own noise floor (eps / rcond) carry no
    // information; counting them as zero lets ill-conditioned subproblems
    // terminate at the accuracy they actually support instead of stalling.
    const double noise =
        std::numeric_limits<double>::epsilon() / std::max(lu.rcond(), 1e-300);
    const double step_tol = std::max(zero_step, 64.0 * noise);

    if (p.lpNorm<Eigen::Infinity>() <= step_tol * std::max(1.0, z.lpNorm<Eigen::Infinity>())) {
      int drop_pos = -1;
      if (it >= bland_after) {
        for (Eigen::Index j = 0; j < q; ++j) {
          if (lam[j] < -lambda_tol &&
              (drop_pos < 0 ||
               W[static_cast<size_t>(j)] < W[static_cast<size_t>(drop_pos)])) {
            drop_pos = static_cast<int>(j);
          }
        }
      } else {
        double lam_min = -lambda_tol;
        for (Eigen::Index j = 0; j < q; ++j) {
          const double lj = lam[j];
          const int row = W[static_cast<size_t>(j)];
          if (lj < lam_min - 1e-15 ||
              (drop_pos >= 0 && lj <= lam_min + 1e-15 && row < W[static_cast<size_t>(drop_pos)])) {
            lam_min = lj;
            drop_pos = static_cast<int>(j);
          }
        }
      }
      if (drop_pos < 0) {
        res.z = z;
        res.working = W;
        res.lambda_w = lam;
        res.converged = true;
        return res;
      }
      W.erase(W.begin() + drop_pos);
      continue;
    }

    double alpha = 1.0;
    int blocker = -1;
    for (Eigen::Index i = 0; i < m; ++i) {
      if (std::find(W.begin(), W.end(), static_cast<int>(i)) != W.end()) continue;
      const double d = A.row(i).dot(p);
      if (d > 1e-13 * std::max(1.0, A.row(i).cwiseAbs().maxCoeff())) {
        const double ai = (b[i] - A.row(i).dot(z)) / d;
        if (ai < alpha) {
          alpha = ai;
          blocker = static_cast<int>(i);
        }
      }
    }
    if (alpha < 0.0) alpha = 0.0;  // heals tiny phase-1 residual infeasibility
    z += alpha * p;
    if (blocker >= 0 && alpha < 1.0) {
      // guard against dependent working sets
      Mat aw(static_cast<Eigen::Index>(W.size()) + 1, n);
      for (size_t j = 0; j < W.size(); ++j) aw.row(static_cast<Eigen::Index>(j)) = A.row(W[j]);
      aw.row(aw.rows() - 1) = A.row(blocker);
      Eigen::ColPivHouseholderQR<Mat> qr(aw.transpose());
      if (qr.rank() == aw.rows()) W.push_back(blocker);
    }
  }
  return res;  // iteration cap exceeded
}

}  // namespace detail

/// Residuals of the KKT system at solution.optimizer with the reported
/// multipliers over the stacked rows.
inline KktReport verify_kkt(const QpProblem& p, const QpSolution& s) {
  Mat A;
  Vec b;
  detail::stack_rows(p, A, b);
  if (s.multipliers.size() != A.rows() || s.optimizer.size() != p.hessian.rows()) {
    throw std::invalid_argument("verify_kkt: solution does not match problem shape");
  }
  KktReport r;
  const Vec grad = p.hessian * s.optimizer + p.linear_cost + A.transpose() * s.multipliers;
  r.stationarity = grad.size() ? grad.lpNorm<Eigen::Infinity>() : 0.0;
  for (Eigen::Index i = 0; i < A.rows(); ++i) {
    const double slack = A.row(i).dot(s.optimizer) - b[i];
    r.primal = std::max(r.primal, slack);
    r.complementarity = std::max(r.complementarity, std::abs(s.multipliers[i] * slack));
  }
  r.primal = std::max(r.primal, 0.0);
  return r;
}

inline QpSolution solve(const QpProblem& problem) {
  const Eigen::Index n = problem.hessian.rows();
  if (problem.hessian.cols() != n || problem.linear_cost.size() != n) {
    throw std::invalid_argument("qp::solve: inconsistent dimensions");
  }
  if (problem.ineq_matrix.rows() != problem.ineq_bound.size() ||
      (problem.ineq_matrix.rows() > 0 && problem.ineq_matrix.cols() != n)) {
    throw std::invalid_argument("qp::solve: inconsistent inequality rows");
  }
  const double h_scale = std::max(1.0, problem.hessian.cwiseAbs().maxCoeff());
  if ((problem.hessian - problem.hessian.transpose()).cwiseAbs().maxCoeff() > 1e-9 * h_scale) {
    throw std::invalid_argument("qp::solve: hessian not symmetric");
  }
  Mat H = 0.5 * (problem.hessian + problem.hessian.transpose());
  {
    Eigen::SelfAdjointEigenSolver<Mat> es(H);
    const double min_eig = es.eigenvalues().minCoeff();
    if (min_eig < -1e-10 * h_scale) {
      throw std::invalid_argument("qp::solve: hessian not positive semidefinite");
    }
    if (min_eig < 1e-12 * h_scale) {
      H += (1e-10 * h_scale) * Mat::Identity(n, n);  // semidefinite latitude
    }
  }

  Mat A;
  Vec b;
  detail::stack_rows(problem, A, b);
  const Eigen::Index m = A.rows();
  const double b_scale = m > 0 ? std::max(1.0, b.cwiseAbs().maxCoeff()) : 1.0;

  // Equilibrate the decision variables so mixed cost scales (force inputs vs
  // unit-scale relaxations) do not degrade the KKT solves. Multipliers and the
  // active set are unaffected; the optimizer is scaled back at the end.
  Vec d(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    d[i] = H(i, i) > 1e-12 * h_scale ? 1.0 / std::sqrt(H(i, i)) : 1.0;
  }
  const Mat D = d.asDiagonal();
  H = D * H * D;
  Vec c_s = D * problem.linear_cost;
  if (m > 0) A = A * D;

  QpSolution out;
  out.multipliers = Vec::Zero(m);

  // Phase 1: cheap candidates first, auxiliary QP only if needed. Work in the
  // scaled variables throughout.
  Vec z0 = Vec::Zero(n);
  if (problem.box_lower.size() == n) {
    for (Eigen::Index i = 0; i < n; ++i)
      if (std::isfinite(problem.box_lower[i])) z0[i] = std::max(z0[i], problem.box_lower[i] / d[i]);
  }
  if (problem.box_upper.size() == n) {
    for (Eigen::Index i = 0; i < n; ++i)
      if (std::isfinite(problem.box_upper[i])) z0[i] = std::min(z0[i], problem.box_upper[i] / d[i]);
  }
  const auto max_violation = [&](const Vec& z) {
    double v = 0.0;
    for (Eigen::Index i = 0; i < m; ++i) v = std::max(v, A.row(i).dot(z) - b[i]);
    return v;
  };
  if (max_violation(z0) > 1e-10 * b_scale) {
    // min ½ε(‖z‖²+t²) + t  s.t.  A z - t ≤ b,  -t ≤ 0; start from a slack
    // large enough to be strictly feasible.
    const double eps = 1e-6;
    Mat Ha = eps * Mat::Identity(n + 1, n + 1);
    Vec ca = Vec::Zero(n + 1);
    ca[n] = 1.0;
    Mat Aa(m + 1, n + 1);
    Aa.setZero();
    Aa.topLeftCorner(m, n) = A;
    Aa.col(n).head(m).setConstant(-1.0);
    Aa(m, n) = -1.0;
    Vec ba(m + 1);
    ba.head(m) = b;
    ba[m] = 0.0;
    Vec za = Vec::Zero(n + 1);
    za.head(n) = z0;
    za[n] = max_violation(z0) + 1.0;
    const auto aux = detail::active_set_core(Ha, ca, Aa, ba, za, 4 * problem.max_iterations);
    if (!aux.converged) {
      out.status = Status::numerical_failure;
      return out;
    }
    if (aux.z[n] > 1e-7 * b_scale) {
      out.status = Status::infeasible;
      return out;
    }
    z0 = aux.z.head(n);
  }

  const auto core = detail::active_set_core(H, c_s, A, b, z0, problem.max_iterations);
  if (!core.converged) {
    out.status = Status::numerical_failure;
    return out;
  }
  out.optimizer = D * core.z;
  out.status = Status::optimal;
  for (size_t j = 0; j < core.working.size(); ++j) {
    out.multipliers[core.working[j]] = std::max(0.0, core.lambda_w[static_cast<Eigen::Index>(j)]);
  }
  out.active_set = core.working;
  std::sort(out.active_set.begin(), out.active_set.end());
  out.objective =
      0.5 * out.optimizer.dot(problem.hessian * out.optimizer) + problem.linear_cost.dot(out.optimizer);
  return out;
}

}  // namespace etcbf::qp
