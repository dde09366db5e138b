#pragma once

// Independent oracles for the QP solver. qp_brute_force is grid refinement
// over the box (exhaustive search, then repeated zoom around the incumbent);
// it certifies a feasible objective level but cannot localize the argmin much
// below its grid spacing. qp_enumerate is exact for strictly convex problems:
// it minimizes over every constraint subset treated as equalities and keeps
// the best feasible candidate. Neither knows about the solver's iteration.

#include <etcbf/qp.hpp>

#include <bit>
#include <cmath>
#include <vector>

namespace testsupport {

struct BruteResult {
  etcbf::Vec z;
  double objective = 0.0;
  bool found = false;
};

inline bool brute_feasible(const etcbf::qp::QpProblem& p, const etcbf::Vec& z, double tol) {
  for (Eigen::Index i = 0; i < p.ineq_matrix.rows(); ++i) {
    if (p.ineq_matrix.row(i).dot(z) > p.ineq_bound[i] + tol) return false;
  }
  if (p.box_lower.size() == z.size()) {
    for (Eigen::Index i = 0; i < z.size(); ++i)
      if (z[i] < p.box_lower[i] - tol) return false;
  }
  if (p.box_upper.size() == z.size()) {
    for (Eigen::Index i = 0; i < z.size(); ++i)
      if (z[i] > p.box_upper[i] + tol) return false;
  }
  return true;
}

inline double brute_objective(const etcbf::qp::QpProblem& p, const etcbf::Vec& z) {
  return 0.5 * z.dot(p.hessian * z) + p.linear_cost.dot(z);
}

/// Requires finite box bounds on every variable (the search domain). The zoom
/// halfwidth of 4 grid spacings keeps the true optimum inside the next level
/// even when Hessian anisotropy pushes the best grid point a few spacings off.
inline BruteResult qp_brute_force(const etcbf::qp::QpProblem& p, int pts = 41, int levels = 7,
                                  double feas_tol = 1e-9) {
  const Eigen::Index n = p.hessian.rows();
  etcbf::Vec lo = p.box_lower;
  etcbf::Vec hi = p.box_upper;
  BruteResult best;

  for (int level = 0; level < levels; ++level) {
    etcbf::Vec z(n);
    std::vector<int> idx(static_cast<size_t>(n), 0);
    bool carry = false;
    while (!carry) {
      for (Eigen::Index i = 0; i < n; ++i) {
        z[i] = lo[i] + (hi[i] - lo[i]) * static_cast<double>(idx[static_cast<size_t>(i)]) /
                           static_cast<double>(pts - 1);
      }
      if (brute_feasible(p, z, feas_tol)) {
        const double obj = brute_objective(p, z);
        if (!best.found || obj < best.objective) {
          best.found = true;
          best.objective = obj;
          best.z = z;
        }
      }
      carry = true;
      for (Eigen::Index i = n - 1; i >= 0; --i) {
        auto is = static_cast<size_t>(i);
        if (++idx[is] < pts) {
          carry = false;
          break;
        }
        idx[is] = 0;
      }
    }
    if (!best.found) return best;  // nothing feasible on the coarsest grid
    // zoom: new box around incumbent, clipped to the original domain
    etcbf::Vec nlo(n), nhi(n);
    for (Eigen::Index i = 0; i < n; ++i) {
      const double spacing = (hi[i] - lo[i]) / static_cast<double>(pts - 1);
      nlo[i] = std::max(p.box_lower[i], best.z[i] - 4.0 * spacing);
      nhi[i] = std::min(p.box_upper[i], best.z[i] + 4.0 * spacing);
    }
    lo = nlo;
    hi = nhi;
  }
  return best;
}

/// Exact minimizer for strictly convex problems: every subset of at most n
/// constraints is taken as an equality system, the objective is minimized on
/// that affine subspace through a nullspace parameterization, and the best
/// candidate satisfying every constraint wins. The true optimum's active set
/// (or an independent subset of it spanning the same gradient) appears among
/// the subsets, so the result is exact up to linear-algebra roundoff. The
/// subset count is combinatorial; use on small problems only.
inline BruteResult qp_enumerate(const etcbf::qp::QpProblem& p, double feas_tol = 1e-10) {
  using etcbf::Mat;
  using etcbf::Vec;
  const Eigen::Index n = p.hessian.rows();

  std::vector<Vec> rows;
  std::vector<double> rhs;
  for (Eigen::Index i = 0; i < p.ineq_matrix.rows(); ++i) {
    rows.push_back(p.ineq_matrix.row(i).transpose());
    rhs.push_back(p.ineq_bound[i]);
  }
  const auto push_axis = [&](Eigen::Index i, double sign, double bound) {
    Vec r = Vec::Zero(n);
    r[i] = sign;
    rows.push_back(r);
    rhs.push_back(bound);
  };
  if (p.box_lower.size() == n) {
    for (Eigen::Index i = 0; i < n; ++i)
      if (std::isfinite(p.box_lower[i])) push_axis(i, -1.0, -p.box_lower[i]);
  }
  if (p.box_upper.size() == n) {
    for (Eigen::Index i = 0; i < n; ++i)
      if (std::isfinite(p.box_upper[i])) push_axis(i, 1.0, p.box_upper[i]);
  }
  const int total = static_cast<int>(rows.size());

  const auto feasible = [&](const Vec& z) {
    if (!z.allFinite()) return false;
    for (int i = 0; i < total; ++i) {
      if (rows[static_cast<size_t>(i)].dot(z) > rhs[static_cast<size_t>(i)] + feas_tol) return false;
    }
    return true;
  };

  BruteResult best;
  const auto consider = [&](const Vec& z) {
    if (!feasible(z)) return;
    const double obj = brute_objective(p, z);
    if (!best.found || obj < best.objective) {
      best.found = true;
      best.objective = obj;
      best.z = z;
    }
  };

  for (unsigned mask = 0; mask < (1u << total); ++mask) {
    const int k = std::popcount(mask);
    if (k > n) continue;
    if (k == 0) {
      consider(p.hessian.ldlt().solve(-p.linear_cost));
      continue;
    }
    Mat As(k, n);
    Vec bs(k);
    int r = 0;
    for (int i = 0; i < total; ++i) {
      if (mask & (1u << i)) {
        As.row(r) = rows[static_cast<size_t>(i)].transpose();
        bs[r] = rhs[static_cast<size_t>(i)];
        ++r;
      }
    }
    Eigen::FullPivLU<Mat> lu(As);
    if (lu.rank() < k) continue;  // dependent set; covered by its subsets
    const Vec zp = lu.solve(bs);
    if (k == n) {
      consider(zp);
      continue;
    }
    const Mat N = lu.kernel();
    const Mat Hn = N.transpose() * p.hessian * N;
    const Vec gn = N.transpose() * (p.linear_cost + p.hessian * zp);
    const Vec y = Hn.ldlt().solve(-gn);
    consider(zp + N * y);
  }
  return best;
}

}  // namespace testsupport
