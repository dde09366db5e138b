#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <cstddef>
#include <functional>
#include <limits>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace etcbf {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;
using RowVec = Eigen::RowVectorXd;

/// Control-affine right-hand side: f(x, u, t) -> dx/dt.
using VectorField = std::function<Vec(const Vec&, const Vec&, double)>;

struct IntegrationError : std::runtime_error {
  double t;
  explicit IntegrationError(double time)
      : std::runtime_error("non-finite state encountered while integrating at t=" +
                           std::to_string(time)),
        t(time) {}
};

struct EvaluationError : std::runtime_error {
  explicit EvaluationError(const std::string& what) : std::runtime_error(what) {}
};

/// Axis-aligned box. Zero-width dimensions are allowed and treated as point
/// evaluations by box_extremize.
struct Box {
  Vec lo;
  Vec hi;

  Box() = default;
  Box(Vec lower, Vec upper) : lo(std::move(lower)), hi(std::move(upper)) {
    if (lo.size() != hi.size()) throw std::invalid_argument("Box: dimension mismatch");
    for (Eigen::Index i = 0; i < lo.size(); ++i) {
      if (!(lo[i] <= hi[i])) throw std::invalid_argument("Box: lower bound exceeds upper");
    }
  }

  [[nodiscard]] Eigen::Index dim() const { return lo.size(); }

  [[nodiscard]] bool contains(const Vec& p, double tol = 0.0) const {
    if (p.size() != lo.size()) return false;
    for (Eigen::Index i = 0; i < p.size(); ++i) {
      if (p[i] < lo[i] - tol || p[i] > hi[i] + tol) return false;
    }
    return true;
  }
};

/// One classical fourth-order Runge-Kutta step with the control held constant.
template <class F>
Vec integrate_step(F&& field, const Vec& x, const Vec& u, double t, double dt) {
  const Vec k1 = field(x, u, t);
  const Vec k2 = field(x + 0.5 * dt * k1, u, t + 0.5 * dt);
  const Vec k3 = field(x + 0.5 * dt * k2, u, t + 0.5 * dt);
  const Vec k4 = field(x + dt * k3, u, t + dt);
  Vec next = x + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
  if (!next.allFinite()) throw IntegrationError(t);
  return next;
}

/// Advance from t0 to t1 in equal RK4 substeps no longer than dt_max.
template <class F>
Vec integrate(F&& field, Vec x, const Vec& u, double t0, double t1, double dt_max) {
  if (t1 <= t0) return x;
  const auto steps = static_cast<long>(std::ceil((t1 - t0) / dt_max - 1e-12));
  const long n = steps < 1 ? 1 : steps;
  const double dt = (t1 - t0) / static_cast<double>(n);
  for (long i = 0; i < n; ++i) {
    x = integrate_step(field, x, u, t0 + dt * static_cast<double>(i), dt);
  }
  return x;
}

enum class Extremum { minimum, maximum };

/// Extremize a scalar function over a box by exhaustive grid search with
/// `grid_per_dim` points per non-degenerate dimension (endpoints included).
/// Deterministic: points are visited in row-major order and strict comparison
/// keeps the first (lowest-index) extremizer on ties.
template <class F>
double box_extremize(F&& f, const Box& box, Extremum mode, int grid_per_dim = 21) {
  if (grid_per_dim < 2) throw std::invalid_argument("box_extremize: grid must be >= 2");
  const Eigen::Index d = box.dim();
  std::vector<long> counts(static_cast<size_t>(d));
  std::vector<double> steps(static_cast<size_t>(d));
  for (Eigen::Index i = 0; i < d; ++i) {
    const double width = box.hi[i] - box.lo[i];
    if (!std::isfinite(width)) {
      throw EvaluationError("box_extremize: dimension " + std::to_string(i) +
                            " has non-finite width");
    }
    if (width == 0.0) {
      counts[static_cast<size_t>(i)] = 1;
      steps[static_cast<size_t>(i)] = 0.0;
    } else {
      counts[static_cast<size_t>(i)] = grid_per_dim;
      steps[static_cast<size_t>(i)] = width / static_cast<double>(grid_per_dim - 1);
    }
  }

  std::vector<long> idx(static_cast<size_t>(d), 0);
  std::vector<double> point(static_cast<size_t>(d));
  for (Eigen::Index i = 0; i < d; ++i) point[static_cast<size_t>(i)] = box.lo[i];

  const bool want_min = (mode == Extremum::minimum);
  double best = want_min ? std::numeric_limits<double>::infinity()
                         : -std::numeric_limits<double>::infinity();
  while (true) {
    const double v = f(std::span<const double>(point.data(), point.size()));
    if (!std::isfinite(v)) {
      std::ostringstream os;
      os << "box_extremize: non-finite value at point (";
      for (size_t i = 0; i < point.size(); ++i) os << (i ? ", " : "") << point[i];
      os << ")";
      throw EvaluationError(os.str());
    }
    if (want_min ? (v < best) : (v > best)) best = v;

    // odometer increment
    Eigen::Index k = d - 1;
    for (; k >= 0; --k) {
      auto ks = static_cast<size_t>(k);
      if (++idx[ks] < counts[ks]) {
        point[ks] = (idx[ks] + 1 == counts[ks]) ? box.hi[k]
                                                : box.lo[k] + steps[ks] * static_cast<double>(idx[ks]);
        break;
      }
      idx[ks] = 0;
      point[ks] = box.lo[k];
    }
    if (k < 0) break;
  }
  return best;
}

}  // namespace etcbf
