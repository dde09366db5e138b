#pragma once

#include <etcbf/numerics.hpp>

#include <cmath>
#include <functional>
#include <stdexcept>
#include <utility>
#include <vector>

namespace etcbf {

/// Extended class-K function: strictly increasing with fn(0) = 0, defined on
/// the whole real line so barrier sequences stay meaningful outside the safe
/// set.
struct ClassK {
  std::function<double(double)> fn;

  double operator()(double v) const { return fn(v); }

  static ClassK identity() {
    return {[](double v) { return v; }};
  }
  static ClassK linear(double gain) {
    if (gain <= 0.0) throw std::invalid_argument("ClassK::linear: gain must be positive");
    return {[gain](double v) { return gain * v; }};
  }
  /// gain * sign(v) * |v|^exponent
  static ClassK power(double gain, double exponent) {
    if (gain <= 0.0 || exponent <= 0.0) {
      throw std::invalid_argument("ClassK::power: gain and exponent must be positive");
    }
    return {[gain, exponent](double v) {
      const double mag = gain * std::pow(std::abs(v), exponent);
      return v < 0.0 ? -mag : mag;
    }};
  }
};

/// Affine expression in the control input: control · u + constant. The
/// constraint sense (>= 0 for barrier rows, <= delta for stabilization rows)
/// is fixed by the function that produced the row.
struct LinearRow {
  RowVec control;
  double constant = 0.0;

  [[nodiscard]] double evaluate(const Vec& u) const { return control.dot(u) + constant; }
};

/// Safety constraint of relative degree m for control-affine dynamics
/// xdot = f(x) + g(x) u. psi[0] is the barrier itself and psi[i] the i-th
/// function of the barrier sequence psi_i = d/dt psi_{i-1} + alpha_i(psi_{i-1});
/// the control appears first in the m-th derivative. The enforced row is
///
///   top_drift + control_row * u + remainder + alpha_top(psi[m-1]) >= 0
///
/// where top_drift is the m-th Lie derivative of the barrier along the drift,
/// control_row the mixed Lie derivative multiplying u, and remainder the
/// lower-order terms generated by differentiating the alpha_i (zero when
/// m = 1 or collected by the caller).
struct HocbfSpec {
  int degree = 1;
  std::vector<std::function<double(const Vec&)>> psi;
  std::function<double(const Vec&)> top_drift;
  std::function<RowVec(const Vec&)> control_row;
  std::function<double(const Vec&)> remainder;
  ClassK alpha_top = ClassK::identity();
};

inline void validate(const HocbfSpec& s) {
  if (s.degree < 1) throw std::invalid_argument("HocbfSpec: degree must be at least 1");
  if (static_cast<int>(s.psi.size()) != s.degree) {
    throw std::invalid_argument("HocbfSpec: need one psi function per degree");
  }
  if (!s.top_drift || !s.control_row || !s.alpha_top.fn) {
    throw std::invalid_argument("HocbfSpec: missing closure");
  }
}

/// Values psi_0(x) .. psi_{m-1}(x); every entry nonnegative means x is inside
/// the intersection of the barrier sequence's zero-superlevel sets.
inline Vec psi_values(const HocbfSpec& s, const Vec& x) {
  validate(s);
  Vec v(s.degree);
  for (int i = 0; i < s.degree; ++i) v[i] = s.psi[static_cast<size_t>(i)](x);
  return v;
}

/// Constraint row at x when the dynamics are known exactly; the row is
/// feasible control inputs in the sense  row.control * u + row.constant >= 0.
inline LinearRow hocbf_row_known(const HocbfSpec& s, const Vec& x) {
  validate(s);
  LinearRow row;
  row.control = s.control_row(x);
  row.constant = s.top_drift(x) + (s.remainder ? s.remainder(x) : 0.0) +
                 s.alpha_top(s.psi[static_cast<size_t>(s.degree - 1)](x));
  return row;
}

/// Diagonal quadratic Lyapunov function V(x) = sum_i weights[i] (x[i] -
/// target[i])^2 enforced as a relaxed stabilization row
///   LfV + LgV * u + epsilon V <= delta,
/// with relax_weight the price of delta^2 in the objective.
struct ClfSpec {
  Vec target;
  Vec weights;
  double epsilon = 1.0;
  double relax_weight = 1.0;
};

inline double clf_value(const ClfSpec& s, const Vec& x) {
  if (s.target.size() != x.size() || s.weights.size() != x.size()) {
    throw std::invalid_argument("clf_value: dimension mismatch");
  }
  const Vec d = x - s.target;
  return d.cwiseProduct(d).dot(s.weights);
}

/// Row for the current state given drift value f = f(x) and input matrix
/// g = g(x) of the dynamics used for prediction. Sense:
///   row.control * u + row.constant <= delta.
inline LinearRow clf_row(const ClfSpec& s, const Vec& x, const Vec& f, const Mat& g) {
  if (f.size() != x.size() || g.rows() != x.size()) {
    throw std::invalid_argument("clf_row: dynamics dimension mismatch");
  }
  const Vec grad = 2.0 * s.weights.cwiseProduct(x - s.target);
  LinearRow row;
  row.control = grad.transpose() * g;
  row.constant = grad.dot(f) + s.epsilon * clf_value(s, x);
  return row;
}

}  // namespace etcbf
