#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <etcbf/cbf.hpp>
#include <etcbf/numerics.hpp>
#include <etcbf/plant.hpp>
#include <etcbf/qp.hpp>

namespace etcbf {

/// Thrown when membership constraints cut the monitored error box down to the
/// empty set, so no worst-case evaluation exists.
struct EmptyFeasibleBox : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// ---------------------------------------------------------------------------
// Joint coordinates
//
// Worst-case terms are evaluated over a box in the joint coordinates
//
//   [ y (model state) | e | e^(1) | ... | e^(m) ]
//
// laid out in blocks of the model dimension ny: block 0 is the model state,
// block 1 the measurable error, block 1 + i the i-th error derivative.
// ---------------------------------------------------------------------------

[[nodiscard]] inline Eigen::Index joint_dim(Eigen::Index ny, int degree) {
  return ny * (static_cast<Eigen::Index>(degree) + 2);
}

[[nodiscard]] inline Eigen::Index joint_index(Eigen::Index ny, int block,
                                              Eigen::Index component) {
  return static_cast<Eigen::Index>(block) * ny + component;
}

/// Monitoring bounds: w bounds |e|, nu[i-1] bounds |e^(i)| for i = 1..m, and s
/// bounds the model-state excursion from the last event anchor. Entries must
/// be positive; +inf marks a coordinate that is not monitored, which is only
/// usable while no worst-case term depends on that coordinate.
struct EventBounds {
  Vec w;
  std::vector<Vec> nu;
  Vec s;
};

inline void validate(const EventBounds& b, Eigen::Index ny, int degree) {
  if (b.w.size() != ny || b.s.size() != ny) {
    throw std::invalid_argument("EventBounds: w and s must match the model dimension");
  }
  if (static_cast<int>(b.nu.size()) != degree) {
    throw std::invalid_argument("EventBounds: need one derivative bound per order 1..m");
  }
  const auto positive = [](const Vec& v) {
    for (Eigen::Index i = 0; i < v.size(); ++i) {
      if (!(v[i] > 0.0)) return false;
    }
    return true;
  };
  if (!positive(b.w) || !positive(b.s)) {
    throw std::invalid_argument("EventBounds: bounds must be positive");
  }
  for (const Vec& n : b.nu) {
    if (n.size() != ny || !positive(n)) {
      throw std::invalid_argument("EventBounds: derivative bounds must be positive per component");
    }
  }
}

// ---------------------------------------------------------------------------
// Adaptive prediction model
// ---------------------------------------------------------------------------

/// Control-affine prediction model
///
///   d/dt xbar = drift(xbar, corrections) + input_matrix(xbar) * u
///
/// whose drift absorbs correction terms accumulated from logged error
/// derivatives at events. Under the default synchronization the corrections
/// enter the drift additively per component. `higher_rates[i]` returns the
/// model's (i+2)-th state derivative under a held control; a scenario with
/// constraint degree m supplies entries up to order m.
struct AdaptiveModel {
  std::function<Vec(const Vec&, const Vec&)> drift;
  std::function<Mat(const Vec&)> input_matrix;
  std::vector<std::function<Vec(const AdaptiveModel&, const Vec&)>> higher_rates;
  Vec state;
  Vec corrections;

  [[nodiscard]] Vec rate(const Vec& u) const {
    return drift(state, corrections) + input_matrix(state) * u;
  }

  [[nodiscard]] Vec rate_of_order(int order, const Vec& u) const {
    if (order == 1) return rate(u);
    if (order < 1 ||
        static_cast<size_t>(order - 2) >= higher_rates.size() ||
        !higher_rates[static_cast<size_t>(order - 2)]) {
      throw std::invalid_argument("AdaptiveModel: no derivative closure of order " +
                                  std::to_string(order));
    }
    return higher_rates[static_cast<size_t>(order - 2)](*this, u);
  }
};

/// Errors between measured plant quantities and the model prediction, with the
/// sensor noise half-widths that apply to each entry.
struct ErrorState {
  Vec e;
  std::vector<Vec> rates;  // e^(1) .. e^(m)
  Vec hw_e;
  std::vector<Vec> hw_rates;
};

inline ErrorState compute_error(const Vec& x_meas, const std::vector<Vec>& derivs_meas,
                                const AdaptiveModel& model, const Vec& u_held) {
  if (x_meas.size() != model.state.size()) {
    throw std::invalid_argument("compute_error: state size mismatch");
  }
  ErrorState es;
  es.e = x_meas - model.state;
  es.rates.reserve(derivs_meas.size());
  for (size_t i = 0; i < derivs_meas.size(); ++i) {
    if (derivs_meas[i].size() != x_meas.size()) {
      throw std::invalid_argument("compute_error: derivative stack size mismatch");
    }
    es.rates.push_back(derivs_meas[i] -
                       model.rate_of_order(static_cast<int>(i) + 1, u_held));
  }
  es.hw_e = Vec::Zero(x_meas.size());
  es.hw_rates.assign(es.rates.size(), Vec::Zero(x_meas.size()));
  return es;
}

/// Measurement overload: derivative stacks come from the sensor's rate and
/// acceleration entries, and the noise half-widths carry through so detection
/// can use the worst case |error| + half-width.
inline ErrorState compute_error(const Measurement& m, const AdaptiveModel& model,
                                const Vec& u_held, int degree) {
  if (degree < 1 || degree > 2) {
    throw std::invalid_argument("compute_error: measurements carry derivatives up to order two");
  }
  std::vector<Vec> derivs{m.rate};
  if (degree == 2) {
    if (m.accel.size() != m.state.size()) {
      throw std::invalid_argument("compute_error: degree-two constraint needs an acceleration stack");
    }
    derivs.push_back(m.accel);
  }
  ErrorState es = compute_error(m.state, derivs, model, u_held);
  es.hw_e = m.hw_state;
  es.hw_rates.clear();
  es.hw_rates.push_back(m.hw_rate);
  if (degree == 2) es.hw_rates.push_back(m.hw_accel);
  return es;
}

/// Default event synchronization: reset the model state to the measured state,
/// then absorb the remaining first-order rate error into the drift
/// corrections. Computing the rate error after the reset is what makes the
/// post-event rate error exactly zero.
inline void synchronize(AdaptiveModel& model, const Measurement& m, const Vec& u_held,
                        int degree) {
  model.state = m.state;
  const ErrorState err = compute_error(m, model, u_held, degree);
  model.corrections += err.rates[0];
}

// ---------------------------------------------------------------------------
// Worst-case constraint terms
// ---------------------------------------------------------------------------

/// One scalar term of the robustified constraint. `coords` lists the joint
/// coordinates the term reads, in the order `eval` expects them. A null `eval`
/// denotes a term equal to `constant`, returned without extremization.
struct RobustTerm {
  std::vector<Eigen::Index> coords;
  std::function<double(std::span<const double>)> eval;
  double constant = 0.0;
};

/// Linear membership constraint over the joint coordinates:
///   sum_i coeff[i] * joint[coords[i]]  >=  rhs.
struct LinearMembership {
  std::vector<Eigen::Index> coords;
  std::vector<double> coeff;
  double rhs = 0.0;
};

/// Term-by-term description of one high-order barrier constraint
///
///   drift + control . u + error + remainder + alpha  >=  0
///
/// where each term may depend on the joint coordinates and is extremized over
/// the monitored box at event time. `remainder` is ignored when degree == 1.
struct RobustBarrierSpec {
  Eigen::Index ny = 0;
  int degree = 1;
  RobustTerm drift;
  std::vector<RobustTerm> control;  // one per input channel
  RobustTerm error;
  RobustTerm remainder;
  RobustTerm alpha;
  std::vector<LinearMembership> memberships;
};

/// Worst-case evaluations of the constraint terms, valid until the next event.
struct LimitValues {
  double b_f_min = 0.0;
  RowVec b_g_lim;  // per channel: minimum if that control stays >= 0, else maximum
  double b_e_min = 0.0;
  double b_R_min = 0.0;  // zero when the constraint has relative degree one
  double b_alpha_min = 0.0;
};

/// Monitored box in joint coordinates: the model-state block spans the anchor
/// plus/minus the excursion bounds, the error blocks span their bounds
/// symmetrically.
inline Box build_joint_box(Eigen::Index ny, int degree, const Vec& anchor,
                           const EventBounds& bounds) {
  validate(bounds, ny, degree);
  if (anchor.size() != ny) {
    throw std::invalid_argument("build_joint_box: anchor must match the model dimension");
  }
  const Eigen::Index d = joint_dim(ny, degree);
  Vec lo(d);
  Vec hi(d);
  for (Eigen::Index j = 0; j < ny; ++j) {
    lo[j] = anchor[j] - bounds.s[j];
    hi[j] = anchor[j] + bounds.s[j];
    lo[ny + j] = -bounds.w[j];
    hi[ny + j] = bounds.w[j];
    for (int i = 1; i <= degree; ++i) {
      const Eigen::Index c = joint_index(ny, 1 + i, j);
      lo[c] = -bounds.nu[static_cast<size_t>(i - 1)][j];
      hi[c] = bounds.nu[static_cast<size_t>(i - 1)][j];
    }
  }
  return Box(std::move(lo), std::move(hi));
}

/// Shrink the error-family intervals of the joint box using membership
/// constraints. For each membership, every error coordinate it touches gets
/// the weakest one-sided bound consistent with the other coordinates ranging
/// over their current intervals, so the clamped box still contains every
/// joint point that satisfies the membership; the worst-case minima stay
/// valid lower bounds. Clamps within one membership are computed from the box
/// as it stood before that membership and applied together; memberships apply
/// in listed order. Model-state coordinates are sensed, never clamped.
inline void clamp_memberships(Box& joint, const std::vector<LinearMembership>& memberships,
                              Eigen::Index ny) {
  for (const auto& m : memberships) {
    if (m.coords.size() != m.coeff.size()) {
      throw std::invalid_argument("LinearMembership: coords and coeff must pair up");
    }
    if (!std::isfinite(m.rhs)) {
      throw std::invalid_argument("LinearMembership: rhs must be finite");
    }
    for (const Eigen::Index c : m.coords) {
      if (c < 0 || c >= joint.dim()) {
        throw std::invalid_argument("LinearMembership: coordinate out of range");
      }
    }
    std::vector<std::pair<Eigen::Index, double>> new_lo;
    std::vector<std::pair<Eigen::Index, double>> new_hi;
    for (size_t j = 0; j < m.coords.size(); ++j) {
      const Eigen::Index cj = m.coords[j];
      const double a = m.coeff[j];
      if (cj < ny || a == 0.0) continue;
      double rest = 0.0;  // largest value the other terms can take
      bool unbounded = false;
      for (size_t i = 0; i < m.coords.size(); ++i) {
        if (i == j) continue;
        const double c = m.coeff[i];
        if (c == 0.0) continue;
        const double v = c > 0.0 ? joint.hi[m.coords[i]] : joint.lo[m.coords[i]];
        const double contrib = c * v;
        if (!std::isfinite(contrib)) {
          unbounded = true;
          break;
        }
        rest += contrib;
      }
      if (unbounded) continue;
      const double bound = (m.rhs - rest) / a;
      if (a > 0.0) {
        new_lo.emplace_back(cj, bound);
      } else {
        new_hi.emplace_back(cj, bound);
      }
    }
    for (const auto& [c, v] : new_lo) joint.lo[c] = std::max(joint.lo[c], v);
    for (const auto& [c, v] : new_hi) joint.hi[c] = std::min(joint.hi[c], v);
    for (Eigen::Index c = 0; c < joint.dim(); ++c) {
      if (joint.lo[c] > joint.hi[c]) {
        throw EmptyFeasibleBox("membership constraints leave no admissible error value");
      }
    }
  }
}

/// Extremize one constraint term over the joint box, reading only the
/// coordinates the term declares. Exact constants bypass the grid search.
inline double extremize_term(const RobustTerm& term, const Box& joint, Extremum mode,
                             int grid) {
  if (!term.eval) return term.constant;
  const auto k = static_cast<Eigen::Index>(term.coords.size());
  Vec lo(k);
  Vec hi(k);
  for (Eigen::Index i = 0; i < k; ++i) {
    const Eigen::Index c = term.coords[static_cast<size_t>(i)];
    if (c < 0 || c >= joint.dim()) {
      throw std::invalid_argument("RobustTerm: coordinate out of range");
    }
    lo[i] = joint.lo[c];
    hi[i] = joint.hi[c];
    if (!std::isfinite(lo[i]) || !std::isfinite(hi[i])) {
      throw EvaluationError("extremize_term: term depends on joint coordinate " +
                            std::to_string(c) + " with an unbounded monitoring interval");
    }
  }
  return box_extremize(term.eval, Box(std::move(lo), std::move(hi)), mode, grid);
}

namespace detail {

inline LimitValues limit_values_core(const RobustBarrierSpec& rs, const Vec& anchor,
                                     const EventBounds& bounds, const Vec& u_sign,
                                     int grid) {
  if (rs.ny <= 0) throw std::invalid_argument("RobustBarrierSpec: ny must be positive");
  if (u_sign.size() != 0 && u_sign.size() != static_cast<Eigen::Index>(rs.control.size())) {
    throw std::invalid_argument("limit_values: u_sign must be empty or one per channel");
  }
  Box joint = build_joint_box(rs.ny, rs.degree, anchor, bounds);
  clamp_memberships(joint, rs.memberships, rs.ny);

  LimitValues lv;
  lv.b_f_min = extremize_term(rs.drift, joint, Extremum::minimum, grid);
  lv.b_e_min = extremize_term(rs.error, joint, Extremum::minimum, grid);
  lv.b_R_min =
      rs.degree >= 2 ? extremize_term(rs.remainder, joint, Extremum::minimum, grid) : 0.0;
  lv.b_alpha_min = extremize_term(rs.alpha, joint, Extremum::minimum, grid);
  lv.b_g_lim.resize(static_cast<Eigen::Index>(rs.control.size()));
  for (size_t i = 0; i < rs.control.size(); ++i) {
    const bool nonneg = u_sign.size() == 0 || u_sign[static_cast<Eigen::Index>(i)] >= 0.0;
    lv.b_g_lim[static_cast<Eigen::Index>(i)] = extremize_term(
        rs.control[i], joint, nonneg ? Extremum::minimum : Extremum::maximum, grid);
  }
  return lv;
}

}  // namespace detail

/// Limit values for a relative-degree-one constraint; the remainder term does
/// not exist at that degree and comes back as exactly zero.
inline LimitValues limit_values_rd1(const RobustBarrierSpec& rs, const AdaptiveModel& model,
                                    const EventBounds& bounds, const Vec& u_sign,
                                    int grid = 21) {
  if (rs.degree != 1) {
    throw std::invalid_argument("limit_values_rd1: constraint degree must be one");
  }
  return detail::limit_values_core(rs, model.state, bounds, u_sign, grid);
}

/// Limit values for a constraint of relative degree two or higher.
inline LimitValues limit_values_high(const RobustBarrierSpec& rs, const AdaptiveModel& model,
                                     const EventBounds& bounds, const Vec& u_sign,
                                     int grid = 21) {
  if (rs.degree < 2) {
    throw std::invalid_argument("limit_values_high: constraint degree must be at least two");
  }
  return detail::limit_values_core(rs, model.state, bounds, u_sign, grid);
}

/// Assemble the event-time constraint row: controls satisfying
/// row.control . u + row.constant >= 0 keep the constraint valid until the
/// next event.
inline LinearRow robust_constraint_row(const LimitValues& lv) {
  LinearRow row;
  row.control = lv.b_g_lim;
  row.constant = lv.b_f_min + lv.b_e_min + lv.b_R_min + lv.b_alpha_min;
  return row;
}

/// Event QP over z = [u; delta]: minimize
///   sum_i (cost_scale[i] * u_i)^2 + relax_weight * delta^2
/// subject to every barrier row as a hard constraint, the tracking row relaxed
/// by delta, and the control box. delta itself is unbounded.
inline qp::QpProblem build_event_qp(const std::vector<LinearRow>& barrier_rows,
                                    const std::optional<LinearRow>& tracking_row,
                                    const Box& control_box, const Vec& cost_scale,
                                    double relax_weight) {
  const Eigen::Index nu = control_box.dim();
  if (cost_scale.size() != nu) {
    throw std::invalid_argument("build_event_qp: cost_scale must cover every control channel");
  }
  if (!(relax_weight > 0.0)) {
    throw std::invalid_argument("build_event_qp: relax_weight must be positive");
  }
  const Eigen::Index n = nu + 1;
  qp::QpProblem p;
  p.hessian = Mat::Zero(n, n);
  for (Eigen::Index i = 0; i < nu; ++i) {
    if (!(cost_scale[i] > 0.0)) {
      throw std::invalid_argument("build_event_qp: cost_scale entries must be positive");
    }
    p.hessian(i, i) = 2.0 * cost_scale[i] * cost_scale[i];
  }
  p.hessian(nu, nu) = 2.0 * relax_weight;
  p.linear_cost = Vec::Zero(n);

  const auto rows = static_cast<Eigen::Index>(barrier_rows.size()) + (tracking_row ? 1 : 0);
  p.ineq_matrix = Mat::Zero(rows, n);
  p.ineq_bound = Vec::Zero(rows);
  Eigen::Index r = 0;
  for (const auto& b : barrier_rows) {
    if (b.control.size() != nu) {
      throw std::invalid_argument("build_event_qp: barrier row width mismatch");
    }
    p.ineq_matrix.row(r).head(nu) = -b.control;
    p.ineq_bound[r] = b.constant;
    ++r;
  }
  if (tracking_row) {
    if (tracking_row->control.size() != nu) {
      throw std::invalid_argument("build_event_qp: tracking row width mismatch");
    }
    p.ineq_matrix.row(r).head(nu) = tracking_row->control;
    p.ineq_matrix(r, nu) = -1.0;
    p.ineq_bound[r] = -tracking_row->constant;
  }
  constexpr double inf = std::numeric_limits<double>::infinity();
  p.box_lower = Vec::Constant(n, -inf);
  p.box_upper = Vec::Constant(n, inf);
  p.box_lower.head(nu) = control_box.lo;
  p.box_upper.head(nu) = control_box.hi;
  return p;
}

// ---------------------------------------------------------------------------
// Event detection
// ---------------------------------------------------------------------------

/// What fired: type 1 = error bound, type 2 = error-derivative bound (order
/// gives which derivative), type 3 = model-state excursion, type 4 = the
/// forced event at the start of a run.
struct Trigger {
  int type = 0;
  int order = 0;
  int component = -1;
};

/// First trigger met or exceeded, checked in the order: error components,
/// then derivative bounds by order then component, then excursion components.
/// Noisy entries trigger on the worst case |error| + half-width; the excursion
/// check reads the internally integrated model state and is exact. `theta`
/// in (0, 1] scales every threshold to fire that much earlier.
inline std::optional<Trigger> detect_event(const ErrorState& err, const Vec& model_state,
                                           const Vec& anchor, const EventBounds& bounds,
                                           double theta = 1.0) {
  if (!(theta > 0.0) || theta > 1.0) {
    throw std::invalid_argument("detect_event: theta outside (0, 1]");
  }
  const Eigen::Index ny = model_state.size();
  for (Eigen::Index j = 0; j < ny; ++j) {
    if (!std::isfinite(bounds.w[j])) continue;
    const double hw = err.hw_e.size() == ny ? err.hw_e[j] : 0.0;
    if (std::abs(err.e[j]) + hw >= theta * bounds.w[j]) {
      return Trigger{1, 0, static_cast<int>(j)};
    }
  }
  const size_t orders = std::min(err.rates.size(), bounds.nu.size());
  for (size_t i = 0; i < orders; ++i) {
    for (Eigen::Index j = 0; j < ny; ++j) {
      if (!std::isfinite(bounds.nu[i][j])) continue;
      const double hw =
          i < err.hw_rates.size() && err.hw_rates[i].size() == ny ? err.hw_rates[i][j] : 0.0;
      if (std::abs(err.rates[i][j]) + hw >= theta * bounds.nu[i][j]) {
        return Trigger{2, static_cast<int>(i) + 1, static_cast<int>(j)};
      }
    }
  }
  for (Eigen::Index j = 0; j < ny; ++j) {
    if (!std::isfinite(bounds.s[j])) continue;
    if (std::abs(model_state[j] - anchor[j]) >= theta * bounds.s[j]) {
      return Trigger{3, 0, static_cast<int>(j)};
    }
  }
  return std::nullopt;
}

// ---------------------------------------------------------------------------
// Simulation loops
// ---------------------------------------------------------------------------

enum class InfeasiblePolicy { halt, clamp };

struct EventLoopOptions {
  std::uint64_t seed = 0;
  double horizon = 30.0;
  double sensor_rate = 20.0;  // samples per second; also the disturbance cadence
  double theta = 1.0;
  double disturbance_scale = 1.0;
  double walk_rate = 0.05;
  int grid = 21;
  InfeasiblePolicy infeasible_policy = InfeasiblePolicy::halt;
  double integrator_dt = 1e-3;
  Vec noise_state;  // sensor noise half-widths; empty means exact
  Vec noise_rate;
  Vec noise_accel;
};

struct EventRecord {
  double t = 0.0;
  Trigger trigger;
  Vec anchor;
  Vec control;
  double delta = 0.0;
  LimitValues limits;  // NaN-filled when the feasible box came up empty
  int qp_status = 0;   // qp::Status of the final solve at this event
  bool sign_flip_resolve = false;
  bool empty_feasible_box = false;
};

struct SamplePoint {
  double t = 0.0;
  Vec x;     // true plant state
  Vec xbar;  // model state; equals x at event samples
  Vec e;
  std::vector<Vec> e_rates;
  Vec u;
  double delta = 0.0;
  Vec psi;  // barrier stack [b, psi_1, ...] from measured quantities
  Vec corrections;
  int event_flag = 0;  // 0 none, 1/2/3 trigger type, 4 initial
  int qp_status = 0;   // status of the most recent solve
};

struct TrajectoryLog {
  std::vector<SamplePoint> samples;
  std::vector<EventRecord> events;
  long qp_solves = 0;
  long infeasible_count = 0;
  bool halted = false;
  double halted_at = std::numeric_limits<double>::quiet_NaN();
};

/// A concrete plant/model/constraint bundle the simulation loops run on.
/// Scenarios are immutable; everything that evolves (plant, model state,
/// corrections) lives inside the loop.
class Scenario {
 public:
  virtual ~Scenario() = default;

  [[nodiscard]] virtual std::string name() const = 0;
  [[nodiscard]] virtual Eigen::Index model_dim() const = 0;
  [[nodiscard]] virtual Eigen::Index input_dim() const = 0;
  [[nodiscard]] virtual int degree() const = 0;
  [[nodiscard]] virtual Box control_bounds() const = 0;
  [[nodiscard]] virtual EventBounds event_bounds() const = 0;
  [[nodiscard]] virtual ClfSpec tracking() const = 0;
  [[nodiscard]] virtual Vec cost_scale() const { return Vec::Ones(input_dim()); }

  [[nodiscard]] virtual PlantInstance make_plant(const EventLoopOptions& opt) const = 0;
  [[nodiscard]] virtual AdaptiveModel initial_model() const = 0;

  /// True second-derivative stack of the plant state under the held control,
  /// for scenarios whose constraint degree needs it.
  [[nodiscard]] virtual Vec accel_stack(const PlantInstance&, const Vec&) const {
    return {};
  }

  [[nodiscard]] virtual RobustBarrierSpec robust_spec(const AdaptiveModel& model) const = 0;

  [[nodiscard]] virtual LimitValues limit_values(const AdaptiveModel& model,
                                                 const EventBounds& bounds, const Vec& u_sign,
                                                 int grid) const {
    const RobustBarrierSpec rs = robust_spec(model);
    return rs.degree == 1 ? limit_values_rd1(rs, model, bounds, u_sign, grid)
                          : limit_values_high(rs, model, bounds, u_sign, grid);
  }

  virtual void synchronize_model(AdaptiveModel& model, const Measurement& m,
                                 const Vec& u_held) const {
    etcbf::synchronize(model, m, u_held, degree());
  }

  /// Barrier stack [b, psi_1, ...] evaluated from measured quantities.
  [[nodiscard]] virtual Vec psi_stack(const Measurement& m) const = 0;

  /// Constraint row for a fixed-period controller that trusts the model:
  /// every worst-case term evaluated at the current model state with zero
  /// error, which makes the evaluation exact rather than extremized.
  [[nodiscard]] virtual LinearRow model_constraint_row(const AdaptiveModel& model) const {
    const RobustBarrierSpec rs = robust_spec(model);
    Vec point = Vec::Zero(joint_dim(rs.ny, rs.degree));
    point.head(rs.ny) = model.state;
    const Box at_point(point, point);
    LinearRow row;
    row.control.resize(static_cast<Eigen::Index>(rs.control.size()));
    for (size_t i = 0; i < rs.control.size(); ++i) {
      row.control[static_cast<Eigen::Index>(i)] =
          extremize_term(rs.control[i], at_point, Extremum::minimum, 2);
    }
    row.constant = extremize_term(rs.drift, at_point, Extremum::minimum, 2) +
                   extremize_term(rs.error, at_point, Extremum::minimum, 2) +
                   (rs.degree >= 2
                        ? extremize_term(rs.remainder, at_point, Extremum::minimum, 2)
                        : 0.0) +
                   extremize_term(rs.alpha, at_point, Extremum::minimum, 2);
    return row;
  }

  /// Map a logged sample onto the fixed CSV field layout
  /// [t, v, z, v_bar, z_bar, e2, e2dot, e2ddot, u, delta, b, psi1, h1, h2];
  /// coordinates a scenario does not have are reported as zero.
  [[nodiscard]] virtual std::vector<double> csv_fields(const SamplePoint& sp) const = 0;

  /// Units / meaning of the CSV columns, emitted as a comment line ahead of
  /// the header row.
  [[nodiscard]] virtual std::string csv_units() const {
    return "t [s]; remaining columns scenario-specific";
  }

  /// Integrand of the control-effort metric. Receives the true plant state,
  /// which the controller itself never sees: a simulation-only diagnostic.
  [[nodiscard]] virtual double control_effort(const Vec&, const Vec& u) const {
    return u.squaredNorm();
  }
};

namespace detail {

inline void advance_model(AdaptiveModel& model, const Vec& u, double t0, double t1,
                          double dt_max) {
  const Vec corr = model.corrections;
  const AdaptiveModel& m = model;
  model.state = integrate(
      [&m, &corr](const Vec& x, const Vec& uu, double) -> Vec {
        return m.drift(x, corr) + m.input_matrix(x) * uu;
      },
      model.state, u, t0, t1, dt_max);
}

inline LimitValues nan_limits(Eigen::Index nu) {
  constexpr double nan = std::numeric_limits<double>::quiet_NaN();
  LimitValues lv;
  lv.b_f_min = lv.b_e_min = lv.b_R_min = lv.b_alpha_min = nan;
  lv.b_g_lim = RowVec::Constant(nu, nan);
  return lv;
}

/// Fallback control when no feasible QP exists: push each channel toward the
/// box end that most increases the barrier row.
inline Vec closest_to_feasible(const std::optional<LinearRow>& row, const Vec& u_prev,
                               const Box& box) {
  Vec u = u_prev.cwiseMax(box.lo).cwiseMin(box.hi);
  if (!row) return u;
  for (Eigen::Index i = 0; i < u.size(); ++i) {
    const double end = row->control[i] >= 0.0 ? box.hi[i] : box.lo[i];
    if (std::isfinite(end)) u[i] = end;
  }
  return u;
}

inline void check_loop_options(const EventLoopOptions& opt) {
  if (!(opt.horizon > 0.0)) throw std::invalid_argument("simulation: horizon must be positive");
  if (!(opt.sensor_rate > 0.0)) {
    throw std::invalid_argument("simulation: sensor_rate must be positive");
  }
  if (!(opt.theta > 0.0) || opt.theta > 1.0) {
    throw std::invalid_argument("simulation: trigger scaling outside (0, 1]");
  }
  if (opt.grid < 2) throw std::invalid_argument("simulation: grid must be at least 2");
  if (!(opt.integrator_dt > 0.0)) {
    throw std::invalid_argument("simulation: integrator_dt must be positive");
  }
}

}  // namespace detail

/// Event-triggered control loop. The plant and the prediction model both run
/// under a zero-order-held control; monitoring happens at the sensor sampling
/// instants, and every trigger synchronizes the model, recomputes the limit
/// values around the new anchor, and solves one QP (plus one re-solve if a
/// state-dependent control gain was extremized under a control sign that the
/// solution then contradicted). The run starts with a forced event at t = 0.
inline TrajectoryLog run_event_loop(const Scenario& sc, const EventLoopOptions& opt) {
  detail::check_loop_options(opt);
  const double ts = 1.0 / opt.sensor_rate;
  const auto nsteps = static_cast<long>(std::llround(opt.horizon * opt.sensor_rate));
  if (nsteps < 1) throw std::invalid_argument("simulation: horizon shorter than one sample");

  PlantInstance plant = sc.make_plant(opt);
  Sensor sensor(opt.noise_state, opt.noise_rate, opt.noise_accel, channel_rng(opt.seed, 901));
  AdaptiveModel model = sc.initial_model();
  const EventBounds bounds = sc.event_bounds();
  validate(bounds, sc.model_dim(), sc.degree());
  const Box ubox = sc.control_bounds();
  const ClfSpec track = sc.tracking();
  const Vec cscale = sc.cost_scale();

  Vec u = Vec::Zero(sc.input_dim());
  double delta = 0.0;
  Vec anchor = model.state;
  int last_status = static_cast<int>(qp::Status::optimal);
  std::optional<std::vector<char>> varying_gain;

  TrajectoryLog log;
  log.samples.reserve(static_cast<size_t>(nsteps) + 1);

  for (long n = 0; n <= nsteps; ++n) {
    const double t = static_cast<double>(n) * ts;
    if (n > 0) plant.resample_disturbances();
    const Measurement meas =
        sensor.measure(t, plant.state(), plant.rates(u), sc.accel_stack(plant, u));
    ErrorState err = compute_error(meas, model, u, sc.degree());

    std::optional<Trigger> trig;
    if (n == 0) {
      trig = Trigger{4, 0, -1};
    } else {
      trig = detect_event(err, model.state, anchor, bounds, opt.theta);
    }

    int flag = 0;
    if (trig) {
      flag = trig->type;
      sc.synchronize_model(model, meas, u);
      anchor = model.state;
      err = compute_error(meas, model, u, sc.degree());

      EventRecord rec;
      rec.t = t;
      rec.trigger = *trig;
      rec.anchor = anchor;

      bool solved = false;
      Vec u_next = u;
      double delta_next = 0.0;
      std::optional<LinearRow> primary_row;
      try {
        const LimitValues lv = sc.limit_values(model, bounds, u, opt.grid);
        rec.limits = lv;
        primary_row = robust_constraint_row(lv);
        const Vec fbar = model.drift(model.state, model.corrections);
        const Mat gbar = model.input_matrix(model.state);
        const LinearRow clf = clf_row(track, model.state, fbar, gbar);
        auto problem = build_event_qp({*primary_row}, clf, ubox, cscale, track.relax_weight);
        ++log.qp_solves;
        qp::QpSolution sol = qp::solve(problem);

        if (sol.status == qp::Status::optimal) {
          if (!varying_gain) {
            const RobustBarrierSpec rs = sc.robust_spec(model);
            varying_gain.emplace(rs.control.size());
            for (size_t i = 0; i < rs.control.size(); ++i) {
              (*varying_gain)[i] = rs.control[i].eval ? 1 : 0;
            }
          }
          bool flipped = false;
          for (Eigen::Index i = 0; i < u.size(); ++i) {
            if (!(*varying_gain)[static_cast<size_t>(i)]) continue;
            const double got = sol.optimizer[i];
            const bool assumed_nonneg = u[i] >= 0.0;
            if ((assumed_nonneg && got < 0.0) || (!assumed_nonneg && got > 0.0)) {
              flipped = true;
            }
          }
          if (flipped) {
            // Keep the row extremized under the assumed sign and add the row
            // extremized under the realized sign; enforcing both makes the
            // re-solve valid whichever sign the final control lands on.
            const LimitValues lv2 =
                sc.limit_values(model, bounds, sol.optimizer.head(u.size()), opt.grid);
            auto problem2 =
                build_event_qp({*primary_row, robust_constraint_row(lv2)}, clf, ubox,
                               cscale, track.relax_weight);
            ++log.qp_solves;
            sol = qp::solve(problem2);
            rec.sign_flip_resolve = true;
          }
        }
        rec.qp_status = static_cast<int>(sol.status);
        if (sol.status == qp::Status::optimal) {
          solved = true;
          u_next = sol.optimizer.head(u.size());
          delta_next = sol.optimizer[u.size()];
        }
      } catch (const EmptyFeasibleBox&) {
        rec.empty_feasible_box = true;
        rec.qp_status = static_cast<int>(qp::Status::infeasible);
        rec.limits = detail::nan_limits(sc.input_dim());
      }

      if (solved) {
        u = u_next;
        delta = delta_next;
      } else {
        ++log.infeasible_count;
        if (opt.infeasible_policy == InfeasiblePolicy::halt) {
          log.halted = true;
          log.halted_at = t;
        } else {
          u = detail::closest_to_feasible(primary_row, u, ubox);
          delta = 0.0;
        }
      }
      rec.control = u;
      rec.delta = delta;
      last_status = rec.qp_status;
      log.events.push_back(std::move(rec));
    }

    SamplePoint sp;
    sp.t = t;
    sp.x = plant.state();
    sp.xbar = model.state;
    sp.e = err.e;
    sp.e_rates = err.rates;
    sp.u = u;
    sp.delta = delta;
    sp.psi = sc.psi_stack(meas);
    sp.corrections = model.corrections;
    sp.event_flag = flag;
    sp.qp_status = last_status;
    log.samples.push_back(std::move(sp));

    if (log.halted || n == nsteps) break;
    plant.advance(u, ts);
    detail::advance_model(model, u, t, t + ts, opt.integrator_dt);
  }
  return log;
}

/// What a fixed-period controller refreshes at each of its solves: nothing
/// (the model runs open loop), the model state from measurements, or the
/// state plus the drift corrections.
enum class BaselineSync { off, state, state_and_corrections };

/// Fixed-period controller on the same plant, sampling cadence, and logging
/// format as the event loop: solve the model-trusting QP every `dt` seconds
/// regardless of the monitored errors. No robustification is applied, which
/// is exactly what makes it the comparison target.
inline TrajectoryLog run_time_driven(const Scenario& sc, const EventLoopOptions& opt,
                                     double dt, BaselineSync sync) {
  detail::check_loop_options(opt);
  const double ts = 1.0 / opt.sensor_rate;
  const auto nsteps = static_cast<long>(std::llround(opt.horizon * opt.sensor_rate));
  if (nsteps < 1) throw std::invalid_argument("simulation: horizon shorter than one sample");
  const double ratio = dt * opt.sensor_rate;
  const auto every = static_cast<long>(std::llround(ratio));
  if (every < 1 || std::abs(ratio - static_cast<double>(every)) > 1e-9) {
    throw std::invalid_argument(
        "run_time_driven: dt must be a positive multiple of the sample period");
  }

  PlantInstance plant = sc.make_plant(opt);
  Sensor sensor(opt.noise_state, opt.noise_rate, opt.noise_accel, channel_rng(opt.seed, 901));
  AdaptiveModel model = sc.initial_model();
  const Box ubox = sc.control_bounds();
  const ClfSpec track = sc.tracking();
  const Vec cscale = sc.cost_scale();

  Vec u = Vec::Zero(sc.input_dim());
  double delta = 0.0;
  int last_status = static_cast<int>(qp::Status::optimal);

  TrajectoryLog log;
  log.samples.reserve(static_cast<size_t>(nsteps) + 1);

  for (long n = 0; n <= nsteps; ++n) {
    const double t = static_cast<double>(n) * ts;
    if (n > 0) plant.resample_disturbances();
    const Measurement meas =
        sensor.measure(t, plant.state(), plant.rates(u), sc.accel_stack(plant, u));
    ErrorState err = compute_error(meas, model, u, sc.degree());

    if (n % every == 0) {
      if (sync == BaselineSync::state_and_corrections) {
        sc.synchronize_model(model, meas, u);
        err = compute_error(meas, model, u, sc.degree());
      } else if (sync == BaselineSync::state) {
        model.state = meas.state;
        err = compute_error(meas, model, u, sc.degree());
      }

      const LinearRow row = sc.model_constraint_row(model);
      const Vec fbar = model.drift(model.state, model.corrections);
      const Mat gbar = model.input_matrix(model.state);
      const LinearRow clf = clf_row(track, model.state, fbar, gbar);
      auto problem = build_event_qp({row}, clf, ubox, cscale, track.relax_weight);
      ++log.qp_solves;
      const qp::QpSolution sol = qp::solve(problem);
      last_status = static_cast<int>(sol.status);
      if (sol.status == qp::Status::optimal) {
        u = sol.optimizer.head(u.size());
        delta = sol.optimizer[u.size()];
      } else {
        ++log.infeasible_count;
        if (opt.infeasible_policy == InfeasiblePolicy::halt) {
          log.halted = true;
          log.halted_at = t;
        } else {
          u = detail::closest_to_feasible(row, u, ubox);
          delta = 0.0;
        }
      }
    }

    SamplePoint sp;
    sp.t = t;
    sp.x = plant.state();
    sp.xbar = model.state;
    sp.e = err.e;
    sp.e_rates = err.rates;
    sp.u = u;
    sp.delta = delta;
    sp.psi = sc.psi_stack(meas);
    sp.corrections = model.corrections;
    sp.event_flag = 0;
    sp.qp_status = last_status;
    log.samples.push_back(std::move(sp));

    if (log.halted || n == nsteps) break;
    plant.advance(u, ts);
    detail::advance_model(model, u, t, t + ts, opt.integrator_dt);
  }
  return log;
}

}  // namespace etcbf
