#pragma once

#include <cmath>
#include <limits>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include <etcbf/event_engine.hpp>

namespace etcbf {

/// Longitudinal cruise-control scenario: the controlled car follows a lead
/// car driving at constant speed vp. The plant state is (v, z) with v the own
/// speed and z the bumper gap; the safety constraint keeps z at least lp with
/// a degree-two barrier chain on the gap.
struct AccParams {
  double vp = 13.89;  // lead car speed [m/s]
  double vd = 24.0;   // desired own speed [m/s]
  double mass = 1650.0;
  double gravity = 9.81;
  double f0 = 0.1;  // true resistance F(v) = f0 sgn(v) + f1 v + f2 v^2
  double f1 = 5.0;
  double f2 = 0.25;
  double g0 = 0.3;  // believed resistance used by the prediction model
  double g1 = 10.0;
  double g2 = 0.5;
  double ca = 0.6;  // max acceleration as a fraction of g
  double cd = 0.6;  // max deceleration as a fraction of g
  double lp = 10.0;    // minimum gap [m]
  double v0 = 20.0;    // initial own speed
  double z0 = 100.0;   // initial gap
  double s1 = 0.4;     // allowed model-speed excursion between events
  double s2 = 0.5;     // allowed model-gap excursion between events
  double w2 = 1.0;     // gap error bound
  double nu21 = 0.5;   // gap error rate bound
  double nu22 = 0.2;   // gap error acceleration bound
  double d1lo = -0.2;  // additive speed disturbance support
  double d1hi = 0.2;
  double d2lo = -2.0;  // additive gap-rate disturbance support
  double d2hi = 2.0;
  double d3lo = 0.9;  // multiplicative control effectiveness support
  double d3hi = 1.0;
  double clf_epsilon = 10.0;
  double relax_weight = 1.0;
};

inline double quadratic_resistance(double c0, double c1, double c2, double v) {
  const double sgn = v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0);
  return c0 * sgn + c1 * v + c2 * v * v;
}

/// Closed-form limit values for the cruise-control constraint. Mirrors the
/// generic path exactly: the same membership clamps on the gap error and its
/// rate, then each term taken at its minimizing corner. The believed
/// resistance is increasing for nonnegative speeds, so the drift minimum sits
/// at the low end of the speed interval; a speed interval reaching below zero
/// falls back to the grid search. The control coefficient is the constant
/// -1/mass, so it is exact and independent of the control sign.
inline LimitValues acc_limit_values(double vbar_k, double zbar_k, double h1, double h2,
                                    const AccParams& p, int grid = 21) {
  const double vlo = vbar_k - p.s1;
  const double vhi = vbar_k + p.s1;
  const double zlo = zbar_k - p.s2;
  const double zhi = zbar_k + p.s2;
  double e2_lo = -p.w2;
  const double e2_hi = p.w2;
  double ed2_lo = -p.nu21;
  const double ed2_hi = p.nu21;

  // gap membership: zbar + e2 >= lp
  e2_lo = std::max(e2_lo, p.lp - zhi);
  if (e2_lo > e2_hi) {
    throw EmptyFeasibleBox("membership constraints leave no admissible error value");
  }

  // first-stage membership: -vbar + zbar + e2 + ed2 >= lp - h2 - vp, with the
  // clamps on e2 and ed2 computed in parallel from the current intervals
  {
    const double rhs = p.lp - h2 - p.vp;
    const double rest_e2 = -vlo + zhi + ed2_hi;
    const double rest_ed2 = -vlo + zhi + e2_hi;
    e2_lo = std::max(e2_lo, rhs - rest_e2);
    ed2_lo = std::max(ed2_lo, rhs - rest_ed2);
    if (e2_lo > e2_hi || ed2_lo > ed2_hi) {
      throw EmptyFeasibleBox("membership constraints leave no admissible error value");
    }
  }

  LimitValues lv;
  if (vlo >= 0.0) {
    lv.b_f_min = -h1 + quadratic_resistance(p.g0, p.g1, p.g2, vlo) / p.mass;
  } else {
    lv.b_f_min = box_extremize(
        [&](std::span<const double> v) {
          return -h1 + quadratic_resistance(p.g0, p.g1, p.g2, v[0]) / p.mass;
        },
        Box(Vec::Constant(1, vlo), Vec::Constant(1, vhi)), Extremum::minimum, grid);
  }
  lv.b_g_lim = RowVec::Constant(1, -1.0 / p.mass);
  lv.b_e_min = -p.nu22;
  lv.b_R_min = (h2 + p.vp - vhi) + ed2_lo;
  lv.b_alpha_min = (h2 + p.vp - vhi + ed2_lo) + (zlo + e2_lo - p.lp);
  return lv;
}

class AccScenario : public Scenario {
 public:
  explicit AccScenario(AccParams params = {}) : p_(params) {}

  [[nodiscard]] const AccParams& params() const { return p_; }

  [[nodiscard]] std::string name() const override { return "acc"; }
  [[nodiscard]] Eigen::Index model_dim() const override { return 2; }
  [[nodiscard]] Eigen::Index input_dim() const override { return 1; }
  [[nodiscard]] int degree() const override { return 2; }

  [[nodiscard]] Box control_bounds() const override {
    const double limit_a = p_.ca * p_.mass * p_.gravity;
    const double limit_d = p_.cd * p_.mass * p_.gravity;
    return Box(Vec::Constant(1, -limit_d), Vec::Constant(1, limit_a));
  }

  [[nodiscard]] EventBounds event_bounds() const override {
    constexpr double inf = std::numeric_limits<double>::infinity();
    EventBounds b;
    b.w = Vec(2);
    b.w << inf, p_.w2;
    b.nu.resize(2);
    b.nu[0] = Vec(2);
    b.nu[0] << inf, p_.nu21;
    b.nu[1] = Vec(2);
    b.nu[1] << inf, p_.nu22;
    b.s = Vec(2);
    b.s << p_.s1, p_.s2;
    return b;
  }

  [[nodiscard]] ClfSpec tracking() const override {
    ClfSpec c;
    c.target = Vec(2);
    c.target << p_.vd, 0.0;
    c.weights = Vec(2);
    c.weights << 1.0, 0.0;
    c.epsilon = p_.clf_epsilon;
    c.relax_weight = p_.relax_weight;
    return c;
  }

  /// Control costs are charged per unit of achievable acceleration, not per
  /// newton; otherwise the huge force scale would make the tracking relaxation
  /// the only thing the objective can see.
  [[nodiscard]] Vec cost_scale() const override { return Vec::Constant(1, 1.0 / p_.mass); }

  [[nodiscard]] PlantInstance make_plant(const EventLoopOptions& opt) const override {
    const AccParams p = p_;
    DisturbedField f = [p](const Vec& x, const Vec& u, const Vec& d, double) {
      Vec dx(2);
      dx[0] = d[0] + d[2] * u[0] / p.mass -
              quadratic_resistance(p.f0, p.f1, p.f2, x[0]) / p.mass;
      dx[1] = d[1] + p.vp - x[0];
      return dx;
    };
    std::vector<DisturbanceSpec> specs{
        {p.d1lo * opt.disturbance_scale, p.d1hi * opt.disturbance_scale, opt.walk_rate},
        {p.d2lo * opt.disturbance_scale, p.d2hi * opt.disturbance_scale, opt.walk_rate},
        {p.d3lo, p.d3hi, opt.walk_rate}};
    Vec x0(2);
    x0 << p.v0, p.z0;
    return PlantInstance(std::move(f), std::move(specs), std::move(x0), opt.seed,
                         opt.integrator_dt);
  }

  [[nodiscard]] AdaptiveModel initial_model() const override {
    const AccParams p = p_;
    AdaptiveModel m;
    m.drift = [p](const Vec& x, const Vec& h) {
      Vec f(2);
      f[0] = h[0] - quadratic_resistance(p.g0, p.g1, p.g2, x[0]) / p.mass;
      f[1] = h[1] + p.vp - x[0];
      return f;
    };
    m.input_matrix = [p](const Vec&) {
      Mat g(2, 1);
      g << 1.0 / p.mass, 0.0;
      return g;
    };
    m.higher_rates.push_back([p](const AdaptiveModel& model, const Vec& u) {
      const Vec r = model.rate(u);
      Vec a(2);
      a[0] = -(p.g1 + 2.0 * p.g2 * model.state[0]) / p.mass * r[0];
      a[1] = -r[0];
      return a;
    });
    m.state = Vec(2);
    m.state << p.v0, p.z0;
    m.corrections = Vec::Zero(2);
    return m;
  }

  [[nodiscard]] Vec accel_stack(const PlantInstance& plant, const Vec& u) const override {
    const Vec r = plant.rates(u);
    Vec a(2);
    a[0] = -(p_.f1 + 2.0 * p_.f2 * plant.state()[0]) / p_.mass * r[0];
    a[1] = -r[0];
    return a;
  }

  /// Term split of the degree-two constraint on b = z - lp with identity
  /// class-K functions at both stages:
  ///
  ///   [-h1 + Fn(vbar)/mass] + [-1/mass] u + [e2dd]
  ///     + [(h2 + vp - vbar) + e2d]
  ///     + [(h2 + vp - vbar + e2d) + (zbar + e2 - lp)]  >=  0
  ///
  /// over joint coordinates (vbar, zbar, e1, e2, e1d, e2d, e1dd, e2dd).
  [[nodiscard]] RobustBarrierSpec robust_spec(const AdaptiveModel& model) const override {
    const AccParams p = p_;
    const double h1 = model.corrections[0];
    const double h2 = model.corrections[1];

    RobustBarrierSpec rs;
    rs.ny = 2;
    rs.degree = 2;
    rs.drift.coords = {0};
    rs.drift.eval = [p, h1](std::span<const double> v) {
      return -h1 + quadratic_resistance(p.g0, p.g1, p.g2, v[0]) / p.mass;
    };
    rs.control.resize(1);
    rs.control[0].constant = -1.0 / p.mass;
    rs.error.coords = {7};
    rs.error.eval = [](std::span<const double> v) { return v[0]; };
    rs.remainder.coords = {0, 5};
    rs.remainder.eval = [p, h2](std::span<const double> v) {
      return (h2 + p.vp - v[0]) + v[1];
    };
    rs.alpha.coords = {0, 1, 3, 5};
    rs.alpha.eval = [p, h2](std::span<const double> v) {
      return (h2 + p.vp - v[0] + v[3]) + (v[1] + v[2] - p.lp);
    };
    rs.memberships.resize(2);
    rs.memberships[0].coords = {1, 3};
    rs.memberships[0].coeff = {1.0, 1.0};
    rs.memberships[0].rhs = p.lp;
    rs.memberships[1].coords = {0, 1, 3, 5};
    rs.memberships[1].coeff = {-1.0, 1.0, 1.0, 1.0};
    rs.memberships[1].rhs = p.lp - h2 - p.vp;
    return rs;
  }

  [[nodiscard]] LimitValues limit_values(const AdaptiveModel& model, const EventBounds& bounds,
                                         const Vec& /*u_sign*/, int grid) const override {
    if (bounds.s.size() != 2 || bounds.s[0] != p_.s1 || bounds.s[1] != p_.s2 ||
        bounds.w[1] != p_.w2 || bounds.nu.size() != 2 || bounds.nu[0][1] != p_.nu21 ||
        bounds.nu[1][1] != p_.nu22) {
      throw std::invalid_argument(
          "AccScenario: closed-form limit values require the scenario's own bounds");
    }
    return acc_limit_values(model.state[0], model.state[1], model.corrections[0],
                            model.corrections[1], p_, grid);
  }

  /// The drift corrections track the gap chain: the gap-rate error feeds the
  /// gap equation and the (negated) gap-acceleration error feeds the speed
  /// equation. Both are read after the state reset so the post-event gap
  /// error derivatives vanish.
  void synchronize_model(AdaptiveModel& model, const Measurement& m,
                         const Vec& u_held) const override {
    model.state = m.state;
    const ErrorState err = compute_error(m, model, u_held, 2);
    model.corrections[0] -= err.rates[1][1];
    model.corrections[1] += err.rates[0][1];
  }

  [[nodiscard]] Vec psi_stack(const Measurement& m) const override {
    Vec psi(2);
    psi[0] = m.state[1] - p_.lp;
    psi[1] = m.rate[1] + m.state[1] - p_.lp;
    return psi;
  }

  [[nodiscard]] std::vector<double> csv_fields(const SamplePoint& sp) const override {
    return {sp.t,
            sp.x[0],
            sp.x[1],
            sp.xbar[0],
            sp.xbar[1],
            sp.e[1],
            sp.e_rates[0][1],
            sp.e_rates[1][1],
            sp.u[0],
            sp.delta,
            sp.psi[0],
            sp.psi[1],
            sp.corrections[0],
            sp.corrections[1]};
  }

  [[nodiscard]] std::string csv_units() const override {
    return "t [s], v [m/s], z [m], v_bar [m/s], z_bar [m], e2 [m], e2dot [m/s], "
           "e2ddot [m/s^2], u [N], delta [-], b [m], psi1 [m/s + m], h1 [m/s^2], "
           "h2 [m/s], event_flag [-], qp_status [-]";
  }

  /// Squared normalized drive-force deviation ((u - F(v)) / M)^2, evaluated on
  /// the true speed v: a simulation-only diagnostic.
  [[nodiscard]] double control_effort(const Vec& x, const Vec& u) const override {
    const double excess =
        (u[0] - quadratic_resistance(p_.f0, p_.f1, p_.f2, x[0])) / p_.mass;
    return excess * excess;
  }

 private:
  AccParams p_;
};

inline std::unique_ptr<Scenario> make_acc_scenario(AccParams params = {}) {
  return std::make_unique<AccScenario>(params);
}

}  // namespace etcbf
