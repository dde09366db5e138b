#pragma once

#include <memory>
#include <string>
#include <vector>

#include <etcbf/event_engine.hpp>

namespace etcbf {

/// Minimal degree-one scenario: a scalar plant xdot = a(t) + u whose drift
/// a(t) is hidden from the controller, a prediction model xbardot = h + u
/// whose drift starts at zero and adapts at events, and the barrier b(x) = x
/// with an identity class-K function keeping the plant nonnegative.
struct ToyParams {
  double x0 = 1.0;
  double target = 1.0;  // tracking target; the plant starts on it by default
  double drift_lo = -0.2;
  double drift_hi = 0.2;
  double u_min = -5.0;
  double u_max = 5.0;
  double w = 0.05;    // error bound
  double nu1 = 0.25;  // error rate bound
  double s = 0.05;    // model excursion bound
  double clf_epsilon = 10.0;
  double relax_weight = 1.0;
};

class ToyScenario : public Scenario {
 public:
  explicit ToyScenario(ToyParams params = {}) : p_(params) {}

  [[nodiscard]] const ToyParams& params() const { return p_; }

  [[nodiscard]] std::string name() const override { return "toy_rd1"; }
  [[nodiscard]] Eigen::Index model_dim() const override { return 1; }
  [[nodiscard]] Eigen::Index input_dim() const override { return 1; }
  [[nodiscard]] int degree() const override { return 1; }

  [[nodiscard]] Box control_bounds() const override {
    return Box(Vec::Constant(1, p_.u_min), Vec::Constant(1, p_.u_max));
  }

  [[nodiscard]] EventBounds event_bounds() const override {
    EventBounds b;
    b.w = Vec::Constant(1, p_.w);
    b.nu = {Vec::Constant(1, p_.nu1)};
    b.s = Vec::Constant(1, p_.s);
    return b;
  }

  [[nodiscard]] ClfSpec tracking() const override {
    ClfSpec c;
    c.target = Vec::Constant(1, p_.target);
    c.weights = Vec::Ones(1);
    c.epsilon = p_.clf_epsilon;
    c.relax_weight = p_.relax_weight;
    return c;
  }

  [[nodiscard]] PlantInstance make_plant(const EventLoopOptions& opt) const override {
    DisturbedField f = [](const Vec&, const Vec& u, const Vec& d, double) {
      return Vec::Constant(1, d[0] + u[0]);
    };
    std::vector<DisturbanceSpec> specs{{p_.drift_lo * opt.disturbance_scale,
                                        p_.drift_hi * opt.disturbance_scale,
                                        opt.walk_rate}};
    return PlantInstance(std::move(f), std::move(specs), Vec::Constant(1, p_.x0), opt.seed,
                         opt.integrator_dt);
  }

  [[nodiscard]] AdaptiveModel initial_model() const override {
    AdaptiveModel m;
    m.drift = [](const Vec&, const Vec& h) { return h; };
    m.input_matrix = [](const Vec&) { return Mat::Ones(1, 1); };
    m.state = Vec::Constant(1, p_.x0);
    m.corrections = Vec::Zero(1);
    return m;
  }

  /// Term split of the degree-one constraint on b(x) = x:
  ///   [h] + [1] u + [e1d] + [xbar + e1]  >=  0
  /// over joint coordinates (xbar, e1, e1d), with membership xbar + e1 >= 0
  /// restating that the plant is only operated inside the safe set.
  [[nodiscard]] RobustBarrierSpec robust_spec(const AdaptiveModel& model) const override {
    RobustBarrierSpec rs;
    rs.ny = 1;
    rs.degree = 1;
    rs.drift.constant = model.corrections[0];
    rs.control.resize(1);
    rs.control[0].constant = 1.0;
    rs.error.coords = {2};
    rs.error.eval = [](std::span<const double> v) { return v[0]; };
    rs.alpha.coords = {0, 1};
    rs.alpha.eval = [](std::span<const double> v) { return v[0] + v[1]; };
    rs.memberships.resize(1);
    rs.memberships[0].coords = {0, 1};
    rs.memberships[0].coeff = {1.0, 1.0};
    rs.memberships[0].rhs = 0.0;
    return rs;
  }

  [[nodiscard]] Vec psi_stack(const Measurement& m) const override {
    return Vec::Constant(1, m.state[0]);
  }

  [[nodiscard]] std::vector<double> csv_fields(const SamplePoint& sp) const override {
    return {sp.t,
            sp.x[0],
            0.0,
            sp.xbar[0],
            0.0,
            sp.e[0],
            sp.e_rates[0][0],
            0.0,
            sp.u[0],
            sp.delta,
            sp.psi[0],
            sp.psi[0],
            sp.corrections[0],
            0.0};
  }

  [[nodiscard]] std::string csv_units() const override {
    return "t [s]; scalar scenario: v = true state, v_bar = model state, "
           "e2 = error, e2dot = error rate, u = control, b = psi1 = barrier, "
           "h1 = drift correction; unused columns are zero; all dimensionless";
  }

 private:
  ToyParams p_;
};

inline std::unique_ptr<Scenario> make_toy_scenario(ToyParams params = {}) {
  return std::make_unique<ToyScenario>(params);
}

}  // namespace etcbf
