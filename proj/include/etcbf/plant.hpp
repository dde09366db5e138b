#pragma once

#include <etcbf/numerics.hpp>

#include <cstdint>
#include <functional>
#include <random>
#include <stdexcept>
#include <utility>
#include <vector>

namespace etcbf {

/// 53-bit uniform draw in [0, 1). std::uniform_real_distribution is
/// implementation-defined; this keeps value streams identical across
/// standard libraries.
inline double uniform_unit(std::mt19937_64& rng) {
  return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

inline double uniform_in(std::mt19937_64& rng, double lo, double hi) {
  return lo + (hi - lo) * uniform_unit(rng);
}

/// Independent generator per (seed, stream) pair so adding a channel never
/// shifts the draws of another.
inline std::mt19937_64 channel_rng(std::uint64_t seed, std::uint64_t stream) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(stream), static_cast<std::uint32_t>(stream >> 32)};
  return std::mt19937_64(seq);
}

/// Bounded piecewise-constant random process. Each resample takes a uniform
/// step of at most walk_rate times the support half-width and reflects off
/// the support ends: consecutive values stay correlated while the process
/// still reaches the whole support. walk_rate near 1 approaches independent
/// redraws; small values give a slowly wandering signal.
class DisturbanceProcess {
 public:
  DisturbanceProcess(double lo, double hi, double walk_rate, std::mt19937_64 rng)
      : lo_(lo), hi_(hi), step_max_(0.5 * (hi - lo) * walk_rate), rng_(std::move(rng)) {
    if (!(hi >= lo)) throw std::invalid_argument("DisturbanceProcess: hi < lo");
    if (walk_rate <= 0.0 || walk_rate > 2.0) {
      throw std::invalid_argument("DisturbanceProcess: walk_rate outside (0, 2]");
    }
    value_ = uniform_in(rng_, lo_, hi_);
  }

  [[nodiscard]] double value() const { return value_; }
  [[nodiscard]] double lower() const { return lo_; }
  [[nodiscard]] double upper() const { return hi_; }

  void resample() {
    if (hi_ == lo_) return;
    value_ += uniform_in(rng_, -step_max_, step_max_);
    while (value_ < lo_ || value_ > hi_) {
      value_ = value_ > hi_ ? 2.0 * hi_ - value_ : 2.0 * lo_ - value_;
    }
  }

 private:
  double lo_;
  double hi_;
  double step_max_;
  double value_ = 0.0;
  std::mt19937_64 rng_;
};

struct DisturbanceSpec {
  double lo = 0.0;
  double hi = 0.0;
  double walk_rate = 0.05;
};

/// True dynamics xdot = f(x, u, d, t) with d the current disturbance values.
using DisturbedField = std::function<Vec(const Vec&, const Vec&, const Vec&, double)>;

/// Owns the true state and its exogenous disturbances. The caller drives the
/// sample loop: resample the disturbances at sampling instants, read
/// measurements, then integrate the held control to the next instant;
/// disturbances are constant between resamples.
class PlantInstance {
 public:
  PlantInstance(DisturbedField f, std::vector<DisturbanceSpec> specs, Vec x0,
                std::uint64_t seed, double integrator_dt = 1e-3)
      : f_(std::move(f)), x_(std::move(x0)), integrator_dt_(integrator_dt) {
    if (!f_) throw std::invalid_argument("PlantInstance: missing dynamics");
    if (integrator_dt_ <= 0.0) throw std::invalid_argument("PlantInstance: integrator_dt <= 0");
    procs_.reserve(specs.size());
    d_.resize(static_cast<Eigen::Index>(specs.size()));
    for (size_t i = 0; i < specs.size(); ++i) {
      procs_.emplace_back(specs[i].lo, specs[i].hi, specs[i].walk_rate,
                          channel_rng(seed, static_cast<std::uint64_t>(i) + 1));
      d_[static_cast<Eigen::Index>(i)] = procs_[i].value();
    }
  }

  [[nodiscard]] const Vec& state() const { return x_; }
  [[nodiscard]] const Vec& disturbances() const { return d_; }
  [[nodiscard]] double time() const { return t_; }

  void resample_disturbances() {
    for (size_t i = 0; i < procs_.size(); ++i) {
      procs_[i].resample();
      d_[static_cast<Eigen::Index>(i)] = procs_[i].value();
    }
  }

  /// f(x, u, d, t) at the current state with the current disturbance values.
  [[nodiscard]] Vec rates(const Vec& u) const { return f_(x_, u, d_, t_); }

  /// Integrate the held control over [t, t + dt] with frozen disturbances.
  void advance(const Vec& u, double dt) {
    if (dt < 0.0) throw std::invalid_argument("PlantInstance::advance: negative dt");
    if (dt == 0.0) return;
    const Vec d = d_;
    x_ = integrate([this, &d](const Vec& x, const Vec& uu, double t) { return f_(x, uu, d, t); },
                   x_, u, t_, t_ + dt, integrator_dt_);
    t_ += dt;
  }

 private:
  DisturbedField f_;
  std::vector<DisturbanceProcess> procs_;
  Vec d_;
  Vec x_;
  double t_ = 0.0;
  double integrator_dt_;
};

/// One sensor reading: the state, its rates under the control held when the
/// sample was taken, and an optional second-derivative stack. The half-width
/// vectors bound the additive noise on each block (empty means exact), so
/// detectors can reason about worst-case measurement error.
struct Measurement {
  double t = 0.0;
  Vec state;
  Vec rate;
  Vec accel;
  Vec hw_state;
  Vec hw_rate;
  Vec hw_accel;
};

/// Adds bounded uniform noise to exact plant outputs. Half-width vectors may
/// be empty (no noise on that block) or sized to the corresponding block.
class Sensor {
 public:
  Sensor(Vec hw_state, Vec hw_rate, Vec hw_accel, std::mt19937_64 rng)
      : hw_state_(std::move(hw_state)), hw_rate_(std::move(hw_rate)),
        hw_accel_(std::move(hw_accel)), rng_(std::move(rng)) {}

  Measurement measure(double t, Vec state, Vec rate, Vec accel = Vec()) {
    Measurement m;
    m.t = t;
    m.state = std::move(state);
    m.rate = std::move(rate);
    m.accel = std::move(accel);
    corrupt(m.state, hw_state_, "state");
    corrupt(m.rate, hw_rate_, "rate");
    corrupt(m.accel, hw_accel_, "accel");
    m.hw_state = hw_state_.size() ? hw_state_ : Vec::Zero(m.state.size());
    m.hw_rate = hw_rate_.size() ? hw_rate_ : Vec::Zero(m.rate.size());
    m.hw_accel = hw_accel_.size() ? hw_accel_ : Vec::Zero(m.accel.size());
    return m;
  }

 private:
  void corrupt(Vec& v, const Vec& hw, const char* what) {
    if (hw.size() == 0) return;
    if (hw.size() != v.size()) {
      throw std::invalid_argument(std::string("Sensor: half-width size mismatch on ") + what);
    }
    for (Eigen::Index i = 0; i < v.size(); ++i) {
      v[i] += uniform_in(rng_, -hw[i], hw[i]);
    }
  }

  Vec hw_state_;
  Vec hw_rate_;
  Vec hw_accel_;
  std::mt19937_64 rng_;
};

}  // namespace etcbf
