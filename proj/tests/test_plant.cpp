#include <etcbf/plant.hpp>

#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <stdexcept>
#include <vector>

using namespace etcbf;

TEST_CASE("reflected walk stays inside its support and moves gradually", "[plant]") {
  const double lo = 0.9;
  const double hi = 1.0;
  const double rate = 0.25;
  DisturbanceProcess p(lo, hi, rate, channel_rng(7, 1));
  const double step_max = 0.5 * (hi - lo) * rate;
  double prev = p.value();
  REQUIRE(prev >= lo);
  REQUIRE(prev <= hi);
  double seen_lo = prev;
  double seen_hi = prev;
  for (int i = 0; i < 10000; ++i) {
    p.resample();
    const double v = p.value();
    REQUIRE(v >= lo);
    REQUIRE(v <= hi);
    REQUIRE(std::abs(v - prev) <= step_max + 1e-15);
    seen_lo = std::min(seen_lo, v);
    seen_hi = std::max(seen_hi, v);
    prev = v;
  }
  // the walk must actually explore the support, not hug one end
  REQUIRE(seen_lo < lo + 0.02 * (hi - lo));
  REQUIRE(seen_hi > hi - 0.02 * (hi - lo));
}

TEST_CASE("reflected walk is strongly correlated sample to sample", "[plant]") {
  DisturbanceProcess p(-2.0, 2.0, 0.25, channel_rng(11, 2));
  const int n = 20000;
  std::vector<double> v(static_cast<size_t>(n));
  for (int i = 0; i < n; ++i) {
    p.resample();
    v[static_cast<size_t>(i)] = p.value();
  }
  double mean = 0.0;
  for (double x : v) mean += x;
  mean /= n;
  double num = 0.0;
  double den = 0.0;
  for (int i = 0; i < n; ++i) {
    const double c = v[static_cast<size_t>(i)] - mean;
    den += c * c;
    if (i + 1 < n) num += c * (v[static_cast<size_t>(i + 1)] - mean);
  }
  REQUIRE(num / den > 0.8);
}

TEST_CASE("degenerate support pins the value", "[plant]") {
  DisturbanceProcess p(0.0, 0.0, 0.25, channel_rng(3, 1));
  REQUIRE(p.value() == 0.0);
  for (int i = 0; i < 100; ++i) {
    p.resample();
    REQUIRE(p.value() == 0.0);
  }
}

TEST_CASE("disturbance streams are deterministic per (seed, stream)", "[plant]") {
  DisturbanceProcess a(-1.0, 1.0, 0.5, channel_rng(42, 1));
  DisturbanceProcess b(-1.0, 1.0, 0.5, channel_rng(42, 1));
  DisturbanceProcess c(-1.0, 1.0, 0.5, channel_rng(42, 2));
  bool any_diff = false;
  for (int i = 0; i < 100; ++i) {
    a.resample();
    b.resample();
    c.resample();
    REQUIRE(a.value() == b.value());
    any_diff = any_diff || a.value() != c.value();
  }
  REQUIRE(any_diff);
}

TEST_CASE("walk construction validates its arguments", "[plant]") {
  REQUIRE_THROWS_AS(DisturbanceProcess(1.0, 0.0, 0.5, channel_rng(1, 1)), std::invalid_argument);
  REQUIRE_THROWS_AS(DisturbanceProcess(0.0, 1.0, 0.0, channel_rng(1, 1)), std::invalid_argument);
  REQUIRE_THROWS_AS(DisturbanceProcess(0.0, 1.0, 2.5, channel_rng(1, 1)), std::invalid_argument);
}

TEST_CASE("plant integrates a held control", "[plant]") {
  PlantInstance plant([](const Vec&, const Vec& u, const Vec&, double) { return u; }, {},
                      Vec::Zero(1), 5);
  Vec u(1);
  u << 2.0;
  REQUIRE(plant.rates(u)[0] == 2.0);
  plant.advance(u, 0.5);
  REQUIRE(plant.time() == Catch::Approx(0.5).margin(1e-15));
  REQUIRE(plant.state()[0] == Catch::Approx(1.0).margin(1e-12));
  REQUIRE_THROWS_AS(plant.advance(u, -0.1), std::invalid_argument);
}

TEST_CASE("plant holds disturbances constant between resamples", "[plant]") {
  PlantInstance plant([](const Vec&, const Vec&, const Vec& d, double) { return d; },
                      {{-2.0, 2.0, 0.25}}, Vec::Zero(1), 9);
  const double d0 = plant.disturbances()[0];
  REQUIRE(d0 >= -2.0);
  REQUIRE(d0 <= 2.0);
  plant.advance(Vec::Zero(0), 0.05);
  // pure integrator of a frozen disturbance: x = d0 * t exactly
  REQUIRE(plant.state()[0] == Catch::Approx(d0 * 0.05).margin(1e-13));
  plant.resample_disturbances();
  const double d1 = plant.disturbances()[0];
  REQUIRE(std::abs(d1 - d0) <= 0.5 * (2.0 - -2.0) * 0.25 + 1e-15);
}

TEST_CASE("sensor passes values through exactly when noise-free", "[plant]") {
  Sensor s(Vec(), Vec(), Vec(), channel_rng(1, 9));
  Vec x(2);
  x << 20.0, 100.0;
  Vec r(2);
  r << -0.5, 6.0;
  const auto m = s.measure(1.25, x, r);
  REQUIRE(m.t == 1.25);
  REQUIRE(m.state == x);
  REQUIRE(m.rate == r);
  REQUIRE(m.accel.size() == 0);
  REQUIRE(m.hw_state == Vec::Zero(2));
  REQUIRE(m.hw_rate == Vec::Zero(2));
}

TEST_CASE("sensor noise is bounded by the half-widths and reproducible", "[plant]") {
  const Vec hw = Vec::Constant(2, 0.1);
  Sensor a(hw, Vec(), Vec(), channel_rng(33, 9));
  Sensor b(hw, Vec(), Vec(), channel_rng(33, 9));
  Vec x(2);
  x << 1.0, -1.0;
  bool any_noise = false;
  for (int i = 0; i < 50; ++i) {
    const auto ma = a.measure(0.0, x, Vec::Zero(2));
    const auto mb = b.measure(0.0, x, Vec::Zero(2));
    REQUIRE(ma.state == mb.state);
    for (Eigen::Index k = 0; k < 2; ++k) {
      REQUIRE(std::abs(ma.state[k] - x[k]) <= 0.1);
    }
    any_noise = any_noise || ma.state != x;
    REQUIRE(ma.hw_state == hw);
  }
  REQUIRE(any_noise);
  Sensor bad(Vec::Constant(1, 0.1), Vec(), Vec(), channel_rng(1, 9));
  REQUIRE_THROWS_AS(bad.measure(0.0, x, Vec::Zero(2)), std::invalid_argument);
}
