#pragma once

// Run orchestration on top of the simulation loops: flat key = value config
// files, deterministic CSV / JSON emission, and the run / compare entry
// points used by the command-line tool.

#include <etcbf/acc.hpp>
#include <etcbf/toy_scenario.hpp>

#include <json.hpp>

#include <array>
#include <cctype>
#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <istream>
#include <limits>
#include <map>
#include <memory>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace etcbf {

/// Malformed configuration or command usage; the CLI maps it to exit code 1.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Everything a single simulation run needs. A config file fully determines
/// a run; the CLI may override seed, mode, and output directory.
struct RunConfig {
  std::string scenario = "acc";  // acc | toy_rd1
  std::string mode = "event";    // event | time_driven
  bool sync_in_baseline = true;  // time_driven only: reset the model state every dt
  double dt_baseline = 0.1;
  EventLoopOptions loop;
  std::map<std::string, double> params;  // scenario parameter overrides
  std::string out_dir;                   // empty: no files written
};

namespace detail {

inline std::string trim(std::string s) {
  const auto is_space = [](unsigned char c) { return std::isspace(c) != 0; };
  while (!s.empty() && is_space(static_cast<unsigned char>(s.front()))) s.erase(s.begin());
  while (!s.empty() && is_space(static_cast<unsigned char>(s.back()))) s.pop_back();
  return s;
}

inline double parse_double(const std::string& key, const std::string& value) {
  try {
    std::size_t used = 0;
    const double x = std::stod(value, &used);
    if (used != value.size()) throw std::invalid_argument(value);
    return x;
  } catch (const std::exception&) {
    throw ConfigError("config: key '" + key + "' needs a number, got '" + value + "'");
  }
}

inline long long parse_integer(const std::string& key, const std::string& value) {
  try {
    std::size_t used = 0;
    const long long x = std::stoll(value, &used);
    if (used != value.size()) throw std::invalid_argument(value);
    return x;
  } catch (const std::exception&) {
    throw ConfigError("config: key '" + key + "' needs an integer, got '" + value + "'");
  }
}

inline bool parse_bool(const std::string& key, const std::string& value) {
  if (value == "true" || value == "1") return true;
  if (value == "false" || value == "0") return false;
  throw ConfigError("config: key '" + key + "' needs true or false, got '" + value + "'");
}

/// Whitespace-separated list of numbers; an empty value is an empty vector.
inline Vec parse_vector(const std::string& key, const std::string& value) {
  std::istringstream in(value);
  std::vector<double> entries;
  std::string token;
  while (in >> token) entries.push_back(parse_double(key, token));
  Vec out(static_cast<Eigen::Index>(entries.size()));
  for (std::size_t i = 0; i < entries.size(); ++i) out[static_cast<Eigen::Index>(i)] = entries[i];
  return out;
}

}  // namespace detail

/// Parse a flat `key = value` stream. '#' starts a comment; blank lines are
/// skipped; unknown and duplicate keys are errors.
inline RunConfig parse_config(std::istream& in) {
  RunConfig cfg;
  std::set<std::string> seen;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const std::size_t hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = detail::trim(line);
    if (line.empty()) continue;
    const std::size_t eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("config line " + std::to_string(lineno) + ": expected key = value");
    }
    const std::string key = detail::trim(line.substr(0, eq));
    const std::string value = detail::trim(line.substr(eq + 1));
    if (key.empty()) {
      throw ConfigError("config line " + std::to_string(lineno) + ": empty key");
    }
    if (!seen.insert(key).second) {
      throw ConfigError("config line " + std::to_string(lineno) + ": duplicate key '" + key + "'");
    }

    if (key == "scenario") {
      cfg.scenario = value;
    } else if (key == "mode") {
      if (value != "event" && value != "time_driven") {
        throw ConfigError("config: mode must be event or time_driven, got '" + value + "'");
      }
      cfg.mode = value;
    } else if (key == "sync_in_baseline") {
      cfg.sync_in_baseline = detail::parse_bool(key, value);
    } else if (key == "dt_baseline") {
      cfg.dt_baseline = detail::parse_double(key, value);
    } else if (key == "horizon") {
      cfg.loop.horizon = detail::parse_double(key, value);
    } else if (key == "seed") {
      const long long s = detail::parse_integer(key, value);
      if (s < 0) throw ConfigError("config: seed must be non-negative");
      cfg.loop.seed = static_cast<std::uint64_t>(s);
    } else if (key == "sensor_rate") {
      cfg.loop.sensor_rate = detail::parse_double(key, value);
    } else if (key == "theta") {
      cfg.loop.theta = detail::parse_double(key, value);
    } else if (key == "disturbance_scale") {
      cfg.loop.disturbance_scale = detail::parse_double(key, value);
    } else if (key == "walk_rate") {
      cfg.loop.walk_rate = detail::parse_double(key, value);
    } else if (key == "grid") {
      cfg.loop.grid = static_cast<int>(detail::parse_integer(key, value));
    } else if (key == "infeasible_policy") {
      if (value == "halt") {
        cfg.loop.infeasible_policy = InfeasiblePolicy::halt;
      } else if (value == "clamp") {
        cfg.loop.infeasible_policy = InfeasiblePolicy::clamp;
      } else {
        throw ConfigError("config: infeasible_policy must be halt or clamp, got '" + value + "'");
      }
    } else if (key == "integrator_dt") {
      cfg.loop.integrator_dt = detail::parse_double(key, value);
    } else if (key == "noise_state") {
      cfg.loop.noise_state = detail::parse_vector(key, value);
    } else if (key == "noise_rate") {
      cfg.loop.noise_rate = detail::parse_vector(key, value);
    } else if (key == "noise_accel") {
      cfg.loop.noise_accel = detail::parse_vector(key, value);
    } else if (key == "out") {
      cfg.out_dir = value;
    } else if (key.rfind("param.", 0) == 0) {
      const std::string name = key.substr(6);
      if (name.empty()) {
        throw ConfigError("config line " + std::to_string(lineno) + ": empty parameter name");
      }
      cfg.params[name] = detail::parse_double(key, value);
    } else {
      throw ConfigError("config line " + std::to_string(lineno) + ": unknown key '" + key + "'");
    }
  }
  return cfg;
}

inline RunConfig parse_config_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file '" + path + "'");
  return parse_config(in);
}

/// Instantiate the named scenario with parameter overrides applied on top of
/// its defaults. Unknown scenario or parameter names are errors.
inline std::unique_ptr<Scenario> make_scenario(const RunConfig& cfg) {
  if (cfg.scenario == "acc") {
    static const std::map<std::string, double AccParams::*> fields = {
        {"vp", &AccParams::vp},
        {"vd", &AccParams::vd},
        {"mass", &AccParams::mass},
        {"gravity", &AccParams::gravity},
        {"f0", &AccParams::f0},
        {"f1", &AccParams::f1},
        {"f2", &AccParams::f2},
        {"g0", &AccParams::g0},
        {"g1", &AccParams::g1},
        {"g2", &AccParams::g2},
        {"ca", &AccParams::ca},
        {"cd", &AccParams::cd},
        {"lp", &AccParams::lp},
        {"v0", &AccParams::v0},
        {"z0", &AccParams::z0},
        {"s1", &AccParams::s1},
        {"s2", &AccParams::s2},
        {"w2", &AccParams::w2},
        {"nu21", &AccParams::nu21},
        {"nu22", &AccParams::nu22},
        {"d1lo", &AccParams::d1lo},
        {"d1hi", &AccParams::d1hi},
        {"d2lo", &AccParams::d2lo},
        {"d2hi", &AccParams::d2hi},
        {"d3lo", &AccParams::d3lo},
        {"d3hi", &AccParams::d3hi},
        {"clf_epsilon", &AccParams::clf_epsilon},
        {"relax_weight", &AccParams::relax_weight}};
    AccParams p;
    for (const auto& [name, value] : cfg.params) {
      const auto it = fields.find(name);
      if (it == fields.end()) {
        throw ConfigError("config: unknown parameter 'param." + name + "' for scenario acc");
      }
      p.*(it->second) = value;
    }
    return make_acc_scenario(p);
  }
  if (cfg.scenario == "toy_rd1") {
    static const std::map<std::string, double ToyParams::*> fields = {
        {"x0", &ToyParams::x0},
        {"target", &ToyParams::target},
        {"drift_lo", &ToyParams::drift_lo},
        {"drift_hi", &ToyParams::drift_hi},
        {"u_min", &ToyParams::u_min},
        {"u_max", &ToyParams::u_max},
        {"w", &ToyParams::w},
        {"nu1", &ToyParams::nu1},
        {"s", &ToyParams::s},
        {"clf_epsilon", &ToyParams::clf_epsilon},
        {"relax_weight", &ToyParams::relax_weight}};
    ToyParams p;
    for (const auto& [name, value] : cfg.params) {
      const auto it = fields.find(name);
      if (it == fields.end()) {
        throw ConfigError("config: unknown parameter 'param." + name + "' for scenario toy_rd1");
      }
      p.*(it->second) = value;
    }
    return make_toy_scenario(p);
  }
  throw ConfigError("config: unknown scenario '" + cfg.scenario + "'");
}

struct MetricsSummary {
  long qp_count = 0;
  // Counts by trigger: error bound, error-derivative bound, model-state
  // excursion, and the forced initial event.
  std::array<long, 4> event_counts{};
  double min_b = std::numeric_limits<double>::infinity();
  double min_psi1 = std::numeric_limits<double>::infinity();
  double control_energy = 0.0;  // trapezoidal integral of Scenario::control_effort
  long infeasible_count = 0;
  double wall_time_s = 0.0;
};

inline MetricsSummary compute_metrics(const Scenario& sc, const TrajectoryLog& log) {
  MetricsSummary m;
  m.qp_count = log.qp_solves;
  m.infeasible_count = log.infeasible_count;
  for (const EventRecord& ev : log.events) {
    if (ev.trigger.type >= 1 && ev.trigger.type <= 4) ++m.event_counts[ev.trigger.type - 1];
  }
  for (const SamplePoint& sp : log.samples) {
    m.min_b = std::min(m.min_b, sp.psi[0]);
    m.min_psi1 = std::min(m.min_psi1, sp.psi[sp.psi.size() > 1 ? 1 : 0]);
  }
  for (std::size_t i = 0; i + 1 < log.samples.size(); ++i) {
    const SamplePoint& a = log.samples[i];
    const SamplePoint& b = log.samples[i + 1];
    m.control_energy += 0.5 * (sc.control_effort(a.x, a.u) + sc.control_effort(b.x, b.u)) *
                        (b.t - a.t);
  }
  return m;
}

inline constexpr const char* kCsvHeader =
    "t,v,z,v_bar,z_bar,e2,e2dot,e2ddot,u,delta,b,psi1,h1,h2,event_flag,qp_status";

/// One comment line (units), one header line, one line per sensor sample.
/// %.17g keeps the text exact: parsing a field recovers the logged double.
inline void write_trajectory_csv(std::ostream& os, const Scenario& sc,
                                 const TrajectoryLog& log) {
  os << "# " << sc.csv_units() << '\n';
  os << kCsvHeader << '\n';
  char buf[40];
  for (const SamplePoint& sp : log.samples) {
    const std::vector<double> fields = sc.csv_fields(sp);
    for (const double x : fields) {
      std::snprintf(buf, sizeof buf, "%.17g", x);
      os << buf << ',';
    }
    os << sp.event_flag << ',' << sp.qp_status << '\n';
  }
}

inline nlohmann::ordered_json metrics_json(const RunConfig& cfg, const MetricsSummary& m,
                                           const TrajectoryLog& log) {
  nlohmann::ordered_json j;
  j["scenario"] = cfg.scenario;
  j["mode"] = cfg.mode;
  j["seed"] = cfg.loop.seed;
  j["samples"] = log.samples.size();
  j["qp_count"] = m.qp_count;
  j["event_counts"] = {{"error_bound", m.event_counts[0]},
                       {"error_rate_bound", m.event_counts[1]},
                       {"state_excursion", m.event_counts[2]},
                       {"initial", m.event_counts[3]}};
  j["min_b"] = m.min_b;
  j["min_psi1"] = m.min_psi1;
  j["control_energy"] = m.control_energy;
  j["infeasible_count"] = m.infeasible_count;
  j["halted"] = log.halted;
  if (log.halted) {
    j["halted_at"] = log.halted_at;
  } else {
    j["halted_at"] = nullptr;
  }
  j["wall_time_s"] = m.wall_time_s;
  return j;
}

struct RunResult {
  std::unique_ptr<Scenario> scenario;
  TrajectoryLog log;
  MetricsSummary metrics;
};

inline RunResult execute_run(const RunConfig& cfg) {
  RunResult r;
  r.scenario = make_scenario(cfg);
  const auto t0 = std::chrono::steady_clock::now();
  if (cfg.mode == "event") {
    r.log = run_event_loop(*r.scenario, cfg.loop);
  } else {
    r.log = run_time_driven(*r.scenario, cfg.loop, cfg.dt_baseline,
                            cfg.sync_in_baseline ? BaselineSync::state : BaselineSync::off);
  }
  r.metrics = compute_metrics(*r.scenario, r.log);
  r.metrics.wall_time_s =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return r;
}

/// Verbosity from the ETCBF_LOG environment variable: unset or anything else
/// is quiet, "info" prints a run summary line, "debug" adds per-event lines.
inline int log_level() {
  const char* v = std::getenv("ETCBF_LOG");
  if (v == nullptr) return 0;
  const std::string s(v);
  if (s == "debug") return 2;
  if (s == "info") return 1;
  return 0;
}

/// Execute one run, write its files, and return the process exit code:
/// 0 clean, 2 halted on an infeasible step. Config and I/O problems throw
/// ConfigError (exit 1); a diverging simulation throws IntegrationError
/// (exit 3). Both are mapped by the CLI.
inline int run_with_outputs(const RunConfig& cfg, std::ostream& log_stream = std::cerr) {
  const RunResult r = execute_run(cfg);
  if (!cfg.out_dir.empty()) {
    const std::filesystem::path dir(cfg.out_dir);
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec) throw ConfigError("cannot create output directory '" + cfg.out_dir + "'");
    {
      std::ofstream csv(dir / "trajectory.csv");
      write_trajectory_csv(csv, *r.scenario, r.log);
      if (!csv) throw ConfigError("cannot write " + (dir / "trajectory.csv").string());
    }
    {
      std::ofstream mj(dir / "metrics.json");
      mj << metrics_json(cfg, r.metrics, r.log).dump(2) << '\n';
      if (!mj) throw ConfigError("cannot write " + (dir / "metrics.json").string());
    }
  }
  if (log_level() >= 2) {
    for (const EventRecord& ev : r.log.events) {
      log_stream << "event t=" << ev.t << " type=" << ev.trigger.type
                 << " order=" << ev.trigger.order << " component=" << ev.trigger.component
                 << " qp_status=" << ev.qp_status << '\n';
    }
  }
  if (log_level() >= 1) {
    log_stream << "run scenario=" << cfg.scenario << " mode=" << cfg.mode
               << " seed=" << cfg.loop.seed << " samples=" << r.log.samples.size()
               << " qp_count=" << r.metrics.qp_count << " events=" << r.log.events.size()
               << " min_b=" << r.metrics.min_b << " min_psi1=" << r.metrics.min_psi1
               << " infeasible=" << r.metrics.infeasible_count
               << " halted=" << (r.log.halted ? "yes" : "no") << '\n';
  }
  return r.log.halted ? 2 : 0;
}

/// Run both configs and report ratios and per-metric deltas (b relative to
/// a). Both runs must use the same scenario and seed.
inline nlohmann::ordered_json compare_runs(const RunConfig& a, const RunConfig& b) {
  if (a.scenario != b.scenario) {
    throw ConfigError("compare: runs use different scenarios ('" + a.scenario + "' vs '" +
                      b.scenario + "')");
  }
  if (a.loop.seed != b.loop.seed) {
    throw ConfigError("compare: runs use different seeds (" + std::to_string(a.loop.seed) +
                      " vs " + std::to_string(b.loop.seed) + ")");
  }
  const RunResult ra = execute_run(a);
  const RunResult rb = execute_run(b);
  const auto total_events = [](const MetricsSummary& m) {
    return m.event_counts[0] + m.event_counts[1] + m.event_counts[2] + m.event_counts[3];
  };
  const auto ratio = [](double num, double den) -> nlohmann::ordered_json {
    if (den == 0.0) return nullptr;
    return num / den;
  };
  nlohmann::ordered_json j;
  j["a"] = metrics_json(a, ra.metrics, ra.log);
  j["b"] = metrics_json(b, rb.metrics, rb.log);
  j["qp_count_ratio"] = ratio(static_cast<double>(rb.metrics.qp_count),
                              static_cast<double>(ra.metrics.qp_count));
  j["event_count_ratio"] = ratio(static_cast<double>(total_events(rb.metrics)),
                                 static_cast<double>(total_events(ra.metrics)));
  j["min_b_delta"] = rb.metrics.min_b - ra.metrics.min_b;
  j["min_psi1_delta"] = rb.metrics.min_psi1 - ra.metrics.min_psi1;
  j["control_energy_delta"] = rb.metrics.control_energy - ra.metrics.control_energy;
  j["control_energy_ratio"] = ratio(rb.metrics.control_energy, ra.metrics.control_energy);
  return j;
}

}  // namespace etcbf
