// Config parsing, CSV / metrics emission, run / compare orchestration, and
// the command-line tool's exit codes.

#include <etcbf/runner.hpp>

#include <catch2/catch_amalgamated.hpp>

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

using namespace etcbf;
namespace fs = std::filesystem;

namespace {

RunConfig config_from(const std::string& text) {
  std::istringstream in(text);
  return parse_config(in);
}

std::vector<std::string> split_lines(const std::string& text) {
  std::vector<std::string> lines;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) lines.push_back(line);
  return lines;
}

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> cells;
  std::string cell;
  std::istringstream in(line);
  while (std::getline(in, cell, ',')) cells.push_back(cell);
  return cells;
}

std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  REQUIRE(in.good());
  std::ostringstream out;
  out << in.rdbuf();
  return out.str();
}

fs::path fresh_dir(const std::string& tag) {
  const fs::path dir = fs::temp_directory_path() / ("etcbf_runner_" + tag);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

}  // namespace

TEST_CASE("config parser reads every documented key") {
  const RunConfig cfg = config_from(
      "scenario = toy_rd1\n"
      "mode = time_driven\n"
      "sync_in_baseline = false\n"
      "dt_baseline = 0.05\n"
      "horizon = 12.5\n"
      "seed = 42\n"
      "sensor_rate = 40\n"
      "theta = 0.8\n"
      "disturbance_scale = 1.5\n"
      "walk_rate = 0.1\n"
      "grid = 11\n"
      "infeasible_policy = clamp\n"
      "integrator_dt = 5e-4\n"
      "noise_state = 0.01 0.02\n"
      "noise_rate = 0.03\n"
      "noise_accel =\n"
      "out = somewhere/deep\n"
      "param.w = 0.08\n");
  CHECK(cfg.scenario == "toy_rd1");
  CHECK(cfg.mode == "time_driven");
  CHECK(cfg.sync_in_baseline == false);
  CHECK(cfg.dt_baseline == 0.05);
  CHECK(cfg.loop.horizon == 12.5);
  CHECK(cfg.loop.seed == 42);
  CHECK(cfg.loop.sensor_rate == 40.0);
  CHECK(cfg.loop.theta == 0.8);
  CHECK(cfg.loop.disturbance_scale == 1.5);
  CHECK(cfg.loop.walk_rate == 0.1);
  CHECK(cfg.loop.grid == 11);
  CHECK(cfg.loop.infeasible_policy == InfeasiblePolicy::clamp);
  CHECK(cfg.loop.integrator_dt == 5e-4);
  REQUIRE(cfg.loop.noise_state.size() == 2);
  CHECK(cfg.loop.noise_state[0] == 0.01);
  CHECK(cfg.loop.noise_state[1] == 0.02);
  REQUIRE(cfg.loop.noise_rate.size() == 1);
  CHECK(cfg.loop.noise_rate[0] == 0.03);
  CHECK(cfg.loop.noise_accel.size() == 0);
  CHECK(cfg.out_dir == "somewhere/deep");
  REQUIRE(cfg.params.count("w") == 1);
  CHECK(cfg.params.at("w") == 0.08);
}

TEST_CASE("config parser skips comments and blank lines") {
  const RunConfig cfg = config_from(
      "# a full-line comment\n"
      "\n"
      "scenario = acc   # trailing comment\n"
      "   \n"
      "seed = 7\n");
  CHECK(cfg.scenario == "acc");
  CHECK(cfg.loop.seed == 7);
  CHECK(cfg.mode == "event");  // untouched default
}

TEST_CASE("config parser rejects malformed input") {
  CHECK_THROWS_AS(config_from("not_a_key = 1\n"), ConfigError);
  CHECK_THROWS_AS(config_from("seed = 1\nseed = 2\n"), ConfigError);
  CHECK_THROWS_AS(config_from("seed 1\n"), ConfigError);
  CHECK_THROWS_AS(config_from("horizon = ten\n"), ConfigError);
  CHECK_THROWS_AS(config_from("horizon = 1.5x\n"), ConfigError);
  CHECK_THROWS_AS(config_from("seed = 1.5\n"), ConfigError);
  CHECK_THROWS_AS(config_from("seed = -3\n"), ConfigError);
  CHECK_THROWS_AS(config_from("sync_in_baseline = maybe\n"), ConfigError);
  CHECK_THROWS_AS(config_from("mode = sometimes\n"), ConfigError);
  CHECK_THROWS_AS(config_from("infeasible_policy = shrug\n"), ConfigError);
  CHECK_THROWS_AS(config_from("param. = 3\n"), ConfigError);
  CHECK_THROWS_AS(config_from("noise_state = 0.01 oops\n"), ConfigError);
  CHECK_THROWS_AS(config_from("= 4\n"), ConfigError);
  CHECK_THROWS_AS(parse_config_file("/nonexistent/etcbf.conf"), ConfigError);
}

TEST_CASE("scenario registry applies parameter overrides") {
  SECTION("acc parameters reach the scenario") {
    RunConfig cfg;
    cfg.params["v0"] = 25.0;
    cfg.params["z0"] = 50.0;
    cfg.params["vd"] = 30.0;
    const std::unique_ptr<Scenario> sc = make_scenario(cfg);
    const AdaptiveModel m = sc->initial_model();
    CHECK(m.state[0] == 25.0);
    CHECK(m.state[1] == 50.0);
    CHECK(sc->tracking().target[0] == 30.0);
  }
  SECTION("toy parameters reach the scenario") {
    RunConfig cfg;
    cfg.scenario = "toy_rd1";
    cfg.params["x0"] = 2.5;
    cfg.params["u_max"] = 7.0;
    const std::unique_ptr<Scenario> sc = make_scenario(cfg);
    CHECK(sc->initial_model().state[0] == 2.5);
    CHECK(sc->control_bounds().hi[0] == 7.0);
  }
  SECTION("unknown names are rejected") {
    RunConfig cfg;
    cfg.params["warp_factor"] = 9.0;
    CHECK_THROWS_AS(make_scenario(cfg), ConfigError);
    cfg.scenario = "toy_rd1";
    CHECK_THROWS_AS(make_scenario(cfg), ConfigError);
    cfg.scenario = "unheard_of";
    cfg.params.clear();
    CHECK_THROWS_AS(make_scenario(cfg), ConfigError);
  }
}

TEST_CASE("metrics summarize a run") {
  SECTION("quiet scalar run: one solve, zero energy") {
    RunConfig cfg;
    cfg.scenario = "toy_rd1";
    cfg.loop.disturbance_scale = 0.0;
    cfg.loop.seed = 9;
    const RunResult r = execute_run(cfg);
    CHECK(r.metrics.qp_count == 1);
    CHECK(r.metrics.event_counts[3] == 1);  // the forced initial event only
    CHECK(r.metrics.event_counts[0] + r.metrics.event_counts[1] + r.metrics.event_counts[2] == 0);
    CHECK(r.metrics.min_b == 1.0);
    CHECK(r.metrics.min_psi1 == 1.0);
    CHECK(r.metrics.control_energy == 0.0);
    CHECK(r.metrics.infeasible_count == 0);
    CHECK(r.metrics.wall_time_s > 0.0);
  }
  SECTION("default cruise-control run stays safe") {
    RunConfig cfg;  // scenario acc, mode event, seed 0
    const RunResult r = execute_run(cfg);
    CHECK(r.metrics.qp_count >= 1);
    CHECK(r.log.samples.size() == 601);
    CHECK(r.metrics.min_b >= 0.0);
    CHECK(r.metrics.min_psi1 >= 0.0);
    CHECK(r.metrics.infeasible_count == 0);
    const long total = r.metrics.event_counts[0] + r.metrics.event_counts[1] +
                       r.metrics.event_counts[2] + r.metrics.event_counts[3];
    CHECK(total == static_cast<long>(r.log.events.size()));
    CHECK(r.metrics.control_energy > 0.0);
  }
}

TEST_CASE("trajectory csv layout") {
  RunConfig cfg;
  cfg.loop.seed = 2;
  cfg.loop.horizon = 2.0;
  const RunResult r = execute_run(cfg);

  std::ostringstream out;
  write_trajectory_csv(out, *r.scenario, r.log);
  const std::vector<std::string> lines = split_lines(out.str());

  REQUIRE(lines.size() == r.log.samples.size() + 2);
  CHECK(lines[0].rfind("# ", 0) == 0);
  CHECK(lines[1] == kCsvHeader);

  const std::vector<std::string> header = split_csv(lines[1]);
  REQUIRE(header.size() == 16);
  CHECK(header[0] == "t");
  CHECK(header[8] == "u");
  CHECK(header[14] == "event_flag");
  CHECK(header[15] == "qp_status");

  for (std::size_t i = 2; i < lines.size(); ++i) {
    REQUIRE(split_csv(lines[i]).size() == 16);
  }

  // %.17g round trips every logged double exactly.
  const std::vector<std::string> first = split_csv(lines[2]);
  CHECK(std::strtod(first[0].c_str(), nullptr) == r.log.samples[0].t);
  CHECK(std::strtod(first[1].c_str(), nullptr) == r.log.samples[0].x[0]);
  CHECK(std::strtod(first[10].c_str(), nullptr) == r.log.samples[0].psi[0]);
  CHECK(first[14] == "4");  // forced initial event
}

TEST_CASE("metrics recomputed from the csv match the emitted summary") {
  RunConfig cfg;
  cfg.loop.seed = 3;
  const RunResult r = execute_run(cfg);

  std::ostringstream out;
  write_trajectory_csv(out, *r.scenario, r.log);
  const std::vector<std::string> lines = split_lines(out.str());
  REQUIRE(lines.size() >= 3);

  const AccParams p;  // defaults; the config did not override any parameter
  double min_b = std::numeric_limits<double>::infinity();
  double min_psi1 = min_b;
  double energy = 0.0;
  std::array<long, 4> counts{};
  double prev_t = 0.0;
  double prev_g = 0.0;
  for (std::size_t i = 2; i < lines.size(); ++i) {
    const std::vector<std::string> cells = split_csv(lines[i]);
    const double t = std::strtod(cells[0].c_str(), nullptr);
    const double v = std::strtod(cells[1].c_str(), nullptr);
    const double u = std::strtod(cells[8].c_str(), nullptr);
    min_b = std::min(min_b, std::strtod(cells[10].c_str(), nullptr));
    min_psi1 = std::min(min_psi1, std::strtod(cells[11].c_str(), nullptr));
    const double excess = (u - quadratic_resistance(p.f0, p.f1, p.f2, v)) / p.mass;
    const double g = excess * excess;
    if (i > 2) energy += 0.5 * (prev_g + g) * (t - prev_t);
    prev_t = t;
    prev_g = g;
    const int flag = std::atoi(cells[14].c_str());
    if (flag >= 1 && flag <= 4) ++counts[flag - 1];
  }

  CHECK(min_b == r.metrics.min_b);
  CHECK(min_psi1 == r.metrics.min_psi1);
  CHECK(energy == Catch::Approx(r.metrics.control_energy).margin(1e-9));
  CHECK(counts == r.metrics.event_counts);
}

TEST_CASE("rerunning a config reproduces byte-identical outputs") {
  RunConfig cfg;
  cfg.loop.seed = 5;
  cfg.loop.horizon = 10.0;

  const fs::path da = fresh_dir("identical_a");
  const fs::path db = fresh_dir("identical_b");
  cfg.out_dir = da.string();
  REQUIRE(run_with_outputs(cfg) == 0);
  cfg.out_dir = db.string();
  REQUIRE(run_with_outputs(cfg) == 0);

  const std::string csv_a = read_file(da / "trajectory.csv");
  const std::string csv_b = read_file(db / "trajectory.csv");
  REQUIRE(!csv_a.empty());
  CHECK(csv_a == csv_b);

  nlohmann::ordered_json ma = nlohmann::ordered_json::parse(read_file(da / "metrics.json"));
  nlohmann::ordered_json mb = nlohmann::ordered_json::parse(read_file(db / "metrics.json"));
  CHECK(ma["qp_count"].get<long>() >= 1);
  ma.erase("wall_time_s");
  mb.erase("wall_time_s");
  CHECK(ma == mb);

  fs::remove_all(da);
  fs::remove_all(db);
}

TEST_CASE("halting on an infeasible step maps to exit code 2") {
  RunConfig cfg;
  cfg.loop.seed = 1;
  cfg.params["ca"] = 0.001;  // almost no control authority
  cfg.params["cd"] = 0.001;
  CHECK(run_with_outputs(cfg) == 2);
  const RunResult r = execute_run(cfg);
  CHECK(r.log.halted);
  CHECK(r.metrics.infeasible_count >= 1);
}

TEST_CASE("open-loop baseline on a runaway plant diverges") {
  RunConfig cfg;
  cfg.mode = "time_driven";
  cfg.sync_in_baseline = false;
  cfg.loop.seed = 1;
  cfg.params["f2"] = -30.0;  // true resistance destabilizes the plant
  CHECK_THROWS_AS(execute_run(cfg), IntegrationError);
}

TEST_CASE("compare of identical configs gives unit ratios") {
  RunConfig cfg;
  cfg.loop.seed = 4;
  cfg.loop.horizon = 10.0;
  const nlohmann::ordered_json j = compare_runs(cfg, cfg);
  CHECK(j["qp_count_ratio"].get<double>() == 1.0);
  CHECK(j["event_count_ratio"].get<double>() == 1.0);
  CHECK(j["min_b_delta"].get<double>() == 0.0);
  CHECK(j["min_psi1_delta"].get<double>() == 0.0);
  CHECK(j["control_energy_delta"].get<double>() == 0.0);
  CHECK(j["control_energy_ratio"].get<double>() == 1.0);
}

TEST_CASE("compare rejects mismatched runs") {
  RunConfig a;
  RunConfig b;
  b.scenario = "toy_rd1";
  CHECK_THROWS_AS(compare_runs(a, b), ConfigError);
  b = a;
  b.loop.seed = a.loop.seed + 1;
  CHECK_THROWS_AS(compare_runs(a, b), ConfigError);
}

TEST_CASE("compare event mode against the fixed-period baseline") {
  RunConfig a;  // event mode
  a.loop.seed = 1;
  RunConfig b = a;
  b.mode = "time_driven";
  const nlohmann::ordered_json j = compare_runs(a, b);
  CHECK(j["b"]["qp_count"].get<long>() == 301);
  CHECK(j["a"]["qp_count"].get<long>() < 301);
  const double ratio = j["qp_count_ratio"].get<double>();
  CHECK(ratio == 301.0 / j["a"]["qp_count"].get<double>());
  CHECK_FALSE(j["a"]["halted"].get<bool>());
  CHECK_FALSE(j["b"]["halted"].get<bool>());
}

TEST_CASE("command-line tool end to end") {
  const fs::path dir = fresh_dir("cli");
  const auto write_config = [&dir](const std::string& name, const std::string& text) {
    std::ofstream out(dir / name);
    out << text;
    REQUIRE(out.good());
    return (dir / name).string();
  };
  const auto run_cli = [&dir](const std::string& args) {
    const std::string cmd = std::string(ETCBF_CLI_BIN) + " " + args + " > " +
                            (dir / "stdout.txt").string() + " 2> " +
                            (dir / "stderr.txt").string();
    const int rc = std::system(cmd.c_str());
    REQUIRE(WIFEXITED(rc));
    return WEXITSTATUS(rc);
  };

  const std::string quiet = write_config("quiet.conf",
                                         "scenario = toy_rd1\n"
                                         "disturbance_scale = 0\n"
                                         "seed = 9\n");
  const std::string acc_a = write_config("acc_a.conf",
                                         "scenario = acc\n"
                                         "seed = 1\n");
  const std::string acc_baseline = write_config("acc_baseline.conf",
                                                "scenario = acc\n"
                                                "seed = 1\n"
                                                "mode = time_driven\n");
  const std::string acc_seed2 = write_config("acc_seed2.conf",
                                             "scenario = acc\n"
                                             "seed = 2\n");
  const std::string weak = write_config("weak.conf",
                                        "scenario = acc\n"
                                        "seed = 1\n"
                                        "param.ca = 0.001\n"
                                        "param.cd = 0.001\n");
  const std::string runaway = write_config("runaway.conf",
                                           "scenario = acc\n"
                                           "seed = 1\n"
                                           "mode = time_driven\n"
                                           "sync_in_baseline = false\n"
                                           "param.f2 = -30\n");
  const std::string broken = write_config("broken.conf", "not_a_key = 1\n");

  SECTION("clean run writes both files and exits 0") {
    const fs::path out = dir / "quiet_out";
    REQUIRE(run_cli("run --config " + quiet + " --out " + out.string()) == 0);
    CHECK(fs::exists(out / "trajectory.csv"));
    CHECK(fs::exists(out / "metrics.json"));
    const nlohmann::json m = nlohmann::json::parse(read_file(out / "metrics.json"));
    CHECK(m["qp_count"].get<long>() == 1);  // zero disturbance: only the initial event
  }
  SECTION("seed and mode overrides are accepted") {
    CHECK(run_cli("run --config " + quiet + " --seed 11") == 0);
    CHECK(run_cli("run --config " + quiet + " --mode time_driven") == 0);
    CHECK(run_cli("run --config " + quiet + " --mode never") == 1);
  }
  SECTION("usage problems exit 1") {
    CHECK(run_cli("run --config " + std::string("/nonexistent.conf")) == 1);
    CHECK(run_cli("run --config " + broken) == 1);
    CHECK(run_cli("run") == 1);
    CHECK(run_cli("") == 1);
    CHECK(run_cli("--help") == 0);
  }
  SECTION("infeasible halt exits 2") { CHECK(run_cli("run --config " + weak) == 2); }
  SECTION("diverging simulation exits 3") { CHECK(run_cli("run --config " + runaway) == 3); }
  SECTION("compare reports ratios for matched runs") {
    REQUIRE(run_cli("compare --a " + acc_a + " --b " + acc_baseline) == 0);
    const nlohmann::json j = nlohmann::json::parse(read_file(dir / "stdout.txt"));
    CHECK(j["qp_count_ratio"].get<double>() > 1.0);  // baseline solves more QPs
    REQUIRE(run_cli("compare --a " + acc_a + " --b " + acc_a) == 0);
    const nlohmann::json same = nlohmann::json::parse(read_file(dir / "stdout.txt"));
    CHECK(same["qp_count_ratio"].get<double>() == 1.0);
    CHECK(same["event_count_ratio"].get<double>() == 1.0);
  }
  SECTION("compare refuses mismatched runs") {
    CHECK(run_cli("compare --a " + acc_a + " --b " + acc_seed2) == 1);
    CHECK(run_cli("compare --a " + acc_a + " --b " + quiet) == 1);
  }

  fs::remove_all(dir);
}
