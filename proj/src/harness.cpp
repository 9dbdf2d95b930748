#include "jadlab/harness.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <numbers>
#include <sstream>

#include <json.hpp>

#include "jadlab/assimilation.hpp"
#include "jadlab/control.hpp"
#include "jadlab/ctm.hpp"
#include "jadlab/io.hpp"
#include "jadlab/microsim.hpp"
#include "jadlab/prediction.hpp"

namespace jadlab::harness {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

constexpr const char* kToolVersion = "0.1.0";
constexpr const char* kBundleFormat = "jadlab-bundle-1";

// splitmix64 + Box-Muller; hand-rolled so that noise injection is
// reproducible across standard-library implementations.
class NormalSampler {
 public:
  explicit NormalSampler(std::uint64_t seed) : state_(seed ^ 0x9e3779b97f4a7c15ULL) {}

  double normal() {
    if (have_spare_) {
      have_spare_ = false;
      return spare_;
    }
    const double u1 = std::max(next_unit(), 1e-300);
    const double u2 = next_unit();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double phi = 2.0 * std::numbers::pi * u2;
    spare_ = r * std::sin(phi);
    have_spare_ = true;
    return r * std::cos(phi);
  }

 private:
  double next_unit() {
    state_ += 0x9e3779b97f4a7c15ULL;
    std::uint64_t z = state_;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    z ^= z >> 31;
    return static_cast<double>(z >> 11) * 0x1.0p-53;
  }

  std::uint64_t state_;
  bool have_spare_ = false;
  double spare_ = 0.0;
};

const char* role_name(sim::Role role) {
  return role == sim::Role::absorbing ? "absorbing" : "normal";
}

const char* end_time_status_name(pred::EndTimeStatus s) {
  switch (s) {
    case pred::EndTimeStatus::ok: return "ok";
    case pred::EndTimeStatus::no_crossing: return "no_crossing";
    case pred::EndTimeStatus::already_past: return "already_past";
  }
  return "?";
}

double parse_double(const std::string& s, const char* what) {
  double value = 0.0;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), value);
  if (ec != std::errc() || ptr != s.data() + s.size()) {
    throw ConfigError(std::string("bad numeric field in ") + what + ": '" + s + "'");
  }
  return value;
}

json read_json_file(const fs::path& path) {
  try {
    return json::parse(read_text_file(path));
  } catch (const json::exception& e) {
    throw ConfigError("cannot parse " + path.string() + ": " + e.what());
  }
}

}  // namespace

const char* mode_name(RunMode mode) {
  switch (mode) {
    case RunMode::no_jad: return "no-jad";
    case RunMode::jad_no_da: return "jad-no-da";
    case RunMode::jad_da: return "jad-da";
  }
  return "?";
}

RunMode parse_mode(const std::string& name) {
  if (name == "no-jad") return RunMode::no_jad;
  if (name == "jad-no-da") return RunMode::jad_no_da;
  if (name == "jad-da") return RunMode::jad_da;
  throw ConfigError("unknown mode: " + name + " (expected no-jad|jad-no-da|jad-da)");
}

RunResult run_scenario(const RunOptions& options) {
  const Scenario& sc = options.scenario;
  sc.validate();
  if (sc.demand.breakpoints.empty() || sc.demand.breakpoints.back().second != 0.0) {
    throw ConfigError(
        "scenario field 'demand.breakpoints': profile must end with a 0 veh/h segment");
  }

  fs::create_directories(options.out_dir);

  const double dt = sc.timing.dt_truth_s;
  const long ticks_control = sc.timing.ticks_per_control();
  const long ticks_sim = sc.timing.ticks_per_sim();
  const long ticks_window = sc.timing.ticks_per_window();
  const long ticks_log = std::lround(sc.logging.trajectory_interval_s / dt);
  const double demand_end_s = sc.demand.last_time_s();
  const double t_max_s = demand_end_s + sc.drain_limit_s;

  const ctm::CellGrid grid = ctm::make_grid(sc.road, sc.timing);
  const ctm::FundamentalDiagram fd0 = ctm::FundamentalDiagram::from_config(sc.fd);
  ctm::check_cfl(fd0, grid.cell_length_m, sc.timing.dt_sim_s);

  const bool has_model = options.mode != RunMode::no_jad;
  const ekf::StateLayout layout{grid.cell_count, options.mode == RunMode::jad_da};
  const ekf::MeasurementPlan meas_plan =
      ekf::interior_measurement_plan(grid, sc.timing, sc.detector);
  ekf::GaussianBelief belief;
  if (has_model) {
    belief.mean = ekf::initial_state(layout, fd0);
    belief.cov = ekf::initial_covariance(layout, sc.noise);
  }
  double model_inflow_vph = 0.0;

  sim::World world;
  sim::SpawnState spawn_state;
  sim::DetectorBank bank(sc.road, sc.timing, sc.detector);

  control::TriggerState trigger;
  std::optional<pred::AbsorbingPlan> plan;
  bool abv_alive = false;
  std::int64_t abv_id = -1;
  double shadow_p = 0.0;
  double shadow_clock = 0.0;
  Eigen::VectorXd window_field;
  bool window_field_valid = false;
  std::optional<double> held_jad_cmd;

  NormalSampler rng(options.seed);

  const std::string config_text = sc.to_json();
  write_text_file(options.out_dir / "config.json", config_text);
  const std::uint64_t scenario_fnv = fnv1a64(config_text.data(), config_text.size());
  {
    json manifest;
    manifest["format"] = kBundleFormat;
    manifest["tool_version"] = kToolVersion;
    manifest["scenario"] = sc.name;
    manifest["scenario_fnv"] = hex64(scenario_fnv);
    manifest["mode"] = mode_name(options.mode);
    manifest["seed"] = options.seed;
    manifest["noise"] = options.noise;
    write_text_file(options.out_dir / "manifest.json", manifest.dump(2) + "\n");
  }

  CsvWriter traj(options.out_dir / "trajectory.csv",
                 "t_s,vehicle_id,role,p_m,v_mps,a_mps2,g_comp");
  CsvWriter det(options.out_dir / "detector.csv", "station_m,window_start_s,flow_vph,occupancy");
  CsvWriter est(options.out_dir / "estimate.csv",
                "t_s,cell,rho_hat,v_fr_hat,rho_cr_nor_hat,rho_cr_sag_hat,var_rho");
  CsvWriter planlog(options.out_dir / "plan.csv", "issued_at_s,p_ep_m,t_ep_s,status");
  CsvWriter cmd(options.out_dir / "command.csv",
                "t_s,p_abv_m,v_abv_mps,a_cmd_mps2,branch,plan_issued_at_s");

  RunResult result;
  result.out_dir = options.out_dir;

  const auto fd_hat = [&] { return ekf::fd_from_state(belief.mean, layout, fd0); };
  const auto field_now = [&] {
    return ctm::speed_field(belief.mean.head(grid.cell_count), fd_hat(), grid);
  };
  const auto log_vehicle = [&](double t, const sim::VehicleState& v) {
    traj.row("%.2f,%lld,%s,%.4f,%.4f,%.4f,%.8f", t, static_cast<long long>(v.id),
             role_name(v.role), v.p_m, v.v_mps, v.a_mps2, v.g_comp);
  };
  const auto issue_plan = [&](double t_now, const Eigen::VectorXd& field) {
    const auto rollout = pred::predict_shadow(shadow_p, t_now, field, grid,
                                              sc.jad.horizon_steps, sc.timing.dt_sim_s);
    const auto end = pred::absorbing_end_time(rollout, sc.jad.p_ep_m);
    if (end.status == pred::EndTimeStatus::ok) {
      plan = pred::AbsorbingPlan{sc.jad.p_ep_m, end.t_ep_s, t_now};
      planlog.row("%.2f,%.2f,%.4f,%s", t_now, sc.jad.p_ep_m, end.t_ep_s,
                  end_time_status_name(end.status));
    } else {
      // Previous plan (if any) stays in force.
      planlog.row("%.2f,%.2f,,%s", t_now, sc.jad.p_ep_m, end_time_status_name(end.status));
    }
  };

  std::vector<double> p_before;

  for (std::int64_t k = 0;; ++k) {
    const double t = static_cast<double>(k) * dt;

    // Demand arrivals at time t. Designation happens before the spawn row is
    // logged so the AbV's role is correct from its first record.
    const auto spawned = sim::spawn_vehicles(world, spawn_state, sc.demand, sc.road, sc.driver,
                                             sc.detector, t, dt);
    for (const auto id : spawned) {
      if (has_model && trigger.fired && abv_id < 0) {
        abv_id = id;
        abv_alive = true;
        sim::VehicleState* abv = world.find(id);
        abv->role = sim::Role::absorbing;
        shadow_p = abv->p_m;
        shadow_clock = t;
        result.jad_activated = true;
        result.abv_id = id;
        result.abv_designated_at_s = t;
        if (window_field_valid) issue_plan(t, window_field);
      }
      bank.register_spawn();
      log_vehicle(t, *world.find(id));
    }

    // Control command refresh (zero-order hold between ticks). Only the JAD
    // branch overrides the vehicle law; in the IDM branches the AbV keeps
    // integrating as an ordinary vehicle at the truth step.
    if (abv_alive && k % ticks_control == 0) {
      std::size_t abv_index = world.vehicles.size();
      for (std::size_t i = 0; i < world.vehicles.size(); ++i) {
        if (world.vehicles[i].id == abv_id) {
          abv_index = i;
          break;
        }
      }
      if (abv_index == world.vehicles.size()) {
        throw SimulationFault("absorbing vehicle disappeared while marked alive");
      }
      const sim::VehicleState& abv = world.vehicles[abv_index];
      double gap = std::numeric_limits<double>::infinity();
      double dv = 0.0;
      if (abv_index > 0) {
        const sim::VehicleState& leader = world.vehicles[abv_index - 1];
        gap = leader.p_m - sc.detector.vehicle_length_m - abv.p_m;
        dv = abv.v_mps - leader.v_mps;
      }
      double a_des_pure;
      try {
        a_des_pure = sim::desired_acceleration(abv.v_mps, dv, gap, sc.driver);
      } catch (const std::domain_error&) {
        throw SimulationFault("controller saw non-positive gap for the absorbing vehicle");
      }
      const double g_here = gradient_at(sc.road, std::clamp(abv.p_m, sc.road.p_entry_m, sc.road.p_exit_m));
      const double a_full =
          a_des_pure + sim::gradient_acceleration(g_here, abv.g_comp, sc.driver.theta_mps2);
      const control::Command command =
          control::abv_acceleration(abv.p_m, abv.v_mps, t, plan, sc.jad, sc.driver.v_des_mps,
                                    sc.timing.dt_control_s, a_des_pure, a_full);
      held_jad_cmd = (command.branch == control::Branch::jad)
                         ? std::optional<double>(command.a_cmd_mps2)
                         : std::nullopt;
      cmd.row("%.2f,%.4f,%.4f,%.4f,%s,%.2f", t, abv.p_m, abv.v_mps, command.a_cmd_mps2,
              control::branch_name(command.branch), plan ? plan->issued_at_s : -1.0);
    }

    // Truth step.
    p_before.resize(world.vehicles.size());
    for (std::size_t i = 0; i < world.vehicles.size(); ++i) p_before[i] = world.vehicles[i].p_m;
    std::optional<std::pair<std::int64_t, double>> override;
    if (abv_alive && held_jad_cmd) override = {abv_id, *held_jad_cmd};
    const sim::StepOutcome outcome =
        sim::step_truth(world, sc.road, sc.driver, sc.detector.vehicle_length_m, dt, t, override);
    bank.accumulate(world, p_before, outcome.exited);

    const double t1 = static_cast<double>(k + 1) * dt;
    for (const auto& ex : outcome.exited) {
      log_vehicle(t1, ex);
      if (ex.id == abv_id) {
        abv_alive = false;
        held_jad_cmd.reset();
      }
    }
    if ((k + 1) % ticks_log == 0) {
      for (const auto& v : world.vehicles) log_vehicle(t1, v);
    }

    const bool window_end = ((k + 1) % ticks_window == 0);

    if (has_model && (k + 1) % ticks_sim == 0) {
      belief = ekf::forecast(belief, layout, grid, fd0, model_inflow_vph, sc.timing.dt_sim_s,
                             sc.noise);
    }

    if (window_end) {
      auto samples = bank.close_window(t1);
      if (options.noise) {
        for (auto& s : samples) {
          s.flow_vph = std::max(0.0, s.flow_vph + rng.normal() * sc.noise.inject_flow_sigma_vph);
          s.occupancy = std::clamp(s.occupancy + rng.normal() * sc.noise.inject_occ_sigma, 0.0, 1.0);
        }
      }
      for (const auto& s : samples) {
        det.row("%.1f,%.2f,%.4f,%.6f", s.station_m, s.window_start_s, s.flow_vph, s.occupancy);
      }
      if (has_model) {
        // Interior stations only; samples[0] is the entrance, samples.back()
        // the exit.
        Eigen::VectorXd y(meas_plan.dim());
        for (int s = 0; s < static_cast<int>(meas_plan.station_cells.size()); ++s) {
          y[2 * s] = samples[s + 1].flow_vph;
          y[2 * s + 1] = samples[s + 1].occupancy;
        }
        belief = ekf::analysis(belief, y, meas_plan, layout, grid, fd0, grid.cell_length_m,
                               sc.timing.dt_sim_s, sc.noise);
        model_inflow_vph = samples.front().flow_vph;

        const ctm::FundamentalDiagram fd_est = fd_hat();
        for (int i = 0; i < grid.cell_count; ++i) {
          est.row("%.2f,%d,%.5f,%.5f,%.5f,%.5f,%.6g", t1, i, belief.mean[i], fd_est.v_fr_mps,
                  fd_est.rho_cr_nor, fd_est.rho_cr_sag, belief.cov(i, i));
        }
        control::update_trigger(trigger, belief.mean.head(grid.cell_count), fd_est, grid, t1);
        if (trigger.fired && result.trigger_fired_at_s == 0.0) {
          result.trigger_fired_at_s = trigger.fired_at_s;
        }
        window_field = field_now();
        window_field_valid = true;
      }
    }

    if (has_model && (k + 1) % ticks_sim == 0 && abv_alive) {
      const Eigen::VectorXd field = field_now();
      shadow_p = pred::shadow_step(shadow_p, field, grid, t1 - shadow_clock);
      shadow_clock = t1;
      const sim::VehicleState* abv = world.find(abv_id);
      if (window_end && abv && abv->p_m <= sc.jad.p_jen_m) {
        issue_plan(t1, field);
      }
    }

    if (t1 >= demand_end_s && world.empty() && spawn_state.queued() == 0) {
      result.sim_end_s = t1;
      break;
    }
    if (t1 > t_max_s) {
      throw SimulationFault("road failed to drain within the configured limit after demand end");
    }
  }

  result.vehicles_spawned = spawn_state.spawned;

  traj.close();
  det.close();
  est.close();
  planlog.close();
  cmd.close();

  // Per-run metrics (consumed by compare_runs without re-reading trajectories).
  json metrics;
  metrics["scenario"] = sc.name;
  metrics["scenario_fnv"] = hex64(scenario_fnv);
  metrics["mode"] = mode_name(options.mode);
  metrics["seed"] = options.seed;
  metrics["noise"] = options.noise;
  metrics["sim_end_s"] = result.sim_end_s;
  metrics["vehicles_spawned"] = result.vehicles_spawned;
  if (result.vehicles_spawned > 0) {
    const auto model = eval::VtMicroModel::load(eval::resolve_fuel_coeff_file(sc.fuel_coeff_file));
    const auto agg = eval::evaluate_trajectory(options.out_dir / "trajectory.csv", model,
                                               sc.road.p_entry_m, sc.road.p_exit_m);
    metrics["att_s"] = agg.att_s;
    metrics["afc_ml"] = agg.afc_ml;
    metrics["vehicle_count"] = agg.vehicle_count;
  } else {
    metrics["att_s"] = nullptr;
    metrics["afc_ml"] = nullptr;
    metrics["vehicle_count"] = 0;
  }
  metrics["jad"] = {{"activated", result.jad_activated},
                    {"trigger_fired_at_s", result.trigger_fired_at_s},
                    {"abv_id", result.abv_id},
                    {"designated_at_s", result.abv_designated_at_s}};
  write_text_file(options.out_dir / "metrics.json", metrics.dump(2) + "\n");

  return result;
}

eval::MetricsReport compare_runs(const fs::path& dir_a, const fs::path& dir_b,
                                 const fs::path& out_file) {
  const json man_a = read_json_file(dir_a / "manifest.json");
  const json man_b = read_json_file(dir_b / "manifest.json");
  for (const char* key : {"scenario_fnv", "seed", "noise"}) {
    if (man_a.at(key) != man_b.at(key)) {
      throw ConfigError(std::string("pairing mismatch: runs differ in '") + key +
                        "' (need same scenario, seed and noise setting)");
    }
  }
  const json met_a = read_json_file(dir_a / "metrics.json");
  const json met_b = read_json_file(dir_b / "metrics.json");
  if (met_a.at("att_s").is_null() || met_b.at("att_s").is_null()) {
    throw ConfigError("compare_runs: a run has no completed vehicles / metrics");
  }

  eval::RunAggregates ref{met_a.at("att_s").get<double>(), met_a.at("afc_ml").get<double>(),
                          met_a.at("vehicle_count").get<std::int64_t>()};
  eval::RunAggregates treated{met_b.at("att_s").get<double>(), met_b.at("afc_ml").get<double>(),
                              met_b.at("vehicle_count").get<std::int64_t>()};
  const eval::MetricsReport report = eval::benefit_metrics(treated, ref);

  if (!out_file.empty()) {
    json out;
    out["a"] = {{"dir", dir_a.string()}, {"mode", man_a.at("mode")}, {"att_s", ref.att_s},
                {"afc_ml", ref.afc_ml}, {"vehicle_count", ref.vehicle_count}};
    out["b"] = {{"dir", dir_b.string()}, {"mode", man_b.at("mode")}, {"att_s", treated.att_s},
                {"afc_ml", treated.afc_ml}, {"vehicle_count", treated.vehicle_count}};
    out["delta_att_s"] = report.delta_att_s;
    out["delta_afc_ml"] = report.delta_afc_ml;
    out["deterioration_flag"] = report.deterioration_flag;
    write_text_file(out_file, out.dump(2) + "\n");
  }
  return report;
}

TimeSpaceGrid build_timespace_grid(const fs::path& trajectory_csv, double p_entry_m,
                                   double p_exit_m, double dt_s, double dp_m,
                                   bool exclude_absorbing) {
  std::ifstream in(trajectory_csv);
  if (!in) throw ConfigError("cannot open trajectory CSV: " + trajectory_csv.string());

  TimeSpaceGrid grid;
  grid.t0_s = 0.0;
  grid.dt_s = dt_s;
  grid.p0_m = p_entry_m;
  grid.dp_m = dp_m;
  grid.np = static_cast<int>(std::ceil((p_exit_m - p_entry_m) / dp_m));
  grid.nt = 0;

  std::string line;
  std::getline(in, line);  // header
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto fields = split_csv_line(line);
    if (fields.size() != 7) throw ConfigError("trajectory CSV: expected 7 columns");
    if (exclude_absorbing && fields[2] == "absorbing") continue;
    const double t = parse_double(fields[0], "trajectory t_s");
    const double p = parse_double(fields[3], "trajectory p_m");
    const double v = parse_double(fields[4], "trajectory v_mps");
    const int it = static_cast<int>(std::floor((t - grid.t0_s) / dt_s));
    const int ip = std::clamp(static_cast<int>(std::floor((p - p_entry_m) / dp_m)), 0, grid.np - 1);
    if (it < 0) continue;
    if (it >= grid.nt) {
      grid.nt = it + 1;
      grid.speed_sum.resize(static_cast<std::size_t>(grid.nt) * grid.np, 0.0);
      grid.samples.resize(static_cast<std::size_t>(grid.nt) * grid.np, 0);
    }
    grid.speed_sum[static_cast<std::size_t>(it) * grid.np + ip] += v;
    grid.samples[static_cast<std::size_t>(it) * grid.np + ip] += 1;
  }
  return grid;
}

void export_timespace(const fs::path& run_dir, double dt_s, double dp_m) {
  if (dt_s <= 0.0 || dp_m <= 0.0) throw ConfigError("export-timespace: dt and dp must be > 0");
  const json config = read_json_file(run_dir / "config.json");
  const double p_entry = config.at("road").at("p_entry_m").get<double>();
  const double p_exit = config.at("road").at("p_exit_m").get<double>();

  const TimeSpaceGrid grid =
      build_timespace_grid(run_dir / "trajectory.csv", p_entry, p_exit, dt_s, dp_m);

  CsvWriter out(run_dir / "timespace.csv", "t_bin_start_s,p_bin_start_m,mean_speed_mps,samples");
  for (int it = 0; it < grid.nt; ++it) {
    for (int ip = 0; ip < grid.np; ++ip) {
      const double t = grid.t0_s + it * dt_s;
      const double p = grid.p0_m + ip * dp_m;
      if (grid.has_data(it, ip)) {
        out.row("%.2f,%.1f,%.4f,%lld", t, p, grid.mean_speed(it, ip),
                static_cast<long long>(grid.samples[static_cast<std::size_t>(it) * grid.np + ip]));
      } else {
        out.row("%.2f,%.1f,,0", t, p);
      }
    }
  }

  // AbV polyline, one row per logged absorbing-vehicle sample.
  std::ifstream in(run_dir / "trajectory.csv");
  if (!in) throw ConfigError("cannot open trajectory CSV in " + run_dir.string());
  CsvWriter abv(run_dir / "abv_trajectory.csv", "t_s,p_m,v_mps");
  std::string line;
  std::getline(in, line);
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto fields = split_csv_line(line);
    if (fields.size() == 7 && fields[2] == "absorbing") {
      abv.row("%s,%s,%s", fields[0].c_str(), fields[3].c_str(), fields[4].c_str());
    }
  }
}

std::uint64_t bundle_fingerprint(const fs::path& run_dir) {
  std::uint64_t h = 1469598103934665603ULL;
  for (const char* name : {"manifest.json", "config.json", "trajectory.csv", "detector.csv",
                           "estimate.csv", "plan.csv", "command.csv", "metrics.json"}) {
    const std::uint64_t file_hash = fnv1a64_file(run_dir / name);
    h = fnv1a64(&file_hash, sizeof(file_hash), h);
  }
  return h;
}

}  // namespace jadlab::harness
