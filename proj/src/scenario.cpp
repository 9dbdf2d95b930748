#include "jadlab/scenario.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include <json.hpp>

#include "jadlab/io.hpp"

namespace jadlab {

using nlohmann::json;

namespace {

void require(bool ok, const std::string& field, const std::string& why) {
  if (!ok) throw ConfigError("scenario field '" + field + "': " + why);
}

bool is_integer_multiple(double a, double b) {
  if (b <= 0.0) return false;
  const double ratio = a / b;
  return std::abs(ratio - std::round(ratio)) < 1e-9 && std::round(ratio) >= 1.0;
}

}  // namespace

void RoadProfile::validate() const {
  require(p_entry_m < p_sag_begin_m, "road.p_sag_begin_m", "must satisfy p_entry < p_sag_begin");
  require(p_sag_begin_m < p_sag_end_m, "road.p_sag_end_m", "must satisfy p_sag_begin < p_sag_end");
  require(p_sag_end_m < p_exit_m, "road.p_exit_m", "must satisfy p_sag_end < p_exit");
  require(g_down < g_up, "road.g_up_percent", "must satisfy g_down < g_up");
}

void DriverParams::validate() const {
  require(alpha_mps2 > 0, "driver.alpha_mps2", "must be > 0");
  require(beta_mps2 > 0, "driver.beta_mps2", "must be > 0");
  require(s0_m > 0, "driver.s0_m", "must be > 0");
  require(headway_T_s > 0, "driver.headway_T_s", "must be > 0");
  require(v_des_mps > 0, "driver.v_des_mps", "must be > 0");
  require(theta_mps2 >= 0, "driver.theta_mps2", "must be >= 0");
  require(lambda_per_s > 0, "driver.lambda_per_s", "must be > 0");
}

void DemandProfile::validate() const {
  for (std::size_t i = 0; i < breakpoints.size(); ++i) {
    require(breakpoints[i].second >= 0, "demand.breakpoints", "demand must be >= 0");
    if (i > 0) {
      require(breakpoints[i].first > breakpoints[i - 1].first, "demand.breakpoints",
              "times must be strictly increasing");
    }
  }
}

double demand_at(const DemandProfile& demand, double t_s) {
  double value = 0.0;
  for (const auto& [time, level] : demand.breakpoints) {
    if (time <= t_s) {
      value = level;
    } else {
      break;
    }
  }
  return value;
}

double demand_integral_veh(const DemandProfile& demand, double t_s) {
  double veh = 0.0;
  for (std::size_t i = 0; i < demand.breakpoints.size(); ++i) {
    const double seg_start = demand.breakpoints[i].first;
    if (seg_start >= t_s) break;
    const double seg_end = (i + 1 < demand.breakpoints.size())
                               ? std::min(demand.breakpoints[i + 1].first, t_s)
                               : t_s;
    veh += demand.breakpoints[i].second / 3600.0 * (seg_end - seg_start);
  }
  return veh;
}

void TimingConfig::validate(const RoadProfile& road) const {
  require(dt_truth_s > 0, "timing.dt_truth_s", "must be > 0");
  require(dt_sim_s > 0, "timing.dt_sim_s", "must be > 0");
  require(dt_control_s > 0, "timing.dt_control_s", "must be > 0");
  require(window_s > 0, "timing.window_s", "must be > 0");
  require(detector_spacing_m > 0, "timing.detector_spacing_m", "must be > 0");
  require(cell_length_m > 0, "timing.cell_length_m", "must be > 0");
  require(dt_truth_s <= dt_control_s && dt_control_s <= dt_sim_s && dt_sim_s <= window_s,
          "timing", "need dt_truth <= dt_control <= dt_sim <= window");
  require(is_integer_multiple(dt_control_s, dt_truth_s), "timing.dt_control_s",
          "must be an integer multiple of dt_truth_s");
  require(is_integer_multiple(dt_sim_s, dt_control_s), "timing.dt_sim_s",
          "must be an integer multiple of dt_control_s");
  require(is_integer_multiple(window_s, dt_sim_s), "timing.window_s",
          "must be an integer multiple of dt_sim_s");
  require(is_integer_multiple(detector_spacing_m, cell_length_m), "timing.detector_spacing_m",
          "must be an integer multiple of cell_length_m");
  require(is_integer_multiple(road.length_m(), cell_length_m), "timing.cell_length_m",
          "section length must be an integer multiple of cell_length_m");
}

void DetectorConfig::validate() const {
  require(vehicle_length_m > 0, "detector.vehicle_length_m", "must be > 0");
  require(detector_length_m >= 0, "detector.detector_length_m", "must be >= 0");
}

void FdConfig::validate() const {
  require(v_fr_mps > 0, "fd.v_fr_mps", "must be > 0");
  require(rho_cr_sag_veh_km > 0, "fd.rho_cr_sag_veh_km", "must be > 0");
  require(rho_cr_sag_veh_km <= rho_cr_nor_veh_km, "fd.rho_cr_sag_veh_km",
          "must be <= rho_cr_nor_veh_km");
  require(rho_cr_nor_veh_km < rho_jam_veh_km, "fd.rho_cr_nor_veh_km",
          "must be < rho_jam_veh_km");
}

void JadParams::validate(const RoadProfile& road, const DriverParams& driver) const {
  require(p_jst_m < p_jen_m, "jad.p_jen_m", "must satisfy p_jst < p_jen");
  require(a_si_min_mps2 < 0, "jad.a_si_min_mps2", "must be < 0");
  require(a_si_max_mps2 > 0, "jad.a_si_max_mps2", "must be > 0");
  require(v_si_min_mps > 0 && v_si_min_mps < driver.v_des_mps, "jad.v_si_min_mps",
          "must be in (0, v_des)");
  require(p_ep_m > road.p_entry_m && p_ep_m <= road.p_exit_m, "jad.p_ep_m",
          "must lie inside the section");
  require(horizon_steps >= 0, "jad.horizon_steps", "must be >= 0");
}

void NoiseParams::validate() const {
  const bool ok = q_density >= 0 && q_theta[0] >= 0 && q_theta[1] >= 0 && q_theta[2] >= 0 &&
                  r_flow >= 0 && r_occ >= 0 && p0_density >= 0 && p0_theta[0] >= 0 &&
                  p0_theta[1] >= 0 && p0_theta[2] >= 0 && inject_flow_sigma_vph >= 0 &&
                  inject_occ_sigma >= 0;
  require(ok, "noise", "all entries must be >= 0");
}

void LoggingConfig::validate(const TimingConfig& timing) const {
  require(trajectory_interval_s >= timing.dt_truth_s, "logging.trajectory_interval_s",
          "must be >= dt_truth_s");
  require(is_integer_multiple(trajectory_interval_s, timing.dt_truth_s),
          "logging.trajectory_interval_s", "must be an integer multiple of dt_truth_s");
}

void Scenario::validate() const {
  road.validate();
  driver.validate();
  demand.validate();
  timing.validate(road);
  detector.validate();
  fd.validate();
  jad.validate(road, driver);
  noise.validate();
  logging.validate(timing);
  require(drain_limit_s > 0, "drain_limit_s", "must be > 0");
}

namespace {

// Field-by-field JSON application; unknown keys are rejected so that typos
// do not silently fall back to defaults.
template <typename Fn>
void for_known_keys(const json& obj, const std::string& scope,
                    std::initializer_list<const char*> keys, Fn&& apply) {
  for (auto it = obj.begin(); it != obj.end(); ++it) {
    if (std::find_if(keys.begin(), keys.end(), [&](const char* k) { return it.key() == k; }) ==
        keys.end()) {
      throw ConfigError("scenario field '" + scope + "." + it.key() + "': unknown key");
    }
  }
  apply();
}

double get_num(const json& obj, const std::string& scope, const char* key, double fallback) {
  if (!obj.contains(key)) return fallback;
  const auto& v = obj.at(key);
  if (!v.is_number()) {
    throw ConfigError("scenario field '" + scope + "." + key + "': expected a number");
  }
  return v.get<double>();
}

}  // namespace

Scenario scenario_from_json_text(const std::string& text) {
  json root;
  try {
    root = json::parse(text);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("scenario parse error: ") + e.what());
  }
  if (!root.is_object()) throw ConfigError("scenario parse error: top level must be an object");

  Scenario sc;

  for (auto it = root.begin(); it != root.end(); ++it) {
    const std::string& key = it.key();
    if (key != "name" && key != "road" && key != "driver" && key != "demand" &&
        key != "timing" && key != "detector" && key != "fd" && key != "jad" &&
        key != "noise" && key != "logging" && key != "drain_limit_s" &&
        key != "fuel_coeff_file") {
      throw ConfigError("scenario field '" + key + "': unknown key");
    }
  }

  if (root.contains("name")) sc.name = root.at("name").get<std::string>();

  if (root.contains("road")) {
    const json& r = root.at("road");
    for_known_keys(r, "road",
                   {"g_down_percent", "g_up_percent", "p_sag_begin_m", "p_sag_end_m",
                    "p_entry_m", "p_exit_m"},
                   [&] {
                     sc.road.g_down = get_num(r, "road", "g_down_percent", sc.road.g_down * 100.0) / 100.0;
                     sc.road.g_up = get_num(r, "road", "g_up_percent", sc.road.g_up * 100.0) / 100.0;
                     sc.road.p_sag_begin_m = get_num(r, "road", "p_sag_begin_m", sc.road.p_sag_begin_m);
                     sc.road.p_sag_end_m = get_num(r, "road", "p_sag_end_m", sc.road.p_sag_end_m);
                     sc.road.p_entry_m = get_num(r, "road", "p_entry_m", sc.road.p_entry_m);
                     sc.road.p_exit_m = get_num(r, "road", "p_exit_m", sc.road.p_exit_m);
                   });
  }

  if (root.contains("driver")) {
    const json& d = root.at("driver");
    for_known_keys(d, "driver",
                   {"alpha_mps2", "beta_mps2", "delta", "s0_m", "headway_T_s", "v_des_mps",
                    "theta_mps2", "lambda_per_s"},
                   [&] {
                     sc.driver.alpha_mps2 = get_num(d, "driver", "alpha_mps2", sc.driver.alpha_mps2);
                     sc.driver.beta_mps2 = get_num(d, "driver", "beta_mps2", sc.driver.beta_mps2);
                     sc.driver.delta = get_num(d, "driver", "delta", sc.driver.delta);
                     sc.driver.s0_m = get_num(d, "driver", "s0_m", sc.driver.s0_m);
                     sc.driver.headway_T_s = get_num(d, "driver", "headway_T_s", sc.driver.headway_T_s);
                     sc.driver.v_des_mps = get_num(d, "driver", "v_des_mps", sc.driver.v_des_mps);
                     sc.driver.theta_mps2 = get_num(d, "driver", "theta_mps2", sc.driver.theta_mps2);
                     sc.driver.lambda_per_s = get_num(d, "driver", "lambda_per_s", sc.driver.lambda_per_s);
                   });
  }

  if (!root.contains("demand")) {
    throw ConfigError("scenario parse error: required field 'demand' is missing");
  }
  {
    const json& dm = root.at("demand");
    for_known_keys(dm, "demand", {"breakpoints"}, [&] {
      if (!dm.contains("breakpoints") || !dm.at("breakpoints").is_array()) {
        throw ConfigError("scenario field 'demand.breakpoints': required array missing");
      }
      sc.demand.breakpoints.clear();
      for (const auto& bp : dm.at("breakpoints")) {
        if (!bp.is_array() || bp.size() != 2 || !bp[0].is_number() || !bp[1].is_number()) {
          throw ConfigError("scenario field 'demand.breakpoints': entries must be [time_s, veh_per_h]");
        }
        sc.demand.breakpoints.emplace_back(bp[0].get<double>(), bp[1].get<double>());
      }
    });
  }

  if (root.contains("timing")) {
    const json& t = root.at("timing");
    for_known_keys(t, "timing",
                   {"dt_truth_s", "dt_sim_s", "dt_control_s", "window_s", "detector_spacing_m",
                    "cell_length_m"},
                   [&] {
                     sc.timing.dt_truth_s = get_num(t, "timing", "dt_truth_s", sc.timing.dt_truth_s);
                     sc.timing.dt_sim_s = get_num(t, "timing", "dt_sim_s", sc.timing.dt_sim_s);
                     sc.timing.dt_control_s = get_num(t, "timing", "dt_control_s", sc.timing.dt_control_s);
                     sc.timing.window_s = get_num(t, "timing", "window_s", sc.timing.window_s);
                     sc.timing.detector_spacing_m =
                         get_num(t, "timing", "detector_spacing_m", sc.timing.detector_spacing_m);
                     sc.timing.cell_length_m = get_num(t, "timing", "cell_length_m", sc.timing.cell_length_m);
                   });
  }

  if (root.contains("detector")) {
    const json& d = root.at("detector");
    for_known_keys(d, "detector", {"vehicle_length_m", "detector_length_m"}, [&] {
      sc.detector.vehicle_length_m = get_num(d, "detector", "vehicle_length_m", sc.detector.vehicle_length_m);
      sc.detector.detector_length_m = get_num(d, "detector", "detector_length_m", sc.detector.detector_length_m);
    });
  }

  if (root.contains("fd")) {
    const json& f = root.at("fd");
    for_known_keys(f, "fd",
                   {"v_fr_mps", "rho_cr_nor_veh_km", "rho_cr_sag_veh_km", "rho_jam_veh_km"}, [&] {
                     sc.fd.v_fr_mps = get_num(f, "fd", "v_fr_mps", sc.fd.v_fr_mps);
                     sc.fd.rho_cr_nor_veh_km = get_num(f, "fd", "rho_cr_nor_veh_km", sc.fd.rho_cr_nor_veh_km);
                     sc.fd.rho_cr_sag_veh_km = get_num(f, "fd", "rho_cr_sag_veh_km", sc.fd.rho_cr_sag_veh_km);
                     sc.fd.rho_jam_veh_km = get_num(f, "fd", "rho_jam_veh_km", sc.fd.rho_jam_veh_km);
                   });
  }

  if (root.contains("jad")) {
    const json& j = root.at("jad");
    for_known_keys(j, "jad",
                   {"p_jst_m", "p_jen_m", "p_ep_m", "a_si_min_mps2", "a_si_max_mps2",
                    "v_si_min_mps", "horizon_steps"},
                   [&] {
                     sc.jad.p_jst_m = get_num(j, "jad", "p_jst_m", sc.jad.p_jst_m);
                     sc.jad.p_jen_m = get_num(j, "jad", "p_jen_m", sc.jad.p_jen_m);
                     sc.jad.p_ep_m = get_num(j, "jad", "p_ep_m", sc.jad.p_ep_m);
                     sc.jad.a_si_min_mps2 = get_num(j, "jad", "a_si_min_mps2", sc.jad.a_si_min_mps2);
                     sc.jad.a_si_max_mps2 = get_num(j, "jad", "a_si_max_mps2", sc.jad.a_si_max_mps2);
                     sc.jad.v_si_min_mps = get_num(j, "jad", "v_si_min_mps", sc.jad.v_si_min_mps);
                     sc.jad.horizon_steps =
                         static_cast<int>(get_num(j, "jad", "horizon_steps", sc.jad.horizon_steps));
                   });
  }

  if (root.contains("noise")) {
    const json& n = root.at("noise");
    for_known_keys(n, "noise",
                   {"q_density", "q_theta", "r_flow", "r_occ", "p0_density", "p0_theta",
                    "inject_flow_sigma_vph", "inject_occ_sigma"},
                   [&] {
                     sc.noise.q_density = get_num(n, "noise", "q_density", sc.noise.q_density);
                     sc.noise.r_flow = get_num(n, "noise", "r_flow", sc.noise.r_flow);
                     sc.noise.r_occ = get_num(n, "noise", "r_occ", sc.noise.r_occ);
                     sc.noise.p0_density = get_num(n, "noise", "p0_density", sc.noise.p0_density);
                     sc.noise.inject_flow_sigma_vph =
                         get_num(n, "noise", "inject_flow_sigma_vph", sc.noise.inject_flow_sigma_vph);
                     sc.noise.inject_occ_sigma = get_num(n, "noise", "inject_occ_sigma", sc.noise.inject_occ_sigma);
                     for (const char* key : {"q_theta", "p0_theta"}) {
                       if (!n.contains(key)) continue;
                       const auto& arr = n.at(key);
                       if (!arr.is_array() || arr.size() != 3) {
                         throw ConfigError(std::string("scenario field 'noise.") + key +
                                           "': expected an array of 3 numbers");
                       }
                       double* dst = (std::string(key) == "q_theta") ? sc.noise.q_theta : sc.noise.p0_theta;
                       for (int i = 0; i < 3; ++i) dst[i] = arr[i].get<double>();
                     }
                   });
  }

  if (root.contains("logging")) {
    const json& l = root.at("logging");
    for_known_keys(l, "logging", {"trajectory_interval_s"}, [&] {
      sc.logging.trajectory_interval_s =
          get_num(l, "logging", "trajectory_interval_s", sc.logging.trajectory_interval_s);
    });
  }

  if (root.contains("drain_limit_s")) sc.drain_limit_s = root.at("drain_limit_s").get<double>();
  if (root.contains("fuel_coeff_file")) sc.fuel_coeff_file = root.at("fuel_coeff_file").get<std::string>();

  sc.validate();
  return sc;
}

Scenario load_scenario(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) {
    throw ConfigError("scenario file not found: " + path.string());
  }
  return scenario_from_json_text(read_text_file(path));
}

std::string Scenario::to_json() const {
  json root;
  root["name"] = name;
  root["road"] = {{"g_down_percent", road.g_down * 100.0},
                  {"g_up_percent", road.g_up * 100.0},
                  {"p_sag_begin_m", road.p_sag_begin_m},
                  {"p_sag_end_m", road.p_sag_end_m},
                  {"p_entry_m", road.p_entry_m},
                  {"p_exit_m", road.p_exit_m}};
  root["driver"] = {{"alpha_mps2", driver.alpha_mps2}, {"beta_mps2", driver.beta_mps2},
                    {"delta", driver.delta},           {"s0_m", driver.s0_m},
                    {"headway_T_s", driver.headway_T_s}, {"v_des_mps", driver.v_des_mps},
                    {"theta_mps2", driver.theta_mps2}, {"lambda_per_s", driver.lambda_per_s}};
  json bps = json::array();
  for (const auto& [t, q] : demand.breakpoints) bps.push_back({t, q});
  root["demand"] = {{"breakpoints", bps}};
  root["timing"] = {{"dt_truth_s", timing.dt_truth_s},
                    {"dt_sim_s", timing.dt_sim_s},
                    {"dt_control_s", timing.dt_control_s},
                    {"window_s", timing.window_s},
                    {"detector_spacing_m", timing.detector_spacing_m},
                    {"cell_length_m", timing.cell_length_m}};
  root["detector"] = {{"vehicle_length_m", detector.vehicle_length_m},
                      {"detector_length_m", detector.detector_length_m}};
  root["fd"] = {{"v_fr_mps", fd.v_fr_mps},
                {"rho_cr_nor_veh_km", fd.rho_cr_nor_veh_km},
                {"rho_cr_sag_veh_km", fd.rho_cr_sag_veh_km},
                {"rho_jam_veh_km", fd.rho_jam_veh_km}};
  root["jad"] = {{"p_jst_m", jad.p_jst_m},       {"p_jen_m", jad.p_jen_m},
                 {"p_ep_m", jad.p_ep_m},         {"a_si_min_mps2", jad.a_si_min_mps2},
                 {"a_si_max_mps2", jad.a_si_max_mps2}, {"v_si_min_mps", jad.v_si_min_mps},
                 {"horizon_steps", jad.horizon_steps}};
  root["noise"] = {{"q_density", noise.q_density},
                   {"q_theta", {noise.q_theta[0], noise.q_theta[1], noise.q_theta[2]}},
                   {"r_flow", noise.r_flow},
                   {"r_occ", noise.r_occ},
                   {"p0_density", noise.p0_density},
                   {"p0_theta", {noise.p0_theta[0], noise.p0_theta[1], noise.p0_theta[2]}},
                   {"inject_flow_sigma_vph", noise.inject_flow_sigma_vph},
                   {"inject_occ_sigma", noise.inject_occ_sigma}};
  root["logging"] = {{"trajectory_interval_s", logging.trajectory_interval_s}};
  root["drain_limit_s"] = drain_limit_s;
  root["fuel_coeff_file"] = fuel_coeff_file;
  return root.dump(2) + "\n";
}

Scenario preset_scenario(const std::string& name) {
  Scenario sc;
  sc.name = name;
  sc.demand.breakpoints = {{0.0, 2250.0}, {480.0, 1550.0}, {2400.0, 900.0}, {4800.0, 0.0}};
  if (name == "baseline") {
    sc.fd.v_fr_mps = 27.0;
    sc.fd.rho_cr_nor_veh_km = 23.0;
    sc.fd.rho_cr_sag_veh_km = 18.0;
  } else if (name == "ue") {
    sc.fd.v_fr_mps = 30.0;
    sc.fd.rho_cr_nor_veh_km = 23.0;
    sc.fd.rho_cr_sag_veh_km = 18.0;
  } else if (name == "oe") {
    sc.fd.v_fr_mps = 24.0;
    sc.fd.rho_cr_nor_veh_km = 26.0;
    sc.fd.rho_cr_sag_veh_km = 15.0;
  } else {
    throw ConfigError("unknown preset: " + name + " (expected baseline|ue|oe)");
  }
  sc.validate();
  return sc;
}

}  // namespace jadlab
