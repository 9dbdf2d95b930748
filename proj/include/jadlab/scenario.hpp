#pragma once

#include <cmath>
#include <filesystem>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "jadlab/errors.hpp"

namespace jadlab {

// Sag geometry: constant downhill grade, linear ramp over the sag, constant
// uphill grade. Gradients are dimensionless slopes (-0.005, not "-0.5").
struct RoadProfile {
  double g_down = -0.005;
  double g_up = 0.03;
  double p_sag_begin_m = 8600.0;
  double p_sag_end_m = 8900.0;
  double p_entry_m = 0.0;
  double p_exit_m = 10000.0;

  void validate() const;
  double length_m() const { return p_exit_m - p_entry_m; }
};

// Piecewise road gradient. Continuous: g_down up to the sag begin, linear
// ramp on (p_sag_begin, p_sag_end], g_up beyond.
template <typename Scalar>
Scalar gradient_at(const RoadProfile& road, Scalar p) {
  if (p < road.p_entry_m || p > road.p_exit_m) {
    throw std::domain_error("gradient_at: position outside section");
  }
  if (p <= road.p_sag_begin_m) return Scalar(road.g_down);
  if (p > road.p_sag_end_m) return Scalar(road.g_up);
  const Scalar ramp = (p - road.p_sag_begin_m) / Scalar(road.p_sag_end_m - road.p_sag_begin_m);
  return Scalar(road.g_down) + ramp * Scalar(road.g_up - road.g_down);
}

struct DriverParams {
  double alpha_mps2 = 1.25;       // maximum acceleration
  double beta_mps2 = 2.0;         // comfortable deceleration
  double delta = 4.0;             // acceleration exponent
  double s0_m = 3.0;              // standstill gap
  double headway_T_s = 1.2;       // desired time headway
  double v_des_mps = 27.0;        // desired speed
  double theta_mps2 = 12.0;       // gradient sensitivity
  double lambda_per_s = 0.0003;   // max gradient compensation rate

  void validate() const;
};

// Piecewise-constant demand; intervals are half-open [t_k, t_{k+1}).
struct DemandProfile {
  std::vector<std::pair<double, double>> breakpoints;  // (time s, demand veh/h)

  void validate() const;
  double last_time_s() const {
    return breakpoints.empty() ? 0.0 : breakpoints.back().first;
  }
};

double demand_at(const DemandProfile& demand, double t_s);
// Integral of the demand profile over [0, t] in vehicles.
double demand_integral_veh(const DemandProfile& demand, double t_s);

struct TimingConfig {
  double dt_truth_s = 0.01;        // microsimulation step
  double dt_sim_s = 3.0;           // estimator/prediction step
  double dt_control_s = 0.1;       // control command refresh
  double window_s = 60.0;          // detector observation window
  double detector_spacing_m = 500.0;
  double cell_length_m = 100.0;

  void validate(const RoadProfile& road) const;

  // Integer cadence ratios (validated to be exact).
  long ticks_per_control() const { return std::lround(dt_control_s / dt_truth_s); }
  long ticks_per_sim() const { return std::lround(dt_sim_s / dt_truth_s); }
  long ticks_per_window() const { return std::lround(window_s / dt_truth_s); }
};

struct DetectorConfig {
  double vehicle_length_m = 5.0;
  double detector_length_m = 2.0;
  double effective_length_m() const { return vehicle_length_m + detector_length_m; }

  void validate() const;
};

// Initial fundamental-diagram parameter set Theta and the fixed jam density.
struct FdConfig {
  double v_fr_mps = 27.0;
  double rho_cr_nor_veh_km = 23.0;
  double rho_cr_sag_veh_km = 18.0;
  double rho_jam_veh_km = 140.0;

  void validate() const;
};

struct JadParams {
  double p_jst_m = 0.0;
  double p_jen_m = 8900.0;
  double p_ep_m = 9200.0;
  double a_si_min_mps2 = -1.0;
  double a_si_max_mps2 = 1.0;
  double v_si_min_mps = 5.0;
  int horizon_steps = 1200;

  void validate(const RoadProfile& road, const DriverParams& driver) const;
};

struct NoiseParams {
  double q_density = 1.0;                         // (veh/km)^2 per forecast step
  double q_theta[3] = {1e-4, 2.5e-3, 2.5e-3};     // v_fr, rho_cr_nor, rho_cr_sag
  double r_flow = 14400.0;                        // (veh/h)^2
  double r_occ = 4e-4;
  double p0_density = 25.0;
  double p0_theta[3] = {1.0, 4.0, 4.0};
  double inject_flow_sigma_vph = 60.0;            // detector noise injection (opt-in)
  double inject_occ_sigma = 0.01;

  void validate() const;
};

struct LoggingConfig {
  double trajectory_interval_s = 0.5;

  void validate(const TimingConfig& timing) const;
};

struct Scenario {
  std::string name = "baseline";
  RoadProfile road;
  DriverParams driver;
  DemandProfile demand;
  TimingConfig timing;
  DetectorConfig detector;
  FdConfig fd;
  JadParams jad;
  NoiseParams noise;
  LoggingConfig logging;
  double drain_limit_s = 7200.0;  // max time past demand end before fault
  std::string fuel_coeff_file;    // empty -> resolved against the data dir

  void validate() const;
  // Canonical JSON snapshot of every resolved field (the bundle's config.json).
  std::string to_json() const;
};

// Parses and validates a scenario config file (JSON, unit-suffixed keys,
// gradients given in percent). Every error names the offending field.
Scenario load_scenario(const std::filesystem::path& path);
Scenario scenario_from_json_text(const std::string& text);

// Shipped presets: "baseline", "ue", "oe" (initial Theta variants).
Scenario preset_scenario(const std::string& name);

}  // namespace jadlab
