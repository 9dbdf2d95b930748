#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "jadlab/errors.hpp"

namespace jadlab::eval {

// VT-micro instantaneous fuel-rate model: ln(rate) is a bivariate cubic in
// speed and acceleration with separate coefficient matrices for accelerating
// and decelerating regimes. Coefficients ship as a data file (units and
// provenance recorded there) so alternate calibrations can be swapped in.
class VtMicroModel {
 public:
  static VtMicroModel load(const std::filesystem::path& path);

  // v in m/s, a in m/s^2; returns ml/s.
  double rate_ml_per_s(double v_mps, double a_mps2) const;

  double coefficient(bool positive_regime, int i, int j) const {
    return positive_regime ? k_pos_[i][j] : k_neg_[i][j];
  }

 private:
  double k_pos_[4][4] = {};
  double k_neg_[4][4] = {};
};

// Resolves the bundled coefficient file: explicit path if given, else
// $JADLAB_DATA_DIR, else the build-time data directory.
std::filesystem::path resolve_fuel_coeff_file(const std::string& configured);

struct TrajectorySample {
  double t_s = 0.0;
  double v_mps = 0.0;
  double a_mps2 = 0.0;
};

// Integrates the fuel rate over a uniformly sampled trajectory (ml).
double vt_micro_fuel(const std::vector<TrajectorySample>& samples, const VtMicroModel& model);

struct VehicleTravel {
  std::int64_t id = 0;
  double entry_t_s = 0.0;
  double exit_t_s = 0.0;  // interpolated crossing of p_exit
  bool completed = false;
  double fuel_ml = 0.0;
};

// Mean travel time over completed vehicles; throws when none completed.
double average_travel_time(const std::vector<VehicleTravel>& vehicles);

struct RunAggregates {
  double att_s = 0.0;
  double afc_ml = 0.0;
  std::int64_t vehicle_count = 0;  // completed vehicles
};

// Streams a trajectory CSV and produces per-run aggregates: exact-crossing
// travel times and VT-micro fuel per vehicle, averaged over completed ones.
RunAggregates evaluate_trajectory(const std::filesystem::path& trajectory_csv,
                                  const VtMicroModel& model, double p_entry_m, double p_exit_m,
                                  std::vector<VehicleTravel>* per_vehicle = nullptr);

inline constexpr double kDeteriorationThresholdS = -6.0;

struct MetricsReport {
  double att_s = 0.0;
  double afc_ml = 0.0;
  std::int64_t vehicle_count = 0;
  double delta_att_s = 0.0;  // reference (non-JAD) minus treated (JAD)
  double delta_afc_ml = 0.0;
  bool deterioration_flag = false;
};

// Delta metrics of a JAD run against its paired non-JAD reference.
MetricsReport benefit_metrics(const RunAggregates& run_jad, const RunAggregates& run_nojad);

}  // namespace jadlab::eval
