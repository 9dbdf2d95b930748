#include "jadlab/evaluation.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <unordered_map>

#include <json.hpp>

#include "jadlab/io.hpp"

namespace jadlab::eval {

using nlohmann::json;

VtMicroModel VtMicroModel::load(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) {
    throw ConfigError("fuel coefficient file not found: " + path.string());
  }
  json root;
  try {
    root = json::parse(read_text_file(path));
  } catch (const json::exception& e) {
    throw ConfigError("fuel coefficient file parse error: " + std::string(e.what()));
  }
  VtMicroModel model;
  for (const char* key : {"positive", "negative"}) {
    if (!root.contains(key) || !root.at(key).is_array() || root.at(key).size() != 4) {
      throw ConfigError(std::string("fuel coefficient file: missing 4x4 matrix '") + key + "'");
    }
    for (int i = 0; i < 4; ++i) {
      const auto& row = root.at(key).at(i);
      if (!row.is_array() || row.size() != 4) {
        throw ConfigError(std::string("fuel coefficient file: matrix '") + key + "' row " +
                          std::to_string(i) + " must have 4 entries");
      }
      for (int j = 0; j < 4; ++j) {
        const double value = row.at(j).get<double>();
        if (std::string(key) == "positive") {
          model.k_pos_[i][j] = value;
        } else {
          model.k_neg_[i][j] = value;
        }
      }
    }
  }
  return model;
}

std::filesystem::path resolve_fuel_coeff_file(const std::string& configured) {
  if (!configured.empty()) return configured;
  if (const char* env = std::getenv("JADLAB_DATA_DIR")) {
    return std::filesystem::path(env) / "vt_micro_fuel.json";
  }
  return std::filesystem::path(JADLAB_SOURCE_DATA_DIR) / "vt_micro_fuel.json";
}

double VtMicroModel::rate_ml_per_s(double v_mps, double a_mps2) const {
  // Model calibration units: speed km/h, acceleration km/h/s, rate L/s.
  const double v = v_mps * 3.6;
  const double a = a_mps2 * 3.6;
  const auto& k = (a >= 0.0) ? k_pos_ : k_neg_;
  double v_pow = 1.0;
  double exponent = 0.0;
  for (int i = 0; i < 4; ++i) {
    double a_pow = 1.0;
    for (int j = 0; j < 4; ++j) {
      exponent += k[i][j] * v_pow * a_pow;
      a_pow *= a;
    }
    v_pow *= v;
  }
  return std::exp(exponent) * 1000.0;  // L/s -> ml/s
}

double vt_micro_fuel(const std::vector<TrajectorySample>& samples, const VtMicroModel& model) {
  double fuel_ml = 0.0;
  for (std::size_t i = 1; i < samples.size(); ++i) {
    const double dt = samples[i].t_s - samples[i - 1].t_s;
    fuel_ml += model.rate_ml_per_s(samples[i - 1].v_mps, samples[i - 1].a_mps2) * dt;
  }
  return fuel_ml;
}

double average_travel_time(const std::vector<VehicleTravel>& vehicles) {
  double sum = 0.0;
  std::int64_t n = 0;
  for (const auto& v : vehicles) {
    if (!v.completed) continue;
    sum += v.exit_t_s - v.entry_t_s;
    ++n;
  }
  if (n == 0) throw ConfigError("average_travel_time: no vehicle completed the section");
  return sum / static_cast<double>(n);
}

namespace {

double parse_field(const std::string& s, const char* what) {
  double value = 0.0;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), value);
  if (ec != std::errc() || ptr != s.data() + s.size()) {
    throw ConfigError(std::string("trajectory CSV: bad ") + what + " field '" + s + "'");
  }
  return value;
}

struct VehicleTracker {
  double entry_t = 0.0;
  double prev_t = 0.0;
  double prev_p = 0.0;
  double prev_v = 0.0;
  double prev_a = 0.0;
  double fuel_ml = 0.0;
  bool completed = false;
  double exit_t = 0.0;
  bool has_prev = false;
};

}  // namespace

RunAggregates evaluate_trajectory(const std::filesystem::path& trajectory_csv,
                                  const VtMicroModel& model, double p_entry_m, double p_exit_m,
                                  std::vector<VehicleTravel>* per_vehicle) {
  std::ifstream in(trajectory_csv);
  if (!in) throw ConfigError("cannot open trajectory CSV: " + trajectory_csv.string());

  std::string line;
  if (!std::getline(in, line)) throw ConfigError("empty trajectory CSV: " + trajectory_csv.string());

  std::unordered_map<std::int64_t, VehicleTracker> trackers;
  std::vector<std::int64_t> order;  // first-seen order, for deterministic output

  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto fields = split_csv_line(line);
    if (fields.size() != 7) throw ConfigError("trajectory CSV: expected 7 columns");
    const double t = parse_field(fields[0], "t_s");
    const auto id = static_cast<std::int64_t>(parse_field(fields[1], "vehicle_id"));
    const double p = parse_field(fields[3], "p_m");
    const double v = parse_field(fields[4], "v_mps");
    const double a = parse_field(fields[5], "a_mps2");

    auto [it, inserted] = trackers.try_emplace(id);
    VehicleTracker& tr = it->second;
    if (inserted) {
      tr.entry_t = t;  // first row is the spawn row, at p_entry exactly
      order.push_back(id);
    } else if (!tr.completed) {
      tr.fuel_ml += model.rate_ml_per_s(tr.prev_v, tr.prev_a) * (t - tr.prev_t);
      if (p >= p_exit_m && tr.prev_p < p_exit_m) {
        const double span = p - tr.prev_p;
        const double frac = span > 0.0 ? (p_exit_m - tr.prev_p) / span : 1.0;
        tr.exit_t = tr.prev_t + frac * (t - tr.prev_t);
        tr.completed = true;
      }
    }
    tr.prev_t = t;
    tr.prev_p = p;
    tr.prev_v = v;
    tr.prev_a = a;
    tr.has_prev = true;
  }

  RunAggregates agg;
  double att_sum = 0.0;
  double fuel_sum = 0.0;
  for (const auto id : order) {
    const VehicleTracker& tr = trackers.at(id);
    if (per_vehicle) {
      per_vehicle->push_back({id, tr.entry_t, tr.exit_t, tr.completed, tr.fuel_ml});
    }
    if (!tr.completed) continue;
    att_sum += tr.exit_t - tr.entry_t;
    fuel_sum += tr.fuel_ml;
    ++agg.vehicle_count;
  }
  if (agg.vehicle_count == 0) {
    throw ConfigError("evaluate_trajectory: no vehicle completed the section in " +
                      trajectory_csv.string());
  }
  agg.att_s = att_sum / static_cast<double>(agg.vehicle_count);
  agg.afc_ml = fuel_sum / static_cast<double>(agg.vehicle_count);
  return agg;
}

MetricsReport benefit_metrics(const RunAggregates& run_jad, const RunAggregates& run_nojad) {
  MetricsReport report;
  report.att_s = run_jad.att_s;
  report.afc_ml = run_jad.afc_ml;
  report.vehicle_count = run_jad.vehicle_count;
  report.delta_att_s = run_nojad.att_s - run_jad.att_s;
  report.delta_afc_ml = run_nojad.afc_ml - run_jad.afc_ml;
  report.deterioration_flag = report.delta_att_s < kDeteriorationThresholdS;
  return report;
}

}  // namespace jadlab::eval
