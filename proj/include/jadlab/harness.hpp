#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "jadlab/evaluation.hpp"
#include "jadlab/scenario.hpp"

namespace jadlab::harness {

enum class RunMode { no_jad, jad_no_da, jad_da };

const char* mode_name(RunMode mode);
RunMode parse_mode(const std::string& name);

struct RunOptions {
  Scenario scenario;
  RunMode mode = RunMode::no_jad;
  std::uint64_t seed = 0;
  bool noise = false;  // perturb detector samples (truth untouched)
  std::filesystem::path out_dir;
};

struct RunResult {
  std::filesystem::path out_dir;
  double sim_end_s = 0.0;
  std::int64_t vehicles_spawned = 0;
  bool jad_activated = false;
  double trigger_fired_at_s = 0.0;
  std::int64_t abv_id = -1;
  double abv_designated_at_s = 0.0;
};

// Runs the full rolling-horizon loop and writes a run bundle:
// trajectory/detector/estimate/plan/command CSVs, metrics.json, config.json
// and manifest.json. Reruns with an equal manifest are byte-identical.
RunResult run_scenario(const RunOptions& options);

// Pairing check plus delta metrics (a = reference run, conventionally the
// non-JAD one; b = treated run). Writes a comparison JSON when out_file is
// non-empty.
eval::MetricsReport compare_runs(const std::filesystem::path& dir_a,
                                 const std::filesystem::path& dir_b,
                                 const std::filesystem::path& out_file);

// Rasterized mean-speed grid over (time, space) plus the AbV polyline,
// written next to the run's other outputs.
struct TimeSpaceGrid {
  double t0_s = 0.0, dt_s = 0.0;
  double p0_m = 0.0, dp_m = 0.0;
  int nt = 0, np = 0;
  std::vector<double> speed_sum;
  std::vector<std::int64_t> samples;

  bool has_data(int it, int ip) const { return samples[it * np + ip] > 0; }
  double mean_speed(int it, int ip) const {
    return speed_sum[it * np + ip] / static_cast<double>(samples[it * np + ip]);
  }
};

TimeSpaceGrid build_timespace_grid(const std::filesystem::path& trajectory_csv, double p_entry_m,
                                   double p_exit_m, double dt_s, double dp_m,
                                   bool exclude_absorbing = false);

void export_timespace(const std::filesystem::path& run_dir, double dt_s, double dp_m);

// Fingerprint over every file of a bundle (order-fixed); equal manifests must
// produce equal fingerprints.
std::uint64_t bundle_fingerprint(const std::filesystem::path& run_dir);

}  // namespace jadlab::harness
