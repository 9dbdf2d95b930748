#include <cstdio>
#include <exception>
#include <string>

#include <CLI11.hpp>

#include "jadlab/errors.hpp"
#include "jadlab/harness.hpp"
#include "jadlab/io.hpp"
#include "jadlab/scenario.hpp"

namespace {

int run_simulate(const std::string& scenario_path, const std::string& preset,
                 const std::string& mode, std::uint64_t seed, const std::string& out_dir,
                 bool noise) {
  jadlab::harness::RunOptions options;
  if (!scenario_path.empty() && !preset.empty()) {
    throw jadlab::ConfigError("give either --scenario or --preset, not both");
  }
  if (scenario_path.empty() && preset.empty()) {
    throw jadlab::ConfigError("one of --scenario or --preset is required");
  }
  options.scenario = scenario_path.empty() ? jadlab::preset_scenario(preset)
                                           : jadlab::load_scenario(scenario_path);
  options.mode = jadlab::harness::parse_mode(mode);
  options.seed = seed;
  options.noise = noise;
  options.out_dir = out_dir;

  const auto result = jadlab::harness::run_scenario(options);
  std::printf("run complete: %s mode=%s t_end=%.2fs vehicles=%lld jad=%s\n",
              result.out_dir.string().c_str(), mode.c_str(), result.sim_end_s,
              static_cast<long long>(result.vehicles_spawned),
              result.jad_activated ? "activated" : "inactive");
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"jadlab: sag-bottleneck traffic laboratory with jam-absorption driving"};
  app.require_subcommand(1);

  std::string scenario_path, preset, mode = "no-jad", out_dir = "run";
  std::uint64_t seed = 0;
  bool noise = false;

  auto* simulate = app.add_subcommand("simulate", "run one scenario and write a bundle");
  simulate->add_option("--scenario", scenario_path, "scenario config file (JSON)");
  simulate->add_option("--preset", preset, "built-in scenario: baseline|ue|oe");
  simulate->add_option("--mode", mode, "no-jad|jad-no-da|jad-da")->required();
  simulate->add_option("--seed", seed, "seed for detector noise injection");
  simulate->add_option("--out", out_dir, "output bundle directory")->required();
  simulate->add_flag("--noise", noise, "perturb detector samples (seeded)");

  std::string dir_a, dir_b, compare_out;
  auto* compare = app.add_subcommand("compare", "delta metrics of two paired bundles");
  compare->add_option("--a", dir_a, "reference bundle (non-JAD)")->required();
  compare->add_option("--b", dir_b, "treated bundle (JAD)")->required();
  compare->add_option("--out", compare_out, "comparison JSON file")->required();

  std::string run_dir;
  double grid_dt = 30.0, grid_dp = 100.0;
  auto* exporter = app.add_subcommand("export-timespace", "rasterized mean-speed grid CSV");
  exporter->add_option("--run", run_dir, "run bundle directory")->required();
  exporter->add_option("--dt", grid_dt, "time bin (s)");
  exporter->add_option("--dp", grid_dp, "space bin (m)");

  CLI11_PARSE(app, argc, argv);

  try {
    if (simulate->parsed()) {
      return run_simulate(scenario_path, preset, mode, seed, out_dir, noise);
    }
    if (compare->parsed()) {
      const auto report = jadlab::harness::compare_runs(dir_a, dir_b, compare_out);
      std::printf("delta_att_s=%.3f delta_afc_ml=%.3f deterioration=%s\n", report.delta_att_s,
                  report.delta_afc_ml, report.deterioration_flag ? "true" : "false");
      return 0;
    }
    if (exporter->parsed()) {
      jadlab::harness::export_timespace(run_dir, grid_dt, grid_dp);
      std::printf("wrote %s/timespace.csv and abv_trajectory.csv\n", run_dir.c_str());
      return 0;
    }
  } catch (const jadlab::ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return 2;
  } catch (const jadlab::SimulationFault& e) {
    std::fprintf(stderr, "simulation fault: %s\n", e.what());
    return 3;
  } catch (const jadlab::FilterFault& e) {
    std::fprintf(stderr, "filter fault: %s\n", e.what());
    return 4;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
