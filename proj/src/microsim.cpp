#include "jadlab/microsim.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace jadlab::sim {

namespace {

constexpr double kSpeedBoundTolerance = 0.5;  // m/s above v_des before faulting

double clamped_gradient(const RoadProfile& road, double p_m) {
  return gradient_at(road, std::clamp(p_m, road.p_entry_m, road.p_exit_m));
}

}  // namespace

StepOutcome step_truth(World& world, const RoadProfile& road, const DriverParams& driver,
                       double vehicle_length_m, double dt_s, double t_s,
                       std::optional<std::pair<std::int64_t, double>> abv_override) {
  StepOutcome outcome;
  auto& vehicles = world.vehicles;
  if (vehicles.empty()) return outcome;

  // Accelerations first, against the pre-step state. Leader runs free.
  for (std::size_t i = 0; i < vehicles.size(); ++i) {
    VehicleState& veh = vehicles[i];
    double accel;
    if (abv_override && veh.id == abv_override->first) {
      accel = abv_override->second;
    } else {
      double gap = std::numeric_limits<double>::infinity();
      double dv = 0.0;
      if (i > 0) {
        const VehicleState& leader = vehicles[i - 1];
        gap = leader.p_m - vehicle_length_m - veh.p_m;
        dv = veh.v_mps - leader.v_mps;
      }
      const double g_here = clamped_gradient(road, veh.p_m);
      double a_des;
      try {
        a_des = desired_acceleration(veh.v_mps, dv, gap, driver);
      } catch (const std::domain_error&) {
        std::ostringstream msg;
        msg << "collision state at t=" << t_s << "s: vehicle " << veh.id
            << " has non-positive gap to " << vehicles[i - 1].id;
        throw SimulationFault(msg.str());
      }
      accel = a_des + gradient_acceleration(g_here, veh.g_comp, driver.theta_mps2);
    }
    veh.a_mps2 = accel;
  }

  // Ballistic update: speed first (clamped non-negative), position with the
  // post-update speed, then the gradient compensation at the new position.
  for (auto& veh : vehicles) {
    veh.v_mps = std::max(0.0, veh.v_mps + veh.a_mps2 * dt_s);
    veh.p_m += veh.v_mps * dt_s;
    veh.g_comp = update_compensated_gradient(veh.g_comp, clamped_gradient(road, veh.p_m),
                                             driver.lambda_per_s, dt_s);
    if (veh.v_mps > driver.v_des_mps + kSpeedBoundTolerance) {
      std::ostringstream msg;
      msg << "speed bound violated at t=" << t_s << "s: vehicle " << veh.id << " at "
          << veh.v_mps << " m/s (v_des " << driver.v_des_mps << ")";
      throw SimulationFault(msg.str());
    }
  }

  // Ordering / collision check (single lane, no passing).
  for (std::size_t i = 1; i < vehicles.size(); ++i) {
    const double gap = vehicles[i - 1].p_m - vehicle_length_m - vehicles[i].p_m;
    if (gap <= 0.0) {
      std::ostringstream msg;
      msg << "collision at t=" << t_s << "s between vehicles " << vehicles[i - 1].id << " and "
          << vehicles[i].id << " (gap " << gap << " m)";
      throw SimulationFault(msg.str());
    }
  }

  // Remove vehicles that reached the exit (leader-first order means they sit
  // at the front of the vector).
  std::size_t removed = 0;
  while (removed < vehicles.size() && vehicles[removed].p_m >= road.p_exit_m) {
    outcome.exited.push_back(vehicles[removed]);
    ++removed;
  }
  if (removed > 0) vehicles.erase(vehicles.begin(), vehicles.begin() + removed);
  return outcome;
}

std::vector<std::int64_t> spawn_vehicles(World& world, SpawnState& state,
                                         const DemandProfile& demand, const RoadProfile& road,
                                         const DriverParams& driver, const DetectorConfig& det,
                                         double t_s, double dt_s) {
  state.accumulated_veh += demand_at(demand, t_s) / 3600.0 * dt_s;

  std::vector<std::int64_t> spawned;
  while (state.queued() > 0) {
    double v_spawn = driver.v_des_mps;
    if (!world.vehicles.empty()) {
      const VehicleState& rear = world.vehicles.back();
      const double entrance_gap = (rear.p_m - det.vehicle_length_m) - road.p_entry_m;
      // With a nearby leader the spawn speed follows it, and the gap test
      // adapts to that (lower) speed.
      if (entrance_gap < driver.s0_m + driver.v_des_mps * driver.headway_T_s) {
        v_spawn = std::min(driver.v_des_mps, rear.v_mps);
      }
      if (entrance_gap < driver.s0_m + v_spawn * driver.headway_T_s) {
        break;  // blocked; demand stays queued
      }
    }
    VehicleState veh;
    veh.id = state.next_id++;
    veh.p_m = road.p_entry_m;
    veh.v_mps = v_spawn;
    veh.a_mps2 = 0.0;
    veh.g_comp = gradient_at(road, road.p_entry_m);
    veh.role = Role::normal;
    world.vehicles.push_back(veh);
    ++state.spawned;
    spawned.push_back(veh.id);
  }
  return spawned;
}

DetectorBank::DetectorBank(const RoadProfile& road, const TimingConfig& timing,
                           const DetectorConfig& det) {
  spacing_m_ = timing.detector_spacing_m;
  origin_m_ = road.p_entry_m;
  effective_length_m_ = det.effective_length_m();
  window_s_ = timing.window_s;
  steps_per_window_ = timing.ticks_per_window();
  const int n = static_cast<int>(std::lround(road.length_m() / spacing_m_)) + 1;
  stations_m_.resize(n);
  for (int k = 0; k < n; ++k) stations_m_[k] = origin_m_ + k * spacing_m_;
  crossings_.assign(n, 0);
  covered_steps_.assign(n, 0);
  covered_now_.assign(n, 0);
}

void DetectorBank::mark_crossings(double before_m, double after_m) {
  // Front-bumper crossing of station k happens when p moves from < station
  // to >= station. Index arithmetic, robust to multi-station jumps.
  const int k_before = static_cast<int>(std::ceil((before_m - origin_m_) / spacing_m_ - 1e-12));
  const int k_after = static_cast<int>(std::floor((after_m - origin_m_) / spacing_m_ + 1e-12));
  for (int k = std::max(k_before, 0); k <= std::min(k_after, station_count() - 1); ++k) {
    if (stations_m_[k] > before_m && stations_m_[k] <= after_m) ++crossings_[k];
  }
}

void DetectorBank::mark_coverage(double p_m) {
  const double rel = p_m - origin_m_;
  const int k = static_cast<int>(std::floor(rel / spacing_m_));
  if (k < 0 || k >= station_count()) return;
  if (rel - k * spacing_m_ < effective_length_m_) covered_now_[k] = 1;
}

void DetectorBank::register_spawn() {
  ++crossings_[0];
  covered_now_[0] = 1;
}

void DetectorBank::accumulate(const World& world, const std::vector<double>& p_before_all,
                              const std::vector<VehicleState>& exited) {
  const std::size_t survivors_offset = exited.size();
  for (std::size_t i = 0; i < exited.size(); ++i) {
    mark_crossings(p_before_all[i], exited[i].p_m);
  }
  for (std::size_t i = 0; i < world.vehicles.size(); ++i) {
    mark_crossings(p_before_all[survivors_offset + i], world.vehicles[i].p_m);
    mark_coverage(world.vehicles[i].p_m);
  }
  for (int k = 0; k < station_count(); ++k) {
    covered_steps_[k] += covered_now_[k];
    covered_now_[k] = 0;
  }
}

std::vector<DetectorSample> DetectorBank::close_window(double window_end_s) {
  std::vector<DetectorSample> samples(station_count());
  for (int k = 0; k < station_count(); ++k) {
    DetectorSample& s = samples[k];
    s.station_m = stations_m_[k];
    s.window_end_s = window_end_s;
    s.window_start_s = window_end_s - window_s_;
    s.flow_vph = static_cast<double>(crossings_[k]) * 3600.0 / window_s_;
    s.occupancy = static_cast<double>(covered_steps_[k]) / static_cast<double>(steps_per_window_);
    crossings_[k] = 0;
    covered_steps_[k] = 0;
  }
  return samples;
}

}  // namespace jadlab::sim
