#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <optional>
#include <stdexcept>
#include <vector>

#include "jadlab/errors.hpp"
#include "jadlab/scenario.hpp"

namespace jadlab::sim {

// ---------------------------------------------------------------------------
// Modified IDM+ kernels
// ---------------------------------------------------------------------------

// Desired gap s* = s0 + max{0, v T + v dv / (2 sqrt(alpha beta))}.
// dv is own speed minus leader speed (positive when closing in).
template <typename Scalar>
Scalar desired_gap(Scalar v, Scalar dv, const DriverParams& p) {
  const Scalar dynamic =
      v * Scalar(p.headway_T_s) + v * dv / (Scalar(2) * std::sqrt(Scalar(p.alpha_mps2 * p.beta_mps2)));
  return Scalar(p.s0_m) + std::max(Scalar(0), dynamic);
}

namespace detail {
// (v / v_des)^delta with a fast path for integral exponents; delta = 4 is the
// common case and std::pow dominates the stepping loop otherwise.
template <typename Scalar>
Scalar speed_ratio_pow(Scalar ratio, double delta) {
  const int n = static_cast<int>(delta);
  if (static_cast<double>(n) == delta && n >= 0 && n <= 16) {
    Scalar out = Scalar(1);
    Scalar base = ratio;
    int e = n;
    while (e > 0) {
      if (e & 1) out *= base;
      base *= base;
      e >>= 1;
    }
    return out;
  }
  return std::pow(ratio, Scalar(delta));
}
}  // namespace detail

// IDM+ desired acceleration alpha * min{1 - (v/v_des)^delta, 1 - (s*/gap)^2}.
template <typename Scalar>
Scalar desired_acceleration(Scalar v, Scalar dv, Scalar gap, const DriverParams& p) {
  if (!(gap > Scalar(0))) {
    throw std::domain_error("desired_acceleration: non-positive gap (collision state)");
  }
  const Scalar free_term = Scalar(1) - detail::speed_ratio_pow(v / Scalar(p.v_des_mps), p.delta);
  Scalar interaction = Scalar(1);
  if (std::isfinite(static_cast<double>(gap))) {
    const Scalar ratio = desired_gap(v, dv, p) / gap;
    interaction = Scalar(1) - ratio * ratio;
  }
  return Scalar(p.alpha_mps2) * std::min(free_term, interaction);
}

// Gradient term -theta * (G(p) - G_c).
template <typename Scalar>
Scalar gradient_acceleration(Scalar g_here, Scalar g_comp, Scalar theta) {
  return -theta * (g_here - g_comp);
}

// Rate-limited gradient compensation: increases are bounded by lambda*dt per
// step, decreases (and small increases) are taken immediately.
template <typename Scalar>
Scalar update_compensated_gradient(Scalar g_comp_prev, Scalar g_here, Scalar lambda, Scalar dt) {
  const Scalar limit = g_comp_prev + lambda * dt;
  return g_here > limit ? limit : g_here;
}

// ---------------------------------------------------------------------------
// World state
// ---------------------------------------------------------------------------

enum class Role : unsigned char { normal, absorbing };

struct VehicleState {
  std::int64_t id = 0;
  double p_m = 0.0;
  double v_mps = 0.0;
  double a_mps2 = 0.0;
  double g_comp = 0.0;
  Role role = Role::normal;
};

// Single-lane platoon ordered leader-first (descending position).
struct World {
  std::vector<VehicleState> vehicles;

  bool empty() const { return vehicles.empty(); }
  const VehicleState* find(std::int64_t id) const {
    for (const auto& v : vehicles)
      if (v.id == id) return &v;
    return nullptr;
  }
  VehicleState* find(std::int64_t id) {
    for (auto& v : vehicles)
      if (v.id == id) return &v;
    return nullptr;
  }
};

struct StepOutcome {
  std::vector<VehicleState> exited;  // post-update states with p >= p_exit
};

// Advances every vehicle by one explicit Euler step (ballistic position
// update), applies the gradient-compensation dynamics, removes vehicles past
// p_exit and runs the collision / speed-bound checks.
//
// abv_override, when set, replaces the full acceleration law for the vehicle
// with the given id (the JAD command, zero-order held by the caller).
StepOutcome step_truth(World& world, const RoadProfile& road, const DriverParams& driver,
                       double vehicle_length_m, double dt_s, double t_s,
                       std::optional<std::pair<std::int64_t, double>> abv_override = std::nullopt);

// ---------------------------------------------------------------------------
// Demand-driven spawning
// ---------------------------------------------------------------------------

struct SpawnState {
  double accumulated_veh = 0.0;  // integral of demand since t = 0
  std::int64_t spawned = 0;
  std::int64_t next_id = 1;

  std::int64_t queued() const {
    return static_cast<std::int64_t>(std::floor(accumulated_veh + 1e-9)) - spawned;
  }
};

// Accumulates demand over [t, t+dt) and emits vehicles at p_entry while the
// integral allows and the entrance gap admits one. Returns ids spawned this
// tick (at time t).
std::vector<std::int64_t> spawn_vehicles(World& world, SpawnState& state,
                                         const DemandProfile& demand, const RoadProfile& road,
                                         const DriverParams& driver, const DetectorConfig& det,
                                         double t_s, double dt_s);

// ---------------------------------------------------------------------------
// Loop-detector emulation
// ---------------------------------------------------------------------------

struct DetectorSample {
  double station_m = 0.0;
  double window_start_s = 0.0;
  double window_end_s = 0.0;
  double flow_vph = 0.0;
  double occupancy = 0.0;  // fraction of the window
};

// Stations at every detector_spacing boundary from p_entry to p_exit.
// Flow counts front-bumper crossings; occupancy is the union of per-vehicle
// coverage intervals, where a vehicle covers a station while its front lies
// within [station, station + vehicle_length + detector_length).
class DetectorBank {
 public:
  DetectorBank(const RoadProfile& road, const TimingConfig& timing, const DetectorConfig& det);

  int station_count() const { return static_cast<int>(stations_m_.size()); }
  double station_m(int k) const { return stations_m_[k]; }

  // Call once per truth tick after the world has been stepped. p_before_all
  // holds every vehicle's pre-step position in pre-step order: the first
  // exited.size() entries belong to the vehicles that left this tick, the
  // remainder aligns with the surviving world.vehicles.
  void accumulate(const World& world, const std::vector<double>& p_before_all,
                  const std::vector<VehicleState>& exited);
  // A spawn at p_entry counts as a crossing of the entrance station.
  void register_spawn();

  // Closes the window ending at window_end_s and returns one sample per
  // station. Counters reset for the next window.
  std::vector<DetectorSample> close_window(double window_end_s);

 private:
  void mark_crossings(double before_m, double after_m);
  void mark_coverage(double p_m);

  std::vector<double> stations_m_;
  double spacing_m_ = 0.0;
  double origin_m_ = 0.0;
  double effective_length_m_ = 0.0;
  double window_s_ = 0.0;
  long steps_per_window_ = 0;
  std::vector<long> crossings_;
  std::vector<long> covered_steps_;
  std::vector<unsigned char> covered_now_;
};

}  // namespace jadlab::sim
