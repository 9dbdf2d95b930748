#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <vector>

#include "jadlab/ctm.hpp"
#include "jadlab/prediction.hpp"
#include "jadlab/scenario.hpp"

namespace jadlab::control {

// Slow-in target speed: min{v_des, max{v_si_min, (p_ep - p)/(t_ep - t)}}.
// Returns nullopt when the plan is stale (t past t_ep, or the vehicle already
// at/past the end point); the caller falls back to IDM+ until the next plan.
template <typename Scalar>
std::optional<Scalar> slow_in_speed(Scalar p_abv, Scalar t, const pred::AbsorbingPlan& plan,
                                    const JadParams& cfg, Scalar v_des) {
  if (t >= Scalar(plan.t_ep_s) || p_abv >= Scalar(plan.p_ep_m)) {
    return std::nullopt;  // stale plan
  }
  const Scalar ratio = (Scalar(plan.p_ep_m) - p_abv) / (Scalar(plan.t_ep_s) - t);
  return std::min(v_des, std::max(Scalar(cfg.v_si_min_mps), ratio));
}

template <typename Scalar>
Scalar slow_in_acceleration(Scalar v_si, Scalar v_abv, Scalar dt_control) {
  return (v_si - v_abv) / dt_control;
}

// Clamped temporary acceleration. The -v/dt and (v_des - v)/dt terms keep the
// controlled speed inside [0, v_des] under one Euler step of dt_control.
template <typename Scalar>
Scalar jad_temp_acceleration(Scalar v_si, Scalar v_abv, Scalar a_si, const JadParams& cfg,
                             Scalar v_des, Scalar dt_control) {
  if (v_si < v_abv) {
    return std::max({a_si, Scalar(cfg.a_si_min_mps2), -v_abv / dt_control});
  }
  if (v_si > v_abv) {
    return std::min({a_si, Scalar(cfg.a_si_max_mps2), (v_des - v_abv) / dt_control});
  }
  return Scalar(0);
}

// Crash-avoidance override: whenever IDM+ demands deceleration, the applied
// acceleration may not exceed it.
template <typename Scalar>
Scalar jad_acceleration(Scalar a_temp, Scalar a_des_idm) {
  return a_des_idm < Scalar(0) ? std::min(a_des_idm, a_temp) : a_temp;
}

enum class Branch : unsigned char { jad, idm_outside, idm_stale, idm_no_plan };

inline const char* branch_name(Branch b) {
  switch (b) {
    case Branch::jad: return "jad";
    case Branch::idm_outside: return "idm_outside";
    case Branch::idm_stale: return "idm_stale";
    case Branch::idm_no_plan: return "idm_no_plan";
  }
  return "?";
}

struct Command {
  double a_cmd_mps2 = 0.0;
  Branch branch = Branch::idm_no_plan;
};

// Position-gated AbV acceleration. a_des_idm is the pure IDM+ desired
// acceleration (crash avoidance inside the gate); a_full is the ordinary
// vehicle law (IDM+ plus gradient term) used outside the gate and on stale
// plans.
inline Command abv_acceleration(double p_abv, double v_abv, double t,
                                const std::optional<pred::AbsorbingPlan>& plan,
                                const JadParams& cfg, double v_des, double dt_control,
                                double a_des_idm, double a_full) {
  if (p_abv < cfg.p_jst_m || p_abv > cfg.p_jen_m) {
    return {a_full, Branch::idm_outside};
  }
  if (!plan) {
    return {a_full, Branch::idm_no_plan};
  }
  const auto v_si = slow_in_speed(p_abv, t, *plan, cfg, v_des);
  if (!v_si) {
    return {a_full, Branch::idm_stale};
  }
  const double a_si = slow_in_acceleration(*v_si, v_abv, dt_control);
  const double a_temp = jad_temp_acceleration(*v_si, v_abv, a_si, cfg, v_des, dt_control);
  return {jad_acceleration(a_temp, a_des_idm), Branch::jad};
}

// JAD activation: any sag cell's estimated density above its estimated
// critical density for two consecutive windows.
struct TriggerState {
  int consecutive = 0;
  bool fired = false;
  double fired_at_s = 0.0;
};

inline void update_trigger(TriggerState& state, const Eigen::Ref<const Eigen::VectorXd>& rho_hat,
                           const ctm::FundamentalDiagram& fd_hat, const ctm::CellGrid& grid,
                           double t_window_end_s) {
  if (state.fired) return;
  bool congested = false;
  for (int i = 0; i < grid.cell_count; ++i) {
    if (grid.types[i] == ctm::CellType::sag && rho_hat[i] > fd_hat.rho_cr_sag) {
      congested = true;
      break;
    }
  }
  state.consecutive = congested ? state.consecutive + 1 : 0;
  if (state.consecutive >= 2) {
    state.fired = true;
    state.fired_at_s = t_window_end_s;
  }
}

// First vehicle spawned at or after the trigger time becomes the AbV.
inline std::optional<std::int64_t> select_absorbing_vehicle(
    const std::vector<std::pair<std::int64_t, double>>& spawns_id_time, double trigger_time_s) {
  for (const auto& [id, t] : spawns_id_time) {
    if (t >= trigger_time_s) return id;
  }
  return std::nullopt;
}

}  // namespace jadlab::control
