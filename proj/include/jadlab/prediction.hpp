#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <vector>

#include "jadlab/ctm.hpp"

namespace jadlab::pred {

// Shadow trajectory: the path the absorbing vehicle would follow with no JAD
// control, rolled through the per-cell equilibrium-speed field.
struct ShadowPoint {
  double t_s = 0.0;
  double p_m = 0.0;
  int cell = 0;
};

struct ShadowTrajectory {
  double issued_at_s = 0.0;
  std::vector<ShadowPoint> points;  // points[0] is the start state
};

enum class EndTimeStatus { ok, no_crossing, already_past };

struct EndTimeResult {
  EndTimeStatus status = EndTimeStatus::no_crossing;
  double t_ep_s = 0.0;  // valid when status == ok
};

// Fixed absorbing end position plus the currently predicted end time.
struct AbsorbingPlan {
  double p_ep_m = 0.0;
  double t_ep_s = 0.0;
  double issued_at_s = 0.0;
};

// One dt advance through the speed field. Movement within the current cell
// at its equilibrium speed; on reaching the cell's downstream boundary the
// remaining time continues at the next cell's speed (applied recursively for
// multiple boundaries). Zero speed means the shadow stays put: the time to
// the boundary would be undefined, so no crossing can happen.
inline double shadow_step(double p_now_m, const Eigen::Ref<const Eigen::VectorXd>& v_field_mps,
                          const ctm::CellGrid& grid, double dt_s) {
  double p = p_now_m;
  double remaining = dt_s;
  while (remaining > 0.0) {
    const int cell = grid.cell_index(p);
    const double v = v_field_mps[cell];
    if (v <= 0.0) return p;
    const double boundary = grid.downstream_boundary_m(cell);
    const double temp = p + v * remaining;
    if (temp > boundary && cell + 1 < grid.cell_count) {
      remaining -= (boundary - p) / v;
      p = boundary;
    } else {
      return temp;
    }
  }
  return p;
}

inline ShadowTrajectory predict_shadow(double start_p_m, double issued_at_s,
                                       const Eigen::Ref<const Eigen::VectorXd>& v_field_mps,
                                       const ctm::CellGrid& grid, int horizon_steps, double dt_s) {
  ShadowTrajectory shadow;
  shadow.issued_at_s = issued_at_s;
  shadow.points.reserve(horizon_steps + 1);
  double p = start_p_m;
  shadow.points.push_back({issued_at_s, p, grid.cell_index(p)});
  for (int eta = 1; eta <= horizon_steps; ++eta) {
    p = shadow_step(p, v_field_mps, grid, dt_s);
    shadow.points.push_back({issued_at_s + eta * dt_s, p, grid.cell_index(p)});
  }
  return shadow;
}

// First future time at which the shadow reaches p_ep, interpolated linearly
// between the bracketing rollout points.
inline EndTimeResult absorbing_end_time(const ShadowTrajectory& shadow, double p_ep_m) {
  EndTimeResult out;
  if (shadow.points.empty()) return out;
  if (shadow.points.front().p_m >= p_ep_m) {
    out.status = EndTimeStatus::already_past;
    return out;
  }
  for (std::size_t i = 1; i < shadow.points.size(); ++i) {
    const ShadowPoint& a = shadow.points[i - 1];
    const ShadowPoint& b = shadow.points[i];
    if (b.p_m >= p_ep_m) {
      const double span = b.p_m - a.p_m;
      const double frac = span > 0.0 ? (p_ep_m - a.p_m) / span : 1.0;
      out.status = EndTimeStatus::ok;
      out.t_ep_s = a.t_s + frac * (b.t_s - a.t_s);
      return out;
    }
  }
  return out;  // no_crossing
}

}  // namespace jadlab::pred
