#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <vector>

#include "jadlab/errors.hpp"
#include "jadlab/scenario.hpp"

namespace jadlab::ctm {

inline constexpr double kMpsToKph = 3.6;

enum class CellType : unsigned char { normal, sag };

// Triangular fundamental diagram with one free-flow speed and two critical
// densities (normal vs sag-uphill cells). The jam density is fixed, not part
// of the estimated parameter set.
struct FundamentalDiagram {
  double v_fr_mps = 27.0;
  double rho_cr_nor = 23.0;  // veh/km
  double rho_cr_sag = 18.0;  // veh/km
  double rho_jam = 140.0;    // veh/km

  double rho_cr(CellType type) const {
    return type == CellType::sag ? rho_cr_sag : rho_cr_nor;
  }
  // veh/h
  double capacity(CellType type) const { return v_fr_mps * kMpsToKph * rho_cr(type); }
  // km/h, congested branch anchored at rho_jam
  double wave_speed(CellType type) const {
    return capacity(type) / (rho_jam - rho_cr(type));
  }

  void validate() const {
    if (!(v_fr_mps > 0.0 && rho_cr_sag > 0.0 && rho_cr_sag <= rho_cr_nor &&
          rho_cr_nor < rho_jam)) {
      throw ConfigError("fundamental diagram: need 0 < rho_cr_sag <= rho_cr_nor < rho_jam, v_fr > 0");
    }
  }

  static FundamentalDiagram from_config(const FdConfig& cfg) {
    FundamentalDiagram fd{cfg.v_fr_mps, cfg.rho_cr_nor_veh_km, cfg.rho_cr_sag_veh_km,
                          cfg.rho_jam_veh_km};
    fd.validate();
    return fd;
  }
};

struct CellGrid {
  int cell_count = 0;
  double cell_length_m = 100.0;
  double origin_m = 0.0;  // p_entry
  std::vector<CellType> types;

  double end_m() const { return origin_m + cell_count * cell_length_m; }
  double downstream_boundary_m(int cell) const {
    return origin_m + (cell + 1) * cell_length_m;
  }
  // A position exactly on a boundary belongs to the downstream cell.
  int cell_index(double p_m) const {
    const int i = static_cast<int>(std::floor((p_m - origin_m) / cell_length_m));
    return std::clamp(i, 0, cell_count - 1);
  }
};

// Cells whose span overlaps [p_sag_begin, p_exit] are sag-type; a cell
// straddling the sag begin counts as sag.
inline std::vector<CellType> classify_cells(const RoadProfile& road, int cell_count,
                                            double cell_length_m) {
  std::vector<CellType> types(cell_count, CellType::normal);
  for (int i = 0; i < cell_count; ++i) {
    const double span_end = road.p_entry_m + (i + 1) * cell_length_m;
    if (span_end > road.p_sag_begin_m) types[i] = CellType::sag;
  }
  return types;
}

inline CellGrid make_grid(const RoadProfile& road, const TimingConfig& timing) {
  CellGrid grid;
  grid.cell_length_m = timing.cell_length_m;
  grid.origin_m = road.p_entry_m;
  grid.cell_count = static_cast<int>(std::lround(road.length_m() / timing.cell_length_m));
  grid.types = classify_cells(road, grid.cell_count, grid.cell_length_m);
  return grid;
}

// CFL check for the explicit update. Applies to both the free-flow slope and
// the congested wave speed.
inline void check_cfl(const FundamentalDiagram& fd, double cell_length_m, double dt_s) {
  const double max_kph = std::max({fd.v_fr_mps * kMpsToKph, fd.wave_speed(CellType::normal),
                                   fd.wave_speed(CellType::sag)});
  if (max_kph / kMpsToKph * dt_s > cell_length_m + 1e-9) {
    throw ConfigError("CTM CFL violated: signal speed * dt_sim exceeds cell length");
  }
}

// Equilibrium speed v_e(rho) in m/s. Free branch at v_fr up to the critical
// density, congested branch q(rho)/rho with q = w*(rho_jam - rho).
template <typename Scalar>
Scalar equilibrium_speed(Scalar rho, CellType type, const FundamentalDiagram& fd) {
  if (rho < Scalar(0) || rho > Scalar(fd.rho_jam)) {
    throw std::domain_error("equilibrium_speed: density outside [0, rho_jam]");
  }
  if (rho <= Scalar(fd.rho_cr(type))) return Scalar(fd.v_fr_mps);
  const Scalar q_vph = Scalar(fd.wave_speed(type)) * (Scalar(fd.rho_jam) - rho);
  return q_vph / rho / Scalar(kMpsToKph);
}

// Demand part of the triangular FD, veh/h. Density clamped into the valid
// band so that finite-difference probes just outside stay well-defined.
template <typename Scalar>
Scalar sending_flow(Scalar rho, CellType type, const FundamentalDiagram& fd) {
  rho = std::clamp(rho, Scalar(0), Scalar(fd.rho_jam));
  return std::min(Scalar(fd.v_fr_mps * kMpsToKph) * rho, Scalar(fd.capacity(type)));
}

// Supply part, veh/h.
template <typename Scalar>
Scalar receiving_flow(Scalar rho, CellType type, const FundamentalDiagram& fd) {
  rho = std::clamp(rho, Scalar(0), Scalar(fd.rho_jam));
  return std::min(Scalar(fd.capacity(type)),
                  Scalar(fd.wave_speed(type)) * (Scalar(fd.rho_jam) - rho));
}

struct CtmStepResult {
  Eigen::VectorXd rho;            // veh/km
  double inflow_accepted_vph = 0; // what the first cell admitted
  double refused_vph = 0;         // inflow - accepted (caller may queue it)
  double outflow_vph = 0;         // free outflow of the last cell
};

// One explicit step of the sag CTM. Upstream boundary offers `inflow_vph`;
// anything the first cell cannot receive is reported back as refused.
// Downstream boundary is free outflow.
inline CtmStepResult ctm_step(const Eigen::Ref<const Eigen::VectorXd>& rho,
                              const FundamentalDiagram& fd, const CellGrid& grid,
                              double inflow_vph, double dt_s) {
  const int n = grid.cell_count;
  CtmStepResult out;
  out.rho = rho;
  if (n == 0) return out;

  const double dt_h = dt_s / 3600.0;
  const double len_km = grid.cell_length_m / 1000.0;
  const double gain = dt_h / len_km;  // (veh/h) -> (veh/km) per step

  Eigen::VectorXd flux(n + 1);
  flux[0] = std::min(std::max(inflow_vph, 0.0), receiving_flow(rho[0], grid.types[0], fd));
  for (int i = 1; i < n; ++i) {
    flux[i] = std::min(sending_flow(rho[i - 1], grid.types[i - 1], fd),
                       receiving_flow(rho[i], grid.types[i], fd));
  }
  flux[n] = sending_flow(rho[n - 1], grid.types[n - 1], fd);

  for (int i = 0; i < n; ++i) {
    out.rho[i] = rho[i] + gain * (flux[i] - flux[i + 1]);
  }
  out.inflow_accepted_vph = flux[0];
  out.refused_vph = std::max(inflow_vph, 0.0) - flux[0];
  out.outflow_vph = flux[n];
  return out;
}

// Per-cell equilibrium speed field for a density vector (used by the shadow
// trajectory rollout). Densities are clamped into [0, rho_jam] first.
inline Eigen::VectorXd speed_field(const Eigen::Ref<const Eigen::VectorXd>& rho,
                                   const FundamentalDiagram& fd, const CellGrid& grid) {
  Eigen::VectorXd v(grid.cell_count);
  for (int i = 0; i < grid.cell_count; ++i) {
    const double r = std::clamp(rho[i], 0.0, fd.rho_jam);
    v[i] = equilibrium_speed(r, grid.types[i], fd);
  }
  return v;
}

}  // namespace jadlab::ctm
