#pragma once

#include <Eigen/Dense>
#include <functional>
#include <vector>

#include "jadlab/ctm.hpp"
#include "jadlab/errors.hpp"
#include "jadlab/scenario.hpp"

namespace jadlab::ekf {

// Augmented traffic state: I cell densities, optionally followed by
// Theta = (v_fr, rho_cr_nor, rho_cr_sag). The density-only layout is used
// when the fundamental-diagram parameters are held fixed.
struct StateLayout {
  int cells = 0;
  bool estimate_theta = true;

  int dim() const { return cells + (estimate_theta ? 3 : 0); }
};

struct GaussianBelief {
  Eigen::VectorXd mean;
  Eigen::MatrixXd cov;
};

// Stations used by the filter, each tied to the cell whose downstream
// boundary carries the detector. Measurement vector is (flow_vph, occupancy)
// per station, in station order.
struct MeasurementPlan {
  std::vector<int> station_cells;
  double effective_length_m = 7.0;

  int dim() const { return 2 * static_cast<int>(station_cells.size()); }
};

// Interior stations only: the entrance station drives the model's upstream
// boundary instead of appearing in h, and the exit station under-reads
// occupancy because vehicles are removed at p_exit.
MeasurementPlan interior_measurement_plan(const ctm::CellGrid& grid, const TimingConfig& timing,
                                          const DetectorConfig& det);

ctm::FundamentalDiagram fd_from_state(const Eigen::Ref<const Eigen::VectorXd>& x,
                                      const StateLayout& layout,
                                      const ctm::FundamentalDiagram& fd0);

Eigen::VectorXd initial_state(const StateLayout& layout, const ctm::FundamentalDiagram& fd0);
Eigen::MatrixXd initial_covariance(const StateLayout& layout, const NoiseParams& noise);
Eigen::MatrixXd process_noise(const StateLayout& layout, const NoiseParams& noise);
Eigen::MatrixXd measurement_noise(const MeasurementPlan& plan, const NoiseParams& noise);

// One CTM step on the density block using the state's own Theta; Theta block
// propagates as a random walk (identity mean map).
Eigen::VectorXd forecast_map(const Eigen::Ref<const Eigen::VectorXd>& x, const StateLayout& layout,
                             const ctm::CellGrid& grid, const ctm::FundamentalDiagram& fd0,
                             double inflow_vph, double dt_s);

// h: per measured cell, flow = rho * v_e(rho) and occupancy = rho * L_eff.
Eigen::VectorXd measurement_map(const Eigen::Ref<const Eigen::VectorXd>& x,
                                const StateLayout& layout, const ctm::CellGrid& grid,
                                const ctm::FundamentalDiagram& fd0, const MeasurementPlan& plan);

// Central finite differences with per-component steps.
Eigen::MatrixXd numerical_jacobian(const std::function<Eigen::VectorXd(const Eigen::VectorXd&)>& map,
                                   const Eigen::VectorXd& at, const Eigen::VectorXd& steps);

// 1e-3 veh/km absolute on densities, 1e-3 relative on Theta.
Eigen::VectorXd jacobian_steps(const Eigen::Ref<const Eigen::VectorXd>& x,
                               const StateLayout& layout);

// Clamps densities into [0, rho_jam] and Theta into its admissible box
// (free-flow speed CFL-bounded, critical densities positive and ordered).
void clamp_state(Eigen::VectorXd& x, const StateLayout& layout,
                 const ctm::FundamentalDiagram& fd0, double cell_length_m, double dt_s);

// Forecast step: mean through forecast_map, covariance F P F^T + Q,
// re-symmetrized. Faults on non-finite values.
GaussianBelief forecast(const GaussianBelief& belief, const StateLayout& layout,
                        const ctm::CellGrid& grid, const ctm::FundamentalDiagram& fd0,
                        double inflow_vph, double dt_s, const NoiseParams& noise);

// Analysis step: Kalman gain K = P H^T (H P H^T + R)^-1, mean update with the
// innovation, covariance P - K H P, then state clamping and re-symmetrization.
GaussianBelief analysis(const GaussianBelief& belief, const Eigen::Ref<const Eigen::VectorXd>& y,
                        const MeasurementPlan& plan, const StateLayout& layout,
                        const ctm::CellGrid& grid, const ctm::FundamentalDiagram& fd0,
                        double cell_length_m, double dt_s, const NoiseParams& noise);

}  // namespace jadlab::ekf
