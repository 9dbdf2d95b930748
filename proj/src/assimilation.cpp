#include "jadlab/assimilation.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace jadlab::ekf {

namespace {

void check_finite(const Eigen::Ref<const Eigen::VectorXd>& v, const char* where) {
  for (int i = 0; i < v.size(); ++i) {
    if (!std::isfinite(v[i])) {
      std::ostringstream msg;
      msg << "filter fault in " << where << ": component " << i << " is " << v[i];
      throw FilterFault(msg.str());
    }
  }
}

void symmetrize(Eigen::MatrixXd& m) { m = ((m + m.transpose()) * 0.5).eval(); }

}  // namespace

MeasurementPlan interior_measurement_plan(const ctm::CellGrid& grid, const TimingConfig& timing,
                                          const DetectorConfig& det) {
  MeasurementPlan plan;
  plan.effective_length_m = det.effective_length_m();
  const int cells_per_station = static_cast<int>(std::lround(timing.detector_spacing_m / grid.cell_length_m));
  const int stations = static_cast<int>(std::lround(grid.cell_count * grid.cell_length_m /
                                                    timing.detector_spacing_m)) + 1;
  for (int k = 1; k < stations - 1; ++k) {
    plan.station_cells.push_back(k * cells_per_station - 1);
  }
  return plan;
}

ctm::FundamentalDiagram fd_from_state(const Eigen::Ref<const Eigen::VectorXd>& x,
                                      const StateLayout& layout,
                                      const ctm::FundamentalDiagram& fd0) {
  if (!layout.estimate_theta) return fd0;
  ctm::FundamentalDiagram fd = fd0;
  fd.v_fr_mps = x[layout.cells];
  fd.rho_cr_nor = x[layout.cells + 1];
  fd.rho_cr_sag = x[layout.cells + 2];
  return fd;
}

Eigen::VectorXd initial_state(const StateLayout& layout, const ctm::FundamentalDiagram& fd0) {
  Eigen::VectorXd x = Eigen::VectorXd::Zero(layout.dim());
  if (layout.estimate_theta) {
    x[layout.cells] = fd0.v_fr_mps;
    x[layout.cells + 1] = fd0.rho_cr_nor;
    x[layout.cells + 2] = fd0.rho_cr_sag;
  }
  return x;
}

Eigen::MatrixXd initial_covariance(const StateLayout& layout, const NoiseParams& noise) {
  Eigen::VectorXd diag(layout.dim());
  diag.head(layout.cells).setConstant(noise.p0_density);
  if (layout.estimate_theta) {
    for (int i = 0; i < 3; ++i) diag[layout.cells + i] = noise.p0_theta[i];
  }
  return diag.asDiagonal();
}

Eigen::MatrixXd process_noise(const StateLayout& layout, const NoiseParams& noise) {
  Eigen::VectorXd diag(layout.dim());
  diag.head(layout.cells).setConstant(noise.q_density);
  if (layout.estimate_theta) {
    for (int i = 0; i < 3; ++i) diag[layout.cells + i] = noise.q_theta[i];
  }
  return diag.asDiagonal();
}

Eigen::MatrixXd measurement_noise(const MeasurementPlan& plan, const NoiseParams& noise) {
  Eigen::VectorXd diag(plan.dim());
  for (std::size_t s = 0; s < plan.station_cells.size(); ++s) {
    diag[2 * s] = noise.r_flow;
    diag[2 * s + 1] = noise.r_occ;
  }
  return diag.asDiagonal();
}

Eigen::VectorXd forecast_map(const Eigen::Ref<const Eigen::VectorXd>& x, const StateLayout& layout,
                             const ctm::CellGrid& grid, const ctm::FundamentalDiagram& fd0,
                             double inflow_vph, double dt_s) {
  const ctm::FundamentalDiagram fd = fd_from_state(x, layout, fd0);
  Eigen::VectorXd out = x;
  out.head(layout.cells) = ctm::ctm_step(x.head(layout.cells), fd, grid, inflow_vph, dt_s).rho;
  return out;
}

Eigen::VectorXd measurement_map(const Eigen::Ref<const Eigen::VectorXd>& x,
                                const StateLayout& layout, const ctm::CellGrid& grid,
                                const ctm::FundamentalDiagram& fd0, const MeasurementPlan& plan) {
  const ctm::FundamentalDiagram fd = fd_from_state(x, layout, fd0);
  Eigen::VectorXd y(plan.dim());
  for (std::size_t s = 0; s < plan.station_cells.size(); ++s) {
    const int cell = plan.station_cells[s];
    const double rho = std::clamp(x[cell], 0.0, fd.rho_jam);
    const double v_e = ctm::equilibrium_speed(rho, grid.types[cell], fd);
    y[2 * s] = rho * v_e * ctm::kMpsToKph;          // veh/h
    y[2 * s + 1] = rho * plan.effective_length_m / 1000.0;  // fraction
  }
  return y;
}

Eigen::MatrixXd numerical_jacobian(const std::function<Eigen::VectorXd(const Eigen::VectorXd&)>& map,
                                   const Eigen::VectorXd& at, const Eigen::VectorXd& steps) {
  Eigen::VectorXd probe = at;
  Eigen::VectorXd f_plus, f_minus;
  Eigen::MatrixXd jac;
  for (int j = 0; j < at.size(); ++j) {
    const double h = steps[j];
    probe[j] = at[j] + h;
    f_plus = map(probe);
    probe[j] = at[j] - h;
    f_minus = map(probe);
    probe[j] = at[j];
    if (jac.size() == 0) jac.resize(f_plus.size(), at.size());
    check_finite(f_plus, "numerical_jacobian");
    check_finite(f_minus, "numerical_jacobian");
    jac.col(j) = (f_plus - f_minus) / (2.0 * h);
  }
  return jac;
}

Eigen::VectorXd jacobian_steps(const Eigen::Ref<const Eigen::VectorXd>& x,
                               const StateLayout& layout) {
  Eigen::VectorXd steps = Eigen::VectorXd::Constant(layout.dim(), 1e-3);
  if (layout.estimate_theta) {
    for (int i = 0; i < 3; ++i) {
      steps[layout.cells + i] = 1e-3 * std::max(std::abs(x[layout.cells + i]), 1.0);
    }
  }
  return steps;
}

void clamp_state(Eigen::VectorXd& x, const StateLayout& layout,
                 const ctm::FundamentalDiagram& fd0, double cell_length_m, double dt_s) {
  for (int i = 0; i < layout.cells; ++i) x[i] = std::clamp(x[i], 0.0, fd0.rho_jam);
  if (!layout.estimate_theta) return;
  // Theta box: CFL-safe free-flow speed; critical densities positive,
  // ordered, and below half the jam density (keeps the congested wave speed
  // below v_fr, so the CFL check on v_fr covers it).
  const double v_max = 0.999 * cell_length_m / dt_s;
  double& v_fr = x[layout.cells];
  double& rho_cr_nor = x[layout.cells + 1];
  double& rho_cr_sag = x[layout.cells + 2];
  v_fr = std::clamp(v_fr, 0.5, v_max);
  rho_cr_nor = std::clamp(rho_cr_nor, 1.0, 0.5 * fd0.rho_jam);
  rho_cr_sag = std::clamp(rho_cr_sag, 1.0, rho_cr_nor);
}

GaussianBelief forecast(const GaussianBelief& belief, const StateLayout& layout,
                        const ctm::CellGrid& grid, const ctm::FundamentalDiagram& fd0,
                        double inflow_vph, double dt_s, const NoiseParams& noise) {
  const auto map = [&](const Eigen::VectorXd& x) {
    return forecast_map(x, layout, grid, fd0, inflow_vph, dt_s);
  };
  GaussianBelief out;
  out.mean = map(belief.mean);
  check_finite(out.mean, "forecast mean");
  const Eigen::MatrixXd F =
      numerical_jacobian(map, belief.mean, jacobian_steps(belief.mean, layout));
  out.cov = F * belief.cov * F.transpose() + process_noise(layout, noise);
  symmetrize(out.cov);
  check_finite(out.cov.diagonal(), "forecast covariance");
  return out;
}

GaussianBelief analysis(const GaussianBelief& belief, const Eigen::Ref<const Eigen::VectorXd>& y,
                        const MeasurementPlan& plan, const StateLayout& layout,
                        const ctm::CellGrid& grid, const ctm::FundamentalDiagram& fd0,
                        double cell_length_m, double dt_s, const NoiseParams& noise) {
  if (y.size() != plan.dim()) {
    throw FilterFault("analysis: measurement size does not match the station layout");
  }
  const auto map = [&](const Eigen::VectorXd& x) {
    return measurement_map(x, layout, grid, fd0, plan);
  };
  const Eigen::MatrixXd H =
      numerical_jacobian(map, belief.mean, jacobian_steps(belief.mean, layout));
  const Eigen::MatrixXd S =
      H * belief.cov * H.transpose() + measurement_noise(plan, noise);

  Eigen::LDLT<Eigen::MatrixXd> solver(S);
  if (solver.info() != Eigen::Success || solver.vectorD().minCoeff() <= 0.0) {
    throw FilterFault("analysis: innovation covariance solve failed (singular)");
  }
  // K = P H^T S^-1, via S K^T = H P.
  const Eigen::MatrixXd K = solver.solve(H * belief.cov).transpose();

  GaussianBelief out;
  out.mean = belief.mean + K * (y - map(belief.mean));
  out.cov = belief.cov - K * H * belief.cov;
  clamp_state(out.mean, layout, fd0, cell_length_m, dt_s);
  symmetrize(out.cov);
  check_finite(out.mean, "analysis mean");
  check_finite(out.cov.diagonal(), "analysis covariance");
  return out;
}

}  // namespace jadlab::ekf
