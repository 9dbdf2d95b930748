#include <doctest.h>

#include <Eigen/Dense>
#include <random>

#include "jadlab/assimilation.hpp"

using namespace jadlab;
using namespace jadlab::ekf;
using jadlab::ctm::CellGrid;
using jadlab::ctm::CellType;
using jadlab::ctm::FundamentalDiagram;

namespace {

FundamentalDiagram reference_fd() { return FundamentalDiagram{27.0, 23.0, 18.0, 140.0}; }

CellGrid make_small_grid(int cells, int first_sag) {
  CellGrid grid;
  grid.cell_count = cells;
  grid.cell_length_m = 100.0;
  grid.origin_m = 0.0;
  grid.types.assign(cells, CellType::normal);
  for (int i = first_sag; i < cells; ++i) grid.types[i] = CellType::sag;
  return grid;
}

NoiseParams reference_noise() { return NoiseParams{}; }

}  // namespace

TEST_CASE("numerical_jacobian is exact on linear maps") {
  std::mt19937_64 rng(5);
  std::normal_distribution<double> gauss(0.0, 1.0);
  const int n = 6;
  Eigen::MatrixXd a(n, n);
  Eigen::VectorXd b(n), x(n);
  for (int i = 0; i < n; ++i) {
    b[i] = gauss(rng);
    x[i] = gauss(rng);
    for (int j = 0; j < n; ++j) a(i, j) = gauss(rng);
  }
  const auto linear = [&](const Eigen::VectorXd& v) -> Eigen::VectorXd { return a * v + b; };
  const Eigen::VectorXd steps = Eigen::VectorXd::Constant(n, 1e-3);
  const Eigen::MatrixXd jac = numerical_jacobian(linear, x, steps);
  CHECK((jac - a).cwiseAbs().maxCoeff() < 1e-9);

  const auto identity = [](const Eigen::VectorXd& v) -> Eigen::VectorXd { return v; };
  const Eigen::MatrixXd eye = numerical_jacobian(identity, x, steps);
  CHECK((eye - Eigen::MatrixXd::Identity(n, n)).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("forecast Jacobian interior columns sum to one in smooth regimes") {
  const FundamentalDiagram fd = reference_fd();
  const CellGrid grid = make_small_grid(10, 8);
  const StateLayout layout{grid.cell_count, false};
  // uniform free flow away from every min() kink
  Eigen::VectorXd x = Eigen::VectorXd::Constant(layout.dim(), 10.0);
  const auto map = [&](const Eigen::VectorXd& v) {
    return forecast_map(v, layout, grid, fd, 900.0, 3.0);
  };
  const Eigen::MatrixXd f = numerical_jacobian(map, x, jacobian_steps(x, layout));
  for (int j = 1; j < grid.cell_count - 1; ++j) {
    CHECK(f.col(j).sum() == doctest::Approx(1.0).epsilon(1e-6));
  }
}

TEST_CASE("forecast: empty road with zero inflow keeps the mean, Q=0 keeps F P F^T") {
  const FundamentalDiagram fd = reference_fd();
  const CellGrid grid = make_small_grid(8, 6);
  const StateLayout layout{grid.cell_count, true};
  NoiseParams noise = reference_noise();
  noise.q_density = 0.0;
  noise.q_theta[0] = noise.q_theta[1] = noise.q_theta[2] = 0.0;

  GaussianBelief belief;
  belief.mean = initial_state(layout, fd);
  belief.cov = initial_covariance(layout, noise);

  const auto out = forecast(belief, layout, grid, fd, 0.0, 3.0, noise);
  CHECK((out.mean - belief.mean).cwiseAbs().maxCoeff() < 1e-12);

  const auto map = [&](const Eigen::VectorXd& v) {
    return forecast_map(v, layout, grid, fd, 0.0, 3.0);
  };
  const Eigen::MatrixXd f = numerical_jacobian(map, belief.mean, jacobian_steps(belief.mean, layout));
  const Eigen::MatrixXd expected = f * belief.cov * f.transpose();
  CHECK((out.cov - expected).cwiseAbs().maxCoeff() < 1e-9);
}

TEST_CASE("forecast leaves the parameter block unchanged in the mean") {
  const FundamentalDiagram fd = reference_fd();
  const CellGrid grid = make_small_grid(8, 6);
  const StateLayout layout{grid.cell_count, true};
  const NoiseParams noise = reference_noise();
  GaussianBelief belief;
  belief.mean = initial_state(layout, fd);
  belief.mean.head(grid.cell_count).setConstant(35.0);
  belief.cov = initial_covariance(layout, noise);
  const auto out = forecast(belief, layout, grid, fd, 1500.0, 3.0, noise);
  CHECK(out.mean[grid.cell_count] == 27.0);
  CHECK(out.mean[grid.cell_count + 1] == 23.0);
  CHECK(out.mean[grid.cell_count + 2] == 18.0);
}

TEST_CASE("forecast covariance matches the scalar Kalman oracle on one cell") {
  const FundamentalDiagram fd = reference_fd();
  CellGrid grid = make_small_grid(1, 1);  // single normal cell
  const StateLayout layout{1, false};
  NoiseParams noise = reference_noise();
  noise.q_density = 0.7;

  GaussianBelief belief;
  belief.mean = Eigen::VectorXd::Constant(1, 10.0);
  belief.cov = Eigen::MatrixXd::Constant(1, 1, 4.0);

  // constant inflow below capacity, free branch: rho' = rho + g*(q_in - v*rho)
  const double inflow = 600.0;
  const auto out = forecast(belief, layout, grid, fd, inflow, 3.0, noise);
  const double gain = (3.0 / 3600.0) / (grid.cell_length_m / 1000.0);
  const double f_scalar = 1.0 - gain * fd.v_fr_mps * 3.6;
  CHECK(out.cov(0, 0) == doctest::Approx(f_scalar * f_scalar * 4.0 + 0.7).epsilon(1e-6));
}

TEST_CASE("measurement_map values") {
  const FundamentalDiagram fd = reference_fd();
  const CellGrid grid = make_small_grid(10, 8);
  const StateLayout layout{grid.cell_count, false};
  MeasurementPlan plan;
  plan.station_cells = {4};
  plan.effective_length_m = 7.0;

  Eigen::VectorXd x = Eigen::VectorXd::Zero(layout.dim());
  auto y = measurement_map(x, layout, grid, fd, plan);
  CHECK(y[0] == 0.0);
  CHECK(y[1] == 0.0);

  x[4] = 20.0;  // free branch (rho_cr_nor = 23)
  y = measurement_map(x, layout, grid, fd, plan);
  CHECK(y[0] == doctest::Approx(20.0 * 27.0 * 3.6));
  CHECK(y[1] == doctest::Approx(0.14));
}

TEST_CASE("analysis: zero innovation leaves the mean and shrinks the diagonal") {
  const FundamentalDiagram fd = reference_fd();
  const CellGrid grid = make_small_grid(10, 8);
  const StateLayout layout{grid.cell_count, true};
  const NoiseParams noise = reference_noise();
  MeasurementPlan plan;
  plan.station_cells = {2, 5, 8};
  plan.effective_length_m = 7.0;

  GaussianBelief belief;
  belief.mean = initial_state(layout, fd);
  belief.mean.head(grid.cell_count).setLinSpaced(grid.cell_count, 5.0, 60.0);
  belief.cov = initial_covariance(layout, noise);

  const Eigen::VectorXd y = measurement_map(belief.mean, layout, grid, fd, plan);
  const auto out = analysis(belief, y, plan, layout, grid, fd, grid.cell_length_m, 3.0, noise);
  CHECK((out.mean - belief.mean).cwiseAbs().maxCoeff() < 1e-9);
  for (int i = 0; i < layout.dim(); ++i) {
    CHECK(out.cov(i, i) <= belief.cov(i, i) + 1e-12);
  }
}

TEST_CASE("analysis: huge measurement noise leaves the state untouched") {
  const FundamentalDiagram fd = reference_fd();
  const CellGrid grid = make_small_grid(10, 8);
  const StateLayout layout{grid.cell_count, true};
  NoiseParams noise = reference_noise();
  noise.r_flow = 1e12;
  noise.r_occ = 1e12;
  MeasurementPlan plan;
  plan.station_cells = {4};
  plan.effective_length_m = 7.0;

  GaussianBelief belief;
  belief.mean = initial_state(layout, fd);
  belief.mean.head(grid.cell_count).setConstant(15.0);
  belief.cov = initial_covariance(layout, noise);

  Eigen::VectorXd y(2);
  y << 2200.0, 0.5;  // wildly off
  const auto out = analysis(belief, y, plan, layout, grid, fd, grid.cell_length_m, 3.0, noise);
  CHECK((out.mean - belief.mean).norm() < 1e-6 * (1.0 + belief.mean.norm()));
}

TEST_CASE("analysis matches the closed-form scalar Kalman update") {
  // Single cell, occupancy-only information: calibrate the effective length to
  // 1000 m so h(rho) = rho exactly (H = 1), and mute the flow row with a huge
  // variance.
  FundamentalDiagram fd = reference_fd();
  const CellGrid grid = make_small_grid(1, 1);
  const StateLayout layout{1, false};
  NoiseParams noise = reference_noise();
  noise.r_flow = 1e18;
  noise.r_occ = 2.0;
  MeasurementPlan plan;
  plan.station_cells = {0};
  plan.effective_length_m = 1000.0;

  GaussianBelief belief;
  belief.mean = Eigen::VectorXd::Constant(1, 30.0);
  belief.cov = Eigen::MatrixXd::Constant(1, 1, 5.0);

  Eigen::VectorXd y(2);
  y << 0.0, 40.0;  // measured "occupancy" equals a density of 40
  const auto out = analysis(belief, y, plan, layout, grid, fd, grid.cell_length_m, 3.0, noise);
  const double expected = (2.0 * 30.0 + 5.0 * 40.0) / (5.0 + 2.0);
  CHECK(out.mean[0] == doctest::Approx(expected).epsilon(1e-6));
  CHECK(out.cov(0, 0) == doctest::Approx(5.0 - 5.0 * 5.0 / 7.0).epsilon(1e-6));
}

TEST_CASE("covariance stays symmetric and numerically PSD through random cycles") {
  const FundamentalDiagram fd = reference_fd();
  const CellGrid grid = make_small_grid(12, 9);
  const StateLayout layout{grid.cell_count, true};
  const NoiseParams noise = reference_noise();
  MeasurementPlan plan;
  plan.station_cells = {3, 7, 11};
  plan.effective_length_m = 7.0;

  std::mt19937_64 rng(99);
  std::uniform_real_distribution<double> dens(0.0, 120.0);
  std::uniform_real_distribution<double> flow(0.0, 2200.0);
  std::uniform_real_distribution<double> occ(0.0, 0.9);

  GaussianBelief belief;
  belief.mean = initial_state(layout, fd);
  belief.cov = initial_covariance(layout, noise);

  for (int cycle = 0; cycle < 100; ++cycle) {
    belief = forecast(belief, layout, grid, fd, flow(rng), 3.0, noise);
    Eigen::VectorXd y(plan.dim());
    for (int s = 0; s < 3; ++s) {
      y[2 * s] = flow(rng);
      y[2 * s + 1] = occ(rng);
    }
    belief = analysis(belief, y, plan, layout, grid, fd, grid.cell_length_m, 3.0, noise);

    CHECK((belief.cov - belief.cov.transpose()).cwiseAbs().maxCoeff() < 1e-9);
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(belief.cov);
    CHECK(eig.eigenvalues().minCoeff() >= -1e-9);
    // clamped state invariants
    CHECK(belief.mean.head(grid.cell_count).minCoeff() >= 0.0);
    CHECK(belief.mean.head(grid.cell_count).maxCoeff() <= fd.rho_jam);
    CHECK(belief.mean[grid.cell_count + 2] <= belief.mean[grid.cell_count + 1]);
  }
}

TEST_CASE("analysis faults on a singular innovation covariance") {
  const FundamentalDiagram fd = reference_fd();
  const CellGrid grid = make_small_grid(4, 3);
  const StateLayout layout{grid.cell_count, false};
  NoiseParams noise = reference_noise();
  noise.r_flow = 0.0;
  noise.r_occ = 0.0;
  MeasurementPlan plan;
  plan.station_cells = {1};
  plan.effective_length_m = 7.0;

  GaussianBelief belief;
  belief.mean = Eigen::VectorXd::Zero(layout.dim());
  belief.cov = Eigen::MatrixXd::Zero(layout.dim(), layout.dim());  // S becomes singular
  Eigen::VectorXd y = Eigen::VectorXd::Zero(plan.dim());
  CHECK_THROWS_AS(analysis(belief, y, plan, layout, grid, fd, grid.cell_length_m, 3.0, noise),
                  FilterFault);
}

TEST_CASE("forecast faults on non-finite state") {
  const FundamentalDiagram fd = reference_fd();
  const CellGrid grid = make_small_grid(4, 3);
  const StateLayout layout{grid.cell_count, false};
  const NoiseParams noise = reference_noise();
  GaussianBelief belief;
  belief.mean = Eigen::VectorXd::Zero(layout.dim());
  belief.mean[0] = std::numeric_limits<double>::quiet_NaN();
  belief.cov = initial_covariance(layout, noise);
  CHECK_THROWS_AS(forecast(belief, layout, grid, fd, 0.0, 3.0, noise), FilterFault);
}

TEST_CASE("interior measurement plan maps stations to upstream cells") {
  RoadProfile road;
  TimingConfig timing;
  DetectorConfig det;
  const CellGrid grid = ctm::make_grid(road, timing);
  const MeasurementPlan plan = interior_measurement_plan(grid, timing, det);
  REQUIRE(plan.station_cells.size() == 19);  // 21 stations minus entrance and exit
  CHECK(plan.station_cells.front() == 4);    // station at 500 m -> cell [400,500)
  CHECK(plan.station_cells.back() == 94);    // station at 9500 m
  CHECK(plan.effective_length_m == doctest::Approx(7.0));
}

TEST_CASE("twin experiment: assimilation beats the open-loop forecast") {
  // Truth generated by the CTM itself with the reference parameters; filter
  // initialized with a misestimated parameter set.
  const FundamentalDiagram fd_true = reference_fd();
  FundamentalDiagram fd_wrong = fd_true;
  fd_wrong.v_fr_mps = 30.0;

  RoadProfile road;
  road.p_exit_m = 4000.0;
  road.p_sag_begin_m = 3000.0;
  road.p_sag_end_m = 3300.0;
  TimingConfig timing;
  timing.detector_spacing_m = 500.0;
  const CellGrid grid = ctm::make_grid(road, timing);
  const DetectorConfig det;
  const MeasurementPlan plan = interior_measurement_plan(grid, timing, det);
  const StateLayout layout{grid.cell_count, true};
  const NoiseParams noise;

  Eigen::VectorXd truth = Eigen::VectorXd::Zero(grid.cell_count);
  GaussianBelief filt{initial_state(layout, fd_wrong), initial_covariance(layout, noise)};
  GaussianBelief open{filt.mean, filt.cov};

  std::mt19937_64 rng(123);
  std::normal_distribution<double> gauss(0.0, 1.0);
  const double inflow = 1800.0;

  for (int step = 1; step <= 200; ++step) {  // 600 s at dt = 3 s
    truth = ctm::ctm_step(truth, fd_true, grid, inflow, 3.0).rho;
    filt = forecast(filt, layout, grid, fd_wrong, inflow, 3.0, noise);
    open = forecast(open, layout, grid, fd_wrong, inflow, 3.0, noise);
    if (step % 20 == 0) {  // window end
      Eigen::VectorXd y = measurement_map(
          (Eigen::VectorXd(layout.dim()) << truth, fd_true.v_fr_mps, fd_true.rho_cr_nor,
           fd_true.rho_cr_sag).finished(),
          layout, grid, fd_true, plan);
      for (int s = 0; s < static_cast<int>(plan.station_cells.size()); ++s) {
        y[2 * s] = std::max(0.0, y[2 * s] + 40.0 * gauss(rng));
        y[2 * s + 1] = std::clamp(y[2 * s + 1] + 0.005 * gauss(rng), 0.0, 1.0);
      }
      filt = analysis(filt, y, plan, layout, grid, fd_wrong, grid.cell_length_m, 3.0, noise);
    }
  }
  const double rmse_filt = (filt.mean.head(grid.cell_count) - truth).norm();
  const double rmse_open = (open.mean.head(grid.cell_count) - truth).norm();
  CHECK(rmse_filt < 0.5 * rmse_open);
  // v_fr estimate moved toward the true 27 from 30
  CHECK(std::abs(filt.mean[grid.cell_count] - 27.0) < std::abs(30.0 - 27.0));

  // measurement-only baseline: direct occupancy inversion at the detector
  // cells; the filter must beat it there
  Eigen::VectorXd truth_aug(layout.dim());
  truth_aug << truth, fd_true.v_fr_mps, fd_true.rho_cr_nor, fd_true.rho_cr_sag;
  Eigen::VectorXd y_final = measurement_map(truth_aug, layout, grid, fd_true, plan);
  for (int s = 0; s < static_cast<int>(plan.station_cells.size()); ++s) {
    y_final[2 * s + 1] = std::clamp(y_final[2 * s + 1] + 0.005 * gauss(rng), 0.0, 1.0);
  }
  double se_inversion = 0.0, se_filter = 0.0;
  for (int s = 0; s < static_cast<int>(plan.station_cells.size()); ++s) {
    const int cell = plan.station_cells[s];
    const double rho_inverted = y_final[2 * s + 1] * 1000.0 / plan.effective_length_m;
    se_inversion += (rho_inverted - truth[cell]) * (rho_inverted - truth[cell]);
    se_filter += (filt.mean[cell] - truth[cell]) * (filt.mean[cell] - truth[cell]);
  }
  CHECK(se_filter < se_inversion);
}
