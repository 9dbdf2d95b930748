#include <doctest.h>

#include <Eigen/Dense>
#include <random>

#include "jadlab/ctm.hpp"

using namespace jadlab;
using namespace jadlab::ctm;

namespace {

FundamentalDiagram reference_fd() { return FundamentalDiagram{27.0, 23.0, 18.0, 140.0}; }

CellGrid small_grid(int cells = 20, double len = 100.0, int first_sag = 16) {
  CellGrid grid;
  grid.cell_count = cells;
  grid.cell_length_m = len;
  grid.origin_m = 0.0;
  grid.types.assign(cells, CellType::normal);
  for (int i = first_sag; i < cells; ++i) grid.types[i] = CellType::sag;
  return grid;
}

// Brute-force flux table for the triangular diagram: linear interpolation of
// the two branch anchor points, independent of the production formulas.
double flux_table_oracle(double rho, CellType type, const FundamentalDiagram& fd) {
  const double rho_cr = fd.rho_cr(type);
  const double cap = fd.v_fr_mps * 3.6 * rho_cr;
  if (rho <= rho_cr) return rho / rho_cr * cap;
  return cap * (fd.rho_jam - rho) / (fd.rho_jam - rho_cr);
}

double total_veh(const Eigen::VectorXd& rho, const CellGrid& grid) {
  return rho.sum() * grid.cell_length_m / 1000.0;
}

}  // namespace

TEST_CASE("equilibrium_speed branches") {
  const FundamentalDiagram fd = reference_fd();
  CHECK(equilibrium_speed(10.0, CellType::normal, fd) == doctest::Approx(27.0));
  CHECK(equilibrium_speed(18.0, CellType::sag, fd) == doctest::Approx(27.0));
  CHECK(equilibrium_speed(140.0, CellType::normal, fd) == doctest::Approx(0.0).epsilon(1e-12));

  // congested branch against the flux-table oracle
  for (CellType type : {CellType::normal, CellType::sag}) {
    const double rho = 0.5 * (fd.rho_cr(type) + fd.rho_jam);
    const double expected = flux_table_oracle(rho, type, fd) / rho / 3.6;
    CHECK(equilibrium_speed(rho, type, fd) == doctest::Approx(expected).epsilon(1e-9));
  }
  // continuity at the critical density
  for (CellType type : {CellType::normal, CellType::sag}) {
    const double rho_cr = fd.rho_cr(type);
    CHECK(equilibrium_speed(rho_cr + 1e-9, type, fd) == doctest::Approx(27.0).epsilon(1e-6));
  }
  CHECK_THROWS_AS(equilibrium_speed(-1.0, CellType::normal, fd), std::domain_error);
  CHECK_THROWS_AS(equilibrium_speed(141.0, CellType::normal, fd), std::domain_error);
}

TEST_CASE("classify_cells sag rule") {
  RoadProfile road;
  auto types = classify_cells(road, 100, 100.0);
  CHECK(types[85] == CellType::normal);  // [8500, 8600) fully upstream
  CHECK(types[86] == CellType::sag);     // [8600, 8700)
  CHECK(types[89] == CellType::sag);     // [8900, 9000) starts at the sag end
  CHECK(types[99] == CellType::sag);
  CHECK(types[0] == CellType::normal);

  // straddling cell counts as sag (conservative tie-break)
  auto coarse = classify_cells(road, 40, 250.0);
  CHECK(coarse[34] == CellType::sag);  // [8500, 8750) straddles 8600
  CHECK(coarse[33] == CellType::normal);
}

TEST_CASE("ctm_step: empty road is a fixed point") {
  const FundamentalDiagram fd = reference_fd();
  const CellGrid grid = small_grid();
  const Eigen::VectorXd rho = Eigen::VectorXd::Zero(grid.cell_count);
  const auto out = ctm_step(rho, fd, grid, 0.0, 3.0);
  CHECK(out.rho.isZero(0.0));
  CHECK(out.outflow_vph == 0.0);
}

TEST_CASE("ctm_step: uniform free flow with matched inflow is stationary") {
  const FundamentalDiagram fd = reference_fd();
  const CellGrid grid = small_grid();
  const double rho0 = 10.0;
  const Eigen::VectorXd rho = Eigen::VectorXd::Constant(grid.cell_count, rho0);
  const double inflow = fd.v_fr_mps * 3.6 * rho0;
  const auto out = ctm_step(rho, fd, grid, inflow, 3.0);
  for (int i = 0; i < grid.cell_count; ++i) {
    CHECK(out.rho[i] == doctest::Approx(rho0).epsilon(1e-12));
  }
}

TEST_CASE("ctm_step conserves mass exactly") {
  const FundamentalDiagram fd = reference_fd();
  const CellGrid grid = small_grid();
  std::mt19937_64 rng(42);
  std::uniform_real_distribution<double> dens(0.0, fd.rho_jam);
  std::uniform_real_distribution<double> flow(0.0, 2400.0);
  for (int trial = 0; trial < 2000; ++trial) {
    Eigen::VectorXd rho(grid.cell_count);
    for (int i = 0; i < grid.cell_count; ++i) rho[i] = dens(rng);
    const double inflow = flow(rng);
    const auto out = ctm_step(rho, fd, grid, inflow, 3.0);
    const double before = total_veh(rho, grid);
    const double after = total_veh(out.rho, grid);
    const double boundary = (out.inflow_accepted_vph - out.outflow_vph) * 3.0 / 3600.0;
    CHECK(std::abs(after - before - boundary) < 1e-9);
    CHECK(out.inflow_accepted_vph + out.refused_vph == doctest::Approx(inflow).epsilon(1e-12));
  }
}

TEST_CASE("ctm_step keeps densities inside [0, rho_jam]") {
  const FundamentalDiagram fd = reference_fd();
  const CellGrid grid = small_grid();
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> dens(0.0, fd.rho_jam);
  std::uniform_real_distribution<double> flow(0.0, 3000.0);
  Eigen::VectorXd rho(grid.cell_count);
  for (int i = 0; i < grid.cell_count; ++i) rho[i] = dens(rng);
  for (int step = 0; step < 2000; ++step) {
    rho = ctm_step(rho, fd, grid, flow(rng), 3.0).rho;
    CHECK(rho.minCoeff() >= -1e-12);
    CHECK(rho.maxCoeff() <= fd.rho_jam + 1e-12);
  }
}

TEST_CASE("inter-cell fluxes are bounded by both capacities") {
  const FundamentalDiagram fd = reference_fd();
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> dens(0.0, fd.rho_jam);
  for (int trial = 0; trial < 1000; ++trial) {
    const double up = dens(rng), down = dens(rng);
    for (CellType tu : {CellType::normal, CellType::sag}) {
      for (CellType td : {CellType::normal, CellType::sag}) {
        const double flux = std::min(sending_flow(up, tu, fd), receiving_flow(down, td, fd));
        CHECK(flux >= 0.0);
        CHECK(flux <= std::min(fd.capacity(tu), fd.capacity(td)) + 1e-9);
      }
    }
  }
}

TEST_CASE("monotone emptying with zero inflow") {
  const FundamentalDiagram fd = reference_fd();
  const CellGrid grid = small_grid();
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> dens(0.0, fd.rho_jam);
  Eigen::VectorXd rho(grid.cell_count);
  for (int i = 0; i < grid.cell_count; ++i) rho[i] = dens(rng);
  double prev = total_veh(rho, grid);
  for (int step = 0; step < 500; ++step) {
    rho = ctm_step(rho, fd, grid, 0.0, 3.0).rho;
    const double now = total_veh(rho, grid);
    CHECK(now <= prev + 1e-12);
    prev = now;
  }
  CHECK(prev < 1.0);  // 20 cells drain well within 1500 s
}

TEST_CASE("saturated inflow forms a standing queue pinned at the sag") {
  const FundamentalDiagram fd = reference_fd();
  const CellGrid grid = small_grid(20, 100.0, 16);
  const double sag_cap = fd.capacity(CellType::sag);  // 1749.6 veh/h
  Eigen::VectorXd rho = Eigen::VectorXd::Zero(grid.cell_count);
  const double inflow = sag_cap + 150.0;

  auto first_congested = [&](const Eigen::VectorXd& r) {
    for (int i = 0; i < grid.cell_count; ++i) {
      if (r[i] > fd.rho_cr(grid.types[i]) + 0.5) return i;
    }
    return grid.cell_count;
  };

  std::vector<int> fronts;
  for (int step = 0; step < 2000; ++step) {
    rho = ctm_step(rho, fd, grid, inflow, 3.0).rho;
    if (step >= 1500) fronts.push_back(first_congested(rho));
  }
  // congestion exists and its downstream edge is the cell feeding the sag
  int last_congested = -1;
  for (int i = 0; i < grid.cell_count; ++i) {
    if (rho[i] > fd.rho_cr(grid.types[i]) + 0.5) last_congested = i;
  }
  CHECK(last_congested == 15);
  // upstream front no longer moves in the stabilized tail of the run
  for (int f : fronts) CHECK(f == fronts.front());
  // sag cells sit at (not above) their critical density
  CHECK(rho[16] == doctest::Approx(fd.rho_cr_sag).epsilon(1e-3));
}

TEST_CASE("CFL guard rejects too-long steps") {
  const FundamentalDiagram fd = reference_fd();
  CHECK_THROWS_AS(check_cfl(fd, 50.0, 3.0), ConfigError);
  CHECK_NOTHROW(check_cfl(fd, 100.0, 3.0));
}
