#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include "jadlab/evaluation.hpp"

using namespace jadlab;
using namespace jadlab::eval;

namespace {

const VtMicroModel& model() {
  static VtMicroModel m = VtMicroModel::load(resolve_fuel_coeff_file(""));
  return m;
}

std::vector<TrajectorySample> constant_samples(double v, double a, double duration, double dt) {
  std::vector<TrajectorySample> out;
  for (double t = 0.0; t <= duration + 1e-9; t += dt) out.push_back({t, v, a});
  return out;
}

}  // namespace

TEST_CASE("fuel model loads and evaluates sanely") {
  const double idle = model().rate_ml_per_s(0.0, 0.0);
  CHECK(idle == doctest::Approx(1000.0 * std::exp(model().coefficient(true, 0, 0))));
  CHECK(idle > 0.1);
  CHECK(idle < 2.0);  // sub-2 ml/s at idle for a light-duty vehicle
  // cruising at highway speed burns more than idling
  CHECK(model().rate_ml_per_s(25.0, 0.0) > idle);
  // hard acceleration burns more than cruising
  CHECK(model().rate_ml_per_s(20.0, 1.0) > model().rate_ml_per_s(20.0, 0.0));
}

TEST_CASE("missing coefficient file is a configuration error") {
  CHECK_THROWS_AS(VtMicroModel::load("/nonexistent/vt.json"), ConfigError);
}

TEST_CASE("vt_micro_fuel: zero-length trajectory burns nothing") {
  CHECK(vt_micro_fuel({}, model()) == 0.0);
  CHECK(vt_micro_fuel({{0.0, 20.0, 0.0}}, model()) == 0.0);
}

TEST_CASE("vt_micro_fuel: idling integrates the constant-term rate") {
  const double fuel = vt_micro_fuel(constant_samples(0.0, 0.0, 100.0, 0.5), model());
  const double expected = 100.0 * 1000.0 * std::exp(model().coefficient(true, 0, 0));
  CHECK(fuel == doctest::Approx(expected).epsilon(1e-9));
}

TEST_CASE("vt_micro_fuel: steady cruise matches the single-point oracle") {
  // independent evaluation of the exponent polynomial at (20 m/s, 0)
  const double v_kph = 20.0 * 3.6;
  double exponent = 0.0;
  for (int i = 0; i < 4; ++i) exponent += model().coefficient(true, i, 0) * std::pow(v_kph, i);
  const double rate_ml = 1000.0 * std::exp(exponent);
  const double fuel = vt_micro_fuel(constant_samples(20.0, 0.0, 100.0, 1.0), model());
  CHECK(fuel == doctest::Approx(100.0 * rate_ml).epsilon(1e-9));
}

TEST_CASE("fuel is non-negative and longer idling strictly burns more") {
  CHECK(model().rate_ml_per_s(13.0, -2.0) > 0.0);
  CHECK(model().rate_ml_per_s(33.0, 2.5) > 0.0);
  const double short_idle = vt_micro_fuel(constant_samples(0.0, 0.0, 50.0, 0.5), model());
  const double long_idle = vt_micro_fuel(constant_samples(0.0, 0.0, 80.0, 0.5), model());
  CHECK(long_idle > short_idle);
}

TEST_CASE("average_travel_time rules") {
  std::vector<VehicleTravel> vehicles;
  vehicles.push_back({1, 0.0, 400.0, true, 0.0});
  CHECK(average_travel_time(vehicles) == doctest::Approx(400.0));

  vehicles.push_back({2, 100.0, 600.0, true, 0.0});
  CHECK(average_travel_time(vehicles) == doctest::Approx(450.0));

  // truncated vehicle never exits: excluded from the mean
  vehicles.push_back({3, 200.0, 0.0, false, 0.0});
  CHECK(average_travel_time(vehicles) == doctest::Approx(450.0));

  CHECK_THROWS_AS(average_travel_time({{9, 0.0, 0.0, false, 0.0}}), ConfigError);
}

TEST_CASE("benefit_metrics deltas and the deterioration flag") {
  const RunAggregates same{450.0, 800.0, 100};
  const MetricsReport zero = benefit_metrics(same, same);
  CHECK(zero.delta_att_s == 0.0);
  CHECK(zero.delta_afc_ml == 0.0);
  CHECK_FALSE(zero.deterioration_flag);

  const MetricsReport gain = benefit_metrics({430.0, 780.0, 100}, {450.0, 800.0, 100});
  CHECK(gain.delta_att_s == doctest::Approx(20.0));
  CHECK(gain.delta_afc_ml == doctest::Approx(20.0));
  CHECK_FALSE(gain.deterioration_flag);

  const MetricsReport bad = benefit_metrics({457.0, 800.0, 100}, {450.0, 800.0, 100});
  CHECK(bad.delta_att_s == doctest::Approx(-7.0));
  CHECK(bad.deterioration_flag);

  // -6 exactly is not yet "significant deterioration" (strict <)
  const MetricsReport edge = benefit_metrics({456.0, 800.0, 100}, {450.0, 800.0, 100});
  CHECK_FALSE(edge.deterioration_flag);
}

TEST_CASE("benefit_metrics antisymmetry") {
  const RunAggregates a{450.0, 800.0, 100};
  const RunAggregates b{431.5, 771.25, 100};
  const MetricsReport ab = benefit_metrics(b, a);
  const MetricsReport ba = benefit_metrics(a, b);
  CHECK(ab.delta_att_s == doctest::Approx(-ba.delta_att_s));
  CHECK(ab.delta_afc_ml == doctest::Approx(-ba.delta_afc_ml));
}

TEST_CASE("evaluate_trajectory interpolates the exit crossing") {
  const auto path = std::filesystem::temp_directory_path() / "jadlab_eval_traj.csv";
  {
    std::ofstream out(path);
    out << "t_s,vehicle_id,role,p_m,v_mps,a_mps2,g_comp\n";
    // vehicle 1: 25 m/s from 0, spawn row + sparse samples + exit row past 10000
    for (double t = 0.0; t <= 399.5; t += 0.5) {
      out << t << ",1,normal," << 25.0 * t << ",25.0,0.0,-0.005\n";
    }
    out << "400.02,1,normal,10000.5,25.0,0.0,0.03\n";
    // vehicle 2 never exits
    out << "0.0,2,normal,0.0,10.0,0.0,-0.005\n";
    out << "10.0,2,normal,100.0,10.0,0.0,-0.005\n";
  }
  std::vector<VehicleTravel> per_vehicle;
  const auto agg = evaluate_trajectory(path, model(), 0.0, 10000.0, &per_vehicle);
  CHECK(agg.vehicle_count == 1);
  CHECK(agg.att_s == doctest::Approx(400.0).epsilon(1e-4));
  REQUIRE(per_vehicle.size() == 2);
  CHECK(per_vehicle[0].completed);
  CHECK_FALSE(per_vehicle[1].completed);
  // deterministic re-read
  const auto again = evaluate_trajectory(path, model(), 0.0, 10000.0);
  CHECK(again.att_s == agg.att_s);
  CHECK(again.afc_ml == agg.afc_ml);
}
