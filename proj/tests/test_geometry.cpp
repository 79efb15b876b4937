#include <catch2/catch_amalgamated.hpp>

#include "oracle.hpp"
#include "roadscan/geometry.hpp"

using namespace roadscan;

namespace {

SensorConfig sensor(double angle_deg) {
  SensorConfig cfg;
  cfg.beam_angle_deg = angle_deg;
  return cfg;
}

VehiclePass pass_at(double speed, double lateral = 2.0, double start_x = 6.0) {
  VehiclePass p;
  p.speed_mps = speed;
  p.length_m = 3.7;
  p.lateral_near_m = lateral;
  p.start_x_m = start_x;
  return p;
}

}  // namespace

TEST_CASE("side section distance is lateral_near / sin(angle)") {
  // Derived by hand and cross-checked against the ray/rectangle oracle:
  // 2.0 / sin(45 deg) = 2.8284271247.
  auto cfg = sensor(45.0);
  auto p = pass_at(10.0);
  auto gt = ground_truth_events(cfg, p);
  REQUIRE(gt);
  CHECK_THAT(gt->side_distance_m,
             Catch::Matchers::WithinAbs(2.8284271247, 1e-9));
  double mid = 0.5 * (gt->t_front_to_side + gt->t_side_end);
  auto lib = ideal_distance(cfg, p, mid);
  auto ref = oracle::distance(cfg, p, mid);
  REQUIRE(lib);
  REQUIRE(ref);
  CHECK_THAT(*lib, Catch::Matchers::WithinAbs(*ref, 1e-12));

  // Perpendicular beam reads the lateral distance itself.
  auto gt90 = ground_truth_events(sensor(90.0), p);
  REQUIRE(gt90);
  CHECK_THAT(gt90->side_distance_m, Catch::Matchers::WithinAbs(2.0, 1e-12));
}

TEST_CASE("ideal_distance matches the ray/rectangle oracle everywhere") {
  for (double angle : {10.0, 30.0, 45.0, 60.0, 89.0, 90.0, 91.0, 120.0, 135.0,
                       150.0, 170.0}) {
    for (double lateral : {1.0, 2.0}) {
      auto cfg = sensor(angle);
      auto p = pass_at(10.0, lateral);
      for (double t = 0.0; t < 1.6; t += 0.0071) {
        auto lib = ideal_distance(cfg, p, t);
        auto ref = oracle::distance(cfg, p, t);
        INFO("angle=" << angle << " lateral=" << lateral << " t=" << t);
        REQUIRE(lib.has_value() == ref.has_value());
        if (lib) CHECK_THAT(*lib, Catch::Matchers::WithinAbs(*ref, 1e-9));
      }
    }
  }
}

TEST_CASE("ground truth events: frozen values, 30 deg front-facing") {
  // Hand-derived for v=10, L=3.7, lateral=2.0, start_x=6.0:
  //   ramp entry   (6 - 4.5*cos30) / 10 = 0.2102885683
  //   side begin   (6 - 2/tan30)   / 10 = 0.2535898385
  //   side end     side begin + 0.37    = 0.6235898385
  auto gt = ground_truth_events(sensor(30.0), pass_at(10.0));
  REQUIRE(gt);
  CHECK_THAT(gt->t_front_start,
             Catch::Matchers::WithinAbs(0.2102885683, 1e-9));
  CHECK_THAT(gt->t_front_to_side,
             Catch::Matchers::WithinAbs(0.2535898385, 1e-9));
  CHECK_THAT(gt->t_side_end, Catch::Matchers::WithinAbs(0.6235898385, 1e-9));
  CHECK_THAT(gt->side_distance_m, Catch::Matchers::WithinAbs(4.0, 1e-12));
  CHECK_FALSE(gt->t_back_start);
}

TEST_CASE("ground truth events: frozen values, 150 deg rear-facing") {
  // Mirror of the 30 deg case: side begins when the front plane reaches
  // x = 2/tan150 = -3.4641016151, rear ramp runs until the rear plane hit
  // leaves range at x = 4.5*cos150.
  auto gt = ground_truth_events(sensor(150.0), pass_at(10.0));
  REQUIRE(gt);
  CHECK_THAT(gt->t_front_start,
             Catch::Matchers::WithinAbs(0.9464101615, 1e-9));
  CHECK_THAT(gt->t_front_to_side,
             Catch::Matchers::WithinAbs(0.9464101615, 1e-9));
  CHECK_THAT(gt->t_side_end, Catch::Matchers::WithinAbs(1.3164101615, 1e-9));
  REQUIRE(gt->t_back_start);
  REQUIRE(gt->t_back_end);
  CHECK_THAT(*gt->t_back_start,
             Catch::Matchers::WithinAbs(1.3164101615, 1e-9));
  CHECK_THAT(*gt->t_back_end, Catch::Matchers::WithinAbs(1.3597114317, 1e-9));
}

TEST_CASE("ground truth events agree with oracle scan across angles") {
  for (double angle : {20.0, 30.0, 45.0, 60.0, 90.0, 120.0, 135.0, 160.0}) {
    auto cfg = sensor(angle);
    auto p = pass_at(10.0, 1.0);
    auto gt = ground_truth_events(cfg, p);
    auto ref = oracle::scan_events(cfg, p, 2.5);
    REQUIRE(gt);
    REQUIRE(ref);
    INFO("angle=" << angle);
    CHECK_THAT(gt->t_front_start,
               Catch::Matchers::WithinAbs(ref->t_first_visible, 1e-7));
    CHECK_THAT(gt->t_front_to_side,
               Catch::Matchers::WithinAbs(ref->t_side_begin, 1e-7));
    CHECK_THAT(gt->t_side_end,
               Catch::Matchers::WithinAbs(ref->t_side_end, 1e-7));
    double t_last = gt->t_back_end ? *gt->t_back_end : gt->t_side_end;
    CHECK_THAT(t_last, Catch::Matchers::WithinAbs(ref->t_last_visible, 1e-7));
  }
}

TEST_CASE("flat-section dwell equals length / speed for any angle") {
  for (double angle : {15.0, 30.0, 45.0, 90.0, 135.0, 165.0}) {
    for (double v : {5.0, 10.0, 20.0, 33.0}) {
      auto gt = ground_truth_events(sensor(angle), pass_at(v, 1.0));
      REQUIRE(gt);
      CHECK_THAT(gt->t_side_end - gt->t_front_to_side,
                 Catch::Matchers::WithinAbs(3.7 / v, 1e-10));
    }
  }
}

TEST_CASE("mirrored angles see the mirrored vehicle") {
  // Reflecting x -> -x maps beam angle a to 180-a and the rectangle
  // [xf, xf+L] to [-(xf+L), -xf]. Distances must match pointwise.
  auto p = pass_at(10.0);
  for (double angle : {30.0, 45.0, 70.0, 110.0}) {
    auto cfg_a = sensor(angle);
    auto cfg_m = sensor(180.0 - angle);
    for (double t1 = 0.0; t1 < 1.4; t1 += 0.0137) {
      double xf = p.start_x_m - p.speed_mps * t1;
      // Time at which the mirrored pass's front plane sits at -(xf + L).
      double t2 = (p.start_x_m + xf + p.length_m) / p.speed_mps;
      auto d1 = ideal_distance(cfg_a, p, t1);
      auto d2 = ideal_distance(cfg_m, p, t2);
      INFO("angle=" << angle << " t1=" << t1);
      REQUIRE(d1.has_value() == d2.has_value());
      if (d1) CHECK_THAT(*d1, Catch::Matchers::WithinAbs(*d2, 1e-9));
    }
  }
}

TEST_CASE("front ramp rate is speed / cos(angle)") {
  auto cfg = sensor(45.0);
  auto p = pass_at(10.0);
  auto gt = ground_truth_events(cfg, p);
  REQUIRE(gt);
  double t0 = gt->t_front_start + 0.2 * (gt->t_front_to_side - gt->t_front_start);
  double t1 = gt->t_front_start + 0.8 * (gt->t_front_to_side - gt->t_front_start);
  auto d0 = ideal_distance(cfg, p, t0);
  auto d1 = ideal_distance(cfg, p, t1);
  REQUIRE(d0);
  REQUIRE(d1);
  double slope = (*d1 - *d0) / (t1 - t0);
  CHECK_THAT(slope, Catch::Matchers::WithinAbs(-10.0 / std::cos(deg2rad(45.0)),
                                               1e-6));
}

TEST_CASE("unobservable passes are reported as such") {
  // 25 deg at lateral 2.0: side distance 4.73 m exceeds the 4.5 m range.
  CHECK_FALSE(ground_truth_events(sensor(25.0), pass_at(10.0)));
  // Side closer than range_min.
  CHECK_FALSE(ground_truth_events(sensor(90.0), pass_at(10.0, 0.1)));
}

TEST_CASE("noiseless synthesis quantizes the ideal trace") {
  auto cfg = sensor(45.0);
  auto p = pass_at(10.0);
  NoiseModel quiet;
  auto stream = synthesize_pass(cfg, p, quiet);
  REQUIRE_FALSE(stream.empty());
  CHECK(stream.size() % cfg.burst_size == 0);
  for (const auto& s : stream) {
    auto want = ideal_distance(cfg, p, s.t_s);
    REQUIRE(s.distance_m.has_value() == want.has_value());
    if (want)
      CHECK_THAT(*s.distance_m,
                 Catch::Matchers::WithinAbs(quantize(*want, cfg.resolution_m),
                                            1e-12));
  }
}

TEST_CASE("noiseless flat section spans length/speed of windows") {
  // Spec'd sanity figures: 3.7 m at 10 m/s dwells 0.37 s, at 20 m/s 0.185 s.
  for (double v : {10.0, 20.0}) {
    auto cfg = sensor(90.0);
    auto p = pass_at(v);
    auto stream = synthesize_pass(cfg, p, NoiseModel{});
    std::int64_t lo = -1, hi = -1;
    for (const auto& s : stream) {
      if (!s.distance_m) continue;
      if (lo < 0) lo = s.window_index;
      hi = s.window_index;
    }
    REQUIRE(lo >= 0);
    double span = static_cast<double>(hi - lo + 1) * cfg.window_period_s;
    CHECK_THAT(span, Catch::Matchers::WithinAbs(3.7 / v, cfg.window_period_s));
  }
}

TEST_CASE("synthesis is bit-identical under one seed, differs across seeds") {
  auto cfg = sensor(45.0);
  auto p = pass_at(10.0);
  NoiseModel noisy;
  noisy.gaussian_sigma_m = 0.05;
  noisy.outlier_prob = 0.05;
  noisy.spike_prob = 0.05;
  noisy.spike_scale = 0.2;
  noisy.seed = 1234;
  auto a = synthesize_pass(cfg, p, noisy);
  auto b = synthesize_pass(cfg, p, noisy);
  REQUIRE(a.size() == b.size());
  bool identical = true;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a[i].distance_m != b[i].distance_m ||
        a[i].window_index != b[i].window_index)
      identical = false;
  }
  CHECK(identical);

  noisy.seed = 1235;
  auto c = synthesize_pass(cfg, p, noisy);
  bool all_same = a.size() == c.size();
  if (all_same)
    for (std::size_t i = 0; i < a.size(); ++i)
      if (a[i].distance_m != c[i].distance_m) { all_same = false; break; }
  CHECK_FALSE(all_same);
}

TEST_CASE("every numeric reading sits on the resolution grid inside range") {
  auto cfg = sensor(60.0);
  auto p = pass_at(10.0, 1.0);
  NoiseModel noisy;
  noisy.gaussian_sigma_m = 0.08;
  noisy.outlier_prob = 0.08;
  noisy.spike_prob = 0.10;
  noisy.spike_scale = 0.25;
  noisy.incidence_sigma_gain = 2.0;
  noisy.incidence_dropout_gain = 0.4;
  noisy.seed = 77;
  auto stream = synthesize_pass(cfg, p, noisy);
  int in_range_count = 0, outlier_count = 0;
  for (const auto& s : stream) {
    if (!s.distance_m) continue;
    double d = *s.distance_m;
    double snapped = quantize(d, cfg.resolution_m);
    CHECK_THAT(d, Catch::Matchers::WithinAbs(snapped, 1e-9));
    if (d >= cfg.range_min_m && d <= cfg.range_max_m)
      ++in_range_count;
    else
      ++outlier_count;
  }
  CHECK(in_range_count > 0);
  CHECK(outlier_count > 0);  // outlier_prob 0.08 must show up
}

TEST_CASE("config validation rejects nonsense") {
  SensorConfig bad = sensor(0.0);
  CHECK_THROWS_AS(validate(bad), std::invalid_argument);
  bad = sensor(45.0);
  bad.range_min_m = 2.0;
  bad.range_max_m = 1.0;
  CHECK_THROWS_AS(validate(bad), std::invalid_argument);
  VehiclePass p;  // start_x unset
  CHECK_THROWS_AS(validate(p), std::invalid_argument);
  NoiseModel n;
  n.outlier_prob = 1.5;
  CHECK_THROWS_AS(validate(n), std::invalid_argument);
}
