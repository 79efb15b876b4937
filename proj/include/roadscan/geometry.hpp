#pragma once

#include <algorithm>
#include <optional>
#include <random>
#include <vector>

#include "roadscan/types.hpp"

// Beam/vehicle geometry. The sensor sits at the origin, the road runs along
// the x axis, and the beam is an ideal ray with direction
// (cos a, sin a) for beam angle a. The vehicle is an axis-aligned rectangle
// whose near side lies at y = lateral_near_m, extending away from the sensor
// (width unbounded; the range window truncates everything anyway). The front
// plane starts at start_x_m and moves toward negative x at speed_mps.
//
// For a < 90 the ray leans toward the approaching vehicle: it meets the
// front plane first (descending ramp), then the near side (flat), then
// nothing. For a > 90 the order mirrors: flat side first, then a rising ramp
// off the rear plane as the vehicle recedes. At exactly 90 only the flat
// section exists.

namespace roadscan {

enum class Surface { kFront, kSide, kRear };

struct BeamHit {
  double distance_m = 0.0;
  Surface surface = Surface::kSide;
};

namespace detail {

struct BeamFrame {
  double cos_a, sin_a;
  double x_cross;    // where the ray crosses y = lateral_near
  double side_dist;  // ray length to that crossing
};

inline BeamFrame beam_frame(const SensorConfig& cfg, double lateral_near_m) {
  BeamFrame f;
  double a = deg2rad(cfg.beam_angle_deg);
  f.cos_a = std::cos(a);
  f.sin_a = std::sin(a);
  f.x_cross = lateral_near_m * f.cos_a / f.sin_a;
  f.side_dist = lateral_near_m / f.sin_a;
  return f;
}

}  // namespace detail

/// First intersection of the beam ray with the vehicle rectangle at time t,
/// ignoring the sensor's range window. nullopt = ray misses the vehicle.
inline std::optional<BeamHit> beam_hit(const SensorConfig& cfg,
                                       const VehiclePass& pass, double t_s) {
  const auto f = detail::beam_frame(cfg, pass.lateral_near_m);
  const double x_front = pass.start_x_m - pass.speed_mps * t_s;
  const double x_rear = x_front + pass.length_m;

  if (x_front <= f.x_cross && f.x_cross <= x_rear)
    return BeamHit{f.side_dist, Surface::kSide};
  // Front plane face: reachable only when the ray leans forward (+x) and the
  // crossing point is still ahead of the vehicle.
  if (f.cos_a > 0.0 && x_front > f.x_cross)
    return BeamHit{x_front / f.cos_a, Surface::kFront};
  // Rear plane face: the mirrored case after the vehicle clears the crossing.
  if (f.cos_a < 0.0 && x_rear < f.x_cross)
    return BeamHit{x_rear / f.cos_a, Surface::kRear};
  return std::nullopt;
}

/// Beam hit clipped to the sensor's range window. nullopt = NO_ECHO.
inline std::optional<double> ideal_distance(const SensorConfig& cfg,
                                            const VehiclePass& pass,
                                            double t_s) {
  auto hit = beam_hit(cfg, pass, t_s);
  if (!hit) return std::nullopt;
  if (hit->distance_m < cfg.range_min_m || hit->distance_m > cfg.range_max_m)
    return std::nullopt;
  return hit->distance_m;
}

/// Exact section boundaries of one pass as seen by one module.
/// t_front_start: the signal leaves NO_ECHO (ramp entry; == t_front_to_side
/// when no ramp is visible). t_front_to_side: flat side begins.
/// t_side_end: flat side ends. Rear-facing angles also expose the rising
/// rear ramp interval [t_back_start, t_back_end].
struct GroundTruthEvents {
  double t_front_start = 0.0;
  double t_front_to_side = 0.0;
  double t_side_end = 0.0;
  std::optional<double> t_back_start;
  std::optional<double> t_back_end;
  double side_distance_m = 0.0;
};

/// nullopt when the flat side section never enters the range window, i.e.
/// the module cannot observe the pass at all.
inline std::optional<GroundTruthEvents> ground_truth_events(
    const SensorConfig& cfg, const VehiclePass& pass) {
  const auto f = detail::beam_frame(cfg, pass.lateral_near_m);
  if (f.side_dist < cfg.range_min_m || f.side_dist > cfg.range_max_m)
    return std::nullopt;

  const double v = pass.speed_mps;
  GroundTruthEvents ev;
  ev.side_distance_m = f.side_dist;
  ev.t_front_to_side = (pass.start_x_m - f.x_cross) / v;
  ev.t_side_end = ev.t_front_to_side + pass.length_m / v;
  if (f.cos_a > 0.0) {
    // Ramp is visible from the moment the front-plane hit drops into range.
    ev.t_front_start = (pass.start_x_m - cfg.range_max_m * f.cos_a) / v;
  } else {
    ev.t_front_start = ev.t_front_to_side;
    if (f.cos_a < 0.0) {
      ev.t_back_start = ev.t_side_end;
      ev.t_back_end =
          (pass.start_x_m + pass.length_m - cfg.range_max_m * f.cos_a) / v;
    }
  }
  return ev;
}

/// x position of the front plane at which the module first sees anything.
inline double first_contact_x(const SensorConfig& cfg,
                              const VehiclePass& pass) {
  const auto f = detail::beam_frame(cfg, pass.lateral_near_m);
  return f.cos_a > 0.0 ? cfg.range_max_m * f.cos_a : f.x_cross;
}

namespace detail {

inline double incidence_tan(Surface s, double beam_angle_deg) {
  double inc_deg = 0.0;
  switch (s) {
    case Surface::kFront: inc_deg = beam_angle_deg; break;
    case Surface::kSide: inc_deg = std::abs(90.0 - beam_angle_deg); break;
    case Surface::kRear: inc_deg = 180.0 - beam_angle_deg; break;
  }
  // Cap near-grazing geometry so the noise stays finite.
  inc_deg = std::min(inc_deg, 85.0);
  return std::tan(deg2rad(inc_deg));
}

inline double incidence_cos(Surface s, double beam_angle_deg) {
  double inc_deg = 0.0;
  switch (s) {
    case Surface::kFront: inc_deg = beam_angle_deg; break;
    case Surface::kSide: inc_deg = std::abs(90.0 - beam_angle_deg); break;
    case Surface::kRear: inc_deg = 180.0 - beam_angle_deg; break;
  }
  return std::cos(deg2rad(inc_deg));
}

}  // namespace detail

/// Simulate one module watching one pass. Emits burst_size readings per
/// window (modeled instantaneous at the window timestamp), every
/// window_period_s, from t=0 until the vehicle is fully out plus a tail
/// margin. Identical cfg/pass/noise (seed included) yields a bit-identical
/// stream.
inline std::vector<RangeSample> synthesize_pass(
    const SensorConfig& cfg, const VehiclePass& pass, const NoiseModel& noise,
    double t_end_s = std::numeric_limits<double>::quiet_NaN()) {
  validate(cfg);
  validate(pass);
  validate(noise);
  const double T = cfg.window_period_s;
  if (std::isnan(t_end_s)) {
    t_end_s = (pass.start_x_m + pass.length_m + cfg.range_max_m + 0.5) /
                  pass.speed_mps +
              25.0 * T;
  }
  const auto n_windows = static_cast<std::int64_t>(std::ceil(t_end_s / T));

  std::mt19937_64 rng(noise.seed);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  std::normal_distribution<double> gauss(0.0, 1.0);

  const double lo = cfg.range_min_m, hi = cfg.range_max_m;
  const double res = cfg.resolution_m;
  auto in_range = [&](double d) { return d >= lo && d <= hi; };

  std::vector<RangeSample> out;
  out.reserve(static_cast<std::size_t>(n_windows) * cfg.burst_size);
  for (std::int64_t w = 0; w < n_windows; ++w) {
    const double t = static_cast<double>(w) * T;
    const auto hit = beam_hit(cfg, pass, t);
    const bool visible = hit && in_range(hit->distance_m);
    for (int k = 0; k < cfg.burst_size; ++k) {
      RangeSample s{w, t, std::nullopt};
      if (noise.outlier_prob > 0.0 && unif(rng) < noise.outlier_prob) {
        // Out-of-range garbage value; the filter's range gate removes these.
        double d = unif(rng) < 0.5
                       ? lo * 0.2 + unif(rng) * (lo - 2.0 * res - lo * 0.2)
                       : hi + 2.0 * res + unif(rng) * 0.5 * hi;
        s.distance_m = quantize(d, res);
      } else if (visible) {
        bool dropped = false;
        if (noise.incidence_dropout_gain > 0.0) {
          const double p = noise.incidence_dropout_gain *
                           (1.0 - detail::incidence_cos(hit->surface,
                                                        cfg.beam_angle_deg));
          dropped = unif(rng) < p;
        }
        if (!dropped) {
          double d = hit->distance_m;
          if (noise.gaussian_sigma_m > 0.0) {
            const double sigma =
                noise.gaussian_sigma_m *
                (1.0 + noise.incidence_sigma_gain *
                           detail::incidence_tan(hit->surface,
                                                 cfg.beam_angle_deg));
            d += sigma * gauss(rng);
          }
          if (noise.spike_prob > 0.0 && unif(rng) < noise.spike_prob) {
            const double mag = noise.spike_scale * (1.0 + unif(rng));
            d *= unif(rng) < 0.5 ? 1.0 + mag : 1.0 - mag;
            d = std::clamp(d, lo, hi);
          }
          d = quantize(d, res);
          if (in_range(d)) s.distance_m = d;
        }
      } else if (noise.spike_prob > 0.0 && unif(rng) < noise.spike_prob) {
        // Phantom echo with nothing in the beam.
        s.distance_m = quantize(lo + unif(rng) * (hi - lo), res);
      }
      out.push_back(s);
    }
  }
  return out;
}

}  // namespace roadscan
