#pragma once

#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include "roadscan/detector.hpp"
#include "roadscan/filter.hpp"
#include "roadscan/types.hpp"

// Speed and length estimation for one module: least-squares slope over the
// approach (or departure) ramp projected through the beam angle, and length
// as speed times side dwell. Uncertainties propagate fit residuals, the
// sensor's quantization step, and one-window event-timing noise so that the
// fusion stage can weight modules by inverse variance.

namespace roadscan {

/// Bivariate running least-squares accumulator (centered updates), so a
/// slope estimate is available after every sample.
class IncrementalOls {
 public:
  void add(double x, double y) {
    ++n_;
    const double dx = x - mean_x_;
    const double dy = y - mean_y_;
    mean_x_ += dx / static_cast<double>(n_);
    mean_y_ += dy / static_cast<double>(n_);
    sxx_ += dx * (x - mean_x_);
    syy_ += dy * (y - mean_y_);
    sxy_ += dx * (y - mean_y_);
  }
  int n() const { return n_; }
  double mean_x() const { return mean_x_; }
  double mean_y() const { return mean_y_; }
  double sxx() const { return sxx_; }
  double slope() const { return sxx_ > 0.0 ? sxy_ / sxx_ : 0.0; }
  double intercept() const { return mean_y_ - slope() * mean_x_; }
  double predict(double x) const { return mean_y_ + slope() * (x - mean_x_); }
  /// Sum of squared fit residuals (always >= 0 up to rounding).
  double ssr() const {
    const double b = slope();
    return std::max(0.0, syy_ - b * b * sxx_);
  }

 private:
  int n_ = 0;
  double mean_x_ = 0.0, mean_y_ = 0.0;
  double sxx_ = 0.0, syy_ = 0.0, sxy_ = 0.0;
};

struct SpeedEstimate {
  double value_mps = 0.0;
  double stderr_mps = 0.0;
  int n_samples = 0;
  double source_angle_deg = 0.0;
};

struct LengthEstimate {
  double value_m = 0.0;
  double stderr_m = 0.0;
  double dwell_s = 0.0;
  SpeedEstimate speed_used;
};

/// Single-module result for one vehicle pass. Perpendicular modules carry
/// timing only (speed and length absent); fusion may later combine several
/// of these into a fused=true record.
struct Characterisation {
  std::int64_t pass_id = 0;
  std::string module_id;
  double angle_deg = 0.0;
  std::optional<SpeedEstimate> speed;
  std::optional<LengthEstimate> length;
  double dwell_s = 0.0;
  double dwell_stderr_s = 0.0;
  double t_b_s = 0.0;
  double t_c_s = 0.0;
  bool fused = false;
  /// Module ids whose reports went into a fused result (empty otherwise).
  std::vector<std::string> contributors;
};

/// Which end of a ramp range touches the trend knee (candidates for the
/// consistency trim when the knee was located imprecisely).
enum class KneeSide { kNone, kLast, kFirst };

namespace detail {

struct FitPoint {
  double t = 0.0;
  double y = 0.0;
};

/// Gate ramp samples against plateau leakage across an imprecise knee: seed
/// an incremental fit on the half farthest from the knee, then accept
/// knee-ward samples one at a time while they stay on the fitted line. A
/// plateau sample sits at least a full window-step off the ramp line, so the
/// gate cuts there even when a whole run of windows leaked across the knee
/// (a lone suspicious sample would hide its own leakage from any fit that
/// includes it).
inline std::vector<FitPoint> gate_knee_leakage(std::vector<FitPoint> pts,
                                               KneeSide side, double res,
                                               double period_s) {
  if (side == KneeSide::kNone || pts.size() < 3) return pts;
  if (side == KneeSide::kFirst) std::reverse(pts.begin(), pts.end());
  const std::size_t seed = std::max<std::size_t>(2, pts.size() / 2);
  IncrementalOls fit;
  for (std::size_t i = 0; i < seed; ++i) fit.add(pts[i].t, pts[i].y);
  std::size_t kept = seed;
  while (kept < pts.size()) {
    const double rmse =
        fit.n() > 2 ? std::sqrt(fit.ssr() / (fit.n() - 2)) : 0.0;
    const double tol = std::max(
        {3.0 * rmse, 2.0 * res, 0.5 * std::abs(fit.slope()) * period_s});
    if (std::abs(pts[kept].y - fit.predict(pts[kept].t)) > tol) break;
    fit.add(pts[kept].t, pts[kept].y);
    ++kept;
  }
  pts.resize(kept);  // order does not matter to the caller's least squares
  return pts;
}

}  // namespace detail

/// Least-squares speed over the ramp samples in [range.begin, range.end).
/// Samples near the knee are kept only while they are consistent with the
/// trend fitted from the knee-far half, guarding the fit against plateau
/// samples leaking across an imprecise knee.
inline SpeedEstimate estimate_speed(const std::vector<FilteredSample>& fs,
                                    SampleRange range,
                                    const SensorConfig& cfg,
                                    KneeSide knee_side = KneeSide::kNone) {
  const double cos_a = std::cos(deg2rad(cfg.beam_angle_deg));
  if (std::abs(cos_a) < 1e-9)
    throw pass_error(Fault::kDegenerateAngle,
                     "perpendicular beam carries no speed information");
  std::vector<detail::FitPoint> pts;
  for (std::size_t i = range.begin; i < range.end && i < fs.size(); ++i)
    if (fs[i].state == WindowState::kValue)
      pts.push_back({fs[i].t_s, fs[i].median_m});
  pts = detail::gate_knee_leakage(std::move(pts), knee_side,
                                  cfg.resolution_m, cfg.window_period_s);
  if (pts.size() < 2)
    throw pass_error(Fault::kSegmentTooShort,
                     "need at least two ramp windows to fit a slope");
  IncrementalOls fit;
  for (const auto& p : pts) fit.add(p.t, p.y);
  const double slope = fit.slope();
  SpeedEstimate est;
  est.value_mps = std::abs(slope) * std::abs(cos_a);
  est.n_samples = fit.n();
  est.source_angle_deg = cfg.beam_angle_deg;
  // Residual variance plus the quantization step's variance, spread over the
  // ramp's time leverage; strictly positive so fusion weights stay finite.
  const double dof = std::max(fit.n() - 2, 1);
  const double q2 = cfg.resolution_m * cfg.resolution_m / 12.0;
  const double slope_var = (fit.ssr() / dof + q2) / fit.sxx();
  est.stderr_mps = std::sqrt(slope_var) * std::abs(cos_a);
  if (!(est.value_mps > 0.0))
    throw pass_error(Fault::kIncompletePass,
                     "ramp fit produced a non-positive speed");
  return est;
}

/// Length from side dwell: L = v * (t_C - t_B), with each event time good to
/// one window, so the dwell contributes T/sqrt(6) of timing noise.
inline LengthEstimate estimate_length(double t_b_s, double t_c_s,
                                      const SpeedEstimate& speed,
                                      const SensorConfig& cfg) {
  const double dwell = t_c_s - t_b_s;
  if (!(dwell > 0.0))
    throw pass_error(Fault::kNegativeDwell,
                     "side interval must end after it starts");
  LengthEstimate est;
  est.dwell_s = dwell;
  est.value_m = speed.value_mps * dwell;
  const double sigma_dwell = cfg.window_period_s / std::sqrt(6.0);
  est.stderr_m = std::hypot(dwell * speed.stderr_mps,
                            speed.value_mps * sigma_dwell);
  est.speed_used = speed;
  return est;
}

/// Full single-module characterisation of one detected pass.
inline Characterisation characterise_pass(
    const std::vector<FilteredSample>& fs, const PassEvents& ev,
    const SensorConfig& cfg, std::int64_t pass_id = 0,
    std::string module_id = {}) {
  Characterisation c;
  c.pass_id = pass_id;
  c.module_id = std::move(module_id);
  c.angle_deg = cfg.beam_angle_deg;
  c.t_b_s = ev.t_b_s;
  c.t_c_s = ev.t_c_s;
  c.dwell_s = ev.t_c_s - ev.t_b_s;
  c.dwell_stderr_s = cfg.window_period_s / std::sqrt(6.0);
  if (!(c.dwell_s > 0.0))
    throw pass_error(Fault::kNegativeDwell,
                     "side interval must end after it starts");
  const double cos_a = std::cos(deg2rad(cfg.beam_angle_deg));
  if (std::abs(cos_a) < 1e-9) return c;  // timing-only module
  SpeedEstimate speed;
  if (cos_a > 0.0) {
    if (!ev.ramp)
      throw pass_error(Fault::kSegmentTooShort,
                       "no approach ramp observed before the side");
    speed = estimate_speed(fs, *ev.ramp, cfg, KneeSide::kLast);
  } else {
    if (!ev.rear_ramp)
      throw pass_error(Fault::kSegmentTooShort,
                       "no departing ramp observed after the side");
    speed = estimate_speed(fs, *ev.rear_ramp, cfg, KneeSide::kFirst);
  }
  c.speed = speed;
  c.length = estimate_length(ev.t_b_s, ev.t_c_s, speed, cfg);
  return c;
}

}  // namespace roadscan
