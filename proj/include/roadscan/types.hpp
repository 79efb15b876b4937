#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <stdexcept>
#include <string>

namespace roadscan {

constexpr double kPi = 3.14159265358979323846;

inline double deg2rad(double deg) { return deg * kPi / 180.0; }

/// Snap a reading onto the sensor's resolution grid.
inline double quantize(double x, double resolution_m) {
  return static_cast<double>(std::llround(x / resolution_m)) * resolution_m;
}

/// splitmix64-style mix for deriving independent sub-seeds.
inline std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b) {
  std::uint64_t z = a + 0x9E3779B97F4A7C15ULL * (b + 0x632BE59BD9B4E019ULL);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

/// One angled ultrasonic module. Angles are degrees from the road axis,
/// exclusive (0, 180); 90 points straight across the lane.
struct SensorConfig {
  double beam_angle_deg = 45.0;
  double range_min_m = 0.25;
  double range_max_m = 4.5;
  double resolution_m = 0.005;
  int burst_size = 5;
  double window_period_s = 0.02;
  double lateral_offset_m = 2.0;  // sensor to near lane edge, reference only
};

/// One vehicle transit. start_x_m is the front-plane position at t=0 along
/// the road axis (vehicle drives toward negative x); NaN means "let the
/// experiment runner place it".
struct VehiclePass {
  double speed_mps = 10.0;
  double length_m = 3.7;
  double lateral_near_m = 2.0;
  double start_x_m = std::numeric_limits<double>::quiet_NaN();
};

/// Synthetic degradation knobs. The incidence_* gains scale noise with the
/// beam's incidence angle on the reflecting surface (grazing echoes are
/// weak); zero gains reduce to plain Gaussian noise. The speed_jitter_*
/// fields are consumed by the experiment runner (per-pass true-speed
/// deviation around nominal, mirroring radar-gated road trials where the
/// driver holds an indicated speed): an absolute m/s component and a
/// speedometer-style fractional one, combined in quadrature.
/// synthesize_pass ignores both.
struct NoiseModel {
  double gaussian_sigma_m = 0.0;
  double outlier_prob = 0.0;
  double spike_prob = 0.0;
  double spike_scale = 0.15;  // fractional spike magnitude floor
  std::uint64_t seed = 1;
  double incidence_sigma_gain = 0.0;
  double incidence_dropout_gain = 0.0;
  double speed_jitter_mps = 0.0;
  double speed_jitter_frac = 0.0;
};

/// One raw sensor reading. nullopt distance = NO_ECHO (nothing in range).
struct RangeSample {
  std::int64_t window_index = 0;
  double t_s = 0.0;
  std::optional<double> distance_m;
};

enum class Fault {
  kSegmentTooShort,
  kDegenerateAngle,
  kNegativeDwell,
  kIncompletePass,
  kNoReports,
  kMissingDwell,
  kInsufficientSegment,
  kUnobservable,
};

inline const char* fault_name(Fault f) {
  switch (f) {
    case Fault::kSegmentTooShort: return "SEGMENT_TOO_SHORT";
    case Fault::kDegenerateAngle: return "DEGENERATE_ANGLE";
    case Fault::kNegativeDwell: return "NEGATIVE_DWELL";
    case Fault::kIncompletePass: return "INCOMPLETE_PASS";
    case Fault::kNoReports: return "NO_REPORTS";
    case Fault::kMissingDwell: return "MISSING_DWELL";
    case Fault::kInsufficientSegment: return "INSUFFICIENT_SEGMENT";
    case Fault::kUnobservable: return "UNOBSERVABLE";
  }
  return "UNKNOWN";
}

/// Recoverable per-pass failure; the experiment runner catches these and
/// counts the pass as excluded, the way discarded road trials were.
class pass_error : public std::runtime_error {
 public:
  pass_error(Fault fault, const std::string& what)
      : std::runtime_error(std::string(fault_name(fault)) + ": " + what),
        fault_(fault) {}
  Fault fault() const { return fault_; }

 private:
  Fault fault_;
};

inline void validate(const SensorConfig& cfg) {
  if (!(cfg.beam_angle_deg > 0.0 && cfg.beam_angle_deg < 180.0))
    throw std::invalid_argument("beam_angle_deg must be in (0, 180)");
  if (!(cfg.range_min_m > 0.0 && cfg.range_max_m > cfg.range_min_m))
    throw std::invalid_argument("sensor range must satisfy 0 < min < max");
  if (!(cfg.resolution_m > 0.0))
    throw std::invalid_argument("resolution_m must be positive");
  if (cfg.burst_size < 1)
    throw std::invalid_argument("burst_size must be >= 1");
  if (!(cfg.window_period_s > 0.0))
    throw std::invalid_argument("window_period_s must be positive");
}

inline void validate(const VehiclePass& pass) {
  if (!(pass.speed_mps > 0.0))
    throw std::invalid_argument("speed_mps must be positive");
  if (!(pass.length_m > 0.0))
    throw std::invalid_argument("length_m must be positive");
  if (!(pass.lateral_near_m > 0.0))
    throw std::invalid_argument("lateral_near_m must be positive");
  if (!std::isfinite(pass.start_x_m))
    throw std::invalid_argument("start_x_m unset; resolve placement first");
}

inline void validate(const NoiseModel& noise) {
  auto prob = [](double p) { return p >= 0.0 && p <= 1.0; };
  if (!(noise.gaussian_sigma_m >= 0.0) || !prob(noise.outlier_prob) ||
      !prob(noise.spike_prob))
    throw std::invalid_argument("noise probabilities/sigma out of range");
  if (noise.spike_prob > 0.0 && noise.spike_scale < 0.15)
    throw std::invalid_argument("spike_scale must be >= 0.15");
  if (noise.incidence_sigma_gain < 0.0 || noise.incidence_dropout_gain < 0.0 ||
      noise.speed_jitter_mps < 0.0 || noise.speed_jitter_frac < 0.0)
    throw std::invalid_argument("noise gains must be non-negative");
}

}  // namespace roadscan
