#pragma once

#include <algorithm>
#include <optional>
#include <vector>

#include "roadscan/types.hpp"

// Per-window burst filtering: range gate -> isolated peak/dip rejection ->
// median reduction -> exponential smoothing. State is one EMA register plus
// the current burst, so memory stays O(burst_size) no matter how long the
// stream runs.

namespace roadscan {

struct FilterConfig {
  double smoothing_factor = 0.75;   // EMA weight on the new measurement
  double peak_threshold_frac = 0.15;
  int min_valid_per_window = 0;     // 0 = majority rule (burst/2 + 1)
};

enum class WindowState { kValue, kDiscarded, kNoEcho };

/// One reduced window. median_m is the reduced burst value before smoothing,
/// value_m the smoothed output the detector consumes. A discarded window
/// (too few valid readings) repeats the previous smoothed value with
/// discarded=true; a window with no numeric echo at all is kNoEcho and both
/// values are NaN.
struct FilteredSample {
  std::int64_t window_index = 0;
  double t_s = 0.0;
  WindowState state = WindowState::kNoEcho;
  double value_m = std::numeric_limits<double>::quiet_NaN();
  double median_m = std::numeric_limits<double>::quiet_NaN();
  bool discarded = false;
};

struct RangeGateResult {
  std::vector<double> kept;
  int removed_out_of_range = 0;
  int removed_no_echo = 0;
};

/// Drop NO_ECHO markers and readings outside the sensor's range window.
inline RangeGateResult reject_outliers(
    const std::vector<std::optional<double>>& burst, const SensorConfig& cfg) {
  RangeGateResult r;
  r.kept.reserve(burst.size());
  for (const auto& b : burst) {
    if (!b) {
      ++r.removed_no_echo;
    } else if (*b < cfg.range_min_m || *b > cfg.range_max_m) {
      ++r.removed_out_of_range;
    } else {
      r.kept.push_back(*b);
    }
  }
  return r;
}

struct PeakRejectResult {
  std::vector<double> kept;
  int removed = 0;
};

/// Remove isolated single-sample spikes/dips: a value strictly exceeding
/// both original neighbours by more than the threshold fraction (or the
/// symmetric dip). Single pass; first and last survive by definition.
inline PeakRejectResult reject_peaks(const std::vector<double>& seq,
                                     double threshold_frac) {
  PeakRejectResult r;
  const std::size_t n = seq.size();
  const double f = 1.0 + threshold_frac;
  for (std::size_t i = 0; i < n; ++i) {
    bool drop = false;
    if (i > 0 && i + 1 < n) {
      const double x = seq[i], a = seq[i - 1], b = seq[i + 1];
      const bool spike = x > f * a && x > f * b;
      const bool dip = x * f < a && x * f < b;
      drop = spike || dip;
    }
    if (drop)
      ++r.removed;
    else
      r.kept.push_back(seq[i]);
  }
  return r;
}

/// Median of the surviving readings, or nothing when fewer than min_valid
/// survive (the window is then discarded).
inline std::optional<double> reduce_window(std::vector<double> valid,
                                           int min_valid) {
  if (static_cast<int>(valid.size()) < min_valid || valid.empty())
    return std::nullopt;
  std::sort(valid.begin(), valid.end());
  const std::size_t n = valid.size();
  return n % 2 ? valid[n / 2] : 0.5 * (valid[n / 2 - 1] + valid[n / 2]);
}

inline double ema_step(double prev, double measured, double smoothing_factor) {
  return smoothing_factor * measured + (1.0 - smoothing_factor) * prev;
}

class FilterPipeline {
 public:
  FilterPipeline(FilterConfig fcfg, SensorConfig scfg)
      : fcfg_(fcfg), scfg_(scfg) {
    if (fcfg_.smoothing_factor < 0.0 || fcfg_.smoothing_factor > 1.0)
      throw std::invalid_argument("smoothing_factor must be in [0, 1]");
    if (fcfg_.peak_threshold_frac < 0.0)
      throw std::invalid_argument("peak_threshold_frac must be >= 0");
    min_valid_ = fcfg_.min_valid_per_window > 0 ? fcfg_.min_valid_per_window
                                                : scfg_.burst_size / 2 + 1;
  }

  FilteredSample push(const std::vector<std::optional<double>>& burst,
                      std::int64_t window_index, double t_s) {
    FilteredSample out;
    out.window_index = window_index;
    out.t_s = t_s;
    auto gated = reject_outliers(burst, scfg_);
    const bool any_numeric =
        !gated.kept.empty() || gated.removed_out_of_range > 0;
    if (!any_numeric) {
      // Pure out-of-range condition; forget the smoothing state so the next
      // vehicle seeds fresh instead of inheriting a stale level.
      out.state = WindowState::kNoEcho;
      reset();
      return out;
    }
    auto cleaned = reject_peaks(gated.kept, fcfg_.peak_threshold_frac);
    auto med = reduce_window(cleaned.kept, min_valid_);
    if (!med) {
      out.state = WindowState::kDiscarded;
      out.discarded = true;
      if (ema_seeded_) out.value_m = ema_value_;
      return out;
    }
    ema_value_ = ema_seeded_ ? ema_step(ema_value_, *med, fcfg_.smoothing_factor)
                             : *med;
    ema_seeded_ = true;
    out.state = WindowState::kValue;
    out.median_m = *med;
    out.value_m = ema_value_;
    return out;
  }

  void reset() {
    ema_seeded_ = false;
    ema_value_ = std::numeric_limits<double>::quiet_NaN();
  }

 private:
  FilterConfig fcfg_;
  SensorConfig scfg_;
  int min_valid_ = 3;
  bool ema_seeded_ = false;
  double ema_value_ = std::numeric_limits<double>::quiet_NaN();
};

/// Batch wrapper: group raw samples by window index and run the pipeline.
inline std::vector<FilteredSample> filter_stream(
    const std::vector<RangeSample>& raw, const FilterConfig& fcfg,
    const SensorConfig& scfg) {
  FilterPipeline pipe(fcfg, scfg);
  std::vector<FilteredSample> out;
  std::vector<std::optional<double>> burst;
  std::size_t i = 0;
  while (i < raw.size()) {
    const std::int64_t w = raw[i].window_index;
    const double t = raw[i].t_s;
    burst.clear();
    for (; i < raw.size() && raw[i].window_index == w; ++i)
      burst.push_back(raw[i].distance_m);
    out.push_back(pipe.push(burst, w, t));
  }
  return out;
}

}  // namespace roadscan
