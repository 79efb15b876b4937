#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <optional>
#include <vector>

#include "roadscan/filter.hpp"
#include "roadscan/types.hpp"

// Online trend-break detection over the filtered window stream, followed by
// event classification against the beam-orientation grammar. The detector
// keeps running mean/variance per trend segment and declares a break when a
// new sample deviates from the segment's value or slope statistics; knees
// between ramp and plateau are then relocated on the unsmoothed medians via
// a second-difference search with sub-window interpolation.

namespace roadscan {

struct DetectorConfig {
  double z_threshold = 3.0;        // break when |z| exceeds this
  int min_segment_len = 3;         // members required before testing / blip run
  double sigma_floor_m = 0.005;    // value-channel noise floor (quantization)
  double slope_sigma_floor_mps = 0.25;  // slope-channel floor (res / period)
  int refine_radius = 5;           // windows searched around a break for the knee
  double refine_floor_mult = 3.0;  // knee must beat mult * median |d2| ...
  double refine_floor_abs_m = 0.02;  // ... and this absolute curvature
  double flat_slope_eps_mps = 2.0;  // |segment slope| below this counts as flat
};

/// Running mean / standard deviation (Welford).
class RunningStats {
 public:
  void add(double x) {
    ++n_;
    const double d = x - mean_;
    mean_ += d / static_cast<double>(n_);
    m2_ += d * (x - mean_);
  }
  int count() const { return n_; }
  double mean() const { return mean_; }
  double sd() const {
    return n_ > 1 ? std::sqrt(m2_ / static_cast<double>(n_ - 1)) : 0.0;
  }

 private:
  int n_ = 0;
  double mean_ = 0.0;
  double m2_ = 0.0;
};

inline double z_score(double x, const RunningStats& s, double sigma_floor) {
  const double sd = std::max(s.sd(), sigma_floor);
  return std::abs(x - s.mean()) / sd;
}

enum class TrendClass { kFalling, kFlat, kRising };

struct TrendSegment {
  std::size_t first = 0;  // indices into the filtered stream, inclusive
  std::size_t last = 0;
  TrendClass cls = TrendClass::kFlat;
  double slope_mps = 0.0;  // OLS slope of median distance vs time
  int n_values = 0;
};

/// Half-open range [begin, end) of indices into the filtered stream.
struct SampleRange {
  std::size_t begin = 0;
  std::size_t end = 0;
};

struct PassEvents {
  double t_a_s = 0.0;  // vehicle first enters the beam
  double t_b_s = 0.0;  // beam settles onto the vehicle side
  double t_c_s = 0.0;  // beam leaves the vehicle side
  std::optional<double> t_back_start_s;  // receding tail begins (rear beams)
  std::optional<double> t_back_end_s;    // vehicle fully leaves the beam
  std::int64_t first_window = 0;
  std::int64_t last_window = 0;
  std::optional<SampleRange> ramp;       // approaching front face samples
  SampleRange side{};                    // plateau samples
  std::optional<SampleRange> rear_ramp;  // receding tail samples
  bool knee_refined = false;
  std::vector<TrendSegment> segments;
};

namespace detail {

struct IntervalView {
  std::size_t begin = 0;  // [begin, end) into the filtered stream
  std::size_t end = 0;
};

/// Maximal runs of echo-bearing windows; echo gaps shorter than min_run are
/// bridged, and runs with fewer than min_run valued windows are dropped as
/// phantoms.
inline std::vector<IntervalView> presence_intervals(
    const std::vector<FilteredSample>& fs, int min_run) {
  std::vector<IntervalView> raw;
  std::size_t i = 0;
  while (i < fs.size()) {
    if (fs[i].state == WindowState::kNoEcho) {
      ++i;
      continue;
    }
    std::size_t j = i;
    while (j < fs.size() && fs[j].state != WindowState::kNoEcho) ++j;
    raw.push_back({i, j});
    i = j;
  }
  // Bridge short echo gaps between consecutive runs.
  std::vector<IntervalView> merged;
  for (const auto& r : raw) {
    if (!merged.empty() &&
        static_cast<int>(r.begin - merged.back().end) < min_run) {
      merged.back().end = r.end;
    } else {
      merged.push_back(r);
    }
  }
  std::vector<IntervalView> out;
  for (const auto& r : merged) {
    int valued = 0;
    for (std::size_t k = r.begin; k < r.end; ++k)
      if (fs[k].state == WindowState::kValue) ++valued;
    if (valued >= min_run) out.push_back(r);
  }
  return out;
}

}  // namespace detail

/// Detect trend breaks inside one presence interval. Returns indices (into
/// `fs`, restricted to [iv.begin, iv.end)) of the first sample of each new
/// segment after a break. Only kValue samples participate.
inline std::vector<std::size_t> detect_trend_breaks(
    const std::vector<FilteredSample>& fs, std::size_t begin, std::size_t end,
    const DetectorConfig& cfg) {
  std::vector<std::size_t> breaks;
  RunningStats vals, slopes;
  bool have_prev = false;
  double prev_t = 0.0, prev_v = 0.0;
  for (std::size_t i = begin; i < end; ++i) {
    if (fs[i].state != WindowState::kValue) continue;
    const double t = fs[i].t_s, v = fs[i].value_m;
    bool fire = false;
    if (vals.count() >= cfg.min_segment_len) {
      if (z_score(v, vals, cfg.sigma_floor_m) > cfg.z_threshold) fire = true;
      if (!fire && have_prev && slopes.count() >= 2) {
        const double d = (v - prev_v) / (t - prev_t);
        if (z_score(d, slopes, cfg.slope_sigma_floor_mps) > cfg.z_threshold)
          fire = true;
      }
    }
    if (fire) {
      breaks.push_back(i);
      vals = RunningStats{};
      slopes = RunningStats{};
      vals.add(v);
      prev_t = t;
      prev_v = v;
      have_prev = true;
      continue;
    }
    if (have_prev) slopes.add((v - prev_v) / (t - prev_t));
    vals.add(v);
    prev_t = t;
    prev_v = v;
    have_prev = true;
  }
  return breaks;
}

namespace detail {

struct ValueView {
  std::vector<std::size_t> idx;  // positions of kValue samples in fs
  std::vector<double> t, med;
  std::vector<std::int64_t> win;
};

inline ValueView collect_values(const std::vector<FilteredSample>& fs,
                                std::size_t begin, std::size_t end) {
  ValueView v;
  for (std::size_t i = begin; i < end; ++i) {
    if (fs[i].state != WindowState::kValue) continue;
    v.idx.push_back(i);
    v.t.push_back(fs[i].t_s);
    v.med.push_back(fs[i].median_m);
    v.win.push_back(fs[i].window_index);
  }
  return v;
}

/// Second difference of the median track at interior positions with
/// consecutive window indices; NaN where not computable.
inline std::vector<double> second_differences(const ValueView& v) {
  std::vector<double> d2(v.med.size(),
                         std::numeric_limits<double>::quiet_NaN());
  for (std::size_t j = 1; j + 1 < v.med.size(); ++j) {
    if (v.win[j] - v.win[j - 1] != 1 || v.win[j + 1] - v.win[j] != 1) continue;
    d2[j] = v.med[j + 1] - 2.0 * v.med[j] + v.med[j - 1];
  }
  return d2;
}

struct KneeFix {
  double t_s = 0.0;        // interpolated knee time
  std::size_t split = 0;   // position in ValueView of first sample at/after it
};

/// Locate the curvature extremum inside [lo, hi] (positions in the view) and
/// interpolate the knee between the two dominant second differences. A
/// ramp-to-plateau corner concentrates its curvature on two adjacent
/// windows, split proportionally to where the corner falls between them, so
/// a weighted time average of those two windows recovers the corner
/// sub-window (exactly, for ideal piecewise-linear input). Returns nothing
/// when the extremum fails the noise floor.
inline std::optional<KneeFix> locate_knee(const ValueView& v,
                                          const std::vector<double>& d2,
                                          std::size_t lo, std::size_t hi,
                                          const DetectorConfig& cfg) {
  const std::size_t n = v.t.size();
  std::size_t best = 0;
  double best_abs = -1.0;
  std::vector<double> mags;
  for (std::size_t j = lo; j <= hi && j < d2.size(); ++j) {
    if (std::isnan(d2[j])) continue;
    const double a = std::abs(d2[j]);
    mags.push_back(a);
    if (a > best_abs) {
      best_abs = a;
      best = j;
    }
  }
  if (mags.empty() || best_abs <= 0.0) return std::nullopt;
  std::sort(mags.begin(), mags.end());
  const double med_mag = mags[mags.size() / 2];
  const double floor_mag =
      std::max(cfg.refine_floor_mult * med_mag, cfg.refine_floor_abs_m);
  if (best_abs < floor_mag) return std::nullopt;

  // Partner = the adjacent second difference with the larger magnitude; the
  // knee lies between those two windows.
  const double left =
      best > 0 && !std::isnan(d2[best - 1]) ? std::abs(d2[best - 1]) : -1.0;
  const double right = best + 1 < d2.size() && !std::isnan(d2[best + 1])
                           ? std::abs(d2[best + 1])
                           : -1.0;
  double wb = 0.0;
  std::size_t nb = best;
  if (right >= left && right >= 0.0) {
    nb = best + 1;
    wb = right;
  } else if (left >= 0.0) {
    nb = best - 1;
    wb = left;
  }
  KneeFix fix;
  if (nb == best || wb <= 0.0) {
    fix.t_s = v.t[best];
    fix.split = best;
    return fix;
  }
  fix.t_s = (v.t[best] * best_abs + v.t[nb] * wb) / (best_abs + wb);
  fix.split = std::max(best, nb);
  // `split` is the first view position whose sample time is >= knee time.
  while (fix.split > 0 && v.t[fix.split - 1] >= fix.t_s) --fix.split;
  while (fix.split < n && v.t[fix.split] < fix.t_s) ++fix.split;
  return fix;
}

struct SlopeEstimate {
  double slope_mps = 0.0;
  double stderr_mps = 0.0;  // 0 when there are no residual dof (n < 3)
};

inline SlopeEstimate fit_slope(const ValueView& v, std::size_t lo,
                               std::size_t hi) {
  SlopeEstimate est;
  const std::size_t n = hi - lo + 1;
  if (n < 2) return est;
  double st = 0.0, sm = 0.0;
  for (std::size_t j = lo; j <= hi; ++j) {
    st += v.t[j];
    sm += v.med[j];
  }
  const double tb = st / static_cast<double>(n);
  const double mb = sm / static_cast<double>(n);
  double sxy = 0.0, sxx = 0.0;
  for (std::size_t j = lo; j <= hi; ++j) {
    sxy += (v.t[j] - tb) * (v.med[j] - mb);
    sxx += (v.t[j] - tb) * (v.t[j] - tb);
  }
  if (!(sxx > 0.0)) return est;
  est.slope_mps = sxy / sxx;
  if (n >= 3) {
    double ssr = 0.0;
    for (std::size_t j = lo; j <= hi; ++j) {
      const double r = v.med[j] - mb - est.slope_mps * (v.t[j] - tb);
      ssr += r * r;
    }
    est.stderr_mps = std::sqrt(ssr / static_cast<double>(n - 2) / sxx);
  }
  return est;
}

inline double ols_slope(const ValueView& v, std::size_t lo, std::size_t hi) {
  return fit_slope(v, lo, hi).slope_mps;
}

/// A segment counts as rising/falling only when its slope is both large
/// enough to matter and statistically distinguishable from zero; sparse or
/// noisy plateaus produce sizeable spurious slopes with even bigger standard
/// errors, and those must stay flat.
inline TrendClass classify_slope(const SlopeEstimate& est,
                                 const DetectorConfig& cfg) {
  const double eps =
      std::max(cfg.flat_slope_eps_mps, cfg.z_threshold * est.stderr_mps);
  if (est.slope_mps < -eps) return TrendClass::kFalling;
  if (est.slope_mps > eps) return TrendClass::kRising;
  return TrendClass::kFlat;
}

/// Build classified segments from break positions (view positions), merging
/// runs shorter than min_segment_len into their predecessor and collapsing
/// adjacent segments of equal class.
inline std::vector<TrendSegment> build_segments(
    const ValueView& v, std::vector<std::size_t> splits,
    const DetectorConfig& cfg, bool merge_tiny) {
  splits.insert(splits.begin(), 0);
  splits.push_back(v.idx.size());
  std::vector<std::pair<std::size_t, std::size_t>> spans;  // [lo, hi]
  for (std::size_t s = 0; s + 1 < splits.size(); ++s)
    if (splits[s + 1] > splits[s])
      spans.emplace_back(splits[s], splits[s + 1] - 1);
  if (merge_tiny) {
    for (std::size_t s = 0; s < spans.size();) {
      const std::size_t n = spans[s].second - spans[s].first + 1;
      if (static_cast<int>(n) >= cfg.min_segment_len || spans.size() == 1) {
        ++s;
        continue;
      }
      if (s > 0) {
        spans[s - 1].second = spans[s].second;
        spans.erase(spans.begin() + static_cast<std::ptrdiff_t>(s));
      } else {
        spans[1].first = spans[0].first;
        spans.erase(spans.begin());
      }
    }
  }
  std::vector<TrendSegment> segs;
  for (const auto& [lo, hi] : spans) {
    TrendSegment seg;
    seg.first = v.idx[lo];
    seg.last = v.idx[hi];
    seg.n_values = static_cast<int>(hi - lo + 1);
    const auto est = fit_slope(v, lo, hi);
    seg.slope_mps = est.slope_mps;
    seg.cls = classify_slope(est, cfg);
    segs.push_back(seg);
  }
  // Collapse adjacent equal classes.
  std::vector<TrendSegment> merged;
  std::vector<std::pair<std::size_t, std::size_t>> mspans;
  for (std::size_t s = 0; s < segs.size(); ++s) {
    if (!merged.empty() && merged.back().cls == segs[s].cls) {
      merged.back().last = segs[s].last;
      mspans.back().second = spans[s].second;
      merged.back().n_values += segs[s].n_values;
    } else {
      merged.push_back(segs[s]);
      mspans.push_back(spans[s]);
    }
  }
  for (std::size_t s = 0; s < merged.size(); ++s) {
    const auto est = fit_slope(v, mspans[s].first, mspans[s].second);
    merged[s].slope_mps = est.slope_mps;
    merged[s].cls = classify_slope(est, cfg);
  }
  // A second collapse in case re-fitting changed a class.
  std::vector<TrendSegment> out;
  for (const auto& seg : merged) {
    if (!out.empty() && out.back().cls == seg.cls) {
      out.back().last = seg.last;
      out.back().n_values += seg.n_values;
    } else {
      out.push_back(seg);
    }
  }
  return out;
}

inline std::vector<TrendClass> classes_of(const std::vector<TrendSegment>& s) {
  std::vector<TrendClass> c;
  for (const auto& seg : s) c.push_back(seg.cls);
  return c;
}

/// Validate a curvature-driven two-way split of the interval at view
/// position `sp`. The plateau side must fit flat; the ramp side must fit the
/// expected direction, or — when it is too short to fit a line — at least
/// stand proud of the plateau (distances off the side plateau are always
/// larger, for approach and departure alike).
inline bool retry_split_matches(const ValueView& v, std::size_t sp,
                                const DetectorConfig& cfg,
                                bool front_facing) {
  const std::size_t n = v.idx.size();
  if (sp < 1 || sp >= n) return false;
  const auto mean_of = [&](std::size_t lo, std::size_t hi) {
    double s = 0.0;
    for (std::size_t j = lo; j <= hi; ++j) s += v.med[j];
    return s / static_cast<double>(hi - lo + 1);
  };
  const double proud = cfg.refine_floor_abs_m;
  if (front_facing) {
    if (classify_slope(fit_slope(v, sp, n - 1), cfg) != TrendClass::kFlat)
      return false;
    if (sp >= 2)
      return classify_slope(fit_slope(v, 0, sp - 1), cfg) ==
             TrendClass::kFalling;
    return v.med[0] > mean_of(sp, std::min(n - 1, sp + 2)) + proud;
  }
  if (classify_slope(fit_slope(v, 0, sp - 1), cfg) != TrendClass::kFlat)
    return false;
  if (n - sp >= 2)
    return classify_slope(fit_slope(v, sp, n - 1), cfg) == TrendClass::kRising;
  return v.med[n - 1] > mean_of(sp >= 4 ? sp - 4 : 0, sp - 1) + proud;
}

}  // namespace detail

enum class UnmatchedPassPolicy { kThrow, kSkip };

/// Classify one presence interval into pass events for the given beam
/// orientation. Throws pass_error(Fault::kIncompletePass) when the observed
/// trend sequence cannot be reconciled with the beam grammar.
inline PassEvents classify_events(const std::vector<FilteredSample>& fs,
                                  std::size_t begin, std::size_t end,
                                  const DetectorConfig& cfg,
                                  const SensorConfig& scfg) {
  using namespace detail;
  const ValueView v = collect_values(fs, begin, end);
  if (static_cast<int>(v.idx.size()) < cfg.min_segment_len)
    throw pass_error(Fault::kIncompletePass,
                     "too few valued windows in interval");
  const double T = scfg.window_period_s;
  const double cos_a = std::cos(deg2rad(scfg.beam_angle_deg));
  const bool perpendicular = std::abs(cos_a) <= 1e-9;
  const bool front_facing = cos_a > 1e-9;

  auto raw_breaks = detect_trend_breaks(fs, begin, end, cfg);
  // Map stream indices to view positions.
  std::vector<std::size_t> splits;
  for (std::size_t b : raw_breaks) {
    const auto it = std::lower_bound(v.idx.begin(), v.idx.end(), b);
    if (it != v.idx.end() && *it == b)
      splits.push_back(static_cast<std::size_t>(it - v.idx.begin()));
  }
  auto segs = build_segments(v, splits, cfg, /*merge_tiny=*/true);
  const auto d2 = second_differences(v);

  PassEvents ev;
  ev.first_window = v.win.front();
  ev.last_window = v.win.back();
  ev.segments = segs;
  const double t_first = v.t.front(), t_last = v.t.back();
  ev.t_a_s = t_first - 0.5 * T;

  auto classes = classes_of(segs);
  const auto is = [&](std::initializer_list<TrendClass> want) {
    return classes == std::vector<TrendClass>(want);
  };

  auto finish_flat_only = [&]() {
    ev.t_b_s = ev.t_a_s;
    ev.t_c_s = t_last + 0.5 * T;
    ev.side = {v.idx.front(), v.idx.back() + 1};
  };

  if (perpendicular) {
    if (!is({TrendClass::kFlat}))
      throw pass_error(Fault::kIncompletePass,
                       "perpendicular beam expects a single plateau");
    finish_flat_only();
    return ev;
  }

  auto apply_front = [&](const KneeFix& fix, bool refined) {
    ev.t_b_s = fix.t_s;
    ev.t_c_s = t_last + 0.5 * T;
    ev.knee_refined = refined;
    const std::size_t sp = fix.split;
    if (sp >= 1)
      ev.ramp = SampleRange{v.idx.front(), v.idx[sp - 1] + 1};
    ev.side = {sp < v.idx.size() ? v.idx[sp] : v.idx.back() + 1,
               v.idx.back() + 1};
  };
  auto apply_rear = [&](const KneeFix& fix, bool refined) {
    ev.t_b_s = ev.t_a_s;
    ev.t_c_s = fix.t_s;
    ev.t_back_start_s = fix.t_s;
    ev.t_back_end_s = t_last + 0.5 * T;
    ev.knee_refined = refined;
    const std::size_t sp = fix.split;
    ev.side = {v.idx.front(), sp >= 1 ? v.idx[sp - 1] + 1 : v.idx.front()};
    if (sp < v.idx.size())
      ev.rear_ramp = SampleRange{v.idx[sp], v.idx.back() + 1};
  };

  // Knee position candidate from segmentation (first sample of the plateau
  // for front beams; first sample of the tail for rear beams).
  auto knee_from_boundary = [&](std::size_t seg_idx) -> KneeFix {
    // seg_idx = segment that STARTS at the knee. Find its first view pos.
    const std::size_t stream_i = segs[seg_idx].first;
    const auto it = std::lower_bound(v.idx.begin(), v.idx.end(), stream_i);
    const std::size_t pos = static_cast<std::size_t>(it - v.idx.begin());
    KneeFix fix;
    fix.split = pos;
    fix.t_s = pos > 0 ? 0.5 * (v.t[pos] + v.t[pos - 1]) : v.t[pos] - 0.5 * T;
    return fix;
  };

  auto refine_near = [&](const KneeFix& coarse) -> std::optional<KneeFix> {
    const std::size_t r = static_cast<std::size_t>(cfg.refine_radius);
    const std::size_t lo = coarse.split > r ? coarse.split - r : 0;
    const std::size_t hi =
        std::min(coarse.split + r, v.idx.size() > 0 ? v.idx.size() - 1 : 0);
    auto fine = locate_knee(v, d2, lo, hi, cfg);
    if (!fine) return std::nullopt;
    // The segmentation already brackets the knee between the leading
    // segment's last sample and the trailing segment's first. A curvature
    // extremum outside that gap sits in a fitted segment's interior — on a
    // ragged plateau those extrema rival a genuine corner's curvature — so
    // it refines nothing and the boundary estimate stands.
    const double t_lo = coarse.split > 0 ? v.t[coarse.split - 1] - 0.5 * T
                                         : t_first - 0.5 * T;
    const double t_hi = coarse.split < v.t.size()
                            ? v.t[coarse.split] + 0.5 * T
                            : t_last + 0.5 * T;
    if (fine->t_s < t_lo || fine->t_s > t_hi) return std::nullopt;
    return fine;
  };
  auto retry_fix = [&]() -> std::optional<KneeFix> {
    auto fine = locate_knee(v, d2, 1, v.idx.size() - 2, cfg);
    if (fine && retry_split_matches(v, fine->split, cfg, front_facing)) {
      ev.segments =
          build_segments(v, {fine->split}, cfg, /*merge_tiny=*/false);
      return fine;
    }
    return std::nullopt;
  };

  if (front_facing) {
    if (is({TrendClass::kFalling, TrendClass::kFlat})) {
      KneeFix coarse = knee_from_boundary(1);
      if (auto fine = refine_near(coarse))
        apply_front(*fine, true);
      else
        apply_front(coarse, false);
      return ev;
    }
    // Missing or mangled ramp: search the whole interval for one knee.
    if (auto fine = retry_fix()) {
      apply_front(*fine, true);
      return ev;
    }
    if (is({TrendClass::kFlat})) {  // genuinely rampless graze
      finish_flat_only();
      return ev;
    }
    throw pass_error(Fault::kIncompletePass,
                     "front beam trend sequence does not match approach+side");
  }

  // Rear-facing.
  if (is({TrendClass::kFlat, TrendClass::kRising})) {
    KneeFix coarse = knee_from_boundary(1);
    if (auto fine = refine_near(coarse))
      apply_rear(*fine, true);
    else
      apply_rear(coarse, false);
    return ev;
  }
  if (auto fine = retry_fix()) {
    apply_rear(*fine, true);
    return ev;
  }
  if (is({TrendClass::kFlat})) {
    finish_flat_only();
    return ev;
  }
  throw pass_error(Fault::kIncompletePass,
                   "rear beam trend sequence does not match side+tail");
}

/// Detect every vehicle pass in a filtered stream.
inline std::vector<PassEvents> detect_events(
    const std::vector<FilteredSample>& fs, const DetectorConfig& cfg,
    const SensorConfig& scfg,
    UnmatchedPassPolicy policy = UnmatchedPassPolicy::kThrow) {
  std::vector<PassEvents> out;
  for (const auto& iv : detail::presence_intervals(fs, cfg.min_segment_len)) {
    try {
      out.push_back(classify_events(fs, iv.begin, iv.end, cfg, scfg));
    } catch (const pass_error&) {
      if (policy == UnmatchedPassPolicy::kThrow) throw;
    }
  }
  return out;
}

}  // namespace roadscan
