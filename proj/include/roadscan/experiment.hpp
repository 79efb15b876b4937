#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "roadscan/estimator.hpp"
#include "roadscan/fusion.hpp"
#include "roadscan/geometry.hpp"
#include "roadscan/io.hpp"
#include "roadscan/types.hpp"

// Scenario runner: repeat synthesize -> pipeline -> fuse over a topology,
// then aggregate per-module and fused statistics into table cells. Every
// random draw is derived from the scenario seed plus the repetition index,
// so reruns are bit-identical and the same module sees the same stream no
// matter which topology it is embedded in.

namespace roadscan {

struct ScenarioSpec {
  std::string name;
  DeviceTopology topology;
  VehiclePass vehicle;  // template; NaN start_x means auto with phase jitter
  NoiseModel noise;
  std::vector<double> speeds_mps{10.0};
  int repetitions = 10;
  std::string output_prefix;
};

inline void validate(const ScenarioSpec& spec) {
  validate(spec.topology);
  if (spec.repetitions < 1)
    throw std::invalid_argument("repetitions must be at least 1");
  if (spec.speeds_mps.empty())
    throw std::invalid_argument("scenario needs at least one speed");
  for (double v : spec.speeds_mps)
    if (!(v > 0.0)) throw std::invalid_argument("speeds must be positive");
}

enum class Quantity { kSpeed, kLength };

inline const char* quantity_name(Quantity q) {
  return q == Quantity::kSpeed ? "SPEED" : "LENGTH";
}

/// One aggregate table cell. abs_error/rel_error_pct follow the
/// error-of-the-average convention; the mean-per-pass absolute error is
/// reported alongside because published tables mix the two conventions.
struct CellStats {
  std::string source;  // module_id, or "fused" for master output
  double angle_deg = 0.0;
  double speed_mps = 0.0;  // nominal cell speed
  Quantity quantity = Quantity::kSpeed;
  double ground_truth = 0.0;
  double avg = 0.0;
  double std_dev = 0.0;
  double abs_error = 0.0;      // |avg - ground_truth|
  double rel_error_pct = 0.0;  // 100 * abs_error / ground_truth
  double mean_abs_err = 0.0;   // mean over passes of |value - ground_truth|
  double mean_abs_rel_err_pct = 0.0;
  int n_included = 0;
  int n_excluded = 0;
};

struct PassRecord {
  std::string source;
  int rep = 0;
  double nominal_speed_mps = 0.0;
  double actual_speed_mps = 0.0;
  Characterisation result;
};

struct ScenarioResult {
  std::vector<CellStats> cells;
  std::vector<PassRecord> passes;
  std::map<std::string, int> excluded_by_source;
  int total_excluded = 0;
};

namespace detail {

constexpr std::uint64_t kVehicleSalt = 0x76656869636c65ULL;  // rep-level RNG

inline std::uint64_t angle_key(double angle_deg) {
  return static_cast<std::uint64_t>(std::llround(angle_deg * 1000.0)) + 1;
}

/// Mean and sample deviation against a known ground truth.
struct CellAccumulator {
  std::vector<double> values;
  int excluded = 0;

  CellStats finish(std::string source, double angle, double nominal,
                   Quantity q, double truth) const {
    CellStats c;
    c.source = std::move(source);
    c.angle_deg = angle;
    c.speed_mps = nominal;
    c.quantity = q;
    c.ground_truth = truth;
    c.n_included = static_cast<int>(values.size());
    c.n_excluded = excluded;
    if (values.empty()) return c;
    double sum = 0.0, abs_sum = 0.0;
    for (double v : values) {
      sum += v;
      abs_sum += std::abs(v - truth);
    }
    const double n = static_cast<double>(values.size());
    c.avg = sum / n;
    double ss = 0.0;
    for (double v : values) ss += (v - c.avg) * (v - c.avg);
    c.std_dev = values.size() > 1 ? std::sqrt(ss / (n - 1.0)) : 0.0;
    c.abs_error = std::abs(c.avg - truth);
    c.rel_error_pct = 100.0 * c.abs_error / truth;
    c.mean_abs_err = abs_sum / n;
    c.mean_abs_rel_err_pct = 100.0 * c.mean_abs_err / truth;
    return c;
  }
};

struct CellKey {
  std::string source;
  double angle_deg;
  double nominal_speed;
  Quantity quantity;
  bool operator<(const CellKey& o) const {
    if (source != o.source) return source < o.source;
    if (quantity != o.quantity) return quantity < o.quantity;
    if (angle_deg != o.angle_deg) return angle_deg < o.angle_deg;
    return nominal_speed < o.nominal_speed;
  }
};

}  // namespace detail

/// The vehicle realization for one repetition: jittered speed and a start
/// position far enough back that every module sees the approach, plus a
/// sub-window phase offset so window alignment varies across repetitions.
inline VehiclePass realize_vehicle(const ScenarioSpec& spec, double nominal,
                                   std::uint64_t run_seed) {
  VehiclePass p = spec.vehicle;
  std::mt19937_64 rng(mix_seed(run_seed, detail::kVehicleSalt));
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const double jitter_sd =
      std::hypot(spec.noise.speed_jitter_mps,
                 spec.noise.speed_jitter_frac * nominal);
  const double dv = jitter_sd * gauss(rng);
  const double phase = unit(rng);
  p.speed_mps = std::max(0.5, nominal + dv);
  if (std::isnan(p.start_x_m)) {
    double contact = 0.0;
    double period = 0.02;
    for (const auto& dev : spec.topology.devices)
      for (const auto& m : dev.modules)
        if (m.role == Role::kSense) {
          contact = std::max(contact, first_contact_x(m.sensor, p));
          period = m.sensor.window_period_s;
        }
    p.start_x_m = contact + 0.5 + phase * nominal * period;
  }
  return p;
}

/// Synthesize one stream per sensing module. The per-module seed mixes the
/// run seed with the beam angle, so a module's stream is identical across
/// topologies that share the run seed.
inline std::map<std::string, std::vector<RangeSample>> realize_streams(
    const ScenarioSpec& spec, const VehiclePass& vehicle,
    std::uint64_t run_seed) {
  std::map<std::string, std::vector<RangeSample>> streams;
  for (const auto& dev : spec.topology.devices)
    for (const auto& m : dev.modules) {
      if (m.role != Role::kSense) continue;
      NoiseModel nm = spec.noise;
      nm.seed = mix_seed(run_seed, detail::angle_key(m.sensor.beam_angle_deg));
      streams[m.module_id] = synthesize_pass(m.sensor, vehicle, nm);
    }
  return streams;
}

inline ScenarioResult run_scenario(const ScenarioSpec& spec) {
  validate(spec);
  ScenarioResult out;
  std::map<detail::CellKey, detail::CellAccumulator> acc;

  std::map<std::string, double> module_angles;
  for (const auto& dev : spec.topology.devices)
    for (const auto& m : dev.modules)
      if (m.role == Role::kSense)
        module_angles[m.module_id] = m.sensor.beam_angle_deg;
  // Fused results aggregate under the dwell provider's angle; exclusions for
  // missing fused passes must land in the same cell.
  const ModuleSpec* dwell_mod = detail::dwell_module(spec.topology);
  const double fused_angle = dwell_mod ? dwell_mod->sensor.beam_angle_deg : 0.0;

  for (double nominal : spec.speeds_mps) {
    for (int rep = 0; rep < spec.repetitions; ++rep) {
      const std::uint64_t run_seed =
          spec.noise.seed + static_cast<std::uint64_t>(rep);
      const VehiclePass vehicle = realize_vehicle(spec, nominal, run_seed);
      const auto streams = realize_streams(spec, vehicle, run_seed);
      const auto run = run_system(spec.topology, streams);

      auto record = [&](const std::string& source, double angle,
                        const Characterisation& c) {
        PassRecord pr;
        pr.source = source;
        pr.rep = rep;
        pr.nominal_speed_mps = nominal;
        pr.actual_speed_mps = vehicle.speed_mps;
        pr.result = c;
        out.passes.push_back(std::move(pr));
        if (c.speed)
          acc[{source, angle, nominal, Quantity::kSpeed}].values.push_back(
              c.speed->value_mps);
        if (c.length)
          acc[{source, angle, nominal, Quantity::kLength}].values.push_back(
              c.length->value_m);
      };
      auto exclude = [&](const std::string& source, double angle,
                         int count) {
        if (count <= 0) return;
        for (Quantity q : {Quantity::kSpeed, Quantity::kLength})
          acc[{source, angle, nominal, q}].excluded += count;
        out.excluded_by_source[source] += count;
        out.total_excluded += count;
      };

      for (const auto& mod : run.modules) {
        const double angle = module_angles[mod.module_id];
        const bool timing_only =
            std::abs(std::cos(deg2rad(angle))) < 1e-9;
        for (const auto& c : mod.passes) record(mod.module_id, angle, c);
        // Timing-only modules have no speed/length cells to exclude from;
        // their misses surface through the fused row instead.
        if (timing_only) continue;
        exclude(mod.module_id, angle, mod.excluded_passes);
        // A sensing module that saw nothing at all missed the vehicle.
        if (mod.passes.empty() && mod.excluded_passes == 0)
          exclude(mod.module_id, angle, 1);
      }
      bool fused_seen = false;
      for (const auto& f : run.fused)
        if (f.fused) {
          record("fused", f.angle_deg, f);
          fused_seen = true;
        }
      // Only count a missing fused result where fusion was possible at all.
      if (!fused_seen && module_angles.size() >= 2)
        exclude("fused", fused_angle, 1);
    }
  }

  for (const auto& [key, a] : acc) {
    const double truth = key.quantity == Quantity::kSpeed
                             ? key.nominal_speed
                             : spec.vehicle.length_m;
    out.cells.push_back(a.finish(key.source, key.angle_deg,
                                 key.nominal_speed, key.quantity, truth));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Aggregate CSV

inline std::string aggregate_csv(const std::vector<CellStats>& cells) {
  std::ostringstream os;
  os << "source,quantity,angle_deg,speed_mps,ground_truth,avg,std,"
        "abs_err_of_avg,rel_err_of_avg_pct,mean_abs_err,"
        "mean_abs_rel_err_pct,n_included,n_excluded\n";
  auto sorted = cells;
  std::sort(sorted.begin(), sorted.end(),
            [](const CellStats& a, const CellStats& b) {
              if (a.source != b.source) return a.source < b.source;
              if (a.quantity != b.quantity) return a.quantity < b.quantity;
              if (a.angle_deg != b.angle_deg) return a.angle_deg < b.angle_deg;
              return a.speed_mps < b.speed_mps;
            });
  for (const auto& c : sorted) {
    os << c.source << ',' << quantity_name(c.quantity) << ','
       << fmt6(c.angle_deg) << ',' << fmt6(c.speed_mps) << ','
       << fmt6(c.ground_truth) << ',' << fmt6(c.avg) << ','
       << fmt6(c.std_dev) << ',' << fmt6(c.abs_error) << ','
       << fmt6(c.rel_error_pct) << ',' << fmt6(c.mean_abs_err) << ','
       << fmt6(c.mean_abs_rel_err_pct) << ',' << c.n_included << ','
       << c.n_excluded << '\n';
  }
  return os.str();
}

inline json pass_record_json(const std::string& scenario,
                             const PassRecord& r) {
  json j;
  j["scenario"] = scenario;
  j["source"] = r.source;
  j["rep"] = r.rep;
  j["nominal_speed_mps"] = r.nominal_speed_mps;
  j["actual_speed_mps"] = r.actual_speed_mps;
  j["t_b_s"] = r.result.t_b_s;
  j["t_c_s"] = r.result.t_c_s;
  j["result"] = characterisation_json(r.result);
  return j;
}

inline std::string pass_records_jsonl(const ScenarioSpec& spec,
                                      const ScenarioResult& result) {
  std::ostringstream os;
  for (const auto& r : result.passes)
    os << pass_record_json(spec.name, r).dump() << '\n';
  return os.str();
}

// ---------------------------------------------------------------------------
// Angle sweep

struct SweepPoint {
  double angle_deg = 0.0;
  std::optional<double> speed_rel_err_pct;   // absent for side-on beams
  std::optional<double> length_rel_err_pct;  // absent without a speed source
};

/// Error-versus-angle series: each angle runs as its own single-module
/// scenario over the first configured speed, same seeds and vehicle.
inline std::vector<SweepPoint> sweep_angles(const ScenarioSpec& spec,
                                            const std::vector<double>& angles) {
  validate(spec);
  SensorConfig sensor_template;
  for (const auto& dev : spec.topology.devices)
    for (const auto& m : dev.modules)
      if (m.role == Role::kSense) {
        sensor_template = m.sensor;
        break;
      }
  std::vector<SweepPoint> out;
  for (double angle : angles) {
    if (!(angle > 0.0 && angle < 180.0))
      throw std::invalid_argument("sweep angles must lie in (0, 180)");
    ScenarioSpec single = spec;
    single.name = spec.name + "-sweep";
    single.speeds_mps = {spec.speeds_mps.front()};
    single.topology = DeviceTopology{};
    DeviceSpec dev;
    dev.device_id = "sweep";
    ModuleSpec mod;
    mod.module_id = "sweep.m";
    mod.sensor = sensor_template;
    mod.sensor.beam_angle_deg = angle;
    mod.role = Role::kSense;
    dev.modules.push_back(mod);
    dev.modules.push_back({"sweep.master", SensorConfig{}, Role::kMaster});
    single.topology.devices.push_back(dev);

    auto result = run_scenario(single);
    SweepPoint p;
    p.angle_deg = angle;
    for (const auto& c : result.cells) {
      if (c.source != "sweep.m" || c.n_included == 0) continue;
      if (c.quantity == Quantity::kSpeed)
        p.speed_rel_err_pct = c.mean_abs_rel_err_pct;
      else
        p.length_rel_err_pct = c.mean_abs_rel_err_pct;
    }
    out.push_back(p);
  }
  std::sort(out.begin(), out.end(),
            [](const SweepPoint& a, const SweepPoint& b) {
              return a.angle_deg < b.angle_deg;
            });
  return out;
}

inline std::string sweep_csv(const std::vector<SweepPoint>& points) {
  std::ostringstream os;
  os << "angle_deg,speed_rel_err_pct,length_rel_err_pct\n";
  for (const auto& p : points) {
    os << fmt6(p.angle_deg) << ',';
    if (p.speed_rel_err_pct) os << fmt6(*p.speed_rel_err_pct);
    os << ',';
    if (p.length_rel_err_pct) os << fmt6(*p.length_rel_err_pct);
    os << '\n';
  }
  return os.str();
}

// ---------------------------------------------------------------------------
// Scenario JSON

inline void to_json(json& j, const ScenarioSpec& s) {
  j = json{{"name", s.name},
           {"topology", s.topology},
           {"vehicle", s.vehicle},
           {"noise", s.noise},
           {"speeds_mps", s.speeds_mps},
           {"repetitions", s.repetitions},
           {"output", s.output_prefix}};
}

inline void from_json(const json& j, ScenarioSpec& s) {
  s = ScenarioSpec{};
  s.name = j.value("name", std::string{"scenario"});
  s.topology = j.at("topology").get<DeviceTopology>();
  if (j.contains("vehicle")) s.vehicle = j.at("vehicle").get<VehiclePass>();
  if (j.contains("noise")) {
    if (j.at("noise").is_string())
      s.noise = noise_preset(j.at("noise").get<std::string>());
    else
      s.noise = j.at("noise").get<NoiseModel>();
  }
  if (j.contains("speeds_mps"))
    s.speeds_mps = j.at("speeds_mps").get<std::vector<double>>();
  else
    s.speeds_mps = {s.vehicle.speed_mps};
  s.repetitions = j.value("repetitions", 10);
  s.output_prefix = j.value("output", std::string{});
}

}  // namespace roadscan
