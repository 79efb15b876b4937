#pragma once

#include <cstdio>
#include <fstream>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "roadscan/estimator.hpp"
#include "roadscan/filter.hpp"
#include "roadscan/fusion.hpp"
#include "roadscan/types.hpp"

// Serialization for configs, streams, and results. JSON (via nlohmann) for
// structured data, CSV for streams and aggregates. All floating-point CSV
// fields go through one fixed-precision formatter so identical runs produce
// byte-identical files.

namespace roadscan {

using json = nlohmann::ordered_json;

/// Fixed-precision, locale-independent float formatting for CSV output.
inline std::string fmt6(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.6f", v);
  return buf;
}

// ---------------------------------------------------------------------------
// Config round-trips

inline void to_json(json& j, const SensorConfig& c) {
  j = json{{"beam_angle_deg", c.beam_angle_deg},
           {"range_min_m", c.range_min_m},
           {"range_max_m", c.range_max_m},
           {"resolution_m", c.resolution_m},
           {"burst_size", c.burst_size},
           {"window_period_s", c.window_period_s},
           {"lateral_offset_m", c.lateral_offset_m}};
}

inline void from_json(const json& j, SensorConfig& c) {
  c = SensorConfig{};
  c.beam_angle_deg = j.value("beam_angle_deg", c.beam_angle_deg);
  c.range_min_m = j.value("range_min_m", c.range_min_m);
  c.range_max_m = j.value("range_max_m", c.range_max_m);
  c.resolution_m = j.value("resolution_m", c.resolution_m);
  c.burst_size = j.value("burst_size", c.burst_size);
  c.window_period_s = j.value("window_period_s", c.window_period_s);
  c.lateral_offset_m = j.value("lateral_offset_m", c.lateral_offset_m);
}

inline void to_json(json& j, const VehiclePass& p) {
  j = json{{"speed_mps", p.speed_mps},
           {"length_m", p.length_m},
           {"lateral_near_m", p.lateral_near_m}};
  if (!std::isnan(p.start_x_m)) j["start_x_m"] = p.start_x_m;
}

inline void from_json(const json& j, VehiclePass& p) {
  p = VehiclePass{};
  p.speed_mps = j.value("speed_mps", p.speed_mps);
  p.length_m = j.value("length_m", p.length_m);
  p.lateral_near_m = j.value("lateral_near_m", p.lateral_near_m);
  p.start_x_m = j.value("start_x_m", p.start_x_m);
}

inline void to_json(json& j, const NoiseModel& n) {
  j = json{{"gaussian_sigma_m", n.gaussian_sigma_m},
           {"outlier_prob", n.outlier_prob},
           {"spike_prob", n.spike_prob},
           {"spike_scale", n.spike_scale},
           {"seed", n.seed},
           {"incidence_sigma_gain", n.incidence_sigma_gain},
           {"incidence_dropout_gain", n.incidence_dropout_gain},
           {"speed_jitter_mps", n.speed_jitter_mps},
           {"speed_jitter_frac", n.speed_jitter_frac}};
}

inline void from_json(const json& j, NoiseModel& n) {
  n = NoiseModel{};
  n.gaussian_sigma_m = j.value("gaussian_sigma_m", n.gaussian_sigma_m);
  n.outlier_prob = j.value("outlier_prob", n.outlier_prob);
  n.spike_prob = j.value("spike_prob", n.spike_prob);
  n.spike_scale = j.value("spike_scale", n.spike_scale);
  n.seed = j.value("seed", n.seed);
  n.incidence_sigma_gain =
      j.value("incidence_sigma_gain", n.incidence_sigma_gain);
  n.incidence_dropout_gain =
      j.value("incidence_dropout_gain", n.incidence_dropout_gain);
  n.speed_jitter_mps = j.value("speed_jitter_mps", n.speed_jitter_mps);
  n.speed_jitter_frac = j.value("speed_jitter_frac", n.speed_jitter_frac);
}

// ---------------------------------------------------------------------------
// Noise presets

/// The zero-noise preset: exact geometry plus quantization only.
inline NoiseModel noiseless_noise() { return NoiseModel{}; }

/// The fitted preset that makes single-module errors land near the reference
/// measurements; presets/paper_calibrated.json documents the fit and
/// presets/fit_report.md the residuals.
inline NoiseModel paper_calibrated_noise() {
  NoiseModel n;
  n.gaussian_sigma_m = 0.0105;
  n.outlier_prob = 0.02;
  n.spike_prob = 0.02;
  n.spike_scale = 0.2;
  n.incidence_sigma_gain = 4.0;
  n.incidence_dropout_gain = 0.95;
  n.speed_jitter_mps = 0.0;
  n.speed_jitter_frac = 0.065;
  return n;
}

inline NoiseModel noise_preset(const std::string& name) {
  if (name == "noiseless") return noiseless_noise();
  if (name == "paper-calibrated") return paper_calibrated_noise();
  throw std::invalid_argument("unknown noise preset '" + name + "'");
}

// ---------------------------------------------------------------------------
// Topology

inline Role role_from_string(const std::string& s) {
  if (s == "SENSE") return Role::kSense;
  if (s == "COMPUTE") return Role::kCompute;
  if (s == "MASTER") return Role::kMaster;
  throw std::invalid_argument("unknown module role '" + s + "'");
}

inline void to_json(json& j, const ModuleSpec& m) {
  j = json{{"module_id", m.module_id},
           {"angle_deg", m.sensor.beam_angle_deg},
           {"role", role_name(m.role)},
           {"sensor", m.sensor}};
}

inline void from_json(const json& j, ModuleSpec& m) {
  m = ModuleSpec{};
  m.module_id = j.at("module_id").get<std::string>();
  if (j.contains("sensor")) m.sensor = j.at("sensor").get<SensorConfig>();
  if (j.contains("angle_deg"))
    m.sensor.beam_angle_deg = j.at("angle_deg").get<double>();
  m.role = j.contains("role")
               ? role_from_string(j.at("role").get<std::string>())
               : Role::kSense;
}

inline void to_json(json& j, const ChannelModel& c) {
  j = json{{"latency_s", c.latency_s},
           {"latency_jitter_s", c.latency_jitter_s},
           {"drop_prob", c.drop_prob},
           {"seed", c.seed}};
}

inline void from_json(const json& j, ChannelModel& c) {
  c = ChannelModel{};
  c.latency_s = j.value("latency_s", c.latency_s);
  c.latency_jitter_s = j.value("latency_jitter_s", c.latency_jitter_s);
  c.drop_prob = j.value("drop_prob", c.drop_prob);
  c.seed = j.value("seed", c.seed);
}

inline void to_json(json& j, const DeviceSpec& d) {
  j = json{{"device_id", d.device_id}, {"modules", d.modules}};
}

inline void from_json(const json& j, DeviceSpec& d) {
  d = DeviceSpec{};
  d.device_id = j.at("device_id").get<std::string>();
  d.modules = j.at("modules").get<std::vector<ModuleSpec>>();
}

inline void to_json(json& j, const DeviceTopology& t) {
  j = json{{"devices", t.devices}, {"channel", t.channel}};
}

inline void from_json(const json& j, DeviceTopology& t) {
  t = DeviceTopology{};
  t.devices = j.at("devices").get<std::vector<DeviceSpec>>();
  if (j.contains("channel")) t.channel = j.at("channel").get<ChannelModel>();
}

// ---------------------------------------------------------------------------
// Results

inline json characterisation_json(const Characterisation& c) {
  json j;
  j["pass_id"] = c.pass_id;
  j["module_id"] = c.module_id;
  j["angle_deg"] = c.angle_deg;
  j["speed_mps"] = c.speed ? json(c.speed->value_mps) : json(nullptr);
  j["speed_stderr"] = c.speed ? json(c.speed->stderr_mps) : json(nullptr);
  j["length_m"] = c.length ? json(c.length->value_m) : json(nullptr);
  j["length_stderr"] = c.length ? json(c.length->stderr_m) : json(nullptr);
  j["dwell_s"] = c.dwell_s;
  j["fused"] = c.fused;
  if (!c.contributors.empty()) j["contributors"] = c.contributors;
  return j;
}

inline json message_json(const ModuleMessage& m) {
  json j;
  j["msg_type"] = msg_type_name(m.msg_type);
  j["sender_module"] = m.sender_module;
  j["sender_device"] = m.sender_device;
  j["pass_id"] = m.pass_id;
  j["hop"] = hop_name(m.hop);
  j["send_t_s"] = m.send_t_s;
  j["deliver_t_s"] = m.deliver_t_s;
  j["dropped"] = m.dropped;
  j["payload"] = characterisation_json(m.payload);
  return j;
}

// ---------------------------------------------------------------------------
// Stream CSV

constexpr const char* kNoEchoLiteral = "NO_ECHO";

inline void write_samples_csv(std::ostream& os,
                              const std::vector<RangeSample>& samples) {
  os << "window_index,t_s,distance_m\n";
  for (const auto& s : samples) {
    os << s.window_index << ',' << fmt6(s.t_s) << ',';
    if (s.distance_m)
      os << fmt6(*s.distance_m);
    else
      os << kNoEchoLiteral;
    os << '\n';
  }
}

inline std::vector<RangeSample> read_samples_csv(std::istream& is) {
  std::vector<RangeSample> out;
  std::string line;
  if (!std::getline(is, line))
    throw std::invalid_argument("empty sample CSV");
  if (line.rfind("window_index,t_s,distance_m", 0) != 0)
    throw std::invalid_argument("unexpected sample CSV header: " + line);
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::string cell;
    RangeSample s;
    std::getline(ls, cell, ',');
    s.window_index = std::stoll(cell);
    std::getline(ls, cell, ',');
    s.t_s = std::stod(cell);
    std::getline(ls, cell, ',');
    if (cell != kNoEchoLiteral) s.distance_m = std::stod(cell);
    out.push_back(s);
  }
  return out;
}

inline void write_filtered_csv(std::ostream& os,
                               const std::vector<FilteredSample>& samples) {
  os << "window_index,t_s,distance_m,discarded\n";
  for (const auto& s : samples) {
    os << s.window_index << ',' << fmt6(s.t_s) << ',';
    if (s.state == WindowState::kNoEcho || std::isnan(s.value_m))
      os << kNoEchoLiteral;
    else
      os << fmt6(s.value_m);
    os << ',' << (s.discarded ? 1 : 0) << '\n';
  }
}

// ---------------------------------------------------------------------------
// File helpers

inline json load_json_file(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("cannot open " + path);
  json j;
  f >> j;
  return j;
}

inline void write_text_file(const std::string& path,
                            const std::string& content) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot write " + path);
  f << content;
}

}  // namespace roadscan
