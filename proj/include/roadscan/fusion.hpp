#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "roadscan/detector.hpp"
#include "roadscan/estimator.hpp"
#include "roadscan/filter.hpp"
#include "roadscan/types.hpp"

// Multi-module devices and cross-device collaboration. Each sensing module
// runs the full local pipeline and reports to its device master over a
// lossless ordered bus; masters exchange reports over a lossy inter-device
// channel; the primary master combines reports per pass with inverse-variance
// weighting for speed and the most side-on module's dwell for length.

namespace roadscan {

enum class Role { kSense, kCompute, kMaster };

inline const char* role_name(Role r) {
  switch (r) {
    case Role::kSense: return "SENSE";
    case Role::kCompute: return "COMPUTE";
    case Role::kMaster: return "MASTER";
  }
  return "UNKNOWN";
}

struct ModuleSpec {
  std::string module_id;
  SensorConfig sensor;
  Role role = Role::kSense;
};

struct DeviceSpec {
  std::string device_id;
  std::vector<ModuleSpec> modules;
};

/// Inter-device transport: fixed latency plus uniform jitter, independent
/// per-message drops. Deterministic for a fixed seed.
struct ChannelModel {
  double latency_s = 0.0;
  double latency_jitter_s = 0.0;
  double drop_prob = 0.0;
  std::uint64_t seed = 1;
};

struct DeviceTopology {
  std::vector<DeviceSpec> devices;
  ChannelModel channel;
};

inline void validate(const DeviceTopology& topo) {
  if (topo.devices.empty())
    throw std::invalid_argument("topology needs at least one device");
  if (topo.channel.drop_prob < 0.0 || topo.channel.drop_prob > 1.0)
    throw std::invalid_argument("drop_prob must lie in [0, 1]");
  if (topo.channel.latency_s < 0.0 || topo.channel.latency_jitter_s < 0.0)
    throw std::invalid_argument("channel latency must be non-negative");
  std::vector<std::string> ids;
  for (const auto& dev : topo.devices) {
    int masters = 0;
    for (const auto& m : dev.modules) {
      if (m.role == Role::kMaster) ++masters;
      ids.push_back(m.module_id);
      if (m.role == Role::kSense) validate(m.sensor);
    }
    if (masters != 1)
      throw std::invalid_argument("device '" + dev.device_id +
                                  "' must have exactly one MASTER module");
  }
  std::sort(ids.begin(), ids.end());
  if (std::adjacent_find(ids.begin(), ids.end()) != ids.end())
    throw std::invalid_argument("module ids must be unique across devices");
}

enum class MsgType { kSpeedReport, kDwellReport, kCharacterisation, kFusedResult };

inline const char* msg_type_name(MsgType t) {
  switch (t) {
    case MsgType::kSpeedReport: return "SPEED_REPORT";
    case MsgType::kDwellReport: return "DWELL_REPORT";
    case MsgType::kCharacterisation: return "CHARACTERISATION";
    case MsgType::kFusedResult: return "FUSED_RESULT";
  }
  return "UNKNOWN";
}

enum class Hop { kIntraDevice, kInterDevice };

inline const char* hop_name(Hop h) {
  return h == Hop::kIntraDevice ? "INTRA_DEVICE" : "INTER_DEVICE";
}

struct ModuleMessage {
  MsgType msg_type = MsgType::kCharacterisation;
  std::string sender_module;
  std::string sender_device;
  std::int64_t pass_id = 0;  // sender-local ordinal; masters re-associate
  Characterisation payload;
  Hop hop = Hop::kIntraDevice;
  double send_t_s = 0.0;
  double deliver_t_s = 0.0;
  bool dropped = false;
};

/// Inverse-variance weighted mean of per-module speeds. With one report the
/// result is that report; the combined stderr never exceeds any input's.
inline SpeedEstimate fuse_speed(const std::vector<SpeedEstimate>& reports) {
  if (reports.empty())
    throw pass_error(Fault::kNoReports, "no speed reports to fuse");
  if (reports.size() == 1) return reports.front();
  double wsum = 0.0, vsum = 0.0;
  int n = 0;
  for (const auto& r : reports) {
    if (!(r.stderr_mps > 0.0))
      throw std::invalid_argument("speed reports need positive stderr");
    const double w = 1.0 / (r.stderr_mps * r.stderr_mps);
    wsum += w;
    vsum += w * r.value_mps;
    n += r.n_samples;
  }
  SpeedEstimate fused;
  fused.value_mps = vsum / wsum;
  fused.stderr_mps = 1.0 / std::sqrt(wsum);
  fused.n_samples = n;
  fused.source_angle_deg = 0.0;  // mixed provenance
  return fused;
}

/// Length from the most side-on module's dwell and the fused speed.
inline LengthEstimate fuse_length(const Characterisation& dwell_report,
                                  const SpeedEstimate& fused_speed) {
  if (!(dwell_report.dwell_s > 0.0))
    throw pass_error(Fault::kNegativeDwell,
                     "dwell report has a non-positive side interval");
  LengthEstimate est;
  est.dwell_s = dwell_report.dwell_s;
  est.value_m = fused_speed.value_mps * est.dwell_s;
  est.stderr_m = std::hypot(est.dwell_s * fused_speed.stderr_mps,
                            fused_speed.value_mps * dwell_report.dwell_stderr_s);
  est.speed_used = fused_speed;
  return est;
}

namespace detail {

/// The sensing module designated to provide dwell: the one whose beam is
/// closest to side-on. Ties keep topology order.
inline const ModuleSpec* dwell_module(const DeviceTopology& topo) {
  const ModuleSpec* best = nullptr;
  double best_gap = 0.0;
  for (const auto& dev : topo.devices)
    for (const auto& m : dev.modules) {
      if (m.role != Role::kSense) continue;
      const double gap = std::abs(m.sensor.beam_angle_deg - 90.0);
      if (!best || gap < best_gap) {
        best = &m;
        best_gap = gap;
      }
    }
  return best;
}

}  // namespace detail

/// Combine every report collected for one pass into a single result.
///
/// With two or more contributing modules the result is fused=true: speed is
/// the inverse-variance mean of all speed-bearing reports and length comes
/// from the designated dwell module. If that module's report is missing the
/// best single-module length stands in, flagged fused=false. A single report
/// passes through unchanged.
inline Characterisation fuse_pass(const std::vector<Characterisation>& reports,
                                  const DeviceTopology& topo,
                                  std::int64_t pass_id) {
  if (reports.empty())
    throw pass_error(Fault::kNoReports, "no reports collected for this pass");
  if (reports.size() == 1) {
    Characterisation c = reports.front();
    c.pass_id = pass_id;
    return c;
  }

  std::vector<SpeedEstimate> speeds;
  std::vector<std::string> speed_ids;
  for (const auto& r : reports)
    if (r.speed) {
      speeds.push_back(*r.speed);
      speed_ids.push_back(r.module_id);
    }

  const ModuleSpec* dm = detail::dwell_module(topo);
  const Characterisation* dwell_report = nullptr;
  if (dm)
    for (const auto& r : reports)
      if (r.module_id == dm->module_id) dwell_report = &r;

  auto fallback_single = [&]() -> Characterisation {
    const Characterisation* best = nullptr;
    for (const auto& r : reports)
      if (r.length && (!best || r.length->stderr_m < best->length->stderr_m))
        best = &r;
    if (!best)
      throw pass_error(Fault::kMissingDwell,
                       "no usable length in any collected report");
    Characterisation c = *best;
    c.pass_id = pass_id;
    c.fused = false;
    c.contributors = {best->module_id};
    return c;
  };

  if (speeds.empty() || !dwell_report) return fallback_single();

  SpeedEstimate fused_speed = fuse_speed(speeds);
  Characterisation out;
  out.pass_id = pass_id;
  out.angle_deg = dwell_report->angle_deg;
  out.speed = fused_speed;
  out.length = fuse_length(*dwell_report, fused_speed);
  out.dwell_s = dwell_report->dwell_s;
  out.dwell_stderr_s = dwell_report->dwell_stderr_s;
  out.t_b_s = dwell_report->t_b_s;
  out.t_c_s = dwell_report->t_c_s;
  out.contributors = speed_ids;
  if (std::find(out.contributors.begin(), out.contributors.end(),
                dwell_report->module_id) == out.contributors.end())
    out.contributors.push_back(dwell_report->module_id);
  out.fused = out.contributors.size() >= 2;
  return out;
}

/// Per-module pipeline outcome inside a device run.
struct ModuleRun {
  std::string module_id;
  std::vector<Characterisation> passes;
  int excluded_passes = 0;  // detected but not characterisable
};

/// Run every sensing module of one device over its raw stream and emit the
/// intra-device report messages, in bus (send) order.
inline std::vector<ModuleMessage> run_device(
    const DeviceSpec& dev,
    const std::map<std::string, std::vector<RangeSample>>& streams,
    const FilterConfig& fcfg, const DetectorConfig& dcfg,
    std::vector<ModuleRun>* runs = nullptr) {
  std::vector<ModuleMessage> msgs;
  for (const auto& m : dev.modules) {
    if (m.role != Role::kSense) continue;
    auto it = streams.find(m.module_id);
    if (it == streams.end()) continue;
    ModuleRun run;
    run.module_id = m.module_id;
    auto fs = filter_stream(it->second, fcfg, m.sensor);
    auto events =
        detect_events(fs, dcfg, m.sensor, UnmatchedPassPolicy::kSkip);
    std::int64_t local_id = 0;
    for (const auto& ev : events) {
      try {
        auto c = characterise_pass(fs, ev, m.sensor, local_id, m.module_id);
        ModuleMessage msg;
        msg.msg_type = c.speed ? MsgType::kCharacterisation
                               : MsgType::kDwellReport;
        msg.sender_module = m.module_id;
        msg.sender_device = dev.device_id;
        msg.pass_id = local_id;
        msg.send_t_s = ev.t_back_end_s ? *ev.t_back_end_s : ev.t_c_s;
        msg.deliver_t_s = msg.send_t_s;  // lossless ordered bus
        msg.payload = std::move(c);
        msgs.push_back(std::move(msg));
        run.passes.push_back(msgs.back().payload);
        ++local_id;
      } catch (const pass_error&) {
        ++run.excluded_passes;
      }
    }
    if (runs) runs->push_back(std::move(run));
  }
  return msgs;
}

struct SystemRun {
  std::vector<ModuleMessage> trace;  // delivery order, drops included
  std::vector<Characterisation> fused;  // one per associated pass
  std::vector<ModuleRun> modules;
  int dropped_messages = 0;
};

/// Run the whole topology over per-module raw streams (keyed by module_id).
///
/// Reports from the first device reach its master over the bus; other
/// devices' masters forward their reports over the inter-device channel,
/// which may drop or delay them. The first device's master associates
/// reports that start their side interval within half a second of each
/// other and fuses each group.
inline SystemRun run_system(
    const DeviceTopology& topo,
    const std::map<std::string, std::vector<RangeSample>>& streams,
    const FilterConfig& fcfg = FilterConfig{},
    const DetectorConfig& dcfg = DetectorConfig{}) {
  validate(topo);
  SystemRun out;
  std::mt19937_64 rng(topo.channel.seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);

  std::vector<ModuleMessage> arrived;
  for (std::size_t d = 0; d < topo.devices.size(); ++d) {
    auto msgs = run_device(topo.devices[d], streams, fcfg, dcfg, &out.modules);
    for (auto& msg : msgs) {
      if (d == 0) {
        out.trace.push_back(msg);
        arrived.push_back(std::move(msg));
        continue;
      }
      // Forwarded by that device's master over the lossy channel. Draws are
      // consumed in deterministic (device, module, pass) order.
      msg.hop = Hop::kInterDevice;
      const double u_drop = unit(rng);
      const double u_lat = unit(rng);
      msg.dropped = u_drop < topo.channel.drop_prob;
      msg.deliver_t_s = msg.send_t_s + topo.channel.latency_s +
                        topo.channel.latency_jitter_s * u_lat;
      out.trace.push_back(msg);
      if (msg.dropped) {
        ++out.dropped_messages;
        continue;
      }
      arrived.push_back(std::move(msg));
    }
  }
  std::stable_sort(arrived.begin(), arrived.end(),
                   [](const ModuleMessage& a, const ModuleMessage& b) {
                     return a.deliver_t_s < b.deliver_t_s;
                   });

  // Associate reports into passes by side-interval start time.
  std::vector<const Characterisation*> reports;
  for (const auto& m : arrived) reports.push_back(&m.payload);
  std::stable_sort(reports.begin(), reports.end(),
                   [](const Characterisation* a, const Characterisation* b) {
                     return a->t_b_s < b->t_b_s;
                   });
  const std::string master_id = [&] {
    for (const auto& m : topo.devices.front().modules)
      if (m.role == Role::kMaster) return m.module_id;
    return std::string{};
  }();
  std::int64_t next_pass = 0;
  std::size_t i = 0;
  while (i < reports.size()) {
    std::vector<Characterisation> group;
    std::size_t j = i;
    group.push_back(*reports[j++]);
    while (j < reports.size() &&
           reports[j]->t_b_s - reports[j - 1]->t_b_s <= 0.5)
      group.push_back(*reports[j++]);
    auto fused = fuse_pass(group, topo, next_pass);
    if (fused.fused) fused.module_id = master_id;
    out.fused.push_back(fused);

    ModuleMessage result;
    result.msg_type = MsgType::kFusedResult;
    result.sender_module = master_id;
    result.sender_device = topo.devices.front().device_id;
    result.pass_id = next_pass;
    result.payload = out.fused.back();
    result.send_t_s = group.back().t_c_s;
    result.deliver_t_s = result.send_t_s;
    out.trace.push_back(std::move(result));
    ++next_pass;
    i = j;
  }
  return out;
}

}  // namespace roadscan
