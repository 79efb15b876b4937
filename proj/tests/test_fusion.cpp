#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <cmath>
#include <map>
#include <string>
#include <vector>

#include "roadscan/estimator.hpp"
#include "roadscan/fusion.hpp"
#include "roadscan/geometry.hpp"
#include "roadscan/types.hpp"

using namespace roadscan;

namespace {

SpeedEstimate mk_speed(double v, double se, int n = 4, double angle = 30.0) {
  SpeedEstimate s;
  s.value_mps = v;
  s.stderr_mps = se;
  s.n_samples = n;
  s.source_angle_deg = angle;
  return s;
}

Characterisation mk_char(std::string id, double angle, double t_b,
                         double dwell) {
  Characterisation c;
  c.module_id = std::move(id);
  c.angle_deg = angle;
  c.t_b_s = t_b;
  c.t_c_s = t_b + dwell;
  c.dwell_s = dwell;
  c.dwell_stderr_s = 0.02 / std::sqrt(6.0);
  return c;
}

/// Device with one sensing module at the given angle plus a master.
DeviceSpec mk_device(const std::string& dev_id, const std::string& mod_id,
                     double angle_deg) {
  SensorConfig s;
  s.beam_angle_deg = angle_deg;
  DeviceSpec d;
  d.device_id = dev_id;
  d.modules.push_back({mod_id, s, Role::kSense});
  d.modules.push_back({dev_id + ".master", SensorConfig{}, Role::kMaster});
  return d;
}

std::vector<RangeSample> noiseless_stream(double angle_deg,
                                          const VehiclePass& pass) {
  SensorConfig s;
  s.beam_angle_deg = angle_deg;
  return synthesize_pass(s, pass, NoiseModel{});
}

VehiclePass default_pass() {
  VehiclePass p;
  p.speed_mps = 10.0;
  p.length_m = 3.7;
  p.lateral_near_m = 2.0;
  p.start_x_m = 8.0;
  return p;
}

}  // namespace

TEST_CASE("fusing one speed report returns it unchanged") {
  auto r = mk_speed(12.5, 0.3, 5, 45.0);
  auto f = fuse_speed({r});
  CHECK(f.value_mps == 12.5);
  CHECK(f.stderr_mps == 0.3);
  CHECK(f.n_samples == 5);
  CHECK(f.source_angle_deg == 45.0);
}

TEST_CASE("inverse-variance weighting matches hand algebra") {
  auto f = fuse_speed({mk_speed(10.0, 0.5), mk_speed(10.0, 1.0)});
  CHECK(f.value_mps == Catch::Approx(10.0).margin(1e-12));
  // 1 / sqrt(1/0.25 + 1/1) = 1 / sqrt(5)
  CHECK(f.stderr_mps == Catch::Approx(0.4472135955).margin(1e-9));

  SECTION("disagreeing reports pull toward the tighter one") {
    auto g = fuse_speed({mk_speed(10.0, 0.5), mk_speed(12.0, 1.0)});
    // weights 4 and 1: (4*10 + 1*12) / 5
    CHECK(g.value_mps == Catch::Approx(10.4).margin(1e-12));
    CHECK(g.stderr_mps == Catch::Approx(0.4472135955).margin(1e-9));
  }
}

TEST_CASE("speed fusion is permutation invariant and tightens stderr") {
  std::vector<SpeedEstimate> reports = {
      mk_speed(9.8, 0.4), mk_speed(10.3, 0.7), mk_speed(10.0, 0.2),
      mk_speed(10.1, 1.1)};
  auto f = fuse_speed(reports);
  std::vector<SpeedEstimate> shuffled = {reports[2], reports[0], reports[3],
                                         reports[1]};
  auto g = fuse_speed(shuffled);
  CHECK(f.value_mps == Catch::Approx(g.value_mps).margin(1e-12));
  CHECK(f.stderr_mps == Catch::Approx(g.stderr_mps).margin(1e-12));
  for (const auto& r : reports) CHECK(f.stderr_mps <= r.stderr_mps);
  CHECK_THROWS_AS(fuse_speed({}), pass_error);
}

TEST_CASE("fused length is speed times the side-on dwell") {
  auto dwell = mk_char("m90", 90.0, 1.0, 0.37);
  auto len = fuse_length(dwell, mk_speed(10.0, 0.0));
  CHECK(len.value_m == Catch::Approx(3.70).margin(1e-12));
  CHECK(len.dwell_s == 0.37);
  CHECK(len.stderr_m > 0.0);  // timing uncertainty survives exact speed
  auto bad = dwell;
  bad.dwell_s = -0.1;
  CHECK_THROWS_AS(fuse_length(bad, mk_speed(10.0, 0.1)), pass_error);
}

TEST_CASE("topology validation catches structural mistakes") {
  DeviceTopology topo;
  topo.devices.push_back(mk_device("d0", "m30", 30.0));
  CHECK_NOTHROW(validate(topo));

  SECTION("a device without a master") {
    topo.devices[0].modules.pop_back();
    CHECK_THROWS_AS(validate(topo), std::invalid_argument);
  }
  SECTION("two masters") {
    topo.devices[0].modules.push_back(
        {"extra", SensorConfig{}, Role::kMaster});
    CHECK_THROWS_AS(validate(topo), std::invalid_argument);
  }
  SECTION("duplicate module ids across devices") {
    topo.devices.push_back(mk_device("d1", "m30", 45.0));
    CHECK_THROWS_AS(validate(topo), std::invalid_argument);
  }
  SECTION("impossible drop probability") {
    topo.channel.drop_prob = 1.5;
    CHECK_THROWS_AS(validate(topo), std::invalid_argument);
  }
  SECTION("no devices at all") {
    CHECK_THROWS_AS(validate(DeviceTopology{}), std::invalid_argument);
  }
}

TEST_CASE("a lone report passes through fusion unchanged") {
  DeviceTopology topo;
  topo.devices.push_back(mk_device("d0", "m45", 45.0));
  auto c = mk_char("m45", 45.0, 1.0, 0.37);
  c.speed = mk_speed(10.0, 0.2, 4, 45.0);
  c.length = estimate_length(c.t_b_s, c.t_c_s, *c.speed, SensorConfig{});
  auto f = fuse_pass({c}, topo, 3);
  CHECK(f.pass_id == 3);
  CHECK(f.module_id == "m45");
  CHECK_FALSE(f.fused);
  REQUIRE(f.speed.has_value());
  CHECK(f.speed->value_mps == 10.0);
  REQUIRE(f.length.has_value());
  CHECK(f.length->value_m == c.length->value_m);
}

TEST_CASE("fusion pairs a speed module with the side-on dwell module") {
  DeviceTopology topo;
  DeviceSpec d0;
  d0.device_id = "d0";
  SensorConfig s30, s90;
  s30.beam_angle_deg = 30.0;
  s90.beam_angle_deg = 90.0;
  d0.modules = {{"m30", s30, Role::kSense},
                {"m90", s90, Role::kSense},
                {"mm", SensorConfig{}, Role::kMaster}};
  topo.devices.push_back(d0);

  auto c30 = mk_char("m30", 30.0, 0.95, 0.40);
  c30.speed = mk_speed(10.0, 0.3, 3, 30.0);
  c30.length = estimate_length(c30.t_b_s, c30.t_c_s, *c30.speed,
                               SensorConfig{});
  auto c90 = mk_char("m90", 90.0, 1.0, 0.37);

  auto f = fuse_pass({c30, c90}, topo, 0);
  CHECK(f.fused);
  REQUIRE(f.speed.has_value());
  REQUIRE(f.length.has_value());
  CHECK(f.speed->value_mps == Catch::Approx(10.0).margin(1e-12));
  CHECK(f.length->value_m == Catch::Approx(3.7).margin(1e-12));
  CHECK(f.dwell_s == 0.37);
  REQUIRE(f.contributors.size() == 2);
  CHECK(std::find(f.contributors.begin(), f.contributors.end(), "m30") !=
        f.contributors.end());
  CHECK(std::find(f.contributors.begin(), f.contributors.end(), "m90") !=
        f.contributors.end());

  SECTION("a dropped dwell report falls back to the best single length") {
    auto c45 = mk_char("m45", 45.0, 0.97, 0.39);
    c45.speed = mk_speed(10.2, 0.8, 3, 45.0);
    c45.length = estimate_length(c45.t_b_s, c45.t_c_s, *c45.speed,
                                 SensorConfig{});
    auto g = fuse_pass({c30, c45}, topo, 1);
    CHECK_FALSE(g.fused);
    CHECK(g.module_id == "m30");  // tighter length stderr
    REQUIRE(g.contributors.size() == 1);
    CHECK(g.contributors[0] == "m30");
  }
  SECTION("no usable length anywhere is an error") {
    auto c90b = mk_char("m90b", 91.0, 1.01, 0.372);
    CHECK_THROWS_AS(fuse_pass({c90, c90b}, topo, 2), pass_error);
  }
}

TEST_CASE("device run reproduces the single-module pipeline") {
  auto pass = default_pass();
  auto dev = mk_device("d0", "m30", 30.0);
  std::map<std::string, std::vector<RangeSample>> streams;
  streams["m30"] = noiseless_stream(30.0, pass);
  auto msgs = run_device(dev, streams, FilterConfig{}, DetectorConfig{});
  REQUIRE(msgs.size() == 1);
  CHECK(msgs[0].msg_type == MsgType::kCharacterisation);
  CHECK(msgs[0].sender_module == "m30");
  CHECK(msgs[0].hop == Hop::kIntraDevice);

  // Same numbers as running the pipeline stages directly.
  SensorConfig s30;
  s30.beam_angle_deg = 30.0;
  auto fs = filter_stream(streams["m30"], FilterConfig{}, s30);
  auto ev = detect_events(fs, DetectorConfig{}, s30);
  REQUIRE(ev.size() == 1);
  auto direct = characterise_pass(fs, ev[0], s30, 0, "m30");
  REQUIRE(msgs[0].payload.speed.has_value());
  CHECK(msgs[0].payload.speed->value_mps == direct.speed->value_mps);
  CHECK(msgs[0].payload.length->value_m == direct.length->value_m);

  SECTION("side-on modules publish dwell reports") {
    auto dev90 = mk_device("d9", "m90", 90.0);
    std::map<std::string, std::vector<RangeSample>> s;
    s["m90"] = noiseless_stream(90.0, pass);
    auto m = run_device(dev90, s, FilterConfig{}, DetectorConfig{});
    REQUIRE(m.size() == 1);
    CHECK(m[0].msg_type == MsgType::kDwellReport);
    CHECK_FALSE(m[0].payload.speed.has_value());
  }
}

namespace {

DeviceTopology two_module_device() {
  DeviceTopology topo;
  DeviceSpec d0;
  d0.device_id = "d0";
  SensorConfig s30, s90;
  s30.beam_angle_deg = 30.0;
  s90.beam_angle_deg = 90.0;
  d0.modules = {{"m30", s30, Role::kSense},
                {"m90", s90, Role::kSense},
                {"mm", SensorConfig{}, Role::kMaster}};
  topo.devices.push_back(d0);
  return topo;
}

std::map<std::string, std::vector<RangeSample>> two_module_streams(
    const VehiclePass& pass) {
  std::map<std::string, std::vector<RangeSample>> streams;
  streams["m30"] = noiseless_stream(30.0, pass);
  streams["m90"] = noiseless_stream(90.0, pass);
  return streams;
}

}  // namespace

TEST_CASE("a two-module device emits one fused result per pass") {
  auto topo = two_module_device();
  auto pass = default_pass();
  auto run = run_system(topo, two_module_streams(pass));
  REQUIRE(run.fused.size() == 1);
  const auto& f = run.fused[0];
  CHECK(f.fused);
  CHECK(f.module_id == "mm");
  REQUIRE(f.speed.has_value());
  REQUIRE(f.length.has_value());
  // The 30-degree ramp here is only two windows long, so the speed is good
  // to the quantization bound and the length inherits that error.
  const double v_bound = 2.0 * 0.005 / (0.02 * std::cos(deg2rad(30.0))) /
                         f.speed->n_samples;
  const double v_err = std::abs(f.speed->value_mps - 10.0);
  CHECK(v_err <= v_bound);
  CHECK(std::abs(f.length->value_m - 3.7) <=
        10.0 * 0.02 + 3.7 * (v_err / 10.0) + 1e-9);
  int fused_msgs = 0;
  for (const auto& m : run.trace)
    if (m.msg_type == MsgType::kFusedResult) ++fused_msgs;
  CHECK(fused_msgs == 1);

  SECTION("inter-device drops cannot touch an intra-device pipeline") {
    auto lossy = topo;
    lossy.channel.drop_prob = 1.0;
    auto run2 = run_system(lossy, two_module_streams(pass));
    REQUIRE(run2.fused.size() == 1);
    CHECK(run2.fused[0].length->value_m == f.length->value_m);
    CHECK(run2.fused[0].speed->value_mps == f.speed->value_mps);
    CHECK(run2.dropped_messages == 0);
  }
}

TEST_CASE("split devices fuse identically over a clean channel") {
  auto pass = default_pass();
  DeviceTopology split;
  split.devices.push_back(mk_device("d0", "m30", 30.0));
  split.devices.push_back(mk_device("d1", "m90", 90.0));
  split.channel.latency_s = 0.05;
  auto run = run_system(split, two_module_streams(pass));
  REQUIRE(run.fused.size() == 1);
  CHECK(run.fused[0].fused);

  auto single = run_system(two_module_device(), two_module_streams(pass));
  CHECK(run.fused[0].length->value_m == single.fused[0].length->value_m);
  CHECK(run.fused[0].speed->value_mps == single.fused[0].speed->value_mps);

  SECTION("losing the dwell report degrades to the speed module alone") {
    split.channel.drop_prob = 1.0;
    auto lossy = run_system(split, two_module_streams(pass));
    CHECK(lossy.dropped_messages == 1);
    REQUIRE(lossy.fused.size() == 1);
    CHECK_FALSE(lossy.fused[0].fused);
    CHECK(lossy.fused[0].module_id == "m30");
    // The lossy run never reports a tighter speed than the clean one. (The
    // length stderr is not comparable here: the fallback scales the same
    // speed uncertainty by its own, slightly shorter, dwell.)
    CHECK(lossy.fused[0].speed->stderr_mps >= run.fused[0].speed->stderr_mps);
  }
}

TEST_CASE("system runs are deterministic for a fixed seed") {
  auto pass = default_pass();
  DeviceTopology split;
  split.devices.push_back(mk_device("d0", "m30", 30.0));
  split.devices.push_back(mk_device("d1", "m90", 90.0));
  split.devices.push_back(mk_device("d2", "m45", 45.0));
  split.channel.latency_s = 0.02;
  split.channel.latency_jitter_s = 0.05;
  split.channel.drop_prob = 0.3;
  split.channel.seed = 77;

  std::map<std::string, std::vector<RangeSample>> streams;
  NoiseModel noise;
  noise.gaussian_sigma_m = 0.02;
  for (const auto& [id, angle] :
       std::vector<std::pair<std::string, double>>{
           {"m30", 30.0}, {"m90", 90.0}, {"m45", 45.0}}) {
    SensorConfig s;
    s.beam_angle_deg = angle;
    NoiseModel n = noise;
    n.seed = mix_seed(1234, static_cast<std::uint64_t>(angle));
    streams[id] = synthesize_pass(s, pass, n);
  }

  auto a = run_system(split, streams);
  auto b = run_system(split, streams);
  REQUIRE(a.trace.size() == b.trace.size());
  for (std::size_t i = 0; i < a.trace.size(); ++i) {
    CHECK(a.trace[i].sender_module == b.trace[i].sender_module);
    CHECK(a.trace[i].deliver_t_s == b.trace[i].deliver_t_s);
    CHECK(a.trace[i].dropped == b.trace[i].dropped);
  }
  REQUIRE(a.fused.size() == b.fused.size());
  for (std::size_t i = 0; i < a.fused.size(); ++i) {
    REQUIRE(a.fused[i].length.has_value() == b.fused[i].length.has_value());
    if (a.fused[i].length)
      CHECK(a.fused[i].length->value_m == b.fused[i].length->value_m);
  }
}

TEST_CASE("five modules fuse front and rear speed sources") {
  VehiclePass pass = default_pass();
  DeviceTopology topo;
  DeviceSpec d0;
  d0.device_id = "d0";
  for (double angle : {30.0, 45.0, 90.0, 135.0, 150.0}) {
    SensorConfig s;
    s.beam_angle_deg = angle;
    d0.modules.push_back(
        {"m" + std::to_string(static_cast<int>(angle)), s, Role::kSense});
  }
  d0.modules.push_back({"mm", SensorConfig{}, Role::kMaster});
  topo.devices.push_back(d0);

  std::map<std::string, std::vector<RangeSample>> streams;
  for (double angle : {30.0, 45.0, 90.0, 135.0, 150.0})
    streams["m" + std::to_string(static_cast<int>(angle))] =
        noiseless_stream(angle, pass);

  auto run = run_system(topo, streams);
  REQUIRE(run.fused.size() == 1);
  const auto& f = run.fused[0];
  CHECK(f.fused);
  REQUIRE(f.contributors.size() == 5);
  REQUIRE(f.speed.has_value());
  REQUIRE(f.length.has_value());
  CHECK(std::abs(f.speed->value_mps - 10.0) < 0.05);
  CHECK(std::abs(f.length->value_m - 3.7) < 0.21);

  // The fused speed is never less certain than any contributing module.
  for (const auto& mod : run.modules)
    for (const auto& c : mod.passes)
      if (c.speed) CHECK(f.speed->stderr_mps <= c.speed->stderr_mps);

  SECTION("dropping speed reports never tightens the fused uncertainty") {
    // Same modules, but the four angled ones now reach the master over a
    // lossy channel; the dwell module stays on the master's device.
    DeviceTopology split;
    DeviceSpec h0, h1;
    h0.device_id = "h0";
    SensorConfig s90;
    s90.beam_angle_deg = 90.0;
    h0.modules = {{"m90", s90, Role::kSense},
                  {"hm", SensorConfig{}, Role::kMaster}};
    h1.device_id = "h1";
    for (double angle : {30.0, 45.0, 135.0, 150.0}) {
      SensorConfig s;
      s.beam_angle_deg = angle;
      h1.modules.push_back(
          {"m" + std::to_string(static_cast<int>(angle)), s, Role::kSense});
    }
    h1.modules.push_back({"h1.master", SensorConfig{}, Role::kMaster});
    split.devices = {h0, h1};

    auto clean = run_system(split, streams);
    REQUIRE(clean.fused.size() == 1);
    split.channel.drop_prob = 0.5;
    split.channel.seed = 11;
    auto lossy = run_system(split, streams);
    REQUIRE(lossy.fused.size() == 1);
    CHECK(lossy.dropped_messages >= 1);
    CHECK(lossy.dropped_messages <= 3);
    CHECK(lossy.fused[0].speed->stderr_mps >=
          clean.fused[0].speed->stderr_mps);
    CHECK(lossy.fused[0].length->stderr_m >= clean.fused[0].length->stderr_m);
  }
}
