#include <cstdio>
#include <exception>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "roadscan/experiment.hpp"
#include "roadscan/io.hpp"

namespace rs = roadscan;

namespace {

struct CommonOpts {
  std::string scenario_path;
  std::optional<std::uint64_t> seed;
  std::string out_prefix;
  std::string preset;
  std::optional<int> repetitions;
};

void add_common(CLI::App* cmd, CommonOpts& opts) {
  // No ExistingFile check: a missing file should surface through the same
  // JSON error report as every other failure.
  cmd->add_option("scenario", opts.scenario_path, "Scenario JSON file")
      ->required();
  cmd->add_option("--seed", opts.seed, "Override the scenario noise seed");
  cmd->add_option("--out", opts.out_prefix, "Output path prefix");
  cmd->add_option("--preset", opts.preset,
                  "Noise preset override (paper-calibrated|noiseless)");
  cmd->add_option("--reps", opts.repetitions,
                  "Override the scenario repetition count");
}

rs::ScenarioSpec load_spec(const CommonOpts& opts) {
  auto spec = rs::load_json_file(opts.scenario_path).get<rs::ScenarioSpec>();
  if (!opts.preset.empty()) {
    const auto seed = spec.noise.seed;
    spec.noise = rs::noise_preset(opts.preset);
    spec.noise.seed = seed;
  }
  if (opts.seed) spec.noise.seed = *opts.seed;
  if (opts.repetitions) spec.repetitions = *opts.repetitions;
  if (!opts.out_prefix.empty()) spec.output_prefix = opts.out_prefix;
  if (spec.output_prefix.empty())
    spec.output_prefix =
        std::filesystem::path(opts.scenario_path).stem().string();
  validate(spec);
  return spec;
}

void ensure_parent_dir(const std::string& prefix) {
  const auto parent = std::filesystem::path(prefix).parent_path();
  if (!parent.empty()) std::filesystem::create_directories(parent);
}

int cmd_run(const CommonOpts& opts) {
  auto spec = load_spec(opts);
  auto result = rs::run_scenario(spec);
  ensure_parent_dir(spec.output_prefix);
  const std::string csv_path = spec.output_prefix + "_aggregate.csv";
  const std::string jsonl_path = spec.output_prefix + "_passes.jsonl";
  rs::write_text_file(csv_path, rs::aggregate_csv(result.cells));
  rs::write_text_file(jsonl_path, rs::pass_records_jsonl(spec, result));
  std::cout << "scenario: " << spec.name << "\n"
            << "cells: " << result.cells.size() << "\n"
            << "passes: " << result.passes.size() << "\n"
            << "excluded: " << result.total_excluded << "\n"
            << "wrote " << csv_path << "\n"
            << "wrote " << jsonl_path << "\n";
  for (const auto& [source, n] : result.excluded_by_source)
    std::cout << "excluded[" << source << "]: " << n << "\n";
  return 0;
}

int cmd_sweep(const CommonOpts& opts, const std::vector<double>& angles) {
  auto spec = load_spec(opts);
  auto points = rs::sweep_angles(spec, angles);
  ensure_parent_dir(spec.output_prefix);
  const std::string csv_path = spec.output_prefix + "_sweep.csv";
  rs::write_text_file(csv_path, rs::sweep_csv(points));
  std::cout << "scenario: " << spec.name << "\n"
            << "angles: " << points.size() << "\n"
            << "wrote " << csv_path << "\n";
  return 0;
}

int cmd_synth(const CommonOpts& opts, int rep) {
  auto spec = load_spec(opts);
  const std::uint64_t run_seed =
      spec.noise.seed + static_cast<std::uint64_t>(rep);
  const auto vehicle =
      rs::realize_vehicle(spec, spec.speeds_mps.front(), run_seed);
  const auto streams = rs::realize_streams(spec, vehicle, run_seed);
  ensure_parent_dir(spec.output_prefix);
  for (const auto& dev : spec.topology.devices)
    for (const auto& m : dev.modules) {
      if (m.role != rs::Role::kSense) continue;
      const auto& raw = streams.at(m.module_id);
      std::ostringstream raw_csv;
      rs::write_samples_csv(raw_csv, raw);
      const std::string raw_path =
          spec.output_prefix + "_" + m.module_id + "_samples.csv";
      rs::write_text_file(raw_path, raw_csv.str());
      auto fs = rs::filter_stream(raw, rs::FilterConfig{}, m.sensor);
      std::ostringstream f_csv;
      rs::write_filtered_csv(f_csv, fs);
      const std::string f_path =
          spec.output_prefix + "_" + m.module_id + "_filtered.csv";
      rs::write_text_file(f_path, f_csv.str());
      std::cout << "wrote " << raw_path << "\n"
                << "wrote " << f_path << "\n";
    }
  return 0;
}

int cmd_trace(const CommonOpts& opts, int rep) {
  auto spec = load_spec(opts);
  const std::uint64_t run_seed =
      spec.noise.seed + static_cast<std::uint64_t>(rep);
  const auto vehicle =
      rs::realize_vehicle(spec, spec.speeds_mps.front(), run_seed);
  const auto streams = rs::realize_streams(spec, vehicle, run_seed);
  auto run = rs::run_system(spec.topology, streams);
  ensure_parent_dir(spec.output_prefix);
  std::ostringstream os;
  for (const auto& msg : run.trace) os << rs::message_json(msg).dump() << '\n';
  const std::string path = spec.output_prefix + "_trace.jsonl";
  rs::write_text_file(path, os.str());
  std::cout << "messages: " << run.trace.size() << "\n"
            << "fused passes: " << run.fused.size() << "\n"
            << "wrote " << path << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Roadside ultrasonic vehicle characterisation simulator"};
  app.require_subcommand(1);

  CommonOpts run_opts, sweep_opts, synth_opts, trace_opts;
  std::vector<double> angles;
  int synth_rep = 0, trace_rep = 0;

  auto* run_cmd =
      app.add_subcommand("run", "Run a scenario and write aggregate tables");
  add_common(run_cmd, run_opts);

  auto* sweep_cmd =
      app.add_subcommand("sweep", "Error-versus-angle series for a scenario");
  add_common(sweep_cmd, sweep_opts);
  sweep_cmd
      ->add_option("--angles", angles,
                   "Comma-separated beam angles in degrees")
      ->required()
      ->delimiter(',');

  auto* synth_cmd = app.add_subcommand(
      "synth", "Write one repetition's raw and filtered streams as CSV");
  add_common(synth_cmd, synth_opts);
  synth_cmd->add_option("--rep", synth_rep, "Repetition index to synthesize")
      ->check(CLI::NonNegativeNumber);

  auto* trace_cmd = app.add_subcommand(
      "trace", "Write one repetition's message trace as JSON lines");
  add_common(trace_cmd, trace_opts);
  trace_cmd->add_option("--rep", trace_rep, "Repetition index to trace")
      ->check(CLI::NonNegativeNumber);

  CLI11_PARSE(app, argc, argv);

  try {
    if (run_cmd->parsed()) return cmd_run(run_opts);
    if (sweep_cmd->parsed()) return cmd_sweep(sweep_opts, angles);
    if (synth_cmd->parsed()) return cmd_synth(synth_opts, synth_rep);
    if (trace_cmd->parsed()) return cmd_trace(trace_opts, trace_rep);
  } catch (const rs::pass_error& e) {
    rs::json err{{"status", "error"},
                 {"fault", rs::fault_name(e.fault())},
                 {"message", e.what()}};
    std::cerr << err.dump() << "\n";
    return 2;
  } catch (const std::exception& e) {
    rs::json err{{"status", "error"}, {"message", e.what()}};
    std::cerr << err.dump() << "\n";
    return 1;
  }
  return 1;
}
