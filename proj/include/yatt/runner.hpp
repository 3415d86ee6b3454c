#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "yatt/controller.hpp"
#include "yatt/scenario.hpp"
#include "yatt/simcore.hpp"

namespace yatt::runner {

// One line of trace.csv. Mirrors StepTrace plus the placement probe's
// pick for the step (-1 when no probe ran).
struct TraceRow {
  int step_index = 0;
  std::string mode;
  int sampler_gpus = 0;
  int genrm_gpus = 0;
  int x_star = -1;
  int rounds = 0;
  int forced_accepts = 0;
  double generation_s = 0;
  double rewarding_s = 0;
  double preparation_s = 0;
  double training_s = 0;
  int swap_count = 0;
  double swap_time_total_s = 0;
  double rollout_s = 0;
  double step_wall_s = 0;
  double busy_gpu_s = 0;
  double idle_gpu_s = 0;
  double bubble_fraction = 0;
};

TraceRow make_trace_row(const sim::StepTrace& trace, int x_star);

std::string trace_csv_header();
std::string trace_csv_line(const TraceRow& row);
std::string to_trace_csv(const std::vector<TraceRow>& rows);
std::vector<TraceRow> parse_trace_csv(const std::string& text);

struct RunResult {
  cli::Scenario scenario;
  ctrl::FeasibilityReport feasibility;
  // True when the controller topology cannot hold the rollout payload;
  // no steps are simulated in that case.
  bool oom_failure = false;
  std::vector<TraceRow> rows;
};

// The batch and per-step context exactly as run_scenario builds them,
// exposed so other frontends (the multi-process demo) stay in lockstep
// with the in-process simulator.
workload::RolloutBatch make_step_batch(const cli::Scenario& s, int step_index);
sim::StepContext make_step_context(const cli::Scenario& s, int step_index);

RunResult run_scenario(const cli::Scenario& s);

double total_wall_s(const RunResult& result);

nlohmann::json summarize(const RunResult& result);

// Writes trace.csv, summary.json, and scenario.json under out_dir.
void write_outputs(const RunResult& result, const std::string& out_dir);

double total_rollout_s(const RunResult& result);

struct CalibrationTarget {
  double reject_rate = 0;
  placement::Mode mode = placement::Mode::kFullColocate;
  // Measured rollout seconds summed over the scenario's steps.
  double total_rollout_s = 0;
};

std::vector<CalibrationTarget> targets_from_json(const nlohmann::json& j);

struct CalibrationResult {
  cluster::StageCostModel costs;
  double swap_bw_bytes_per_s = 0;
  double engine_reload_overhead_s = 0;
  // Sum of squared relative errors across targets at the fitted values.
  double objective = 0;
  double max_rel_error = 0;
  int evaluations = 0;
  int sweeps = 0;
  // Set unless the targets cover both a full-colocate and a
  // split-partition row; fewer constraints cannot pin down the rates.
  bool low_confidence = false;
};

// Fits the generation rate, rewarding rate, swap bandwidth, and engine
// reload overhead to measured rollout totals by coordinate descent over
// multiplicative factors. Throws CalibrationDiverged when the fit stays
// off by more than 25% on any target.
CalibrationResult calibrate_costs(const cli::Scenario& base,
                                  const std::vector<CalibrationTarget>& targets);

// Returns a copy of the scenario with the fitted values applied.
cli::Scenario apply_calibration(const cli::Scenario& base,
                                const CalibrationResult& result);

nlohmann::json calibration_to_json(const CalibrationResult& result);

struct SweepRow {
  int out_len_tokens = 0;
  std::uint64_t seed = 0;
  // Mean generation + scoring seconds per step under a fixed
  // parameter-weighted split versus periodic replanning.
  double weighted_time_s = 0;
  double dynamic_time_s = 0;
  // (weighted - dynamic) / weighted; >= 0 when replanning never loses.
  double improvement = 0;
};

// Compares a fixed parameter-weighted split against periodic replanning
// across output lengths and seeds.
std::vector<SweepRow> sweep_placement(const cli::Scenario& base,
                                      const std::vector<int>& out_lens,
                                      const std::vector<std::uint64_t>& seeds);

std::string sweep_csv(const std::vector<SweepRow>& rows);

}  // namespace yatt::runner
