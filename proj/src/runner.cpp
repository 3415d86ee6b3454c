#include "yatt/runner.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>

#include <nlohmann/json.hpp>

#include "yatt/common.hpp"
#include "yatt/errors.hpp"

namespace yatt::runner {

namespace {

namespace fs = std::filesystem;

ctrl::RolloutPayloadSpec step_payload(const cli::Scenario& s) {
  ctrl::RolloutPayloadSpec payload = s.payload;
  payload.num_samples = static_cast<std::uint64_t>(s.global_batch_size);
  return payload;
}

void write_text_file(const fs::path& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out << content;
  if (!out) throw IoError("short write to " + path.string());
}

std::vector<std::string> split_fields(const std::string& line) {
  std::vector<std::string> fields;
  std::string field;
  std::istringstream in(line);
  while (std::getline(in, field, ',')) fields.push_back(field);
  if (!line.empty() && line.back() == ',') fields.emplace_back();
  return fields;
}

double mean_rollout_activity_s(const RunResult& result) {
  if (result.rows.empty()) return 0;
  double total = 0;
  for (const TraceRow& row : result.rows) {
    total += row.generation_s + row.rewarding_s;
  }
  return total / static_cast<double>(result.rows.size());
}

}  // namespace

TraceRow make_trace_row(const sim::StepTrace& trace, int x_star) {
  TraceRow row;
  row.step_index = trace.step_index;
  row.mode = placement::mode_name(trace.mode);
  row.sampler_gpus = trace.sampler_gpus;
  row.genrm_gpus = trace.genrm_gpus;
  row.x_star = x_star;
  row.rounds = trace.rounds;
  row.forced_accepts = trace.forced_accepts;
  row.generation_s = trace.generation_s;
  row.rewarding_s = trace.rewarding_s;
  row.preparation_s = trace.preparation_s;
  row.training_s = trace.training_s;
  row.swap_count = trace.swap_count;
  row.swap_time_total_s = trace.swap_time_total_s;
  row.rollout_s = trace.rollout_s;
  row.step_wall_s = trace.step_wall_s;
  row.busy_gpu_s = trace.busy_gpu_s_total();
  row.idle_gpu_s = trace.idle_gpu_s_total();
  row.bubble_fraction = trace.bubble_fraction;
  return row;
}

std::string trace_csv_header() {
  return "step_index,mode,sampler_gpus,genrm_gpus,x_star,rounds,"
         "forced_accepts,generation_s,rewarding_s,preparation_s,training_s,"
         "swap_count,swap_time_total_s,rollout_s,step_wall_s,busy_gpu_s,"
         "idle_gpu_s,bubble_fraction";
}

std::string trace_csv_line(const TraceRow& row) {
  std::ostringstream out;
  out << row.step_index << ',' << row.mode << ',' << row.sampler_gpus << ','
      << row.genrm_gpus << ',' << row.x_star << ',' << row.rounds << ','
      << row.forced_accepts << ',' << format_fixed(row.generation_s, 9) << ','
      << format_fixed(row.rewarding_s, 9) << ','
      << format_fixed(row.preparation_s, 9) << ','
      << format_fixed(row.training_s, 9) << ',' << row.swap_count << ','
      << format_fixed(row.swap_time_total_s, 9) << ','
      << format_fixed(row.rollout_s, 9) << ','
      << format_fixed(row.step_wall_s, 9) << ','
      << format_fixed(row.busy_gpu_s, 9) << ','
      << format_fixed(row.idle_gpu_s, 9) << ','
      << format_fixed(row.bubble_fraction, 9);
  return out.str();
}

std::string to_trace_csv(const std::vector<TraceRow>& rows) {
  std::string out = trace_csv_header() + "\n";
  for (const TraceRow& row : rows) {
    out += trace_csv_line(row);
    out += '\n';
  }
  return out;
}

std::vector<TraceRow> parse_trace_csv(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line)) throw ConfigError("empty trace");
  if (line != trace_csv_header()) throw ConfigError("unexpected trace header");
  std::vector<TraceRow> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const std::vector<std::string> f = split_fields(line);
    if (f.size() != 18) {
      throw ConfigError("trace row has " + std::to_string(f.size()) +
                        " fields, expected 18");
    }
    TraceRow row;
    try {
      row.step_index = std::stoi(f[0]);
      row.mode = f[1];
      row.sampler_gpus = std::stoi(f[2]);
      row.genrm_gpus = std::stoi(f[3]);
      row.x_star = std::stoi(f[4]);
      row.rounds = std::stoi(f[5]);
      row.forced_accepts = std::stoi(f[6]);
      row.generation_s = std::stod(f[7]);
      row.rewarding_s = std::stod(f[8]);
      row.preparation_s = std::stod(f[9]);
      row.training_s = std::stod(f[10]);
      row.swap_count = std::stoi(f[11]);
      row.swap_time_total_s = std::stod(f[12]);
      row.rollout_s = std::stod(f[13]);
      row.step_wall_s = std::stod(f[14]);
      row.busy_gpu_s = std::stod(f[15]);
      row.idle_gpu_s = std::stod(f[16]);
      row.bubble_fraction = std::stod(f[17]);
    } catch (const std::exception& e) {
      throw ConfigError(std::string("malformed trace row: ") + e.what());
    }
    placement::mode_from_name(row.mode);
    rows.push_back(row);
  }
  return rows;
}

workload::RolloutBatch make_step_batch(const cli::Scenario& s, int step_index) {
  workload::RolloutBatch batch;
  batch.step_index = step_index;
  batch.samples.resize(static_cast<std::size_t>(s.global_batch_size));
  for (int i = 0; i < s.global_batch_size; ++i) {
    workload::RolloutSample& sample = batch.samples[static_cast<std::size_t>(i)];
    sample.sample_id = static_cast<std::uint64_t>(step_index) *
                           static_cast<std::uint64_t>(s.global_batch_size) +
                       static_cast<std::uint64_t>(i);
    sample.prompt_len_tokens = workload::sample_length_keyed(
        s.prompt_dist, s.seed, workload::kPromptLenStream,
        static_cast<std::uint64_t>(step_index), 0, sample.sample_id);
  }
  return batch;
}

sim::StepContext make_step_context(const cli::Scenario& s, int step_index) {
  sim::StepContext ctx;
  ctx.cluster = s.cluster;
  ctx.costs = s.costs;
  ctx.actor_model = s.actor_model;
  ctx.sampler_model = s.sampler_model;
  ctx.genrm_model = s.genrm_model;
  ctx.rejection = s.rejection;
  ctx.out_dist = workload::drift_schedule(step_index, s.out_dist,
                                          s.drift_rate_per_step);
  ctx.microbatch_size = s.microbatch_size;
  ctx.num_controllers = s.controllers.num_controllers;
  ctx.seed = s.seed;
  ctx.max_rounds = s.max_rounds;
  ctx.payload_transfer_s =
      ctrl::controller_transfer_time_s(step_payload(s), s.controllers);
  return ctx;
}

RunResult run_scenario(const cli::Scenario& s) {
  s.validate();
  RunResult result;
  result.scenario = s;
  result.feasibility =
      ctrl::check_controller_feasibility(s.controllers, step_payload(s));
  if (!result.feasibility.fits) {
    result.oom_failure = true;
    return result;
  }

  const int n = cluster::total_gpus(s.cluster);
  placement::PlacementPlan plan;
  plan.mode = s.mode;
  plan.dynamic = s.dynamic_placement;
  plan.replan_interval_steps = s.replan_interval_steps;
  if (s.mode == placement::Mode::kFullColocate) {
    plan.sampler_gpus = n;
    plan.genrm_gpus = n;
  } else if (s.sampler_gpus > 0) {
    plan.sampler_gpus = s.sampler_gpus;
    plan.genrm_gpus = n - s.sampler_gpus;
  } else {
    const placement::Split split = placement::weighted_placement(
        s.sampler_model.param_count, s.genrm_model.param_count, n);
    plan.sampler_gpus = split.sampler_gpus;
    plan.genrm_gpus = split.genrm_gpus;
  }

  const bool replannable =
      s.dynamic_placement && s.mode != placement::Mode::kFullColocate;
  placement::Replanner replanner(replannable ? s.replan_interval_steps : 0,
                                 plan.sampler_gpus);
  const int probe_lo = std::max(1, s.sampler_model.min_gpus);
  const int probe_hi = std::min(n - 1, n - s.genrm_model.min_gpus);

  std::optional<sim::WorkloadSnapshot> snapshot;
  for (int step = 0; step < s.steps; ++step) {
    const sim::StepContext ctx = make_step_context(s, step);
    int x_star = -1;
    if (replannable && snapshot && replanner.due(step) && probe_lo <= probe_hi) {
      const auto probe = [&](int sampler_gpus) {
        return sim::simulate_round(*snapshot, sampler_gpus, n - sampler_gpus, ctx)
            .round_span_s;
      };
      const placement::Replanner::Outcome outcome =
          replanner.consider(probe, probe_lo, probe_hi);
      x_star = outcome.sampler_gpus;
      if (outcome.switched) {
        plan.sampler_gpus = outcome.sampler_gpus;
        plan.genrm_gpus = n - outcome.sampler_gpus;
      }
    }
    workload::RolloutBatch batch = make_step_batch(s, step);
    sim::StepResult step_result = sim::run_rlhf_step(plan, batch, ctx);
    snapshot = std::move(step_result.snapshot);
    result.rows.push_back(make_trace_row(step_result.trace, x_star));
  }
  return result;
}

double total_wall_s(const RunResult& result) {
  double total = 0;
  for (const TraceRow& row : result.rows) total += row.step_wall_s;
  return total;
}

nlohmann::json summarize(const RunResult& result) {
  const cli::Scenario& s = result.scenario;
  nlohmann::json totals;
  double wall = 0, rollout = 0, gen = 0, rm = 0, prep = 0, train = 0, swap = 0;
  double busy = 0, idle = 0, bubble = 0;
  long long swap_count = 0, rounds = 0, forced = 0;
  nlohmann::json x_star_trajectory = nlohmann::json::array();
  for (const TraceRow& row : result.rows) {
    wall += row.step_wall_s;
    rollout += row.rollout_s;
    gen += row.generation_s;
    rm += row.rewarding_s;
    prep += row.preparation_s;
    train += row.training_s;
    swap += row.swap_time_total_s;
    busy += row.busy_gpu_s;
    idle += row.idle_gpu_s;
    bubble += row.bubble_fraction;
    swap_count += row.swap_count;
    rounds += row.rounds;
    forced += row.forced_accepts;
    x_star_trajectory.push_back(row.x_star);
  }
  totals["wall_s"] = wall;
  totals["rollout_s"] = rollout;
  totals["generation_s"] = gen;
  totals["rewarding_s"] = rm;
  totals["preparation_s"] = prep;
  totals["training_s"] = train;
  totals["swap_s"] = swap;
  totals["swap_count"] = swap_count;
  totals["rounds"] = rounds;
  totals["forced_accepts"] = forced;
  totals["busy_gpu_s"] = busy;
  totals["idle_gpu_s"] = idle;

  nlohmann::json summary;
  summary["scenario"] = s.name;
  summary["seed"] = s.seed;
  summary["mode"] = placement::mode_name(s.mode);
  summary["steps"] = result.rows.size();
  summary["oom_failure"] = result.oom_failure;
  summary["feasibility"] = {
      {"fits", result.feasibility.fits},
      {"per_controller_bytes", result.feasibility.per_controller_bytes},
      {"usable_bytes", result.feasibility.usable_bytes},
      {"headroom_bytes", result.feasibility.headroom_bytes},
  };
  summary["totals"] = totals;
  summary["x_star_trajectory"] = x_star_trajectory;
  if (!result.rows.empty()) {
    const double steps = static_cast<double>(result.rows.size());
    summary["means"] = {
        {"step_wall_s", wall / steps},
        {"rollout_s", rollout / steps},
        {"rounds", static_cast<double>(rounds) / steps},
        {"bubble_fraction", bubble / steps},
    };
    summary["utilization"] =
        busy + idle > 0 ? busy / (busy + idle) : 0.0;
    summary["final_placement"] = {
        {"sampler_gpus", result.rows.back().sampler_gpus},
        {"genrm_gpus", result.rows.back().genrm_gpus},
    };
  }
  return summary;
}

void write_outputs(const RunResult& result, const std::string& out_dir) {
  std::error_code ec;
  fs::create_directories(out_dir, ec);
  if (ec) throw IoError("cannot create " + out_dir + ": " + ec.message());
  write_text_file(fs::path(out_dir) / "trace.csv", to_trace_csv(result.rows));
  write_text_file(fs::path(out_dir) / "summary.json",
                  summarize(result).dump(2) + "\n");
  write_text_file(fs::path(out_dir) / "scenario.json",
                  result.scenario.to_json().dump(2) + "\n");
}

double total_rollout_s(const RunResult& result) {
  double total = 0;
  for (const TraceRow& row : result.rows) total += row.rollout_s;
  return total;
}

std::vector<CalibrationTarget> targets_from_json(const nlohmann::json& j) {
  std::vector<CalibrationTarget> targets;
  try {
    for (const nlohmann::json& item : j.at("targets")) {
      CalibrationTarget target;
      target.reject_rate = item.at("reject_rate").get<double>();
      target.mode = placement::mode_from_name(item.at("mode").get<std::string>());
      target.total_rollout_s = item.at("total_rollout_s").get<double>();
      targets.push_back(target);
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("bad calibration targets: ") + e.what());
  }
  return targets;
}

CalibrationResult calibrate_costs(const cli::Scenario& base,
                                  const std::vector<CalibrationTarget>& targets) {
  if (targets.empty()) throw ConfigError("calibration needs at least one target");
  bool has_full = false;
  bool has_split = false;
  for (const CalibrationTarget& target : targets) {
    if (target.total_rollout_s <= 0) {
      throw ConfigError("calibration target totals must be positive");
    }
    if (target.mode == placement::Mode::kFullColocate) {
      has_full = true;
    } else {
      has_split = true;
    }
  }

  CalibrationResult out;
  out.low_confidence = !(has_full && has_split);
  int evaluations = 0;

  cli::Scenario work = base;
  work.sampler_gpus = 0;
  work.dynamic_placement = false;

  const auto predict = [&](const CalibrationTarget& target) {
    cli::Scenario s = work;
    s.mode = target.mode;
    s.rejection.reject_rate = target.reject_rate;
    const RunResult run = run_scenario(s);
    if (run.oom_failure) {
      throw ConfigError("calibration scenario exceeds controller memory");
    }
    ++evaluations;
    return total_rollout_s(run);
  };
  const auto objective = [&] {
    double sum = 0;
    for (const CalibrationTarget& target : targets) {
      const double rel =
          (predict(target) - target.total_rollout_s) / target.total_rollout_s;
      sum += rel * rel;
    }
    return sum;
  };

  double best = objective();
  const double factors[] = {0.5, 0.8, 0.9, 0.95, 1.05, 1.1, 1.25, 2.0};
  const int max_sweeps = 60;
  int sweeps = 0;
  while (sweeps < max_sweeps) {
    ++sweeps;
    bool improved = false;
    double* const params[] = {&work.costs.gen_seconds_per_token,
                              &work.costs.rm_seconds_per_token,
                              &work.cluster.swap_bw_bytes_per_s,
                              &work.cluster.engine_reload_overhead_s};
    for (double* param : params) {
      const double original = *param;
      double chosen = original;
      for (const double factor : factors) {
        *param = original * factor;
        const double candidate = objective();
        if (candidate + 1e-12 < best) {
          best = candidate;
          chosen = *param;
          improved = true;
        }
      }
      *param = chosen;
    }
    if (!improved) break;
  }

  out.costs = work.costs;
  out.swap_bw_bytes_per_s = work.cluster.swap_bw_bytes_per_s;
  out.engine_reload_overhead_s = work.cluster.engine_reload_overhead_s;
  out.objective = best;
  out.sweeps = sweeps;
  for (const CalibrationTarget& target : targets) {
    const double rel = std::abs(predict(target) - target.total_rollout_s) /
                       target.total_rollout_s;
    out.max_rel_error = std::max(out.max_rel_error, rel);
  }
  out.evaluations = evaluations;
  if (out.max_rel_error > 0.25) {
    throw CalibrationDiverged("calibration finished " +
                              format_fixed(out.max_rel_error * 100, 1) +
                              "% off its worst target");
  }
  return out;
}

cli::Scenario apply_calibration(const cli::Scenario& base,
                                const CalibrationResult& result) {
  cli::Scenario s = base;
  s.costs = result.costs;
  s.cluster.swap_bw_bytes_per_s = result.swap_bw_bytes_per_s;
  s.cluster.engine_reload_overhead_s = result.engine_reload_overhead_s;
  return s;
}

nlohmann::json calibration_to_json(const CalibrationResult& result) {
  return nlohmann::json{
      {"costs",
       {{"gen_seconds_per_token", result.costs.gen_seconds_per_token},
        {"rm_seconds_per_token", result.costs.rm_seconds_per_token},
        {"train_seconds_per_unit", result.costs.train_seconds_per_unit},
        {"fixed_stage_overhead_s", result.costs.fixed_stage_overhead_s},
        {"scaling_exponent", result.costs.scaling_exponent}}},
      {"swap_bw_bytes_per_s", result.swap_bw_bytes_per_s},
      {"engine_reload_overhead_s", result.engine_reload_overhead_s},
      {"objective", result.objective},
      {"max_rel_error", result.max_rel_error},
      {"evaluations", result.evaluations},
      {"sweeps", result.sweeps},
      {"low_confidence", result.low_confidence},
  };
}

std::vector<SweepRow> sweep_placement(const cli::Scenario& base,
                                      const std::vector<int>& out_lens,
                                      const std::vector<std::uint64_t>& seeds) {
  if (base.mode == placement::Mode::kFullColocate) {
    throw ConfigError("placement sweep needs a split-partition scenario");
  }
  if (out_lens.size() < 2) {
    throw ConfigError("placement sweep needs at least two lengths");
  }
  if (seeds.empty()) {
    throw ConfigError("placement sweep needs at least one seed");
  }
  std::vector<SweepRow> rows;
  for (const int out_len : out_lens) {
    for (const std::uint64_t seed : seeds) {
      cli::Scenario s = base;
      s.seed = seed;
      s.out_dist.kind = workload::DistKind::kConstant;
      s.out_dist.p1 = out_len;
      s.out_dist.p2 = 0;
      s.out_dist.max_len_tokens = std::max(s.out_dist.max_len_tokens, out_len);
      s.sampler_gpus = 0;

      SweepRow row;
      row.out_len_tokens = out_len;
      row.seed = seed;
      s.dynamic_placement = false;
      row.weighted_time_s = mean_rollout_activity_s(run_scenario(s));
      s.dynamic_placement = true;
      row.dynamic_time_s = mean_rollout_activity_s(run_scenario(s));
      row.improvement =
          row.weighted_time_s > 0
              ? (row.weighted_time_s - row.dynamic_time_s) / row.weighted_time_s
              : 0.0;
      rows.push_back(row);
    }
  }
  return rows;
}

std::string sweep_csv(const std::vector<SweepRow>& rows) {
  std::string out =
      "out_len_tokens,seed,weighted_time_s,dynamic_time_s,improvement\n";
  for (const SweepRow& row : rows) {
    out += std::to_string(row.out_len_tokens);
    out += ',';
    out += std::to_string(row.seed);
    out += ',';
    out += format_fixed(row.weighted_time_s, 9);
    out += ',';
    out += format_fixed(row.dynamic_time_s, 9);
    out += ',';
    out += format_fixed(row.improvement, 9);
    out += '\n';
  }
  return out;
}

}  // namespace yatt::runner
