#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <unistd.h>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "yatt/checkpoint.hpp"
#include "yatt/common.hpp"
#include "yatt/demo.hpp"
#include "yatt/errors.hpp"
#include "yatt/runner.hpp"
#include "yatt/scenario.hpp"
#include "yatt/selftest.hpp"

namespace {

namespace fs = std::filesystem;

std::string self_exe_path(const char* argv0) {
  char buffer[4096];
  ssize_t n = ::readlink("/proc/self/exe", buffer, sizeof(buffer) - 1);
  if (n > 0) {
    buffer[n] = '\0';
    return buffer;
  }
  return argv0;
}

void write_text(const fs::path& path, const std::string& text) {
  fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  out << text;
  if (!out) throw yatt::IoError("cannot write " + path.string());
}

std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw yatt::IoError("cannot read " + path.string());
  std::ostringstream buffer;
  buffer << in.rdbuf();
  return buffer.str();
}

int cmd_run(const std::string& scenario_ref, const std::string& out_dir,
            int steps_override) {
  auto scenario = yatt::cli::load_scenario(scenario_ref);
  if (steps_override > 0) scenario.steps = steps_override;
  auto result = yatt::runner::run_scenario(scenario);
  if (!out_dir.empty()) yatt::runner::write_outputs(result, out_dir);
  std::cout << yatt::runner::summarize(result).dump(2) << "\n";
  if (result.oom_failure) {
    std::cerr << "controller hosts cannot hold the rollout payload\n";
    return 2;
  }
  return 0;
}

int cmd_calibrate(const std::string& base_ref, const std::string& targets_path,
                  const std::string& out_dir) {
  auto base = yatt::cli::load_scenario(base_ref);
  auto targets_json = nlohmann::json::parse(read_text(targets_path));
  auto targets = yatt::runner::targets_from_json(targets_json);
  auto fitted = yatt::runner::calibrate_costs(base, targets);
  auto report = yatt::runner::calibration_to_json(fitted);
  std::cout << report.dump(2) << "\n";
  if (!out_dir.empty()) {
    write_text(fs::path(out_dir) / "calibration.json", report.dump(2) + "\n");
    yatt::runner::apply_calibration(base, fitted)
        .to_file((fs::path(out_dir) / "scenario.json").string());
  }
  return 0;
}

int cmd_sweep(const std::string& base_ref, std::vector<int> lengths,
              std::vector<std::uint64_t> seeds, const std::string& out_dir) {
  auto base = yatt::cli::load_scenario(base_ref);
  if (lengths.empty()) lengths = {128, 256, 512, 1024, 2048, 4096};
  if (seeds.empty()) seeds = {1, 2, 3};
  auto rows = yatt::runner::sweep_placement(base, lengths, seeds);
  auto csv = yatt::runner::sweep_csv(rows);
  std::cout << csv;
  if (!out_dir.empty()) write_text(fs::path(out_dir) / "sweep.csv", csv);
  return 0;
}

int cmd_selftest() {
  auto reports = yatt::selftest::run_all();
  std::cout << yatt::selftest::format_report(reports);
  return yatt::selftest::all_passed(reports) ? 0 : 1;
}

int cmd_scenario_list() {
  for (const auto& name : yatt::cli::builtin_scenario_names()) {
    std::cout << name << "\n";
  }
  return 0;
}

int cmd_scenario_dump(const std::string& ref, const std::string& out_path) {
  auto scenario = yatt::cli::load_scenario(ref);
  if (out_path.empty()) {
    std::cout << scenario.to_json().dump(2) << "\n";
  } else {
    scenario.to_file(out_path);
  }
  return 0;
}

int cmd_rpc_demo(const yatt::demo::DemoOptions& options) {
  auto result = yatt::demo::run_demo_coordinator(options);
  std::cout << "steps completed: " << result.rows.size() << "\n"
            << "handler executions: " << result.handler_executions << " of "
            << result.expected_executions << " expected\n"
            << "result cache entries left: " << result.result_cache_size
            << "\n"
            << "component transitions: " << result.transitions.size() << "\n";
  if (result.stalled) {
    std::cout << "stall detected, workers torn down\n";
  }
  if (!result.failure_reason.empty()) {
    std::cout << "failure: " << result.failure_reason << "\n";
  }
  std::cout << (result.exit_code == 0 ? "demo verified\n" : "demo FAILED\n");
  return result.exit_code;
}

int cmd_ckpt_test(const std::string& dir_arg, bool keep) {
  fs::path dir = dir_arg.empty()
                     ? fs::temp_directory_path() /
                           ("yatt-ckpt-" + std::to_string(::getpid()))
                     : fs::path(dir_arg);
  fs::create_directories(dir);
  int failures = 0;
  auto verdict = [&](const char* name, bool ok) {
    std::cout << (ok ? "PASS" : "FAIL") << "  " << name << "\n";
    if (!ok) ++failures;
  };

  yatt::ckpt::ConsumptionState state;
  state.dataset_size = 64;
  state.global_cursor = 16;
  state.shuffle_seed = 5;
  state.bucket_permutation_seed = 6;
  state.dataset_fingerprint = yatt::ckpt::dataset_fingerprint("ckpt-test");

  std::vector<std::string> blobs{"alpha shard", "beta shard", "gamma shard"};
  auto manifest = yatt::ckpt::save_async(dir.string(), 1, blobs, state).await();
  auto loaded = yatt::ckpt::load_resharded(dir.string(),
                                           state.dataset_fingerprint);
  verdict("async save then load returns identical shards",
          manifest.version == 1 && loaded.shard_blobs == blobs &&
              loaded.manifest.consumption == state);

  bool crash_detected = false;
  try {
    yatt::ckpt::WriterOptions failing;
    failing.fail_after_shards = 1;
    yatt::ckpt::save_async(dir.string(), 2, blobs, state, failing).await();
  } catch (const yatt::IoError&) {
    crash_detected = true;
  }
  auto after_crash = yatt::ckpt::load_resharded(dir.string(), 0);
  verdict("interrupted save surfaces IoError and leaves version 1 intact",
          crash_detected && after_crash.manifest.version == 1 &&
              after_crash.shard_blobs == blobs);

  yatt::ckpt::WriterOptions slow;
  slow.throttle_bytes_per_s = 1024;
  slow.chunk_bytes = 64;
  std::vector<std::string> big{std::string(64 * 1024, 'x')};
  auto outcome =
      yatt::ckpt::save_on_demand(dir.string(), 3, big, state, 0.2, slow);
  auto after_abandon = yatt::ckpt::load_resharded(dir.string(), 0);
  verdict("deadline-bounded save abandons cleanly",
          std::holds_alternative<yatt::ckpt::Abandoned>(outcome) &&
              after_abandon.manifest.version == 1);

  auto quick = yatt::ckpt::save_on_demand(dir.string(), 4, blobs, state, 30.0);
  auto after_quick = yatt::ckpt::load_resharded(dir.string(), 0);
  verdict("deadline-bounded save publishes when it fits the budget",
          std::holds_alternative<yatt::ckpt::CheckpointManifest>(quick) &&
              after_quick.manifest.version == 4);

  bool reshard_ok = true;
  for (int save_world : {1, 2, 4, 8}) {
    std::vector<yatt::ckpt::ShardedDataloader> loaders;
    std::vector<std::uint64_t> head;
    for (int r = 0; r < save_world; ++r) {
      loaders.emplace_back(200, 9, save_world, r);
    }
    for (int k = 0; k < 80 / save_world; ++k) {
      for (int r = 0; r < save_world; ++r) head.push_back(loaders[r].next());
    }
    auto snap = loaders[0].state();
    for (int load_world : {1, 2, 4, 8}) {
      std::vector<std::uint64_t> tail;
      std::vector<yatt::ckpt::ShardedDataloader> resumed;
      for (int r = 0; r < load_world; ++r) {
        resumed.emplace_back(snap, load_world, r);
      }
      for (int k = 0; k < 120 / load_world; ++k) {
        for (int r = 0; r < load_world; ++r) tail.push_back(resumed[r].next());
      }
      yatt::ckpt::ShardedDataloader reference(200, 9, 1, 0);
      for (int i = 0; i < 80; ++i) {
        if (reference.next() != head[i]) reshard_ok = false;
      }
      for (int i = 0; i < 120; ++i) {
        if (reference.next() != tail[i]) reshard_ok = false;
      }
    }
  }
  verdict("dataloader stream is identical across world sizes 1,2,4,8",
          reshard_ok);

  if (!keep) fs::remove_all(dir);
  else std::cout << "outputs kept under " << dir << "\n";
  return failures == 0 ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"RLHF orchestration simulator"};
  app.require_subcommand(1);

  std::string scenario_ref = "builtin:table1";
  std::string out_dir;
  int steps_override = 0;
  auto* run = app.add_subcommand("run", "Simulate a scenario and report");
  run->add_option("--scenario", scenario_ref,
                  "builtin:<name> or a scenario JSON path");
  run->add_option("--out", out_dir, "Directory for trace.csv and summary.json");
  run->add_option("--steps", steps_override, "Override the step count");

  std::string base_ref = "builtin:table1";
  std::string targets_path;
  std::string calib_out;
  auto* calibrate =
      app.add_subcommand("calibrate", "Fit cost rates to measured rollouts");
  calibrate->add_option("--base", base_ref,
                        "Scenario providing cluster and workload shape");
  calibrate->add_option("--targets", targets_path,
                        "JSON file with measured rollout totals")
      ->required();
  calibrate->add_option("--out", calib_out,
                        "Directory for calibration.json and scenario.json");

  std::string sweep_base = "builtin:sweep";
  std::vector<int> sweep_lengths;
  std::vector<std::uint64_t> sweep_seeds;
  std::string sweep_out;
  auto* sweep = app.add_subcommand(
      "sweep", "Compare static and replanned placement across lengths");
  sweep->add_option("--base", sweep_base, "Split-partition base scenario");
  sweep->add_option("--lengths", sweep_lengths, "Output lengths to test");
  sweep->add_option("--seeds", sweep_seeds, "Seeds per length");
  sweep->add_option("--out", sweep_out, "Directory for sweep.csv");

  app.add_subcommand("selftest",
                     "Cross-check every subsystem against an oracle");

  auto* scenario = app.add_subcommand("scenario", "Inspect scenarios");
  scenario->require_subcommand(1);
  scenario->add_subcommand("list", "List builtin scenario names");
  std::string dump_ref = "builtin:table1";
  std::string dump_out;
  auto* dump = scenario->add_subcommand("dump", "Print a scenario as JSON");
  dump->add_option("--scenario", dump_ref, "builtin:<name> or a JSON path");
  dump->add_option("--out", dump_out, "Write to a file instead of stdout");

  yatt::demo::DemoOptions demo_options;
  auto* rpc_demo = app.add_subcommand(
      "rpc-demo", "Run one scenario across coordinator and worker processes");
  rpc_demo->add_option("--scenario", demo_options.scenario_ref,
                       "builtin:<name> or a scenario JSON path");
  rpc_demo->add_option("--controllers", demo_options.controllers,
                       "Worker process count (0 keeps the scenario's)");
  rpc_demo->add_option("--steps", demo_options.steps,
                       "Override the step count");
  rpc_demo->add_option("--out", demo_options.out_dir,
                       "Directory for trace.csv and demo_report.json");
  rpc_demo->add_option("--drop-rate", demo_options.drop_response_rate,
                       "Response drop probability injected at the server");
  rpc_demo->add_option("--dup-rate", demo_options.duplicate_send_rate,
                       "Duplicate send probability injected at workers");
  rpc_demo->add_option("--watchdog-window-s", demo_options.watchdog_window_s,
                       "Progress window before declaring a stall");
  rpc_demo->add_option("--term-grace-s", demo_options.term_grace_s,
                       "Grace between SIGTERM and SIGKILL");
  rpc_demo->add_flag("--inject-stall", demo_options.inject_stall,
                     "Make one worker hang to exercise teardown");
  rpc_demo->add_option("--stall-rank", demo_options.stall_rank,
                       "Which worker hangs");
  rpc_demo->add_option("--stall-step", demo_options.stall_step,
                       "Step at which the worker hangs");
  rpc_demo->add_option("--stall-round", demo_options.stall_round,
                       "Round at which the worker hangs");
  rpc_demo->add_option("--stall-sleep-s", demo_options.stall_sleep_s,
                       "How long the hung worker sleeps");

  double worker_dup_rate = 0;
  std::uint64_t worker_fault_seed = 0;
  int worker_stall_step = -1;
  int worker_stall_round = 1;
  double worker_stall_sleep_s = 60.0;
  auto* worker = app.add_subcommand("rpc-demo-worker", "");
  worker->group("");
  worker->add_option("--dup-rate", worker_dup_rate);
  worker->add_option("--fault-seed", worker_fault_seed);
  worker->add_option("--stall-step", worker_stall_step);
  worker->add_option("--stall-round", worker_stall_round);
  worker->add_option("--stall-sleep-s", worker_stall_sleep_s);

  std::string ckpt_dir;
  bool ckpt_keep = false;
  auto* ckpt = app.add_subcommand(
      "ckpt-test", "Exercise checkpoint save, crash, deadline, and reshard");
  ckpt->add_option("--dir", ckpt_dir,
                   "Directory to write checkpoints into (default: temp)");
  ckpt->add_flag("--keep", ckpt_keep, "Keep the directory afterwards");

  CLI11_PARSE(app, argc, argv);

  try {
    if (run->parsed()) return cmd_run(scenario_ref, out_dir, steps_override);
    if (calibrate->parsed())
      return cmd_calibrate(base_ref, targets_path, calib_out);
    if (sweep->parsed())
      return cmd_sweep(sweep_base, sweep_lengths, sweep_seeds, sweep_out);
    if (app.get_subcommand("selftest")->parsed()) return cmd_selftest();
    if (scenario->parsed()) {
      if (scenario->get_subcommand("list")->parsed())
        return cmd_scenario_list();
      return cmd_scenario_dump(dump_ref, dump_out);
    }
    if (rpc_demo->parsed()) {
      demo_options.worker_exe = self_exe_path(argv[0]);
      return cmd_rpc_demo(demo_options);
    }
    if (worker->parsed()) {
      auto config = yatt::demo::worker_config_from_env();
      config.duplicate_send_rate = worker_dup_rate;
      config.fault_seed = worker_fault_seed;
      if (worker_stall_step >= 0) {
        config.inject_stall = true;
        config.stall_step = worker_stall_step;
        config.stall_round = worker_stall_round;
        config.stall_sleep_s = worker_stall_sleep_s;
      }
      return yatt::demo::run_demo_worker(config);
    }
    if (ckpt->parsed()) return cmd_ckpt_test(ckpt_dir, ckpt_keep);
  } catch (const yatt::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
