#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "yatt/rpc.hpp"
#include "yatt/runner.hpp"
#include "yatt/scenario.hpp"

namespace yatt::demo {

// Multi-process run of a scenario: one coordinator owning the step
// clock and N worker processes, one per controller shard, exchanging
// integer round reports over the exactly-once RPC channel. The
// resulting trace is byte-identical to the in-process simulator's.
struct DemoOptions {
  std::string scenario_ref = "builtin:demo";
  // 0 keeps the scenario's values.
  int controllers = 0;
  int steps = 0;
  // Empty skips writing files.
  std::string out_dir;
  double drop_response_rate = 0.25;
  double duplicate_send_rate = 0.10;
  double watchdog_window_s = 2.0;
  double term_grace_s = 1.0;
  bool inject_stall = false;
  int stall_rank = 0;
  int stall_step = 0;
  int stall_round = 1;
  double stall_sleep_s = 60.0;
  // Path of the binary to spawn workers from (argv[0] of this process).
  std::string worker_exe;
};

struct DemoResult {
  int exit_code = 0;
  bool stalled = false;
  std::string failure_reason;
  cli::Scenario scenario;
  std::vector<runner::TraceRow> rows;
  std::string trace_csv;
  std::uint64_t handler_executions = 0;
  std::uint64_t expected_executions = 0;
  std::size_t result_cache_size = 0;
  std::vector<rpc::TransitionRecord> transitions;
  std::vector<int> worker_exit_codes;
};

DemoResult run_demo_coordinator(const DemoOptions& options);

struct WorkerConfig {
  int rank = 0;
  int world_size = 1;
  std::string coord_host = "127.0.0.1";
  int coord_port = 0;
  double duplicate_send_rate = 0;
  std::uint64_t fault_seed = 0;
  bool inject_stall = false;
  int stall_step = 0;
  int stall_round = 1;
  double stall_sleep_s = 60.0;
};

// Reads YATT_RANK, YATT_WORLD_SIZE, YATT_COORD_ADDR (host:port).
WorkerConfig worker_config_from_env();

int run_demo_worker(const WorkerConfig& config);

}  // namespace yatt::demo
