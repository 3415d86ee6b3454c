#include "yatt/demo.hpp"

#include <atomic>
#include <chrono>
#include <condition_variable>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <mutex>
#include <set>
#include <thread>
#include <utility>

#include <nlohmann/json.hpp>

#include "yatt/common.hpp"
#include "yatt/errors.hpp"
#include "yatt/simcore.hpp"
#include "yatt/workload.hpp"

namespace yatt::demo {

namespace {

using nlohmann::json;

constexpr int kExitVerificationFailed = 1;
constexpr int kExitStalled = 3;
constexpr int kExitWorkerError = 4;

json report_to_json(const sim::ShardRoundReport& report) {
  json microbatches = json::array();
  for (const sim::MicrobatchAggregate& mb : report.microbatches) {
    microbatches.push_back({
        {"controller_rank", mb.controller_rank},
        {"mb_index", mb.mb_index},
        {"sample_count", mb.sample_count},
        {"max_out_len_tokens", mb.max_out_len_tokens},
        {"score_tokens", mb.score_tokens},
    });
  }
  return json{
      {"controller_rank", report.controller_rank},
      {"round", report.round},
      {"active_count", report.active_count},
      {"newly_accepted_count", report.newly_accepted_count},
      {"forced_accept_count", report.forced_accept_count},
      {"pending_count", report.pending_count},
      {"accepted_score_tokens", report.accepted_score_tokens},
      {"accepted_train_units", report.accepted_train_units},
      {"microbatches", microbatches},
  };
}

sim::ShardRoundReport report_from_json(const json& j) {
  sim::ShardRoundReport report;
  report.controller_rank = j.at("controller_rank").get<int>();
  report.round = j.at("round").get<int>();
  report.active_count = j.at("active_count").get<int>();
  report.newly_accepted_count = j.at("newly_accepted_count").get<int>();
  report.forced_accept_count = j.at("forced_accept_count").get<int>();
  report.pending_count = j.at("pending_count").get<int>();
  report.accepted_score_tokens = j.at("accepted_score_tokens").get<long long>();
  report.accepted_train_units = j.at("accepted_train_units").get<long long>();
  for (const json& item : j.at("microbatches")) {
    sim::MicrobatchAggregate mb;
    mb.controller_rank = item.at("controller_rank").get<int>();
    mb.mb_index = item.at("mb_index").get<int>();
    mb.sample_count = item.at("sample_count").get<int>();
    mb.max_out_len_tokens = item.at("max_out_len_tokens").get<int>();
    mb.score_tokens = item.at("score_tokens").get<long long>();
    report.microbatches.push_back(mb);
  }
  return report;
}

// Rendezvous between the RPC handler threads (one per worker submit)
// and the coordinator's step loop. Workers block until the round's
// continue/stop decision is published; decisions stay readable so a
// late handler never misses one.
class RoundBarrier {
 public:
  explicit RoundBarrier(int world_size) : world_size_(world_size) {}

  bool submit(int rank, int step, int round,
              const sim::ShardRoundReport& report) {
    std::unique_lock<std::mutex> lock(mu_);
    if (rank < 0 || rank >= world_size_) {
      throw ConfigError("rank " + std::to_string(rank) + " out of range");
    }
    if (aborted_) throw Error("demo aborted: " + abort_reason_);
    const auto key = std::make_pair(step, round);
    if (decisions_.count(key) > 0) {
      throw ConfigError("second report for an already decided round");
    }
    if (!reports_.emplace(rank, report).second) {
      throw ConfigError("duplicate report from rank " + std::to_string(rank));
    }
    cv_.notify_all();
    cv_.wait(lock, [&] { return aborted_ || decisions_.count(key) > 0; });
    if (aborted_) throw Error("demo aborted: " + abort_reason_);
    return decisions_.at(key);
  }

  std::vector<sim::ShardRoundReport> await_reports() {
    std::unique_lock<std::mutex> lock(mu_);
    cv_.wait(lock, [&] {
      return aborted_ || static_cast<int>(reports_.size()) == world_size_;
    });
    if (aborted_) throw Error("demo aborted: " + abort_reason_);
    std::vector<sim::ShardRoundReport> ordered;
    ordered.reserve(reports_.size());
    for (const auto& [rank, report] : reports_) ordered.push_back(report);
    return ordered;
  }

  void publish(int step, int round, bool keep_going) {
    std::lock_guard<std::mutex> lock(mu_);
    decisions_[{step, round}] = keep_going;
    reports_.clear();
    cv_.notify_all();
  }

  void abort(const std::string& reason) {
    std::lock_guard<std::mutex> lock(mu_);
    if (!aborted_) {
      aborted_ = true;
      abort_reason_ = reason;
    }
    cv_.notify_all();
  }

 private:
  int world_size_;
  mutable std::mutex mu_;
  std::condition_variable cv_;
  std::map<int, sim::ShardRoundReport> reports_;
  std::map<std::pair<int, int>, bool> decisions_;
  bool aborted_ = false;
  std::string abort_reason_;
};

void write_demo_outputs(const DemoResult& result, const std::string& out_dir,
                        const std::vector<rpc::Watchdog::Verdict>& verdicts) {
  namespace fs = std::filesystem;
  std::error_code ec;
  fs::create_directories(out_dir, ec);
  if (ec) throw IoError("cannot create " + out_dir + ": " + ec.message());
  {
    std::ofstream out(fs::path(out_dir) / "trace.csv",
                      std::ios::binary | std::ios::trunc);
    out << result.trace_csv;
  }
  json transitions = json::array();
  for (const rpc::TransitionRecord& t : result.transitions) {
    transitions.push_back({
        {"sequence", t.sequence},
        {"component", t.component},
        {"from", rpc::component_state_name(t.from)},
        {"to", rpc::component_state_name(t.to)},
        {"request_id", t.request_id},
    });
  }
  json ticks = json::array();
  for (const rpc::Watchdog::Verdict& v : verdicts) {
    ticks.push_back(
        {{"tick", v.tick}, {"steps_delta", v.steps_delta}, {"ok", v.ok}});
  }
  json report{
      {"exit_code", result.exit_code},
      {"stalled", result.stalled},
      {"failure_reason", result.failure_reason},
      {"handler_executions", result.handler_executions},
      {"expected_executions", result.expected_executions},
      {"result_cache_size", result.result_cache_size},
      {"worker_exit_codes", result.worker_exit_codes},
      {"transitions", transitions},
      {"watchdog", ticks},
  };
  std::ofstream out(fs::path(out_dir) / "demo_report.json",
                    std::ios::binary | std::ios::trunc);
  out << report.dump(2) << "\n";
}

// Every component must end offloaded after exactly one real wake and
// one real sleep; redundant requests may only add no-op transitions,
// and no request id may appear twice.
bool transitions_consistent(const std::vector<rpc::TransitionRecord>& log,
                            std::string* why) {
  std::set<std::string> ids;
  std::map<std::string, rpc::ComponentState> state;
  std::map<std::string, int> real_wakes;
  std::map<std::string, int> real_sleeps;
  for (const rpc::TransitionRecord& t : log) {
    if (!ids.insert(t.request_id).second) {
      *why = "request id " + t.request_id + " logged twice";
      return false;
    }
    auto it = state.find(t.component);
    if (it != state.end() && it->second != t.from) {
      *why = "transition log for " + t.component + " is not contiguous";
      return false;
    }
    state[t.component] = t.to;
    if (t.from == rpc::ComponentState::kOffloaded &&
        t.to == rpc::ComponentState::kResident) {
      ++real_wakes[t.component];
    }
    if (t.from == rpc::ComponentState::kResident &&
        t.to == rpc::ComponentState::kOffloaded) {
      ++real_sleeps[t.component];
    }
  }
  for (const auto& [component, final_state] : state) {
    if (final_state != rpc::ComponentState::kOffloaded) {
      *why = component + " ended resident";
      return false;
    }
    if (real_wakes[component] != 1 || real_sleeps[component] != 1) {
      *why = component + " saw " + std::to_string(real_wakes[component]) +
             " real wakes and " + std::to_string(real_sleeps[component]) +
             " real sleeps, expected one of each";
      return false;
    }
  }
  return true;
}

}  // namespace

DemoResult run_demo_coordinator(const DemoOptions& options) {
  DemoResult result;
  cli::Scenario scenario = cli::load_scenario(options.scenario_ref);
  if (options.controllers > 0) {
    scenario.controllers.num_controllers = options.controllers;
    scenario.controllers.kind = options.controllers == 1
                                    ? ctrl::TopologyKind::kSingle
                                    : ctrl::TopologyKind::kParallel;
  }
  if (options.steps > 0) scenario.steps = options.steps;
  scenario.validate();
  result.scenario = scenario;
  const int world_size = scenario.controllers.num_controllers;
  if (options.worker_exe.empty()) {
    throw ConfigError("worker executable path is empty");
  }

  rpc::Server::Options server_options;
  server_options.faults.drop_response_rate = options.drop_response_rate;
  server_options.faults.seed = scenario.seed;
  rpc::Server server(server_options);
  server.register_component("sampler");
  server.register_component("genrm");

  RoundBarrier barrier(world_size);
  const std::string scenario_text = scenario.to_json().dump();
  server.register_handler("get_scenario", [&](const std::string&) {
    return scenario_text;
  });
  server.register_handler("submit_round", [&](const std::string& payload) {
    json j;
    try {
      j = json::parse(payload);
    } catch (const json::exception& e) {
      throw ConfigError(std::string("bad submit_round payload: ") + e.what());
    }
    const int rank = j.at("rank").get<int>();
    const int step = j.at("step").get<int>();
    const int round = j.at("round").get<int>();
    const sim::ShardRoundReport report = report_from_json(j.at("report"));
    const bool keep_going = barrier.submit(rank, step, round, report);
    return json{{"continue", keep_going}}.dump();
  });
  server.start();

  std::atomic<std::uint64_t> rounds_done{0};
  rpc::ProcessGroup group({options.term_grace_s, false});
  rpc::Watchdog watchdog(
      [&] { return rounds_done.load(); },
      {1, options.watchdog_window_s},
      [&](const std::string& reason) {
        barrier.abort(reason);
        group.fail_fast(reason);
      });

  const std::string coord_addr =
      "127.0.0.1:" + std::to_string(server.port());
  for (int rank = 0; rank < world_size; ++rank) {
    std::vector<std::string> argv{
        options.worker_exe,
        "rpc-demo-worker",
        "--dup-rate",
        format_fixed(options.duplicate_send_rate, 6),
        "--fault-seed",
        std::to_string(scenario.seed),
    };
    if (options.inject_stall && rank == options.stall_rank) {
      argv.insert(argv.end(),
                  {"--stall-step", std::to_string(options.stall_step),
                   "--stall-round", std::to_string(options.stall_round),
                   "--stall-sleep-s", format_fixed(options.stall_sleep_s, 3)});
    }
    group.spawn(argv, {
                          {"YATT_RANK", std::to_string(rank)},
                          {"YATT_WORLD_SIZE", std::to_string(world_size)},
                          {"YATT_COORD_ADDR", coord_addr},
                      });
  }
  watchdog.start();

  long long total_rounds = 0;
  bool aborted = false;
  try {
    for (int step = 0; step < scenario.steps; ++step) {
      const sim::StepContext ctx = runner::make_step_context(scenario, step);
      placement::PlacementPlan plan;
      plan.mode = scenario.mode;
      const int n = cluster::total_gpus(scenario.cluster);
      if (scenario.mode == placement::Mode::kFullColocate) {
        plan.sampler_gpus = n;
        plan.genrm_gpus = n;
      } else if (scenario.sampler_gpus > 0) {
        plan.sampler_gpus = scenario.sampler_gpus;
        plan.genrm_gpus = n - scenario.sampler_gpus;
      } else {
        const placement::Split split = placement::weighted_placement(
            scenario.sampler_model.param_count, scenario.genrm_model.param_count,
            n);
        plan.sampler_gpus = split.sampler_gpus;
        plan.genrm_gpus = split.genrm_gpus;
      }
      sim::StepAssembler assembler(plan, ctx, step);
      int round = 1;
      while (true) {
        const std::vector<sim::ShardRoundReport> reports =
            barrier.await_reports();
        const bool keep_going = assembler.feed_round(reports);
        barrier.publish(step, round, keep_going);
        ++rounds_done;
        ++total_rounds;
        if (!keep_going) break;
        ++round;
      }
      result.rows.push_back(runner::make_trace_row(assembler.finish(), -1));
    }
  } catch (const Error& e) {
    aborted = true;
    result.failure_reason = e.what();
  }

  watchdog.stop();
  if (aborted && !group.fail_fast_invoked()) {
    group.fail_fast(result.failure_reason);
  }
  result.worker_exit_codes = group.wait_all();

  result.stalled = watchdog.stalled() || group.fail_fast_invoked();
  if (result.stalled && !group.failure_reason().empty()) {
    result.failure_reason = group.failure_reason();
  }
  result.trace_csv = runner::to_trace_csv(result.rows);
  result.handler_executions = server.handler_executions();
  // Per worker: one get_scenario, two wakes, one submit per round, two
  // sleeps.
  result.expected_executions =
      static_cast<std::uint64_t>(world_size) *
      (5 + static_cast<std::uint64_t>(total_rounds));
  result.result_cache_size = server.result_cache_size();
  result.transitions = server.transition_log();

  if (result.stalled) {
    result.exit_code = kExitStalled;
  } else {
    std::string why;
    bool ok = true;
    if (result.handler_executions != result.expected_executions) {
      ok = false;
      why = "handler executed " + std::to_string(result.handler_executions) +
            " times, expected " + std::to_string(result.expected_executions);
    } else if (result.result_cache_size != 0) {
      ok = false;
      why = std::to_string(result.result_cache_size) +
            " unacknowledged results left in the server cache";
    } else if (!transitions_consistent(result.transitions, &why)) {
      ok = false;
    } else {
      for (const int code : result.worker_exit_codes) {
        if (code != 0) {
          ok = false;
          why = "a worker exited with code " + std::to_string(code);
          break;
        }
      }
    }
    if (!ok) {
      result.exit_code = kExitVerificationFailed;
      result.failure_reason = why;
    }
  }

  if (!options.out_dir.empty()) {
    write_demo_outputs(result, options.out_dir, watchdog.verdicts());
  }
  server.stop();
  return result;
}

WorkerConfig worker_config_from_env() {
  WorkerConfig config;
  const char* rank = std::getenv("YATT_RANK");
  const char* world = std::getenv("YATT_WORLD_SIZE");
  const char* addr = std::getenv("YATT_COORD_ADDR");
  if (rank == nullptr || world == nullptr || addr == nullptr) {
    throw ConfigError(
        "worker needs YATT_RANK, YATT_WORLD_SIZE, and YATT_COORD_ADDR");
  }
  config.rank = std::stoi(rank);
  config.world_size = std::stoi(world);
  const std::string address(addr);
  const std::size_t colon = address.rfind(':');
  if (colon == std::string::npos) {
    throw ConfigError("YATT_COORD_ADDR must be host:port, got " + address);
  }
  config.coord_host = address.substr(0, colon);
  config.coord_port = std::stoi(address.substr(colon + 1));
  return config;
}

int run_demo_worker(const WorkerConfig& config) {
  try {
    rpc::Client::Options client_options;
    client_options.timeout_s = 5.0;
    client_options.max_retries = 16;
    client_options.faults.duplicate_send_rate = config.duplicate_send_rate;
    client_options.faults.seed = config.fault_seed;
    client_options.id_seed =
        hash_key({config.fault_seed, 0xea7f00d,
                  static_cast<std::uint64_t>(config.rank)});
    rpc::Client client(config.coord_host, config.coord_port, client_options);

    const cli::Scenario scenario =
        cli::Scenario::from_json(json::parse(client.call("get_scenario", "")));
    client.wake_up("sampler");
    client.wake_up("genrm");

    for (int step = 0; step < scenario.steps; ++step) {
      workload::RolloutBatch batch = runner::make_step_batch(scenario, step);
      sim::ShardState shard =
          sim::make_shard_state(batch, config.world_size, config.rank);
      sim::RoundParams params;
      params.out_dist = workload::drift_schedule(step, scenario.out_dist,
                                                 scenario.drift_rate_per_step);
      params.rejection = scenario.rejection;
      params.seed = scenario.seed;
      params.microbatch_size = scenario.microbatch_size;
      params.max_rounds = scenario.max_rounds;

      int round = 1;
      while (true) {
        const sim::ShardRoundReport report =
            sim::shard_round_output(shard, round, params);
        if (config.inject_stall && step == config.stall_step &&
            round == config.stall_round) {
          std::this_thread::sleep_for(
              std::chrono::duration<double>(config.stall_sleep_s));
        }
        const json request{{"rank", config.rank},
                           {"step", step},
                           {"round", round},
                           {"report", report_to_json(report)}};
        const json reply =
            json::parse(client.call("submit_round", request.dump()));
        if (!reply.at("continue").get<bool>()) break;
        ++round;
      }
    }

    client.sleep_component("sampler");
    client.sleep_component("genrm");
    return 0;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "worker %d failed: %s\n", config.rank, e.what());
    return kExitWorkerError;
  }
}

}  // namespace yatt::demo
