#include <gtest/gtest.h>
#include <sys/wait.h>
#include <unistd.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>

#include "yatt/demo.hpp"
#include "yatt/errors.hpp"
#include "yatt/runner.hpp"
#include "yatt/scenario.hpp"

namespace yatt {
namespace {

namespace fs = std::filesystem;

fs::path fresh_dir(const std::string& tag) {
  static int counter = 0;
  const fs::path dir = fs::temp_directory_path() /
                       ("yatt-it-" + tag + "-" + std::to_string(::getpid()) +
                        "-" + std::to_string(counter++));
  fs::create_directories(dir);
  return dir;
}

std::string slurp(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  EXPECT_TRUE(in.good()) << path;
  return std::string((std::istreambuf_iterator<char>(in)),
                     std::istreambuf_iterator<char>());
}

int run_cli(const std::string& args) {
  const std::string command =
      std::string(YATTSIM_BIN) + " " + args + " > /dev/null 2>&1";
  const int status = std::system(command.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

TEST(MultiProcessDemo, TraceMatchesTheInProcessSimulator) {
  demo::DemoOptions options;
  options.scenario_ref = "builtin:demo";
  options.worker_exe = YATTSIM_BIN;
  const fs::path dir = fresh_dir("demo");
  options.out_dir = dir.string();

  const demo::DemoResult result = demo::run_demo_coordinator(options);
  EXPECT_EQ(result.exit_code, 0) << result.failure_reason;
  EXPECT_FALSE(result.stalled);
  for (const int code : result.worker_exit_codes) EXPECT_EQ(code, 0);
  EXPECT_EQ(result.handler_executions, result.expected_executions);
  EXPECT_EQ(result.result_cache_size, 0u);

  const runner::RunResult reference = runner::run_scenario(result.scenario);
  EXPECT_EQ(result.trace_csv, runner::to_trace_csv(reference.rows));
  EXPECT_EQ(slurp(dir / "trace.csv"), result.trace_csv);
  fs::remove_all(dir);
}

TEST(MultiProcessDemo, SingleControllerVariantAlsoMatches) {
  demo::DemoOptions options;
  options.scenario_ref = "builtin:demo";
  options.worker_exe = YATTSIM_BIN;
  options.controllers = 1;
  options.steps = 2;
  const fs::path dir = fresh_dir("demo1");
  options.out_dir = dir.string();

  const demo::DemoResult result = demo::run_demo_coordinator(options);
  EXPECT_EQ(result.exit_code, 0) << result.failure_reason;
  ASSERT_EQ(result.rows.size(), 2u);

  const runner::RunResult reference = runner::run_scenario(result.scenario);
  EXPECT_EQ(result.trace_csv, runner::to_trace_csv(reference.rows));
  fs::remove_all(dir);
}

TEST(MultiProcessDemo, InjectedStallTripsTheWatchdogAndKillsWorkers) {
  demo::DemoOptions options;
  options.scenario_ref = "builtin:demo";
  options.worker_exe = YATTSIM_BIN;
  options.inject_stall = true;
  options.stall_rank = 0;
  options.stall_step = 1;
  options.stall_round = 1;
  options.stall_sleep_s = 30.0;
  options.watchdog_window_s = 0.5;
  options.term_grace_s = 0.5;
  const fs::path dir = fresh_dir("stall");
  options.out_dir = dir.string();

  const demo::DemoResult result = demo::run_demo_coordinator(options);
  EXPECT_EQ(result.exit_code, 3);
  EXPECT_TRUE(result.stalled);
  EXPECT_EQ(result.failure_reason.rfind("stalled", 0), 0u)
      << result.failure_reason;
  bool any_killed = false;
  for (const int code : result.worker_exit_codes) {
    if (code < 0) any_killed = true;
  }
  EXPECT_TRUE(any_killed);
  fs::remove_all(dir);
}

TEST(Cli, RunIsByteIdenticalAcrossInvocations) {
  const fs::path a = fresh_dir("runA");
  const fs::path b = fresh_dir("runB");
  ASSERT_EQ(run_cli("run --scenario builtin:demo --out " + a.string()), 0);
  ASSERT_EQ(run_cli("run --scenario builtin:demo --out " + b.string()), 0);
  const std::string trace_a = slurp(a / "trace.csv");
  EXPECT_FALSE(trace_a.empty());
  EXPECT_EQ(trace_a, slurp(b / "trace.csv"));
  EXPECT_EQ(slurp(a / "summary.json"), slurp(b / "summary.json"));
  fs::remove_all(a);
  fs::remove_all(b);
}

TEST(Cli, ScenarioDumpRoundTrips) {
  const fs::path dir = fresh_dir("dump");
  const fs::path file = dir / "table1.json";
  ASSERT_EQ(run_cli("scenario dump --scenario builtin:table1 --out " +
                    file.string()),
            0);
  const cli::Scenario dumped = cli::Scenario::from_file(file.string());
  EXPECT_EQ(dumped.to_json().dump(2),
            cli::builtin_scenario("table1").to_json().dump(2));
  fs::remove_all(dir);
}

TEST(Cli, UnknownScenarioFailsWithTheErrorExitCode) {
  EXPECT_EQ(run_cli("run --scenario builtin:nope --out /tmp/unused"), 2);
}

TEST(Cli, CheckpointDrillPasses) {
  const fs::path dir = fresh_dir("ckpt");
  EXPECT_EQ(run_cli("ckpt-test --dir " + dir.string()), 0);
  fs::remove_all(dir);
}

TEST(Cli, SelftestPasses) {
  EXPECT_EQ(run_cli("selftest"), 0);
}

}  // namespace
}  // namespace yatt
