#include "yatt/selftest.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <random>
#include <sstream>
#include <thread>
#include <vector>

#include <unistd.h>

#include <nlohmann/json.hpp>

#include "yatt/balancer.hpp"
#include "yatt/checkpoint.hpp"
#include "yatt/common.hpp"
#include "yatt/distattn.hpp"
#include "yatt/errors.hpp"
#include "yatt/placement.hpp"
#include "yatt/rpc.hpp"
#include "yatt/runner.hpp"
#include "yatt/scenario.hpp"

namespace yatt::selftest {
namespace {

namespace fs = std::filesystem;

void note(SuiteReport& report, const std::string& message) {
  if (!report.detail.empty()) report.detail += "; ";
  report.detail += message;
  report.passed = false;
}

SuiteReport distattn_equivalence() {
  SuiteReport report{"distattn_equivalence", 0, 0, true, ""};
  const int seq_lens[] = {5, 8, 32};
  const int num_heads_grid[] = {1, 4};
  const int head_dims[] = {4, 16};
  std::uint64_t seed = 0x5eed0001;
  for (int S : seq_lens) {
    for (int H : num_heads_grid) {
      for (int d : head_dims) {
        for (distattn::MaskKind mask :
             {distattn::MaskKind::kFull, distattn::MaskKind::kCausal,
              distattn::MaskKind::kSlidingWindow}) {
          int window = mask == distattn::MaskKind::kSlidingWindow ? 3 : 0;
          auto problem =
              distattn::random_problem(S, d, H, mask, window, seed++);
          auto expected = distattn::reference_attention(problem);
          for (int W : {1, 2, 4}) {
            if (W > S) continue;
            for (int h : {1, 3, H}) {
              if (h > H) continue;
              distattn::ShardLayout layout{W, h};
              auto actual = distattn::allgather_attention(problem, layout);
              double err = distattn::max_rel_error(actual, expected);
              report.max_error = std::max(report.max_error, err);
              ++report.cases;
              if (err > 1e-10) {
                note(report, "S=" + std::to_string(S) + " H=" +
                                 std::to_string(H) + " W=" + std::to_string(W) +
                                 " h=" + std::to_string(h) + " err=" +
                                 format_fixed(err, 12));
              }
            }
          }
          ++report.cases;
          if (H >= 4) {
            auto one = distattn::kv_peak_memory_bytes(problem, {1, 1}, 2);
            auto four = distattn::kv_peak_memory_bytes(problem, {1, 4}, 2);
            if (four != 4 * one) {
              note(report, "kv peak not linear in heads per pass");
            }
          }
        }
      }
    }
  }
  return report;
}

SuiteReport ternary_exhaustive() {
  SuiteReport report{"ternary_exhaustive", 0, 0, true, ""};
  std::mt19937_64 rng(0x7e54a3);
  for (int i = 0; i < 200; ++i) {
    int n = 1 + int(rng() % 512);
    int lo = 1;
    int hi = lo + n - 1;
    int m = lo + int(rng() % std::uint64_t(n));
    double a = 0.1 + (rng() % 1000) / 500.0;
    double b = (rng() % 1000) / 1000.0;
    auto f = [&](int x) {
      double dx = x - m;
      return a * dx * dx + b * std::abs(dx);
    };
    auto result = placement::ternary_search_placement(f, lo, hi);
    int best = lo;
    for (int x = lo + 1; x <= hi; ++x) {
      if (f(x) < f(best)) best = x;
    }
    ++report.cases;
    if (result.best_x != best) {
      note(report, "argmin mismatch at n=" + std::to_string(n));
    }
    int bound = 2 * int(std::ceil(std::log(double(n)) / std::log(1.5))) + 3;
    if (result.evaluations > bound) {
      note(report, "evaluations " + std::to_string(result.evaluations) +
                       " over bound " + std::to_string(bound) + " at n=" +
                       std::to_string(n));
    }
  }
  auto flat = placement::ternary_search_placement([](int) { return 1.0; }, 1, 100);
  ++report.cases;
  if (flat.best_value != 1.0) note(report, "constant objective mishandled");
  return report;
}

SuiteReport balancer_monte_carlo() {
  SuiteReport report{"balancer_monte_carlo", 0, 0, true, ""};
  std::mt19937_64 rng(0xba1a9ce5);
  std::vector<int> lengths(100000);
  for (auto& len : lengths) len = 1 + int(rng() % 1024);
  const int batch = 16;

  auto plan = balancer::sort_and_bucket(lengths, batch, 1);
  double sorted_waste = balancer::padding_waste(plan, lengths);
  report.max_error = sorted_waste;

  balancer::BatchingPlan arrival;
  arrival.batch_size = batch;
  for (std::size_t i = 0; i < lengths.size(); i += batch) {
    std::vector<std::uint32_t> bucket;
    for (std::size_t j = i; j < std::min(lengths.size(), i + batch); ++j) {
      bucket.push_back(std::uint32_t(j));
    }
    arrival.buckets.push_back(std::move(bucket));
  }
  double arrival_waste = balancer::padding_waste(arrival, lengths);

  ++report.cases;
  if (sorted_waste > balancer::waste_bound(batch)) {
    note(report, "sorted waste " + format_fixed(sorted_waste, 6) +
                     " exceeds bound");
  }
  ++report.cases;
  if (sorted_waste > 0.2 * arrival_waste) {
    note(report, "sorted waste not under 20% of arrival-order waste");
  }

  balancer::BatchingPlan monotone = plan;
  std::sort(monotone.buckets.begin(), monotone.buckets.end(),
            [&](const auto& x, const auto& y) {
              return lengths[x.front()] > lengths[y.front()];
            });
  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    auto shuffled = balancer::sort_and_bucket(lengths, batch, seed);
    double biased = balancer::distribution_bias_check(monotone, lengths, 64);
    double flat = balancer::distribution_bias_check(shuffled, lengths, 64);
    ++report.cases;
    if (flat >= biased) {
      note(report, "shuffle did not reduce bias at seed " +
                       std::to_string(seed));
    }
  }
  return report;
}

SuiteReport rpc_fault_injection() {
  SuiteReport report{"rpc_fault_injection", 0, 0, true, ""};
  rpc::Server::Options server_options;
  server_options.faults.drop_response_rate = 0.3;
  server_options.faults.seed = 11;
  rpc::Server server(server_options);
  std::atomic<std::uint64_t> handled{0};
  server.register_handler("echo", [&](const std::string& payload) {
    handled.fetch_add(1);
    return payload;
  });
  server.start();

  const int kThreads = 8;
  const int kCallsPerThread = 25;
  std::atomic<int> mismatches{0};
  std::vector<std::thread> threads;
  for (int t = 0; t < kThreads; ++t) {
    threads.emplace_back([&, t] {
      rpc::Client::Options client_options;
      client_options.faults.duplicate_send_rate = 0.1;
      client_options.faults.seed = 100 + std::uint64_t(t);
      client_options.id_seed = hash_key({0xc11e47, std::uint64_t(t)});
      rpc::Client client("127.0.0.1", server.port(), client_options);
      for (int i = 0; i < kCallsPerThread; ++i) {
        std::string payload = std::to_string(t) + ":" + std::to_string(i);
        if (client.call("echo", payload) != payload) mismatches.fetch_add(1);
      }
    });
  }
  for (auto& thread : threads) thread.join();

  const std::uint64_t total = std::uint64_t(kThreads) * kCallsPerThread;
  report.cases = int(total);
  if (mismatches.load() != 0) {
    note(report, std::to_string(mismatches.load()) + " wrong results");
  }
  if (handled.load() != total) {
    note(report, "expected " + std::to_string(total) + " executions, saw " +
                     std::to_string(handled.load()));
  }
  report.max_error =
      std::abs(double(handled.load()) - double(total)) / double(total);
  for (int i = 0; i < 100 && server.result_cache_size() != 0; ++i) {
    std::this_thread::sleep_for(std::chrono::milliseconds(20));
  }
  if (server.result_cache_size() != 0) {
    note(report, "result cache not drained by acks");
  }
  server.stop();
  return report;
}

SuiteReport checkpoint_reshard() {
  SuiteReport report{"checkpoint_reshard", 0, 0, true, ""};
  const std::uint64_t dataset_size = 101;
  const std::uint64_t shuffle_seed = 99;
  const int base_draws = 40;
  const int tail_draws = 160;

  std::vector<std::uint64_t> reference;
  {
    ckpt::ShardedDataloader loader(dataset_size, shuffle_seed, 1, 0);
    for (int i = 0; i < base_draws + tail_draws; ++i) {
      reference.push_back(loader.next());
    }
  }

  fs::path dir = fs::temp_directory_path() /
                 ("yatt-selftest-" +
                  std::to_string(splitmix64(
                      std::uint64_t(::getpid()) ^ 0x5e1f7e57)));
  fs::create_directories(dir);
  int version = 0;

  for (int save_world : {1, 2, 4}) {
    std::vector<ckpt::ShardedDataloader> savers;
    for (int r = 0; r < save_world; ++r) {
      savers.emplace_back(dataset_size, shuffle_seed, save_world, r);
    }
    std::vector<std::vector<std::uint64_t>> head(save_world);
    for (int r = 0; r < save_world; ++r) {
      for (int k = 0; k < base_draws / save_world; ++k) {
        head[r].push_back(savers[r].next());
      }
    }
    ++report.cases;
    for (int p = 0; p < base_draws; ++p) {
      if (head[p % save_world][p / save_world] != reference[p]) {
        note(report, "pre-save stream diverged at world " +
                         std::to_string(save_world));
        break;
      }
    }

    auto state = savers[0].state();
    std::vector<std::string> blobs;
    for (int r = 0; r < save_world; ++r) {
      blobs.push_back("rank " + std::to_string(r) + " of " +
                      std::to_string(save_world));
    }
    auto manifest =
        ckpt::save_async(dir.string(), ++version, blobs, state).await();
    ++report.cases;
    if (manifest.consumption != state) {
      note(report, "manifest consumption drifted on save");
    }

    auto loaded = ckpt::load_resharded(dir.string(), 0);
    ++report.cases;
    if (loaded.manifest.version != version ||
        loaded.shard_blobs != blobs) {
      note(report, "reloaded shards differ at world " +
                       std::to_string(save_world));
    }

    for (int load_world : {1, 2, 4}) {
      std::vector<std::vector<std::uint64_t>> tail(load_world);
      for (int r = 0; r < load_world; ++r) {
        ckpt::ShardedDataloader resumed(loaded.manifest.consumption,
                                        load_world, r);
        for (int k = 0; k < tail_draws / load_world; ++k) {
          tail[r].push_back(resumed.next());
        }
      }
      ++report.cases;
      for (int p = 0; p < tail_draws; ++p) {
        if (tail[p % load_world][p / load_world] !=
            reference[base_draws + p]) {
          note(report, "resume stream diverged for " +
                           std::to_string(save_world) + "->" +
                           std::to_string(load_world));
          break;
        }
      }
    }
  }

  ++report.cases;
  try {
    ckpt::load_resharded(dir.string(), 0xdeadbeef);
    note(report, "fingerprint mismatch not detected");
  } catch (const FingerprintMismatch&) {
  }

  fs::remove_all(dir);
  return report;
}

double field(const nlohmann::json& j, const char* a, const char* b) {
  return j.at(a).at(b).get<double>();
}

SuiteReport summary_audit() {
  SuiteReport report{"summary_audit", 0, 0, true, ""};
  auto scenario = cli::load_scenario("builtin:balanced16");
  auto result = runner::run_scenario(scenario);
  auto rows = runner::parse_trace_csv(runner::to_trace_csv(result.rows));
  auto summary = runner::summarize(result);

  double wall = 0, rollout = 0, gen = 0, rm = 0, prep = 0, train = 0, swap = 0;
  double busy = 0, idle = 0;
  long long swaps = 0, rounds = 0, forced = 0;
  for (const auto& row : rows) {
    wall += row.step_wall_s;
    rollout += row.rollout_s;
    gen += row.generation_s;
    rm += row.rewarding_s;
    prep += row.preparation_s;
    train += row.training_s;
    swap += row.swap_time_total_s;
    busy += row.busy_gpu_s;
    idle += row.idle_gpu_s;
    swaps += row.swap_count;
    rounds += row.rounds;
    forced += row.forced_accepts;
  }
  auto check = [&](const char* name, double got, double want) {
    ++report.cases;
    double err = std::abs(got - want) / std::max(1.0, std::abs(want));
    report.max_error = std::max(report.max_error, err);
    if (err > 1e-6) note(report, std::string(name) + " not recomputable");
  };
  check("totals.wall_s", field(summary, "totals", "wall_s"), wall);
  check("totals.rollout_s", field(summary, "totals", "rollout_s"), rollout);
  check("totals.generation_s", field(summary, "totals", "generation_s"), gen);
  check("totals.rewarding_s", field(summary, "totals", "rewarding_s"), rm);
  check("totals.preparation_s", field(summary, "totals", "preparation_s"), prep);
  check("totals.training_s", field(summary, "totals", "training_s"), train);
  check("totals.swap_s", field(summary, "totals", "swap_s"), swap);
  check("totals.busy_gpu_s", field(summary, "totals", "busy_gpu_s"), busy);
  check("totals.idle_gpu_s", field(summary, "totals", "idle_gpu_s"), idle);
  check("totals.swap_count", field(summary, "totals", "swap_count"),
        double(swaps));
  check("totals.rounds", field(summary, "totals", "rounds"), double(rounds));
  check("totals.forced_accepts", field(summary, "totals", "forced_accepts"),
        double(forced));
  double n = double(rows.size());
  check("means.step_wall_s", field(summary, "means", "step_wall_s"), wall / n);
  check("means.rollout_s", field(summary, "means", "rollout_s"), rollout / n);
  check("means.rounds", field(summary, "means", "rounds"), double(rounds) / n);
  check("utilization", summary.at("utilization").get<double>(),
        busy / (busy + idle));
  ++report.cases;
  if (summary.at("steps").get<int>() != int(rows.size())) {
    note(report, "step count disagrees with trace");
  }

  for (const auto& name : cli::builtin_scenario_names()) {
    auto s = cli::load_scenario("builtin:" + name);
    auto first = s.to_json();
    auto second = cli::Scenario::from_json(first).to_json();
    ++report.cases;
    if (first != second) note(report, "round trip changed " + name);
  }
  return report;
}

}  // namespace

std::vector<SuiteReport> run_all() {
  return {distattn_equivalence(), ternary_exhaustive(), balancer_monte_carlo(),
          rpc_fault_injection(), checkpoint_reshard(), summary_audit()};
}

bool all_passed(const std::vector<SuiteReport>& reports) {
  return std::all_of(reports.begin(), reports.end(),
                     [](const SuiteReport& r) { return r.passed; });
}

std::string format_report(const std::vector<SuiteReport>& reports) {
  std::ostringstream out;
  for (const auto& r : reports) {
    out << (r.passed ? "PASS" : "FAIL") << "  " << r.name << "  cases="
        << r.cases << "  max_error=" << format_fixed(r.max_error, 9);
    if (!r.detail.empty()) out << "  (" << r.detail << ")";
    out << "\n";
  }
  return out.str();
}

}  // namespace yatt::selftest
