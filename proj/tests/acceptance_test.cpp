#include <gtest/gtest.h>
#include <unistd.h>

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <random>
#include <string>
#include <thread>
#include <vector>

#include "yatt/balancer.hpp"
#include "yatt/checkpoint.hpp"
#include "yatt/common.hpp"
#include "yatt/controller.hpp"
#include "yatt/distattn.hpp"
#include "yatt/errors.hpp"
#include "yatt/placement.hpp"
#include "yatt/rpc.hpp"
#include "yatt/runner.hpp"
#include "yatt/scenario.hpp"

namespace yatt {
namespace {

namespace fs = std::filesystem;

constexpr std::uint64_t kGiB = 1ULL << 30;
constexpr std::uint64_t kMiB = 1ULL << 20;

double seconds_since(std::chrono::steady_clock::time_point start) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - start)
      .count();
}

void announce(int criterion, const std::string& detail) {
  const bool ok = !::testing::Test::HasFailure();
  std::printf("[CRITERION %d] %s - %s\n", criterion, ok ? "PASS" : "FAIL",
              detail.c_str());
  std::fflush(stdout);
}

fs::path fresh_dir(const std::string& tag) {
  static int counter = 0;
  const fs::path dir = fs::temp_directory_path() /
                       ("yatt-accept-" + tag + "-" + std::to_string(::getpid()) +
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

TEST(Acceptance, Criterion1RolloutTotalsAcrossRejectionRates) {
  const auto start = std::chrono::steady_clock::now();
  const double rates[4] = {0.10, 0.20, 0.30, 0.40};
  const double full_targets[4] = {1987.1, 2350.6, 2838.4, 3457.3};
  const double partial_targets[4] = {1509.1, 1968.5, 2315.9, 2684.4};
  constexpr double kPredictionTolerance = 0.10;
  constexpr double kSavingLo = 0.15;
  constexpr double kSavingHi = 0.25;
  constexpr double kBudgetS = 30.0;

  const cli::Scenario base = cli::builtin_scenario("table1");
  std::vector<runner::CalibrationTarget> anchors;
  anchors.push_back(
      {rates[0], placement::Mode::kFullColocate, full_targets[0]});
  anchors.push_back(
      {rates[0], placement::Mode::kPartialColocate, partial_targets[0]});
  const runner::CalibrationResult fit = runner::calibrate_costs(base, anchors);
  EXPECT_FALSE(fit.low_confidence);
  const cli::Scenario tuned = runner::apply_calibration(base, fit);

  double worst_prediction = 0;
  double saving_lo = 1.0;
  double saving_hi = 0.0;
  for (int i = 0; i < 4; ++i) {
    cli::Scenario full = tuned;
    full.mode = placement::Mode::kFullColocate;
    full.sampler_gpus = 0;
    full.rejection.reject_rate = rates[i];
    cli::Scenario partial = tuned;
    partial.mode = placement::Mode::kPartialColocate;
    partial.sampler_gpus = 0;
    partial.rejection.reject_rate = rates[i];

    const double full_total = runner::total_rollout_s(runner::run_scenario(full));
    const double partial_total =
        runner::total_rollout_s(runner::run_scenario(partial));

    if (i > 0) {
      const double full_err =
          std::abs(full_total - full_targets[i]) / full_targets[i];
      const double partial_err =
          std::abs(partial_total - partial_targets[i]) / partial_targets[i];
      EXPECT_LE(full_err, kPredictionTolerance)
          << "full mode at " << rates[i] << ": simulated " << full_total
          << " vs " << full_targets[i];
      EXPECT_LE(partial_err, kPredictionTolerance)
          << "partial mode at " << rates[i] << ": simulated " << partial_total
          << " vs " << partial_targets[i];
      worst_prediction = std::max({worst_prediction, full_err, partial_err});
    }

    const double saving = (full_total - partial_total) / full_total;
    EXPECT_GE(saving, kSavingLo) << "saving at rate " << rates[i];
    EXPECT_LE(saving, kSavingHi) << "saving at rate " << rates[i];
    saving_lo = std::min(saving_lo, saving);
    saving_hi = std::max(saving_hi, saving);
  }
  const double elapsed = seconds_since(start);
  EXPECT_LT(elapsed, kBudgetS);
  announce(1, "worst prediction error " +
                  format_fixed(worst_prediction * 100, 1) + "% (limit 10%), " +
                  "savings " + format_fixed(saving_lo * 100, 1) + "-" +
                  format_fixed(saving_hi * 100, 1) + "% (window 15-25%), " +
                  format_fixed(elapsed, 1) + " s");
}

TEST(Acceptance, Criterion2SwapCountLaw) {
  cli::Scenario base = cli::builtin_scenario("balanced16");
  base.steps = 3;
  base.global_batch_size = 32;

  int scenarios = 0;
  int rows_checked = 0;
  for (const double reject : {0.0, 0.15, 0.30, 0.45, 0.60}) {
    for (const std::uint64_t seed : {101ULL, 202ULL}) {
      for (const placement::Mode mode : {placement::Mode::kFullColocate,
                                         placement::Mode::kPartialColocate}) {
        cli::Scenario s = base;
        s.rejection.reject_rate = reject;
        s.seed = seed;
        s.mode = mode;
        s.sampler_gpus = 0;
        const runner::RunResult result = runner::run_scenario(s);
        ASSERT_EQ(result.rows.size(), 3u);
        for (const runner::TraceRow& row : result.rows) {
          if (mode == placement::Mode::kFullColocate) {
            EXPECT_EQ(row.swap_count, 2 * row.rounds + 1)
                << "reject=" << reject << " seed=" << seed
                << " step=" << row.step_index;
          } else {
            EXPECT_EQ(row.swap_count, 1)
                << "reject=" << reject << " seed=" << seed
                << " step=" << row.step_index;
          }
          ++rows_checked;
        }
        ++scenarios;
      }
    }
  }
  EXPECT_EQ(scenarios, 20);
  announce(2, std::to_string(scenarios) + " scenarios, " +
                  std::to_string(rows_checked) +
                  " trace rows: full = 2R+1 swaps, partial = 1 swap");
}

TEST(Acceptance, Criterion3TernarySearchExactness) {
  const auto start = std::chrono::steady_clock::now();
  constexpr double kBudgetS = 5.0;
  std::mt19937_64 rng(0x7357c0de);

  int cases = 0;
  int max_evals_seen = 0;
  for (int trial = 0; trial < 220; ++trial) {
    const int n = 1 + static_cast<int>(rng() % 512);
    const int m = 1 + static_cast<int>(rng() % static_cast<std::uint64_t>(n));
    const double a = 1.0 + static_cast<double>(rng() % 4);
    const double b = static_cast<double>(rng() % 3);
    const auto f = [&](int x) {
      const double dx = std::abs(x - m);
      return a * dx * dx + b * dx;
    };

    int exhaustive = 1;
    for (int x = 2; x <= n; ++x) {
      if (f(x) < f(exhaustive)) exhaustive = x;
    }

    const placement::TernarySearchResult result =
        placement::ternary_search_placement(f, 1, n);
    EXPECT_EQ(result.best_x, exhaustive) << "n=" << n << " m=" << m;
    const int budget =
        2 * static_cast<int>(std::ceil(std::log(static_cast<double>(n)) /
                                       std::log(1.5))) +
        3;
    EXPECT_LE(result.evaluations, budget) << "n=" << n;
    max_evals_seen = std::max(max_evals_seen, result.evaluations);
    ++cases;
  }

  const placement::TernarySearchResult flat =
      placement::ternary_search_placement([](int) { return 4.2; }, 1, 37);
  EXPECT_GE(flat.best_x, 1);
  EXPECT_LE(flat.best_x, 37);
  EXPECT_DOUBLE_EQ(flat.best_value, 4.2);

  const double elapsed = seconds_since(start);
  EXPECT_LT(elapsed, kBudgetS);
  announce(3, std::to_string(cases) +
                  " unimodal cases exact, worst evaluation count " +
                  std::to_string(max_evals_seen) + ", " +
                  format_fixed(elapsed, 2) + " s");
}

TEST(Acceptance, Criterion4DynamicNeverLosesToWeighted) {
  const cli::Scenario base = cli::builtin_scenario("sweep");
  const std::vector<int> lengths = {128, 256, 512, 1024, 2048, 4096};
  const std::vector<std::uint64_t> seeds = {1, 2, 3};
  const std::vector<runner::SweepRow> rows =
      runner::sweep_placement(base, lengths, seeds);
  ASSERT_EQ(rows.size(), lengths.size() * seeds.size());
  double worst_improvement = 1.0;
  for (const runner::SweepRow& row : rows) {
    EXPECT_LE(row.dynamic_time_s, row.weighted_time_s * (1.0 + 1e-12))
        << "len=" << row.out_len_tokens << " seed=" << row.seed;
    worst_improvement = std::min(worst_improvement, row.improvement);
  }
  announce(4, std::to_string(rows.size()) +
                  " cells, minimum improvement over the weighted split " +
                  format_fixed(worst_improvement * 100, 2) + "%");
}

TEST(Acceptance, Criterion5ColocationBeatsTheFixedSplitBaseline) {
  std::string detail;
  for (const std::string name : {std::string("balanced16"),
                                 std::string("unbalanced32")}) {
    cli::Scenario colocated = cli::builtin_scenario(name);
    colocated.mode = placement::Mode::kFullColocate;
    colocated.sampler_gpus = 0;
    cli::Scenario baseline = cli::builtin_scenario(name);
    baseline.mode = placement::Mode::kCoExist;
    baseline.sampler_gpus = 0;

    const runner::RunResult colocated_run = runner::run_scenario(colocated);
    const runner::RunResult baseline_run = runner::run_scenario(baseline);
    const double colocated_wall = runner::total_wall_s(colocated_run);
    const double baseline_wall = runner::total_wall_s(baseline_run);
    EXPECT_LT(colocated_wall, baseline_wall) << name;

    if (name == "unbalanced32") {
      double gen = 0, rm = 0, prep = 0, train = 0, swap = 0;
      for (const runner::TraceRow& row : colocated_run.rows) {
        gen += row.generation_s;
        rm += row.rewarding_s;
        prep += row.preparation_s;
        train += row.training_s;
        swap += row.swap_time_total_s;
      }
      EXPECT_GT(rm, gen) << "reward stage must dominate generation";
      EXPECT_GT(rm, prep) << "reward stage must dominate preparation";
      EXPECT_GT(rm, train) << "reward stage must dominate training";
      EXPECT_GT(rm, swap) << "reward stage must dominate swapping";
    }
    if (!detail.empty()) detail += "; ";
    detail += name + " " + format_fixed(colocated_wall, 1) + " s vs baseline " +
              format_fixed(baseline_wall, 1) + " s";
  }
  announce(5, detail);
}

TEST(Acceptance, Criterion6ControllerFeasibilityArithmetic) {
  ctrl::RolloutPayloadSpec payload;
  payload.num_samples = 1024;
  payload.items_per_sample = 32;
  payload.item_bytes = 24 * kMiB;
  payload.copies = 1;
  EXPECT_EQ(ctrl::estimate_payload_bytes(payload), 768 * kGiB);

  ctrl::ControllerTopology single;
  single.kind = ctrl::TopologyKind::kSingle;
  single.num_controllers = 1;
  single.per_controller_host_memory_bytes = 2048 * kGiB;
  single.usable_fraction = 0.5;
  single.rpc_bandwidth_bytes_per_s = 2.5e10;

  const ctrl::FeasibilityReport one_copy =
      ctrl::check_controller_feasibility(single, payload);
  EXPECT_TRUE(one_copy.fits);
  EXPECT_DOUBLE_EQ(one_copy.per_controller_bytes,
                   static_cast<double>(768 * kGiB));

  ctrl::RolloutPayloadSpec doubled = payload;
  doubled.copies = 2;
  EXPECT_FALSE(ctrl::check_controller_feasibility(single, doubled).fits);

  ctrl::ControllerTopology parallel = single;
  parallel.kind = ctrl::TopologyKind::kParallel;
  parallel.num_controllers = 8;
  const ctrl::FeasibilityReport spread =
      ctrl::check_controller_feasibility(parallel, payload);
  EXPECT_TRUE(spread.fits);
  EXPECT_DOUBLE_EQ(spread.per_controller_bytes, static_cast<double>(96 * kGiB));

  announce(6,
           "payload 768 GiB exact; single controller fits one copy, not two; "
           "eight controllers carry 96 GiB each");
}

TEST(Acceptance, Criterion7DistributedAttentionEquivalence) {
  const auto start = std::chrono::steady_clock::now();
  constexpr double kTolerance = 1e-5;
  constexpr double kBudgetS = 20.0;

  int cells = 0;
  double worst = 0;
  for (const distattn::MaskKind mask :
       {distattn::MaskKind::kFull, distattn::MaskKind::kCausal,
        distattn::MaskKind::kSlidingWindow}) {
    for (const int seq_len : {8, 64, 256}) {
      for (const int num_heads : {1, 4, 8}) {
        for (const int head_dim : {4, 64}) {
          const std::uint64_t seed = hash_key(
              {static_cast<std::uint64_t>(mask),
               static_cast<std::uint64_t>(seq_len),
               static_cast<std::uint64_t>(num_heads),
               static_cast<std::uint64_t>(head_dim)});
          const distattn::AttentionProblem problem = distattn::random_problem(
              seq_len, head_dim, num_heads, mask, 5, seed);
          const distattn::Tensor3 reference =
              distattn::reference_attention(problem);

          std::vector<int> head_groups = {1, 2, num_heads};
          std::sort(head_groups.begin(), head_groups.end());
          head_groups.erase(
              std::unique(head_groups.begin(), head_groups.end()),
              head_groups.end());
          for (const int world : {1, 2, 4, 8}) {
            for (const int heads_per_pass : head_groups) {
              if (heads_per_pass > num_heads) continue;
              distattn::ShardLayout layout{world, heads_per_pass};
              const distattn::Tensor3 sharded =
                  distattn::allgather_attention(problem, layout);
              const double err = distattn::max_rel_error(sharded, reference);
              EXPECT_LE(err, kTolerance)
                  << distattn::mask_kind_name(mask) << " S=" << seq_len
                  << " H=" << num_heads << " d=" << head_dim << " W=" << world
                  << " h=" << heads_per_pass;
              worst = std::max(worst, err);

              distattn::ShardLayout narrow{world, 1};
              EXPECT_EQ(distattn::kv_peak_memory_bytes(problem, layout, 2),
                        static_cast<std::uint64_t>(heads_per_pass) *
                            distattn::kv_peak_memory_bytes(problem, narrow, 2));
              ++cells;
            }
          }
        }
      }
    }
  }
  const double elapsed = seconds_since(start);
  EXPECT_LT(elapsed, kBudgetS);
  announce(7, std::to_string(cells) + " layout cells, worst relative error " +
                  format_fixed(worst * 1e6, 3) + "e-6, kv peak linear in h, " +
                  format_fixed(elapsed, 1) + " s");
}

TEST(Acceptance, Criterion8BalancerWasteAndBias) {
  std::mt19937_64 rng(0xacce55);
  std::vector<int> lengths(1000000);
  for (int& len : lengths) len = 1 + static_cast<int>(rng() % 4096);

  EXPECT_NEAR(balancer::waste_bound(16), 0.1211, 5e-4);

  const balancer::BatchingPlan sorted = balancer::sort_and_bucket(lengths, 16, 1);
  const double sorted_waste = balancer::padding_waste(sorted, lengths);
  EXPECT_LE(sorted_waste, balancer::waste_bound(16));

  balancer::BatchingPlan arrival;
  arrival.batch_size = 16;
  for (std::size_t begin = 0; begin < lengths.size(); begin += 16) {
    std::vector<std::uint32_t> bucket;
    for (std::size_t i = begin; i < std::min(begin + 16, lengths.size()); ++i) {
      bucket.push_back(static_cast<std::uint32_t>(i));
    }
    arrival.buckets.push_back(std::move(bucket));
  }
  const double arrival_waste = balancer::padding_waste(arrival, lengths);
  EXPECT_LE(sorted_waste, 0.2 * arrival_waste);

  balancer::BatchingPlan monotone = sorted;
  std::sort(monotone.buckets.begin(), monotone.buckets.end(),
            [&](const std::vector<std::uint32_t>& a,
                const std::vector<std::uint32_t>& b) {
              return lengths[a.front()] > lengths[b.front()];
            });
  const double monotone_bias =
      balancer::distribution_bias_check(monotone, lengths, 64);

  int wins = 0;
  for (std::uint64_t seed = 1; seed <= 100; ++seed) {
    const balancer::BatchingPlan shuffled =
        balancer::sort_and_bucket(lengths, 16, seed);
    if (balancer::distribution_bias_check(shuffled, lengths, 64) <
        monotone_bias) {
      ++wins;
    }
  }
  EXPECT_EQ(wins, 100);

  announce(8, "sorted waste " + format_fixed(sorted_waste * 100, 2) +
                  "% <= bound 12.11% and " +
                  format_fixed(sorted_waste / arrival_waste * 100, 1) +
                  "% of the arrival-order waste; shuffle beat the monotone "
                  "order in " +
                  std::to_string(wins) + "/100 seeds");
}

TEST(Acceptance, Criterion9ExactlyOnceRpc) {
  rpc::ServerOptions server_options;
  server_options.faults.drop_response_rate = 0.3;
  server_options.faults.seed = 409;
  rpc::Server server(server_options);
  server.register_handler(
      "echo", [](const std::string& payload) { return payload; });
  server.start();

  constexpr int kThreads = 8;
  constexpr int kCallsPerThread = 125;
  std::vector<std::string> failures(kThreads);
  std::vector<std::thread> threads;
  for (int t = 0; t < kThreads; ++t) {
    threads.emplace_back([&, t] {
      rpc::ClientOptions options;
      options.max_retries = 64;
      options.faults.duplicate_send_rate = 0.1;
      options.faults.seed = 2000 + static_cast<std::uint64_t>(t);
      options.id_seed = hash_key({0xacc3, static_cast<std::uint64_t>(t)});
      rpc::Client client("127.0.0.1", server.port(), options);
      for (int i = 0; i < kCallsPerThread; ++i) {
        const std::string payload =
            "sample-" + std::to_string(t) + "-" + std::to_string(i);
        try {
          if (client.call("echo", payload) != payload) {
            failures[static_cast<std::size_t>(t)] = "bad echo for " + payload;
            return;
          }
        } catch (const std::exception& e) {
          failures[static_cast<std::size_t>(t)] = e.what();
          return;
        }
      }
    });
  }
  for (std::thread& thread : threads) thread.join();
  for (const std::string& failure : failures) EXPECT_EQ(failure, "");
  EXPECT_EQ(server.handler_executions(), 1000u);

  const auto cache_deadline =
      std::chrono::steady_clock::now() + std::chrono::seconds(10);
  while (server.result_cache_size() > 0 &&
         std::chrono::steady_clock::now() < cache_deadline) {
    std::this_thread::sleep_for(std::chrono::milliseconds(20));
  }
  EXPECT_EQ(server.result_cache_size(), 0u);
  server.stop();

  constexpr double kWindowS = 1.0;
  std::atomic<std::uint64_t> frozen{0};
  rpc::Watchdog watchdog([&] { return frozen.load(); },
                         rpc::Watchdog::Options{1, kWindowS},
                         [](const std::string&) {});
  const auto stall_start = std::chrono::steady_clock::now();
  watchdog.start();
  while (!watchdog.stalled() &&
         seconds_since(stall_start) < 3.0 * kWindowS) {
    std::this_thread::sleep_for(std::chrono::milliseconds(5));
  }
  const double stall_latency = seconds_since(stall_start);
  watchdog.stop();
  EXPECT_TRUE(watchdog.stalled());
  EXPECT_LE(stall_latency, 1.5 * kWindowS);

  rpc::ProcessGroupOptions group_options;
  group_options.term_grace_s = 0.5;
  rpc::ProcessGroup group(group_options);
  for (int i = 0; i < 4; ++i) group.spawn({"/bin/sleep", "30"}, {});
  group.fail_fast("acceptance drill");
  int terminated = 0;
  for (const int code : group.wait_all()) {
    EXPECT_LT(code, 0);
    if (code < 0) ++terminated;
  }
  EXPECT_EQ(terminated, 4);

  announce(9, "1000 calls -> 1000 executions, cache drained; watchdog fired "
              "after " +
                  format_fixed(stall_latency, 2) + " s (window " +
                  format_fixed(kWindowS, 1) + " s); fail-fast terminated " +
                  std::to_string(terminated) + "/4 workers");
}

TEST(Acceptance, Criterion10ElasticCheckpointing) {
  constexpr std::uint64_t kDataset = 333;
  constexpr std::uint64_t kSeed = 99;
  constexpr int kBaseDraws = 200;
  constexpr int kTailDraws = 1000;

  std::vector<std::uint64_t> reference;
  {
    ckpt::ShardedDataloader loader(kDataset, kSeed, 1, 0);
    for (int i = 0; i < kBaseDraws + kTailDraws; ++i) {
      reference.push_back(loader.next());
    }
  }

  const fs::path root = fresh_dir("ckpt");
  int pairs_checked = 0;
  for (const int world_save : {1, 2, 4, 8}) {
    ckpt::ConsumptionState state;
    std::vector<std::string> blobs;
    for (int rank = 0; rank < world_save; ++rank) {
      ckpt::ShardedDataloader loader(kDataset, kSeed, world_save, rank);
      for (int k = 0; k < kBaseDraws / world_save; ++k) loader.next();
      if (rank == 0) {
        state = loader.state();
      } else {
        EXPECT_EQ(loader.state(), state);
      }
      blobs.push_back("weights-of-rank-" + std::to_string(rank) + "-of-" +
                      std::to_string(world_save));
    }
    EXPECT_EQ(state.global_cursor, static_cast<std::uint64_t>(kBaseDraws));

    const fs::path dir = root / ("save-w" + std::to_string(world_save));
    fs::create_directories(dir);
    ckpt::save_async(dir.string(), world_save, blobs, state).await();

    for (const int world_load : {1, 2, 4, 8}) {
      const ckpt::LoadedCheckpoint loaded =
          ckpt::load_resharded(dir.string(), 0);
      EXPECT_EQ(loaded.shard_blobs, blobs);
      EXPECT_EQ(loaded.manifest.consumption, state);

      std::vector<std::uint64_t> tail(static_cast<std::size_t>(kTailDraws));
      for (int rank = 0; rank < world_load; ++rank) {
        ckpt::ShardedDataloader loader(loaded.manifest.consumption, world_load,
                                       rank);
        for (int k = 0; kBaseDraws + rank + k * world_load <
                        kBaseDraws + kTailDraws;
             ++k) {
          tail[static_cast<std::size_t>(rank + k * world_load)] = loader.next();
        }
      }
      for (int i = 0; i < kTailDraws; ++i) {
        ASSERT_EQ(tail[static_cast<std::size_t>(i)],
                  reference[static_cast<std::size_t>(kBaseDraws + i)])
            << "save world " << world_save << " load world " << world_load
            << " position " << i;
      }
      ++pairs_checked;
    }

    ckpt::WriterOptions crash;
    crash.fail_after_shards = 0;
    ckpt::SaveTicket doomed = ckpt::save_async(
        dir.string(), world_save + 100, blobs, state, crash);
    EXPECT_THROW(doomed.await(), IoError);
    const ckpt::LoadedCheckpoint after_crash =
        ckpt::load_resharded(dir.string(), 0);
    EXPECT_EQ(after_crash.manifest.version, world_save);
    EXPECT_EQ(after_crash.shard_blobs, blobs);
  }
  EXPECT_EQ(pairs_checked, 16);

  const fs::path slow_dir = root / "deadline";
  fs::create_directories(slow_dir);
  ckpt::save_async(slow_dir.string(), 1, {"published"}, ckpt::ConsumptionState{})
      .await();
  std::map<std::string, std::uintmax_t> before;
  for (const auto& entry : fs::recursive_directory_iterator(slow_dir)) {
    before[entry.path().string()] =
        entry.is_regular_file() ? entry.file_size() : 0;
  }

  ckpt::WriterOptions slow;
  slow.throttle_bytes_per_s = 1024;
  slow.chunk_bytes = 4096;
  const auto verdict =
      ckpt::save_on_demand(slow_dir.string(), 2, {std::string(1 << 16, 'y')},
                           ckpt::ConsumptionState{}, 1.0, slow);
  EXPECT_TRUE(std::holds_alternative<ckpt::Abandoned>(verdict));
  std::map<std::string, std::uintmax_t> after;
  for (const auto& entry : fs::recursive_directory_iterator(slow_dir)) {
    after[entry.path().string()] =
        entry.is_regular_file() ? entry.file_size() : 0;
  }
  EXPECT_EQ(before, after);

  fs::remove_all(root);
  announce(10, std::to_string(pairs_checked) +
                   " save/load world pairs reproduce the stream; crash kept "
                   "the latest checkpoint; 1 s deadline abandoned cleanly");
}

TEST(Acceptance, Criterion11ByteIdenticalTraces) {
  int compared = 0;
  for (const std::string ref :
       {std::string("builtin:table1"), std::string("builtin:sweep"),
        std::string("builtin:demo")}) {
    const cli::Scenario s = cli::load_scenario(ref);
    const fs::path a = fresh_dir("det-a");
    const fs::path b = fresh_dir("det-b");
    runner::write_outputs(runner::run_scenario(s), a.string());
    runner::write_outputs(runner::run_scenario(s), b.string());
    EXPECT_EQ(slurp(a / "trace.csv"), slurp(b / "trace.csv")) << ref;
    EXPECT_EQ(slurp(a / "summary.json"), slurp(b / "summary.json")) << ref;
    fs::remove_all(a);
    fs::remove_all(b);
    ++compared;
  }
  announce(11, std::to_string(compared) +
                   " scenarios re-run with their seeds: trace files byte "
                   "identical");
}

}  // namespace
}  // namespace yatt
