#include "yatt/placement.hpp"

#include <cmath>
#include <cstdlib>

#include <gtest/gtest.h>

#include "yatt/common.hpp"
#include "yatt/errors.hpp"

namespace yatt::placement {
namespace {

TEST(ModeNames, RoundTrip) {
  for (Mode mode : {Mode::kFullColocate, Mode::kPartialColocate, Mode::kCoExist}) {
    EXPECT_EQ(mode_from_name(mode_name(mode)), mode);
  }
  EXPECT_THROW(mode_from_name("hybrid"), ConfigError);
}

TEST(Weighted, SplitsProportionallyToParameters) {
  Split equal = weighted_placement(3'000'000'000ULL, 3'000'000'000ULL, 16);
  EXPECT_EQ(equal.sampler_gpus, 8);
  EXPECT_EQ(equal.genrm_gpus, 8);

  Split third = weighted_placement(1'500'000'000ULL, 3'000'000'000ULL, 16);
  EXPECT_EQ(third.sampler_gpus, 5);
  EXPECT_EQ(third.genrm_gpus, 11);

  Split skewed = weighted_placement(72'000'000'000ULL, 1'500'000'000ULL, 32);
  EXPECT_EQ(skewed.sampler_gpus, 31);
  EXPECT_EQ(skewed.genrm_gpus, 1);
}

TEST(Weighted, ClampsSoBothSidesKeepOneGpu) {
  Split tiny = weighted_placement(1, 1'000'000'000ULL, 8);
  EXPECT_EQ(tiny.sampler_gpus, 1);
  EXPECT_EQ(tiny.genrm_gpus, 7);

  Split huge = weighted_placement(1'000'000'000ULL, 1, 8);
  EXPECT_EQ(huge.sampler_gpus, 7);
  EXPECT_EQ(huge.genrm_gpus, 1);

  EXPECT_THROW(weighted_placement(1, 1, 1), InfeasiblePlan);
  EXPECT_THROW(weighted_placement(0, 0, 8), ConfigError);
}

TEST(Ternary, FindsTheMinimumOfAParabola) {
  auto result = ternary_search_placement(
      [](int x) { return static_cast<double>((x - 5) * (x - 5)); }, 1, 16);
  EXPECT_EQ(result.best_x, 5);
  EXPECT_DOUBLE_EQ(result.best_value, 0.0);
}

TEST(Ternary, SingletonRangeNeedsOneEvaluation) {
  auto result = ternary_search_placement([](int) { return 42.0; }, 5, 5);
  EXPECT_EQ(result.best_x, 5);
  EXPECT_EQ(result.evaluations, 1);
  EXPECT_EQ(result.iterations, 0);
}

TEST(Ternary, MonotoneFunctionsPickTheBoundary) {
  auto decreasing = ternary_search_placement(
      [](int x) { return 100.0 - x; }, 1, 64);
  EXPECT_EQ(decreasing.best_x, 64);
  auto increasing = ternary_search_placement(
      [](int x) { return static_cast<double>(x); }, 1, 64);
  EXPECT_EQ(increasing.best_x, 1);
}

TEST(Ternary, TiesPreferTheSmallerArgument) {
  auto result = ternary_search_placement(
      [](int x) { return std::abs(x - 5.5); }, 1, 16);
  EXPECT_EQ(result.best_x, 5);
}

TEST(Ternary, ConstantObjectiveTerminates) {
  auto result = ternary_search_placement([](int) { return 1.0; }, 1, 100);
  EXPECT_DOUBLE_EQ(result.best_value, 1.0);
  EXPECT_GE(result.best_x, 1);
  EXPECT_LE(result.best_x, 100);
}

TEST(Ternary, EvaluationCountStaysWithinTheLogBound) {
  for (int n : {1, 2, 3, 5, 16, 100, 333, 512}) {
    int calls = 0;
    auto result = ternary_search_placement(
        [&](int x) {
          ++calls;
          return static_cast<double>((x - n / 2) * (x - n / 2));
        },
        1, n);
    const int bound =
        2 * static_cast<int>(std::ceil(std::log(static_cast<double>(n)) /
                                       std::log(1.5))) + 3;
    EXPECT_LE(result.evaluations, bound) << "n=" << n;
    EXPECT_EQ(calls, result.evaluations) << "memo must dedupe probes";
  }
}

TEST(Ternary, EmptyRangeThrows) {
  EXPECT_THROW(ternary_search_placement([](int) { return 0.0; }, 3, 2),
               ConfigError);
}

TEST(Replanner, DueFollowsTheInterval) {
  Replanner replanner(10, 8);
  EXPECT_FALSE(replanner.due(0));
  EXPECT_FALSE(replanner.due(5));
  EXPECT_TRUE(replanner.due(10));
  EXPECT_FALSE(replanner.due(11));
  EXPECT_TRUE(replanner.due(20));

  Replanner never(0, 8);
  EXPECT_FALSE(never.due(10));
}

TEST(Replanner, SwitchesOnlyOnStrictImprovement) {
  Replanner replanner(5, 8);
  auto probe = [](int x) { return static_cast<double>((x - 3) * (x - 3)); };
  auto first = replanner.consider(probe, 1, 15);
  EXPECT_TRUE(first.switched);
  EXPECT_EQ(first.sampler_gpus, 3);
  EXPECT_EQ(replanner.sampler_gpus(), 3);

  // Stationary workload: the second pass finds the same optimum and
  // must not oscillate.
  auto second = replanner.consider(probe, 1, 15);
  EXPECT_FALSE(second.switched);
  EXPECT_EQ(second.sampler_gpus, 3);

  auto flat = [](int) { return 7.0; };
  auto third = replanner.consider(flat, 1, 15);
  EXPECT_FALSE(third.switched);
  EXPECT_EQ(replanner.sampler_gpus(), 3);
}

cluster::ClusterSpec pool_of(int gpus) {
  cluster::ClusterSpec spec;
  spec.num_nodes = 1;
  spec.gpus_per_node = gpus;
  spec.gpu_memory_bytes = 96 * kGiB;
  spec.host_memory_bytes = 2048 * kGiB;
  spec.intra_node_bw_bytes_per_s = 3e11;
  spec.inter_node_bw_bytes_per_s = 2.5e10;
  spec.swap_bw_bytes_per_s = 4e9;
  spec.engine_reload_overhead_s = 1.0;
  return spec;
}

TEST(PlanValidation, EnforcesModeShapes) {
  cluster::ClusterSpec spec = pool_of(8);
  cluster::ModelSpec sampler{"sampler", cluster::Role::kSampler,
                             3'000'000'000ULL, 2, 1};
  cluster::ModelSpec genrm{"genrm", cluster::Role::kGenRM, 1'500'000'000ULL, 2, 1};

  EXPECT_NO_THROW(validate_plan({Mode::kFullColocate, 8, 8, 0, false}, spec,
                                sampler, genrm));
  EXPECT_THROW(validate_plan({Mode::kFullColocate, 4, 4, 0, false}, spec,
                             sampler, genrm),
               InfeasiblePlan);
  EXPECT_NO_THROW(validate_plan({Mode::kPartialColocate, 6, 2, 0, false}, spec,
                                sampler, genrm));
  EXPECT_THROW(validate_plan({Mode::kPartialColocate, 6, 3, 0, false}, spec,
                             sampler, genrm),
               InfeasiblePlan);
  EXPECT_THROW(validate_plan({Mode::kCoExist, 8, 0, 0, false}, spec, sampler,
                             genrm),
               InfeasiblePlan);
}

TEST(PlanValidation, ChecksMinGpusAndWeightCapacity) {
  cluster::ClusterSpec spec = pool_of(8);
  cluster::ModelSpec sampler{"sampler", cluster::Role::kSampler,
                             3'000'000'000ULL, 2, 1};
  cluster::ModelSpec wide{"wide", cluster::Role::kGenRM, 72'000'000'000ULL, 2, 2};

  // 144 GB of weights needs two 96 GiB GPUs.
  EXPECT_THROW(validate_plan({Mode::kPartialColocate, 7, 1, 0, false}, spec,
                             sampler, wide),
               InfeasiblePlan);
  EXPECT_NO_THROW(validate_plan({Mode::kPartialColocate, 6, 2, 0, false}, spec,
                                sampler, wide));
}

}  // namespace
}  // namespace yatt::placement
