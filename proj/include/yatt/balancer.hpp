#pragma once

#include <cstdint>
#include <vector>

namespace yatt::balancer {

// Training cost of one sequence. Attention dominates long-sequence
// training, so cost grows with the square of the length.
double simulated_workload(double len_tokens);

struct BatchingPlan {
  int batch_size = 0;
  // Sample indices, grouped into buckets of at most batch_size.
  std::vector<std::vector<std::uint32_t>> buckets;
  std::uint64_t shuffle_seed = 0;
};

// Groups samples of similar length: sorts indices by length, cuts the
// sorted order into buckets of `batch_size`, then shuffles the bucket
// order so training does not consume lengths monotonically.
BatchingPlan sort_and_bucket(const std::vector<int>& lengths, int batch_size,
                             std::uint64_t seed);

// Fraction of padded compute wasted: each bucket pads to its own
// longest member, waste = 1 - real_work / padded_work.
double padding_waste(const BatchingPlan& plan, const std::vector<int>& lengths);

// Upper bound on padding waste for sorted buckets over densely covered
// lengths: 1 - ((B-1)/B)^2.
double waste_bound(int batch_size);

// Largest deviation of a sliding window's mean length from the global
// mean, in units of the global standard deviation. Windows span
// `window_buckets` consecutive buckets in training order. Low values
// mean bucket shuffling kept the consumed length distribution flat.
double distribution_bias_check(const BatchingPlan& plan,
                               const std::vector<int>& lengths,
                               int window_buckets);

}  // namespace yatt::balancer
