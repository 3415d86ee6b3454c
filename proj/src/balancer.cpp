#include "yatt/balancer.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "yatt/errors.hpp"

namespace yatt::balancer {

double simulated_workload(double len_tokens) {
  return len_tokens * len_tokens;
}

BatchingPlan sort_and_bucket(const std::vector<int>& lengths, int batch_size,
                             std::uint64_t seed) {
  if (batch_size <= 0) throw ConfigError("batch_size must be positive");

  std::vector<std::uint32_t> order(lengths.size());
  std::iota(order.begin(), order.end(), 0u);
  std::sort(order.begin(), order.end(), [&](std::uint32_t a, std::uint32_t b) {
    if (lengths[a] != lengths[b]) return lengths[a] > lengths[b];
    return a < b;
  });

  BatchingPlan plan;
  plan.batch_size = batch_size;
  plan.shuffle_seed = seed;
  for (std::size_t begin = 0; begin < order.size();
       begin += static_cast<std::size_t>(batch_size)) {
    const std::size_t end =
        std::min(begin + static_cast<std::size_t>(batch_size), order.size());
    plan.buckets.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(begin),
                              order.begin() + static_cast<std::ptrdiff_t>(end));
  }

  std::mt19937_64 rng(seed);
  std::shuffle(plan.buckets.begin(), plan.buckets.end(), rng);
  return plan;
}

double padding_waste(const BatchingPlan& plan, const std::vector<int>& lengths) {
  double real = 0;
  double padded = 0;
  for (const auto& bucket : plan.buckets) {
    int max_len = 0;
    for (std::uint32_t index : bucket) {
      max_len = std::max(max_len, lengths.at(index));
      real += simulated_workload(lengths.at(index));
    }
    padded += static_cast<double>(bucket.size()) * simulated_workload(max_len);
  }
  if (padded == 0) return 0;
  return 1.0 - real / padded;
}

double waste_bound(int batch_size) {
  if (batch_size <= 0) throw ConfigError("batch_size must be positive");
  const double ratio = static_cast<double>(batch_size - 1) / batch_size;
  return 1.0 - ratio * ratio;
}

double distribution_bias_check(const BatchingPlan& plan,
                               const std::vector<int>& lengths,
                               int window_buckets) {
  if (window_buckets <= 0) throw ConfigError("window_buckets must be positive");
  if (plan.buckets.empty() || lengths.empty()) return 0;

  double global_sum = 0;
  for (int len : lengths) global_sum += len;
  const double global_mean = global_sum / static_cast<double>(lengths.size());
  double variance = 0;
  for (int len : lengths) {
    const double d = len - global_mean;
    variance += d * d;
  }
  variance /= static_cast<double>(lengths.size());
  const double global_std = std::sqrt(variance);
  if (global_std == 0) return 0;

  const int num_buckets = static_cast<int>(plan.buckets.size());
  const int window = std::min(window_buckets, num_buckets);
  double worst = 0;
  for (int start = 0; start + window <= num_buckets; ++start) {
    double sum = 0;
    std::size_t count = 0;
    for (int b = start; b < start + window; ++b) {
      for (std::uint32_t index : plan.buckets[static_cast<std::size_t>(b)]) {
        sum += lengths.at(index);
        ++count;
      }
    }
    if (count == 0) continue;
    const double window_mean = sum / static_cast<double>(count);
    worst = std::max(worst, std::abs(window_mean - global_mean) / global_std);
  }
  return worst;
}

}  // namespace yatt::balancer
