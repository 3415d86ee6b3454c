#include "yatt/workload.hpp"

#include <algorithm>
#include <cmath>

#include "yatt/common.hpp"
#include "yatt/errors.hpp"

namespace yatt::workload {

namespace {

constexpr double kTwoPi = 6.283185307179586476925286766559;

int clamp_length(double value, int max_len) {
  const double rounded = std::nearbyint(value);
  if (rounded < 1) return 1;
  if (rounded > max_len) return max_len;
  return static_cast<int>(rounded);
}

// Standard normal deviate from two keyed uniforms (Box-Muller).
double normal_from_key(std::uint64_t key) {
  const double u1 = uniform_from_key(key);
  const double u2 = uniform_from_key(splitmix64(key ^ 0x5bf0a8b1457e1d23ULL));
  return std::sqrt(-2.0 * std::log1p(-u1)) * std::cos(kTwoPi * u2);
}

}  // namespace

std::string dist_kind_name(DistKind kind) {
  switch (kind) {
    case DistKind::kConstant:
      return "constant";
    case DistKind::kUniform:
      return "uniform";
    case DistKind::kNormal:
      return "normal";
    case DistKind::kLogNormal:
      return "lognormal";
  }
  throw ConfigError("unknown distribution kind value");
}

DistKind dist_kind_from_name(const std::string& name) {
  if (name == "constant") return DistKind::kConstant;
  if (name == "uniform") return DistKind::kUniform;
  if (name == "normal") return DistKind::kNormal;
  if (name == "lognormal") return DistKind::kLogNormal;
  throw ConfigError("unknown distribution kind: " + name);
}

void LengthDistribution::validate() const {
  if (max_len_tokens < 1) {
    throw InvalidDistribution("max_len_tokens must be at least 1");
  }
  switch (kind) {
    case DistKind::kConstant:
      if (p1 < 1) throw InvalidDistribution("constant length must be at least 1");
      break;
    case DistKind::kUniform:
      if (p1 < 1) throw InvalidDistribution("uniform low bound must be at least 1");
      if (p2 < p1) throw InvalidDistribution("uniform high bound below low bound");
      break;
    case DistKind::kNormal:
      if (p2 < 0) throw InvalidDistribution("normal stddev must be non-negative");
      break;
    case DistKind::kLogNormal:
      if (p2 < 0) throw InvalidDistribution("lognormal sigma must be non-negative");
      break;
  }
}

double LengthDistribution::mean() const {
  switch (kind) {
    case DistKind::kConstant:
      return p1;
    case DistKind::kUniform:
      return (p1 + p2) / 2.0;
    case DistKind::kNormal:
      return p1;
    case DistKind::kLogNormal:
      return std::exp(p1 + p2 * p2 / 2.0);
  }
  throw ConfigError("unknown distribution kind value");
}

LengthDistribution LengthDistribution::scaled(double factor) const {
  LengthDistribution out = *this;
  switch (kind) {
    case DistKind::kConstant:
      out.p1 = p1 * factor;
      break;
    case DistKind::kUniform:
      out.p1 = p1 * factor;
      out.p2 = p2 * factor;
      break;
    case DistKind::kNormal:
      out.p1 = p1 * factor;
      out.p2 = p2 * factor;
      break;
    case DistKind::kLogNormal:
      out.p1 = p1 + std::log(factor);
      break;
  }
  return out;
}

int sample_length_keyed(const LengthDistribution& dist, std::uint64_t seed,
                        std::uint64_t stream, std::uint64_t step,
                        std::uint64_t round, std::uint64_t sample_id) {
  const std::uint64_t key = hash_key({seed, stream, step, round, sample_id});
  switch (dist.kind) {
    case DistKind::kConstant:
      return clamp_length(dist.p1, dist.max_len_tokens);
    case DistKind::kUniform: {
      const auto low = static_cast<std::int64_t>(std::llround(dist.p1));
      const auto high = static_cast<std::int64_t>(std::llround(dist.p2));
      const std::uint64_t span = static_cast<std::uint64_t>(high - low) + 1;
      const double u = uniform_from_key(key);
      const auto value = low + static_cast<std::int64_t>(u * static_cast<double>(span));
      return clamp_length(static_cast<double>(value), dist.max_len_tokens);
    }
    case DistKind::kNormal:
      return clamp_length(dist.p1 + dist.p2 * normal_from_key(key),
                          dist.max_len_tokens);
    case DistKind::kLogNormal:
      return clamp_length(std::exp(dist.p1 + dist.p2 * normal_from_key(key)),
                          dist.max_len_tokens);
  }
  throw ConfigError("unknown distribution kind value");
}

std::vector<int> sample_lengths(const LengthDistribution& dist, int n,
                                std::uint64_t seed) {
  std::vector<int> out;
  out.reserve(static_cast<std::size_t>(std::max(n, 0)));
  for (int i = 0; i < n; ++i) {
    out.push_back(sample_length_keyed(dist, seed, kOutputLenStream, 0, 0,
                                      static_cast<std::uint64_t>(i)));
  }
  return out;
}

std::vector<bool> rejection_process(const RolloutBatch& batch, int round,
                                    const RejectionConfig& config,
                                    std::uint64_t seed) {
  if (config.reject_rate < 0 || config.reject_rate >= 1) {
    throw ConfigError("reject_rate must lie in [0, 1)");
  }
  if (config.per_group && config.group_size <= 0) {
    throw ConfigError("group_size must be positive for per-group rejection");
  }
  std::vector<bool> rejected(batch.samples.size(), false);
  for (std::size_t i = 0; i < batch.samples.size(); ++i) {
    const RolloutSample& sample = batch.samples[i];
    if (sample.accepted) continue;
    const std::uint64_t unit =
        config.per_group ? sample.sample_id / static_cast<std::uint64_t>(config.group_size)
                         : sample.sample_id;
    const std::uint64_t key =
        hash_key({seed, kRejectionStream, static_cast<std::uint64_t>(batch.step_index),
                  static_cast<std::uint64_t>(round), unit});
    rejected[i] = uniform_from_key(key) < config.reject_rate;
  }
  return rejected;
}

LengthDistribution drift_schedule(int step, const LengthDistribution& base,
                                  double drift_rate_per_step) {
  if (drift_rate_per_step < 0) {
    throw ConfigError("drift_rate_per_step must be non-negative");
  }
  double factor = std::pow(1.0 + drift_rate_per_step, static_cast<double>(step));
  const double base_mean = base.mean();
  if (base_mean > 0) {
    const double cap = static_cast<double>(base.max_len_tokens) / base_mean;
    factor = std::min(factor, std::max(cap, 1.0));
  }
  return base.scaled(factor);
}

ShardRange shard_dataset(std::uint64_t total_samples, int num_controllers,
                         int controller_rank) {
  if (num_controllers <= 0) {
    throw ConfigError("num_controllers must be positive");
  }
  if (controller_rank < 0 || controller_rank >= num_controllers) {
    throw RankOutOfRange("controller_rank out of range");
  }
  const std::uint64_t p = static_cast<std::uint64_t>(num_controllers);
  const std::uint64_t r = static_cast<std::uint64_t>(controller_rank);
  const std::uint64_t base = total_samples / p;
  const std::uint64_t rem = total_samples % p;
  const std::uint64_t begin = r * base + std::min(r, rem);
  const std::uint64_t size = base + (r < rem ? 1 : 0);
  return ShardRange{begin, begin + size};
}

}  // namespace yatt::workload
