#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace yatt::workload {

enum class DistKind {
  kConstant,
  kUniform,
  kNormal,
  kLogNormal,
};

std::string dist_kind_name(DistKind kind);
DistKind dist_kind_from_name(const std::string& name);

// Token-length distribution. Parameter meaning depends on kind:
//   Constant:  p1 = value (p2 unused)
//   Uniform:   p1 = low, p2 = high (inclusive integer bounds)
//   Normal:    p1 = mean, p2 = stddev
//   LogNormal: p1 = log-space mean, p2 = log-space stddev
// Draws are clamped to [1, max_len_tokens].
struct LengthDistribution {
  DistKind kind = DistKind::kConstant;
  double p1 = 1;
  double p2 = 0;
  int max_len_tokens = 1 << 20;

  void validate() const;
  // Mean of the untruncated distribution.
  double mean() const;
  // Returns a copy with the location parameters scaled by `factor`.
  LengthDistribution scaled(double factor) const;
};

struct RolloutSample {
  std::uint64_t sample_id = 0;
  int prompt_len_tokens = 0;
  // Response length for the round this sample was last generated in.
  int target_out_len_tokens = 0;
  // Round in which the sample was accepted (0 while still pending).
  int accepted_round = 0;
  bool accepted = false;
};

struct RolloutBatch {
  int step_index = 0;
  std::vector<RolloutSample> samples;
};

// Stream ids keep independent random uses of the same seed from
// colliding. Shared between the in-process simulator and the
// multi-process demo so both derive identical draws.
inline constexpr std::uint64_t kPromptLenStream = 1;
inline constexpr std::uint64_t kOutputLenStream = 2;
inline constexpr std::uint64_t kRejectionStream = 3;

// Deterministic keyed draw: the same (distribution, seed, stream, step,
// round, sample_id) always yields the same length, independent of call
// order and process layout.
int sample_length_keyed(const LengthDistribution& dist, std::uint64_t seed,
                        std::uint64_t stream, std::uint64_t step,
                        std::uint64_t round, std::uint64_t sample_id);

// Convenience batch draw with sample ids 0..n-1 on a fixed stream.
std::vector<int> sample_lengths(const LengthDistribution& dist, int n,
                                std::uint64_t seed);

struct RejectionConfig {
  double reject_rate = 0;
  // When true, acceptance is decided per contiguous group of
  // `group_size` sample ids, mirroring group-based filtering where a
  // whole group is resampled together.
  bool per_group = false;
  int group_size = 1;
};

// Returns, for each sample in `batch`, whether it is rejected in
// `round` and must be regenerated. Accepted samples are never
// re-flagged. Deterministic in (seed, step, round, sample_id).
std::vector<bool> rejection_process(const RolloutBatch& batch, int round,
                                    const RejectionConfig& config,
                                    std::uint64_t seed);

// Scales the base output-length distribution by (1 + drift)^step,
// modelling responses that grow as training progresses. The scale
// factor is capped so the mean never exceeds max_len_tokens.
LengthDistribution drift_schedule(int step, const LengthDistribution& base,
                                  double drift_rate_per_step);

struct ShardRange {
  std::uint64_t begin = 0;
  std::uint64_t end = 0;  // exclusive

  std::uint64_t size() const { return end - begin; }
};

// Contiguous near-even split of [0, total_samples) across controllers.
// The first (total % P) controllers receive one extra sample. Throws
// RankOutOfRange for an invalid rank.
ShardRange shard_dataset(std::uint64_t total_samples, int num_controllers,
                         int controller_rank);

}  // namespace yatt::workload
