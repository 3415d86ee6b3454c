#pragma once

#include <cstdint>
#include <optional>
#include <queue>
#include <string>
#include <vector>

#include "yatt/cluster.hpp"
#include "yatt/placement.hpp"
#include "yatt/workload.hpp"

namespace yatt::sim {

enum class EventKind {
  kSwapDone,
  kGenerationDone,
  kMicrobatchReady,
  kRewardDone,
  kStageDone,
};

struct SimEvent {
  double time_s = 0;
  std::uint64_t sequence = 0;
  EventKind kind = EventKind::kStageDone;
  std::int64_t payload = 0;
};

// Minimal discrete-event clock. Events pop in (time, insertion order);
// scheduling into the past throws TimeTravel.
class EventQueue {
 public:
  std::uint64_t schedule(double time_s, EventKind kind, std::int64_t payload = 0);
  std::optional<SimEvent> pop();
  double now() const { return now_; }
  bool empty() const { return heap_.empty(); }
  std::size_t size() const { return heap_.size(); }

 private:
  struct Later {
    bool operator()(const SimEvent& a, const SimEvent& b) const {
      if (a.time_s != b.time_s) return a.time_s > b.time_s;
      return a.sequence > b.sequence;
    }
  };
  std::priority_queue<SimEvent, std::vector<SimEvent>, Later> heap_;
  double now_ = 0;
  std::uint64_t next_sequence_ = 0;
};

// Reward-model work for one microbatch, reduced to the integers needed
// for timing. Computed shard-locally so the multi-process demo can ship
// it over RPC and reproduce the in-process trace bit for bit.
struct MicrobatchAggregate {
  int controller_rank = 0;
  int mb_index = 0;
  int sample_count = 0;
  int max_out_len_tokens = 0;
  // Sum of prompt + response tokens over the microbatch (prefill load).
  long long score_tokens = 0;
};

struct ShardRoundReport {
  int controller_rank = 0;
  int round = 0;
  int active_count = 0;
  int newly_accepted_count = 0;
  int forced_accept_count = 0;
  int pending_count = 0;
  // Sum over newly accepted samples of (prompt + response) tokens.
  long long accepted_score_tokens = 0;
  // Sum over newly accepted samples of (prompt + response)^2.
  long long accepted_train_units = 0;
  std::vector<MicrobatchAggregate> microbatches;
};

struct ShardSampleState {
  std::uint64_t sample_id = 0;
  int prompt_len_tokens = 0;
  int out_len_tokens = 0;
  bool accepted = false;
  int accepted_round = 0;
};

// One controller's slice of the rollout batch, advanced round by round.
struct ShardState {
  int controller_rank = 0;
  int step_index = 0;
  std::vector<ShardSampleState> samples;
};

struct RoundParams {
  workload::LengthDistribution out_dist;
  workload::RejectionConfig rejection;
  std::uint64_t seed = 0;
  int microbatch_size = 1;
  int max_rounds = 64;
};

// Draws response lengths for this shard's pending samples, forms
// microbatches in sample order, applies the rejection process, and
// marks acceptances (forcing them at max_rounds). Pure function of the
// shard state and parameters; both the in-process simulator and the
// demo's controller processes call it.
ShardRoundReport shard_round_output(ShardState& state, int round,
                                    const RoundParams& params);

struct RoundDetail {
  int round = 0;
  int active_samples = 0;
  double start_s = 0;
  double generation_end_s = 0;
  double first_dispatch_s = 0;
  double end_s = 0;
  double rm_busy_s = 0;
};

struct PartitionUsage {
  std::string name;
  int gpus = 0;
  double busy_gpu_s = 0;
  double idle_gpu_s = 0;
};

struct StepTrace {
  int step_index = 0;
  placement::Mode mode = placement::Mode::kFullColocate;
  int sampler_gpus = 0;
  int genrm_gpus = 0;
  int rounds = 0;
  int forced_accepts = 0;
  double generation_s = 0;
  double rewarding_s = 0;
  double preparation_s = 0;
  double training_s = 0;
  double swap_time_total_s = 0;
  int swap_count = 0;
  // Step start through end of preparation (everything before training).
  double rollout_s = 0;
  double step_wall_s = 0;
  std::vector<PartitionUsage> partitions;
  double bubble_fraction = 0;
  std::vector<RoundDetail> round_details;

  double busy_gpu_s_total() const;
  double idle_gpu_s_total() const;
};

struct StepContext {
  cluster::ClusterSpec cluster;
  cluster::StageCostModel costs;
  cluster::ModelSpec actor_model;
  cluster::ModelSpec sampler_model;
  cluster::ModelSpec genrm_model;
  workload::RejectionConfig rejection;
  // Output-length distribution for this step (drift already applied).
  workload::LengthDistribution out_dist;
  int microbatch_size = 1;
  int num_controllers = 1;
  std::uint64_t seed = 0;
  int max_rounds = 64;
  // Host-side rollout payload transfer charged to preparation.
  double payload_transfer_s = 0;
};

// Round-1 lengths captured for the placement probe.
struct WorkloadSnapshot {
  int num_controllers = 1;
  // One vector per controller shard: (prompt, response) token pairs.
  std::vector<std::vector<std::pair<int, int>>> shard_lengths;
};

struct RoundProbeResult {
  double round_span_s = 0;
  double generation_span_s = 0;
  double rm_busy_s = 0;
};

// Predicted duration of one generation + rewarding round with the given
// lengths on an x / y split. Shares its timing code with the real step
// simulation, so the placement search optimizes exactly what runs.
RoundProbeResult simulate_round(const WorkloadSnapshot& snapshot, int sampler_gpus,
                                int genrm_gpus, const StepContext& ctx);

struct StepResult {
  StepTrace trace;
  WorkloadSnapshot snapshot;
};

// Builds the shard state one controller owns for this batch.
ShardState make_shard_state(const workload::RolloutBatch& batch,
                            int num_controllers, int controller_rank);

// Turns per-shard round reports into step timing. The in-process
// simulator and the multi-process demo coordinator feed the same
// reports through this class, so their traces agree exactly.
class StepAssembler {
 public:
  StepAssembler(const placement::PlacementPlan& plan, const StepContext& ctx,
                int step_index);

  // Consumes one round's reports (all shards, in controller rank
  // order). Returns true while any shard still has pending samples.
  bool feed_round(const std::vector<ShardRoundReport>& reports);

  // Appends the post-rollout stages (swap, preparation, training) and
  // returns the completed trace.
  StepTrace finish();

 private:
  void charge_swap(const cluster::ModelSpec& model);
  void advance(double span_s, EventKind kind);

  placement::PlacementPlan plan_;
  const StepContext& ctx_;
  EventQueue clock_;
  StepTrace trace_;
  long long train_units_ = 0;
  double busy_gpu_s_ = 0;          // full colocation
  double sampler_busy_gpu_s_ = 0;  // split modes
  double genrm_busy_gpu_s_ = 0;
  int rounds_fed_ = 0;
  bool finished_ = false;
};

// Simulates one full RLHF step (generation rounds, rewarding,
// preparation, training) under the given placement plan. Fills in the
// batch's acceptance bookkeeping as a side effect.
StepResult run_rlhf_step(const placement::PlacementPlan& plan,
                         workload::RolloutBatch& batch, const StepContext& ctx);

}  // namespace yatt::sim
