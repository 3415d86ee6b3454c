#include "yatt/simcore.hpp"

#include <algorithm>
#include <cassert>

#include "yatt/common.hpp"
#include "yatt/errors.hpp"

namespace yatt::sim {

namespace {

// Preparation replays the accepted rollout through the training stack
// at forward-only cost, modeled as this share of a training pass.
constexpr double kPreparationTrainShare = 1.0 / 3.0;

std::vector<MicrobatchAggregate> build_microbatches(
    int controller_rank, const std::vector<std::pair<int, int>>& lengths,
    int microbatch_size) {
  std::vector<MicrobatchAggregate> out;
  MicrobatchAggregate current;
  current.controller_rank = controller_rank;
  current.mb_index = 0;
  for (const auto& [prompt, response] : lengths) {
    if (current.sample_count == microbatch_size) {
      out.push_back(current);
      current = MicrobatchAggregate{};
      current.controller_rank = controller_rank;
      current.mb_index = static_cast<int>(out.size());
    }
    ++current.sample_count;
    current.max_out_len_tokens = std::max(current.max_out_len_tokens, response);
    current.score_tokens += prompt + response;
  }
  if (current.sample_count > 0) {
    out.push_back(current);
  }
  return out;
}

struct RoundTiming {
  double start_s = 0;
  double generation_end_s = 0;
  double first_dispatch_s = 0;
  double end_s = 0;
  double rm_busy_s = 0;
};

// Times one generation round with pipelined rewarding: microbatches
// become ready as their longest member finishes decoding and are scored
// FIFO on the reward partition (ties resolved by controller rank, then
// microbatch index, via event insertion order).
RoundTiming time_round(const std::vector<MicrobatchAggregate>& microbatches,
                       double round_start, int sampler_gpus, int genrm_gpus,
                       const cluster::StageCostModel& costs) {
  const double overhead = costs.fixed_stage_overhead_s;
  const double gen_rate =
      cluster::partition_rate(sampler_gpus, costs.scaling_exponent);
  const double rm_rate =
      cluster::partition_rate(genrm_gpus, costs.scaling_exponent);

  RoundTiming timing;
  timing.start_s = round_start;
  if (microbatches.empty()) {
    timing.generation_end_s = round_start + overhead;
    timing.first_dispatch_s = timing.generation_end_s;
    timing.end_s = timing.generation_end_s + overhead;
    timing.rm_busy_s = overhead;
    return timing;
  }

  int max_out = 0;
  EventQueue queue;
  for (std::size_t i = 0; i < microbatches.size(); ++i) {
    const MicrobatchAggregate& mb = microbatches[i];
    max_out = std::max(max_out, mb.max_out_len_tokens);
    const double ready =
        round_start + overhead +
        mb.max_out_len_tokens * costs.gen_seconds_per_token / gen_rate;
    queue.schedule(ready, EventKind::kMicrobatchReady,
                   static_cast<std::int64_t>(i));
  }
  timing.generation_end_s =
      round_start + overhead + max_out * costs.gen_seconds_per_token / gen_rate;

  double cursor = round_start;
  bool first = true;
  timing.first_dispatch_s = -1;
  while (auto event = queue.pop()) {
    const MicrobatchAggregate& mb =
        microbatches[static_cast<std::size_t>(event->payload)];
    const double service_start = std::max(cursor, event->time_s);
    if (first) {
      timing.first_dispatch_s = service_start;
    }
    const double span =
        (first ? overhead : 0.0) +
        static_cast<double>(mb.score_tokens) * costs.rm_seconds_per_token / rm_rate;
    cursor = service_start + span;
    timing.rm_busy_s += span;
    first = false;
  }
  timing.end_s = std::max(timing.generation_end_s, cursor);
  return timing;
}

void copy_back(const std::vector<ShardState>& shards,
               workload::RolloutBatch& batch) {
  std::size_t position = 0;
  for (const ShardState& shard : shards) {
    for (const ShardSampleState& state : shard.samples) {
      workload::RolloutSample& sample = batch.samples[position++];
      sample.target_out_len_tokens = state.out_len_tokens;
      sample.accepted = state.accepted;
      sample.accepted_round = state.accepted_round;
    }
  }
  assert(position == batch.samples.size());
}

WorkloadSnapshot capture_snapshot(const std::vector<ShardState>& shards) {
  WorkloadSnapshot snapshot;
  snapshot.num_controllers = static_cast<int>(shards.size());
  snapshot.shard_lengths.reserve(shards.size());
  for (const ShardState& shard : shards) {
    std::vector<std::pair<int, int>> lengths;
    lengths.reserve(shard.samples.size());
    for (const ShardSampleState& state : shard.samples) {
      lengths.emplace_back(state.prompt_len_tokens, state.out_len_tokens);
    }
    snapshot.shard_lengths.push_back(std::move(lengths));
  }
  return snapshot;
}

}  // namespace

std::uint64_t EventQueue::schedule(double time_s, EventKind kind,
                                   std::int64_t payload) {
  if (time_s < now_) {
    throw TimeTravel("event scheduled at " + format_fixed(time_s, 9) +
                     " before current time " + format_fixed(now_, 9));
  }
  SimEvent event{time_s, next_sequence_++, kind, payload};
  heap_.push(event);
  return event.sequence;
}

std::optional<SimEvent> EventQueue::pop() {
  if (heap_.empty()) return std::nullopt;
  SimEvent event = heap_.top();
  heap_.pop();
  now_ = event.time_s;
  return event;
}

ShardRoundReport shard_round_output(ShardState& state, int round,
                                    const RoundParams& params) {
  if (params.microbatch_size <= 0) {
    throw ConfigError("microbatch_size must be positive");
  }
  ShardRoundReport report;
  report.controller_rank = state.controller_rank;
  report.round = round;

  // Draw this round's response lengths for every pending sample.
  std::vector<std::size_t> pending;
  std::vector<std::pair<int, int>> pending_lengths;
  for (std::size_t i = 0; i < state.samples.size(); ++i) {
    ShardSampleState& sample = state.samples[i];
    if (sample.accepted) continue;
    sample.out_len_tokens = workload::sample_length_keyed(
        params.out_dist, params.seed, workload::kOutputLenStream,
        static_cast<std::uint64_t>(state.step_index),
        static_cast<std::uint64_t>(round), sample.sample_id);
    pending.push_back(i);
    pending_lengths.emplace_back(sample.prompt_len_tokens, sample.out_len_tokens);
  }
  report.active_count = static_cast<int>(pending.size());
  report.microbatches = build_microbatches(state.controller_rank,
                                           pending_lengths,
                                           params.microbatch_size);

  // Decide acceptance. Samples surviving the rejection draw are done;
  // at max_rounds everything left is force-accepted with its current
  // response so the step terminates.
  const bool final_round = round >= params.max_rounds;
  for (std::size_t i : pending) {
    ShardSampleState& sample = state.samples[i];
    const std::uint64_t unit =
        params.rejection.per_group
            ? sample.sample_id / static_cast<std::uint64_t>(params.rejection.group_size)
            : sample.sample_id;
    const std::uint64_t key = hash_key(
        {params.seed, workload::kRejectionStream,
         static_cast<std::uint64_t>(state.step_index),
         static_cast<std::uint64_t>(round), unit});
    const bool rejected = uniform_from_key(key) < params.rejection.reject_rate;
    if (rejected && !final_round) {
      ++report.pending_count;
      continue;
    }
    if (rejected && final_round) {
      ++report.forced_accept_count;
    }
    sample.accepted = true;
    sample.accepted_round = round;
    ++report.newly_accepted_count;
    const long long tokens = sample.prompt_len_tokens + sample.out_len_tokens;
    report.accepted_score_tokens += tokens;
    report.accepted_train_units += tokens * tokens;
  }
  return report;
}

double StepTrace::busy_gpu_s_total() const {
  double total = 0;
  for (const PartitionUsage& p : partitions) total += p.busy_gpu_s;
  return total;
}

double StepTrace::idle_gpu_s_total() const {
  double total = 0;
  for (const PartitionUsage& p : partitions) total += p.idle_gpu_s;
  return total;
}

RoundProbeResult simulate_round(const WorkloadSnapshot& snapshot, int sampler_gpus,
                                int genrm_gpus, const StepContext& ctx) {
  std::vector<MicrobatchAggregate> microbatches;
  for (std::size_t rank = 0; rank < snapshot.shard_lengths.size(); ++rank) {
    auto shard_mbs = build_microbatches(static_cast<int>(rank),
                                        snapshot.shard_lengths[rank],
                                        ctx.microbatch_size);
    microbatches.insert(microbatches.end(), shard_mbs.begin(), shard_mbs.end());
  }
  const RoundTiming timing =
      time_round(microbatches, 0.0, sampler_gpus, genrm_gpus, ctx.costs);
  RoundProbeResult result;
  result.round_span_s = timing.end_s;
  result.generation_span_s = timing.generation_end_s;
  result.rm_busy_s = timing.rm_busy_s;
  return result;
}

ShardState make_shard_state(const workload::RolloutBatch& batch,
                            int num_controllers, int controller_rank) {
  const workload::ShardRange range = workload::shard_dataset(
      static_cast<std::uint64_t>(batch.samples.size()), num_controllers,
      controller_rank);
  ShardState shard;
  shard.controller_rank = controller_rank;
  shard.step_index = batch.step_index;
  shard.samples.reserve(range.size());
  for (std::uint64_t i = range.begin; i < range.end; ++i) {
    const workload::RolloutSample& sample = batch.samples[i];
    ShardSampleState state;
    state.sample_id = sample.sample_id;
    state.prompt_len_tokens = sample.prompt_len_tokens;
    state.out_len_tokens = sample.target_out_len_tokens;
    state.accepted = sample.accepted;
    state.accepted_round = sample.accepted_round;
    shard.samples.push_back(state);
  }
  return shard;
}

StepAssembler::StepAssembler(const placement::PlacementPlan& plan,
                             const StepContext& ctx, int step_index)
    : plan_(plan), ctx_(ctx) {
  ctx_.cluster.validate();
  ctx_.costs.validate();
  placement::validate_plan(plan_, ctx_.cluster, ctx_.sampler_model,
                           ctx_.genrm_model);
  trace_.step_index = step_index;
  trace_.mode = plan_.mode;
  trace_.sampler_gpus = plan_.sampler_gpus;
  trace_.genrm_gpus = plan_.genrm_gpus;
  if (plan_.mode == placement::Mode::kFullColocate) {
    // The actor occupies the pool after the previous step's training;
    // rollout begins by swapping the sampler in.
    charge_swap(ctx_.sampler_model);
  }
}

void StepAssembler::advance(double span_s, EventKind kind) {
  clock_.schedule(clock_.now() + span_s, kind);
  clock_.pop();
}

void StepAssembler::charge_swap(const cluster::ModelSpec& model) {
  const double span = cluster::swap_time(model, ctx_.cluster);
  advance(span, EventKind::kSwapDone);
  trace_.swap_time_total_s += span;
  ++trace_.swap_count;
}

bool StepAssembler::feed_round(const std::vector<ShardRoundReport>& reports) {
  if (finished_) throw ConfigError("feed_round after finish");
  const int round = ++rounds_fed_;
  const int n = cluster::total_gpus(ctx_.cluster);
  const double overhead = ctx_.costs.fixed_stage_overhead_s;

  int active = 0;
  int pending = 0;
  for (const ShardRoundReport& report : reports) {
    active += report.active_count;
    pending += report.pending_count;
    trace_.forced_accepts += report.forced_accept_count;
    train_units_ += report.accepted_train_units;
  }

  if (plan_.mode == placement::Mode::kFullColocate) {
    const double rate = cluster::partition_rate(n, ctx_.costs.scaling_exponent);
    if (round > 1) {
      // Swap the sampler back in for the resampling round.
      charge_swap(ctx_.sampler_model);
    }
    int max_out = 0;
    long long score_tokens = 0;
    for (const ShardRoundReport& report : reports) {
      for (const MicrobatchAggregate& mb : report.microbatches) {
        max_out = std::max(max_out, mb.max_out_len_tokens);
        score_tokens += mb.score_tokens;
      }
    }

    RoundDetail detail;
    detail.round = round;
    detail.active_samples = active;
    detail.start_s = clock_.now();

    const double gen_span =
        overhead + max_out * ctx_.costs.gen_seconds_per_token / rate;
    advance(gen_span, EventKind::kGenerationDone);
    trace_.generation_s += gen_span;
    busy_gpu_s_ += n * gen_span;
    detail.generation_end_s = clock_.now();

    charge_swap(ctx_.genrm_model);
    detail.first_dispatch_s = clock_.now();

    // The whole pool scores the round's batch in one pass.
    const double rm_span =
        overhead + static_cast<double>(score_tokens) *
                       ctx_.costs.rm_seconds_per_token / rate;
    advance(rm_span, EventKind::kRewardDone);
    trace_.rewarding_s += rm_span;
    busy_gpu_s_ += n * rm_span;
    detail.end_s = clock_.now();
    detail.rm_busy_s = rm_span;
    trace_.round_details.push_back(detail);
  } else {
    const int x = plan_.sampler_gpus;
    const int y = plan_.genrm_gpus;
    std::vector<MicrobatchAggregate> microbatches;
    for (const ShardRoundReport& report : reports) {
      microbatches.insert(microbatches.end(), report.microbatches.begin(),
                          report.microbatches.end());
    }
    const RoundTiming timing =
        time_round(microbatches, clock_.now(), x, y, ctx_.costs);
    const double gen_span = timing.generation_end_s - timing.start_s;
    const double tail_span = timing.end_s - timing.generation_end_s;
    advance(gen_span, EventKind::kGenerationDone);
    advance(tail_span, EventKind::kRewardDone);
    trace_.generation_s += gen_span;
    trace_.rewarding_s += tail_span;
    sampler_busy_gpu_s_ += x * gen_span;
    genrm_busy_gpu_s_ += y * timing.rm_busy_s;

    RoundDetail detail;
    detail.round = round;
    detail.active_samples = active;
    detail.start_s = timing.start_s;
    detail.generation_end_s = timing.generation_end_s;
    detail.first_dispatch_s = timing.first_dispatch_s;
    detail.end_s = timing.end_s;
    detail.rm_busy_s = timing.rm_busy_s;
    trace_.round_details.push_back(detail);
  }
  return pending > 0;
}

StepTrace StepAssembler::finish() {
  if (finished_) throw ConfigError("finish called twice");
  finished_ = true;
  trace_.rounds = rounds_fed_;
  const int n = cluster::total_gpus(ctx_.cluster);
  const double overhead = ctx_.costs.fixed_stage_overhead_s;

  if (plan_.mode == placement::Mode::kFullColocate) {
    const double rate = cluster::partition_rate(n, ctx_.costs.scaling_exponent);
    charge_swap(ctx_.actor_model);
    const double prep_span =
        overhead + ctx_.payload_transfer_s +
        static_cast<double>(train_units_) * ctx_.costs.train_seconds_per_unit *
            kPreparationTrainShare / rate;
    advance(prep_span, EventKind::kStageDone);
    trace_.preparation_s = prep_span;
    busy_gpu_s_ += n * prep_span;
    trace_.rollout_s = clock_.now();

    const double train_span =
        overhead + static_cast<double>(train_units_) *
                       ctx_.costs.train_seconds_per_unit / rate;
    advance(train_span, EventKind::kStageDone);
    trace_.training_s = train_span;
    busy_gpu_s_ += n * train_span;

    trace_.step_wall_s = clock_.now();
    trace_.partitions.push_back(PartitionUsage{
        "cluster", n, busy_gpu_s_, n * trace_.step_wall_s - busy_gpu_s_});
  } else {
    const int x = plan_.sampler_gpus;
    const int y = plan_.genrm_gpus;
    const bool swaps_actor = plan_.mode == placement::Mode::kPartialColocate;
    // Partial colocation swaps the actor onto the whole pool for
    // preparation and training; coexist keeps it resident on the
    // sampler partition and trains there while the rest idles.
    const int train_gpus = swaps_actor ? n : x;
    const double train_rate =
        cluster::partition_rate(train_gpus, ctx_.costs.scaling_exponent);

    if (swaps_actor) {
      charge_swap(ctx_.actor_model);
    }
    const double prep_span =
        overhead + ctx_.payload_transfer_s +
        static_cast<double>(train_units_) * ctx_.costs.train_seconds_per_unit *
            kPreparationTrainShare / train_rate;
    advance(prep_span, EventKind::kStageDone);
    trace_.preparation_s = prep_span;
    sampler_busy_gpu_s_ += x * prep_span;
    if (swaps_actor) genrm_busy_gpu_s_ += y * prep_span;
    trace_.rollout_s = clock_.now();

    const double train_span =
        overhead + static_cast<double>(train_units_) *
                       ctx_.costs.train_seconds_per_unit / train_rate;
    advance(train_span, EventKind::kStageDone);
    trace_.training_s = train_span;
    sampler_busy_gpu_s_ += x * train_span;
    if (swaps_actor) genrm_busy_gpu_s_ += y * train_span;

    trace_.step_wall_s = clock_.now();
    trace_.partitions.push_back(
        PartitionUsage{"sampler", x, sampler_busy_gpu_s_,
                       x * trace_.step_wall_s - sampler_busy_gpu_s_});
    trace_.partitions.push_back(
        PartitionUsage{"genrm", y, genrm_busy_gpu_s_,
                       y * trace_.step_wall_s - genrm_busy_gpu_s_});
  }

  trace_.bubble_fraction =
      trace_.step_wall_s > 0
          ? trace_.idle_gpu_s_total() / (n * trace_.step_wall_s)
          : 0.0;
  return trace_;
}

StepResult run_rlhf_step(const placement::PlacementPlan& plan,
                         workload::RolloutBatch& batch, const StepContext& ctx) {
  ctx.out_dist.validate();
  if (ctx.max_rounds < 1) throw ConfigError("max_rounds must be at least 1");
  if (ctx.num_controllers < 1) throw ConfigError("num_controllers must be positive");

  std::vector<ShardState> shards;
  shards.reserve(static_cast<std::size_t>(ctx.num_controllers));
  for (int rank = 0; rank < ctx.num_controllers; ++rank) {
    shards.push_back(make_shard_state(batch, ctx.num_controllers, rank));
  }
  const RoundParams round_params{ctx.out_dist, ctx.rejection, ctx.seed,
                                 ctx.microbatch_size, ctx.max_rounds};

  StepAssembler assembler(plan, ctx, batch.step_index);
  StepResult result;
  int round = 1;
  while (true) {
    std::vector<ShardRoundReport> reports;
    reports.reserve(shards.size());
    for (ShardState& shard : shards) {
      reports.push_back(shard_round_output(shard, round, round_params));
    }
    if (round == 1) {
      result.snapshot = capture_snapshot(shards);
    }
    if (!assembler.feed_round(reports)) break;
    ++round;
  }
  result.trace = assembler.finish();
  copy_back(shards, batch);
  return result;
}

}  // namespace yatt::sim
