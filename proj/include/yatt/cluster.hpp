#pragma once

#include <cstdint>
#include <string>

namespace yatt::cluster {

// Role a model plays in the RLHF workflow. Sampler is the inference
// engine serving the actor's weights during rollout; GenRM is a
// generative reward model served on its own engine.
enum class Role {
  kActor,
  kSampler,
  kGenRM,
  kCritic,
  kReference,
};

std::string role_name(Role role);
Role role_from_name(const std::string& name);

// Static description of the machine pool. Bandwidths are bytes per
// second (decimal); memory sizes are bytes (callers typically build
// them from binary units).
struct ClusterSpec {
  int num_nodes = 0;
  int gpus_per_node = 0;
  std::uint64_t gpu_memory_bytes = 0;
  std::uint64_t host_memory_bytes = 0;
  double intra_node_bw_bytes_per_s = 0;
  double inter_node_bw_bytes_per_s = 0;
  // Effective host<->device transfer rate used when swapping model
  // weights in and out of GPU memory.
  double swap_bw_bytes_per_s = 0;
  // Fixed cost of bringing an inference engine up on freshly loaded
  // weights (allocator setup, graph capture, cache warmup).
  double engine_reload_overhead_s = 0;

  void validate() const;
};

struct ModelSpec {
  std::string name;
  Role role = Role::kActor;
  std::uint64_t param_count = 0;
  int bytes_per_param = 2;
  int min_gpus = 1;

  void validate() const;
};

// Per-token stage rates for a given workload, normalized to one GPU.
// A stage running on g GPUs divides the per-token cost by
// pow(g, scaling_exponent).
struct StageCostModel {
  // Seconds per generated token (decode) on one GPU.
  double gen_seconds_per_token = 0;
  // Seconds per scored token (prefill over prompt + response) on one GPU.
  double rm_seconds_per_token = 0;
  // Seconds per unit of training workload (squared sequence length) on one GPU.
  double train_seconds_per_unit = 0;
  // Fixed per-stage launch cost, independent of batch content.
  double fixed_stage_overhead_s = 0;
  // Exponent of the GPU-count speedup. 1.0 means linear scaling.
  double scaling_exponent = 1.0;

  void validate() const;
};

int total_gpus(const ClusterSpec& spec);

std::uint64_t model_bytes(const ModelSpec& model);

// Time to swap a model onto GPUs: weight transfer at swap bandwidth
// plus the fixed engine reload overhead. Throws HostMemoryExceeded if
// the weights cannot be staged in host memory.
double swap_time(const ModelSpec& model, const ClusterSpec& spec);

// Effective speedup of a stage when spread over `gpus` devices.
double partition_rate(int gpus, double scaling_exponent);

}  // namespace yatt::cluster
