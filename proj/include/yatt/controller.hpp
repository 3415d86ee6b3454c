#pragma once

#include <cstdint>

namespace yatt::ctrl {

enum class TopologyKind {
  kSingle,
  kParallel,
};

// Host-side controller processes that own the rollout data plane.
// Memory sizes are bytes; bandwidth is bytes per second.
struct ControllerTopology {
  TopologyKind kind = TopologyKind::kSingle;
  int num_controllers = 1;
  std::uint64_t per_controller_host_memory_bytes = 0;
  // Share of host memory the data plane may use; the rest is reserved
  // for the framework, weight staging, and page cache.
  double usable_fraction = 1.0;
  double rpc_bandwidth_bytes_per_s = 0;
  // Multiplier on the per-controller share to account for uneven
  // sharding (1.0 = perfectly even).
  double imbalance_factor = 1.0;

  void validate() const;
};

// Size of one step's rollout artifacts: `num_samples` samples, each
// carrying `items_per_sample` tensors/records of `item_bytes`, held in
// `copies` simultaneous copies (e.g. receive + reshard buffers).
struct RolloutPayloadSpec {
  std::uint64_t num_samples = 0;
  std::uint64_t items_per_sample = 1;
  std::uint64_t item_bytes = 0;
  std::uint64_t copies = 1;
};

std::uint64_t estimate_payload_bytes(const RolloutPayloadSpec& payload);

struct FeasibilityReport {
  bool fits = false;
  double per_controller_bytes = 0;
  double usable_bytes = 0;
  // usable_bytes - per_controller_bytes; negative when oversubscribed.
  double headroom_bytes = 0;
};

FeasibilityReport check_controller_feasibility(const ControllerTopology& topology,
                                               const RolloutPayloadSpec& payload);

// Wall time to move one controller's payload share over its RPC link.
double controller_transfer_time_s(const RolloutPayloadSpec& payload,
                                  const ControllerTopology& topology);

}  // namespace yatt::ctrl
