#include "yatt/controller.hpp"

#include "yatt/errors.hpp"

namespace yatt::ctrl {

void ControllerTopology::validate() const {
  if (num_controllers <= 0) {
    throw ConfigError("num_controllers must be positive");
  }
  if (kind == TopologyKind::kSingle && num_controllers != 1) {
    throw ConfigError("single-controller topology must have exactly one controller");
  }
  if (per_controller_host_memory_bytes == 0) {
    throw ConfigError("per_controller_host_memory_bytes must be positive");
  }
  if (usable_fraction <= 0 || usable_fraction > 1) {
    throw ConfigError("usable_fraction must lie in (0, 1]");
  }
  if (rpc_bandwidth_bytes_per_s <= 0) {
    throw ConfigError("rpc_bandwidth_bytes_per_s must be positive");
  }
  if (imbalance_factor < 1.0) {
    throw ConfigError("imbalance_factor must be at least 1.0");
  }
}

std::uint64_t estimate_payload_bytes(const RolloutPayloadSpec& payload) {
  return payload.num_samples * payload.items_per_sample * payload.item_bytes *
         payload.copies;
}

FeasibilityReport check_controller_feasibility(const ControllerTopology& topology,
                                               const RolloutPayloadSpec& payload) {
  topology.validate();
  const double total = static_cast<double>(estimate_payload_bytes(payload));
  FeasibilityReport report;
  report.per_controller_bytes =
      total / topology.num_controllers * topology.imbalance_factor;
  report.usable_bytes =
      static_cast<double>(topology.per_controller_host_memory_bytes) *
      topology.usable_fraction;
  report.headroom_bytes = report.usable_bytes - report.per_controller_bytes;
  report.fits = report.per_controller_bytes <= report.usable_bytes;
  return report;
}

double controller_transfer_time_s(const RolloutPayloadSpec& payload,
                                  const ControllerTopology& topology) {
  topology.validate();
  const double total = static_cast<double>(estimate_payload_bytes(payload));
  return total / topology.num_controllers / topology.rpc_bandwidth_bytes_per_s;
}

}  // namespace yatt::ctrl
