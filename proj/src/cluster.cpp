#include "yatt/cluster.hpp"

#include <cmath>

#include "yatt/errors.hpp"

namespace yatt::cluster {

std::string role_name(Role role) {
  switch (role) {
    case Role::kActor:
      return "actor";
    case Role::kSampler:
      return "sampler";
    case Role::kGenRM:
      return "genrm";
    case Role::kCritic:
      return "critic";
    case Role::kReference:
      return "reference";
  }
  throw ConfigError("unknown role value");
}

Role role_from_name(const std::string& name) {
  if (name == "actor") return Role::kActor;
  if (name == "sampler") return Role::kSampler;
  if (name == "genrm") return Role::kGenRM;
  if (name == "critic") return Role::kCritic;
  if (name == "reference") return Role::kReference;
  throw ConfigError("unknown role name: " + name);
}

void ClusterSpec::validate() const {
  if (num_nodes <= 0) throw ConfigError("num_nodes must be positive");
  if (gpus_per_node <= 0) throw ConfigError("gpus_per_node must be positive");
  if (gpu_memory_bytes == 0) throw ConfigError("gpu_memory_bytes must be positive");
  if (host_memory_bytes == 0) throw ConfigError("host_memory_bytes must be positive");
  if (intra_node_bw_bytes_per_s <= 0) throw ConfigError("intra_node_bw_bytes_per_s must be positive");
  if (inter_node_bw_bytes_per_s <= 0) throw ConfigError("inter_node_bw_bytes_per_s must be positive");
  if (swap_bw_bytes_per_s <= 0) throw ConfigError("swap_bw_bytes_per_s must be positive");
  if (engine_reload_overhead_s < 0) throw ConfigError("engine_reload_overhead_s must be non-negative");
}

void ModelSpec::validate() const {
  if (name.empty()) throw ConfigError("model name must be non-empty");
  if (param_count == 0) throw ConfigError("param_count must be positive");
  if (bytes_per_param <= 0) throw ConfigError("bytes_per_param must be positive");
  if (min_gpus <= 0) throw ConfigError("min_gpus must be positive");
}

void StageCostModel::validate() const {
  if (gen_seconds_per_token <= 0) throw ConfigError("gen_seconds_per_token must be positive");
  if (rm_seconds_per_token <= 0) throw ConfigError("rm_seconds_per_token must be positive");
  if (train_seconds_per_unit <= 0) throw ConfigError("train_seconds_per_unit must be positive");
  if (fixed_stage_overhead_s < 0) throw ConfigError("fixed_stage_overhead_s must be non-negative");
  if (scaling_exponent <= 0) throw ConfigError("scaling_exponent must be positive");
}

int total_gpus(const ClusterSpec& spec) {
  return spec.num_nodes * spec.gpus_per_node;
}

std::uint64_t model_bytes(const ModelSpec& model) {
  return model.param_count * static_cast<std::uint64_t>(model.bytes_per_param);
}

double swap_time(const ModelSpec& model, const ClusterSpec& spec) {
  const std::uint64_t bytes = model_bytes(model);
  if (bytes > spec.host_memory_bytes) {
    throw HostMemoryExceeded("model " + model.name + " does not fit in host memory");
  }
  return spec.engine_reload_overhead_s +
         static_cast<double>(bytes) / spec.swap_bw_bytes_per_s;
}

double partition_rate(int gpus, double scaling_exponent) {
  if (gpus <= 0) throw ConfigError("partition must have at least one GPU");
  return std::pow(static_cast<double>(gpus), scaling_exponent);
}

}  // namespace yatt::cluster
