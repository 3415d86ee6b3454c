#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "yatt/cluster.hpp"
#include "yatt/controller.hpp"
#include "yatt/placement.hpp"
#include "yatt/workload.hpp"

namespace yatt::cli {

// Everything one experiment needs, loadable from a single JSON file.
// Field names carry units; memory is binary GiB, bandwidths are decimal
// bytes per second, times are seconds.
struct Scenario {
  std::string name;
  std::uint64_t seed = 1;
  int steps = 1;

  cluster::ClusterSpec cluster;
  cluster::ModelSpec actor_model;
  cluster::ModelSpec sampler_model;
  cluster::ModelSpec genrm_model;
  cluster::StageCostModel costs;

  placement::Mode mode = placement::Mode::kFullColocate;
  // 0 derives the split (everything for full colocation, a
  // parameter-weighted split otherwise).
  int sampler_gpus = 0;
  bool dynamic_placement = false;
  int replan_interval_steps = 10;

  int global_batch_size = 1;
  workload::LengthDistribution prompt_dist;
  workload::LengthDistribution out_dist;
  double drift_rate_per_step = 0;
  workload::RejectionConfig rejection;
  int microbatch_size = 8;
  int max_rounds = 64;

  ctrl::ControllerTopology controllers;
  // Per-sample payload shape; num_samples comes from the batch size.
  ctrl::RolloutPayloadSpec payload;

  void validate() const;
  nlohmann::json to_json() const;
  static Scenario from_json(const nlohmann::json& j);
  static Scenario from_file(const std::string& path);
  void to_file(const std::string& path) const;
};

std::vector<std::string> builtin_scenario_names();
Scenario builtin_scenario(const std::string& name);

// Accepts either a path or "builtin:<name>".
Scenario load_scenario(const std::string& ref);

}  // namespace yatt::cli
