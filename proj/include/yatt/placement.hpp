#pragma once

#include <functional>
#include <string>

#include "yatt/cluster.hpp"

namespace yatt::placement {

// How models share the machine pool during one RLHF step.
//   kFullColocate:    every stage time-shares all GPUs; weights are
//                     swapped between host and device at stage borders.
//   kPartialColocate: sampler and reward model own disjoint partitions
//                     during rollout; the actor is swapped in to train
//                     on the whole pool.
//   kCoExist:         like partial, but nothing is ever swapped; the
//                     actor lives on the sampler partition and trains
//                     there while the reward partition sits idle.
enum class Mode {
  kFullColocate,
  kPartialColocate,
  kCoExist,
};

std::string mode_name(Mode mode);
Mode mode_from_name(const std::string& name);

struct PlacementPlan {
  Mode mode = Mode::kFullColocate;
  int sampler_gpus = 0;
  int genrm_gpus = 0;
  // Re-run the placement search every this many steps (0 = never).
  int replan_interval_steps = 0;
  bool dynamic = false;
};

// Throws InfeasiblePlan unless the plan matches the mode's partition
// shape and every partition can hold its model's weights.
void validate_plan(const PlacementPlan& plan, const cluster::ClusterSpec& spec,
                   const cluster::ModelSpec& sampler_model,
                   const cluster::ModelSpec& genrm_model);

// Splits n GPUs between two models proportionally to parameter count,
// clamped so each side keeps at least one GPU.
struct Split {
  int sampler_gpus = 0;
  int genrm_gpus = 0;
};
Split weighted_placement(std::uint64_t sampler_params, std::uint64_t genrm_params,
                         int total_gpus);

struct TernarySearchResult {
  int best_x = 0;
  double best_value = 0;
  // Distinct objective evaluations (repeat probes hit a memo).
  int evaluations = 0;
  int iterations = 0;
};

// Minimizes f over the integer range [lo, hi], assuming f is unimodal.
// Shrinks the range by thirds, then scans the final few candidates.
// Ties prefer the smaller x.
TernarySearchResult ternary_search_placement(const std::function<double(int)>& f,
                                             int lo, int hi);

// Periodic placement revision. The probe maps a sampler partition size
// to a predicted round time; the split only changes when the candidate
// strictly beats the current size under the same probe.
class Replanner {
 public:
  Replanner(int interval_steps, int initial_sampler_gpus)
      : interval_steps_(interval_steps), sampler_gpus_(initial_sampler_gpus) {}

  bool due(int step_index) const {
    return interval_steps_ > 0 && step_index > 0 &&
           step_index % interval_steps_ == 0;
  }

  struct Outcome {
    bool switched = false;
    int sampler_gpus = 0;
    int evaluations = 0;
  };

  Outcome consider(const std::function<double(int)>& probe, int lo, int hi);

  int sampler_gpus() const { return sampler_gpus_; }

 private:
  int interval_steps_;
  int sampler_gpus_;
};

}  // namespace yatt::placement
