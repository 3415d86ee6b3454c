#include "yatt/placement.hpp"

#include <algorithm>
#include <cmath>
#include <map>

#include "yatt/errors.hpp"

namespace yatt::placement {

std::string mode_name(Mode mode) {
  switch (mode) {
    case Mode::kFullColocate:
      return "full_colocate";
    case Mode::kPartialColocate:
      return "partial_colocate";
    case Mode::kCoExist:
      return "coexist";
  }
  throw ConfigError("unknown placement mode value");
}

Mode mode_from_name(const std::string& name) {
  if (name == "full_colocate") return Mode::kFullColocate;
  if (name == "partial_colocate") return Mode::kPartialColocate;
  if (name == "coexist") return Mode::kCoExist;
  throw ConfigError("unknown placement mode: " + name);
}

namespace {

void require_fits(const cluster::ModelSpec& model, int gpus,
                  const cluster::ClusterSpec& spec) {
  if (gpus < model.min_gpus) {
    throw InfeasiblePlan("partition for " + model.name + " has " +
                         std::to_string(gpus) + " GPUs, fewer than min_gpus");
  }
  const std::uint64_t capacity =
      static_cast<std::uint64_t>(gpus) * spec.gpu_memory_bytes;
  if (cluster::model_bytes(model) > capacity) {
    throw InfeasiblePlan("weights of " + model.name +
                         " exceed partition GPU memory");
  }
}

}  // namespace

void validate_plan(const PlacementPlan& plan, const cluster::ClusterSpec& spec,
                   const cluster::ModelSpec& sampler_model,
                   const cluster::ModelSpec& genrm_model) {
  const int n = cluster::total_gpus(spec);
  switch (plan.mode) {
    case Mode::kFullColocate:
      if (plan.sampler_gpus != n || plan.genrm_gpus != n) {
        throw InfeasiblePlan(
            "full colocation time-shares the whole pool; both partitions "
            "must equal total_gpus");
      }
      require_fits(sampler_model, n, spec);
      require_fits(genrm_model, n, spec);
      return;
    case Mode::kPartialColocate:
    case Mode::kCoExist:
      if (plan.sampler_gpus < 1 || plan.genrm_gpus < 1) {
        throw InfeasiblePlan("each partition needs at least one GPU");
      }
      if (plan.sampler_gpus + plan.genrm_gpus != n) {
        throw InfeasiblePlan("partitions must cover the pool exactly");
      }
      require_fits(sampler_model, plan.sampler_gpus, spec);
      require_fits(genrm_model, plan.genrm_gpus, spec);
      return;
  }
  throw ConfigError("unknown placement mode value");
}

Split weighted_placement(std::uint64_t sampler_params, std::uint64_t genrm_params,
                         int total_gpus) {
  if (total_gpus < 2) {
    throw InfeasiblePlan("need at least two GPUs to split");
  }
  if (sampler_params == 0 && genrm_params == 0) {
    throw ConfigError("both models have zero parameters");
  }
  const double share = static_cast<double>(sampler_params) /
                       (static_cast<double>(sampler_params) +
                        static_cast<double>(genrm_params));
  int x = static_cast<int>(std::llround(share * total_gpus));
  x = std::clamp(x, 1, total_gpus - 1);
  return Split{x, total_gpus - x};
}

TernarySearchResult ternary_search_placement(const std::function<double(int)>& f,
                                             int lo, int hi) {
  if (lo > hi) throw ConfigError("empty search range");
  std::map<int, double> memo;
  TernarySearchResult result;
  const auto eval = [&](int x) {
    auto it = memo.find(x);
    if (it != memo.end()) return it->second;
    const double v = f(x);
    memo.emplace(x, v);
    ++result.evaluations;
    return v;
  };

  while (hi - lo > 2) {
    const int m1 = lo + (hi - lo) / 3;
    const int m2 = hi - (hi - lo) / 3;
    if (eval(m1) > eval(m2)) {
      lo = m1 + 1;
    } else {
      hi = m2;
    }
    ++result.iterations;
  }

  int best_x = lo;
  double best_value = eval(lo);
  for (int x = lo + 1; x <= hi; ++x) {
    const double v = eval(x);
    if (v < best_value) {
      best_value = v;
      best_x = x;
    }
  }
  result.best_x = best_x;
  result.best_value = best_value;
  return result;
}

Replanner::Outcome Replanner::consider(const std::function<double(int)>& probe,
                                       int lo, int hi) {
  const TernarySearchResult search = ternary_search_placement(probe, lo, hi);
  Outcome outcome;
  outcome.evaluations = search.evaluations;
  const double current_value = probe(sampler_gpus_);
  if (search.best_x != sampler_gpus_ && search.best_value < current_value) {
    sampler_gpus_ = search.best_x;
    outcome.switched = true;
  }
  outcome.sampler_gpus = sampler_gpus_;
  return outcome;
}

}  // namespace yatt::placement
