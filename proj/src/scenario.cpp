#include "yatt/scenario.hpp"

#include <cmath>
#include <fstream>

#include <nlohmann/json.hpp>

#include "yatt/common.hpp"
#include "yatt/errors.hpp"

namespace yatt::cli {

using nlohmann::json;

namespace {

double gib_to_bytes_exact(double gib) {
  return gib * static_cast<double>(kGiB);
}

json dist_to_json(const workload::LengthDistribution& dist) {
  return json{{"kind", workload::dist_kind_name(dist.kind)},
              {"p1", dist.p1},
              {"p2", dist.p2},
              {"max_len_tokens", dist.max_len_tokens}};
}

workload::LengthDistribution dist_from_json(const json& j) {
  workload::LengthDistribution dist;
  dist.kind = workload::dist_kind_from_name(j.at("kind").get<std::string>());
  dist.p1 = j.at("p1").get<double>();
  dist.p2 = j.value("p2", 0.0);
  dist.max_len_tokens = j.at("max_len_tokens").get<int>();
  return dist;
}

json model_to_json(const cluster::ModelSpec& model) {
  return json{{"name", model.name},
              {"role", cluster::role_name(model.role)},
              {"param_count", model.param_count},
              {"bytes_per_param", model.bytes_per_param},
              {"min_gpus", model.min_gpus}};
}

cluster::ModelSpec model_from_json(const json& j) {
  cluster::ModelSpec model;
  model.name = j.at("name").get<std::string>();
  model.role = cluster::role_from_name(j.at("role").get<std::string>());
  model.param_count = j.at("param_count").get<std::uint64_t>();
  model.bytes_per_param = j.value("bytes_per_param", 2);
  model.min_gpus = j.value("min_gpus", 1);
  return model;
}

}  // namespace

void Scenario::validate() const {
  if (name.empty()) throw ConfigError("scenario name must be non-empty");
  if (steps <= 0) throw ConfigError("steps must be positive");
  cluster.validate();
  actor_model.validate();
  sampler_model.validate();
  genrm_model.validate();
  costs.validate();
  prompt_dist.validate();
  out_dist.validate();
  if (drift_rate_per_step < 0) {
    throw ConfigError("drift_rate_per_step must be non-negative");
  }
  if (rejection.reject_rate < 0 || rejection.reject_rate >= 1) {
    throw ConfigError("reject_rate must lie in [0, 1)");
  }
  if (rejection.per_group && rejection.group_size <= 0) {
    throw ConfigError("group_size must be positive for per-group rejection");
  }
  if (global_batch_size < 0) throw ConfigError("global_batch_size must be non-negative");
  if (microbatch_size <= 0) throw ConfigError("microbatch_size must be positive");
  if (max_rounds < 1) throw ConfigError("max_rounds must be at least 1");
  controllers.validate();
  const int n = cluster::total_gpus(cluster);
  if (mode == placement::Mode::kFullColocate) {
    if (dynamic_placement) {
      throw ConfigError("dynamic placement needs separate partitions");
    }
    if (sampler_gpus != 0 && sampler_gpus != n) {
      throw ConfigError("full colocation uses the whole pool");
    }
  } else if (sampler_gpus != 0 && (sampler_gpus < 1 || sampler_gpus >= n)) {
    throw ConfigError("sampler_gpus must leave at least one GPU per partition");
  }
}

json Scenario::to_json() const {
  json j;
  j["name"] = name;
  j["seed"] = seed;
  j["steps"] = steps;
  j["cluster"] = json{
      {"num_nodes", cluster.num_nodes},
      {"gpus_per_node", cluster.gpus_per_node},
      {"gpu_memory_gib", static_cast<double>(cluster.gpu_memory_bytes) / kGiB},
      {"host_memory_gib", static_cast<double>(cluster.host_memory_bytes) / kGiB},
      {"intra_node_bw_bytes_per_s", cluster.intra_node_bw_bytes_per_s},
      {"inter_node_bw_bytes_per_s", cluster.inter_node_bw_bytes_per_s},
      {"swap_bw_bytes_per_s", cluster.swap_bw_bytes_per_s},
      {"engine_reload_overhead_s", cluster.engine_reload_overhead_s}};
  j["models"] = json{{"actor", model_to_json(actor_model)},
                     {"sampler", model_to_json(sampler_model)},
                     {"genrm", model_to_json(genrm_model)}};
  j["costs"] = json{{"gen_seconds_per_token", costs.gen_seconds_per_token},
                    {"rm_seconds_per_token", costs.rm_seconds_per_token},
                    {"train_seconds_per_unit", costs.train_seconds_per_unit},
                    {"fixed_stage_overhead_s", costs.fixed_stage_overhead_s},
                    {"scaling_exponent", costs.scaling_exponent}};
  j["placement"] = json{{"mode", placement::mode_name(mode)},
                        {"sampler_gpus", sampler_gpus},
                        {"dynamic", dynamic_placement},
                        {"replan_interval_steps", replan_interval_steps}};
  j["workload"] = json{{"global_batch_size", global_batch_size},
                       {"prompt_len", dist_to_json(prompt_dist)},
                       {"output_len", dist_to_json(out_dist)},
                       {"drift_rate_per_step", drift_rate_per_step},
                       {"rejection", json{{"reject_rate", rejection.reject_rate},
                                          {"per_group", rejection.per_group},
                                          {"group_size", rejection.group_size}}},
                       {"microbatch_size", microbatch_size},
                       {"max_rounds", max_rounds}};
  j["controllers"] = json{
      {"kind", controllers.kind == ctrl::TopologyKind::kSingle ? "single" : "parallel"},
      {"num_controllers", controllers.num_controllers},
      {"per_controller_host_memory_gib",
       static_cast<double>(controllers.per_controller_host_memory_bytes) / kGiB},
      {"usable_fraction", controllers.usable_fraction},
      {"rpc_bandwidth_bytes_per_s", controllers.rpc_bandwidth_bytes_per_s},
      {"imbalance_factor", controllers.imbalance_factor}};
  j["payload"] = json{{"items_per_sample", payload.items_per_sample},
                      {"item_bytes", payload.item_bytes},
                      {"copies", payload.copies}};
  return j;
}

Scenario Scenario::from_json(const json& j) {
  try {
    Scenario s;
    s.name = j.at("name").get<std::string>();
    s.seed = j.value("seed", std::uint64_t{1});
    s.steps = j.at("steps").get<int>();

    const json& c = j.at("cluster");
    s.cluster.num_nodes = c.at("num_nodes").get<int>();
    s.cluster.gpus_per_node = c.at("gpus_per_node").get<int>();
    s.cluster.gpu_memory_bytes = static_cast<std::uint64_t>(
        std::llround(gib_to_bytes_exact(c.at("gpu_memory_gib").get<double>())));
    s.cluster.host_memory_bytes = static_cast<std::uint64_t>(
        std::llround(gib_to_bytes_exact(c.at("host_memory_gib").get<double>())));
    s.cluster.intra_node_bw_bytes_per_s =
        c.at("intra_node_bw_bytes_per_s").get<double>();
    s.cluster.inter_node_bw_bytes_per_s =
        c.at("inter_node_bw_bytes_per_s").get<double>();
    s.cluster.swap_bw_bytes_per_s = c.at("swap_bw_bytes_per_s").get<double>();
    s.cluster.engine_reload_overhead_s =
        c.at("engine_reload_overhead_s").get<double>();

    const json& m = j.at("models");
    s.actor_model = model_from_json(m.at("actor"));
    s.sampler_model = model_from_json(m.at("sampler"));
    s.genrm_model = model_from_json(m.at("genrm"));

    const json& costs = j.at("costs");
    s.costs.gen_seconds_per_token = costs.at("gen_seconds_per_token").get<double>();
    s.costs.rm_seconds_per_token = costs.at("rm_seconds_per_token").get<double>();
    s.costs.train_seconds_per_unit =
        costs.at("train_seconds_per_unit").get<double>();
    s.costs.fixed_stage_overhead_s =
        costs.at("fixed_stage_overhead_s").get<double>();
    s.costs.scaling_exponent = costs.value("scaling_exponent", 1.0);

    const json& p = j.at("placement");
    s.mode = placement::mode_from_name(p.at("mode").get<std::string>());
    s.sampler_gpus = p.value("sampler_gpus", 0);
    s.dynamic_placement = p.value("dynamic", false);
    s.replan_interval_steps = p.value("replan_interval_steps", 10);

    const json& w = j.at("workload");
    s.global_batch_size = w.at("global_batch_size").get<int>();
    s.prompt_dist = dist_from_json(w.at("prompt_len"));
    s.out_dist = dist_from_json(w.at("output_len"));
    s.drift_rate_per_step = w.value("drift_rate_per_step", 0.0);
    const json& r = w.at("rejection");
    s.rejection.reject_rate = r.at("reject_rate").get<double>();
    s.rejection.per_group = r.value("per_group", false);
    s.rejection.group_size = r.value("group_size", 1);
    s.microbatch_size = w.at("microbatch_size").get<int>();
    s.max_rounds = w.value("max_rounds", 64);

    const json& ct = j.at("controllers");
    const std::string kind = ct.at("kind").get<std::string>();
    if (kind == "single") {
      s.controllers.kind = ctrl::TopologyKind::kSingle;
    } else if (kind == "parallel") {
      s.controllers.kind = ctrl::TopologyKind::kParallel;
    } else {
      throw ConfigError("unknown controller topology kind: " + kind);
    }
    s.controllers.num_controllers = ct.at("num_controllers").get<int>();
    s.controllers.per_controller_host_memory_bytes =
        static_cast<std::uint64_t>(std::llround(gib_to_bytes_exact(
            ct.at("per_controller_host_memory_gib").get<double>())));
    s.controllers.usable_fraction = ct.at("usable_fraction").get<double>();
    s.controllers.rpc_bandwidth_bytes_per_s =
        ct.at("rpc_bandwidth_bytes_per_s").get<double>();
    s.controllers.imbalance_factor = ct.value("imbalance_factor", 1.0);

    const json& pay = j.at("payload");
    s.payload.items_per_sample = pay.at("items_per_sample").get<std::uint64_t>();
    s.payload.item_bytes = pay.at("item_bytes").get<std::uint64_t>();
    s.payload.copies = pay.value("copies", std::uint64_t{1});

    s.validate();
    return s;
  } catch (const json::exception& e) {
    throw ConfigError(std::string("malformed scenario: ") + e.what());
  }
}

Scenario Scenario::from_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open scenario file " + path);
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw ConfigError("cannot parse " + path + ": " + e.what());
  }
  return from_json(j);
}

void Scenario::to_file(const std::string& path) const {
  std::ofstream out(path);
  if (!out) throw IoError("cannot open " + path + " for writing");
  out << to_json().dump(2) << "\n";
}

namespace {

Scenario table1_scenario() {
  Scenario s;
  s.name = "table1";
  s.seed = 20250814;
  s.steps = 50;

  s.cluster.num_nodes = 2;
  s.cluster.gpus_per_node = 8;
  s.cluster.gpu_memory_bytes = 96 * kGiB;
  s.cluster.host_memory_bytes = 2048 * kGiB;
  s.cluster.intra_node_bw_bytes_per_s = 3e11;
  s.cluster.inter_node_bw_bytes_per_s = 2.5e10;
  s.cluster.swap_bw_bytes_per_s = 1.9e9;
  s.cluster.engine_reload_overhead_s = 1.05;

  s.actor_model = {"actor-1p5b", cluster::Role::kActor, 1500000000ULL, 2, 1};
  s.sampler_model = {"sampler-2p4b", cluster::Role::kSampler, 2400000000ULL, 2,
                     1};
  s.genrm_model = {"genrm-500m", cluster::Role::kGenRM, 500000000ULL, 2, 1};

  s.costs.gen_seconds_per_token = 0.33;
  s.costs.rm_seconds_per_token = 3.2e-5;
  s.costs.train_seconds_per_unit = 3e-8;
  s.costs.fixed_stage_overhead_s = 0.30;
  s.costs.scaling_exponent = 1.0;

  s.mode = placement::Mode::kFullColocate;
  s.sampler_gpus = 0;

  s.global_batch_size = 256;
  s.prompt_dist = {workload::DistKind::kConstant, 64, 0, 4096};
  s.out_dist = {workload::DistKind::kNormal, 480, 175, 1024};
  s.drift_rate_per_step = 0;
  s.rejection = {0.10, true, 64};
  s.microbatch_size = 8;
  s.max_rounds = 4;

  s.controllers.kind = ctrl::TopologyKind::kSingle;
  s.controllers.num_controllers = 1;
  s.controllers.per_controller_host_memory_bytes = 2048 * kGiB;
  s.controllers.usable_fraction = 0.5;
  s.controllers.rpc_bandwidth_bytes_per_s = 2.5e10;
  s.controllers.imbalance_factor = 1.0;

  s.payload.items_per_sample = 1;
  s.payload.item_bytes = 24 * kMiB;
  s.payload.copies = 1;
  return s;
}

Scenario balanced16_scenario() {
  Scenario s;
  s.name = "balanced16";
  s.seed = 16;
  s.steps = 5;

  s.cluster.num_nodes = 2;
  s.cluster.gpus_per_node = 8;
  s.cluster.gpu_memory_bytes = 96 * kGiB;
  s.cluster.host_memory_bytes = 2048 * kGiB;
  s.cluster.intra_node_bw_bytes_per_s = 3e11;
  s.cluster.inter_node_bw_bytes_per_s = 2.5e10;
  s.cluster.swap_bw_bytes_per_s = 4e9;
  s.cluster.engine_reload_overhead_s = 1.2;

  s.actor_model = {"actor-3b", cluster::Role::kActor, 3000000000ULL, 2, 1};
  s.sampler_model = {"sampler-3b", cluster::Role::kSampler, 3000000000ULL, 2, 1};
  s.genrm_model = {"genrm-3b", cluster::Role::kGenRM, 3000000000ULL, 2, 1};

  s.costs.gen_seconds_per_token = 0.16;
  s.costs.rm_seconds_per_token = 3.2e-4;
  s.costs.train_seconds_per_unit = 5.5e-7;
  s.costs.fixed_stage_overhead_s = 0.35;
  s.costs.scaling_exponent = 1.0;

  s.mode = placement::Mode::kFullColocate;
  s.sampler_gpus = 0;

  s.global_batch_size = 128;
  s.prompt_dist = {workload::DistKind::kConstant, 64, 0, 4096};
  s.out_dist = {workload::DistKind::kNormal, 500, 120, 1024};
  s.drift_rate_per_step = 0;
  s.rejection = {0.30, false, 1};
  s.microbatch_size = 8;
  s.max_rounds = 64;

  s.controllers.kind = ctrl::TopologyKind::kSingle;
  s.controllers.num_controllers = 1;
  s.controllers.per_controller_host_memory_bytes = 2048 * kGiB;
  s.controllers.usable_fraction = 0.5;
  s.controllers.rpc_bandwidth_bytes_per_s = 2.5e10;
  s.controllers.imbalance_factor = 1.0;

  s.payload.items_per_sample = 16;
  s.payload.item_bytes = kMiB;
  s.payload.copies = 1;
  return s;
}

Scenario unbalanced32_scenario() {
  Scenario s;
  s.name = "unbalanced32";
  s.seed = 32;
  s.steps = 5;

  s.cluster.num_nodes = 4;
  s.cluster.gpus_per_node = 8;
  s.cluster.gpu_memory_bytes = 141 * kGiB;
  s.cluster.host_memory_bytes = 4096 * kGiB;
  s.cluster.intra_node_bw_bytes_per_s = 3e11;
  s.cluster.inter_node_bw_bytes_per_s = 2.5e10;
  s.cluster.swap_bw_bytes_per_s = 4e10;
  s.cluster.engine_reload_overhead_s = 1.5;

  s.actor_model = {"actor-1p5b", cluster::Role::kActor, 1500000000ULL, 2, 1};
  s.sampler_model = {"sampler-1p5b", cluster::Role::kSampler, 1500000000ULL, 2,
                     1};
  s.genrm_model = {"genrm-72b", cluster::Role::kGenRM, 72000000000ULL, 2, 2};

  s.costs.gen_seconds_per_token = 0.06;
  s.costs.rm_seconds_per_token = 1.3e-2;
  s.costs.train_seconds_per_unit = 4e-7;
  s.costs.fixed_stage_overhead_s = 0.4;
  s.costs.scaling_exponent = 1.0;

  s.mode = placement::Mode::kFullColocate;
  s.sampler_gpus = 0;

  s.global_batch_size = 128;
  s.prompt_dist = {workload::DistKind::kConstant, 512, 0, 8192};
  s.out_dist = {workload::DistKind::kNormal, 600, 150, 2048};
  s.drift_rate_per_step = 0;
  s.rejection = {0.10, false, 1};
  s.microbatch_size = 8;
  s.max_rounds = 64;

  s.controllers.kind = ctrl::TopologyKind::kSingle;
  s.controllers.num_controllers = 1;
  s.controllers.per_controller_host_memory_bytes = 4096 * kGiB;
  s.controllers.usable_fraction = 0.5;
  s.controllers.rpc_bandwidth_bytes_per_s = 2.5e10;
  s.controllers.imbalance_factor = 1.0;

  s.payload.items_per_sample = 16;
  s.payload.item_bytes = 4 * kMiB;
  s.payload.copies = 1;
  return s;
}

Scenario sweep_scenario() {
  Scenario s;
  s.name = "sweep";
  s.seed = 64;
  s.steps = 12;

  s.cluster.num_nodes = 2;
  s.cluster.gpus_per_node = 8;
  s.cluster.gpu_memory_bytes = 96 * kGiB;
  s.cluster.host_memory_bytes = 2048 * kGiB;
  s.cluster.intra_node_bw_bytes_per_s = 3e11;
  s.cluster.inter_node_bw_bytes_per_s = 2.5e10;
  s.cluster.swap_bw_bytes_per_s = 4e9;
  s.cluster.engine_reload_overhead_s = 1.2;

  s.actor_model = {"actor-3b", cluster::Role::kActor, 3000000000ULL, 2, 1};
  s.sampler_model = {"sampler-3b", cluster::Role::kSampler, 3000000000ULL, 2, 1};
  s.genrm_model = {"genrm-3b", cluster::Role::kGenRM, 3000000000ULL, 2, 1};

  s.costs.gen_seconds_per_token = 0.08;
  s.costs.rm_seconds_per_token = 8e-4;
  s.costs.train_seconds_per_unit = 5e-7;
  s.costs.fixed_stage_overhead_s = 0.3;
  s.costs.scaling_exponent = 1.0;

  s.mode = placement::Mode::kPartialColocate;
  s.sampler_gpus = 0;
  s.dynamic_placement = false;
  s.replan_interval_steps = 3;

  s.global_batch_size = 64;
  s.prompt_dist = {workload::DistKind::kConstant, 64, 0, 8192};
  s.out_dist = {workload::DistKind::kConstant, 512, 0, 8192};
  s.drift_rate_per_step = 0;
  s.rejection = {0.0, false, 1};
  s.microbatch_size = 8;
  s.max_rounds = 64;

  s.controllers.kind = ctrl::TopologyKind::kSingle;
  s.controllers.num_controllers = 1;
  s.controllers.per_controller_host_memory_bytes = 2048 * kGiB;
  s.controllers.usable_fraction = 0.5;
  s.controllers.rpc_bandwidth_bytes_per_s = 2.5e10;
  s.controllers.imbalance_factor = 1.0;

  s.payload.items_per_sample = 8;
  s.payload.item_bytes = kMiB;
  s.payload.copies = 1;
  return s;
}

Scenario demo_scenario() {
  Scenario s;
  s.name = "demo";
  s.seed = 7;
  s.steps = 3;

  s.cluster.num_nodes = 1;
  s.cluster.gpus_per_node = 8;
  s.cluster.gpu_memory_bytes = 80 * kGiB;
  s.cluster.host_memory_bytes = 512 * kGiB;
  s.cluster.intra_node_bw_bytes_per_s = 3e11;
  s.cluster.inter_node_bw_bytes_per_s = 2.5e10;
  s.cluster.swap_bw_bytes_per_s = 8e9;
  s.cluster.engine_reload_overhead_s = 0.5;

  s.actor_model = {"actor-1b", cluster::Role::kActor, 1000000000ULL, 2, 1};
  s.sampler_model = {"sampler-1b", cluster::Role::kSampler, 1000000000ULL, 2, 1};
  s.genrm_model = {"genrm-1b", cluster::Role::kGenRM, 1000000000ULL, 2, 1};

  s.costs.gen_seconds_per_token = 0.05;
  s.costs.rm_seconds_per_token = 4e-4;
  s.costs.train_seconds_per_unit = 5e-7;
  s.costs.fixed_stage_overhead_s = 0.2;
  s.costs.scaling_exponent = 1.0;

  s.mode = placement::Mode::kPartialColocate;
  s.sampler_gpus = 5;

  s.global_batch_size = 24;
  s.prompt_dist = {workload::DistKind::kConstant, 32, 0, 512};
  s.out_dist = {workload::DistKind::kUniform, 16, 96, 256};
  s.drift_rate_per_step = 0;
  s.rejection = {0.25, false, 1};
  s.microbatch_size = 4;
  s.max_rounds = 8;

  s.controllers.kind = ctrl::TopologyKind::kParallel;
  s.controllers.num_controllers = 2;
  s.controllers.per_controller_host_memory_bytes = 64 * kGiB;
  s.controllers.usable_fraction = 0.8;
  s.controllers.rpc_bandwidth_bytes_per_s = 1e10;
  s.controllers.imbalance_factor = 1.0;

  s.payload.items_per_sample = 4;
  s.payload.item_bytes = kMiB / 2;
  s.payload.copies = 1;
  return s;
}

}  // namespace

std::vector<std::string> builtin_scenario_names() {
  return {"table1", "balanced16", "unbalanced32", "sweep", "demo"};
}

Scenario builtin_scenario(const std::string& name) {
  if (name == "table1") return table1_scenario();
  if (name == "balanced16") return balanced16_scenario();
  if (name == "unbalanced32") return unbalanced32_scenario();
  if (name == "sweep") return sweep_scenario();
  if (name == "demo") return demo_scenario();
  throw ConfigError("unknown builtin scenario: " + name);
}

Scenario load_scenario(const std::string& ref) {
  constexpr const char* kPrefix = "builtin:";
  if (ref.rfind(kPrefix, 0) == 0) {
    return builtin_scenario(ref.substr(std::string(kPrefix).size()));
  }
  return Scenario::from_file(ref);
}

}  // namespace yatt::cli
