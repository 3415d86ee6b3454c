#include "yatt/scenario.hpp"

#include <gtest/gtest.h>
#include <unistd.h>

#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "yatt/errors.hpp"

namespace yatt::cli {
namespace {

namespace fs = std::filesystem;

TEST(Builtins, NamesAreStableAndAllValidate) {
  const std::vector<std::string> expected = {"table1", "balanced16",
                                             "unbalanced32", "sweep", "demo"};
  EXPECT_EQ(builtin_scenario_names(), expected);
  for (const std::string& name : expected) {
    const Scenario s = builtin_scenario(name);
    EXPECT_EQ(s.name, name);
    EXPECT_NO_THROW(s.validate()) << name;
  }
  EXPECT_THROW(builtin_scenario("nope"), ConfigError);
}

TEST(Builtins, Table1ShapeIsPinned) {
  const Scenario s = builtin_scenario("table1");
  EXPECT_EQ(s.steps, 50);
  EXPECT_EQ(s.global_batch_size, 256);
  EXPECT_DOUBLE_EQ(s.rejection.reject_rate, 0.10);
  EXPECT_EQ(s.mode, placement::Mode::kFullColocate);
  EXPECT_EQ(cluster::total_gpus(s.cluster), 16);
  EXPECT_EQ(s.controllers.kind, ctrl::TopologyKind::kSingle);
  EXPECT_EQ(s.payload.items_per_sample, 1);
  EXPECT_EQ(s.payload.item_bytes, 24ULL * 1024 * 1024);
}

TEST(Json, RoundTripIsExactForEveryBuiltin) {
  for (const std::string& name : builtin_scenario_names()) {
    const Scenario original = builtin_scenario(name);
    const nlohmann::json first = original.to_json();
    const Scenario reparsed = Scenario::from_json(first);
    const nlohmann::json second = reparsed.to_json();
    EXPECT_EQ(first.dump(2), second.dump(2)) << name;
  }
}

TEST(Json, MalformedDocumentsAreRejected) {
  EXPECT_THROW(Scenario::from_json(nlohmann::json::object()), ConfigError);
  nlohmann::json j = builtin_scenario("demo").to_json();
  j["placement"]["mode"] = "sideways";
  EXPECT_THROW(Scenario::from_json(j), ConfigError);
  nlohmann::json k = builtin_scenario("demo").to_json();
  k["controllers"]["kind"] = "mesh";
  EXPECT_THROW(Scenario::from_json(k), ConfigError);
}

TEST(Files, RoundTripThroughDiskIsExact) {
  const fs::path path =
      fs::temp_directory_path() /
      ("yatt-scenario-" + std::to_string(::getpid()) + ".json");
  const Scenario original = builtin_scenario("balanced16");
  original.to_file(path.string());
  const Scenario reloaded = Scenario::from_file(path.string());
  EXPECT_EQ(original.to_json().dump(2), reloaded.to_json().dump(2));
  fs::remove(path);
}

TEST(Files, MissingOrUnparsablePathsAreRejected) {
  EXPECT_THROW(Scenario::from_file("/does/not/exist.json"), ConfigError);
  const fs::path path =
      fs::temp_directory_path() /
      ("yatt-scenario-bad-" + std::to_string(::getpid()) + ".json");
  {
    std::ofstream out(path);
    out << "this is not json";
  }
  EXPECT_THROW(Scenario::from_file(path.string()), ConfigError);
  fs::remove(path);
}

TEST(Refs, BuiltinPrefixAndPathsBothResolve) {
  EXPECT_EQ(load_scenario("builtin:table1").name, "table1");
  EXPECT_THROW(load_scenario("builtin:nope"), ConfigError);
  const fs::path path =
      fs::temp_directory_path() /
      ("yatt-scenario-ref-" + std::to_string(::getpid()) + ".json");
  builtin_scenario("demo").to_file(path.string());
  EXPECT_EQ(load_scenario(path.string()).name, "demo");
  fs::remove(path);
}

TEST(Validation, RejectsInconsistentConfigurations) {
  Scenario s = builtin_scenario("demo");

  Scenario bad = s;
  bad.steps = 0;
  EXPECT_THROW(bad.validate(), ConfigError);

  bad = s;
  bad.name.clear();
  EXPECT_THROW(bad.validate(), ConfigError);

  bad = s;
  bad.microbatch_size = 0;
  EXPECT_THROW(bad.validate(), ConfigError);

  bad = s;
  bad.max_rounds = 0;
  EXPECT_THROW(bad.validate(), ConfigError);

  bad = s;
  bad.rejection.reject_rate = 1.0;
  EXPECT_THROW(bad.validate(), ConfigError);

  bad = s;
  bad.drift_rate_per_step = -0.1;
  EXPECT_THROW(bad.validate(), ConfigError);

  bad = s;
  bad.mode = placement::Mode::kFullColocate;
  bad.sampler_gpus = 4;
  EXPECT_THROW(bad.validate(), ConfigError);

  bad = s;
  bad.mode = placement::Mode::kFullColocate;
  bad.sampler_gpus = 0;
  bad.dynamic_placement = true;
  EXPECT_THROW(bad.validate(), ConfigError);

  bad = s;
  bad.mode = placement::Mode::kPartialColocate;
  bad.sampler_gpus = cluster::total_gpus(bad.cluster);
  EXPECT_THROW(bad.validate(), ConfigError);
}

}  // namespace
}  // namespace yatt::cli
