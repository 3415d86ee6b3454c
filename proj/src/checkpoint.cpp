#include "yatt/checkpoint.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <csignal>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <random>
#include <thread>

#include <nlohmann/json.hpp>

#include "yatt/common.hpp"
#include "yatt/errors.hpp"

namespace yatt::ckpt {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

// Internal signal that a writer observed its cancel flag.
struct CancelledError {};

std::string version_dirname(int version) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "ckpt-%06d", version);
  return buf;
}

std::string shard_filename(int index) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "shard-%04d.bin", index);
  return buf;
}

std::string utc_timestamp() {
  const std::time_t now = std::time(nullptr);
  std::tm tm_utc{};
  gmtime_r(&now, &tm_utc);
  char buf[32];
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm_utc);
  return buf;
}

json consumption_to_json(const ConsumptionState& state) {
  return json{{"dataset_size", state.dataset_size},
              {"global_cursor", state.global_cursor},
              {"shuffle_seed", state.shuffle_seed},
              {"bucket_permutation_seed", state.bucket_permutation_seed},
              {"dataset_fingerprint", state.dataset_fingerprint}};
}

ConsumptionState consumption_from_json(const json& j) {
  ConsumptionState state;
  state.dataset_size = j.at("dataset_size").get<std::uint64_t>();
  state.global_cursor = j.at("global_cursor").get<std::uint64_t>();
  state.shuffle_seed = j.at("shuffle_seed").get<std::uint64_t>();
  state.bucket_permutation_seed =
      j.at("bucket_permutation_seed").get<std::uint64_t>();
  state.dataset_fingerprint = j.at("dataset_fingerprint").get<std::uint64_t>();
  return state;
}

void write_blob_file(const fs::path& path, const std::string& blob,
                     const WriterOptions& options,
                     const std::atomic<bool>& cancel) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  std::size_t offset = 0;
  while (offset < blob.size() || blob.empty()) {
    if (cancel.load()) throw CancelledError{};
    const std::size_t chunk =
        std::min<std::size_t>(options.chunk_bytes, blob.size() - offset);
    out.write(blob.data() + static_cast<std::ptrdiff_t>(offset),
              static_cast<std::streamsize>(chunk));
    if (!out) throw IoError("short write to " + path.string());
    offset += chunk;
    if (options.throttle_bytes_per_s > 0 && chunk > 0) {
      double remaining_s =
          static_cast<double>(chunk) / options.throttle_bytes_per_s;
      while (remaining_s > 0) {
        if (cancel.load()) throw CancelledError{};
        const double slice_s = std::min(remaining_s, 0.01);
        std::this_thread::sleep_for(
            std::chrono::duration<double>(slice_s));
        remaining_s -= slice_s;
      }
    }
    if (blob.empty()) break;
  }
}

CheckpointManifest write_checkpoint(const std::string& dir, int version,
                                    const std::vector<std::string>& blobs,
                                    const ConsumptionState& consumption,
                                    const WriterOptions& options,
                                    std::shared_ptr<std::atomic<bool>> cancel) {
  const fs::path root = dir;
  const fs::path ckpt_dir = root / version_dirname(version);
  try {
    fs::create_directories(ckpt_dir);

    CheckpointManifest manifest;
    manifest.version = version;
    manifest.world_size_at_save = static_cast<int>(blobs.size());
    manifest.consumption = consumption;

    for (std::size_t i = 0; i < blobs.size(); ++i) {
      if (options.fail_after_shards >= 0 &&
          static_cast<int>(i) >= options.fail_after_shards) {
        throw IoError("injected shard write failure");
      }
      const std::string filename = shard_filename(static_cast<int>(i));
      write_blob_file(ckpt_dir / filename, blobs[i], options, *cancel);
      ShardInfo info;
      info.shard_index = static_cast<int>(i);
      info.filename = filename;
      info.bytes = blobs[i].size();
      info.content_hash = fnv1a64(blobs[i]);
      manifest.shards.push_back(info);
    }
    if (cancel->load()) throw CancelledError{};
    manifest.created_at = utc_timestamp();

    json j;
    j["version"] = manifest.version;
    j["world_size_at_save"] = manifest.world_size_at_save;
    j["created_at"] = manifest.created_at;
    j["consumption"] = consumption_to_json(manifest.consumption);
    j["shards"] = json::array();
    for (const ShardInfo& shard : manifest.shards) {
      j["shards"].push_back(json{{"shard_index", shard.shard_index},
                                 {"filename", shard.filename},
                                 {"bytes", shard.bytes},
                                 {"content_hash", shard.content_hash}});
    }

    // Publish atomically: readers only trust directories containing
    // manifest.json, and the rename makes it appear fully formed.
    const fs::path tmp = ckpt_dir / "manifest.json.tmp";
    {
      std::ofstream out(tmp, std::ios::trunc);
      if (!out) throw IoError("cannot open " + tmp.string());
      out << j.dump(2) << "\n";
      if (!out) throw IoError("short write to " + tmp.string());
    }
    fs::rename(tmp, ckpt_dir / "manifest.json");
    return manifest;
  } catch (const CancelledError&) {
    // Never disturb a published checkpoint; only in-flight output goes.
    if (!fs::exists(ckpt_dir / "manifest.json")) {
      std::error_code ec;
      fs::remove_all(ckpt_dir, ec);
    }
    throw;
  }
}

}  // namespace

std::uint64_t dataset_fingerprint(std::string_view descriptor) {
  return fnv1a64(descriptor);
}

CheckpointManifest SaveTicket::await() {
  if (!future_.valid()) throw IoError("save ticket already consumed");
  return future_.get();
}

SaveTicket save_async(const std::string& dir, int version,
                      const std::vector<std::string>& shard_blobs,
                      const ConsumptionState& consumption,
                      const WriterOptions& options) {
  SaveTicket ticket;
  ticket.version_ = version;
  ticket.cancel_ = std::make_shared<std::atomic<bool>>(false);
  ticket.future_ =
      std::async(std::launch::async, write_checkpoint, dir, version,
                 shard_blobs, consumption, options, ticket.cancel_);
  return ticket;
}

std::variant<CheckpointManifest, Abandoned> save_on_demand(
    const std::string& dir, int version,
    const std::vector<std::string>& shard_blobs,
    const ConsumptionState& consumption, double deadline_s,
    const WriterOptions& options) {
  auto cancel = std::make_shared<std::atomic<bool>>(false);
  auto future =
      std::async(std::launch::async, write_checkpoint, dir, version,
                 shard_blobs, consumption, options, cancel);
  const auto status =
      future.wait_for(std::chrono::duration<double>(deadline_s));
  if (status != std::future_status::ready) {
    cancel->store(true);
  }
  try {
    return future.get();
  } catch (const CancelledError&) {
    return Abandoned{"deadline of " + format_fixed(deadline_s, 3) +
                     " s exceeded"};
  }
}

LoadedCheckpoint load_resharded(const std::string& dir,
                                std::uint64_t expected_fingerprint) {
  const fs::path root = dir;
  if (!fs::is_directory(root)) {
    throw IncompleteCheckpoint("checkpoint directory " + dir + " not found");
  }

  int best_version = -1;
  fs::path best_dir;
  for (const auto& entry : fs::directory_iterator(root)) {
    if (!entry.is_directory()) continue;
    const std::string name = entry.path().filename().string();
    if (name.rfind("ckpt-", 0) != 0) continue;
    if (!fs::exists(entry.path() / "manifest.json")) continue;
    const int version = std::atoi(name.c_str() + 5);
    if (version > best_version) {
      best_version = version;
      best_dir = entry.path();
    }
  }
  if (best_version < 0) {
    throw IncompleteCheckpoint("no complete checkpoint under " + dir);
  }

  json j;
  try {
    std::ifstream in(best_dir / "manifest.json");
    in >> j;
  } catch (const std::exception& e) {
    throw IncompleteCheckpoint("unreadable manifest in " + best_dir.string() +
                               ": " + e.what());
  }

  LoadedCheckpoint loaded;
  loaded.manifest.version = j.at("version").get<int>();
  loaded.manifest.world_size_at_save = j.at("world_size_at_save").get<int>();
  loaded.manifest.created_at = j.at("created_at").get<std::string>();
  loaded.manifest.consumption = consumption_from_json(j.at("consumption"));

  if (expected_fingerprint != 0 &&
      loaded.manifest.consumption.dataset_fingerprint != expected_fingerprint) {
    throw FingerprintMismatch("checkpoint was saved against a different dataset");
  }

  for (const json& shard_json : j.at("shards")) {
    ShardInfo info;
    info.shard_index = shard_json.at("shard_index").get<int>();
    info.filename = shard_json.at("filename").get<std::string>();
    info.bytes = shard_json.at("bytes").get<std::uint64_t>();
    info.content_hash = shard_json.at("content_hash").get<std::uint64_t>();

    std::ifstream in(best_dir / info.filename, std::ios::binary);
    if (!in) {
      throw IncompleteCheckpoint("missing shard " + info.filename);
    }
    std::string blob((std::istreambuf_iterator<char>(in)),
                     std::istreambuf_iterator<char>());
    if (blob.size() != info.bytes || fnv1a64(blob) != info.content_hash) {
      throw IncompleteCheckpoint("shard " + info.filename +
                                 " failed content verification");
    }
    loaded.manifest.shards.push_back(info);
    loaded.shard_blobs.push_back(std::move(blob));
  }
  return loaded;
}

ShardedDataloader::ShardedDataloader(std::uint64_t dataset_size,
                                     std::uint64_t shuffle_seed,
                                     int world_size, int rank)
    : dataset_size_(dataset_size),
      shuffle_seed_(shuffle_seed),
      world_size_(world_size),
      rank_(rank) {
  if (dataset_size_ == 0) throw ConfigError("dataset_size must be positive");
  if (world_size_ < 1) throw ConfigError("world_size must be at least 1");
  if (rank_ < 0 || rank_ >= world_size_) {
    throw RankOutOfRange("dataloader rank out of range");
  }
}

ShardedDataloader::ShardedDataloader(const ConsumptionState& resume,
                                     int world_size, int rank)
    : ShardedDataloader(resume.dataset_size, resume.shuffle_seed, world_size,
                        rank) {
  base_cursor_ = resume.global_cursor;
  bucket_permutation_seed_ = resume.bucket_permutation_seed;
  dataset_fingerprint_ = resume.dataset_fingerprint;
}

std::uint64_t ShardedDataloader::position(std::uint64_t draw_index) const {
  return base_cursor_ + static_cast<std::uint64_t>(rank_) +
         draw_index * static_cast<std::uint64_t>(world_size_);
}

void ShardedDataloader::ensure_epoch(std::uint64_t epoch) {
  if (epoch == cached_epoch_) return;
  order_.resize(dataset_size_);
  std::iota(order_.begin(), order_.end(), std::uint64_t{0});
  std::mt19937_64 rng(hash_key({shuffle_seed_, epoch}));
  std::shuffle(order_.begin(), order_.end(), rng);
  cached_epoch_ = epoch;
}

std::uint64_t ShardedDataloader::next() {
  const std::uint64_t p = position(drawn_);
  ensure_epoch(p / dataset_size_);
  ++drawn_;
  return order_[p % dataset_size_];
}

ConsumptionState ShardedDataloader::state() const {
  ConsumptionState state;
  state.dataset_size = dataset_size_;
  state.global_cursor =
      base_cursor_ + drawn_ * static_cast<std::uint64_t>(world_size_);
  state.shuffle_seed = shuffle_seed_;
  state.bucket_permutation_seed = bucket_permutation_seed_;
  state.dataset_fingerprint = dataset_fingerprint_;
  return state;
}

}  // namespace yatt::ckpt
