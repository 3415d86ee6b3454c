#pragma once

#include <cstdint>
#include <future>
#include <memory>
#include <string>
#include <variant>
#include <vector>

namespace yatt::ckpt {

// Data-consumption position, independent of world size. The global
// cursor counts samples consumed since training began (across epochs);
// together with the shuffle seed and dataset identity it pins the exact
// point in the global sample stream.
struct ConsumptionState {
  std::uint64_t dataset_size = 0;
  std::uint64_t global_cursor = 0;
  std::uint64_t shuffle_seed = 0;
  std::uint64_t bucket_permutation_seed = 0;
  std::uint64_t dataset_fingerprint = 0;

  std::uint64_t epoch() const {
    return dataset_size == 0 ? 0 : global_cursor / dataset_size;
  }

  friend bool operator==(const ConsumptionState&, const ConsumptionState&) = default;
};

std::uint64_t dataset_fingerprint(std::string_view descriptor);

struct ShardInfo {
  int shard_index = 0;
  std::string filename;
  std::uint64_t bytes = 0;
  std::uint64_t content_hash = 0;
};

struct CheckpointManifest {
  int version = 0;
  int world_size_at_save = 0;
  std::string created_at;
  ConsumptionState consumption;
  std::vector<ShardInfo> shards;
};

struct WriterOptions {
  // 0 means unthrottled. Writes happen in chunks with sleeps sized to
  // hit this rate, checking for cancellation between chunks.
  double throttle_bytes_per_s = 0;
  // Test hook: throw IoError after writing this many shards (-1 = off).
  int fail_after_shards = -1;
  std::uint64_t chunk_bytes = 64 * 1024;
};

// Handle on an in-flight background save.
class SaveTicket {
 public:
  SaveTicket() = default;
  SaveTicket(SaveTicket&&) = default;
  SaveTicket& operator=(SaveTicket&&) = default;

  // Blocks until the writer finishes and returns the published
  // manifest. Writer failures surface here as IoError.
  CheckpointManifest await();

  int version() const { return version_; }

 private:
  friend SaveTicket save_async(const std::string&, int,
                               const std::vector<std::string>&,
                               const ConsumptionState&, const WriterOptions&);
  std::future<CheckpointManifest> future_;
  std::shared_ptr<std::atomic<bool>> cancel_;
  int version_ = 0;
};

// Writes one shard file per blob under <dir>/ckpt-<version>/ and
// publishes manifest.json last via an atomic rename. A crash or injected
// failure before publish leaves no manifest, so readers never observe a
// partial checkpoint.
SaveTicket save_async(const std::string& dir, int version,
                      const std::vector<std::string>& shard_blobs,
                      const ConsumptionState& consumption,
                      const WriterOptions& options = {});

struct Abandoned {
  std::string reason;
};

// Deadline-bounded save for on-demand checkpoints (e.g. preemption
// notice). If the writer cannot publish within `deadline_s`, the
// partial output is removed and Abandoned is returned; previously
// published checkpoints are untouched.
std::variant<CheckpointManifest, Abandoned> save_on_demand(
    const std::string& dir, int version,
    const std::vector<std::string>& shard_blobs,
    const ConsumptionState& consumption, double deadline_s,
    const WriterOptions& options = {});

struct LoadedCheckpoint {
  CheckpointManifest manifest;
  std::vector<std::string> shard_blobs;
};

// Loads the highest-version complete checkpoint under `dir`, verifying
// shard sizes and content hashes. Shard count does not need to match
// the current world size; callers reshard the returned blobs. Throws
// IncompleteCheckpoint when nothing loadable exists and
// FingerprintMismatch when the stored dataset identity differs from
// `expected_fingerprint` (0 skips the check).
LoadedCheckpoint load_resharded(const std::string& dir,
                                std::uint64_t expected_fingerprint);

// Rank r of W consumes global stream positions r, r+W, r+2W, ... after
// the resume cursor. The stream itself (an epoch-aware shuffled order)
// depends only on (dataset_size, shuffle_seed), so any world size
// resumes the identical global sample sequence.
class ShardedDataloader {
 public:
  ShardedDataloader(std::uint64_t dataset_size, std::uint64_t shuffle_seed,
                    int world_size, int rank);
  ShardedDataloader(const ConsumptionState& resume, int world_size, int rank);

  // Dataset index of this rank's next sample.
  std::uint64_t next();

  // Consumption state assuming all ranks have drawn equally often,
  // which holds at step boundaries where checkpoints are taken.
  ConsumptionState state() const;

  std::uint64_t samples_drawn() const { return drawn_; }

 private:
  std::uint64_t position(std::uint64_t draw_index) const;
  void ensure_epoch(std::uint64_t epoch);

  std::uint64_t dataset_size_;
  std::uint64_t shuffle_seed_;
  std::uint64_t bucket_permutation_seed_ = 0;
  std::uint64_t dataset_fingerprint_ = 0;
  int world_size_;
  int rank_;
  std::uint64_t base_cursor_ = 0;
  std::uint64_t drawn_ = 0;
  std::uint64_t cached_epoch_ = std::uint64_t(-1);
  std::vector<std::uint64_t> order_;
};

}  // namespace yatt::ckpt
