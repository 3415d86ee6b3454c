#include "yatt/distattn.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>

#include "yatt/errors.hpp"
#include "yatt/workload.hpp"

namespace yatt::distattn {

std::string mask_kind_name(MaskKind kind) {
  switch (kind) {
    case MaskKind::kFull:
      return "full";
    case MaskKind::kCausal:
      return "causal";
    case MaskKind::kSlidingWindow:
      return "sliding_window";
    case MaskKind::kCustom:
      return "custom";
  }
  throw ConfigError("unknown mask kind value");
}

bool AttentionProblem::mask_allows(int query, int key) const {
  switch (mask) {
    case MaskKind::kFull:
      return true;
    case MaskKind::kCausal:
      return key <= query;
    case MaskKind::kSlidingWindow:
      return key <= query && query - key < window;
    case MaskKind::kCustom:
      return custom_mask[static_cast<std::size_t>(query) * seq_len + key] != 0;
  }
  throw ConfigError("unknown mask kind value");
}

void AttentionProblem::validate() const {
  if (seq_len < 1 || head_dim < 1 || num_heads < 1) {
    throw ConfigError("attention problem dimensions must be positive");
  }
  const auto expect_shape = [&](const Tensor3& t, const char* name) {
    if (t.heads != num_heads || t.seq != seq_len || t.dim != head_dim) {
      throw ConfigError(std::string("tensor ") + name + " shape mismatch");
    }
  };
  expect_shape(q, "q");
  expect_shape(k, "k");
  expect_shape(v, "v");
  if (mask == MaskKind::kSlidingWindow && window < 1) {
    throw DegenerateMask("sliding window must be at least 1");
  }
  if (mask == MaskKind::kCustom &&
      custom_mask.size() != static_cast<std::size_t>(seq_len) * seq_len) {
    throw ConfigError("custom mask must be seq_len x seq_len");
  }
  for (int i = 0; i < seq_len; ++i) {
    bool any = false;
    for (int j = 0; j < seq_len && !any; ++j) {
      any = mask_allows(i, j);
    }
    if (!any) {
      throw DegenerateMask("query row " + std::to_string(i) +
                           " has no visible keys");
    }
  }
}

void ShardLayout::validate(const AttentionProblem& problem) const {
  if (world_size < 1) throw ConfigError("world_size must be at least 1");
  if (heads_per_pass < 1 || heads_per_pass > problem.num_heads) {
    throw ConfigError("heads_per_pass must lie in [1, num_heads]");
  }
}

Tensor3 reference_attention(const AttentionProblem& problem) {
  problem.validate();
  const int s = problem.seq_len;
  const int d = problem.head_dim;
  const double scale = 1.0 / std::sqrt(static_cast<double>(d));

  Tensor3 out(problem.num_heads, s, d);
  std::vector<double> scores(static_cast<std::size_t>(s) * s);
  for (int h = 0; h < problem.num_heads; ++h) {
    // Full score matrix for this head.
    for (int i = 0; i < s; ++i) {
      for (int j = 0; j < s; ++j) {
        double dot = 0;
        for (int c = 0; c < d; ++c) {
          dot += problem.q.at(h, i, c) * problem.k.at(h, j, c);
        }
        scores[static_cast<std::size_t>(i) * s + j] = dot * scale;
      }
    }
    // Row-wise masked softmax, then multiply by V.
    for (int i = 0; i < s; ++i) {
      double row_max = -std::numeric_limits<double>::infinity();
      for (int j = 0; j < s; ++j) {
        if (problem.mask_allows(i, j)) {
          row_max = std::max(row_max, scores[static_cast<std::size_t>(i) * s + j]);
        }
      }
      double denom = 0;
      for (int j = 0; j < s; ++j) {
        if (problem.mask_allows(i, j)) {
          denom += std::exp(scores[static_cast<std::size_t>(i) * s + j] - row_max);
        }
      }
      for (int c = 0; c < d; ++c) {
        double acc = 0;
        for (int j = 0; j < s; ++j) {
          if (problem.mask_allows(i, j)) {
            const double w =
                std::exp(scores[static_cast<std::size_t>(i) * s + j] - row_max);
            acc += w * problem.v.at(h, j, c);
          }
        }
        out.at(h, i, c) = acc / denom;
      }
    }
  }
  return out;
}

Tensor3 allgather_attention(const AttentionProblem& problem,
                            const ShardLayout& layout) {
  problem.validate();
  layout.validate(problem);
  const int s = problem.seq_len;
  const int d = problem.head_dim;
  const double scale = 1.0 / std::sqrt(static_cast<double>(d));

  Tensor3 out(problem.num_heads, s, d);
  for (int rank = 0; rank < layout.world_size; ++rank) {
    const workload::ShardRange rows = workload::shard_dataset(
        static_cast<std::uint64_t>(s), layout.world_size, rank);
    for (int group_start = 0; group_start < problem.num_heads;
         group_start += layout.heads_per_pass) {
      const int group_end =
          std::min(group_start + layout.heads_per_pass, problem.num_heads);

      // All-gather K/V for this head group: each rank contributes its
      // sequence slice; the buffer is rebuilt in rank order.
      Tensor3 k_full(group_end - group_start, s, d);
      Tensor3 v_full(group_end - group_start, s, d);
      for (int src = 0; src < layout.world_size; ++src) {
        const workload::ShardRange slice = workload::shard_dataset(
            static_cast<std::uint64_t>(s), layout.world_size, src);
        for (int h = group_start; h < group_end; ++h) {
          for (auto j = slice.begin; j < slice.end; ++j) {
            for (int c = 0; c < d; ++c) {
              k_full.at(h - group_start, static_cast<int>(j), c) =
                  problem.k.at(h, static_cast<int>(j), c);
              v_full.at(h - group_start, static_cast<int>(j), c) =
                  problem.v.at(h, static_cast<int>(j), c);
            }
          }
        }
      }

      // Streaming per-row attention over the gathered buffer: two
      // passes over the keys, no score matrix.
      for (int h = group_start; h < group_end; ++h) {
        const int hg = h - group_start;
        for (auto row = rows.begin; row < rows.end; ++row) {
          const int i = static_cast<int>(row);
          double row_max = -std::numeric_limits<double>::infinity();
          for (int j = 0; j < s; ++j) {
            if (!problem.mask_allows(i, j)) continue;
            double dot = 0;
            for (int c = 0; c < d; ++c) {
              dot += problem.q.at(h, i, c) * k_full.at(hg, j, c);
            }
            row_max = std::max(row_max, dot * scale);
          }
          double denom = 0;
          for (int j = 0; j < s; ++j) {
            if (!problem.mask_allows(i, j)) continue;
            double dot = 0;
            for (int c = 0; c < d; ++c) {
              dot += problem.q.at(h, i, c) * k_full.at(hg, j, c);
            }
            const double w = std::exp(dot * scale - row_max);
            denom += w;
            for (int c = 0; c < d; ++c) {
              out.at(h, i, c) += w * v_full.at(hg, j, c);
            }
          }
          for (int c = 0; c < d; ++c) {
            out.at(h, i, c) /= denom;
          }
        }
      }
    }
  }
  return out;
}

std::uint64_t kv_peak_memory_bytes(const AttentionProblem& problem,
                                   const ShardLayout& layout,
                                   int bytes_per_element) {
  layout.validate(problem);
  if (bytes_per_element <= 0) {
    throw ConfigError("bytes_per_element must be positive");
  }
  return 2ULL * static_cast<std::uint64_t>(layout.heads_per_pass) *
         static_cast<std::uint64_t>(problem.seq_len) *
         static_cast<std::uint64_t>(problem.head_dim) *
         static_cast<std::uint64_t>(bytes_per_element);
}

AttentionProblem random_problem(int seq_len, int head_dim, int num_heads,
                                MaskKind mask, int window, std::uint64_t seed) {
  AttentionProblem problem;
  problem.seq_len = seq_len;
  problem.head_dim = head_dim;
  problem.num_heads = num_heads;
  problem.mask = mask;
  problem.window = window;
  problem.q = Tensor3(num_heads, seq_len, head_dim);
  problem.k = Tensor3(num_heads, seq_len, head_dim);
  problem.v = Tensor3(num_heads, seq_len, head_dim);
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  for (double& value : problem.q.data) value = normal(rng);
  for (double& value : problem.k.data) value = normal(rng);
  for (double& value : problem.v.data) value = normal(rng);
  return problem;
}

double max_rel_error(const Tensor3& actual, const Tensor3& expected) {
  if (actual.data.size() != expected.data.size()) {
    throw ConfigError("tensor size mismatch");
  }
  double worst = 0;
  for (std::size_t i = 0; i < actual.data.size(); ++i) {
    const double denom = std::abs(expected.data[i]) + 1e-12;
    worst = std::max(worst, std::abs(actual.data[i] - expected.data[i]) / denom);
  }
  return worst;
}

}  // namespace yatt::distattn
