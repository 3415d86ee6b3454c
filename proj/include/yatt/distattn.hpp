#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace yatt::distattn {

// Dense row-major [heads, seq, dim] tensor of doubles.
struct Tensor3 {
  int heads = 0;
  int seq = 0;
  int dim = 0;
  std::vector<double> data;

  Tensor3() = default;
  Tensor3(int heads_, int seq_, int dim_)
      : heads(heads_),
        seq(seq_),
        dim(dim_),
        data(static_cast<std::size_t>(heads_) * seq_ * dim_, 0.0) {}

  double& at(int h, int s, int d) {
    return data[(static_cast<std::size_t>(h) * seq + s) * dim + d];
  }
  double at(int h, int s, int d) const {
    return data[(static_cast<std::size_t>(h) * seq + s) * dim + d];
  }
};

enum class MaskKind {
  kFull,
  kCausal,
  kSlidingWindow,
  kCustom,
};

std::string mask_kind_name(MaskKind kind);

struct AttentionProblem {
  int seq_len = 0;
  int head_dim = 0;
  int num_heads = 0;
  Tensor3 q, k, v;
  MaskKind mask = MaskKind::kFull;
  // Sliding window: query i sees keys j with 0 <= i - j < window.
  int window = 0;
  // Custom mask: row-major seq_len x seq_len, nonzero = visible.
  std::vector<std::uint8_t> custom_mask;

  bool mask_allows(int query, int key) const;
  // Throws DegenerateMask if any query row has no visible key.
  void validate() const;
};

// Sequence-parallel execution shape: ranks hold contiguous slices of
// the sequence; keys/values are all-gathered `heads_per_pass` heads at
// a time to cap the gather buffer.
struct ShardLayout {
  int world_size = 1;
  int heads_per_pass = 1;

  void validate(const AttentionProblem& problem) const;
};

// Single-device oracle: materializes the full score matrix per head,
// applies a max-subtracted softmax per row, then multiplies by V.
Tensor3 reference_attention(const AttentionProblem& problem);

// Context-parallel evaluation. Every rank computes attention for its
// own query rows against the gathered full-sequence K/V, one head group
// per pass. Outputs are assembled in rank order.
Tensor3 allgather_attention(const AttentionProblem& problem,
                            const ShardLayout& layout);

// Peak bytes held in the per-rank K/V gather buffer:
// 2 tensors * heads_per_pass * seq_len * head_dim * bytes_per_element.
std::uint64_t kv_peak_memory_bytes(const AttentionProblem& problem,
                                   const ShardLayout& layout,
                                   int bytes_per_element);

// Random dense problem for tests and self-checks.
AttentionProblem random_problem(int seq_len, int head_dim, int num_heads,
                                MaskKind mask, int window, std::uint64_t seed);

// Largest element-wise relative error of `actual` against `expected`.
double max_rel_error(const Tensor3& actual, const Tensor3& expected);

}  // namespace yatt::distattn
