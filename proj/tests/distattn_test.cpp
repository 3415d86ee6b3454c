#include "yatt/distattn.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

#include "yatt/errors.hpp"

namespace yatt::distattn {
namespace {

// Independent attention oracle: plain softmax without the max-shift
// trick, accumulated through the score matrix row by row.
Tensor3 naive_attention(const AttentionProblem& problem) {
  const int s = problem.seq_len;
  const int d = problem.head_dim;
  const double scale = 1.0 / std::sqrt(static_cast<double>(d));
  Tensor3 out(problem.num_heads, s, d);
  for (int h = 0; h < problem.num_heads; ++h) {
    for (int i = 0; i < s; ++i) {
      std::vector<double> weights(static_cast<std::size_t>(s), 0.0);
      double denom = 0;
      for (int j = 0; j < s; ++j) {
        if (!problem.mask_allows(i, j)) continue;
        double dot = 0;
        for (int c = 0; c < d; ++c) {
          dot += problem.q.at(h, i, c) * problem.k.at(h, j, c);
        }
        weights[static_cast<std::size_t>(j)] = std::exp(dot * scale);
        denom += weights[static_cast<std::size_t>(j)];
      }
      for (int c = 0; c < d; ++c) {
        double acc = 0;
        for (int j = 0; j < s; ++j) {
          acc += weights[static_cast<std::size_t>(j)] * problem.v.at(h, j, c);
        }
        out.at(h, i, c) = acc / denom;
      }
    }
  }
  return out;
}

TEST(ReferenceAttention, SingleKeyReturnsItsValueRow) {
  AttentionProblem problem = random_problem(1, 6, 2, MaskKind::kFull, 0, 41);
  const Tensor3 out = reference_attention(problem);
  for (int h = 0; h < 2; ++h) {
    for (int c = 0; c < 6; ++c) {
      EXPECT_DOUBLE_EQ(out.at(h, 0, c), problem.v.at(h, 0, c));
    }
  }
}

TEST(ReferenceAttention, IdenticalKeysAverageTheVisibleValues) {
  AttentionProblem problem = random_problem(5, 3, 1, MaskKind::kCausal, 0, 42);
  for (int j = 0; j < 5; ++j) {
    for (int c = 0; c < 3; ++c) {
      problem.k.at(0, j, c) = problem.k.at(0, 0, c);
    }
  }
  const Tensor3 out = reference_attention(problem);
  for (int i = 0; i < 5; ++i) {
    for (int c = 0; c < 3; ++c) {
      double mean = 0;
      for (int j = 0; j <= i; ++j) mean += problem.v.at(0, j, c);
      mean /= i + 1;
      EXPECT_NEAR(out.at(0, i, c), mean, 1e-12);
    }
  }
}

TEST(ReferenceAttention, MatchesAnIndependentSoftmaxOracle) {
  for (MaskKind mask :
       {MaskKind::kFull, MaskKind::kCausal, MaskKind::kSlidingWindow}) {
    AttentionProblem problem = random_problem(8, 4, 3, mask, 3, 1234);
    const Tensor3 expected = naive_attention(problem);
    const Tensor3 actual = reference_attention(problem);
    EXPECT_LE(max_rel_error(actual, expected), 1e-12)
        << mask_kind_name(mask);
  }
}

TEST(ReferenceAttention, OutputRowsStayInsideTheVisibleValueHull) {
  AttentionProblem problem =
      random_problem(12, 5, 2, MaskKind::kSlidingWindow, 4, 99);
  const Tensor3 out = reference_attention(problem);
  for (int h = 0; h < 2; ++h) {
    for (int i = 0; i < 12; ++i) {
      for (int c = 0; c < 5; ++c) {
        double lo = std::numeric_limits<double>::infinity();
        double hi = -lo;
        for (int j = 0; j < 12; ++j) {
          if (!problem.mask_allows(i, j)) continue;
          lo = std::min(lo, problem.v.at(h, j, c));
          hi = std::max(hi, problem.v.at(h, j, c));
        }
        EXPECT_GE(out.at(h, i, c), lo - 1e-12);
        EXPECT_LE(out.at(h, i, c), hi + 1e-12);
      }
    }
  }
}

TEST(AllGatherAttention, TrivialLayoutIsBitIdenticalToTheReference) {
  AttentionProblem problem = random_problem(9, 4, 4, MaskKind::kCausal, 0, 7);
  const Tensor3 expected = reference_attention(problem);
  ShardLayout layout;
  layout.world_size = 1;
  layout.heads_per_pass = 4;
  const Tensor3 actual = allgather_attention(problem, layout);
  ASSERT_EQ(actual.data.size(), expected.data.size());
  for (std::size_t i = 0; i < actual.data.size(); ++i) {
    EXPECT_EQ(actual.data[i], expected.data[i]) << "element " << i;
  }
}

TEST(AllGatherAttention, EveryLayoutMatchesTheReference) {
  for (MaskKind mask :
       {MaskKind::kFull, MaskKind::kCausal, MaskKind::kSlidingWindow}) {
    AttentionProblem problem = random_problem(10, 6, 4, mask, 3, 555);
    const Tensor3 expected = reference_attention(problem);
    for (int world : {1, 2, 3, 4, 16}) {
      for (int heads : {1, 3, 4}) {
        ShardLayout layout;
        layout.world_size = world;
        layout.heads_per_pass = heads;
        const Tensor3 actual = allgather_attention(problem, layout);
        EXPECT_LE(max_rel_error(actual, expected), 1e-10)
            << mask_kind_name(mask) << " world=" << world
            << " heads=" << heads;
      }
    }
  }
}

TEST(AllGatherAttention, RemainderHeadGroupIsStillCovered) {
  AttentionProblem problem = random_problem(6, 4, 5, MaskKind::kFull, 0, 8);
  const Tensor3 expected = reference_attention(problem);
  ShardLayout layout;
  layout.world_size = 2;
  layout.heads_per_pass = 2;
  const Tensor3 actual = allgather_attention(problem, layout);
  EXPECT_LE(max_rel_error(actual, expected), 1e-10);
}

TEST(AllGatherAttention, WorldLargerThanSequenceLeavesSpareRanksIdle) {
  AttentionProblem problem = random_problem(3, 4, 2, MaskKind::kCausal, 0, 9);
  const Tensor3 expected = reference_attention(problem);
  ShardLayout layout;
  layout.world_size = 8;
  layout.heads_per_pass = 1;
  const Tensor3 actual = allgather_attention(problem, layout);
  EXPECT_LE(max_rel_error(actual, expected), 1e-10);
}

TEST(Masks, SlidingWindowAllowsExactlyTheTrailingWindow) {
  AttentionProblem problem =
      random_problem(10, 2, 1, MaskKind::kSlidingWindow, 3, 10);
  for (int i = 0; i < 10; ++i) {
    for (int j = 0; j < 10; ++j) {
      const bool expected = j <= i && i - j < 3;
      EXPECT_EQ(problem.mask_allows(i, j), expected) << i << "," << j;
    }
  }
}

TEST(Masks, CausalAllowsOnlyKeysUpToTheQuery) {
  AttentionProblem problem = random_problem(6, 2, 1, MaskKind::kCausal, 0, 11);
  for (int i = 0; i < 6; ++i) {
    for (int j = 0; j < 6; ++j) {
      EXPECT_EQ(problem.mask_allows(i, j), j <= i);
    }
  }
}

TEST(Masks, EmptyCustomRowIsRejected) {
  AttentionProblem problem = random_problem(3, 2, 1, MaskKind::kFull, 0, 12);
  problem.mask = MaskKind::kCustom;
  problem.custom_mask.assign(9, 1);
  problem.custom_mask[3] = 0;
  problem.custom_mask[4] = 0;
  problem.custom_mask[5] = 0;
  EXPECT_THROW(problem.validate(), DegenerateMask);
  problem.custom_mask[4] = 1;
  EXPECT_NO_THROW(problem.validate());
}

TEST(Masks, NonPositiveSlidingWindowIsRejected) {
  AttentionProblem problem =
      random_problem(4, 2, 1, MaskKind::kSlidingWindow, 2, 13);
  problem.window = 0;
  EXPECT_THROW(problem.validate(), DegenerateMask);
}

TEST(KvPeakMemory, MatchesTheClosedForm) {
  AttentionProblem problem = random_problem(256, 64, 8, MaskKind::kFull, 0, 14);
  ShardLayout layout;
  layout.world_size = 4;
  layout.heads_per_pass = 3;
  EXPECT_EQ(kv_peak_memory_bytes(problem, layout, 2),
            2ULL * 3 * 256 * 64 * 2);
}

TEST(KvPeakMemory, GrowsLinearlyWithHeadsPerPassOnly) {
  AttentionProblem problem = random_problem(64, 16, 8, MaskKind::kFull, 0, 15);
  ShardLayout one{1, 1};
  std::uint64_t base = kv_peak_memory_bytes(problem, one, 4);
  for (int heads = 1; heads <= 8; ++heads) {
    for (int world : {1, 2, 8}) {
      ShardLayout layout{world, heads};
      EXPECT_EQ(kv_peak_memory_bytes(problem, layout, 4),
                base * static_cast<std::uint64_t>(heads));
    }
  }
}

TEST(KvPeakMemory, RejectsInvalidArguments) {
  AttentionProblem problem = random_problem(8, 4, 2, MaskKind::kFull, 0, 16);
  ShardLayout layout{1, 1};
  EXPECT_THROW(kv_peak_memory_bytes(problem, layout, 0), ConfigError);
  ShardLayout too_many_heads{1, 3};
  EXPECT_THROW(kv_peak_memory_bytes(problem, too_many_heads, 2), ConfigError);
  ShardLayout bad_world{0, 1};
  EXPECT_THROW(kv_peak_memory_bytes(problem, bad_world, 2), ConfigError);
}

TEST(Shapes, MismatchedTensorsAreRejected) {
  AttentionProblem problem = random_problem(4, 4, 2, MaskKind::kFull, 0, 17);
  problem.v = Tensor3(2, 4, 3);
  EXPECT_THROW(problem.validate(), ConfigError);
}

}  // namespace
}  // namespace yatt::distattn
