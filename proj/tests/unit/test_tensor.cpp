// Copyright 2026 The diffserve Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <cmath>
#include <thread>

#include "diffserve/alloc_tracker.hpp"
#include "diffserve/errors.hpp"
#include "diffserve/rng.hpp"
#include "diffserve/tensor.hpp"

using namespace diffserve;

TEST(Tensor, ShapeMatchesData) {
  Tensor t({2, 3, 4});
  EXPECT_EQ(t.numel(), 24u);
  EXPECT_EQ(t.rank(), 3u);
  EXPECT_EQ(t.dim(2), 4);
  for (float v : t.data()) EXPECT_EQ(v, 0.0f);
  EXPECT_THROW(t.dim(3), DimensionError);
}

TEST(Tensor, RejectsBadShapes) {
  EXPECT_THROW(Tensor({2, 0}), DimensionError);
  EXPECT_THROW(Tensor({-1}), DimensionError);
  EXPECT_THROW(Tensor({2, 2}, {1.0f, 2.0f, 3.0f}), DimensionError);
}

TEST(Tensor, ReshapeKeepsElements) {
  const Tensor t({2, 3}, {1, 2, 3, 4, 5, 6});
  const Tensor r = t.reshaped({3, 2});
  EXPECT_EQ(r.shape(), (Shape{3, 2}));
  EXPECT_EQ(r[5], 6.0f);
  EXPECT_THROW(t.reshaped({4, 2}), DimensionError);
}

TEST(Tensor, BitEqualDistinguishesSignedZero) {
  const Tensor a({1}, {0.0f});
  const Tensor b({1}, {-0.0f});
  EXPECT_FALSE(bit_equal(a, b));
  EXPECT_TRUE(bit_equal(a, Tensor({1}, {0.0f})));
  EXPECT_FALSE(bit_equal(a, Tensor({1, 1}, {0.0f})));
}

TEST(Rng, SameSeedSameStream) {
  Rng a(7), b(7), c(8);
  for (int i = 0; i < 100; ++i) {
    const auto va = a.next_u64();
    EXPECT_EQ(va, b.next_u64());
    EXPECT_NE(va, c.next_u64());
  }
}

TEST(Rng, SplitStreamsAreIndependentOfParentPosition) {
  Rng parent(3);
  Rng early = parent.split(5);
  for (int i = 0; i < 10; ++i) parent.next_u64();
  Rng late = parent.split(5);
  for (int i = 0; i < 20; ++i) EXPECT_EQ(early.normal(), late.normal());
  EXPECT_NE(Rng(3).split(5).next_u64(), Rng(3).split(6).next_u64());
}

TEST(Rng, GaussianMoments) {
  Rng rng(12345);
  constexpr int kDraws = 200000;
  double sum = 0.0, sq = 0.0;
  for (int i = 0; i < kDraws; ++i) {
    const double v = rng.normal();
    sum += v;
    sq += v * v;
  }
  const double mean = sum / kDraws;
  const double sd = std::sqrt(sq / kDraws - mean * mean);
  EXPECT_LT(std::abs(mean), 0.05);
  EXPECT_LT(std::abs(sd - 1.0), 0.05);
}

TEST(Rng, UniformIsOpenInterval) {
  Rng rng(1);
  for (int i = 0; i < 100000; ++i) {
    const double u = rng.uniform();
    ASSERT_GT(u, 0.0);
    ASSERT_LT(u, 1.0);
  }
}

TEST(Rng, TruncatedNormalStaysWithinTwoSigma) {
  Rng rng(2);
  for (int i = 0; i < 10000; ++i) ASSERT_LE(std::abs(rng.truncated_normal(0.02f)), 0.04f);
}

TEST(AllocationTracker, RunningMaximum) {
  AllocationTracker t;
  t.track_alloc(100);
  t.track_alloc(50);
  t.track_free(100);
  t.track_alloc(30);
  EXPECT_EQ(t.peak(), 150u);
  EXPECT_EQ(t.current(), 80u);
  t.reset();
  EXPECT_EQ(t.peak(), 0u);
  EXPECT_EQ(t.current(), 0u);
}

TEST(AllocationTracker, OverFreeIsAnAccountingError) {
  AllocationTracker t;
  t.track_alloc(10);
  EXPECT_THROW(t.track_free(11), AccountingError);
  EXPECT_EQ(t.current(), 10u);
}

TEST(AllocationTracker, TensorsReportToScopedTracker) {
  AllocationTracker t;
  {
    ScopedTracker scope(&t);
    Tensor a({256});
    EXPECT_EQ(t.current(), 1024u);
    {
      Tensor b(a);
      EXPECT_EQ(t.current(), 2048u);
    }
    EXPECT_EQ(t.current(), 1024u);
  }
  EXPECT_EQ(t.current(), 0u);
  EXPECT_EQ(t.peak(), 2048u);
  EXPECT_TRUE(t.consistent());
}

TEST(AllocationTracker, ScopesArePerThread) {
  AllocationTracker mine, theirs;
  ScopedTracker scope(&mine);
  std::thread worker([&] {
    ScopedTracker inner(&theirs);
    Tensor x({64});
  });
  worker.join();
  Tensor y({32});
  EXPECT_EQ(mine.peak(), 128u);
  EXPECT_EQ(theirs.peak(), 256u);
}

TEST(AllocationTracker, ResetPeakRestartsFromCurrent) {
  AllocationTracker t;
  t.track_alloc(100);
  t.track_free(60);
  t.reset_peak();
  EXPECT_EQ(t.peak(), 40u);
}
