#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include "repsim/rng.hpp"

using namespace repsim;

TEST(SeededRng, MatchesSplitMix64ReferenceStream) {
  // Reference outputs of the published SplitMix64 generator seeded with 0.
  SeededRng rng(0);
  EXPECT_EQ(rng.next_u64(), 0xE220A8397B1DCDAFULL);
  EXPECT_EQ(rng.next_u64(), 0x6E789E6AA1B965F4ULL);
  EXPECT_EQ(rng.next_u64(), 0x06C45D188009454FULL);
}

TEST(SeededRng, EqualSeedsGiveIdenticalStreams) {
  SeededRng a(1234), b(1234), c(1235);
  bool differs = false;
  for (int i = 0; i < 1000; ++i) {
    const auto x = a.next_u64();
    EXPECT_EQ(x, b.next_u64());
    differs |= x != c.next_u64();
  }
  EXPECT_TRUE(differs);
  SeededRng n1(77), n2(77);
  for (int i = 0; i < 101; ++i) EXPECT_EQ(n1.normal(), n2.normal());
}

TEST(SeededRng, SplitIsPureAndDistinct) {
  SeededRng root(5);
  const auto before = root.counter();
  SeededRng s1 = root.split(1), s1b = root.split(1), s2 = root.split(2);
  EXPECT_EQ(root.counter(), before);
  const auto v = s1.next_u64();
  EXPECT_EQ(v, s1b.next_u64());
  EXPECT_NE(v, s2.next_u64());
}

TEST(SeededRng, UniformAndIndexRanges) {
  SeededRng rng(8);
  double sum = 0.0;
  std::vector<int> counts(7, 0);
  for (int i = 0; i < 70000; ++i) {
    const double u = rng.uniform();
    ASSERT_GE(u, 0.0);
    ASSERT_LT(u, 1.0);
    sum += u;
    const auto k = rng.uniform_index(7);
    ASSERT_LT(k, 7u);
    ++counts[k];
  }
  EXPECT_NEAR(sum / 70000.0, 0.5, 0.01);
  for (int c : counts) EXPECT_NEAR(c, 10000, 500);
}

TEST(SeededRng, NormalMoments) {
  SeededRng rng(9);
  const int n = 200000;
  double m1 = 0.0, m2 = 0.0;
  for (int i = 0; i < n; ++i) {
    const double z = rng.normal();
    m1 += z;
    m2 += z * z;
  }
  EXPECT_NEAR(m1 / n, 0.0, 0.01);
  EXPECT_NEAR(m2 / n, 1.0, 0.02);
}

TEST(SeededRng, ShuffleIsAPermutation) {
  SeededRng rng(10);
  std::vector<int> v(100);
  std::iota(v.begin(), v.end(), 0);
  auto w = v;
  rng.shuffle(std::span<int>(w));
  EXPECT_NE(v, w);
  std::sort(w.begin(), w.end());
  EXPECT_EQ(v, w);
}
