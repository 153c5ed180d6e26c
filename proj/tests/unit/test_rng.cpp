#include <gtest/gtest.h>

#include <fabir/rng.hpp>

#include <set>
#include <vector>

using fabir::Rng;

TEST(Rng, SameSeedSameStream) {
  Rng a(42), b(42);
  for (int i = 0; i < 100; ++i) EXPECT_EQ(a.next_u64(), b.next_u64());
}

TEST(Rng, DifferentSeedsDiffer) {
  Rng a(1), b(2);
  EXPECT_NE(a.next_u64(), b.next_u64());
}

TEST(Rng, ForksAreIndependentOfParentDraws) {
  Rng a(7), b(7);
  b.next_u64();
  EXPECT_EQ(a.fork(3).next_u64(), b.fork(3).next_u64());
  EXPECT_NE(a.fork(3).next_u64(), a.fork(4).next_u64());
}

TEST(Rng, UniformInRangeWithCorrectMean) {
  Rng r(3);
  double total = 0;
  for (int i = 0; i < 100000; ++i) {
    const double u = r.uniform();
    ASSERT_GE(u, 0.0);
    ASSERT_LT(u, 1.0);
    total += u;
  }
  EXPECT_NEAR(total / 100000, 0.5, 0.01);
}

TEST(Rng, NormalMoments) {
  Rng r(4);
  double s = 0, s2 = 0;
  const int n = 100000;
  for (int i = 0; i < n; ++i) {
    const double x = r.normal(1.0, 2.0);
    s += x;
    s2 += x * x;
  }
  const double m = s / n;
  EXPECT_NEAR(m, 1.0, 0.05);
  EXPECT_NEAR(s2 / n - m * m, 4.0, 0.1);
}

TEST(Rng, BelowCoversRange) {
  Rng r(5);
  std::set<std::size_t> seen;
  for (int i = 0; i < 1000; ++i) {
    const auto v = r.below(7);
    ASSERT_LT(v, 7u);
    seen.insert(v);
  }
  EXPECT_EQ(seen.size(), 7u);
}

TEST(Rng, ShuffleIsAPermutation) {
  Rng r(6);
  std::vector<int> v{0, 1, 2, 3, 4, 5, 6, 7, 8, 9};
  r.shuffle(std::span<int>(v));
  std::multiset<int> s(v.begin(), v.end());
  EXPECT_EQ(s.size(), 10u);
  for (int i = 0; i < 10; ++i) EXPECT_EQ(s.count(i), 1u);
}
