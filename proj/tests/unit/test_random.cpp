#include <gtest/gtest.h>

#include <cmath>
#include <set>
#include <vector>

#include "affes/random.hpp"

using affes::mix_seed;
using affes::Rng;

TEST(Rng, EngineIsTheStandardMersenneTwister) {
  Rng rng(5489);
  std::uint64_t v = 0;
  for (int i = 0; i < 10000; ++i) v = rng.next_u64();
  EXPECT_EQ(v, 9981545732273789042ULL);
}

TEST(Rng, SameSeedSameStream) {
  Rng a(42), b(42);
  for (int i = 0; i < 100; ++i) {
    EXPECT_EQ(a.uniform01(), b.uniform01());
    EXPECT_EQ(a.normal(), b.normal());
    EXPECT_EQ(a.below(17), b.below(17));
  }
}

TEST(Rng, Uniform01StaysInHalfOpenInterval) {
  Rng rng(1);
  double sum = 0.0;
  const int n = 100000;
  for (int i = 0; i < n; ++i) {
    const double u = rng.uniform01();
    ASSERT_GE(u, 0.0);
    ASSERT_LT(u, 1.0);
    sum += u;
  }
  EXPECT_NEAR(sum / n, 0.5, 0.005);
}

TEST(Rng, BelowIsUniformByChiSquare) {
  Rng rng(2);
  const int k = 7, n = 70000;
  std::vector<int> counts(k);
  for (int i = 0; i < n; ++i) ++counts[rng.below(k)];
  double chi2 = 0.0;
  for (int c : counts) chi2 += (c - n / k) * (c - n / k) / double(n / k);
  // 6 degrees of freedom: P(chi2 > 22.46) = 0.001.
  EXPECT_LT(chi2, 22.46);
}

TEST(Rng, NormalHasUnitMoments) {
  Rng rng(3);
  const int n = 200000;
  double s1 = 0.0, s2 = 0.0;
  for (int i = 0; i < n; ++i) {
    const double x = rng.normal();
    s1 += x;
    s2 += x * x;
  }
  EXPECT_NEAR(s1 / n, 0.0, 0.01);
  EXPECT_NEAR(s2 / n, 1.0, 0.02);
}

TEST(MixSeed, DistinctKeysGiveDistinctSeeds) {
  std::set<std::uint64_t> seen;
  for (std::uint64_t s = 0; s < 10; ++s)
    for (std::uint64_t k = 0; k < 100; ++k) seen.insert(mix_seed(s, k));
  EXPECT_EQ(seen.size(), 1000u);
  EXPECT_EQ(mix_seed(7, 1, 2), mix_seed(mix_seed(7, 1), 2));
  EXPECT_NE(mix_seed(7, 1, 2), mix_seed(7, 2, 1));
}
