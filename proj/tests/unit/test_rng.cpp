#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <set>
#include <vector>

#include "imgconf/rng.hpp"

using namespace imgconf;

// Known-answer vectors of the reference Philox4x32-10 implementation.
TEST(Philox, KnownAnswerZero) {
  const auto out = philox4x32_10({0, 0, 0, 0}, {0, 0});
  EXPECT_EQ(out[0], 0x6627e8d5u);
  EXPECT_EQ(out[1], 0xe169c58du);
  EXPECT_EQ(out[2], 0xbc57ac4cu);
  EXPECT_EQ(out[3], 0x9b00dbd8u);
}

TEST(Philox, KnownAnswerOnes) {
  const auto out = philox4x32_10({0xffffffffu, 0xffffffffu, 0xffffffffu, 0xffffffffu},
                                 {0xffffffffu, 0xffffffffu});
  EXPECT_EQ(out[0], 0x408f276du);
  EXPECT_EQ(out[1], 0x41c83b0eu);
  EXPECT_EQ(out[2], 0xa20bc7c6u);
  EXPECT_EQ(out[3], 0x6d5451fdu);
}

TEST(Philox, KnownAnswerPi) {
  const auto out = philox4x32_10({0x243f6a88u, 0x85a308d3u, 0x13198a2eu, 0x03707344u},
                                 {0xa4093822u, 0x299f31d0u});
  EXPECT_EQ(out[0], 0xd16cfe09u);
  EXPECT_EQ(out[1], 0x94fdccebu);
  EXPECT_EQ(out[2], 0x5001e420u);
  EXPECT_EQ(out[3], 0x24126ea1u);
}

TEST(Philox, SameKeyAndStreamReplays) {
  Philox a(42, 7), b(42, 7);
  for (int i = 0; i < 1000; ++i) ASSERT_EQ(a(), b());
  Philox c(42, 7), d(42, 7);
  for (int i = 0; i < 100; ++i) ASSERT_EQ(c.normal(), d.normal());
}

TEST(Philox, StreamsAndKeysDiffer) {
  Philox a(42, 0), b(42, 1), c(43, 0);
  int same_ab = 0, same_ac = 0;
  for (int i = 0; i < 1000; ++i) {
    const auto x = a(), y = b(), z = c();
    same_ab += x == y;
    same_ac += x == z;
  }
  EXPECT_EQ(same_ab, 0);
  EXPECT_EQ(same_ac, 0);
}

TEST(Philox, UniformRangeAndMoments) {
  Philox rng(1, 0);
  const int n = 200000;
  double sum = 0.0, sq = 0.0;
  for (int i = 0; i < n; ++i) {
    const double u = rng.uniform();
    ASSERT_GE(u, 0.0);
    ASSERT_LT(u, 1.0);
    sum += u;
    sq += u * u;
  }
  const double mean = sum / n;
  EXPECT_NEAR(mean, 0.5, 5 * std::sqrt(1.0 / 12.0 / n));
  EXPECT_NEAR(sq / n - mean * mean, 1.0 / 12.0, 0.002);
}

TEST(Philox, NormalMoments) {
  Philox rng(9, 3);
  const int n = 200000;
  double sum = 0.0, sq = 0.0, cube = 0.0;
  for (int i = 0; i < n; ++i) {
    const double z = rng.normal();
    ASSERT_TRUE(std::isfinite(z));
    sum += z;
    sq += z * z;
    cube += z * z * z;
  }
  EXPECT_NEAR(sum / n, 0.0, 5.0 / std::sqrt(n));
  EXPECT_NEAR(sq / n, 1.0, 5.0 * std::sqrt(2.0 / n));
  EXPECT_NEAR(cube / n, 0.0, 5.0 * std::sqrt(15.0 / n));
}

TEST(Philox, BernoulliFrequency) {
  Philox rng(5, 5);
  const int n = 100000;
  int hits = 0;
  for (int i = 0; i < n; ++i) hits += rng.bernoulli(0.3);
  EXPECT_NEAR(hits / double(n), 0.3, 5 * std::sqrt(0.21 / n));
  Philox edge(5, 6);
  for (int i = 0; i < 100; ++i) {
    EXPECT_FALSE(edge.bernoulli(0.0));
    EXPECT_TRUE(edge.bernoulli(1.0));
  }
}

TEST(Philox, WorksWithStdAlgorithms) {
  std::vector<int> v(50);
  for (int i = 0; i < 50; ++i) v[i] = i;
  Philox rng(3, 0);
  std::shuffle(v.begin(), v.end(), rng);
  std::vector<int> sorted = v;
  std::sort(sorted.begin(), sorted.end());
  for (int i = 0; i < 50; ++i) EXPECT_EQ(sorted[i], i);
}

TEST(DeriveKey, DependsOnEveryPartAndOrder) {
  std::set<std::uint64_t> keys;
  keys.insert(derive_key(1, {}));
  keys.insert(derive_key(1, {0}));
  keys.insert(derive_key(1, {1}));
  keys.insert(derive_key(2, {1}));
  keys.insert(derive_key(1, {1, 2}));
  keys.insert(derive_key(1, {2, 1}));
  keys.insert(derive_key(1, {stream_tag::kScene, 0}));
  keys.insert(derive_key(1, {stream_tag::kTreatment, 0}));
  EXPECT_EQ(keys.size(), 8u);
  EXPECT_EQ(derive_key(7, {3, 4}), derive_key(7, {3, 4}));
}
