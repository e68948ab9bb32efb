#include <cmath>
#include <set>
#include <vector>

#include <gtest/gtest.h>

#include "mfglab/rng.hpp"

using namespace mfglab;

TEST(Rng, SameKeySameStream) {
  const RngStream a(RngStreamKey(42).child({1, 2, 3}));
  const RngStream b(RngStreamKey(42).child({1, 2, 3}));
  for (std::uint64_t k = 0; k < 1000; ++k) {
    ASSERT_EQ(a.word(k), b.word(k));
    ASSERT_EQ(a.gaussian(k), b.gaussian(k));
  }
}

TEST(Rng, OneLabelApartDiffers) {
  const RngStreamKey root(42);
  const RngStream a(root.child({1, 2, 3}));
  for (const auto& other : {root.child({1, 2, 4}), root.child({0, 2, 3}), root.child({1, 3, 3}), root.child({1, 2}),
                            root.child({1, 2, 3, 0}), root.child({3, 2, 1}), RngStreamKey(43).child({1, 2, 3})}) {
    const RngStream b(other);
    std::size_t same = 0;
    for (std::uint64_t k = 0; k < 1000; ++k) same += a.gaussian(k) == b.gaussian(k);
    EXPECT_EQ(same, 0u);
  }
}

TEST(Rng, ChildListEqualsChain) {
  const RngStreamKey root(7);
  EXPECT_EQ(root.child({5, 6}), root.child(5).child(6));
  EXPECT_NE(root.child({5, 6}), root.child({6, 5}));
}

TEST(Rng, NoCollisionsAcrossManyKeys) {
  std::set<std::uint64_t> words;
  const RngStreamKey root(1);
  for (std::uint64_t t = 0; t < 100; ++t)
    for (std::uint64_t i = 0; i < 100; ++i) words.insert(RngStream(root.child({t, i})).word(0));
  EXPECT_EQ(words.size(), 10000u);
}

TEST(Rng, UniformInOpenInterval) {
  EXPECT_GT(rng::to_unit_open(0), 0.0);
  EXPECT_LT(rng::to_unit_open(~std::uint64_t{0}), 1.0);
  EXPECT_TRUE(std::isfinite(rng::to_gaussian(0)));
  EXPECT_TRUE(std::isfinite(rng::to_gaussian(~std::uint64_t{0})));
}

TEST(Rng, PooledGaussianMoments) {
  // 1000 streams x 1000 counters at a fixed seed.
  double sum = 0.0, sq = 0.0;
  const RngStreamKey root(2024);
  for (std::uint64_t s = 0; s < 1000; ++s) {
    const RngStream r(root.child(s));
    for (std::uint64_t k = 0; k < 1000; ++k) {
      const double z = r.gaussian(k);
      sum += z;
      sq += z * z;
    }
  }
  const double n = 1e6;
  const double mean = sum / n;
  const double var = sq / n - mean * mean;
  EXPECT_LT(std::abs(mean), 0.005);
  EXPECT_LT(std::abs(var - 1.0), 0.01);
}

TEST(Rng, UniformCellsBalanced) {
  // Chi-square over 16 cells; 99.9% critical value at 15 dof is 37.7.
  std::vector<double> counts(16, 0.0);
  const RngStream r(RngStreamKey(5));
  const std::size_t n = 160000;
  for (std::uint64_t k = 0; k < n; ++k) counts[static_cast<std::size_t>(r.uniform(k) * 16.0)] += 1.0;
  double chi = 0.0;
  for (double c : counts) chi += (c - n / 16.0) * (c - n / 16.0) / (n / 16.0);
  EXPECT_LT(chi, 37.7);
}
