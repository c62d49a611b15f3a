/* Copyright 2026 The refguard Authors. All Rights Reserved.

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

    http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.
==============================================================================*/

#include "refguard/random.hpp"

#include <cmath>
#include <set>

#include "gtest/gtest.h"

namespace refguard {
namespace {

// Known-answer vectors for Philox4x32-10 from the Random123 distribution.
TEST(PhiloxTest, KnownAnswerZero) {
  const auto out = philox4x32({0, 0, 0, 0}, {0, 0});
  EXPECT_EQ(out[0], 0x6627e8d5u);
  EXPECT_EQ(out[1], 0xe169c58du);
  EXPECT_EQ(out[2], 0xbc57ac4cu);
  EXPECT_EQ(out[3], 0x9b00dbd8u);
}

TEST(PhiloxTest, KnownAnswerOnes) {
  const auto out = philox4x32({0xffffffffu, 0xffffffffu, 0xffffffffu, 0xffffffffu}, {0xffffffffu, 0xffffffffu});
  EXPECT_EQ(out[0], 0x408f276du);
  EXPECT_EQ(out[1], 0x41c83b0eu);
  EXPECT_EQ(out[2], 0xa20bc7c6u);
  EXPECT_EQ(out[3], 0x6d5451fdu);
}

TEST(PhiloxTest, KnownAnswerPi) {
  const auto out = philox4x32({0x243f6a88u, 0x85a308d3u, 0x13198a2eu, 0x03707344u}, {0xa4093822u, 0x299f31d0u});
  EXPECT_EQ(out[0], 0xd16cfe09u);
  EXPECT_EQ(out[1], 0x94fdccebu);
  EXPECT_EQ(out[2], 0x5001e420u);
  EXPECT_EQ(out[3], 0x24126ea1u);
}

TEST(CounterRngTest, DrawsAreAddressable) {
  const CounterRng rng(derive_key(42, "q1"), streams::kBase);
  const double a = rng.uniform(17);
  for (int i = 0; i < 100; ++i) rng.uniform(static_cast<std::uint64_t>(i));
  EXPECT_EQ(rng.uniform(17), a);
  EXPECT_NE(rng.uniform(17), rng.uniform(18));
}

TEST(CounterRngTest, StreamsAndKeysDiffer) {
  const auto k = derive_key(42, "q1");
  EXPECT_NE(CounterRng(k, 0).bits64(0), CounterRng(k, 1).bits64(0));
  EXPECT_NE(CounterRng(k, 0).bits64(0), CounterRng(derive_key(42, "q2"), 0).bits64(0));
  EXPECT_NE(derive_key(42, "q1"), derive_key(43, "q1"));
}

TEST(CounterRngTest, UniformInUnitInterval) {
  const CounterRng rng(7, 3);
  double sum = 0.0;
  const int n = 100000;
  for (int i = 0; i < n; ++i) {
    const double u = rng.uniform(static_cast<std::uint64_t>(i));
    ASSERT_GE(u, 0.0);
    ASSERT_LT(u, 1.0);
    sum += u;
  }
  EXPECT_NEAR(sum / n, 0.5, 0.005);
}

TEST(CounterRngTest, NormalMoments) {
  const CounterRng rng(11, streams::kDirectionDraw);
  const int n = 200000;
  double s1 = 0.0, s2 = 0.0, s4 = 0.0;
  for (int i = 0; i < n; ++i) {
    const double z = rng.normal(static_cast<std::uint64_t>(i));
    ASSERT_TRUE(std::isfinite(z));
    s1 += z;
    s2 += z * z;
    s4 += z * z * z * z;
  }
  EXPECT_NEAR(s1 / n, 0.0, 0.01);
  EXPECT_NEAR(s2 / n, 1.0, 0.02);
  EXPECT_NEAR(s4 / n, 3.0, 0.1);
}

TEST(CounterRngTest, BelowIsInRangeAndCoversIt) {
  const CounterRng rng(5, 9);
  std::set<std::uint64_t> seen;
  for (int i = 0; i < 1000; ++i) {
    const auto v = rng.below(static_cast<std::uint64_t>(i), 7);
    ASSERT_LT(v, 7u);
    seen.insert(v);
  }
  EXPECT_EQ(seen.size(), 7u);
}

TEST(RngCursorTest, ShuffleIsPermutationAndDeterministic) {
  std::vector<int> a(50), b;
  for (int i = 0; i < 50; ++i) a[static_cast<std::size_t>(i)] = i;
  b = a;
  RngCursor(1, 2).shuffle(a);
  RngCursor(1, 2).shuffle(b);
  EXPECT_EQ(a, b);
  std::vector<int> sorted = a;
  std::sort(sorted.begin(), sorted.end());
  for (int i = 0; i < 50; ++i) EXPECT_EQ(sorted[static_cast<std::size_t>(i)], i);
}

}  // namespace
}  // namespace refguard
