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

#include "refguard/error_probe.hpp"

#include "gtest/gtest.h"
#include "refguard/scripted.hpp"
#include "test_support.hpp"

namespace refguard {
namespace {

std::vector<std::uint64_t> seeds(int n) {
  std::vector<std::uint64_t> out;
  for (int i = 0; i < n; ++i) out.push_back(static_cast<std::uint64_t>(1000 + i));
  return out;
}

TEST(NearestRankTest, HandEvaluated) {
  EXPECT_EQ(nearest_rank({1, 2, 3, 4}, 0.25), 1);
  EXPECT_EQ(nearest_rank({1, 2, 3, 4}, 0.5), 2);
  EXPECT_EQ(nearest_rank({1, 2, 3, 4}, 0.75), 3);
  EXPECT_EQ(nearest_rank({4, 3, 2, 1}, 0.9), 4);
  EXPECT_THROW(nearest_rank({}, 0.5), Error);
}

TEST(ErrorProbeTest, ConstantFieldHasZeroError) {
  auto field = SyntheticField::constant(0.6, 4, true);
  const Query q = testing::make_query("c");
  field.add_query(q, testing::rows_with_mean(Vector(4, 0.0)));
  for (auto mode : {ProbeMode::kLiteral, ProbeMode::kNormalized}) {
    const auto report = error_probe(field, {q}, {{4, 4}, {16, 16}}, seeds(8), 0.02, {mode, 0.1, 0.1});
    for (const auto& cell : report.cells) {
      EXPECT_EQ(cell.median_error, 0.0);
      EXPECT_EQ(cell.p90_error, 0.0);
    }
  }
}

TEST(ErrorProbeTest, UnsupportedWithoutAnalyticGradient) {
  ScriptedText backend(2);
  const Query q = testing::make_query("s");
  backend.add_script(q, {{"Sorry", 1.0}});
  try {
    error_probe(backend, {q}, {{4, 4}}, seeds(2), 0.02);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kUnsupported);
  }
}

TEST(ErrorProbeTest, MedianErrorFallsWithP) {
  Query q;
  const auto field = default_probe_field(&q);
  const auto report = error_probe(field, {q}, {{16, 4}, {16, 16}, {16, 64}}, seeds(64), 0.02);
  EXPECT_GT(report.cells[0].median_error, report.cells[1].median_error);
  EXPECT_GT(report.cells[1].median_error, report.cells[2].median_error);
}

TEST(ErrorProbeTest, P90ErrorNonIncreasingInN) {
  Query q;
  const auto field = default_probe_field(&q);
  const auto report = error_probe(field, {q}, {{4, 16}, {16, 16}, {64, 16}}, seeds(64), 0.02);
  EXPECT_GE(report.cells[0].p90_error, report.cells[1].p90_error);
  EXPECT_GE(report.cells[1].p90_error, report.cells[2].p90_error);
}

TEST(ErrorProbeTest, LiteralModeComparesAgainstPTimesGradient) {
  Query q;
  const auto field = default_probe_field(&q);
  const auto literal = error_probe(field, {q}, {{16, 8}}, seeds(4), 0.02, {ProbeMode::kLiteral, 0.1, 0.1});
  const auto normalized = error_probe(field, {q}, {{16, 8}}, seeds(4), 0.02, {ProbeMode::kNormalized, 0.1, 0.1});
  // |g_lit - P grad| = P |g_norm - grad| for the same seeds.
  for (std::size_t i = 0; i < 4; ++i) {
    EXPECT_NEAR(literal.cells[0].errors[i], 8.0 * normalized.cells[0].errors[i], 1e-9);
  }
}

TEST(ErrorProbeTest, DiagnosticsAreLabeledAndConsistent) {
  Query q;
  const auto field = default_probe_field(&q);
  const auto report = error_probe(field, {q}, {{10, 10}, {10, 40}}, seeds(4), 0.02);
  const auto& a = report.cells[0].diagnostics;
  const auto& b = report.cells[1].diagnostics;
  EXPECT_NEAR(a.p, 1.0 / (1.0 + std::exp(-0.4)), 1e-12);
  EXPECT_GT(a.lipschitz, 0.0);
  EXPECT_NEAR(b.r, a.r / 2.0, 1e-9);  // r scales as 1/sqrt(P)
  EXPECT_LT(b.epsilon, a.epsilon);
  const auto j = error_probe_json(report);
  for (const char* key : {"eps_f", "delta_g", "r", "L", "epsilon", "delta", "chebyshev_bound"}) {
    EXPECT_TRUE(j["cells"][0]["diagnostics"].contains(key)) << key;
  }
  EXPECT_EQ(j["mode"], "normalized");
}

}  // namespace
}  // namespace refguard
