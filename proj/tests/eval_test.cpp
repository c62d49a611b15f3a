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

#include "refguard/eval.hpp"

#include "gtest/gtest.h"
#include "refguard/scripted.hpp"
#include "test_support.hpp"

namespace refguard {
namespace {

using testing::make_query;

Verdict verdict(const std::string& id, Decision d, const std::string& response = "") {
  Verdict v;
  v.query_id = id;
  v.decision = d;
  v.f_value = RefusalLoss::from_counts(0, 10);
  if (d == Decision::kPassed) v.response = response;
  return v;
}

TEST(RefusalRateTest, Arithmetic) {
  const std::vector<Verdict> vs = {
      verdict("a", Decision::kRejectedStage1),
      verdict("b", Decision::kRejectedStage2),
      verdict("c", Decision::kPassed, "I'm sorry, no."),
      verdict("d", Decision::kPassed, "Sure, here it is."),
  };
  const auto r = refusal_rate_from_verdicts(vs);
  EXPECT_EQ(r.total, 4);
  EXPECT_EQ(r.stage1, 3);
  EXPECT_EQ(r.stage2, 2);
  EXPECT_EQ(r.complied, 1);
  EXPECT_DOUBLE_EQ(r.rr, 0.75);
  EXPECT_DOUBLE_EQ(r.asr, 0.25);
}

TEST(RefusalRateTest, EmptyIsInvalid) { EXPECT_THROW(refusal_rate_from_verdicts({}), Error); }

TEST(RefusalRateTest, AlwaysRefusingBackend) {
  auto field = SyntheticField::constant(1.0, 2);
  std::vector<Query> qs;
  for (int i = 0; i < 5; ++i) {
    qs.push_back(make_query("q" + std::to_string(i)));
    field.add_query(qs.back(), testing::rows_with_mean({0, 0}));
  }
  DetectorConfig cfg;
  cfg.threshold = 1.0;
  const auto r = refusal_rate(field, qs, cfg);
  EXPECT_EQ(r.stage1, 0);
  EXPECT_DOUBLE_EQ(r.rr, 1.0);
}

TEST(RefusalRateTest, MatchesBruteForceOnScriptedText) {
  // Independent route: call detect per query and classify by hand.
  ScriptedText backend(3);
  std::vector<Query> qs;
  RngCursor rng(4, 4);
  for (int i = 0; i < 30; ++i) {
    qs.push_back(make_query("s" + std::to_string(i)));
    const double p = rng.uniform();
    backend.add_script(qs.back(), {{"I cannot do that.", p}, {"Here you go.", 1.0 - p}});
  }
  DetectorConfig cfg;
  cfg.threshold = 0.0;
  const auto r = refusal_rate(backend, qs, cfg, 7);
  int b1 = 0, b2 = 0, b3 = 0;
  for (const auto& q : qs) {
    const auto v = detect(backend, q, cfg);
    if (v.f_value.value() < 0.5) continue;
    ++b1;
    if (*v.grad_norm > 0.0) continue;
    ++b2;
    b3 += v.response->find("I cannot") == std::string::npos;
  }
  EXPECT_EQ(r.stage1, b1);
  EXPECT_EQ(r.stage2, b2);
  EXPECT_EQ(r.complied, b3);
  EXPECT_DOUBLE_EQ(r.rr + r.asr, 1.0);
}

TEST(MeanStderrTest, SampleStandardDeviationOverRootN) {
  const auto m = mean_stderr({1, 2, 3, 4, 5});
  EXPECT_DOUBLE_EQ(m.mean, 3.0);
  EXPECT_NEAR(m.stderr_, std::sqrt(2.5) / std::sqrt(5.0), 1e-15);
  EXPECT_EQ(mean_stderr({7}).stderr_, 0.0);
}

TEST(SplitBenignTest, EightyTwentyAndDisjoint) {
  std::vector<Query> qs;
  for (int i = 0; i < 100; ++i) qs.push_back(make_query("b" + std::to_string(i)));
  const auto [val, test] = split_benign(qs, 0.8, 13);
  EXPECT_EQ(val.size(), 80u);
  EXPECT_EQ(test.size(), 20u);
  std::set<std::string> ids;
  for (const auto& q : val) ids.insert(q.id);
  for (const auto& q : test) EXPECT_EQ(ids.count(q.id), 0u);
  EXPECT_EQ(split_benign(qs, 0.8, 13).first[0].id, val[0].id);
  EXPECT_NE(split_benign(qs, 0.8, 21).first[0].id + split_benign(qs, 0.8, 21).first[1].id, val[0].id + val[1].id);
}

class SmallBenchmarkTest : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    auto spec = PopulationSpec::default_spec();
    spec.benign.count = 200;
    for (auto& a : spec.attacks) a.count = 20;
    pop_ = new Population(generate_population(spec, 42));
  }
  static void TearDownTestSuite() {
    delete pop_;
    pop_ = nullptr;
  }
  static Population* pop_;
};
Population* SmallBenchmarkTest::pop_ = nullptr;

TEST_F(SmallBenchmarkTest, BenignOnlyOmitsTpr) {
  Benchmark b = make_benchmark(*pop_);
  b.malicious.clear();
  const auto run = run_benchmark(b, DetectorConfig{}, {13, 21});
  EXPECT_FALSE(run.tpr_avg.has_value());
  EXPECT_FALSE(eval_run_json(run).contains("tpr"));
  EXPECT_TRUE(eval_run_json(run).contains("fpr_test"));
}

TEST_F(SmallBenchmarkTest, UnlabeledQueriesRejected) {
  auto qs = pop_->all();
  qs[3].label.reset();
  EXPECT_THROW(benchmark_from_queries(pop_->field, qs), Error);
}

TEST_F(SmallBenchmarkTest, SigmaZeroEqualsStageOneOnly) {
  DetectorConfig cfg;
  cfg.sigma = 0.0;
  const auto run = run_benchmark(make_benchmark(*pop_), cfg, {13, 42});
  for (const auto& r : run.runs) {
    int stage2_val = 0;
    const auto [val, test] = split_benign(pop_->benign, 0.8, r.seed);
    DetectorConfig c = cfg;
    c.seed = r.seed;
    c.threshold = r.calibration.threshold;
    for (const auto& v : detect_all(pop_->field, val, c, 64)) stage2_val += v.decision == Decision::kRejectedStage2;
    EXPECT_EQ(stage2_val, 0);
    // On the split the threshold was fitted to, the two detectors agree exactly.
    c.threshold = kThresholdDisabled;
    EXPECT_EQ(r.fpr_val, refusal_rate_from_verdicts(detect_all(pop_->field, val, c, 64)).rr);
  }
}

TEST_F(SmallBenchmarkTest, TwoStepDominatesStageOneOnly) {
  const auto run = run_benchmark(make_benchmark(*pop_), DetectorConfig{}, {13, 21, 42});
  for (const auto& r : run.runs) EXPECT_GE(*r.tpr_avg, *r.tpr_avg_stage1_only);
  EXPECT_LE(run.fpr_val.mean, 0.05 + 1e-12);
  const auto table = render_eval_table(run);
  EXPECT_NE(table.find("stage 1 only"), std::string::npos);
  EXPECT_NE(table.find("two-step"), std::string::npos);
  EXPECT_NE(table.find("gcg"), std::string::npos);
}

TEST_F(SmallBenchmarkTest, QueryTotalsAreAdditive) {
  const auto run = run_benchmark(make_benchmark(*pop_), DetectorConfig{}, {13});
  const auto& r = run.runs[0];
  long long stage1 = 0, rest = 0;
  for (const auto* vs : {&r.test_verdicts, &r.malicious_verdicts}) {
    for (const auto& v : *vs) (v.decision == Decision::kRejectedStage1 ? stage1 : rest) += 1;
  }
  long long sum = 0;
  for (const auto* vs : {&r.test_verdicts, &r.malicious_verdicts}) {
    for (const auto& v : *vs) sum += v.queries_used;
  }
  EXPECT_EQ(sum, 10 * stage1 + 110 * rest);
}

TEST_F(SmallBenchmarkTest, SingleComboAblationEqualsBenchmark) {
  const auto bench = make_benchmark(*pop_);
  DetectorConfig cfg;
  const auto grid = ablation(AblationStrategy::kFixedN, {{5, 7}}, bench, cfg, {13, 21});
  ASSERT_EQ(grid.cells.size(), 1u);
  EXPECT_EQ(grid.cells[0].q, 40);
  cfg.n_samples = 5;
  cfg.n_directions = 7;
  EXPECT_EQ(grid.cells[0].tpr_avg.mean, run_benchmark(bench, cfg, {13, 21}).tpr_avg->mean);
  EXPECT_EQ(ablation_json(grid)["cells"][0]["q"], 40);
}

TEST_F(SmallBenchmarkTest, BudgetSweepQueries) {
  const auto points = budget_sweep(make_benchmark(*pop_), DetectorConfig{}, 10, 10, {13});
  ASSERT_EQ(points.size(), 10u);
  EXPECT_EQ(points[0].q, 20);
  EXPECT_EQ(points[9].q, 110);
  EXPECT_NE(render_budget_table(points).find("110"), std::string::npos);
}

TEST(DefaultCombosTest, FixedBudgetGrids) {
  EXPECT_EQ(default_combos(AblationStrategy::kFixedN), (std::vector<std::pair<int, int>>{{5, 1}, {5, 3}, {5, 5}, {5, 7}}));
  EXPECT_EQ(default_combos(AblationStrategy::kFixedP), (std::vector<std::pair<int, int>>{{5, 1}, {10, 1}, {15, 1}, {20, 1}}));
}

}  // namespace
}  // namespace refguard
