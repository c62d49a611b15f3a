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

#include <gtest/gtest.h>

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <sstream>
#include <string>
#include <vector>

#include <unistd.h>

#include "refguard/cli.hpp"

namespace refguard {
namespace {

namespace fs = std::filesystem;

struct CliResult {
  int code = 0;
  std::string out;
  std::string err;
};

CliResult run(std::vector<std::string> args) {
  args.insert(args.begin(), "refguard");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  const int code = run_cli(static_cast<int>(argv.size()), argv.data(), out, err);
  return {code, out.str(), err.str()};
}

class CliTest : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = fs::temp_directory_path() /
           ("refguard-cli-" + std::to_string(::getpid()) + "-" +
            ::testing::UnitTest::GetInstance()->current_test_info()->name());
    fs::remove_all(dir_);
    fs::create_directories(dir_);
  }
  void TearDown() override { fs::remove_all(dir_); }

  std::string path(const std::string& name) const { return (dir_ / name).string(); }

  /// Small population written through gen-populations.
  void make_population(std::uint64_t seed = 42) {
    PopulationSpec spec = PopulationSpec::default_spec();
    spec.benign.count = 60;
    for (auto& a : spec.attacks) a.count = 8;
    save_json_file(path("spec.json"), Json(spec));
    const auto r = run({"--seed", std::to_string(seed), "gen-populations", path("spec.json"), path("pop")});
    ASSERT_EQ(r.code, 0) << r.err;
  }

  /// Ten queries on a logistic slope: p around 0.2, so stage 1 passes them
  /// and their sampled gradient norms differ.
  SyntheticField slope_field(std::vector<Query>& queries) const {
    FieldParams params;
    params.dim = 4;
    params.w = {1.0, 0.0, 0.0, 0.0};
    params.b = 0.0;
    params.sharpness = 4.0;
    SyntheticField field(params);
    for (int i = 0; i < 10; ++i) {
      Query q{"b" + std::to_string(i), "benign prompt " + std::to_string(i), QueryLabel::benign(), {}};
      const double x = -0.45 + 0.02 * i;
      const auto e = EmbeddingMatrix::from_rows({{x, 0.1 * i, 0.0, 0.0}, {x, -0.1 * i, 0.0, 0.0}});
      field.add_query(q, e);
      queries.push_back(q);
    }
    return field;
  }

  fs::path dir_;
};

TEST_F(CliTest, CalibrateTenBenignAtSigmaPointTwoPicksThirdLargestNorm) {
  std::vector<Query> queries;
  const SyntheticField field = slope_field(queries);
  save_json_file(path("field.json"), field_to_json(field));
  write_text_file(path("benign.jsonl"), to_jsonl(queries));

  const auto r = run({"calibrate", path("field.json"), path("benign.jsonl"), "--sigma", "0.2", "-N", "20", "--out",
                      path("cal.json")});
  ASSERT_EQ(r.code, 0) << r.err;
  const auto cal = load_json_file(path("cal.json")).get<CalibrationResult>();

  // Enumeration: survivors of stage 1, norms sorted descending, k from the budget.
  DetectorConfig cfg;
  cfg.n_samples = 20;
  cfg.sigma = 0.2;
  int stage1 = 0;
  std::vector<double> norms;
  for (const auto& q : queries) {
    const RefusalLoss f = refusal_loss(field.sample_refusals(make_sample_request(q, {}, cfg, streams::kBase)));
    if (f.value() < 0.5) {
      ++stage1;
      continue;
    }
    norms.push_back(estimate_gradient(field, q, cfg).norm);
  }
  ASSERT_EQ(stage1, 0);
  std::sort(norms.begin(), norms.end(), std::greater<>());
  ASSERT_TRUE(std::adjacent_find(norms.begin(), norms.end()) == norms.end()) << "norms must be distinct";
  const int k = static_cast<int>(std::floor(10 * 0.2 - stage1 + 1e-9)) + 1;
  ASSERT_EQ(k, 3);

  EXPECT_EQ(cal.k, 3);
  EXPECT_EQ(cal.threshold, norms[2]);
  EXPECT_EQ(cal.val_size, 10);
  EXPECT_EQ(cal.stage1_rejects, 0);
  EXPECT_NE(r.out.find("k 3"), std::string::npos);
}

TEST_F(CliTest, DetectWithoutCalIsUsageError) {
  std::vector<Query> queries;
  save_json_file(path("field.json"), field_to_json(slope_field(queries)));
  write_text_file(path("q.jsonl"), to_jsonl(queries));
  const auto r = run({"detect", path("field.json"), path("q.jsonl")});
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.err.find("--cal"), std::string::npos);
  EXPECT_NE(r.err.find("usage"), std::string::npos);
}

TEST_F(CliTest, DetectMatchesLibrary) {
  make_population();
  const auto pop = path("pop");
  ASSERT_EQ(run({"calibrate", pop + "/field.json", pop + "/benign.jsonl", "--out", path("cal.json")}).code, 0);
  const auto r = run({"detect", pop + "/field.json", pop + "/queries.jsonl", "--cal", path("cal.json"), "--out",
                      path("verdicts.jsonl")});
  ASSERT_EQ(r.code, 0) << r.err;

  const auto backend = load_backend(pop + "/field.json");
  const auto queries = load_queries_jsonl(pop + "/queries.jsonl");
  const auto cal = load_json_file(path("cal.json")).get<CalibrationResult>();
  DetectorConfig cfg;
  cfg.threshold = cal.threshold;
  std::vector<Verdict> expected;
  for (const auto& q : queries) expected.push_back(detect(*backend, q, cfg));
  EXPECT_EQ(read_text_file(path("verdicts.jsonl")), to_jsonl(expected));
  EXPECT_NE(r.out.find("queries_used"), std::string::npos);
}

TEST_F(CliTest, DetectRejectsMismatchedConfig) {
  make_population();
  const auto pop = path("pop");
  ASSERT_EQ(run({"calibrate", pop + "/field.json", pop + "/benign.jsonl", "--out", path("cal.json")}).code, 0);
  DetectorConfig other;
  other.n_directions = 5;
  save_json_file(path("det.json"), Json(other));
  const auto r = run({"--json", "detect", pop + "/field.json", pop + "/queries.jsonl", "--cal", path("cal.json"),
                      "--config", path("det.json")});
  EXPECT_EQ(r.code, 2);
  const Json e = Json::parse(r.err);
  EXPECT_EQ(e.at("error").at("code"), "configuration");
}

TEST_F(CliTest, LandscapeDefaultsGive1682LineCsvAndAreByteStable) {
  make_population();
  const auto pop = path("pop");
  write_text_file(path("few.jsonl"), to_jsonl(std::vector<Query>(load_queries_jsonl(pop + "/malicious.jsonl"))));
  auto land = [&](const std::string& out, std::vector<std::string> extra = {}) {
    std::vector<std::string> args = {"landscape", pop + "/field.json", path("few.jsonl"), "--range", "-0.02:0.02",
                                     "--step", "0.001", "--out", out};
    args.insert(args.end(), extra.begin(), extra.end());
    return run(args);
  };
  ASSERT_EQ(land(path("a.csv")).code, 0);
  ASSERT_EQ(land(path("b.csv")).code, 0);
  ASSERT_EQ(land(path("c.csv"), {"--seed", "7"}).code, 0);
  const std::string a = read_text_file(path("a.csv"));
  EXPECT_EQ(std::count(a.begin(), a.end(), '\n'), 1682);
  EXPECT_EQ(a.rfind("alpha,beta,value\n", 0), 0u);
  EXPECT_EQ(a, read_text_file(path("b.csv")));
  EXPECT_NE(a, read_text_file(path("c.csv")));
}

TEST_F(CliTest, LandscapeBadRangeIsUsageError) {
  make_population();
  const auto pop = path("pop");
  const auto r = run({"landscape", pop + "/field.json", pop + "/malicious.jsonl", "--range", "0.02", "--out",
                      path("g.csv")});
  EXPECT_EQ(r.code, 1);
  EXPECT_FALSE(fs::exists(path("g.csv")));
}

TEST(CliRangeTest, ParsesNegativeBounds) {
  EXPECT_EQ(cli::parse_range("-0.02:0.02"), std::make_pair(-0.02, 0.02));
  EXPECT_EQ(cli::parse_range("-1:-0.5"), std::make_pair(-1.0, -0.5));
  EXPECT_THROW(cli::parse_range("1:x"), CLI::ValidationError);
  EXPECT_THROW(cli::parse_range(":1"), CLI::ValidationError);
  EXPECT_EQ(cli::parse_seed_list("13,21,42"), (std::vector<std::uint64_t>{13, 21, 42}));
  EXPECT_THROW(cli::parse_seed_list("13,,42"), CLI::ValidationError);
}

TEST(CliUsageTest, ExitCodes) {
  EXPECT_EQ(run({}).code, 1);
  EXPECT_EQ(run({"frobnicate"}).code, 1);
  EXPECT_EQ(run({"attack", "nuke", "/dev/null"}).code, 1);
  const auto help = run({"--help"});
  EXPECT_EQ(help.code, 0);
  EXPECT_NE(help.out.find("calibrate"), std::string::npos);
  const auto json = run({"--json", "frobnicate"});
  EXPECT_EQ(json.code, 1);
  EXPECT_EQ(Json::parse(json.err).at("error").at("code"), "usage");
}

TEST_F(CliTest, RuntimeErrorIsExitTwoWithJsonOnStderr) {
  write_text_file(path("broken.json"), "{not json");
  write_text_file(path("q.jsonl"), "");
  const auto r = run({"--json", "calibrate", path("broken.json"), path("q.jsonl"), "--out", path("cal.json")});
  EXPECT_EQ(r.code, 2);
  const Json e = Json::parse(r.err);
  EXPECT_EQ(e.at("error").at("code"), "invalid_input");
  EXPECT_NE(e.at("error").at("message").get<std::string>().find("broken.json"), std::string::npos);

  const auto plain = run({"calibrate", path("broken.json"), path("q.jsonl"), "--out", path("cal.json")});
  EXPECT_EQ(plain.code, 2);
  EXPECT_EQ(plain.err.rfind("error: ", 0), 0u);
}

TEST_F(CliTest, GenPopulationsIsSeedDeterministic) {
  make_population(42);
  fs::rename(path("pop"), path("first"));
  make_population(42);
  for (const char* f : {"field.json", "benign.jsonl", "malicious.jsonl", "queries.jsonl", "benchmark.json"}) {
    EXPECT_EQ(read_text_file(path("first/") + f), read_text_file(path("pop/") + f)) << f;
  }
  fs::rename(path("pop"), path("second"));
  make_population(43);
  EXPECT_NE(read_text_file(path("first/field.json")), read_text_file(path("pop/field.json")));
  EXPECT_EQ(load_queries_jsonl(path("pop/benign.jsonl")).size(), 60u);
  EXPECT_EQ(load_queries_jsonl(path("pop/malicious.jsonl")).size(), 24u);
}

TEST_F(CliTest, CalibrateIsByteStableWithPinnedTimestamp) {
  make_population();
  const auto pop = path("pop");
  ::setenv("SOURCE_DATE_EPOCH", "1767225600", 1);
  ASSERT_EQ(run({"calibrate", pop + "/field.json", pop + "/benign.jsonl", "--out", path("a.json")}).code, 0);
  ASSERT_EQ(run({"calibrate", pop + "/field.json", pop + "/benign.jsonl", "--out", path("b.json")}).code, 0);
  ::unsetenv("SOURCE_DATE_EPOCH");
  EXPECT_EQ(read_text_file(path("a.json")), read_text_file(path("b.json")));
  EXPECT_EQ(load_json_file(path("a.json")).at("created_at"), "2026-01-01T00:00:00Z");
}

TEST_F(CliTest, GcgSimAttackMatchesLibrary) {
  make_population();
  const auto pop = path("pop");
  const Json config{{"backend", {{"kind", "file"}, {"path", "pop/field.json"}}},
                    {"query", "m-gcg-0000"},
                    {"detector", {{"threshold", 30.0}}},
                    {"seed", 5},
                    {"gcg", {{"iterations", 10}}}};
  save_json_file(path("attack.json"), config);
  const auto r = run({"attack", "gcg-sim", path("attack.json")});
  ASSERT_EQ(r.code, 0) << r.err;

  const auto field = field_from_json(load_json_file(pop + "/field.json"));
  const Query q{"m-gcg-0000", field.entry("m-gcg-0000").text, std::nullopt, {}};
  GcgOptions opts;
  opts.iterations = 10;
  opts.seed = 5;
  DetectorConfig det;
  det.threshold = 30.0;
  const auto report = adaptive_gcg_sim(field, q, default_candidate_set(field, q, 5), opts, det);
  EXPECT_EQ(Json::parse(r.out), attack_report_json(report));
}

TEST_F(CliTest, PairAndTapAttacksRun) {
  make_population();
  for (const std::string kind : {"pair", "tap"}) {
    const Json config{{"backend", {{"kind", "file"}, {"path", "pop/field.json"}}},
                      {"query", "m-pair-0000"},
                      {"detector", {{"threshold", 30.0}}},
                      {kind, kind == "pair" ? Json{{"iterations", 5}} : Json{{"branching", 2}, {"width", 2}, {"depth", 2}}}};
    save_json_file(path(kind + ".json"), config);
    const auto r = run({"attack", kind, path(kind + ".json"), "--out", path(kind + "-report.json")});
    ASSERT_EQ(r.code, 0) << r.err;
    const Json report = load_json_file(path(kind + "-report.json"));
    EXPECT_EQ(report.at("attack"), kind);
    EXPECT_FALSE(report.at("aborted").get<bool>());
  }
}

TEST_F(CliTest, AttackWithoutThresholdFails) {
  make_population();
  const Json config{{"backend", {{"kind", "file"}, {"path", "pop/field.json"}}}, {"query", "m-gcg-0000"}};
  save_json_file(path("attack.json"), config);
  const auto r = run({"--json", "attack", "pair", path("attack.json")});
  EXPECT_EQ(r.code, 2);
  EXPECT_EQ(Json::parse(r.err).at("error").at("code"), "configuration");
}

TEST_F(CliTest, ProbeErrorGridHasNineCells) {
  save_json_file(path("probe.json"), field_to_json(default_probe_field()));
  const auto r = run({"probe-error", path("probe.json"), "--grid", "--seed-count", "4", "--out", path("report.json")});
  ASSERT_EQ(r.code, 0) << r.err;
  const Json report = load_json_file(path("report.json"));
  EXPECT_EQ(report.at("cells").size(), 9u);
  EXPECT_EQ(report.at("mode"), "normalized");
  EXPECT_EQ(report.at("seeds"), 4);
}

TEST_F(CliTest, BenchPrintsTableAndWritesReport) {
  make_population();
  const auto r = run({"bench", path("pop/benchmark.json"), "--seeds", "13,21", "--out", path("report.json")});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_NE(r.out.find("two-step"), std::string::npos);
  EXPECT_NE(r.out.find("stage 1 only"), std::string::npos);
  const Json report = load_json_file(path("report.json"));
  EXPECT_EQ(report.at("eval").at("seeds"), (std::vector<std::uint64_t>{13, 21}));

  const auto again = run({"bench", path("pop/benchmark.json"), "--seeds", "13,21"});
  EXPECT_EQ(again.out, r.out);
}

}  // namespace
}  // namespace refguard
