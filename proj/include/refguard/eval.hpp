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

#pragma once

// Refusal rates through the three filters (stage 1, stage 2, keyword check on
// the passed response), the FPR/TPR benchmark over a seed set, and the
// (N, P) ablation and query-budget sweeps built on it.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "refguard/detector.hpp"
#include "refguard/keywords.hpp"
#include "refguard/population.hpp"

namespace refguard {

struct RefusalRateReport {
  double rr = 0.0;
  double asr = 0.0;
  int total = 0;      // |B|
  int stage1 = 0;     // |B1|: f >= 0.5
  int stage2 = 0;     // |B2|: also |g| <= t
  int complied = 0;   // |B3|: also JB(response) = 0
};

inline void to_json(Json& j, const RefusalRateReport& r) {
  j = Json{{"rr", r.rr}, {"asr", r.asr}, {"B", r.total}, {"B1", r.stage1}, {"B2", r.stage2}, {"B3", r.complied}};
}

/// Staged counts from already-computed verdicts.
inline RefusalRateReport refusal_rate_from_verdicts(const std::vector<Verdict>& verdicts,
                                                    const KeywordSet& keywords = KeywordSet::defaults()) {
  require(!verdicts.empty(), ErrorCode::kInvalidInput, "refusal rate needs a non-empty query set");
  RefusalRateReport r;
  r.total = static_cast<int>(verdicts.size());
  for (const auto& v : verdicts) {
    if (v.decision == Decision::kRejectedStage1) continue;
    ++r.stage1;
    if (v.decision == Decision::kRejectedStage2) continue;
    ++r.stage2;
    require(v.response.has_value(), ErrorCode::kInternal, "passed verdict without a response");
    if (jb_indicator(*v.response, keywords) == 0) ++r.complied;
  }
  r.asr = static_cast<double>(r.complied) / static_cast<double>(r.total);
  r.rr = 1.0 - r.asr;
  return r;
}

inline std::vector<Verdict> detect_all(const ModelBackend& backend, const std::vector<Query>& queries,
                                       const DetectorConfig& config, std::size_t max_parallel) {
  auto outcomes = detect_batch(backend, queries, config, max_parallel);
  std::vector<Verdict> out;
  out.reserve(outcomes.size());
  for (auto& o : outcomes) {
    if (o.error) throw *o.error;
    out.push_back(std::move(*o.verdict));
  }
  return out;
}

inline RefusalRateReport refusal_rate(const ModelBackend& backend, const std::vector<Query>& queries,
                                      const DetectorConfig& config, std::size_t max_parallel = 64,
                                      const KeywordSet& keywords = KeywordSet::defaults()) {
  require(!queries.empty(), ErrorCode::kInvalidInput, "refusal rate needs a non-empty query set");
  return refusal_rate_from_verdicts(detect_all(backend, queries, config, max_parallel), keywords);
}

struct MeanStderr {
  double mean = 0.0;
  double stderr_ = 0.0;
};

/// Mean and sample standard deviation over sqrt(n).
inline MeanStderr mean_stderr(const std::vector<double>& xs) {
  MeanStderr m;
  if (xs.empty()) return m;
  for (double x : xs) m.mean += x;
  m.mean /= static_cast<double>(xs.size());
  if (xs.size() > 1) {
    double ss = 0.0;
    for (double x : xs) ss += (x - m.mean) * (x - m.mean);
    m.stderr_ = std::sqrt(ss / static_cast<double>(xs.size() - 1)) / std::sqrt(static_cast<double>(xs.size()));
  }
  return m;
}

inline void to_json(Json& j, const MeanStderr& m) { j = Json{{"mean", m.mean}, {"stderr", m.stderr_}}; }

/// A labeled benchmark: a backend plus benign and malicious query sets.
struct Benchmark {
  std::string id = "synthetic";
  const ModelBackend* backend = nullptr;
  std::vector<Query> benign;
  std::vector<Query> malicious;
  double val_fraction = 0.8;
  std::size_t max_parallel = 256;
};

inline Benchmark make_benchmark(const Population& pop, std::string id = "synthetic") {
  Benchmark b;
  b.id = std::move(id);
  b.backend = &pop.field;
  b.benign = pop.benign;
  b.malicious = pop.malicious;
  return b;
}

/// Sorts a labeled query list into a benchmark; unlabeled queries are rejected.
inline Benchmark benchmark_from_queries(const ModelBackend& backend, const std::vector<Query>& queries,
                                        std::string id = "dataset") {
  Benchmark b;
  b.id = std::move(id);
  b.backend = &backend;
  for (const auto& q : queries) {
    if (!q.label) fail(ErrorCode::kInvalidInput, "query " + q.id + " has no label");
    (q.label->is_benign() ? b.benign : b.malicious).push_back(q);
  }
  return b;
}

struct SeedRun {
  std::uint64_t seed = 0;
  CalibrationResult calibration;
  double fpr_val = 0.0;
  double fpr_test = 0.0;
  double fpr_test_stage1_only = 0.0;
  std::map<std::string, double> tpr;              // per attack
  std::map<std::string, double> tpr_stage1_only;  // per attack
  std::optional<double> tpr_avg;
  std::optional<double> tpr_avg_stage1_only;
  int val_size = 0;
  int test_size = 0;
  long long queries_used = 0;
  std::vector<Verdict> test_verdicts;
  std::vector<Verdict> malicious_verdicts;
};

struct EvalRun {
  std::string dataset_id;
  DetectorConfig config;
  std::vector<std::uint64_t> seeds;
  std::vector<SeedRun> runs;
  MeanStderr fpr_val;
  MeanStderr fpr_test;
  MeanStderr fpr_test_stage1_only;
  std::map<std::string, MeanStderr> tpr;
  std::map<std::string, MeanStderr> tpr_stage1_only;
  std::optional<MeanStderr> tpr_avg;
  std::optional<MeanStderr> tpr_avg_stage1_only;
  long long queries_used = 0;
  double wall_seconds = 0.0;

  std::vector<double> per_seed_tpr_avg() const {
    std::vector<double> out;
    for (const auto& r : runs) {
      if (r.tpr_avg) out.push_back(*r.tpr_avg);
    }
    return out;
  }
};

/// 80/20 (by default) seeded split of the benign set into validation and test.
inline std::pair<std::vector<Query>, std::vector<Query>> split_benign(const std::vector<Query>& benign,
                                                                    double val_fraction, std::uint64_t seed) {
  require(val_fraction > 0.0 && val_fraction < 1.0, ErrorCode::kInvalidInput, "val_fraction must be in (0, 1)");
  std::vector<Query> shuffled = benign;
  RngCursor rng(mix_seed(seed, 0x73706c6974ull), streams::kShuffle);
  rng.shuffle(shuffled);
  const auto n_val = static_cast<std::size_t>(std::llround(val_fraction * static_cast<double>(benign.size())));
  require(n_val >= 1 && n_val < shuffled.size(), ErrorCode::kInvalidInput, "benign set too small to split");
  std::vector<Query> val(shuffled.begin(), shuffled.begin() + static_cast<std::ptrdiff_t>(n_val));
  std::vector<Query> test(shuffled.begin() + static_cast<std::ptrdiff_t>(n_val), shuffled.end());
  return {std::move(val), std::move(test)};
}

namespace detail {

inline long long verdict_queries(const std::vector<Verdict>& vs) {
  long long total = 0;
  for (const auto& v : vs) total += v.queries_used;
  return total;
}

inline std::map<std::string, std::vector<Query>> by_attack(const std::vector<Query>& malicious) {
  std::map<std::string, std::vector<Query>> out;
  for (const auto& q : malicious) {
    if (!q.label || !q.label->is_malicious()) fail(ErrorCode::kInvalidInput, "query " + q.id + " is not labeled malicious");
    out[q.label->attack.empty() ? "malicious" : q.label->attack].push_back(q);
  }
  return out;
}

inline std::map<std::string, double> rates_by_attack(const std::map<std::string, std::vector<Query>>& groups,
                                                     const std::vector<Verdict>& verdicts) {
  std::map<std::string, Verdict> index;
  for (const auto& v : verdicts) index[v.query_id] = v;
  std::map<std::string, double> out;
  for (const auto& [attack, qs] : groups) {
    std::vector<Verdict> vs;
    for (const auto& q : qs) vs.push_back(index.at(q.id));
    out[attack] = refusal_rate_from_verdicts(vs).rr;
  }
  return out;
}

inline double average(const std::map<std::string, double>& m) {
  double s = 0.0;
  for (const auto& [k, v] : m) s += v;
  return s / static_cast<double>(m.size());
}

}  // namespace detail

/// One seed: split, calibrate on validation, evaluate test and malicious sets
/// with the two-step detector and with stage 2 disabled.
inline SeedRun run_seed(const Benchmark& bench, const DetectorConfig& base_config, std::uint64_t seed) {
  require(bench.backend != nullptr, ErrorCode::kInvalidInput, "benchmark has no backend");
  require(!bench.benign.empty(), ErrorCode::kInvalidInput, "benchmark has no benign queries");
  for (const auto& q : bench.benign) {
    if (!q.label || !q.label->is_benign()) fail(ErrorCode::kInvalidInput, "query " + q.id + " is not labeled benign");
  }
  const auto groups = detail::by_attack(bench.malicious);
  DetectorConfig config = base_config;
  config.seed = seed;
  config.threshold.reset();
  auto [val, test] = split_benign(bench.benign, bench.val_fraction, seed);

  SeedRun run;
  run.seed = seed;
  run.val_size = static_cast<int>(val.size());
  run.test_size = static_cast<int>(test.size());
  run.calibration = calibrate(*bench.backend, val, config, bench.max_parallel);
  DetectorConfig two_step = config;
  two_step.threshold = run.calibration.threshold;
  DetectorConfig stage1_only = config;
  stage1_only.threshold = kThresholdDisabled;

  const auto val_verdicts = detect_all(*bench.backend, val, two_step, bench.max_parallel);
  run.fpr_val = refusal_rate_from_verdicts(val_verdicts).rr;
  run.test_verdicts = detect_all(*bench.backend, test, two_step, bench.max_parallel);
  run.fpr_test = refusal_rate_from_verdicts(run.test_verdicts).rr;
  run.fpr_test_stage1_only =
      refusal_rate_from_verdicts(detect_all(*bench.backend, test, stage1_only, bench.max_parallel)).rr;
  run.queries_used = detail::verdict_queries(val_verdicts) + detail::verdict_queries(run.test_verdicts);
  if (!bench.malicious.empty()) {
    run.malicious_verdicts = detect_all(*bench.backend, bench.malicious, two_step, bench.max_parallel);
    const auto s1 = detect_all(*bench.backend, bench.malicious, stage1_only, bench.max_parallel);
    run.tpr = detail::rates_by_attack(groups, run.malicious_verdicts);
    run.tpr_stage1_only = detail::rates_by_attack(groups, s1);
    run.tpr_avg = detail::average(run.tpr);
    run.tpr_avg_stage1_only = detail::average(run.tpr_stage1_only);
    run.queries_used += detail::verdict_queries(run.malicious_verdicts);
  }
  return run;
}

inline EvalRun run_benchmark(const Benchmark& bench, const DetectorConfig& config,
                             const std::vector<std::uint64_t>& seeds = default_seed_set()) {
  config.validate();
  require(!seeds.empty(), ErrorCode::kInvalidInput, "seed set is empty");
  const auto start = std::chrono::steady_clock::now();
  EvalRun out;
  out.dataset_id = bench.id;
  out.config = config;
  out.config.threshold.reset();
  out.seeds = seeds;
  for (auto seed : seeds) out.runs.push_back(run_seed(bench, config, seed));

  auto collect = [&](auto getter) {
    std::vector<double> xs;
    for (const auto& r : out.runs) xs.push_back(getter(r));
    return mean_stderr(xs);
  };
  out.fpr_val = collect([](const SeedRun& r) { return r.fpr_val; });
  out.fpr_test = collect([](const SeedRun& r) { return r.fpr_test; });
  out.fpr_test_stage1_only = collect([](const SeedRun& r) { return r.fpr_test_stage1_only; });
  if (!bench.malicious.empty()) {
    for (const auto& [attack, _] : out.runs.front().tpr) {
      out.tpr[attack] = collect([&, a = attack](const SeedRun& r) { return r.tpr.at(a); });
      out.tpr_stage1_only[attack] = collect([&, a = attack](const SeedRun& r) { return r.tpr_stage1_only.at(a); });
    }
    out.tpr_avg = collect([](const SeedRun& r) { return *r.tpr_avg; });
    out.tpr_avg_stage1_only = collect([](const SeedRun& r) { return *r.tpr_avg_stage1_only; });
  }
  for (const auto& r : out.runs) out.queries_used += r.queries_used;
  out.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return out;
}

inline Json eval_run_json(const EvalRun& run, bool include_verdicts = false) {
  Json j{{"dataset_id", run.dataset_id},
         {"config", run.config},
         {"seeds", run.seeds},
         {"fpr_val", run.fpr_val},
         {"fpr_test", run.fpr_test},
         {"fpr_test_stage1_only", run.fpr_test_stage1_only},
         {"queries_used", run.queries_used},
         {"wall_seconds", run.wall_seconds}};
  if (run.tpr_avg) {
    j["tpr"] = run.tpr;
    j["tpr_stage1_only"] = run.tpr_stage1_only;
    j["tpr_avg"] = *run.tpr_avg;
    j["tpr_avg_stage1_only"] = *run.tpr_avg_stage1_only;
  }
  Json runs = Json::array();
  for (const auto& r : run.runs) {
    Json rj{{"seed", r.seed},
            {"calibration", r.calibration},
            {"fpr_val", r.fpr_val},
            {"fpr_test", r.fpr_test},
            {"fpr_test_stage1_only", r.fpr_test_stage1_only},
            {"val_size", r.val_size},
            {"test_size", r.test_size},
            {"queries_used", r.queries_used}};
    rj["calibration"].erase("per_query_norms");
    if (r.tpr_avg) {
      rj["tpr"] = r.tpr;
      rj["tpr_stage1_only"] = r.tpr_stage1_only;
      rj["tpr_avg"] = *r.tpr_avg;
      rj["tpr_avg_stage1_only"] = *r.tpr_avg_stage1_only;
    }
    if (include_verdicts) {
      rj["test_verdicts"] = r.test_verdicts;
      rj["malicious_verdicts"] = r.malicious_verdicts;
    }
    runs.push_back(std::move(rj));
  }
  j["runs"] = std::move(runs);
  return j;
}

inline std::string format_mean_stderr(const MeanStderr& m) {
  char buf[48];
  std::snprintf(buf, sizeof(buf), "%.3f ± %.3f", m.mean, m.stderr_);
  return buf;
}

/// Simple aligned text table; the first column is left-aligned.
inline std::string render_table(const std::vector<std::string>& header, const std::vector<std::vector<std::string>>& rows) {
  std::vector<std::size_t> width(header.size(), 0);
  auto display_len = [](const std::string& s) {
    std::size_t n = 0;
    for (unsigned char c : s) n += (c & 0xC0) != 0x80;  // count code points
    return n;
  };
  for (std::size_t c = 0; c < header.size(); ++c) width[c] = display_len(header[c]);
  for (const auto& row : rows) {
    for (std::size_t c = 0; c < row.size() && c < width.size(); ++c) width[c] = std::max(width[c], display_len(row[c]));
  }
  auto line = [&](const std::vector<std::string>& cells) {
    std::string out;
    for (std::size_t c = 0; c < header.size(); ++c) {
      const std::string cell = c < cells.size() ? cells[c] : "";
      const std::string pad(width[c] - display_len(cell), ' ');
      if (c) out += "  ";
      out += c == 0 ? cell + pad : pad + cell;
    }
    while (!out.empty() && out.back() == ' ') out.pop_back();
    return out + "\n";
  };
  std::string out = line(header);
  std::size_t total = 0;
  for (auto w : width) total += w;
  out += std::string(total + 2 * (width.size() - 1), '-') + "\n";
  for (const auto& row : rows) out += line(row);
  return out;
}

/// Rows = methods, columns = FPR, per-attack TPR, average TPR.
inline std::string render_eval_table(const EvalRun& run) {
  std::vector<std::string> header = {"method", "FPR"};
  for (const auto& [attack, _] : run.tpr) header.push_back(attack);
  if (run.tpr_avg) header.push_back("average TPR");
  std::vector<std::string> s1 = {"stage 1 only", format_mean_stderr(run.fpr_test_stage1_only)};
  std::vector<std::string> two = {"two-step", format_mean_stderr(run.fpr_test)};
  for (const auto& [attack, m] : run.tpr_stage1_only) s1.push_back(format_mean_stderr(m));
  for (const auto& [attack, m] : run.tpr) two.push_back(format_mean_stderr(m));
  if (run.tpr_avg) {
    s1.push_back(format_mean_stderr(*run.tpr_avg_stage1_only));
    two.push_back(format_mean_stderr(*run.tpr_avg));
  }
  return render_table(header, {s1, two});
}

// ---------------------------------------------------------------- ablation

enum class AblationStrategy { kFixedN, kFixedP };

inline const char* strategy_name(AblationStrategy s) { return s == AblationStrategy::kFixedN ? "fixed-N" : "fixed-P"; }

inline std::vector<std::pair<int, int>> default_combos(AblationStrategy s) {
  if (s == AblationStrategy::kFixedN) return {{5, 1}, {5, 3}, {5, 5}, {5, 7}};
  return {{5, 1}, {10, 1}, {15, 1}, {20, 1}};
}

struct AblationCell {
  int n_samples = 0;
  int n_directions = 0;
  long long q = 0;
  MeanStderr tpr_avg;
  MeanStderr fpr_test;
  std::vector<double> per_seed_tpr;
};

struct AblationGrid {
  AblationStrategy strategy = AblationStrategy::kFixedN;
  double sigma = 0.0;
  std::vector<AblationCell> cells;
};

inline AblationGrid ablation(AblationStrategy strategy, const std::vector<std::pair<int, int>>& combos,
                             const Benchmark& bench, const DetectorConfig& config,
                             const std::vector<std::uint64_t>& seeds = default_seed_set()) {
  require(!combos.empty(), ErrorCode::kInvalidInput, "ablation needs at least one (N, P) combination");
  require(!bench.malicious.empty(), ErrorCode::kInvalidInput, "ablation needs malicious queries");
  AblationGrid grid;
  grid.strategy = strategy;
  grid.sigma = config.sigma;
  for (const auto& [n, p] : combos) {
    DetectorConfig c = config;
    c.n_samples = n;
    c.n_directions = p;
    const auto run = run_benchmark(bench, c, seeds);
    AblationCell cell;
    cell.n_samples = n;
    cell.n_directions = p;
    cell.q = c.full_query_count();
    cell.tpr_avg = *run.tpr_avg;
    cell.fpr_test = run.fpr_test;
    cell.per_seed_tpr = run.per_seed_tpr_avg();
    grid.cells.push_back(std::move(cell));
  }
  return grid;
}

/// TPR change from the first to the last cell.
inline double tpr_gain(const AblationGrid& grid) {
  return grid.cells.back().tpr_avg.mean - grid.cells.front().tpr_avg.mean;
}

inline Json ablation_json(const AblationGrid& g) {
  Json cells = Json::array();
  for (const auto& c : g.cells) {
    cells.push_back(Json{{"N", c.n_samples},
                         {"P", c.n_directions},
                         {"q", c.q},
                         {"tpr_avg", c.tpr_avg},
                         {"fpr_test", c.fpr_test},
                         {"per_seed_tpr", c.per_seed_tpr}});
  }
  return Json{{"strategy", strategy_name(g.strategy)}, {"sigma", g.sigma}, {"cells", cells}};
}

inline std::string render_ablation_table(const AblationGrid& g) {
  std::vector<std::vector<std::string>> rows;
  for (const auto& c : g.cells) {
    rows.push_back({"(" + std::to_string(c.n_samples) + ", " + std::to_string(c.n_directions) + ")",
                    std::to_string(c.q), format_mean_stderr(c.fpr_test), format_mean_stderr(c.tpr_avg)});
  }
  return std::string(strategy_name(g.strategy)) + "\n" + render_table({"(N, P)", "q", "FPR", "average TPR"}, rows);
}

// ------------------------------------------------------------ budget sweep

struct BudgetPoint {
  int n_directions = 0;
  long long q = 0;
  MeanStderr fpr_test;
  MeanStderr fpr_val;
  MeanStderr tpr_avg;
  std::vector<double> per_seed_tpr;
  double median_tpr() const {
    std::vector<double> v = per_seed_tpr;
    std::sort(v.begin(), v.end());
    const std::size_t n = v.size();
    if (n == 0) return 0.0;
    return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
  }
};

inline std::vector<BudgetPoint> budget_sweep(const Benchmark& bench, const DetectorConfig& config, int n_samples = 10,
                                             int p_max = 10,
                                             const std::vector<std::uint64_t>& seeds = default_seed_set()) {
  require(p_max >= 1, ErrorCode::kInvalidInput, "budget sweep needs P >= 1");
  std::vector<BudgetPoint> out;
  for (int p = 1; p <= p_max; ++p) {
    DetectorConfig c = config;
    c.n_samples = n_samples;
    c.n_directions = p;
    const auto run = run_benchmark(bench, c, seeds);
    BudgetPoint pt;
    pt.n_directions = p;
    pt.q = c.full_query_count();
    pt.fpr_test = run.fpr_test;
    pt.fpr_val = run.fpr_val;
    if (run.tpr_avg) pt.tpr_avg = *run.tpr_avg;
    pt.per_seed_tpr = run.per_seed_tpr_avg();
    out.push_back(std::move(pt));
  }
  return out;
}

inline Json budget_sweep_json(const std::vector<BudgetPoint>& points) {
  Json arr = Json::array();
  for (const auto& p : points) {
    arr.push_back(Json{{"P", p.n_directions},
                       {"q", p.q},
                       {"fpr_val", p.fpr_val},
                       {"fpr_test", p.fpr_test},
                       {"tpr_avg", p.tpr_avg},
                       {"median_tpr", p.median_tpr()}});
  }
  return arr;
}

inline std::string render_budget_table(const std::vector<BudgetPoint>& points) {
  std::vector<std::vector<std::string>> rows;
  for (const auto& p : points) {
    rows.push_back({std::to_string(p.n_directions), std::to_string(p.q), format_mean_stderr(p.fpr_val),
                    format_mean_stderr(p.fpr_test), format_mean_stderr(p.tpr_avg)});
  }
  return render_table({"P", "q", "FPR (val)", "FPR (test)", "average TPR"}, rows);
}

}  // namespace refguard
