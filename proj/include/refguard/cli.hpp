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

// Command-line front end. run_cli() is the whole program minus main(), so
// tests can drive it in-process with string streams.
//
// Exit codes: 0 success, 1 usage error, 2 runtime error. With --json, errors
// go to stderr as {"error": {"code": ..., "message": ...}}.

#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <iostream>
#include <map>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "refguard/attacks.hpp"
#include "refguard/detector.hpp"
#include "refguard/error_probe.hpp"
#include "refguard/eval.hpp"
#include "refguard/io.hpp"
#include "refguard/landscape.hpp"
#include "refguard/population.hpp"
#include "refguard/remote.hpp"
#include "refguard/service.hpp"

#ifdef REFGUARD_HAVE_PNG
#include <png.h>
#endif

namespace refguard {

namespace cli {

/// Detector flags shared by several subcommands. Unset flags leave the
/// config file (or the built-in default) alone.
struct DetectorFlags {
  std::string config_path;
  std::optional<int> n_samples;
  std::optional<int> n_directions;
  std::optional<double> mu;
  std::optional<double> sigma;
  bool normalize_by_p = false;

  void add_to(CLI::App& cmd, bool with_sigma = true) {
    cmd.add_option("--config", config_path, "detector config JSON")->check(CLI::ExistingFile);
    cmd.add_option("-N,--samples", n_samples, "responses sampled per query");
    cmd.add_option("-P,--directions", n_directions, "perturbation directions");
    cmd.add_option("--mu", mu, "smoothing radius");
    if (with_sigma) cmd.add_option("--sigma", sigma, "benign refusal budget");
    cmd.add_flag("--normalize-by-p", normalize_by_p, "divide the gradient estimate by P");
  }

  DetectorConfig resolve(std::optional<std::uint64_t> seed) const {
    DetectorConfig c;
    if (!config_path.empty()) c = load_json_file(config_path).get<DetectorConfig>();
    if (n_samples) c.n_samples = *n_samples;
    if (n_directions) c.n_directions = *n_directions;
    if (mu) c.mu = *mu;
    if (sigma) c.sigma = *sigma;
    if (normalize_by_p) c.normalize_by_p = true;
    if (seed) c.seed = *seed;
    c.validate();
    return c;
  }
};

/// `lo:hi` with either bound possibly negative.
inline std::pair<double, double> parse_range(const std::string& text) {
  const auto colon = text.find(':', 1);
  if (colon == std::string::npos) throw CLI::ValidationError("--range", "expected lo:hi, got '" + text + "'");
  try {
    std::size_t used_lo = 0, used_hi = 0;
    const std::string lo_text = text.substr(0, colon), hi_text = text.substr(colon + 1);
    const double lo = std::stod(lo_text, &used_lo);
    const double hi = std::stod(hi_text, &used_hi);
    if (used_lo != lo_text.size() || used_hi != hi_text.size()) throw std::invalid_argument("trailing text");
    return {lo, hi};
  } catch (const std::logic_error&) {
    throw CLI::ValidationError("--range", "expected lo:hi, got '" + text + "'");
  }
}

inline std::vector<std::uint64_t> parse_seed_list(const std::string& text) {
  std::vector<std::uint64_t> out;
  std::stringstream in(text);
  std::string item;
  while (std::getline(in, item, ',')) {
    try {
      std::size_t used = 0;
      out.push_back(std::stoull(item, &used));
      if (used != item.size()) throw std::invalid_argument("trailing text");
    } catch (const std::logic_error&) {
      throw CLI::ValidationError("--seeds", "bad seed '" + item + "'");
    }
  }
  if (out.empty()) throw CLI::ValidationError("--seeds", "empty seed list");
  return out;
}

/// Wall-clock UTC, or SOURCE_DATE_EPOCH when set so reruns are byte-identical.
inline std::string creation_timestamp() {
  if (const char* env = std::getenv("SOURCE_DATE_EPOCH")) {
    const std::time_t t = static_cast<std::time_t>(std::strtoll(env, nullptr, 10));
    std::tm tm{};
    gmtime_r(&t, &tm);
    char buf[32];
    std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
  }
  return detail::utc_timestamp();
}

inline std::filesystem::path dir_of(const std::string& path) { return std::filesystem::path(path).parent_path(); }

inline std::string relative_to(const std::filesystem::path& base, const std::string& p) {
  return std::filesystem::path(p).is_absolute() ? p : (base / p).string();
}

inline void emit_json(std::ostream& out, const std::optional<std::string>& path, const Json& j) {
  if (path) {
    save_json_file(*path, j);
  } else {
    out << j.dump(2) << "\n";
  }
}

inline const SyntheticField& require_field(const ModelBackend& backend, const std::string& what) {
  const auto* field = dynamic_cast<const SyntheticField*>(&backend);
  if (!field) fail(ErrorCode::kUnsupported, what + " needs a synthetic_field backend");
  return *field;
}

inline Query field_query(const SyntheticField& field, const std::string& id) {
  if (!field.has_query(id)) fail(ErrorCode::kNotFound, "field has no query '" + id + "'");
  return Query{id, field.entry(id).text, std::nullopt, {}};
}

#ifdef REFGUARD_HAVE_PNG
/// Heatmap of the grid, alpha down and beta across, blue (low) to red (high).
inline void write_grid_png(const LandscapeGrid& grid, const std::string& path, int scale = 8) {
  const std::size_t rows = grid.alpha_values.size(), cols = grid.beta_values.size();
  const auto width = static_cast<png_uint_32>(cols * scale), height = static_cast<png_uint_32>(rows * scale);
  const double lo = grid.min_value(), hi = grid.max_value();
  const double span = hi > lo ? hi - lo : 1.0;
  std::vector<png_byte> pixels(static_cast<std::size_t>(width) * height * 3);
  for (std::size_t y = 0; y < height; ++y) {
    for (std::size_t x = 0; x < width; ++x) {
      const double t = (grid.values[y / scale][x / scale] - lo) / span;
      png_byte* px = &pixels[(y * width + x) * 3];
      px[0] = static_cast<png_byte>(255.0 * t);
      px[1] = static_cast<png_byte>(255.0 * (1.0 - std::abs(2.0 * t - 1.0)) * 0.6);
      px[2] = static_cast<png_byte>(255.0 * (1.0 - t));
    }
  }
  png_image image{};
  image.version = PNG_IMAGE_VERSION;
  image.width = width;
  image.height = height;
  image.format = PNG_FORMAT_RGB;
  if (!png_image_write_to_file(&image, path.c_str(), 0, pixels.data(), 0, nullptr)) {
    fail(ErrorCode::kIo, "cannot write PNG '" + path + "': " + image.message);
  }
}
#endif

// ---------------------------------------------------------------- subcommands

struct GenPopulations {
  std::string spec_path;
  std::string out_dir;
};

inline int gen_populations(const GenPopulations& a, std::optional<std::uint64_t> seed, std::ostream& out) {
  const Json j = load_json_file(a.spec_path);
  PopulationSpec spec;
  try {
    spec = j.get<PopulationSpec>();
  } catch (const Json::exception& e) {
    fail(ErrorCode::kInvalidInput, "bad population spec '" + a.spec_path + "': " + e.what());
  }
  const std::uint64_t s = seed.value_or(j.value("seed", std::uint64_t{42}));
  const Population pop = generate_population(spec, s);
  std::filesystem::create_directories(a.out_dir);
  const std::filesystem::path dir(a.out_dir);
  save_json_file((dir / "field.json").string(), field_to_json(pop.field));
  write_text_file((dir / "benign.jsonl").string(), to_jsonl(pop.benign));
  write_text_file((dir / "malicious.jsonl").string(), to_jsonl(pop.malicious));
  write_text_file((dir / "queries.jsonl").string(), to_jsonl(pop.all()));
  save_json_file((dir / "benchmark.json").string(),
                 Json{{"id", "synthetic-" + std::to_string(s)},
                      {"backend", {{"kind", "file"}, {"path", "field.json"}}},
                      {"queries", "queries.jsonl"},
                      {"detector", DetectorConfig{}}});
  out << "wrote " << pop.benign.size() << " benign and " << pop.malicious.size() << " malicious queries to "
      << a.out_dir << " (seed " << s << ")\n";
  return 0;
}

struct Calibrate {
  std::string backend_path;
  std::string benign_path;
  std::string out_path;
  DetectorFlags detector;
};

inline int calibrate_cmd(const Calibrate& a, std::optional<std::uint64_t> seed, std::ostream& out,
                         std::ostream& err) {
  const auto backend = load_backend(a.backend_path);
  const auto benign = load_queries_jsonl(a.benign_path);
  const DetectorConfig config = a.detector.resolve(seed);
  CalibrationResult cal = calibrate(*backend, benign, config);
  cal.created_at = creation_timestamp();
  save_json_file(a.out_path, cal);
  for (const auto& w : cal.warnings) err << "warning: " << w << "\n";
  out << "threshold " << (cal.stage2_disabled() ? std::string("inf") : format_g9(cal.threshold)) << "  k " << cal.k
      << "  stage-1 rejects " << cal.stage1_rejects << "/" << cal.val_size << "\n";
  return 0;
}

struct Detect {
  std::string backend_path;
  std::string queries_path;
  std::string cal_path;
  std::optional<std::string> out_path;
  std::string config_path;
};

inline int detect_cmd(const Detect& a, std::optional<std::uint64_t> seed, std::ostream& out) {
  const auto backend = load_backend(a.backend_path);
  const auto queries = load_queries_jsonl(a.queries_path);
  const auto cal = load_json_file(a.cal_path).get<CalibrationResult>();
  DetectorConfig config;
  if (!a.config_path.empty()) {
    config = load_json_file(a.config_path).get<DetectorConfig>();
  } else {
    config.n_samples = cal.n_samples;
    config.n_directions = cal.n_directions;
    config.mu = cal.mu;
    config.normalize_by_p = cal.normalize_by_p;
    config.sigma = cal.sigma;
    config.seed = cal.seed;
  }
  if (seed) config.seed = *seed;
  config = with_calibration(config, cal);
  const auto outcomes = detect_batch(*backend, queries, config, 64);
  std::vector<Verdict> verdicts;
  std::map<std::string, int> counts;
  for (const auto& o : outcomes) {
    if (o.error) throw *o.error;
    verdicts.push_back(*o.verdict);
    ++counts[decision_name(o.verdict->decision)];
  }
  const std::string jsonl = to_jsonl(verdicts);
  if (a.out_path) {
    write_text_file(*a.out_path, jsonl);
  } else {
    out << jsonl;
  }
  if (a.out_path) {
    for (const auto& [name, n] : counts) out << name << " " << n << "\n";
    out << "queries_used " << total_queries(outcomes) << "\n";
  }
  return 0;
}

struct Bench {
  std::string benchmark_path;
  std::string seeds;
  bool ablation = false;
  bool budget_sweep = false;
  std::optional<std::string> out_path;
};

/// Benchmark file: {"id", "detector", "val_fraction", and either
/// "population": <spec> (+ "population_seed") or "backend" + "queries"}.
inline int bench_cmd(const Bench& a, std::optional<std::uint64_t> seed, std::ostream& out) {
  const Json j = load_json_file(a.benchmark_path);
  const auto base = dir_of(a.benchmark_path);
  std::optional<Population> pop;
  std::unique_ptr<ModelBackend> backend;
  Benchmark bench;
  try {
    if (j.contains("population")) {
      const Json& p = j.at("population");
      const PopulationSpec spec = p.is_string() ? load_json_file(relative_to(base, p.get<std::string>())).get<PopulationSpec>()
                                                : p.get<PopulationSpec>();
      pop = generate_population(spec, j.value("population_seed", std::uint64_t{42}));
      bench = make_benchmark(*pop, j.value("id", std::string("synthetic")));
    } else {
      backend = make_backend(j.at("backend"), base);
      const auto queries = load_queries_jsonl(relative_to(base, j.at("queries").get<std::string>()));
      bench = benchmark_from_queries(*backend, queries, j.value("id", std::string("dataset")));
    }
  } catch (const Json::exception& e) {
    fail(ErrorCode::kInvalidInput, "bad benchmark file '" + a.benchmark_path + "': " + e.what());
  }
  bench.val_fraction = j.value("val_fraction", bench.val_fraction);
  DetectorConfig config = j.value("detector", Json::object()).get<DetectorConfig>();
  if (seed) config.seed = *seed;
  std::vector<std::uint64_t> seeds = default_seed_set();
  if (j.contains("seeds")) seeds = j.at("seeds").get<std::vector<std::uint64_t>>();
  if (!a.seeds.empty()) seeds = parse_seed_list(a.seeds);

  const EvalRun run = run_benchmark(bench, config, seeds);
  Json report{{"eval", eval_run_json(run)}};
  out << render_eval_table(run);
  if (a.ablation) {
    Json grids = Json::array();
    for (auto strategy : {AblationStrategy::kFixedN, AblationStrategy::kFixedP}) {
      const auto grid = ablation(strategy, default_combos(strategy), bench, config, seeds);
      out << "\n" << render_ablation_table(grid);
      grids.push_back(ablation_json(grid));
    }
    report["ablation"] = grids;
  }
  if (a.budget_sweep) {
    const auto points = budget_sweep(bench, config, config.n_samples, config.n_directions, seeds);
    out << "\n" << render_budget_table(points);
    report["budget_sweep"] = budget_sweep_json(points);
  }
  if (a.out_path) save_json_file(*a.out_path, report);
  return 0;
}

struct Landscape {
  std::string backend_path;
  std::string queries_path;
  std::string range = "-0.02:0.02";
  double step = 0.001;
  std::string out_path;
  std::optional<std::string> png_path;
  DetectorFlags detector;
};

inline int landscape_cmd(const Landscape& a, std::optional<std::uint64_t> seed, std::ostream& out) {
  const auto [lo, hi] = parse_range(a.range);
#ifndef REFGUARD_HAVE_PNG
  if (a.png_path) fail(ErrorCode::kUnsupported, "this build has no PNG support");
#endif
  const auto backend = load_backend(a.backend_path);
  const auto queries = load_queries_jsonl(a.queries_path);
  const DetectorConfig config = a.detector.resolve(seed);
  const LandscapeGrid grid = landscape_grid(*backend, queries, lo, hi, a.step, config);
  export_grid(grid, a.out_path);
#ifdef REFGUARD_HAVE_PNG
  if (a.png_path) write_grid_png(grid, *a.png_path);
#endif
  out << grid_metadata_json(grid).dump() << "\n";
  return 0;
}

struct Attack {
  std::string kind;
  std::string config_path;
  std::optional<std::string> out_path;
};

/// Attack file: {"backend", "query", "goal", "detector", "calibration",
/// "seed", "pair": {...}, "tap": {...}, "gcg": {...}}.
inline int attack_cmd(const Attack& a, std::optional<std::uint64_t> seed, std::ostream& out) {
  const Json j = load_json_file(a.config_path);
  const auto base = dir_of(a.config_path);
  AttackReport report;
  try {
    const auto backend = make_backend(j.at("backend"), base);
    const SyntheticField& field = require_field(*backend, "attack");
    const Query query = field_query(field, j.at("query").get<std::string>());
    const std::string goal = j.value("goal", query.id);
    const std::uint64_t attack_seed = seed.value_or(j.value("seed", std::uint64_t{42}));
    DetectorConfig detector = j.value("detector", Json::object()).get<DetectorConfig>();
    if (j.contains("calibration")) {
      const auto cal = load_json_file(relative_to(base, j.at("calibration").get<std::string>())).get<CalibrationResult>();
      detector = with_calibration(detector, cal);
    }
    const Json params = j.value(a.kind == "gcg-sim" ? "gcg" : a.kind, Json::object());

    if (a.kind == "gcg-sim") {
      GcgOptions opts;
      opts.n_perturbations = params.value("n_perturbations", opts.n_perturbations);
      opts.iterations = params.value("iterations", opts.iterations);
      opts.batch = params.value("batch", opts.batch);
      opts.top_k = params.value("top_k", opts.top_k);
      opts.noise_scale = params.value("noise_scale", opts.noise_scale);
      opts.seed = attack_seed;
      const auto set = make_candidate_set(field.entry(query.id).pooled, params.value("positions", std::size_t{4}),
                                          params.value("choices", std::size_t{64}), params.value("spread", 0.25),
                                          attack_seed);
      report = adaptive_gcg_sim(field, query, set, opts, detector);
    } else {
      EmbeddingAttacker attacker(query, field.entry(query.id).embedding, attack_seed, params.value("step", 0.5));
      FieldTarget target(field);
      FieldJudge judge(target.field(), detector.refusal_message);
      if (a.kind == "pair") {
        report = adaptive_pair(attacker, judge, target, detector, params.value("iterations", 12), goal);
      } else {
        report = adaptive_tap(attacker, judge, target, detector, params.value("branching", 4),
                              params.value("width", 10), params.value("depth", 10), goal);
      }
    }
  } catch (const Json::exception& e) {
    fail(ErrorCode::kInvalidInput, "bad attack config '" + a.config_path + "': " + e.what());
  }
  emit_json(out, a.out_path, attack_report_json(report));
  if (a.out_path) {
    out << report.attack << ": " << (report.success ? "success" : "no success") << " after " << report.iterations
        << " iterations\n";
  }
  if (report.aborted) fail(ErrorCode::kBackend, "attack aborted: " + report.error.value_or("unknown error"));
  return 0;
}

struct ProbeError {
  std::string field_path;
  bool grid = false;
  int n_samples = 16;
  int n_directions = 16;
  int seed_count = 64;
  double mu = 0.02;
  std::string mode = "normalized";
  std::vector<std::string> query_ids;
  std::optional<std::string> out_path;
};

inline int probe_error_cmd(const ProbeError& a, std::optional<std::uint64_t> seed, std::ostream& out) {
  const auto backend = load_backend(a.field_path);
  const SyntheticField& field = require_field(*backend, "probe-error");
  std::vector<Query> probes;
  for (const auto& id : a.query_ids) probes.push_back(field_query(field, id));
  if (probes.empty()) {
    if (field.entries().empty()) fail(ErrorCode::kInvalidInput, "field has no queries to probe");
    probes.push_back(field_query(field, field.entries().begin()->first));
  }
  std::vector<std::pair<int, int>> grid;
  if (a.grid) {
    for (int n : {4, 16, 64}) {
      for (int p : {4, 16, 64}) grid.emplace_back(n, p);
    }
  } else {
    grid.emplace_back(a.n_samples, a.n_directions);
  }
  std::vector<std::uint64_t> seeds;
  for (int i = 0; i < a.seed_count; ++i) seeds.push_back(mix_seed(seed.value_or(0), static_cast<std::uint64_t>(i)));
  ProbeOptions opts;
  opts.mode = a.mode == "literal" ? ProbeMode::kLiteral : ProbeMode::kNormalized;
  const auto report = error_probe(field, probes, grid, seeds, a.mu, opts);
  emit_json(out, a.out_path, error_probe_json(report));
  return 0;
}

}  // namespace cli

/// Runs the command line; returns the process exit code.
inline int run_cli(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  CLI::App app{"refguard: two-stage jailbreak detection for black-box language models"};
  app.name("refguard");
  app.require_subcommand(1);
  app.fallthrough();
  bool json_errors = false;
  std::optional<std::uint64_t> seed;
  app.add_flag("--json", json_errors, "print errors as JSON on stderr");
  app.add_option("--seed", seed, "master seed for every random draw");

  cli::GenPopulations gen;
  auto* gen_cmd = app.add_subcommand("gen-populations", "generate the synthetic benchmark populations");
  gen_cmd->add_option("spec", gen.spec_path, "population spec JSON")->required()->check(CLI::ExistingFile);
  gen_cmd->add_option("out_dir", gen.out_dir, "output directory")->required();

  cli::Calibrate cal;
  auto* cal_cmd = app.add_subcommand("calibrate", "pick the gradient-norm threshold on benign queries");
  cal_cmd->add_option("backend", cal.backend_path, "backend descriptor JSON")->required()->check(CLI::ExistingFile);
  cal_cmd->add_option("benign", cal.benign_path, "benign validation queries (JSONL)")->required()->check(CLI::ExistingFile);
  cal_cmd->add_option("--out", cal.out_path, "calibration output JSON")->required();
  cal.detector.add_to(*cal_cmd);

  cli::Detect det;
  auto* det_cmd = app.add_subcommand("detect", "run the detector over a query set");
  det_cmd->add_option("backend", det.backend_path, "backend descriptor JSON")->required()->check(CLI::ExistingFile);
  det_cmd->add_option("queries", det.queries_path, "queries (JSONL)")->required()->check(CLI::ExistingFile);
  det_cmd->add_option("--cal", det.cal_path, "calibration JSON")->required()->check(CLI::ExistingFile);
  det_cmd->add_option("--out", det.out_path, "verdicts output (JSONL); stdout when omitted");
  det_cmd->add_option("--config", det.config_path, "detector config JSON")->check(CLI::ExistingFile);

  cli::Bench bench;
  auto* bench_cmd = app.add_subcommand("bench", "benchmark over repeated seeds");
  bench_cmd->add_option("benchmark", bench.benchmark_path, "benchmark JSON")->required()->check(CLI::ExistingFile);
  bench_cmd->add_option("--seeds", bench.seeds, "comma-separated seed list");
  bench_cmd->add_flag("--ablation", bench.ablation, "also run the fixed-N and fixed-P budget grids");
  bench_cmd->add_flag("--budget-sweep", bench.budget_sweep, "also sweep P from 1 to the configured P");
  bench_cmd->add_option("--out", bench.out_path, "report JSON");

  cli::Landscape land;
  auto* land_cmd = app.add_subcommand("landscape", "refusal-loss surface on a 2-D grid");
  land_cmd->add_option("backend", land.backend_path, "backend descriptor JSON")->required()->check(CLI::ExistingFile);
  land_cmd->add_option("queries", land.queries_path, "queries (JSONL)")->required()->check(CLI::ExistingFile);
  land_cmd->add_option("--range", land.range, "axis range lo:hi")->capture_default_str();
  land_cmd->add_option("--step", land.step, "axis step")->capture_default_str();
  land_cmd->add_option("--out", land.out_path, "grid CSV")->required();
  land_cmd->add_option("--png", land.png_path, "heatmap PNG");
  land.detector.add_to(*land_cmd, false);

  cli::Attack att;
  auto* att_cmd = app.add_subcommand("attack", "run a detector-aware attack");
  att_cmd->add_option("kind", att.kind, "pair, tap or gcg-sim")
      ->required()
      ->check(CLI::IsMember({"pair", "tap", "gcg-sim"}));
  att_cmd->add_option("config", att.config_path, "attack config JSON")->required()->check(CLI::ExistingFile);
  att_cmd->add_option("--out", att.out_path, "report JSON; stdout when omitted");

  cli::ProbeError probe;
  auto* probe_cmd = app.add_subcommand("probe-error", "gradient-estimate error against the closed form");
  probe_cmd->add_option("field", probe.field_path, "synthetic field JSON")->required()->check(CLI::ExistingFile);
  probe_cmd->add_flag("--grid", probe.grid, "sweep N and P over {4, 16, 64}");
  probe_cmd->add_option("-N,--samples", probe.n_samples, "N when not sweeping")->capture_default_str();
  probe_cmd->add_option("-P,--directions", probe.n_directions, "P when not sweeping")->capture_default_str();
  probe_cmd->add_option("--seed-count", probe.seed_count, "seeds per cell")->capture_default_str()->check(
      CLI::PositiveNumber);
  probe_cmd->add_option("--mu", probe.mu, "smoothing radius")->capture_default_str();
  probe_cmd->add_option("--mode", probe.mode, "normalized or literal")
      ->capture_default_str()
      ->check(CLI::IsMember({"normalized", "literal"}));
  probe_cmd->add_option("--query", probe.query_ids, "probe query id (repeatable); default first in field");
  probe_cmd->add_option("--out", probe.out_path, "report JSON; stdout when omitted");

  std::string service_path;
  auto* serve_cmd = app.add_subcommand("serve", "run the HTTP guardrail");
  serve_cmd->add_option("config", service_path, "service config JSON")->required()->check(CLI::ExistingFile);

  std::string model_backend;
  std::string model_host = "127.0.0.1";
  int model_port = 8081;
  auto* model_cmd = app.add_subcommand("serve-model", "expose a backend over the remote sampling protocol");
  model_cmd->add_option("backend", model_backend, "backend descriptor JSON")->required()->check(CLI::ExistingFile);
  model_cmd->add_option("--host", model_host)->capture_default_str();
  model_cmd->add_option("--port", model_port)->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == static_cast<int>(CLI::ExitCodes::Success)) {
      out << (e.get_name() == "CallForVersion" ? e.what() : app.help());
      return 0;
    }
    if (json_errors) {
      err << Json{{"error", {{"code", "usage"}, {"message", e.what()}}}}.dump() << "\n";
    } else {
      err << "usage error: " << e.what() << "\nRun with --help for usage.\n";
    }
    return 1;
  }

  try {
    if (*gen_cmd) return cli::gen_populations(gen, seed, out);
    if (*cal_cmd) return cli::calibrate_cmd(cal, seed, out, err);
    if (*det_cmd) return cli::detect_cmd(det, seed, out);
    if (*bench_cmd) return cli::bench_cmd(bench, seed, out);
    if (*land_cmd) return cli::landscape_cmd(land, seed, out);
    if (*att_cmd) return cli::attack_cmd(att, seed, out);
    if (*probe_cmd) return cli::probe_error_cmd(probe, seed, out);
    if (*serve_cmd) {
      ServiceConfig config = load_service_config(service_path);
      if (seed) config.detector.seed = *seed;
      auto service = GuardService::from_config(config);
      err << "refguard guardrail on " << config.host << ":" << config.port << " (calibration "
          << service->calibration_id() << ")\n";
      service->listen();
      return 0;
    }
    if (*model_cmd) {
      const auto backend = load_backend(model_backend);
      ModelServer server(*backend);
      err << "model server on " << model_host << ":" << model_port << "\n";
      server.listen(model_host, model_port);
      return 0;
    }
  } catch (const CLI::ValidationError& e) {
    if (json_errors) {
      err << Json{{"error", {{"code", "usage"}, {"message", e.what()}}}}.dump() << "\n";
    } else {
      err << "usage error: " << e.what() << "\n";
    }
    return 1;
  } catch (const Error& e) {
    if (json_errors) {
      err << Json{{"error", {{"code", std::string(error_code_name(e.code()))}, {"message", e.what()}}}}.dump() << "\n";
    } else {
      err << "error: " << e.what() << "\n";
    }
    return 2;
  } catch (const std::exception& e) {
    if (json_errors) {
      err << Json{{"error", {{"code", "internal"}, {"message", e.what()}}}}.dump() << "\n";
    } else {
      err << "error: " << e.what() << "\n";
    }
    return 2;
  }
  return 1;
}

}  // namespace refguard
