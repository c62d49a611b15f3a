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

// Two-step detection with FPR-budgeted threshold calibration.
//
//   Stage 1: reject when the sampled refusal loss f(x) < 0.5.
//   Stage 2: reject when the zeroth-order gradient norm |g(x)| > t.
//
// Calibration on benign validation queries B_val: S is the stage-1 rejected
// set, G the descending gradient norms of the rest. k is the integer with
// k - 1 <= |B_val| * sigma - |S| < k and t = G[k] (1-based), so at most
// |S| + k - 1 validation queries are refused.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <ctime>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "refguard/backend.hpp"
#include "refguard/dispatch.hpp"
#include "refguard/gradient.hpp"
#include "refguard/refusal.hpp"

namespace refguard {

inline constexpr double kThresholdDisabled = std::numeric_limits<double>::infinity();

enum class Decision { kRejectedStage1, kRejectedStage2, kPassed };

inline const char* decision_name(Decision d) {
  switch (d) {
    case Decision::kRejectedStage1: return "reject_stage1";
    case Decision::kRejectedStage2: return "reject_stage2";
    case Decision::kPassed: return "pass";
  }
  return "?";
}

inline Decision parse_decision(const std::string& s) {
  if (s == "reject_stage1") return Decision::kRejectedStage1;
  if (s == "reject_stage2") return Decision::kRejectedStage2;
  if (s == "pass") return Decision::kPassed;
  fail(ErrorCode::kInvalidInput, "unknown decision '" + s + "'");
}

struct Verdict {
  std::string query_id;
  Decision decision = Decision::kPassed;
  RefusalLoss f_value;
  std::optional<double> grad_norm;
  std::optional<std::string> response;
  long long queries_used = 0;
  std::optional<std::string> refusal_message;

  bool rejected() const { return decision != Decision::kPassed; }
  friend bool operator==(const Verdict&, const Verdict&) = default;
};

inline void to_json(Json& j, const Verdict& v) {
  j = Json{{"id", v.query_id},
           {"decision", decision_name(v.decision)},
           {"f", v.f_value.value()},
           {"n", v.f_value.n()},
           {"refusals", v.f_value.refusals()},
           {"grad_norm", v.grad_norm ? Json(*v.grad_norm) : Json(nullptr)},
           {"queries_used", v.queries_used},
           {"response", v.response ? Json(*v.response) : Json(nullptr)},
           {"refusal_message", v.refusal_message ? Json(*v.refusal_message) : Json(nullptr)}};
}

inline void from_json(const Json& j, Verdict& v) {
  v.query_id = j.at("id").get<std::string>();
  v.decision = parse_decision(j.at("decision").get<std::string>());
  v.f_value = RefusalLoss::from_counts(j.at("refusals").get<int>(), j.at("n").get<int>());
  v.grad_norm.reset();
  if (!j.at("grad_norm").is_null()) v.grad_norm = j.at("grad_norm").get<double>();
  v.queries_used = j.at("queries_used").get<long long>();
  v.response.reset();
  if (!j.at("response").is_null()) v.response = j.at("response").get<std::string>();
  v.refusal_message.reset();
  if (!j.at("refusal_message").is_null()) v.refusal_message = j.at("refusal_message").get<std::string>();
}

struct CalibrationResult {
  double threshold = kThresholdDisabled;
  int stage1_rejects = 0;
  int k = 0;
  int val_size = 0;
  double sigma = 0.0;
  int n_samples = 0;
  int n_directions = 0;
  double mu = 0.0;
  bool normalize_by_p = false;
  std::uint64_t seed = 0;
  std::string created_at;
  std::vector<std::pair<std::string, double>> per_query_norms;  // descending
  std::vector<std::string> warnings;

  bool stage2_disabled() const { return std::isinf(threshold); }
};

inline void to_json(Json& j, const CalibrationResult& c) {
  j = Json{{"threshold", c.stage2_disabled() ? Json("inf") : Json(c.threshold)},
           {"sigma", c.sigma},
           {"N", c.n_samples},
           {"P", c.n_directions},
           {"mu", c.mu},
           {"normalize_by_p", c.normalize_by_p},
           {"seed", c.seed},
           {"val_size", c.val_size},
           {"stage1_rejects", c.stage1_rejects},
           {"k", c.k},
           {"created_at", c.created_at},
           {"warnings", c.warnings}};
  Json norms = Json::array();
  for (const auto& [id, norm] : c.per_query_norms) norms.push_back(Json{{"id", id}, {"norm", norm}});
  j["per_query_norms"] = std::move(norms);
}

inline void from_json(const Json& j, CalibrationResult& c) {
  const auto& t = j.at("threshold");
  c.threshold = t.is_string() ? kThresholdDisabled : t.get<double>();
  c.sigma = j.at("sigma").get<double>();
  c.n_samples = j.at("N").get<int>();
  c.n_directions = j.at("P").get<int>();
  c.mu = j.at("mu").get<double>();
  c.normalize_by_p = j.value("normalize_by_p", false);
  c.seed = j.at("seed").get<std::uint64_t>();
  c.val_size = j.at("val_size").get<int>();
  c.stage1_rejects = j.at("stage1_rejects").get<int>();
  c.k = j.at("k").get<int>();
  c.created_at = j.value("created_at", std::string());
  c.warnings = j.value("warnings", std::vector<std::string>{});
  c.per_query_norms.clear();
  if (j.contains("per_query_norms")) {
    for (const auto& e : j.at("per_query_norms")) {
      c.per_query_norms.emplace_back(e.at("id").get<std::string>(), e.at("norm").get<double>());
    }
  }
}

/// Throws a configuration error when the calibration was made under a
/// different estimator setup than `config`.
inline void check_compatible(const CalibrationResult& cal, const DetectorConfig& config) {
  if (cal.n_samples != config.n_samples || cal.n_directions != config.n_directions ||
      cal.mu != config.mu || cal.normalize_by_p != config.normalize_by_p) {
    fail(ErrorCode::kConfiguration,
         "calibration (N=" + std::to_string(cal.n_samples) + ", P=" + std::to_string(cal.n_directions) +
             ", mu=" + std::to_string(cal.mu) + ", normalize_by_p=" + (cal.normalize_by_p ? "true" : "false") +
             ") does not match detector config (N=" + std::to_string(config.n_samples) +
             ", P=" + std::to_string(config.n_directions) + ", mu=" + std::to_string(config.mu) +
             ", normalize_by_p=" + (config.normalize_by_p ? "true" : "false") + ")");
  }
}

inline DetectorConfig with_calibration(DetectorConfig config, const CalibrationResult& cal) {
  check_compatible(cal, config);
  config.threshold = cal.threshold;
  return config;
}

/// k from the budget inequality; may be < 1 when stage 1 already spends it.
inline int budget_index(int val_size, double sigma, int stage1_rejects) {
  const double x = static_cast<double>(val_size) * sigma - static_cast<double>(stage1_rejects);
  // Absorb rounding in |B_val| * sigma (e.g. 100 * 0.29 = 28.999999999999996).
  const double guard = 1e-9 * std::max(1.0, std::abs(x));
  return static_cast<int>(std::floor(x + guard)) + 1;
}

namespace detail {

struct ScoredQuery {
  std::optional<RefusalLoss> f;
  std::optional<GradientEstimate> gradient;
  std::optional<Error> error;
};

/// Stage-1 losses for every query, then gradients for survivors (f >= 0.5).
inline std::vector<ScoredQuery> score_queries(const ModelBackend& backend, const std::vector<Query>& queries,
                                              const DetectorConfig& config, std::size_t max_parallel) {
  std::vector<ScoredQuery> scored(queries.size());
  std::vector<SampleRequest> base;
  base.reserve(queries.size());
  for (const auto& q : queries) base.push_back(make_sample_request(q, {}, config, streams::kBase));
  auto first = dispatch_requests(backend, base, max_parallel);
  for (std::size_t i = 0; i < queries.size(); ++i) {
    if (first.errors[i]) {
      scored[i].error = first.errors[i];
    } else {
      scored[i].f = refusal_loss(*first.samples[i]);
    }
  }

  std::vector<std::size_t> survivors;
  for (std::size_t i = 0; i < queries.size(); ++i) {
    if (scored[i].f && scored[i].f->value() >= 0.5) survivors.push_back(i);
  }
  std::vector<DirectionSet> directions;
  std::vector<SampleRequest> perturbed;
  const auto P = static_cast<std::size_t>(config.n_directions);
  perturbed.reserve(survivors.size() * P);
  for (std::size_t s : survivors) {
    directions.push_back(query_directions(queries[s], config, backend.embed_dim()));
    auto reqs = perturbed_requests(queries[s], directions.back(), config);
    for (auto& r : reqs) perturbed.push_back(std::move(r));
  }
  auto second = dispatch_requests(backend, perturbed, max_parallel);
  for (std::size_t k = 0; k < survivors.size(); ++k) {
    auto& out = scored[survivors[k]];
    std::vector<double> losses;
    losses.reserve(P);
    for (std::size_t i = 0; i < P; ++i) {
      const std::size_t slot = k * P + i;
      if (second.errors[slot]) {
        out.error = second.errors[slot];
        break;
      }
      losses.push_back(refusal_loss(*second.samples[slot]).value());
    }
    if (out.error) continue;
    try {
      out.gradient = finish_gradient(directions[k], losses, *out.f, config, true);
    } catch (const Error& e) {
      out.error = e.with_context("query " + queries[survivors[k]].id);
    }
  }
  return scored;
}

inline std::string utc_timestamp() {
  const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

}  // namespace detail

/// Picks the threshold from per-query stage-1 losses and gradient norms.
/// `norms` holds (query id, norm) for stage-1 survivors only.
inline CalibrationResult select_threshold(int val_size, int stage1_rejects,
                                          std::vector<std::pair<std::string, double>> norms,
                                          const DetectorConfig& config) {
  CalibrationResult cal;
  cal.val_size = val_size;
  cal.stage1_rejects = stage1_rejects;
  cal.sigma = config.sigma;
  cal.n_samples = config.n_samples;
  cal.n_directions = config.n_directions;
  cal.mu = config.mu;
  cal.normalize_by_p = config.normalize_by_p;
  cal.seed = config.seed;
  cal.created_at = detail::utc_timestamp();
  std::stable_sort(norms.begin(), norms.end(), [](const auto& a, const auto& b) {
    if (a.second != b.second) return a.second > b.second;
    return a.first < b.first;
  });
  cal.k = budget_index(val_size, config.sigma, stage1_rejects);
  if (cal.k < 1) {
    cal.threshold = kThresholdDisabled;
    cal.warnings.push_back("FPR budget exceeded: stage 1 rejected " + std::to_string(stage1_rejects) + " of " +
                           std::to_string(val_size) + " validation queries (sigma = " +
                           std::to_string(config.sigma) + "); gradient-norm stage disabled");
  } else if (norms.empty()) {
    cal.threshold = kThresholdDisabled;
    cal.warnings.push_back("no validation query reached the gradient-norm stage; stage disabled");
  } else if (static_cast<std::size_t>(cal.k) > norms.size()) {
    cal.threshold = norms.back().second;
  } else {
    cal.threshold = norms[static_cast<std::size_t>(cal.k) - 1].second;
  }
  cal.per_query_norms = std::move(norms);
  return cal;
}

inline CalibrationResult calibrate(const ModelBackend& backend, const std::vector<Query>& benign_val,
                                   const DetectorConfig& config, std::size_t max_parallel = 64) {
  config.validate();
  require(!benign_val.empty(), ErrorCode::kInvalidInput, "validation set is empty");
  const auto scored = detail::score_queries(backend, benign_val, config, max_parallel);
  int stage1 = 0;
  std::vector<std::pair<std::string, double>> norms;
  for (std::size_t i = 0; i < scored.size(); ++i) {
    if (scored[i].error) throw *scored[i].error;
    if (scored[i].f->value() < 0.5) {
      ++stage1;
    } else {
      norms.emplace_back(benign_val[i].id, scored[i].gradient->norm);
    }
  }
  return select_threshold(static_cast<int>(benign_val.size()), stage1, std::move(norms), config);
}

struct BatchOutcome {
  std::optional<Verdict> verdict;
  std::optional<Error> error;
};

/// Verdicts for every query; batches of at most `max_parallel` requests go to
/// the backend per call. Results do not depend on `max_parallel`.
inline std::vector<BatchOutcome> detect_batch(const ModelBackend& backend, const std::vector<Query>& queries,
                                              const DetectorConfig& config, std::size_t max_parallel) {
  config.validate();
  require(max_parallel >= 1, ErrorCode::kInvalidInput, "max_parallel must be >= 1");
  if (!config.threshold) fail(ErrorCode::kConfiguration, "detector threshold is not set; calibrate first");
  const double t = *config.threshold;
  const auto scored = detail::score_queries(backend, queries, config, max_parallel);
  std::vector<BatchOutcome> out(queries.size());
  for (std::size_t i = 0; i < queries.size(); ++i) {
    const auto& s = scored[i];
    if (s.error) {
      out[i].error = s.error;
      continue;
    }
    Verdict v;
    v.query_id = queries[i].id;
    v.f_value = *s.f;
    if (s.f->value() < 0.5) {
      v.decision = Decision::kRejectedStage1;
      v.queries_used = config.n_samples;
      v.refusal_message = config.refusal_message;
    } else {
      v.grad_norm = s.gradient->norm;
      v.queries_used = config.full_query_count();
      if (s.gradient->norm > t) {
        v.decision = Decision::kRejectedStage2;
        v.refusal_message = config.refusal_message;
      } else {
        v.decision = Decision::kPassed;
        try {
          v.response = backend.generate(queries[i], derive_key(config.seed, queries[i].id), streams::kResponse,
                                        config.system_prompt);
        } catch (const Error& e) {
          out[i].error = e.with_context("query " + queries[i].id);
          continue;
        } catch (const std::exception& e) {
          out[i].error = Error(ErrorCode::kBackend, "query " + queries[i].id + ": " + e.what());
          continue;
        }
      }
    }
    out[i].verdict = std::move(v);
  }
  return out;
}

inline Verdict detect(const ModelBackend& backend, const Query& query, const DetectorConfig& config) {
  auto out = detect_batch(backend, {query}, config, static_cast<std::size_t>(config.n_directions) + 1);
  if (out[0].error) throw *out[0].error;
  return std::move(*out[0].verdict);
}

inline long long total_queries(const std::vector<BatchOutcome>& outcomes) {
  long long total = 0;
  for (const auto& o : outcomes) {
    if (o.verdict) total += o.verdict->queries_used;
  }
  return total;
}

}  // namespace refguard
