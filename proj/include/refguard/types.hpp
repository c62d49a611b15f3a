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

#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "refguard/error.hpp"

namespace refguard {

using Json = nlohmann::json;
using Vector = std::vector<double>;

inline constexpr const char* kDefaultRefusalMessage = "I cannot fulfill your request.";

struct QueryLabel {
  enum class Kind { kBenign, kMalicious };
  Kind kind = Kind::kBenign;
  std::string attack;  // only meaningful for kMalicious

  static QueryLabel benign() { return {}; }
  static QueryLabel malicious(std::string attack_name) {
    return {Kind::kMalicious, std::move(attack_name)};
  }
  bool is_benign() const { return kind == Kind::kBenign; }
  bool is_malicious() const { return kind == Kind::kMalicious; }

  /// "benign", "malicious" or "malicious:<attack>".
  std::string to_string() const {
    if (is_benign()) return "benign";
    return attack.empty() ? "malicious" : "malicious:" + attack;
  }
  static QueryLabel parse(const std::string& text) {
    if (text == "benign") return benign();
    if (text == "malicious") return malicious("");
    if (text.rfind("malicious:", 0) == 0) return malicious(text.substr(10));
    fail(ErrorCode::kInvalidInput, "unknown label '" + text + "'");
  }
  friend bool operator==(const QueryLabel&, const QueryLabel&) = default;
};

struct Query {
  std::string id;
  std::string text;
  std::optional<QueryLabel> label;
  std::map<std::string, std::string> metadata;
};

inline void to_json(Json& j, const Query& q) {
  j = Json{{"id", q.id}, {"text", q.text}};
  if (q.label) j["label"] = q.label->to_string();
  if (!q.metadata.empty()) j["metadata"] = q.metadata;
}

inline void from_json(const Json& j, Query& q) {
  q.id = j.at("id").get<std::string>();
  q.text = j.value("text", std::string());
  q.label.reset();
  if (j.contains("label") && !j.at("label").is_null()) {
    q.label = QueryLabel::parse(j.at("label").get<std::string>());
  }
  q.metadata.clear();
  if (j.contains("metadata")) q.metadata = j.at("metadata").get<std::map<std::string, std::string>>();
}

/// N refusal indicators Y_i, plus the responses they were computed from when
/// the backend produced text.
struct RefusalSample {
  std::vector<std::uint8_t> bits;
  std::optional<std::vector<std::string>> responses;
};

/// Sample refusal loss: one minus the fraction of refusals in an N-sample.
class RefusalLoss {
 public:
  RefusalLoss() = default;

  static RefusalLoss from_counts(int refusals, int n) {
    require(n >= 1, ErrorCode::kInvalidInput, "refusal loss needs at least one sample");
    require(refusals >= 0 && refusals <= n, ErrorCode::kInvalidInput,
            "refusal count out of range");
    RefusalLoss loss;
    loss.refusals_ = refusals;
    loss.n_ = n;
    loss.value_ = 1.0 - static_cast<double>(refusals) / static_cast<double>(n);
    return loss;
  }

  double value() const { return value_; }
  int n() const { return n_; }
  int refusals() const { return refusals_; }

  friend bool operator==(const RefusalLoss&, const RefusalLoss&) = default;

 private:
  double value_ = 1.0;
  int n_ = 1;
  int refusals_ = 0;
};

struct DetectorConfig {
  int n_samples = 10;      // N
  int n_directions = 10;   // P
  double mu = 0.02;
  double sigma = 0.05;
  std::optional<double> threshold;
  bool normalize_by_p = false;
  std::uint64_t seed = 42;
  std::optional<std::string> system_prompt;
  std::string refusal_message = kDefaultRefusalMessage;

  void validate() const {
    require(n_samples >= 1, ErrorCode::kConfiguration, "n_samples must be >= 1");
    require(n_directions >= 1, ErrorCode::kConfiguration, "n_directions must be >= 1");
    require(mu > 0.0 && std::isfinite(mu), ErrorCode::kConfiguration, "mu must be > 0");
    require(sigma >= 0.0 && sigma <= 1.0, ErrorCode::kConfiguration, "sigma must lie in [0, 1]");
    require(!threshold || *threshold >= 0.0, ErrorCode::kConfiguration,
            "threshold must be non-negative");
  }

  /// Total backend queries for a detection that reaches the gradient stage.
  long long full_query_count() const {
    return static_cast<long long>(n_samples) * (n_directions + 1);
  }
};

inline void to_json(Json& j, const DetectorConfig& c) {
  j = Json{{"n_samples", c.n_samples},
           {"n_directions", c.n_directions},
           {"mu", c.mu},
           {"sigma", c.sigma},
           {"normalize_by_p", c.normalize_by_p},
           {"seed", c.seed},
           {"refusal_message", c.refusal_message}};
  j["threshold"] = nullptr;
  if (c.threshold) {
    if (std::isinf(*c.threshold)) {
      j["threshold"] = "inf";
    } else {
      j["threshold"] = *c.threshold;
    }
  }
  j["system_prompt"] = c.system_prompt ? Json(*c.system_prompt) : Json(nullptr);
}

inline void from_json(const Json& j, DetectorConfig& c) {
  DetectorConfig d;
  c.n_samples = j.value("n_samples", d.n_samples);
  c.n_directions = j.value("n_directions", d.n_directions);
  c.mu = j.value("mu", d.mu);
  c.sigma = j.value("sigma", d.sigma);
  c.normalize_by_p = j.value("normalize_by_p", d.normalize_by_p);
  c.seed = j.value("seed", d.seed);
  c.refusal_message = j.value("refusal_message", d.refusal_message);
  c.threshold.reset();
  if (j.contains("threshold") && !j.at("threshold").is_null()) {
    const auto& t = j.at("threshold");
    c.threshold = t.is_string() && t.get<std::string>() == "inf"
                      ? std::numeric_limits<double>::infinity()
                      : t.get<double>();
  }
  c.system_prompt.reset();
  if (j.contains("system_prompt") && !j.at("system_prompt").is_null()) {
    c.system_prompt = j.at("system_prompt").get<std::string>();
  }
}

/// The experiment seed set used for repeated benchmark runs.
inline const std::vector<std::uint64_t>& default_seed_set() {
  static const std::vector<std::uint64_t> seeds = {13, 21, 42, 87, 100};
  return seeds;
}

}  // namespace refguard
