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
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "refguard/backend.hpp"
#include "refguard/keywords.hpp"
#include "refguard/random.hpp"

namespace refguard {

/// Backend that draws each response from a fixed per-query distribution and
/// scores it with the keyword indicator. Perturbations are dimension-checked
/// but do not change the distribution.
class ScriptedText : public ModelBackend {
 public:
  using Script = std::vector<std::pair<std::string, double>>;

  ScriptedText(std::size_t dim, KeywordSet keywords = KeywordSet::defaults())
      : dim_(dim), keywords_(std::move(keywords)) {
    require(dim_ >= 1, ErrorCode::kInvalidInput, "scripted backend dimension must be >= 1");
  }

  void add_script(const Query& q, Script script) {
    require(!script.empty(), ErrorCode::kInvalidInput, "script for " + q.id + " is empty");
    double total = 0.0;
    for (const auto& [text, prob] : script) {
      require(prob >= 0.0, ErrorCode::kInvalidInput, "negative response probability");
      total += prob;
    }
    require(std::abs(total - 1.0) < 1e-9, ErrorCode::kInvalidInput,
            "response probabilities for " + q.id + " must sum to 1");
    scripts_[q.id] = std::move(script);
    texts_[q.text] = q.id;
  }

  const KeywordSet& keywords() const { return keywords_; }

  std::size_t embed_dim() const override { return dim_; }
  BackendCapabilities capabilities() const override { return {false, true, false}; }
  std::string model_id() const override { return "scripted-text"; }

  RefusalSample sample_refusals(const SampleRequest& r) const override {
    require(r.n >= 1, ErrorCode::kInvalidInput, "sample count must be >= 1");
    require(r.perturbation.empty() || r.perturbation.size() == dim_, ErrorCode::kDimensionMismatch,
            "perturbation dimension mismatch");
    const auto& script = lookup(r.query.id);
    const CounterRng rng(r.key, r.stream);
    RefusalSample s;
    std::vector<std::string> texts;
    for (int i = 0; i < r.n; ++i) {
      const std::string& text = pick(script, rng.uniform(static_cast<std::uint64_t>(i)));
      s.bits.push_back(static_cast<std::uint8_t>(jb_indicator(text, keywords_)));
      if (r.return_responses) texts.push_back(text);
    }
    if (r.return_responses) s.responses = std::move(texts);
    return s;
  }

  std::string generate(const Query& q, std::uint64_t key, std::uint64_t stream,
                       const std::optional<std::string>&) const override {
    return pick(lookup(q.id), CounterRng(key, stream).uniform(0));
  }

  std::optional<std::string> resolve_text(std::string_view text) const override {
    auto it = texts_.find(std::string(text));
    if (it == texts_.end()) return std::nullopt;
    return it->second;
  }

 private:
  const Script& lookup(const std::string& id) const {
    auto it = scripts_.find(id);
    if (it == scripts_.end()) fail(ErrorCode::kNotFound, "no script for query '" + id + "'");
    return it->second;
  }

  static const std::string& pick(const Script& script, double u) {
    double acc = 0.0;
    for (const auto& [text, prob] : script) {
      acc += prob;
      if (u < acc) return text;
    }
    return script.back().first;
  }

  std::size_t dim_;
  KeywordSet keywords_;
  std::map<std::string, Script> scripts_;
  std::map<std::string, std::string> texts_;
};

/// JSON: {"kind": "scripted", "dim": d, "keywords": [...]?,
///        "scripts": [{"id", "text", "responses": [{"text", "p"}]}]}
inline ScriptedText scripted_from_json(const Json& j) {
  KeywordSet keywords = j.contains("keywords")
                            ? KeywordSet(j.at("keywords").get<std::vector<std::string>>())
                            : KeywordSet::defaults();
  ScriptedText backend(j.at("dim").get<std::size_t>(), std::move(keywords));
  for (const auto& s : j.at("scripts")) {
    Query q{s.at("id").get<std::string>(), s.value("text", std::string()), std::nullopt, {}};
    ScriptedText::Script script;
    for (const auto& r : s.at("responses")) {
      script.emplace_back(r.at("text").get<std::string>(), r.at("p").get<double>());
    }
    backend.add_script(q, std::move(script));
  }
  return backend;
}

}  // namespace refguard
