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

// Analytic refusal-probability field over pooled-embedding space:
//
//   p(e) = clamp01( logistic(s * (w . e + b)) + sum_j a_j exp(-|e - c_j|^2 / (2 tau_j^2)) )
//
// Negative bump amplitudes carve low-refusal "holes"; the logistic term
// separates a low-refusal half-space from a high-refusal one.

#include <algorithm>
#include <cmath>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "refguard/backend.hpp"
#include "refguard/embedding.hpp"
#include "refguard/random.hpp"

namespace refguard {

struct Bump {
  double amplitude = 0.0;
  Vector center;
  double width = 1.0;  // tau
};

struct FieldParams {
  std::size_t dim = 0;
  Vector w;
  double b = 0.0;
  double sharpness = 1.0;
  std::vector<Bump> bumps;

  void validate() const {
    require(dim >= 1, ErrorCode::kInvalidInput, "field dimension must be >= 1");
    require(w.size() == dim, ErrorCode::kInvalidInput, "field weight vector has wrong dimension");
    for (const auto& bump : bumps) {
      require(bump.center.size() == dim, ErrorCode::kInvalidInput, "bump center has wrong dimension");
      require(bump.width > 0.0, ErrorCode::kInvalidInput, "bump width must be > 0");
    }
  }

  /// Unclamped sum; the refusal probability is this clamped to [0, 1].
  double raw(std::span<const double> e) const {
    const double z = sharpness * (dot(w, e) + b);
    double p = 1.0 / (1.0 + std::exp(-z));
    for (const auto& bump : bumps) {
      double r2 = 0.0;
      for (std::size_t j = 0; j < dim; ++j) {
        const double t = e[j] - bump.center[j];
        r2 += t * t;
      }
      p += bump.amplitude * std::exp(-r2 / (2.0 * bump.width * bump.width));
    }
    return p;
  }

  double refusal_probability(std::span<const double> e) const {
    return std::clamp(raw(e), 0.0, 1.0);
  }

  bool clamped(std::span<const double> e) const {
    const double r = raw(e);
    return r < 0.0 || r > 1.0;
  }

  /// Gradient of p; zero where the clamp is active.
  Vector probability_gradient(std::span<const double> e) const {
    Vector g(dim, 0.0);
    if (clamped(e)) return g;
    const double z = sharpness * (dot(w, e) + b);
    const double sig = 1.0 / (1.0 + std::exp(-z));
    const double dsig = sharpness * sig * (1.0 - sig);
    for (std::size_t j = 0; j < dim; ++j) g[j] = dsig * w[j];
    for (const auto& bump : bumps) {
      double r2 = 0.0;
      for (std::size_t j = 0; j < dim; ++j) {
        const double t = e[j] - bump.center[j];
        r2 += t * t;
      }
      const double tau2 = bump.width * bump.width;
      const double k = bump.amplitude * std::exp(-r2 / (2.0 * tau2)) / tau2;
      for (std::size_t j = 0; j < dim; ++j) g[j] -= k * (e[j] - bump.center[j]);
    }
    return g;
  }
};

inline void to_json(Json& j, const Bump& b) {
  j = Json{{"a", b.amplitude}, {"c", b.center}, {"tau", b.width}};
}
inline void from_json(const Json& j, Bump& b) {
  b.amplitude = j.at("a").get<double>();
  b.center = j.at("c").get<Vector>();
  b.width = j.at("tau").get<double>();
}
inline void to_json(Json& j, const FieldParams& f) {
  j = Json{{"dim", f.dim}, {"w", f.w}, {"b", f.b}, {"s", f.sharpness}, {"bumps", f.bumps}};
}
inline void from_json(const Json& j, FieldParams& f) {
  f.dim = j.at("dim").get<std::size_t>();
  f.w = j.at("w").get<Vector>();
  f.b = j.at("b").get<double>();
  f.sharpness = j.at("s").get<double>();
  f.bumps = j.value("bumps", std::vector<Bump>{});
  f.validate();
}

/// ModelBackend over a FieldParams and a table of query embeddings.
class SyntheticField : public ModelBackend {
 public:
  struct Entry {
    std::string text;
    EmbeddingMatrix embedding;
    Vector pooled;
  };

  SyntheticField() = default;
  explicit SyntheticField(FieldParams params, bool deterministic = false)
      : params_(std::move(params)), deterministic_(deterministic) {
    params_.validate();
  }

  /// Field with p(e) = c everywhere.
  static SyntheticField constant(double c, std::size_t dim, bool deterministic = false) {
    require(c >= 0.0 && c <= 1.0, ErrorCode::kInvalidInput, "constant field needs 0 <= c <= 1");
    FieldParams f;
    f.dim = dim;
    f.w.assign(dim, 0.0);
    f.sharpness = 1.0;
    if (c <= 0.0) {
      f.b = -1000.0;
    } else if (c >= 1.0) {
      f.b = 1000.0;
    } else {
      f.b = std::log(c / (1.0 - c));
    }
    return SyntheticField(std::move(f), deterministic);
  }

  const FieldParams& params() const { return params_; }
  bool deterministic() const { return deterministic_; }
  void set_deterministic(bool on) { deterministic_ = on; }

  void set_response_texts(std::string refusal, std::string compliance) {
    refusal_text_ = std::move(refusal);
    comply_text_ = std::move(compliance);
  }
  const std::string& refusal_text() const { return refusal_text_; }
  const std::string& comply_text() const { return comply_text_; }

  void add_query(const Query& q, EmbeddingMatrix embedding) {
    require(embedding.dim() == params_.dim, ErrorCode::kDimensionMismatch,
            "query " + q.id + " embedding dimension does not match field");
    auto entry = std::make_shared<Entry>();
    entry->text = q.text;
    entry->pooled = mean_pool(embedding);
    entry->embedding = std::move(embedding);
    if (auto it = entries_.find(q.id); it != entries_.end()) text_index_.erase(it->second->text);
    entries_[q.id] = std::move(entry);
    text_index_[q.text] = q.id;
  }

  /// Copy of this field with one more (or a replaced) query; shares entries.
  SyntheticField with_query(const Query& q, EmbeddingMatrix embedding) const {
    SyntheticField copy = *this;
    copy.add_query(q, std::move(embedding));
    return copy;
  }

  bool has_query(const std::string& id) const { return entries_.count(id) != 0; }

  const Entry& entry(const std::string& id) const {
    auto it = entries_.find(id);
    if (it == entries_.end()) fail(ErrorCode::kNotFound, "unknown query id '" + id + "'");
    return *it->second;
  }

  const std::map<std::string, std::shared_ptr<const Entry>>& entries() const { return entries_; }

  Vector point(const Query& q, std::span<const double> v) const {
    const auto& e = entry(q.id);
    if (v.empty()) return e.pooled;
    require(v.size() == params_.dim, ErrorCode::kDimensionMismatch, "perturbation dimension mismatch");
    return added(e.pooled, v);
  }

  double probability(const Query& q, std::span<const double> v = {}) const {
    return params_.refusal_probability(point(q, v));
  }

  // ModelBackend
  std::size_t embed_dim() const override { return params_.dim; }
  BackendCapabilities capabilities() const override {
    return {deterministic_, true, true};
  }
  std::string model_id() const override { return model_id_; }
  void set_model_id(std::string id) { model_id_ = std::move(id); }

  RefusalSample sample_refusals(const SampleRequest& r) const override {
    require(r.n >= 1, ErrorCode::kInvalidInput, "sample count must be >= 1");
    const double p = probability(r.query, r.perturbation);
    RefusalSample s;
    s.bits.resize(static_cast<std::size_t>(r.n));
    if (deterministic_) {
      std::fill(s.bits.begin(), s.bits.end(), p >= 0.5 ? 1 : 0);
    } else {
      const CounterRng rng(r.key, r.stream);
      for (int i = 0; i < r.n; ++i) s.bits[static_cast<std::size_t>(i)] = rng.bernoulli(i, p) ? 1 : 0;
    }
    if (r.return_responses) {
      std::vector<std::string> texts;
      texts.reserve(s.bits.size());
      for (auto b : s.bits) texts.push_back(b ? refusal_text_ : comply_text_);
      s.responses = std::move(texts);
    }
    return s;
  }

  std::string generate(const Query& q, std::uint64_t key, std::uint64_t stream,
                       const std::optional<std::string>&) const override {
    const double p = probability(q);
    const bool refuse = deterministic_ ? p >= 0.5 : CounterRng(key, stream).bernoulli(0, p);
    return refuse ? refusal_text_ : comply_text_;
  }

  std::optional<Vector> analytic_loss_gradient(const Query& q, std::span<const double> v) const override {
    Vector g = params_.probability_gradient(point(q, v));
    for (auto& x : g) x = -x;
    return g;
  }

  std::optional<double> analytic_loss(const Query& q, std::span<const double> v) const override {
    return 1.0 - probability(q, v);
  }

  std::optional<std::string> resolve_text(std::string_view text) const override {
    auto it = text_index_.find(std::string(text));
    if (it == text_index_.end()) return std::nullopt;
    return it->second;
  }

 private:
  FieldParams params_;
  bool deterministic_ = false;
  std::string refusal_text_ = "I'm sorry, but I cannot help with that request.";
  std::string comply_text_ = "Sure, here is a detailed answer to your request.";
  std::string model_id_ = "synthetic-field";
  std::map<std::string, std::shared_ptr<const Entry>> entries_;
  std::unordered_map<std::string, std::string> text_index_;
};

inline Json field_to_json(const SyntheticField& field) {
  Json j{{"kind", "synthetic_field"},
         {"field", field.params()},
         {"deterministic", field.deterministic()},
         {"refusal_text", field.refusal_text()},
         {"comply_text", field.comply_text()},
         {"model_id", field.model_id()}};
  Json queries = Json::array();
  for (const auto& [id, entry] : field.entries()) {
    queries.push_back(Json{{"id", id}, {"text", entry->text}, {"embedding", entry->embedding}});
  }
  j["queries"] = std::move(queries);
  return j;
}

inline SyntheticField field_from_json(const Json& j) {
  SyntheticField field(j.at("field").get<FieldParams>(), j.value("deterministic", false));
  SyntheticField defaults;
  field.set_response_texts(j.value("refusal_text", defaults.refusal_text()),
                           j.value("comply_text", defaults.comply_text()));
  field.set_model_id(j.value("model_id", std::string("synthetic-field")));
  if (j.contains("queries")) {
    for (const auto& q : j.at("queries")) {
      Query query{q.at("id").get<std::string>(), q.value("text", std::string()), std::nullopt, {}};
      field.add_query(query, q.at("embedding").get<EmbeddingMatrix>());
    }
  }
  return field;
}

}  // namespace refguard
