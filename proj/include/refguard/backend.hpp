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

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "refguard/types.hpp"

namespace refguard {

struct BackendCapabilities {
  bool deterministic_field = false;
  bool text_responses = false;
  bool analytic_gradient = false;
};

/// One call's worth of refusal sampling. `key` is the per-(seed, query)
/// substream key and `stream` selects the substream; bit i must be drawn
/// from draw index i so batching never changes results.
struct SampleRequest {
  Query query;
  Vector perturbation;  // empty: unperturbed
  int n = 0;
  std::uint64_t key = 0;
  std::uint64_t stream = 0;
  bool return_responses = false;
  std::optional<std::string> system_prompt;
};

/// The pluggable model boundary. A perturbation v means "add v to the pooled
/// sentence embedding", which equals adding v to every token row.
class ModelBackend {
 public:
  virtual ~ModelBackend() = default;

  virtual std::size_t embed_dim() const = 0;
  virtual BackendCapabilities capabilities() const = 0;
  virtual std::string model_id() const { return "unknown"; }

  virtual RefusalSample sample_refusals(const SampleRequest& request) const = 0;

  /// Default dispatch is sequential; backends with real batching override.
  virtual std::vector<RefusalSample> sample_batch(std::span<const SampleRequest> requests) const {
    std::vector<RefusalSample> out;
    out.reserve(requests.size());
    for (const auto& r : requests) out.push_back(sample_refusals(r));
    return out;
  }

  /// One unperturbed response y ~ T(x).
  virtual std::string generate(const Query& query, std::uint64_t key, std::uint64_t stream,
                               const std::optional<std::string>& system_prompt) const = 0;

  /// Closed-form gradient of the refusal loss (1 - p) at the pooled embedding
  /// of `query` shifted by `perturbation`, when the backend has one.
  virtual std::optional<Vector> analytic_loss_gradient(const Query& /*query*/,
                                                       std::span<const double> /*perturbation*/) const {
    return std::nullopt;
  }

  /// Closed-form refusal loss 1 - p, when available.
  virtual std::optional<double> analytic_loss(const Query& /*query*/,
                                              std::span<const double> /*perturbation*/) const {
    return std::nullopt;
  }

  /// Map free text to a known query id, for callers (HTTP) that only see text.
  virtual std::optional<std::string> resolve_text(std::string_view /*text*/) const {
    return std::nullopt;
  }
};

}  // namespace refguard
