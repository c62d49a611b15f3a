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

#include <optional>
#include <span>
#include <string>

#include "refguard/backend.hpp"
#include "refguard/keywords.hpp"
#include "refguard/random.hpp"
#include "refguard/types.hpp"

namespace refguard {

inline RefusalLoss refusal_loss(std::span<const std::uint8_t> bits) {
  require(!bits.empty(), ErrorCode::kInvalidInput, "refusal sample is empty");
  int refusals = 0;
  for (auto b : bits) {
    require(b <= 1, ErrorCode::kInvalidInput, "refusal bit must be 0 or 1");
    refusals += b;
  }
  return RefusalLoss::from_counts(refusals, static_cast<int>(bits.size()));
}

inline RefusalLoss refusal_loss(const RefusalSample& sample) { return refusal_loss(sample.bits); }

inline SampleRequest make_sample_request(const Query& query, std::span<const double> perturbation,
                                         const DetectorConfig& config, std::uint64_t stream_tag) {
  SampleRequest r;
  r.query = query;
  r.perturbation.assign(perturbation.begin(), perturbation.end());
  r.n = config.n_samples;
  r.key = derive_key(config.seed, query.id);
  r.stream = stream_tag;
  r.system_prompt = config.system_prompt;
  return r;
}

/// Checks a backend answer against the request; throws a protocol error on
/// a wrong bit count or a response/bit disagreement.
inline void validate_sample(const SampleRequest& request, const RefusalSample& sample) {
  if (static_cast<int>(sample.bits.size()) != request.n) {
    fail(ErrorCode::kProtocol, "expected " + std::to_string(request.n) + " refusal bits, got " +
                                   std::to_string(sample.bits.size()));
  }
  for (auto b : sample.bits) {
    require(b <= 1, ErrorCode::kProtocol, "refusal bit must be 0 or 1");
  }
  if (sample.responses) {
    require(sample.responses->size() == sample.bits.size(), ErrorCode::kProtocol,
            "responses and bits differ in length");
  }
}

/// N refusal bits for `query` (optionally perturbed) from the (seed, query,
/// stream_tag) substream.
inline RefusalSample sample_refusals(const ModelBackend& backend, const Query& query,
                                     std::optional<std::span<const double>> perturbation,
                                     const DetectorConfig& config, std::uint64_t stream_tag) {
  if (perturbation && perturbation->size() != backend.embed_dim()) {
    fail(ErrorCode::kDimensionMismatch,
         "query " + query.id + ": perturbation has dimension " +
             std::to_string(perturbation->size()) + ", backend expects " +
             std::to_string(backend.embed_dim()));
  }
  const auto request = make_sample_request(
      query, perturbation.value_or(std::span<const double>{}), config, stream_tag);
  try {
    auto sample = backend.sample_refusals(request);
    validate_sample(request, sample);
    return sample;
  } catch (const Error& e) {
    throw e.with_context("query " + query.id);
  } catch (const std::exception& e) {
    throw Error(ErrorCode::kBackend, "query " + query.id + ": " + e.what());
  }
}

}  // namespace refguard
