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

#include <algorithm>
#include <future>
#include <optional>
#include <span>
#include <thread>
#include <vector>

#include "refguard/backend.hpp"
#include "refguard/refusal.hpp"

namespace refguard {

struct DispatchResult {
  std::vector<std::optional<RefusalSample>> samples;
  std::vector<std::optional<Error>> errors;
};

namespace detail {

inline void run_chunk(const ModelBackend& backend, std::span<const SampleRequest> requests,
                      std::size_t offset, DispatchResult& out) {
  try {
    auto samples = backend.sample_batch(requests);
    require(samples.size() == requests.size(), ErrorCode::kProtocol, "backend returned wrong batch size");
    for (std::size_t i = 0; i < requests.size(); ++i) {
      validate_sample(requests[i], samples[i]);
      out.samples[offset + i] = std::move(samples[i]);
    }
    return;
  } catch (const std::exception&) {
    // fall through and isolate the failing requests one at a time
  }
  for (std::size_t i = 0; i < requests.size(); ++i) {
    try {
      auto one = backend.sample_batch(requests.subspan(i, 1));
      require(one.size() == 1, ErrorCode::kProtocol, "backend returned wrong batch size");
      validate_sample(requests[i], one[0]);
      out.samples[offset + i] = std::move(one[0]);
    } catch (const Error& e) {
      out.errors[offset + i] = e.with_context("query " + requests[i].query.id);
    } catch (const std::exception& e) {
      out.errors[offset + i] = Error(ErrorCode::kBackend, "query " + requests[i].query.id + ": " + e.what());
    }
  }
}

}  // namespace detail

/// Sends `requests` to the backend in batches of at most `max_batch`. Batches
/// run on up to `workers` threads; every slot gets either a sample or an error.
inline DispatchResult dispatch_requests(const ModelBackend& backend, std::span<const SampleRequest> requests,
                                        std::size_t max_batch, std::size_t workers = 0) {
  require(max_batch >= 1, ErrorCode::kInvalidInput, "max_parallel must be >= 1");
  DispatchResult out;
  out.samples.resize(requests.size());
  out.errors.resize(requests.size());
  const std::size_t chunks = (requests.size() + max_batch - 1) / max_batch;
  if (workers == 0) workers = std::max(1u, std::thread::hardware_concurrency());
  workers = std::min(workers, chunks);
  if (workers <= 1) {
    for (std::size_t c = 0; c < chunks; ++c) {
      const std::size_t begin = c * max_batch;
      const std::size_t len = std::min(max_batch, requests.size() - begin);
      detail::run_chunk(backend, requests.subspan(begin, len), begin, out);
    }
    return out;
  }
  std::vector<std::future<void>> tasks;
  for (std::size_t w = 0; w < workers; ++w) {
    tasks.push_back(std::async(std::launch::async, [&, w] {
      for (std::size_t c = w; c < chunks; c += workers) {
        const std::size_t begin = c * max_batch;
        const std::size_t len = std::min(max_batch, requests.size() - begin);
        detail::run_chunk(backend, requests.subspan(begin, len), begin, out);
      }
    }));
  }
  for (auto& t : tasks) t.get();
  return out;
}

}  // namespace refguard
