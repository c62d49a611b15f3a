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
#include <atomic>
#include <mutex>
#include <set>
#include <string>
#include <vector>

#include "refguard/backend.hpp"
#include "refguard/embedding.hpp"
#include "refguard/synthetic_field.hpp"

namespace refguard::testing {

/// Forwards to another backend and records call shapes.
class RecordingBackend : public ModelBackend {
 public:
  explicit RecordingBackend(const ModelBackend& inner) : inner_(inner) {}

  std::size_t embed_dim() const override { return inner_.embed_dim(); }
  BackendCapabilities capabilities() const override { return inner_.capabilities(); }

  RefusalSample sample_refusals(const SampleRequest& r) const override {
    samples_ += r.n;
    return inner_.sample_refusals(r);
  }

  std::vector<RefusalSample> sample_batch(std::span<const SampleRequest> requests) const override {
    {
      std::lock_guard<std::mutex> lock(mu_);
      batch_sizes_.push_back(requests.size());
    }
    std::vector<RefusalSample> out;
    for (const auto& r : requests) out.push_back(sample_refusals(r));
    return out;
  }

  std::string generate(const Query& q, std::uint64_t key, std::uint64_t stream,
                       const std::optional<std::string>& sp) const override {
    {
      std::lock_guard<std::mutex> lock(mu_);
      generated_.push_back(q.id);
    }
    return inner_.generate(q, key, stream, sp);
  }

  long long samples() const { return samples_; }
  std::vector<std::size_t> batch_sizes() const {
    std::lock_guard<std::mutex> lock(mu_);
    return batch_sizes_;
  }
  std::vector<std::string> generated() const {
    std::lock_guard<std::mutex> lock(mu_);
    return generated_;
  }

 private:
  const ModelBackend& inner_;
  mutable std::atomic<long long> samples_{0};
  mutable std::mutex mu_;
  mutable std::vector<std::size_t> batch_sizes_;
  mutable std::vector<std::string> generated_;
};

/// Fails every request for the listed query ids.
class FailingBackend : public ModelBackend {
 public:
  FailingBackend(const ModelBackend& inner, std::set<std::string> failing)
      : inner_(inner), failing_(std::move(failing)) {}

  std::size_t embed_dim() const override { return inner_.embed_dim(); }
  BackendCapabilities capabilities() const override { return inner_.capabilities(); }
  RefusalSample sample_refusals(const SampleRequest& r) const override {
    if (failing_.count(r.query.id)) fail(ErrorCode::kBackend, "injected failure");
    return inner_.sample_refusals(r);
  }
  std::string generate(const Query& q, std::uint64_t key, std::uint64_t stream,
                       const std::optional<std::string>& sp) const override {
    return inner_.generate(q, key, stream, sp);
  }

 private:
  const ModelBackend& inner_;
  std::set<std::string> failing_;
};

/// Token rows with the given pooled mean.
inline EmbeddingMatrix rows_with_mean(const Vector& pooled, std::size_t rows = 3) {
  std::vector<Vector> out(rows, pooled);
  if (rows >= 2) {
    out[0][0] += 0.25;
    out[1][0] -= 0.25;
  }
  return EmbeddingMatrix::from_rows(out);
}

inline Query make_query(const std::string& id) { return Query{id, "text of " + id, std::nullopt, {}}; }

/// Linear field in the logistic-plus-bumps family is not exactly linear, so
/// exact estimator checks go through this functor instead.
struct LinearLoss {
  Vector a;
  Vector base;
  double operator()(std::span<const double> v, std::size_t) const {
    double s = 0.0;
    for (std::size_t j = 0; j < a.size(); ++j) s += a[j] * (base[j] + v[j]);
    return s;
  }
};

inline double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

}  // namespace refguard::testing
