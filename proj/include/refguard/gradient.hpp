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

// Zeroth-order estimate of the refusal-loss gradient:
//
//   g = sum_i [(f(e + mu * u_i) - f(e)) / mu] * u_i,   u_i ~ N(0, I_d)
//
// summed (not averaged) over the P directions unless normalize_by_p is set.
// The base term f(e) is evaluated once and shared by all P differences.

#include <cmath>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "refguard/backend.hpp"
#include "refguard/embedding.hpp"
#include "refguard/random.hpp"
#include "refguard/refusal.hpp"

namespace refguard {

struct DirectionSet {
  std::uint64_t seed = 0;
  std::size_t dim = 0;
  std::vector<Vector> directions;

  std::size_t count() const { return directions.size(); }
};

/// P standard-normal d-vectors; component (i, j) is draw i * d + j of the
/// direction-draw stream under `seed`.
inline DirectionSet sample_directions(std::size_t count, std::size_t dim, std::uint64_t seed) {
  require(count >= 1 && dim >= 1, ErrorCode::kInvalidInput, "sample_directions needs P >= 1, d >= 1");
  const CounterRng rng(seed, streams::kDirectionDraw);
  DirectionSet set{seed, dim, {}};
  set.directions.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    Vector u(dim);
    for (std::size_t j = 0; j < dim; ++j) u[j] = rng.normal(i * dim + j);
    set.directions.push_back(std::move(u));
  }
  return set;
}

/// Directions used when detecting `query` under `config`.
inline DirectionSet query_directions(const Query& query, const DetectorConfig& config, std::size_t dim) {
  return sample_directions(static_cast<std::size_t>(config.n_directions), dim,
                           derive_key(config.seed, query.id));
}

struct GradientEstimate {
  Vector vector;
  double norm = 0.0;
  RefusalLoss f_base;
  long long queries_used = 0;
  std::uint64_t direction_seed = 0;
  std::size_t n_directions = 0;
};

/// Accumulates the finite-difference sum in direction-index order.
/// `losses[i]` is f at e + mu * u_i.
inline Vector accumulate_directional_differences(const DirectionSet& directions,
                                                 std::span<const double> losses, double f_base,
                                                 double mu, bool normalize_by_p) {
  require(losses.size() == directions.count(), ErrorCode::kInternal,
          "loss count does not match direction count");
  Vector g(directions.dim, 0.0);
  for (std::size_t i = 0; i < directions.count(); ++i) {
    const double coeff = (losses[i] - f_base) / mu;
    if (!std::isfinite(coeff)) {
      fail(ErrorCode::kInternal, "non-finite directional difference at direction " + std::to_string(i));
    }
    const auto& u = directions.directions[i];
    for (std::size_t j = 0; j < g.size(); ++j) g[j] += coeff * u[j];
  }
  if (normalize_by_p) {
    const double inv = 1.0 / static_cast<double>(directions.count());
    for (auto& x : g) x *= inv;
  }
  for (std::size_t j = 0; j < g.size(); ++j) {
    if (!std::isfinite(g[j])) fail(ErrorCode::kInternal, "non-finite gradient component " + std::to_string(j));
  }
  return g;
}

/// Generic form over any loss functor `double(std::span<const double> v, std::size_t i)`,
/// where i is the direction index. Used for exact checks on analytic losses.
template <class LossFn>
Vector zeroth_order_gradient(LossFn&& loss_at, const DirectionSet& directions, double f_base,
                             double mu, bool normalize_by_p) {
  std::vector<double> losses;
  losses.reserve(directions.count());
  for (std::size_t i = 0; i < directions.count(); ++i) {
    const Vector v = scaled(directions.directions[i], mu);
    losses.push_back(loss_at(std::span<const double>(v), i));
  }
  return accumulate_directional_differences(directions, losses, f_base, mu, normalize_by_p);
}

/// Requests for the P perturbed evaluations of `query`.
inline std::vector<SampleRequest> perturbed_requests(const Query& query, const DirectionSet& directions,
                                                     const DetectorConfig& config) {
  std::vector<SampleRequest> out;
  out.reserve(directions.count());
  for (std::size_t i = 0; i < directions.count(); ++i) {
    const Vector v = scaled(directions.directions[i], config.mu);
    out.push_back(make_sample_request(query, v, config, streams::direction(i)));
  }
  return out;
}

inline RefusalLoss loss_from_checked(const SampleRequest& request, const RefusalSample& sample) {
  validate_sample(request, sample);
  return refusal_loss(sample);
}

/// Assembles an estimate from already-sampled perturbed losses.
inline GradientEstimate finish_gradient(const DirectionSet& directions, std::span<const double> losses,
                                        const RefusalLoss& f_base, const DetectorConfig& config,
                                        bool base_supplied) {
  GradientEstimate est;
  est.vector = accumulate_directional_differences(directions, losses, f_base.value(), config.mu,
                                                  config.normalize_by_p);
  est.norm = l2_norm(est.vector);
  est.f_base = f_base;
  est.queries_used = static_cast<long long>(config.n_samples) * config.n_directions +
                     (base_supplied ? 0 : config.n_samples);
  est.direction_seed = directions.seed;
  est.n_directions = directions.count();
  return est;
}

/// Backend-driven estimate. Reuses `f_base` when given, otherwise samples the
/// base term first (N more queries).
inline GradientEstimate estimate_gradient(const ModelBackend& backend, const Query& query,
                                          const DetectorConfig& config,
                                          std::optional<RefusalLoss> f_base = std::nullopt) {
  config.validate();
  const bool supplied = f_base.has_value();
  if (!f_base) {
    f_base = refusal_loss(sample_refusals(backend, query, std::nullopt, config, streams::kBase));
  }
  const auto directions = query_directions(query, config, backend.embed_dim());
  const auto requests = perturbed_requests(query, directions, config);
  std::vector<RefusalSample> samples;
  try {
    samples = backend.sample_batch(requests);
  } catch (const Error& e) {
    throw e.with_context("query " + query.id);
  }
  require(samples.size() == requests.size(), ErrorCode::kProtocol, "backend returned wrong batch size");
  std::vector<double> losses;
  losses.reserve(samples.size());
  for (std::size_t i = 0; i < samples.size(); ++i) {
    losses.push_back(loss_from_checked(requests[i], samples[i]).value());
  }
  return finish_gradient(directions, losses, *f_base, config, supplied);
}

inline Json direction_set_json(const DirectionSet& d) {
  return Json{{"seed", d.seed}, {"P", d.count()}, {"d", d.dim}};
}

inline Json gradient_estimate_json(const GradientEstimate& g) {
  return Json{{"seed", g.direction_seed},
              {"P", g.n_directions},
              {"d", g.vector.size()},
              {"norm", g.norm},
              {"queries_used", g.queries_used},
              {"f_base", g.f_base.value()}};
}

}  // namespace refguard
