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

// Empirical error of the zeroth-order gradient estimate against the closed-form
// gradient of a synthetic field, over a grid of (N, P) and a set of seeds.
// The bound bookkeeping (eps_f, delta_g, r, L, eps, delta) is reported as
// labeled diagnostics only; nothing downstream consumes it.

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "refguard/gradient.hpp"
#include "refguard/synthetic_field.hpp"

namespace refguard {

enum class ProbeMode { kLiteral, kNormalized };

inline const char* probe_mode_name(ProbeMode m) { return m == ProbeMode::kLiteral ? "literal" : "normalized"; }

struct ProbeDiagnostics {
  double p = 0.0;              // refusal probability at the probe point
  double grad_norm = 0.0;      // closed-form |grad phi|
  double eps_f = 0.0;          // chosen loss-error level
  double chebyshev = 0.0;      // lower bound on Pr(|phi - f| < eps_f)
  double lipschitz = 0.0;      // L, estimated from closed-form gradients near the point
  double delta_g = 0.0;        // chosen failure probability of the direction average
  double r = 0.0;              // smallest r satisfying the direction-count condition
  double epsilon = 0.0;        // resulting error level
  double delta = 0.0;          // resulting failure probability
};

struct ProbeCell {
  int n_samples = 0;
  int n_directions = 0;
  double median_error = 0.0;
  double p90_error = 0.0;
  std::vector<double> errors;  // one per (seed, probe point)
  ProbeDiagnostics diagnostics;
};

struct ErrorProbeReport {
  ProbeMode mode = ProbeMode::kNormalized;
  double mu = 0.0;
  std::size_t seeds = 0;
  std::vector<ProbeCell> cells;
};

struct ProbeOptions {
  ProbeMode mode = ProbeMode::kNormalized;
  double eps_f = 0.1;
  double delta_g = 0.1;
};

/// Nearest-rank percentile: the ceil(q * n)-th smallest value (1-based).
inline double nearest_rank(std::vector<double> values, double q) {
  require(!values.empty(), ErrorCode::kInvalidInput, "percentile of an empty list");
  std::sort(values.begin(), values.end());
  const double rank = std::ceil(q * static_cast<double>(values.size()) - 1e-12);
  const auto idx = static_cast<std::size_t>(std::clamp(rank, 1.0, static_cast<double>(values.size()))) - 1;
  return values[idx];
}

namespace detail {

inline double lipschitz_estimate(const ModelBackend& field, const Query& q, double mu, std::uint64_t seed) {
  const std::size_t d = field.embed_dim();
  const auto g0 = *field.analytic_loss_gradient(q, {});
  const auto dirs = sample_directions(16, d, mix_seed(seed, 0x4c));
  double best = 0.0;
  for (const auto& u : dirs.directions) {
    const Vector v = scaled(u, mu);
    const auto g1 = *field.analytic_loss_gradient(q, v);
    Vector diff(d);
    for (std::size_t j = 0; j < d; ++j) diff[j] = g1[j] - g0[j];
    best = std::max(best, l2_norm(diff) / l2_norm(v));
  }
  return best;
}

inline ProbeDiagnostics diagnostics_for(double p, double grad_norm, double lipschitz, std::size_t d, int n,
                                        int P, double mu, const ProbeOptions& opt) {
  ProbeDiagnostics diag;
  diag.p = p;
  diag.grad_norm = grad_norm;
  diag.eps_f = opt.eps_f;
  diag.delta_g = opt.delta_g;
  diag.lipschitz = lipschitz;
  const double var = p * (1.0 - p);
  const double ef2 = opt.eps_f * opt.eps_f;
  diag.chebyshev = 1.0 - var / (static_cast<double>(n) * ef2);
  const double dd = static_cast<double>(d);
  const double inner = 3.0 * grad_norm * grad_norm + lipschitz * lipschitz * mu * mu / 4.0 * (dd + 2) * (dd + 4) +
                       4.0 * ef2 / (mu * mu);
  diag.r = std::sqrt(3.0 * dd / static_cast<double>(P) * inner / opt.delta_g);
  diag.epsilon = std::sqrt(dd) * lipschitz * mu + diag.r + std::sqrt(dd) * opt.eps_f / mu;
  diag.delta = opt.delta_g + var / ef2 / n - var / ef2 * opt.delta_g / n;
  return diag;
}

}  // namespace detail

/// Error of g against c * grad(phi) at each probe query, c = P in literal mode
/// and 1 in normalized mode.
inline ErrorProbeReport error_probe(const ModelBackend& field, const std::vector<Query>& probes,
                                    const std::vector<std::pair<int, int>>& grid,
                                    const std::vector<std::uint64_t>& seeds, double mu,
                                    const ProbeOptions& options = {}) {
  if (!field.capabilities().analytic_gradient) {
    fail(ErrorCode::kUnsupported, "error probe needs a backend with a closed-form gradient");
  }
  require(!probes.empty() && !grid.empty() && !seeds.empty(), ErrorCode::kInvalidInput,
          "error probe needs probe points, an (N, P) grid and seeds");
  ErrorProbeReport report;
  report.mode = options.mode;
  report.mu = mu;
  report.seeds = seeds.size();
  const std::size_t d = field.embed_dim();
  for (const auto& [n, P] : grid) {
    ProbeCell cell;
    cell.n_samples = n;
    cell.n_directions = P;
    const double c = options.mode == ProbeMode::kLiteral ? static_cast<double>(P) : 1.0;
    for (const auto& q : probes) {
      const auto grad_phi = field.analytic_loss_gradient(q, {});
      if (!grad_phi) fail(ErrorCode::kUnsupported, "backend returned no closed-form gradient for " + q.id);
      for (auto seed : seeds) {
        DetectorConfig cfg;
        cfg.n_samples = n;
        cfg.n_directions = P;
        cfg.mu = mu;
        cfg.seed = seed;
        cfg.normalize_by_p = options.mode == ProbeMode::kNormalized;
        const auto est = estimate_gradient(field, q, cfg);
        Vector diff(d);
        for (std::size_t j = 0; j < d; ++j) diff[j] = est.vector[j] - c * (*grad_phi)[j];
        cell.errors.push_back(l2_norm(diff));
      }
    }
    std::vector<double> sorted = cell.errors;
    std::sort(sorted.begin(), sorted.end());
    const std::size_t m = sorted.size();
    cell.median_error = m % 2 ? sorted[m / 2] : 0.5 * (sorted[m / 2 - 1] + sorted[m / 2]);
    cell.p90_error = nearest_rank(sorted, 0.9);
    const auto& q0 = probes.front();
    const double phi = field.analytic_loss(q0, {}).value_or(0.0);
    const double gnorm = l2_norm(*field.analytic_loss_gradient(q0, {}));
    cell.diagnostics = detail::diagnostics_for(1.0 - phi, gnorm, detail::lipschitz_estimate(field, q0, mu, seeds[0]),
                                               d, n, P, mu, options);
    report.cells.push_back(std::move(cell));
  }
  return report;
}

inline const ProbeCell& probe_cell(const ErrorProbeReport& r, int n, int p) {
  for (const auto& c : r.cells) {
    if (c.n_samples == n && c.n_directions == p) return c;
  }
  fail(ErrorCode::kNotFound, "no probe cell for N=" + std::to_string(n) + ", P=" + std::to_string(p));
}

inline Json error_probe_json(const ErrorProbeReport& r) {
  Json cells = Json::array();
  for (const auto& c : r.cells) {
    const auto& g = c.diagnostics;
    cells.push_back(Json{{"N", c.n_samples},
                         {"P", c.n_directions},
                         {"median_error", c.median_error},
                         {"p90_error", c.p90_error},
                         {"diagnostics",
                          {{"p", g.p},
                           {"grad_norm", g.grad_norm},
                           {"eps_f", g.eps_f},
                           {"chebyshev_bound", g.chebyshev},
                           {"L", g.lipschitz},
                           {"delta_g", g.delta_g},
                           {"r", g.r},
                           {"epsilon", g.epsilon},
                           {"delta", g.delta}}}});
  }
  return Json{{"mode", probe_mode_name(r.mode)}, {"mu", r.mu}, {"seeds", r.seeds}, {"cells", cells}};
}

/// A smooth field (the default benchmark's logistic part, no bumps) with a
/// probe query at a moderate refusal probability.
inline SyntheticField default_probe_field(Query* probe_out = nullptr) {
  FieldParams f;
  f.dim = 8;
  f.w.assign(8, 0.0);
  f.w[0] = 1.0;
  f.b = 0.0;
  f.sharpness = 4.0;
  SyntheticField field(f);
  Query q{"probe-0", "probe point", std::nullopt, {}};
  Vector pooled(8, 0.0);
  pooled[0] = 0.1;
  std::vector<Vector> rows(3, pooled);
  rows[0][1] += 0.3;
  rows[1][1] -= 0.3;
  field.add_query(q, EmbeddingMatrix::from_rows(rows));
  if (probe_out) *probe_out = q;
  return field;
}

}  // namespace refguard
