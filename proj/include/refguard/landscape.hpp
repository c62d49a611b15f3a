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

// Two-dimensional refusal-loss landscape around a query set:
//
//   value(alpha, beta) = mean over x in X of f(e(x) + alpha * u + beta * v)
//
// with u, v fixed standard-normal directions. Axes include both endpoints.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <tuple>
#include <vector>

#include "refguard/dispatch.hpp"
#include "refguard/gradient.hpp"

namespace refguard {

struct LandscapeGrid {
  std::vector<double> alpha_values;
  std::vector<double> beta_values;
  std::vector<std::vector<double>> values;  // [alpha index][beta index]
  std::uint64_t u_seed = 0;
  std::uint64_t v_seed = 0;
  std::string query_set_id;
  int n_samples = 0;

  double at(std::size_t i, std::size_t j) const { return values.at(i).at(j); }
  double min_value() const;
  double max_value() const;
};

inline double LandscapeGrid::min_value() const {
  double m = INFINITY;
  for (const auto& row : values) {
    for (double x : row) m = std::min(m, x);
  }
  return m;
}

inline double LandscapeGrid::max_value() const {
  double m = -INFINITY;
  for (const auto& row : values) {
    for (double x : row) m = std::max(m, x);
  }
  return m;
}

/// lo, lo + step, ..., hi. Values within a tiny fraction of a step from zero
/// snap to exactly zero so the origin is a real grid point.
inline std::vector<double> landscape_axis(double lo, double hi, double step) {
  require(step > 0.0 && std::isfinite(step), ErrorCode::kInvalidInput, "landscape step must be > 0");
  require(hi > lo, ErrorCode::kInvalidInput, "landscape range needs hi > lo");
  const double span = (hi - lo) / step;
  const auto count = static_cast<std::size_t>(std::floor(span + 1e-9)) + 1;
  require(count <= 100001, ErrorCode::kInvalidInput, "landscape axis too long");
  std::vector<double> axis(count);
  for (std::size_t i = 0; i < count; ++i) {
    double x = lo + static_cast<double>(i) * step;
    if (std::abs(x) < 1e-9 * step) x = 0.0;
    axis[i] = x;
  }
  return axis;
}

/// Stream tag for one grid cell. Symmetric in the two (index, seed) pairs,
/// so swapping the direction seeds transposes the grid exactly.
inline std::uint64_t landscape_cell_stream(std::size_t i, std::uint64_t u_seed, std::size_t j,
                                           std::uint64_t v_seed) {
  const std::uint64_t a = splitmix64(u_seed + 0x9E3779B97F4A7C15ull * (static_cast<std::uint64_t>(i) + 1));
  const std::uint64_t b = splitmix64(v_seed + 0x9E3779B97F4A7C15ull * (static_cast<std::uint64_t>(j) + 1));
  const std::uint64_t lo = std::min(a, b), hi = std::max(a, b);
  return streams::landscape_cell(splitmix64(lo ^ splitmix64(hi)));
}

inline std::string query_set_id(const std::vector<Query>& queries) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (const auto& q : queries) h = splitmix64(h ^ fnv1a64(q.id));
  char buf[24];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

struct LandscapeOptions {
  std::uint64_t u_seed = 0;
  std::uint64_t v_seed = 0;
  std::size_t max_parallel = 256;
};

inline LandscapeOptions default_landscape_options(const DetectorConfig& config) {
  return {mix_seed(config.seed, 0x75), mix_seed(config.seed, 0x76), 256};
}

/// The origin cell samples the same base stream as detection's stage 1, so
/// value(0, 0) is the plain mean refusal loss of X.
inline LandscapeGrid landscape_grid(const ModelBackend& backend, const std::vector<Query>& queries, double lo,
                                    double hi, double step, const DetectorConfig& config,
                                    const LandscapeOptions& options) {
  config.validate();
  require(!queries.empty(), ErrorCode::kInvalidInput, "landscape query set is empty");
  LandscapeGrid grid;
  grid.alpha_values = landscape_axis(lo, hi, step);
  grid.beta_values = grid.alpha_values;
  grid.u_seed = options.u_seed;
  grid.v_seed = options.v_seed;
  grid.query_set_id = query_set_id(queries);
  grid.n_samples = config.n_samples;
  const std::size_t d = backend.embed_dim();
  const Vector u = sample_directions(1, d, options.u_seed).directions[0];
  const Vector v = sample_directions(1, d, options.v_seed).directions[0];
  const std::size_t na = grid.alpha_values.size(), nb = grid.beta_values.size();

  std::vector<SampleRequest> requests;
  requests.reserve(na * nb * queries.size());
  for (std::size_t i = 0; i < na; ++i) {
    for (std::size_t j = 0; j < nb; ++j) {
      const double alpha = grid.alpha_values[i], beta = grid.beta_values[j];
      const bool origin = alpha == 0.0 && beta == 0.0;
      Vector offset;
      if (!origin) {
        offset.resize(d);
        for (std::size_t k = 0; k < d; ++k) offset[k] = alpha * u[k] + beta * v[k];
      }
      const std::uint64_t tag = origin ? streams::kBase : landscape_cell_stream(i, options.u_seed, j, options.v_seed);
      for (const auto& q : queries) requests.push_back(make_sample_request(q, offset, config, tag));
    }
  }
  const auto result = dispatch_requests(backend, requests, options.max_parallel);
  grid.values.assign(na, std::vector<double>(nb, 0.0));
  std::size_t slot = 0;
  for (std::size_t i = 0; i < na; ++i) {
    for (std::size_t j = 0; j < nb; ++j) {
      double sum = 0.0;
      for (std::size_t k = 0; k < queries.size(); ++k, ++slot) {
        if (result.errors[slot]) {
          char ctx[96];
          std::snprintf(ctx, sizeof(ctx), "landscape cell (alpha=%.9g, beta=%.9g)", grid.alpha_values[i],
                        grid.beta_values[j]);
          throw result.errors[slot]->with_context(ctx);
        }
        sum += refusal_loss(*result.samples[slot]).value();
      }
      grid.values[i][j] = sum / static_cast<double>(queries.size());
    }
  }
  return grid;
}

inline LandscapeGrid landscape_grid(const ModelBackend& backend, const std::vector<Query>& queries, double lo,
                                    double hi, double step, const DetectorConfig& config) {
  return landscape_grid(backend, queries, lo, hi, step, config, default_landscape_options(config));
}

inline std::string format_g9(double x) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.9g", x);
  return buf;
}

inline std::string grid_csv(const LandscapeGrid& grid) {
  std::string out = "alpha,beta,value\n";
  for (std::size_t i = 0; i < grid.alpha_values.size(); ++i) {
    for (std::size_t j = 0; j < grid.beta_values.size(); ++j) {
      out += format_g9(grid.alpha_values[i]);
      out += ',';
      out += format_g9(grid.beta_values[j]);
      out += ',';
      out += format_g9(grid.values[i][j]);
      out += '\n';
    }
  }
  return out;
}

inline void export_grid(const LandscapeGrid& grid, const std::string& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(ErrorCode::kIo, "cannot open '" + path + "' for writing");
  const std::string text = grid_csv(grid);
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  if (!out) fail(ErrorCode::kIo, "write failed for '" + path + "'");
}

/// Reads the CSV written by export_grid. Values come back exactly as written.
inline LandscapeGrid parse_grid_csv(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line) || line != "alpha,beta,value") {
    fail(ErrorCode::kInvalidInput, "landscape CSV must start with 'alpha,beta,value'");
  }
  std::vector<double> alphas, betas;
  std::map<double, std::size_t> alpha_index, beta_index;
  std::vector<std::tuple<double, double, double>> rows;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    double a = 0, b = 0, v = 0;
    char tail = 0;
    if (std::sscanf(line.c_str(), "%lf,%lf,%lf%c", &a, &b, &v, &tail) != 3) {
      fail(ErrorCode::kInvalidInput, "malformed landscape CSV line " + std::to_string(line_no));
    }
    rows.emplace_back(a, b, v);
    if (!alpha_index.count(a)) {
      alpha_index[a] = alphas.size();
      alphas.push_back(a);
    }
    if (!beta_index.count(b)) {
      beta_index[b] = betas.size();
      betas.push_back(b);
    }
  }
  require(!rows.empty(), ErrorCode::kInvalidInput, "landscape CSV has no cells");
  require(rows.size() == alphas.size() * betas.size(), ErrorCode::kInvalidInput,
          "landscape CSV is not a full grid");
  LandscapeGrid grid;
  grid.alpha_values = alphas;
  grid.beta_values = betas;
  grid.values.assign(alphas.size(), std::vector<double>(betas.size(), NAN));
  for (const auto& [a, b, v] : rows) grid.values[alpha_index[a]][beta_index[b]] = v;
  for (const auto& row : grid.values) {
    for (double x : row) require(!std::isnan(x), ErrorCode::kInvalidInput, "landscape CSV has duplicate cells");
  }
  return grid;
}

inline LandscapeGrid import_grid(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::kIo, "cannot open '" + path + "'");
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_grid_csv(buf.str());
}

inline Json grid_metadata_json(const LandscapeGrid& g) {
  return Json{{"alpha_points", g.alpha_values.size()},
              {"beta_points", g.beta_values.size()},
              {"u_seed", g.u_seed},
              {"v_seed", g.v_seed},
              {"query_set_id", g.query_set_id},
              {"n_samples", g.n_samples},
              {"min", g.min_value()},
              {"max", g.max_value()}};
}

}  // namespace refguard
