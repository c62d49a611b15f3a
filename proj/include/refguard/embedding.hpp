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
#include <span>
#include <vector>

#include "refguard/error.hpp"
#include "refguard/types.hpp"

namespace refguard {

inline double dot(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

inline double l2_norm(std::span<const double> a) { return std::sqrt(dot(a, a)); }

inline Vector scaled(std::span<const double> a, double s) {
  Vector out(a.begin(), a.end());
  for (auto& x : out) x *= s;
  return out;
}

inline Vector added(std::span<const double> a, std::span<const double> b) {
  require(a.size() == b.size(), ErrorCode::kDimensionMismatch, "vector sizes differ");
  Vector out(a.begin(), a.end());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += b[i];
  return out;
}

/// Token-level embedding of one query, row-major n x d.
class EmbeddingMatrix {
 public:
  EmbeddingMatrix() = default;

  EmbeddingMatrix(std::size_t rows, std::size_t dim, std::vector<double> values)
      : rows_(rows), dim_(dim), values_(std::move(values)) {
    require(rows_ >= 1 && dim_ >= 1, ErrorCode::kInvalidInput,
            "embedding matrix needs n >= 1 and d >= 1");
    require(values_.size() == rows_ * dim_, ErrorCode::kInvalidInput,
            "embedding matrix value count does not match n x d");
    for (double v : values_) {
      require(std::isfinite(v), ErrorCode::kInvalidInput, "embedding values must be finite");
    }
  }

  static EmbeddingMatrix from_rows(const std::vector<Vector>& rows) {
    require(!rows.empty(), ErrorCode::kInvalidInput, "embedding matrix needs at least one row");
    const std::size_t d = rows.front().size();
    std::vector<double> values;
    values.reserve(rows.size() * d);
    for (const auto& r : rows) {
      require(r.size() == d, ErrorCode::kInvalidInput, "ragged embedding rows");
      values.insert(values.end(), r.begin(), r.end());
    }
    return EmbeddingMatrix(rows.size(), d, std::move(values));
  }

  std::size_t rows() const { return rows_; }
  std::size_t dim() const { return dim_; }
  std::span<const double> row(std::size_t i) const { return {values_.data() + i * dim_, dim_}; }
  std::span<double> row(std::size_t i) { return {values_.data() + i * dim_, dim_}; }
  const std::vector<double>& values() const { return values_; }

  friend bool operator==(const EmbeddingMatrix&, const EmbeddingMatrix&) = default;

 private:
  std::size_t rows_ = 0;
  std::size_t dim_ = 0;
  std::vector<double> values_;
};

inline void to_json(Json& j, const EmbeddingMatrix& e) {
  Json rows = Json::array();
  for (std::size_t i = 0; i < e.rows(); ++i) {
    auto r = e.row(i);
    rows.push_back(Vector(r.begin(), r.end()));
  }
  j = rows;
}

inline void from_json(const Json& j, EmbeddingMatrix& e) {
  e = EmbeddingMatrix::from_rows(j.get<std::vector<Vector>>());
}

/// Component-wise mean over token rows.
inline Vector mean_pool(const EmbeddingMatrix& e) {
  Vector out(e.dim(), 0.0);
  for (std::size_t i = 0; i < e.rows(); ++i) {
    auto r = e.row(i);
    for (std::size_t j = 0; j < e.dim(); ++j) out[j] += r[j];
  }
  const double inv = 1.0 / static_cast<double>(e.rows());
  for (auto& x : out) x *= inv;
  return out;
}

/// Adds v to every row.
inline EmbeddingMatrix broadcast_add(const EmbeddingMatrix& e, std::span<const double> v) {
  if (v.size() != e.dim()) {
    fail(ErrorCode::kDimensionMismatch, "broadcast_add: vector has dimension " +
                                            std::to_string(v.size()) + ", matrix has " +
                                            std::to_string(e.dim()));
  }
  EmbeddingMatrix out = e;
  for (std::size_t i = 0; i < out.rows(); ++i) {
    auto r = out.row(i);
    for (std::size_t j = 0; j < out.dim(); ++j) r[j] += v[j];
  }
  return out;
}

}  // namespace refguard
