// Copyright 2026  The distill Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//  http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <cmath>
#include <cstdint>

#include "distill/ops.hpp"
#include "distill/rng.hpp"
#include "distill/tensor.hpp"

namespace distill::testing {

inline Matrix random_matrix(Eigen::Index rows, Eigen::Index cols, Rng& rng, double lo = -2.0, double hi = 2.0) {
  Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = rng.uniform(lo, hi);
  return m;
}

inline Matrix from_rows(std::initializer_list<std::initializer_list<double>> rows) {
  Matrix m(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(rows.begin()->size()));
  Eigen::Index i = 0;
  for (const auto& r : rows) {
    Eigen::Index j = 0;
    for (double v : r) m(i, j++) = v;
    ++i;
  }
  return m;
}

// Row-stochastic matrix with strictly positive entries.
inline Matrix random_distribution_rows(Eigen::Index rows, Eigen::Index cols, Rng& rng) {
  Matrix m = random_matrix(rows, cols, rng, 0.05, 1.0);
  for (Eigen::Index i = 0; i < rows; ++i) m.row(i) /= m.row(i).sum();
  return m;
}

// Contracts an op output with fixed random weights so every output entry
// contributes to the scalar loss.
inline Tensor probe(const Tensor& out, const Matrix& weights) {
  return sum(mul(out, Tensor::constant(out.shape(), weights)));
}

}  // namespace distill::testing
