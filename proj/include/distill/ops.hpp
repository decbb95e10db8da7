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

// Differentiable operations on Tensor. Binary elementwise ops broadcast a
// dimension of size 1 (row vectors, column vectors and scalars) against the
// other operand.

#include <span>
#include <vector>

#include "distill/rng.hpp"
#include "distill/tensor.hpp"

namespace distill {

Tensor matmul(const Tensor& a, const Tensor& b);

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double s);

Tensor tanh(const Tensor& x);
Tensor sigmoid(const Tensor& x);
// Throws DomainError on any non-positive input.
Tensor log(const Tensor& x);
Tensor exp(const Tensor& x);

// Normalizes along `axis` with max subtraction. For rank <= 1 the only
// valid axis is 0.
Tensor softmax(const Tensor& x, std::size_t axis = 1);
Tensor log_softmax(const Tensor& x, std::size_t axis = 1);

Tensor concat(std::span<const Tensor> parts, std::size_t axis);
// Half-open range [begin, end) along axis.
Tensor slice(const Tensor& x, std::size_t axis, std::size_t begin, std::size_t end);

Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);

// Rows of `table` selected by `indices`; result is indices.size() x dim.
Tensor embedding_lookup(const Tensor& table, std::span<const int> indices);

inline constexpr double kLayerNormEpsilon = 1e-5;
// Per-row normalization over the last axis, then gain * x + bias.
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias,
                  double epsilon = kLayerNormEpsilon);

// GRU state update from precomputed gate pre-activations.
//   gi = x W_ih + b_ih, gh = h W_hh + b_hh, both batch x 3d laid out as
//   [reset | update | candidate]:
//   r = sigmoid(gi_r + gh_r), u = sigmoid(gi_u + gh_u)
//   n = tanh(gi_n + r * gh_n), h' = (1 - u) * n + u * h
Tensor gru_gates(const Tensor& gi, const Tensor& gh, const Tensor& h);

// Inverted dropout mask: entries are 0 with probability p, else 1/(1-p).
Matrix sample_dropout_mask(Eigen::Index rows, Eigen::Index cols, double p, Rng& rng);
// x times a pre-sampled constant mask.
Tensor dropout(const Tensor& x, const Matrix& mask);
// Samples a mask from rng and applies it. p == 0 returns x unchanged.
Tensor dropout_mask(const Tensor& x, double p, Rng& rng);

}  // namespace distill
