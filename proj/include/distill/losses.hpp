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

// Training objectives over student log-posteriors.
//
// Every loss takes the student's log-softmax output (one row per decoder
// step, |U| columns) and a per-step target distribution t_l, and evaluates
//
//   -sum_l sum_u t_l(u) log p^S_l(u)
//
// reduced by the number of valid steps (Reduction::Mean) or not at all
// (Reduction::Sum). Rows whose ground-truth/teacher token is kIgnoreToken, or
// whose SoftTarget row is marked invalid, are padding and contribute nothing.
// Teacher posteriors and adaptive weights are constants; gradients reach the
// student only.

#include <span>
#include <vector>

#include "distill/tensor.hpp"

namespace distill {

inline constexpr int kIgnoreToken = -1;

enum class Reduction { Mean, Sum };

// Teacher posteriors, detached from the teacher's graph.
struct SoftTarget {
  Matrix probs;
  std::vector<unsigned char> valid;  // empty: every row valid

  explicit SoftTarget(Matrix p, std::vector<unsigned char> v = {});
  std::size_t steps() const { return static_cast<std::size_t>(probs.rows()); }
  bool row_valid(std::size_t l) const { return valid.empty() || valid[l] != 0; }
};

struct AdaptiveWeights {
  std::vector<double> w;  // c / (c + d)
  std::vector<double> c;  // teacher confidence p^lambda
  std::vector<double> d;  // ground-truth confidence (1 - p)^lambda
  double lambda = 1.0;
};

Tensor ce_loss(const Tensor& log_probs, std::span<const int> targets, double smoothing,
               Reduction reduction = Reduction::Mean);

Tensor kl_token_ts_loss(const SoftTarget& teacher, const Tensor& log_probs,
                        Reduction reduction = Reduction::Mean);

// One-hot targets on the teacher's one-best sequence; identical to ce_loss
// with zero smoothing.
Tensor seq_ts_loss(const Tensor& log_probs, std::span<const int> teacher_tokens,
                   Reduction reduction = Reduction::Mean);

AdaptiveWeights adaptive_weights(const SoftTarget& teacher, std::span<const int> truth, double lambda);

// Fixed global interpolation w * teacher + (1 - w) * one-hot.
Tensor its_loss(const SoftTarget& teacher, std::span<const int> truth, const Tensor& log_probs, double w,
                Reduction reduction = Reduction::Mean);

// Teacher row where the teacher's argmax equals the truth, else one-hot.
Tensor cts_loss(const SoftTarget& teacher, std::span<const int> truth, const Tensor& log_probs,
                Reduction reduction = Reduction::Mean);

Tensor ats_loss(const SoftTarget& teacher, std::span<const int> truth, const Tensor& log_probs, double lambda,
                Reduction reduction = Reduction::Mean);

// AT/S objective with caller-provided per-step weights.
Tensor ats_loss_with_weights(const SoftTarget& teacher, std::span<const int> truth, const Tensor& log_probs,
                             std::span<const double> weights, Reduction reduction = Reduction::Mean);

// 1 where argmax_u teacher(l, u) == truth[l] (smallest index on ties), else 0.
std::vector<double> cts_indicator_weights(const SoftTarget& teacher, std::span<const int> truth);

// Target construction, shared by the losses above.
Matrix smoothed_one_hot(std::span<const int> tokens, std::size_t vocab_size, double smoothing);
Matrix interpolated_targets(const SoftTarget& teacher, std::span<const int> truth,
                            std::span<const double> weights);

// -sum(targets * log_probs) / count (Mean) or without division (Sum).
Tensor soft_target_cross_entropy(const Tensor& log_probs, const Matrix& targets, std::size_t count,
                                 Reduction reduction);

// Mean per-step entropy of the valid teacher rows.
double teacher_entropy(const SoftTarget& teacher);

}  // namespace distill
