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

#include "distill/losses.hpp"

#include <cmath>
#include <string>

#include "distill/errors.hpp"

namespace distill {
namespace {

using Index = Eigen::Index;

constexpr double kRowSumTolerance = 1e-6;

void check_rows(const Tensor& log_probs, std::size_t steps, const char* what) {
  if (static_cast<std::size_t>(log_probs.rows()) != steps) {
    throw ContractError(std::string(what) + ": " + std::to_string(log_probs.rows()) +
                        " posterior rows but " + std::to_string(steps) + " target steps");
  }
}

void check_token(int tok, std::size_t vocab) {
  if (tok != kIgnoreToken && (tok < 0 || static_cast<std::size_t>(tok) >= vocab)) {
    throw ContractError("target token " + std::to_string(tok) + " outside vocabulary");
  }
}

void check_teacher(const SoftTarget& teacher, const Tensor& log_probs) {
  check_rows(log_probs, teacher.steps(), "teacher/student length mismatch");
  if (teacher.probs.cols() != log_probs.cols()) throw DimensionError("teacher and student vocabularies differ");
}

std::size_t valid_count(const SoftTarget& teacher, std::span<const int> truth) {
  std::size_t n = 0;
  for (std::size_t l = 0; l < teacher.steps(); ++l) {
    if (teacher.row_valid(l) && (truth.empty() || truth[l] != kIgnoreToken)) ++n;
  }
  return n;
}

}  // namespace

SoftTarget::SoftTarget(Matrix p, std::vector<unsigned char> v) : probs(std::move(p)), valid(std::move(v)) {
  if (!valid.empty() && valid.size() != steps()) throw ContractError("SoftTarget validity mask length mismatch");
  for (std::size_t l = 0; l < steps(); ++l) {
    if (!row_valid(l)) continue;
    const auto row = probs.row(static_cast<Index>(l));
    if ((row.array() < 0.0).any() || std::abs(row.sum() - 1.0) > kRowSumTolerance) {
      throw ContractError("teacher row " + std::to_string(l) + " is not a probability distribution");
    }
  }
}

Matrix smoothed_one_hot(std::span<const int> tokens, std::size_t vocab_size, double smoothing) {
  if (smoothing < 0.0 || smoothing >= 1.0) throw ConfigError("label smoothing must be in [0, 1)");
  const auto u = static_cast<Index>(vocab_size);
  Matrix t = Matrix::Zero(static_cast<Index>(tokens.size()), u);
  for (std::size_t l = 0; l < tokens.size(); ++l) {
    check_token(tokens[l], vocab_size);
    if (tokens[l] == kIgnoreToken) continue;
    auto row = t.row(static_cast<Index>(l));
    row.setConstant(smoothing / static_cast<double>(vocab_size));
    row(tokens[l]) += 1.0 - smoothing;
  }
  return t;
}

Tensor soft_target_cross_entropy(const Tensor& log_probs, const Matrix& targets, std::size_t count,
                                 Reduction reduction) {
  if (targets.rows() != log_probs.rows() || targets.cols() != log_probs.cols()) {
    throw DimensionError("targets and log-probabilities differ in shape");
  }
  if (count == 0) throw ContractError("loss over zero valid steps");
  const double norm = reduction == Reduction::Mean ? 1.0 / static_cast<double>(count) : 1.0;
  Matrix value(1, 1);
  value(0, 0) = -targets.cwiseProduct(log_probs.value()).sum() * norm;
  return Tensor::make_op("soft_target_cross_entropy", {}, std::move(value), {log_probs},
                         [targets, norm](const Node& n) {
                           n.inputs[0].accumulate_grad(targets * (-norm * n.grad(0, 0)));
                         });
}

Tensor ce_loss(const Tensor& log_probs, std::span<const int> targets, double smoothing, Reduction reduction) {
  check_rows(log_probs, targets.size(), "ce_loss");
  std::size_t count = 0;
  for (int t : targets) count += t != kIgnoreToken;
  Matrix t = smoothed_one_hot(targets, static_cast<std::size_t>(log_probs.cols()), smoothing);
  return soft_target_cross_entropy(log_probs, t, count, reduction);
}

Tensor kl_token_ts_loss(const SoftTarget& teacher, const Tensor& log_probs, Reduction reduction) {
  check_teacher(teacher, log_probs);
  Matrix t = teacher.probs;
  for (std::size_t l = 0; l < teacher.steps(); ++l) {
    if (!teacher.row_valid(l)) t.row(static_cast<Index>(l)).setZero();
  }
  return soft_target_cross_entropy(log_probs, t, valid_count(teacher, {}), reduction);
}

Tensor seq_ts_loss(const Tensor& log_probs, std::span<const int> teacher_tokens, Reduction reduction) {
  return ce_loss(log_probs, teacher_tokens, 0.0, reduction);
}

AdaptiveWeights adaptive_weights(const SoftTarget& teacher, std::span<const int> truth, double lambda) {
  if (!(lambda > 0.0) || !std::isfinite(lambda)) throw ConfigError("lambda must be a positive finite number");
  if (truth.size() != teacher.steps()) throw ContractError("adaptive_weights: truth/teacher length mismatch");
  AdaptiveWeights aw;
  aw.lambda = lambda;
  const auto steps = teacher.steps();
  aw.w.assign(steps, 0.0);
  aw.c.assign(steps, 0.0);
  aw.d.assign(steps, 0.0);
  for (std::size_t l = 0; l < steps; ++l) {
    check_token(truth[l], static_cast<std::size_t>(teacher.probs.cols()));
    if (truth[l] == kIgnoreToken || !teacher.row_valid(l)) continue;
    const double p = teacher.probs(static_cast<Index>(l), truth[l]);
    // 0^lambda = 0 for lambda > 0, so the endpoints are exact.
    if (p <= 0.0) {
      aw.c[l] = 0.0;
      aw.d[l] = 1.0;
    } else if (p >= 1.0) {
      aw.c[l] = 1.0;
      aw.d[l] = 0.0;
    } else {
      aw.c[l] = std::pow(p, lambda);
      aw.d[l] = std::pow(1.0 - p, lambda);
    }
    aw.w[l] = aw.c[l] / (aw.c[l] + aw.d[l]);
  }
  return aw;
}

Matrix interpolated_targets(const SoftTarget& teacher, std::span<const int> truth,
                            std::span<const double> weights) {
  if (truth.size() != teacher.steps() || weights.size() != teacher.steps()) {
    throw ContractError("interpolated_targets: length mismatch");
  }
  Matrix t = Matrix::Zero(teacher.probs.rows(), teacher.probs.cols());
  for (std::size_t l = 0; l < teacher.steps(); ++l) {
    check_token(truth[l], static_cast<std::size_t>(teacher.probs.cols()));
    if (truth[l] == kIgnoreToken || !teacher.row_valid(l)) continue;
    const double w = weights[l];
    if (!(w >= 0.0 && w <= 1.0)) throw ConfigError("interpolation weight outside [0, 1]");
    auto row = t.row(static_cast<Index>(l));
    row = w * teacher.probs.row(static_cast<Index>(l));
    row(truth[l]) += 1.0 - w;
  }
  return t;
}

Tensor ats_loss_with_weights(const SoftTarget& teacher, std::span<const int> truth, const Tensor& log_probs,
                             std::span<const double> weights, Reduction reduction) {
  check_teacher(teacher, log_probs);
  Matrix t = interpolated_targets(teacher, truth, weights);
  return soft_target_cross_entropy(log_probs, t, valid_count(teacher, truth), reduction);
}

Tensor its_loss(const SoftTarget& teacher, std::span<const int> truth, const Tensor& log_probs, double w,
                Reduction reduction) {
  if (!(w >= 0.0 && w <= 1.0)) throw ConfigError("IT/S weight must be in [0, 1]");
  std::vector<double> weights(teacher.steps(), w);
  return ats_loss_with_weights(teacher, truth, log_probs, weights, reduction);
}

std::vector<double> cts_indicator_weights(const SoftTarget& teacher, std::span<const int> truth) {
  if (truth.size() != teacher.steps()) throw ContractError("cts: truth/teacher length mismatch");
  std::vector<double> w(teacher.steps(), 0.0);
  for (std::size_t l = 0; l < teacher.steps(); ++l) {
    if (truth[l] == kIgnoreToken || !teacher.row_valid(l)) continue;
    const auto row = teacher.probs.row(static_cast<Index>(l));
    Index best = 0;
    for (Index u = 1; u < row.size(); ++u) {
      if (row(u) > row(best)) best = u;
    }
    w[l] = best == truth[l] ? 1.0 : 0.0;
  }
  return w;
}

Tensor cts_loss(const SoftTarget& teacher, std::span<const int> truth, const Tensor& log_probs,
                Reduction reduction) {
  check_teacher(teacher, log_probs);
  return ats_loss_with_weights(teacher, truth, log_probs, cts_indicator_weights(teacher, truth), reduction);
}

Tensor ats_loss(const SoftTarget& teacher, std::span<const int> truth, const Tensor& log_probs, double lambda,
                Reduction reduction) {
  check_teacher(teacher, log_probs);
  return ats_loss_with_weights(teacher, truth, log_probs, adaptive_weights(teacher, truth, lambda).w, reduction);
}

double teacher_entropy(const SoftTarget& teacher) {
  double total = 0.0;
  std::size_t n = 0;
  for (std::size_t l = 0; l < teacher.steps(); ++l) {
    if (!teacher.row_valid(l)) continue;
    for (Index u = 0; u < teacher.probs.cols(); ++u) {
      const double p = teacher.probs(static_cast<Index>(l), u);
      if (p > 0.0) total -= p * std::log(p);
    }
    ++n;
  }
  return n == 0 ? 0.0 : total / static_cast<double>(n);
}

}  // namespace distill
