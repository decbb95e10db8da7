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


#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include "distill/errors.hpp"
#include "distill/gradcheck.hpp"
#include "distill/losses.hpp"
#include "distill/ops.hpp"
#include "test_util.hpp"

using namespace distill;
using distill::testing::random_distribution_rows;
using distill::testing::random_matrix;

namespace {

using Table = std::vector<std::vector<double>>;

Table to_table(const Matrix& m) {
  Table t(static_cast<std::size_t>(m.rows()), std::vector<double>(static_cast<std::size_t>(m.cols())));
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    for (Eigen::Index j = 0; j < m.cols(); ++j) t[i][j] = m(i, j);
  }
  return t;
}

// -1/L sum_l sum_u t[l][u] * logp[l][u], by plain loops.
double brute_cross_entropy(const Table& targets, const Table& logp) {
  double total = 0.0;
  for (std::size_t l = 0; l < targets.size(); ++l) {
    for (std::size_t u = 0; u < targets[l].size(); ++u) total -= targets[l][u] * logp[l][u];
  }
  return total / static_cast<double>(targets.size());
}

Table one_hot_rows(const std::vector<int>& tokens, std::size_t vocab) {
  Table t(tokens.size(), std::vector<double>(vocab, 0.0));
  for (std::size_t l = 0; l < tokens.size(); ++l) t[l][static_cast<std::size_t>(tokens[l])] = 1.0;
  return t;
}

Table mix_rows(const Table& teacher, const Table& hard, const std::vector<double>& w) {
  Table t = teacher;
  for (std::size_t l = 0; l < t.size(); ++l) {
    for (std::size_t u = 0; u < t[l].size(); ++u) t[l][u] = w[l] * teacher[l][u] + (1.0 - w[l]) * hard[l][u];
  }
  return t;
}

struct Case {
  Tensor logits;
  Tensor log_probs;
  SoftTarget teacher;
  std::vector<int> truth;
};

Case random_case(Eigen::Index steps, Eigen::Index vocab, Rng& rng) {
  Tensor logits = Tensor::parameter(random_matrix(steps, vocab, rng));
  std::vector<int> truth;
  for (Eigen::Index l = 0; l < steps; ++l) truth.push_back(static_cast<int>(rng.uniform_int(0, vocab - 1)));
  return {logits, log_softmax(logits, 1), SoftTarget(random_distribution_rows(steps, vocab, rng)), truth};
}

double scalar_weight(double p, double lambda) {
  const double c = std::pow(p, lambda);
  const double d = std::pow(1.0 - p, lambda);
  return c / (c + d);
}

}  // namespace

TEST_CASE("ce_loss minimum, uniform and brute-force values") {
  const std::size_t vocab = 6;
  const std::vector<int> tokens{2, 0, 5};
  const double eps = 0.1;
  Matrix target = smoothed_one_hot(tokens, vocab, eps);
  Tensor lp = Tensor::constant(target.array().log().matrix());
  double entropy = 0.0;
  for (Eigen::Index u = 0; u < target.cols(); ++u) entropy -= target(0, u) * std::log(target(0, u));
  CHECK(ce_loss(lp, tokens, eps).item() == doctest::Approx(entropy).epsilon(1e-14));

  Tensor uniform = log_softmax(Tensor::constant(Matrix::Zero(3, 6)), 1);
  CHECK(ce_loss(uniform, tokens, 0.0).item() == doctest::Approx(std::log(6.0)).epsilon(1e-14));

  Rng rng(21);
  for (int trial = 0; trial < 20; ++trial) {
    Case c = random_case(3, 6, rng);
    Table t = to_table(smoothed_one_hot(c.truth, 6, eps));
    for (const auto& row : t) CHECK(std::abs(std::accumulate(row.begin(), row.end(), 0.0) - 1.0) < 1e-12);
    const double oracle = brute_cross_entropy(t, to_table(c.log_probs.value()));
    CHECK(std::abs(ce_loss(c.log_probs, c.truth, eps).item() - oracle) < 1e-12);
  }
}

TEST_CASE("ce_loss padding, reduction and errors") {
  Rng rng(4);
  Case c = random_case(4, 5, rng);
  std::vector<int> padded = c.truth;
  padded[2] = kIgnoreToken;
  Table lp = to_table(c.log_probs.value());
  Table t = one_hot_rows({c.truth[0], c.truth[1], c.truth[3]}, 5);
  const double oracle = brute_cross_entropy(t, {lp[0], lp[1], lp[3]});
  CHECK(std::abs(ce_loss(c.log_probs, padded, 0.0).item() - oracle) < 1e-12);
  CHECK(std::abs(ce_loss(c.log_probs, padded, 0.0, Reduction::Sum).item() - 3.0 * oracle) < 1e-12);

  const std::vector<int> short_truth{1, 2};
  CHECK_THROWS_AS(ce_loss(c.log_probs, short_truth, 0.0), ContractError);
  const std::vector<int> outside{0, 1, 2, 9};
  CHECK_THROWS_AS(ce_loss(c.log_probs, outside, 0.0), ContractError);
  CHECK_THROWS_AS(ce_loss(c.log_probs, c.truth, 1.0), ConfigError);
}

TEST_CASE("kl_token_ts_loss degenerate and brute-force values") {
  Rng rng(5);
  Matrix p = random_distribution_rows(4, 7, rng);
  SoftTarget teacher(p);
  Tensor same = Tensor::constant(p.array().log().matrix());
  CHECK(kl_token_ts_loss(teacher, same).item() == doctest::Approx(teacher_entropy(teacher)).epsilon(1e-14));

  Case c = random_case(4, 7, rng);
  Matrix hot = Matrix::Zero(4, 7);
  for (int l = 0; l < 4; ++l) hot(l, c.truth[l]) = 1.0;
  CHECK(std::abs(kl_token_ts_loss(SoftTarget(hot), c.log_probs).item() - ce_loss(c.log_probs, c.truth, 0.0).item()) <
        1e-12);

  for (int trial = 0; trial < 20; ++trial) {
    Case r = random_case(4, 7, rng);
    const double oracle = brute_cross_entropy(to_table(r.teacher.probs), to_table(r.log_probs.value()));
    CHECK(std::abs(kl_token_ts_loss(r.teacher, r.log_probs).item() - oracle) < 1e-12);
  }
  Case wrong = random_case(3, 7, rng);
  CHECK_THROWS_AS(kl_token_ts_loss(SoftTarget(p), wrong.log_probs), ContractError);
}

TEST_CASE("seq_ts_loss is ce_loss on the teacher tokens without smoothing") {
  Rng rng(6);
  for (int trial = 0; trial < 100; ++trial) {
    Case c = random_case(5, 9, rng);
    const double seq = seq_ts_loss(c.log_probs, c.truth).item();
    CHECK(std::abs(seq - ce_loss(c.log_probs, c.truth, 0.0).item()) < 1e-12);
    const double oracle = brute_cross_entropy(one_hot_rows(c.truth, 9), to_table(c.log_probs.value()));
    CHECK(std::abs(seq - oracle) < 1e-12);
  }
  Case one = random_case(1, 9, rng);
  CHECK(std::abs(seq_ts_loss(one.log_probs, one.truth).item() + one.log_probs.value()(0, one.truth[0])) < 1e-15);
}

TEST_CASE("adaptive_weights scalar cases") {
  const Matrix row = distill::testing::from_rows({{0.8, 0.2}});
  const std::vector<int> truth{0};
  AdaptiveWeights aw = adaptive_weights(SoftTarget(row), truth, 1.0);
  CHECK(aw.c[0] == 0.8);
  CHECK(std::abs(aw.d[0] - 0.2) < 1e-15);
  CHECK(aw.w[0] == 0.8);

  const Matrix half = distill::testing::from_rows({{0.5, 0.5}});
  aw = adaptive_weights(SoftTarget(half), truth, 0.25);
  CHECK(aw.c[0] == std::pow(0.5, 0.25));
  CHECK(aw.c[0] == aw.d[0]);
  CHECK(aw.w[0] == 0.5);

  const Matrix nine = distill::testing::from_rows({{0.9, 0.1}});
  aw = adaptive_weights(SoftTarget(nine), truth, 0.25);
  const double oracle = std::pow(0.9, 0.25) / (std::pow(0.9, 0.25) + std::pow(0.1, 0.25));
  CHECK(std::abs(aw.w[0] - oracle) < 1e-15);

  CHECK_THROWS_AS(adaptive_weights(SoftTarget(row), truth, 0.0), ConfigError);
  CHECK_THROWS_AS(adaptive_weights(SoftTarget(row), truth, -1.0), ConfigError);
}

TEST_CASE("adaptive_weights boundaries are exact for every lambda") {
  const Matrix rows = distill::testing::from_rows({{1.0, 0.0}, {0.0, 1.0}});
  const std::vector<int> truth{0, 0};
  for (double lambda : {1e-6, 0.1, 0.25, 1.0, 3.0, 50.0}) {
    AdaptiveWeights aw = adaptive_weights(SoftTarget(rows), truth, lambda);
    CHECK(aw.w[0] == 1.0);
    CHECK(aw.w[1] == 0.0);
  }
}

TEST_CASE("adaptive weight properties over random draws") {
  Rng rng(7);
  const std::vector<double> lambdas{0.1, 0.25, 1.0, 3.0};
  for (int trial = 0; trial < 10000; ++trial) {
    const double p1 = rng.uniform01();
    const double p2 = rng.uniform01();
    const Matrix rows = distill::testing::from_rows({{p1, 1.0 - p1}, {p2, 1.0 - p2}});
    const std::vector<int> truth{0, 0};
    for (double lambda : lambdas) {
      AdaptiveWeights aw = adaptive_weights(SoftTarget(rows), truth, lambda);
      CHECK(aw.w[0] >= 0.0);
      CHECK(aw.w[0] <= 1.0);
      if (p1 <= p2) CHECK(aw.w[0] <= aw.w[1]);
      if (p2 <= p1) CHECK(aw.w[1] <= aw.w[0]);
      CHECK(std::abs(aw.w[0] - scalar_weight(p1, lambda)) < 1e-12);
    }
    CHECK(adaptive_weights(SoftTarget(rows), truth, 1.0).w[0] == rows(0, 0));
    const double p = rng.uniform(0.01, 0.99);
    const Matrix mid = distill::testing::from_rows({{p, 1.0 - p}});
    const std::vector<int> one{0};
    CHECK(std::abs(adaptive_weights(SoftTarget(mid), one, 1e-6).w[0] - 0.5) < 1e-3);
  }
}

TEST_CASE("its_loss degenerate weights and brute force") {
  Rng rng(8);
  for (int trial = 0; trial < 50; ++trial) {
    Case c = random_case(5, 6, rng);
    CHECK(std::abs(its_loss(c.teacher, c.truth, c.log_probs, 1.0).item() -
                   kl_token_ts_loss(c.teacher, c.log_probs).item()) < 1e-12);
    CHECK(std::abs(its_loss(c.teacher, c.truth, c.log_probs, 0.0).item() - ce_loss(c.log_probs, c.truth, 0.0).item()) <
          1e-12);
    const Table target = mix_rows(to_table(c.teacher.probs), one_hot_rows(c.truth, 6), std::vector<double>(5, 0.5));
    const double oracle = brute_cross_entropy(target, to_table(c.log_probs.value()));
    CHECK(std::abs(its_loss(c.teacher, c.truth, c.log_probs, 0.5).item() - oracle) < 1e-12);
  }
  Case c = random_case(2, 4, rng);
  CHECK_THROWS_AS(its_loss(c.teacher, c.truth, c.log_probs, 1.5), ConfigError);
  CHECK_THROWS_AS(its_loss(c.teacher, c.truth, c.log_probs, -0.1), ConfigError);
}

TEST_CASE("cts_loss switches per step") {
  Rng rng(9);
  for (int trial = 0; trial < 50; ++trial) {
    Case c = random_case(6, 5, rng);
    std::vector<int> argmaxes;
    for (Eigen::Index l = 0; l < 6; ++l) {
      int best = 0;
      for (int u = 1; u < 5; ++u) {
        if (c.teacher.probs(l, u) > c.teacher.probs(l, best)) best = u;
      }
      argmaxes.push_back(best);
    }
    CHECK(std::abs(cts_loss(c.teacher, argmaxes, c.log_probs).item() -
                   kl_token_ts_loss(c.teacher, c.log_probs).item()) < 1e-12);
    std::vector<int> wrong;
    for (int a : argmaxes) wrong.push_back((a + 1) % 5);
    CHECK(std::abs(cts_loss(c.teacher, wrong, c.log_probs).item() - ce_loss(c.log_probs, wrong, 0.0).item()) < 1e-12);

    std::vector<int> mixed;
    std::vector<double> indicator;
    for (std::size_t l = 0; l < 6; ++l) {
      const bool take_teacher = l % 2 == 0;
      mixed.push_back(take_teacher ? argmaxes[l] : (argmaxes[l] + 2) % 5);
      indicator.push_back(take_teacher ? 1.0 : 0.0);
    }
    const Table target = mix_rows(to_table(c.teacher.probs), one_hot_rows(mixed, 5), indicator);
    const double oracle = brute_cross_entropy(target, to_table(c.log_probs.value()));
    CHECK(std::abs(cts_loss(c.teacher, mixed, c.log_probs).item() - oracle) < 1e-12);
  }
}

TEST_CASE("cts argmax ties go to the smallest index") {
  const Matrix tie = distill::testing::from_rows({{0.4, 0.4, 0.2}});
  const std::vector<int> first{0}, second{1};
  CHECK(cts_indicator_weights(SoftTarget(tie), first)[0] == 1.0);
  CHECK(cts_indicator_weights(SoftTarget(tie), second)[0] == 0.0);
}

TEST_CASE("ats_loss identities and brute force") {
  Rng rng(10);
  for (int trial = 0; trial < 50; ++trial) {
    Case c = random_case(5, 6, rng);
    const auto indicator = cts_indicator_weights(c.teacher, c.truth);
    CHECK(std::abs(ats_loss_with_weights(c.teacher, c.truth, c.log_probs, indicator).item() -
                   cts_loss(c.teacher, c.truth, c.log_probs).item()) < 1e-12);

    const AdaptiveWeights aw = adaptive_weights(c.teacher, c.truth, 0.25);
    std::vector<double> w;
    for (std::size_t l = 0; l < 5; ++l) w.push_back(scalar_weight(c.teacher.probs(static_cast<Eigen::Index>(l), c.truth[l]), 0.25));
    for (std::size_t l = 0; l < 5; ++l) CHECK(std::abs(aw.w[l] - w[l]) < 1e-15);
    const Table target = mix_rows(to_table(c.teacher.probs), one_hot_rows(c.truth, 6), w);
    for (const auto& row : target) {
      CHECK(std::abs(std::accumulate(row.begin(), row.end(), 0.0) - 1.0) < 1e-9);
      CHECK(*std::min_element(row.begin(), row.end()) >= 0.0);
    }
    const double oracle = brute_cross_entropy(target, to_table(c.log_probs.value()));
    CHECK(std::abs(ats_loss(c.teacher, c.truth, c.log_probs, 0.25).item() - oracle) < 1e-12);
  }

  // A teacher that puts all mass on the truth gives w = 1 everywhere.
  Case c = random_case(4, 6, rng);
  Matrix sure = Matrix::Zero(4, 6);
  for (int l = 0; l < 4; ++l) sure(l, c.truth[l]) = 1.0;
  for (double lambda : {0.1, 0.25, 1.0, 3.0}) {
    CHECK(std::abs(ats_loss(SoftTarget(sure), c.truth, c.log_probs, lambda).item() -
                   kl_token_ts_loss(SoftTarget(sure), c.log_probs).item()) < 1e-12);
  }
}

TEST_CASE("composite targets are distributions") {
  Rng rng(11);
  for (int trial = 0; trial < 200; ++trial) {
    Case c = random_case(4, 8, rng);
    std::vector<double> w;
    for (int l = 0; l < 4; ++l) w.push_back(rng.uniform01());
    for (const auto& weights : {w, cts_indicator_weights(c.teacher, c.truth), adaptive_weights(c.teacher, c.truth, 3.0).w}) {
      const Matrix t = interpolated_targets(c.teacher, c.truth, weights);
      CHECK((t.array() >= 0.0).all());
      for (Eigen::Index l = 0; l < t.rows(); ++l) CHECK(std::abs(t.row(l).sum() - 1.0) < 1e-9);
    }
  }
}

TEST_CASE("loss gradients match finite differences") {
  Rng rng(12);
  for (int trial = 0; trial < 10; ++trial) {
    Case c = random_case(4, 6, rng);
    const SoftTarget teacher = c.teacher;
    const std::vector<int> truth = c.truth;
    const Tensor logits = c.logits;
    const std::vector<std::pair<const char*, std::function<Tensor()>>> losses{
        {"ce", [&] { return ce_loss(log_softmax(logits, 1), truth, 0.1); }},
        {"token_ts", [&] { return kl_token_ts_loss(teacher, log_softmax(logits, 1)); }},
        {"seq_ts", [&] { return seq_ts_loss(log_softmax(logits, 1), truth); }},
        {"its", [&] { return its_loss(teacher, truth, log_softmax(logits, 1), 0.3); }},
        {"cts", [&] { return cts_loss(teacher, truth, log_softmax(logits, 1)); }},
        {"ats", [&] { return ats_loss(teacher, truth, log_softmax(logits, 1), 0.25); }},
    };
    for (const auto& [name, fn] : losses) {
      GradCheckReport report = finite_difference_check(fn, {{"logits", logits}});
      INFO(name);
      CHECK(report.passed);
      CHECK(report.max_rel_error < 1e-4);
    }
  }
}

TEST_CASE("losses are invariant under a consistent vocabulary permutation") {
  Rng rng(13);
  const int vocab = 7;
  std::vector<int> perm(vocab);
  std::iota(perm.begin(), perm.end(), 0);
  std::shuffle(perm.begin(), perm.end(), rng.engine());
  for (int trial = 0; trial < 20; ++trial) {
    Case c = random_case(5, vocab, rng);
    Matrix lp2(5, vocab), t2(5, vocab);
    std::vector<int> truth2;
    for (int l = 0; l < 5; ++l) {
      for (int u = 0; u < vocab; ++u) {
        lp2(l, perm[u]) = c.log_probs.value()(l, u);
        t2(l, perm[u]) = c.teacher.probs(l, u);
      }
      truth2.push_back(perm[c.truth[static_cast<std::size_t>(l)]]);
    }
    const Tensor p2 = Tensor::constant(lp2);
    const SoftTarget teacher2(t2);
    CHECK(std::abs(ce_loss(c.log_probs, c.truth, 0.1).item() - ce_loss(p2, truth2, 0.1).item()) < 1e-12);
    CHECK(std::abs(kl_token_ts_loss(c.teacher, c.log_probs).item() - kl_token_ts_loss(teacher2, p2).item()) < 1e-12);
    CHECK(std::abs(its_loss(c.teacher, c.truth, c.log_probs, 0.4).item() - its_loss(teacher2, truth2, p2, 0.4).item()) <
          1e-12);
    CHECK(std::abs(ats_loss(c.teacher, c.truth, c.log_probs, 0.25).item() -
                   ats_loss(teacher2, truth2, p2, 0.25).item()) < 1e-12);
  }
}
