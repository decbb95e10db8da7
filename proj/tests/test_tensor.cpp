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

#include <cmath>
#include <cstring>
#include <filesystem>
#include <functional>

#include "distill/checkpoint.hpp"
#include "distill/errors.hpp"
#include "distill/gradcheck.hpp"
#include "distill/ops.hpp"
#include "test_util.hpp"

using namespace distill;
using distill::testing::from_rows;
using distill::testing::probe;
using distill::testing::random_matrix;

TEST_CASE("matmul hand cases") {
  Tensor id = Tensor::constant(from_rows({{1, 0}, {0, 1}}));
  Matrix abcd = from_rows({{1.5, -2}, {3, 4.25}});
  CHECK(matmul(id, Tensor::constant(abcd)).value() == abcd);
  Tensor row = Tensor::constant(from_rows({{1, 2}}));
  Tensor col = Tensor::constant(from_rows({{3}, {4}}));
  CHECK(matmul(row, col).value()(0, 0) == 11.0);
  CHECK_THROWS_AS(matmul(row, row), DimensionError);
}

TEST_CASE("softmax values and stability") {
  Tensor s = softmax(Tensor::constant(Shape{3}, Matrix::Zero(1, 3)), 0);
  for (int i = 0; i < 3; ++i) CHECK(s.value()(0, i) == doctest::Approx(1.0 / 3.0).epsilon(1e-15));
  Tensor big = softmax(Tensor::constant(from_rows({{1000.0, 0.0}})), 1);
  CHECK(std::isfinite(big.value()(0, 0)));
  CHECK(big.value()(0, 0) == doctest::Approx(1.0));
  CHECK(big.value()(0, 1) >= 0.0);
  CHECK(big.value()(0, 1) < 1e-300);

  Rng rng(3);
  for (int trial = 0; trial < 200; ++trial) {
    Tensor y = softmax(Tensor::constant(random_matrix(4, 7, rng, -30, 30)), 1);
    for (int r = 0; r < 4; ++r) {
      CHECK(std::abs(y.value().row(r).sum() - 1.0) <= 1e-9);
      CHECK((y.value().row(r).array() > 0.0).all());
    }
  }
}

TEST_CASE("elementwise analytic values") {
  CHECK(tanh(Tensor::scalar(0.0)).item() == 0.0);
  CHECK(sigmoid(Tensor::scalar(0.0)).item() == 0.5);
  CHECK(exp(Tensor::scalar(0.0)).item() == 1.0);
  CHECK_THROWS_AS(log(Tensor::scalar(0.0)), DomainError);
  CHECK_THROWS_AS(log(Tensor::constant(from_rows({{1.0, -1.0}}))), DomainError);

  Tensor x = Tensor::constant(Shape{4}, Matrix::Constant(1, 4, 2.5));
  Tensor gain = Tensor::constant(Shape{4}, Matrix::Ones(1, 4));
  Tensor bias = Tensor::constant(Shape{4}, Matrix::Zero(1, 4));
  Tensor y = layer_norm(x, gain, bias);
  CHECK(y.value().cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("broadcasting shapes") {
  Tensor a = Tensor::constant(Matrix::Ones(3, 4));
  Tensor row = Tensor::constant(Shape{4}, Matrix::Constant(1, 4, 2.0));
  Tensor col = Tensor::constant(Matrix::Constant(3, 1, 3.0));
  CHECK(add(a, row).shape() == Shape{3, 4});
  CHECK(mul(a, col).value()(2, 3) == 3.0);
  CHECK(add(row, row).shape() == Shape{4});
  CHECK_THROWS_AS(add(a, Tensor::constant(Matrix::Ones(2, 4))), DimensionError);
}

TEST_CASE("backward trivial gradients and accumulation") {
  Matrix w0 = from_rows({{0.5, -1.0, 2.0}});
  Tensor w = Tensor::parameter(Shape{3}, w0);
  backward(sum(w));
  CHECK(w.grad() == Matrix::Ones(1, 3));
  backward(sum(w));
  CHECK(w.grad() == Matrix::Constant(1, 3, 2.0));
  w.zero_grad();
  backward(scale(sum(mul(w, w)), 0.5));
  CHECK(w.grad() == w0);
  CHECK_THROWS_AS(backward(w), ContractError);
}

TEST_CASE("intermediate gradients do not double count on repeated backward") {
  Tensor w = Tensor::parameter(from_rows({{1.0, 2.0}}));
  Tensor loss = sum(mul(tanh(w), w));
  backward(loss);
  Matrix once = w.grad();
  w.zero_grad();
  backward(loss);
  backward(loss);
  CHECK((w.grad() - 2.0 * once).cwiseAbs().maxCoeff() < 1e-15);
}

TEST_CASE("no-grad guard records constants") {
  Tensor w = Tensor::parameter(from_rows({{1.0}}));
  NoGradGuard guard;
  Tensor y = mul(w, w);
  CHECK_FALSE(y.requires_grad());
}

TEST_CASE("finite difference check: quadratic") {
  Rng rng(11);
  Tensor w = Tensor::parameter(random_matrix(3, 3, rng));
  Matrix a = random_matrix(3, 3, rng);
  auto f = [&] { return sum(mul(mul(w, w), Tensor::constant(a))); };
  auto report = finite_difference_check(f, {{"w", w}}, 1e-5, 1e-7);
  CHECK(report.passed);
  CHECK(report.max_rel_error < 1e-7);
}

TEST_CASE("finite difference check detects a wrong backward rule") {
  Rng rng(5);
  Tensor w = Tensor::parameter(random_matrix(2, 3, rng));
  auto broken_square = [](const Tensor& x) {
    Matrix v = x.value().cwiseProduct(x.value());
    return Tensor::make_op("broken_square", x.shape(), v, {x}, [](const Node& n) {
      // d(x^2)/dx is 2x; this deliberately drops the factor 2.
      n.inputs[0].accumulate_grad(n.grad.cwiseProduct(n.inputs[0].value()));
    });
  };
  auto report = finite_difference_check([&] { return sum(broken_square(w)); }, {{"w", w}});
  CHECK_FALSE(report.passed);
}

namespace {

using UnaryCase = std::function<Tensor(const Tensor&)>;

// Draws fresh inputs in [-2, 2] for every trial and checks all input
// gradients against central differences.
void check_op_gradients(const char* name, int rows, int cols, int arity,
                        const std::function<Tensor(std::vector<Tensor>&)>& op, int trials = 100,
                        double lo = -2.0, double hi = 2.0) {
  Rng rng(std::hash<std::string>{}(name));
  double worst = 0.0;
  for (int trial = 0; trial < trials; ++trial) {
    std::vector<Tensor> inputs;
    std::vector<NamedTensor> named;
    for (int i = 0; i < arity; ++i) {
      inputs.push_back(Tensor::parameter(random_matrix(rows, cols, rng, lo, hi)));
      named.push_back({"in" + std::to_string(i), inputs.back()});
    }
    Tensor out = op(inputs);
    Matrix weights = random_matrix(out.rows(), out.cols(), rng);
    auto report = finite_difference_check([&] { return probe(op(inputs), weights); }, named, 1e-5, 1e-4);
    worst = std::max(worst, report.max_rel_error);
  }
  INFO(name << " max rel err " << worst);
  CHECK(worst < 1e-4);
}

}  // namespace

TEST_CASE("every op: analytic gradients agree with central differences") {
  check_op_gradients("matmul", 3, 3, 2, [](auto& in) { return matmul(in[0], in[1]); });
  check_op_gradients("matmul_rect", 3, 4, 1, [](auto& in) {
    static Rng r(9);
    static Tensor b = Tensor::constant(random_matrix(4, 2, r));
    return matmul(in[0], b);
  });
  check_op_gradients("add", 3, 4, 2, [](auto& in) { return add(in[0], in[1]); });
  check_op_gradients("add_broadcast", 3, 4, 2, [](auto& in) { return add(in[0], slice(in[1], 0, 0, 1)); });
  check_op_gradients("sub", 3, 4, 2, [](auto& in) { return sub(in[0], in[1]); });
  check_op_gradients("mul", 3, 4, 2, [](auto& in) { return mul(in[0], in[1]); });
  check_op_gradients("mul_column_broadcast", 3, 4, 2, [](auto& in) { return mul(slice(in[0], 1, 1, 2), in[1]); });
  check_op_gradients("scale", 3, 4, 1, [](auto& in) { return scale(in[0], -1.7); });
  check_op_gradients("tanh", 3, 4, 1, [](auto& in) { return tanh(in[0]); });
  check_op_gradients("sigmoid", 3, 4, 1, [](auto& in) { return sigmoid(in[0]); });
  check_op_gradients("exp", 3, 4, 1, [](auto& in) { return exp(in[0]); });
  check_op_gradients(
      "log", 3, 4, 1, [](auto& in) { return log(in[0]); }, 100, 0.1, 2.0);
  check_op_gradients("softmax_rows", 3, 5, 1, [](auto& in) { return softmax(in[0], 1); });
  check_op_gradients("softmax_cols", 3, 5, 1, [](auto& in) { return softmax(in[0], 0); });
  check_op_gradients("log_softmax", 3, 5, 1, [](auto& in) { return log_softmax(in[0], 1); });
  check_op_gradients("log_softmax_cols", 3, 5, 1, [](auto& in) { return log_softmax(in[0], 0); });
  check_op_gradients("concat_rows", 2, 3, 2, [](auto& in) { return concat(std::vector<Tensor>{in[0], in[1]}, 0); });
  check_op_gradients("concat_cols", 2, 3, 2, [](auto& in) { return concat(std::vector<Tensor>{in[0], in[1]}, 1); });
  check_op_gradients("slice", 4, 5, 1, [](auto& in) { return slice(in[0], 1, 1, 4); });
  check_op_gradients("sum", 3, 4, 1, [](auto& in) { return sum(in[0]); });
  check_op_gradients("mean", 3, 4, 1, [](auto& in) { return mean(in[0]); });
  check_op_gradients("embedding_lookup", 5, 3, 1, [](auto& in) {
    static const std::vector<int> idx{4, 0, 4, 2};
    return embedding_lookup(in[0], idx);
  });
  check_op_gradients("layer_norm", 3, 6, 3, [](auto& in) {
    return layer_norm(in[0], slice(in[1], 0, 0, 1), slice(in[2], 0, 1, 2));
  });
  check_op_gradients("gru_gates", 2, 6, 2, [](auto& in) {
    return gru_gates(in[0], in[1], slice(in[0], 1, 1, 3));
  });
  check_op_gradients("dropout", 3, 4, 1, [](auto& in) {
    static Rng r(17);
    static Matrix mask = sample_dropout_mask(3, 4, 0.3, r);
    return dropout(in[0], mask);
  });
}

TEST_CASE("composite GRU-step loss gradients") {
  Rng rng(23);
  const int d = 3;
  Tensor x = Tensor::parameter(random_matrix(2, 4, rng));
  Tensor h = Tensor::parameter(random_matrix(2, d, rng));
  Tensor w_ih = Tensor::parameter(random_matrix(4, 3 * d, rng));
  Tensor w_hh = Tensor::parameter(random_matrix(d, 3 * d, rng));
  Tensor b = Tensor::parameter(Shape{3 * d}, random_matrix(1, 3 * d, rng));
  Matrix probe_w = random_matrix(2, d, rng);
  auto step = [&] {
    Tensor gi = add(matmul(x, w_ih), b);
    Tensor gh = matmul(h, w_hh);
    Tensor r = sigmoid(add(slice(gi, 1, 0, d), slice(gh, 1, 0, d)));
    Tensor u = sigmoid(add(slice(gi, 1, d, 2 * d), slice(gh, 1, d, 2 * d)));
    Tensor n = tanh(add(slice(gi, 1, 2 * d, 3 * d), mul(r, slice(gh, 1, 2 * d, 3 * d))));
    Tensor hn = add(n, mul(u, sub(h, n)));
    return probe(hn, probe_w);
  };
  auto report = finite_difference_check(step, {{"x", x}, {"h", h}, {"w_ih", w_ih}, {"w_hh", w_hh}, {"b", b}});
  CHECK(report.passed);

  // The fused op computes the same update as the composed graph above.
  Tensor fused = gru_gates(add(matmul(x, w_ih), b), matmul(h, w_hh), h);
  Tensor gi = add(matmul(x, w_ih), b);
  Tensor gh = matmul(h, w_hh);
  Tensor r = sigmoid(add(slice(gi, 1, 0, d), slice(gh, 1, 0, d)));
  Tensor u = sigmoid(add(slice(gi, 1, d, 2 * d), slice(gh, 1, d, 2 * d)));
  Tensor n = tanh(add(slice(gi, 1, 2 * d, 3 * d), mul(r, slice(gh, 1, 2 * d, 3 * d))));
  Tensor composed = add(n, mul(u, sub(h, n)));
  CHECK((fused.value() - composed.value()).cwiseAbs().maxCoeff() < 1e-14);
}

TEST_CASE("gradients are finite after backward") {
  Rng rng(2);
  Tensor w = Tensor::parameter(random_matrix(4, 4, rng));
  Tensor loss = sum(log_softmax(matmul(w, w), 1));
  backward(loss);
  for (const Node* n : topological_order(loss)) {
    if (n->requires_grad) CHECK(n->grad.allFinite());
  }
}

TEST_CASE("checkpoint round trip is bit exact") {
  Rng rng(8);
  std::vector<NamedTensor> tensors{
      {"scalar", Tensor::parameter(Shape{}, random_matrix(1, 1, rng))},
      {"vec", Tensor::parameter(Shape{5}, random_matrix(1, 5, rng))},
      {"mat/ü", Tensor::parameter(random_matrix(3, 2, rng))},
  };
  tensors[1].tensor.mutable_value()(0, 2) = -0.0;
  tensors[1].tensor.mutable_value()(0, 3) = 1e-310;
  const std::string bytes = serialize_tensors(tensors);
  CHECK(bytes.substr(0, 4) == "ADTN");
  auto back = deserialize_tensors(bytes);
  REQUIRE(back.size() == 3);
  for (std::size_t i = 0; i < 3; ++i) {
    CHECK(back[i].name == tensors[i].name);
    CHECK(back[i].tensor.shape() == tensors[i].tensor.shape());
    CHECK(std::memcmp(back[i].tensor.value().data(), tensors[i].tensor.value().data(),
                      sizeof(double) * tensors[i].tensor.numel()) == 0);
  }
  CHECK(serialize_tensors(back) == bytes);

  auto path = std::filesystem::temp_directory_path() / "distill_ckpt_test.adtn";
  save_tensors(path, tensors);
  CHECK(serialize_tensors(load_tensors(path)) == bytes);
  CHECK_THROWS_AS(deserialize_tensors(bytes.substr(0, bytes.size() - 3)), IoError);
  CHECK_THROWS_AS(deserialize_tensors("XXXX"), IoError);
}
