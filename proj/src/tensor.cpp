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

#include "distill/tensor.hpp"

#include <cmath>
#include <sstream>
#include <unordered_set>
#include <utility>

#include "distill/errors.hpp"

namespace distill {

std::pair<Eigen::Index, Eigen::Index> storage_dims(const Shape& shape) {
  for (auto d : shape) {
    if (d == 0) throw DimensionError("tensor dimensions must be positive: " + shape_string(shape));
  }
  switch (shape.size()) {
    case 0: return {1, 1};
    case 1: return {1, static_cast<Eigen::Index>(shape[0])};
    case 2: return {static_cast<Eigen::Index>(shape[0]), static_cast<Eigen::Index>(shape[1])};
    default: throw DimensionError("rank > 2 is not supported: " + shape_string(shape));
  }
}

std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "x" : "") << shape[i];
  os << ']';
  return os.str();
}

namespace {

Shape matrix_shape(const Matrix& m) {
  return {static_cast<std::size_t>(m.rows()), static_cast<std::size_t>(m.cols())};
}

std::shared_ptr<Node> make_leaf(Shape shape, Matrix value, bool requires_grad) {
  auto [r, c] = storage_dims(shape);
  if (value.rows() != r || value.cols() != c) {
    throw DimensionError("value storage does not match shape " + shape_string(shape));
  }
  auto node = std::make_shared<Node>();
  node->shape = std::move(shape);
  node->value = std::move(value);
  node->requires_grad = requires_grad;
  return node;
}

thread_local bool g_grad_enabled = true;

Node& checked(const std::shared_ptr<Node>& n) {
  if (!n) throw ContractError("use of an undefined tensor");
  return *n;
}

}  // namespace

Tensor Tensor::constant(Matrix value) {
  Shape s = matrix_shape(value);
  return Tensor(make_leaf(std::move(s), std::move(value), false));
}

Tensor Tensor::constant(Shape shape, Matrix value) {
  return Tensor(make_leaf(std::move(shape), std::move(value), false));
}

Tensor Tensor::parameter(Matrix value) {
  Shape s = matrix_shape(value);
  return Tensor(make_leaf(std::move(s), std::move(value), true));
}

Tensor Tensor::parameter(Shape shape, Matrix value) {
  return Tensor(make_leaf(std::move(shape), std::move(value), true));
}

Tensor Tensor::scalar(double v) {
  Matrix m(1, 1);
  m(0, 0) = v;
  return Tensor(make_leaf({}, std::move(m), false));
}

Tensor Tensor::make_op(std::string op, Shape shape, Matrix value, std::vector<Tensor> inputs,
                       BackwardFn backward) {
  auto node = make_leaf(std::move(shape), std::move(value), false);
  for (const auto& in : inputs) {
    if (checked(in.node_).requires_grad) node->requires_grad = g_grad_enabled;
  }
  node->op = std::move(op);
  if (node->requires_grad) {
    node->inputs = std::move(inputs);
    node->backward = std::move(backward);
  }
  return Tensor(std::move(node));
}

const Shape& Tensor::shape() const { return checked(node_).shape; }

std::size_t Tensor::numel() const {
  std::size_t n = 1;
  for (auto d : shape()) n *= d;
  return n;
}

const Matrix& Tensor::value() const { return checked(node_).value; }

Matrix& Tensor::mutable_value() {
  auto& n = checked(node_);
  if (n.backward) throw ContractError("mutable_value on a non-leaf tensor");
  return n.value;
}

bool Tensor::requires_grad() const { return checked(node_).requires_grad; }
bool Tensor::has_grad() const { return checked(node_).grad.size() != 0; }
const Matrix& Tensor::grad() const { return checked(node_).grad; }

void Tensor::zero_grad() {
  auto& n = checked(node_);
  if (n.grad.size() != 0) n.grad.setZero();
}

void Tensor::accumulate_grad(const Matrix& g) const {
  auto& n = checked(node_);
  if (!n.requires_grad) return;
  if (g.rows() != n.value.rows() || g.cols() != n.value.cols()) {
    throw DimensionError("gradient shape mismatch for op '" + n.op + "'");
  }
  if (n.grad.size() == 0) {
    n.grad = g;
  } else {
    n.grad += g;
  }
}

double Tensor::item() const {
  if (numel() != 1) throw ContractError("item() on tensor of shape " + shape_string(shape()));
  return value()(0, 0);
}

Tensor Tensor::detach() const { return constant(shape(), value()); }

const std::string& Tensor::op_name() const { return checked(node_).op; }
const std::vector<Tensor>& Tensor::inputs() const { return checked(node_).inputs; }

std::vector<const Node*> topological_order(const Tensor& root) {
  std::vector<const Node*> order;
  std::unordered_set<const Node*> visited;
  // Iterative post-order DFS; graphs from long sequences are deep.
  std::vector<std::pair<const Node*, std::size_t>> stack;
  const Node* start = &checked(root.node_);
  stack.emplace_back(start, 0);
  visited.insert(start);
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->inputs.size()) {
      const Node* child = node->inputs[next++].node_.get();
      if (visited.insert(child).second) stack.emplace_back(child, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }
  return order;
}

void backward(const Tensor& loss) {
  if (loss.numel() != 1) {
    throw ContractError("backward() needs a scalar loss, got " + shape_string(loss.shape()));
  }
  if (!loss.requires_grad()) return;
  auto order = topological_order(loss);
  // Intermediate gradients restart from zero on every call; leaves accumulate.
  for (const Node* n : order) {
    if (n->backward) const_cast<Node*>(n)->grad.resize(0, 0);
  }
  loss.accumulate_grad(Matrix::Ones(1, 1));
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    const Node* n = *it;
    if (n->backward && n->grad.size() != 0) n->backward(*n);
  }
}

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }
bool grad_enabled() { return g_grad_enabled; }

void zero_grads(std::span<Tensor> params) {
  for (auto& p : params) p.zero_grad();
}

}  // namespace distill
