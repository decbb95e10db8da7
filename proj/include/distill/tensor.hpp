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

// Dense 64-bit tensors with reverse-mode automatic differentiation.
//
// A Tensor is a cheap handle to a graph node. Leaf parameters are created
// with Tensor::parameter and accumulate gradients across backward() calls
// until zero_grad() is called. Every op in ops.hpp records its inputs and a
// backward rule; backward() walks the recorded graph in reverse topological
// order. Only rank 0, 1 and 2 are supported; a rank-1 tensor of length n is
// stored as a 1 x n row.

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>

namespace distill {

using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Shape = std::vector<std::size_t>;

struct Node;

class Tensor {
 public:
  // Receives the producing node; must push node.grad into node.inputs.
  using BackwardFn = std::function<void(const Node&)>;

  Tensor() = default;

  static Tensor constant(Matrix value);
  static Tensor constant(Shape shape, Matrix value);
  static Tensor parameter(Matrix value);
  static Tensor parameter(Shape shape, Matrix value);
  static Tensor scalar(double v);

  // Records an op result. requires_grad is inherited from the inputs.
  static Tensor make_op(std::string op, Shape shape, Matrix value,
                        std::vector<Tensor> inputs, BackwardFn backward);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const;
  std::size_t rank() const { return shape().size(); }
  std::size_t numel() const;
  Eigen::Index rows() const { return value().rows(); }
  Eigen::Index cols() const { return value().cols(); }

  const Matrix& value() const;
  // Direct write access for optimizers and checkpoint loading. Leaves only.
  Matrix& mutable_value();

  bool requires_grad() const;
  bool has_grad() const;
  // Zero-sized matrix when no gradient has been accumulated.
  const Matrix& grad() const;
  void zero_grad();
  void accumulate_grad(const Matrix& g) const;

  double item() const;
  Tensor detach() const;
  const std::string& op_name() const;
  const std::vector<Tensor>& inputs() const;

  bool same_node(const Tensor& other) const { return node_ == other.node_; }

 private:
  explicit Tensor(std::shared_ptr<Node> node) : node_(std::move(node)) {}
  std::shared_ptr<Node> node_;

  friend void backward(const Tensor& loss);
  friend std::vector<const Node*> topological_order(const Tensor& root);
};

struct NamedTensor {
  std::string name;
  Tensor tensor;
};

struct Node {
  Shape shape;
  Matrix value;
  Matrix grad;
  bool requires_grad = false;
  std::vector<Tensor> inputs;
  Tensor::BackwardFn backward;
  std::string op = "leaf";
};

// Rows x cols of the matrix that stores a tensor of this shape.
std::pair<Eigen::Index, Eigen::Index> storage_dims(const Shape& shape);
std::string shape_string(const Shape& shape);

// Nodes reachable from root, inputs before consumers.
std::vector<const Node*> topological_order(const Tensor& root);

// Populates gradients of every requires-grad tensor reachable from a scalar
// loss. Leaf gradients accumulate; call zero_grad between steps.
void backward(const Tensor& loss);

void zero_grads(std::span<Tensor> params);

// While alive, ops on this thread record no graph: results are constants.
// Used for inference, where building backward closures is wasted work.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

bool grad_enabled();

}  // namespace distill
