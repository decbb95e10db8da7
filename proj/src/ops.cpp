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

#include "distill/ops.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "distill/errors.hpp"

namespace distill {
namespace {

using Index = Eigen::Index;

void require_finite_shape_match(const Tensor& a, const Tensor& b, const char* op) {
  const bool rows_ok = a.rows() == b.rows() || a.rows() == 1 || b.rows() == 1;
  const bool cols_ok = a.cols() == b.cols() || a.cols() == 1 || b.cols() == 1;
  if (!rows_ok || !cols_ok) {
    throw DimensionError(std::string(op) + ": cannot broadcast " + shape_string(a.shape()) +
                         " with " + shape_string(b.shape()));
  }
}

Shape broadcast_shape(const Tensor& a, const Tensor& b, Index rows, Index cols) {
  if (a.shape() == b.shape()) return a.shape();
  const std::size_t rank = std::max(a.rank(), b.rank());
  if (rank == 0) return {};
  if (rank == 1 && rows == 1) return {static_cast<std::size_t>(cols)};
  return {static_cast<std::size_t>(rows), static_cast<std::size_t>(cols)};
}

Matrix expand(const Matrix& m, Index rows, Index cols) {
  if (m.rows() == rows && m.cols() == cols) return m;
  if (m.rows() == 1 && m.cols() == 1) return Matrix::Constant(rows, cols, m(0, 0));
  if (m.rows() == 1) return m.replicate(rows, 1);
  return m.replicate(1, cols);
}

Matrix reduce_to(const Matrix& g, Index rows, Index cols) {
  if (g.rows() == rows && g.cols() == cols) return g;
  if (rows == 1 && cols == 1) return Matrix::Constant(1, 1, g.sum());
  if (rows == 1) return g.colwise().sum();
  return g.rowwise().sum();
}

enum class BinaryKind { Add, Sub, Mul };

Tensor binary(const Tensor& a, const Tensor& b, BinaryKind kind, const char* name) {
  require_finite_shape_match(a, b, name);
  const Index rows = std::max(a.rows(), b.rows());
  const Index cols = std::max(a.cols(), b.cols());
  Matrix av = expand(a.value(), rows, cols);
  Matrix bv = expand(b.value(), rows, cols);
  Matrix out;
  switch (kind) {
    case BinaryKind::Add: out = av + bv; break;
    case BinaryKind::Sub: out = av - bv; break;
    case BinaryKind::Mul: out = av.cwiseProduct(bv); break;
  }
  Shape shape = broadcast_shape(a, b, rows, cols);
  return Tensor::make_op(name, std::move(shape), std::move(out), {a, b}, [kind](const Node& n) {
    const Tensor& x = n.inputs[0];
    const Tensor& y = n.inputs[1];
    const Index r = n.value.rows(), c = n.value.cols();
    switch (kind) {
      case BinaryKind::Add:
        x.accumulate_grad(reduce_to(n.grad, x.rows(), x.cols()));
        y.accumulate_grad(reduce_to(n.grad, y.rows(), y.cols()));
        break;
      case BinaryKind::Sub:
        x.accumulate_grad(reduce_to(n.grad, x.rows(), x.cols()));
        y.accumulate_grad(reduce_to(-n.grad, y.rows(), y.cols()));
        break;
      case BinaryKind::Mul:
        if (x.requires_grad()) {
          x.accumulate_grad(reduce_to(n.grad.cwiseProduct(expand(y.value(), r, c)), x.rows(), x.cols()));
        }
        if (y.requires_grad()) {
          y.accumulate_grad(reduce_to(n.grad.cwiseProduct(expand(x.value(), r, c)), y.rows(), y.cols()));
        }
        break;
    }
  });
}

template <typename Fwd, typename Deriv>
Tensor unary(const Tensor& x, const char* name, Fwd fwd, Deriv deriv_from_output) {
  Matrix out = x.value().unaryExpr(fwd);
  return Tensor::make_op(name, x.shape(), std::move(out), {x}, [deriv_from_output](const Node& n) {
    Matrix d = n.value.binaryExpr(n.inputs[0].value(), deriv_from_output);
    n.inputs[0].accumulate_grad(n.grad.cwiseProduct(d));
  });
}

std::size_t check_axis(const Tensor& x, std::size_t axis, const char* op) {
  const std::size_t rank = std::max<std::size_t>(x.rank(), 1);
  if (axis >= rank) {
    throw DimensionError(std::string(op) + ": axis " + std::to_string(axis) + " out of range for " +
                         shape_string(x.shape()));
  }
  // Storage axis: rank-1 tensors live along storage columns.
  return x.rank() <= 1 ? 1 : axis;
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.cols() != b.rows()) {
    throw DimensionError("matmul: inner dimensions differ, " + shape_string(a.shape()) + " x " +
                         shape_string(b.shape()));
  }
  Matrix out = a.value() * b.value();
  Shape shape = a.rank() == 1 ? Shape{static_cast<std::size_t>(out.cols())}
                              : Shape{static_cast<std::size_t>(out.rows()),
                                      static_cast<std::size_t>(out.cols())};
  return Tensor::make_op("matmul", std::move(shape), std::move(out), {a, b}, [](const Node& n) {
    const Tensor& x = n.inputs[0];
    const Tensor& y = n.inputs[1];
    if (x.requires_grad()) x.accumulate_grad(n.grad * y.value().transpose());
    if (y.requires_grad()) y.accumulate_grad(x.value().transpose() * n.grad);
  });
}

Tensor add(const Tensor& a, const Tensor& b) { return binary(a, b, BinaryKind::Add, "add"); }
Tensor sub(const Tensor& a, const Tensor& b) { return binary(a, b, BinaryKind::Sub, "sub"); }
Tensor mul(const Tensor& a, const Tensor& b) { return binary(a, b, BinaryKind::Mul, "mul"); }

Tensor scale(const Tensor& a, double s) {
  return Tensor::make_op("scale", a.shape(), a.value() * s, {a},
                         [s](const Node& n) { n.inputs[0].accumulate_grad(n.grad * s); });
}

Tensor tanh(const Tensor& x) {
  return unary(
      x, "tanh", [](double v) { return std::tanh(v); },
      [](double y, double) { return 1.0 - y * y; });
}

Tensor sigmoid(const Tensor& x) {
  return unary(
      x, "sigmoid",
      [](double v) {
        if (v >= 0) return 1.0 / (1.0 + std::exp(-v));
        const double e = std::exp(v);
        return e / (1.0 + e);
      },
      [](double y, double) { return y * (1.0 - y); });
}

Tensor log(const Tensor& x) {
  if ((x.value().array() <= 0.0).any()) throw DomainError("log of a non-positive value");
  return unary(
      x, "log", [](double v) { return std::log(v); }, [](double, double in) { return 1.0 / in; });
}

Tensor exp(const Tensor& x) {
  return unary(
      x, "exp", [](double v) { return std::exp(v); }, [](double y, double) { return y; });
}

Tensor softmax(const Tensor& x, std::size_t axis) {
  const std::size_t ax = check_axis(x, axis, "softmax");
  Matrix v = ax == 1 ? x.value() : Matrix(x.value().transpose());
  for (Index r = 0; r < v.rows(); ++r) {
    auto row = v.row(r);
    row.array() -= row.maxCoeff();
    row = row.array().exp().matrix();
    row /= row.sum();
  }
  if (ax == 0) v.transposeInPlace();
  return Tensor::make_op("softmax", x.shape(), std::move(v), {x}, [ax](const Node& n) {
    const Matrix& y = n.value;
    Matrix g;
    if (ax == 1) {
      Eigen::VectorXd dots = n.grad.cwiseProduct(y).rowwise().sum();
      g = y.cwiseProduct(n.grad - dots.replicate(1, y.cols()));
    } else {
      Eigen::RowVectorXd dots = n.grad.cwiseProduct(y).colwise().sum();
      g = y.cwiseProduct(n.grad - dots.replicate(y.rows(), 1));
    }
    n.inputs[0].accumulate_grad(g);
  });
}

Tensor log_softmax(const Tensor& x, std::size_t axis) {
  const std::size_t ax = check_axis(x, axis, "log_softmax");
  Matrix v = ax == 1 ? x.value() : Matrix(x.value().transpose());
  for (Index r = 0; r < v.rows(); ++r) {
    auto row = v.row(r);
    const double m = row.maxCoeff();
    const double lse = m + std::log((row.array() - m).exp().sum());
    row.array() -= lse;
  }
  if (ax == 0) v.transposeInPlace();
  return Tensor::make_op("log_softmax", x.shape(), std::move(v), {x}, [ax](const Node& n) {
    Matrix p = n.value.array().exp().matrix();
    Matrix g;
    if (ax == 1) {
      Eigen::VectorXd total = n.grad.rowwise().sum();
      g = n.grad - p.cwiseProduct(total.replicate(1, p.cols()));
    } else {
      Eigen::RowVectorXd total = n.grad.colwise().sum();
      g = n.grad - p.cwiseProduct(total.replicate(p.rows(), 1));
    }
    n.inputs[0].accumulate_grad(g);
  });
}

Tensor concat(std::span<const Tensor> parts, std::size_t axis) {
  if (parts.empty()) throw ContractError("concat of zero tensors");
  const std::size_t rank = parts[0].rank();
  const std::size_t ax = check_axis(parts[0], axis, "concat");
  Index rows = 0, cols = 0;
  for (const auto& p : parts) {
    if (p.rank() != rank) throw DimensionError("concat: mixed ranks");
    if (ax == 0) {
      if (p.cols() != parts[0].cols()) throw DimensionError("concat: column counts differ");
      rows += p.rows();
      cols = p.cols();
    } else {
      if (p.rows() != parts[0].rows()) throw DimensionError("concat: row counts differ");
      cols += p.cols();
      rows = p.rows();
    }
  }
  Matrix out(rows, cols);
  Index offset = 0;
  for (const auto& p : parts) {
    if (ax == 0) {
      out.middleRows(offset, p.rows()) = p.value();
      offset += p.rows();
    } else {
      out.middleCols(offset, p.cols()) = p.value();
      offset += p.cols();
    }
  }
  Shape shape = rank <= 1 ? Shape{static_cast<std::size_t>(cols)}
                          : Shape{static_cast<std::size_t>(rows), static_cast<std::size_t>(cols)};
  std::vector<Tensor> inputs(parts.begin(), parts.end());
  return Tensor::make_op("concat", std::move(shape), std::move(out), std::move(inputs),
                         [ax](const Node& n) {
                           Index off = 0;
                           for (const auto& in : n.inputs) {
                             if (ax == 0) {
                               if (in.requires_grad()) in.accumulate_grad(n.grad.middleRows(off, in.rows()));
                               off += in.rows();
                             } else {
                               if (in.requires_grad()) in.accumulate_grad(n.grad.middleCols(off, in.cols()));
                               off += in.cols();
                             }
                           }
                         });
}

Tensor slice(const Tensor& x, std::size_t axis, std::size_t begin, std::size_t end) {
  const std::size_t ax = check_axis(x, axis, "slice");
  const auto extent = static_cast<std::size_t>(ax == 0 ? x.rows() : x.cols());
  if (begin >= end || end > extent) {
    throw DimensionError("slice: range [" + std::to_string(begin) + ", " + std::to_string(end) +
                         ") invalid for " + shape_string(x.shape()));
  }
  const auto b = static_cast<Index>(begin);
  const auto len = static_cast<Index>(end - begin);
  Matrix out = ax == 0 ? Matrix(x.value().middleRows(b, len)) : Matrix(x.value().middleCols(b, len));
  Shape shape = x.shape();
  shape[x.rank() <= 1 ? 0 : ax] = end - begin;
  return Tensor::make_op("slice", std::move(shape), std::move(out), {x}, [ax, b, len](const Node& n) {
    const Tensor& in = n.inputs[0];
    Matrix g = Matrix::Zero(in.rows(), in.cols());
    if (ax == 0) {
      g.middleRows(b, len) = n.grad;
    } else {
      g.middleCols(b, len) = n.grad;
    }
    in.accumulate_grad(g);
  });
}

Tensor sum(const Tensor& x) {
  Matrix out(1, 1);
  out(0, 0) = x.value().sum();
  return Tensor::make_op("sum", {}, std::move(out), {x}, [](const Node& n) {
    const Tensor& in = n.inputs[0];
    in.accumulate_grad(Matrix::Constant(in.rows(), in.cols(), n.grad(0, 0)));
  });
}

Tensor mean(const Tensor& x) { return scale(sum(x), 1.0 / static_cast<double>(x.numel())); }

Tensor embedding_lookup(const Tensor& table, std::span<const int> indices) {
  if (table.rank() != 2) throw DimensionError("embedding_lookup: table must be rank 2");
  if (indices.empty()) throw ContractError("embedding_lookup: no indices");
  Matrix out(static_cast<Index>(indices.size()), table.cols());
  for (std::size_t i = 0; i < indices.size(); ++i) {
    if (indices[i] < 0 || indices[i] >= table.rows()) {
      throw ContractError("embedding_lookup: index " + std::to_string(indices[i]) + " out of range");
    }
    out.row(static_cast<Index>(i)) = table.value().row(indices[i]);
  }
  std::vector<int> idx(indices.begin(), indices.end());
  Shape shape{indices.size(), static_cast<std::size_t>(table.cols())};
  return Tensor::make_op("embedding_lookup", std::move(shape), std::move(out), {table},
                         [idx = std::move(idx)](const Node& n) {
                           const Tensor& t = n.inputs[0];
                           Matrix g = Matrix::Zero(t.rows(), t.cols());
                           for (std::size_t i = 0; i < idx.size(); ++i) {
                             g.row(idx[i]) += n.grad.row(static_cast<Index>(i));
                           }
                           t.accumulate_grad(g);
                         });
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double epsilon) {
  const Index c = x.cols();
  if (gain.numel() != static_cast<std::size_t>(c) || bias.numel() != static_cast<std::size_t>(c)) {
    throw DimensionError("layer_norm: gain/bias length must equal the last dimension");
  }
  const Index r = x.rows();
  Matrix xhat(r, c);
  Eigen::VectorXd inv_std(r);
  for (Index i = 0; i < r; ++i) {
    const double mu = x.value().row(i).mean();
    const double var = (x.value().row(i).array() - mu).square().mean();
    inv_std(i) = 1.0 / std::sqrt(var + epsilon);
    xhat.row(i) = (x.value().row(i).array() - mu) * inv_std(i);
  }
  Matrix out = xhat.cwiseProduct(gain.value().replicate(r, 1)) + bias.value().replicate(r, 1);
  return Tensor::make_op(
      "layer_norm", x.shape(), std::move(out), {x, gain, bias},
      [xhat = std::move(xhat), inv_std = std::move(inv_std)](const Node& n) {
        const Tensor& in = n.inputs[0];
        const Tensor& g = n.inputs[1];
        const Tensor& b = n.inputs[2];
        const Index rows = xhat.rows(), cols = xhat.cols();
        if (g.requires_grad()) g.accumulate_grad(n.grad.cwiseProduct(xhat).colwise().sum());
        if (b.requires_grad()) b.accumulate_grad(n.grad.colwise().sum());
        if (in.requires_grad()) {
          Matrix dxhat = n.grad.cwiseProduct(g.value().replicate(rows, 1));
          Matrix dx(rows, cols);
          for (Index i = 0; i < rows; ++i) {
            const double m1 = dxhat.row(i).mean();
            const double m2 = dxhat.row(i).cwiseProduct(xhat.row(i)).mean();
            dx.row(i) = (dxhat.row(i).array() - m1 - xhat.row(i).array() * m2) * inv_std(i);
          }
          in.accumulate_grad(dx);
        }
      });
}

Tensor gru_gates(const Tensor& gi, const Tensor& gh, const Tensor& h) {
  const Index b = h.rows(), d = h.cols();
  if (gi.rows() != b || gh.rows() != b || gi.cols() != 3 * d || gh.cols() != 3 * d) {
    throw DimensionError("gru_gates: expected gates of shape [" + std::to_string(b) + "x" +
                         std::to_string(3 * d) + "]");
  }
  auto logistic = [](double v) {
    if (v >= 0) return 1.0 / (1.0 + std::exp(-v));
    const double e = std::exp(v);
    return e / (1.0 + e);
  };
  const Matrix& a = gi.value();
  const Matrix& c = gh.value();
  Matrix r = (a.leftCols(d) + c.leftCols(d)).unaryExpr(logistic);
  Matrix u = (a.middleCols(d, d) + c.middleCols(d, d)).unaryExpr(logistic);
  Matrix n = (a.rightCols(d) + r.cwiseProduct(c.rightCols(d))).array().tanh().matrix();
  Matrix out = n + u.cwiseProduct(h.value() - n);
  return Tensor::make_op(
      "gru_gates", h.shape(), std::move(out), {gi, gh, h},
      [r = std::move(r), u = std::move(u), n = std::move(n), d](const Node& node) {
        const Tensor& gi_t = node.inputs[0];
        const Tensor& gh_t = node.inputs[1];
        const Tensor& h_t = node.inputs[2];
        const Matrix& g = node.grad;
        const Matrix& hv = h_t.value();
        const Matrix& ghv = gh_t.value();
        Matrix dn = g.cwiseProduct((1.0 - u.array()).matrix());
        Matrix du = g.cwiseProduct(hv - n);
        Matrix da_n = dn.cwiseProduct((1.0 - n.array().square()).matrix());
        Matrix dr = da_n.cwiseProduct(ghv.rightCols(d));
        Matrix da_u = du.cwiseProduct((u.array() * (1.0 - u.array())).matrix());
        Matrix da_r = dr.cwiseProduct((r.array() * (1.0 - r.array())).matrix());
        if (gi_t.requires_grad()) {
          Matrix dgi(g.rows(), 3 * d);
          dgi << da_r, da_u, da_n;
          gi_t.accumulate_grad(dgi);
        }
        if (gh_t.requires_grad()) {
          Matrix dgh(g.rows(), 3 * d);
          dgh << da_r, da_u, da_n.cwiseProduct(r);
          gh_t.accumulate_grad(dgh);
        }
        if (h_t.requires_grad()) h_t.accumulate_grad(g.cwiseProduct(u));
      });
}

Matrix sample_dropout_mask(Index rows, Index cols, double p, Rng& rng) {
  if (p < 0.0 || p >= 1.0) throw ContractError("dropout probability must be in [0, 1)");
  Matrix mask(rows, cols);
  const double keep = 1.0 / (1.0 - p);
  for (Index i = 0; i < rows; ++i) {
    for (Index j = 0; j < cols; ++j) mask(i, j) = rng.bernoulli(p) ? 0.0 : keep;
  }
  return mask;
}

Tensor dropout(const Tensor& x, const Matrix& mask) {
  if (mask.rows() != x.rows() || mask.cols() != x.cols()) {
    throw DimensionError("dropout: mask shape mismatch");
  }
  return Tensor::make_op("dropout", x.shape(), x.value().cwiseProduct(mask), {x},
                         [mask](const Node& n) { n.inputs[0].accumulate_grad(n.grad.cwiseProduct(mask)); });
}

Tensor dropout_mask(const Tensor& x, double p, Rng& rng) {
  if (p == 0.0) return x;
  return dropout(x, sample_dropout_mask(x.rows(), x.cols(), p, rng));
}

}  // namespace distill
