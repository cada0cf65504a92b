// Copyright 2026 The flowgrain Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

// Reverse-mode automatic differentiation over a linear tape.
//
// Every operation appends one node holding its forward value; node inputs
// always precede the node, so the append order is a topological order and
// `Tape::backward` walks it once in reverse. Leaves created with
// `Tape::leaf` refer to tensors owned elsewhere (model parameters); their
// gradients accumulate into `Tensor::grad` until the owner zeroes them.
//
// Every primitive computes each output element with a fixed accumulation
// order that does not depend on the batch extent, so a sample's result is
// bit-identical whether it is evaluated alone or inside a larger batch.

#pragma once

#include <cstdint>
#include <memory>
#include <vector>

#include "tensor.hpp"

namespace flowgrain::ad {

enum class Op : std::uint8_t {
  Constant,
  Leaf,
  MatMul,
  MaskedMatMul,
  Add,
  Sub,
  Mul,
  AddRow,
  MulRow,
  Scale,
  AddScalar,
  Exp,
  Log,
  Tanh,
  Relu,
  Neg,
  Sum,
  Mean,
  SumAxis,
  MeanAxis,
  LogSumExpAxis,
  Reshape,
  Gather,
  Conv2d,
  AvgPool2d,
  GlobalAvgPool,
  BlockLogMatVec,
  TanhLogDeriv,
};

const char* op_name(Op op) noexcept;

class Tape;

/// Handle to a node on a tape. Cheap to copy; valid while the tape lives.
struct Var {
  Tape* tape = nullptr;
  std::uint32_t id = 0;

  const Tensor& value() const;
  const Shape& shape() const { return value().shape; }
};

struct BackwardReport {
  std::size_t leaves_updated = 0;
  /// Leaves without `requires_grad`; they get no gradient, which is not an error.
  std::size_t detached_leaves = 0;
};

/// Per-node parameters saved for the backward pass.
struct NodeAux {
  double scalar = 0.0;
  std::size_t axis = 0;
  std::size_t stride = 1;
  std::size_t pad = 0;
  std::shared_ptr<const std::vector<std::size_t>> indices;
};

class Tape {
 public:
  using Aux = NodeAux;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Tensor value);
  /// Records a reference to an externally owned tensor. The tensor must
  /// outlive the tape and must not be resized while the tape is in use.
  Var leaf(Tensor& tensor);

  const Tensor& value(Var v) const { return nodes_[v.id].value; }
  std::size_t size() const { return nodes_.size(); }
  Op op_at(std::size_t index) const { return nodes_[index].op; }
  const Tensor& value_at(std::size_t index) const { return nodes_[index].value; }
  const std::vector<std::uint32_t>& inputs_at(std::size_t index) const {
    return nodes_[index].inputs;
  }

  /// Accumulates d(output)/d(leaf) into every tracked leaf. `output` must
  /// hold exactly one element.
  BackwardReport backward(Var output);

  /// Appends a node; used by the primitive implementations. Rejects
  /// non-finite forward values with a numerical error naming the node.
  Var record(Op op, std::vector<std::uint32_t> inputs, Tensor value, Aux aux = {});

 private:
  struct Node {
    Op op;
    std::vector<std::uint32_t> inputs;
    Tensor value;
    Tensor* leaf = nullptr;
    Aux aux;
  };

  void backward_node(std::size_t index, std::vector<std::vector<double>>& grads);

  std::vector<Node> nodes_;
};

// ---- primitives -----------------------------------------------------------
// Rank-2 operands are (rows, cols). Shape mismatches raise
// ErrorKind::ShapeMismatch naming the operation and both shapes.

Var matmul(Var a, Var b);
/// x · (w ⊙ mask); `mask` is treated as a constant.
Var masked_matmul(Var x, Var w, Var mask);
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
/// x[r, c] + v[c] for rank-2 x and rank-1 v.
Var add_row(Var x, Var v);
/// x[r, c] * v[c] for rank-2 x and rank-1 v.
Var mul_row(Var x, Var v);
Var scale(Var x, double c);
Var add_scalar(Var x, double c);
Var exp(Var x);
Var log(Var x);
Var tanh(Var x);
/// Subgradient at exactly 0 is 0.
Var relu(Var x);
Var neg(Var x);
Var sum(Var x);
Var mean(Var x);
/// Reduces a rank-2 tensor along `axis` (0: over rows, 1: over columns).
Var sum_axis(Var x, std::size_t axis);
Var mean_axis(Var x, std::size_t axis);
Var logsumexp_axis(Var x, std::size_t axis);
Var reshape(Var x, Shape shape);
/// out.flat[i] = x.flat[indices[i]].
Var gather(Var x, std::shared_ptr<const std::vector<std::size_t>> indices, Shape shape);
/// 2-D cross-correlation. x: (n, c, h, w); kernel: (o, c, kh, kw); bias: (o).
Var conv2d(Var x, Var kernel, Var bias, std::size_t stride, std::size_t pad);
/// Non-overlapping k×k average pooling of (n, c, h, w); trailing remainder dropped.
Var avg_pool2d(Var x, std::size_t k);
/// (n, c, h, w) -> (n, c).
Var global_avg_pool(Var x);
/// Log-domain block matrix-vector product:
/// out[b, i, q] = log Σ_p exp(logw[i, q, p] + logv[b, i, p]).
/// logw: (d, o, p); logv: (n, d, p); out: (n, d, o).
Var block_log_matvec(Var logw, Var logv);
/// log(1 - tanh(x)^2), evaluated stably for large |x|.
Var tanh_logderiv(Var x);

}  // namespace flowgrain::ad
