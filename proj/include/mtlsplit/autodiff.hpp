// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The mtlsplit Authors

#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <unordered_map>
#include <vector>

#include "mtlsplit/tensor.hpp"

namespace mtlsplit {

class Rng;
class Gradients;
class Tape;

Gradients backward(const Tape& tape, const Tensor& loss);

enum class OpKind : std::uint8_t {
  kLeaf,
  kMatmul,
  kAddBias,
  kRelu,
  kReshape,
  kAdd,
  kScale,
  kCrossEntropy,
  kMean,
  kSum,
};

/// Append-only record of a single forward pass.
///
/// Ops record a node only when handed a tape and at least one input already
/// lives on that tape; inputs without a node are treated as constants and
/// receive no gradient. Nodes are appended in evaluation order, so the record
/// is topologically sorted by construction.
class Tape {
 public:
  Tape();
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// Registers `value` as a differentiable leaf (a parameter).
  Tensor watch(const Tensor& value);

  std::size_t size() const noexcept { return nodes_.size(); }
  /// Number of recorded nodes of one kind.
  std::size_t count(OpKind kind) const;
  std::uint64_t id() const noexcept { return id_; }

  /// True when `t` carries a node recorded on this tape.
  bool owns(const Tensor& t) const;

 private:
  friend class TapeAccess;
  friend Gradients backward(const Tape& tape, const Tensor& loss);

 public:
  /// One recorded op; `lhs`/`rhs` are input node indices, -1 for constants.
  struct Node {
    OpKind kind = OpKind::kLeaf;
    std::int64_t lhs = -1;
    std::int64_t rhs = -1;
    Shape out_shape;
    std::vector<Tensor> saved;
    std::vector<std::uint32_t> labels;
    float factor = 0.0f;
  };

 private:
  std::uint64_t id_;
  std::vector<Node> nodes_;
};

/// Gradients of one scalar with respect to every leaf of a tape.
class Gradients {
 public:
  /// Gradient for a watched tensor; zeros when the leaf is not on any path to the loss.
  const Tensor& of(const Tensor& leaf) const;
  std::size_t size() const noexcept { return by_leaf_.size(); }

 private:
  friend Gradients backward(const Tape& tape, const Tensor& loss);
  std::uint64_t tape_ = 0;
  std::unordered_map<std::uint32_t, Tensor> by_leaf_;
};

/// Reverse pass from a scalar node. Visits every node at most once, in reverse order.
Gradients backward(const Tape& tape, const Tensor& loss);

namespace ops {

/// [m, k] x [k, n] -> [m, n].
Tensor matmul(const Tensor& a, const Tensor& b, Tape* tape = nullptr);

/// Adds `bias` [n] to every row of `a` [m, n] (or to a single [n] vector).
Tensor add_bias(const Tensor& a, const Tensor& bias, Tape* tape = nullptr);

/// Elementwise max(0, x). The gradient at exactly zero is zero.
Tensor relu(const Tensor& a, Tape* tape = nullptr);

Tensor reshape(const Tensor& a, Shape shape, Tape* tape = nullptr);

/// Keeps the leading axis and flattens the rest: [b, ...] -> [b, prod(...)].
Tensor flatten_rows(const Tensor& a, Tape* tape = nullptr);

Tensor add(const Tensor& a, const Tensor& b, Tape* tape = nullptr);
Tensor scale(const Tensor& a, float factor, Tape* tape = nullptr);

/// Per-row -log softmax(logits)[label] for logits [b, c]; returns [b].
Tensor cross_entropy(const Tensor& logits, std::span<const std::uint32_t> labels,
                     Tape* tape = nullptr);

/// -log softmax(logits)[label] for a single logit vector [c]; returns [1].
Tensor softmax_cross_entropy(const Tensor& logits, std::uint32_t label, Tape* tape = nullptr);

/// Mean over every element; returns [1].
Tensor mean(const Tensor& a, Tape* tape = nullptr);
Tensor sum(const Tensor& a, Tape* tape = nullptr);

}  // namespace ops

/// Central differences (f(p + h e_k) - f(p - h e_k)) / 2h in 64-bit arithmetic.
std::vector<double> finite_difference_grad(const std::function<double(std::span<const double>)>& f,
                                           std::span<const double> p, double h);

/// Uniform init in +-sqrt(6 / (fan_in + fan_out)), shape [fan_in, fan_out].
Tensor glorot_uniform(std::size_t fan_in, std::size_t fan_out, Rng& rng);

}  // namespace mtlsplit
