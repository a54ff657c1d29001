// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The mtlsplit Authors

#include "mtlsplit/autodiff.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <optional>

#include <fmt/format.h>

#include "mtlsplit/error.hpp"
#include "mtlsplit/rng.hpp"

namespace mtlsplit {

namespace {

std::atomic<std::uint64_t> next_tape_id{1};

// c[m,n] = a[m,k] * b[k,n]; every c element accumulates over k in increasing order.
void matmul_kernel(const float* a, const float* b, float* c, std::size_t m, std::size_t k,
                   std::size_t n) {
  std::fill(c, c + m * n, 0.0f);
  for (std::size_t i = 0; i < m; ++i) {
    float* crow = c + i * n;
    for (std::size_t kk = 0; kk < k; ++kk) {
      const float aik = a[i * k + kk];
      const float* brow = b + kk * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += aik * brow[j];
    }
  }
}

}  // namespace

/// Records nodes on behalf of the free-function ops.
class TapeAccess {
 public:
  // Returns the tape an op should record on, or nullptr when the result is a constant.
  static Tape* recording(Tape* tape, const Tensor& a, const Tensor* b = nullptr) {
    if (tape == nullptr) return nullptr;
    const bool a_on = check(*tape, a);
    const bool b_on = b != nullptr && check(*tape, *b);
    return (a_on || b_on) ? tape : nullptr;
  }

  static std::int64_t input_of(const Tensor& t) {
    return t.node() ? static_cast<std::int64_t>(t.node()->index) : -1;
  }

  static Tensor append(Tape& tape, Tape::Node node, Tensor out) {
    node.out_shape = out.shape();
    const auto index = static_cast<std::uint32_t>(tape.nodes_.size());
    tape.nodes_.push_back(std::move(node));
    return out.with_node(NodeRef{tape.id_, index});
  }

 private:
  static bool check(const Tape& tape, const Tensor& t) {
    if (!t.node()) return false;
    if (t.node()->tape != tape.id()) {
      throw ContractError("tensor recorded on a different tape was passed to an op");
    }
    return true;
  }
};

Tape::Tape() : id_(next_tape_id.fetch_add(1)) {}

Tensor Tape::watch(const Tensor& value) {
  Node node;
  node.kind = OpKind::kLeaf;
  return TapeAccess::append(*this, std::move(node), value.detached());
}

std::size_t Tape::count(OpKind kind) const {
  return static_cast<std::size_t>(
      std::count_if(nodes_.begin(), nodes_.end(), [kind](const Node& n) { return n.kind == kind; }));
}

bool Tape::owns(const Tensor& t) const { return t.node() && t.node()->tape == id_; }

const Tensor& Gradients::of(const Tensor& leaf) const {
  if (!leaf.node() || leaf.node()->tape != tape_) {
    throw ContractError("gradient requested for a tensor that is not a leaf of this tape");
  }
  const auto it = by_leaf_.find(leaf.node()->index);
  if (it == by_leaf_.end()) throw ContractError("gradient requested for a non-leaf node");
  return it->second;
}

namespace ops {

Tensor matmul(const Tensor& a, const Tensor& b, Tape* tape) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) {
    throw DimensionError(fmt::format("matmul shape mismatch: {} x {}", shape_to_string(a.shape()),
                                     shape_to_string(b.shape())));
  }
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  std::vector<float> out(m * n);
  matmul_kernel(a.data().data(), b.data().data(), out.data(), m, k, n);
  Tensor result({m, n}, std::move(out));
  if (Tape* t = TapeAccess::recording(tape, a, &b)) {
    Tape::Node node;
    node.kind = OpKind::kMatmul;
    node.lhs = TapeAccess::input_of(a);
    node.rhs = TapeAccess::input_of(b);
    node.saved = {a.detached(), b.detached()};
    return TapeAccess::append(*t, std::move(node), std::move(result));
  }
  return result;
}

Tensor add_bias(const Tensor& a, const Tensor& bias, Tape* tape) {
  const std::size_t n = bias.numel();
  if (bias.rank() != 1 || (a.rank() != 1 && a.rank() != 2) || a.shape().back() != n) {
    throw DimensionError(fmt::format("add_bias shape mismatch: {} + {}", shape_to_string(a.shape()),
                                     shape_to_string(bias.shape())));
  }
  std::vector<float> out(a.data().begin(), a.data().end());
  const auto bd = bias.data();
  for (std::size_t row = 0; row < out.size() / std::max<std::size_t>(n, 1); ++row) {
    float* dst = out.data() + row * n;
    for (std::size_t j = 0; j < n; ++j) dst[j] += bd[j];
  }
  Tensor result(a.shape(), std::move(out));
  if (Tape* t = TapeAccess::recording(tape, a, &bias)) {
    Tape::Node node;
    node.kind = OpKind::kAddBias;
    node.lhs = TapeAccess::input_of(a);
    node.rhs = TapeAccess::input_of(bias);
    return TapeAccess::append(*t, std::move(node), std::move(result));
  }
  return result;
}

Tensor relu(const Tensor& a, Tape* tape) {
  std::vector<float> out(a.numel());
  const auto in = a.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = in[i] > 0.0f ? in[i] : 0.0f;
  Tensor result(a.shape(), std::move(out));
  if (Tape* t = TapeAccess::recording(tape, a)) {
    Tape::Node node;
    node.kind = OpKind::kRelu;
    node.lhs = TapeAccess::input_of(a);
    node.saved = {a.detached()};
    return TapeAccess::append(*t, std::move(node), std::move(result));
  }
  return result;
}

Tensor reshape(const Tensor& a, Shape shape, Tape* tape) {
  if (shape_numel(shape) != a.numel()) {
    throw DimensionError(fmt::format("cannot reshape {} into {}", shape_to_string(a.shape()),
                                     shape_to_string(shape)));
  }
  Tensor result(std::move(shape), std::vector<float>(a.data().begin(), a.data().end()));
  if (Tape* t = TapeAccess::recording(tape, a)) {
    Tape::Node node;
    node.kind = OpKind::kReshape;
    node.lhs = TapeAccess::input_of(a);
    return TapeAccess::append(*t, std::move(node), std::move(result));
  }
  return result;
}

Tensor flatten_rows(const Tensor& a, Tape* tape) {
  const std::size_t rows = a.dim(0);
  return reshape(a, {rows, rows == 0 ? 0 : a.numel() / rows}, tape);
}

Tensor add(const Tensor& a, const Tensor& b, Tape* tape) {
  if (a.shape() != b.shape()) {
    throw DimensionError(fmt::format("add shape mismatch: {} + {}", shape_to_string(a.shape()),
                                     shape_to_string(b.shape())));
  }
  std::vector<float> out(a.numel());
  const auto x = a.data();
  const auto y = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] + y[i];
  Tensor result(a.shape(), std::move(out));
  if (Tape* t = TapeAccess::recording(tape, a, &b)) {
    Tape::Node node;
    node.kind = OpKind::kAdd;
    node.lhs = TapeAccess::input_of(a);
    node.rhs = TapeAccess::input_of(b);
    return TapeAccess::append(*t, std::move(node), std::move(result));
  }
  return result;
}

Tensor scale(const Tensor& a, float factor, Tape* tape) {
  std::vector<float> out(a.numel());
  const auto x = a.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] * factor;
  Tensor result(a.shape(), std::move(out));
  if (Tape* t = TapeAccess::recording(tape, a)) {
    Tape::Node node;
    node.kind = OpKind::kScale;
    node.lhs = TapeAccess::input_of(a);
    node.factor = factor;
    return TapeAccess::append(*t, std::move(node), std::move(result));
  }
  return result;
}

Tensor cross_entropy(const Tensor& logits, std::span<const std::uint32_t> labels, Tape* tape) {
  if (logits.rank() != 2 || logits.dim(0) != labels.size()) {
    throw DimensionError(fmt::format("cross_entropy expects [batch, classes] logits with one label "
                                     "per row; got {} and {} labels",
                                     shape_to_string(logits.shape()), labels.size()));
  }
  const std::size_t rows = logits.dim(0), classes = logits.dim(1);
  const auto z = logits.data();
  std::vector<float> loss(rows);
  std::vector<float> probs(rows * classes);
  for (std::size_t r = 0; r < rows; ++r) {
    if (labels[r] >= classes) {
      throw IndexError(fmt::format("label {} out of range for {} classes", labels[r], classes));
    }
    const float* row = z.data() + r * classes;
    const double top = *std::max_element(row, row + classes);
    double denom = 0.0;
    for (std::size_t c = 0; c < classes; ++c) denom += std::exp(static_cast<double>(row[c]) - top);
    const double log_denom = std::log(denom);
    for (std::size_t c = 0; c < classes; ++c) {
      probs[r * classes + c] = static_cast<float>(std::exp(static_cast<double>(row[c]) - top) / denom);
    }
    loss[r] = static_cast<float>(log_denom - (static_cast<double>(row[labels[r]]) - top));
  }
  Tensor result({rows}, std::move(loss));
  if (Tape* t = TapeAccess::recording(tape, logits)) {
    Tape::Node node;
    node.kind = OpKind::kCrossEntropy;
    node.lhs = TapeAccess::input_of(logits);
    node.saved = {Tensor({rows, classes}, std::move(probs))};
    node.labels.assign(labels.begin(), labels.end());
    return TapeAccess::append(*t, std::move(node), std::move(result));
  }
  return result;
}

Tensor softmax_cross_entropy(const Tensor& logits, std::uint32_t label, Tape* tape) {
  if (logits.rank() != 1) {
    throw DimensionError(fmt::format("softmax_cross_entropy expects a logit vector, got {}",
                                     shape_to_string(logits.shape())));
  }
  const std::uint32_t labels[1] = {label};
  return cross_entropy(reshape(logits, {1, logits.numel()}, tape), labels, tape);
}

Tensor mean(const Tensor& a, Tape* tape) {
  double total = 0.0;
  for (float v : a.data()) total += v;
  const std::size_t n = a.numel();
  Tensor result = Tensor::scalar(n == 0 ? 0.0f : static_cast<float>(total / static_cast<double>(n)));
  if (Tape* t = TapeAccess::recording(tape, a)) {
    Tape::Node node;
    node.kind = OpKind::kMean;
    node.lhs = TapeAccess::input_of(a);
    return TapeAccess::append(*t, std::move(node), std::move(result));
  }
  return result;
}

Tensor sum(const Tensor& a, Tape* tape) {
  double total = 0.0;
  for (float v : a.data()) total += v;
  Tensor result = Tensor::scalar(static_cast<float>(total));
  if (Tape* t = TapeAccess::recording(tape, a)) {
    Tape::Node node;
    node.kind = OpKind::kSum;
    node.lhs = TapeAccess::input_of(a);
    return TapeAccess::append(*t, std::move(node), std::move(result));
  }
  return result;
}

}  // namespace ops

Gradients backward(const Tape& tape, const Tensor& loss) {
  if (!tape.owns(loss)) throw ContractError("backward: loss is not recorded on this tape");
  if (loss.numel() != 1) {
    throw ContractError(fmt::format("backward: loss must be scalar, got shape {}",
                                    shape_to_string(loss.shape())));
  }
  const auto& nodes = tape.nodes_;
  const std::size_t root = loss.node()->index;
  std::vector<std::optional<std::vector<float>>> grads(nodes.size());
  grads[root] = std::vector<float>{1.0f};

  auto accumulate = [&](std::int64_t target, std::vector<float> g) {
    if (target < 0) return;
    auto& slot = grads[static_cast<std::size_t>(target)];
    if (!slot) {
      slot = std::move(g);
    } else {
      for (std::size_t i = 0; i < g.size(); ++i) (*slot)[i] += g[i];
    }
  };

  for (std::size_t idx = root + 1; idx-- > 0;) {
    const auto& node = nodes[idx];
    if (node.kind == OpKind::kLeaf || !grads[idx]) continue;
    const std::vector<float> g = std::move(*grads[idx]);
    grads[idx].reset();
    switch (node.kind) {
      case OpKind::kMatmul: {
        const Tensor& a = node.saved[0];
        const Tensor& b = node.saved[1];
        const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
        const float* ad = a.data().data();
        const float* bd = b.data().data();
        if (node.lhs >= 0) {
          std::vector<float> da(m * k, 0.0f);
          for (std::size_t i = 0; i < m; ++i) {
            for (std::size_t kk = 0; kk < k; ++kk) {
              float acc = 0.0f;
              const float* grow = g.data() + i * n;
              const float* brow = bd + kk * n;
              for (std::size_t j = 0; j < n; ++j) acc += grow[j] * brow[j];
              da[i * k + kk] = acc;
            }
          }
          accumulate(node.lhs, std::move(da));
        }
        if (node.rhs >= 0) {
          std::vector<float> db(k * n, 0.0f);
          for (std::size_t i = 0; i < m; ++i) {
            const float* grow = g.data() + i * n;
            for (std::size_t kk = 0; kk < k; ++kk) {
              const float aik = ad[i * k + kk];
              float* drow = db.data() + kk * n;
              for (std::size_t j = 0; j < n; ++j) drow[j] += aik * grow[j];
            }
          }
          accumulate(node.rhs, std::move(db));
        }
        break;
      }
      case OpKind::kAddBias: {
        const std::size_t n = node.out_shape.back();
        if (node.rhs >= 0) {
          std::vector<float> dbias(n, 0.0f);
          for (std::size_t row = 0; row < g.size() / std::max<std::size_t>(n, 1); ++row) {
            for (std::size_t j = 0; j < n; ++j) dbias[j] += g[row * n + j];
          }
          accumulate(node.rhs, std::move(dbias));
        }
        if (node.lhs >= 0) accumulate(node.lhs, g);
        break;
      }
      case OpKind::kRelu: {
        const auto x = node.saved[0].data();
        std::vector<float> dx(g.size());
        for (std::size_t i = 0; i < g.size(); ++i) dx[i] = x[i] > 0.0f ? g[i] : 0.0f;
        accumulate(node.lhs, std::move(dx));
        break;
      }
      case OpKind::kReshape:
        accumulate(node.lhs, g);
        break;
      case OpKind::kAdd:
        if (node.rhs >= 0) accumulate(node.rhs, g);
        if (node.lhs >= 0) accumulate(node.lhs, g);
        break;
      case OpKind::kScale: {
        std::vector<float> dx(g.size());
        for (std::size_t i = 0; i < g.size(); ++i) dx[i] = g[i] * node.factor;
        accumulate(node.lhs, std::move(dx));
        break;
      }
      case OpKind::kCrossEntropy: {
        const Tensor& probs = node.saved[0];
        const std::size_t rows = probs.dim(0), classes = probs.dim(1);
        const auto p = probs.data();
        std::vector<float> dz(rows * classes);
        for (std::size_t r = 0; r < rows; ++r) {
          for (std::size_t c = 0; c < classes; ++c) {
            const float target = c == node.labels[r] ? 1.0f : 0.0f;
            dz[r * classes + c] = g[r] * (p[r * classes + c] - target);
          }
        }
        accumulate(node.lhs, std::move(dz));
        break;
      }
      case OpKind::kMean: {
        const std::size_t n = shape_numel(nodes[static_cast<std::size_t>(node.lhs)].out_shape);
        const float share = n == 0 ? 0.0f : static_cast<float>(static_cast<double>(g[0]) / n);
        accumulate(node.lhs, std::vector<float>(n, share));
        break;
      }
      case OpKind::kSum: {
        const std::size_t n = shape_numel(nodes[static_cast<std::size_t>(node.lhs)].out_shape);
        accumulate(node.lhs, std::vector<float>(n, g[0]));
        break;
      }
      case OpKind::kLeaf:
        break;
    }
  }

  Gradients out;
  out.tape_ = tape.id();
  for (std::size_t idx = 0; idx < nodes.size(); ++idx) {
    if (nodes[idx].kind != OpKind::kLeaf) continue;
    const Shape& shape = nodes[idx].out_shape;
    if (grads[idx] && idx <= root) {
      out.by_leaf_.emplace(static_cast<std::uint32_t>(idx), Tensor(shape, std::move(*grads[idx])));
    } else {
      out.by_leaf_.emplace(static_cast<std::uint32_t>(idx), Tensor::zeros(shape));
    }
  }
  return out;
}

std::vector<double> finite_difference_grad(const std::function<double(std::span<const double>)>& f,
                                           std::span<const double> p, double h) {
  if (!(h > 0.0)) throw ContractError("finite_difference_grad: step must be positive");
  std::vector<double> point(p.begin(), p.end());
  std::vector<double> grad(point.size());
  for (std::size_t k = 0; k < point.size(); ++k) {
    const double original = point[k];
    point[k] = original + h;
    const double up = f(point);
    point[k] = original - h;
    const double down = f(point);
    point[k] = original;
    grad[k] = (up - down) / (2.0 * h);
  }
  return grad;
}

Tensor glorot_uniform(std::size_t fan_in, std::size_t fan_out, Rng& rng) {
  const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  std::vector<float> data(fan_in * fan_out);
  for (float& v : data) v = static_cast<float>(rng.uniform(-limit, limit));
  return Tensor({fan_in, fan_out}, std::move(data));
}

}  // namespace mtlsplit
