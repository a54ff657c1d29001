// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The mtlsplit Authors

#pragma once

#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace mtlsplit {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_to_string(const Shape& shape);

/// Row-major strides for `shape`.
std::vector<std::size_t> row_major_strides(const Shape& shape);

/// Handle of a recorded value on a Tape. `tape` identifies the owning tape.
struct NodeRef {
  std::uint64_t tape = 0;
  std::uint32_t index = 0;
  friend bool operator==(const NodeRef&, const NodeRef&) = default;
};

/// Dense row-major float32 array. Storage is shared between copies and is
/// never written in place while shared; `mutable_data()` clones on demand.
class Tensor {
 public:
  /// A single zero with shape [1].
  Tensor();
  Tensor(Shape shape, std::vector<float> data);

  static Tensor zeros(Shape shape);
  static Tensor filled(Shape shape, float value);
  static Tensor scalar(float value);
  /// Shape [rows, cols] from nested rows; all rows must be the same length.
  static Tensor matrix(std::initializer_list<std::initializer_list<float>> rows);
  static Tensor vector(std::initializer_list<float> values);

  const Shape& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t dim(std::size_t axis) const { return shape_.at(axis); }
  std::size_t numel() const noexcept { return data_->size(); }

  std::span<const float> data() const noexcept { return *data_; }
  /// Writable view. Detaches this tensor from any tape and from shared storage.
  std::span<float> mutable_data();

  /// Element at a multi-index, using row-major strides.
  float at(std::initializer_list<std::size_t> index) const;
  /// Value of a one-element tensor.
  float item() const;

  const std::optional<NodeRef>& node() const noexcept { return node_; }
  Tensor with_node(NodeRef node) const;
  Tensor detached() const;

  /// Same shape and identical bit patterns for every element.
  bool bitwise_equal(const Tensor& other) const;

 private:
  Shape shape_;
  std::shared_ptr<std::vector<float>> data_;
  std::optional<NodeRef> node_;
};

/// Row-major flattening of `z` into its raw element sequence.
std::vector<float> flatten_feature(const Tensor& z);
Tensor unflatten_feature(std::span<const float> flat, const Shape& shape);

}  // namespace mtlsplit
