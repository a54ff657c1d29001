// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The mtlsplit Authors

#include "mtlsplit/tensor.hpp"

#include <cstring>

#include <fmt/format.h>
#include <fmt/ranges.h>

#include "mtlsplit/error.hpp"

namespace mtlsplit {

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (std::size_t d : shape) n *= d;
  return n;
}

std::string shape_to_string(const Shape& shape) { return fmt::format("[{}]", fmt::join(shape, ", ")); }

std::vector<std::size_t> row_major_strides(const Shape& shape) {
  std::vector<std::size_t> strides(shape.size(), 1);
  for (std::size_t i = shape.size(); i > 1; --i) strides[i - 2] = strides[i - 1] * shape[i - 1];
  return strides;
}

Tensor::Tensor() : shape_{1}, data_(std::make_shared<std::vector<float>>(1, 0.0f)) {}

Tensor::Tensor(Shape shape, std::vector<float> data)
    : shape_(std::move(shape)), data_(std::make_shared<std::vector<float>>(std::move(data))) {
  if (shape_.empty()) throw DimensionError("tensor shape must have at least one axis");
  if (shape_numel(shape_) != data_->size()) {
    throw DimensionError(fmt::format("shape {} holds {} elements but {} values were given",
                                     shape_to_string(shape_), shape_numel(shape_), data_->size()));
  }
}

Tensor Tensor::zeros(Shape shape) { return filled(std::move(shape), 0.0f); }

Tensor Tensor::filled(Shape shape, float value) {
  const std::size_t n = shape_numel(shape);
  return Tensor(std::move(shape), std::vector<float>(n, value));
}

Tensor Tensor::scalar(float value) { return Tensor({1}, {value}); }

Tensor Tensor::matrix(std::initializer_list<std::initializer_list<float>> rows) {
  const std::size_t n_rows = rows.size();
  const std::size_t n_cols = n_rows == 0 ? 0 : rows.begin()->size();
  std::vector<float> data;
  data.reserve(n_rows * n_cols);
  for (const auto& row : rows) {
    if (row.size() != n_cols) throw DimensionError("ragged matrix literal");
    data.insert(data.end(), row.begin(), row.end());
  }
  return Tensor({n_rows, n_cols}, std::move(data));
}

Tensor Tensor::vector(std::initializer_list<float> values) {
  return Tensor({values.size()}, std::vector<float>(values));
}

std::span<float> Tensor::mutable_data() {
  if (data_.use_count() > 1) data_ = std::make_shared<std::vector<float>>(*data_);
  node_.reset();
  return *data_;
}

float Tensor::at(std::initializer_list<std::size_t> index) const {
  if (index.size() != shape_.size()) {
    throw IndexError(fmt::format("index of rank {} into tensor of shape {}", index.size(),
                                 shape_to_string(shape_)));
  }
  const auto strides = row_major_strides(shape_);
  std::size_t offset = 0;
  std::size_t axis = 0;
  for (std::size_t i : index) {
    if (i >= shape_[axis]) {
      throw IndexError(fmt::format("index {} out of range on axis {} of shape {}", i, axis,
                                   shape_to_string(shape_)));
    }
    offset += i * strides[axis++];
  }
  return (*data_)[offset];
}

float Tensor::item() const {
  if (numel() != 1) {
    throw ContractError(fmt::format("item() on tensor of shape {}", shape_to_string(shape_)));
  }
  return (*data_)[0];
}

Tensor Tensor::with_node(NodeRef node) const {
  Tensor t = *this;
  t.node_ = node;
  return t;
}

Tensor Tensor::detached() const {
  Tensor t = *this;
  t.node_.reset();
  return t;
}

bool Tensor::bitwise_equal(const Tensor& other) const {
  if (shape_ != other.shape_) return false;
  if (data_ == other.data_) return true;
  return std::memcmp(data_->data(), other.data_->data(), data_->size() * sizeof(float)) == 0;
}

std::vector<float> flatten_feature(const Tensor& z) {
  const auto data = z.data();
  return {data.begin(), data.end()};
}

Tensor unflatten_feature(std::span<const float> flat, const Shape& shape) {
  return Tensor(shape, std::vector<float>(flat.begin(), flat.end()));
}

}  // namespace mtlsplit
