// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The mtlsplit Authors

#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "mtlsplit/autodiff.hpp"
#include "mtlsplit/tensor.hpp"

namespace mtlsplit {

struct TaskSpec {
  std::string name;
  std::uint32_t n_classes = 0;
  friend bool operator==(const TaskSpec&, const TaskSpec&) = default;
};

/// Architecture of a shared-backbone multi-head network.
struct ModelConfig {
  std::size_t width = 16;
  std::size_t height = 16;
  std::size_t channels = 3;
  std::vector<std::size_t> backbone_widths{128};
  std::size_t feature_len = 64;
  std::size_t head_hidden_width = 32;
  std::vector<TaskSpec> tasks;

  std::size_t input_len() const { return width * height * channels; }
  Shape input_shape() const { return {width, height, channels}; }

  /// Throws ConfigError on non-positive widths, empty or duplicate tasks.
  void validate() const;

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

nlohmann::json to_json(const ModelConfig& config);
ModelConfig model_config_from_json(const nlohmann::json& doc);

/// Affine layer y = x W + b, W stored [in, out].
struct Linear {
  Tensor weight;
  Tensor bias;
};

Tensor linear_forward(const Linear& layer, const Tensor& x, Tape* tape = nullptr);

/// The shared feature extractor: flatten, then linear+relu per layer.
struct Backbone {
  Shape input_shape;
  std::vector<Linear> layers;

  std::size_t input_len() const { return shape_numel(input_shape); }
  std::size_t feature_len() const;
};

/// One task-solving head: linear -> relu -> linear, emitting raw logits.
struct Head {
  std::string task;
  std::uint32_t n_classes = 0;
  Linear hidden;
  Linear output;
};

/// Non-owning view of one named parameter.
struct ParamRef {
  std::string name;
  Tensor* tensor;
};

struct ConstParamRef {
  std::string name;
  const Tensor* tensor;
};

class MtlModel {
 public:
  /// Uniform +-sqrt(6/(fan_in+fan_out)) weights and zero biases from the seeded stream.
  static MtlModel initialize(const ModelConfig& config, std::uint64_t seed);
  /// Every weight and bias zero.
  static MtlModel zeros(const ModelConfig& config);
  /// Assembles a model from its parts; checks that they agree with `config`.
  static MtlModel assemble(ModelConfig config, Backbone backbone, std::vector<Head> heads);

  const ModelConfig& config() const noexcept { return config_; }
  const Backbone& backbone() const noexcept { return backbone_; }
  Backbone& backbone() noexcept { return backbone_; }
  const std::vector<Head>& heads() const noexcept { return heads_; }
  std::vector<Head>& heads() noexcept { return heads_; }
  std::size_t n_tasks() const noexcept { return heads_.size(); }
  std::size_t feature_len() const noexcept { return config_.feature_len; }

  /// Backbone parameters first, then each head in task order.
  std::vector<ParamRef> parameters();
  std::vector<ConstParamRef> parameters() const;
  std::vector<ConstParamRef> backbone_parameters() const;
  std::vector<ConstParamRef> head_parameters(std::size_t task) const;
  std::size_t param_count() const;

  /// Copy whose parameters are leaves of `tape`.
  MtlModel bind(Tape& tape) const;

  /// Appends a freshly initialized head for a new task.
  void add_head(const TaskSpec& task, std::uint64_t seed);

  /// Bitwise equality of configuration and every parameter.
  bool bitwise_equal(const MtlModel& other) const;

 private:
  ModelConfig config_;
  Backbone backbone_;
  std::vector<Head> heads_;
};

/// Z_b = M_b(x). Accepts one input shaped like the configured image (or its
/// flattened form) and returns [feature_len]; a leading batch axis yields [batch, feature_len].
Tensor backbone_forward(const Backbone& backbone, const Tensor& x, Tape* tape = nullptr);
Tensor backbone_forward(const MtlModel& model, const Tensor& x, Tape* tape = nullptr);

/// Logits of head `task` for z of shape [feature_len] or [batch, feature_len].
Tensor head_forward(const Head& head, const Tensor& z, Tape* tape = nullptr);
Tensor head_forward(const MtlModel& model, std::size_t task, const Tensor& z, Tape* tape = nullptr);

/// Runs the backbone once and every head on its output.
std::vector<Tensor> predict_all(const MtlModel& model, const Tensor& x, Tape* tape = nullptr);

/// Which parameters a checkpoint carries.
enum class ModelSlice { kFull, kBackbone, kHeads };

std::string to_string(ModelSlice slice);

/// Binary "MTLM" container: config JSON plus named little-endian f32 tensors.
std::vector<std::uint8_t> encode_checkpoint(const MtlModel& model, ModelSlice slice = ModelSlice::kFull);

struct Checkpoint {
  ModelConfig config;
  ModelSlice slice = ModelSlice::kFull;
  std::vector<std::pair<std::string, Tensor>> params;
};

Checkpoint decode_checkpoint(std::span<const std::uint8_t> bytes);

MtlModel model_from_checkpoint(const Checkpoint& ckpt);
/// Backbone of a full or backbone-only checkpoint.
Backbone backbone_from_checkpoint(const Checkpoint& ckpt);
/// Heads of a full or heads-only checkpoint.
std::vector<Head> heads_from_checkpoint(const Checkpoint& ckpt);

void save_checkpoint(const std::string& path, const MtlModel& model, ModelSlice slice = ModelSlice::kFull);
Checkpoint load_checkpoint(const std::string& path);

/// Canonical (sorted-key, compact) JSON text.
std::string canonical_json(const nlohmann::json& doc);

}  // namespace mtlsplit
