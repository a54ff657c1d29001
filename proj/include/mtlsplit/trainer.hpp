// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The mtlsplit Authors

#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "mtlsplit/model.hpp"
#include "mtlsplit/synth_data.hpp"

namespace mtlsplit {

/// Inputs flattened to [K, input_len] plus labels[i][j] aligned with the model's heads.
struct TaskData {
  Tensor inputs;
  std::vector<std::vector<std::uint32_t>> labels;

  std::size_t size() const noexcept { return labels.size(); }
};

/// Selects the label columns named by `task_names` (factor names) from a dataset.
TaskData task_data(const Dataset& dataset, std::span<const std::string> task_names);
/// Label columns matching the model's head names.
TaskData task_data(const Dataset& dataset, const MtlModel& model);

struct Batch {
  Tensor inputs;  // [b, input_len]
  std::vector<std::vector<std::uint32_t>> labels;
};

Batch make_batch(const TaskData& data, std::span<const std::size_t> indices);
Batch whole_batch(const TaskData& data);

/// Per-task batch-mean losses and their sum, accumulated in task order.
struct LossReport {
  std::vector<float> per_task;
  float total = 0.0f;
};

/// Gradients keyed by parameter name.
using GradientMap = std::map<std::string, Tensor>;

/// Forward pass of L_total on a fresh tape. When `grad_task` is set, gradients
/// are of L_{grad_task}; otherwise of L_total.
struct LossEvaluation {
  LossReport report;
  GradientMap grads;
};
LossEvaluation loss_and_gradients(const MtlModel& model, const Batch& batch,
                                  std::optional<std::size_t> grad_task = std::nullopt);

LossReport total_loss(const MtlModel& model, const Batch& batch);

enum class OptimizerKind { kSgd, kAdamW };

std::string to_string(OptimizerKind kind);
OptimizerKind optimizer_kind_from_string(const std::string& text);

struct OptimizerOptions {
  OptimizerKind kind = OptimizerKind::kAdamW;
  float learning_rate = 1e-3f;
  float weight_decay = 0.01f;
  float beta1 = 0.9f;
  float beta2 = 0.999f;
  float epsilon = 1e-8f;
};

/// SGD or Adam with decoupled weight decay. Moment buffers are created lazily,
/// one pair per parameter name, with the parameter's shape.
class Optimizer {
 public:
  explicit Optimizer(OptimizerOptions options);

  void step(MtlModel& model, const GradientMap& grads);

  const OptimizerOptions& options() const noexcept { return options_; }
  std::uint64_t steps() const noexcept { return steps_; }
  /// First and second moments for a parameter (adaptive kind only).
  const std::vector<float>* first_moment(const std::string& name) const;
  const std::vector<float>* second_moment(const std::string& name) const;

 private:
  struct Moments {
    std::vector<float> first;
    std::vector<float> second;
  };
  OptimizerOptions options_;
  std::uint64_t steps_ = 0;
  std::map<std::string, Moments> moments_;
};

/// One forward, one backward of L_total, one optimizer update. Returns pre-update losses.
LossReport train_step(MtlModel& model, const Batch& batch, Optimizer& opt);

/// Two-rate fine-tuning: heads step at `alpha` on their own task loss, the
/// backbone steps at `eta` on L_total. Plain gradient steps.
struct FinetuneConfig {
  float alpha = 1e-2f;
  float eta = 0.0f;
  void validate() const;
};

LossReport finetune_step(MtlModel& model, const Batch& batch, const FinetuneConfig& cfg);

/// Percentage of samples whose argmax logit equals the label, one entry per head.
std::vector<double> evaluate(const MtlModel& model, const TaskData& data);

struct TrainOptions {
  std::size_t epochs = 10;
  std::size_t batch_size = 64;
  std::uint64_t seed = 42;
};

/// Mean batch loss per epoch, one vector of per-task values per epoch.
struct TrainHistory {
  std::vector<std::vector<double>> epoch_losses;
};

/// Mini-batch training over seeded per-epoch shuffles.
TrainHistory train(MtlModel& model, const TaskData& data, Optimizer& opt, const TrainOptions& options);

/// Two-rate fine-tuning over seeded mini-batches.
TrainHistory finetune(MtlModel& model, const TaskData& data, const FinetuneConfig& cfg,
                      const TrainOptions& options);

/// Independent single-head network for task `task` of `config`, initialized
/// from the same seed and trained on that task's labels only.
MtlModel train_stl(const ModelConfig& config, std::size_t task, const TaskData& data,
                   const TrainOptions& options, const OptimizerOptions& opt,
                   TrainHistory* history = nullptr);

/// Metrics document for one run.
struct RunMetrics {
  std::uint64_t seed = 0;
  std::string config_digest;
  std::string mode;
  std::vector<std::string> tasks;
  std::vector<std::vector<double>> epoch_losses;
  std::vector<double> accuracies;
  double wall_clock_seconds = 0.0;
};

nlohmann::json to_json(const RunMetrics& metrics);
RunMetrics run_metrics_from_json(const nlohmann::json& doc);

/// Accuracy rounded to two decimals, as published in metrics.
double round2(double value);

}  // namespace mtlsplit
