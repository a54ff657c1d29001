// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The mtlsplit Authors

#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "mtlsplit/analyzer.hpp"
#include "mtlsplit/model.hpp"
#include "mtlsplit/synth_data.hpp"
#include "mtlsplit/trainer.hpp"
#include "mtlsplit/transport.hpp"

namespace mtlsplit {

/// Everything one CLI invocation needs. Serialized as canonical JSON; a
/// fully specified config plus its seed determines every artifact.
struct RunConfig {
  std::uint64_t seed = 42;

  FactorSpec dataset = default_benchmark_spec();
  /// MTLD file to read instead of generating from `dataset`; empty to generate.
  std::string dataset_path;
  double train_ratio = 0.8;

  std::vector<std::size_t> backbone_widths{128};
  std::size_t feature_len = 64;
  std::size_t head_hidden_width = 32;
  /// Factor names trained as tasks; empty means every factor.
  std::vector<std::string> tasks;

  // Plain SGD: the shared backbone sees the summed task gradients at full
  // strength, where Adam's per-coordinate scaling largely cancels that.
  OptimizerOptions optimizer{OptimizerKind::kSgd, 0.02f, 0.0f};
  std::size_t epochs = 50;
  std::size_t batch_size = 32;

  FinetuneConfig finetune{1e-2f, 0.0f};
  std::size_t finetune_epochs = 5;
  /// Factor to attach as a new head before fine-tuning; empty for none.
  std::string finetune_add_task;

  ChannelModel channel;
  Paradigm paradigm = Paradigm::kSC;
  Workload workload;
  std::string listen = "127.0.0.1:7070";
  std::string connect = "127.0.0.1:7070";
  std::chrono::milliseconds timeout = kDefaultTimeout;

  /// Model architecture for the configured dataset and task list.
  ModelConfig model_config() const;
  TrainOptions train_options() const { return {epochs, batch_size, seed}; }
  /// Throws ConfigError on any invalid field.
  void validate() const;
};

nlohmann::json to_json(const RunConfig& config);
/// Missing fields keep their defaults; present fields must be well-typed.
RunConfig run_config_from_json(const nlohmann::json& doc);
RunConfig load_run_config(const std::string& path);

/// 16 hex digits of FNV-1a over the canonical JSON.
std::string config_digest(const RunConfig& config);

/// STL-vs-MTL accuracy table with signed deltas (MTL - STL).
struct DeltaRow {
  std::string task;
  double stl = 0.0;
  double mtl = 0.0;
  double delta = 0.0;
};

std::vector<DeltaRow> delta_rows(const RunMetrics& stl, const RunMetrics& mtl);
std::string format_delta_table(const std::vector<DeltaRow>& rows);

}  // namespace mtlsplit
