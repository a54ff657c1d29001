// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The mtlsplit Authors

#include "mtlsplit/run_config.hpp"

#include <algorithm>
#include <string>

#include <fmt/format.h>

#include "mtlsplit/binary_io.hpp"
#include "mtlsplit/error.hpp"
#include "mtlsplit/rng.hpp"

namespace mtlsplit {

namespace {

// Shortest decimal that reads back as the same float, so 0.01f prints as 0.01.
double float_for_json(float v) { return std::stod(fmt::format("{}", v)); }

}  // namespace

ModelConfig RunConfig::model_config() const {
  ModelConfig m;
  m.width = dataset.width;
  m.height = dataset.height;
  m.channels = FactorSpec::kChannels;
  m.backbone_widths = backbone_widths;
  m.feature_len = feature_len;
  m.head_hidden_width = head_hidden_width;
  for (const auto& f : dataset.factors) {
    if (tasks.empty() || std::find(tasks.begin(), tasks.end(), f.name) != tasks.end()) {
      m.tasks.push_back({f.name, f.n_values});
    }
  }
  return m;
}

void RunConfig::validate() const {
  try {
    dataset.validate();
  } catch (const ContractError& e) {
    throw ConfigError(fmt::format("dataset: {}", e.what()));
  } catch (const UnsupportedFactorError& e) {
    throw ConfigError(fmt::format("dataset: {}", e.what()));
  }
  for (const auto& t : tasks) {
    const auto& f = dataset.factors;
    if (std::none_of(f.begin(), f.end(), [&](const Factor& x) { return x.name == t; })) {
      throw ConfigError(fmt::format("task '{}' is not a dataset factor", t));
    }
  }
  if (!(train_ratio > 0.0 && train_ratio < 1.0)) throw ConfigError("train_ratio must lie in (0, 1)");
  if (batch_size == 0) throw ConfigError("batch_size must be positive");
  if (!(optimizer.learning_rate >= 0.0f)) throw ConfigError("learning rate must be non-negative");
  model_config().validate();
  channel.validate();
  if (!finetune_add_task.empty()) {
    const auto& f = dataset.factors;
    if (std::none_of(f.begin(), f.end(), [&](const Factor& x) { return x.name == finetune_add_task; })) {
      throw ConfigError(fmt::format("fine-tune task '{}' is not a dataset factor", finetune_add_task));
    }
  }
}

nlohmann::json to_json(const RunConfig& c) {
  return {
      {"seed", c.seed},
      {"dataset", to_json(c.dataset)},
      {"dataset_path", c.dataset_path},
      {"train_ratio", c.train_ratio},
      {"model",
       {{"backbone_widths", c.backbone_widths},
        {"feature_len", c.feature_len},
        {"head_hidden_width", c.head_hidden_width},
        {"tasks", c.tasks}}},
      {"optimizer",
       {{"kind", to_string(c.optimizer.kind)},
        {"learning_rate", float_for_json(c.optimizer.learning_rate)},
        {"weight_decay", float_for_json(c.optimizer.weight_decay)}}},
      {"epochs", c.epochs},
      {"batch_size", c.batch_size},
      {"finetune",
       {{"alpha", float_for_json(c.finetune.alpha)},
        {"eta", float_for_json(c.finetune.eta)},
        {"epochs", c.finetune_epochs},
        {"add_task", c.finetune_add_task}}},
      {"channel", to_json(c.channel)},
      {"paradigm", to_string(c.paradigm)},
      {"workload",
       {{"n_inputs", c.workload.n_inputs},
        {"input_shape", c.workload.input_shape},
        {"n_tasks", c.workload.n_tasks}}},
      {"listen", c.listen},
      {"connect", c.connect},
      {"timeout_ms", c.timeout.count()},
  };
}

RunConfig run_config_from_json(const nlohmann::json& doc) {
  RunConfig c;
  if (!doc.is_object()) throw ConfigError("config: expected a JSON object");
  std::string where;
  try {
    where = "seed";
    c.seed = doc.value("seed", c.seed);
    where = "dataset";
    if (doc.contains("dataset")) c.dataset = factor_spec_from_json(doc.at("dataset"));
    where = "dataset_path";
    c.dataset_path = doc.value("dataset_path", c.dataset_path);
    where = "train_ratio";
    c.train_ratio = doc.value("train_ratio", c.train_ratio);
    if (doc.contains("model")) {
      const auto& m = doc.at("model");
      where = "model.backbone_widths";
      c.backbone_widths = m.value("backbone_widths", c.backbone_widths);
      where = "model.feature_len";
      c.feature_len = m.value("feature_len", c.feature_len);
      where = "model.head_hidden_width";
      c.head_hidden_width = m.value("head_hidden_width", c.head_hidden_width);
      where = "model.tasks";
      c.tasks = m.value("tasks", c.tasks);
    }
    if (doc.contains("optimizer")) {
      const auto& o = doc.at("optimizer");
      where = "optimizer.kind";
      c.optimizer.kind = optimizer_kind_from_string(o.value("kind", to_string(c.optimizer.kind)));
      where = "optimizer.learning_rate";
      c.optimizer.learning_rate = o.value("learning_rate", c.optimizer.learning_rate);
      where = "optimizer.weight_decay";
      c.optimizer.weight_decay = o.value("weight_decay", c.optimizer.weight_decay);
    }
    where = "epochs";
    c.epochs = doc.value("epochs", c.epochs);
    where = "batch_size";
    c.batch_size = doc.value("batch_size", c.batch_size);
    if (doc.contains("finetune")) {
      const auto& f = doc.at("finetune");
      where = "finetune.alpha";
      c.finetune.alpha = f.value("alpha", c.finetune.alpha);
      where = "finetune.eta";
      c.finetune.eta = f.value("eta", c.finetune.eta);
      where = "finetune.epochs";
      c.finetune_epochs = f.value("epochs", c.finetune_epochs);
      where = "finetune.add_task";
      c.finetune_add_task = f.value("add_task", c.finetune_add_task);
    }
    where = "channel";
    if (doc.contains("channel")) c.channel = channel_from_json(doc.at("channel"));
    where = "paradigm";
    if (doc.contains("paradigm")) c.paradigm = paradigm_from_string(doc.at("paradigm").get<std::string>());
    if (doc.contains("workload")) {
      const auto& w = doc.at("workload");
      where = "workload.n_inputs";
      c.workload.n_inputs = w.value("n_inputs", c.workload.n_inputs);
      where = "workload.input_shape";
      c.workload.input_shape = w.value("input_shape", c.workload.input_shape);
      where = "workload.n_tasks";
      c.workload.n_tasks = w.value("n_tasks", c.workload.n_tasks);
    }
    where = "listen";
    c.listen = doc.value("listen", c.listen);
    where = "connect";
    c.connect = doc.value("connect", c.connect);
    where = "timeout_ms";
    c.timeout = std::chrono::milliseconds(doc.value("timeout_ms", c.timeout.count()));
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(fmt::format("config field '{}': {}", where, e.what()));
  } catch (const ParseError& e) {
    throw ConfigError(fmt::format("config field '{}': {}", where, e.what()));
  }
  return c;
}

RunConfig load_run_config(const std::string& path) {
  const auto bytes = read_file(path);
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(bytes.begin(), bytes.end());
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError(fmt::format("config '{}': {}", path, e.what()));
  }
  return run_config_from_json(doc);
}

std::string config_digest(const RunConfig& config) {
  return fmt::format("{:016x}", fnv1a64(canonical_json(to_json(config))));
}

std::vector<DeltaRow> delta_rows(const RunMetrics& stl, const RunMetrics& mtl) {
  std::vector<DeltaRow> rows;
  for (std::size_t j = 0; j < mtl.tasks.size(); ++j) {
    const auto it = std::find(stl.tasks.begin(), stl.tasks.end(), mtl.tasks[j]);
    if (it == stl.tasks.end()) {
      throw ContractError(fmt::format("STL metrics have no entry for task '{}'", mtl.tasks[j]));
    }
    const double s = stl.accuracies[static_cast<std::size_t>(it - stl.tasks.begin())];
    const double m = mtl.accuracies[j];
    rows.push_back({mtl.tasks[j], s, m, round2(m - s)});
  }
  return rows;
}

std::string format_delta_table(const std::vector<DeltaRow>& rows) {
  std::string out = fmt::format("{:<16} {:>10} {:>10} {:>10}\n", "task", "STL (%)", "MTL (%)", "delta");
  for (const auto& r : rows) {
    out += fmt::format("{:<16} {:>10.2f} {:>10.2f} {:>+10.2f}\n", r.task, r.stl, r.mtl, r.delta);
  }
  return out;
}

}  // namespace mtlsplit
