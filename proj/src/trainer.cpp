// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The mtlsplit Authors

#include "mtlsplit/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include <fmt/format.h>

#include "mtlsplit/error.hpp"
#include "mtlsplit/rng.hpp"

namespace mtlsplit {

TaskData task_data(const Dataset& dataset, std::span<const std::string> task_names) {
  std::vector<std::size_t> columns;
  for (const auto& name : task_names) {
    const auto& f = dataset.spec.factors;
    const auto it = std::find_if(f.begin(), f.end(), [&](const Factor& x) { return x.name == name; });
    if (it == f.end()) throw ContractError(fmt::format("dataset has no labels for task '{}'", name));
    columns.push_back(static_cast<std::size_t>(it - f.begin()));
  }
  const std::size_t k = dataset.size();
  const std::size_t d = dataset.spec.width * dataset.spec.height * FactorSpec::kChannels;
  std::vector<float> inputs;
  inputs.reserve(k * d);
  TaskData out;
  out.labels.reserve(k);
  for (const auto& s : dataset.samples) {
    inputs.insert(inputs.end(), s.pixels.data().begin(), s.pixels.data().end());
    std::vector<std::uint32_t> labels;
    for (std::size_t c : columns) labels.push_back(s.labels.at(c));
    out.labels.push_back(std::move(labels));
  }
  out.inputs = Tensor({k, d}, std::move(inputs));
  return out;
}

TaskData task_data(const Dataset& dataset, const MtlModel& model) {
  std::vector<std::string> names;
  for (const auto& head : model.heads()) names.push_back(head.task);
  return task_data(dataset, names);
}

Batch make_batch(const TaskData& data, std::span<const std::size_t> indices) {
  const std::size_t d = data.inputs.dim(1);
  const auto src = data.inputs.data();
  std::vector<float> x(indices.size() * d);
  Batch batch;
  batch.labels.reserve(indices.size());
  for (std::size_t r = 0; r < indices.size(); ++r) {
    std::copy_n(src.begin() + static_cast<std::ptrdiff_t>(indices[r] * d), d, x.begin() + static_cast<std::ptrdiff_t>(r * d));
    batch.labels.push_back(data.labels.at(indices[r]));
  }
  batch.inputs = Tensor({indices.size(), d}, std::move(x));
  return batch;
}

Batch whole_batch(const TaskData& data) { return Batch{data.inputs, data.labels}; }

namespace {

struct RecordedLoss {
  MtlModel bound;
  std::vector<Tensor> task_losses;
  Tensor total;
  LossReport report;
};

// Builds L_j = mean_i CE(head_j(x_i), y_ij) and L_total = ((L_1 + L_2) + ...) on `tape`.
RecordedLoss record_loss(const MtlModel& model, const Batch& batch, Tape& tape) {
  const std::size_t n_tasks = model.n_tasks();
  const std::size_t rows = batch.labels.size();
  if (rows == 0) throw ContractError("empty batch");
  for (const auto& y : batch.labels) {
    if (y.size() != n_tasks) {
      throw ContractError(fmt::format("sample carries {} labels, model has {} tasks", y.size(), n_tasks));
    }
  }
  RecordedLoss rec{model.bind(tape), {}, Tensor(), {}};
  const auto logits = predict_all(rec.bound, batch.inputs, &tape);
  std::vector<std::uint32_t> column(rows);
  for (std::size_t j = 0; j < n_tasks; ++j) {
    for (std::size_t i = 0; i < rows; ++i) column[i] = batch.labels[i][j];
    Tensor loss = ops::mean(ops::cross_entropy(logits[j], column, &tape), &tape);
    rec.report.per_task.push_back(loss.item());
    rec.total = j == 0 ? loss : ops::add(rec.total, loss, &tape);
    rec.task_losses.push_back(std::move(loss));
  }
  rec.report.total = rec.total.item();
  return rec;
}

GradientMap gradient_map(const MtlModel& bound, const Gradients& grads) {
  GradientMap out;
  for (const auto& p : bound.parameters()) out.emplace(p.name, grads.of(*p.tensor));
  return out;
}

void check_finite(const LossReport& report) {
  for (std::size_t j = 0; j < report.per_task.size(); ++j) {
    if (!std::isfinite(report.per_task[j])) {
      throw NumericError(fmt::format("non-finite loss {} on task {}", report.per_task[j], j), static_cast<int>(j));
    }
  }
}

bool is_backbone_param(const std::string& name) { return name.rfind("backbone.", 0) == 0; }

}  // namespace

LossEvaluation loss_and_gradients(const MtlModel& model, const Batch& batch, std::optional<std::size_t> grad_task) {
  Tape tape;
  RecordedLoss rec = record_loss(model, batch, tape);
  if (grad_task && *grad_task >= model.n_tasks()) {
    throw IndexError(fmt::format("task index {} out of range ({} heads)", *grad_task, model.n_tasks()));
  }
  const Tensor& target = grad_task ? rec.task_losses[*grad_task] : rec.total;
  return {rec.report, gradient_map(rec.bound, backward(tape, target))};
}

LossReport total_loss(const MtlModel& model, const Batch& batch) {
  const std::size_t n_tasks = model.n_tasks();
  const std::size_t rows = batch.labels.size();
  if (rows == 0) throw ContractError("empty batch");
  for (const auto& y : batch.labels) {
    if (y.size() != n_tasks) {
      throw ContractError(fmt::format("sample carries {} labels, model has {} tasks", y.size(), n_tasks));
    }
  }
  const auto logits = predict_all(model, batch.inputs);
  LossReport report;
  std::vector<std::uint32_t> column(rows);
  for (std::size_t j = 0; j < n_tasks; ++j) {
    for (std::size_t i = 0; i < rows; ++i) column[i] = batch.labels[i][j];
    const float loss = ops::mean(ops::cross_entropy(logits[j], column)).item();
    report.per_task.push_back(loss);
    report.total = j == 0 ? loss : report.total + loss;
  }
  return report;
}

std::string to_string(OptimizerKind kind) { return kind == OptimizerKind::kSgd ? "sgd" : "adamw"; }

OptimizerKind optimizer_kind_from_string(const std::string& text) {
  if (text == "sgd") return OptimizerKind::kSgd;
  if (text == "adamw") return OptimizerKind::kAdamW;
  throw ConfigError(fmt::format("unknown optimizer '{}' (expected sgd or adamw)", text));
}

Optimizer::Optimizer(OptimizerOptions options) : options_(options) {
  if (!(options_.learning_rate >= 0.0f)) throw ConfigError("learning rate must be non-negative");
  if (!(options_.weight_decay >= 0.0f)) throw ConfigError("weight decay must be non-negative");
}

const std::vector<float>* Optimizer::first_moment(const std::string& name) const {
  const auto it = moments_.find(name);
  return it == moments_.end() ? nullptr : &it->second.first;
}

const std::vector<float>* Optimizer::second_moment(const std::string& name) const {
  const auto it = moments_.find(name);
  return it == moments_.end() ? nullptr : &it->second.second;
}

void Optimizer::step(MtlModel& model, const GradientMap& grads) {
  ++steps_;
  const float lr = options_.learning_rate;
  const double bias1 = 1.0 - std::pow(static_cast<double>(options_.beta1), static_cast<double>(steps_));
  const double bias2 = 1.0 - std::pow(static_cast<double>(options_.beta2), static_cast<double>(steps_));
  for (auto& p : model.parameters()) {
    const auto it = grads.find(p.name);
    if (it == grads.end()) throw ContractError(fmt::format("no gradient for parameter '{}'", p.name));
    const auto g = it->second.data();
    if (g.size() != p.tensor->numel()) throw DimensionError(fmt::format("gradient shape mismatch for '{}'", p.name));

    if (options_.kind == OptimizerKind::kSgd) {
      if (lr == 0.0f) continue;
      auto w = p.tensor->mutable_data();
      for (std::size_t i = 0; i < w.size(); ++i) w[i] -= lr * g[i];
      continue;
    }

    auto& m = moments_[p.name];
    if (m.first.empty()) {
      m.first.assign(g.size(), 0.0f);
      m.second.assign(g.size(), 0.0f);
    }
    const float b1 = options_.beta1, b2 = options_.beta2;
    for (std::size_t i = 0; i < g.size(); ++i) {
      m.first[i] = b1 * m.first[i] + (1.0f - b1) * g[i];
      m.second[i] = b2 * m.second[i] + (1.0f - b2) * g[i] * g[i];
    }
    if (lr == 0.0f) continue;
    auto w = p.tensor->mutable_data();
    const float decay = 1.0f - lr * options_.weight_decay;
    const auto c1 = static_cast<float>(bias1);
    const auto c2 = static_cast<float>(bias2);
    for (std::size_t i = 0; i < w.size(); ++i) {
      const float m_hat = m.first[i] / c1;
      const float v_hat = m.second[i] / c2;
      if (options_.weight_decay != 0.0f) w[i] *= decay;
      w[i] -= lr * m_hat / (std::sqrt(v_hat) + options_.epsilon);
    }
  }
}

LossReport train_step(MtlModel& model, const Batch& batch, Optimizer& opt) {
  Tape tape;
  RecordedLoss rec = record_loss(model, batch, tape);
  check_finite(rec.report);
  const GradientMap grads = gradient_map(rec.bound, backward(tape, rec.total));
  opt.step(model, grads);
  return rec.report;
}

void FinetuneConfig::validate() const {
  if (!(alpha > 0.0f)) throw ConfigError(fmt::format("fine-tune alpha must be positive, got {}", alpha));
  if (!(eta >= 0.0f)) throw ConfigError(fmt::format("fine-tune eta must be non-negative, got {}", eta));
}

LossReport finetune_step(MtlModel& model, const Batch& batch, const FinetuneConfig& cfg) {
  if (!(cfg.alpha >= 0.0f) || !(cfg.eta >= 0.0f)) throw ConfigError("fine-tune rates must be non-negative");
  Tape tape;
  RecordedLoss rec = record_loss(model, batch, tape);
  check_finite(rec.report);
  // L_k (k != j) does not reach theta_j, so the L_total gradient restricted to a
  // head equals that head's task-loss gradient; one reverse pass serves both rules.
  const GradientMap grads = gradient_map(rec.bound, backward(tape, rec.total));
  for (const auto& [name, g] : grads) {
    for (float v : g.data()) {
      if (!std::isfinite(v)) throw NumericError(fmt::format("non-finite gradient for '{}'", name), -1);
    }
  }
  for (auto& p : model.parameters()) {
    const float rate = is_backbone_param(p.name) ? cfg.eta : cfg.alpha;
    if (rate == 0.0f) continue;
    const auto g = grads.at(p.name).data();
    auto w = p.tensor->mutable_data();
    for (std::size_t i = 0; i < w.size(); ++i) w[i] -= rate * g[i];
  }
  return rec.report;
}

std::vector<double> evaluate(const MtlModel& model, const TaskData& data) {
  const std::size_t k = data.size();
  if (k == 0) throw ContractError("cannot evaluate on an empty dataset");
  constexpr std::size_t kChunk = 256;
  std::vector<std::size_t> correct(model.n_tasks(), 0);
  std::vector<std::size_t> indices;
  for (std::size_t start = 0; start < k; start += kChunk) {
    const std::size_t end = std::min(k, start + kChunk);
    indices.resize(end - start);
    std::iota(indices.begin(), indices.end(), start);
    const Batch batch = make_batch(data, indices);
    const auto logits = predict_all(model, batch.inputs);
    for (std::size_t j = 0; j < model.n_tasks(); ++j) {
      const std::size_t classes = logits[j].dim(1);
      const auto z = logits[j].data();
      for (std::size_t r = 0; r < indices.size(); ++r) {
        const float* row = z.data() + r * classes;
        const auto best = static_cast<std::uint32_t>(std::max_element(row, row + classes) - row);
        if (best == batch.labels[r].at(j)) ++correct[j];
      }
    }
  }
  std::vector<double> accuracy;
  for (std::size_t c : correct) accuracy.push_back(100.0 * static_cast<double>(c) / static_cast<double>(k));
  return accuracy;
}

namespace {

template <typename StepFn>
TrainHistory run_epochs(const MtlModel& model, const TaskData& data, const TrainOptions& options, StepFn&& step) {
  if (options.batch_size == 0) throw ConfigError("batch size must be positive");
  TrainHistory history;
  if (options.epochs == 0) return history;
  if (data.size() == 0) throw ContractError("cannot train on an empty dataset");
  Rng rng(derive_seed(options.seed, "shuffle"));
  std::vector<std::size_t> order(data.size());
  for (std::size_t epoch = 0; epoch < options.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[static_cast<std::size_t>(rng.below(i))]);
    std::vector<double> sums(model.n_tasks(), 0.0);
    std::size_t batches = 0;
    for (std::size_t start = 0; start < order.size(); start += options.batch_size) {
      const std::size_t end = std::min(order.size(), start + options.batch_size);
      const Batch batch = make_batch(data, std::span(order).subspan(start, end - start));
      const LossReport report = step(batch);
      for (std::size_t j = 0; j < sums.size(); ++j) sums[j] += report.per_task[j];
      ++batches;
    }
    for (double& s : sums) s /= static_cast<double>(batches);
    history.epoch_losses.push_back(std::move(sums));
  }
  return history;
}

}  // namespace

TrainHistory train(MtlModel& model, const TaskData& data, Optimizer& opt, const TrainOptions& options) {
  return run_epochs(model, data, options, [&](const Batch& b) { return train_step(model, b, opt); });
}

TrainHistory finetune(MtlModel& model, const TaskData& data, const FinetuneConfig& cfg, const TrainOptions& options) {
  cfg.validate();
  return run_epochs(model, data, options, [&](const Batch& b) { return finetune_step(model, b, cfg); });
}

MtlModel train_stl(const ModelConfig& config, std::size_t task, const TaskData& data, const TrainOptions& options,
                   const OptimizerOptions& opt, TrainHistory* history) {
  if (task >= config.tasks.size()) {
    throw IndexError(fmt::format("task index {} out of range ({} tasks)", task, config.tasks.size()));
  }
  ModelConfig single = config;
  single.tasks = {config.tasks[task]};
  TaskData column{data.inputs, {}};
  column.labels.reserve(data.size());
  for (const auto& y : data.labels) column.labels.push_back({y.at(task)});

  MtlModel model = MtlModel::initialize(single, options.seed);
  Optimizer optimizer(opt);
  TrainHistory h = train(model, column, optimizer, options);
  if (history != nullptr) *history = std::move(h);
  return model;
}

double round2(double value) { return std::round(value * 100.0) / 100.0; }

nlohmann::json to_json(const RunMetrics& m) {
  nlohmann::json acc = nlohmann::json::array();
  for (double a : m.accuracies) acc.push_back(round2(a));
  return {
      {"seed", m.seed},
      {"config_digest", m.config_digest},
      {"mode", m.mode},
      {"tasks", m.tasks},
      {"epoch_losses", m.epoch_losses},
      {"accuracies", acc},
      {"wall_clock_seconds", m.wall_clock_seconds},
  };
}

RunMetrics run_metrics_from_json(const nlohmann::json& doc) {
  RunMetrics m;
  try {
    m.seed = doc.at("seed").get<std::uint64_t>();
    m.config_digest = doc.at("config_digest").get<std::string>();
    m.mode = doc.value("mode", "");
    m.tasks = doc.at("tasks").get<std::vector<std::string>>();
    m.epoch_losses = doc.at("epoch_losses").get<std::vector<std::vector<double>>>();
    m.accuracies = doc.at("accuracies").get<std::vector<double>>();
    m.wall_clock_seconds = doc.value("wall_clock_seconds", 0.0);
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(fmt::format("metrics: {}", e.what()));
  }
  if (m.accuracies.size() != m.tasks.size()) throw ParseError("metrics: field 'accuracies' does not match 'tasks'");
  return m;
}

}  // namespace mtlsplit
