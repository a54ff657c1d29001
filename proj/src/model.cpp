// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The mtlsplit Authors

#include "mtlsplit/model.hpp"

#include <map>
#include <set>

#include <fmt/format.h>

#include "mtlsplit/binary_io.hpp"
#include "mtlsplit/error.hpp"
#include "mtlsplit/rng.hpp"

namespace mtlsplit {

namespace {

constexpr std::string_view kCheckpointMagic = "MTLM";
constexpr std::uint16_t kCheckpointVersion = 1;

Linear make_linear(std::size_t fan_in, std::size_t fan_out, Rng* rng) {
  Linear layer;
  layer.weight = rng != nullptr ? glorot_uniform(fan_in, fan_out, *rng) : Tensor::zeros({fan_in, fan_out});
  layer.bias = Tensor::zeros({fan_out});
  return layer;
}

Head make_head(const TaskSpec& task, std::size_t feature_len, std::size_t hidden, Rng* rng) {
  Head head;
  head.task = task.name;
  head.n_classes = task.n_classes;
  head.hidden = make_linear(feature_len, hidden, rng);
  head.output = make_linear(hidden, task.n_classes, rng);
  return head;
}

MtlModel build(const ModelConfig& config, Rng* rng) {
  config.validate();
  Backbone backbone;
  backbone.input_shape = config.input_shape();
  std::size_t fan_in = config.input_len();
  for (std::size_t width : config.backbone_widths) {
    backbone.layers.push_back(make_linear(fan_in, width, rng));
    fan_in = width;
  }
  backbone.layers.push_back(make_linear(fan_in, config.feature_len, rng));
  std::vector<Head> heads;
  for (const auto& task : config.tasks) {
    heads.push_back(make_head(task, config.feature_len, config.head_hidden_width, rng));
  }
  return MtlModel::assemble(config, std::move(backbone), std::move(heads));
}

void push_linear(std::vector<ConstParamRef>& out, const std::string& prefix, const Linear& layer) {
  out.push_back({prefix + ".weight", &layer.weight});
  out.push_back({prefix + ".bias", &layer.bias});
}

void push_head(std::vector<ConstParamRef>& out, const Head& head) {
  push_linear(out, "head." + head.task + ".hidden", head.hidden);
  push_linear(out, "head." + head.task + ".output", head.output);
}

void expect_shape(const Tensor& t, const Shape& shape, const std::string& what) {
  if (t.shape() != shape) {
    throw DimensionError(fmt::format("{} has shape {}, expected {}", what, shape_to_string(t.shape()),
                                     shape_to_string(shape)));
  }
}

Linear bind_linear(const Linear& layer, Tape& tape) {
  return Linear{tape.watch(layer.weight), tape.watch(layer.bias)};
}

}  // namespace

void ModelConfig::validate() const {
  if (width == 0 || height == 0 || channels == 0) throw ConfigError("input dimensions must be positive");
  for (std::size_t w : backbone_widths) {
    if (w == 0) throw ConfigError("backbone widths must be positive");
  }
  if (feature_len == 0) throw ConfigError("feature_len must be positive");
  if (head_hidden_width == 0) throw ConfigError("head_hidden_width must be positive");
  if (tasks.empty()) throw ConfigError("at least one task is required");
  std::set<std::string> names;
  for (const auto& task : tasks) {
    if (task.name.empty()) throw ConfigError("task names must be non-empty");
    if (task.n_classes == 0) throw ConfigError(fmt::format("task '{}' needs at least one class", task.name));
    if (!names.insert(task.name).second) throw ConfigError(fmt::format("duplicate task '{}'", task.name));
  }
}

nlohmann::json to_json(const ModelConfig& config) {
  nlohmann::json tasks = nlohmann::json::array();
  for (const auto& t : config.tasks) tasks.push_back({{"name", t.name}, {"n_classes", t.n_classes}});
  return {
      {"input_shape", {config.width, config.height, config.channels}},
      {"backbone_widths", config.backbone_widths},
      {"feature_len", config.feature_len},
      {"head_hidden_width", config.head_hidden_width},
      {"tasks", tasks},
  };
}

ModelConfig model_config_from_json(const nlohmann::json& doc) {
  ModelConfig config;
  auto field = [&](const char* name) -> const nlohmann::json& {
    if (!doc.contains(name)) throw ParseError(fmt::format("model config: missing field '{}'", name));
    return doc.at(name);
  };
  try {
    const auto& shape = field("input_shape");
    if (!shape.is_array() || shape.size() != 3) {
      throw ParseError("model config: field 'input_shape' must be [w, h, c]");
    }
    config.width = shape[0].get<std::size_t>();
    config.height = shape[1].get<std::size_t>();
    config.channels = shape[2].get<std::size_t>();
    config.backbone_widths = field("backbone_widths").get<std::vector<std::size_t>>();
    config.feature_len = field("feature_len").get<std::size_t>();
    config.head_hidden_width = field("head_hidden_width").get<std::size_t>();
    config.tasks.clear();
    for (const auto& t : field("tasks")) {
      config.tasks.push_back({t.at("name").get<std::string>(), t.at("n_classes").get<std::uint32_t>()});
    }
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(fmt::format("model config: {}", e.what()));
  }
  return config;
}

std::string canonical_json(const nlohmann::json& doc) { return doc.dump(); }

Tensor linear_forward(const Linear& layer, const Tensor& x, Tape* tape) {
  return ops::add_bias(ops::matmul(x, layer.weight, tape), layer.bias, tape);
}

std::size_t Backbone::feature_len() const { return layers.empty() ? 0 : layers.back().bias.numel(); }

MtlModel MtlModel::initialize(const ModelConfig& config, std::uint64_t seed) {
  Rng rng(derive_seed(seed, "init"));
  return build(config, &rng);
}

MtlModel MtlModel::zeros(const ModelConfig& config) { return build(config, nullptr); }

MtlModel MtlModel::assemble(ModelConfig config, Backbone backbone, std::vector<Head> heads) {
  config.validate();
  if (backbone.input_shape != config.input_shape()) {
    throw DimensionError("backbone input shape disagrees with the model config");
  }
  if (backbone.layers.size() != config.backbone_widths.size() + 1) {
    throw DimensionError("backbone depth disagrees with the model config");
  }
  std::size_t fan_in = config.input_len();
  for (std::size_t i = 0; i < backbone.layers.size(); ++i) {
    const std::size_t out = i < config.backbone_widths.size() ? config.backbone_widths[i] : config.feature_len;
    expect_shape(backbone.layers[i].weight, {fan_in, out}, fmt::format("backbone.{}.weight", i));
    expect_shape(backbone.layers[i].bias, {out}, fmt::format("backbone.{}.bias", i));
    fan_in = out;
  }
  if (heads.size() != config.tasks.size()) throw DimensionError("head count disagrees with the task list");
  for (std::size_t j = 0; j < heads.size(); ++j) {
    const Head& h = heads[j];
    if (h.task != config.tasks[j].name || h.n_classes != config.tasks[j].n_classes) {
      throw DimensionError(fmt::format("head {} does not match task '{}'", j, config.tasks[j].name));
    }
    const std::string prefix = "head." + h.task;
    expect_shape(h.hidden.weight, {config.feature_len, config.head_hidden_width}, prefix + ".hidden.weight");
    expect_shape(h.hidden.bias, {config.head_hidden_width}, prefix + ".hidden.bias");
    expect_shape(h.output.weight, {config.head_hidden_width, h.n_classes}, prefix + ".output.weight");
    expect_shape(h.output.bias, {h.n_classes}, prefix + ".output.bias");
  }
  MtlModel model;
  model.config_ = std::move(config);
  model.backbone_ = std::move(backbone);
  model.heads_ = std::move(heads);
  return model;
}

std::vector<ConstParamRef> MtlModel::backbone_parameters() const {
  std::vector<ConstParamRef> out;
  for (std::size_t i = 0; i < backbone_.layers.size(); ++i) {
    push_linear(out, fmt::format("backbone.{}", i), backbone_.layers[i]);
  }
  return out;
}

std::vector<ConstParamRef> MtlModel::head_parameters(std::size_t task) const {
  if (task >= heads_.size()) throw IndexError(fmt::format("task index {} out of range ({} heads)", task, heads_.size()));
  std::vector<ConstParamRef> out;
  push_head(out, heads_[task]);
  return out;
}

std::vector<ConstParamRef> MtlModel::parameters() const {
  auto out = backbone_parameters();
  for (const auto& head : heads_) push_head(out, head);
  return out;
}

std::vector<ParamRef> MtlModel::parameters() {
  std::vector<ParamRef> out;
  for (const auto& p : std::as_const(*this).parameters()) {
    out.push_back({p.name, const_cast<Tensor*>(p.tensor)});
  }
  return out;
}

std::size_t MtlModel::param_count() const {
  std::size_t n = 0;
  for (const auto& p : parameters()) n += p.tensor->numel();
  return n;
}

MtlModel MtlModel::bind(Tape& tape) const {
  MtlModel bound = *this;
  for (auto& layer : bound.backbone_.layers) layer = bind_linear(layer, tape);
  for (auto& head : bound.heads_) {
    head.hidden = bind_linear(head.hidden, tape);
    head.output = bind_linear(head.output, tape);
  }
  return bound;
}

void MtlModel::add_head(const TaskSpec& task, std::uint64_t seed) {
  ModelConfig next = config_;
  next.tasks.push_back(task);
  next.validate();
  Rng rng(derive_seed(seed, "init-head:" + task.name));
  heads_.push_back(make_head(task, config_.feature_len, config_.head_hidden_width, &rng));
  config_ = std::move(next);
}

bool MtlModel::bitwise_equal(const MtlModel& other) const {
  if (!(config_ == other.config_)) return false;
  const auto a = parameters();
  const auto b = other.parameters();
  if (a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a[i].name != b[i].name || !a[i].tensor->bitwise_equal(*b[i].tensor)) return false;
  }
  return true;
}

Tensor backbone_forward(const Backbone& backbone, const Tensor& x, Tape* tape) {
  const std::size_t in_len = backbone.input_len();
  bool batched = false;
  if (x.shape() == backbone.input_shape || x.shape() == Shape{in_len}) {
    batched = false;
  } else if (x.rank() >= 2 && x.numel() == x.dim(0) * in_len &&
             (x.rank() == 2 || Shape(x.shape().begin() + 1, x.shape().end()) == backbone.input_shape)) {
    batched = true;
  } else {
    throw DimensionError(fmt::format("backbone input has shape {}, expected {} or a batch of it",
                                     shape_to_string(x.shape()), shape_to_string(backbone.input_shape)));
  }
  const std::size_t rows = batched ? x.dim(0) : 1;
  Tensor h = ops::reshape(x, {rows, in_len}, tape);
  for (const auto& layer : backbone.layers) h = ops::relu(linear_forward(layer, h, tape), tape);
  return batched ? h : ops::reshape(h, {backbone.feature_len()}, tape);
}

Tensor backbone_forward(const MtlModel& model, const Tensor& x, Tape* tape) {
  return backbone_forward(model.backbone(), x, tape);
}

Tensor head_forward(const Head& head, const Tensor& z, Tape* tape) {
  const std::size_t feature_len = head.hidden.weight.dim(0);
  const bool single = z.rank() == 1;
  if ((z.rank() != 1 && z.rank() != 2) || z.shape().back() != feature_len) {
    throw DimensionError(fmt::format("head '{}' expects features of width {}, got shape {}", head.task,
                                     feature_len, shape_to_string(z.shape())));
  }
  Tensor h = single ? ops::reshape(z, {1, feature_len}, tape) : z;
  h = ops::relu(linear_forward(head.hidden, h, tape), tape);
  h = linear_forward(head.output, h, tape);
  return single ? ops::reshape(h, {head.n_classes}, tape) : h;
}

Tensor head_forward(const MtlModel& model, std::size_t task, const Tensor& z, Tape* tape) {
  if (task >= model.n_tasks()) {
    throw IndexError(fmt::format("task index {} out of range ({} heads)", task, model.n_tasks()));
  }
  return head_forward(model.heads()[task], z, tape);
}

std::vector<Tensor> predict_all(const MtlModel& model, const Tensor& x, Tape* tape) {
  const Tensor z = backbone_forward(model, x, tape);
  std::vector<Tensor> out;
  out.reserve(model.n_tasks());
  for (const auto& head : model.heads()) out.push_back(head_forward(head, z, tape));
  return out;
}

std::string to_string(ModelSlice slice) {
  switch (slice) {
    case ModelSlice::kFull: return "full";
    case ModelSlice::kBackbone: return "backbone";
    case ModelSlice::kHeads: return "heads";
  }
  return "full";
}

std::vector<std::uint8_t> encode_checkpoint(const MtlModel& model, ModelSlice slice) {
  nlohmann::json config = to_json(model.config());
  config["slice"] = to_string(slice);
  const std::string config_text = canonical_json(config);

  std::vector<ConstParamRef> params;
  if (slice != ModelSlice::kHeads) params = model.backbone_parameters();
  if (slice != ModelSlice::kBackbone) {
    for (std::size_t j = 0; j < model.n_tasks(); ++j) {
      auto head = model.head_parameters(j);
      params.insert(params.end(), head.begin(), head.end());
    }
  }

  ByteWriter w;
  w.raw(kCheckpointMagic);
  w.u16(kCheckpointVersion);
  w.u32(static_cast<std::uint32_t>(config_text.size()));
  w.raw(config_text);
  for (const auto& p : params) {
    w.u16(static_cast<std::uint16_t>(p.name.size()));
    w.raw(p.name);
    const Shape& shape = p.tensor->shape();
    w.u8(static_cast<std::uint8_t>(shape.size()));
    for (std::size_t d : shape) w.u32(static_cast<std::uint32_t>(d));
    w.f32s(p.tensor->data());
  }
  return std::move(w).take();
}

Checkpoint decode_checkpoint(std::span<const std::uint8_t> bytes) {
  ByteReader<ParseError> r(bytes, "checkpoint");
  if (r.text(4) != kCheckpointMagic) throw ParseError("checkpoint: bad magic (expected \"MTLM\")");
  const std::uint16_t version = r.u16();
  if (version != kCheckpointVersion) throw ParseError(fmt::format("checkpoint: unsupported version {}", version));
  const std::string config_text = r.text(r.u32());
  nlohmann::json config_doc;
  try {
    config_doc = nlohmann::json::parse(config_text);
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(fmt::format("checkpoint: config is not valid JSON: {}", e.what()));
  }
  Checkpoint ckpt;
  ckpt.config = model_config_from_json(config_doc);
  const std::string slice = config_doc.value("slice", "full");
  if (slice == "full") {
    ckpt.slice = ModelSlice::kFull;
  } else if (slice == "backbone") {
    ckpt.slice = ModelSlice::kBackbone;
  } else if (slice == "heads") {
    ckpt.slice = ModelSlice::kHeads;
  } else {
    throw ParseError(fmt::format("checkpoint: unknown slice '{}'", slice));
  }
  while (!r.done()) {
    std::string name = r.text(r.u16());
    const std::size_t ndims = r.u8();
    Shape shape(ndims);
    for (auto& d : shape) d = r.u32();
    const std::size_t n = shape_numel(shape);
    r.need(n * 4);
    std::vector<float> data(n);
    r.f32s(data);
    if (shape.empty()) throw ParseError(fmt::format("checkpoint: parameter '{}' has no dimensions", name));
    ckpt.params.emplace_back(std::move(name), Tensor(std::move(shape), std::move(data)));
  }
  return ckpt;
}

namespace {

std::map<std::string, Tensor> param_map(const Checkpoint& ckpt) {
  std::map<std::string, Tensor> by_name;
  for (const auto& [name, t] : ckpt.params) {
    if (!by_name.emplace(name, t).second) throw ParseError(fmt::format("checkpoint: duplicate parameter '{}'", name));
  }
  return by_name;
}

Tensor take_param(std::map<std::string, Tensor>& by_name, const std::string& name) {
  auto it = by_name.find(name);
  if (it == by_name.end()) throw ParseError(fmt::format("checkpoint: missing parameter '{}'", name));
  Tensor t = it->second;
  by_name.erase(it);
  return t;
}

Linear take_linear(std::map<std::string, Tensor>& by_name, const std::string& prefix) {
  Linear layer;
  layer.weight = take_param(by_name, prefix + ".weight");
  layer.bias = take_param(by_name, prefix + ".bias");
  return layer;
}

Backbone take_backbone(std::map<std::string, Tensor>& by_name, const ModelConfig& config) {
  Backbone backbone;
  backbone.input_shape = config.input_shape();
  for (std::size_t i = 0; i <= config.backbone_widths.size(); ++i) {
    backbone.layers.push_back(take_linear(by_name, fmt::format("backbone.{}", i)));
  }
  return backbone;
}

std::vector<Head> take_heads(std::map<std::string, Tensor>& by_name, const ModelConfig& config) {
  std::vector<Head> heads;
  for (const auto& task : config.tasks) {
    Head h;
    h.task = task.name;
    h.n_classes = task.n_classes;
    h.hidden = take_linear(by_name, "head." + task.name + ".hidden");
    h.output = take_linear(by_name, "head." + task.name + ".output");
    heads.push_back(std::move(h));
  }
  return heads;
}

void expect_consumed(const std::map<std::string, Tensor>& by_name) {
  if (!by_name.empty()) {
    throw ParseError(fmt::format("checkpoint: unexpected parameter '{}'", by_name.begin()->first));
  }
}

}  // namespace

MtlModel model_from_checkpoint(const Checkpoint& ckpt) {
  if (ckpt.slice != ModelSlice::kFull) {
    throw ContractError(fmt::format("a full model needs a full checkpoint, got a {} slice", to_string(ckpt.slice)));
  }
  auto by_name = param_map(ckpt);
  Backbone backbone = take_backbone(by_name, ckpt.config);
  std::vector<Head> heads = take_heads(by_name, ckpt.config);
  expect_consumed(by_name);
  try {
    return MtlModel::assemble(ckpt.config, std::move(backbone), std::move(heads));
  } catch (const DimensionError& e) {
    throw ParseError(fmt::format("checkpoint: {}", e.what()));
  }
}

Backbone backbone_from_checkpoint(const Checkpoint& ckpt) {
  if (ckpt.slice == ModelSlice::kHeads) throw ContractError("heads-only checkpoint carries no backbone");
  auto by_name = param_map(ckpt);
  Backbone backbone = take_backbone(by_name, ckpt.config);
  if (ckpt.slice == ModelSlice::kFull) take_heads(by_name, ckpt.config);
  expect_consumed(by_name);
  return backbone;
}

std::vector<Head> heads_from_checkpoint(const Checkpoint& ckpt) {
  if (ckpt.slice == ModelSlice::kBackbone) throw ContractError("backbone-only checkpoint carries no heads");
  auto by_name = param_map(ckpt);
  if (ckpt.slice == ModelSlice::kFull) take_backbone(by_name, ckpt.config);
  std::vector<Head> heads = take_heads(by_name, ckpt.config);
  expect_consumed(by_name);
  return heads;
}

void save_checkpoint(const std::string& path, const MtlModel& model, ModelSlice slice) {
  write_file(path, encode_checkpoint(model, slice));
}

Checkpoint load_checkpoint(const std::string& path) { return decode_checkpoint(read_file(path)); }

}  // namespace mtlsplit
