// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The mtlsplit Authors

#include "mtlsplit/analyzer.hpp"

#include <cmath>

#include <fmt/format.h>

#include "mtlsplit/binary_io.hpp"
#include "mtlsplit/error.hpp"

namespace mtlsplit {

nlohmann::json to_json(const ModelDescriptor& d) {
  return {
      {"name", d.name},
      {"param_count", d.param_count},
      {"fwd_bwd_activation_bytes", d.fwd_bwd_activation_bytes},
      {"feature_len", d.feature_len},
  };
}

ModelDescriptor descriptor_from_json(const nlohmann::json& doc) {
  if (!doc.is_object()) throw ParseError("descriptor: expected a JSON object");
  ModelDescriptor d;
  auto count = [&](const char* field) -> std::uint64_t {
    if (!doc.contains(field)) throw ParseError(fmt::format("descriptor: missing field '{}'", field));
    const auto& v = doc.at(field);
    if (!v.is_number_unsigned() && !(v.is_number_integer() && v.get<std::int64_t>() >= 0)) {
      throw ParseError(fmt::format("descriptor: field '{}' must be a non-negative integer", field));
    }
    return v.get<std::uint64_t>();
  };
  if (!doc.contains("name") || !doc.at("name").is_string()) {
    throw ParseError("descriptor: field 'name' must be a string");
  }
  d.name = doc.at("name").get<std::string>();
  d.param_count = count("param_count");
  d.fwd_bwd_activation_bytes = count("fwd_bwd_activation_bytes");
  d.feature_len = count("feature_len");
  return d;
}

ModelDescriptor load_descriptor(const std::string& path) {
  const auto bytes = read_file(path);
  try {
    return descriptor_from_json(nlohmann::json::parse(bytes.begin(), bytes.end()));
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError(fmt::format("descriptor '{}': {}", path, e.what()));
  }
}

ModelDescriptor describe_backbone(const MtlModel& model, const std::string& name) {
  ModelDescriptor d;
  d.name = name;
  std::uint64_t outputs = 0;
  for (const auto& p : model.backbone_parameters()) d.param_count += p.tensor->numel();
  for (const auto& layer : model.backbone().layers) outputs += layer.bias.numel();
  d.fwd_bwd_activation_bytes = 4 * outputs * 2;
  d.feature_len = model.feature_len();
  return d;
}

std::uint64_t head_bytes(const MtlModel& model) {
  std::uint64_t n = 0;
  for (std::size_t j = 0; j < model.n_tasks(); ++j) {
    for (const auto& p : model.head_parameters(j)) n += p.tensor->numel();
  }
  return params_size_bytes(n);
}

std::string to_string(UnitConvention unit) { return unit == UnitConvention::kSI ? "si" : "binary"; }

UnitConvention unit_from_string(const std::string& text) {
  if (text == "si") return UnitConvention::kSI;
  if (text == "binary") return UnitConvention::kBinary;
  throw ConfigError(fmt::format("unknown unit convention '{}' (expected si or binary)", text));
}

double megabyte(UnitConvention unit) { return unit == UnitConvention::kSI ? 1e6 : 1048576.0; }
double gigabyte(UnitConvention unit) { return unit == UnitConvention::kSI ? 1e9 : 1073741824.0; }
std::string mb_label(UnitConvention unit) { return unit == UnitConvention::kSI ? "MB" : "MiB"; }
std::string gb_label(UnitConvention unit) { return unit == UnitConvention::kSI ? "GB" : "GiB"; }

std::uint64_t params_size_bytes(std::uint64_t param_count, std::uint64_t bytes_per_param) {
  return param_count * bytes_per_param;
}

std::uint64_t estimated_model_size(const ModelDescriptor& d) {
  return params_size_bytes(d.param_count, d.bytes_per_param) + d.fwd_bwd_activation_bytes;
}

std::uint64_t loc_memory(const ModelDescriptor& d, std::uint64_t n_tasks) {
  if (n_tasks == 0) throw ContractError("LoC memory needs at least one task");
  return n_tasks * estimated_model_size(d);
}

std::uint64_t feature_bytes(const ModelDescriptor& d) { return 4 * d.feature_len; }

std::uint64_t roc_input_bytes(std::uint64_t w, std::uint64_t h, std::uint64_t c, std::uint64_t bytes_per_elem) {
  if (w == 0 || h == 0 || c == 0) throw ContractError("input dimensions must be positive");
  return w * h * c * bytes_per_elem;
}

double memory_saving(std::uint64_t edge_bytes, std::uint64_t loc_bytes) {
  if (loc_bytes == 0) return 0.0;
  return 1.0 - static_cast<double>(edge_bytes) / static_cast<double>(loc_bytes);
}

double sc_memory_saving(const ModelDescriptor& d, std::uint64_t n_tasks, std::uint64_t head_bytes) {
  if (n_tasks < 2) throw ContractError("memory saving compares at least two tasks");
  const std::uint64_t loc = n_tasks * (estimated_model_size(d) + head_bytes);
  return memory_saving(estimated_model_size(d), loc);
}

std::vector<ParadigmReport> compare_paradigms(const ModelDescriptor& d, const Workload& workload,
                                              const ChannelModel& ch, std::uint64_t heads) {
  std::vector<ParadigmReport> out;
  for (Paradigm p : {Paradigm::kLoC, Paradigm::kRoC, Paradigm::kSC}) {
    ParadigmReport r;
    r.paradigm = p;
    r.n_tasks = workload.n_tasks;
    r.transfer = transfer_time_report(p, workload.n_inputs, workload.input_shape, d.feature_len, ch);
    r.per_input_transfer_bytes = r.transfer.request_payload_bytes;
    switch (p) {
      case Paradigm::kLoC: r.edge_model_bytes = workload.n_tasks * (estimated_model_size(d) + heads); break;
      case Paradigm::kRoC: r.edge_model_bytes = 0; break;
      case Paradigm::kSC: r.edge_model_bytes = estimated_model_size(d); break;
    }
    out.push_back(r);
  }
  return out;
}

double round_to(double value, int decimals) {
  const double scale = std::pow(10.0, decimals);
  return std::round(value * scale) / scale;
}

std::vector<SizeTableRow> render_table4(std::span<const ModelDescriptor> descriptors, UnitConvention unit) {
  const double mb = megabyte(unit);
  std::vector<SizeTableRow> rows;
  for (const auto& d : descriptors) {
    SizeTableRow r;
    r.name = d.name;
    r.param_count = d.param_count;
    r.params_bytes = params_size_bytes(d.param_count, d.bytes_per_param);
    r.activation_bytes = d.fwd_bwd_activation_bytes;
    r.estimated_bytes = estimated_model_size(d);
    r.feature_len = d.feature_len;
    r.feature_bytes = feature_bytes(d);
    r.params_millions = round_to(static_cast<double>(d.param_count) / 1e6, 2);
    r.params_mb = round_to(static_cast<double>(r.params_bytes) / mb, 2);
    r.activation_mb = round_to(static_cast<double>(r.activation_bytes) / mb, 2);
    r.estimated_mb = round_to(static_cast<double>(r.estimated_bytes) / mb, 2);
    r.feature_thousands = round_to(static_cast<double>(d.feature_len) / 1e3, 2);
    r.feature_mb = round_to(static_cast<double>(r.feature_bytes) / mb, 2);
    rows.push_back(r);
  }
  return rows;
}

std::string format_size_table_text(std::span<const SizeTableRow> rows, UnitConvention unit) {
  const std::string u = mb_label(unit);
  std::string out = fmt::format("units: {} (1 {} = {:.0f} bytes); Z_b counts in thousands of elements\n",
                                to_string(unit), u, megabyte(unit));
  out += fmt::format("{:<16} {:>12} {:>14} {:>18} {:>16} {:>14} {:>12}\n", "model", "#params (M)",
                     fmt::format("params ({})", u), fmt::format("fwd/bwd ({})", u), fmt::format("estimated ({})", u),
                     "Z_b (k elem)", fmt::format("Z_b ({})", u));
  for (const auto& r : rows) {
    out += fmt::format("{:<16} {:>12.2f} {:>14.2f} {:>18.2f} {:>16.2f} {:>14.2f} {:>12.2f}\n", r.name,
                       r.params_millions, r.params_mb, r.activation_mb, r.estimated_mb, r.feature_thousands,
                       r.feature_mb);
  }
  return out;
}

nlohmann::json size_table_json(std::span<const SizeTableRow> rows, UnitConvention unit) {
  nlohmann::json list = nlohmann::json::array();
  for (const auto& r : rows) {
    list.push_back({
        {"name", r.name},
        {"param_count", r.param_count},
        {"params_bytes", r.params_bytes},
        {"activation_bytes", r.activation_bytes},
        {"estimated_bytes", r.estimated_bytes},
        {"feature_len", r.feature_len},
        {"feature_bytes", r.feature_bytes},
        {"params_millions", r.params_millions},
        {"params_mb", r.params_mb},
        {"activation_mb", r.activation_mb},
        {"estimated_mb", r.estimated_mb},
        {"feature_thousands", r.feature_thousands},
        {"feature_mb", r.feature_mb},
    });
  }
  return {{"unit", to_string(unit)}, {"rows", list}};
}

std::string format_paradigms_text(const ModelDescriptor& d, std::span<const ParadigmReport> reports,
                                  UnitConvention unit) {
  const double mb = megabyte(unit);
  const double gb = gigabyte(unit);
  std::string out = fmt::format("{}: paradigm comparison (units: {})\n", d.name, to_string(unit));
  out += fmt::format("{:<6} {:>6} {:>16} {:>20} {:>14} {:>14}\n", "mode", "tasks",
                     fmt::format("edge mem ({})", gb_label(unit)), fmt::format("per-input ({})", mb_label(unit)),
                     "payload (s)", "total (s)");
  std::uint64_t loc_bytes = 0;
  for (const auto& r : reports) {
    if (r.paradigm == Paradigm::kLoC) loc_bytes = r.edge_model_bytes;
  }
  for (const auto& r : reports) {
    out += fmt::format("{:<6} {:>6} {:>16.2f} {:>20.2f} {:>14.2f} {:>14.2f}\n", to_string(r.paradigm), r.n_tasks,
                       static_cast<double>(r.edge_model_bytes) / gb,
                       static_cast<double>(r.per_input_transfer_bytes) / mb, r.transfer.payload_seconds,
                       r.transfer.total_seconds);
  }
  for (const auto& r : reports) {
    if (r.paradigm == Paradigm::kSC && loc_bytes > 0) {
      out += fmt::format("SC edge memory saving vs LoC: {:.1f}%\n", 100.0 * memory_saving(r.edge_model_bytes, loc_bytes));
    }
  }
  return out;
}

nlohmann::json paradigms_json(const ModelDescriptor& d, std::span<const ParadigmReport> reports, UnitConvention unit) {
  nlohmann::json list = nlohmann::json::array();
  for (const auto& r : reports) {
    list.push_back({
        {"paradigm", to_string(r.paradigm)},
        {"n_tasks", r.n_tasks},
        {"edge_model_bytes", r.edge_model_bytes},
        {"per_input_transfer_bytes", r.per_input_transfer_bytes},
        {"request_overhead_bytes", r.transfer.request_overhead_bytes},
        {"response_bytes", r.transfer.response_bytes},
        {"n_inputs", r.transfer.n_inputs},
        {"payload_seconds", r.transfer.payload_seconds},
        {"total_seconds", r.transfer.total_seconds},
    });
  }
  return {{"descriptor", to_json(d)}, {"unit", to_string(unit)}, {"paradigms", list}};
}

}  // namespace mtlsplit
