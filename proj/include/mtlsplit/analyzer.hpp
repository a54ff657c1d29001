// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The mtlsplit Authors

#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "mtlsplit/model.hpp"
#include "mtlsplit/transport.hpp"

namespace mtlsplit {

/// Static size record of a backbone.
struct ModelDescriptor {
  std::string name;
  std::uint64_t param_count = 0;
  std::uint64_t fwd_bwd_activation_bytes = 0;
  std::uint64_t feature_len = 0;
  std::uint64_t bytes_per_param = 4;

  friend bool operator==(const ModelDescriptor&, const ModelDescriptor&) = default;
};

nlohmann::json to_json(const ModelDescriptor& d);
/// Throws ParseError naming the missing or mistyped field.
ModelDescriptor descriptor_from_json(const nlohmann::json& doc);
ModelDescriptor load_descriptor(const std::string& path);

/// Descriptor of a live model's backbone: exact parameter count; activations
/// counted as 4 bytes x every backbone layer output x 2 (forward + backward).
ModelDescriptor describe_backbone(const MtlModel& model, const std::string& name);

/// Bytes of all head parameters of a live model.
std::uint64_t head_bytes(const MtlModel& model);

enum class UnitConvention { kSI, kBinary };

std::string to_string(UnitConvention unit);
UnitConvention unit_from_string(const std::string& text);
/// 1e6 or 2^20 bytes.
double megabyte(UnitConvention unit);
/// 1e9 or 2^30 bytes.
double gigabyte(UnitConvention unit);
std::string mb_label(UnitConvention unit);
std::string gb_label(UnitConvention unit);

std::uint64_t params_size_bytes(std::uint64_t param_count, std::uint64_t bytes_per_param = 4);
/// Parameter bytes plus forward/backward activation bytes, exact.
std::uint64_t estimated_model_size(const ModelDescriptor& d);
/// n_tasks independent single-task networks.
std::uint64_t loc_memory(const ModelDescriptor& d, std::uint64_t n_tasks);
/// Z_b bytes on the wire, excluding framing.
std::uint64_t feature_bytes(const ModelDescriptor& d);
std::uint64_t roc_input_bytes(std::uint64_t w, std::uint64_t h, std::uint64_t c, std::uint64_t bytes_per_elem = 4);

/// 1 - edge_bytes / loc_bytes.
double memory_saving(std::uint64_t edge_bytes, std::uint64_t loc_bytes);

/// Saving of one shared backbone on the edge against n_tasks single-task
/// networks, each with its own head of `head_bytes` (heads live on the server in SC).
double sc_memory_saving(const ModelDescriptor& d, std::uint64_t n_tasks, std::uint64_t head_bytes = 0);

struct ParadigmReport {
  Paradigm paradigm = Paradigm::kLoC;
  std::uint64_t n_tasks = 0;
  std::uint64_t edge_model_bytes = 0;
  std::uint64_t per_input_transfer_bytes = 0;
  TransferReport transfer;
};

struct Workload {
  std::uint64_t n_inputs = 100;
  Shape input_shape{2835, 3543, 3};
  std::uint64_t n_tasks = 2;
};

/// LoC / RoC / SC rows for one descriptor and workload.
std::vector<ParadigmReport> compare_paradigms(const ModelDescriptor& d, const Workload& workload,
                                              const ChannelModel& ch, std::uint64_t head_bytes = 0);

/// One row of the backbone size table; byte values are exact, `*_mb` are rounded at render time only.
struct SizeTableRow {
  std::string name;
  std::uint64_t param_count = 0;
  std::uint64_t params_bytes = 0;
  std::uint64_t activation_bytes = 0;
  std::uint64_t estimated_bytes = 0;
  std::uint64_t feature_len = 0;
  std::uint64_t feature_bytes = 0;
  double params_millions = 0.0;
  double params_mb = 0.0;
  double activation_mb = 0.0;
  double estimated_mb = 0.0;
  double feature_thousands = 0.0;
  double feature_mb = 0.0;
};

/// Values rounded to 2 decimals in the chosen convention.
std::vector<SizeTableRow> render_table4(std::span<const ModelDescriptor> descriptors, UnitConvention unit);

std::string format_size_table_text(std::span<const SizeTableRow> rows, UnitConvention unit);
nlohmann::json size_table_json(std::span<const SizeTableRow> rows, UnitConvention unit);

std::string format_paradigms_text(const ModelDescriptor& d, std::span<const ParadigmReport> reports,
                                  UnitConvention unit);
nlohmann::json paradigms_json(const ModelDescriptor& d, std::span<const ParadigmReport> reports,
                              UnitConvention unit);

double round_to(double value, int decimals);

}  // namespace mtlsplit
