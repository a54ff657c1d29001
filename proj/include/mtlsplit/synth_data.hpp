// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The mtlsplit Authors

#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "mtlsplit/tensor.hpp"

namespace mtlsplit {

/// Factor names understood by the renderer.
inline constexpr std::string_view kBackgroundHue = "background-hue";
inline constexpr std::string_view kObjectHue = "object-hue";
inline constexpr std::string_view kObjectShape = "object-shape";
inline constexpr std::string_view kObjectSize = "object-size";

struct Factor {
  std::string name;
  std::uint32_t n_values = 0;
  friend bool operator==(const Factor&, const Factor&) = default;
};

/// Describes a procedurally rendered multi-factor image set. Every factor
/// combination appears `samples_per_combination` times; each factor is one task.
struct FactorSpec {
  std::size_t width = 16;
  std::size_t height = 16;
  std::vector<Factor> factors;
  std::uint32_t samples_per_combination = 1;
  /// Salt-and-pepper fraction applied once per sample at generation time.
  double noise_fraction = 0.0;

  static constexpr std::size_t kChannels = 3;

  /// K = samples_per_combination * product of factor sizes.
  std::size_t dataset_size() const;
  /// Throws ContractError / UnsupportedFactorError.
  void validate() const;

  friend bool operator==(const FactorSpec&, const FactorSpec&) = default;
};

/// Default benchmark: object-hue(6) x object-shape(4) x object-size(4), 16x16x3,
/// 20 samples per combination, 15% salt-and-pepper.
FactorSpec default_benchmark_spec();

nlohmann::json to_json(const FactorSpec& spec);
FactorSpec factor_spec_from_json(const nlohmann::json& doc);

struct LabeledImage {
  Tensor pixels;  // [w, h, 3], values in [0, 1]
  std::vector<std::uint32_t> labels;
};

struct Dataset {
  FactorSpec spec;
  std::vector<LabeledImage> samples;

  std::size_t size() const noexcept { return samples.size(); }
  std::vector<std::string> task_names() const;
  /// Number of samples per class value, one vector per factor.
  std::vector<std::vector<std::size_t>> class_counts() const;
};

/// Fixed HSV -> RGB with S = V = 1.
std::array<float, 3> hue_to_rgb(double hue);

/// Clean render of one factor combination (no noise).
Tensor render_combination(const FactorSpec& spec, std::span<const std::uint32_t> factor_values);

/// Deterministic dataset for (spec, seed). Samples are ordered by factor
/// combination (first factor slowest), each combination repeated in place.
Dataset generate(const FactorSpec& spec, std::uint64_t seed);

/// Sets exactly round(fraction * w * h) distinct pixel positions to 0.0 or 1.0 on
/// every channel, each with probability 1/2. Labels are untouched.
LabeledImage add_salt_pepper(const LabeledImage& img, double fraction, std::uint64_t seed);

/// Seeded shuffle, then the first round(ratio * K) samples form the train side.
std::pair<Dataset, Dataset> split_train_test(const Dataset& dataset, double ratio, std::uint64_t seed);

/// "MTLD" binary container.
std::vector<std::uint8_t> encode_dataset(const Dataset& dataset);
Dataset decode_dataset(std::span<const std::uint8_t> bytes);
void save_dataset(const std::string& path, const Dataset& dataset);
Dataset load_dataset(const std::string& path);

bool bitwise_equal(const Dataset& a, const Dataset& b);

}  // namespace mtlsplit
