// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The mtlsplit Authors

#include "mtlsplit/synth_data.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include <fmt/format.h>

#include "mtlsplit/binary_io.hpp"
#include "mtlsplit/error.hpp"
#include "mtlsplit/rng.hpp"

namespace mtlsplit {

namespace {

constexpr std::string_view kDatasetMagic = "MTLD";
constexpr std::uint16_t kDatasetVersion = 1;

constexpr std::uint32_t kMaxShapes = 4;
constexpr std::uint32_t kMaxSizes = 8;
constexpr float kDefaultBackground = 0.5f;

enum class ShapeKind : std::uint32_t { kSquare = 0, kCircle = 1, kTriangle = 2, kCross = 3 };

// Object half-extent as a fraction of half the shorter image side.
double size_scale(std::uint32_t value, std::uint32_t n_values) {
  if (n_values <= 1) return 0.7;
  return 0.4 + 0.55 * static_cast<double>(value) / static_cast<double>(n_values - 1);
}

bool inside(ShapeKind shape, double u, double v, double r) {
  switch (shape) {
    case ShapeKind::kSquare:
      return std::abs(u) <= r && std::abs(v) <= r;
    case ShapeKind::kCircle:
      return u * u + v * v <= r * r;
    case ShapeKind::kTriangle:
      // Apex up, base along v = r.
      return v >= -r && v <= r && std::abs(u) <= (v + r) / 2.0;
    case ShapeKind::kCross: {
      const double arm = r / 3.0;
      return (std::abs(u) <= arm && std::abs(v) <= r) || (std::abs(v) <= arm && std::abs(u) <= r);
    }
  }
  return false;
}

int factor_index(const FactorSpec& spec, std::string_view name) {
  for (std::size_t i = 0; i < spec.factors.size(); ++i) {
    if (spec.factors[i].name == name) return static_cast<int>(i);
  }
  return -1;
}

}  // namespace

std::size_t FactorSpec::dataset_size() const {
  std::size_t k = samples_per_combination;
  for (const auto& f : factors) k *= f.n_values;
  return k;
}

void FactorSpec::validate() const {
  if (width < 8 || height < 8) {
    throw ContractError(fmt::format("image size {}x{} is below the 8x8 minimum", width, height));
  }
  if (factors.empty()) throw ContractError("at least one factor is required");
  if (samples_per_combination == 0) throw ContractError("samples_per_combination must be positive");
  if (!(noise_fraction >= 0.0 && noise_fraction <= 1.0)) {
    throw ContractError(fmt::format("noise fraction {} outside [0, 1]", noise_fraction));
  }
  for (std::size_t i = 0; i < factors.size(); ++i) {
    const Factor& f = factors[i];
    if (f.name != kBackgroundHue && f.name != kObjectHue && f.name != kObjectShape && f.name != kObjectSize) {
      throw UnsupportedFactorError(fmt::format("unknown factor '{}'", f.name));
    }
    if (factor_index(*this, f.name) != static_cast<int>(i)) {
      throw ContractError(fmt::format("factor '{}' listed twice", f.name));
    }
    if (f.n_values == 0) throw ContractError(fmt::format("factor '{}' needs at least one value", f.name));
    if (f.name == kObjectShape && f.n_values > kMaxShapes) {
      throw UnsupportedFactorError(fmt::format("{} shapes requested; only {} are supported", f.n_values, kMaxShapes));
    }
    if (f.name == kObjectSize && f.n_values > kMaxSizes) {
      throw UnsupportedFactorError(fmt::format("{} sizes requested; at most {} are supported", f.n_values, kMaxSizes));
    }
  }
}

FactorSpec default_benchmark_spec() {
  FactorSpec spec;
  spec.width = 16;
  spec.height = 16;
  spec.factors = {{std::string(kObjectHue), 6}, {std::string(kObjectShape), 4}, {std::string(kObjectSize), 4}};
  spec.samples_per_combination = 20;
  spec.noise_fraction = 0.15;
  return spec;
}

nlohmann::json to_json(const FactorSpec& spec) {
  nlohmann::json factors = nlohmann::json::array();
  for (const auto& f : spec.factors) factors.push_back({{"name", f.name}, {"n_values", f.n_values}});
  return {
      {"image_size", {spec.width, spec.height}},
      {"factors", factors},
      {"samples_per_combination", spec.samples_per_combination},
      {"noise_fraction", spec.noise_fraction},
  };
}

FactorSpec factor_spec_from_json(const nlohmann::json& doc) {
  FactorSpec spec;
  try {
    if (doc.contains("image_size")) {
      const auto& size = doc.at("image_size");
      if (!size.is_array() || size.size() != 2) throw ParseError("dataset spec: field 'image_size' must be [w, h]");
      spec.width = size[0].get<std::size_t>();
      spec.height = size[1].get<std::size_t>();
    }
    if (!doc.contains("factors")) throw ParseError("dataset spec: missing field 'factors'");
    for (const auto& f : doc.at("factors")) {
      spec.factors.push_back({f.at("name").get<std::string>(), f.at("n_values").get<std::uint32_t>()});
    }
    spec.samples_per_combination = doc.value("samples_per_combination", spec.samples_per_combination);
    spec.noise_fraction = doc.value("noise_fraction", spec.noise_fraction);
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(fmt::format("dataset spec: {}", e.what()));
  }
  return spec;
}

std::vector<std::string> Dataset::task_names() const {
  std::vector<std::string> names;
  for (const auto& f : spec.factors) names.push_back(f.name);
  return names;
}

std::vector<std::vector<std::size_t>> Dataset::class_counts() const {
  std::vector<std::vector<std::size_t>> counts;
  for (const auto& f : spec.factors) counts.emplace_back(f.n_values, 0);
  for (const auto& s : samples) {
    for (std::size_t j = 0; j < counts.size(); ++j) ++counts[j].at(s.labels.at(j));
  }
  return counts;
}

std::array<float, 3> hue_to_rgb(double hue) {
  const double h6 = (hue - std::floor(hue)) * 6.0;
  const int sector = static_cast<int>(std::floor(h6)) % 6;
  const auto f = static_cast<float>(h6 - std::floor(h6));
  const float q = 1.0f - f;
  switch (sector) {
    case 0: return {1.0f, f, 0.0f};
    case 1: return {q, 1.0f, 0.0f};
    case 2: return {0.0f, 1.0f, f};
    case 3: return {0.0f, q, 1.0f};
    case 4: return {f, 0.0f, 1.0f};
    default: return {1.0f, 0.0f, q};
  }
}

Tensor render_combination(const FactorSpec& spec, std::span<const std::uint32_t> values) {
  if (values.size() != spec.factors.size()) throw ContractError("one value per factor is required");
  auto value_of = [&](std::string_view name, std::uint32_t fallback) -> std::pair<std::uint32_t, std::uint32_t> {
    const int idx = factor_index(spec, name);
    if (idx < 0) return {fallback, 1};
    return {values[static_cast<std::size_t>(idx)], spec.factors[static_cast<std::size_t>(idx)].n_values};
  };

  std::array<float, 3> background{kDefaultBackground, kDefaultBackground, kDefaultBackground};
  if (factor_index(spec, kBackgroundHue) >= 0) {
    const auto [v, n] = value_of(kBackgroundHue, 0);
    background = hue_to_rgb(static_cast<double>(v) / n);
  }
  const auto [hue_v, hue_n] = value_of(kObjectHue, 0);
  const std::array<float, 3> object = hue_to_rgb(static_cast<double>(hue_v) / hue_n);
  const auto shape = static_cast<ShapeKind>(value_of(kObjectShape, 0).first);
  const auto [size_v, size_n] = value_of(kObjectSize, 0);
  const double radius = size_scale(size_v, size_n) * static_cast<double>(std::min(spec.width, spec.height)) / 2.0;

  const std::size_t w = spec.width, h = spec.height;
  std::vector<float> pixels(w * h * 3);
  for (std::size_t x = 0; x < w; ++x) {
    for (std::size_t y = 0; y < h; ++y) {
      const double u = static_cast<double>(x) + 0.5 - static_cast<double>(w) / 2.0;
      const double v = static_cast<double>(y) + 0.5 - static_cast<double>(h) / 2.0;
      const auto& color = inside(shape, u, v, radius) ? object : background;
      float* px = pixels.data() + (x * h + y) * 3;
      px[0] = color[0];
      px[1] = color[1];
      px[2] = color[2];
    }
  }
  return Tensor({w, h, 3}, std::move(pixels));
}

Dataset generate(const FactorSpec& spec, std::uint64_t seed) {
  spec.validate();
  Dataset dataset;
  dataset.spec = spec;
  const std::size_t k = spec.dataset_size();
  dataset.samples.reserve(k);
  std::uint64_t noise_state = derive_seed(seed, "noise");

  std::vector<std::uint32_t> combo(spec.factors.size(), 0);
  const std::size_t n_combos = k / spec.samples_per_combination;
  for (std::size_t c = 0; c < n_combos; ++c) {
    const Tensor clean = render_combination(spec, combo);
    for (std::uint32_t s = 0; s < spec.samples_per_combination; ++s) {
      LabeledImage img{clean, combo};
      const std::uint64_t sample_seed = splitmix64(noise_state);
      if (spec.noise_fraction > 0.0) img = add_salt_pepper(img, spec.noise_fraction, sample_seed);
      dataset.samples.push_back(std::move(img));
    }
    // Odometer increment, last factor fastest.
    for (std::size_t f = combo.size(); f-- > 0;) {
      if (++combo[f] < spec.factors[f].n_values) break;
      combo[f] = 0;
    }
  }
  return dataset;
}

LabeledImage add_salt_pepper(const LabeledImage& img, double fraction, std::uint64_t seed) {
  if (!(fraction >= 0.0 && fraction <= 1.0)) {
    throw ContractError(fmt::format("noise fraction {} outside [0, 1]", fraction));
  }
  if (img.pixels.rank() != 3) throw DimensionError("salt-and-pepper expects a [w, h, c] image");
  const std::size_t n_pixels = img.pixels.dim(0) * img.pixels.dim(1);
  const std::size_t channels = img.pixels.dim(2);
  const auto n_corrupt = static_cast<std::size_t>(std::llround(fraction * static_cast<double>(n_pixels)));

  LabeledImage out = img;
  if (n_corrupt == 0) return out;
  std::vector<std::uint32_t> positions(n_pixels);
  std::iota(positions.begin(), positions.end(), 0u);
  Rng rng(seed);
  auto data = out.pixels.mutable_data();
  // Partial Fisher-Yates: the first n_corrupt slots are a uniform sample without replacement.
  for (std::size_t i = 0; i < n_corrupt; ++i) {
    const std::size_t j = i + static_cast<std::size_t>(rng.below(n_pixels - i));
    std::swap(positions[i], positions[j]);
    const float value = rng.coin() ? 1.0f : 0.0f;
    for (std::size_t ch = 0; ch < channels; ++ch) data[positions[i] * channels + ch] = value;
  }
  return out;
}

std::pair<Dataset, Dataset> split_train_test(const Dataset& dataset, double ratio, std::uint64_t seed) {
  if (!(ratio > 0.0 && ratio < 1.0)) throw ContractError(fmt::format("split ratio {} outside (0, 1)", ratio));
  const std::size_t k = dataset.size();
  const auto n_train = static_cast<std::size_t>(std::llround(ratio * static_cast<double>(k)));
  if (n_train == 0 || n_train == k) {
    throw ContractError(fmt::format("split ratio {} on {} samples leaves one side empty", ratio, k));
  }
  std::vector<std::size_t> order(k);
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng(derive_seed(seed, "split"));
  for (std::size_t i = k; i > 1; --i) std::swap(order[i - 1], order[static_cast<std::size_t>(rng.below(i))]);

  Dataset train{dataset.spec, {}};
  Dataset test{dataset.spec, {}};
  train.samples.reserve(n_train);
  test.samples.reserve(k - n_train);
  for (std::size_t i = 0; i < k; ++i) {
    (i < n_train ? train : test).samples.push_back(dataset.samples[order[i]]);
  }
  return {std::move(train), std::move(test)};
}

std::vector<std::uint8_t> encode_dataset(const Dataset& dataset) {
  const std::string spec_text = to_json(dataset.spec).dump();
  ByteWriter w;
  w.raw(kDatasetMagic);
  w.u16(kDatasetVersion);
  w.u32(static_cast<std::uint32_t>(spec_text.size()));
  w.raw(spec_text);
  w.u32(static_cast<std::uint32_t>(dataset.size()));
  const std::size_t n_pixels = dataset.spec.width * dataset.spec.height * FactorSpec::kChannels;
  for (const auto& s : dataset.samples) {
    if (s.labels.size() != dataset.spec.factors.size() || s.pixels.numel() != n_pixels) {
      throw ContractError("sample does not match the dataset spec");
    }
    for (std::uint32_t label : s.labels) w.u16(static_cast<std::uint16_t>(label));
    w.f32s(s.pixels.data());
  }
  return std::move(w).take();
}

Dataset decode_dataset(std::span<const std::uint8_t> bytes) {
  ByteReader<ParseError> r(bytes, "dataset");
  if (r.text(4) != kDatasetMagic) throw ParseError("dataset: bad magic (expected \"MTLD\")");
  const std::uint16_t version = r.u16();
  if (version != kDatasetVersion) throw ParseError(fmt::format("dataset: unsupported version {}", version));
  nlohmann::json spec_doc;
  try {
    spec_doc = nlohmann::json::parse(r.text(r.u32()));
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(fmt::format("dataset: spec is not valid JSON: {}", e.what()));
  }
  Dataset dataset;
  dataset.spec = factor_spec_from_json(spec_doc);
  const std::uint32_t k = r.u32();
  const std::size_t n_tasks = dataset.spec.factors.size();
  const std::size_t w = dataset.spec.width, h = dataset.spec.height;
  r.need(static_cast<std::size_t>(k) * (n_tasks * 2 + w * h * 3 * 4));
  dataset.samples.reserve(k);
  for (std::uint32_t i = 0; i < k; ++i) {
    LabeledImage s;
    s.labels.resize(n_tasks);
    for (auto& label : s.labels) label = r.u16();
    std::vector<float> pixels(w * h * 3);
    r.f32s(pixels);
    s.pixels = Tensor({w, h, 3}, std::move(pixels));
    dataset.samples.push_back(std::move(s));
  }
  if (!r.done()) throw ParseError("dataset: trailing bytes after the last sample");
  return dataset;
}

void save_dataset(const std::string& path, const Dataset& dataset) { write_file(path, encode_dataset(dataset)); }

Dataset load_dataset(const std::string& path) { return decode_dataset(read_file(path)); }

bool bitwise_equal(const Dataset& a, const Dataset& b) {
  if (!(a.spec == b.spec) || a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a.samples[i].labels != b.samples[i].labels || !a.samples[i].pixels.bitwise_equal(b.samples[i].pixels)) {
      return false;
    }
  }
  return true;
}

}  // namespace mtlsplit
