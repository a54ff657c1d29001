// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The mtlsplit Authors

#pragma once

#include <bit>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <fmt/format.h>

namespace mtlsplit {

/// Little-endian append-only byte sink.
class ByteWriter {
 public:
  void u8(std::uint8_t v) { bytes_.push_back(v); }
  void u16(std::uint16_t v) { put(v, 2); }
  void u32(std::uint32_t v) { put(v, 4); }
  void u64(std::uint64_t v) { put(v, 8); }
  void f32(float v) { put(std::bit_cast<std::uint32_t>(v), 4); }
  void f32s(std::span<const float> values) {
    bytes_.reserve(bytes_.size() + values.size() * 4);
    for (float v : values) f32(v);
  }
  void raw(std::span<const std::uint8_t> data) { bytes_.insert(bytes_.end(), data.begin(), data.end()); }
  void raw(std::string_view text) { bytes_.insert(bytes_.end(), text.begin(), text.end()); }

  /// Overwrites a previously written u32 at `offset`.
  void patch_u32(std::size_t offset, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) bytes_[offset + i] = static_cast<std::uint8_t>(v >> (8 * i));
  }

  std::size_t size() const noexcept { return bytes_.size(); }
  std::vector<std::uint8_t> take() && { return std::move(bytes_); }
  const std::vector<std::uint8_t>& bytes() const noexcept { return bytes_; }

 private:
  void put(std::uint64_t v, int width) {
    for (int i = 0; i < width; ++i) bytes_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  std::vector<std::uint8_t> bytes_;
};

/// Little-endian cursor over a byte span. Reading past the end throws `Err`.
template <typename Err>
class ByteReader {
 public:
  explicit ByteReader(std::span<const std::uint8_t> bytes, std::string_view context = "input")
      : bytes_(bytes), context_(context) {}

  std::uint8_t u8() { return static_cast<std::uint8_t>(get(1)); }
  std::uint16_t u16() { return static_cast<std::uint16_t>(get(2)); }
  std::uint32_t u32() { return static_cast<std::uint32_t>(get(4)); }
  std::uint64_t u64() { return get(8); }
  float f32() { return std::bit_cast<float>(static_cast<std::uint32_t>(get(4))); }

  void f32s(std::span<float> out) {
    need(out.size() * 4);
    for (float& v : out) v = f32();
  }

  std::span<const std::uint8_t> raw(std::size_t n) {
    need(n);
    auto view = bytes_.subspan(pos_, n);
    pos_ += n;
    return view;
  }

  std::string text(std::size_t n) {
    auto view = raw(n);
    return {view.begin(), view.end()};
  }

  void need(std::size_t n) const {
    if (remaining() < n) {
      throw Err(fmt::format("{} truncated: needed {} bytes at offset {}, {} available", context_, n,
                            pos_, remaining()));
    }
  }

  std::size_t position() const noexcept { return pos_; }
  std::size_t remaining() const noexcept { return bytes_.size() - pos_; }
  bool done() const noexcept { return pos_ == bytes_.size(); }

 private:
  std::uint64_t get(int width) {
    need(static_cast<std::size_t>(width));
    std::uint64_t v = 0;
    for (int i = 0; i < width; ++i) v |= static_cast<std::uint64_t>(bytes_[pos_ + i]) << (8 * i);
    pos_ += static_cast<std::size_t>(width);
    return v;
  }

  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 0;
  std::string_view context_;
};

/// Whole-file helpers; failures raise FileError naming the path.
std::vector<std::uint8_t> read_file(const std::string& path);
void write_file(const std::string& path, std::span<const std::uint8_t> bytes);

}  // namespace mtlsplit
