// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The mtlsplit Authors

#include "mtlsplit/binary_io.hpp"

#include <fstream>
#include <iterator>

#include "mtlsplit/error.hpp"

namespace mtlsplit {

std::vector<std::uint8_t> read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FileError(fmt::format("cannot open '{}' for reading", path));
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (in.bad()) throw FileError(fmt::format("error while reading '{}'", path));
  return bytes;
}

void write_file(const std::string& path, std::span<const std::uint8_t> bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw FileError(fmt::format("cannot open '{}' for writing", path));
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw FileError(fmt::format("error while writing '{}'", path));
}

}  // namespace mtlsplit
