// SPDX-License-Identifier: Apache-2.0
//
// Flat little-endian array files shared by the dataset and checkpoint formats.
#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <span>
#include <string>
#include <vector>

#include "avood/error.hpp"

namespace avood::io {

template <class U>
void write_le(const std::filesystem::path& path, std::span<const U> values) {
  static_assert(sizeof(U) == 4 || sizeof(U) == 1);
  std::vector<unsigned char> bytes(values.size() * sizeof(U));
  for (std::size_t i = 0; i < values.size(); ++i) {
    if constexpr (sizeof(U) == 1) {
      std::memcpy(&bytes[i], &values[i], 1);
    } else {
      std::uint32_t raw;
      std::memcpy(&raw, &values[i], 4);
      for (int b = 0; b < 4; ++b) bytes[4 * i + b] = static_cast<unsigned char>(raw >> (8 * b));
    }
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open for writing: " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write failed: " + path.string());
}

// Reads exactly `count` elements; any other file length is a shape mismatch.
template <class U>
std::vector<U> read_le(const std::filesystem::path& path, std::size_t count) {
  static_assert(sizeof(U) == 4 || sizeof(U) == 1);
  std::error_code ec;
  if (!std::filesystem::exists(path, ec)) {
    throw ValidationError(ValidationError::Code::kMissingFile, "missing array file: " + path.string());
  }
  const auto size = std::filesystem::file_size(path, ec);
  if (ec || size != count * sizeof(U)) {
    throw ValidationError(ValidationError::Code::kShapeMismatch,
                          "byte length of " + path.filename().string() + " is " + std::to_string(size) +
                              ", expected " + std::to_string(count * sizeof(U)));
  }
  std::vector<unsigned char> bytes(size);
  std::ifstream in(path, std::ios::binary);
  in.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(size));
  if (!in) throw IoError("read failed: " + path.string());
  std::vector<U> values(count);
  for (std::size_t i = 0; i < count; ++i) {
    if constexpr (sizeof(U) == 1) {
      std::memcpy(&values[i], &bytes[i], 1);
    } else {
      std::uint32_t raw = 0;
      for (int b = 0; b < 4; ++b) raw |= static_cast<std::uint32_t>(bytes[4 * i + b]) << (8 * b);
      std::memcpy(&values[i], &raw, 4);
    }
  }
  return values;
}

}  // namespace avood::io
