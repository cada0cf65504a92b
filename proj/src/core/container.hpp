// Copyright 2026 The flowgrain Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

// Checkpoint container. Layout, all integers little-endian:
//
//   "FGCK"  u32 version
//   u64 config length, config text (KeyValues)
//   u32 array count, then per array:
//     u32 name length, name, u32 rank, rank × u64 extents, f64 data
//   u32 CRC32 of every preceding byte

#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "keyvalue.hpp"
#include "tensor.hpp"

namespace flowgrain {

inline constexpr std::uint32_t kContainerVersion = 1;

struct Container {
  std::uint32_t version = kContainerVersion;
  KeyValues config;
  std::vector<std::pair<std::string, Tensor>> arrays;

  /// Throws ErrorKind::CorruptFile when the array is absent.
  const Tensor& array(const std::string& name) const;
  bool has_array(const std::string& name) const;
};

std::vector<std::uint8_t> encode_container(const Container& c);
/// Raises ErrorKind::CorruptFile on bad magic, truncation, trailing bytes
/// or checksum mismatch and ErrorKind::Unsupported on a foreign version.
Container decode_container(const std::vector<std::uint8_t>& bytes, const std::string& origin = "checkpoint");

void write_container(const std::filesystem::path& path, const Container& c);
Container read_container(const std::filesystem::path& path);

}  // namespace flowgrain
