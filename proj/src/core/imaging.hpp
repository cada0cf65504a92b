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

#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace flowgrain {

/// 8-bit interleaved image, row-major, `channels` samples per pixel.
struct Image {
  std::size_t height = 0, width = 0, channels = 3;
  std::vector<std::uint8_t> pixels;

  Image() = default;
  Image(std::size_t h, std::size_t w, std::size_t c, std::uint8_t fill = 0)
      : height(h), width(w), channels(c), pixels(h * w * c, fill) {}

  std::uint8_t& at(std::size_t r, std::size_t c, std::size_t ch = 0) {
    return pixels[(r * width + c) * channels + ch];
  }
  std::uint8_t at(std::size_t r, std::size_t c, std::size_t ch = 0) const {
    return pixels[(r * width + c) * channels + ch];
  }
};

enum class Split { Train, Val, Test };
const char* to_string(Split split);
Split parse_split(const std::string& text);

struct ManifestEntry {
  std::filesystem::path path;  // resolved against the manifest's directory
  std::string source;
  Split split = Split::Train;
};

struct ImageRecord {
  std::string id;  // file stem
  std::filesystem::path path;
  std::string source;
  Split split = Split::Train;
  Image image;
};

/// Decodes binary PPM (P6), PGM (P5) or PNG, chosen by content.
Image read_image(const std::filesystem::path& path);
/// Encodes by extension: .ppm/.pgm write netpbm, .png writes PNG.
void write_image(const std::filesystem::path& path, const Image& image);

/// Tab-separated `path source split` rows; blank lines and '#' comments are
/// skipped. Malformed rows raise ErrorKind::Data naming the line.
std::vector<ManifestEntry> read_manifest(const std::filesystem::path& manifest);
void write_manifest(const std::filesystem::path& manifest, const std::vector<ManifestEntry>& entries);

/// Loads every manifest row in order. Missing files, decode failures and
/// non-RGB images raise ErrorKind::Data naming the path.
std::vector<ImageRecord> load_dataset(const std::filesystem::path& manifest);

/// Block-average downsampling by an integer factor with round-half-up.
/// The 25% regime is factor 4 (460×640 -> 115×160).
Image downsample(const Image& image, std::size_t factor = 4);

}  // namespace flowgrain
