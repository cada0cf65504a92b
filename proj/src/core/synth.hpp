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

// Seeded synthetic grain-pile corpus: yellow-orange elliptical kernels on a
// dark background, optional hue-shifted kernel patches, and contaminants
// (leaves, sticks, broken fragments, pale chaff) with per-pixel ground truth.

#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "imaging.hpp"

namespace flowgrain {

/// Per-pixel generative factor written to the label map.
enum class SynthLabel : std::uint8_t {
  Background = 0,
  Kernel = 1,
  HueShiftedKernel = 2,
  Leaf = 3,
  Stick = 4,
  Broken = 5,
  Chaff = 6,
};

struct SynthGroup {
  std::string source;
  std::size_t count = 1;
  Split split = Split::Train;
};

struct SynthConfig {
  std::uint64_t seed = 7;
  std::size_t height = 460, width = 640;
  /// Images are numbered consecutively across groups in this order.
  std::vector<SynthGroup> groups{{"synth", 16, Split::Train}, {"synth", 4, Split::Val}, {"synth", 8, Split::Test}};
  /// Fraction of images (rounded to the nearest count) carrying contaminants.
  double contamination_fraction = 0.3;
  std::size_t contaminants_min = 1, contaminants_max = 3;
  /// Relative rates of the four contaminant types.
  double leaf_rate = 0.3, stick_rate = 0.25, broken_rate = 0.2, chaff_rate = 0.25;
  /// Probability that an image contains a patch of hue-shifted kernels.
  double hue_patch_rate = 0.3;
  /// Linear scale of kernels and contaminants relative to a 460×640 frame.
  double object_scale = 1.0;
  /// Kernels per unit of image area covered, before overlap.
  double kernel_density = 1.4;
  std::string image_format = "ppm";
  std::string mask_format = "pgm";

  /// Throws ErrorKind::Config listing every violation.
  void validate() const;
  std::size_t total_images() const;
};

struct SynthImage {
  std::string id;
  std::string source;
  Split split = Split::Train;
  Image rgb;     // 3 channels
  Image mask;    // 1 channel, 0 clean / 255 contaminant
  Image labels;  // 1 channel, SynthLabel values
};

/// Renders image `index` of the corpus; a pure function of (config, index).
SynthImage render_synthetic_image(const SynthConfig& config, std::size_t index);

/// Writes images/, masks/, labels/ and manifest.tsv under `out_dir` and
/// returns the manifest path. Byte-identical output for identical configs.
std::filesystem::path generate_synthetic_corpus(const SynthConfig& config, const std::filesystem::path& out_dir);

/// Ground-truth mask path for a corpus image path (images/x.ppm -> masks/x.pgm).
std::filesystem::path mask_path_for(const std::filesystem::path& image_path, const std::string& mask_format = "pgm");
std::filesystem::path label_path_for(const std::filesystem::path& image_path, const std::string& mask_format = "pgm");

}  // namespace flowgrain
