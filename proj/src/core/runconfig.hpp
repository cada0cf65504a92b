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

// Flat dotted-key run configuration shared by every pipeline stage, e.g.
//
//   flow.n_flows = 5
//   train.crop_size = 11
//   heatmap.stride = 8
//
// Unknown keys are rejected so typos never pass silently.

#pragma once

#include <string>
#include <vector>

#include "extractor.hpp"
#include "flows.hpp"
#include "keyvalue.hpp"
#include "synth.hpp"
#include "training.hpp"

namespace flowgrain {

struct HeatmapOptions {
  std::size_t stride = 8;
  double bin_width = 10.0;
  double alpha = 0.45;
  /// "all" or a split name; restricts which manifest images are swept.
  std::string split = "all";
  bool overlays = true;
  bool html = true;
};

struct EmbedOptions {
  /// Lattice stride of embedded crops; 0 uses the extractor crop size.
  std::size_t stride = 0;
  std::string split = "all";
};

struct RunConfig {
  SynthConfig synth;
  TrainConfig train;
  FlowConfig flow = FlowConfig::maf_default(0);
  ExtractorConfig extractor;
  HeatmapOptions heatmap;
  EmbedOptions embed;

  /// Applies `kv` over the defaults. Throws ErrorKind::Config listing every
  /// unknown key, malformed value and section violation at once.
  static RunConfig from_keyvalues(const KeyValues& kv);
  /// Complete snapshot; from_keyvalues(to_keyvalues()) reproduces *this.
  KeyValues to_keyvalues() const;
  static std::vector<std::string> known_keys();
};

/// `base` with every entry of `overrides` applied in order.
KeyValues merge_keyvalues(const KeyValues& base, const KeyValues& overrides);

void write_synth_config(const SynthConfig& s, KeyValues& kv, const std::string& prefix = "synth.");
SynthConfig read_synth_config(const KeyValues& kv, const std::string& prefix = "synth.", SynthConfig base = {});

/// "source:count:split" items separated by commas.
std::string format_synth_groups(const std::vector<SynthGroup>& groups);
std::vector<SynthGroup> parse_synth_groups(const std::string& text);

}  // namespace flowgrain
