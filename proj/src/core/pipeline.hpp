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

// Dataset-level pipeline stages behind the command-line subcommands. Every
// stage writes only under the output directory it is given.

#pragma once

#include <filesystem>
#include <functional>
#include <string>

#include "extractor.hpp"
#include "heatmap.hpp"
#include "runconfig.hpp"
#include "training.hpp"

namespace flowgrain {

struct HeatmapSummary {
  std::size_t images = 0;
  std::size_t cells = 0;  // over all images
  LLScaling scaling;
  std::size_t bins = 0;
};

/// Sweeps the selected manifest images and writes grids.fgck, report.csv,
/// optionally overlays/<id>_{overlay,composite}.png and index.html.
HeatmapSummary run_heatmap(const FlowCheckpoint& flow, const RunConfig& config, const std::filesystem::path& manifest,
                           const std::filesystem::path& out_dir, std::size_t workers = 0);

/// Re-bins saved grids with the configured bin width: report.csv, index.html.
HeatmapSummary run_bins(const std::filesystem::path& grids_path, const RunConfig& config,
                        const std::filesystem::path& out_dir);

/// Scores crops listed as "image_path<TAB>top<TAB>left" lines (relative paths
/// resolve against the list's directory) into CSV path,top,left,ll.
std::size_t run_score(const FlowCheckpoint& flow, const std::filesystem::path& crop_list,
                      const std::filesystem::path& csv_path);

/// Embeds lattice crops of the selected manifest images into a scatter CSV;
/// `teacher_flow` (optional) fills the teacher_ll column.
std::size_t run_embed(const ExtractorCheckpoint& extractor, const FlowCheckpoint* teacher_flow, const RunConfig& config,
                      const std::filesystem::path& manifest, const std::filesystem::path& csv_path);

/// Records whose split passes the "all"/split-name filter.
std::vector<ImageRecord> filter_split(std::vector<ImageRecord> records, const std::string& split);

}  // namespace flowgrain
