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

// Sliding-window log-likelihood heatmaps, per-image percentile statistics,
// quality binning and overlay rendering.
//
// Lattice convention: a window of size w at stride s over an extent D has
// floor((D - w) / s) + 1 positions, the first at offset 0. Trailing margins
// narrower than a stride are not visited.

#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "imaging.hpp"
#include "training.hpp"

namespace flowgrain {

struct HeatmapGrid {
  std::string image_id;
  std::size_t window = 0, stride = 0;
  std::size_t origin_row = 0, origin_col = 0;
  std::size_t rows = 0, cols = 0;
  std::vector<double> values;  // raw LL, row-major
  /// Visualization range (raw LL mapped to 0 and 100), see LLScaling.
  double scale_min = 0.0, scale_max = 0.0;

  double at(std::size_t r, std::size_t c) const { return values[r * cols + c]; }
  std::size_t cell_top(std::size_t r) const { return origin_row + r * stride; }
  std::size_t cell_left(std::size_t c) const { return origin_col + c * stride; }
};

std::size_t lattice_extent(std::size_t extent, std::size_t window, std::size_t stride);

/// Worker count for sweeps: FLOWGRAIN_THREADS when set, else the hardware
/// concurrency. Throws ErrorKind::Config on a malformed value.
std::size_t default_sweep_workers();

/// One eval-mode LL per lattice cell using the checkpoint's crop pipeline on
/// noise-free crops. `window` must equal the checkpoint's crop size. Results
/// do not depend on `workers` (0 selects default_sweep_workers()).
HeatmapGrid sweep_loglik(const FlowCheckpoint& ckpt, const std::string& image_id, const Image& image,
                         std::size_t window, std::size_t stride, std::size_t workers = 0);

/// Percentile of ascending `sorted` values by linear interpolation between
/// order statistics at position p/100 * (n - 1).
double percentile_sorted(const std::vector<double>& sorted, double p);

struct ImageQualityStats {
  std::string image_id;
  double p5 = 0, p25 = 0, p50 = 0, p75 = 0, p95 = 0;
  double bin_key = 0;  // (P25 + P50) / 2
  std::size_t cells = 0;
};

ImageQualityStats image_stats(const HeatmapGrid& grid);

/// Affine, strictly increasing map of raw LL onto the visualization range:
/// `lo` goes to 0 and `hi` to 100. Values outside are not clamped.
struct LLScaling {
  double lo = 0.0, hi = 100.0;
  double apply(double raw) const { return (raw - lo) * 100.0 / (hi - lo); }
};

/// 1st and 99th percentile of every cell of every grid. A degenerate range
/// is widened to one unit so the map stays strictly increasing.
LLScaling fit_scaling(const std::vector<HeatmapGrid>& grids);

struct QualityBin {
  std::int64_t index = 0;
  std::vector<std::string> members;  // ascending scaled key, then id
  std::string representative;
};

struct BinReport {
  double width = 10.0;
  LLScaling scaling;
  std::vector<QualityBin> bins;  // ascending index

  /// Index of the bin holding `image_id`; throws ErrorKind::Data if absent.
  std::int64_t bin_of(const std::string& image_id) const;
};

/// Bins images by floor(scaled bin key / width). Each bin's representative
/// is the member whose scaled key is nearest the bin midpoint, ties going to
/// the lexicographically smallest id.
BinReport bin_images(const std::vector<ImageQualityStats>& stats, const LLScaling& scaling, double width = 10.0);

struct Overlay {
  Image blended;    // image with the heatmap blended in
  Image composite;  // original and blended side by side
};

/// Per-pixel LL is the minimum over the windows covering the pixel; pixels
/// outside every window take the nearest cell. Colors run from dark red
/// (low) through yellow to transparent (high) over the scaled range.
Overlay render_overlay(const Image& image, const HeatmapGrid& grid, const LLScaling& scaling, double alpha = 0.45);

/// Writes <dir>/<id>_overlay.png and <dir>/<id>_composite.png.
void save_overlay(const Overlay& overlay, const std::filesystem::path& dir, const std::string& image_id);

/// CSV with columns image_id,P5,P25,P50,P75,P95,bin_key,bin_index,cells, one
/// row per image ordered by bin, then key, then id.
void export_report(const std::vector<ImageQualityStats>& stats, const BinReport& bins,
                   const std::filesystem::path& csv_path);
/// Static page listing the bins, linking `<id>_composite.png` images
/// relative to the page when `overlay_dir` is non-empty.
void export_index_html(const BinReport& bins, const std::filesystem::path& html_path,
                       const std::string& overlay_dir = "");

/// Grid sets persisted in the checkpoint container ("model.kind = heatmaps").
void save_grids(const std::vector<HeatmapGrid>& grids, const std::filesystem::path& path);
std::vector<HeatmapGrid> load_grids(const std::filesystem::path& path);

}  // namespace flowgrain
