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

#include "pipeline.hpp"

#include <fstream>
#include <sstream>

#include "errors.hpp"
#include "keyvalue.hpp"

namespace flowgrain {
namespace {

void ensure_dir(const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) fail(ErrorKind::Io, "cannot create directory " + dir.string());
}

HeatmapSummary report_grids(const std::vector<HeatmapGrid>& grids, const RunConfig& config,
                            const std::filesystem::path& out_dir, bool with_overlays) {
  std::vector<ImageQualityStats> stats;
  HeatmapSummary summary;
  for (const auto& g : grids) {
    stats.push_back(image_stats(g));
    summary.cells += g.values.size();
  }
  summary.images = grids.size();
  summary.scaling = fit_scaling(grids);
  const BinReport bins = bin_images(stats, summary.scaling, config.heatmap.bin_width);
  summary.bins = bins.bins.size();
  export_report(stats, bins, out_dir / "report.csv");
  if (config.heatmap.html) export_index_html(bins, out_dir / "index.html", with_overlays ? "overlays" : "");
  return summary;
}

}  // namespace

std::vector<ImageRecord> filter_split(std::vector<ImageRecord> records, const std::string& split) {
  if (split == "all") return records;
  const Split want = parse_split(split);
  std::vector<ImageRecord> out;
  for (auto& r : records)
    if (r.split == want) out.push_back(std::move(r));
  if (out.empty()) fail(ErrorKind::Data, "no images in split '" + split + "'");
  return out;
}

HeatmapSummary run_heatmap(const FlowCheckpoint& flow, const RunConfig& config, const std::filesystem::path& manifest,
                           const std::filesystem::path& out_dir, std::size_t workers) {
  if (flow.pipeline.crop_size == 0) fail(ErrorKind::Config, "heatmap needs a flow trained on image crops");
  const auto records = filter_split(load_dataset(manifest), config.heatmap.split);
  ensure_dir(out_dir);
  std::vector<HeatmapGrid> grids;
  for (const auto& r : records) {
    grids.push_back(sweep_loglik(flow, r.id, r.image, flow.pipeline.crop_size, config.heatmap.stride, workers));
  }
  const LLScaling scaling = fit_scaling(grids);
  for (auto& g : grids) {
    g.scale_min = scaling.lo;
    g.scale_max = scaling.hi;
  }
  save_grids(grids, out_dir / "grids.fgck");
  if (config.heatmap.overlays) {
    for (std::size_t i = 0; i < records.size(); ++i) {
      save_overlay(render_overlay(records[i].image, grids[i], scaling, config.heatmap.alpha), out_dir / "overlays",
                   records[i].id);
    }
  }
  return report_grids(grids, config, out_dir, config.heatmap.overlays);
}

HeatmapSummary run_bins(const std::filesystem::path& grids_path, const RunConfig& config,
                        const std::filesystem::path& out_dir) {
  const auto grids = load_grids(grids_path);
  if (grids.empty()) fail(ErrorKind::Data, grids_path.string() + " holds no grids");
  ensure_dir(out_dir);
  const bool overlays = std::filesystem::exists(out_dir / "overlays");
  return report_grids(grids, config, out_dir, overlays);
}

std::size_t run_score(const FlowCheckpoint& flow, const std::filesystem::path& crop_list,
                      const std::filesystem::path& csv_path) {
  const std::size_t s = flow.pipeline.crop_size;
  if (s == 0) fail(ErrorKind::Config, "score needs a flow trained on image crops");
  std::ifstream in(crop_list);
  if (!in) fail(ErrorKind::Data, "cannot open crop list " + crop_list.string());
  struct Item {
    std::string path;
    std::size_t top, left;
  };
  std::vector<Item> items;
  std::string line;
  for (std::size_t lineno = 1; std::getline(in, line); ++lineno) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line[0] == '#') continue;
    std::stringstream ss(line);
    std::string path, top, left;
    if (!std::getline(ss, path, '\t') || !std::getline(ss, top, '\t') || !std::getline(ss, left, '\t')) {
      fail(ErrorKind::Data, crop_list.string() + ":" + std::to_string(lineno) + ": expected path<TAB>top<TAB>left");
    }
    try {
      items.push_back({path, parse_u64(top, "top"), parse_u64(left, "left")});
    } catch (const Error& e) {
      fail(ErrorKind::Data, crop_list.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  if (items.empty()) fail(ErrorKind::Data, crop_list.string() + " lists no crops");
  Tensor raw = Tensor::matrix(items.size(), flow.pipeline.raw_dim());
  std::string last_path;
  Image image;
  for (std::size_t i = 0; i < items.size(); ++i) {
    if (items[i].path != last_path) {
      std::filesystem::path p = items[i].path;
      if (p.is_relative()) p = crop_list.parent_path() / p;
      image = read_image(p);
      last_path = items[i].path;
    }
    if (image.channels != 3 || items[i].top + s > image.height || items[i].left + s > image.width) {
      fail(ErrorKind::Data, "crop at (" + std::to_string(items[i].top) + ", " + std::to_string(items[i].left) +
                                ") does not fit RGB image " + items[i].path);
    }
    extract_crop(image, items[i].top, items[i].left, s, raw.row(i));
  }
  const auto ll = flow.log_prob_raw(raw);
  std::string text = "path,top,left,ll\n";
  for (std::size_t i = 0; i < items.size(); ++i) {
    text += items[i].path + ',' + std::to_string(items[i].top) + ',' + std::to_string(items[i].left) + ',' +
            format_double(ll[i]) + '\n';
  }
  std::ofstream out(csv_path, std::ios::binary | std::ios::trunc);
  if (!out || !(out << text)) fail(ErrorKind::Io, "cannot write " + csv_path.string());
  return items.size();
}

std::size_t run_embed(const ExtractorCheckpoint& extractor, const FlowCheckpoint* teacher_flow, const RunConfig& config,
                      const std::filesystem::path& manifest, const std::filesystem::path& csv_path) {
  const auto records = filter_split(load_dataset(manifest), config.embed.split);
  const std::size_t stride = config.embed.stride ? config.embed.stride : extractor.config.crop_size;
  TeacherFn teacher;
  if (teacher_flow) teacher = flow_teacher(*teacher_flow, extractor.config.crop_size, extractor.config.teacher_stride);
  std::vector<EmbeddingPoint> points;
  for (const auto& r : records) {
    auto p = embed_image(extractor, r.id, r.image, stride, teacher_flow ? &teacher : nullptr);
    points.insert(points.end(), std::make_move_iterator(p.begin()), std::make_move_iterator(p.end()));
  }
  export_scatter(points, csv_path);
  return points.size();
}

}  // namespace flowgrain
