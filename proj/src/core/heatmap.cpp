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

#include "heatmap.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <exception>
#include <fstream>
#include <map>
#include <thread>

#include "container.hpp"
#include "errors.hpp"
#include "keyvalue.hpp"

namespace flowgrain {
namespace {

constexpr std::size_t kSweepBatch = 256;

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(ErrorKind::Io, "cannot write " + path.string());
  out << text;
  if (!out) fail(ErrorKind::Io, "cannot write " + path.string());
}

std::string html_escape(const std::string& s) {
  std::string out;
  for (char ch : s) {
    switch (ch) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out += ch;
    }
  }
  return out;
}

// Colormap over u in [0, 1]: dark red -> yellow by u = 0.6, then fading out.
struct Rgba {
  double r, g, b, a;
};

Rgba colormap(double u) {
  u = std::clamp(u, 0.0, 1.0);
  const double t = std::min(u / 0.6, 1.0);
  const double fade = u <= 0.6 ? 1.0 : 1.0 - (u - 0.6) / 0.4;
  return {96.0 + t * (255.0 - 96.0), t * 230.0, 0.0, fade};
}

}  // namespace

std::size_t lattice_extent(std::size_t extent, std::size_t window, std::size_t stride) {
  if (window == 0 || stride == 0 || window > extent) return 0;
  return (extent - window) / stride + 1;
}

std::size_t default_sweep_workers() {
  if (const char* env = std::getenv("FLOWGRAIN_THREADS"); env && *env) {
    const auto n = parse_u64(env, "FLOWGRAIN_THREADS");
    if (n == 0 || n > 1024) fail(ErrorKind::Config, "FLOWGRAIN_THREADS must be in [1, 1024]");
    return n;
  }
  return std::max(1u, std::thread::hardware_concurrency());
}

HeatmapGrid sweep_loglik(const FlowCheckpoint& ckpt, const std::string& image_id, const Image& image,
                         std::size_t window, std::size_t stride, std::size_t workers) {
  if (stride == 0) fail(ErrorKind::Config, "sweep stride must be positive");
  if (window != ckpt.pipeline.crop_size) {
    fail(ErrorKind::Config, "sweep window " + std::to_string(window) + " does not match the checkpoint crop size " +
                                std::to_string(ckpt.pipeline.crop_size));
  }
  if (image.channels != 3) fail(ErrorKind::Data, "image " + image_id + " is not RGB");
  if (window > image.height || window > image.width) {
    fail(ErrorKind::Data, "window " + std::to_string(window) + " is larger than image " + image_id + " (" +
                              std::to_string(image.height) + "x" + std::to_string(image.width) + ")");
  }
  HeatmapGrid grid;
  grid.image_id = image_id;
  grid.window = window;
  grid.stride = stride;
  grid.rows = lattice_extent(image.height, window, stride);
  grid.cols = lattice_extent(image.width, window, stride);
  const std::size_t cells = grid.rows * grid.cols;
  grid.values.assign(cells, 0.0);

  if (workers == 0) workers = default_sweep_workers();
  workers = std::min(workers, (cells + kSweepBatch - 1) / kSweepBatch);
  const std::size_t dim = ckpt.pipeline.raw_dim();

  // Each worker owns a contiguous range of cell indices; per-row evaluation is
  // independent of batch composition, so the split cannot change results.
  auto run = [&](std::size_t begin, std::size_t end) {
    for (std::size_t b = begin; b < end; b += kSweepBatch) {
      const std::size_t n = std::min(kSweepBatch, end - b);
      Tensor raw = Tensor::matrix(n, dim);
      for (std::size_t i = 0; i < n; ++i) {
        const std::size_t cell = b + i;
        extract_crop(image, grid.cell_top(cell / grid.cols), grid.cell_left(cell % grid.cols), window, raw.row(i));
      }
      const auto lp = ckpt.log_prob_raw(raw);
      std::copy(lp.begin(), lp.end(), grid.values.begin() + static_cast<std::ptrdiff_t>(b));
    }
  };
  if (workers <= 1) {
    run(0, cells);
  } else {
    std::vector<std::thread> pool;
    std::vector<std::exception_ptr> errors(workers);
    const std::size_t per = (cells + workers - 1) / workers;
    for (std::size_t w = 0; w < workers; ++w) {
      const std::size_t begin = std::min(cells, w * per), end = std::min(cells, begin + per);
      pool.emplace_back([&, w, begin, end] {
        try {
          run(begin, end);
        } catch (...) {
          errors[w] = std::current_exception();
        }
      });
    }
    for (auto& t : pool) t.join();
    for (auto& e : errors)
      if (e) std::rethrow_exception(e);
  }
  return grid;
}

double percentile_sorted(const std::vector<double>& sorted, double p) {
  if (sorted.empty()) fail(ErrorKind::Data, "percentile of an empty set");
  const double pos = p / 100.0 * static_cast<double>(sorted.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
  const double frac = pos - static_cast<double>(lo);
  return sorted[lo] + frac * (sorted[hi] - sorted[lo]);
}

ImageQualityStats image_stats(const HeatmapGrid& grid) {
  if (grid.values.empty()) fail(ErrorKind::Data, "image_stats: empty grid for " + grid.image_id);
  std::vector<double> v = grid.values;
  std::sort(v.begin(), v.end());
  ImageQualityStats s;
  s.image_id = grid.image_id;
  s.p5 = percentile_sorted(v, 5);
  s.p25 = percentile_sorted(v, 25);
  s.p50 = percentile_sorted(v, 50);
  s.p75 = percentile_sorted(v, 75);
  s.p95 = percentile_sorted(v, 95);
  s.bin_key = (s.p25 + s.p50) / 2.0;
  s.cells = v.size();
  return s;
}

LLScaling fit_scaling(const std::vector<HeatmapGrid>& grids) {
  std::vector<double> all;
  for (const auto& g : grids) all.insert(all.end(), g.values.begin(), g.values.end());
  if (all.empty()) fail(ErrorKind::Data, "fit_scaling: no grid values");
  std::sort(all.begin(), all.end());
  LLScaling s{percentile_sorted(all, 1), percentile_sorted(all, 99)};
  if (!(s.hi > s.lo)) s.hi = s.lo + 1.0;
  return s;
}

std::int64_t BinReport::bin_of(const std::string& image_id) const {
  for (const auto& b : bins)
    if (std::find(b.members.begin(), b.members.end(), image_id) != b.members.end()) return b.index;
  fail(ErrorKind::Data, "image " + image_id + " is not in any bin");
}

BinReport bin_images(const std::vector<ImageQualityStats>& stats, const LLScaling& scaling, double width) {
  if (stats.empty()) fail(ErrorKind::Data, "bin_images: no images");
  if (!(width > 0.0) || !std::isfinite(width)) fail(ErrorKind::Config, "bin width must be positive");
  struct Entry {
    double key;
    std::string id;
  };
  std::map<std::int64_t, std::vector<Entry>> by_bin;
  for (const auto& s : stats) {
    const double key = scaling.apply(s.bin_key);
    if (!std::isfinite(key)) fail(ErrorKind::Numerical, "non-finite bin key for " + s.image_id);
    by_bin[static_cast<std::int64_t>(std::floor(key / width))].push_back({key, s.image_id});
  }
  BinReport report;
  report.width = width;
  report.scaling = scaling;
  for (auto& [index, entries] : by_bin) {
    std::sort(entries.begin(), entries.end(),
              [](const Entry& a, const Entry& b) { return a.key != b.key ? a.key < b.key : a.id < b.id; });
    QualityBin bin;
    bin.index = index;
    const double mid = (static_cast<double>(index) + 0.5) * width;
    const Entry* best = nullptr;
    for (const auto& e : entries) {
      bin.members.push_back(e.id);
      const double d = std::abs(e.key - mid);
      if (!best || d < std::abs(best->key - mid) || (d == std::abs(best->key - mid) && e.id < best->id)) best = &e;
    }
    bin.representative = best->id;
    report.bins.push_back(std::move(bin));
  }
  return report;
}

Overlay render_overlay(const Image& image, const HeatmapGrid& grid, const LLScaling& scaling, double alpha) {
  if (grid.rows == 0 || grid.cols == 0 || grid.values.size() != grid.rows * grid.cols) {
    fail(ErrorKind::Data, "render_overlay: empty or inconsistent grid");
  }
  if (grid.cell_top(grid.rows - 1) + grid.window > image.height ||
      grid.cell_left(grid.cols - 1) + grid.window > image.width) {
    fail(ErrorKind::Data, "render_overlay: grid geometry exceeds image " + grid.image_id);
  }
  if (image.channels != 3 && image.channels != 1) fail(ErrorKind::Data, "render_overlay: unsupported channel count");
  if (!(alpha >= 0.0 && alpha <= 1.0)) fail(ErrorKind::Config, "overlay alpha must be in [0, 1]");

  // Cell range covering pixel coordinate y along one axis, or the nearest
  // cell when no window covers it.
  auto covering = [](std::size_t y, std::size_t origin, std::size_t n, std::size_t w, std::size_t s) {
    if (y < origin) return std::pair<std::size_t, std::size_t>{0, 0};
    const std::size_t off = y - origin;
    const std::size_t last = std::min(off / s, n - 1);
    const std::size_t first = off + 1 > w ? (off + 1 - w + s - 1) / s : 0;
    if (first > last) return std::pair<std::size_t, std::size_t>{last, last};
    return std::pair<std::size_t, std::size_t>{first, last};
  };
  std::vector<std::pair<std::size_t, std::size_t>> col_range(image.width);
  for (std::size_t x = 0; x < image.width; ++x)
    col_range[x] = covering(x, grid.origin_col, grid.cols, grid.window, grid.stride);

  Overlay out;
  out.blended = Image(image.height, image.width, 3);
  out.composite = Image(image.height, image.width * 2, 3);
  for (std::size_t y = 0; y < image.height; ++y) {
    const auto [r0, r1] = covering(y, grid.origin_row, grid.rows, grid.window, grid.stride);
    for (std::size_t x = 0; x < image.width; ++x) {
      const auto [c0, c1] = col_range[x];
      double ll = grid.at(r0, c0);
      for (std::size_t r = r0; r <= r1; ++r)
        for (std::size_t c = c0; c <= c1; ++c) ll = std::min(ll, grid.at(r, c));
      const Rgba color = colormap(scaling.apply(ll) / 100.0);
      const double a = alpha * color.a;
      const double rgb[3] = {color.r, color.g, color.b};
      for (std::size_t ch = 0; ch < 3; ++ch) {
        const std::uint8_t src = image.at(y, x, image.channels == 3 ? ch : 0);
        const std::uint8_t v = a == 0.0 ? src : static_cast<std::uint8_t>(std::lround((1.0 - a) * src + a * rgb[ch]));
        out.blended.at(y, x, ch) = v;
        out.composite.at(y, x, ch) = src;
        out.composite.at(y, x + image.width, ch) = v;
      }
    }
  }
  return out;
}

void save_overlay(const Overlay& overlay, const std::filesystem::path& dir, const std::string& image_id) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) fail(ErrorKind::Io, "cannot create " + dir.string());
  write_image(dir / (image_id + "_overlay.png"), overlay.blended);
  write_image(dir / (image_id + "_composite.png"), overlay.composite);
}

void export_report(const std::vector<ImageQualityStats>& stats, const BinReport& bins,
                   const std::filesystem::path& csv_path) {
  struct Row {
    std::int64_t bin;
    const ImageQualityStats* s;
  };
  std::vector<Row> rows;
  for (const auto& s : stats) rows.push_back({bins.bin_of(s.image_id), &s});
  std::sort(rows.begin(), rows.end(), [](const Row& a, const Row& b) {
    if (a.bin != b.bin) return a.bin < b.bin;
    if (a.s->bin_key != b.s->bin_key) return a.s->bin_key < b.s->bin_key;
    return a.s->image_id < b.s->image_id;
  });
  std::string text = "image_id,P5,P25,P50,P75,P95,bin_key,bin_index,cells\n";
  for (const auto& [bin, s] : rows) {
    text += s->image_id + ',' + format_double(s->p5) + ',' + format_double(s->p25) + ',' + format_double(s->p50) +
            ',' + format_double(s->p75) + ',' + format_double(s->p95) + ',' + format_double(s->bin_key) + ',' +
            std::to_string(bin) + ',' + std::to_string(s->cells) + '\n';
  }
  write_text(csv_path, text);
}

void export_index_html(const BinReport& bins, const std::filesystem::path& html_path, const std::string& overlay_dir) {
  std::string page =
      "<!DOCTYPE html>\n<html><head><meta charset=\"utf-8\"><title>Quality bins</title></head><body>\n"
      "<h1>Quality bins</h1>\n<p>Bin width " +
      format_double(bins.width) + " scaled LL units; raw LL " + format_double(bins.scaling.lo) + " maps to 0 and " +
      format_double(bins.scaling.hi) + " to 100.</p>\n";
  for (const auto& b : bins.bins) {
    page += "<h2>Bin " + std::to_string(b.index) + "</h2>\n<p>Representative: " + html_escape(b.representative) +
            "</p>\n";
    if (!overlay_dir.empty()) {
      page += "<img src=\"" + html_escape(overlay_dir + "/" + b.representative + "_composite.png") +
              "\" alt=\"" + html_escape(b.representative) + "\" width=\"640\">\n";
    }
    page += "<ul>\n";
    for (const auto& m : b.members) page += "<li>" + html_escape(m) + "</li>\n";
    page += "</ul>\n";
  }
  page += "</body></html>\n";
  write_text(html_path, page);
}

void save_grids(const std::vector<HeatmapGrid>& grids, const std::filesystem::path& path) {
  Container c;
  c.config.set("model.kind", "heatmaps");
  c.config.set("grids.count", std::uint64_t{grids.size()});
  for (std::size_t i = 0; i < grids.size(); ++i) {
    const auto& g = grids[i];
    const std::string p = "grid." + std::to_string(i) + ".";
    c.config.set(p + "id", g.image_id);
    c.config.set(p + "window", std::uint64_t{g.window});
    c.config.set(p + "stride", std::uint64_t{g.stride});
    c.config.set(p + "origin_row", std::uint64_t{g.origin_row});
    c.config.set(p + "origin_col", std::uint64_t{g.origin_col});
    c.config.set(p + "scale_min", g.scale_min);
    c.config.set(p + "scale_max", g.scale_max);
    c.arrays.emplace_back("grid." + std::to_string(i), Tensor({g.rows, g.cols}, g.values));
  }
  write_container(path, c);
}

std::vector<HeatmapGrid> load_grids(const std::filesystem::path& path) {
  const Container c = read_container(path);
  if (c.config.find("model.kind") != "heatmaps") {
    fail(ErrorKind::Unsupported, path.string() + " does not hold heatmap grids");
  }
  std::vector<HeatmapGrid> grids(c.config.get_u64("grids.count"));
  for (std::size_t i = 0; i < grids.size(); ++i) {
    auto& g = grids[i];
    const std::string p = "grid." + std::to_string(i) + ".";
    g.image_id = c.config.get(p + "id");
    g.window = c.config.get_u64(p + "window");
    g.stride = c.config.get_u64(p + "stride");
    g.origin_row = c.config.get_u64(p + "origin_row");
    g.origin_col = c.config.get_u64(p + "origin_col");
    g.scale_min = c.config.get_double(p + "scale_min");
    g.scale_max = c.config.get_double(p + "scale_max");
    const Tensor& t = c.array("grid." + std::to_string(i));
    if (t.rank() != 2) fail(ErrorKind::CorruptFile, path.string() + ": grid array is not a matrix");
    g.rows = t.rows();
    g.cols = t.cols();
    g.values = t.data;
  }
  return grids;
}

}  // namespace flowgrain
