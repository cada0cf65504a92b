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

#include "synth.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <numbers>
#include <numeric>

#include "errors.hpp"
#include "rng.hpp"

namespace flowgrain {
namespace fs = std::filesystem;
namespace {

using Rgb = std::array<double, 3>;

constexpr std::uint64_t kSelectionStream = 0x5eedc0de;

std::uint8_t clamp_byte(double v) { return static_cast<std::uint8_t>(std::clamp(std::lround(v), 0L, 255L)); }

class Canvas {
 public:
  Canvas(std::size_t h, std::size_t w) : rgb_(h, w, 3), mask_(h, w, 1), labels_(h, w, 1), color_(h * w) {}

  // Paints the pixels of a rotated ellipse (shape = 0) or rectangle (shape = 1)
  // centered at (cy, cx) with half-extents (a along theta, b across).
  // `shade(u, v)` receives normalized coordinates in [-1, 1].
  template <class Shade>
  void paint(double cy, double cx, double a, double b, double theta, bool rectangle, SynthLabel label,
             bool contaminant, Shade&& shade) {
    const double reach = std::max(a, b) + 1.0;
    const long r0 = std::max(0L, static_cast<long>(std::floor(cy - reach)));
    const long r1 = std::min(static_cast<long>(rgb_.height) - 1, static_cast<long>(std::ceil(cy + reach)));
    const long c0 = std::max(0L, static_cast<long>(std::floor(cx - reach)));
    const long c1 = std::min(static_cast<long>(rgb_.width) - 1, static_cast<long>(std::ceil(cx + reach)));
    const double ct = std::cos(theta), st = std::sin(theta);
    for (long r = r0; r <= r1; ++r)
      for (long c = c0; c <= c1; ++c) {
        const double dy = static_cast<double>(r) + 0.5 - cy, dx = static_cast<double>(c) + 0.5 - cx;
        const double u = (dx * ct + dy * st) / a, v = (-dx * st + dy * ct) / b;
        const bool inside = rectangle ? (std::abs(u) <= 1.0 && std::abs(v) <= 1.0) : (u * u + v * v <= 1.0);
        if (!inside) continue;
        const std::size_t i = static_cast<std::size_t>(r) * rgb_.width + static_cast<std::size_t>(c);
        color_[i] = shade(u, v);
        labels_.pixels[i] = static_cast<std::uint8_t>(label);
        mask_.pixels[i] = contaminant ? 255 : 0;
      }
  }

  void fill_background(Rng& rng) {
    for (auto& px : color_) {
      const double g = 18.0 + 10.0 * rng.uniform();
      px = {g + 8.0, g + 3.0, g - 4.0};
    }
  }

  SynthImage finish(Rng& rng) {
    for (std::size_t i = 0; i < color_.size(); ++i)
      for (std::size_t ch = 0; ch < 3; ++ch) rgb_.pixels[i * 3 + ch] = clamp_byte(color_[i][ch] + 5.0 * rng.normal());
    SynthImage out;
    out.rgb = std::move(rgb_);
    out.mask = std::move(mask_);
    out.labels = std::move(labels_);
    return out;
  }

 private:
  Image rgb_, mask_, labels_;
  std::vector<Rgb> color_;
};

Rgb jitter(const Rgb& base, Rng& rng, double spread) {
  return {base[0] + rng.uniform(-spread, spread), base[1] + rng.uniform(-spread, spread),
          base[2] + rng.uniform(-spread, spread)};
}

void draw_kernel(Canvas& canvas, Rng& rng, double cy, double cx, double s, bool hue_shifted) {
  const double a = rng.uniform(14.0, 20.0) * s, b = rng.uniform(9.0, 13.0) * s;
  const double theta = rng.uniform(0.0, std::numbers::pi);
  const Rgb base = hue_shifted ? jitter({150.0, 178.0, 72.0}, rng, 10.0) : jitter({228.0, 162.0, 44.0}, rng, 14.0);
  canvas.paint(cy, cx, a, b, theta, false, hue_shifted ? SynthLabel::HueShiftedKernel : SynthLabel::Kernel, false,
               [&](double u, double v) {
                 const double r2 = u * u + v * v;
                 const double light = 1.0 - 0.35 * r2 + 0.18 * std::exp(-((u + 0.35) * (u + 0.35) + (v + 0.3) * (v + 0.3)) * 8.0);
                 return Rgb{base[0] * light, base[1] * light, base[2] * light};
               });
}

void draw_leaf(Canvas& canvas, Rng& rng, double cy, double cx, double s) {
  const double a = rng.uniform(70.0, 120.0) * s, b = rng.uniform(16.0, 26.0) * s;
  const Rgb base = jitter({92.0, 84.0, 36.0}, rng, 10.0);
  canvas.paint(cy, cx, a, b, rng.uniform(0.0, std::numbers::pi), false, SynthLabel::Leaf, true,
               [&](double u, double v) {
                 const double vein = std::abs(v) < 0.08 ? 0.7 : 1.0;
                 const double rib = 0.92 + 0.08 * std::cos(18.0 * (u + std::abs(v)));
                 return Rgb{base[0] * vein * rib, base[1] * vein * rib, base[2] * vein * rib};
               });
}

void draw_stick(Canvas& canvas, Rng& rng, double cy, double cx, double s) {
  const double a = rng.uniform(80.0, 140.0) * s, b = rng.uniform(8.0, 12.0) * s;
  const Rgb base = jitter({118.0, 74.0, 38.0}, rng, 10.0);
  canvas.paint(cy, cx, a, b, rng.uniform(0.0, std::numbers::pi), true, SynthLabel::Stick, true,
               [&](double u, double v) {
                 const double grain = 0.85 + 0.15 * std::sin(40.0 * v + 3.0 * u);
                 const double edge = 1.0 - 0.3 * v * v;
                 return Rgb{base[0] * grain * edge, base[1] * grain * edge, base[2] * grain * edge};
               });
}

void draw_broken(Canvas& canvas, Rng& rng, double cy, double cx, double s) {
  const int pieces = static_cast<int>(rng.index(5)) + 4;
  for (int p = 0; p < pieces; ++p) {
    const double oy = rng.uniform(-30.0, 30.0) * s, ox = rng.uniform(-30.0, 30.0) * s;
    const double a = rng.uniform(8.0, 16.0) * s, b = rng.uniform(6.0, 11.0) * s;
    const Rgb base = jitter({250.0, 236.0, 196.0}, rng, 6.0);
    canvas.paint(cy + oy, cx + ox, a, b, rng.uniform(0.0, std::numbers::pi), true, SynthLabel::Broken, true,
                 [&](double u, double) {
                   const double facet = u > 0.0 ? 1.0 : 0.9;
                   return Rgb{base[0] * facet, base[1] * facet, base[2] * facet};
                 });
  }
}

void draw_chaff(Canvas& canvas, Rng& rng, double cy, double cx, double s) {
  const double a = rng.uniform(28.0, 48.0) * s, b = rng.uniform(22.0, 36.0) * s;
  const Rgb base = jitter({222.0, 218.0, 200.0}, rng, 8.0);
  canvas.paint(cy, cx, a, b, rng.uniform(0.0, std::numbers::pi), false, SynthLabel::Chaff, true,
               [&](double u, double v) {
                 const double fiber = 0.9 + 0.1 * std::sin(25.0 * u + 7.0 * v);
                 return Rgb{base[0] * fiber, base[1] * fiber, base[2] * fiber};
               });
}

struct IndexInfo {
  std::string source;
  Split split;
  std::size_t ordinal;
};

IndexInfo locate(const SynthConfig& config, std::size_t index) {
  std::size_t offset = 0;
  for (const auto& g : config.groups) {
    if (index < offset + g.count) return {g.source, g.split, index};
    offset += g.count;
  }
  fail(ErrorKind::Config, "synth: image index " + std::to_string(index) + " out of range");
}

// Exactly round(fraction · n) contaminated images, chosen by a seeded shuffle.
std::vector<bool> contaminated_images(const SynthConfig& config) {
  const std::size_t n = config.total_images();
  const auto count = static_cast<std::size_t>(std::llround(config.contamination_fraction * static_cast<double>(n)));
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  Rng rng(derive_seed(config.seed, kSelectionStream));
  for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[rng.index(i)]);
  std::vector<bool> flags(n, false);
  for (std::size_t i = 0; i < count; ++i) flags[order[i]] = true;
  return flags;
}

std::string image_id(const IndexInfo& info) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "_%04zu", info.ordinal);
  return info.source + buf;
}

}  // namespace

void SynthConfig::validate() const {
  std::vector<std::string> problems;
  if (height < 8 || width < 8) problems.push_back("synth.height and synth.width must be >= 8");
  if (groups.empty()) problems.push_back("synth needs at least one image group");
  for (const auto& g : groups) {
    if (g.count < 1) problems.push_back("synth group '" + g.source + "' must have count >= 1");
    if (g.source.empty() || g.source.find_first_of("\t\n/ ") != std::string::npos)
      problems.push_back("synth group source '" + g.source + "' must be a non-empty token");
  }
  if (!(contamination_fraction >= 0.0 && contamination_fraction <= 1.0))
    problems.push_back("synth.contamination_fraction must be in [0, 1]");
  if (contaminants_min < 1 || contaminants_max < contaminants_min)
    problems.push_back("synth.contaminants_min/max must satisfy 1 <= min <= max");
  const double rates[] = {leaf_rate, stick_rate, broken_rate, chaff_rate};
  double total = 0.0;
  for (double r : rates) {
    if (r < 0.0) problems.push_back("synth contaminant rates must be >= 0");
    total += r;
  }
  if (!(total > 0.0)) problems.push_back("synth contaminant rates must not all be zero");
  if (!(hue_patch_rate >= 0.0 && hue_patch_rate <= 1.0)) problems.push_back("synth.hue_patch_rate must be in [0, 1]");
  if (!(object_scale > 0.0)) problems.push_back("synth.object_scale must be > 0");
  if (!(kernel_density > 0.0)) problems.push_back("synth.kernel_density must be > 0");
  for (const auto* fmt : {&image_format, &mask_format})
    if (*fmt != "ppm" && *fmt != "pgm" && *fmt != "png") problems.push_back("synth format '" + *fmt + "' must be ppm, pgm or png");
  if (image_format == "pgm") problems.push_back("synth.image_format must be ppm or png");
  if (mask_format == "ppm") problems.push_back("synth.mask_format must be pgm or png");
  if (!problems.empty()) {
    std::string msg = "invalid synth config:";
    for (const auto& p : problems) msg += " " + p + ";";
    fail(ErrorKind::Config, msg);
  }
}

std::size_t SynthConfig::total_images() const {
  std::size_t n = 0;
  for (const auto& g : groups) n += g.count;
  return n;
}

SynthImage render_synthetic_image(const SynthConfig& config, std::size_t index) {
  const IndexInfo info = locate(config, index);
  const bool contaminated = contaminated_images(config)[index];
  Rng rng(derive_seed(config.seed, index));
  const double s = config.object_scale;
  const double h = static_cast<double>(config.height), w = static_cast<double>(config.width);

  Canvas canvas(config.height, config.width);
  canvas.fill_background(rng);

  // Optional circular patch whose kernels are hue-shifted.
  const bool hue_patch = rng.bernoulli(config.hue_patch_rate);
  const double py = rng.uniform(0.0, h), px = rng.uniform(0.0, w);
  const double pr = rng.uniform(60.0, 110.0) * s;

  const double kernel_area = std::numbers::pi * 17.0 * 11.0 * s * s;
  const auto kernels = static_cast<std::size_t>(config.kernel_density * h * w / kernel_area);
  for (std::size_t k = 0; k < kernels; ++k) {
    const double cy = rng.uniform(-10.0 * s, h + 10.0 * s), cx = rng.uniform(-10.0 * s, w + 10.0 * s);
    const bool shifted = hue_patch && (cy - py) * (cy - py) + (cx - px) * (cx - px) < pr * pr;
    draw_kernel(canvas, rng, cy, cx, s, shifted);
  }

  if (contaminated) {
    const std::size_t n = config.contaminants_min + rng.index(config.contaminants_max - config.contaminants_min + 1);
    const double total = config.leaf_rate + config.stick_rate + config.broken_rate + config.chaff_rate;
    for (std::size_t i = 0; i < n; ++i) {
      const double pick = rng.uniform() * total;
      const double cy = rng.uniform(0.1 * h, 0.9 * h), cx = rng.uniform(0.1 * w, 0.9 * w);
      if (pick < config.leaf_rate) {
        draw_leaf(canvas, rng, cy, cx, s);
      } else if (pick < config.leaf_rate + config.stick_rate) {
        draw_stick(canvas, rng, cy, cx, s);
      } else if (pick < config.leaf_rate + config.stick_rate + config.broken_rate) {
        draw_broken(canvas, rng, cy, cx, s);
      } else {
        draw_chaff(canvas, rng, cy, cx, s);
      }
    }
  }

  SynthImage out = canvas.finish(rng);
  out.id = image_id(info);
  out.source = info.source;
  out.split = info.split;
  return out;
}

fs::path mask_path_for(const fs::path& image_path, const std::string& mask_format) {
  return image_path.parent_path().parent_path() / "masks" / (image_path.stem().string() + "." + mask_format);
}

fs::path label_path_for(const fs::path& image_path, const std::string& mask_format) {
  return image_path.parent_path().parent_path() / "labels" / (image_path.stem().string() + "." + mask_format);
}

fs::path generate_synthetic_corpus(const SynthConfig& config, const fs::path& out_dir) {
  config.validate();
  std::error_code ec;
  for (const char* sub : {"images", "masks", "labels"}) {
    fs::create_directories(out_dir / sub, ec);
    if (ec) fail(ErrorKind::Io, "cannot create " + (out_dir / sub).string() + ": " + ec.message());
  }
  std::vector<ManifestEntry> entries;
  for (std::size_t i = 0; i < config.total_images(); ++i) {
    const SynthImage img = render_synthetic_image(config, i);
    const fs::path rel = fs::path("images") / (img.id + "." + config.image_format);
    write_image(out_dir / rel, img.rgb);
    write_image(mask_path_for(out_dir / rel, config.mask_format), img.mask);
    write_image(label_path_for(out_dir / rel, config.mask_format), img.labels);
    entries.push_back({rel, img.source, img.split});
  }
  const fs::path manifest = out_dir / "manifest.tsv";
  write_manifest(manifest, entries);
  return manifest;
}

}  // namespace flowgrain
