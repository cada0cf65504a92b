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

#include "imaging.hpp"

#include <png.h>

#include <cctype>
#include <fstream>
#include <iterator>
#include <sstream>

#include "errors.hpp"

namespace flowgrain {
namespace fs = std::filesystem;
namespace {

std::vector<std::uint8_t> read_bytes(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::Data, "cannot open image " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

// Netpbm header token reader; skips whitespace and '#' comments.
struct PnmCursor {
  const std::vector<std::uint8_t>& bytes;
  std::size_t pos = 0;

  bool next_number(std::size_t& out) {
    while (pos < bytes.size()) {
      if (bytes[pos] == '#') {
        while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
      } else if (std::isspace(bytes[pos])) {
        ++pos;
      } else {
        break;
      }
    }
    if (pos >= bytes.size() || !std::isdigit(bytes[pos])) return false;
    out = 0;
    while (pos < bytes.size() && std::isdigit(bytes[pos])) out = out * 10 + (bytes[pos++] - '0');
    return true;
  }
};

Image decode_pnm(const std::vector<std::uint8_t>& bytes, const fs::path& path) {
  const std::size_t channels = bytes[1] == '6' ? 3 : 1;
  PnmCursor cur{bytes, 2};
  std::size_t w = 0, h = 0, maxval = 0;
  if (!cur.next_number(w) || !cur.next_number(h) || !cur.next_number(maxval) || w == 0 || h == 0) {
    fail(ErrorKind::Data, "malformed netpbm header in " + path.string());
  }
  if (maxval != 255) fail(ErrorKind::Data, "unsupported netpbm maxval in " + path.string() + " (need 255)");
  const std::size_t start = cur.pos + 1;  // single whitespace after maxval
  if (start + w * h * channels > bytes.size()) fail(ErrorKind::Data, "truncated image data in " + path.string());
  Image img(h, w, channels);
  std::copy(bytes.begin() + static_cast<std::ptrdiff_t>(start),
            bytes.begin() + static_cast<std::ptrdiff_t>(start + img.pixels.size()), img.pixels.begin());
  return img;
}

Image decode_png(const std::vector<std::uint8_t>& bytes, const fs::path& path) {
  png_image png{};
  png.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_memory(&png, bytes.data(), bytes.size())) {
    fail(ErrorKind::Data, "PNG decode failed for " + path.string() + ": " + png.message);
  }
  const bool color = (png.format & PNG_FORMAT_FLAG_COLOR) != 0;
  png.format = color ? PNG_FORMAT_RGB : PNG_FORMAT_GRAY;
  Image img(png.height, png.width, color ? 3 : 1);
  if (!png_image_finish_read(&png, nullptr, img.pixels.data(), 0, nullptr)) {
    const std::string msg = png.message;
    png_image_free(&png);
    fail(ErrorKind::Data, "PNG decode failed for " + path.string() + ": " + msg);
  }
  return img;
}

std::string lower_extension(const fs::path& path) {
  std::string ext = path.extension().string();
  for (char& c : ext) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return ext;
}

}  // namespace

const char* to_string(Split split) {
  switch (split) {
    case Split::Train: return "train";
    case Split::Val: return "val";
    case Split::Test: return "test";
  }
  return "train";
}

Split parse_split(const std::string& text) {
  if (text == "train") return Split::Train;
  if (text == "val") return Split::Val;
  if (text == "test") return Split::Test;
  fail(ErrorKind::Data, "unknown split '" + text + "' (expected train, val or test)");
}

Image read_image(const fs::path& path) {
  if (!fs::exists(path)) fail(ErrorKind::Data, "missing file " + path.string());
  const auto bytes = read_bytes(path);
  if (bytes.size() >= 2 && bytes[0] == 'P' && (bytes[1] == '6' || bytes[1] == '5')) return decode_pnm(bytes, path);
  if (bytes.size() >= 8 && png_sig_cmp(bytes.data(), 0, 8) == 0) return decode_png(bytes, path);
  fail(ErrorKind::Data, "unrecognized image format in " + path.string());
}

void write_image(const fs::path& path, const Image& image) {
  if (image.channels != 1 && image.channels != 3) {
    fail(ErrorKind::Data, "write_image: unsupported channel count " + std::to_string(image.channels));
  }
  const std::string ext = lower_extension(path);
  if (ext == ".png") {
    png_image png{};
    png.version = PNG_IMAGE_VERSION;
    png.width = static_cast<png_uint_32>(image.width);
    png.height = static_cast<png_uint_32>(image.height);
    png.format = image.channels == 3 ? PNG_FORMAT_RGB : PNG_FORMAT_GRAY;
    if (!png_image_write_to_file(&png, path.c_str(), 0, image.pixels.data(), 0, nullptr)) {
      fail(ErrorKind::Io, "cannot write " + path.string() + ": " + png.message);
    }
    return;
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(ErrorKind::Io, "cannot write " + path.string());
  out << (image.channels == 3 ? "P6" : "P5") << '\n' << image.width << ' ' << image.height << "\n255\n";
  out.write(reinterpret_cast<const char*>(image.pixels.data()), static_cast<std::streamsize>(image.pixels.size()));
  if (!out) fail(ErrorKind::Io, "cannot write " + path.string());
}

std::vector<ManifestEntry> read_manifest(const fs::path& manifest) {
  std::ifstream in(manifest);
  if (!in) fail(ErrorKind::Data, "missing file " + manifest.string());
  const fs::path base = manifest.parent_path();
  std::vector<ManifestEntry> entries;
  std::string line;
  for (std::size_t lineno = 1; std::getline(in, line); ++lineno) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line[0] == '#') continue;
    std::vector<std::string> fields;
    std::stringstream ss(line);
    for (std::string f; std::getline(ss, f, '\t');) fields.push_back(f);
    if (fields.size() != 3 || fields[0].empty()) {
      fail(ErrorKind::Data, manifest.string() + ":" + std::to_string(lineno) +
                                ": expected 3 tab-separated fields (path, source, split)");
    }
    ManifestEntry e;
    e.path = fs::path(fields[0]).is_absolute() ? fs::path(fields[0]) : base / fields[0];
    e.source = fields[1];
    try {
      e.split = parse_split(fields[2]);
    } catch (const Error& err) {
      fail(ErrorKind::Data, manifest.string() + ":" + std::to_string(lineno) + ": " + err.what());
    }
    entries.push_back(std::move(e));
  }
  return entries;
}

void write_manifest(const fs::path& manifest, const std::vector<ManifestEntry>& entries) {
  std::ofstream out(manifest, std::ios::binary);
  if (!out) fail(ErrorKind::Io, "cannot write " + manifest.string());
  out << "# path\tsource\tsplit\n";
  const fs::path base = manifest.parent_path();
  for (const auto& e : entries) {
    const fs::path rel = e.path.is_absolute() ? e.path.lexically_relative(base) : e.path;
    out << rel.generic_string() << '\t' << e.source << '\t' << to_string(e.split) << '\n';
  }
  if (!out) fail(ErrorKind::Io, "cannot write " + manifest.string());
}

std::vector<ImageRecord> load_dataset(const fs::path& manifest) {
  std::vector<ImageRecord> records;
  for (const auto& e : read_manifest(manifest)) {
    ImageRecord rec;
    rec.id = e.path.stem().string();
    rec.path = e.path;
    rec.source = e.source;
    rec.split = e.split;
    rec.image = read_image(e.path);
    if (rec.image.channels != 3) {
      fail(ErrorKind::Data, "wrong channel count in " + e.path.string() + ": expected 3, got " +
                                std::to_string(rec.image.channels));
    }
    records.push_back(std::move(rec));
  }
  return records;
}

Image downsample(const Image& image, std::size_t factor) {
  if (factor < 1 || image.height % factor != 0 || image.width % factor != 0) {
    fail(ErrorKind::Data, "downsample: " + std::to_string(image.height) + "x" + std::to_string(image.width) +
                              " is not divisible by " + std::to_string(factor));
  }
  Image out(image.height / factor, image.width / factor, image.channels);
  const std::size_t area = factor * factor;
  for (std::size_t r = 0; r < out.height; ++r)
    for (std::size_t c = 0; c < out.width; ++c)
      for (std::size_t ch = 0; ch < image.channels; ++ch) {
        std::size_t sum = 0;
        for (std::size_t dr = 0; dr < factor; ++dr)
          for (std::size_t dc = 0; dc < factor; ++dc) sum += image.at(r * factor + dr, c * factor + dc, ch);
        out.at(r, c, ch) = static_cast<std::uint8_t>((2 * sum + area) / (2 * area));
      }
  return out;
}

}  // namespace flowgrain
