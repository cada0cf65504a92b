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

#include "container.hpp"

#include <zlib.h>

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include "errors.hpp"

namespace flowgrain {
namespace {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

constexpr char kMagic[4] = {'F', 'G', 'C', 'K'};

class Writer {
 public:
  template <class T>
  void put(T v) {
    const auto* p = reinterpret_cast<const std::uint8_t*>(&v);
    bytes.insert(bytes.end(), p, p + sizeof(T));
  }
  void put_raw(const void* data, std::size_t n) {
    const auto* p = static_cast<const std::uint8_t*>(data);
    bytes.insert(bytes.end(), p, p + n);
  }
  std::vector<std::uint8_t> bytes;
};

class Reader {
 public:
  Reader(const std::vector<std::uint8_t>& b, std::size_t end, const std::string& origin)
      : bytes_(b), end_(end), origin_(origin) {}

  template <class T>
  T get() {
    T v;
    need(sizeof(T));
    std::memcpy(&v, bytes_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return v;
  }
  std::string get_string(std::uint64_t n) {
    need(n);
    std::string s(reinterpret_cast<const char*>(bytes_.data() + pos_), n);
    pos_ += n;
    return s;
  }
  void get_doubles(std::vector<double>& out, std::uint64_t n) {
    if (n > (end_ - pos_) / sizeof(double)) truncated();
    out.resize(n);
    std::memcpy(out.data(), bytes_.data() + pos_, n * sizeof(double));
    pos_ += n * sizeof(double);
  }
  std::size_t pos() const { return pos_; }

 private:
  void need(std::uint64_t n) {
    if (n > end_ - pos_) truncated();
  }
  [[noreturn]] void truncated() const { fail(ErrorKind::CorruptFile, origin_ + ": truncated checkpoint"); }

  const std::vector<std::uint8_t>& bytes_;
  std::size_t end_;
  std::size_t pos_ = 0;
  const std::string& origin_;
};

std::uint32_t crc_of(const std::uint8_t* data, std::size_t n) {
  uLong crc = crc32(0L, Z_NULL, 0);
  // zlib takes uInt lengths; feed in chunks for large payloads.
  while (n > 0) {
    const uInt chunk = static_cast<uInt>(std::min<std::size_t>(n, 1u << 30));
    crc = crc32(crc, data, chunk);
    data += chunk;
    n -= chunk;
  }
  return static_cast<std::uint32_t>(crc);
}

}  // namespace

const Tensor& Container::array(const std::string& name) const {
  for (const auto& [n, t] : arrays)
    if (n == name) return t;
  fail(ErrorKind::CorruptFile, "checkpoint is missing array '" + name + "'");
}

bool Container::has_array(const std::string& name) const {
  for (const auto& [n, t] : arrays)
    if (n == name) return true;
  return false;
}

std::vector<std::uint8_t> encode_container(const Container& c) {
  Writer w;
  w.put_raw(kMagic, 4);
  w.put<std::uint32_t>(c.version);
  const std::string text = c.config.to_text();
  w.put<std::uint64_t>(text.size());
  w.put_raw(text.data(), text.size());
  w.put<std::uint32_t>(static_cast<std::uint32_t>(c.arrays.size()));
  for (const auto& [name, t] : c.arrays) {
    w.put<std::uint32_t>(static_cast<std::uint32_t>(name.size()));
    w.put_raw(name.data(), name.size());
    w.put<std::uint32_t>(static_cast<std::uint32_t>(t.shape.size()));
    for (auto e : t.shape) w.put<std::uint64_t>(e);
    w.put_raw(t.data.data(), t.data.size() * sizeof(double));
  }
  w.put<std::uint32_t>(crc_of(w.bytes.data(), w.bytes.size()));
  return std::move(w.bytes);
}

Container decode_container(const std::vector<std::uint8_t>& bytes, const std::string& origin) {
  if (bytes.size() < 4 || std::memcmp(bytes.data(), kMagic, 4) != 0) {
    fail(ErrorKind::CorruptFile, origin + ": bad magic bytes (not a flowgrain checkpoint)");
  }
  if (bytes.size() < 12) fail(ErrorKind::CorruptFile, origin + ": truncated checkpoint");
  std::uint32_t version = 0;
  std::memcpy(&version, bytes.data() + 4, 4);
  if (version != kContainerVersion) {
    fail(ErrorKind::Unsupported, origin + ": checkpoint format version " + std::to_string(version) +
                                     " is not supported (expected " + std::to_string(kContainerVersion) + ")");
  }
  const std::size_t body = bytes.size() - 4;
  std::uint32_t stored = 0;
  std::memcpy(&stored, bytes.data() + body, 4);
  if (crc_of(bytes.data(), body) != stored) {
    fail(ErrorKind::CorruptFile, origin + ": checksum mismatch (file is truncated or corrupted)");
  }

  Reader r(bytes, body, origin);
  r.get_string(4);
  Container c;
  c.version = r.get<std::uint32_t>();
  const auto text_len = r.get<std::uint64_t>();
  c.config = KeyValues::parse(r.get_string(text_len), origin);
  const auto count = r.get<std::uint32_t>();
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto name_len = r.get<std::uint32_t>();
    std::string name = r.get_string(name_len);
    const auto rank = r.get<std::uint32_t>();
    if (rank > 8) fail(ErrorKind::CorruptFile, origin + ": implausible rank for array '" + name + "'");
    Tensor t;
    t.shape.resize(rank);
    std::uint64_t total = 1;
    for (auto& e : t.shape) {
      const auto extent = r.get<std::uint64_t>();
      if (extent != 0 && total > (std::uint64_t{1} << 40) / extent) {
        fail(ErrorKind::CorruptFile, origin + ": implausible extents for array '" + name + "'");
      }
      e = extent;
      total *= extent;
    }
    r.get_doubles(t.data, total);
    c.arrays.emplace_back(std::move(name), std::move(t));
  }
  if (r.pos() != body) fail(ErrorKind::CorruptFile, origin + ": unexpected trailing bytes");
  return c;
}

void write_container(const std::filesystem::path& path, const Container& c) {
  const auto bytes = encode_container(c);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(ErrorKind::Io, "cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) fail(ErrorKind::Io, "cannot write " + path.string());
}

Container read_container(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::Io, "cannot open checkpoint " + path.string());
  const std::vector<std::uint8_t> bytes{std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
  return decode_container(bytes, path.string());
}

}  // namespace flowgrain
