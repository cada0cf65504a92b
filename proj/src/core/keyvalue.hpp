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

#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace flowgrain {

/// Ordered flat `key = value` text, the structured-text format shared by
/// run configs and checkpoint headers. Later assignments to a key replace
/// earlier ones in place.
class KeyValues {
 public:
  /// Parses `key = value` lines; '#' starts a comment line. Malformed lines
  /// raise ErrorKind::Config naming `origin` and the line number.
  static KeyValues parse(const std::string& text, const std::string& origin = "config");

  void set(const std::string& key, std::string value);
  void set(const std::string& key, const char* value) { set(key, std::string(value)); }
  void set(const std::string& key, double value);
  void set(const std::string& key, std::uint64_t value);
  void set(const std::string& key, bool value);

  bool has(const std::string& key) const;
  std::optional<std::string> find(const std::string& key) const;
  /// Typed accessors raise ErrorKind::Config naming the key on a missing or
  /// unparsable value.
  std::string get(const std::string& key) const;
  double get_double(const std::string& key) const;
  std::uint64_t get_u64(const std::string& key) const;
  bool get_bool(const std::string& key) const;

  const std::vector<std::pair<std::string, std::string>>& entries() const { return entries_; }
  std::string to_text() const;

 private:
  std::vector<std::pair<std::string, std::string>> entries_;
};

/// Shortest text that parses back to exactly `v`.
std::string format_double(double v);
double parse_double(const std::string& text, const std::string& what);
std::uint64_t parse_u64(const std::string& text, const std::string& what);
bool parse_bool(const std::string& text, const std::string& what);

}  // namespace flowgrain
