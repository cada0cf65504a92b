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

#include "runconfig.hpp"

#include <algorithm>
#include <set>
#include <sstream>

#include "errors.hpp"

namespace flowgrain {
namespace {

void write_heatmap_options(const HeatmapOptions& h, KeyValues& kv) {
  kv.set("heatmap.stride", std::uint64_t{h.stride});
  kv.set("heatmap.bin_width", h.bin_width);
  kv.set("heatmap.alpha", h.alpha);
  kv.set("heatmap.split", h.split);
  kv.set("heatmap.overlays", h.overlays);
  kv.set("heatmap.html", h.html);
}

HeatmapOptions read_heatmap_options(const KeyValues& kv, HeatmapOptions h) {
  if (kv.has("heatmap.stride")) h.stride = kv.get_u64("heatmap.stride");
  if (kv.has("heatmap.bin_width")) h.bin_width = kv.get_double("heatmap.bin_width");
  if (kv.has("heatmap.alpha")) h.alpha = kv.get_double("heatmap.alpha");
  if (kv.has("heatmap.split")) h.split = kv.get("heatmap.split");
  if (kv.has("heatmap.overlays")) h.overlays = kv.get_bool("heatmap.overlays");
  if (kv.has("heatmap.html")) h.html = kv.get_bool("heatmap.html");
  return h;
}

void write_embed_options(const EmbedOptions& e, KeyValues& kv) {
  kv.set("embed.stride", std::uint64_t{e.stride});
  kv.set("embed.split", e.split);
}

EmbedOptions read_embed_options(const KeyValues& kv, EmbedOptions e) {
  if (kv.has("embed.stride")) e.stride = kv.get_u64("embed.stride");
  if (kv.has("embed.split")) e.split = kv.get("embed.split");
  return e;
}

bool valid_split_filter(const std::string& s) { return s == "all" || s == "train" || s == "val" || s == "test"; }

// Applies one key; throws on a malformed value.
void apply_key(RunConfig& rc, const KeyValues& one) {
  rc.synth = read_synth_config(one, "synth.", rc.synth);
  rc.train = read_train_config(one, "train.", rc.train);
  rc.flow = read_flow_config(one, "flow.", rc.flow);
  rc.extractor = read_extractor_config(one, "extractor.", rc.extractor);
  rc.heatmap = read_heatmap_options(one, rc.heatmap);
  rc.embed = read_embed_options(one, rc.embed);
}

}  // namespace

std::string format_synth_groups(const std::vector<SynthGroup>& groups) {
  std::string out;
  for (std::size_t i = 0; i < groups.size(); ++i) {
    out += (i ? "," : "") + groups[i].source + ":" + std::to_string(groups[i].count) + ":" + to_string(groups[i].split);
  }
  return out;
}

std::vector<SynthGroup> parse_synth_groups(const std::string& text) {
  std::vector<SynthGroup> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    const auto a = item.find(':'), b = item.rfind(':');
    if (a == std::string::npos || a == b) {
      fail(ErrorKind::Config, "synth.groups: '" + item + "' is not source:count:split");
    }
    SynthGroup g;
    g.source = item.substr(0, a);
    g.count = parse_u64(item.substr(a + 1, b - a - 1), "synth.groups count");
    g.split = parse_split(item.substr(b + 1));
    out.push_back(std::move(g));
  }
  return out;
}

void write_synth_config(const SynthConfig& s, KeyValues& kv, const std::string& p) {
  kv.set(p + "seed", s.seed);
  kv.set(p + "height", std::uint64_t{s.height});
  kv.set(p + "width", std::uint64_t{s.width});
  kv.set(p + "groups", format_synth_groups(s.groups));
  kv.set(p + "contamination_fraction", s.contamination_fraction);
  kv.set(p + "contaminants_min", std::uint64_t{s.contaminants_min});
  kv.set(p + "contaminants_max", std::uint64_t{s.contaminants_max});
  kv.set(p + "leaf_rate", s.leaf_rate);
  kv.set(p + "stick_rate", s.stick_rate);
  kv.set(p + "broken_rate", s.broken_rate);
  kv.set(p + "chaff_rate", s.chaff_rate);
  kv.set(p + "hue_patch_rate", s.hue_patch_rate);
  kv.set(p + "object_scale", s.object_scale);
  kv.set(p + "kernel_density", s.kernel_density);
  kv.set(p + "image_format", s.image_format);
  kv.set(p + "mask_format", s.mask_format);
}

SynthConfig read_synth_config(const KeyValues& kv, const std::string& p, SynthConfig s) {
  auto size = [&](const char* k, std::size_t& out) {
    if (kv.has(p + k)) out = kv.get_u64(p + k);
  };
  auto real = [&](const char* k, double& out) {
    if (kv.has(p + k)) out = kv.get_double(p + k);
  };
  if (kv.has(p + "seed")) s.seed = kv.get_u64(p + "seed");
  size("height", s.height);
  size("width", s.width);
  if (kv.has(p + "groups")) s.groups = parse_synth_groups(kv.get(p + "groups"));
  real("contamination_fraction", s.contamination_fraction);
  size("contaminants_min", s.contaminants_min);
  size("contaminants_max", s.contaminants_max);
  real("leaf_rate", s.leaf_rate);
  real("stick_rate", s.stick_rate);
  real("broken_rate", s.broken_rate);
  real("chaff_rate", s.chaff_rate);
  real("hue_patch_rate", s.hue_patch_rate);
  real("object_scale", s.object_scale);
  real("kernel_density", s.kernel_density);
  if (kv.has(p + "image_format")) s.image_format = kv.get(p + "image_format");
  if (kv.has(p + "mask_format")) s.mask_format = kv.get(p + "mask_format");
  return s;
}

KeyValues RunConfig::to_keyvalues() const {
  KeyValues kv;
  write_synth_config(synth, kv);
  write_train_config(train, kv);
  write_flow_config(flow, kv);
  write_extractor_config(extractor, kv);
  write_heatmap_options(heatmap, kv);
  write_embed_options(embed, kv);
  return kv;
}

std::vector<std::string> RunConfig::known_keys() {
  std::vector<std::string> keys;
  const KeyValues defaults = RunConfig{}.to_keyvalues();
  for (const auto& [k, v] : defaults.entries()) keys.push_back(k);
  return keys;
}

RunConfig RunConfig::from_keyvalues(const KeyValues& kv) {
  const auto known = known_keys();
  const std::set<std::string> known_set(known.begin(), known.end());
  std::vector<std::string> problems;
  RunConfig rc;
  // The flow kind resets kind-specific defaults, so it is applied first.
  if (auto kind = kv.find("flow.kind")) {
    KeyValues one;
    one.set("flow.kind", *kind);
    try {
      apply_key(rc, one);
    } catch (const Error& e) {
      problems.push_back(e.what());
    }
  }
  for (const auto& [key, value] : kv.entries()) {
    if (!known_set.count(key)) {
      problems.push_back("unknown config key '" + key + "'");
      continue;
    }
    if (key == "flow.kind") continue;
    KeyValues one;
    one.set(key, value);
    try {
      apply_key(rc, one);
    } catch (const Error& e) {
      problems.push_back(e.what());
    }
  }
  auto check = [&](auto&& validate) {
    try {
      validate();
    } catch (const Error& e) {
      problems.push_back(e.what());
    }
  };
  check([&] { rc.synth.validate(); });
  check([&] { rc.train.validate(); });
  check([&] {
    // input_dim is derived from the data at training time.
    FlowConfig f = rc.flow;
    if (f.input_dim == 0) f.input_dim = 1;
    f.validate();
  });
  check([&] { rc.extractor.validate(); });
  if (rc.heatmap.stride < 1) problems.push_back("heatmap.stride must be >= 1");
  if (!(rc.heatmap.bin_width > 0.0)) problems.push_back("heatmap.bin_width must be > 0");
  if (!(rc.heatmap.alpha >= 0.0 && rc.heatmap.alpha <= 1.0)) problems.push_back("heatmap.alpha must be in [0, 1]");
  if (!valid_split_filter(rc.heatmap.split)) problems.push_back("heatmap.split must be all, train, val or test");
  if (!valid_split_filter(rc.embed.split)) problems.push_back("embed.split must be all, train, val or test");
  if (!problems.empty()) {
    std::string msg = std::to_string(problems.size()) + " config problem(s):";
    for (const auto& p : problems) msg += " [" + p + "]";
    fail(ErrorKind::Config, msg);
  }
  return rc;
}

KeyValues merge_keyvalues(const KeyValues& base, const KeyValues& overrides) {
  KeyValues out = base;
  for (const auto& [k, v] : overrides.entries()) out.set(k, v);
  return out;
}

}  // namespace flowgrain
