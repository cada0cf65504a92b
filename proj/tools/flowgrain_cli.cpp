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

// flowgrain command-line entry point. Talks to the library only through the
// C API. Exit codes: 0 success, 2 config error, 3 data error, 4 numerical
// failure; failures print one "flowgrain: error[<kind>]: <message>" line.

#include <CLI11.hpp>
#include <json.hpp>

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "flowgrain/flowgrain.h"

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

namespace {

// Thrown to unwind with a library status; the message is fg_last_error().
struct Failure {
  fg_status status;
  std::string message;
};

void check(fg_status s) {
  if (s != FG_OK) throw Failure{s, fg_last_error()};
}

[[noreturn]] void usage_error(const std::string& message) { throw Failure{FG_ERR_CONFIG, message}; }

int exit_code(fg_status s) {
  switch (s) {
    case FG_OK: return 0;
    case FG_ERR_CONFIG:
    case FG_ERR_INVALID_ARGUMENT: return 2;
    case FG_ERR_NUMERICAL: return 4;
    default: return 3;
  }
}

struct ConfigDeleter {
  void operator()(fg_config* c) const { fg_config_destroy(c); }
};
struct FlowDeleter {
  void operator()(fg_flow* f) const { fg_flow_destroy(f); }
};
struct ExtractorDeleter {
  void operator()(fg_extractor* e) const { fg_extractor_destroy(e); }
};
using ConfigPtr = std::unique_ptr<fg_config, ConfigDeleter>;
using FlowPtr = std::unique_ptr<fg_flow, FlowDeleter>;
using ExtractorPtr = std::unique_ptr<fg_extractor, ExtractorDeleter>;

// Options shared by every subcommand.
struct Common {
  std::string config_file;
  std::vector<std::string> sets;
  std::string out;
  bool quiet = false;
};

void add_common(CLI::App* cmd, Common& c) {
  cmd->add_option("--config", c.config_file, "Config file with 'section.key = value' lines");
  cmd->add_option("--set", c.sets, "Config override 'key=value' (repeatable)");
  cmd->add_option("--out", c.out, "Output directory")->required();
  cmd->add_flag("--quiet", c.quiet, "Suppress progress output");
}

ConfigPtr build_config(const Common& c, const std::vector<std::pair<std::string, std::string>>& extra) {
  fg_config* raw = nullptr;
  check(fg_config_create(&raw));
  ConfigPtr cfg(raw);
  if (!c.config_file.empty()) check(fg_config_load_file(cfg.get(), c.config_file.c_str()));
  for (const auto& s : c.sets) {
    const auto eq = s.find('=');
    if (eq == std::string::npos || eq == 0) usage_error("--set expects key=value, got '" + s + "'");
    check(fg_config_set(cfg.get(), s.substr(0, eq).c_str(), s.substr(eq + 1).c_str()));
  }
  for (const auto& [k, v] : extra) check(fg_config_set(cfg.get(), k.c_str(), v.c_str()));
  check(fg_config_validate(cfg.get()));
  return cfg;
}

std::string snapshot_text(const fg_config* cfg) {
  size_t len = 0;
  check(fg_config_snapshot(cfg, nullptr, 0, &len));
  std::string text(len + 1, '\0');
  check(fg_config_snapshot(cfg, text.data(), text.size(), &len));
  text.resize(len);
  return text;
}

std::string config_value(const fg_config* cfg, const std::string& key) {
  size_t len = 0;
  check(fg_config_get(cfg, key.c_str(), nullptr, 0, &len));
  std::string v(len + 1, '\0');
  check(fg_config_get(cfg, key.c_str(), v.data(), v.size(), &len));
  v.resize(len);
  return v;
}

json config_json(const fg_config* cfg) {
  json out = json::object();
  std::istringstream in(snapshot_text(cfg));
  std::string line;
  while (std::getline(in, line)) {
    const auto eq = line.find(" = ");
    if (eq != std::string::npos) out[line.substr(0, eq)] = line.substr(eq + 3);
  }
  return out;
}

void make_dir(const std::string& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw Failure{FG_ERR_IO, "cannot create output directory " + dir};
}

// Provenance record written next to every run's outputs.
class Provenance {
 public:
  Provenance(std::string command, std::vector<std::string> argv)
      : start_(std::chrono::steady_clock::now()) {
    record_["command"] = std::move(command);
    record_["version"] = fg_version();
    record_["argv"] = std::move(argv);
  }
  json& operator[](const char* key) { return record_[key]; }
  void write(const std::string& out_dir) {
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
    record_["timings"] = {{"total_seconds", secs}};
    std::ofstream out(fs::path(out_dir) / "run.json", std::ios::trunc);
    out << record_.dump(2) << '\n';
    if (!out) throw Failure{FG_ERR_IO, "cannot write " + (fs::path(out_dir) / "run.json").string()};
  }

 private:
  std::chrono::steady_clock::time_point start_;
  json record_;
};

void on_epoch(size_t epoch, double train_nll, double val_nll, void* user) {
  if (*static_cast<bool*>(user)) return;
  std::fprintf(stderr, "epoch %zu  train_nll %.6g  val_nll %.6g\n", epoch, train_nll, val_nll);
}

void on_eval(size_t step, double train_mse, double val_mse, void* user) {
  if (*static_cast<bool*>(user)) return;
  std::fprintf(stderr, "step %zu  train_mse %.6g  val_mse %.6g\n", step, train_mse, val_mse);
}

FlowPtr load_flow(const std::string& path) {
  fg_flow* raw = nullptr;
  check(fg_flow_load(path.c_str(), &raw));
  return FlowPtr(raw);
}

}  // namespace

int main(int argc, char** argv) {
  const std::vector<std::string> args(argv, argv + argc);
  CLI::App app{"flowgrain: normalizing-flow quality heatmaps for image corpora"};
  app.set_version_flag("--version", std::string(fg_version()));
  app.require_subcommand(1);

  Common common;
  std::optional<std::uint64_t> seed;
  std::string manifest, flow_path, extractor_path, crops_path, grids_path;
  std::optional<std::size_t> stride;
  std::optional<double> bin_width;

  auto* synth = app.add_subcommand("synth", "Generate the deterministic synthetic corpus");
  add_common(synth, common);
  synth->add_option("--seed", seed, "Overrides synth.seed");

  auto* train = app.add_subcommand("train-flow", "Train a flow on random crops of a manifest's images");
  add_common(train, common);
  train->add_option("--manifest", manifest, "Dataset manifest (TSV)")->required();
  train->add_option("--seed", seed, "Overrides train.seed");

  auto* score = app.add_subcommand("score", "Log-likelihood of listed crops");
  add_common(score, common);
  score->add_option("--flow", flow_path, "Flow checkpoint")->required();
  score->add_option("--crops", crops_path, "Crop list: path<TAB>top<TAB>left per line")->required();

  auto* heatmap = app.add_subcommand("heatmap", "Sliding-window LL heatmaps, overlays and quality report");
  add_common(heatmap, common);
  heatmap->add_option("--flow", flow_path, "Flow checkpoint")->required();
  heatmap->add_option("--manifest", manifest, "Dataset manifest (TSV)")->required();
  heatmap->add_option("--stride", stride, "Overrides heatmap.stride");

  auto* bins = app.add_subcommand("bins", "Re-bin saved heatmap grids");
  add_common(bins, common);
  bins->add_option("--grids", grids_path, "grids.fgck written by heatmap")->required();
  bins->add_option("--bin-width", bin_width, "Overrides heatmap.bin_width");

  auto* train_ex = app.add_subcommand("train-extractor", "Train the CNN regressor on flow log-likelihoods");
  add_common(train_ex, common);
  train_ex->add_option("--flow", flow_path, "Teacher flow checkpoint")->required();
  train_ex->add_option("--manifest", manifest, "Dataset manifest (TSV)")->required();
  train_ex->add_option("--seed", seed, "Overrides extractor.seed");

  auto* embed = app.add_subcommand("embed", "Export the extractor embedding of lattice crops");
  add_common(embed, common);
  embed->add_option("--extractor", extractor_path, "Extractor checkpoint")->required();
  embed->add_option("--flow", flow_path, "Optional teacher flow for the teacher_ll column");
  embed->add_option("--manifest", manifest, "Dataset manifest (TSV)")->required();
  embed->add_option("--stride", stride, "Overrides embed.stride");

  try {
    try {
      app.parse(argc, argv);
    } catch (const CLI::CallForHelp&) {
      std::cout << app.help();
      return 0;
    } catch (const CLI::CallForAllHelp&) {
      std::cout << app.help("", CLI::AppFormatMode::All);
      return 0;
    } catch (const CLI::CallForVersion&) {
      std::cout << fg_version() << '\n';
      return 0;
    } catch (const CLI::ParseError& e) {
      usage_error(e.what());
    }

    const CLI::App* cmd = app.get_subcommands().front();
    Provenance prov(cmd->get_name(), args);
    std::vector<std::pair<std::string, std::string>> extra;
    auto opt = [&](const char* key, const auto& v) {
      if (v) extra.emplace_back(key, std::to_string(*v));
    };
    if (cmd == synth) opt("synth.seed", seed);
    if (cmd == train) opt("train.seed", seed);
    if (cmd == train_ex) opt("extractor.seed", seed);
    if (cmd == heatmap) opt("heatmap.stride", stride);
    if (cmd == embed) opt("embed.stride", stride);
    if (cmd == bins && bin_width) {
      std::ostringstream s;
      s.precision(17);
      s << *bin_width;
      extra.emplace_back("heatmap.bin_width", s.str());
    }
    const ConfigPtr cfg = build_config(common, extra);
    make_dir(common.out);
    prov["config"] = config_json(cfg.get());
    const fs::path out = common.out;
    json inputs = json::object(), outputs = json::object();

    if (cmd == synth) {
      size_t n = 0;
      check(fg_synth_generate(cfg.get(), common.out.c_str(), &n));
      prov["seed"] = std::stoull(config_value(cfg.get(), "synth.seed"));
      outputs = {{"manifest", (out / "manifest.tsv").string()}, {"images", n}};
    } else if (cmd == train) {
      fg_flow* raw = nullptr;
      check(fg_flow_train(cfg.get(), manifest.c_str(), on_epoch, &common.quiet, &raw));
      FlowPtr flow(raw);
      check(fg_flow_save(flow.get(), (out / "flow.fgck").string().c_str()));
      fg_flow_info info{};
      check(fg_flow_get_info(flow.get(), &info));
      prov["seed"] = std::stoull(config_value(cfg.get(), "train.seed"));
      inputs = {{"manifest", manifest}};
      outputs = {{"checkpoint", (out / "flow.fgck").string()},
                 {"epochs", info.epochs},
                 {"best_epoch", info.best_epoch},
                 {"best_val_nll", info.best_val_nll},
                 {"input_dim", info.input_dim}};
    } else if (cmd == score) {
      const FlowPtr flow = load_flow(flow_path);
      size_t n = 0;
      check(fg_flow_score_list(flow.get(), crops_path.c_str(), (out / "scores.csv").string().c_str(), &n));
      inputs = {{"flow", flow_path}, {"crops", crops_path}};
      outputs = {{"scores", (out / "scores.csv").string()}, {"crops", n}};
    } else if (cmd == heatmap) {
      const FlowPtr flow = load_flow(flow_path);
      fg_heatmap_summary s{};
      check(fg_heatmap_run(flow.get(), cfg.get(), manifest.c_str(), common.out.c_str(), &s));
      inputs = {{"flow", flow_path}, {"manifest", manifest}};
      outputs = {{"report", (out / "report.csv").string()}, {"grids", (out / "grids.fgck").string()},
                 {"images", s.images}, {"cells", s.cells}, {"bins", s.bins},
                 {"scale_lo", s.scale_lo}, {"scale_hi", s.scale_hi}};
      if (!common.quiet) std::fprintf(stderr, "%zu images, %zu cells, %zu bins\n", s.images, s.cells, s.bins);
    } else if (cmd == bins) {
      fg_heatmap_summary s{};
      check(fg_bins_run(cfg.get(), grids_path.c_str(), common.out.c_str(), &s));
      inputs = {{"grids", grids_path}};
      outputs = {{"report", (out / "report.csv").string()}, {"images", s.images}, {"bins", s.bins}};
    } else if (cmd == train_ex) {
      const FlowPtr flow = load_flow(flow_path);
      fg_extractor* raw = nullptr;
      check(fg_extractor_train(cfg.get(), flow.get(), manifest.c_str(), on_eval, &common.quiet, &raw));
      ExtractorPtr ex(raw);
      check(fg_extractor_save(ex.get(), (out / "extractor.fgck").string().c_str()));
      size_t crop = 0, dim = 0;
      check(fg_extractor_get_info(ex.get(), &crop, &dim));
      prov["seed"] = std::stoull(config_value(cfg.get(), "extractor.seed"));
      inputs = {{"flow", flow_path}, {"manifest", manifest}};
      outputs = {{"checkpoint", (out / "extractor.fgck").string()}, {"crop_size", crop}, {"embedding_dim", dim}};
    } else if (cmd == embed) {
      fg_extractor* raw = nullptr;
      check(fg_extractor_load(extractor_path.c_str(), &raw));
      ExtractorPtr ex(raw);
      FlowPtr flow;
      if (!flow_path.empty()) flow = load_flow(flow_path);
      size_t n = 0;
      check(fg_embed_run(ex.get(), flow.get(), cfg.get(), manifest.c_str(), (out / "scatter.csv").string().c_str(),
                         &n));
      inputs = {{"extractor", extractor_path}, {"manifest", manifest}};
      if (flow) inputs["flow"] = flow_path;
      outputs = {{"scatter", (out / "scatter.csv").string()}, {"points", n}};
    }
    prov["inputs"] = inputs;
    prov["outputs"] = outputs;
    prov.write(common.out);
    return 0;
  } catch (const Failure& f) {
    std::string msg = f.message;
    for (char& c : msg)
      if (c == '\n') c = ' ';
    std::fprintf(stderr, "flowgrain: error[%s]: %s\n", fg_status_name(f.status), msg.c_str());
    return exit_code(f.status);
  }
}
