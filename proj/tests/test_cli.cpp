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

// Drives the installed command-line binary as a subprocess.

#include <doctest.h>
#include <sys/wait.h>

#include <cstdlib>
#include <fstream>
#include <json.hpp>
#include <map>
#include <sstream>
#include <string>

#include "small_config.hpp"
#include "temp_dir.hpp"

namespace fs = std::filesystem;
using flowgrain::testing::TempDir;
using flowgrain::testing::file_bytes;
using flowgrain::testing::file_text;

namespace {

struct RunResult {
  int exit_code = -1;
  std::string err;
};

RunResult run(const TempDir& dir, const std::string& args, const std::string& env = "") {
  const fs::path err = dir / "stderr.txt";
  const std::string cmd = env + (env.empty() ? "" : " ") + "'" + FLOWGRAIN_CLI + "' " + args + " >/dev/null 2>'" +
                          err.string() + "'";
  const int status = std::system(cmd.c_str());
  RunResult r;
  r.exit_code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  r.err = file_text(err);
  return r;
}

std::string write_config(const TempDir& dir) {
  const fs::path p = dir / "small.cfg";
  std::ofstream(p) << kSmallConfig;
  return p.string();
}

// Every file under `root` except run.json, which records wall-clock timings.
std::map<std::string, std::vector<char>> tree_without_runinfo(const fs::path& root) {
  std::map<std::string, std::vector<char>> out;
  for (const auto& e : fs::recursive_directory_iterator(root)) {
    if (!e.is_regular_file() || e.path().filename() == "run.json") continue;
    out[fs::relative(e.path(), root).string()] = file_bytes(e.path());
  }
  return out;
}

std::size_t count_lines(const std::string& s) {
  std::size_t n = 0;
  for (char c : s) n += c == '\n';
  return n;
}

}  // namespace

TEST_CASE("synth is byte-reproducible") {
  TempDir dir("cli_synth");
  const std::string cfg = write_config(dir);
  REQUIRE(run(dir, "synth --quiet --config " + cfg + " --out " + (dir / "a").string()).exit_code == 0);
  REQUIRE(run(dir, "synth --quiet --config " + cfg + " --out " + (dir / "b").string()).exit_code == 0);
  const auto a = tree_without_runinfo(dir / "a");
  CHECK(a.size() > 10);
  CHECK(a == tree_without_runinfo(dir / "b"));
  REQUIRE(run(dir, "synth --quiet --seed 2 --config " + cfg + " --out " + (dir / "c").string()).exit_code == 0);
  CHECK(a != tree_without_runinfo(dir / "c"));
}

TEST_CASE("failures map to exit codes with one-line messages") {
  TempDir dir("cli_err");
  const std::string cfg = write_config(dir);
  const std::string out = " --out " + (dir / "o").string();

  auto r = run(dir, "synth --config " + cfg + " --set flow.n_flowz=3 --set train.crop_sise=5" + out);
  CHECK(r.exit_code == 2);
  CHECK(count_lines(r.err) == 1);
  CHECK(r.err.rfind("flowgrain: error[config]: ", 0) == 0);
  CHECK(r.err.find("flow.n_flowz") != std::string::npos);
  CHECK(r.err.find("train.crop_sise") != std::string::npos);

  CHECK(run(dir, "frobnicate" + out).exit_code == 2);
  CHECK(run(dir, "synth").exit_code == 2);
  CHECK(run(dir, "synth --set novalue" + out).exit_code == 2);

  r = run(dir, "train-flow --quiet --config " + cfg + " --manifest " + (dir / "missing.tsv").string() + out);
  CHECK(r.exit_code == 3);
  CHECK(count_lines(r.err) == 1);

  r = run(dir, "score --flow " + (dir / "missing.fgck").string() + " --crops x" + out);
  CHECK(r.exit_code == 3);
  CHECK(r.err.find("missing.fgck") != std::string::npos);

  REQUIRE(run(dir, "synth --quiet --config " + cfg + " --out " + (dir / "corpus").string()).exit_code == 0);
  r = run(dir, "train-flow --quiet --config " + cfg + " --set train.learning_rate=1e300 --manifest " +
                   (dir / "corpus" / "manifest.tsv").string() + out);
  CHECK(r.exit_code == 4);
  CHECK(r.err.rfind("flowgrain: error[numerical]: ", 0) == 0);
}

TEST_CASE("full pipeline writes every artefact and provenance") {
  TempDir dir("cli_pipe");
  const std::string cfg = " --quiet --config " + write_config(dir);
  const fs::path corpus = dir / "corpus";
  const std::string manifest = " --manifest " + (corpus / "manifest.tsv").string();
  REQUIRE(run(dir, "synth" + cfg + " --out " + corpus.string()).exit_code == 0);
  REQUIRE(run(dir, "train-flow" + cfg + manifest + " --out " + (dir / "flow").string()).exit_code == 0);
  const std::string flow = " --flow " + (dir / "flow" / "flow.fgck").string();

  auto info = nlohmann::json::parse(file_text(dir / "flow" / "run.json"));
  CHECK(info["command"] == "train-flow");
  CHECK(info["seed"] == 1);
  CHECK(info["config"]["train.crop_size"] == "5");
  CHECK(info["outputs"].contains("checkpoint"));
  CHECK(info["timings"]["total_seconds"].get<double>() >= 0.0);
  CHECK(info.contains("version"));
  CHECK(info["argv"].is_array());

  std::ofstream(dir / "crops.tsv") << (corpus / "images" / "s_0000.ppm").string() << "\t3\t4\n";
  REQUIRE(run(dir, "score" + cfg + flow + " --crops " + (dir / "crops.tsv").string() + " --out " +
                       (dir / "score").string())
              .exit_code == 0);
  const std::string scores = file_text(dir / "score" / "scores.csv");
  CHECK(scores.rfind("path,top,left,ll\n", 0) == 0);
  CHECK(count_lines(scores) == 2);

  REQUIRE(run(dir, "heatmap" + cfg + flow + manifest + " --out " + (dir / "hm1").string(), "FLOWGRAIN_THREADS=1")
              .exit_code == 0);
  REQUIRE(run(dir, "heatmap" + cfg + flow + manifest + " --out " + (dir / "hm3").string(), "FLOWGRAIN_THREADS=3")
              .exit_code == 0);
  CHECK(tree_without_runinfo(dir / "hm1") == tree_without_runinfo(dir / "hm3"));
  CHECK(fs::exists(dir / "hm1" / "overlays" / "s_0000_overlay.png"));
  CHECK(fs::exists(dir / "hm1" / "index.html"));
  info = nlohmann::json::parse(file_text(dir / "hm1" / "run.json"));
  CHECK(info["outputs"]["cells"] == 10 * 14 * 19);

  CHECK(run(dir, "heatmap" + cfg + flow + manifest + " --out " + (dir / "bad").string(), "FLOWGRAIN_THREADS=0")
            .exit_code == 2);

  REQUIRE(run(dir, "bins" + cfg + " --grids " + (dir / "hm1" / "grids.fgck").string() + " --out " +
                       (dir / "bins").string())
              .exit_code == 0);
  CHECK(file_bytes(dir / "bins" / "report.csv") == file_bytes(dir / "hm1" / "report.csv"));
  REQUIRE(run(dir, "bins" + cfg + " --bin-width 200 --grids " + (dir / "hm1" / "grids.fgck").string() + " --out " +
                       (dir / "wide").string())
              .exit_code == 0);
  CHECK(nlohmann::json::parse(file_text(dir / "wide" / "run.json"))["outputs"]["bins"] == 1);

  REQUIRE(run(dir, "train-extractor" + cfg + flow + manifest + " --out " + (dir / "ex").string()).exit_code == 0);
  REQUIRE(run(dir, "embed" + cfg + flow + manifest + " --extractor " + (dir / "ex" / "extractor.fgck").string() +
                       " --out " + (dir / "emb").string())
              .exit_code == 0);
  const std::string scatter = file_text(dir / "emb" / "scatter.csv");
  CHECK(scatter.rfind("image_id,row,col,e1,e2,e3,pred_ll,teacher_ll\n", 0) == 0);
  CHECK(count_lines(scatter) == 1 + 10 * 5 * 6);
}

TEST_CASE("full-resolution lattice size") {
  TempDir dir("cli_full");
  const std::string cfg =
      " --quiet --set synth.groups=s:2:train,s:1:test --set train.crop_size=46 --set train.svd_components=8"
      " --set train.svd_fit_samples=200 --set train.val_crops=64 --set train.batch_size=32"
      " --set train.batches_per_epoch=2 --set train.max_epochs=1 --set flow.n_flows=1 --set flow.hidden_width=8"
      " --set heatmap.stride=8 --set heatmap.overlays=false";
  const fs::path corpus = dir / "corpus";
  REQUIRE(run(dir, "synth" + cfg + " --out " + corpus.string()).exit_code == 0);
  const std::string manifest = " --manifest " + (corpus / "manifest.tsv").string();
  REQUIRE(run(dir, "train-flow" + cfg + manifest + " --out " + (dir / "flow").string()).exit_code == 0);
  REQUIRE(run(dir, "heatmap" + cfg + manifest + " --flow " + (dir / "flow" / "flow.fgck").string() + " --out " +
                       (dir / "hm").string())
              .exit_code == 0);
  const auto info = nlohmann::json::parse(file_text(dir / "hm" / "run.json"));
  CHECK(info["outputs"]["cells"] == 3 * 52 * 75);
}
