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

// Exercises the shared library strictly through the public C header.

#include <doctest.h>

#include <cmath>
#include <cstring>
#include <fstream>
#include <string>
#include <thread>
#include <vector>

#include "flowgrain/flowgrain.h"
#include "small_config.hpp"
#include "temp_dir.hpp"

using flowgrain::testing::TempDir;
using flowgrain::testing::file_bytes;

namespace {

fg_config* small_config() {
  fg_config* cfg = nullptr;
  REQUIRE(fg_config_create(&cfg) == FG_OK);
  REQUIRE(fg_config_parse(cfg, kSmallConfig) == FG_OK);
  return cfg;
}

std::string last_error() { return fg_last_error(); }

}  // namespace

TEST_CASE("status names, version and argument checks") {
  CHECK(std::string(fg_version()) == FLOWGRAIN_TEST_VERSION);
  CHECK(std::string(fg_status_name(FG_OK)) == "ok");
  CHECK(std::string(fg_status_name(FG_ERR_NUMERICAL)) == "numerical");
  CHECK(std::string(fg_status_name(FG_ERR_CORRUPT)) == "corrupt");
  CHECK(FG_ERR_CONFIG == 2);
  CHECK(FG_ERR_DATA == 3);
  CHECK(FG_ERR_NUMERICAL == 4);
  CHECK(fg_config_create(nullptr) == FG_ERR_INVALID_ARGUMENT);
  CHECK(last_error().find("null") != std::string::npos);
  fg_flow* flow = nullptr;
  CHECK(fg_flow_load(nullptr, &flow) == FG_ERR_INVALID_ARGUMENT);
  fg_flow_destroy(nullptr);
  fg_config_destroy(nullptr);
  fg_extractor_destroy(nullptr);
}

TEST_CASE("config validation, snapshot and lookup") {
  fg_config* cfg = nullptr;
  REQUIRE(fg_config_create(&cfg) == FG_OK);
  CHECK(fg_config_validate(cfg) == FG_OK);

  size_t len = 0;
  REQUIRE(fg_config_get(cfg, "flow.n_flows", nullptr, 0, &len) == FG_OK);
  std::vector<char> buf(len + 1);
  REQUIRE(fg_config_get(cfg, "flow.n_flows", buf.data(), buf.size(), &len) == FG_OK);
  CHECK(std::string(buf.data()) == "5");
  char tiny[2];
  CHECK(fg_config_snapshot(cfg, tiny, sizeof tiny, &len) == FG_ERR_INVALID_ARGUMENT);
  CHECK(len > 100);

  CHECK(fg_config_set(cfg, "flow.n_flowz", "3") == FG_OK);
  CHECK(fg_config_set(cfg, "train.learning_rate", "fast") == FG_OK);
  CHECK(fg_config_set(cfg, "heatmap.stride", "0") == FG_OK);
  CHECK(fg_config_validate(cfg) == FG_ERR_CONFIG);
  const std::string msg = last_error();
  CHECK(msg.find("flow.n_flowz") != std::string::npos);
  CHECK(msg.find("train.learning_rate") != std::string::npos);
  CHECK(msg.find("heatmap.stride") != std::string::npos);
  CHECK(msg.find('\n') == std::string::npos);
  CHECK(fg_config_get(cfg, "flow.n_flows", nullptr, 0, &len) == FG_ERR_CONFIG);
  fg_config_destroy(cfg);

  REQUIRE(fg_config_create(&cfg) == FG_OK);
  CHECK(fg_config_parse(cfg, "this is not a key value line") == FG_ERR_CONFIG);
  CHECK(fg_config_load_file(cfg, "/nonexistent/flowgrain.cfg") == FG_ERR_IO);
  CHECK(fg_config_parse(cfg, "flow.kind = bnaf\n") == FG_OK);
  REQUIRE(fg_config_get(cfg, "flow.activation", nullptr, 0, &len) == FG_OK);
  buf.assign(len + 1, 0);
  REQUIRE(fg_config_get(cfg, "flow.activation", buf.data(), buf.size(), &len) == FG_OK);
  CHECK(std::string(buf.data()) == "tanh");
  fg_config_destroy(cfg);
}

TEST_CASE("last error is per thread") {
  CHECK(fg_config_create(nullptr) == FG_ERR_INVALID_ARGUMENT);
  std::string other = "unset";
  std::thread t([&] { other = fg_last_error(); });
  t.join();
  CHECK(other.empty());
  CHECK(!last_error().empty());
}

TEST_CASE("end to end through the C API") {
  TempDir dir("capi");
  fg_config* cfg = small_config();
  size_t images = 0;
  REQUIRE(fg_synth_generate(cfg, (dir / "corpus").c_str(), &images) == FG_OK);
  CHECK(images == 10);
  const std::string manifest = (dir / "corpus" / "manifest.tsv").string();

  std::vector<double> val_curve;
  fg_flow* flow = nullptr;
  REQUIRE(fg_flow_train(
              cfg, manifest.c_str(),
              [](size_t, double, double val, void* user) { static_cast<std::vector<double>*>(user)->push_back(val); },
              &val_curve, &flow) == FG_OK);
  CHECK(val_curve.size() == 2);
  fg_flow_info info{};
  REQUIRE(fg_flow_get_info(flow, &info) == FG_OK);
  CHECK(info.crop_size == 5);
  CHECK(info.raw_dim == 75);
  CHECK(info.input_dim == 10);
  CHECK(info.epochs == 2);
  CHECK(std::isfinite(info.best_val_nll));

  const std::string ckpt = (dir / "flow.fgck").string();
  REQUIRE(fg_flow_save(flow, ckpt.c_str()) == FG_OK);
  fg_flow* loaded = nullptr;
  REQUIRE(fg_flow_load(ckpt.c_str(), &loaded) == FG_OK);
  std::vector<double> crops(3 * 75);
  for (size_t i = 0; i < crops.size(); ++i) crops[i] = (static_cast<double>(i % 256) + 0.5) / 256.0;
  double a[3], b[3];
  REQUIRE(fg_flow_log_prob(flow, crops.data(), 3, 75, a) == FG_OK);
  REQUIRE(fg_flow_log_prob(loaded, crops.data(), 3, 75, b) == FG_OK);
  CHECK(std::memcmp(a, b, sizeof a) == 0);
  CHECK(fg_flow_log_prob(flow, crops.data(), 3, 74, a) == FG_ERR_INVALID_ARGUMENT);

  {
    std::ofstream list(dir / "crops.tsv");
    list << "corpus/images/s_0000.ppm\t0\t0\ncorpus/images/s_0001.ppm\t10\t20\n";
  }
  size_t scored = 0;
  REQUIRE(fg_flow_score_list(flow, (dir / "crops.tsv").c_str(), (dir / "scores.csv").c_str(), &scored) == FG_OK);
  CHECK(scored == 2);

  fg_heatmap_summary hs{};
  REQUIRE(fg_heatmap_run(flow, cfg, manifest.c_str(), (dir / "hm").c_str(), &hs) == FG_OK);
  CHECK(hs.images == 10);
  CHECK(hs.cells == 10 * 14 * 19);
  CHECK(hs.scale_hi > hs.scale_lo);
  fg_heatmap_summary bs{};
  REQUIRE(fg_bins_run(cfg, (dir / "hm" / "grids.fgck").c_str(), (dir / "bins").c_str(), &bs) == FG_OK);
  CHECK(file_bytes(dir / "bins" / "report.csv") == file_bytes(dir / "hm" / "report.csv"));

  fg_extractor* ex = nullptr;
  REQUIRE(fg_extractor_train(cfg, flow, manifest.c_str(), nullptr, nullptr, &ex) == FG_OK);
  size_t crop = 0, dim = 0;
  REQUIRE(fg_extractor_get_info(ex, &crop, &dim) == FG_OK);
  CHECK(crop == 12);
  CHECK(dim == 3);
  std::vector<double> big(2 * 12 * 12 * 3, 0.5), emb(6), pred(2);
  REQUIRE(fg_extractor_predict(ex, big.data(), 2, big.size() / 2, emb.data(), pred.data()) == FG_OK);
  CHECK(emb[0] == emb[3]);
  CHECK(pred[0] == pred[1]);
  size_t points = 0;
  REQUIRE(fg_embed_run(ex, flow, cfg, manifest.c_str(), (dir / "scatter.csv").c_str(), &points) == FG_OK);
  CHECK(points == 10 * 5 * 6);

  fg_extractor_destroy(ex);
  fg_flow_destroy(loaded);
  fg_flow_destroy(flow);
  fg_config_destroy(cfg);
}

TEST_CASE("checkpoint errors map to declared codes") {
  TempDir dir("capi_err");
  fg_flow* flow = nullptr;
  CHECK(fg_flow_load((dir / "missing.fgck").c_str(), &flow) == FG_ERR_IO);
  CHECK(flow == nullptr);
  {
    std::ofstream junk(dir / "junk.fgck", std::ios::binary);
    junk << "definitely not a checkpoint";
  }
  CHECK(fg_flow_load((dir / "junk.fgck").c_str(), &flow) == FG_ERR_CORRUPT);
  {
    std::ofstream v2(dir / "v2.fgck", std::ios::binary);
    const char bytes[] = {'F', 'G', 'C', 'K', 2, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0};
    v2.write(bytes, sizeof bytes);
  }
  CHECK(fg_flow_load((dir / "v2.fgck").c_str(), &flow) == FG_ERR_UNSUPPORTED);
  fg_extractor* ex = nullptr;
  CHECK(fg_extractor_load((dir / "junk.fgck").c_str(), &ex) == FG_ERR_CORRUPT);

  fg_config* cfg = small_config();
  CHECK(fg_flow_train(cfg, (dir / "nope.tsv").c_str(), nullptr, nullptr, &flow) == FG_ERR_DATA);
  fg_config_destroy(cfg);
}
