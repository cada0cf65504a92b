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

#include "flowgrain/flowgrain.h"

#include <cstring>
#include <exception>
#include <fstream>
#include <iterator>
#include <new>
#include <string>

#include "errors.hpp"
#include "extractor.hpp"
#include "keyvalue.hpp"
#include "pipeline.hpp"
#include "runconfig.hpp"
#include "synth.hpp"
#include "training.hpp"

struct fg_config {
  flowgrain::KeyValues entries;
};

struct fg_flow {
  flowgrain::FlowCheckpoint ckpt;
};

struct fg_extractor {
  flowgrain::ExtractorCheckpoint ckpt;
};

namespace {

using flowgrain::ErrorKind;

thread_local std::string g_last_error;

fg_status status_of(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::Config: return FG_ERR_CONFIG;
    case ErrorKind::Data: return FG_ERR_DATA;
    case ErrorKind::Numerical: return FG_ERR_NUMERICAL;
    case ErrorKind::CorruptFile: return FG_ERR_CORRUPT;
    case ErrorKind::Unsupported: return FG_ERR_UNSUPPORTED;
    case ErrorKind::ShapeMismatch: return FG_ERR_INVALID_ARGUMENT;
    case ErrorKind::Io: return FG_ERR_IO;
  }
  return FG_ERR_DATA;
}

std::string one_line(std::string s) {
  for (char& c : s)
    if (c == '\n' || c == '\r') c = ' ';
  return s;
}

fg_status set_error(fg_status status, const std::string& message) {
  g_last_error = one_line(message);
  return status;
}

// Runs `body`, translating exceptions into status codes.
template <class F>
fg_status guarded(F&& body) {
  try {
    body();
    return FG_OK;
  } catch (const flowgrain::Error& e) {
    return set_error(status_of(e.kind()), e.what());
  } catch (const std::bad_alloc&) {
    return set_error(FG_ERR_DATA, "out of memory");
  } catch (const std::exception& e) {
    return set_error(FG_ERR_DATA, std::string("internal error: ") + e.what());
  }
}

#define FG_REQUIRE(cond, what) \
  if (!(cond)) return set_error(FG_ERR_INVALID_ARGUMENT, what)

flowgrain::RunConfig resolve(const fg_config* config) { return flowgrain::RunConfig::from_keyvalues(config->entries); }

fg_status copy_out(const std::string& text, char* buffer, size_t capacity, size_t* length) {
  if (length) *length = text.size();
  if (!buffer) return capacity == 0 ? FG_OK : set_error(FG_ERR_INVALID_ARGUMENT, "null buffer");
  if (capacity < text.size() + 1) {
    if (capacity > 0) buffer[0] = '\0';
    return set_error(FG_ERR_INVALID_ARGUMENT, "buffer too small: need " + std::to_string(text.size() + 1) + " bytes");
  }
  std::memcpy(buffer, text.c_str(), text.size() + 1);
  return FG_OK;
}

flowgrain::Tensor crop_matrix(const double* crops, size_t rows, size_t cols) {
  return flowgrain::Tensor({rows, cols}, std::vector<double>(crops, crops + rows * cols));
}

}  // namespace

extern "C" {

const char* fg_version(void) { return FLOWGRAIN_VERSION; }

const char* fg_status_name(fg_status status) {
  switch (status) {
    case FG_OK: return "ok";
    case FG_ERR_CONFIG: return "config";
    case FG_ERR_DATA: return "data";
    case FG_ERR_NUMERICAL: return "numerical";
    case FG_ERR_CORRUPT: return "corrupt";
    case FG_ERR_UNSUPPORTED: return "unsupported";
    case FG_ERR_INVALID_ARGUMENT: return "invalid-argument";
    case FG_ERR_IO: return "io";
  }
  return "unknown";
}

const char* fg_last_error(void) { return g_last_error.c_str(); }

// ---- configuration ----------------------------------------------------------

fg_status fg_config_create(fg_config** out) {
  FG_REQUIRE(out, "fg_config_create: null output");
  *out = nullptr;
  return guarded([&] { *out = new fg_config; });
}

void fg_config_destroy(fg_config* config) { delete config; }

fg_status fg_config_parse(fg_config* config, const char* text) {
  FG_REQUIRE(config && text, "fg_config_parse: null argument");
  return guarded([&] {
    config->entries = flowgrain::merge_keyvalues(config->entries, flowgrain::KeyValues::parse(text, "config"));
  });
}

fg_status fg_config_load_file(fg_config* config, const char* path) {
  FG_REQUIRE(config && path, "fg_config_load_file: null argument");
  return guarded([&] {
    std::ifstream in(path, std::ios::binary);
    if (!in) flowgrain::fail(ErrorKind::Io, std::string("cannot open config file ") + path);
    const std::string text{std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
    config->entries = flowgrain::merge_keyvalues(config->entries, flowgrain::KeyValues::parse(text, path));
  });
}

fg_status fg_config_set(fg_config* config, const char* key, const char* value) {
  FG_REQUIRE(config && key && value, "fg_config_set: null argument");
  return guarded([&] { config->entries.set(key, std::string(value)); });
}

fg_status fg_config_validate(const fg_config* config) {
  FG_REQUIRE(config, "fg_config_validate: null config");
  return guarded([&] { resolve(config); });
}

fg_status fg_config_snapshot(const fg_config* config, char* buffer, size_t capacity, size_t* length) {
  FG_REQUIRE(config, "fg_config_snapshot: null config");
  std::string text;
  const fg_status s = guarded([&] { text = resolve(config).to_keyvalues().to_text(); });
  return s != FG_OK ? s : copy_out(text, buffer, capacity, length);
}

fg_status fg_config_get(const fg_config* config, const char* key, char* buffer, size_t capacity, size_t* length) {
  FG_REQUIRE(config && key, "fg_config_get: null argument");
  std::string value;
  const fg_status s = guarded([&] {
    const auto v = resolve(config).to_keyvalues().find(key);
    if (!v) flowgrain::fail(ErrorKind::Config, std::string("unknown config key '") + key + "'");
    value = *v;
  });
  return s != FG_OK ? s : copy_out(value, buffer, capacity, length);
}

// ---- synthetic corpus -------------------------------------------------------

fg_status fg_synth_generate(const fg_config* config, const char* out_dir, size_t* image_count) {
  FG_REQUIRE(config && out_dir, "fg_synth_generate: null argument");
  return guarded([&] {
    const auto rc = resolve(config);
    flowgrain::generate_synthetic_corpus(rc.synth, out_dir);
    if (image_count) *image_count = rc.synth.total_images();
  });
}

// ---- flows ------------------------------------------------------------------

fg_status fg_flow_train(const fg_config* config, const char* manifest, fg_epoch_callback on_epoch, void* user,
                        fg_flow** out) {
  FG_REQUIRE(config && manifest && out, "fg_flow_train: null argument");
  *out = nullptr;
  return guarded([&] {
    const auto rc = resolve(config);
    const auto images = flowgrain::load_dataset(manifest);
    flowgrain::EpochCallback cb;
    if (on_epoch) cb = [&](const flowgrain::EpochRecord& r) { on_epoch(r.epoch, r.train_nll, r.val_nll, user); };
    auto flow = std::make_unique<fg_flow>();
    flow->ckpt = flowgrain::train_flow(images, rc.train, rc.flow, cb);
    *out = flow.release();
  });
}

fg_status fg_flow_load(const char* path, fg_flow** out) {
  FG_REQUIRE(path && out, "fg_flow_load: null argument");
  *out = nullptr;
  return guarded([&] {
    auto flow = std::make_unique<fg_flow>();
    flow->ckpt = flowgrain::load_flow_checkpoint(path);
    *out = flow.release();
  });
}

fg_status fg_flow_save(const fg_flow* flow, const char* path) {
  FG_REQUIRE(flow && path, "fg_flow_save: null argument");
  return guarded([&] { flowgrain::save_flow_checkpoint(flow->ckpt, path); });
}

void fg_flow_destroy(fg_flow* flow) { delete flow; }

fg_status fg_flow_get_info(const fg_flow* flow, fg_flow_info* info) {
  FG_REQUIRE(flow && info, "fg_flow_get_info: null argument");
  const auto& c = flow->ckpt;
  info->crop_size = c.pipeline.crop_size;
  info->raw_dim = c.pipeline.crop_size ? c.pipeline.raw_dim() : c.flow.input_dim;
  info->input_dim = c.flow.input_dim;
  info->epochs = c.history.size();
  info->best_epoch = c.best_epoch;
  info->best_val_nll = c.best_epoch ? c.history[c.best_epoch - 1].val_nll : 0.0;
  return FG_OK;
}

fg_status fg_flow_log_prob(const fg_flow* flow, const double* crops, size_t rows, size_t cols, double* out) {
  FG_REQUIRE(flow && crops && out, "fg_flow_log_prob: null argument");
  return guarded([&] {
    const auto lp = flow->ckpt.log_prob_raw(crop_matrix(crops, rows, cols));
    std::copy(lp.begin(), lp.end(), out);
  });
}

fg_status fg_flow_score_list(const fg_flow* flow, const char* list_path, const char* csv_path, size_t* count) {
  FG_REQUIRE(flow && list_path && csv_path, "fg_flow_score_list: null argument");
  return guarded([&] {
    const auto n = flowgrain::run_score(flow->ckpt, list_path, csv_path);
    if (count) *count = n;
  });
}

// ---- heatmaps ---------------------------------------------------------------

namespace {
void fill_summary(const flowgrain::HeatmapSummary& s, fg_heatmap_summary* out) {
  if (!out) return;
  out->images = s.images;
  out->cells = s.cells;
  out->bins = s.bins;
  out->scale_lo = s.scaling.lo;
  out->scale_hi = s.scaling.hi;
}
}  // namespace

fg_status fg_heatmap_run(const fg_flow* flow, const fg_config* config, const char* manifest, const char* out_dir,
                         fg_heatmap_summary* summary) {
  FG_REQUIRE(flow && config && manifest && out_dir, "fg_heatmap_run: null argument");
  return guarded([&] { fill_summary(flowgrain::run_heatmap(flow->ckpt, resolve(config), manifest, out_dir), summary); });
}

fg_status fg_bins_run(const fg_config* config, const char* grids_path, const char* out_dir,
                      fg_heatmap_summary* summary) {
  FG_REQUIRE(config && grids_path && out_dir, "fg_bins_run: null argument");
  return guarded([&] { fill_summary(flowgrain::run_bins(grids_path, resolve(config), out_dir), summary); });
}

// ---- extractor --------------------------------------------------------------

fg_status fg_extractor_train(const fg_config* config, const fg_flow* teacher, const char* manifest,
                             fg_eval_callback on_eval, void* user, fg_extractor** out) {
  FG_REQUIRE(config && teacher && manifest && out, "fg_extractor_train: null argument");
  *out = nullptr;
  return guarded([&] {
    const auto rc = resolve(config);
    const auto images = flowgrain::load_dataset(manifest);
    std::function<void(const flowgrain::ExtractorEval&)> cb;
    if (on_eval) cb = [&](const flowgrain::ExtractorEval& e) { on_eval(e.step, e.train_mse, e.val_mse, user); };
    auto ex = std::make_unique<fg_extractor>();
    ex->ckpt = flowgrain::train_extractor(images, teacher->ckpt, rc.extractor, cb);
    *out = ex.release();
  });
}

fg_status fg_extractor_load(const char* path, fg_extractor** out) {
  FG_REQUIRE(path && out, "fg_extractor_load: null argument");
  *out = nullptr;
  return guarded([&] {
    auto ex = std::make_unique<fg_extractor>();
    ex->ckpt = flowgrain::load_extractor_checkpoint(path);
    *out = ex.release();
  });
}

fg_status fg_extractor_save(const fg_extractor* extractor, const char* path) {
  FG_REQUIRE(extractor && path, "fg_extractor_save: null argument");
  return guarded([&] { flowgrain::save_extractor_checkpoint(extractor->ckpt, path); });
}

void fg_extractor_destroy(fg_extractor* extractor) { delete extractor; }

fg_status fg_extractor_get_info(const fg_extractor* extractor, size_t* crop_size, size_t* embedding_dim) {
  FG_REQUIRE(extractor, "fg_extractor_get_info: null extractor");
  if (crop_size) *crop_size = extractor->ckpt.config.crop_size;
  if (embedding_dim) *embedding_dim = extractor->ckpt.config.pre_linear_units;
  return FG_OK;
}

fg_status fg_extractor_predict(const fg_extractor* extractor, const double* crops, size_t rows, size_t cols,
                               double* embeddings, double* predicted) {
  FG_REQUIRE(extractor && crops, "fg_extractor_predict: null argument");
  return guarded([&] {
    const auto p = extractor->ckpt.predict(crop_matrix(crops, rows, cols));
    if (embeddings) std::copy(p.embedding.data.begin(), p.embedding.data.end(), embeddings);
    if (predicted) std::copy(p.predicted.begin(), p.predicted.end(), predicted);
  });
}

fg_status fg_embed_run(const fg_extractor* extractor, const fg_flow* teacher, const fg_config* config,
                       const char* manifest, const char* csv_path, size_t* points) {
  FG_REQUIRE(extractor && config && manifest && csv_path, "fg_embed_run: null argument");
  return guarded([&] {
    const auto n = flowgrain::run_embed(extractor->ckpt, teacher ? &teacher->ckpt : nullptr, resolve(config), manifest,
                                        csv_path);
    if (points) *points = n;
  });
}

}  // extern "C"
