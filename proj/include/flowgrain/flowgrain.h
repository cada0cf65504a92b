/*
 * Copyright 2026 The flowgrain Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

/*
 * flowgrain C API.
 *
 * Every fallible function returns an fg_status. On failure a one-line
 * description is available from fg_last_error() on the calling thread until
 * the next failing call on that thread. Handles are opaque; each *_create,
 * *_load or *_train that succeeds must be released with the matching
 * *_destroy. A handle may be read concurrently from several threads but
 * must not be destroyed while in use.
 */

#ifndef FLOWGRAIN_FLOWGRAIN_H_
#define FLOWGRAIN_FLOWGRAIN_H_

#include <stddef.h>

#if defined(_WIN32)
#define FG_API __declspec(dllexport)
#else
#define FG_API __attribute__((visibility("default")))
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef enum fg_status {
  FG_OK = 0,
  FG_ERR_CONFIG = 2,           /* invalid configuration value or key */
  FG_ERR_DATA = 3,             /* missing or malformed input data */
  FG_ERR_NUMERICAL = 4,        /* non-finite values, training divergence */
  FG_ERR_CORRUPT = 5,          /* checkpoint magic, truncation or checksum */
  FG_ERR_UNSUPPORTED = 6,      /* foreign format version, wrong model kind */
  FG_ERR_INVALID_ARGUMENT = 7, /* null pointers, buffer extents */
  FG_ERR_IO = 8                /* unreadable or unwritable path */
} fg_status;

FG_API const char* fg_version(void);
/* Lower-case name of a status ("ok", "config", ...). */
FG_API const char* fg_status_name(fg_status status);
/* Message of the most recent failure on this thread; "" if none. */
FG_API const char* fg_last_error(void);

/* ---- run configuration ------------------------------------------------- */

/* Flat "section.key = value" settings layered over built-in defaults. Keys
 * and values are checked when the configuration is used or validated. */
typedef struct fg_config fg_config;

FG_API fg_status fg_config_create(fg_config** out);
FG_API void fg_config_destroy(fg_config* config);
/* Applies "key = value" lines ('#' starts a comment). */
FG_API fg_status fg_config_parse(fg_config* config, const char* text);
FG_API fg_status fg_config_load_file(fg_config* config, const char* path);
FG_API fg_status fg_config_set(fg_config* config, const char* key, const char* value);
/* FG_ERR_CONFIG listing every unknown key and invalid value. */
FG_API fg_status fg_config_validate(const fg_config* config);
/* Fully resolved configuration text. Writes at most `capacity` bytes
 * including the terminator and stores the full length (without terminator)
 * in *length; a too-small buffer yields FG_ERR_INVALID_ARGUMENT. */
FG_API fg_status fg_config_snapshot(const fg_config* config, char* buffer, size_t capacity, size_t* length);
/* Resolved value of one key, same buffer protocol as fg_config_snapshot. */
FG_API fg_status fg_config_get(const fg_config* config, const char* key, char* buffer, size_t capacity,
                               size_t* length);

/* ---- synthetic corpus --------------------------------------------------- */

/* Writes images/, masks/, labels/ and manifest.tsv under out_dir. */
FG_API fg_status fg_synth_generate(const fg_config* config, const char* out_dir, size_t* image_count);

/* ---- flows -------------------------------------------------------------- */

typedef struct fg_flow fg_flow;

typedef struct fg_flow_info {
  size_t crop_size;  /* 0 for models trained on tabular data */
  size_t raw_dim;    /* crop_size^2 * 3 */
  size_t input_dim;  /* model dimension after projection */
  size_t epochs;
  size_t best_epoch;
  double best_val_nll;
} fg_flow_info;

typedef void (*fg_epoch_callback)(size_t epoch, double train_nll, double val_nll, void* user);

FG_API fg_status fg_flow_train(const fg_config* config, const char* manifest, fg_epoch_callback on_epoch, void* user,
                               fg_flow** out);
FG_API fg_status fg_flow_load(const char* path, fg_flow** out);
FG_API fg_status fg_flow_save(const fg_flow* flow, const char* path);
FG_API void fg_flow_destroy(fg_flow* flow);
FG_API fg_status fg_flow_get_info(const fg_flow* flow, fg_flow_info* info);
/* Log-likelihood of `rows` raw crops (row-major, `cols` == raw_dim values in
 * [0, 1], HWC order) into out[rows]. */
FG_API fg_status fg_flow_log_prob(const fg_flow* flow, const double* crops, size_t rows, size_t cols, double* out);
/* Scores a "path<TAB>top<TAB>left" crop list into a CSV. */
FG_API fg_status fg_flow_score_list(const fg_flow* flow, const char* list_path, const char* csv_path, size_t* count);

/* ---- heatmaps and bins -------------------------------------------------- */

typedef struct fg_heatmap_summary {
  size_t images;
  size_t cells;
  size_t bins;
  double scale_lo; /* raw LL mapped to 0 */
  double scale_hi; /* raw LL mapped to 100 */
} fg_heatmap_summary;

/* Sweeps, reports and overlays under out_dir. Worker count comes from
 * FLOWGRAIN_THREADS and never changes results. */
FG_API fg_status fg_heatmap_run(const fg_flow* flow, const fg_config* config, const char* manifest,
                                const char* out_dir, fg_heatmap_summary* summary);
/* Re-bins a grids.fgck file written by fg_heatmap_run. */
FG_API fg_status fg_bins_run(const fg_config* config, const char* grids_path, const char* out_dir,
                             fg_heatmap_summary* summary);

/* ---- feature extractor -------------------------------------------------- */

typedef struct fg_extractor fg_extractor;

typedef void (*fg_eval_callback)(size_t step, double train_mse, double val_mse, void* user);

FG_API fg_status fg_extractor_train(const fg_config* config, const fg_flow* teacher, const char* manifest,
                                    fg_eval_callback on_eval, void* user, fg_extractor** out);
FG_API fg_status fg_extractor_load(const char* path, fg_extractor** out);
FG_API fg_status fg_extractor_save(const fg_extractor* extractor, const char* path);
FG_API void fg_extractor_destroy(fg_extractor* extractor);
FG_API fg_status fg_extractor_get_info(const fg_extractor* extractor, size_t* crop_size, size_t* embedding_dim);
/* embeddings receives rows * embedding_dim values, predicted rows values;
 * either may be NULL. */
FG_API fg_status fg_extractor_predict(const fg_extractor* extractor, const double* crops, size_t rows, size_t cols,
                                      double* embeddings, double* predicted);
/* Scatter CSV of lattice crops; `teacher` may be NULL. */
FG_API fg_status fg_embed_run(const fg_extractor* extractor, const fg_flow* teacher, const fg_config* config,
                              const char* manifest, const char* csv_path, size_t* points);

#ifdef __cplusplus
}
#endif

#endif /* FLOWGRAIN_FLOWGRAIN_H_ */
