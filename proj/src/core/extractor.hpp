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

// Residual convolutional regressor trained on flow log-likelihoods. The
// dense layer before the scalar head is the quality embedding.
//
// Architecture: 3×3 stem, then stages of pre-activation residual blocks
// (relu, conv, relu, conv, plus shortcut). The first block of every stage
// after the first halves the resolution and uses a 1×1 projection shortcut.
// A final relu and global average pool feed tanh(dense) and a linear head.

#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <limits>
#include <string>
#include <vector>

#include "autodiff.hpp"
#include "container.hpp"
#include "imaging.hpp"
#include "rng.hpp"
#include "tensor.hpp"
#include "training.hpp"

namespace flowgrain {

struct ExtractorConfig {
  /// Input crop size; 0 picks 4× the flow crop, capped by the smallest image.
  std::size_t crop_size = 0;
  std::vector<std::size_t> widths{16, 32, 64};
  std::size_t blocks_per_stage = 2;
  std::size_t pre_linear_units = 3;
  double learning_rate = 1e-3;
  std::size_t batch_size = 32;
  std::size_t max_steps = 3000;
  /// Validation runs every `eval_interval` steps; early stopping counts
  /// evaluations without improvement.
  std::size_t eval_interval = 100;
  std::size_t patience = 10;
  std::size_t val_crops = 512;
  /// Crops used to fit the teacher standardization (median and MAD scale).
  std::size_t calibration_crops = 1024;
  /// Standardized targets are clipped to +-target_clip; 0 disables. Teacher
  /// LL is heavy-tailed and single extreme crops otherwise dominate the loss.
  double target_clip = 5.0;
  /// Sub-window stride of the flow teacher; 0 uses the flow crop size.
  std::size_t teacher_stride = 0;
  bool dequantize = true;
  std::uint64_t seed = 1;
  double val_fraction = 0.1;

  /// Throws ErrorKind::Config listing every violation.
  void validate() const;
};

class ExtractorModel {
 public:
  ExtractorModel() = default;
  ExtractorModel(const ExtractorConfig& config, Rng& rng);

  struct Output {
    ad::Var embedding;   // (n, pre_linear_units)
    ad::Var prediction;  // (n), standardized units
  };
  /// x: (n, 3, s, s).
  Output forward(ad::Tape& tape, ad::Var x) const;

  std::vector<Tensor*> parameters();
  std::vector<std::pair<std::string, Tensor*>> named_tensors();
  std::vector<std::pair<std::string, const Tensor*>> named_tensors() const;

 private:
  struct Block {
    std::size_t stride = 1;
    Tensor w1, b1, w2, b2;
    Tensor proj_w, proj_b;  // empty for identity shortcuts
  };
  Tensor stem_w_, stem_b_;
  std::vector<Block> blocks_;
  Tensor dense_w_, dense_b_, head_w_, head_b_;
};

/// Teacher log-likelihood for rows of raw scaled crops (HWC, s×s×3).
using TeacherFn = std::function<std::vector<double>(const Tensor& raw_crops)>;

/// Mean flow LL over the flow-sized sub-windows of each crop, taken on the
/// lattice with the given stride (the flow crop size when 0).
TeacherFn flow_teacher(const FlowCheckpoint& flow, std::size_t crop_size, std::size_t stride = 0);

struct ExtractorEval {
  std::size_t step = 0;
  double train_mse = 0.0;
  double val_mse = 0.0;
};

struct ExtractorPrediction {
  Tensor embedding;                // (n, pre_linear_units)
  std::vector<double> predicted;   // LL units
};

struct ExtractorCheckpoint {
  ExtractorConfig config;  // crop_size resolved
  ExtractorModel model;
  double teacher_mean = 0.0, teacher_std = 1.0;
  std::vector<ExtractorEval> history;
  std::size_t best_step = 0;

  std::size_t input_dim() const { return config.crop_size * config.crop_size * 3; }
  /// Stateless, row-independent evaluation of raw scaled crops.
  ExtractorPrediction predict(const Tensor& raw_crops) const;
};

/// Resolves crop_size = 0 against the flow crop and the image set.
std::size_t resolve_extractor_crop(const ExtractorConfig& config, std::size_t flow_crop,
                                   const std::vector<ImageRecord>& images);

/// MSE regression of the standardized teacher with validation early stopping
/// on crops from held-out images. `config.crop_size` must be resolved.
ExtractorCheckpoint train_extractor(const std::vector<ImageRecord>& images, const TeacherFn& teacher,
                                    ExtractorConfig config,
                                    const std::function<void(const ExtractorEval&)>& on_eval = {});

/// Flow-teacher entry point.
ExtractorCheckpoint train_extractor(const std::vector<ImageRecord>& images, const FlowCheckpoint& flow,
                                    ExtractorConfig config,
                                    const std::function<void(const ExtractorEval&)>& on_eval = {});

Container extractor_to_container(const ExtractorCheckpoint& ckpt);
ExtractorCheckpoint extractor_from_container(const Container& c);
void save_extractor_checkpoint(const ExtractorCheckpoint& ckpt, const std::filesystem::path& path);
ExtractorCheckpoint load_extractor_checkpoint(const std::filesystem::path& path);

void write_extractor_config(const ExtractorConfig& e, KeyValues& kv, const std::string& prefix = "extractor.");
ExtractorConfig read_extractor_config(const KeyValues& kv, const std::string& prefix = "extractor.",
                                      ExtractorConfig base = {});

struct EmbeddingPoint {
  std::string image_id;
  std::size_t row = 0, col = 0;  // crop top-left
  std::vector<double> embedding;
  double predicted_ll = 0.0;
  double teacher_ll = std::numeric_limits<double>::quiet_NaN();  // NaN when unknown
};

/// Embeds every crop of the stride-s lattice over `image`. When `teacher` is
/// set its values fill teacher_ll.
std::vector<EmbeddingPoint> embed_image(const ExtractorCheckpoint& ckpt, const std::string& image_id,
                                        const Image& image, std::size_t stride, const TeacherFn* teacher = nullptr);

/// CSV image_id,row,col,e1..eK,pred_ll,teacher_ll sorted by (image_id, row,
/// col). Unknown teacher values are written as empty fields.
void export_scatter(const std::vector<EmbeddingPoint>& points, const std::filesystem::path& csv_path);

}  // namespace flowgrain
