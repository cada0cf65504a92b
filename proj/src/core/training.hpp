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

// Random-crop flow training with Adam and validation early stopping.
//
// Randomness is split into independent streams derived from the seed, in
// this order of use: basis fit crops, validation crops, model init, train
// batches. Each batch draws (image, top, left) per crop and then one
// dequantization offset per crop value in row-major order.

#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "container.hpp"
#include "flows.hpp"
#include "imaging.hpp"
#include "projection.hpp"
#include "rng.hpp"
#include "tensor.hpp"

namespace flowgrain {

struct TrainConfig {
  std::size_t crop_size = 11;
  std::size_t batch_size = 256;
  double learning_rate = 1e-3;
  std::size_t max_epochs = 200;
  std::size_t patience = 20;
  std::size_t batches_per_epoch = 200;
  std::uint64_t seed = 1;
  /// Fraction of train-split images held out when no val split is present.
  double val_fraction = 0.1;
  /// Reduced dimension k; 0 trains on raw crop vectors.
  std::size_t svd_components = 100;
  /// Cap on crops drawn to fit the basis.
  std::size_t svd_fit_samples = 20000;
  std::size_t val_crops = 2048;
  bool dequantize = true;
  bool whiten = true;

  /// Throws ErrorKind::Config listing every violation.
  void validate() const;
  std::size_t crop_dim() const { return crop_size * crop_size * 3; }
};

/// Pixel-to-vector mapping shared by training, sweeps and scoring.
struct CropPipeline {
  std::size_t crop_size = 0;
  std::optional<ProjectionBasis> basis;
  bool whiten = true;

  std::size_t raw_dim() const { return crop_size * crop_size * 3; }
  std::size_t input_dim() const { return basis ? basis->k() : raw_dim(); }
  /// Maps raw scaled crop rows to model inputs (projection when present).
  Tensor encode(const Tensor& raw) const;
};

/// Inference-time crop values: (v + 0.5) / 256, no noise, row-major HWC.
void extract_crop(const Image& image, std::size_t top, std::size_t left, std::size_t size, std::span<double> out);

/// `count` crops with uniformly random image (among `images`) and top-left
/// position. With dequantization each value is (v + u) / 256, u ~ U[0, 1);
/// otherwise (v + 0.5) / 256. Throws ErrorKind::Data naming any image
/// smaller than the crop.
Tensor sample_crops(std::span<const ImageRecord* const> images, std::size_t crop_size, std::size_t count, Rng& rng,
                    bool dequantize);

/// Number of valid top-left positions of a w×w crop in an h×w_img image.
std::size_t crop_positions(std::size_t height, std::size_t width, std::size_t crop_size);

class Adam {
 public:
  Adam(double lr, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8) : lr_(lr), b1_(beta1), b2_(beta2), eps_(eps) {}
  /// Applies one update from each parameter's accumulated gradient.
  void step(const std::vector<Tensor*>& params);

 private:
  double lr_, b1_, b2_, eps_;
  std::uint64_t t_ = 0;
  std::vector<std::vector<double>> m_, v_;
};

struct EpochRecord {
  std::size_t epoch = 0;
  double train_nll = 0.0;
  double val_nll = 0.0;
};

struct FlowCheckpoint {
  FlowConfig flow;
  TrainConfig train;
  CropPipeline pipeline;  // crop_size 0 for tabular models
  FlowModel model;
  std::vector<EpochRecord> history;
  std::size_t best_epoch = 0;

  /// Eval-mode log-likelihood of raw (scaled, unprojected) crop rows.
  std::vector<double> log_prob_raw(const Tensor& raw) const;
};

using EpochCallback = std::function<void(const EpochRecord&)>;
/// Produces one encoded training batch; must draw only from the given rng.
using BatchSampler = std::function<Tensor(Rng&)>;

/// Core optimization loop: Adam on mean NLL, early stopping on `val`,
/// best-validation parameters restored on return. Throws ErrorKind::Numerical
/// if every batch of an epoch produced a non-finite loss.
void optimize_flow(FlowModel& model, const BatchSampler& next_batch, const Tensor& val, const TrainConfig& config,
                   Rng& batch_rng, std::vector<EpochRecord>& history, std::size_t& best_epoch,
                   const EpochCallback& on_epoch = {});

/// Tabular entry point: batches are drawn with replacement from `train` rows.
FlowCheckpoint train_flow_tabular(const Tensor& train, const Tensor& val, FlowConfig flow, const TrainConfig& config,
                                  const EpochCallback& on_epoch = {});

/// Image entry point. Train-split records provide training crops; val-split
/// records (or a seeded `val_fraction` of train images when none exist)
/// provide a fixed validation crop set. Test-split records are ignored.
FlowCheckpoint train_flow(const std::vector<ImageRecord>& images, const TrainConfig& config, FlowConfig flow,
                          const EpochCallback& on_epoch = {});

/// Partition used by train_flow: (train, val) record pointers.
std::pair<std::vector<const ImageRecord*>, std::vector<const ImageRecord*>> split_for_training(
    const std::vector<ImageRecord>& images, const TrainConfig& config);

Container flow_to_container(const FlowCheckpoint& ckpt);
FlowCheckpoint flow_from_container(const Container& c);
void save_flow_checkpoint(const FlowCheckpoint& ckpt, const std::filesystem::path& path);
FlowCheckpoint load_flow_checkpoint(const std::filesystem::path& path);

void write_train_config(const TrainConfig& t, KeyValues& kv, const std::string& prefix = "train.");
/// Overrides fields of `base` with the keys present in `kv`.
TrainConfig read_train_config(const KeyValues& kv, const std::string& prefix = "train.", TrainConfig base = {});
void write_flow_config(const FlowConfig& f, KeyValues& kv, const std::string& prefix = "flow.");
FlowConfig read_flow_config(const KeyValues& kv, const std::string& prefix = "flow.", FlowConfig base = {});

ModelKind parse_model_kind(const std::string& text);
Activation parse_activation(const std::string& text);
OrderingPolicy parse_ordering(const std::string& text);

}  // namespace flowgrain
