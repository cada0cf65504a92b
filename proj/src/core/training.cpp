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

#include "training.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "errors.hpp"

namespace flowgrain {
namespace {

enum Stream : std::uint64_t { kBasisStream = 0, kValStream = 1, kInitStream = 2, kBatchStream = 3, kSplitStream = 4 };

bool grads_finite(const std::vector<Tensor*>& params) {
  for (const Tensor* p : params)
    for (double g : p->grad)
      if (!std::isfinite(g)) return false;
  return true;
}

std::vector<Tensor> snapshot(FlowModel& model) {
  std::vector<Tensor> out;
  for (auto& [name, t] : model.named_tensors()) out.emplace_back(t->shape, t->data);
  return out;
}

void restore(FlowModel& model, const std::vector<Tensor>& saved) {
  auto named = model.named_tensors();
  for (std::size_t i = 0; i < named.size(); ++i) named[i].second->data = saved[i].data;
}

double mean_nll(const FlowModel& model, const Tensor& x) {
  const auto lp = model.log_prob(x);
  double s = 0.0;
  for (double v : lp) s -= v;
  return s / static_cast<double>(lp.size());
}

}  // namespace

// ---- config -----------------------------------------------------------------

void TrainConfig::validate() const {
  std::vector<std::string> problems;
  if (crop_size < 1) problems.push_back("train.crop_size must be >= 1");
  if (batch_size < 2) problems.push_back("train.batch_size must be >= 2");
  if (!(learning_rate > 0.0)) problems.push_back("train.learning_rate must be > 0");
  if (max_epochs < 1) problems.push_back("train.max_epochs must be >= 1");
  if (patience < 1) problems.push_back("train.patience must be >= 1");
  if (batches_per_epoch < 1) problems.push_back("train.batches_per_epoch must be >= 1");
  if (!(val_fraction > 0.0 && val_fraction < 1.0)) problems.push_back("train.val_fraction must be in (0, 1)");
  if (svd_components > 0 && svd_fit_samples < svd_components)
    problems.push_back("train.svd_fit_samples must be >= train.svd_components");
  if (svd_components > crop_dim()) problems.push_back("train.svd_components must be <= crop_size^2 * 3");
  if (val_crops < 1) problems.push_back("train.val_crops must be >= 1");
  if (!problems.empty()) {
    std::string msg = "invalid train config:";
    for (const auto& p : problems) msg += " " + p + ";";
    fail(ErrorKind::Config, msg);
  }
}

ModelKind parse_model_kind(const std::string& text) {
  if (text == "maf") return ModelKind::Maf;
  if (text == "bnaf") return ModelKind::Bnaf;
  fail(ErrorKind::Config, "unknown model kind '" + text + "' (expected maf or bnaf)");
}

Activation parse_activation(const std::string& text) {
  if (text == "relu") return Activation::Relu;
  if (text == "tanh") return Activation::Tanh;
  fail(ErrorKind::Config, "unknown activation '" + text + "' (expected relu or tanh)");
}

OrderingPolicy parse_ordering(const std::string& text) {
  if (text == "natural") return OrderingPolicy::Natural;
  if (text == "reversed") return OrderingPolicy::ReversedPerFlow;
  fail(ErrorKind::Config, "unknown ordering '" + text + "' (expected natural or reversed)");
}

void write_train_config(const TrainConfig& t, KeyValues& kv, const std::string& p) {
  kv.set(p + "crop_size", std::uint64_t{t.crop_size});
  kv.set(p + "batch_size", std::uint64_t{t.batch_size});
  kv.set(p + "learning_rate", t.learning_rate);
  kv.set(p + "max_epochs", std::uint64_t{t.max_epochs});
  kv.set(p + "patience", std::uint64_t{t.patience});
  kv.set(p + "batches_per_epoch", std::uint64_t{t.batches_per_epoch});
  kv.set(p + "seed", t.seed);
  kv.set(p + "val_fraction", t.val_fraction);
  kv.set(p + "svd_components", std::uint64_t{t.svd_components});
  kv.set(p + "svd_fit_samples", std::uint64_t{t.svd_fit_samples});
  kv.set(p + "val_crops", std::uint64_t{t.val_crops});
  kv.set(p + "dequantize", t.dequantize);
  kv.set(p + "whiten", t.whiten);
}

TrainConfig read_train_config(const KeyValues& kv, const std::string& p, TrainConfig t) {
  auto size = [&](const char* k, std::size_t& out) {
    if (kv.has(p + k)) out = kv.get_u64(p + k);
  };
  size("crop_size", t.crop_size);
  size("batch_size", t.batch_size);
  if (kv.has(p + "learning_rate")) t.learning_rate = kv.get_double(p + "learning_rate");
  size("max_epochs", t.max_epochs);
  size("patience", t.patience);
  size("batches_per_epoch", t.batches_per_epoch);
  if (kv.has(p + "seed")) t.seed = kv.get_u64(p + "seed");
  if (kv.has(p + "val_fraction")) t.val_fraction = kv.get_double(p + "val_fraction");
  size("svd_components", t.svd_components);
  size("svd_fit_samples", t.svd_fit_samples);
  size("val_crops", t.val_crops);
  if (kv.has(p + "dequantize")) t.dequantize = kv.get_bool(p + "dequantize");
  if (kv.has(p + "whiten")) t.whiten = kv.get_bool(p + "whiten");
  return t;
}

void write_flow_config(const FlowConfig& f, KeyValues& kv, const std::string& p) {
  kv.set(p + "kind", to_string(f.kind));
  kv.set(p + "input_dim", std::uint64_t{f.input_dim});
  kv.set(p + "n_flows", std::uint64_t{f.n_flows});
  kv.set(p + "hidden_width", std::uint64_t{f.hidden_width});
  kv.set(p + "hidden_layers", std::uint64_t{f.hidden_layers});
  kv.set(p + "activation", to_string(f.activation));
  kv.set(p + "batchnorm", f.use_batchnorm);
  kv.set(p + "ordering", to_string(f.ordering));
  kv.set(p + "batchnorm_eps", f.batchnorm_eps);
  kv.set(p + "batchnorm_momentum", f.batchnorm_momentum);
  kv.set(p + "alpha_clamp", f.alpha_clamp);
}

FlowConfig read_flow_config(const KeyValues& kv, const std::string& p, FlowConfig f) {
  if (auto kind = kv.find(p + "kind")) {
    const ModelKind k = parse_model_kind(*kind);
    if (k != f.kind) {
      const std::size_t dim = f.input_dim;
      f = k == ModelKind::Maf ? FlowConfig::maf_default(dim) : FlowConfig::bnaf_default(dim);
    }
  }
  auto size = [&](const char* k, std::size_t& out) {
    if (kv.has(p + k)) out = kv.get_u64(p + k);
  };
  size("input_dim", f.input_dim);
  size("n_flows", f.n_flows);
  size("hidden_width", f.hidden_width);
  size("hidden_layers", f.hidden_layers);
  if (auto v = kv.find(p + "activation")) f.activation = parse_activation(*v);
  if (kv.has(p + "batchnorm")) f.use_batchnorm = kv.get_bool(p + "batchnorm");
  if (auto v = kv.find(p + "ordering")) f.ordering = parse_ordering(*v);
  if (kv.has(p + "batchnorm_eps")) f.batchnorm_eps = kv.get_double(p + "batchnorm_eps");
  if (kv.has(p + "batchnorm_momentum")) f.batchnorm_momentum = kv.get_double(p + "batchnorm_momentum");
  if (kv.has(p + "alpha_clamp")) f.alpha_clamp = kv.get_double(p + "alpha_clamp");
  return f;
}

// ---- crops ------------------------------------------------------------------

Tensor CropPipeline::encode(const Tensor& raw) const {
  if (raw.rank() != 2 || raw.cols() != raw_dim()) {
    fail(ErrorKind::ShapeMismatch, "crop pipeline: batch " + shape_str(raw.shape) + " does not have width " +
                                       std::to_string(raw_dim()));
  }
  return basis ? project_rows(*basis, raw, whiten) : raw;
}

std::size_t crop_positions(std::size_t height, std::size_t width, std::size_t crop_size) {
  if (crop_size > height || crop_size > width) return 0;
  return (height - crop_size + 1) * (width - crop_size + 1);
}

void extract_crop(const Image& image, std::size_t top, std::size_t left, std::size_t size, std::span<double> out) {
  if (top + size > image.height || left + size > image.width || out.size() != size * size * image.channels) {
    fail(ErrorKind::ShapeMismatch, "extract_crop: window out of bounds");
  }
  std::size_t k = 0;
  for (std::size_t r = 0; r < size; ++r) {
    const std::uint8_t* row = image.pixels.data() + ((top + r) * image.width + left) * image.channels;
    for (std::size_t i = 0; i < size * image.channels; ++i) out[k++] = (row[i] + 0.5) / 256.0;
  }
}

Tensor sample_crops(std::span<const ImageRecord* const> images, std::size_t crop_size, std::size_t count, Rng& rng,
                    bool dequantize) {
  if (images.empty()) fail(ErrorKind::Data, "sample_crops: no images to sample from");
  for (const ImageRecord* rec : images) {
    if (rec->image.height < crop_size || rec->image.width < crop_size) {
      fail(ErrorKind::Data, "image " + rec->id + " (" + std::to_string(rec->image.height) + "x" +
                                std::to_string(rec->image.width) + ") is smaller than crop size " +
                                std::to_string(crop_size));
    }
  }
  const std::size_t dim = crop_size * crop_size * 3;
  Tensor out = Tensor::matrix(count, dim);
  for (std::size_t n = 0; n < count; ++n) {
    const Image& img = images[rng.index(images.size())]->image;
    const std::size_t top = rng.index(img.height - crop_size + 1);
    const std::size_t left = rng.index(img.width - crop_size + 1);
    auto row = out.row(n);
    std::size_t k = 0;
    for (std::size_t r = 0; r < crop_size; ++r) {
      const std::uint8_t* src = img.pixels.data() + ((top + r) * img.width + left) * 3;
      for (std::size_t i = 0; i < crop_size * 3; ++i) {
        row[k++] = (src[i] + (dequantize ? rng.uniform() : 0.5)) / 256.0;
      }
    }
  }
  return out;
}

// ---- optimizer --------------------------------------------------------------

void Adam::step(const std::vector<Tensor*>& params) {
  if (m_.empty()) {
    for (const Tensor* p : params) {
      m_.emplace_back(p->size(), 0.0);
      v_.emplace_back(p->size(), 0.0);
    }
  }
  ++t_;
  const double c1 = 1.0 - std::pow(b1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(b2_, static_cast<double>(t_));
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor& p = *params[i];
    auto& m = m_[i];
    auto& v = v_[i];
    for (std::size_t j = 0; j < p.size(); ++j) {
      const double g = p.grad[j];
      m[j] = b1_ * m[j] + (1.0 - b1_) * g;
      v[j] = b2_ * v[j] + (1.0 - b2_) * g * g;
      p.data[j] -= lr_ * (m[j] / c1) / (std::sqrt(v[j] / c2) + eps_);
    }
  }
}

// ---- training ---------------------------------------------------------------

void optimize_flow(FlowModel& model, const BatchSampler& next_batch, const Tensor& val, const TrainConfig& config,
                   Rng& batch_rng, std::vector<EpochRecord>& history, std::size_t& best_epoch,
                   const EpochCallback& on_epoch) {
  auto params = model.parameters();
  for (Tensor* p : params) p->enable_grad();
  Adam adam(config.learning_rate);
  double best = std::numeric_limits<double>::infinity();
  std::vector<Tensor> best_state = snapshot(model);
  best_epoch = 0;

  for (std::size_t epoch = 1; epoch <= config.max_epochs; ++epoch) {
    double total = 0.0;
    std::size_t ok = 0;
    for (std::size_t b = 0; b < config.batches_per_epoch; ++b) {
      const Tensor batch = next_batch(batch_rng);
      for (Tensor* p : params) p->zero_grad();
      try {
        ad::Tape tape;
        const auto out = model.forward(tape, tape.constant(batch), Mode::Train);
        const ad::Var loss = ad::neg(ad::mean(out.log_prob));
        tape.backward(loss);
        if (!grads_finite(params)) continue;
        adam.step(params);
        total += loss.value().data[0];
        ++ok;
      } catch (const Error& e) {
        if (e.kind() != ErrorKind::Numerical) throw;
      }
    }
    if (ok == 0) {
      fail(ErrorKind::Numerical, "training diverged: train NLL was non-finite for every batch of epoch " +
                                     std::to_string(epoch));
    }
    EpochRecord rec{epoch, total / static_cast<double>(ok), std::numeric_limits<double>::infinity()};
    try {
      rec.val_nll = mean_nll(model, val);
    } catch (const Error& e) {
      if (e.kind() != ErrorKind::Numerical) throw;
    }
    history.push_back(rec);
    if (on_epoch) on_epoch(rec);
    if (std::isfinite(rec.val_nll) && rec.val_nll < best) {
      best = rec.val_nll;
      best_epoch = epoch;
      best_state = snapshot(model);
    } else if (epoch - best_epoch >= config.patience) {
      break;
    }
  }
  if (best_epoch == 0) fail(ErrorKind::Numerical, "training diverged: validation NLL was never finite");
  restore(model, best_state);
  for (Tensor* p : params) {
    p->requires_grad = false;
    p->grad.clear();
  }
}

FlowCheckpoint train_flow_tabular(const Tensor& train, const Tensor& val, FlowConfig flow, const TrainConfig& config,
                                  const EpochCallback& on_epoch) {
  if (train.rank() != 2 || train.rows() < 2) fail(ErrorKind::Data, "train_flow_tabular: need at least 2 rows");
  if (val.rank() != 2 || val.cols() != train.cols() || val.rows() < 1) {
    fail(ErrorKind::Data, "train_flow_tabular: validation data must share the training width");
  }
  config.validate();
  flow.input_dim = train.cols();
  flow.validate();
  Rng init_rng(derive_seed(config.seed, kInitStream));
  Rng batch_rng(derive_seed(config.seed, kBatchStream));
  FlowCheckpoint ckpt{flow, config, CropPipeline{}, FlowModel(flow, init_rng), {}, 0};
  ckpt.pipeline.whiten = false;
  std::vector<std::size_t> rows(config.batch_size);
  const BatchSampler sampler = [&](Rng& rng) {
    for (auto& r : rows) r = rng.index(train.rows());
    return select_rows(train, rows);
  };
  optimize_flow(ckpt.model, sampler, val, config, batch_rng, ckpt.history, ckpt.best_epoch, on_epoch);
  return ckpt;
}

std::pair<std::vector<const ImageRecord*>, std::vector<const ImageRecord*>> split_for_training(
    const std::vector<ImageRecord>& images, const TrainConfig& config) {
  std::vector<const ImageRecord*> train, val;
  for (const auto& rec : images) {
    if (rec.split == Split::Train) train.push_back(&rec);
    if (rec.split == Split::Val) val.push_back(&rec);
  }
  if (val.empty() && train.size() >= 2) {
    const std::size_t n = train.size();
    const auto held = std::clamp<std::size_t>(
        static_cast<std::size_t>(std::llround(config.val_fraction * static_cast<double>(n))), 1, n - 1);
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    Rng rng(derive_seed(config.seed, kSplitStream));
    for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[rng.index(i)]);
    std::vector<bool> is_val(n, false);
    for (std::size_t i = 0; i < held; ++i) is_val[order[i]] = true;
    std::vector<const ImageRecord*> kept;
    for (std::size_t i = 0; i < n; ++i) (is_val[i] ? val : kept).push_back(train[i]);
    train = std::move(kept);
  }
  if (train.empty()) fail(ErrorKind::Data, "no train-split images");
  if (val.empty()) fail(ErrorKind::Data, "need a val split or at least 2 train images");
  return {train, val};
}

FlowCheckpoint train_flow(const std::vector<ImageRecord>& images, const TrainConfig& config, FlowConfig flow,
                          const EpochCallback& on_epoch) {
  config.validate();
  const auto [train, val] = split_for_training(images, config);

  CropPipeline pipeline{config.crop_size, std::nullopt, config.whiten};
  if (config.svd_components > 0) {
    Rng basis_rng(derive_seed(config.seed, kBasisStream));
    const Tensor fit = sample_crops(train, config.crop_size, config.svd_fit_samples, basis_rng, config.dequantize);
    pipeline.basis = fit_basis(fit, config.svd_components);
  }
  Rng val_rng(derive_seed(config.seed, kValStream));
  const Tensor val_x =
      pipeline.encode(sample_crops(val, config.crop_size, config.val_crops, val_rng, config.dequantize));

  flow.input_dim = pipeline.input_dim();
  flow.validate();
  Rng init_rng(derive_seed(config.seed, kInitStream));
  Rng batch_rng(derive_seed(config.seed, kBatchStream));
  FlowCheckpoint ckpt{flow, config, pipeline, FlowModel(flow, init_rng), {}, 0};
  const BatchSampler sampler = [&](Rng& rng) {
    return ckpt.pipeline.encode(sample_crops(train, config.crop_size, config.batch_size, rng, config.dequantize));
  };
  optimize_flow(ckpt.model, sampler, val_x, config, batch_rng, ckpt.history, ckpt.best_epoch, on_epoch);
  return ckpt;
}

std::vector<double> FlowCheckpoint::log_prob_raw(const Tensor& raw) const {
  return model.log_prob(pipeline.crop_size > 0 ? pipeline.encode(raw) : raw);
}

// ---- persistence ------------------------------------------------------------

Container flow_to_container(const FlowCheckpoint& ckpt) {
  Container c;
  c.config.set("model.kind", "flow");
  write_flow_config(ckpt.flow, c.config);
  write_train_config(ckpt.train, c.config);
  c.config.set("pipeline.crop_size", std::uint64_t{ckpt.pipeline.crop_size});
  c.config.set("pipeline.whiten", ckpt.pipeline.whiten);
  c.config.set("pipeline.basis", ckpt.pipeline.basis.has_value());
  c.config.set("history.best_epoch", std::uint64_t{ckpt.best_epoch});
  if (ckpt.pipeline.basis) {
    const auto& b = *ckpt.pipeline.basis;
    c.config.set("basis.n_samples", std::uint64_t{b.n_samples});
    c.arrays.emplace_back("basis.mean", Tensor({b.d()}, b.mean));
    c.arrays.emplace_back("basis.components", Tensor(b.components.shape, b.components.data));
    c.arrays.emplace_back("basis.singular_values", Tensor({b.k()}, b.singular_values));
  }
  Tensor hist({ckpt.history.size(), 3});
  for (std::size_t i = 0; i < ckpt.history.size(); ++i) {
    hist.at(i, 0) = static_cast<double>(ckpt.history[i].epoch);
    hist.at(i, 1) = ckpt.history[i].train_nll;
    hist.at(i, 2) = ckpt.history[i].val_nll;
  }
  c.arrays.emplace_back("history", std::move(hist));
  for (const auto& [name, t] : ckpt.model.named_tensors()) {
    c.arrays.emplace_back("param." + name, Tensor(t->shape, t->data));
  }
  return c;
}

FlowCheckpoint flow_from_container(const Container& c) {
  if (c.config.find("model.kind") != "flow") {
    fail(ErrorKind::CorruptFile, "checkpoint does not hold a flow model (model.kind = " +
                                     c.config.find("model.kind").value_or("?") + ")");
  }
  FlowCheckpoint ckpt;
  try {
    ckpt.flow = read_flow_config(c.config, "flow.", FlowConfig::maf_default(0));
    ckpt.train = read_train_config(c.config);
    ckpt.pipeline.crop_size = c.config.get_u64("pipeline.crop_size");
    ckpt.pipeline.whiten = c.config.get_bool("pipeline.whiten");
    ckpt.best_epoch = c.config.get_u64("history.best_epoch");
    if (c.config.get_bool("pipeline.basis")) {
      ProjectionBasis b;
      b.n_samples = c.config.get_u64("basis.n_samples");
      b.mean = c.array("basis.mean").data;
      b.components = c.array("basis.components");
      b.singular_values = c.array("basis.singular_values").data;
      if (b.components.shape != Shape{b.k(), b.d()}) fail(ErrorKind::CorruptFile, "basis arrays disagree in shape");
      ckpt.pipeline.basis = std::move(b);
    }
    ckpt.model = FlowModel::identity(ckpt.flow);
  } catch (const Error& e) {
    if (e.kind() == ErrorKind::CorruptFile) throw;
    fail(ErrorKind::CorruptFile, std::string("checkpoint header is inconsistent: ") + e.what());
  }
  for (auto& [name, t] : ckpt.model.named_tensors()) {
    const Tensor& stored = c.array("param." + name);
    if (stored.shape != t->shape) {
      fail(ErrorKind::CorruptFile, "checkpoint array param." + name + " has shape " + shape_str(stored.shape) +
                                       ", model expects " + shape_str(t->shape));
    }
    t->data = stored.data;
  }
  const Tensor& hist = c.array("history");
  for (std::size_t i = 0; i < hist.shape.at(0); ++i) {
    ckpt.history.push_back({static_cast<std::size_t>(hist.at(i, 0)), hist.at(i, 1), hist.at(i, 2)});
  }
  return ckpt;
}

void save_flow_checkpoint(const FlowCheckpoint& ckpt, const std::filesystem::path& path) {
  write_container(path, flow_to_container(ckpt));
}

FlowCheckpoint load_flow_checkpoint(const std::filesystem::path& path) {
  return flow_from_container(read_container(path));
}

}  // namespace flowgrain
