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

#include "extractor.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include "errors.hpp"
#include "heatmap.hpp"
#include "keyvalue.hpp"

namespace flowgrain {
namespace {

enum Stream : std::uint64_t { kCalibStream = 0, kValStream = 1, kInitStream = 2, kBatchStream = 3 };

constexpr std::size_t kPredictChunk = 64;

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  return percentile_sorted(v, 50.0);
}

ad::Var param(ad::Tape& tape, const Tensor& t) { return tape.leaf(const_cast<Tensor&>(t)); }

Tensor uniform_tensor(Shape shape, double bound, Rng& rng) {
  Tensor t(std::move(shape));
  for (double& v : t.data) v = rng.uniform(-bound, bound);
  return t;
}

Tensor conv_kernel(std::size_t out, std::size_t in, std::size_t k, double gain, Rng& rng) {
  return uniform_tensor({out, in, k, k}, gain * std::sqrt(6.0 / static_cast<double>(in * k * k)), rng);
}

// Raw HWC crop rows -> centered (n, 3, s, s) input.
Tensor to_nchw(const Tensor& raw, std::size_t s) {
  const std::size_t n = raw.rows();
  Tensor x({n, 3, s, s});
  for (std::size_t b = 0; b < n; ++b)
    for (std::size_t y = 0; y < s; ++y)
      for (std::size_t c = 0; c < s; ++c)
        for (std::size_t ch = 0; ch < 3; ++ch)
          x.data[((b * 3 + ch) * s + y) * s + c] = (raw.at(b, (y * s + c) * 3 + ch) - 0.5) * 4.0;
  return x;
}

bool grads_finite(const std::vector<Tensor*>& params) {
  for (const Tensor* p : params)
    for (double g : p->grad)
      if (!std::isfinite(g)) return false;
  return true;
}

std::string join_sizes(const std::vector<std::size_t>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) out += (i ? "," : "") + std::to_string(v[i]);
  return out;
}

std::vector<std::size_t> parse_sizes(const std::string& text, const std::string& what) {
  std::vector<std::size_t> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    const auto b = item.find_first_not_of(' '), e = item.find_last_not_of(' ');
    out.push_back(parse_u64(b == std::string::npos ? "" : item.substr(b, e - b + 1), what));
  }
  return out;
}

double mse(const std::vector<double>& pred, const std::vector<double>& target) {
  double s = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) s += (pred[i] - target[i]) * (pred[i] - target[i]);
  return s / static_cast<double>(pred.size());
}

}  // namespace

void ExtractorConfig::validate() const {
  std::vector<std::string> problems;
  if (crop_size != 0 && crop_size < 4) problems.push_back("extractor.crop_size must be 0 or >= 4");
  if (widths.empty()) problems.push_back("extractor.widths must list at least one stage");
  for (auto w : widths)
    if (w < 1) problems.push_back("extractor.widths entries must be >= 1");
  if (blocks_per_stage < 1) problems.push_back("extractor.blocks_per_stage must be >= 1");
  if (pre_linear_units < 1) problems.push_back("extractor.pre_linear_units must be >= 1");
  if (!(learning_rate > 0.0)) problems.push_back("extractor.learning_rate must be > 0");
  if (batch_size < 2) problems.push_back("extractor.batch_size must be >= 2");
  if (max_steps < 1) problems.push_back("extractor.max_steps must be >= 1");
  if (eval_interval < 1) problems.push_back("extractor.eval_interval must be >= 1");
  if (patience < 1) problems.push_back("extractor.patience must be >= 1");
  if (val_crops < 1) problems.push_back("extractor.val_crops must be >= 1");
  if (calibration_crops < 2) problems.push_back("extractor.calibration_crops must be >= 2");
  if (!(target_clip >= 0.0) || !std::isfinite(target_clip)) problems.push_back("extractor.target_clip must be >= 0");
  if (!(val_fraction > 0.0 && val_fraction < 1.0)) problems.push_back("extractor.val_fraction must be in (0, 1)");
  if (!problems.empty()) {
    std::string msg = "invalid extractor config:";
    for (const auto& p : problems) msg += " " + p + ";";
    fail(ErrorKind::Config, msg);
  }
}

// ---- model ------------------------------------------------------------------

ExtractorModel::ExtractorModel(const ExtractorConfig& config, Rng& rng) {
  config.validate();
  const auto& widths = config.widths;
  stem_w_ = conv_kernel(widths[0], 3, 3, 1.0, rng);
  stem_b_ = Tensor({widths[0]});
  std::size_t in = widths[0];
  for (std::size_t s = 0; s < widths.size(); ++s) {
    for (std::size_t j = 0; j < config.blocks_per_stage; ++j) {
      Block b;
      b.stride = (s > 0 && j == 0) ? 2 : 1;
      b.w1 = conv_kernel(widths[s], in, 3, 1.0, rng);
      b.b1 = Tensor({widths[s]});
      // Small residual branches keep the initial network close to the
      // shortcut path.
      b.w2 = conv_kernel(widths[s], widths[s], 3, 0.1, rng);
      b.b2 = Tensor({widths[s]});
      if (b.stride != 1 || in != widths[s]) {
        b.proj_w = conv_kernel(widths[s], in, 1, std::sqrt(0.5), rng);
        b.proj_b = Tensor({widths[s]});
      }
      blocks_.push_back(std::move(b));
      in = widths[s];
    }
  }
  dense_w_ = uniform_tensor({in, config.pre_linear_units}, std::sqrt(3.0 / static_cast<double>(in)), rng);
  dense_b_ = Tensor({config.pre_linear_units});
  head_w_ = uniform_tensor({config.pre_linear_units, 1},
                           1.0 / std::sqrt(static_cast<double>(config.pre_linear_units)), rng);
  head_b_ = Tensor({1});
}

ExtractorModel::Output ExtractorModel::forward(ad::Tape& tape, ad::Var x) const {
  ad::Var h = ad::conv2d(x, param(tape, stem_w_), param(tape, stem_b_), 1, 1);
  for (const auto& b : blocks_) {
    const ad::Var a = ad::relu(h);
    ad::Var r = ad::conv2d(a, param(tape, b.w1), param(tape, b.b1), b.stride, 1);
    r = ad::conv2d(ad::relu(r), param(tape, b.w2), param(tape, b.b2), 1, 1);
    const ad::Var shortcut =
        b.proj_w.size() ? ad::conv2d(a, param(tape, b.proj_w), param(tape, b.proj_b), b.stride, 0) : h;
    h = ad::add(r, shortcut);
  }
  const ad::Var pooled = ad::global_avg_pool(ad::relu(h));
  const ad::Var emb = ad::tanh(ad::add_row(ad::matmul(pooled, param(tape, dense_w_)), param(tape, dense_b_)));
  const ad::Var out = ad::add_row(ad::matmul(emb, param(tape, head_w_)), param(tape, head_b_));
  return {emb, ad::reshape(out, {out.shape()[0]})};
}

std::vector<std::pair<std::string, Tensor*>> ExtractorModel::named_tensors() {
  std::vector<std::pair<std::string, Tensor*>> out{{"stem.w", &stem_w_}, {"stem.b", &stem_b_}};
  for (std::size_t i = 0; i < blocks_.size(); ++i) {
    auto& b = blocks_[i];
    const std::string p = "block" + std::to_string(i) + ".";
    out.insert(out.end(), {{p + "w1", &b.w1}, {p + "b1", &b.b1}, {p + "w2", &b.w2}, {p + "b2", &b.b2}});
    if (b.proj_w.size()) out.insert(out.end(), {{p + "proj_w", &b.proj_w}, {p + "proj_b", &b.proj_b}});
  }
  out.insert(out.end(),
             {{"dense.w", &dense_w_}, {"dense.b", &dense_b_}, {"head.w", &head_w_}, {"head.b", &head_b_}});
  return out;
}

std::vector<std::pair<std::string, const Tensor*>> ExtractorModel::named_tensors() const {
  std::vector<std::pair<std::string, const Tensor*>> out;
  for (auto& [n, t] : const_cast<ExtractorModel*>(this)->named_tensors()) out.emplace_back(n, t);
  return out;
}

std::vector<Tensor*> ExtractorModel::parameters() {
  std::vector<Tensor*> out;
  for (auto& [n, t] : named_tensors()) out.push_back(t);
  return out;
}

// ---- teacher and prediction --------------------------------------------------

TeacherFn flow_teacher(const FlowCheckpoint& flow, std::size_t crop_size, std::size_t stride) {
  const std::size_t w = flow.pipeline.crop_size;
  if (w == 0) fail(ErrorKind::Config, "flow teacher needs an image-crop flow checkpoint");
  if (w > crop_size) {
    fail(ErrorKind::Config, "extractor crop " + std::to_string(crop_size) + " is smaller than the flow crop " +
                                std::to_string(w));
  }
  if (stride == 0) stride = w;
  const std::size_t per_axis = lattice_extent(crop_size, w, stride);
  return [&flow, crop_size, w, stride, per_axis](const Tensor& raw) {
    if (raw.rank() != 2 || raw.cols() != crop_size * crop_size * 3) {
      fail(ErrorKind::ShapeMismatch, "flow teacher: crop batch " + shape_str(raw.shape) + " has the wrong width");
    }
    const std::size_t subs = per_axis * per_axis, n = raw.rows();
    Tensor windows = Tensor::matrix(n * subs, w * w * 3);
    for (std::size_t b = 0; b < n; ++b)
      for (std::size_t s = 0; s < subs; ++s) {
        const std::size_t top = (s / per_axis) * stride, left = (s % per_axis) * stride;
        auto dst = windows.row(b * subs + s);
        for (std::size_t y = 0; y < w; ++y) {
          const double* src = raw.row(b).data() + ((top + y) * crop_size + left) * 3;
          std::copy(src, src + w * 3, dst.begin() + static_cast<std::ptrdiff_t>(y * w * 3));
        }
      }
    const auto lp = flow.log_prob_raw(windows);
    std::vector<double> out(n, 0.0);
    for (std::size_t b = 0; b < n; ++b) {
      for (std::size_t s = 0; s < subs; ++s) out[b] += lp[b * subs + s];
      out[b] /= static_cast<double>(subs);
    }
    return out;
  };
}

ExtractorPrediction ExtractorCheckpoint::predict(const Tensor& raw) const {
  if (raw.rank() != 2 || raw.cols() != input_dim()) {
    fail(ErrorKind::ShapeMismatch, "extractor: crop batch " + shape_str(raw.shape) + " does not have width " +
                                       std::to_string(input_dim()));
  }
  const std::size_t n = raw.rows(), k = config.pre_linear_units;
  ExtractorPrediction out{Tensor::matrix(n, k), std::vector<double>(n)};
  std::vector<std::size_t> idx;
  for (std::size_t start = 0; start < n; start += kPredictChunk) {
    const std::size_t m = std::min(kPredictChunk, n - start);
    idx.resize(m);
    for (std::size_t i = 0; i < m; ++i) idx[i] = start + i;
    ad::Tape tape;
    const auto o = model.forward(tape, tape.constant(to_nchw(select_rows(raw, idx), config.crop_size)));
    std::copy(o.embedding.value().data.begin(), o.embedding.value().data.end(),
              out.embedding.data.begin() + static_cast<std::ptrdiff_t>(start * k));
    for (std::size_t i = 0; i < m; ++i)
      out.predicted[start + i] = o.prediction.value().data[i] * teacher_std + teacher_mean;
  }
  return out;
}

// ---- training ---------------------------------------------------------------

std::size_t resolve_extractor_crop(const ExtractorConfig& config, std::size_t flow_crop,
                                   const std::vector<ImageRecord>& images) {
  if (config.crop_size != 0) return config.crop_size;
  std::size_t cap = 4 * flow_crop;
  for (const auto& r : images) cap = std::min({cap, r.image.height, r.image.width});
  return std::max(cap, flow_crop);
}

ExtractorCheckpoint train_extractor(const std::vector<ImageRecord>& images, const TeacherFn& teacher,
                                    ExtractorConfig config, const std::function<void(const ExtractorEval&)>& on_eval) {
  config.validate();
  if (config.crop_size == 0) fail(ErrorKind::Config, "extractor.crop_size must be resolved before training");
  TrainConfig split_cfg;
  split_cfg.seed = config.seed;
  split_cfg.val_fraction = config.val_fraction;
  const auto [train, val] = split_for_training(images, split_cfg);
  const std::size_t s = config.crop_size;

  ExtractorCheckpoint ckpt;
  ckpt.config = config;
  {
    Rng calib_rng(derive_seed(config.seed, kCalibStream));
    const auto t = teacher(sample_crops(train, s, config.calibration_crops, calib_rng, config.dequantize));
    for (double x : t)
      if (!std::isfinite(x)) fail(ErrorKind::Numerical, "teacher LL is not finite");
    // Median and normal-consistent MAD: a handful of extreme crops must not
    // set the scale for the rest.
    const double center = median(t);
    std::vector<double> dev(t.size());
    for (std::size_t i = 0; i < t.size(); ++i) dev[i] = std::abs(t[i] - center);
    const double scale = 1.4826 * median(dev);
    ckpt.teacher_mean = center;
    // A constant teacher standardizes to zero targets.
    ckpt.teacher_std = scale > 1e-12 ? scale : 1.0;
  }
  auto standardize = [&](std::vector<double> t) {
    for (double& x : t) {
      x = (x - ckpt.teacher_mean) / ckpt.teacher_std;
      // Non-finite targets pass through so divergence is still reported.
      if (config.target_clip > 0.0 && std::isfinite(x)) x = std::clamp(x, -config.target_clip, config.target_clip);
    }
    return t;
  };

  Rng val_rng(derive_seed(config.seed, kValStream));
  const Tensor val_raw = sample_crops(val, s, config.val_crops, val_rng, config.dequantize);
  const std::vector<double> val_target = standardize(teacher(val_raw));

  Rng init_rng(derive_seed(config.seed, kInitStream));
  ckpt.model = ExtractorModel(config, init_rng);
  Rng batch_rng(derive_seed(config.seed, kBatchStream));

  auto params = ckpt.model.parameters();
  for (Tensor* p : params) p->enable_grad();
  Adam adam(config.learning_rate);
  double best = std::numeric_limits<double>::infinity();
  std::vector<Tensor> best_state;
  std::size_t stale = 0;
  double interval_loss = 0.0;
  std::size_t ok = 0;

  for (std::size_t step = 1; step <= config.max_steps; ++step) {
    const Tensor raw = sample_crops(train, s, config.batch_size, batch_rng, config.dequantize);
    const std::vector<double> target = standardize(teacher(raw));
    for (Tensor* p : params) p->zero_grad();
    try {
      ad::Tape tape;
      const auto out = ckpt.model.forward(tape, tape.constant(to_nchw(raw, s)));
      const ad::Var diff = ad::sub(out.prediction, tape.constant(Tensor({target.size()}, target)));
      const ad::Var loss = ad::mean(ad::mul(diff, diff));
      tape.backward(loss);
      if (grads_finite(params)) {
        adam.step(params);
        interval_loss += loss.value().data[0];
        ++ok;
      }
    } catch (const Error& e) {
      if (e.kind() != ErrorKind::Numerical) throw;
    }
    if (step % config.eval_interval != 0 && step != config.max_steps) continue;

    if (ok == 0) {
      fail(ErrorKind::Numerical,
           "extractor training diverged: loss was non-finite for every step up to " + std::to_string(step));
    }
    ExtractorEval rec{step, interval_loss / static_cast<double>(ok), std::numeric_limits<double>::infinity()};
    interval_loss = 0.0;
    ok = 0;
    try {
      auto pred = ckpt.predict(val_raw).predicted;
      for (double& p : pred) p = (p - ckpt.teacher_mean) / ckpt.teacher_std;
      rec.val_mse = mse(pred, val_target);
    } catch (const Error& e) {
      if (e.kind() != ErrorKind::Numerical) throw;
    }
    ckpt.history.push_back(rec);
    if (on_eval) on_eval(rec);
    if (std::isfinite(rec.val_mse) && rec.val_mse < best) {
      best = rec.val_mse;
      ckpt.best_step = step;
      best_state.clear();
      for (Tensor* p : params) best_state.push_back(*p);
      stale = 0;
    } else if (++stale >= config.patience) {
      break;
    }
  }
  if (ckpt.best_step == 0) fail(ErrorKind::Numerical, "extractor training diverged: validation MSE was never finite");
  for (std::size_t i = 0; i < params.size(); ++i) {
    *params[i] = best_state[i];
    params[i]->requires_grad = false;
    params[i]->grad.clear();
  }
  return ckpt;
}

ExtractorCheckpoint train_extractor(const std::vector<ImageRecord>& images, const FlowCheckpoint& flow,
                                    ExtractorConfig config, const std::function<void(const ExtractorEval&)>& on_eval) {
  config.crop_size = resolve_extractor_crop(config, flow.pipeline.crop_size, images);
  return train_extractor(images, flow_teacher(flow, config.crop_size, config.teacher_stride), config, on_eval);
}

// ---- persistence ------------------------------------------------------------

void write_extractor_config(const ExtractorConfig& e, KeyValues& kv, const std::string& p) {
  kv.set(p + "crop_size", std::uint64_t{e.crop_size});
  kv.set(p + "widths", join_sizes(e.widths));
  kv.set(p + "blocks_per_stage", std::uint64_t{e.blocks_per_stage});
  kv.set(p + "pre_linear_units", std::uint64_t{e.pre_linear_units});
  kv.set(p + "learning_rate", e.learning_rate);
  kv.set(p + "batch_size", std::uint64_t{e.batch_size});
  kv.set(p + "max_steps", std::uint64_t{e.max_steps});
  kv.set(p + "eval_interval", std::uint64_t{e.eval_interval});
  kv.set(p + "patience", std::uint64_t{e.patience});
  kv.set(p + "val_crops", std::uint64_t{e.val_crops});
  kv.set(p + "calibration_crops", std::uint64_t{e.calibration_crops});
  kv.set(p + "target_clip", e.target_clip);
  kv.set(p + "teacher_stride", std::uint64_t{e.teacher_stride});
  kv.set(p + "dequantize", e.dequantize);
  kv.set(p + "seed", e.seed);
  kv.set(p + "val_fraction", e.val_fraction);
}

ExtractorConfig read_extractor_config(const KeyValues& kv, const std::string& p, ExtractorConfig e) {
  auto size = [&](const char* k, std::size_t& out) {
    if (kv.has(p + k)) out = kv.get_u64(p + k);
  };
  size("crop_size", e.crop_size);
  if (kv.has(p + "widths")) e.widths = parse_sizes(kv.get(p + "widths"), p + "widths");
  size("blocks_per_stage", e.blocks_per_stage);
  size("pre_linear_units", e.pre_linear_units);
  if (kv.has(p + "learning_rate")) e.learning_rate = kv.get_double(p + "learning_rate");
  size("batch_size", e.batch_size);
  size("max_steps", e.max_steps);
  size("eval_interval", e.eval_interval);
  size("patience", e.patience);
  size("val_crops", e.val_crops);
  size("calibration_crops", e.calibration_crops);
  if (kv.has(p + "target_clip")) e.target_clip = kv.get_double(p + "target_clip");
  size("teacher_stride", e.teacher_stride);
  if (kv.has(p + "dequantize")) e.dequantize = kv.get_bool(p + "dequantize");
  if (kv.has(p + "seed")) e.seed = kv.get_u64(p + "seed");
  if (kv.has(p + "val_fraction")) e.val_fraction = kv.get_double(p + "val_fraction");
  return e;
}

Container extractor_to_container(const ExtractorCheckpoint& ckpt) {
  Container c;
  c.config.set("model.kind", "extractor");
  write_extractor_config(ckpt.config, c.config);
  c.config.set("teacher.mean", ckpt.teacher_mean);
  c.config.set("teacher.std", ckpt.teacher_std);
  c.config.set("history.best_step", std::uint64_t{ckpt.best_step});
  Tensor hist = Tensor::matrix(ckpt.history.size(), 3);
  for (std::size_t i = 0; i < ckpt.history.size(); ++i) {
    hist.at(i, 0) = static_cast<double>(ckpt.history[i].step);
    hist.at(i, 1) = ckpt.history[i].train_mse;
    hist.at(i, 2) = ckpt.history[i].val_mse;
  }
  c.arrays.emplace_back("history", std::move(hist));
  for (const auto& [name, t] : ckpt.model.named_tensors()) c.arrays.emplace_back("param." + name, Tensor(t->shape, t->data));
  return c;
}

ExtractorCheckpoint extractor_from_container(const Container& c) {
  if (c.config.find("model.kind") != "extractor") {
    fail(ErrorKind::Unsupported, "checkpoint is not an extractor (model.kind = " +
                                     c.config.find("model.kind").value_or("missing") + ")");
  }
  ExtractorCheckpoint ckpt;
  try {
    ckpt.config = read_extractor_config(c.config);
    ckpt.teacher_mean = c.config.get_double("teacher.mean");
    ckpt.teacher_std = c.config.get_double("teacher.std");
    ckpt.best_step = c.config.get_u64("history.best_step");
    Rng unused(0);
    ckpt.model = ExtractorModel(ckpt.config, unused);
  } catch (const Error& e) {
    if (e.kind() != ErrorKind::Config) throw;
    fail(ErrorKind::CorruptFile, std::string("extractor checkpoint has an invalid config: ") + e.what());
  }
  if (ckpt.config.crop_size == 0) fail(ErrorKind::CorruptFile, "extractor checkpoint has no crop size");
  for (auto& [name, t] : ckpt.model.named_tensors()) {
    const Tensor& src = c.array("param." + name);
    if (src.shape != t->shape) {
      fail(ErrorKind::CorruptFile, "extractor checkpoint array '" + name + "' has shape " + shape_str(src.shape) +
                                       ", expected " + shape_str(t->shape));
    }
    t->data = src.data;
  }
  const Tensor& hist = c.array("history");
  if (hist.rank() != 2 || hist.cols() != 3) fail(ErrorKind::CorruptFile, "extractor checkpoint history is malformed");
  for (std::size_t i = 0; i < hist.rows(); ++i)
    ckpt.history.push_back({static_cast<std::size_t>(hist.at(i, 0)), hist.at(i, 1), hist.at(i, 2)});
  return ckpt;
}

void save_extractor_checkpoint(const ExtractorCheckpoint& ckpt, const std::filesystem::path& path) {
  write_container(path, extractor_to_container(ckpt));
}

ExtractorCheckpoint load_extractor_checkpoint(const std::filesystem::path& path) {
  return extractor_from_container(read_container(path));
}

// ---- embedding --------------------------------------------------------------

std::vector<EmbeddingPoint> embed_image(const ExtractorCheckpoint& ckpt, const std::string& image_id,
                                        const Image& image, std::size_t stride, const TeacherFn* teacher) {
  const std::size_t s = ckpt.config.crop_size;
  if (stride == 0) fail(ErrorKind::Config, "embedding stride must be positive");
  if (image.channels != 3) fail(ErrorKind::Data, "image " + image_id + " is not RGB");
  if (s > image.height || s > image.width) {
    fail(ErrorKind::Data, "extractor crop " + std::to_string(s) + " is larger than image " + image_id);
  }
  const std::size_t rows = lattice_extent(image.height, s, stride), cols = lattice_extent(image.width, s, stride);
  Tensor raw = Tensor::matrix(rows * cols, s * s * 3);
  for (std::size_t i = 0; i < rows * cols; ++i) extract_crop(image, (i / cols) * stride, (i % cols) * stride, s, raw.row(i));
  const auto pred = ckpt.predict(raw);
  std::vector<double> t;
  if (teacher) t = (*teacher)(raw);
  std::vector<EmbeddingPoint> points(rows * cols);
  const std::size_t k = ckpt.config.pre_linear_units;
  for (std::size_t i = 0; i < points.size(); ++i) {
    auto& p = points[i];
    p.image_id = image_id;
    p.row = (i / cols) * stride;
    p.col = (i % cols) * stride;
    p.embedding.assign(pred.embedding.data.begin() + static_cast<std::ptrdiff_t>(i * k),
                       pred.embedding.data.begin() + static_cast<std::ptrdiff_t>((i + 1) * k));
    p.predicted_ll = pred.predicted[i];
    if (teacher) p.teacher_ll = t[i];
  }
  return points;
}

void export_scatter(const std::vector<EmbeddingPoint>& points, const std::filesystem::path& csv_path) {
  if (points.empty()) fail(ErrorKind::Data, "export_scatter: no points");
  const std::size_t k = points.front().embedding.size();
  std::vector<const EmbeddingPoint*> order;
  for (const auto& p : points) {
    if (p.embedding.size() != k) fail(ErrorKind::Data, "export_scatter: inconsistent embedding sizes");
    order.push_back(&p);
  }
  std::stable_sort(order.begin(), order.end(), [](const EmbeddingPoint* a, const EmbeddingPoint* b) {
    if (a->image_id != b->image_id) return a->image_id < b->image_id;
    if (a->row != b->row) return a->row < b->row;
    return a->col < b->col;
  });
  std::string text = "image_id,row,col";
  for (std::size_t i = 1; i <= k; ++i) text += ",e" + std::to_string(i);
  text += ",pred_ll,teacher_ll\n";
  for (const auto* p : order) {
    text += p->image_id + ',' + std::to_string(p->row) + ',' + std::to_string(p->col);
    for (double e : p->embedding) text += ',' + format_double(e);
    text += ',' + format_double(p->predicted_ll) + ',';
    if (!std::isnan(p->teacher_ll)) text += format_double(p->teacher_ll);
    text += '\n';
  }
  std::ofstream out(csv_path, std::ios::binary | std::ios::trunc);
  if (!out) fail(ErrorKind::Io, "cannot write " + csv_path.string());
  out << text;
  if (!out) fail(ErrorKind::Io, "cannot write " + csv_path.string());
}

}  // namespace flowgrain
