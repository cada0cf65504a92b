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

#include "flows.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>

#include "errors.hpp"

namespace flowgrain {
namespace {

// Parameters enter eval-mode graphs as leaves without copying the model; the
// eval path never writes through them.
ad::Var param(ad::Tape& tape, const Tensor& t) { return tape.leaf(const_cast<Tensor&>(t)); }

void fill_uniform(Tensor& t, Rng& rng, double bound) {
  for (double& v : t.data) v = rng.uniform(-bound, bound);
}

constexpr std::size_t kEvalChunk = 512;

}  // namespace

const char* to_string(ModelKind kind) { return kind == ModelKind::Maf ? "maf" : "bnaf"; }
const char* to_string(Activation act) { return act == Activation::Relu ? "relu" : "tanh"; }
const char* to_string(OrderingPolicy policy) {
  return policy == OrderingPolicy::Natural ? "natural" : "reversed";
}

FlowConfig FlowConfig::maf_default(std::size_t input_dim) {
  FlowConfig c;
  c.kind = ModelKind::Maf;
  c.input_dim = input_dim;
  c.n_flows = 5;
  c.hidden_width = 100;
  c.hidden_layers = 2;
  c.activation = Activation::Relu;
  c.use_batchnorm = true;
  return c;
}

FlowConfig FlowConfig::bnaf_default(std::size_t input_dim) {
  FlowConfig c;
  c.kind = ModelKind::Bnaf;
  c.input_dim = input_dim;
  c.n_flows = 6;
  c.hidden_width = 12;
  c.hidden_layers = 2;
  c.activation = Activation::Tanh;
  c.use_batchnorm = false;
  return c;
}

void FlowConfig::validate() const {
  std::vector<std::string> problems;
  if (input_dim < 1) problems.push_back("flow.input_dim must be >= 1");
  if (n_flows < 1) problems.push_back("flow.n_flows must be >= 1");
  if (hidden_width < 1) problems.push_back("flow.hidden_width must be >= 1");
  if (kind == ModelKind::Maf && hidden_layers < 1) problems.push_back("flow.hidden_layers must be >= 1 for MAF");
  if (kind == ModelKind::Bnaf && activation != Activation::Tanh)
    problems.push_back("flow.activation must be tanh for BNAF");
  if (kind == ModelKind::Bnaf && use_batchnorm) problems.push_back("flow.batchnorm is MAF-only");
  if (!(batchnorm_eps > 0.0)) problems.push_back("flow.batchnorm_eps must be > 0");
  if (!(batchnorm_momentum > 0.0 && batchnorm_momentum <= 1.0))
    problems.push_back("flow.batchnorm_momentum must be in (0, 1]");
  if (!(alpha_clamp > 0.0)) problems.push_back("flow.alpha_clamp must be > 0");
  if (!problems.empty()) {
    std::string msg = "invalid flow config:";
    for (const auto& p : problems) msg += " " + p + ";";
    fail(ErrorKind::Config, msg);
  }
}

// ---- MADE masks -------------------------------------------------------------

MadeMasks build_made_masks(std::size_t d, std::span<const std::size_t> hidden_widths,
                           std::span<const std::size_t> ordering) {
  if (d < 1) fail(ErrorKind::Config, "build_made_masks: d must be >= 1");
  if (ordering.size() != d) fail(ErrorKind::Config, "build_made_masks: ordering must have d entries");
  {
    std::vector<std::size_t> sorted(ordering.begin(), ordering.end());
    std::sort(sorted.begin(), sorted.end());
    for (std::size_t i = 0; i < d; ++i)
      if (sorted[i] != i) fail(ErrorKind::Config, "build_made_masks: ordering is not a permutation");
  }
  MadeMasks m;
  m.input_degrees.resize(d);
  for (std::size_t j = 0; j < d; ++j) m.input_degrees[j] = ordering[j] + 1;

  const std::size_t cycle = std::max<std::size_t>(d - 1, 1);
  std::vector<std::size_t> prev = m.input_degrees;
  for (std::size_t width : hidden_widths) {
    if (width < 1) fail(ErrorKind::Config, "build_made_masks: hidden widths must be >= 1");
    std::vector<std::size_t> deg(width);
    for (std::size_t k = 0; k < width; ++k) deg[k] = k % cycle + 1;
    Tensor mask({prev.size(), width});
    for (std::size_t r = 0; r < prev.size(); ++r)
      for (std::size_t c = 0; c < width; ++c) mask.at(r, c) = deg[c] >= prev[r] ? 1.0 : 0.0;
    m.masks.push_back(std::move(mask));
    m.hidden_degrees.push_back(deg);
    prev = std::move(deg);
  }
  Tensor out({prev.size(), d});
  for (std::size_t r = 0; r < prev.size(); ++r)
    for (std::size_t c = 0; c < d; ++c) out.at(r, c) = m.input_degrees[c] > prev[r] ? 1.0 : 0.0;
  m.masks.push_back(std::move(out));
  return m;
}

// ---- MADE affine flow -------------------------------------------------------

MadeAffineFlow::MadeAffineFlow(std::size_t d, std::span<const std::size_t> hidden_widths,
                               std::vector<std::size_t> ordering, Activation activation,
                               double alpha_clamp)
    : ordering_(std::move(ordering)),
      masks_(build_made_masks(d, hidden_widths, ordering_)),
      activation_(activation),
      alpha_clamp_(alpha_clamp) {
  std::size_t fan_in = d;
  for (std::size_t width : hidden_widths) {
    weights.emplace_back(Shape{fan_in, width});
    biases.emplace_back(Shape{width});
    fan_in = width;
  }
  w_mu = Tensor({fan_in, d});
  w_alpha = Tensor({fan_in, d});
  b_mu = Tensor({d});
  b_alpha = Tensor({d});
}

void MadeAffineFlow::randomize(Rng& rng) {
  for (auto& w : weights) fill_uniform(w, rng, 1.0 / std::sqrt(static_cast<double>(w.rows())));
  const double head = 0.1 / std::sqrt(static_cast<double>(w_mu.rows()));
  fill_uniform(w_mu, rng, head);
  fill_uniform(w_alpha, rng, head);
}

std::pair<ad::Var, ad::Var> MadeAffineFlow::conditioner(ad::Tape& tape, ad::Var x) const {
  ad::Var h = x;
  for (std::size_t l = 0; l < weights.size(); ++l) {
    h = ad::add_row(ad::masked_matmul(h, param(tape, weights[l]), tape.constant(masks_.masks[l])),
                    param(tape, biases[l]));
    h = activation_ == Activation::Relu ? ad::relu(h) : ad::tanh(h);
  }
  const Tensor& out_mask = masks_.masks.back();
  ad::Var mu = ad::add_row(ad::masked_matmul(h, param(tape, w_mu), tape.constant(out_mask)),
                           param(tape, b_mu));
  ad::Var raw = ad::add_row(ad::masked_matmul(h, param(tape, w_alpha), tape.constant(out_mask)),
                            param(tape, b_alpha));
  ad::Var alpha = ad::scale(ad::tanh(ad::scale(raw, 1.0 / alpha_clamp_)), alpha_clamp_);
  return {mu, alpha};
}

StageOutput MadeAffineFlow::forward(ad::Tape& tape, ad::Var x) const {
  auto [mu, alpha] = conditioner(tape, x);
  ad::Var z = ad::mul(ad::sub(x, mu), ad::exp(ad::neg(alpha)));
  return {z, ad::neg(ad::sum_axis(alpha, 1))};
}

Tensor MadeAffineFlow::invert(const Tensor& z) const {
  const std::size_t n = z.rows(), d = z.cols();
  std::vector<std::size_t> by_position(d);
  for (std::size_t j = 0; j < d; ++j) by_position[ordering_[j]] = j;
  Tensor x = Tensor::matrix(n, d);
  for (std::size_t p = 0; p < d; ++p) {
    ad::Tape tape;
    auto [mu, alpha] = conditioner(tape, tape.constant(x));
    const std::size_t i = by_position[p];
    for (std::size_t r = 0; r < n; ++r) {
      x.at(r, i) = z.at(r, i) * std::exp(alpha.value().at(r, i)) + mu.value().at(r, i);
    }
  }
  return x;
}

void MadeAffineFlow::append_tensors(const std::string& prefix,
                                    std::vector<std::pair<std::string, Tensor*>>& out) {
  for (std::size_t l = 0; l < weights.size(); ++l) {
    out.emplace_back(prefix + "w" + std::to_string(l), &weights[l]);
    out.emplace_back(prefix + "b" + std::to_string(l), &biases[l]);
  }
  out.emplace_back(prefix + "w_mu", &w_mu);
  out.emplace_back(prefix + "b_mu", &b_mu);
  out.emplace_back(prefix + "w_alpha", &w_alpha);
  out.emplace_back(prefix + "b_alpha", &b_alpha);
}

void MadeAffineFlow::append_parameters(std::vector<Tensor*>& out) {
  for (std::size_t l = 0; l < weights.size(); ++l) {
    out.push_back(&weights[l]);
    out.push_back(&biases[l]);
  }
  out.insert(out.end(), {&w_mu, &b_mu, &w_alpha, &b_alpha});
}

// ---- batch norm flow --------------------------------------------------------

BatchNormFlow::BatchNormFlow(std::size_t d, double eps_, double momentum_)
    : log_gamma({d}), beta({d}), running_mean({d}), running_var({d}, 1.0), eps(eps_), momentum(momentum_) {}

StageOutput BatchNormFlow::forward(ad::Tape& tape, ad::Var x, Mode mode) {
  if (mode == Mode::Eval) return forward_eval(tape, x);
  const std::size_t n = x.value().rows(), d = x.value().cols();
  if (n < 2) fail(ErrorKind::Config, "batch-norm flow: train mode needs a batch of at least 2");
  ad::Var m = ad::mean_axis(x, 0);
  ad::Var xc = ad::add_row(x, ad::neg(m));
  ad::Var v = ad::mean_axis(ad::mul(xc, xc), 0);
  ad::Var log_var = ad::log(ad::add_scalar(v, eps));
  ad::Var inv_std = ad::exp(ad::scale(log_var, -0.5));
  ad::Var lg = tape.leaf(log_gamma);
  ad::Var y = ad::add_row(ad::mul_row(ad::mul_row(xc, inv_std), ad::exp(lg)), tape.leaf(beta));
  ad::Var per_dim = ad::sub(lg, ad::scale(log_var, 0.5));
  ad::Var logdet = ad::sum_axis(ad::add_row(tape.constant(Tensor::matrix(n, d)), per_dim), 1);

  const auto& bm = m.value().data;
  const auto& bv = v.value().data;
  for (std::size_t i = 0; i < d; ++i) {
    running_mean.data[i] = (1.0 - momentum) * running_mean.data[i] + momentum * bm[i];
    running_var.data[i] = (1.0 - momentum) * running_var.data[i] + momentum * bv[i];
  }
  return {y, logdet};
}

StageOutput BatchNormFlow::forward_eval(ad::Tape& tape, ad::Var x) const {
  const std::size_t n = x.value().rows(), d = x.value().cols();
  Tensor neg_mean({d}), inv_std({d}), half_log_var({d});
  for (std::size_t i = 0; i < d; ++i) {
    neg_mean.data[i] = -running_mean.data[i];
    const double lv = std::log(running_var.data[i] + eps);
    inv_std.data[i] = std::exp(-0.5 * lv);
    half_log_var.data[i] = 0.5 * lv;
  }
  ad::Var lg = param(tape, log_gamma);
  ad::Var xn = ad::mul_row(ad::add_row(x, tape.constant(neg_mean)), tape.constant(inv_std));
  ad::Var y = ad::add_row(ad::mul_row(xn, ad::exp(lg)), param(tape, beta));
  ad::Var per_dim = ad::sub(lg, tape.constant(half_log_var));
  ad::Var logdet = ad::sum_axis(ad::add_row(tape.constant(Tensor::matrix(n, d)), per_dim), 1);
  return {y, logdet};
}

Tensor BatchNormFlow::invert(const Tensor& y) const {
  Tensor x(y.shape);
  const std::size_t d = y.cols();
  for (std::size_t r = 0; r < y.rows(); ++r)
    for (std::size_t i = 0; i < d; ++i) {
      const double sd = std::exp(0.5 * std::log(running_var.data[i] + eps));
      x.at(r, i) = (y.at(r, i) - beta.data[i]) * std::exp(-log_gamma.data[i]) * sd + running_mean.data[i];
    }
  return x;
}

void BatchNormFlow::append_tensors(const std::string& prefix,
                                   std::vector<std::pair<std::string, Tensor*>>& out) {
  out.emplace_back(prefix + "log_gamma", &log_gamma);
  out.emplace_back(prefix + "beta", &beta);
  out.emplace_back(prefix + "running_mean", &running_mean);
  out.emplace_back(prefix + "running_var", &running_var);
}

void BatchNormFlow::append_parameters(std::vector<Tensor*>& out) {
  out.push_back(&log_gamma);
  out.push_back(&beta);
}

// ---- BNAF -------------------------------------------------------------------

BnafFlow::BnafFlow(std::size_t d, std::size_t hidden_width, std::size_t hidden_layers) : d_(d) {
  std::vector<std::size_t> mult{1};
  for (std::size_t l = 0; l < hidden_layers; ++l) mult.push_back(hidden_width);
  mult.push_back(1);
  for (std::size_t l = 0; l + 1 < mult.size(); ++l) {
    LayerStructure s;
    s.a_in = mult[l];
    s.a_out = mult[l + 1];
    const std::size_t rows = d * s.a_in, cols = d * s.a_out;
    s.lower_mask = std::make_shared<Tensor>(Shape{rows, cols});
    s.diag_mask = std::make_shared<Tensor>(Shape{rows, cols});
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t c = 0; c < cols; ++c) {
        const std::size_t bi = r / s.a_in, bo = c / s.a_out;
        s.lower_mask->at(r, c) = bi < bo ? 1.0 : 0.0;
        s.diag_mask->at(r, c) = bi == bo ? 1.0 : 0.0;
      }
    auto idx = std::make_shared<std::vector<std::size_t>>();
    idx->reserve(d * s.a_out * s.a_in);
    for (std::size_t i = 0; i < d; ++i)
      for (std::size_t q = 0; q < s.a_out; ++q)
        for (std::size_t p = 0; p < s.a_in; ++p) idx->push_back((i * s.a_in + p) * cols + i * s.a_out + q);
    s.diag_indices = std::move(idx);
    layers_.push_back(std::move(s));
    weights.emplace_back(Shape{rows, cols});
    biases.emplace_back(Shape{cols});
  }
}

void BnafFlow::randomize(Rng& rng) {
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    const LayerStructure& s = layers_[l];
    Tensor& w = weights[l];
    const double off = 0.1 / std::sqrt(static_cast<double>(d_ * s.a_in));
    for (std::size_t i = 0; i < w.size(); ++i) {
      if (s.lower_mask->data[i] != 0.0) {
        w.data[i] = rng.uniform(-off, off);
      } else if (s.diag_mask->data[i] != 0.0) {
        w.data[i] = -std::log(static_cast<double>(s.a_in)) + rng.uniform(-0.3, 0.3);
      }
    }
    if (l + 1 < layers_.size()) fill_uniform(biases[l], rng, 0.5);
  }
}

StageOutput BnafFlow::forward(ad::Tape& tape, ad::Var x) const {
  const std::size_t n = x.value().rows();
  ad::Var h = x;
  ad::Var logv = tape.constant(Tensor({n, d_, 1}));
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    const LayerStructure& s = layers_[l];
    ad::Var w = param(tape, weights[l]);
    ad::Var eff = ad::add(ad::mul(w, tape.constant(*s.lower_mask)),
                          ad::mul(ad::exp(w), tape.constant(*s.diag_mask)));
    ad::Var pre = ad::add_row(ad::matmul(h, eff), param(tape, biases[l]));
    ad::Var log_diag = ad::gather(w, s.diag_indices, {d_, s.a_out, s.a_in});
    logv = ad::block_log_matvec(log_diag, logv);
    if (l + 1 < layers_.size()) {
      logv = ad::add(logv, ad::reshape(ad::tanh_logderiv(pre), {n, d_, s.a_out}));
      h = ad::tanh(pre);
    } else {
      h = pre;
    }
  }
  return {h, ad::sum_axis(ad::reshape(logv, {n, d_}), 1)};
}

void BnafFlow::append_tensors(const std::string& prefix,
                              std::vector<std::pair<std::string, Tensor*>>& out) {
  for (std::size_t l = 0; l < weights.size(); ++l) {
    out.emplace_back(prefix + "w" + std::to_string(l), &weights[l]);
    out.emplace_back(prefix + "b" + std::to_string(l), &biases[l]);
  }
}

void BnafFlow::append_parameters(std::vector<Tensor*>& out) {
  for (std::size_t l = 0; l < weights.size(); ++l) {
    out.push_back(&weights[l]);
    out.push_back(&biases[l]);
  }
}

// ---- reverse ----------------------------------------------------------------

StageOutput ReverseFlow::forward(ad::Tape& tape, ad::Var x) const {
  const std::size_t n = x.value().rows();
  auto idx = std::make_shared<std::vector<std::size_t>>(n * d_);
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t j = 0; j < d_; ++j) (*idx)[r * d_ + j] = r * d_ + (d_ - 1 - j);
  return {ad::gather(x, std::move(idx), {n, d_}), tape.constant(Tensor({n}))};
}

Tensor ReverseFlow::invert(const Tensor& y) const {
  Tensor x(y.shape);
  for (std::size_t r = 0; r < y.rows(); ++r)
    for (std::size_t j = 0; j < d_; ++j) x.at(r, j) = y.at(r, d_ - 1 - j);
  return x;
}

// ---- model ------------------------------------------------------------------

ad::Var standard_normal_log_density(ad::Var z) {
  const double d = static_cast<double>(z.value().cols());
  return ad::add_scalar(ad::scale(ad::sum_axis(ad::mul(z, z), 1), -0.5),
                        -0.5 * d * std::log(2.0 * std::numbers::pi));
}

FlowModel::FlowModel(const FlowConfig& config) : config_(config) {
  config_.validate();
  const std::size_t d = config_.input_dim;
  for (std::size_t f = 0; f < config_.n_flows; ++f) {
    const bool reversed = config_.ordering == OrderingPolicy::ReversedPerFlow && f % 2 == 1;
    if (config_.kind == ModelKind::Maf) {
      std::vector<std::size_t> ordering(d);
      for (std::size_t j = 0; j < d; ++j) ordering[j] = reversed ? d - 1 - j : j;
      std::vector<std::size_t> widths(config_.hidden_layers, config_.hidden_width);
      stages_.emplace_back(MadeAffineFlow(d, widths, std::move(ordering), config_.activation,
                                          config_.alpha_clamp));
      if (config_.use_batchnorm) {
        stages_.emplace_back(BatchNormFlow(d, config_.batchnorm_eps, config_.batchnorm_momentum));
      }
    } else {
      if (f > 0 && config_.ordering == OrderingPolicy::ReversedPerFlow) stages_.emplace_back(ReverseFlow(d));
      stages_.emplace_back(BnafFlow(d, config_.hidden_width, config_.hidden_layers));
    }
  }
}

FlowModel::FlowModel(const FlowConfig& config, Rng& rng) : FlowModel(config) {
  for (auto& stage : stages_) {
    if (auto* made = std::get_if<MadeAffineFlow>(&stage)) made->randomize(rng);
    if (auto* bnaf = std::get_if<BnafFlow>(&stage)) bnaf->randomize(rng);
  }
}

FlowModel FlowModel::identity(const FlowConfig& config) { return FlowModel(config); }

template <class Self, class Fn>
FlowModel::Output FlowModel::compose(Self& self, ad::Tape& tape, ad::Var x, Fn&& stage_forward) {
  const std::size_t n = x.value().rows();
  if (x.value().rank() != 2 || x.value().cols() != self.config_.input_dim) {
    fail(ErrorKind::ShapeMismatch, "flow model: input " + shape_str(x.value().shape) +
                                       " does not have width " + std::to_string(self.config_.input_dim));
  }
  ad::Var h = x;
  ad::Var logdet = tape.constant(Tensor({n}));
  for (std::size_t s = 0; s < self.stages_.size(); ++s) {
    try {
      StageOutput out = stage_forward(self.stages_[s]);
      h = out.y;
      logdet = ad::add(logdet, out.logdet);
    } catch (const Error& e) {
      if (e.kind() != ErrorKind::Numerical) throw;
      fail(ErrorKind::Numerical, "flow stage " + std::to_string(s) + ": " + e.what());
    }
    (void)s;
  }
  ad::Var lp = ad::add(standard_normal_log_density(h), logdet);
  return {h, logdet, lp};
}

FlowModel::Output FlowModel::forward(ad::Tape& tape, ad::Var x, Mode mode) {
  ad::Var cur = x;
  return compose(*this, tape, x, [&](FlowStage& stage) -> StageOutput {
    StageOutput out = std::visit(
        [&](auto& st) -> StageOutput {
          using T = std::decay_t<decltype(st)>;
          if constexpr (std::is_same_v<T, BatchNormFlow>) {
            return st.forward(tape, cur, mode);
          } else {
            return st.forward(tape, cur);
          }
        },
        stage);
    cur = out.y;
    return out;
  });
}

FlowModel::Output FlowModel::forward_eval(ad::Tape& tape, ad::Var x) const {
  ad::Var cur = x;
  return compose(*this, tape, x, [&](const FlowStage& stage) -> StageOutput {
    StageOutput out = std::visit(
        [&](const auto& st) -> StageOutput {
          using T = std::decay_t<decltype(st)>;
          if constexpr (std::is_same_v<T, BatchNormFlow>) {
            return st.forward_eval(tape, cur);
          } else {
            return st.forward(tape, cur);
          }
        },
        stage);
    cur = out.y;
    return out;
  });
}

std::vector<double> FlowModel::log_prob(const Tensor& x) const {
  if (x.rank() != 2) fail(ErrorKind::ShapeMismatch, "log_prob: expected a batch matrix");
  std::vector<double> out;
  out.reserve(x.rows());
  for (std::size_t start = 0; start < x.rows(); start += kEvalChunk) {
    const std::size_t count = std::min(kEvalChunk, x.rows() - start);
    std::vector<std::size_t> rows(count);
    std::iota(rows.begin(), rows.end(), start);
    ad::Tape tape;
    const Output o = forward_eval(tape, tape.constant(select_rows(x, rows)));
    const auto& lp = o.log_prob.value().data;
    out.insert(out.end(), lp.begin(), lp.end());
  }
  return out;
}

Tensor FlowModel::invert(const Tensor& z) const {
  if (config_.kind != ModelKind::Maf) {
    fail(ErrorKind::Unsupported, "invert: BNAF has no closed-form inverse");
  }
  if (z.rank() != 2 || z.cols() != config_.input_dim) {
    fail(ErrorKind::ShapeMismatch, "invert: latent batch " + shape_str(z.shape) + " has wrong width");
  }
  Tensor cur = z;
  for (std::size_t s = stages_.size(); s-- > 0;) {
    cur = std::visit(
        [&](const auto& st) -> Tensor {
          using T = std::decay_t<decltype(st)>;
          if constexpr (std::is_same_v<T, BnafFlow>) {
            fail(ErrorKind::Unsupported, "invert: BNAF has no closed-form inverse");
          } else {
            return st.invert(cur);
          }
        },
        stages_[s]);
  }
  return cur;
}

std::vector<std::pair<std::string, Tensor*>> FlowModel::named_tensors() {
  std::vector<std::pair<std::string, Tensor*>> out;
  for (std::size_t s = 0; s < stages_.size(); ++s) {
    const std::string prefix = "stage" + std::to_string(s) + ".";
    std::visit(
        [&](auto& st) {
          using T = std::decay_t<decltype(st)>;
          if constexpr (!std::is_same_v<T, ReverseFlow>) st.append_tensors(prefix, out);
        },
        stages_[s]);
  }
  return out;
}

std::vector<std::pair<std::string, const Tensor*>> FlowModel::named_tensors() const {
  std::vector<std::pair<std::string, const Tensor*>> out;
  for (auto& [name, t] : const_cast<FlowModel*>(this)->named_tensors()) out.emplace_back(std::move(name), t);
  return out;
}

std::vector<Tensor*> FlowModel::parameters() {
  std::vector<Tensor*> out;
  for (auto& stage : stages_) {
    std::visit(
        [&](auto& st) {
          using T = std::decay_t<decltype(st)>;
          if constexpr (!std::is_same_v<T, ReverseFlow>) st.append_parameters(out);
        },
        stage);
  }
  return out;
}

}  // namespace flowgrain
