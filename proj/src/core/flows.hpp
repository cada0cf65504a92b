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

// Normalizing-flow density models.
//
// A FlowModel is an ordered list of stages mapping data x to a latent z with
// a standard-normal base density:
//
//   log p(x) = Σ_i log N(z_i; 0, 1) + Σ_stages logdet
//
// MAF stacks MADE-parameterized affine autoregressive flows, each followed
// (optionally) by a batch-norm flow; consecutive MADEs alternate between
// natural and reversed orderings. BNAF stacks block-masked monotonic
// networks separated by order reversals.

#pragma once

#include <cstddef>
#include <memory>
#include <span>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include "autodiff.hpp"
#include "rng.hpp"
#include "tensor.hpp"

namespace flowgrain {

enum class ModelKind { Maf, Bnaf };
enum class Activation { Relu, Tanh };
enum class OrderingPolicy { Natural, ReversedPerFlow };

const char* to_string(ModelKind kind);
const char* to_string(Activation act);
const char* to_string(OrderingPolicy policy);

struct FlowConfig {
  ModelKind kind = ModelKind::Maf;
  std::size_t input_dim = 0;
  std::size_t n_flows = 5;
  /// MAF: units per hidden layer. BNAF: hidden units per dimension.
  std::size_t hidden_width = 100;
  std::size_t hidden_layers = 2;
  Activation activation = Activation::Relu;
  bool use_batchnorm = true;  // MAF only
  OrderingPolicy ordering = OrderingPolicy::ReversedPerFlow;
  double batchnorm_eps = 1e-5;
  double batchnorm_momentum = 0.1;
  /// MAF log-scale soft clamp: alpha = c · tanh(raw / c).
  double alpha_clamp = 10.0;

  /// 5 flows, 100 relu units, batch norm.
  static FlowConfig maf_default(std::size_t input_dim);
  /// 6 flows, 12 tanh units per dimension.
  static FlowConfig bnaf_default(std::size_t input_dim);

  /// Throws ErrorKind::Config listing every violation.
  void validate() const;
};

struct MadeMasks {
  std::vector<std::size_t> input_degrees;
  std::vector<std::vector<std::size_t>> hidden_degrees;
  /// masks[l] has shape (fan_in, fan_out); the last maps the final hidden
  /// layer to the d outputs.
  std::vector<Tensor> masks;
};

/// `ordering[j]` is the position of input j in the autoregressive order.
/// Output i has no path from input j when ordering[j] >= ordering[i].
MadeMasks build_made_masks(std::size_t d, std::span<const std::size_t> hidden_widths,
                           std::span<const std::size_t> ordering);

enum class Mode { Train, Eval };

struct StageOutput {
  ad::Var y;
  ad::Var logdet;  // one entry per sample
};

class MadeAffineFlow {
 public:
  MadeAffineFlow() = default;
  MadeAffineFlow(std::size_t d, std::span<const std::size_t> hidden_widths,
                 std::vector<std::size_t> ordering, Activation activation, double alpha_clamp);

  void randomize(Rng& rng);
  StageOutput forward(ad::Tape& tape, ad::Var x) const;
  /// (mu, alpha) heads of the masked network.
  std::pair<ad::Var, ad::Var> conditioner(ad::Tape& tape, ad::Var x) const;
  Tensor invert(const Tensor& z) const;

  const std::vector<std::size_t>& ordering() const { return ordering_; }
  const MadeMasks& masks() const { return masks_; }
  void append_tensors(const std::string& prefix, std::vector<std::pair<std::string, Tensor*>>& out);
  void append_parameters(std::vector<Tensor*>& out);

  std::vector<Tensor> weights;  // hidden layers
  std::vector<Tensor> biases;
  Tensor w_mu, b_mu, w_alpha, b_alpha;

 private:
  std::vector<std::size_t> ordering_;
  MadeMasks masks_;
  Activation activation_ = Activation::Relu;
  double alpha_clamp_ = 10.0;
};

class BatchNormFlow {
 public:
  BatchNormFlow() = default;
  BatchNormFlow(std::size_t d, double eps, double momentum);

  /// Train mode normalizes with batch statistics and updates the running
  /// averages; eval mode uses the running averages and mutates nothing.
  StageOutput forward(ad::Tape& tape, ad::Var x, Mode mode);
  StageOutput forward_eval(ad::Tape& tape, ad::Var x) const;
  Tensor invert(const Tensor& y) const;

  void append_tensors(const std::string& prefix, std::vector<std::pair<std::string, Tensor*>>& out);
  void append_parameters(std::vector<Tensor*>& out);

  Tensor log_gamma, beta;
  Tensor running_mean, running_var;
  double eps = 1e-5;
  double momentum = 0.1;
};

class BnafFlow {
 public:
  BnafFlow() = default;
  /// Layer unit multipliers run 1 -> hidden... -> 1; `hidden_layers` tanh
  /// layers in between.
  BnafFlow(std::size_t d, std::size_t hidden_width, std::size_t hidden_layers);

  void randomize(Rng& rng);
  StageOutput forward(ad::Tape& tape, ad::Var x) const;

  std::size_t layer_count() const { return weights.size(); }
  void append_tensors(const std::string& prefix, std::vector<std::pair<std::string, Tensor*>>& out);
  void append_parameters(std::vector<Tensor*>& out);

  /// weights[l] has shape (d·a_in, d·a_out). Blocks above the diagonal are
  /// masked out; diagonal blocks enter as exp(weight).
  std::vector<Tensor> weights;
  std::vector<Tensor> biases;

 private:
  struct LayerStructure {
    std::size_t a_in = 1, a_out = 1;
    std::shared_ptr<Tensor> lower_mask, diag_mask;
    std::shared_ptr<const std::vector<std::size_t>> diag_indices;
  };
  std::size_t d_ = 0;
  std::vector<LayerStructure> layers_;
};

/// Reverses dimension order; |det| = 1.
class ReverseFlow {
 public:
  explicit ReverseFlow(std::size_t d = 0) : d_(d) {}
  StageOutput forward(ad::Tape& tape, ad::Var x) const;
  Tensor invert(const Tensor& y) const;

 private:
  std::size_t d_;
};

using FlowStage = std::variant<MadeAffineFlow, BatchNormFlow, BnafFlow, ReverseFlow>;

class FlowModel {
 public:
  FlowModel() = default;
  /// Randomly initialized model.
  FlowModel(const FlowConfig& config, Rng& rng);
  /// All parameters zero: MAF flows and batch norms are identities.
  static FlowModel identity(const FlowConfig& config);

  const FlowConfig& config() const { return config_; }
  std::size_t dim() const { return config_.input_dim; }

  struct Output {
    ad::Var z;
    ad::Var logdet;
    ad::Var log_prob;
  };
  /// Composes all stages in order. Train mode updates batch-norm running
  /// statistics and requires a batch of at least 2.
  Output forward(ad::Tape& tape, ad::Var x, Mode mode);
  Output forward_eval(ad::Tape& tape, ad::Var x) const;

  /// Eval-mode log-likelihood of each row of `x`. Safe to call concurrently.
  std::vector<double> log_prob(const Tensor& x) const;

  /// Sequential inverse of an MAF model in eval mode. Throws
  /// ErrorKind::Unsupported for BNAF.
  Tensor invert(const Tensor& z) const;

  std::vector<FlowStage>& stages() { return stages_; }
  const std::vector<FlowStage>& stages() const { return stages_; }

  /// Every persisted tensor (parameters and batch-norm buffers) by name.
  std::vector<std::pair<std::string, Tensor*>> named_tensors();
  std::vector<std::pair<std::string, const Tensor*>> named_tensors() const;
  std::vector<Tensor*> parameters();

 private:
  explicit FlowModel(const FlowConfig& config);
  template <class Self, class Fn>
  static Output compose(Self& self, ad::Tape& tape, ad::Var x, Fn&& stage_forward);

  FlowConfig config_;
  std::vector<FlowStage> stages_;
};

/// Sum of log N(z_i; 0, 1) per row.
ad::Var standard_normal_log_density(ad::Var z);

}  // namespace flowgrain
