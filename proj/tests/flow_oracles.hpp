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

// Independent numerical oracles shared by the flow unit tests and the
// acceptance suite.

#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <span>
#include <utility>
#include <variant>
#include <vector>

#include "flows.hpp"
#include "gradcheck.hpp"
#include "rng.hpp"

namespace flowgrain::testing {

/// Central-difference Jacobian of a vector map R^d -> R^d; row i holds ∂f_i.
inline std::vector<double> numeric_jacobian(const std::function<std::vector<double>(const std::vector<double>&)>& f,
                                            std::vector<double> x, double h = 1e-5) {
  const std::size_t d = x.size();
  std::vector<double> jac(d * d);
  for (std::size_t j = 0; j < d; ++j) {
    const double x0 = x[j];
    x[j] = x0 + h;
    const auto fp = f(x);
    x[j] = x0 - h;
    const auto fm = f(x);
    x[j] = x0;
    for (std::size_t i = 0; i < d; ++i) jac[i * d + j] = (fp[i] - fm[i]) / (2.0 * h);
  }
  return jac;
}

/// log|det A| by Gaussian elimination with partial pivoting.
inline double log_abs_det(std::vector<double> a, std::size_t n) {
  double acc = 0.0;
  for (std::size_t c = 0; c < n; ++c) {
    std::size_t piv = c;
    for (std::size_t r = c + 1; r < n; ++r)
      if (std::abs(a[r * n + c]) > std::abs(a[piv * n + c])) piv = r;
    if (piv != c)
      for (std::size_t k = 0; k < n; ++k) std::swap(a[c * n + k], a[piv * n + k]);
    const double p = a[c * n + c];
    acc += std::log(std::abs(p));
    for (std::size_t r = c + 1; r < n; ++r) {
      const double m = a[r * n + c] / p;
      for (std::size_t k = c; k < n; ++k) a[r * n + k] -= m * a[c * n + k];
    }
  }
  return acc;
}

/// Autodiff Jacobian of one stage's output at a single input row.
template <class StageFn>
std::vector<double> autodiff_jacobian(StageFn&& stage_forward, const std::vector<double>& x) {
  const std::size_t d = x.size();
  std::vector<double> jac(d * d);
  for (std::size_t i = 0; i < d; ++i) {
    Tensor xt({1, d}, x);
    xt.enable_grad();
    ad::Tape tape;
    ad::Var z = stage_forward(tape, tape.leaf(xt));
    Tensor pick = Tensor::matrix(1, d);
    pick.data[i] = 1.0;
    tape.backward(ad::sum(ad::mul(z, tape.constant(pick))));
    for (std::size_t j = 0; j < d; ++j) jac[i * d + j] = xt.grad[j];
  }
  return jac;
}

/// Moves every parameter and buffer away from its initial value so that
/// oracle comparisons exercise non-trivial transforms.
inline void perturb_model(FlowModel& model, Rng& rng, double spread = 0.4) {
  for (auto& stage : model.stages()) {
    if (auto* made = std::get_if<MadeAffineFlow>(&stage)) {
      for (Tensor* t : {&made->w_mu, &made->w_alpha, &made->b_mu, &made->b_alpha})
        for (double& v : t->data) v = rng.uniform(-spread, spread);
      for (auto& b : made->biases)
        for (double& v : b.data) v = rng.uniform(-spread, spread);
    } else if (auto* bn = std::get_if<BatchNormFlow>(&stage)) {
      for (double& v : bn->log_gamma.data) v = rng.uniform(-spread, spread);
      for (double& v : bn->beta.data) v = rng.uniform(-spread, spread);
      for (double& v : bn->running_mean.data) v = rng.uniform(-spread, spread);
      for (double& v : bn->running_var.data) v = rng.uniform(0.5, 2.0);
    } else if (auto* bnaf = std::get_if<BnafFlow>(&stage)) {
      for (auto& w : bnaf->weights)
        for (double& v : w.data)
          if (v != 0.0) v += rng.uniform(-spread, spread);
      for (auto& b : bnaf->biases)
        for (double& v : b.data) v = rng.uniform(-spread, spread);
    }
  }
}

/// Eval-mode latent of a single input row.
inline std::vector<double> latent_of(const FlowModel& model, const std::vector<double>& x) {
  ad::Tape tape;
  const auto out = model.forward_eval(tape, tape.constant(Tensor({1, x.size()}, x)));
  return out.z.value().data;
}

inline double logdet_of(const FlowModel& model, const std::vector<double>& x) {
  ad::Tape tape;
  const auto out = model.forward_eval(tape, tape.constant(Tensor({1, x.size()}, x)));
  return out.logdet.value().data[0];
}

/// Relative error of the analytic log-det against log|det| of the numerical
/// Jacobian at x.
inline double logdet_relative_error(const FlowModel& model, const std::vector<double>& x) {
  const std::size_t d = x.size();
  const auto jac = numeric_jacobian([&](const std::vector<double>& v) { return latent_of(model, v); }, x);
  const double oracle = log_abs_det(jac, d);
  const double analytic = logdet_of(model, x);
  return std::abs(analytic - oracle) / std::max(std::abs(oracle), 1e-3);
}

/// Fourth-order five-point stencil gradient. Truncation error is O(h^4), so
/// a coarse step keeps rounding noise low on near-zero coordinates.
inline Tensor five_point_gradient(const std::function<double(const Tensor&)>& f, const Tensor& x, double h = 1e-3) {
  Tensor g = x;
  Tensor probe = x;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double x0 = x.data[i];
    auto at = [&](double offset) {
      probe.data[i] = x0 + offset;
      return f(probe);
    };
    g.data[i] = (-at(2 * h) + 8 * at(h) - 8 * at(-h) + at(-2 * h)) / (12 * h);
    probe.data[i] = x0;
  }
  return g;
}

/// Central differences for piecewise-smooth (relu) losses. A kink inside the
/// probe interval shows up as a one-sided slope disagreement that does not
/// shrink with the step; such coordinates are re-probed with steps 10x
/// smaller until the disagreement shrinks at least as fast as the step.
inline Tensor kink_aware_gradient(const std::function<double(const Tensor&)>& f, const Tensor& x, double h = 1e-5,
                                  double h_min = 1e-9) {
  Tensor g = x;
  Tensor probe = x;
  const double f0 = f(x);
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double x0 = x.data[i];
    auto at = [&](double offset) {
      probe.data[i] = x0 + offset;
      return f(probe);
    };
    double step = h;
    double fp = at(step), fm = at(-step);
    while (step / 10.0 >= h_min) {
      const double gap = std::abs((fp - f0) - (f0 - fm)) / step;
      const double fp2 = at(step / 10.0), fm2 = at(-step / 10.0);
      const double gap2 = std::abs((fp2 - f0) - (f0 - fm2)) / (step / 10.0);
      if (gap <= 1e-6) break;
      step /= 10.0;
      fp = fp2;
      fm = fm2;
      if (gap2 < 0.5 * gap) break;
    }
    g.data[i] = (fp - fm) / (2.0 * step);
    probe.data[i] = x0;
  }
  return g;
}

enum class GradOracle { Central, FivePoint, KinkAware };

/// Mean NLL in train mode and the maximum relative error of its parameter
/// gradient against the chosen finite-difference oracle.
inline double nll_gradient_error(FlowModel& model, const Tensor& data, GradOracle oracle = GradOracle::Central) {
  auto loss = [&]() {
    ad::Tape tape;
    const auto out = model.forward(tape, tape.constant(data), Mode::Train);
    double s = 0.0;
    for (double v : out.log_prob.value().data) s -= v;
    return s / static_cast<double>(data.rows());
  };
  auto params = model.parameters();
  for (Tensor* p : params) p->enable_grad();
  {
    ad::Tape tape;
    const auto out = model.forward(tape, tape.constant(data), Mode::Train);
    tape.backward(ad::neg(ad::mean(out.log_prob)));
  }
  double worst = 0.0;
  for (Tensor* p : params) {
    const Tensor at = *p;
    const std::function<double(const Tensor&)> f = [&](const Tensor& v) {
      p->data = v.data;
      return loss();
    };
    const Tensor fd = oracle == GradOracle::FivePoint   ? five_point_gradient(f, at)
                      : oracle == GradOracle::KinkAware ? kink_aware_gradient(f, at)
                                                        : finite_difference_gradient(f, at);
    p->data = at.data;
    worst = std::max(worst, max_relative_error(p->grad, fd.data));
  }
  return worst;
}

}  // namespace flowgrain::testing
