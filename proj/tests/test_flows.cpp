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

#include <doctest.h>

#include <cmath>
#include <numbers>

#include "errors.hpp"
#include "flow_oracles.hpp"
#include "flows.hpp"

using namespace flowgrain;
using namespace flowgrain::testing;

namespace {

FlowConfig small_config(ModelKind kind, std::size_t d, std::size_t flows = 2) {
  FlowConfig c = kind == ModelKind::Maf ? FlowConfig::maf_default(d) : FlowConfig::bnaf_default(d);
  c.n_flows = flows;
  c.hidden_width = kind == ModelKind::Maf ? 8 : 3;
  return c;
}

std::vector<double> random_point(std::size_t d, Rng& rng) {
  std::vector<double> x(d);
  for (double& v : x) v = rng.normal();
  return x;
}

}  // namespace

TEST_CASE("config defaults and validation") {
  const auto maf = FlowConfig::maf_default(363);
  CHECK(maf.n_flows == 5);
  CHECK(maf.hidden_width == 100);
  CHECK(maf.activation == Activation::Relu);
  CHECK(maf.use_batchnorm);
  const auto bnaf = FlowConfig::bnaf_default(100);
  CHECK(bnaf.n_flows == 6);
  CHECK(bnaf.hidden_width == 12);
  CHECK(bnaf.activation == Activation::Tanh);

  FlowConfig bad = FlowConfig::bnaf_default(0);
  bad.n_flows = 0;
  bad.use_batchnorm = true;
  try {
    bad.validate();
    FAIL("expected config error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::Config);
    const std::string msg = e.what();
    CHECK(msg.find("input_dim") != std::string::npos);
    CHECK(msg.find("n_flows") != std::string::npos);
    CHECK(msg.find("batchnorm") != std::string::npos);
  }
}

TEST_CASE("MADE masks: autoregressive sparsity of every stage") {
  for (std::size_t d : {1, 3, 8}) {
    for (bool reversed : {false, true}) {
      std::vector<std::size_t> ordering(d);
      for (std::size_t j = 0; j < d; ++j) ordering[j] = reversed ? d - 1 - j : j;
      const std::vector<std::size_t> widths{7, 5};
      MadeAffineFlow flow(d, widths, ordering, Activation::Tanh, 10.0);
      Rng rng(d * 10 + reversed);
      flow.randomize(rng);
      for (Tensor* t : {&flow.w_mu, &flow.w_alpha, &flow.b_mu, &flow.b_alpha})
        for (double& v : t->data) v = rng.uniform(-1, 1);
      const auto x = random_point(d, rng);

      const auto jz = autodiff_jacobian([&](ad::Tape& t, ad::Var v) { return flow.forward(t, v).y; }, x);
      const auto jmu = autodiff_jacobian([&](ad::Tape& t, ad::Var v) { return flow.conditioner(t, v).first; }, x);
      const auto ja = autodiff_jacobian([&](ad::Tape& t, ad::Var v) { return flow.conditioner(t, v).second; }, x);
      for (std::size_t i = 0; i < d; ++i)
        for (std::size_t j = 0; j < d; ++j) {
          if (ordering[j] > ordering[i]) CHECK(std::abs(jz[i * d + j]) < 1e-12);
          if (ordering[j] >= ordering[i]) {
            CHECK(std::abs(jmu[i * d + j]) < 1e-12);
            CHECK(std::abs(ja[i * d + j]) < 1e-12);
          }
        }
      if (d == 3 && !reversed) {
        // Some permitted entries must actually be live.
        CHECK(std::abs(jmu[2 * d + 0]) > 0.0);
      }
    }
  }
}

TEST_CASE("MADE masks: d = 2 reversed ordering conditions dim 1 on dim 2") {
  const std::vector<std::size_t> widths{4};
  const std::vector<std::size_t> ordering{1, 0};
  const auto m = build_made_masks(2, widths, ordering);
  CHECK(m.input_degrees == std::vector<std::size_t>{2, 1});
  // Output 0 (degree 2) sees hidden units of degree 1, which see input 1 only.
  for (std::size_t h = 0; h < 4; ++h) {
    CHECK(m.masks[0].at(0, h) == 0.0);
    CHECK(m.masks[0].at(1, h) == 1.0);
    CHECK(m.masks[1].at(h, 0) == 1.0);
    CHECK(m.masks[1].at(h, 1) == 0.0);
  }
  const auto one = build_made_masks(1, widths, std::vector<std::size_t>{0});
  for (double v : one.masks.back().data) CHECK(v == 0.0);
  CHECK_THROWS_AS(build_made_masks(2, widths, std::vector<std::size_t>{0, 0}), Error);
}

TEST_CASE("BNAF stage sparsity and monotonicity") {
  for (std::size_t d : {1, 3, 8}) {
    BnafFlow flow(d, 3, 2);
    Rng rng(200 + d);
    flow.randomize(rng);
    const auto x = random_point(d, rng);
    const auto jz = autodiff_jacobian([&](ad::Tape& t, ad::Var v) { return flow.forward(t, v).y; }, x);
    for (std::size_t i = 0; i < d; ++i) {
      CHECK(jz[i * d + i] > 0.0);
      for (std::size_t j = i + 1; j < d; ++j) CHECK(std::abs(jz[i * d + j]) < 1e-12);
    }
  }
  BnafFlow flow(3, 4, 2);
  Rng rng(77);
  flow.randomize(rng);
  for (int probe = 0; probe < 100; ++probe) {
    auto x = random_point(3, rng);
    const std::size_t i = rng.index(3);
    auto z_of = [&](const std::vector<double>& v) {
      ad::Tape tape;
      return flow.forward(tape, tape.constant(Tensor({1, 3}, v))).y.value().data[i];
    };
    const double before = z_of(x);
    x[i] += rng.uniform(0.01, 1.0);
    CHECK(z_of(x) > before);
  }
}

TEST_CASE("BNAF scalar example: z = e^w x, logdet = w") {
  BnafFlow flow(1, 1, 0);
  REQUIRE(flow.layer_count() == 1);
  flow.weights[0].data[0] = 0.7;
  ad::Tape tape;
  const auto out = flow.forward(tape, tape.constant(Tensor({2, 1}, {3.0, -1.0})));
  CHECK(out.y.value().data[0] == doctest::Approx(std::exp(0.7) * 3.0).epsilon(1e-14));
  CHECK(out.y.value().data[1] == doctest::Approx(-std::exp(0.7)).epsilon(1e-14));
  CHECK(out.logdet.value().data[0] == doctest::Approx(0.7).epsilon(1e-14));
}

TEST_CASE("MAF closed-form affine example") {
  const std::vector<std::size_t> widths{4};
  MadeAffineFlow flow(1, widths, {0}, Activation::Relu, 10.0);
  flow.b_mu.data[0] = 1.0;
  flow.b_alpha.data[0] = 10.0 * std::atanh(std::log(2.0) / 10.0);
  ad::Tape tape;
  const auto out = flow.forward(tape, tape.constant(Tensor({1, 1}, {3.0})));
  CHECK(out.y.value().data[0] == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(out.logdet.value().data[0] == doctest::Approx(-0.6931471805599453).epsilon(1e-12));

  MadeAffineFlow zero(3, widths, {0, 1, 2}, Activation::Relu, 10.0);
  ad::Tape t2;
  const Tensor x({2, 3}, {0.5, -1, 2, 3, 0, -0.25});
  const auto id = zero.forward(t2, t2.constant(x));
  CHECK(id.y.value().data == x.data);
  for (double v : id.logdet.value().data) CHECK(v == 0.0);
}

TEST_CASE("batch-norm flow examples") {
  BatchNormFlow bn(1, 1.0, 0.1);
  bn.log_gamma.data[0] = std::log(2.0);
  bn.running_var.data[0] = 0.0;
  ad::Tape tape;
  const auto out = bn.forward_eval(tape, tape.constant(Tensor({1, 1}, {0.3})));
  CHECK(out.logdet.value().data[0] == doctest::Approx(0.6931471805599453).epsilon(1e-12));

  // Zero-mean, unit (population) variance batch with tiny eps: y ≈ x.
  BatchNormFlow unit(2, 1e-12, 0.1);
  const Tensor x({4, 2}, {1, 1, -1, -1, 1, -1, -1, 1});
  ad::Tape t2;
  const auto tr = unit.forward(t2, t2.constant(x), Mode::Train);
  for (std::size_t i = 0; i < x.size(); ++i) CHECK(std::abs(tr.y.value().data[i] - x.data[i]) < 1e-9);
  for (double v : tr.logdet.value().data) CHECK(std::abs(v) < 1e-9);
  // EMA update of running stats happened in train mode only.
  CHECK(unit.running_mean.data[0] == doctest::Approx(0.0));
  CHECK(unit.running_var.data[0] == doctest::Approx(0.9 + 0.1));
  const auto frozen = unit.running_var.data;
  ad::Tape t3;
  unit.forward(t3, t3.constant(Tensor({2, 2}, {5, 5, 7, 9})), Mode::Eval);
  CHECK(unit.running_var.data == frozen);

  ad::Tape t4;
  CHECK_THROWS_AS(unit.forward(t4, t4.constant(Tensor({1, 2}, {0, 0})), Mode::Train), Error);
}

TEST_CASE("batch-norm eval logdet equals the diagonal Jacobian") {
  FlowConfig c = small_config(ModelKind::Maf, 4, 1);
  Rng rng(8);
  FlowModel model(c, rng);
  perturb_model(model, rng);
  const auto& bn = std::get<BatchNormFlow>(model.stages()[1]);
  for (int t = 0; t < 10; ++t) {
    const auto x = random_point(4, rng);
    auto f = [&](const std::vector<double>& v) {
      ad::Tape tape;
      return bn.forward_eval(tape, tape.constant(Tensor({1, 4}, v))).y.value().data;
    };
    const auto jac = numeric_jacobian(f, x);
    ad::Tape tape;
    const double analytic = bn.forward_eval(tape, tape.constant(Tensor({1, 4}, x))).logdet.value().data[0];
    CHECK(std::abs(analytic - log_abs_det(jac, 4)) < 1e-6);
  }
}

TEST_CASE("identity-initialized model densities") {
  FlowConfig c2 = FlowConfig::maf_default(2);
  c2.use_batchnorm = false;
  const auto m2 = FlowModel::identity(c2);
  CHECK(m2.log_prob(Tensor::matrix(1, 2))[0] == doctest::Approx(-std::log(2.0 * std::numbers::pi)).epsilon(1e-14));
  CHECK(m2.log_prob(Tensor::matrix(1, 2))[0] == doctest::Approx(-1.8379).epsilon(1e-4));

  FlowConfig c363 = FlowConfig::maf_default(363);
  c363.use_batchnorm = false;
  c363.n_flows = 1;
  c363.hidden_width = 16;
  const auto m363 = FlowModel::identity(c363);
  const double lp = m363.log_prob(Tensor::matrix(1, 363))[0];
  CHECK(lp == doctest::Approx(-181.5 * std::log(2.0 * std::numbers::pi)).epsilon(1e-14));
  CHECK(lp == doctest::Approx(-333.57).epsilon(1e-4));

  const Tensor z({3, 2}, {0.1, -2, 3, 0.5, -0.7, 1.1});
  CHECK(m2.invert(z).data == z.data);
}

TEST_CASE("log-det matches the numerical Jacobian for both kinds") {
  for (ModelKind kind : {ModelKind::Maf, ModelKind::Bnaf}) {
    for (std::size_t d : {2, 3, 5}) {
      for (int draw = 0; draw < 20; ++draw) {
        Rng rng(1000 * d + draw + (kind == ModelKind::Bnaf ? 500 : 0));
        FlowModel model(small_config(kind, d), rng);
        perturb_model(model, rng);
        const auto x = random_point(d, rng);
        CHECK(logdet_relative_error(model, x) < 1e-4);
      }
    }
  }
}

TEST_CASE("mean NLL gradient matches finite differences") {
  Rng rng(31);
  Tensor data = Tensor::matrix(16, 3);
  for (std::size_t r = 0; r < 16; ++r) {
    const double a = rng.normal();
    data.at(r, 0) = a;
    data.at(r, 1) = 0.5 * a * a + 0.3 * rng.normal();
    data.at(r, 2) = std::sin(a) + 0.2 * rng.normal();
  }
  for (ModelKind kind : {ModelKind::Maf, ModelKind::Bnaf}) {
    FlowModel model(small_config(kind, 3), rng);
    perturb_model(model, rng);
    CHECK(nll_gradient_error(model, data) < 1e-4);
  }
}

TEST_CASE("MAF inversion round trip; BNAF inversion unsupported") {
  Rng rng(55);
  FlowModel maf(small_config(ModelKind::Maf, 4, 3), rng);
  perturb_model(maf, rng);
  Tensor z = Tensor::matrix(100, 4);
  for (double& v : z.data) v = rng.normal();
  const Tensor x = maf.invert(z);
  ad::Tape tape;
  const auto back = maf.forward_eval(tape, tape.constant(x)).z.value();
  double worst = 0.0;
  for (std::size_t i = 0; i < z.size(); ++i) worst = std::max(worst, std::abs(back.data[i] - z.data[i]));
  CHECK(worst < 1e-8);

  FlowModel bnaf(small_config(ModelKind::Bnaf, 4), rng);
  try {
    bnaf.invert(z);
    FAIL("expected unsupported error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::Unsupported);
  }
}

TEST_CASE("log_prob is batch independent and shape checked") {
  Rng rng(12);
  for (ModelKind kind : {ModelKind::Maf, ModelKind::Bnaf}) {
    FlowModel model(small_config(kind, 3), rng);
    perturb_model(model, rng);
    Tensor x = Tensor::matrix(700, 3);
    for (double& v : x.data) v = rng.normal();
    const auto all = model.log_prob(x);
    for (std::size_t r : {0, 511, 512, 699}) {
      const std::vector<std::size_t> one{r};
      CHECK(model.log_prob(select_rows(x, one))[0] == all[r]);
    }
    CHECK_THROWS_AS(model.log_prob(Tensor::matrix(2, 4)), Error);
  }
}

TEST_CASE("named tensors cover parameters and buffers") {
  Rng rng(2);
  FlowModel maf(small_config(ModelKind::Maf, 3, 2), rng);
  const auto named = maf.named_tensors();
  // Per MADE: 2 hidden (w, b) + 4 heads; per BN: 4.
  CHECK(named.size() == 2 * (4 + 4 + 4));
  CHECK(maf.parameters().size() == 2 * (8 + 2));
  FlowModel bnaf(small_config(ModelKind::Bnaf, 3, 2), rng);
  CHECK(bnaf.named_tensors().size() == 2 * 3 * 2);
  CHECK(bnaf.stages().size() == 3);
}
