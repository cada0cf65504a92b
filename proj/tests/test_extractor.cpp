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

#include <algorithm>
#include <cmath>

#include "errors.hpp"
#include "extractor.hpp"
#include "flow_oracles.hpp"
#include "gradcheck.hpp"
#include "temp_dir.hpp"

using namespace flowgrain;
using namespace flowgrain::testing;

namespace {

ExtractorConfig tiny_config() {
  ExtractorConfig e;
  e.crop_size = 8;
  e.widths = {4, 6};
  e.blocks_per_stage = 1;
  e.batch_size = 16;
  e.max_steps = 200;
  e.eval_interval = 25;
  e.patience = 4;
  e.val_crops = 64;
  e.calibration_crops = 128;
  e.learning_rate = 3e-3;
  e.seed = 11;
  return e;
}

// Images whose local brightness varies smoothly so crop means differ.
std::vector<ImageRecord> gradient_images(std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<ImageRecord> out;
  for (std::size_t i = 0; i < n; ++i) {
    ImageRecord r;
    r.id = "img" + std::to_string(i);
    r.split = i + 1 == n ? Split::Val : Split::Train;
    r.image = Image(24, 24, 3);
    const double fy = rng.uniform(0.05, 0.3), fx = rng.uniform(0.05, 0.3);
    for (std::size_t y = 0; y < 24; ++y)
      for (std::size_t x = 0; x < 24; ++x)
        for (std::size_t c = 0; c < 3; ++c) {
          const double v = 128 + 100 * std::sin(fy * y + fx * x + c) + rng.uniform(-10, 10);
          r.image.at(y, x, c) = static_cast<std::uint8_t>(std::clamp(v, 0.0, 255.0));
        }
    out.push_back(std::move(r));
  }
  return out;
}

std::vector<double> crop_means(const Tensor& raw) {
  std::vector<double> out(raw.rows());
  for (std::size_t r = 0; r < raw.rows(); ++r) {
    double s = 0.0;
    for (double v : raw.row(r)) s += v;
    out[r] = s / static_cast<double>(raw.cols());
  }
  return out;
}

double pearson(const std::vector<double>& a, const std::vector<double>& b) {
  double ma = 0, mb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) ma += a[i], mb += b[i];
  ma /= a.size();
  mb /= b.size();
  double sab = 0, saa = 0, sbb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    sab += (a[i] - ma) * (b[i] - mb);
    saa += (a[i] - ma) * (a[i] - ma);
    sbb += (b[i] - mb) * (b[i] - mb);
  }
  return sab / std::sqrt(saa * sbb);
}

Tensor random_crops(std::size_t n, std::size_t s, std::uint64_t seed) {
  Rng rng(seed);
  Tensor t = Tensor::matrix(n, s * s * 3);
  for (double& v : t.data) v = (std::floor(rng.uniform() * 256.0) + 0.5) / 256.0;
  return t;
}

}  // namespace

TEST_CASE("extractor config validation lists every violation") {
  ExtractorConfig e;
  e.widths = {};
  e.pre_linear_units = 0;
  e.patience = 0;
  e.target_clip = -1.0;
  try {
    e.validate();
    FAIL("expected config error");
  } catch (const Error& err) {
    CHECK(err.kind() == ErrorKind::Config);
    const std::string msg = err.what();
    CHECK(msg.find("widths") != std::string::npos);
    CHECK(msg.find("pre_linear_units") != std::string::npos);
    CHECK(msg.find("patience") != std::string::npos);
    CHECK(msg.find("target_clip") != std::string::npos);
  }
  CHECK(ExtractorConfig{}.pre_linear_units == 3);
}

TEST_CASE("extractor forward shapes and loss gradient") {
  ExtractorConfig cfg = tiny_config();
  cfg.crop_size = 6;
  cfg.widths = {2, 3};
  Rng rng(2);
  ExtractorModel model(cfg, rng);
  // Wider random weights so the gradient check exercises every path.
  for (auto& [name, t] : model.named_tensors())
    for (double& v : t->data) v += rng.uniform(-0.3, 0.3);

  Tensor x({3, 3, 6, 6});
  for (double& v : x.data) v = rng.uniform(-1, 1);
  const Tensor target = Tensor::vector({0.3, -1.0, 0.7});
  auto loss_of = [&]() {
    ad::Tape tape;
    const auto out = model.forward(tape, tape.constant(x));
    CHECK(out.embedding.shape() == Shape{3, 3});
    CHECK(out.prediction.shape() == Shape{3});
    const ad::Var d = ad::sub(out.prediction, tape.constant(target));
    return ad::mean(ad::mul(d, d)).value().data[0];
  };
  for (auto& [name, t] : model.named_tensors()) {
    ad::Tape tape;
    t->enable_grad();
    t->zero_grad();
    const auto out = model.forward(tape, tape.constant(x));
    const ad::Var d = ad::sub(out.prediction, tape.constant(target));
    tape.backward(ad::mean(ad::mul(d, d)));
    const std::vector<double> analytic = t->grad;
    t->requires_grad = false;
    t->grad.clear();
    const Tensor saved = *t;
    const Tensor numeric = finite_difference_gradient(
        [&](const Tensor& p) {
          t->data = p.data;
          return loss_of();
        },
        saved);
    t->data = saved.data;
    INFO(name);
    CHECK(max_relative_error(analytic, numeric.data) < 1e-4);
  }
}

TEST_CASE("predictions are row-independent and validate width") {
  ExtractorConfig cfg = tiny_config();
  Rng rng(3);
  ExtractorCheckpoint ckpt;
  ckpt.config = cfg;
  ckpt.model = ExtractorModel(cfg, rng);
  const Tensor crops = random_crops(150, 8, 4);
  const auto all = ckpt.predict(crops);
  CHECK(all.embedding.shape == Shape{150, 3});
  for (std::size_t i : {0u, 63u, 64u, 149u}) {
    const std::size_t idx[] = {i, i};
    const auto pair = ckpt.predict(select_rows(crops, idx));
    CHECK(pair.predicted[0] == all.predicted[i]);
    CHECK(pair.predicted[1] == all.predicted[i]);
    for (std::size_t k = 0; k < 3; ++k) {
      CHECK(pair.embedding.at(0, k) == all.embedding.at(i, k));
      CHECK(pair.embedding.at(1, k) == all.embedding.at(i, k));
    }
  }
  CHECK_THROWS_AS(ckpt.predict(random_crops(2, 7, 1)), Error);
}

TEST_CASE("constant teacher is fit to within 1e-3") {
  const auto images = gradient_images(4, 5);
  const TeacherFn constant = [](const Tensor& raw) { return std::vector<double>(raw.rows(), -42.5); };
  const auto ckpt = train_extractor(images, constant, tiny_config());
  REQUIRE(!ckpt.history.empty());
  double best = 1e300;
  for (const auto& h : ckpt.history) best = std::min(best, h.val_mse);
  MESSAGE("constant-teacher val MSE " << best);
  CHECK(best < 1e-3);
  const auto p = ckpt.predict(random_crops(10, 8, 6));
  for (double v : p.predicted) CHECK(v == doctest::Approx(-42.5).epsilon(1e-3));
}

TEST_CASE("extractor learns a smooth teacher, deterministically, and round-trips") {
  const auto images = gradient_images(5, 7);
  const TeacherFn brightness = [](const Tensor& raw) { return crop_means(raw); };
  ExtractorConfig cfg = tiny_config();
  cfg.max_steps = 300;
  const auto ckpt = train_extractor(images, brightness, cfg);
  Rng rng(99);
  std::vector<const ImageRecord*> held{&images.back()};
  const Tensor test = sample_crops(held, 8, 200, rng, false);
  const double r = pearson(ckpt.predict(test).predicted, crop_means(test));
  MESSAGE("held-out correlation " << r);
  CHECK(r >= 0.8);

  const auto again = train_extractor(images, brightness, cfg);
  const auto bytes = encode_container(extractor_to_container(ckpt));
  CHECK(bytes == encode_container(extractor_to_container(again)));

  TempDir dir("extractor");
  save_extractor_checkpoint(ckpt, dir / "e.fgck");
  const auto loaded = load_extractor_checkpoint(dir / "e.fgck");
  const auto a = ckpt.predict(test), b = loaded.predict(test);
  CHECK(a.predicted == b.predicted);
  CHECK(a.embedding.data == b.embedding.data);
  CHECK(file_bytes_u8(dir / "e.fgck") == bytes);

  Container wrong = extractor_to_container(ckpt);
  wrong.config.set("model.kind", "flow");
  try {
    extractor_from_container(wrong);
    FAIL("expected kind error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::Unsupported);
  }
}

TEST_CASE("rare extreme teacher values do not set the target scale") {
  const auto images = gradient_images(5, 7);
  const TeacherFn brightness = [](const Tensor& raw) { return crop_means(raw); };
  const TeacherFn spiky = [](const Tensor& raw) {
    auto t = crop_means(raw);
    for (std::size_t i = 0; i < t.size(); i += 50) t[i] += 1e6;
    return t;
  };
  ExtractorConfig cfg = tiny_config();
  cfg.max_steps = 40;
  const auto clean = train_extractor(images, brightness, cfg);
  const auto noisy = train_extractor(images, spiky, cfg);
  // A moment-based scale would grow by about five orders of magnitude.
  CHECK(noisy.teacher_std == doctest::Approx(clean.teacher_std).epsilon(0.1));
  for (const auto& h : noisy.history) CHECK(h.val_mse <= (cfg.target_clip + 1.0) * (cfg.target_clip + 1.0) * 4.0);
}

TEST_CASE("divergent teacher is reported") {
  const auto images = gradient_images(3, 8);
  ExtractorConfig cfg = tiny_config();
  cfg.max_steps = 4;
  cfg.eval_interval = 2;
  std::size_t calls = 0;
  const TeacherFn bad = [&](const Tensor& raw) {
    // Finite during calibration and validation, then infinite.
    return std::vector<double>(raw.rows(), ++calls <= 2 ? 1.0 : std::numeric_limits<double>::infinity());
  };
  try {
    train_extractor(images, bad, cfg);
    FAIL("expected divergence");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::Numerical);
  }
}

TEST_CASE("flow teacher averages sub-window log-likelihoods") {
  FlowConfig f = FlowConfig::maf_default(4 * 4 * 3);
  f.n_flows = 1;
  f.hidden_width = 6;
  Rng rng(9);
  FlowCheckpoint flow{f, TrainConfig{}, CropPipeline{}, FlowModel(f, rng), {}, 0};
  flow.pipeline.crop_size = 4;
  flow.pipeline.whiten = false;
  perturb_model(flow.model, rng, 0.05);
  const auto teacher = flow_teacher(flow, 10, 3);
  const Tensor crops = random_crops(3, 10, 10);
  const auto t = teacher(crops);
  for (std::size_t b = 0; b < 3; ++b) {
    double sum = 0.0;
    for (std::size_t top : {0u, 3u, 6u})
      for (std::size_t left : {0u, 3u, 6u}) {
        Tensor w = Tensor::matrix(1, 48);
        for (std::size_t y = 0; y < 4; ++y)
          for (std::size_t x = 0; x < 12; ++x) w.at(0, y * 12 + x) = crops.at(b, ((top + y) * 10 + left) * 3 + x);
        sum += flow.log_prob_raw(w)[0];
      }
    CHECK(t[b] == doctest::Approx(sum / 9.0).epsilon(1e-14));
  }
  CHECK_THROWS_AS(flow_teacher(flow, 3), Error);
}

TEST_CASE("embedding points and scatter export") {
  ExtractorConfig cfg = tiny_config();
  Rng rng(12);
  ExtractorCheckpoint ckpt;
  ckpt.config = cfg;
  ckpt.model = ExtractorModel(cfg, rng);
  const auto images = gradient_images(1, 13);
  const auto pts = embed_image(ckpt, "g", images[0].image, 4);
  CHECK(pts.size() == 25);
  CHECK(pts[6].row == 4);
  CHECK(pts[6].col == 4);
  for (const auto& p : pts) {
    CHECK(p.embedding.size() == 3);
    CHECK(std::isnan(p.teacher_ll));
  }
  const TeacherFn brightness = [](const Tensor& raw) { return crop_means(raw); };
  const auto with_teacher = embed_image(ckpt, "g", images[0].image, 4, &brightness);
  CHECK(with_teacher[3].embedding == pts[3].embedding);
  CHECK(std::isfinite(with_teacher[3].teacher_ll));
  CHECK_THROWS_AS(embed_image(ckpt, "small", Image(5, 30, 3), 4), Error);

  TempDir dir("scatter");
  export_scatter({with_teacher[0]}, dir / "one.csv");
  const std::string one = file_text(dir / "one.csv");
  CHECK(std::count(one.begin(), one.end(), '\n') == 2);
  CHECK(one.rfind("image_id,row,col,e1,e2,e3,pred_ll,teacher_ll\n", 0) == 0);
  const std::string row = one.substr(one.find('\n') + 1);
  CHECK(std::count(row.begin(), row.end(), ',') == 7);

  std::vector<EmbeddingPoint> shuffled(with_teacher.rbegin(), with_teacher.rend());
  export_scatter(with_teacher, dir / "a.csv");
  export_scatter(shuffled, dir / "b.csv");
  CHECK(file_bytes(dir / "a.csv") == file_bytes(dir / "b.csv"));
  export_scatter(pts, dir / "blank.csv");
  CHECK(file_text(dir / "blank.csv").find(",\n") != std::string::npos);
  CHECK_THROWS_AS(export_scatter({}, dir / "none.csv"), Error);
}
