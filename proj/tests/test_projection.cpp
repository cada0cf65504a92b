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
#include <numeric>

#include "errors.hpp"
#include "projection.hpp"
#include "rng.hpp"

using namespace flowgrain;

namespace {

Tensor gaussian_samples(std::size_t n, std::size_t d, Rng& rng, std::vector<double> scales = {}) {
  Tensor t = Tensor::matrix(n, d);
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t c = 0; c < d; ++c) t.at(r, c) = rng.normal() * (scales.empty() ? 1.0 : scales[c]) + 0.5 * c;
  return t;
}

// Cyclic Jacobi eigendecomposition of a symmetric matrix; independent of
// the Eigen path used by fit_basis. Returns eigenvectors as columns of v.
void jacobi_eigen(std::vector<double> a, std::size_t n, std::vector<double>& evals, std::vector<double>& v) {
  v.assign(n * n, 0.0);
  for (std::size_t i = 0; i < n; ++i) v[i * n + i] = 1.0;
  for (int sweep = 0; sweep < 100; ++sweep) {
    double off = 0.0;
    for (std::size_t p = 0; p < n; ++p)
      for (std::size_t q = p + 1; q < n; ++q) off += a[p * n + q] * a[p * n + q];
    if (off < 1e-30) break;
    for (std::size_t p = 0; p < n; ++p)
      for (std::size_t q = p + 1; q < n; ++q) {
        const double apq = a[p * n + q];
        if (std::abs(apq) < 1e-300) continue;
        const double theta = (a[q * n + q] - a[p * n + p]) / (2.0 * apq);
        const double t = (theta >= 0 ? 1.0 : -1.0) / (std::abs(theta) + std::sqrt(theta * theta + 1.0));
        const double c = 1.0 / std::sqrt(t * t + 1.0), s = t * c;
        for (std::size_t k = 0; k < n; ++k) {
          const double akp = a[k * n + p], akq = a[k * n + q];
          a[k * n + p] = c * akp - s * akq;
          a[k * n + q] = s * akp + c * akq;
        }
        for (std::size_t k = 0; k < n; ++k) {
          const double apk = a[p * n + k], aqk = a[q * n + k];
          a[p * n + k] = c * apk - s * aqk;
          a[q * n + k] = s * apk + c * aqk;
        }
        for (std::size_t k = 0; k < n; ++k) {
          const double vkp = v[k * n + p], vkq = v[k * n + q];
          v[k * n + p] = c * vkp - s * vkq;
          v[k * n + q] = s * vkp + c * vkq;
        }
      }
  }
  evals.resize(n);
  for (std::size_t i = 0; i < n; ++i) evals[i] = a[i * n + i];
}

double mean_sq_reconstruction_error(const ProjectionBasis& b, const Tensor& x) {
  double total = 0.0;
  for (std::size_t r = 0; r < x.rows(); ++r) {
    const auto y = project(b, x.row(r), false);
    const auto back = reconstruct(b, y, false);
    for (std::size_t c = 0; c < x.cols(); ++c) total += (back[c] - x.at(r, c)) * (back[c] - x.at(r, c));
  }
  return total / static_cast<double>(x.rows());
}

}  // namespace

TEST_CASE("samples on an exact plane reconstruct to 1e-8") {
  Rng rng(11);
  Tensor x = Tensor::matrix(100, 3);
  for (std::size_t r = 0; r < 100; ++r) {
    const double a = rng.normal(), b = rng.normal();
    x.at(r, 0) = a + 1.0;
    x.at(r, 1) = 2.0 * b - 3.0;
    x.at(r, 2) = a - b;
  }
  const auto basis = fit_basis(x, 2);
  for (std::size_t r = 0; r < 100; ++r) {
    const auto back = reconstruct(basis, project(basis, x.row(r), false), false);
    for (std::size_t c = 0; c < 3; ++c) CHECK(std::abs(back[c] - x.at(r, c)) < 1e-8);
  }
}

TEST_CASE("complete basis is an identity round trip; basis invariants hold") {
  Rng rng(3);
  const Tensor x = gaussian_samples(40, 6, rng, {3, 2.5, 2, 1.5, 1, 0.5});
  const auto basis = fit_basis(x, 6);
  for (std::size_t r = 0; r < 40; ++r) {
    for (bool whiten : {false, true}) {
      const auto back = reconstruct(basis, project(basis, x.row(r), whiten), whiten);
      for (std::size_t c = 0; c < 6; ++c) CHECK(std::abs(back[c] - x.at(r, c)) < 1e-8);
    }
  }
  for (std::size_t i = 0; i < 6; ++i) {
    CHECK(basis.singular_values[i] > 0.0);
    if (i > 0) CHECK(basis.singular_values[i] <= basis.singular_values[i - 1]);
    double maxabs = 0.0, signed_max = 0.0;
    for (std::size_t j = 0; j < 6; ++j) {
      if (std::abs(basis.components.at(i, j)) > maxabs) {
        maxabs = std::abs(basis.components.at(i, j));
        signed_max = basis.components.at(i, j);
      }
      double dot = 0.0;
      for (std::size_t c = 0; c < 6; ++c) dot += basis.components.at(i, c) * basis.components.at(j, c);
      CHECK(std::abs(dot - (i == j ? 1.0 : 0.0)) < 1e-8);
    }
    CHECK(signed_max > 0.0);
  }
}

TEST_CASE("project and reconstruct examples") {
  Rng rng(5);
  const Tensor x = gaussian_samples(50, 4, rng, {4, 2, 1, 0.5});
  const auto basis = fit_basis(x, 2);
  const auto y0 = project(basis, basis.mean, true);
  for (double v : y0) CHECK(std::abs(v) < 1e-12);
  const auto m = reconstruct(basis, std::vector<double>{0.0, 0.0}, false);
  for (std::size_t c = 0; c < 4; ++c) CHECK(m[c] == basis.mean[c]);

  std::vector<double> shifted = basis.mean;
  for (std::size_t c = 0; c < 4; ++c) shifted[c] += basis.components.at(0, c);
  const auto e1 = project(basis, shifted, false);
  CHECK(std::abs(e1[0] - 1.0) < 1e-12);
  CHECK(std::abs(e1[1]) < 1e-12);

  // Left inverse on arbitrary coordinates.
  for (int t = 0; t < 20; ++t) {
    const std::vector<double> y{rng.normal(), rng.normal()};
    for (bool whiten : {false, true}) {
      const auto back = project(basis, reconstruct(basis, y, whiten), whiten);
      CHECK(std::abs(back[0] - y[0]) < 1e-8);
      CHECK(std::abs(back[1] - y[1]) < 1e-8);
    }
  }
}

TEST_CASE("whitened training coordinates have unit sample variance") {
  Rng rng(9);
  const Tensor x = gaussian_samples(300, 8, rng, {5, 4, 3, 2, 1, 1, 0.5, 0.2});
  const auto basis = fit_basis(x, 5);
  const Tensor y = project_rows(basis, x, true);
  for (std::size_t i = 0; i < 5; ++i) {
    double mean = 0.0;
    for (std::size_t r = 0; r < 300; ++r) mean += y.at(r, i);
    mean /= 300.0;
    double var = 0.0;
    for (std::size_t r = 0; r < 300; ++r) var += (y.at(r, i) - mean) * (y.at(r, i) - mean);
    var /= 299.0;
    CHECK(std::abs(var - 1.0) < 1e-6);
    CHECK(std::abs(mean) < 1e-10);
  }
}

TEST_CASE("reconstruction error is nonincreasing in k") {
  Rng rng(21);
  // Crop-like vectors: 12x12x1 patches of smooth random fields.
  const std::size_t n = 200, d = 144;
  Tensor x = Tensor::matrix(n, d);
  for (std::size_t r = 0; r < n; ++r) {
    const double a = rng.normal(), b = rng.normal(), c = rng.normal();
    for (std::size_t p = 0; p < d; ++p) {
      const double u = static_cast<double>(p / 12), v = static_cast<double>(p % 12);
      x.at(r, p) = a * std::sin(u / 3.0) + b * std::cos(v / 4.0) + c * u * v / 100.0 + 0.3 * rng.normal();
    }
  }
  double prev = INFINITY;
  for (std::size_t k : {1, 5, 10, 20, 50, 100}) {
    const double err = mean_sq_reconstruction_error(fit_basis(x, k), x);
    CHECK(err <= prev + 1e-12);
    prev = err;
  }
  CHECK(mean_sq_reconstruction_error(fit_basis(x, 10), x) >= mean_sq_reconstruction_error(fit_basis(x, 50), x));
}

TEST_CASE("fits are bit-identical and match an independent Jacobi oracle") {
  for (std::size_t d : {2, 3, 5, 8}) {
    Rng rng(100 + d);
    std::vector<double> scales(d);
    for (std::size_t c = 0; c < d; ++c) scales[c] = 1.0 + static_cast<double>(d - c);
    const Tensor x = gaussian_samples(60, d, rng, scales);
    const std::size_t k = std::max<std::size_t>(1, d / 2);
    const auto a = fit_basis(x, k), b = fit_basis(x, k);
    CHECK(a.components.data == b.components.data);
    CHECK(a.singular_values == b.singular_values);
    CHECK(a.mean == b.mean);

    // Covariance eigendecomposition.
    std::vector<double> mean(d, 0.0);
    for (std::size_t r = 0; r < 60; ++r)
      for (std::size_t c = 0; c < d; ++c) mean[c] += x.at(r, c) / 60.0;
    std::vector<double> cov(d * d, 0.0);
    for (std::size_t r = 0; r < 60; ++r)
      for (std::size_t i = 0; i < d; ++i)
        for (std::size_t j = 0; j < d; ++j) cov[i * d + j] += (x.at(r, i) - mean[i]) * (x.at(r, j) - mean[j]) / 59.0;
    std::vector<double> evals, evecs;
    jacobi_eigen(cov, d, evals, evecs);
    std::vector<std::size_t> order(d);
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](auto i, auto j) { return evals[i] > evals[j]; });

    // Projectors onto both k-subspaces must agree.
    double frob = 0.0;
    for (std::size_t i = 0; i < d; ++i)
      for (std::size_t j = 0; j < d; ++j) {
        double p1 = 0.0, p2 = 0.0;
        for (std::size_t c = 0; c < k; ++c) {
          p1 += a.components.at(c, i) * a.components.at(c, j);
          p2 += evecs[i * d + order[c]] * evecs[j * d + order[c]];
        }
        frob += (p1 - p2) * (p1 - p2);
      }
    CHECK(std::sqrt(frob) < 1e-6);
    for (std::size_t c = 0; c < k; ++c) {
      CHECK(a.singular_values[c] * a.singular_values[c] / 59.0 == doctest::Approx(evals[order[c]]).epsilon(1e-9));
    }
  }
}

TEST_CASE("error paths") {
  Rng rng(1);
  const Tensor x = gaussian_samples(5, 3, rng);
  CHECK_THROWS_AS(fit_basis(x, 4), Error);
  CHECK_THROWS_AS(fit_basis(x, 0), Error);
  try {
    fit_basis(gaussian_samples(3, 6, rng), 4);
    FAIL("expected k-too-large error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::Config);
  }
  // Rank-1 data cannot support two components.
  Tensor line = Tensor::matrix(10, 3);
  for (std::size_t r = 0; r < 10; ++r)
    for (std::size_t c = 0; c < 3; ++c) line.at(r, c) = static_cast<double>(r) * (c + 1.0);
  try {
    fit_basis(line, 2);
    FAIL("expected degenerate-data error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::Data);
  }
  const auto basis = fit_basis(x, 2);
  CHECK_THROWS_AS(project(basis, std::vector<double>(2), false), Error);
  CHECK_THROWS_AS(reconstruct(basis, std::vector<double>(3), false), Error);
}

TEST_CASE("full-resolution crop regime: d = 6348, k = 100") {
  // 46·46·3 = 6348 with more dimensions than samples exercises the n×n path.
  Rng rng(4);
  const std::size_t d = 46 * 46 * 3;
  CHECK(d == 6348);
  const Tensor x = gaussian_samples(150, d, rng);
  const auto basis = fit_basis(x, 100);
  CHECK(basis.k() == 100);
  CHECK(basis.d() == 6348);
  CHECK(basis.components.shape == Shape{100, 6348});
  double worst = 0.0;
  for (std::size_t i = 0; i < 100; i += 9)
    for (std::size_t j = 0; j < 100; j += 7) {
      double dot = 0.0;
      for (std::size_t c = 0; c < d; ++c) dot += basis.components.at(i, c) * basis.components.at(j, c);
      worst = std::max(worst, std::abs(dot - (i == j ? 1.0 : 0.0)));
    }
  CHECK(worst < 1e-8);
}
