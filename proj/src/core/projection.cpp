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

#include "projection.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>

#include "errors.hpp"

namespace flowgrain {
namespace {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// Re-orthonormalizes rows in order (modified Gram-Schmidt) and fixes signs so
// the largest-magnitude entry of every row is positive.
void orthonormalize_rows(RowMatrix& v) {
  for (Eigen::Index i = 0; i < v.rows(); ++i) {
    for (Eigen::Index j = 0; j < i; ++j) v.row(i) -= v.row(i).dot(v.row(j)) * v.row(j);
    v.row(i) /= v.row(i).norm();
    Eigen::Index arg = 0;
    double best = -1.0;
    for (Eigen::Index c = 0; c < v.cols(); ++c) {
      if (std::abs(v(i, c)) > best) {
        best = std::abs(v(i, c));
        arg = c;
      }
    }
    if (v(i, arg) < 0.0) v.row(i) *= -1.0;
  }
}

}  // namespace

double ProjectionBasis::coordinate_scale(std::size_t i) const {
  if (n_samples < 2) {
    fail(ErrorKind::Config, "projection: whitening needs a basis fit on at least 2 samples");
  }
  return singular_values[i] / std::sqrt(static_cast<double>(n_samples - 1));
}

ProjectionBasis fit_basis(const Tensor& samples, std::size_t k) {
  if (samples.rank() != 2) fail(ErrorKind::ShapeMismatch, "fit_basis: samples must be n×d");
  const std::size_t n = samples.rows(), d = samples.cols();
  if (k < 1 || k > n || k > d) {
    fail(ErrorKind::Config, "fit_basis: k=" + std::to_string(k) + " must satisfy 1 <= k <= min(n=" +
                                std::to_string(n) + ", d=" + std::to_string(d) + ")");
  }
  ProjectionBasis basis;
  basis.n_samples = n;
  basis.mean.assign(d, 0.0);
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t c = 0; c < d; ++c) basis.mean[c] += samples.at(r, c);
  for (double& m : basis.mean) m /= static_cast<double>(n);

  RowMatrix x(n, d);
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t c = 0; c < d; ++c) x(r, c) = samples.at(r, c) - basis.mean[c];

  // Eigendecomposition of the smaller Gram matrix.
  RowMatrix components(k, d);
  Eigen::VectorXd eigenvalues;
  if (d <= n) {
    const Eigen::MatrixXd gram = x.transpose() * x;
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(gram);
    if (solver.info() != Eigen::Success) fail(ErrorKind::Numerical, "fit_basis: eigensolver failed");
    eigenvalues = solver.eigenvalues();
    for (std::size_t i = 0; i < k; ++i)
      components.row(static_cast<Eigen::Index>(i)) = solver.eigenvectors().col(static_cast<Eigen::Index>(d - 1 - i)).transpose();
  } else {
    const Eigen::MatrixXd gram = x * x.transpose();
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(gram);
    if (solver.info() != Eigen::Success) fail(ErrorKind::Numerical, "fit_basis: eigensolver failed");
    eigenvalues = solver.eigenvalues();
    for (std::size_t i = 0; i < k; ++i) {
      const Eigen::VectorXd u = solver.eigenvectors().col(static_cast<Eigen::Index>(n - 1 - i));
      components.row(static_cast<Eigen::Index>(i)) = (x.transpose() * u).transpose();
    }
  }

  // Rank check on directly recomputed ||X v|| rather than sqrt(eigenvalue),
  // which cannot resolve values far below sqrt(machine epsilon) * scale.
  const std::size_t m = static_cast<std::size_t>(eigenvalues.size());
  const double top = std::sqrt(std::max(eigenvalues(static_cast<Eigen::Index>(m - 1)), 0.0));
  const double zero_tol = 1e-10 * std::max(1.0, top);
  for (std::size_t i = 0; i < k; ++i) {
    const auto row = components.row(static_cast<Eigen::Index>(i));
    const double norm = row.norm();
    const double sigma = norm > 0.0 ? (x * row.transpose()).norm() / norm : 0.0;
    if (!(sigma > zero_tol)) {
      fail(ErrorKind::Data, "fit_basis: degenerate data, only " + std::to_string(i) +
                                " nonzero singular values (k=" + std::to_string(k) + ")");
    }
  }
  orthonormalize_rows(components);

  basis.components = Tensor::matrix(k, d);
  std::copy(components.data(), components.data() + k * d, basis.components.data.begin());
  basis.singular_values.resize(k);
  for (std::size_t i = 0; i < k; ++i) {
    basis.singular_values[i] = std::sqrt(std::max(eigenvalues(static_cast<Eigen::Index>(m - 1 - i)), 0.0));
  }
  return basis;
}

std::vector<double> project(const ProjectionBasis& basis, std::span<const double> x, bool whiten) {
  const std::size_t d = basis.d(), k = basis.k();
  if (x.size() != d) {
    fail(ErrorKind::ShapeMismatch, "project: vector length " + std::to_string(x.size()) +
                                       " does not match basis dimension " + std::to_string(d));
  }
  std::vector<double> centered(d);
  for (std::size_t j = 0; j < d; ++j) centered[j] = x[j] - basis.mean[j];
  std::vector<double> y(k, 0.0);
  for (std::size_t i = 0; i < k; ++i) {
    const double* row = basis.components.data.data() + i * d;
    double acc = 0.0;
    for (std::size_t j = 0; j < d; ++j) acc += row[j] * centered[j];
    y[i] = whiten ? acc / basis.coordinate_scale(i) : acc;
  }
  return y;
}

Tensor project_rows(const ProjectionBasis& basis, const Tensor& x, bool whiten) {
  if (x.rank() != 2 || x.cols() != basis.d()) {
    fail(ErrorKind::ShapeMismatch, "project_rows: batch " + shape_str(x.shape) +
                                       " does not match basis dimension " + std::to_string(basis.d()));
  }
  Tensor out = Tensor::matrix(x.rows(), basis.k());
  for (std::size_t r = 0; r < x.rows(); ++r) {
    const auto y = project(basis, x.row(r), whiten);
    std::copy(y.begin(), y.end(), out.row(r).begin());
  }
  return out;
}

std::vector<double> reconstruct(const ProjectionBasis& basis, std::span<const double> y,
                                bool whitened) {
  const std::size_t d = basis.d(), k = basis.k();
  if (y.size() != k) {
    fail(ErrorKind::ShapeMismatch, "reconstruct: coordinate length " + std::to_string(y.size()) +
                                       " does not match basis rank " + std::to_string(k));
  }
  std::vector<double> x = basis.mean;
  for (std::size_t i = 0; i < k; ++i) {
    const double coef = whitened ? y[i] * basis.coordinate_scale(i) : y[i];
    const double* row = basis.components.data.data() + i * d;
    for (std::size_t j = 0; j < d; ++j) x[j] += coef * row[j];
  }
  return x;
}

}  // namespace flowgrain
