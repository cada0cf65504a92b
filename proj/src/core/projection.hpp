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

#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "tensor.hpp"

namespace flowgrain {

/// Truncated SVD basis of a centered sample matrix. Immutable after fit, so
/// one instance can be shared read-only by concurrent sweep workers.
///
/// Invariants: `components` is k×d with orthonormal rows; `singular_values`
/// is positive and nonincreasing; the largest-magnitude entry of each
/// component is positive.
struct ProjectionBasis {
  std::vector<double> mean;
  Tensor components;
  std::vector<double> singular_values;
  std::size_t n_samples = 0;

  std::size_t k() const { return singular_values.size(); }
  std::size_t d() const { return mean.size(); }
  /// Per-component standard deviation of the training coordinates.
  double coordinate_scale(std::size_t i) const;
};

/// Fits the top-k right singular vectors of `samples` (n×d) after centering.
/// Throws ErrorKind::Config when k is out of range and ErrorKind::Data when
/// fewer than k singular values are nonzero.
ProjectionBasis fit_basis(const Tensor& samples, std::size_t k);

std::vector<double> project(const ProjectionBasis& basis, std::span<const double> x, bool whiten);
/// Row-wise `project` over an n×d batch.
Tensor project_rows(const ProjectionBasis& basis, const Tensor& x, bool whiten);

/// mean + componentsᵀ · y, undoing whitening first when `whitened` is set.
std::vector<double> reconstruct(const ProjectionBasis& basis, std::span<const double> y,
                                bool whitened);

}  // namespace flowgrain
