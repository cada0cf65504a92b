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
#include <string>
#include <vector>

namespace flowgrain {

using Shape = std::vector<std::size_t>;

std::size_t shape_size(const Shape& shape);
std::string shape_str(const Shape& shape);

/// Dense row-major array of doubles. Doubles as the matrix type for batches
/// (rank 2, one sample per row) throughout the project.
///
/// `grad` is empty unless gradient tracking was enabled; when present it has
/// exactly `data.size()` entries.
struct Tensor {
  Shape shape;
  std::vector<double> data;
  bool requires_grad = false;
  std::vector<double> grad;

  Tensor() = default;
  explicit Tensor(Shape s, double fill = 0.0);
  Tensor(Shape s, std::vector<double> values);

  static Tensor matrix(std::size_t rows, std::size_t cols, double fill = 0.0);
  static Tensor vector(std::vector<double> values);
  static Tensor scalar(double value);

  std::size_t size() const { return data.size(); }
  std::size_t rank() const { return shape.size(); }
  std::size_t dim(std::size_t axis) const { return shape.at(axis); }

  // Rank-2 helpers.
  std::size_t rows() const { return shape.at(0); }
  std::size_t cols() const { return shape.at(1); }
  double& at(std::size_t r, std::size_t c) { return data[r * shape[1] + c]; }
  double at(std::size_t r, std::size_t c) const { return data[r * shape[1] + c]; }
  std::span<double> row(std::size_t r) { return {data.data() + r * shape[1], shape[1]}; }
  std::span<const double> row(std::size_t r) const {
    return {data.data() + r * shape[1], shape[1]};
  }

  bool has_grad() const { return !grad.empty(); }

  /// Marks the tensor as a trainable leaf and allocates a zeroed gradient.
  void enable_grad();
  void zero_grad();
  bool all_finite() const;
};

/// Builds a rank-2 tensor from the given rows of `src`.
Tensor select_rows(const Tensor& src, std::span<const std::size_t> rows);

}  // namespace flowgrain
