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

#include <functional>
#include <span>

#include "tensor.hpp"

namespace flowgrain {

/// Central-difference gradient (f(x + h e_i) - f(x - h e_i)) / 2h for every
/// coordinate of `x`. `f` is evaluated on a perturbed copy; `x` is unchanged.
/// Throws ErrorKind::Numerical if any evaluation is non-finite.
Tensor finite_difference_gradient(const std::function<double(const Tensor&)>& f, const Tensor& x,
                                  double h = 1e-5);

/// max_i |a_i - b_i| / max(|a_i|, |b_i|, floor). Coordinates where both are
/// below `floor` compare absolutely.
double max_relative_error(std::span<const double> a, std::span<const double> b,
                          double floor = 1e-6);

}  // namespace flowgrain
