// Copyright 2026 The mformer Authors. All Rights Reserved.
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

#include <algorithm>
#include <cmath>
#include <cstddef>

#include "mformer/tensor.hpp"

namespace mformer {

/// Central differences (f(x + eps e_i) - f(x - eps e_i)) / (2 eps) for every
/// element of x. `f` maps a Tensor<T> to a scalar T and must be deterministic.
template <typename T, typename F>
Tensor<T> finite_diff_grad(F&& f, const Tensor<T>& x, T eps) {
  if (!(eps > T(0))) throw ArgumentError("finite_diff_grad: eps must be positive");
  Tensor<T> probe = x;
  Tensor<T> out(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const T saved = probe[i];
    probe[i] = saved + eps;
    const T up = f(probe);
    probe[i] = saved - eps;
    const T down = f(probe);
    probe[i] = saved;
    out[i] = (up - down) / (T(2) * eps);
  }
  return out;
}

/// |a - b| / max(|a|, |b|, floor). The floor keeps entries whose true value is
/// zero from dominating.
inline double relative_error(double a, double b, double floor = 1e-6) {
  const double scale = std::max({std::abs(a), std::abs(b), floor});
  return std::abs(a - b) / scale;
}

template <typename T>
double max_relative_error(const Tensor<T>& a, const Tensor<T>& b, double floor = 1e-6) {
  if (a.shape() != b.shape()) {
    throw ShapeError("max_relative_error: shapes differ: " + to_string(a.shape()) + " vs " +
                     to_string(b.shape()));
  }
  double worst = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    worst = std::max(worst, relative_error(a[i], b[i], floor));
  }
  return worst;
}

}  // namespace mformer
