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

// Differentiable primitives. Every function returns a new node on the tape of
// its inputs, charges its multiply-adds to the tape's cost counter, and never
// writes to its inputs.
//
// Multiply-add convention: conv k*k*(Cin/g)*Cout*Hout*Wout, linear in*out per
// row, matmul m*k*n, softmax 3 per logit, dynamic ReLU 3 per element (K=2
// linear pieces and a max), other norms/activations/adds/pooling 1 per
// element, pure data movement 0.

#include <cstddef>
#include <random>
#include <span>
#include <vector>

#include "mformer/tape.hpp"

namespace mformer {

enum class Mode { kTrain, kEval };

/// Running statistics for one batch-norm site.
template <typename T>
struct BatchNormState {
  std::vector<T> running_mean;
  std::vector<T> running_var;
  bool initialized = false;
  T momentum = T(0.1);
  T eps = T(1e-5);
};

namespace ops {

struct Conv2dOptions {
  std::size_t stride = 1;
  std::size_t padding = 0;
  std::size_t groups = 1;
};

/// op(a) * op(b) for 2-D operands.
template <typename T>
Var<T> matmul(const Var<T>& a, const Var<T>& b, bool trans_a = false, bool trans_b = false);

/// x[rows, in] * weight[out, in]^T (+ bias[out]).
template <typename T>
Var<T> linear(const Var<T>& x, const Var<T>& weight);
template <typename T>
Var<T> linear(const Var<T>& x, const Var<T>& weight, const Var<T>& bias);

/// NCHW convolution with kernel [Cout, Cin/groups, kh, kw]. Depthwise
/// convolutions with a channel multiplier are groups == Cin.
template <typename T>
Var<T> conv2d(const Var<T>& x, const Var<T>& weight, Conv2dOptions options);
template <typename T>
Var<T> conv2d(const Var<T>& x, const Var<T>& weight, const Var<T>& bias, Conv2dOptions options);

/// softmax(scale * x) along `axis`, max-subtracted.
template <typename T>
Var<T> softmax(const Var<T>& x, std::size_t axis, T scale = T(1));

/// Non-overlapping average pooling; the window must divide H and W.
template <typename T>
Var<T> avgpool2d(const Var<T>& x, std::size_t window_h, std::size_t window_w);

template <typename T>
Var<T> add(const Var<T>& a, const Var<T>& b);
template <typename T>
Var<T> mul(const Var<T>& a, const Var<T>& b);
template <typename T>
Var<T> scale(const Var<T>& a, T factor);
template <typename T>
Var<T> sum(const Var<T>& a);
template <typename T>
Var<T> mean(const Var<T>& a);

template <typename T>
Var<T> relu(const Var<T>& x);
/// x * relu6(x + 3) / 6
template <typename T>
Var<T> h_swish(const Var<T>& x);
/// Exact (erf) GELU.
template <typename T>
Var<T> gelu(const Var<T>& x);

/// Channel-wise dynamic ReLU with two linear pieces:
///   y = max(a1*x + b1, a2*x + b2),
///   a1 = 1 + la*d[0:C], a2 = la*d[C:2C], b1 = lb*d[2C:3C], b2 = lb*d[3C:4C]
/// where x is [N, C, ...] and `deltas` is [N, 4C]. Zero deltas give ReLU.
template <typename T>
Var<T> dynamic_relu(const Var<T>& x, const Var<T>& deltas, T lambda_a, T lambda_b);

/// Per-channel normalization of x [N, C, ...]. Train mode uses batch
/// statistics and updates `state`; eval mode reads `state`.
template <typename T>
Var<T> batch_norm(const Var<T>& x, const Var<T>& gamma, const Var<T>& beta,
                  BatchNormState<T>& state, Mode mode);

/// Per-row normalization of x [rows, d] followed by gamma/beta.
template <typename T>
Var<T> layer_norm(const Var<T>& x, const Var<T>& gamma, const Var<T>& beta, T eps = T(1e-5));

template <typename T>
Var<T> slice(const Var<T>& x, std::size_t axis, std::size_t begin, std::size_t end);
template <typename T>
Var<T> concat(const std::vector<Var<T>>& parts, std::size_t axis);
template <typename T>
Var<T> reshape(const Var<T>& x, Shape shape);
/// Rows of x along axis 0.
template <typename T>
Var<T> gather_rows(const Var<T>& x, std::span<const std::size_t> rows);

/// Inverted dropout; identity when rate == 0.
template <typename T>
Var<T> dropout(const Var<T>& x, T rate, std::mt19937_64& rng);

/// Mean negative log-likelihood of integer labels under softmax(logits).
template <typename T>
Var<T> cross_entropy(const Var<T>& logits, std::span<const int> labels);

}  // namespace ops
}  // namespace mformer
