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

// Parameterized layers shared by the convolutional and token branches. A
// layer holds pointers into a ParameterStore owned by the model and opens a
// cost scope named after its path whenever it runs.

#include <cstddef>
#include <deque>
#include <random>
#include <string>

#include "mformer/cost_counter.hpp"
#include "mformer/ops.hpp"
#include "mformer/tape.hpp"

namespace mformer::nn {

/// Per-forward state: the tape to record on, train/eval mode, and the
/// generator used by dropout (may be null in eval mode).
template <typename T>
struct Context {
  Tape<T>& tape;
  Mode mode = Mode::kEval;
  std::mt19937_64* rng = nullptr;

  CostCounter* counter() const { return tape.counter(); }
};

/// Owns every parameter of a model. Addresses are stable for the store's
/// lifetime.
template <typename T>
class ParameterStore {
 public:
  Parameter<T>& add(std::string name, std::string layer, Pillar pillar, Shape shape, bool decay);

  std::deque<Parameter<T>>& parameters() noexcept { return params_; }
  const std::deque<Parameter<T>>& parameters() const noexcept { return params_; }
  std::size_t total_size() const;

  /// Running statistics of one batch-norm site, initialized to mean 0, var 1.
  BatchNormState<T>& add_norm_state(std::size_t channels);
  std::deque<BatchNormState<T>>& norm_states() noexcept { return norms_; }
  const std::deque<BatchNormState<T>>& norm_states() const noexcept { return norms_; }

 private:
  std::deque<Parameter<T>> params_;
  std::deque<BatchNormState<T>> norms_;
};

/// Fills `p` with N(0, stddev^2).
template <typename T>
void fill_normal(Parameter<T>& p, double stddev, std::mt19937_64& rng);

enum class Init { kFanIn, kZero };

/// x W^T + b with W [out, in].
template <typename T>
class Linear {
 public:
  Linear() = default;
  Linear(ParameterStore<T>& store, std::mt19937_64& rng, std::string path, Pillar pillar,
         std::size_t in, std::size_t out, bool bias, Init init = Init::kFanIn);

  Var<T> operator()(Context<T>& ctx, const Var<T>& x) const;

  Parameter<T>& weight() const { return *weight_; }
  Parameter<T>* bias() const { return bias_; }
  std::size_t in_features() const { return in_; }
  std::size_t out_features() const { return out_; }
  const std::string& path() const { return path_; }

 private:
  std::string path_;
  Pillar pillar_ = Pillar::kMobile;
  std::size_t in_ = 0, out_ = 0;
  Parameter<T>* weight_ = nullptr;
  Parameter<T>* bias_ = nullptr;
};

/// Bias-free convolution; a batch norm always follows in this architecture.
template <typename T>
class Conv2d {
 public:
  Conv2d() = default;
  Conv2d(ParameterStore<T>& store, std::mt19937_64& rng, std::string path, Pillar pillar,
         std::size_t in_channels, std::size_t out_channels, std::size_t kernel,
         ops::Conv2dOptions options);

  Var<T> operator()(Context<T>& ctx, const Var<T>& x) const;

  Parameter<T>& weight() const { return *weight_; }
  const ops::Conv2dOptions& options() const { return options_; }
  const std::string& path() const { return path_; }

 private:
  std::string path_;
  Pillar pillar_ = Pillar::kMobile;
  ops::Conv2dOptions options_;
  Parameter<T>* weight_ = nullptr;
};

template <typename T>
class BatchNorm2d {
 public:
  BatchNorm2d() = default;
  BatchNorm2d(ParameterStore<T>& store, std::string path, Pillar pillar, std::size_t channels);

  Var<T> operator()(Context<T>& ctx, const Var<T>& x) const;

  BatchNormState<T>& state() const { return *state_; }
  Parameter<T>& gamma() const { return *gamma_; }
  Parameter<T>& beta() const { return *beta_; }

 private:
  std::string path_;
  Pillar pillar_ = Pillar::kMobile;
  Parameter<T>* gamma_ = nullptr;
  Parameter<T>* beta_ = nullptr;
  BatchNormState<T>* state_ = nullptr;
};

template <typename T>
class LayerNorm {
 public:
  LayerNorm() = default;
  LayerNorm(ParameterStore<T>& store, std::string path, Pillar pillar, std::size_t dim);

  Var<T> operator()(Context<T>& ctx, const Var<T>& x) const;

  Parameter<T>& gamma() const { return *gamma_; }
  Parameter<T>& beta() const { return *beta_; }

 private:
  std::string path_;
  Pillar pillar_ = Pillar::kFormer;
  Parameter<T>* gamma_ = nullptr;
  Parameter<T>* beta_ = nullptr;
  T eps_ = T(1e-5);
};

/// Two-layer MLP mapping a token to dynamic-ReLU coefficient deltas for
/// `channels` activation channels: d -> hidden (ReLU) -> 4 * channels. The
/// second layer starts at zero, so a fresh generator yields plain ReLU.
template <typename T>
class DyReLUGenerator {
 public:
  static constexpr T kLambdaA = T(1.0);
  static constexpr T kLambdaB = T(0.5);

  DyReLUGenerator() = default;
  DyReLUGenerator(ParameterStore<T>& store, std::mt19937_64& rng, std::string path,
                  std::size_t token_dim, std::size_t hidden, std::size_t channels);

  /// token [N, d] -> deltas [N, 4 * channels]
  Var<T> coefficients(Context<T>& ctx, const Var<T>& token) const;
  /// Applies the activation to x [N, channels, ...] with precomputed deltas.
  Var<T> apply(Context<T>& ctx, const Var<T>& x, const Var<T>& deltas) const;
  Var<T> operator()(Context<T>& ctx, const Var<T>& x, const Var<T>& token) const {
    return apply(ctx, x, coefficients(ctx, token));
  }

  std::size_t channels() const { return channels_; }
  const Linear<T>& first() const { return fc1_; }
  const Linear<T>& second() const { return fc2_; }

 private:
  std::string path_;
  std::size_t channels_ = 0;
  Linear<T> fc1_, fc2_;
};

/// Multi-head self attention over token rows. Input is the batch stacked as
/// [N * M, d]; attention never mixes tokens of different images.
template <typename T>
class MultiHeadSelfAttention {
 public:
  MultiHeadSelfAttention() = default;
  MultiHeadSelfAttention(ParameterStore<T>& store, std::mt19937_64& rng, std::string path,
                         Pillar pillar, std::size_t dim, std::size_t heads);

  /// Pre-residual output. When `weights` is given it receives the attention
  /// probabilities as [N, H, M, M].
  Var<T> operator()(Context<T>& ctx, const Var<T>& z, std::size_t batch,
                    Tensor<T>* weights = nullptr) const;

  Linear<T>& query() { return wq_; }
  Linear<T>& key() { return wk_; }
  Linear<T>& value() { return wv_; }
  Linear<T>& output() { return wo_; }
  const std::string& path() const { return path_; }

 private:
  std::string path_;
  Pillar pillar_ = Pillar::kFormer;
  std::size_t dim_ = 0, heads_ = 0;
  Linear<T> wq_, wk_, wv_, wo_;
};

/// d -> expansion * d (GELU) -> d, pre-residual.
template <typename T>
class FeedForward {
 public:
  FeedForward() = default;
  FeedForward(ParameterStore<T>& store, std::mt19937_64& rng, std::string path, Pillar pillar,
              std::size_t dim, std::size_t expansion = 2);

  Var<T> operator()(Context<T>& ctx, const Var<T>& z) const;

  Linear<T>& first() { return fc1_; }
  Linear<T>& second() { return fc2_; }

 private:
  std::string path_;
  Pillar pillar_ = Pillar::kFormer;
  Linear<T> fc1_, fc2_;
};

}  // namespace mformer::nn
