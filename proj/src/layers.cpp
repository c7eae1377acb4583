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

#include "mformer/layers.hpp"

#include <cmath>

namespace mformer::nn {

template <typename T>
Parameter<T>& ParameterStore<T>::add(std::string name, std::string layer, Pillar pillar,
                                     Shape shape, bool decay) {
  Parameter<T>& p = params_.emplace_back();
  p.name = std::move(name);
  p.layer = std::move(layer);
  p.pillar = pillar;
  p.decay = decay;
  p.value = Tensor<T>(shape);
  p.grad = Tensor<T>(std::move(shape));
  return p;
}

template <typename T>
std::size_t ParameterStore<T>::total_size() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += p.value.size();
  return n;
}

template <typename T>
BatchNormState<T>& ParameterStore<T>::add_norm_state(std::size_t channels) {
  BatchNormState<T>& st = norms_.emplace_back();
  st.running_mean.assign(channels, T(0));
  st.running_var.assign(channels, T(1));
  return st;
}

template <typename T>
void fill_normal(Parameter<T>& p, double stddev, std::mt19937_64& rng) {
  std::normal_distribution<double> dist(0.0, stddev);
  for (T& v : p.value.data()) v = static_cast<T>(dist(rng));
}

template <typename T>
Linear<T>::Linear(ParameterStore<T>& store, std::mt19937_64& rng, std::string path, Pillar pillar,
                  std::size_t in, std::size_t out, bool bias, Init init)
    : path_(std::move(path)), pillar_(pillar), in_(in), out_(out) {
  weight_ = &store.add(path_ + ".weight", path_, pillar, {out, in}, true);
  if (init == Init::kFanIn) fill_normal(*weight_, std::sqrt(1.0 / static_cast<double>(in)), rng);
  if (bias) bias_ = &store.add(path_ + ".bias", path_, pillar, {out}, false);
}

template <typename T>
Var<T> Linear<T>::operator()(Context<T>& ctx, const Var<T>& x) const {
  CostScope scope(ctx.counter(), path_, pillar_);
  auto w = ctx.tape.parameter(*weight_);
  if (bias_) return ops::linear(x, w, ctx.tape.parameter(*bias_));
  return ops::linear(x, w);
}

template <typename T>
Conv2d<T>::Conv2d(ParameterStore<T>& store, std::mt19937_64& rng, std::string path, Pillar pillar,
                  std::size_t in_channels, std::size_t out_channels, std::size_t kernel,
                  ops::Conv2dOptions options)
    : path_(std::move(path)), pillar_(pillar), options_(options) {
  if (options.groups == 0 || in_channels % options.groups != 0 || out_channels % options.groups != 0) {
    throw ArgumentError(path_ + ": groups " + std::to_string(options.groups) + " must divide " +
                        std::to_string(in_channels) + " and " + std::to_string(out_channels));
  }
  const std::size_t cig = in_channels / options.groups;
  weight_ = &store.add(path_ + ".weight", path_, pillar, {out_channels, cig, kernel, kernel}, true);
  fill_normal(*weight_, std::sqrt(2.0 / static_cast<double>(cig * kernel * kernel)), rng);
}

template <typename T>
Var<T> Conv2d<T>::operator()(Context<T>& ctx, const Var<T>& x) const {
  CostScope scope(ctx.counter(), path_, pillar_);
  return ops::conv2d(x, ctx.tape.parameter(*weight_), options_);
}

template <typename T>
BatchNorm2d<T>::BatchNorm2d(ParameterStore<T>& store, std::string path, Pillar pillar,
                            std::size_t channels)
    : path_(std::move(path)), pillar_(pillar) {
  gamma_ = &store.add(path_ + ".gamma", path_, pillar, {channels}, false);
  gamma_->value.fill(T(1));
  beta_ = &store.add(path_ + ".beta", path_, pillar, {channels}, false);
  state_ = &store.add_norm_state(channels);
}

template <typename T>
Var<T> BatchNorm2d<T>::operator()(Context<T>& ctx, const Var<T>& x) const {
  CostScope scope(ctx.counter(), path_, pillar_);
  return ops::batch_norm(x, ctx.tape.parameter(*gamma_), ctx.tape.parameter(*beta_), *state_,
                         ctx.mode);
}

template <typename T>
LayerNorm<T>::LayerNorm(ParameterStore<T>& store, std::string path, Pillar pillar, std::size_t dim)
    : path_(std::move(path)), pillar_(pillar) {
  gamma_ = &store.add(path_ + ".gamma", path_, pillar, {dim}, false);
  gamma_->value.fill(T(1));
  beta_ = &store.add(path_ + ".beta", path_, pillar, {dim}, false);
}

template <typename T>
Var<T> LayerNorm<T>::operator()(Context<T>& ctx, const Var<T>& x) const {
  CostScope scope(ctx.counter(), path_, pillar_);
  return ops::layer_norm(x, ctx.tape.parameter(*gamma_), ctx.tape.parameter(*beta_), eps_);
}

template <typename T>
DyReLUGenerator<T>::DyReLUGenerator(ParameterStore<T>& store, std::mt19937_64& rng,
                                    std::string path, std::size_t token_dim, std::size_t hidden,
                                    std::size_t channels)
    : path_(std::move(path)),
      channels_(channels),
      fc1_(store, rng, path_ + ".fc1", Pillar::kMobile, token_dim, hidden, true),
      fc2_(store, rng, path_ + ".fc2", Pillar::kMobile, hidden, 4 * channels, true, Init::kZero) {}

template <typename T>
Var<T> DyReLUGenerator<T>::coefficients(Context<T>& ctx, const Var<T>& token) const {
  Var<T> h = fc1_(ctx, token);
  {
    CostScope scope(ctx.counter(), path_, Pillar::kMobile);
    h = ops::relu(h);
  }
  return fc2_(ctx, h);
}

template <typename T>
Var<T> DyReLUGenerator<T>::apply(Context<T>&, const Var<T>& x, const Var<T>& deltas) const {
  if (x.shape().size() < 2 || x.dim(1) != channels_) {
    throw ShapeError(path_ + ": activation expects " + std::to_string(channels_) +
                     " channels, got input " + to_string(x.shape()));
  }
  return ops::dynamic_relu(x, deltas, kLambdaA, kLambdaB);
}

template <typename T>
MultiHeadSelfAttention<T>::MultiHeadSelfAttention(ParameterStore<T>& store, std::mt19937_64& rng,
                                                  std::string path, Pillar pillar, std::size_t dim,
                                                  std::size_t heads)
    : path_(std::move(path)), pillar_(pillar), dim_(dim), heads_(heads) {
  if (heads == 0 || dim % heads != 0) {
    throw ArgumentError(path_ + ": token dim " + std::to_string(dim) + " not divisible by " +
                        std::to_string(heads) + " heads");
  }
  wq_ = Linear<T>(store, rng, path_ + ".q", pillar, dim, dim, true);
  wk_ = Linear<T>(store, rng, path_ + ".k", pillar, dim, dim, true);
  wv_ = Linear<T>(store, rng, path_ + ".v", pillar, dim, dim, true);
  wo_ = Linear<T>(store, rng, path_ + ".o", pillar, dim, dim, true);
}

template <typename T>
Var<T> MultiHeadSelfAttention<T>::operator()(Context<T>& ctx, const Var<T>& z, std::size_t batch,
                                             Tensor<T>* weights) const {
  if (z.shape().size() != 2 || z.dim(1) != dim_ || batch == 0 || z.dim(0) % batch != 0) {
    throw ShapeError(path_ + ": expected [N*M, " + std::to_string(dim_) + "] tokens, got " +
                     to_string(z.shape()));
  }
  const std::size_t m = z.dim(0) / batch, dh = dim_ / heads_;
  Var<T> q = wq_(ctx, z), k = wk_(ctx, z), v = wv_(ctx, z);
  if (weights) *weights = Tensor<T>({batch, heads_, m, m});
  const T scale = T(1) / std::sqrt(static_cast<T>(dh));
  std::vector<Var<T>> rows;
  {
    CostScope scope(ctx.counter(), path_, pillar_);
    for (std::size_t n = 0; n < batch; ++n) {
      std::vector<Var<T>> heads;
      for (std::size_t h = 0; h < heads_; ++h) {
        auto part = [&](const Var<T>& t) {
          return ops::slice(ops::slice(t, 0, n * m, (n + 1) * m), 1, h * dh, (h + 1) * dh);
        };
        Var<T> scores;
        {
          CostDetail tag(ctx.counter(), "scores");
          scores = ops::matmul(part(q), part(k), false, true);
        }
        Var<T> p;
        {
          CostDetail tag(ctx.counter(), "softmax");
          p = ops::softmax(scores, 1, scale);
        }
        if (weights && !ctx.tape.dry_run()) {
          std::copy(p.value().data().begin(), p.value().data().end(),
                    weights->ptr() + (n * heads_ + h) * m * m);
        }
        CostDetail tag(ctx.counter(), "aggregate");
        heads.push_back(ops::matmul(p, part(v)));
      }
      rows.push_back(heads.size() == 1 ? heads.front() : ops::concat(heads, 1));
    }
  }
  Var<T> merged = rows.size() == 1 ? rows.front() : ops::concat(rows, 0);
  return wo_(ctx, merged);
}

template <typename T>
FeedForward<T>::FeedForward(ParameterStore<T>& store, std::mt19937_64& rng, std::string path,
                            Pillar pillar, std::size_t dim, std::size_t expansion)
    : path_(std::move(path)),
      pillar_(pillar),
      fc1_(store, rng, path_ + ".fc1", pillar, dim, expansion * dim, true),
      fc2_(store, rng, path_ + ".fc2", pillar, expansion * dim, dim, true) {}

template <typename T>
Var<T> FeedForward<T>::operator()(Context<T>& ctx, const Var<T>& z) const {
  Var<T> h = fc1_(ctx, z);
  {
    CostScope scope(ctx.counter(), path_, pillar_);
    h = ops::gelu(h);
  }
  return fc2_(ctx, h);
}

#define MFORMER_INSTANTIATE_LAYERS(T)                                       \
  template class ParameterStore<T>;                                         \
  template void fill_normal(Parameter<T>&, double, std::mt19937_64&);      \
  template class Linear<T>;                                                 \
  template class Conv2d<T>;                                                 \
  template class BatchNorm2d<T>;                                            \
  template class LayerNorm<T>;                                              \
  template class DyReLUGenerator<T>;                                        \
  template class MultiHeadSelfAttention<T>;                                 \
  template class FeedForward<T>;

MFORMER_INSTANTIATE_LAYERS(float)
MFORMER_INSTANTIATE_LAYERS(double)

}  // namespace mformer::nn
