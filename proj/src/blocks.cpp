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

#include "mformer/blocks.hpp"

namespace mformer {

template <typename T>
Var<T> first_tokens(const Var<T>& z, std::size_t batch) {
  if (batch == 0 || z.shape().size() != 2 || z.dim(0) % batch != 0) {
    throw ShapeError("first_tokens: token rows " + to_string(z.shape()) +
                     " do not split into batch " + std::to_string(batch));
  }
  const std::size_t m = z.dim(0) / batch;
  std::vector<std::size_t> rows(batch);
  for (std::size_t n = 0; n < batch; ++n) rows[n] = n * m;
  return ops::gather_rows<T>(z, rows);
}

template <typename T>
FormerBlock<T>::FormerBlock(nn::ParameterStore<T>& store, std::mt19937_64& rng, std::string path,
                            const TokenConfig& tokens)
    : path_(std::move(path)),
      has_ffn_(tokens.ffn),
      mha_(store, rng, path_ + ".mha", Pillar::kFormer, tokens.dim, tokens.heads),
      ln1_(store, path_ + ".ln1", Pillar::kFormer, tokens.dim) {
  if (has_ffn_) {
    ffn_ = nn::FeedForward<T>(store, rng, path_ + ".ffn", Pillar::kFormer, tokens.dim, 2);
    ln2_ = nn::LayerNorm<T>(store, path_ + ".ln2", Pillar::kFormer, tokens.dim);
  }
}

template <typename T>
Var<T> FormerBlock<T>::operator()(nn::Context<T>& ctx, const Var<T>& z, std::size_t batch) const {
  Var<T> attended = mha_(ctx, z, batch);
  Var<T> z1;
  {
    CostScope scope(ctx.counter(), path_, Pillar::kFormer);
    z1 = ops::add(z, attended);
  }
  z1 = ln1_(ctx, z1);
  if (!has_ffn_) return z1;
  Var<T> fed = ffn_(ctx, z1);
  Var<T> z2;
  {
    CostScope scope(ctx.counter(), path_, Pillar::kFormer);
    z2 = ops::add(z1, fed);
  }
  return ln2_(ctx, z2);
}

template <typename T>
MobileSubBlock<T>::MobileSubBlock(nn::ParameterStore<T>& store, std::mt19937_64& rng,
                                  std::string path, const MobileConfig& c, std::size_t token_dim,
                                  std::size_t dyrelu_hidden)
    : path_(std::move(path)), config_(c) {
  if (c.in == 0 || c.exp == 0 || c.out == 0) throw ArgumentError(path_ + ": zero channel count");
  if (c.kernel % 2 == 0) throw ArgumentError(path_ + ": kernel must be odd");
  const std::size_t pad = c.kernel / 2;
  auto add = [&](std::size_t in, std::size_t out, std::size_t k, ops::Conv2dOptions o, bool act) {
    const std::string idx = std::to_string(convs_.size() + 1);
    convs_.emplace_back(store, rng, path_ + ".conv" + idx, Pillar::kMobile, in, out, k, o);
    norms_.emplace_back(store, path_ + ".bn" + idx, Pillar::kMobile, out);
    activated_.push_back(act);
  };
  if (c.downsample) {
    if (c.exp % c.in != 0) {
      throw ArgumentError(path_ + ": depthwise expansion " + std::to_string(c.exp) +
                          " is not a multiple of input channels " + std::to_string(c.in));
    }
    add(c.in, c.exp, c.kernel, {2, pad, c.in}, true);
    add(c.exp, c.in, 1, {1, 0, c.groups}, false);
    add(c.in, c.exp, c.kernel, {1, pad, c.in}, true);
    add(c.exp, c.out, 1, {1, 0, c.groups}, false);
  } else {
    add(c.in, c.exp, 1, {1, 0, c.groups}, true);
    add(c.exp, c.exp, c.kernel, {1, pad, c.exp}, true);
    add(c.exp, c.out, 1, {1, 0, c.groups}, false);
  }
  if (token_dim > 0) {
    has_generator_ = true;
    generator_ = nn::DyReLUGenerator<T>(store, rng, path_ + ".dyrelu", token_dim, dyrelu_hidden, c.exp);
  }
}

template <typename T>
Var<T> MobileSubBlock<T>::operator()(nn::Context<T>& ctx, const Var<T>& x, const Var<T>* token) {
  if (x.shape().size() != 4 || x.dim(1) != config_.in) {
    throw ShapeError(path_ + ": expected [N, " + std::to_string(config_.in) + ", h, w], got " +
                     to_string(x.shape()));
  }
  if (config_.downsample && (x.dim(2) % 2 != 0 || x.dim(3) % 2 != 0)) {
    throw ShapeError(path_ + ": downsampling needs even spatial extents, got " + to_string(x.shape()));
  }
  Var<T> deltas;
  if (has_generator_) {
    if (!token) throw ArgumentError(path_ + ": dynamic activation needs a conditioning token");
    deltas = generator_.coefficients(ctx, *token);
  }
  Var<T> h = x;
  for (std::size_t i = 0; i < convs_.size(); ++i) {
    h = norms_[i](ctx, convs_[i](ctx, h));
    if (!activated_[i]) continue;
    CostScope scope(ctx.counter(), path_ + ".act" + std::to_string(i + 1), Pillar::kMobile);
    h = has_generator_ ? generator_.apply(ctx, h, deltas) : ops::relu(h);
  }
  if (residual()) {
    CostScope scope(ctx.counter(), path_, Pillar::kMobile);
    h = ops::add(h, x);
  }
  return h;
}

template <typename T>
MobileFormerBlock<T>::MobileFormerBlock(nn::ParameterStore<T>& store, std::mt19937_64& rng,
                                        std::string path, const MobileConfig& mobile,
                                        const TokenConfig* tokens, bool dynamic_relu,
                                        std::size_t dyrelu_hidden)
    : path_(std::move(path)), has_former_(tokens != nullptr) {
  if (has_former_) {
    tokens_ = tokens->count;
    m2f_ = MobileToFormer<T>(store, rng, path_ + ".m2f", mobile.in, tokens->dim, tokens->heads);
    former_ = FormerBlock<T>(store, rng, path_ + ".former", *tokens);
  }
  const std::size_t dim = has_former_ && dynamic_relu ? tokens->dim : 0;
  mobile_ = MobileSubBlock<T>(store, rng, path_ + ".mobile", mobile, dim, dyrelu_hidden);
  if (has_former_) {
    f2m_ = FormerToMobile<T>(store, rng, path_ + ".f2m", mobile.out, tokens->dim, tokens->heads);
  }
}

template <typename T>
std::pair<Var<T>, Var<T>> MobileFormerBlock<T>::operator()(nn::Context<T>& ctx, const Var<T>& x,
                                                           const Var<T>& z, std::size_t batch,
                                                           BlockAttention<T>* attention) {
  if (!has_former_) return {mobile_(ctx, x, nullptr), z};
  if (z.dim(0) != batch * tokens_) {
    throw ShapeError(path_ + ": expected " + std::to_string(batch * tokens_) + " token rows, got " +
                     to_string(z.shape()));
  }
  Var<T> mixed = m2f_(ctx, x, z, attention ? &attention->to_former : nullptr);
  Var<T> z_out = former_(ctx, mixed, batch);
  Var<T> hidden;
  if (mobile_.dynamic()) {
    Var<T> token = first_tokens(z_out, batch);
    hidden = mobile_(ctx, x, &token);
  } else {
    hidden = mobile_(ctx, x, nullptr);
  }
  Var<T> x_out = f2m_(ctx, hidden, z_out, attention ? &attention->to_mobile : nullptr);
  return {x_out, z_out};
}

template <typename T>
Stem<T>::Stem(nn::ParameterStore<T>& store, std::mt19937_64& rng, std::string path, std::size_t in,
              std::size_t out, std::size_t kernel, std::size_t stride)
    : path_(std::move(path)),
      conv_(store, rng, path_ + ".conv", Pillar::kStem, in, out, kernel, {stride, kernel / 2, 1}),
      bn_(store, path_ + ".bn", Pillar::kStem, out) {}

template <typename T>
Var<T> Stem<T>::operator()(nn::Context<T>& ctx, const Var<T>& image) {
  Var<T> h = bn_(ctx, conv_(ctx, image));
  CostScope scope(ctx.counter(), path_, Pillar::kStem);
  return ops::h_swish(h);
}

template <typename T>
LiteBottleneck<T>::LiteBottleneck(nn::ParameterStore<T>& store, std::mt19937_64& rng,
                                  std::string path, const MobileConfig& c, std::size_t stride)
    : path_(std::move(path)) {
  if (c.in == 0 || c.exp % c.in != 0) {
    throw ArgumentError(path_ + ": depthwise expansion " + std::to_string(c.exp) +
                        " is not a multiple of input channels " + std::to_string(c.in));
  }
  dw_ = nn::Conv2d<T>(store, rng, path_ + ".conv1", Pillar::kMobile, c.in, c.exp, c.kernel,
                      {stride, c.kernel / 2, c.in});
  bn1_ = nn::BatchNorm2d<T>(store, path_ + ".bn1", Pillar::kMobile, c.exp);
  pw_ = nn::Conv2d<T>(store, rng, path_ + ".conv2", Pillar::kMobile, c.exp, c.out, 1,
                      {1, 0, c.groups});
  bn2_ = nn::BatchNorm2d<T>(store, path_ + ".bn2", Pillar::kMobile, c.out);
}

template <typename T>
Var<T> LiteBottleneck<T>::operator()(nn::Context<T>& ctx, const Var<T>& x) {
  Var<T> h = bn1_(ctx, dw_(ctx, x));
  {
    CostScope scope(ctx.counter(), path_ + ".act1", Pillar::kMobile);
    h = ops::h_swish(h);
  }
  return bn2_(ctx, pw_(ctx, h));
}

template <typename T>
PointwiseStage<T>::PointwiseStage(nn::ParameterStore<T>& store, std::mt19937_64& rng,
                                  std::string path, Pillar pillar, std::size_t in, std::size_t out,
                                  std::size_t groups)
    : path_(std::move(path)),
      pillar_(pillar),
      conv_(store, rng, path_ + ".conv", pillar, in, out, 1, {1, 0, groups}),
      bn_(store, path_ + ".bn", pillar, out) {}

template <typename T>
Var<T> PointwiseStage<T>::operator()(nn::Context<T>& ctx, const Var<T>& x) {
  Var<T> h = bn_(ctx, conv_(ctx, x));
  CostScope scope(ctx.counter(), path_, pillar_);
  return ops::h_swish(h);
}

template <typename T>
ClassifierHead<T>::ClassifierHead(nn::ParameterStore<T>& store, std::mt19937_64& rng,
                                  std::string path, std::size_t channels, std::size_t token_dim,
                                  std::size_t hidden, std::size_t classes, T dropout)
    : path_(std::move(path)),
      token_dim_(token_dim),
      fc1_(store, rng, path_ + ".fc1", Pillar::kHead, channels + token_dim, hidden, true),
      fc2_(store, rng, path_ + ".fc2", Pillar::kHead, hidden, classes, true),
      dropout_(dropout) {}

template <typename T>
Var<T> ClassifierHead<T>::operator()(nn::Context<T>& ctx, const Var<T>& x,
                                     const Var<T>* token) const {
  if (x.shape().size() != 4) {
    throw ShapeError(path_ + ": expected a feature map, got " + to_string(x.shape()));
  }
  if ((token != nullptr) != (token_dim_ > 0)) {
    throw ArgumentError(path_ + ": token input must be given iff the head was built with one");
  }
  const std::size_t n = x.dim(0), c = x.dim(1);
  Var<T> features;
  {
    CostScope scope(ctx.counter(), path_, Pillar::kHead);
    features = ops::reshape(ops::avgpool2d(x, x.dim(2), x.dim(3)), {n, c});
    if (token) features = ops::concat<T>({features, *token}, 1);
  }
  Var<T> h = fc1_(ctx, features);
  {
    CostScope scope(ctx.counter(), path_, Pillar::kHead);
    h = ops::h_swish(h);
    if (ctx.mode == Mode::kTrain && dropout_ > T(0)) {
      if (!ctx.rng) throw ArgumentError(path_ + ": dropout in train mode needs a generator");
      h = ops::dropout(h, dropout_, *ctx.rng);
    }
  }
  return fc2_(ctx, h);
}

#define MFORMER_INSTANTIATE_BLOCKS(T)                              \
  template Var<T> first_tokens(const Var<T>&, std::size_t);        \
  template class FormerBlock<T>;                                   \
  template class MobileSubBlock<T>;                                \
  template class MobileFormerBlock<T>;                             \
  template class Stem<T>;                                          \
  template class LiteBottleneck<T>;                                \
  template class PointwiseStage<T>;                                \
  template class ClassifierHead<T>;

MFORMER_INSTANTIATE_BLOCKS(float)
MFORMER_INSTANTIATE_BLOCKS(double)

}  // namespace mformer
