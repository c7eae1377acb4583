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

#include "mformer/bridge.hpp"

#include <algorithm>
#include <cmath>

namespace mformer {
namespace {

void check_heads(const std::string& path, std::size_t channels, std::size_t dim, std::size_t heads) {
  if (heads == 0 || channels % heads != 0 || dim % heads != 0) {
    throw ArgumentError(path + ": channels " + std::to_string(channels) + " and token dim " +
                        std::to_string(dim) + " must both be divisible by " +
                        std::to_string(heads) + " heads");
  }
}

template <typename T>
void check_inputs(const std::string& path, const Var<T>& x, const Var<T>& z, std::size_t channels,
                  std::size_t dim) {
  if (x.shape().size() != 4 || x.dim(1) != channels) {
    throw ShapeError(path + ": feature map must be [N, " + std::to_string(channels) +
                     ", h, w], got " + to_string(x.shape()));
  }
  if (z.shape().size() != 2 || z.dim(1) != dim || z.dim(0) % x.dim(0) != 0) {
    throw ShapeError(path + ": tokens must be [N*M, " + std::to_string(dim) + "], got " +
                     to_string(z.shape()) + " for batch " + std::to_string(x.dim(0)));
  }
}

}  // namespace

template <typename T>
MobileToFormer<T>::MobileToFormer(nn::ParameterStore<T>& store, std::mt19937_64& rng,
                                  std::string path, std::size_t channels, std::size_t token_dim,
                                  std::size_t heads)
    : path_(std::move(path)), channels_(channels), dim_(token_dim), heads_(heads) {
  check_heads(path_, channels, token_dim, heads);
  for (std::size_t h = 0; h < heads; ++h) {
    queries_.emplace_back(store, rng, path_ + ".q" + std::to_string(h), Pillar::kBridge,
                          token_dim / heads, channels / heads, false);
  }
  output_ = nn::Linear<T>(store, rng, path_ + ".o", Pillar::kBridge, channels, token_dim, false,
                          nn::Init::kZero);
}

template <typename T>
Var<T> MobileToFormer<T>::operator()(nn::Context<T>& ctx, const Var<T>& x, const Var<T>& z,
                                     AttentionRecord<T>* record) const {
  check_inputs(path_, x, z, channels_, dim_);
  const std::size_t n = x.dim(0), h = x.dim(2), w = x.dim(3), l = h * w;
  const std::size_t m = z.dim(0) / n, ch = channels_ / heads_, dh = dim_ / heads_;
  CostCounter* counter = ctx.counter();
  if (record) *record = {Tensor<T>({n, heads_, m, l}), h, w};

  std::vector<Var<T>> q(heads_);
  {
    CostDetail tag(counter, "projection");
    for (std::size_t hd = 0; hd < heads_; ++hd) {
      q[hd] = queries_[hd](ctx, ops::slice(z, 1, hd * dh, (hd + 1) * dh));
    }
  }
  const T scale = T(1) / std::sqrt(static_cast<T>(ch));
  std::vector<Var<T>> rows;
  {
    CostScope scope(counter, path_, Pillar::kBridge);
    Var<T> flat = ops::reshape(x, {n * channels_, l});
    for (std::size_t b = 0; b < n; ++b) {
      std::vector<Var<T>> heads;
      for (std::size_t hd = 0; hd < heads_; ++hd) {
        Var<T> xh = ops::slice(flat, 0, b * channels_ + hd * ch, b * channels_ + (hd + 1) * ch);
        Var<T> qh = ops::slice(q[hd], 0, b * m, (b + 1) * m);
        Var<T> scores, p;
        {
          CostDetail tag(counter, "scores");
          scores = ops::matmul(qh, xh);
        }
        {
          CostDetail tag(counter, "softmax");
          p = ops::softmax(scores, 1, scale);
        }
        if (record && !ctx.tape.dry_run()) {
          std::copy(p.value().data().begin(), p.value().data().end(),
                    record->weights.ptr() + (b * heads_ + hd) * m * l);
        }
        CostDetail tag(counter, "aggregate");
        heads.push_back(ops::matmul(p, xh, false, true));
      }
      rows.push_back(heads.size() == 1 ? heads.front() : ops::concat(heads, 1));
    }
  }
  Var<T> mixed = rows.size() == 1 ? rows.front() : ops::concat(rows, 0);
  Var<T> update;
  {
    CostDetail tag(counter, "projection");
    update = output_(ctx, mixed);
  }
  CostScope scope(counter, path_, Pillar::kBridge);
  CostDetail tag(counter, "residual");
  return ops::add(z, update);
}

template <typename T>
FormerToMobile<T>::FormerToMobile(nn::ParameterStore<T>& store, std::mt19937_64& rng,
                                  std::string path, std::size_t channels, std::size_t token_dim,
                                  std::size_t heads)
    : path_(std::move(path)), channels_(channels), dim_(token_dim), heads_(heads) {
  check_heads(path_, channels, token_dim, heads);
  for (std::size_t h = 0; h < heads; ++h) {
    keys_.emplace_back(store, rng, path_ + ".k" + std::to_string(h), Pillar::kBridge,
                       token_dim / heads, channels / heads, false);
  }
  for (std::size_t h = 0; h < heads; ++h) {
    values_.emplace_back(store, rng, path_ + ".v" + std::to_string(h), Pillar::kBridge,
                         token_dim / heads, channels / heads, false, nn::Init::kZero);
  }
}

template <typename T>
Var<T> FormerToMobile<T>::operator()(nn::Context<T>& ctx, const Var<T>& x, const Var<T>& z,
                                     AttentionRecord<T>* record) const {
  check_inputs(path_, x, z, channels_, dim_);
  const std::size_t n = x.dim(0), h = x.dim(2), w = x.dim(3), l = h * w;
  const std::size_t m = z.dim(0) / n, ch = channels_ / heads_, dh = dim_ / heads_;
  CostCounter* counter = ctx.counter();
  if (record) *record = {Tensor<T>({n, heads_, l, m}), h, w};

  std::vector<Var<T>> k(heads_), v(heads_);
  {
    CostDetail tag(counter, "projection");
    for (std::size_t hd = 0; hd < heads_; ++hd) {
      Var<T> zh = ops::slice(z, 1, hd * dh, (hd + 1) * dh);
      k[hd] = keys_[hd](ctx, zh);
      v[hd] = values_[hd](ctx, zh);
    }
  }
  const T scale = T(1) / std::sqrt(static_cast<T>(ch));
  CostScope scope(counter, path_, Pillar::kBridge);
  Var<T> flat = ops::reshape(x, {n * channels_, l});
  std::vector<Var<T>> planes;
  for (std::size_t b = 0; b < n; ++b) {
    for (std::size_t hd = 0; hd < heads_; ++hd) {
      Var<T> xh = ops::slice(flat, 0, b * channels_ + hd * ch, b * channels_ + (hd + 1) * ch);
      Var<T> kh = ops::slice(k[hd], 0, b * m, (b + 1) * m);
      Var<T> vh = ops::slice(v[hd], 0, b * m, (b + 1) * m);
      Var<T> scores, p;
      {
        CostDetail tag(counter, "scores");
        scores = ops::matmul(kh, xh);  // [M, L]
      }
      {
        CostDetail tag(counter, "softmax");
        p = ops::softmax(scores, 0, scale);  // over tokens
      }
      if (record && !ctx.tape.dry_run()) {
        T* dst = record->weights.ptr() + (b * heads_ + hd) * l * m;
        const T* src = p.value().ptr();
        for (std::size_t t = 0; t < m; ++t)
          for (std::size_t i = 0; i < l; ++i) dst[i * m + t] = src[t * l + i];
      }
      CostDetail tag(counter, "aggregate");
      planes.push_back(ops::matmul(vh, p, true, false));  // [C/H, L]
    }
  }
  Var<T> mixed = planes.size() == 1 ? planes.front() : ops::concat(planes, 0);
  CostDetail tag(counter, "residual");
  return ops::add(x, ops::reshape(mixed, x.shape()));
}

template class MobileToFormer<float>;
template class MobileToFormer<double>;
template class FormerToMobile<float>;
template class FormerToMobile<double>;

}  // namespace mformer
