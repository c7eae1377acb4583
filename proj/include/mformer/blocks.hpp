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

// Composite blocks. Feature maps are [N, C, h, w]; token sets are the batch
// stacked as [N * M, d].

#include <cstddef>
#include <string>
#include <utility>
#include <vector>

#include "mformer/bridge.hpp"
#include "mformer/layers.hpp"

namespace mformer {

struct TokenConfig {
  std::size_t count = 6;
  std::size_t dim = 192;
  std::size_t heads = 2;
  bool ffn = true;
};

struct MobileConfig {
  std::size_t in = 0;
  std::size_t exp = 0;
  std::size_t out = 0;
  std::size_t kernel = 3;
  /// Groups of every pointwise convolution.
  std::size_t groups = 1;
  /// Four-convolution stride-2 variant.
  bool downsample = false;
};

/// z1 = LN(z + MHA(z)); z2 = LN(z1 + FFN(z1)). Without FFN the second half is
/// skipped.
template <typename T>
class FormerBlock {
 public:
  FormerBlock() = default;
  FormerBlock(nn::ParameterStore<T>& store, std::mt19937_64& rng, std::string path,
              const TokenConfig& tokens);

  Var<T> operator()(nn::Context<T>& ctx, const Var<T>& z, std::size_t batch) const;

  nn::MultiHeadSelfAttention<T>& attention() { return mha_; }
  nn::FeedForward<T>* ffn() { return has_ffn_ ? &ffn_ : nullptr; }
  const std::string& path() const { return path_; }

 private:
  std::string path_;
  bool has_ffn_ = true;
  nn::MultiHeadSelfAttention<T> mha_;
  nn::FeedForward<T> ffn_;
  nn::LayerNorm<T> ln1_, ln2_;
};

/// Convolutional branch of a block.
///   normal:     pw in->exp, BN, act; dw kxk, BN, act; pw exp->out, BN; +x if in == out
///   downsample: dw kxk s2 in->exp, BN, act; pw exp->in, BN;
///               dw kxk in->exp, BN, act; pw exp->out, BN
/// The activation is dynamic ReLU conditioned on a token when a generator is
/// present, otherwise ReLU.
template <typename T>
class MobileSubBlock {
 public:
  MobileSubBlock() = default;
  /// token_dim == 0 builds a static-ReLU branch.
  MobileSubBlock(nn::ParameterStore<T>& store, std::mt19937_64& rng, std::string path,
                 const MobileConfig& config, std::size_t token_dim, std::size_t dyrelu_hidden);

  /// `token` is [N, d]; required iff the branch is dynamic.
  Var<T> operator()(nn::Context<T>& ctx, const Var<T>& x, const Var<T>* token);

  bool dynamic() const { return has_generator_; }
  bool residual() const { return !config_.downsample && config_.in == config_.out; }
  const MobileConfig& config() const { return config_; }
  std::vector<nn::Conv2d<T>>& convs() { return convs_; }
  std::vector<nn::BatchNorm2d<T>>& norms() { return norms_; }
  nn::DyReLUGenerator<T>* generator() { return has_generator_ ? &generator_ : nullptr; }
  const std::string& path() const { return path_; }

 private:
  std::string path_;
  MobileConfig config_;
  std::vector<nn::Conv2d<T>> convs_;
  std::vector<nn::BatchNorm2d<T>> norms_;
  std::vector<bool> activated_;
  bool has_generator_ = false;
  nn::DyReLUGenerator<T> generator_;
};

template <typename T>
struct BlockAttention {
  AttentionRecord<T> to_former;
  AttentionRecord<T> to_mobile;
};

/// One hybrid block. Order: tokens read the block input, Former
/// updates the tokens, Mobile runs conditioned on the first updated token,
/// and the Mobile output reads the updated tokens.
template <typename T>
class MobileFormerBlock {
 public:
  MobileFormerBlock() = default;
  /// A null `tokens` builds a Mobile-only block (static ReLU, no bridge).
  MobileFormerBlock(nn::ParameterStore<T>& store, std::mt19937_64& rng, std::string path,
                    const MobileConfig& mobile, const TokenConfig* tokens, bool dynamic_relu,
                    std::size_t dyrelu_hidden);

  /// Returns (x', z'). Without a Former branch z passes through untouched.
  std::pair<Var<T>, Var<T>> operator()(nn::Context<T>& ctx, const Var<T>& x, const Var<T>& z,
                                       std::size_t batch, BlockAttention<T>* attention = nullptr);

  bool has_former() const { return has_former_; }
  MobileSubBlock<T>& mobile() { return mobile_; }
  FormerBlock<T>& former() { return former_; }
  MobileToFormer<T>& to_former() { return m2f_; }
  FormerToMobile<T>& to_mobile() { return f2m_; }
  const std::string& path() const { return path_; }

 private:
  std::string path_;
  bool has_former_ = false;
  std::size_t tokens_ = 0;
  MobileSubBlock<T> mobile_;
  FormerBlock<T> former_;
  MobileToFormer<T> m2f_;
  FormerToMobile<T> f2m_;
};

/// conv kxk (stride 2, pad k/2) 3 -> C, BN, h-swish.
template <typename T>
class Stem {
 public:
  Stem() = default;
  Stem(nn::ParameterStore<T>& store, std::mt19937_64& rng, std::string path, std::size_t in,
       std::size_t out, std::size_t kernel = 3, std::size_t stride = 2);
  Var<T> operator()(nn::Context<T>& ctx, const Var<T>& image);

 private:
  std::string path_;
  nn::Conv2d<T> conv_;
  nn::BatchNorm2d<T> bn_;
};

/// Depthwise expansion (channel multiplier exp/in) then pointwise squeeze:
/// dw kxk in->exp, BN, h-swish; pw exp->out, BN. No residual.
template <typename T>
class LiteBottleneck {
 public:
  LiteBottleneck() = default;
  LiteBottleneck(nn::ParameterStore<T>& store, std::mt19937_64& rng, std::string path,
                 const MobileConfig& config, std::size_t stride);
  Var<T> operator()(nn::Context<T>& ctx, const Var<T>& x);

 private:
  std::string path_;
  nn::Conv2d<T> dw_, pw_;
  nn::BatchNorm2d<T> bn1_, bn2_;
};

/// 1x1 conv, BN, h-swish; widens the last feature map before pooling.
template <typename T>
class PointwiseStage {
 public:
  PointwiseStage() = default;
  PointwiseStage(nn::ParameterStore<T>& store, std::mt19937_64& rng, std::string path,
                 Pillar pillar, std::size_t in, std::size_t out, std::size_t groups);
  Var<T> operator()(nn::Context<T>& ctx, const Var<T>& x);

 private:
  std::string path_;
  Pillar pillar_ = Pillar::kHead;
  nn::Conv2d<T> conv_;
  nn::BatchNorm2d<T> bn_;
};

/// Global average pool, concatenate the first token when present, FC, h-swish,
/// dropout, FC.
template <typename T>
class ClassifierHead {
 public:
  ClassifierHead() = default;
  ClassifierHead(nn::ParameterStore<T>& store, std::mt19937_64& rng, std::string path,
                 std::size_t channels, std::size_t token_dim, std::size_t hidden,
                 std::size_t classes, T dropout);

  /// `token` is [N, d] or null when the model has no tokens.
  Var<T> operator()(nn::Context<T>& ctx, const Var<T>& x, const Var<T>* token) const;

  nn::Linear<T>& fc1() { return fc1_; }
  nn::Linear<T>& fc2() { return fc2_; }
  T dropout() const { return dropout_; }
  void set_dropout(T rate) { dropout_ = rate; }

 private:
  std::string path_;
  std::size_t token_dim_ = 0;
  nn::Linear<T> fc1_, fc2_;
  T dropout_ = T(0);
};

/// Rows {0, M, 2M, ...} of z: the first token of every image, [N, d].
template <typename T>
Var<T> first_tokens(const Var<T>& z, std::size_t batch);

}  // namespace mformer
