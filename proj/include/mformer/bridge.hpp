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

// Light-weight cross attention between a feature map x [N, C, h, w] and a
// token set z [N * M, d]. Only the token side carries projections; the
// feature map enters attention as-is, split channel-wise into H contiguous
// heads of C/H channels. Scores are scaled by 1/sqrt(C/H).

#include <cstddef>
#include <string>
#include <vector>

#include "mformer/layers.hpp"

namespace mformer {

/// Attention probabilities of one bridge call.
///   local-to-global: [N, H, M, L], rows normalized over the L pixels
///   global-to-local: [N, H, L, M], rows normalized over the M tokens
/// Pixels are numbered y * width + x.
template <typename T>
struct AttentionRecord {
  Tensor<T> weights;
  std::size_t height = 0;
  std::size_t width = 0;
};

/// Feature map to tokens: z + W^O concat_h softmax((z_h W_h^Q) x_h^T) x_h.
template <typename T>
class MobileToFormer {
 public:
  MobileToFormer() = default;
  MobileToFormer(nn::ParameterStore<T>& store, std::mt19937_64& rng, std::string path,
                 std::size_t channels, std::size_t token_dim, std::size_t heads);

  Var<T> operator()(nn::Context<T>& ctx, const Var<T>& x, const Var<T>& z,
                    AttentionRecord<T>* record = nullptr) const;

  std::vector<nn::Linear<T>>& queries() { return queries_; }
  nn::Linear<T>& output() { return output_; }
  std::size_t channels() const { return channels_; }

 private:
  std::string path_;
  std::size_t channels_ = 0, dim_ = 0, heads_ = 0;
  std::vector<nn::Linear<T>> queries_;
  nn::Linear<T> output_;
};

/// Tokens to feature map: x + concat_h softmax(x_h (z_h W_h^K)^T) (z_h W_h^V),
/// with no output projection.
template <typename T>
class FormerToMobile {
 public:
  FormerToMobile() = default;
  FormerToMobile(nn::ParameterStore<T>& store, std::mt19937_64& rng, std::string path,
                 std::size_t channels, std::size_t token_dim, std::size_t heads);

  Var<T> operator()(nn::Context<T>& ctx, const Var<T>& x, const Var<T>& z,
                    AttentionRecord<T>* record = nullptr) const;

  std::vector<nn::Linear<T>>& keys() { return keys_; }
  std::vector<nn::Linear<T>>& values() { return values_; }
  std::size_t channels() const { return channels_; }

 private:
  std::string path_;
  std::size_t channels_ = 0, dim_ = 0, heads_ = 0;
  std::vector<nn::Linear<T>> keys_, values_;
};

extern template class MobileToFormer<float>;
extern template class MobileToFormer<double>;
extern template class FormerToMobile<float>;
extern template class FormerToMobile<double>;

}  // namespace mformer
