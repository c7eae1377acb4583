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

#include <cstdint>
#include <memory>
#include <random>
#include <variant>
#include <vector>

#include "mformer/arch_spec.hpp"
#include "mformer/blocks.hpp"

namespace mformer {

/// Shapes and attention maps observed during one forward pass.
template <typename T>
struct ForwardTrace {
  struct Step {
    std::size_t index;  // 0 is the stem
    BlockKind kind;
    Shape x;
    Shape z;  // empty without tokens
  };
  bool record_attention = false;
  std::vector<Step> steps;
  /// (block index, maps) for every block with a bridge.
  std::vector<std::pair<std::size_t, BlockAttention<T>>> attention;
};

/// A network built from a ModelSpec. Block i of the spec (0 = stem) owns
/// parameters under the path "blocks.i" ("stem" and "head" for the ends).
template <typename T = float>
class Model {
 public:
  Model(const ModelSpec& spec, std::uint64_t seed);
  Model(const Model&) = delete;
  Model& operator=(const Model&) = delete;

  /// images [N, 3, H, W] -> logits [N, classes].
  Var<T> forward(nn::Context<T>& ctx, const Var<T>& images, ForwardTrace<T>* trace = nullptr);

  const ModelSpec& spec() const { return spec_; }
  nn::ParameterStore<T>& store() { return store_; }
  const nn::ParameterStore<T>& store() const { return store_; }
  std::deque<Parameter<T>>& parameters() { return store_.parameters(); }
  std::size_t num_parameters() const { return store_.total_size(); }
  /// Learnable initial tokens [M, d]; null for Mobile-only models.
  Parameter<T>* tokens() { return tokens_; }
  ClassifierHead<T>& head() { return head_; }
  /// Blocks with a bridge, in order.
  std::vector<MobileFormerBlock<T>*> mobile_former_blocks();

  /// Sets every batch-norm running statistic to the average of the batch
  /// statistics over `batches` (train-mode passes, no gradients).
  void calibrate(const std::vector<Tensor<T>>& batches);
  bool calibrated() const;

 private:
  using Block = std::variant<LiteBottleneck<T>, MobileFormerBlock<T>, PointwiseStage<T>>;

  ModelSpec spec_;
  nn::ParameterStore<T> store_;
  Parameter<T>* tokens_ = nullptr;
  Stem<T> stem_;
  std::vector<Block> blocks_;
  ClassifierHead<T> head_;
};

template <typename T = float>
std::unique_ptr<Model<T>> build_model(const ModelSpec& spec, std::uint64_t seed) {
  return std::make_unique<Model<T>>(spec, seed);
}

/// Redraws every parameter from N(0, scale^2) (gammas around 1), so that no
/// gradient path is blocked by a zero initialization. Used by gradient checks.
template <typename T>
void randomize_parameters(Model<T>& model, std::uint64_t seed, double scale = 0.5);

extern template class Model<float>;
extern template class Model<double>;

}  // namespace mformer
