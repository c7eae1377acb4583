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

#include "mformer/model.hpp"

#include <string>

namespace mformer {

template <typename T>
Model<T>::Model(const ModelSpec& spec, std::uint64_t seed) : spec_(spec) {
  validate(spec_);
  std::mt19937_64 rng(seed);
  TokenConfig tokens{spec.tokens, spec.token_dim, spec.heads, spec.ffn};
  const TokenConfig* token_cfg = spec.former ? &tokens : nullptr;
  const std::size_t dyrelu_hidden = spec.token_dim / 4;

  if (spec.former) {
    tokens_ = &store_.add("tokens", "tokens", Pillar::kFormer, {spec.tokens, spec.token_dim}, false);
    nn::fill_normal(*tokens_, 0.02, rng);
  }
  const BlockSpec& s0 = spec.blocks.front();
  stem_ = Stem<T>(store_, rng, "stem", 3, s0.out, s0.kernel, s0.stride);
  std::size_t channels = s0.out;
  for (std::size_t i = 1; i + 1 < spec.blocks.size(); ++i) {
    const BlockSpec& b = spec.blocks[i];
    const std::string path = "blocks." + std::to_string(i);
    MobileConfig mc{channels, b.exp, b.out, b.kernel, b.groups, false};
    switch (b.kind) {
      case BlockKind::kLite:
        blocks_.emplace_back(std::in_place_type<LiteBottleneck<T>>, store_, rng, path, mc, b.stride);
        break;
      case BlockKind::kMobileFormer:
      case BlockKind::kMobileFormerDown:
        mc.downsample = b.kind == BlockKind::kMobileFormerDown;
        blocks_.emplace_back(std::in_place_type<MobileFormerBlock<T>>, store_, rng, path, mc,
                             token_cfg, spec.dynamic_relu, dyrelu_hidden);
        break;
      case BlockKind::kConv1x1:
        blocks_.emplace_back(std::in_place_type<PointwiseStage<T>>, store_, rng, path, Pillar::kHead,
                             channels, b.out, b.groups);
        break;
      default:
        throw SpecError("unexpected block kind inside the body", "kind");
    }
    channels = b.out;
  }
  head_ = ClassifierHead<T>(store_, rng, "head", channels, spec.former ? spec.token_dim : 0,
                            spec.head_hidden(), spec.classes, T(0));
}

template <typename T>
Var<T> Model<T>::forward(nn::Context<T>& ctx, const Var<T>& images, ForwardTrace<T>* trace) {
  if (images.shape().size() != 4 || images.dim(1) != 3) {
    throw ShapeError("model input must be [N, 3, H, W], got " + to_string(images.shape()));
  }
  const std::size_t n = images.dim(0);
  Var<T> x = stem_(ctx, images);
  Var<T> z;
  if (tokens_) {
    Var<T> z0 = ctx.tape.parameter(*tokens_);
    z = n == 1 ? z0 : ops::concat(std::vector<Var<T>>(n, z0), 0);
  }
  auto record = [&](std::size_t index, BlockKind kind) {
    if (trace) trace->steps.push_back({index, kind, x.shape(), z.valid() ? z.shape() : Shape{}});
  };
  record(0, BlockKind::kStem);
  for (std::size_t i = 0; i < blocks_.size(); ++i) {
    const std::size_t index = i + 1;
    const BlockKind kind = spec_.blocks[index].kind;
    if (auto* lite = std::get_if<LiteBottleneck<T>>(&blocks_[i])) {
      x = (*lite)(ctx, x);
    } else if (auto* mf = std::get_if<MobileFormerBlock<T>>(&blocks_[i])) {
      BlockAttention<T>* maps = nullptr;
      if (trace && trace->record_attention && mf->has_former()) {
        trace->attention.emplace_back(index, BlockAttention<T>{});
        maps = &trace->attention.back().second;
      }
      std::tie(x, z) = (*mf)(ctx, x, z, n, maps);
    } else {
      x = std::get<PointwiseStage<T>>(blocks_[i])(ctx, x);
    }
    record(index, kind);
  }
  if (tokens_) {
    Var<T> first = first_tokens(z, n);
    return head_(ctx, x, &first);
  }
  return head_(ctx, x, nullptr);
}

template <typename T>
std::vector<MobileFormerBlock<T>*> Model<T>::mobile_former_blocks() {
  std::vector<MobileFormerBlock<T>*> out;
  for (Block& b : blocks_) {
    if (auto* mf = std::get_if<MobileFormerBlock<T>>(&b)) out.push_back(mf);
  }
  return out;
}

template <typename T>
void Model<T>::calibrate(const std::vector<Tensor<T>>& batches) {
  if (batches.empty()) throw ArgumentError("calibrate: no batches");
  auto& states = store_.norm_states();
  std::vector<T> saved;
  for (auto& st : states) saved.push_back(st.momentum);
  std::mt19937_64 rng(0);
  for (std::size_t k = 0; k < batches.size(); ++k) {
    // Cumulative average: batch k enters with weight 1/(k+1).
    for (auto& st : states) st.momentum = T(1) / static_cast<T>(k + 1);
    Tape<T> tape({.grad_enabled = false});
    nn::Context<T> ctx{tape, Mode::kTrain, &rng};
    forward(ctx, tape.constant(batches[k]));
  }
  for (std::size_t i = 0; i < states.size(); ++i) states[i].momentum = saved[i];
}

template <typename T>
bool Model<T>::calibrated() const {
  for (const auto& st : store_.norm_states()) {
    if (!st.initialized) return false;
  }
  return true;
}

template <typename T>
void randomize_parameters(Model<T>& model, std::uint64_t seed, double scale) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> dist(0.0, scale);
  for (Parameter<T>& p : model.parameters()) {
    const bool gamma = p.name.ends_with(".gamma");
    for (T& v : p.value.data()) v = static_cast<T>((gamma ? 1.0 : 0.0) + dist(rng));
  }
}

template class Model<float>;
template class Model<double>;
template void randomize_parameters(Model<float>&, std::uint64_t, double);
template void randomize_parameters(Model<double>&, std::uint64_t, double);

}  // namespace mformer
