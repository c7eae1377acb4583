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

#include <gtest/gtest.h>

#include <cmath>
#include <numeric>
#include <random>

#include "mformer/blocks.hpp"
#include "mformer/cost_model.hpp"
#include "test_util.hpp"

namespace mformer {
namespace {

using testing::random_tensor;
using D = double;

// Multiply-adds charged by the convolutions of a mobile branch only.
std::uint64_t conv_madds(const CostCounter& counter, const std::string& path) {
  return counter.total_under(path, OpClass::kConv);
}

TEST(MobileSubBlock, ConvCostMatchesClosedForm) {
  std::mt19937_64 rng(1);
  nn::ParameterStore<float> store;
  MobileSubBlock<float> block(store, rng, "mb", {.in = 8, .exp = 24, .out = 8}, 16, 4);
  CostCounter counter;
  Tape<float> tape({.grad_enabled = false, .dry_run = true, .counter = &counter});
  nn::Context<float> ctx{tape};
  auto token = tape.constant(Tensor<float>({1, 16}));
  block(ctx, tape.constant(Tensor<float>({1, 8, 2, 2})), &token);
  EXPECT_EQ(conv_madds(counter, "mb"), 2400u);
  EXPECT_EQ(analytic_block_cost(4, 8, 3, 1, 1).mobile, 2400u);
}

TEST(MobileSubBlock, ConvCostRandomShapes) {
  std::mt19937_64 rng(2);
  std::uniform_int_distribution<std::size_t> side(1, 9), ch(1, 24), ex(1, 6);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t h = side(rng), w = side(rng), c = ch(rng), e = ex(rng);
    nn::ParameterStore<float> store;
    MobileSubBlock<float> block(store, rng, "mb", {.in = c, .exp = e * c, .out = c}, 0, 0);
    CostCounter counter;
    Tape<float> tape({.grad_enabled = false, .dry_run = true, .counter = &counter});
    nn::Context<float> ctx{tape};
    block(ctx, tape.constant(Tensor<float>({1, c, h, w})), nullptr);
    EXPECT_EQ(conv_madds(counter, "mb"), analytic_block_cost(h * w, c, e, 1, 1).mobile)
        << h << "x" << w << " C=" << c << " E=" << e;
  }
}

TEST(MobileSubBlock, ZeroLastPointwiseIsIdentity) {
  std::mt19937_64 rng(3);
  nn::ParameterStore<float> store;
  MobileSubBlock<float> block(store, rng, "mb", {.in = 6, .exp = 12, .out = 6}, 8, 2);
  ASSERT_TRUE(block.residual());
  block.convs().back().weight().value.fill(0.f);
  Tape<float> tape;
  nn::Context<float> ctx{tape, Mode::kTrain};
  const Tensor<float> x0 = random_tensor<float>({2, 6, 3, 3}, rng);
  auto token = tape.constant(random_tensor<float>({2, 8}, rng));
  EXPECT_EQ(block(ctx, tape.constant(x0), &token).value().storage(), x0.storage());
}

TEST(MobileSubBlock, StageFourShape) {
  std::mt19937_64 rng(4);
  nn::ParameterStore<float> store;
  MobileSubBlock<float> block(store, rng, "mb", {.in = 96, .exp = 384, .out = 96}, 192, 48);
  EXPECT_EQ(block.convs().size(), 3u);
  Tape<float> tape({.grad_enabled = false, .dry_run = true});
  nn::Context<float> ctx{tape};
  auto token = tape.constant(Tensor<float>({1, 192}));
  const auto y = block(ctx, tape.constant(Tensor<float>({1, 96, 14, 14})), &token);
  EXPECT_EQ(y.shape(), (Shape{1, 96, 14, 14}));
}

TEST(MobileSubBlock, DynamicNeedsToken) {
  std::mt19937_64 rng(4);
  nn::ParameterStore<float> store;
  MobileSubBlock<float> block(store, rng, "mb", {.in = 4, .exp = 8, .out = 4}, 8, 2);
  Tape<float> tape;
  nn::Context<float> ctx{tape, Mode::kTrain};
  EXPECT_THROW(block(ctx, tape.constant(Tensor<float>({1, 4, 2, 2})), nullptr), ArgumentError);
}

TEST(Downsample, StageShapeAndNoResidual) {
  std::mt19937_64 rng(5);
  nn::ParameterStore<float> store;
  MobileSubBlock<float> block(store, rng, "mb",
                              {.in = 16, .exp = 96, .out = 24, .downsample = true}, 192, 48);
  EXPECT_EQ(block.convs().size(), 4u);
  EXPECT_FALSE(block.residual());
  Tape<float> tape({.grad_enabled = false, .dry_run = true});
  nn::Context<float> ctx{tape};
  auto token = tape.constant(Tensor<float>({1, 192}));
  const auto y = block(ctx, tape.constant(Tensor<float>({1, 16, 112, 112})), &token);
  EXPECT_EQ(y.shape(), (Shape{1, 24, 56, 56}));
}

TEST(Downsample, SameChannelsStillNoResidualAndHalves) {
  std::mt19937_64 rng(5);
  nn::ParameterStore<float> store;
  MobileSubBlock<float> block(store, rng, "mb", {.in = 8, .exp = 16, .out = 8, .downsample = true},
                              0, 0);
  EXPECT_FALSE(block.residual());
  Tape<float> tape;
  nn::Context<float> ctx{tape, Mode::kTrain};
  const auto y = block(ctx, tape.constant(random_tensor<float>({2, 8, 6, 10}, rng)), nullptr);
  EXPECT_EQ(y.shape(), (Shape{2, 8, 3, 5}));
}

TEST(Downsample, OddExtentRejected) {
  std::mt19937_64 rng(5);
  nn::ParameterStore<float> store;
  MobileSubBlock<float> block(store, rng, "mb", {.in = 8, .exp = 16, .out = 8, .downsample = true},
                              0, 0);
  Tape<float> tape;
  nn::Context<float> ctx{tape, Mode::kTrain};
  EXPECT_THROW(block(ctx, tape.constant(Tensor<float>({1, 8, 5, 4})), nullptr), ShapeError);
  EXPECT_THROW(MobileSubBlock<float>(store, rng, "bad", {.in = 8, .exp = 20, .out = 8, .downsample = true},
                                     0, 0),
               ArgumentError);
}

TEST(FormerBlock, ShapeAndScoreCost) {
  std::mt19937_64 rng(6);
  nn::ParameterStore<float> store;
  FormerBlock<float> former(store, rng, "former", {});
  CostCounter counter;
  Tape<float> tape({.grad_enabled = false, .dry_run = true, .counter = &counter});
  nn::Context<float> ctx{tape};
  const auto z = former(ctx, tape.constant(Tensor<float>({6, 192})), 1);
  EXPECT_EQ(z.shape(), (Shape{6, 192}));
  EXPECT_EQ(counter.total_detail("former", "scores"), 6912u);
  EXPECT_EQ(counter.total_detail("former", "aggregate"), 6912u);
  // Core linear work of attention: Q, K, V, O projections and two FFN layers.
  const auto a = analytic_block_cost(1, 1, 1, 6, 192);
  EXPECT_EQ(a.former, 228096u);
}

TEST(FormerBlock, WithoutFfnHasNoFfnParameters) {
  std::mt19937_64 rng(6);
  nn::ParameterStore<float> with, without;
  FormerBlock<float> a(with, rng, "f", {.count = 4, .dim = 16});
  FormerBlock<float> b(without, rng, "f", {.count = 4, .dim = 16, .ffn = false});
  EXPECT_NE(a.ffn(), nullptr);
  EXPECT_EQ(b.ffn(), nullptr);
  EXPECT_EQ(with.total_size() - without.total_size(), (16u * 32 + 32) + (32u * 16 + 16) + 2 * 16);
}

TEST(FormerBlock, TokenPermutationEquivariance) {
  std::mt19937_64 rng(7);
  nn::ParameterStore<D> store;
  FormerBlock<D> former(store, rng, "former", {.count = 5, .dim = 8});
  std::normal_distribution<D> n(0.0, 0.5);
  for (auto& p : store.parameters()) {
    for (D& v : p.value.data()) v = n(rng);
  }
  for (int trial = 0; trial < 5; ++trial) {
    std::vector<std::size_t> perm(5);
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    Tape<D> tape;
    nn::Context<D> ctx{tape};
    auto z = tape.constant(random_tensor<D>({5, 8}, rng));
    const auto y = former(ctx, z, 1).value();
    const auto yp = former(ctx, ops::gather_rows(z, std::span<const std::size_t>(perm)), 1).value();
    for (std::size_t r = 0; r < 5; ++r) {
      for (std::size_t c = 0; c < 8; ++c) EXPECT_NEAR(yp[r * 8 + c], y[perm[r] * 8 + c], 1e-12);
    }
  }
}

class MobileFormerBlockTest : public ::testing::Test {
 protected:
  std::mt19937_64 rng{8};
  TokenConfig tokens{.count = 3, .dim = 12};
};

TEST_F(MobileFormerBlockTest, TokenShapeInvariantAcrossModes) {
  for (const MobileConfig cfg : {MobileConfig{.in = 8, .exp = 16, .out = 8},
                                 MobileConfig{.in = 8, .exp = 24, .out = 12},
                                 MobileConfig{.in = 8, .exp = 16, .out = 12, .downsample = true}}) {
    nn::ParameterStore<float> store;
    MobileFormerBlock<float> block(store, rng, "b", cfg, &tokens, true, 3);
    Tape<float> tape;
    nn::Context<float> ctx{tape, Mode::kTrain};
    auto z = tape.constant(random_tensor<float>({2 * 3, 12}, rng));
    BlockAttention<float> att;
    auto [x2, z2] = block(ctx, tape.constant(random_tensor<float>({2, 8, 4, 4}, rng)), z, 2, &att);
    EXPECT_EQ(z2.shape(), z.shape());
    const std::size_t side = cfg.downsample ? 2 : 4;
    EXPECT_EQ(x2.shape(), (Shape{2, cfg.out, side, side}));
    EXPECT_EQ(att.to_former.weights.shape(), (Shape{2, 2, 3, 16}));
    EXPECT_EQ(att.to_mobile.weights.shape(), (Shape{2, 2, side * side, 3}));
  }
}

TEST_F(MobileFormerBlockTest, ZeroInitReducesToResidualIdentities) {
  nn::ParameterStore<float> store;
  MobileFormerBlock<float> block(store, rng, "b", {.in = 8, .exp = 16, .out = 8}, &tokens, true, 3);
  block.former().attention().output().weight().value.fill(0.f);
  block.former().attention().output().bias()->value.fill(0.f);
  block.former().ffn()->second().weight().value.fill(0.f);
  block.former().ffn()->second().bias()->value.fill(0.f);
  Tape<float> tape;
  nn::Context<float> ctx{tape, Mode::kTrain};
  const Tensor<float> x0 = random_tensor<float>({2, 8, 3, 3}, rng);
  const Tensor<float> z0 = random_tensor<float>({2 * 3, 12}, rng);
  auto x = tape.constant(x0);
  auto z = tape.constant(z0);
  auto [x2, z2] = block(ctx, x, z, 2);
  auto ones = tape.constant(Tensor<float>({12}, 1.f));
  auto zeros = tape.constant(Tensor<float>({12}, 0.f));
  const auto expect_z = ops::layer_norm(ops::layer_norm(z, ones, zeros), ones, zeros).value();
  EXPECT_EQ(z2.value().storage(), expect_z.storage());
  // The generator is inert, so any token gives the plain ReLU mobile path.
  auto token = tape.constant(random_tensor<float>({2, 12}, rng));
  const auto expect_x = block.mobile()(ctx, x, &token).value();
  EXPECT_EQ(x2.value().storage(), expect_x.storage());
}

TEST_F(MobileFormerBlockTest, MobileOnlyBlockPassesTokensThrough) {
  nn::ParameterStore<float> store;
  MobileFormerBlock<float> block(store, rng, "b", {.in = 8, .exp = 16, .out = 8}, nullptr, true, 3);
  EXPECT_FALSE(block.has_former());
  EXPECT_FALSE(block.mobile().dynamic());
  for (const auto& p : store.parameters()) EXPECT_EQ(p.pillar, Pillar::kMobile) << p.name;
  Tape<float> tape;
  nn::Context<float> ctx{tape, Mode::kTrain};
  auto z = tape.constant(random_tensor<float>({3, 12}, rng));
  auto [x2, z2] = block(ctx, tape.constant(random_tensor<float>({1, 8, 2, 2}, rng)), z, 1);
  EXPECT_EQ(z2.value().storage(), z.value().storage());
}

TEST_F(MobileFormerBlockTest, DeterministicForward) {
  auto run = [&]() {
    std::mt19937_64 r(99);
    nn::ParameterStore<float> store;
    MobileFormerBlock<float> block(store, r, "b", {.in = 8, .exp = 16, .out = 8}, &tokens, true, 3);
    Tape<float> tape;
    nn::Context<float> ctx{tape, Mode::kTrain};
    auto [x2, z2] = block(ctx, tape.constant(random_tensor<float>({2, 8, 3, 3}, r)),
                          tape.constant(random_tensor<float>({6, 12}, r)), 2);
    return std::pair{x2.value().storage(), z2.value().storage()};
  };
  EXPECT_EQ(run(), run());
}

TEST(LiteBottleneck, ShapesAndParameterCount) {
  std::mt19937_64 rng(10);
  nn::ParameterStore<float> store;
  LiteBottleneck<float> lite(store, rng, "lite", {.in = 16, .exp = 32, .out = 16}, 1);
  EXPECT_EQ(store.total_size(), 9u * 32 + 32 * 16 + 2 * 32 + 2 * 16);
  Tape<float> tape({.grad_enabled = false, .dry_run = true});
  nn::Context<float> ctx{tape};
  EXPECT_EQ(lite(ctx, tape.constant(Tensor<float>({1, 16, 112, 112}))).shape(),
            (Shape{1, 16, 112, 112}));
  nn::ParameterStore<float> s2;
  LiteBottleneck<float> down(s2, rng, "lite", {.in = 8, .exp = 24, .out = 12}, 2);
  EXPECT_EQ(down(ctx, tape.constant(Tensor<float>({1, 8, 112, 112}))).shape(), (Shape{1, 12, 56, 56}));
  EXPECT_THROW(LiteBottleneck<float>(s2, rng, "bad", {.in = 8, .exp = 20, .out = 12}, 1), ArgumentError);
}

TEST(Stem, OutputShapes) {
  std::mt19937_64 rng(11);
  for (const auto [res, out] : {std::pair{224u, 16u}, std::pair{224u, 8u}, std::pair{15u, 4u}}) {
    nn::ParameterStore<float> store;
    Stem<float> stem(store, rng, "stem", 3, out);
    Tape<float> tape({.grad_enabled = false, .dry_run = true});
    nn::Context<float> ctx{tape};
    const std::size_t o = (res + 1) / 2;
    EXPECT_EQ(stem(ctx, tape.constant(Tensor<float>({1, 3, res, res}))).shape(), (Shape{1, out, o, o}));
  }
}

TEST(ClassifierHead, WidthsAndZeroLogits) {
  std::mt19937_64 rng(12);
  nn::ParameterStore<float> store;
  ClassifierHead<float> head(store, rng, "head", 1152, 192, 1920, 1000, 0.f);
  EXPECT_EQ(head.fc1().in_features(), 1344u);
  EXPECT_EQ(head.fc1().out_features(), 1920u);
  EXPECT_EQ(head.fc2().out_features(), 1000u);
  nn::ParameterStore<float> small;
  ClassifierHead<float> h2(small, rng, "head", 576, 128, 1024, 1000, 0.f);
  EXPECT_EQ(h2.fc1().in_features(), 704u);
  h2.fc2().weight().value.fill(0.f);
  h2.fc2().bias()->value.fill(0.f);
  Tape<float> tape;
  nn::Context<float> ctx{tape};
  auto token = tape.constant(random_tensor<float>({2, 128}, rng));
  const auto logits = h2(ctx, tape.constant(random_tensor<float>({2, 576, 2, 2}, rng)), &token).value();
  EXPECT_EQ(logits.shape(), (Shape{2, 1000}));
  for (float v : logits.data()) EXPECT_EQ(v, 0.f);
}

TEST(FirstTokens, GathersLeadingRowPerImage) {
  Tape<float> tape;
  std::vector<float> v(6 * 2);
  std::iota(v.begin(), v.end(), 0.f);
  auto z = tape.constant(Tensor<float>({6, 2}, v));
  EXPECT_EQ(first_tokens(z, 2).value().storage(), (std::vector<float>{0, 1, 6, 7}));
  EXPECT_THROW(first_tokens(z, 4), ShapeError);
}

}  // namespace
}  // namespace mformer
