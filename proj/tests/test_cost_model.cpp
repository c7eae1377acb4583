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

#include <algorithm>
#include <map>
#include <random>
#include <sstream>

#include "mformer/cost_model.hpp"

namespace mformer {
namespace {

double rel(double got, double want) { return std::abs(got / want - 1.0); }

TEST(Primitives, LinearAndPointwiseCounts) {
  nn::ParameterStore<float> store;
  std::mt19937_64 rng(1);
  nn::Linear<float> fc(store, rng, "fc", Pillar::kHead, 10, 5, true);
  EXPECT_EQ(store.total_size(), 55u);
  nn::Conv2d<float> conv(store, rng, "pw", Pillar::kMobile, 4, 8, 1, {});
  CostCounter counter;
  Tape<float> tape({.grad_enabled = false, .dry_run = true, .counter = &counter});
  nn::Context<float> ctx{tape};
  conv(ctx, tape.constant(Tensor<float>({1, 4, 1, 1})));
  EXPECT_EQ(counter.total_under("pw"), 32u);
  fc(ctx, tape.constant(Tensor<float>({1, 10})));
  EXPECT_EQ(counter.total_under("fc", OpClass::kLinear), 50u);
}

TEST(Analytic, ClosedFormExamples) {
  EXPECT_EQ(analytic_block_cost(4, 8, 3, 1, 1).mobile, 2400u);
  EXPECT_EQ(analytic_block_cost(1, 1, 1, 6, 192).former, 228096u);
  const auto b = analytic_block_cost(196, 128, 1, 6, 192);
  EXPECT_EQ(b.mobile_to_former, 297984u);
  EXPECT_EQ(b.former_to_mobile, 297984u);
}

class VariantCosts : public ::testing::TestWithParam<PublishedTarget> {};

TEST_P(VariantCosts, WithinFivePercentOfPublished) {
  const PublishedTarget& t = GetParam();
  Model<float> model(apply_ablation(builtin_spec(t.base), t.ablation), 1);
  const CostReport r = cost_report(model, 224);
  EXPECT_LE(rel(r.total_madds() / 1e6, t.madds_m), 0.05) << r.total_madds();
  if (t.params_m) EXPECT_LE(rel(r.total_params() / 1e6, *t.params_m), 0.05) << r.total_params();
}

INSTANTIATE_TEST_SUITE_P(Published, VariantCosts, ::testing::ValuesIn(variant_targets()),
                         [](const auto& info) { return "v" + info.param.label; });

TEST(Report, InvariantsOnTwoNinetyFour) {
  Model<float> model(builtin_spec("294M"), 1);
  const CostReport r = cost_report(model, 224);
  std::uint64_t params = 0, madds = 0;
  for (const auto& e : r.entries) {
    params += e.params;
    madds += e.madds;
  }
  EXPECT_EQ(params, r.total_params());
  EXPECT_EQ(madds, r.total_madds());
  EXPECT_EQ(r.total_params(), model.num_parameters());
  std::uint64_t by_pillar = 0;
  for (Pillar p : {Pillar::kStem, Pillar::kMobile, Pillar::kFormer, Pillar::kBridge, Pillar::kHead}) {
    by_pillar += r.pillar_madds(p);
  }
  EXPECT_EQ(by_pillar, r.total_madds());
  // Every parameter's layer path appears exactly once.
  std::map<std::string, int> seen;
  for (const auto& e : r.entries) ++seen[e.path];
  for (const auto& [path, n] : seen) EXPECT_EQ(n, 1) << path;
  for (const auto& p : model.parameters()) {
    ASSERT_TRUE(seen.count(p.layer)) << p.name;
  }
  // Enumeration order does not change totals.
  CostReport shuffled = r;
  std::mt19937_64 rng(3);
  std::shuffle(shuffled.entries.begin(), shuffled.entries.end(), rng);
  EXPECT_EQ(shuffled.total_madds(), r.total_madds());
  EXPECT_EQ(shuffled.pillar_params(Pillar::kBridge), r.pillar_params(Pillar::kBridge));
}

TEST(Report, DoubledResolutionQuadruplesConvWork) {
  Model<float> model(builtin_spec("294M"), 1);
  auto conv_by_path = [&](std::size_t res) {
    CostCounter counter;
    Tape<float> tape({.grad_enabled = false, .dry_run = true, .counter = &counter});
    nn::Context<float> ctx{tape};
    model.forward(ctx, tape.constant(Tensor<float>({1, 3, res, res})));
    std::map<std::string, std::uint64_t> out;
    for (const auto& e : counter.events()) {
      if (e.op_class == OpClass::kConv) out[e.path] += e.madds;
    }
    return out;
  };
  const auto a = conv_by_path(224), b = conv_by_path(448);
  ASSERT_EQ(a.size(), b.size());
  for (const auto& [path, m] : a) EXPECT_EQ(b.at(path), 4 * m) << path;
  EXPECT_EQ(count_params(model).total_params(), model.num_parameters());
}

TEST(Report, BlockCountsMatchModelAttribution) {
  // Stage-5 block of the 294M model fed 7x7x192.
  const ModelSpec spec = builtin_spec("294M");
  std::size_t index = 0;
  for (std::size_t i = 0; i < spec.blocks.size(); ++i) {
    const BlockSpec& b = spec.blocks[i];
    if (b.kind == BlockKind::kMobileFormer && b.in_res == 7 && b.exp == 1152) index = i;
  }
  ASSERT_GT(index, 0u);
  Model<float> model(spec, 1);
  const CostReport r = count_madds(model, 224);
  const std::string path = "blocks." + std::to_string(index);

  std::mt19937_64 rng(1);
  nn::ParameterStore<float> store;
  const BlockSpec& b = spec.blocks[index];
  TokenConfig tokens{spec.tokens, spec.token_dim, spec.heads, spec.ffn};
  MobileFormerBlock<float> block(store, rng, path, {.in = 192, .exp = b.exp, .out = b.out}, &tokens,
                                 true, spec.token_dim / 4);
  CostCounter counter;
  Tape<float> tape({.grad_enabled = false, .dry_run = true, .counter = &counter});
  nn::Context<float> ctx{tape};
  block(ctx, tape.constant(Tensor<float>({1, 192, 7, 7})), tape.constant(Tensor<float>({6, 192})), 1);
  std::map<Pillar, std::uint64_t> pillars;
  for (const auto& e : counter.events()) pillars[e.pillar] += e.madds;
  std::uint64_t sum = 0;
  for (const auto& [p, m] : pillars) sum += m;
  EXPECT_EQ(sum, r.madds_under(path));
  EXPECT_GT(pillars[Pillar::kBridge], 0u);
  EXPECT_GT(pillars[Pillar::kFormer], 0u);
  EXPECT_GT(pillars[Pillar::kMobile], 0u);
}

TEST(Budget, TwoNinetyFourAndMobileOnly) {
  Model<float> model(builtin_spec("294M"), 1);
  const Budget b = budget_report(model, 224);
  EXPECT_NEAR((b.former + b.bridge) / 1e6, 35.0, 8.0);
  EXPECT_NEAR(b.fraction, 0.12, 0.03);
  Ablation a;
  a.no_former = true;
  Model<float> mobile(apply_ablation(builtin_spec("294M"), a), 1);
  EXPECT_EQ(budget_report(mobile, 224).fraction, 0.0);
}

TEST(Records, RoundTripAndRejectMalformed) {
  Model<float> model(builtin_spec("tiny"), 1);
  const CostReport r = cost_report(model, 16);
  std::istringstream in(r.to_records());
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    const auto e = parse_cost_record(line);
    ASSERT_TRUE(e) << line;
    EXPECT_EQ(*e, r.entries[n]);
    ++n;
  }
  EXPECT_EQ(n, r.entries.size());
  for (const char* bad : {"", "a,mobile,1", "a,mobile,1,2,3", "a,gpu,1,2", "a,mobile,-1,2", "a,mobile,1,x",
                          ",mobile,1,2"}) {
    EXPECT_FALSE(parse_cost_record(bad)) << bad;
  }
  const std::string text = r.to_text();
  EXPECT_NE(text.find("total"), std::string::npos);
  EXPECT_NE(text.find("blocks.2.m2f"), std::string::npos);
}

TEST(Targets, ListsAreComplete) {
  EXPECT_EQ(variant_targets().size(), 7u);
  EXPECT_EQ(ablation_targets().size(), 14u);
  EXPECT_THROW(count_madds(*build_model<float>(builtin_spec("tiny"), 1), 0), ArgumentError);
}

}  // namespace
}  // namespace mformer
