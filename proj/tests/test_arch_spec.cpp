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

#include <cstdio>
#include <fstream>
#include <regex>

#include "mformer/arch_spec.hpp"
#include "mformer/model.hpp"

namespace mformer {
namespace {

std::size_t bridged_blocks(const ModelSpec& s) {
  return s.count(BlockKind::kMobileFormer) + s.count(BlockKind::kMobileFormerDown);
}

template <typename F>
SpecError catch_spec_error(F&& f) {
  try {
    f();
  } catch (const SpecError& e) {
    return e;
  }
  ADD_FAILURE() << "no SpecError";
  return SpecError("", "");
}

// Replaces the first line starting with `prefix` in the serialized spec.
std::string edit_line(const ModelSpec& spec, const std::string& prefix, const std::string& line) {
  std::string text = serialize_spec(spec);
  const std::size_t at = text.find("\n" + prefix);
  EXPECT_NE(at, std::string::npos) << prefix;
  const std::size_t end = text.find('\n', at + 1);
  return text.substr(0, at + 1) + line + text.substr(end);
}

TEST(BuiltinSpec, EveryVariantValidatesAndRoundTrips) {
  for (const std::string& name : builtin_names()) {
    const ModelSpec spec = builtin_spec(name);
    EXPECT_EQ(spec.name, name);
    EXPECT_NO_THROW(validate(spec)) << name;
    const std::string text = serialize_spec(spec);
    const ModelSpec back = parse_spec(text);
    EXPECT_EQ(back, spec) << name;
    EXPECT_EQ(serialize_spec(back), text) << name;
  }
  EXPECT_THROW(builtin_spec("12M"), ArgumentError);
}

TEST(BuiltinSpec, LayoutFacts) {
  const ModelSpec s294 = builtin_spec("294M");
  EXPECT_EQ(bridged_blocks(s294), 11u);
  EXPECT_EQ(s294.tokens, 6u);
  EXPECT_EQ(s294.token_dim, 192u);
  EXPECT_EQ(s294.blocks.front().out, 16u);
  EXPECT_EQ(s294.head_hidden(), 1920u);
  EXPECT_EQ(s294.input_res(), 224u);

  const ModelSpec s52 = builtin_spec("52M");
  EXPECT_EQ(s52.tokens, 3u);
  EXPECT_EQ(s52.token_dim, 128u);
  EXPECT_EQ(s52.head_hidden(), 1024u);
  EXPECT_EQ(s52.blocks.front().out, 8u);

  const ModelSpec s96 = builtin_spec("96M");
  EXPECT_EQ(s96.tokens, 4u);
  EXPECT_EQ(s96.token_dim, 128u);
  std::size_t stage4 = 0;
  for (const auto& b : s96.blocks) stage4 += b.stage == "4";
  EXPECT_EQ(stage4, 3u);

  for (const std::string name : {"151M", "214M", "294M", "508M"}) {
    EXPECT_EQ(builtin_spec(name).tokens, 6u) << name;
  }
}

TEST(BuiltinSpec, SmallestIsGroupedCopyOfFiftyTwo) {
  const ModelSpec a = builtin_spec("26M");
  const ModelSpec b = builtin_spec("52M");
  ASSERT_EQ(a.blocks.size(), b.blocks.size());
  EXPECT_EQ(a.tokens, b.tokens);
  EXPECT_EQ(a.token_dim, b.token_dim);
  for (std::size_t i = 0; i < a.blocks.size(); ++i) {
    BlockSpec x = a.blocks[i];
    const bool pointwise = x.kind != BlockKind::kStem && x.kind != BlockKind::kHead;
    EXPECT_EQ(x.groups, pointwise ? 4u : 1u) << i;
    x.groups = 1;
    EXPECT_EQ(x, b.blocks[i]) << i;
  }
}

TEST(BuiltinSpec, ForwardShapesFollowInputColumn) {
  for (const std::string& name : builtin_names()) {
    const ModelSpec spec = builtin_spec(name);
    Model<float> model(spec, 1);
    Tape<float> tape({.grad_enabled = false, .dry_run = true});
    nn::Context<float> ctx{tape};
    ForwardTrace<float> trace;
    const std::size_t res = spec.input_res();
    const auto logits = model.forward(ctx, tape.constant(Tensor<float>({1, 3, res, res})), &trace);
    EXPECT_EQ(logits.shape(), (Shape{1, spec.classes})) << name;
    ASSERT_EQ(trace.steps.size() + 1, spec.blocks.size()) << name;
    for (std::size_t i = 0; i < trace.steps.size(); ++i) {
      const auto& step = trace.steps[i];
      const BlockSpec& next = spec.blocks[i + 1];
      EXPECT_EQ(step.x[2], next.in_res) << name << " block " << i;
      EXPECT_EQ(step.x[3], next.in_res) << name << " block " << i;
      if (i + 1 < spec.blocks.size() - 1) {
        EXPECT_EQ(step.x[1], spec.blocks[i].out) << name << " block " << i;
      }
      EXPECT_EQ(step.z, (Shape{spec.tokens, spec.token_dim})) << name << " block " << i;
    }
  }
}

TEST(ParseSpec, CommentsAndOptionalFields) {
  const ModelSpec spec = parse_spec(
      "# demo\n"
      "name=demo\n"
      "tokens=2x8\n"
      "classes=5\n"
      "\n"
      "stem stem 8 - 4 2   # trailing comment\n"
      "1 bneck-lite 4 8 4 1\n"
      "2 MF 4 8 4 1 k=5\n"
      "2 conv1x1 4 - 8 1\n"
      "head head 4 - 16 1\n");
  EXPECT_EQ(spec.name, "demo");
  EXPECT_EQ(spec.tokens, 2u);
  EXPECT_EQ(spec.token_dim, 8u);
  EXPECT_EQ(spec.classes, 5u);
  EXPECT_EQ(spec.heads, 2u);
  EXPECT_TRUE(spec.ffn);
  ASSERT_EQ(spec.blocks.size(), 5u);
  EXPECT_EQ(spec.blocks[2].kernel, 5u);
  EXPECT_EQ(spec.blocks[1].exp, 8u);
  EXPECT_EQ(spec.blocks[0].exp, 0u);
}

TEST(ParseSpec, StrideThreeNamesStride) {
  const std::string text = edit_line(builtin_spec("294M"), "1 bneck-lite", "1 bneck-lite 112 32 16 3");
  const SpecError e = catch_spec_error([&] { parse_spec(text); });
  EXPECT_EQ(e.field(), "stride");
  EXPECT_EQ(e.line(), 9);
}

TEST(ParseSpec, BridgeChannelDivisibility) {
  // A lone MF block at 20 channels is fine for two heads; 21 is not.
  auto spec_with = [](std::size_t c) {
    return "name=div\ntokens=2x8\nclasses=3\n"
           "stem stem 8 - " + std::to_string(c) + " 2\n"
           "1 MF 4 " + std::to_string(2 * c) + " " + std::to_string(c) + " 1\n"
           "1 conv1x1 4 - 16 1\nhead head 4 - 8 1\n";
  };
  EXPECT_NO_THROW(parse_spec(spec_with(20)));
  const SpecError e = catch_spec_error([&] { parse_spec(spec_with(21)); });
  EXPECT_TRUE(e.field() == "in" || e.field() == "out") << e.field();
  EXPECT_EQ(e.line(), 5);
}

TEST(ParseSpec, SyntaxErrorsCarryLineAndColumn) {
  SpecError e = catch_spec_error([] { parse_spec("name=x\ntokens=6by192\n"); });
  EXPECT_EQ(e.field(), "tokens");
  EXPECT_EQ(e.line(), 2);
  EXPECT_EQ(e.column(), 8);
  e = catch_spec_error([] { parse_spec("name=x\nstem stem 224 - 16 two\n"); });
  EXPECT_EQ(e.line(), 2);
  EXPECT_EQ(e.field(), "stride");
  EXPECT_EQ(e.column(), 20);
  e = catch_spec_error([] { parse_spec("name=x\n1 transformer 14 96 96 1\n"); });
  EXPECT_EQ(e.field(), "kind");
  EXPECT_EQ(e.column(), 3);
  e = catch_spec_error([] { parse_spec("name=x\nbogus=1\n"); });
  EXPECT_EQ(e.line(), 2);
  EXPECT_NE(std::string(e.what()).find("line 2"), std::string::npos);
}

TEST(Validate, ChannelAndResolutionTracking) {
  ModelSpec s = builtin_spec("tiny");
  s.blocks[2].in_res = 5;
  EXPECT_EQ(catch_spec_error([&] { validate(s); }).field(), "in_res");
  s = builtin_spec("tiny");
  s.blocks[2].exp = 20;  // MF-down expansion must be a multiple of its input
  EXPECT_EQ(catch_spec_error([&] { validate(s); }).field(), "exp");
  s = builtin_spec("tiny");
  s.blocks[3].stride = 2;
  EXPECT_EQ(catch_spec_error([&] { validate(s); }).field(), "stride");
  s = builtin_spec("tiny");
  s.blocks[3].kernel = 4;
  EXPECT_EQ(catch_spec_error([&] { validate(s); }).field(), "k");
  s = builtin_spec("tiny");
  s.blocks[3].groups = 3;
  EXPECT_EQ(catch_spec_error([&] { validate(s); }).field(), "g");
  s = builtin_spec("tiny");
  s.classes = 0;
  EXPECT_EQ(catch_spec_error([&] { validate(s); }).field(), "classes");
}

TEST(BuildModel, SeedDeterminism) {
  const ModelSpec spec = builtin_spec("tiny");
  Model<float> a(spec, 7), b(spec, 7), c(spec, 8);
  ASSERT_EQ(a.parameters().size(), b.parameters().size());
  bool differs = false;
  for (std::size_t i = 0; i < a.parameters().size(); ++i) {
    EXPECT_EQ(a.parameters()[i].value.storage(), b.parameters()[i].value.storage());
    differs |= a.parameters()[i].value.storage() != c.parameters()[i].value.storage();
  }
  EXPECT_TRUE(differs);
}

TEST(BuildModel, InitializationScheme) {
  Model<float> model(builtin_spec("tiny"), 3);
  ASSERT_NE(model.tokens(), nullptr);
  EXPECT_FALSE(model.tokens()->decay);
  double ss = 0;
  for (float v : model.tokens()->value.data()) ss += double(v) * v;
  EXPECT_NEAR(std::sqrt(ss / model.tokens()->value.size()), 0.02, 0.01);
  const std::regex inert(R"(.*\.(m2f\.o|f2m\.v\d+|dyrelu\.fc2)\.weight)");
  std::size_t zeroed = 0;
  for (const auto& p : model.parameters()) {
    if (!std::regex_match(p.name, inert)) continue;
    ++zeroed;
    for (float v : p.value.data()) EXPECT_EQ(v, 0.f) << p.name;
  }
  // Two MF blocks: m2f.o, two f2m values and the generator per block.
  EXPECT_EQ(zeroed, 8u);
}

TEST(BuildModel, FullSizeForwardGivesThousandLogits) {
  Model<float> model(builtin_spec("294M"), 1);
  std::mt19937_64 rng(0);
  std::normal_distribution<float> n;
  Tensor<float> image({2, 3, 224, 224});
  for (float& v : image.data()) v = n(rng);
  model.calibrate({image});
  Tape<float> tape({.grad_enabled = false});
  nn::Context<float> ctx{tape};
  Tensor<float> one({1, 3, 224, 224}, std::vector<float>(image.data().begin(), image.data().begin() + 3 * 224 * 224));
  const auto logits = model.forward(ctx, tape.constant(one)).value();
  EXPECT_EQ(logits.shape(), (Shape{1, 1000}));
  EXPECT_TRUE(all_finite(logits));
}

TEST(BuildModel, EvalWithoutCalibrationThrows) {
  Model<float> model(builtin_spec("tiny"), 1);
  EXPECT_FALSE(model.calibrated());
  Tape<float> tape({.grad_enabled = false});
  nn::Context<float> ctx{tape};
  EXPECT_THROW(model.forward(ctx, tape.constant(Tensor<float>({1, 3, 16, 16}))), UninitializedStatsError);
}

TEST(Ablation, KnobsRebuildSpec) {
  const ModelSpec base = builtin_spec("294M");
  Ablation a;
  a.no_ffn = true;
  const ModelSpec no_ffn = apply_ablation(base, a);
  EXPECT_FALSE(no_ffn.ffn);
  EXPECT_NE(no_ffn.name, base.name);
  Model<float> m1(base, 1), m2(no_ffn, 1);
  EXPECT_LT(m2.num_parameters(), m1.num_parameters());

  Ablation k;
  k.kernel = 5;
  const ModelSpec k5 = apply_ablation(base, k);
  for (std::size_t i = 0; i < k5.blocks.size(); ++i) {
    const bool mf = k5.blocks[i].kind == BlockKind::kMobileFormer ||
                    k5.blocks[i].kind == BlockKind::kMobileFormerDown;
    EXPECT_EQ(k5.blocks[i].kernel, mf ? 5u : 3u);
  }
  Ablation nf;
  nf.no_former = true;
  const ModelSpec mobile = apply_ablation(base, nf);
  EXPECT_FALSE(mobile.former);
  EXPECT_FALSE(mobile.dynamic_relu);
  Ablation t;
  t.tokens = 9;
  t.token_dim = 256;
  const ModelSpec wide = apply_ablation(base, t);
  EXPECT_EQ(wide.tokens, 9u);
  EXPECT_EQ(wide.token_dim, 256u);
  Ablation bad;
  bad.kernel = 4;
  EXPECT_THROW(apply_ablation(base, bad), SpecError);
}

TEST(LoadSpec, BuiltinOrFile) {
  EXPECT_EQ(load_spec("52M"), builtin_spec("52M"));
  const std::string path = ::testing::TempDir() + "/tiny.spec";
  {
    std::ofstream f(path);
    f << serialize_spec(builtin_spec("tiny"));
  }
  EXPECT_EQ(load_spec(path), builtin_spec("tiny"));
  EXPECT_THROW(load_spec(::testing::TempDir() + "/missing.spec"), ArgumentError);
  std::remove(path.c_str());
}

}  // namespace
}  // namespace mformer
