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

// Acceptance checks. `acceptance N` runs criterion N, no argument runs all of
// them. Each prints one line: "criterion N: PASS|FAIL <detail>". The exit
// status is nonzero when any selected criterion fails.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <functional>
#include <random>
#include <string>

#include <fmt/format.h>

#include "mformer/bridge.hpp"
#include "mformer/cli.hpp"
#include "mformer/cost_model.hpp"
#include "mformer/model.hpp"
#include "mformer/train.hpp"

namespace mformer {
namespace {

struct Outcome {
  bool pass;
  std::string detail;
};

class Stopwatch {
 public:
  double seconds() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
  }

 private:
  std::chrono::steady_clock::time_point start_ = std::chrono::steady_clock::now();
};

bool within(double got, double want, double tol) { return std::abs(got / want - 1.0) <= tol; }

// 1. Published costs of all seven variants, +-5%, under 10 s.
Outcome cost_table() {
  Stopwatch clock;
  std::string misses;
  for (const auto& t : variant_targets()) {
    Model<float> model(builtin_spec(t.base), 0);
    const CostReport r = cost_report(model, 224);
    const double p = r.total_params() / 1e6, m = r.total_madds() / 1e6;
    if (!within(p, *t.params_m, 0.05) || !within(m, t.madds_m, 0.05)) {
      misses += fmt::format(" {}({:.2f}M/{:.1f}M)", t.label, p, m);
    }
  }
  const bool cli_ok = cli::run({"verify-costs", "--variant", "all", "--tol", "0.05"}).exit_code == cli::kExitOk;
  const double s = clock.seconds();
  return {misses.empty() && cli_ok && s < 10.0,
          fmt::format("7 variants within 5% of params and madds{}, verify-costs exit {}, {:.1f}s (limit 10s)",
                      misses.empty() ? "" : ", misses:" + misses, cli_ok ? 0 : 1, s)};
}

// 2. Former+bridge share.
Outcome budget() {
  Model<float> m294(builtin_spec("294M"), 0);
  const Budget b = budget_report(m294, 224);
  const double share = (b.former + b.bridge) / 1e6;
  bool pass = std::abs(share - 35.0) <= 8.0 && std::abs(b.fraction - 0.12) <= 0.03;
  std::string detail = fmt::format("294M former+bridge {:.1f}M (35+-8M), fraction {:.3f} (0.12+-0.03);", share,
                                   b.fraction);
  for (const auto& name : {"26M", "52M", "96M", "151M", "214M", "294M", "508M"}) {
    Model<float> model(builtin_spec(name), 0);
    const double f = budget_report(model, 224).fraction;
    const bool ok = f < 0.20;
    pass = pass && ok;
    detail += fmt::format(" {} {:.3f}{}", name, f, ok ? "" : " (>= 0.20)");
  }
  return {pass, detail};
}

// 3. Ablation ladders, +-5%, under 30 s.
Outcome ablation_ladders() {
  Stopwatch clock;
  std::string misses;
  std::size_t rows = 0;
  for (const auto& t : ablation_targets()) {
    Model<float> model(apply_ablation(builtin_spec(t.base), t.ablation), 0);
    const double m = cost_report(model, 224).total_madds() / 1e6;
    ++rows;
    if (!within(m, t.madds_m, 0.05)) misses += fmt::format(" {}={:.1f}M", t.label, m);
  }
  const double s = clock.seconds();
  return {misses.empty() && s < 30.0,
          fmt::format("{} rows within 5% of madds{}, {:.1f}s (limit 30s)", rows,
                      misses.empty() ? "" : ", misses:" + misses, s)};
}

// 4. Counted MAdds against the closed forms over random shapes.
Outcome closed_forms() {
  std::mt19937_64 rng(2024);
  std::uniform_int_distribution<std::size_t> side(1, 9), half_c(1, 16), expand(1, 6), tokens(1, 8), half_d(1, 16);
  constexpr int kTuples = 60;
  int mobile_ok = 0, bridge_ok = 0;
  std::string first_bridge_miss;
  for (int i = 0; i < kTuples; ++i) {
    const std::size_t h = side(rng), w = side(rng), C = 2 * half_c(rng), E = expand(rng), M = tokens(rng),
                      d = 2 * half_d(rng);
    const std::uint64_t L = h * w;
    const AnalyticBlockCost want = analytic_block_cost(L, C, E, M, d);

    nn::ParameterStore<float> store;
    MobileSubBlock<float> mobile(store, rng, "mb", {.in = C, .exp = E * C, .out = C}, 0, 0);
    MobileToFormer<float> m2f(store, rng, "m2f", C, d, 2);
    FormerToMobile<float> f2m(store, rng, "f2m", C, d, 2);
    CostCounter counter;
    Tape<float> tape({.grad_enabled = false, .dry_run = true, .counter = &counter});
    nn::Context<float> ctx{tape};
    auto x = tape.constant(Tensor<float>({1, C, h, w}));
    auto z = tape.constant(Tensor<float>({M, d}));
    mobile(ctx, x, nullptr);
    m2f(ctx, x, z);
    f2m(ctx, x, z);

    mobile_ok += counter.total_under("mb", OpClass::kConv) == want.mobile;
    auto attention_and_projections = [&](const char* path) {
      return counter.total_detail(path, "scores") + counter.total_detail(path, "aggregate") +
             counter.total_detail(path, "projection");
    };
    const std::uint64_t got_m2f = attention_and_projections("m2f"), got_f2m = attention_and_projections("f2m");
    const bool ok = got_m2f == want.mobile_to_former && got_f2m == want.former_to_mobile;
    bridge_ok += ok;
    if (!ok && first_bridge_miss.empty()) {
      first_bridge_miss = fmt::format(" e.g. L={} C={} M={} d={}: counted {} / {}, closed form {}", L, C, M, d,
                                      got_m2f, got_f2m, want.mobile_to_former);
    }
  }
  return {mobile_ok == kTuples && bridge_ok == kTuples,
          fmt::format("mobile 2LEC^2+9LEC exact {}/{}; bridge LMC+MdC exact {}/{}{}", mobile_ok, kTuples,
                      bridge_ok, kTuples, first_bridge_miss)};
}

// 5. Finite-difference check of the tiny model in double, under 2 min.
Outcome gradients() {
  Stopwatch clock;
  const GradcheckResult r = gradcheck_model(builtin_spec("tiny"), GradcheckOptions{});
  const double s = clock.seconds();
  return {r.max_error < 1e-4 && s < 120.0,
          fmt::format("{} parameter groups, max rel err {:.2e} at {} (limit 1e-4), kink margin {:.1e}, {:.1f}s "
                      "(limit 120s)",
                      r.groups.size(), r.max_error, r.worst, r.kink_margin, s)};
}

// 6. Toy training, under 5 min.
Outcome learning() {
  Stopwatch clock;
  const ModelSpec spec = builtin_spec("tiny");
  const auto data = make_synthetic<float>(spec.classes, 20, spec.input_res(), 0.5, 1);
  Model<float> model(spec, 0);
  TrainConfig cfg;
  const auto history = train(model, data, cfg);
  std::vector<double> loss;
  for (const auto& r : history) loss.push_back(r.loss);
  const double first = window_mean(loss, 0, 100), last = window_mean(loss, 1900, 2000);
  const double acc = evaluate(model, data);
  const double s = clock.seconds();
  return {acc >= 0.95 && last < first && s < 300.0,
          fmt::format("{} classes, {} steps: train acc {:.3f} (>= 0.95), mean loss {:.4f} -> {:.4f}, {:.1f}s "
                      "(limit 300s)",
                      spec.classes, history.size(), acc, first, last, s)};
}

// 7. Attention row sums on the 294M model, under 1 min.
Outcome attention_rows() {
  Stopwatch clock;
  const ModelSpec spec = builtin_spec("294M");
  Model<float> model(spec, 0);
  randomize_parameters(model, 1);
  const auto data = make_synthetic<float>(2, 1, 224, 0.5, 3);
  model.calibrate({data.images});
  std::vector<std::size_t> first{0};
  const auto rows = export_attention(model, data.batch(first).first);
  const RowSumError e = attention_row_error(rows);
  const double s = clock.seconds();
  return {e.to_former <= 1e-5 && e.to_mobile <= 1e-5 && s < 60.0,
          fmt::format("{} rows over {} weights: max |sum-1| mobile_to_former {:.1e}, former_to_mobile {:.1e} "
                      "(limit 1e-5), {:.1f}s (limit 60s)",
                      e.rows, rows.size(), e.to_former, e.to_mobile, s)};
}

// 8a. Token shape at every block boundary of every builtin.
bool token_shapes(std::string& detail) {
  std::size_t checked = 0;
  for (const auto& name : builtin_names()) {
    const ModelSpec spec = builtin_spec(name);
    Model<float> model(spec, 0);
    Tape<float> tape({.grad_enabled = false, .dry_run = true});
    nn::Context<float> ctx{tape};
    ForwardTrace<float> trace;
    const std::size_t res = spec.input_res();
    model.forward(ctx, tape.constant(Tensor<float>({2, 3, res, res})), &trace);
    for (const auto& step : trace.steps) {
      if (step.z.empty()) continue;
      ++checked;
      if (step.z != Shape{2 * spec.tokens, spec.token_dim}) {
        detail = fmt::format("{} step {} has token shape of rank {}", name, step.index, step.z.size());
        return false;
      }
    }
  }
  detail = fmt::format("token shape fixed at {} block boundaries", checked);
  return checked > 0;
}

template <typename T>
Tensor<T> normal_tensor(Shape shape, std::mt19937_64& rng) {
  std::normal_distribution<T> n(T(0), T(1));
  Tensor<T> t(std::move(shape));
  for (T& v : t.data()) v = n(rng);
  return t;
}

// 8b. Residual identities of every bridge block of a built model under its
// default initialization.
bool residual_identities(const std::string& name, std::string& detail) {
  const ModelSpec spec = builtin_spec(name);
  Model<double> model(spec, 0);
  std::mt19937_64 rng(17);
  const std::size_t M = spec.tokens, d = spec.token_dim, N = 2;
  Tensor<double> ones(Shape{d}, 1.0), zeros(Shape{d}, 0.0);
  std::size_t blocks = 0;
  for (MobileFormerBlock<double>* block : model.mobile_former_blocks()) {
    const std::size_t C = block->to_former().channels();
    Tape<double> tape({.grad_enabled = false});
    nn::Context<double> ctx{tape, Mode::kTrain};
    const auto x0 = normal_tensor<double>({N, C, 4, 4}, rng);
    const auto z0 = normal_tensor<double>({N * M, d}, rng);
    auto x = tape.constant(x0);
    auto z = tape.constant(z0);

    // Bridge directions and the activation, each on its own.
    if (block->to_former()(ctx, x, z).value().storage() != z0.storage()) {
      detail = name + ": mobile_to_former is not the identity on tokens";
      return false;
    }
    auto token = tape.constant(normal_tensor<double>({N, d}, rng));
    const auto y0 = normal_tensor<double>({N, block->to_mobile().channels(), 2, 2}, rng);
    if (block->to_mobile()(ctx, tape.constant(y0), z).value().storage() != y0.storage()) {
      detail = name + ": former_to_mobile is not the identity on the feature map";
      return false;
    }

    // Whole block with the Former residual branches silenced.
    auto& former = block->former();
    former.attention().output().weight().value.fill(0.0);
    former.attention().output().bias()->value.fill(0.0);
    if (auto* ffn = former.ffn()) {
      ffn->second().weight().value.fill(0.0);
      ffn->second().bias()->value.fill(0.0);
    }
    const auto [x2, z2] = (*block)(ctx, x, z, N);
    auto expect_z = ops::layer_norm(z, tape.constant(ones), tape.constant(zeros));
    if (former.ffn()) expect_z = ops::layer_norm(expect_z, tape.constant(ones), tape.constant(zeros));
    const auto expect_x = block->mobile()(ctx, x, &token).value();
    if (z2.value().storage() != expect_z.value().storage()) {
      detail = name + ": tokens differ from LN(LN(z))";
      return false;
    }
    if (x2.value().storage() != expect_x.storage()) {
      detail = name + ": feature map differs from the plain mobile path";
      return false;
    }
    ++blocks;
  }
  detail = fmt::format("{} {} blocks", name, blocks);
  return blocks > 0;
}

Outcome structure() {
  std::string shapes, tiny, b52;
  const bool ok_shapes = token_shapes(shapes);
  const bool ok_tiny = residual_identities("tiny", tiny);
  const bool ok_52 = residual_identities("52M", b52);
  return {ok_shapes && ok_tiny && ok_52,
          fmt::format("{}; zero-init identities (tokens LN(LN(z)), map = mobile path, each bridge direction "
                      "identity) exact on {} and {}",
                      shapes, tiny, b52)};
}

}  // namespace
}  // namespace mformer

int main(int argc, char** argv) {
  using mformer::Outcome;
  const std::function<Outcome()> criteria[] = {
      mformer::cost_table, mformer::budget,    mformer::ablation_ladders, mformer::closed_forms,
      mformer::gradients,  mformer::learning,  mformer::attention_rows,   mformer::structure,
  };
  constexpr int kCount = static_cast<int>(std::size(criteria));
  int first = 1, last = kCount;
  if (argc > 1) {
    first = last = std::atoi(argv[1]);
    if (first < 1 || first > kCount) {
      std::fprintf(stderr, "usage: %s [1-%d]\n", argv[0], kCount);
      return 2;
    }
  }
  int failed = 0;
  for (int i = first; i <= last; ++i) {
    Outcome o{false, ""};
    try {
      o = criteria[i - 1]();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    std::printf("criterion %d: %s %s\n", i, o.pass ? "PASS" : "FAIL", o.detail.c_str());
    std::fflush(stdout);
    failed += !o.pass;
  }
  return failed ? 1 : 0;
}
