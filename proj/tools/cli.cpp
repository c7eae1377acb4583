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

#include "mformer/cli.hpp"

#include <chrono>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <numeric>

#include <CLI11.hpp>
#include <fmt/format.h>

#include "mformer/cost_model.hpp"
#include "mformer/train.hpp"

namespace mformer::cli {
namespace {

class Stopwatch {
 public:
  double seconds() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
  }

 private:
  std::chrono::steady_clock::time_point start_ = std::chrono::steady_clock::now();
};

// --out wins; otherwise $MFORMER_OUT_DIR/<fallback>; otherwise nothing.
std::optional<std::string> output_path(const std::string& flag, const std::string& fallback) {
  if (!flag.empty()) return flag;
  if (const char* dir = std::getenv("MFORMER_OUT_DIR"); dir && *dir) {
    std::filesystem::create_directories(dir);
    return (std::filesystem::path(dir) / fallback).string();
  }
  return std::nullopt;
}

std::ofstream open_output(const std::string& path) {
  std::ofstream out(path);
  if (!out) throw ArgumentError("cannot write '" + path + "'");
  return out;
}

double deviation(double got, double want) { return got / want - 1.0; }

std::string verdict(bool ok) { return ok ? "PASS" : "FAIL"; }

// One line comparing measured costs with a published row.
std::string compare_line(const PublishedTarget& t, const CostReport& r, double tol, bool& ok) {
  const double params = r.total_params() / 1e6, madds = r.total_madds() / 1e6;
  const double dm = deviation(madds, t.madds_m);
  bool pass = std::abs(dm) <= tol;
  std::string line = fmt::format("{:<22} madds {:8.2f}M (published {:5.0f}M, {:+6.2f}%)", t.label, madds,
                                 t.madds_m, 100 * dm);
  if (t.params_m) {
    const double dp = deviation(params, *t.params_m);
    pass = pass && std::abs(dp) <= tol;
    line += fmt::format("  params {:6.2f}M (published {:4.1f}M, {:+6.2f}%)", params, *t.params_m, 100 * dp);
  } else {
    line += fmt::format("  params {:6.2f}M", params);
  }
  ok = ok && pass;
  return line + "  " + verdict(pass) + "\n";
}

CommandResult summarize(const std::string& name, std::size_t res, const std::string& format) {
  const ModelSpec spec = load_spec(name);
  Model<float> model(spec, 0);
  const CostReport r = cost_report(model, res ? res : spec.input_res());
  if (format == "records") return {kExitOk, r.to_records(), std::nullopt};
  const Budget b = budget_report(r);
  return {kExitOk,
          r.to_text() + fmt::format("former+bridge {:.2f}M of {:.2f}M ({:.1f}%)\n",
                                    (b.former + b.bridge) / 1e6, b.total / 1e6, 100 * b.fraction),
          std::nullopt};
}

CommandResult verify_costs(const std::string& variant, double tol) {
  std::vector<PublishedTarget> targets;
  for (const auto& t : variant_targets()) {
    if (variant == "all" || t.label == variant) targets.push_back(t);
  }
  if (targets.empty()) {
    return {kExitUsage, "unknown variant '" + variant + "'; expected one of 26M, 52M, 96M, 151M, 214M, 294M, 508M or all\n",
            std::nullopt};
  }
  Stopwatch clock;
  bool ok = true;
  std::string report;
  for (const auto& t : targets) {
    Model<float> model(builtin_spec(t.base), 0);
    const CostReport r = cost_report(model, 224);
    report += compare_line(t, r, tol, ok);
    const Budget b = budget_report(r);
    report += fmt::format("{:<22} former+bridge {:.2f}M, {:.1f}% of total\n", "", (b.former + b.bridge) / 1e6,
                          100 * b.fraction);
  }
  report += fmt::format("{} of {} within {:.1f}% ({:.2f}s)\n", ok ? "all" : "not all", targets.size(),
                        100 * tol, clock.seconds());
  return {ok ? kExitOk : kExitCheckFailed, report, std::nullopt};
}

CommandResult ablate(const std::string& base, const Ablation& a, double tol) {
  const ModelSpec spec = apply_ablation(builtin_spec(base), a);
  Model<float> model(spec, 0);
  const CostReport r = cost_report(model, 224);
  const Budget b = budget_report(r);
  std::string report = fmt::format("{}: params {:.3f}M, madds {:.2f}M, former+bridge {:.1f}%\n", spec.name,
                                   r.total_params() / 1e6, r.total_madds() / 1e6, 100 * b.fraction);
  bool ok = true;
  for (const auto& t : ablation_targets()) {
    if (t.base == base && t.ablation == a) {
      report += compare_line(t, r, tol, ok);
      break;
    }
  }
  return {ok ? kExitOk : kExitCheckFailed, report, std::nullopt};
}

CommandResult gradcheck(const std::string& name, const GradcheckOptions& options, double tol) {
  Stopwatch clock;
  const GradcheckResult r = gradcheck_model(load_spec(name), options);
  std::string report;
  std::size_t checked = 0, nudged = 0;
  for (const auto& g : r.groups) {
    report += fmt::format("{:<44} {:3} entries  max rel err {:.3e}\n", g.name, g.checked, g.max_error);
    checked += g.checked;
    nudged += g.nudged;
  }
  const bool ok = r.max_error < tol;
  report += fmt::format(
      "{} groups, {} entries ({} re-checked off a kink), input draws {}, kink margin {:.2e}\n"
      "max rel err {:.3e} at {} (tolerance {:.0e}) {} ({:.1f}s)\n",
      r.groups.size(), checked, nudged, r.draws, r.kink_margin, r.max_error, r.worst, tol, verdict(ok),
      clock.seconds());
  return {ok ? kExitOk : kExitCheckFailed, report, std::nullopt};
}

struct ToyOptions {
  std::string spec = "tiny";
  std::size_t steps = 2000;
  std::uint64_t seed = 0;
  std::size_t classes = 10;
  std::size_t per_class = 20;
  double noise = 0.5;
  std::size_t batch = 32;
  double lr = 2e-3;
  double weight_decay = 0.01;
  std::string out;
};

CommandResult train_toy(const ToyOptions& o) {
  ModelSpec spec = load_spec(o.spec);
  spec.classes = o.classes;
  validate(spec);
  const auto data = make_synthetic<float>(o.classes, o.per_class, spec.input_res(), o.noise, o.seed + 1);
  Model<float> model(spec, o.seed);
  TrainConfig cfg;
  cfg.steps = o.steps;
  cfg.batch = std::min(o.batch, data.size());
  cfg.optim = {.lr = o.lr, .weight_decay = o.weight_decay, .horizon = o.steps};
  cfg.seed = o.seed;
  cfg.eval_every = std::max<std::size_t>(o.steps / 10, 1);
  const auto path = output_path(o.out, "train_metrics.csv");
  std::ofstream log;
  if (path) {
    log = open_output(*path);
    log << kMetricsHeader << '\n';
  }
  Stopwatch clock;
  const auto history = train(model, data, cfg, [&](const MetricsRecord& r) {
    if (log.is_open()) log << format_metrics(r) << '\n';
  });
  std::vector<double> losses;
  for (const auto& r : history) losses.push_back(r.loss);
  const std::size_t w = std::min<std::size_t>(100, losses.size());
  const double first = window_mean(losses, 0, w);
  const double last = window_mean(losses, losses.size() - w, losses.size());
  const double acc = evaluate(model, data);
  std::string report = fmt::format(
      "{} on {} classes x {} samples, {} steps: loss {:.4f} (first {}) -> {:.4f} (last {}), "
      "train accuracy {:.2f}% ({:.1f}s)\n",
      spec.name, o.classes, o.per_class, o.steps, first, w, last, w, 100 * acc, clock.seconds());
  if (path) report += "metrics written to " + *path + "\n";
  return {kExitOk, report, path};
}

CommandResult export_attention_cmd(const std::string& name, std::uint64_t seed, const std::string& out) {
  const auto path = output_path(out, "attention.csv");
  if (!path) return {kExitUsage, "export-attention needs --out or MFORMER_OUT_DIR\n", std::nullopt};
  const ModelSpec spec = load_spec(name);
  if (!spec.former) return {kExitUsage, spec.name + " has no bridge to export\n", std::nullopt};
  Model<float> model(spec, seed);
  const std::size_t res = spec.input_res();
  const auto data = make_synthetic<float>(4, 2, res, 0.5, seed + 1);
  model.calibrate({data.images});
  Tensor<float> image({1, 3, res, res},
                      std::vector<float>(data.images.ptr(), data.images.ptr() + 3 * res * res));
  Stopwatch clock;
  const auto rows = export_attention(model, image);
  std::ofstream file = open_output(*path);
  write_attention_csv(file, rows);
  const RowSumError e = attention_row_error(rows);
  std::size_t blocks = 0;
  for (std::size_t i = 0; i < rows.size(); ++i) blocks += i == 0 || rows[i].block != rows[i - 1].block;
  const bool ok = e.to_former <= 1e-5 && e.to_mobile <= 1e-5;
  const std::string report = fmt::format(
      "{}: {} blocks, {} weights, {} normalized rows; max |row sum - 1| mobile_to_former {:.2e}, "
      "former_to_mobile {:.2e} {} ({:.1f}s)\nwritten to {}\n",
      spec.name, blocks, rows.size(), e.rows, e.to_former, e.to_mobile, verdict(ok), clock.seconds(), *path);
  return {ok ? kExitOk : kExitCheckFailed, report, path};
}

}  // namespace

CommandResult run(const std::vector<std::string>& args) {
  CLI::App app{"Cost analysis, gradient checks and toy training for the mformer networks", "mformer"};
  app.require_subcommand(1);

  std::string name, format = "text", variant = "all", base, out;
  std::size_t res = 0;
  double tol = 0.05, grad_tol = 1e-4;
  Ablation ablation;
  std::size_t tokens = 0, token_dim = 0, kernel = 0;
  bool tiny = false;
  GradcheckOptions gopt;
  std::string grad_spec = "tiny";
  ToyOptions toy;
  std::uint64_t seed = 0;

  auto* summarize_cmd = app.add_subcommand("summarize", "per-layer and per-pillar cost report");
  summarize_cmd->add_option("spec", name, "builtin name or spec file")->required();
  summarize_cmd->add_option("--res", res, "input resolution (default: the spec's)");
  summarize_cmd->add_option("--format", format)->check(CLI::IsMember({"text", "records"}));

  auto* verify_cmd = app.add_subcommand("verify-costs", "compare costs with the published table");
  verify_cmd->add_option("--variant", variant, "variant name or all");
  verify_cmd->add_option("--tol", tol, "relative tolerance")->check(CLI::PositiveNumber);

  auto* ablate_cmd = app.add_subcommand("ablate", "cost of a modified variant");
  ablate_cmd->add_option("--base", base)->required();
  ablate_cmd->add_option("--tokens", tokens)->check(CLI::PositiveNumber);
  ablate_cmd->add_option("--token-dim", token_dim)->check(CLI::PositiveNumber);
  ablate_cmd->add_option("--kernel", kernel)->check(CLI::IsMember({3, 5}));
  ablate_cmd->add_flag("--no-ffn", ablation.no_ffn);
  ablate_cmd->add_flag("--no-former", ablation.no_former);
  ablate_cmd->add_flag("--static-relu", ablation.static_relu);
  ablate_cmd->add_option("--tol", tol)->check(CLI::PositiveNumber);

  auto* grad_cmd = app.add_subcommand("gradcheck", "finite-difference check of a 64-bit model");
  grad_cmd->add_flag("--tiny", tiny, "use the built-in 2-block model (default)");
  grad_cmd->add_option("--spec", grad_spec);
  grad_cmd->add_option("--seed", gopt.seed);
  grad_cmd->add_option("--samples", gopt.samples, "entries per parameter tensor")->check(CLI::PositiveNumber);
  grad_cmd->add_option("--tol", grad_tol)->check(CLI::PositiveNumber);

  auto* train_cmd = app.add_subcommand("train-toy", "train on synthetic prototypes");
  train_cmd->add_option("--spec", toy.spec);
  train_cmd->add_option("--steps", toy.steps)->check(CLI::PositiveNumber);
  train_cmd->add_option("--seed", toy.seed);
  train_cmd->add_option("--classes", toy.classes)->check(CLI::Range(2, 1000));
  train_cmd->add_option("--per-class", toy.per_class)->check(CLI::PositiveNumber);
  train_cmd->add_option("--noise", toy.noise)->check(CLI::NonNegativeNumber);
  train_cmd->add_option("--batch", toy.batch)->check(CLI::PositiveNumber);
  train_cmd->add_option("--lr", toy.lr)->check(CLI::NonNegativeNumber);
  train_cmd->add_option("--wd", toy.weight_decay)->check(CLI::NonNegativeNumber);
  train_cmd->add_option("--out", toy.out, "metrics log path");

  auto* export_cmd = app.add_subcommand("export-attention", "dump bridge attention for one image");
  export_cmd->add_option("--spec", name)->required();
  export_cmd->add_option("--seed", seed)->required();
  export_cmd->add_option("--out", out);

  std::vector<std::string> argv{"mformer"};
  argv.insert(argv.end(), args.begin(), args.end());
  std::vector<const char*> cargs;
  for (const auto& a : argv) cargs.push_back(a.c_str());
  try {
    app.parse(static_cast<int>(cargs.size()), cargs.data());
  } catch (const CLI::CallForHelp&) {
    return {kExitOk, app.help(), std::nullopt};
  } catch (const CLI::ParseError& e) {
    CLI::App* sub = app.get_subcommands().empty() ? &app : app.get_subcommands().front();
    return {kExitUsage, std::string(e.what()) + "\n\n" + sub->help(), std::nullopt};
  }

  try {
    if (*summarize_cmd) return summarize(name, res, format);
    if (*verify_cmd) return verify_costs(variant, tol);
    if (*ablate_cmd) {
      if (tokens) ablation.tokens = tokens;
      if (token_dim) ablation.token_dim = token_dim;
      if (kernel) ablation.kernel = kernel;
      return ablate(base, ablation, tol);
    }
    if (*grad_cmd) return gradcheck(tiny ? "tiny" : grad_spec, gopt, grad_tol);
    if (*train_cmd) return train_toy(toy);
    if (*export_cmd) return export_attention_cmd(name, seed, out);
  } catch (const SpecError& e) {
    return {kExitUsage, std::string("spec error: ") + e.what() + "\n", std::nullopt};
  } catch (const ArgumentError& e) {
    return {kExitUsage, std::string("error: ") + e.what() + "\n", std::nullopt};
  } catch (const DivergenceError& e) {
    return {kExitCheckFailed, std::string("diverged: ") + e.what() + "\n", std::nullopt};
  }
  return {kExitUsage, app.help(), std::nullopt};
}

}  // namespace mformer::cli
