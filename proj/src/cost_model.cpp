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

#include "mformer/cost_model.hpp"

#include <charconv>
#include <map>
#include <sstream>

#include <fmt/format.h>

namespace mformer {
namespace {

// Keeps first-seen order while merging by path.
class EntryIndex {
 public:
  CostEntry& at(const std::string& path, Pillar pillar) {
    auto [it, inserted] = index_.emplace(path, entries_.size());
    if (inserted) entries_.push_back({path, pillar, 0, 0});
    return entries_[it->second];
  }
  std::vector<CostEntry> release() { return std::move(entries_); }

 private:
  std::map<std::string, std::size_t> index_;
  std::vector<CostEntry> entries_;
};

std::string with_commas(std::uint64_t v) {
  std::string s = std::to_string(v);
  for (int i = static_cast<int>(s.size()) - 3; i > 0; i -= 3) s.insert(static_cast<std::size_t>(i), ",");
  return s;
}

constexpr Pillar kPillars[] = {Pillar::kStem, Pillar::kMobile, Pillar::kFormer, Pillar::kBridge,
                               Pillar::kHead};

}  // namespace

std::uint64_t CostReport::total_params() const {
  std::uint64_t n = 0;
  for (const auto& e : entries) n += e.params;
  return n;
}

std::uint64_t CostReport::total_madds() const {
  std::uint64_t n = 0;
  for (const auto& e : entries) n += e.madds;
  return n;
}

std::uint64_t CostReport::pillar_params(Pillar p) const {
  std::uint64_t n = 0;
  for (const auto& e : entries) n += e.pillar == p ? e.params : 0;
  return n;
}

std::uint64_t CostReport::pillar_madds(Pillar p) const {
  std::uint64_t n = 0;
  for (const auto& e : entries) n += e.pillar == p ? e.madds : 0;
  return n;
}

std::uint64_t CostReport::madds_under(std::string_view path) const {
  std::uint64_t n = 0;
  for (const auto& e : entries) n += path_is_under(e.path, path) ? e.madds : 0;
  return n;
}

std::uint64_t CostReport::params_under(std::string_view path) const {
  std::uint64_t n = 0;
  for (const auto& e : entries) n += path_is_under(e.path, path) ? e.params : 0;
  return n;
}

std::string CostReport::to_text() const {
  std::size_t width = 5;
  for (const auto& e : entries) width = std::max(width, e.path.size());
  std::string out = fmt::format("{} @ {}x{}\n", model, input_res, input_res);
  out += fmt::format("{:<{}}  {:<6}  {:>12}  {:>14}\n", "layer", width, "pillar", "params", "madds");
  for (const auto& e : entries) {
    out += fmt::format("{:<{}}  {:<6}  {:>12}  {:>14}\n", e.path, width, pillar_name(e.pillar),
                       with_commas(e.params), with_commas(e.madds));
  }
  out += "\n";
  const double tm = static_cast<double>(total_madds());
  for (Pillar p : kPillars) {
    const std::uint64_t m = pillar_madds(p);
    out += fmt::format("{:<8} params {:>7.3f}M  madds {:>8.2f}M  ({:5.1f}%)\n", pillar_name(p),
                       pillar_params(p) / 1e6, m / 1e6, tm > 0 ? 100.0 * m / tm : 0.0);
  }
  out += fmt::format("{:<8} params {:>7.3f}M  madds {:>8.2f}M\n", "total", total_params() / 1e6,
                     tm / 1e6);
  return out;
}

std::string CostReport::to_records() const {
  std::string out;
  for (const auto& e : entries) {
    out += fmt::format("{},{},{},{}\n", e.path, pillar_name(e.pillar), e.params, e.madds);
  }
  return out;
}

std::optional<CostEntry> parse_cost_record(std::string_view line) {
  std::vector<std::string_view> fields;
  std::size_t start = 0;
  while (true) {
    const std::size_t comma = line.find(',', start);
    fields.push_back(line.substr(start, comma == std::string_view::npos ? line.npos : comma - start));
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  if (fields.size() != 4 || fields[0].empty()) return std::nullopt;
  const auto pillar = parse_pillar(fields[1]);
  if (!pillar) return std::nullopt;
  CostEntry e{std::string(fields[0]), *pillar, 0, 0};
  for (auto [text, dst] : {std::pair{fields[2], &e.params}, std::pair{fields[3], &e.madds}}) {
    const auto [end, ec] = std::from_chars(text.data(), text.data() + text.size(), *dst);
    if (ec != std::errc() || end != text.data() + text.size() || text.empty()) return std::nullopt;
  }
  return e;
}

template <typename T>
CostReport count_params(const Model<T>& model) {
  EntryIndex index;
  for (const Parameter<T>& p : model.store().parameters()) {
    index.at(p.layer, p.pillar).params += p.value.size();
  }
  return {model.spec().name, model.spec().input_res(), index.release()};
}

template <typename T>
CostReport count_madds(Model<T>& model, std::size_t input_res) {
  if (input_res == 0) throw ArgumentError("input resolution must be positive");
  CostCounter counter;
  Tape<T> tape({.grad_enabled = false, .dry_run = true, .counter = &counter});
  nn::Context<T> ctx{tape, Mode::kEval, nullptr};
  model.forward(ctx, tape.constant(Tensor<T>({1, 3, input_res, input_res})));
  EntryIndex index;
  for (const CostEvent& e : counter.events()) index.at(e.path, e.pillar).madds += e.madds;
  return {model.spec().name, input_res, index.release()};
}

template <typename T>
CostReport cost_report(Model<T>& model, std::size_t input_res) {
  CostReport madds = count_madds(model, input_res);
  EntryIndex index;
  for (const CostEntry& e : madds.entries) index.at(e.path, e.pillar).madds += e.madds;
  for (const Parameter<T>& p : model.store().parameters()) {
    CostEntry& e = index.at(p.layer, p.pillar);
    if (e.pillar != p.pillar) {
      throw Error("layer '" + p.layer + "' is attributed to two pillars");
    }
    e.params += p.value.size();
  }
  return {model.spec().name, input_res, index.release()};
}

AnalyticBlockCost analytic_block_cost(std::uint64_t L, std::uint64_t C, std::uint64_t E,
                                      std::uint64_t M, std::uint64_t d) {
  AnalyticBlockCost c;
  c.mobile = 2 * L * E * C * C + 9 * L * E * C;
  c.former = M * M * d + M * d * d;
  c.mobile_to_former = L * M * C + M * d * C;
  c.former_to_mobile = L * M * C + M * d * C;
  return c;
}

Budget budget_report(const CostReport& report) {
  Budget b;
  b.total = report.total_madds();
  b.former = report.pillar_madds(Pillar::kFormer);
  b.bridge = report.pillar_madds(Pillar::kBridge);
  b.fraction = b.total ? static_cast<double>(b.former + b.bridge) / static_cast<double>(b.total) : 0.0;
  return b;
}

template <typename T>
Budget budget_report(Model<T>& model, std::size_t input_res) {
  return budget_report(count_madds(model, input_res));
}

std::vector<PublishedTarget> variant_targets() {
  return {
      {"26M", "26M", {}, 3.2, 26},     {"52M", "52M", {}, 3.5, 52},
      {"96M", "96M", {}, 4.6, 96},     {"151M", "151M", {}, 7.6, 151},
      {"214M", "214M", {}, 9.4, 214},  {"294M", "294M", {}, 11.4, 294},
      {"508M", "508M", {}, 14.0, 508},
  };
}

std::vector<PublishedTarget> ablation_targets() {
  auto tokens = [](std::size_t n) {
    Ablation a;
    a.tokens = n;
    return a;
  };
  auto dim = [](std::size_t d) {
    Ablation a;
    a.token_dim = d;
    return a;
  };
  Ablation kernel5;
  kernel5.kernel = 5;
  Ablation no_ffn;
  no_ffn.no_ffn = true;
  Ablation mobile_only;
  mobile_only.no_former = true;
  Ablation static_relu;
  static_relu.static_relu = true;
  return {
      {"tokens=1", "294M", tokens(1), std::nullopt, 269},
      {"tokens=3", "294M", tokens(3), std::nullopt, 279},
      {"tokens=6", "294M", tokens(6), std::nullopt, 294},
      {"tokens=9", "294M", tokens(9), std::nullopt, 309},
      {"token-dim=64", "294M", dim(64), std::nullopt, 277},
      {"token-dim=128", "294M", dim(128), std::nullopt, 284},
      {"token-dim=192", "294M", dim(192), std::nullopt, 294},
      {"token-dim=256", "294M", dim(256), std::nullopt, 308},
      {"token-dim=320", "294M", dim(320), std::nullopt, 325},
      {"no-ffn", "294M", no_ffn, std::nullopt, 284},
      {"kernel=5", "294M", kernel5, std::nullopt, 332},
      {"mobile-relu", "294M", mobile_only, 6.1, 259},
      {"former-bridge-relu", "294M", static_relu, 10.1, 290},
      {"former-bridge-dyrelu", "294M", {}, 11.4, 294},
  };
}

template CostReport count_params(const Model<float>&);
template CostReport count_madds(Model<float>&, std::size_t);
template CostReport cost_report(Model<float>&, std::size_t);
template Budget budget_report(Model<float>&, std::size_t);
template CostReport count_params(const Model<double>&);
template CostReport count_madds(Model<double>&, std::size_t);
template CostReport cost_report(Model<double>&, std::size_t);
template Budget budget_report(Model<double>&, std::size_t);

}  // namespace mformer
