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

// Parameter and multiply-add accounting. Multiply-adds come from a dry-run
// forward of a batch of one image, charged by the primitives themselves, so
// the report always describes the code that actually runs.

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "mformer/cost_counter.hpp"
#include "mformer/model.hpp"

namespace mformer {

struct CostEntry {
  std::string path;
  Pillar pillar = Pillar::kMobile;
  std::uint64_t params = 0;
  std::uint64_t madds = 0;

  bool operator==(const CostEntry&) const = default;
};

struct CostReport {
  std::string model;
  std::size_t input_res = 0;
  std::vector<CostEntry> entries;

  std::uint64_t total_params() const;
  std::uint64_t total_madds() const;
  std::uint64_t pillar_params(Pillar p) const;
  std::uint64_t pillar_madds(Pillar p) const;
  /// Sum over entries at or beneath `path`.
  std::uint64_t madds_under(std::string_view path) const;
  std::uint64_t params_under(std::string_view path) const;

  /// Aligned table of entries followed by per-pillar and grand totals.
  std::string to_text() const;
  /// One `path,pillar,params,madds` line per entry.
  std::string to_records() const;
};

/// Parses one line of the record format; nullopt if it does not conform.
std::optional<CostEntry> parse_cost_record(std::string_view line);

/// Parameters per layer path (madds left at zero).
template <typename T>
CostReport count_params(const Model<T>& model);

/// Multiply-adds per layer path at `input_res` x `input_res` (params zero).
template <typename T>
CostReport count_madds(Model<T>& model, std::size_t input_res);

/// Both sides merged into one report.
template <typename T>
CostReport cost_report(Model<T>& model, std::size_t input_res);

/// Closed-form per-block costs:
///   mobile  2*L*E*C^2 + 9*L*E*C   (3x3 inverted bottleneck, C' = C)
///   former  M^2*d + M*d^2
///   bridge  L*M*C + M*d*C         (each direction)
struct AnalyticBlockCost {
  std::uint64_t mobile = 0;
  std::uint64_t former = 0;
  std::uint64_t mobile_to_former = 0;
  std::uint64_t former_to_mobile = 0;
};

AnalyticBlockCost analytic_block_cost(std::uint64_t L, std::uint64_t C, std::uint64_t E,
                                      std::uint64_t M, std::uint64_t d);

struct Budget {
  std::uint64_t total = 0;
  std::uint64_t former = 0;
  std::uint64_t bridge = 0;
  /// (former + bridge) / total
  double fraction = 0.0;
};

Budget budget_report(const CostReport& report);
template <typename T>
Budget budget_report(Model<T>& model, std::size_t input_res);

/// Published cost of a configuration, in millions.
struct PublishedTarget {
  std::string label;
  std::string base;
  Ablation ablation;
  std::optional<double> params_m;
  double madds_m = 0;
};

/// Published costs, one row per builtin variant.
std::vector<PublishedTarget> variant_targets();
/// Ablation rows of the 294M model: token count, token dim, FFN, kernel
/// size, and the Former/DY-ReLU ladder.
std::vector<PublishedTarget> ablation_targets();

extern template CostReport count_params(const Model<float>&);
extern template CostReport count_madds(Model<float>&, std::size_t);
extern template CostReport cost_report(Model<float>&, std::size_t);
extern template Budget budget_report(Model<float>&, std::size_t);

}  // namespace mformer
