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
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace mformer {

/// Cost attribution bucket for every parameter and multiply-add.
enum class Pillar { kStem, kMobile, kFormer, kBridge, kHead };

std::string_view pillar_name(Pillar p);
std::optional<Pillar> parse_pillar(std::string_view name);

/// Coarse primitive family, used to separate MAC-bearing work (conv, linear,
/// matmul) from normalization and elementwise costs.
enum class OpClass { kConv, kLinear, kMatMul, kNorm, kActivation, kSoftmax, kElementwise, kPool };

std::string_view op_class_name(OpClass c);

/// Multiply-add tally for one (scope, op class) pair. `detail` names the
/// primitive role when the caller tagged it ("scores", "aggregate", ...).
struct CostEvent {
  std::string path;
  Pillar pillar;
  OpClass op_class;
  std::string detail;
  std::uint64_t madds;
};

/// Collects multiply-adds from primitives executed on a tape. Primitives
/// charge the innermost open scope.
class CostCounter {
 public:
  void push(std::string path, Pillar pillar);
  void pop();

  /// Tag applied to the next charges until cleared with an empty string.
  void set_detail(std::string detail) { detail_ = std::move(detail); }
  const std::string& detail() const noexcept { return detail_; }

  void add(OpClass cls, std::uint64_t madds);

  const std::vector<CostEvent>& events() const noexcept { return events_; }
  std::uint64_t total() const;
  /// Sum over events whose path equals `path` or lies beneath it.
  std::uint64_t total_under(std::string_view path) const;
  std::uint64_t total_under(std::string_view path, OpClass cls) const;
  std::uint64_t total_detail(std::string_view path, std::string_view detail) const;

  void clear() { events_.clear(); }

 private:
  struct Frame {
    std::string path;
    Pillar pillar;
  };
  std::vector<Frame> stack_;
  std::vector<CostEvent> events_;
  std::string detail_;
};

/// RAII scope. A null counter makes this a no-op.
class CostScope {
 public:
  CostScope(CostCounter* counter, std::string path, Pillar pillar) : counter_(counter) {
    if (counter_) counter_->push(std::move(path), pillar);
  }
  ~CostScope() {
    if (counter_) counter_->pop();
  }
  CostScope(const CostScope&) = delete;
  CostScope& operator=(const CostScope&) = delete;

 private:
  CostCounter* counter_;
};

/// Tags charges inside a region with a role name.
class CostDetail {
 public:
  CostDetail(CostCounter* counter, std::string detail) : counter_(counter) {
    if (counter_) {
      previous_ = counter_->detail();
      counter_->set_detail(std::move(detail));
    }
  }
  ~CostDetail() {
    if (counter_) counter_->set_detail(previous_);
  }
  CostDetail(const CostDetail&) = delete;
  CostDetail& operator=(const CostDetail&) = delete;

 private:
  CostCounter* counter_;
  std::string previous_;
};

inline bool path_is_under(std::string_view path, std::string_view root) {
  if (root.empty()) return true;
  if (path.size() < root.size() || path.substr(0, root.size()) != root) return false;
  return path.size() == root.size() || path[root.size()] == '.';
}

}  // namespace mformer
