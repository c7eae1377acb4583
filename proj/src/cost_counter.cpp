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

#include "mformer/cost_counter.hpp"

#include "mformer/errors.hpp"

namespace mformer {

std::string_view pillar_name(Pillar p) {
  switch (p) {
    case Pillar::kStem:
      return "stem";
    case Pillar::kMobile:
      return "mobile";
    case Pillar::kFormer:
      return "former";
    case Pillar::kBridge:
      return "bridge";
    case Pillar::kHead:
      return "head";
  }
  return "?";
}

std::optional<Pillar> parse_pillar(std::string_view name) {
  for (Pillar p : {Pillar::kStem, Pillar::kMobile, Pillar::kFormer, Pillar::kBridge, Pillar::kHead}) {
    if (pillar_name(p) == name) return p;
  }
  return std::nullopt;
}

std::string_view op_class_name(OpClass c) {
  switch (c) {
    case OpClass::kConv:
      return "conv";
    case OpClass::kLinear:
      return "linear";
    case OpClass::kMatMul:
      return "matmul";
    case OpClass::kNorm:
      return "norm";
    case OpClass::kActivation:
      return "activation";
    case OpClass::kSoftmax:
      return "softmax";
    case OpClass::kElementwise:
      return "elementwise";
    case OpClass::kPool:
      return "pool";
  }
  return "?";
}

void CostCounter::push(std::string path, Pillar pillar) {
  stack_.push_back({std::move(path), pillar});
}

void CostCounter::pop() {
  if (stack_.empty()) throw Error("cost scope stack underflow");
  stack_.pop_back();
}

void CostCounter::add(OpClass cls, std::uint64_t madds) {
  if (madds == 0) return;
  const std::string path = stack_.empty() ? std::string("<root>") : stack_.back().path;
  const Pillar pillar = stack_.empty() ? Pillar::kMobile : stack_.back().pillar;
  // Consecutive charges to the same slot are merged to keep the log short.
  if (!events_.empty()) {
    CostEvent& last = events_.back();
    if (last.path == path && last.op_class == cls && last.detail == detail_ && last.pillar == pillar) {
      last.madds += madds;
      return;
    }
  }
  events_.push_back({path, pillar, cls, detail_, madds});
}

std::uint64_t CostCounter::total() const {
  std::uint64_t t = 0;
  for (const auto& e : events_) t += e.madds;
  return t;
}

std::uint64_t CostCounter::total_under(std::string_view path) const {
  std::uint64_t t = 0;
  for (const auto& e : events_) {
    if (path_is_under(e.path, path)) t += e.madds;
  }
  return t;
}

std::uint64_t CostCounter::total_under(std::string_view path, OpClass cls) const {
  std::uint64_t t = 0;
  for (const auto& e : events_) {
    if (e.op_class == cls && path_is_under(e.path, path)) t += e.madds;
  }
  return t;
}

std::uint64_t CostCounter::total_detail(std::string_view path, std::string_view detail) const {
  std::uint64_t t = 0;
  for (const auto& e : events_) {
    if (e.detail == detail && path_is_under(e.path, path)) t += e.madds;
  }
  return t;
}

}  // namespace mformer
