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

// Reverse-mode differentiation over a closed set of primitives. A Tape owns
// every intermediate value of one forward pass; primitives in ops.hpp append
// a node and, when gradients are wanted, a record carrying the adjoint.

#include <algorithm>
#include <cstddef>
#include <functional>
#include <limits>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "mformer/cost_counter.hpp"
#include "mformer/tensor.hpp"

namespace mformer {

/// A trainable tensor owned by a model. `layer` is the cost-report entry the
/// parameter is attributed to.
template <typename T>
struct Parameter {
  std::string name;
  std::string layer;
  Pillar pillar = Pillar::kMobile;
  bool decay = true;
  Tensor<T> value;
  Tensor<T> grad;

  void zero_grad() { grad.fill(T(0)); }
};

using NodeId = std::size_t;

enum class OpKind {
  kLeaf,
  kMatMul,
  kLinear,
  kConv2d,
  kSoftmax,
  kAvgPool,
  kAdd,
  kMul,
  kScale,
  kSum,
  kMean,
  kRelu,
  kHSwish,
  kGelu,
  kDyRelu,
  kBatchNorm,
  kLayerNorm,
  kSlice,
  kConcat,
  kReshape,
  kGatherRows,
  kDropout,
  kCrossEntropy,
};

std::string_view op_kind_name(OpKind op);

template <typename T>
class Tape;

/// Handle to a node on a tape. Cheap to copy; valid while the tape lives.
template <typename T>
class Var {
 public:
  Var() = default;
  Var(Tape<T>* tape, NodeId id) : tape_(tape), id_(id) {}

  bool valid() const noexcept { return tape_ != nullptr; }
  Tape<T>& tape() const { return *tape_; }
  NodeId id() const noexcept { return id_; }

  const Tensor<T>& value() const;
  const Shape& shape() const { return value().shape(); }
  std::size_t dim(std::size_t axis) const { return value().dim(axis); }
  std::size_t size() const { return value().size(); }
  bool requires_grad() const;

  /// Gradient after backward(); zeros if the loss does not depend on this node.
  Tensor<T> grad() const;

 private:
  Tape<T>* tape_ = nullptr;
  NodeId id_ = 0;
};

struct TapeOptions {
  /// Record adjoints. Off for inference.
  bool grad_enabled = true;
  /// Propagate shapes and charge costs without doing arithmetic.
  bool dry_run = false;
  CostCounter* counter = nullptr;
  /// Record how close activation inputs come to a branch switch.
  bool track_kinks = false;
};

template <typename T>
class Tape {
 public:
  using Adjoint = std::function<void(Tape&, NodeId out)>;

  struct Record {
    OpKind op;
    std::vector<NodeId> inputs;
    NodeId output;
    Adjoint backward;
  };

  explicit Tape(TapeOptions options = {}) : options_(options) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var<T> constant(Tensor<T> value);
  Var<T> variable(Tensor<T> value);
  /// Binds a model parameter; its gradient accumulates into `p.grad`.
  Var<T> parameter(Parameter<T>& p);

  /// Appends a primitive's output. The record is kept only when gradients
  /// are enabled and some input requires them.
  Var<T> emit(OpKind op, const std::vector<Var<T>>& inputs, Tensor<T> out, Adjoint backward);

  const Tensor<T>& value(NodeId id) const;
  bool requires_grad(NodeId id) const { return nodes_[id].requires_grad; }
  bool has_grad(NodeId id) const;
  /// Gradient buffer of a node, allocated as zeros on first access.
  std::span<T> grad(NodeId id);

  /// Propagates d(loss)/d(node) to every node that requires gradients.
  /// Parameter and variable gradients accumulate across calls.
  void backward(Var<T> loss);

  /// Zeros leaf gradients, including bound parameters.
  void zero_grad();

  bool grad_enabled() const noexcept { return options_.grad_enabled; }
  bool dry_run() const noexcept { return options_.dry_run; }
  CostCounter* counter() const noexcept { return options_.counter; }
  bool tracks_kinks() const noexcept { return options_.track_kinks; }
  void note_kink_distance(double d) noexcept { kink_margin_ = std::min(kink_margin_, d); }
  /// Smallest distance to a branch switch seen so far (infinity if none).
  double kink_margin() const noexcept { return kink_margin_; }
  void charge(OpClass cls, std::uint64_t madds) const {
    if (options_.counter) options_.counter->add(cls, madds);
  }

  std::size_t num_nodes() const noexcept { return nodes_.size(); }
  const std::vector<Record>& records() const noexcept { return records_; }

 private:
  struct Node {
    Tensor<T> owned;
    Parameter<T>* param = nullptr;
    std::vector<T> grad;
    bool requires_grad = false;
    bool leaf = false;
  };

  TapeOptions options_;
  double kink_margin_ = std::numeric_limits<double>::infinity();
  std::vector<Node> nodes_;
  std::vector<Record> records_;
  std::unordered_map<const Parameter<T>*, NodeId> bound_;
};

template <typename T>
const Tensor<T>& Var<T>::value() const {
  return tape_->value(id_);
}

template <typename T>
bool Var<T>::requires_grad() const {
  return tape_->requires_grad(id_);
}

template <typename T>
Tensor<T> Var<T>::grad() const {
  const Tensor<T>& v = value();
  if (!tape_->has_grad(id_)) return Tensor<T>(v.shape());
  auto g = tape_->grad(id_);
  return Tensor<T>(v.shape(), std::vector<T>(g.begin(), g.end()));
}

extern template class Tape<float>;
extern template class Tape<double>;

}  // namespace mformer
