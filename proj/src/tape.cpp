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

#include "mformer/tape.hpp"

#include <algorithm>

namespace mformer {

std::string_view op_kind_name(OpKind op) {
  switch (op) {
    case OpKind::kLeaf: return "leaf";
    case OpKind::kMatMul: return "matmul";
    case OpKind::kLinear: return "linear";
    case OpKind::kConv2d: return "conv2d";
    case OpKind::kSoftmax: return "softmax";
    case OpKind::kAvgPool: return "avgpool2d";
    case OpKind::kAdd: return "add";
    case OpKind::kMul: return "mul";
    case OpKind::kScale: return "scale";
    case OpKind::kSum: return "sum";
    case OpKind::kMean: return "mean";
    case OpKind::kRelu: return "relu";
    case OpKind::kHSwish: return "h_swish";
    case OpKind::kGelu: return "gelu";
    case OpKind::kDyRelu: return "dynamic_relu";
    case OpKind::kBatchNorm: return "batch_norm";
    case OpKind::kLayerNorm: return "layer_norm";
    case OpKind::kSlice: return "slice";
    case OpKind::kConcat: return "concat";
    case OpKind::kReshape: return "reshape";
    case OpKind::kGatherRows: return "gather_rows";
    case OpKind::kDropout: return "dropout";
    case OpKind::kCrossEntropy: return "cross_entropy";
  }
  return "?";
}

template <typename T>
Var<T> Tape<T>::constant(Tensor<T> value) {
  Node n;
  n.owned = std::move(value);
  n.leaf = true;
  nodes_.push_back(std::move(n));
  return Var<T>(this, nodes_.size() - 1);
}

template <typename T>
Var<T> Tape<T>::variable(Tensor<T> value) {
  Node n;
  n.owned = std::move(value);
  n.leaf = true;
  n.requires_grad = options_.grad_enabled;
  nodes_.push_back(std::move(n));
  return Var<T>(this, nodes_.size() - 1);
}

template <typename T>
Var<T> Tape<T>::parameter(Parameter<T>& p) {
  if (auto it = bound_.find(&p); it != bound_.end()) return Var<T>(this, it->second);
  Node n;
  n.param = &p;
  n.leaf = true;
  n.requires_grad = options_.grad_enabled;
  nodes_.push_back(std::move(n));
  const NodeId id = nodes_.size() - 1;
  bound_.emplace(&p, id);
  return Var<T>(this, id);
}

template <typename T>
Var<T> Tape<T>::emit(OpKind op, const std::vector<Var<T>>& inputs, Tensor<T> out, Adjoint backward) {
  bool needs = false;
  std::vector<NodeId> ids;
  ids.reserve(inputs.size());
  for (const Var<T>& v : inputs) {
    if (&v.tape() != this) throw Error("inputs of one primitive must live on the same tape");
    ids.push_back(v.id());
    needs = needs || nodes_[v.id()].requires_grad;
  }
  Node n;
  n.owned = std::move(out);
  n.requires_grad = needs && options_.grad_enabled && !options_.dry_run;
  nodes_.push_back(std::move(n));
  const NodeId id = nodes_.size() - 1;
  if (nodes_[id].requires_grad) records_.push_back({op, std::move(ids), id, std::move(backward)});
  return Var<T>(this, id);
}

template <typename T>
const Tensor<T>& Tape<T>::value(NodeId id) const {
  const Node& n = nodes_.at(id);
  return n.param ? n.param->value : n.owned;
}

template <typename T>
bool Tape<T>::has_grad(NodeId id) const {
  const Node& n = nodes_.at(id);
  if (n.param) return n.requires_grad;
  return !n.grad.empty();
}

template <typename T>
std::span<T> Tape<T>::grad(NodeId id) {
  Node& n = nodes_.at(id);
  if (n.param) {
    if (n.param->grad.shape() != n.param->value.shape()) {
      n.param->grad = Tensor<T>(n.param->value.shape());
    }
    return n.param->grad.data();
  }
  if (n.grad.empty()) n.grad.assign(n.owned.size(), T(0));
  return n.grad;
}

template <typename T>
void Tape<T>::backward(Var<T> loss) {
  if (&loss.tape() != this) throw Error("loss belongs to a different tape");
  if (loss.size() != 1) {
    throw ShapeError("backward needs a scalar loss, got shape " + to_string(loss.shape()));
  }
  if (!nodes_[loss.id()].requires_grad) {
    throw Error("loss is detached: it does not depend on any variable that requires gradients");
  }
  // Interior adjoints are recomputed from scratch on every call; only leaves
  // accumulate.
  for (Node& n : nodes_) {
    if (!n.leaf && !n.grad.empty()) std::fill(n.grad.begin(), n.grad.end(), T(0));
  }
  grad(loss.id())[0] += T(1);
  for (auto it = records_.rbegin(); it != records_.rend(); ++it) {
    if (it->output > loss.id()) continue;
    if (!has_grad(it->output)) continue;
    it->backward(*this, it->output);
  }
}

template <typename T>
void Tape<T>::zero_grad() {
  for (Node& n : nodes_) {
    if (n.param) {
      n.param->zero_grad();
    } else {
      std::fill(n.grad.begin(), n.grad.end(), T(0));
    }
  }
}

template class Tape<float>;
template class Tape<double>;

}  // namespace mformer
