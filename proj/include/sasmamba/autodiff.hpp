// Copyright 2026 The SasMamba Authors. All Rights Reserved.
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

// Reverse-mode differentiation with explicit per-operation adjoints.
//
// A Var is a handle to a node holding a value and, when it requires a
// gradient, a lazily allocated accumulator. Operations whose inputs require a
// gradient append a node to the inputs' Tape together with a closure that
// pushes the node's gradient into its inputs. Vars without a tape are
// constants; operations over constants record nothing, which is the inference
// path.

#pragma once

#include <functional>
#include <memory>
#include <unordered_map>
#include <utility>
#include <vector>

#include "sasmamba/tensor.hpp"

namespace sasmamba {

template <typename Scalar>
class Tape;

template <typename Scalar>
struct Node {
  Tensor<Scalar> value;
  Tensor<Scalar> grad;
  bool requires_grad = false;
  std::function<void(const Tensor<Scalar>&)> backward;
};

template <typename Scalar>
class Var {
 public:
  Var() = default;

  static Var Constant(Tensor<Scalar> value) {
    Var v;
    v.node_ = std::make_shared<Node<Scalar>>();
    v.node_->value = std::move(value);
    return v;
  }

  bool defined() const { return node_ != nullptr; }
  const Tensor<Scalar>& value() const { return node_->value; }
  const Shape& shape() const { return node_->value.shape(); }
  Index dim(Index axis) const { return node_->value.dim(axis); }
  Index size() const { return node_->value.size(); }
  bool requires_grad() const { return node_ && node_->requires_grad; }
  Tape<Scalar>* tape() const { return tape_; }

  /// Accumulated gradient; zero-shaped when nothing flowed into this node.
  const Tensor<Scalar>& grad() const { return node_->grad; }

  /// Gradient buffer for adjoint closures, or nullptr when this input does not
  /// take part in differentiation.
  Tensor<Scalar>* grad_sink() const {
    if (!requires_grad()) return nullptr;
    if (node_->grad.empty()) node_->grad = Tensor<Scalar>(node_->value.shape());
    return &node_->grad;
  }

 private:
  friend class Tape<Scalar>;
  std::shared_ptr<Node<Scalar>> node_;
  Tape<Scalar>* tape_ = nullptr;
};

template <typename Scalar>
class Tape {
 public:
  using BackwardFn = std::function<void(const Tensor<Scalar>&)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// A differentiable input (parameter or probe).
  Var<Scalar> Leaf(Tensor<Scalar> value) {
    Var<Scalar> v;
    v.node_ = std::make_shared<Node<Scalar>>();
    v.node_->value = std::move(value);
    v.node_->requires_grad = true;
    v.tape_ = this;
    return v;
  }

  /// Records an operation result. `make_backward` is only invoked when some
  /// input requires a gradient, so ops may capture forward state lazily.
  template <typename MakeBackward>
  static Var<Scalar> Record(Tensor<Scalar> value,
                            std::initializer_list<const Var<Scalar>*> inputs,
                            MakeBackward&& make_backward) {
    Tape* tape = nullptr;
    bool needs_grad = false;
    for (const Var<Scalar>* in : inputs) {
      if (in == nullptr || !in->defined() || in->tape_ == nullptr) continue;
      if (tape != nullptr && tape != in->tape_) {
        Fail(ErrorKind::kValue, "operation mixes Vars from different tapes");
      }
      tape = in->tape_;
      needs_grad = needs_grad || in->requires_grad();
    }
    if (!needs_grad) return Var<Scalar>::Constant(std::move(value));
    Var<Scalar> out;
    out.node_ = std::make_shared<Node<Scalar>>();
    out.node_->value = std::move(value);
    out.node_->requires_grad = true;
    out.node_->backward = BackwardFn(make_backward());
    out.tape_ = tape;
    tape->nodes_.push_back(out.node_);
    return out;
  }

  /// Seeds d(root)/d(root) = 1 for a single-element root and runs every
  /// recorded adjoint in reverse order.
  void Backward(const Var<Scalar>& root) {
    if (root.size() != 1) {
      Fail(ErrorKind::kDimension,
           "backward root must be a scalar, got " + ShapeString(root.shape()));
    }
    if (!root.requires_grad()) return;
    Tensor<Scalar>* seed = root.grad_sink();
    (*seed)[0] += Scalar(1);
    for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
      Node<Scalar>& node = **it;
      if (node.grad.empty() || !node.backward) continue;
      node.backward(node.grad);
    }
  }

  std::size_t size() const { return nodes_.size(); }

 private:
  std::vector<std::shared_ptr<Node<Scalar>>> nodes_;
};

/// Maps parameter tensors to Vars. Without a tape every parameter becomes a
/// constant; with a tape each distinct tensor becomes one leaf whose gradient
/// can be read back after Tape::Backward.
template <typename Scalar>
class ParamBinder {
 public:
  ParamBinder() = default;
  explicit ParamBinder(Tape<Scalar>& tape) : tape_(&tape) {}

  Var<Scalar> operator()(const Tensor<Scalar>& param) {
    auto it = bound_.find(&param);
    if (it != bound_.end()) return it->second;
    Var<Scalar> v =
        tape_ ? tape_->Leaf(param) : Var<Scalar>::Constant(param);
    bound_.emplace(&param, v);
    return v;
  }

  /// Makes `param` resolve to an existing Var instead of a fresh leaf.
  void Attach(const Tensor<Scalar>& param, Var<Scalar> var) {
    bound_.insert_or_assign(&param, std::move(var));
  }

  bool differentiable() const { return tape_ != nullptr; }

  /// Gradient for a bound parameter; zeros when it received none.
  Tensor<Scalar> GradOf(const Tensor<Scalar>& param) const {
    auto it = bound_.find(&param);
    if (it == bound_.end() || it->second.grad().empty()) {
      return Tensor<Scalar>(param.shape());
    }
    return it->second.grad();
  }

 private:
  Tape<Scalar>* tape_ = nullptr;
  std::unordered_map<const Tensor<Scalar>*, Var<Scalar>> bound_;
};

}  // namespace sasmamba
