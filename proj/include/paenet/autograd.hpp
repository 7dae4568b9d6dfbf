/*
 * Copyright 2026 The paenet-cpp Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *    http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#pragma once

#include <cstddef>
#include <functional>
#include <initializer_list>
#include <optional>
#include <span>
#include <vector>

#include "paenet/kernels.hpp"
#include "paenet/tensor.hpp"

namespace paenet {

template <typename T>
class Tape;

/// Handle to a value recorded on a Tape. Cheap to copy; valid while the tape lives.
template <typename T>
struct Var {
  Tape<T>* tape = nullptr;
  std::size_t id = 0;

  const Tensor<T>& value() const { return tape->value(*this); }
  const Shape& shape() const { return value().shape(); }
};

/// Linear record of operations for one forward pass. Records are appended in
/// evaluation order, so reverse iteration is a valid topological order.
/// A non-recording tape only evaluates values (inference).
template <typename T>
class Tape {
 public:
  using Backward = std::function<void(Tape&, const Tensor<T>& grad_out)>;

  explicit Tape(bool recording = true) : recording_(recording) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  bool recording() const noexcept { return recording_; }
  std::size_t size() const noexcept { return nodes_.size(); }

  Var<T> leaf(Tensor<T> value, bool requires_grad = true);
  Var<T> constant(Tensor<T> value) { return leaf(std::move(value), false); }

  /// Appends an op result. `backward` receives dL/d(result) and must push
  /// gradients into its inputs via accumulate_grad().
  Var<T> record(Tensor<T> value, std::initializer_list<Var<T>> inputs, Backward backward);
  Var<T> record(Tensor<T> value, std::span<const Var<T>> inputs, Backward backward);

  const Tensor<T>& value(Var<T> v) const { return nodes_.at(v.id).value; }
  bool requires_grad(Var<T> v) const { return nodes_.at(v.id).requires_grad; }

  void accumulate_grad(Var<T> v, const Tensor<T>& g);
  void accumulate_grad(Var<T> v, Tensor<T>&& g);
  /// Zero-initialized gradient slot for in-place accumulation, or null when
  /// `v` does not need a gradient.
  Tensor<T>* grad_slot(Var<T> v);

  /// Reverse sweep from a single-element loss. Intermediate gradients are
  /// released as soon as they have been propagated.
  void backward(Var<T> loss);

  /// Gradient of the last backward() for a leaf; zeros when unreachable.
  Tensor<T> grad(Var<T> v) const;

 private:
  struct Node {
    Tensor<T> value;
    bool requires_grad = false;
    bool is_leaf = false;
    Backward backward;
  };

  bool recording_;
  std::vector<Node> nodes_;
  std::vector<std::optional<Tensor<T>>> grads_;
};

extern template class Tape<float>;
extern template class Tape<double>;

// Differentiable counterparts of the kernels. Each evaluates eagerly and, on a
// recording tape, registers its adjoint.

template <typename T>
Var<T> conv3d(Var<T> input, const ConvSpec& spec, Var<T> weights, Var<T> bias);
template <typename T>
Var<T> conv2d(Var<T> input, const ConvSpec& spec, Var<T> weights, Var<T> bias);

template <typename T>
Var<T> pool_axis(Var<T> input, std::size_t axis, PoolMode mode, std::size_t window = kFullWindow);
template <typename T>
Var<T> sum_axis(Var<T> input, std::size_t axis);
template <typename T>
Var<T> global_avg_pool(Var<T> input);
template <typename T>
Var<T> softmax_axis(Var<T> input, std::size_t axis);
template <typename T>
Var<T> activation(Var<T> input, Activation kind);
template <typename T>
Var<T> relu(Var<T> input) {
  return activation(input, Activation::relu);
}
template <typename T>
Var<T> sigmoid(Var<T> input) {
  return activation(input, Activation::sigmoid);
}

template <typename T>
Var<T> batch_norm(Var<T> input, Var<T> gamma, Var<T> beta, Tensor<T>& running_mean, Tensor<T>& running_var, T eps,
                  NormMode mode, T momentum = T(0.1));
template <typename T>
Var<T> layer_norm(Var<T> input, Var<T> gamma, Var<T> beta, T eps);

template <typename T>
Var<T> permute_axes(Var<T> input, std::span<const std::size_t> order);
template <typename T>
Var<T> regroup_axis(Var<T> input, std::size_t axis, std::size_t groups);
template <typename T>
Var<T> merge_axis(Var<T> grouped, std::size_t axis);
template <typename T>
Var<T> concat_axis(std::span<const Var<T>> parts, std::size_t axis);
template <typename T>
Var<T> slice_axis(Var<T> input, std::size_t axis, std::size_t begin, std::size_t length);
template <typename T>
Var<T> reshape(Var<T> input, Shape shape);
template <typename T>
Var<T> upsample_axis(Var<T> input, std::size_t axis, std::size_t factor);

template <typename T>
Var<T> matmul2d(Var<T> a, Var<T> b);
template <typename T>
Var<T> add(Var<T> a, Var<T> b);
template <typename T>
Var<T> multiply(Var<T> a, Var<T> b);
template <typename T>
Var<T> scale(Var<T> a, T factor);
/// Sum of all elements times the matching entries of a constant tensor.
template <typename T>
Var<T> weighted_sum(Var<T> a, const Tensor<T>& weights);
template <typename T>
Var<T> mean_all(Var<T> a);

template <typename T>
Var<T> operator+(Var<T> a, Var<T> b) {
  return add(a, b);
}
template <typename T>
Var<T> operator*(Var<T> a, Var<T> b) {
  return multiply(a, b);
}

}  // namespace paenet
