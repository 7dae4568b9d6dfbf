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

// Forward kernels and their hand-written adjoints. Everything here is a pure
// function of its arguments; the tape in autograd.hpp wires them together.

#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "paenet/tensor.hpp"

namespace paenet {

/// Stride-1 convolution with zero "same" padding of (k-1)/2 per axis.
/// `kernel` holds 2 extents for conv2d and 3 for conv3d; all must be odd.
struct ConvSpec {
  std::vector<std::size_t> kernel;
  std::size_t in_channels = 0;
  std::size_t out_channels = 0;

  static ConvSpec cube(std::size_t k, std::size_t in, std::size_t out) { return {{k, k, k}, in, out}; }
  static ConvSpec square(std::size_t k, std::size_t in, std::size_t out) { return {{k, k}, in, out}; }

  Shape weight_shape() const;
  std::size_t fan_in() const;
  void validate() const;
};

enum class PoolMode { max, avg };
enum class Activation { relu, sigmoid };
enum class NormMode { train, eval };

/// Pass as `window` to pool over the whole axis.
inline constexpr std::size_t kFullWindow = 0;

// --- convolution -----------------------------------------------------------

template <typename T>
Tensor<T> conv3d(const Tensor<T>& input, const ConvSpec& spec, const Tensor<T>& weights, const Tensor<T>& bias);
template <typename T>
Tensor<T> conv2d(const Tensor<T>& input, const ConvSpec& spec, const Tensor<T>& weights, const Tensor<T>& bias);

/// Adjoint of conv2d/conv3d. Null outputs are skipped; gradients accumulate.
template <typename T>
void conv_backward(const Tensor<T>& input, const ConvSpec& spec, const Tensor<T>& weights, const Tensor<T>& grad_out,
                   Tensor<T>* grad_in, Tensor<T>* grad_w, Tensor<T>* grad_b);

// --- pooling and reductions ------------------------------------------------

template <typename T>
Tensor<T> pool_axis(const Tensor<T>& input, std::size_t axis, PoolMode mode, std::size_t window = kFullWindow);
template <typename T>
Tensor<T> pool_axis_backward(const Tensor<T>& input, const Tensor<T>& grad_out, std::size_t axis, PoolMode mode,
                             std::size_t window = kFullWindow);

/// Sum over one axis, keeping it with extent 1.
template <typename T>
Tensor<T> sum_axis(const Tensor<T>& input, std::size_t axis);

/// Averages every axis but the leading (channel) one down to extent 1.
template <typename T>
Tensor<T> global_avg_pool(const Tensor<T>& input);

// --- pointwise -------------------------------------------------------------

template <typename T>
Tensor<T> softmax_axis(const Tensor<T>& input, std::size_t axis);
template <typename T>
Tensor<T> softmax_axis_backward(const Tensor<T>& output, const Tensor<T>& grad_out, std::size_t axis);

template <typename T>
Tensor<T> activation(const Tensor<T>& input, Activation kind);
template <typename T>
Tensor<T> activation_backward(const Tensor<T>& input, const Tensor<T>& output, const Tensor<T>& grad_out,
                              Activation kind);

// --- normalization ---------------------------------------------------------

/// Per-channel normalization over every axis but the leading one.
/// Train mode normalizes with the biased batch statistics and folds them into
/// the running estimates with `momentum` (running variance uses the unbiased
/// estimate). Eval mode reads the running estimates only.
template <typename T>
Tensor<T> batch_norm(const Tensor<T>& input, const Tensor<T>& gamma, const Tensor<T>& beta, Tensor<T>& running_mean,
                     Tensor<T>& running_var, T eps, NormMode mode, T momentum = T(0.1));

template <typename T>
void batch_norm_backward(const Tensor<T>& input, const Tensor<T>& gamma, const Tensor<T>& running_mean,
                         const Tensor<T>& running_var, T eps, NormMode mode, const Tensor<T>& grad_out,
                         Tensor<T>* grad_in, Tensor<T>* grad_gamma, Tensor<T>* grad_beta);

/// Normalizes across the leading (channel) axis at every other position.
template <typename T>
Tensor<T> layer_norm(const Tensor<T>& input, const Tensor<T>& gamma, const Tensor<T>& beta, T eps);

template <typename T>
void layer_norm_backward(const Tensor<T>& input, const Tensor<T>& gamma, T eps, const Tensor<T>& grad_out,
                         Tensor<T>* grad_in, Tensor<T>* grad_gamma, Tensor<T>* grad_beta);

// --- layout ----------------------------------------------------------------

/// Output axis i takes input axis order[i].
template <typename T>
Tensor<T> permute_axes(const Tensor<T>& input, std::span<const std::size_t> order);
std::vector<std::size_t> inverse_permutation(std::span<const std::size_t> order);

/// Splits `axis` (extent G*P) into contiguous slabs h = g*P + p and moves the
/// group axis g to the front: (..., G*P, ...) -> (G, ..., P, ...).
template <typename T>
Tensor<T> regroup_axis(const Tensor<T>& input, std::size_t axis, std::size_t groups);
/// Inverse of regroup_axis; `axis` indexes the shape without the group axis.
template <typename T>
Tensor<T> merge_axis(const Tensor<T>& grouped, std::size_t axis);

template <typename T>
Tensor<T> concat_axis(std::span<const Tensor<T>> parts, std::size_t axis);
template <typename T>
Tensor<T> slice_axis(const Tensor<T>& input, std::size_t axis, std::size_t begin, std::size_t length);

/// Nearest-neighbour repeat of every entry along `axis`.
template <typename T>
Tensor<T> upsample_axis(const Tensor<T>& input, std::size_t axis, std::size_t factor);
template <typename T>
Tensor<T> upsample_axis_backward(const Tensor<T>& grad_out, std::size_t axis, std::size_t factor);

// --- algebra ---------------------------------------------------------------

template <typename T>
Tensor<T> matmul2d(const Tensor<T>& a, const Tensor<T>& b);
/// C += op(A) * op(B) for rank-2 tensors.
template <typename T>
void matmul_accumulate(const Tensor<T>& a, bool transpose_a, const Tensor<T>& b, bool transpose_b, Tensor<T>& out);

/// Shape both operands broadcast to; extents must match or be 1, ranks equal.
Shape broadcast_shape(const Shape& a, const Shape& b);

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b);
template <typename T>
Tensor<T> multiply(const Tensor<T>& a, const Tensor<T>& b);
template <typename T>
Tensor<T> scale(const Tensor<T>& a, T factor);

/// Sums `grad` down to `shape` over the axes that were broadcast.
template <typename T>
Tensor<T> reduce_to_shape(const Tensor<T>& grad, const Shape& shape);

/// dst += src, shapes equal.
template <typename T>
void accumulate(Tensor<T>& dst, const Tensor<T>& src);

}  // namespace paenet
