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

#include "paenet/kernels.hpp"

#include "conv_engine.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <numeric>

namespace paenet {


namespace {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MatMap = Eigen::Map<RowMat<T>, 0, Eigen::OuterStride<>>;
template <typename T>
using ConstMatMap = Eigen::Map<const RowMat<T>, 0, Eigen::OuterStride<>>;

struct AxisSplit {
  std::size_t outer = 1;
  std::size_t extent = 1;
  std::size_t inner = 1;
};

AxisSplit split_at(const Shape& shape, std::size_t axis) {
  AxisSplit s;
  for (std::size_t i = 0; i < axis; ++i) s.outer *= shape[i];
  s.extent = shape[axis];
  for (std::size_t i = axis + 1; i < shape.size(); ++i) s.inner *= shape[i];
  return s;
}

void require_axis(const Shape& shape, std::size_t axis, const char* op) {
  require(axis < shape.size(), std::string(op) + ": axis " + std::to_string(axis) + " out of range for shape " +
                                   to_string(shape));
}

using detail::ConvGeometry;

// conv2d runs through the 3D path with a trailing unit axis.
template <typename T>
ConvGeometry conv_geometry(const Tensor<T>& input, const ConvSpec& spec, const Tensor<T>& weights) {
  spec.validate();
  const std::size_t sr = spec.kernel.size();
  require(input.rank() == sr + 1, "conv: input rank " + std::to_string(input.rank()) + " does not match " +
                                      std::to_string(sr) + " spatial axes");
  require(input.extent(0) == spec.in_channels,
          "conv: input has " + std::to_string(input.extent(0)) + " channels, spec expects " +
              std::to_string(spec.in_channels));
  require(weights.shape() == spec.weight_shape(),
          "conv: weight shape " + to_string(weights.shape()) + " != " + to_string(spec.weight_shape()));
  ConvGeometry g;
  g.cin = spec.in_channels;
  g.cout = spec.out_channels;
  for (std::size_t i = 0; i < sr; ++i) {
    g.dims[i] = input.extent(i + 1);
    g.k[i] = spec.kernel[i];
    g.pad[i] = (spec.kernel[i] - 1) / 2;
  }
  return g;
}

template <typename T>
Tensor<T> conv_forward(const Tensor<T>& input, const ConvSpec& spec, const Tensor<T>& weights,
                       const Tensor<T>& bias) {
  const ConvGeometry g = conv_geometry(input, spec, weights);
  require(bias.size() == g.cout, "conv: bias length must equal out_channels");
  Shape out_shape = input.shape();
  out_shape[0] = g.cout;
  auto out = Tensor<T>::uninitialized(out_shape);
  const std::size_t n = g.voxels();
  if (!g.pointwise()) {
    detail::conv_padded(input.ptr(), weights.ptr(), bias.ptr(), g, out.ptr(), false);
    return out;
  }
  ConstMatMap<T> w(weights.ptr(), g.cout, g.cin, Eigen::OuterStride<>(g.cin));
  ConstMatMap<T> x(input.ptr(), g.cin, n, Eigen::OuterStride<>(n));
  MatMap<T> y(out.ptr(), g.cout, n, Eigen::OuterStride<>(n));
  y.noalias() = w * x;
  for (std::size_t co = 0; co < g.cout; ++co) {
    T* row = out.ptr() + co * n;
    const T b = bias[co];
    if (b != T(0))
      for (std::size_t i = 0; i < n; ++i) row[i] += b;
  }
  return out;
}

// Iterates out-shape positions together with offsets into two operands that
// may broadcast (extent 1). Adjacent axes with the same broadcast pattern are
// fused so the inner loop is as long as possible.
struct BroadcastPlan {
  std::vector<std::size_t> extents;
  std::vector<std::size_t> a_strides;
  std::vector<std::size_t> b_strides;
};

BroadcastPlan plan_broadcast(const Shape& out, const Shape& a, const Shape& b) {
  BroadcastPlan plan;
  const std::size_t rank = out.size();
  const Shape sa = row_major_strides(a);
  const Shape sb = row_major_strides(b);
  int prev_a = -1, prev_b = -1;
  for (std::size_t i = 0; i < rank; ++i) {
    if (out[i] == 1) continue;
    const int ba = a[i] == 1 ? 1 : 0;
    const int bb = b[i] == 1 ? 1 : 0;
    const std::size_t stride_a = ba ? 0 : sa[i];
    const std::size_t stride_b = bb ? 0 : sb[i];
    if (!plan.extents.empty() && ba == prev_a && bb == prev_b) {
      // Fuse with the previous axis; strides of the fused axis are the inner ones.
      plan.extents.back() *= out[i];
      plan.a_strides.back() = stride_a;
      plan.b_strides.back() = stride_b;
    } else {
      plan.extents.push_back(out[i]);
      plan.a_strides.push_back(stride_a);
      plan.b_strides.push_back(stride_b);
    }
    prev_a = ba;
    prev_b = bb;
  }
  if (plan.extents.empty()) {
    plan.extents.push_back(1);
    plan.a_strides.push_back(0);
    plan.b_strides.push_back(0);
  }
  return plan;
}

// fn(out_offset, a_offset, b_offset, count, a_step, b_step) over inner runs.
template <typename F>
void run_broadcast(const BroadcastPlan& plan, F&& fn) {
  const std::size_t rank = plan.extents.size();
  const std::size_t inner = plan.extents.back();
  const std::size_t as = plan.a_strides.back();
  const std::size_t bs = plan.b_strides.back();
  std::vector<std::size_t> idx(rank, 0);
  std::size_t outer = 1;
  for (std::size_t i = 0; i + 1 < rank; ++i) outer *= plan.extents[i];
  std::size_t out_off = 0;
  for (std::size_t o = 0; o < outer; ++o) {
    std::size_t ao = 0, bo = 0;
    for (std::size_t i = 0; i + 1 < rank; ++i) {
      ao += idx[i] * plan.a_strides[i];
      bo += idx[i] * plan.b_strides[i];
    }
    fn(out_off, ao, bo, inner, as, bs);
    out_off += inner;
    for (std::size_t i = rank - 1; i-- > 0;) {
      if (++idx[i] < plan.extents[i]) break;
      idx[i] = 0;
    }
  }
}

template <typename T, typename Op>
Tensor<T> binary(const Tensor<T>& a, const Tensor<T>& b, Op op) {
  if (a.shape() == b.shape()) {
    auto out = Tensor<T>::uninitialized(a.shape());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = op(a[i], b[i]);
    return out;
  }
  const Shape shape = broadcast_shape(a.shape(), b.shape());
  auto out = Tensor<T>::uninitialized(shape);
  const BroadcastPlan plan = plan_broadcast(shape, a.shape(), b.shape());
  const T* pa = a.ptr();
  const T* pb = b.ptr();
  T* po = out.ptr();
  run_broadcast(plan, [&](std::size_t o, std::size_t ao, std::size_t bo, std::size_t n, std::size_t as,
                          std::size_t bs) {
    for (std::size_t i = 0; i < n; ++i) po[o + i] = op(pa[ao + i * as], pb[bo + i * bs]);
  });
  return out;
}

template <typename T>
T stable_sigmoid(T x) {
  if (x >= T(0)) return T(1) / (T(1) + std::exp(-x));
  const T e = std::exp(x);
  return e / (T(1) + e);
}

}  // namespace

// --- ConvSpec ----------------------------------------------------------------

Shape ConvSpec::weight_shape() const {
  Shape s{out_channels, in_channels};
  s.insert(s.end(), kernel.begin(), kernel.end());
  return s;
}

std::size_t ConvSpec::fan_in() const {
  std::size_t f = in_channels;
  for (auto k : kernel) f *= k;
  return f;
}

void ConvSpec::validate() const {
  require(kernel.size() == 2 || kernel.size() == 3, "ConvSpec: kernel must have 2 or 3 extents");
  require(in_channels >= 1 && out_channels >= 1, "ConvSpec: channel counts must be >= 1");
  for (auto k : kernel) require(k % 2 == 1, "ConvSpec: kernel extents must be odd");
}

// --- convolution -----------------------------------------------------------

template <typename T>
Tensor<T> conv3d(const Tensor<T>& input, const ConvSpec& spec, const Tensor<T>& weights, const Tensor<T>& bias) {
  require(spec.kernel.size() == 3, "conv3d: kernel must have 3 extents");
  return conv_forward(input, spec, weights, bias);
}

template <typename T>
Tensor<T> conv2d(const Tensor<T>& input, const ConvSpec& spec, const Tensor<T>& weights, const Tensor<T>& bias) {
  require(spec.kernel.size() == 2, "conv2d: kernel must have 2 extents");
  return conv_forward(input, spec, weights, bias);
}

template <typename T>
void conv_backward(const Tensor<T>& input, const ConvSpec& spec, const Tensor<T>& weights, const Tensor<T>& grad_out,
                   Tensor<T>* grad_in, Tensor<T>* grad_w, Tensor<T>* grad_b) {
  const ConvGeometry g = conv_geometry(input, spec, weights);
  const std::size_t n = g.voxels();
  require(grad_out.size() == g.cout * n, "conv_backward: grad_out shape mismatch");

  if (grad_b) {
    for (std::size_t co = 0; co < g.cout; ++co) {
      const T* gy = grad_out.ptr() + co * n;
      T s = T(0);
      for (std::size_t i = 0; i < n; ++i) s += gy[i];
      (*grad_b)[co] += s;
    }
  }
  if (!grad_in && !grad_w) return;

  if (g.pointwise()) {
    ConstMatMap<T> w(weights.ptr(), g.cout, g.cin, Eigen::OuterStride<>(g.cin));
    ConstMatMap<T> gy(grad_out.ptr(), g.cout, n, Eigen::OuterStride<>(n));
    if (grad_w) {
      ConstMatMap<T> x(input.ptr(), g.cin, n, Eigen::OuterStride<>(n));
      MatMap<T> gw(grad_w->ptr(), g.cout, g.cin, Eigen::OuterStride<>(g.cin));
      gw.noalias() += gy * x.transpose();
    }
    if (grad_in) {
      MatMap<T> gx(grad_in->ptr(), g.cin, n, Eigen::OuterStride<>(n));
      gx.noalias() += w.transpose() * gy;
    }
    return;
  }
  if (grad_w) detail::conv_weight_grad(input.ptr(), grad_out.ptr(), g, grad_w->ptr());
  if (grad_in) {
    // The input gradient of a same-padded stride-1 convolution is itself a
    // same-padded convolution of grad_out with the spatially flipped,
    // channel-transposed kernel.
    const std::size_t taps = g.taps();
    std::vector<T> flipped(weights.size());
    for (std::size_t co = 0; co < g.cout; ++co)
      for (std::size_t ci = 0; ci < g.cin; ++ci) {
        const T* src = weights.ptr() + (co * g.cin + ci) * taps;
        T* dst = flipped.data() + (ci * g.cout + co) * taps;
        for (std::size_t t = 0; t < taps; ++t) dst[t] = src[taps - 1 - t];
      }
    ConvGeometry gt = g;
    std::swap(gt.cin, gt.cout);
    detail::conv_padded(grad_out.ptr(), flipped.data(), static_cast<const T*>(nullptr), gt, grad_in->ptr(), true);
  }
}

// --- pooling and reductions ------------------------------------------------

template <typename T>
Tensor<T> pool_axis(const Tensor<T>& input, std::size_t axis, PoolMode mode, std::size_t window) {
  require_axis(input.shape(), axis, "pool_axis");
  const AxisSplit s = split_at(input.shape(), axis);
  const std::size_t win = window == kFullWindow ? s.extent : window;
  require(win >= 1 && s.extent % win == 0, "pool_axis: window " + std::to_string(win) +
                                               " does not divide extent " + std::to_string(s.extent));
  const std::size_t out_extent = s.extent / win;
  Shape out_shape = input.shape();
  out_shape[axis] = out_extent;
  auto out = Tensor<T>::uninitialized(out_shape);
  const T* x = input.ptr();
  T* y = out.ptr();
  for (std::size_t o = 0; o < s.outer; ++o)
    for (std::size_t e = 0; e < out_extent; ++e) {
      T* dst = y + (o * out_extent + e) * s.inner;
      const T* src = x + (o * s.extent + e * win) * s.inner;
      std::copy(src, src + s.inner, dst);
      for (std::size_t w = 1; w < win; ++w) {
        const T* row = src + w * s.inner;
        if (mode == PoolMode::max) {
          for (std::size_t i = 0; i < s.inner; ++i) dst[i] = std::max(dst[i], row[i]);
        } else {
          for (std::size_t i = 0; i < s.inner; ++i) dst[i] += row[i];
        }
      }
      if (mode == PoolMode::avg) {
        const T inv = T(1) / static_cast<T>(win);
        for (std::size_t i = 0; i < s.inner; ++i) dst[i] *= inv;
      }
    }
  return out;
}

template <typename T>
Tensor<T> pool_axis_backward(const Tensor<T>& input, const Tensor<T>& grad_out, std::size_t axis, PoolMode mode,
                             std::size_t window) {
  require_axis(input.shape(), axis, "pool_axis_backward");
  const AxisSplit s = split_at(input.shape(), axis);
  const std::size_t win = window == kFullWindow ? s.extent : window;
  const std::size_t out_extent = s.extent / win;
  Tensor<T> gx(input.shape());
  const T* x = input.ptr();
  const T* gy = grad_out.ptr();
  T* g = gx.ptr();
  for (std::size_t o = 0; o < s.outer; ++o)
    for (std::size_t e = 0; e < out_extent; ++e) {
      const T* gsrc = gy + (o * out_extent + e) * s.inner;
      const std::size_t base = (o * s.extent + e * win) * s.inner;
      if (mode == PoolMode::avg) {
        const T inv = T(1) / static_cast<T>(win);
        for (std::size_t w = 0; w < win; ++w)
          for (std::size_t i = 0; i < s.inner; ++i) g[base + w * s.inner + i] += gsrc[i] * inv;
      } else {
        // Ties route the gradient to the first maximal entry.
        for (std::size_t i = 0; i < s.inner; ++i) {
          std::size_t best = 0;
          T bv = x[base + i];
          for (std::size_t w = 1; w < win; ++w) {
            const T v = x[base + w * s.inner + i];
            if (v > bv) {
              bv = v;
              best = w;
            }
          }
          g[base + best * s.inner + i] += gsrc[i];
        }
      }
    }
  return gx;
}

template <typename T>
Tensor<T> sum_axis(const Tensor<T>& input, std::size_t axis) {
  require_axis(input.shape(), axis, "sum_axis");
  const AxisSplit s = split_at(input.shape(), axis);
  Shape out_shape = input.shape();
  out_shape[axis] = 1;
  Tensor<T> out(out_shape);
  const T* x = input.ptr();
  T* y = out.ptr();
  for (std::size_t o = 0; o < s.outer; ++o) {
    T* dst = y + o * s.inner;
    for (std::size_t e = 0; e < s.extent; ++e) {
      const T* src = x + (o * s.extent + e) * s.inner;
      for (std::size_t i = 0; i < s.inner; ++i) dst[i] += src[i];
    }
  }
  return out;
}

template <typename T>
Tensor<T> global_avg_pool(const Tensor<T>& input) {
  require(input.rank() >= 2, "global_avg_pool: rank must be >= 2");
  const std::size_t c = input.extent(0);
  const std::size_t n = input.size() / c;
  Shape out_shape(input.rank(), 1);
  out_shape[0] = c;
  Tensor<T> out(out_shape);
  for (std::size_t ch = 0; ch < c; ++ch) {
    const T* x = input.ptr() + ch * n;
    T s = T(0);
    for (std::size_t i = 0; i < n; ++i) s += x[i];
    out[ch] = s / static_cast<T>(n);
  }
  return out;
}

// --- pointwise -------------------------------------------------------------

template <typename T>
Tensor<T> softmax_axis(const Tensor<T>& input, std::size_t axis) {
  require_axis(input.shape(), axis, "softmax_axis");
  const AxisSplit s = split_at(input.shape(), axis);
  auto out = Tensor<T>::uninitialized(input.shape());
  const T* x = input.ptr();
  T* y = out.ptr();
  std::vector<T> mx(s.inner), sum(s.inner);
  for (std::size_t o = 0; o < s.outer; ++o) {
    const std::size_t base = o * s.extent * s.inner;
    std::fill(mx.begin(), mx.end(), -std::numeric_limits<T>::infinity());
    std::fill(sum.begin(), sum.end(), T(0));
    for (std::size_t e = 0; e < s.extent; ++e)
      for (std::size_t i = 0; i < s.inner; ++i) mx[i] = std::max(mx[i], x[base + e * s.inner + i]);
    for (std::size_t e = 0; e < s.extent; ++e)
      for (std::size_t i = 0; i < s.inner; ++i) {
        const std::size_t k = base + e * s.inner + i;
        y[k] = std::exp(x[k] - mx[i]);
        sum[i] += y[k];
      }
    for (std::size_t e = 0; e < s.extent; ++e)
      for (std::size_t i = 0; i < s.inner; ++i) y[base + e * s.inner + i] /= sum[i];
  }
  return out;
}

template <typename T>
Tensor<T> softmax_axis_backward(const Tensor<T>& output, const Tensor<T>& grad_out, std::size_t axis) {
  const AxisSplit s = split_at(output.shape(), axis);
  auto gx = Tensor<T>::uninitialized(output.shape());
  const T* y = output.ptr();
  const T* gy = grad_out.ptr();
  T* g = gx.ptr();
  std::vector<T> dot(s.inner);
  for (std::size_t o = 0; o < s.outer; ++o) {
    const std::size_t base = o * s.extent * s.inner;
    std::fill(dot.begin(), dot.end(), T(0));
    for (std::size_t e = 0; e < s.extent; ++e)
      for (std::size_t i = 0; i < s.inner; ++i) {
        const std::size_t k = base + e * s.inner + i;
        dot[i] += y[k] * gy[k];
      }
    for (std::size_t e = 0; e < s.extent; ++e)
      for (std::size_t i = 0; i < s.inner; ++i) {
        const std::size_t k = base + e * s.inner + i;
        g[k] = y[k] * (gy[k] - dot[i]);
      }
  }
  return gx;
}

template <typename T>
Tensor<T> activation(const Tensor<T>& input, Activation kind) {
  auto out = Tensor<T>::uninitialized(input.shape());
  const T* x = input.ptr();
  T* y = out.ptr();
  const std::size_t n = input.size();
  if (kind == Activation::relu) {
    for (std::size_t i = 0; i < n; ++i) y[i] = x[i] > T(0) ? x[i] : T(0);
  } else {
    for (std::size_t i = 0; i < n; ++i) y[i] = stable_sigmoid(x[i]);
  }
  return out;
}

template <typename T>
Tensor<T> activation_backward(const Tensor<T>& input, const Tensor<T>& output, const Tensor<T>& grad_out,
                              Activation kind) {
  auto gx = Tensor<T>::uninitialized(input.shape());
  const std::size_t n = input.size();
  if (kind == Activation::relu) {
    for (std::size_t i = 0; i < n; ++i) gx[i] = input[i] > T(0) ? grad_out[i] : T(0);
  } else {
    for (std::size_t i = 0; i < n; ++i) gx[i] = grad_out[i] * output[i] * (T(1) - output[i]);
  }
  return gx;
}

// --- normalization ---------------------------------------------------------

namespace {

template <typename T>
void channel_moments(const Tensor<T>& input, std::vector<T>& mean, std::vector<T>& var) {
  const std::size_t c = input.extent(0);
  const std::size_t n = input.size() / c;
  mean.assign(c, T(0));
  var.assign(c, T(0));
  for (std::size_t ch = 0; ch < c; ++ch) {
    const T* x = input.ptr() + ch * n;
    T s = T(0);
    for (std::size_t i = 0; i < n; ++i) s += x[i];
    const T m = s / static_cast<T>(n);
    T v = T(0);
    for (std::size_t i = 0; i < n; ++i) v += (x[i] - m) * (x[i] - m);
    mean[ch] = m;
    var[ch] = v / static_cast<T>(n);
  }
}

template <typename T>
void check_norm_params(const Tensor<T>& input, const Tensor<T>& gamma, const Tensor<T>& beta, T eps,
                       const char* op) {
  require(input.rank() >= 1, std::string(op) + ": rank must be >= 1");
  const std::size_t c = input.extent(0);
  require(gamma.size() == c && beta.size() == c, std::string(op) + ": gamma/beta length must equal channels");
  require(eps >= T(0), std::string(op) + ": eps must be non-negative");
}

}  // namespace

template <typename T>
Tensor<T> batch_norm(const Tensor<T>& input, const Tensor<T>& gamma, const Tensor<T>& beta, Tensor<T>& running_mean,
                     Tensor<T>& running_var, T eps, NormMode mode, T momentum) {
  check_norm_params(input, gamma, beta, eps, "batch_norm");
  const std::size_t c = input.extent(0);
  const std::size_t n = input.size() / c;
  require(running_mean.size() == c && running_var.size() == c, "batch_norm: running stats length must equal channels");
  std::vector<T> mean, var;
  if (mode == NormMode::train) {
    channel_moments(input, mean, var);
    const T unbias = n > 1 ? static_cast<T>(n) / static_cast<T>(n - 1) : T(1);
    for (std::size_t ch = 0; ch < c; ++ch) {
      running_mean[ch] = (T(1) - momentum) * running_mean[ch] + momentum * mean[ch];
      running_var[ch] = (T(1) - momentum) * running_var[ch] + momentum * var[ch] * unbias;
    }
  } else {
    mean.assign(running_mean.data().begin(), running_mean.data().end());
    var.assign(running_var.data().begin(), running_var.data().end());
    for (auto v : var) require(v >= T(0), "batch_norm: variance must be non-negative");
  }
  auto out = Tensor<T>::uninitialized(input.shape());
  for (std::size_t ch = 0; ch < c; ++ch) {
    const T* x = input.ptr() + ch * n;
    T* y = out.ptr() + ch * n;
    const T inv = T(1) / std::sqrt(var[ch] + eps);
    const T a = gamma[ch] * inv;
    const T b = beta[ch] - mean[ch] * a;
    for (std::size_t i = 0; i < n; ++i) y[i] = x[i] * a + b;
  }
  return out;
}

template <typename T>
void batch_norm_backward(const Tensor<T>& input, const Tensor<T>& gamma, const Tensor<T>& running_mean,
                         const Tensor<T>& running_var, T eps, NormMode mode, const Tensor<T>& grad_out,
                         Tensor<T>* grad_in, Tensor<T>* grad_gamma, Tensor<T>* grad_beta) {
  const std::size_t c = input.extent(0);
  const std::size_t n = input.size() / c;
  std::vector<T> mean, var;
  if (mode == NormMode::train) {
    channel_moments(input, mean, var);
  } else {
    mean.assign(running_mean.data().begin(), running_mean.data().end());
    var.assign(running_var.data().begin(), running_var.data().end());
  }
  for (std::size_t ch = 0; ch < c; ++ch) {
    const T* x = input.ptr() + ch * n;
    const T* gy = grad_out.ptr() + ch * n;
    const T inv = T(1) / std::sqrt(var[ch] + eps);
    T sum_gy = T(0), sum_gy_xhat = T(0);
    for (std::size_t i = 0; i < n; ++i) {
      const T xhat = (x[i] - mean[ch]) * inv;
      sum_gy += gy[i];
      sum_gy_xhat += gy[i] * xhat;
    }
    if (grad_gamma) (*grad_gamma)[ch] += sum_gy_xhat;
    if (grad_beta) (*grad_beta)[ch] += sum_gy;
    if (!grad_in) continue;
    T* gx = grad_in->ptr() + ch * n;
    const T a = gamma[ch] * inv;
    if (mode == NormMode::eval) {
      for (std::size_t i = 0; i < n; ++i) gx[i] += a * gy[i];
    } else {
      const T mean_gy = sum_gy / static_cast<T>(n);
      const T mean_gy_xhat = sum_gy_xhat / static_cast<T>(n);
      for (std::size_t i = 0; i < n; ++i) {
        const T xhat = (x[i] - mean[ch]) * inv;
        gx[i] += a * (gy[i] - mean_gy - xhat * mean_gy_xhat);
      }
    }
  }
}

template <typename T>
Tensor<T> layer_norm(const Tensor<T>& input, const Tensor<T>& gamma, const Tensor<T>& beta, T eps) {
  check_norm_params(input, gamma, beta, eps, "layer_norm");
  const std::size_t c = input.extent(0);
  const std::size_t n = input.size() / c;
  auto out = Tensor<T>::uninitialized(input.shape());
  for (std::size_t p = 0; p < n; ++p) {
    T m = T(0);
    for (std::size_t ch = 0; ch < c; ++ch) m += input[ch * n + p];
    m /= static_cast<T>(c);
    T v = T(0);
    for (std::size_t ch = 0; ch < c; ++ch) v += (input[ch * n + p] - m) * (input[ch * n + p] - m);
    v /= static_cast<T>(c);
    // Zero variance at eps = 0 collapses the normalized value to 0.
    const T denom = std::sqrt(v + eps);
    const T inv = denom > T(0) ? T(1) / denom : T(0);
    for (std::size_t ch = 0; ch < c; ++ch) out[ch * n + p] = (input[ch * n + p] - m) * inv * gamma[ch] + beta[ch];
  }
  return out;
}

template <typename T>
void layer_norm_backward(const Tensor<T>& input, const Tensor<T>& gamma, T eps, const Tensor<T>& grad_out,
                         Tensor<T>* grad_in, Tensor<T>* grad_gamma, Tensor<T>* grad_beta) {
  const std::size_t c = input.extent(0);
  const std::size_t n = input.size() / c;
  std::vector<T> xhat(c), g(c);
  for (std::size_t p = 0; p < n; ++p) {
    T m = T(0);
    for (std::size_t ch = 0; ch < c; ++ch) m += input[ch * n + p];
    m /= static_cast<T>(c);
    T v = T(0);
    for (std::size_t ch = 0; ch < c; ++ch) v += (input[ch * n + p] - m) * (input[ch * n + p] - m);
    v /= static_cast<T>(c);
    const T denom = std::sqrt(v + eps);
    const T inv = denom > T(0) ? T(1) / denom : T(0);
    T mean_g = T(0), mean_g_xhat = T(0);
    for (std::size_t ch = 0; ch < c; ++ch) {
      const T gy = grad_out[ch * n + p];
      xhat[ch] = (input[ch * n + p] - m) * inv;
      if (grad_gamma) (*grad_gamma)[ch] += gy * xhat[ch];
      if (grad_beta) (*grad_beta)[ch] += gy;
      g[ch] = gy * gamma[ch];
      mean_g += g[ch];
      mean_g_xhat += g[ch] * xhat[ch];
    }
    if (!grad_in) continue;
    mean_g /= static_cast<T>(c);
    mean_g_xhat /= static_cast<T>(c);
    for (std::size_t ch = 0; ch < c; ++ch) (*grad_in)[ch * n + p] += inv * (g[ch] - mean_g - xhat[ch] * mean_g_xhat);
  }
}

// --- layout ----------------------------------------------------------------

std::vector<std::size_t> inverse_permutation(std::span<const std::size_t> order) {
  std::vector<std::size_t> inv(order.size());
  for (std::size_t i = 0; i < order.size(); ++i) inv.at(order[i]) = i;
  return inv;
}

template <typename T>
Tensor<T> permute_axes(const Tensor<T>& input, std::span<const std::size_t> order) {
  const std::size_t rank = input.rank();
  require(order.size() == rank, "permute_axes: order length must equal rank");
  std::vector<bool> seen(rank, false);
  for (auto a : order) {
    require(a < rank && !seen[a], "permute_axes: order is not a permutation");
    seen[a] = true;
  }
  Shape out_shape(rank);
  for (std::size_t i = 0; i < rank; ++i) out_shape[i] = input.extent(order[i]);
  auto out = Tensor<T>::uninitialized(out_shape);
  const Shape in_strides = row_major_strides(input.shape());
  std::vector<std::size_t> src_strides(rank);
  for (std::size_t i = 0; i < rank; ++i) src_strides[i] = in_strides[order[i]];

  // Walk the output in order; the innermost output axis reads with a fixed stride.
  const std::size_t inner = out_shape[rank - 1];
  const std::size_t inner_stride = src_strides[rank - 1];
  const std::size_t outer = out.size() / inner;
  std::vector<std::size_t> idx(rank, 0);
  const T* x = input.ptr();
  T* y = out.ptr();
  for (std::size_t o = 0; o < outer; ++o) {
    std::size_t src = 0;
    for (std::size_t i = 0; i + 1 < rank; ++i) src += idx[i] * src_strides[i];
    T* dst = y + o * inner;
    for (std::size_t k = 0; k < inner; ++k) dst[k] = x[src + k * inner_stride];
    for (std::size_t i = rank - 1; i-- > 0;) {
      if (++idx[i] < out_shape[i]) break;
      idx[i] = 0;
    }
  }
  return out;
}

template <typename T>
Tensor<T> regroup_axis(const Tensor<T>& input, std::size_t axis, std::size_t groups) {
  require_axis(input.shape(), axis, "regroup_axis");
  require(input.rank() < kMaxRank, "regroup_axis: result would exceed the maximum rank");
  const std::size_t extent = input.extent(axis);
  require(groups >= 1 && extent % groups == 0, "regroup_axis: " + std::to_string(groups) +
                                                   " groups do not divide extent " + std::to_string(extent));
  const std::size_t slab = extent / groups;
  // (outer, G, P, inner) -> (G, outer, P, inner)
  const AxisSplit s = split_at(input.shape(), axis);
  Shape out_shape;
  out_shape.push_back(groups);
  for (std::size_t i = 0; i < input.rank(); ++i) out_shape.push_back(i == axis ? slab : input.extent(i));
  auto out = Tensor<T>::uninitialized(out_shape);
  const std::size_t run = slab * s.inner;
  for (std::size_t g = 0; g < groups; ++g)
    for (std::size_t o = 0; o < s.outer; ++o) {
      const T* src = input.ptr() + (o * extent + g * slab) * s.inner;
      T* dst = out.ptr() + (g * s.outer + o) * run;
      std::copy(src, src + run, dst);
    }
  return out;
}

template <typename T>
Tensor<T> merge_axis(const Tensor<T>& grouped, std::size_t axis) {
  require(grouped.rank() >= 2, "merge_axis: grouped tensor needs a leading group axis");
  require(axis + 1 < grouped.rank(), "merge_axis: axis out of range");
  const std::size_t groups = grouped.extent(0);
  Shape inner_shape(grouped.shape().begin() + 1, grouped.shape().end());
  const AxisSplit s = split_at(inner_shape, axis);
  const std::size_t slab = s.extent;
  Shape out_shape = inner_shape;
  out_shape[axis] = groups * slab;
  auto out = Tensor<T>::uninitialized(out_shape);
  const std::size_t run = slab * s.inner;
  const std::size_t extent = groups * slab;
  for (std::size_t g = 0; g < groups; ++g)
    for (std::size_t o = 0; o < s.outer; ++o) {
      const T* src = grouped.ptr() + (g * s.outer + o) * run;
      T* dst = out.ptr() + (o * extent + g * slab) * s.inner;
      std::copy(src, src + run, dst);
    }
  return out;
}

template <typename T>
Tensor<T> concat_axis(std::span<const Tensor<T>> parts, std::size_t axis) {
  require(!parts.empty(), "concat_axis: need at least one part");
  const Shape& first = parts[0].shape();
  require_axis(first, axis, "concat_axis");
  std::size_t total = 0;
  for (const auto& p : parts) {
    require(p.rank() == first.size(), "concat_axis: rank mismatch");
    for (std::size_t i = 0; i < first.size(); ++i)
      require(i == axis || p.extent(i) == first[i],
              "concat_axis: extent mismatch " + to_string(p.shape()) + " vs " + to_string(first));
    total += p.extent(axis);
  }
  Shape out_shape = first;
  out_shape[axis] = total;
  auto out = Tensor<T>::uninitialized(out_shape);
  const AxisSplit so = split_at(out_shape, axis);
  std::size_t offset = 0;
  for (const auto& p : parts) {
    const std::size_t run = p.extent(axis) * so.inner;
    for (std::size_t o = 0; o < so.outer; ++o) {
      const T* src = p.ptr() + o * run;
      T* dst = out.ptr() + (o * total + offset) * so.inner;
      std::copy(src, src + run, dst);
    }
    offset += p.extent(axis);
  }
  return out;
}

template <typename T>
Tensor<T> slice_axis(const Tensor<T>& input, std::size_t axis, std::size_t begin, std::size_t length) {
  require_axis(input.shape(), axis, "slice_axis");
  require(length >= 1 && begin + length <= input.extent(axis), "slice_axis: range out of bounds");
  const AxisSplit s = split_at(input.shape(), axis);
  Shape out_shape = input.shape();
  out_shape[axis] = length;
  auto out = Tensor<T>::uninitialized(out_shape);
  const std::size_t run = length * s.inner;
  for (std::size_t o = 0; o < s.outer; ++o) {
    const T* src = input.ptr() + (o * s.extent + begin) * s.inner;
    std::copy(src, src + run, out.ptr() + o * run);
  }
  return out;
}

template <typename T>
Tensor<T> upsample_axis(const Tensor<T>& input, std::size_t axis, std::size_t factor) {
  require_axis(input.shape(), axis, "upsample_axis");
  require(factor >= 1, "upsample_axis: factor must be >= 1");
  const AxisSplit s = split_at(input.shape(), axis);
  Shape out_shape = input.shape();
  out_shape[axis] *= factor;
  auto out = Tensor<T>::uninitialized(out_shape);
  for (std::size_t o = 0; o < s.outer; ++o)
    for (std::size_t e = 0; e < s.extent; ++e) {
      const T* src = input.ptr() + (o * s.extent + e) * s.inner;
      for (std::size_t f = 0; f < factor; ++f)
        std::copy(src, src + s.inner, out.ptr() + ((o * s.extent + e) * factor + f) * s.inner);
    }
  return out;
}

template <typename T>
Tensor<T> upsample_axis_backward(const Tensor<T>& grad_out, std::size_t axis, std::size_t factor) {
  const AxisSplit s = split_at(grad_out.shape(), axis);
  const std::size_t extent = s.extent / factor;
  Shape in_shape = grad_out.shape();
  in_shape[axis] = extent;
  Tensor<T> gx(in_shape);
  for (std::size_t o = 0; o < s.outer; ++o)
    for (std::size_t e = 0; e < extent; ++e) {
      T* dst = gx.ptr() + (o * extent + e) * s.inner;
      for (std::size_t f = 0; f < factor; ++f) {
        const T* src = grad_out.ptr() + ((o * extent + e) * factor + f) * s.inner;
        for (std::size_t i = 0; i < s.inner; ++i) dst[i] += src[i];
      }
    }
  return gx;
}

// --- algebra ---------------------------------------------------------------

template <typename T>
Tensor<T> matmul2d(const Tensor<T>& a, const Tensor<T>& b) {
  require(a.rank() == 2 && b.rank() == 2, "matmul2d: operands must be rank 2");
  require(a.extent(1) == b.extent(0), "matmul2d: inner extents differ " + to_string(a.shape()) + " x " +
                                          to_string(b.shape()));
  Tensor<T> out(Shape{a.extent(0), b.extent(1)});
  matmul_accumulate(a, false, b, false, out);
  return out;
}

template <typename T>
void matmul_accumulate(const Tensor<T>& a, bool transpose_a, const Tensor<T>& b, bool transpose_b, Tensor<T>& out) {
  ConstMatMap<T> ma(a.ptr(), a.extent(0), a.extent(1), Eigen::OuterStride<>(a.extent(1)));
  ConstMatMap<T> mb(b.ptr(), b.extent(0), b.extent(1), Eigen::OuterStride<>(b.extent(1)));
  MatMap<T> mo(out.ptr(), out.extent(0), out.extent(1), Eigen::OuterStride<>(out.extent(1)));
  if (transpose_a && transpose_b)
    mo.noalias() += ma.transpose() * mb.transpose();
  else if (transpose_a)
    mo.noalias() += ma.transpose() * mb;
  else if (transpose_b)
    mo.noalias() += ma * mb.transpose();
  else
    mo.noalias() += ma * mb;
}

Shape broadcast_shape(const Shape& a, const Shape& b) {
  require(a.size() == b.size(), "broadcast: rank mismatch " + to_string(a) + " vs " + to_string(b));
  Shape out(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    require(a[i] == b[i] || a[i] == 1 || b[i] == 1,
            "broadcast: incompatible shapes " + to_string(a) + " vs " + to_string(b));
    out[i] = std::max(a[i], b[i]);
  }
  return out;
}

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  return binary(a, b, [](T x, T y) { return x + y; });
}

template <typename T>
Tensor<T> multiply(const Tensor<T>& a, const Tensor<T>& b) {
  return binary(a, b, [](T x, T y) { return x * y; });
}

template <typename T>
Tensor<T> scale(const Tensor<T>& a, T factor) {
  auto out = Tensor<T>::uninitialized(a.shape());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] * factor;
  return out;
}

template <typename T>
Tensor<T> reduce_to_shape(const Tensor<T>& grad, const Shape& shape) {
  if (grad.shape() == shape) return grad;
  require(broadcast_shape(grad.shape(), shape) == grad.shape(), "reduce_to_shape: target does not broadcast");
  Tensor<T> out(shape);
  const BroadcastPlan plan = plan_broadcast(grad.shape(), grad.shape(), shape);
  const T* g = grad.ptr();
  T* po = out.ptr();
  run_broadcast(plan, [&](std::size_t o, std::size_t, std::size_t bo, std::size_t n, std::size_t, std::size_t bs) {
    if (bs == 0) {
      T s = T(0);
      for (std::size_t i = 0; i < n; ++i) s += g[o + i];
      po[bo] += s;
    } else {
      for (std::size_t i = 0; i < n; ++i) po[bo + i * bs] += g[o + i];
    }
  });
  return out;
}

template <typename T>
void accumulate(Tensor<T>& dst, const Tensor<T>& src) {
  require(dst.shape() == src.shape(), "accumulate: shape mismatch " + to_string(dst.shape()) + " vs " +
                                          to_string(src.shape()));
  T* d = dst.ptr();
  const T* s = src.ptr();
  for (std::size_t i = 0; i < dst.size(); ++i) d[i] += s[i];
}

#define PAENET_INSTANTIATE_KERNELS(T)                                                                            \
  template Tensor<T> conv3d(const Tensor<T>&, const ConvSpec&, const Tensor<T>&, const Tensor<T>&);             \
  template Tensor<T> conv2d(const Tensor<T>&, const ConvSpec&, const Tensor<T>&, const Tensor<T>&);             \
  template void conv_backward(const Tensor<T>&, const ConvSpec&, const Tensor<T>&, const Tensor<T>&, Tensor<T>*, \
                              Tensor<T>*, Tensor<T>*);                                                          \
  template Tensor<T> pool_axis(const Tensor<T>&, std::size_t, PoolMode, std::size_t);                           \
  template Tensor<T> pool_axis_backward(const Tensor<T>&, const Tensor<T>&, std::size_t, PoolMode, std::size_t); \
  template Tensor<T> sum_axis(const Tensor<T>&, std::size_t);                                                   \
  template Tensor<T> global_avg_pool(const Tensor<T>&);                                                         \
  template Tensor<T> softmax_axis(const Tensor<T>&, std::size_t);                                               \
  template Tensor<T> softmax_axis_backward(const Tensor<T>&, const Tensor<T>&, std::size_t);                    \
  template Tensor<T> activation(const Tensor<T>&, Activation);                                                  \
  template Tensor<T> activation_backward(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, Activation);     \
  template Tensor<T> batch_norm(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, Tensor<T>&, Tensor<T>&, T, \
                                NormMode, T);                                                                   \
  template void batch_norm_backward(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, T,   \
                                    NormMode, const Tensor<T>&, Tensor<T>*, Tensor<T>*, Tensor<T>*);            \
  template Tensor<T> layer_norm(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, T);                       \
  template void layer_norm_backward(const Tensor<T>&, const Tensor<T>&, T, const Tensor<T>&, Tensor<T>*,         \
                                    Tensor<T>*, Tensor<T>*);                                                    \
  template Tensor<T> permute_axes(const Tensor<T>&, std::span<const std::size_t>);                              \
  template Tensor<T> regroup_axis(const Tensor<T>&, std::size_t, std::size_t);                                  \
  template Tensor<T> merge_axis(const Tensor<T>&, std::size_t);                                                 \
  template Tensor<T> concat_axis(std::span<const Tensor<T>>, std::size_t);                                      \
  template Tensor<T> slice_axis(const Tensor<T>&, std::size_t, std::size_t, std::size_t);                       \
  template Tensor<T> upsample_axis(const Tensor<T>&, std::size_t, std::size_t);                                 \
  template Tensor<T> upsample_axis_backward(const Tensor<T>&, std::size_t, std::size_t);                        \
  template Tensor<T> matmul2d(const Tensor<T>&, const Tensor<T>&);                                              \
  template void matmul_accumulate(const Tensor<T>&, bool, const Tensor<T>&, bool, Tensor<T>&);                  \
  template Tensor<T> add(const Tensor<T>&, const Tensor<T>&);                                                   \
  template Tensor<T> multiply(const Tensor<T>&, const Tensor<T>&);                                              \
  template Tensor<T> scale(const Tensor<T>&, T);                                                                \
  template Tensor<T> reduce_to_shape(const Tensor<T>&, const Shape&);                                           \
  template void accumulate(Tensor<T>&, const Tensor<T>&);

PAENET_INSTANTIATE_KERNELS(float)
PAENET_INSTANTIATE_KERNELS(double)

#undef PAENET_INSTANTIATE_KERNELS

}  // namespace paenet
