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

// Same-padded, stride-1 convolution over up to three spatial axes, computed
// on a zero-padded copy of the input.
//
// In the padded buffer every kernel tap is a constant offset, so output
// position q receives sum_r w[r] * x[q + offset_r]. The microkernels below
// stream contiguous vectors of q against broadcast weights (forward) or
// against one another (weight gradient) without ever materializing a patch
// matrix. The largest spatial axis is stored innermost, which keeps the
// fraction of padded (discarded) positions small.

#pragma once

#include <algorithm>
#include <array>
#include <cstddef>
#include <memory>
#include <numeric>
#include <vector>

namespace paenet::detail {

struct ConvGeometry {
  std::size_t cin = 0, cout = 0;
  std::array<std::size_t, 3> dims{1, 1, 1};
  std::array<std::size_t, 3> k{1, 1, 1};
  std::array<std::size_t, 3> pad{0, 0, 0};

  std::size_t voxels() const { return dims[0] * dims[1] * dims[2]; }
  std::size_t taps() const { return k[0] * k[1] * k[2]; }
  bool pointwise() const { return taps() == 1; }
};

template <typename T>
struct VecOf {
  typedef T type __attribute__((vector_size(64), aligned(sizeof(T))));
};
template <typename T>
using Vec = typename VecOf<T>::type;
template <typename T>
inline constexpr std::size_t kLanes = 64 / sizeof(T);

template <typename T>
inline Vec<T> load(const T* p) {
  return *reinterpret_cast<const Vec<T>*>(p);
}
template <typename T>
inline void store(T* p, Vec<T> v) {
  *reinterpret_cast<Vec<T>*>(p) = v;
}

// Vectors of q per forward step.
inline constexpr std::size_t kForwardVectors = 4;
// Output channels per forward register block.
inline constexpr std::size_t kForwardChannels = 6;
// Channel by tap register block of the weight gradient.
inline constexpr std::size_t kGradChannels = 4;
inline constexpr std::size_t kGradTaps = 5;

class PaddedLayout {
 public:
  explicit PaddedLayout(const ConvGeometry& g) : g_(g) {
    std::iota(order_.begin(), order_.end(), 0);
    std::stable_sort(order_.begin(), order_.end(), [&](std::size_t a, std::size_t b) { return g.dims[a] < g.dims[b]; });
    std::size_t s = 1;
    for (std::size_t m = 3; m-- > 0;) {
      const std::size_t ax = order_[m];
      stride_[ax] = s;
      s *= g.dims[ax] + 2 * g.pad[ax];
    }
    volume_ = s;
  }

  std::size_t stride(std::size_t axis) const { return stride_[axis]; }
  /// Channel pitch of a padded buffer, with room for vector overrun.
  template <typename T>
  std::size_t pitch() const {
    return volume_ + 2 * kForwardVectors * kLanes<T>;
  }

  /// Offset of padded-buffer tap (ci, a, b, c) relative to output position q.
  std::ptrdiff_t tap_offset(std::size_t ci, std::size_t pitch, std::size_t a, std::size_t b, std::size_t c) const {
    return static_cast<std::ptrdiff_t>(ci * pitch + a * stride_[0] + b * stride_[1] + c * stride_[2]);
  }

  /// Position of unpadded voxel (i, j, l) with the origin shifted by `shift`
  /// (the pad for inputs, zero for outputs).
  std::size_t position(std::size_t i, std::size_t j, std::size_t l, bool shifted) const {
    const std::size_t s = shifted ? 1 : 0;
    return (i + s * g_.pad[0]) * stride_[0] + (j + s * g_.pad[1]) * stride_[1] + (l + s * g_.pad[2]) * stride_[2];
  }

  /// Disjoint [begin, end) output ranges, one per slab of the outermost
  /// memory axis, each a whole number of `step` positions long.
  std::vector<std::pair<std::size_t, std::size_t>> output_ranges(std::size_t step) const {
    const std::size_t outer = order_[0], mid = order_[1], inner = order_[2];
    const std::size_t len = (g_.dims[mid] - 1) * stride_[mid] + (g_.dims[inner] - 1) * stride_[inner] + 1;
    std::vector<std::pair<std::size_t, std::size_t>> ranges;
    std::size_t covered = 0;
    for (std::size_t o = 0; o < g_.dims[outer]; ++o) {
      const std::size_t end = o * stride_[outer] + len;
      if (end <= covered) continue;
      const std::size_t begin = std::max(o * stride_[outer], covered);
      covered = begin + (end - begin + step - 1) / step * step;
      ranges.emplace_back(begin, covered);
    }
    return ranges;
  }

  /// Copies a dense (C, d0, d1, d2) block into a padded buffer.
  template <typename T>
  void scatter(const T* src, std::size_t channels, bool shifted, T* dst) const {
    const std::size_t p = pitch<T>();
    for (std::size_t c = 0; c < channels; ++c)
      for (std::size_t i = 0; i < g_.dims[0]; ++i)
        for (std::size_t j = 0; j < g_.dims[1]; ++j) {
          const T* s = src + ((c * g_.dims[0] + i) * g_.dims[1] + j) * g_.dims[2];
          T* d = dst + c * p + position(i, j, 0, shifted);
          const std::size_t st = stride_[2];
          for (std::size_t l = 0; l < g_.dims[2]; ++l) d[l * st] = s[l];
        }
  }

  /// Reads the valid output positions back into a dense block; adds to `dst`
  /// when `accumulate`, else stores, then adds the per-channel bias if given.
  template <typename T>
  void gather(const T* src, std::size_t channels, T* dst, bool accumulate, const T* bias) const {
    const std::size_t p = pitch<T>();
    for (std::size_t c = 0; c < channels; ++c) {
      const T b = bias ? bias[c] : T(0);
      for (std::size_t i = 0; i < g_.dims[0]; ++i)
        for (std::size_t j = 0; j < g_.dims[1]; ++j) {
          const T* s = src + c * p + position(i, j, 0, false);
          T* d = dst + ((c * g_.dims[0] + i) * g_.dims[1] + j) * g_.dims[2];
          const std::size_t st = stride_[2];
          if (accumulate)
            for (std::size_t l = 0; l < g_.dims[2]; ++l) d[l] += s[l * st] + b;
          else
            for (std::size_t l = 0; l < g_.dims[2]; ++l) d[l] = s[l * st] + b;
        }
    }
  }

 private:
  ConvGeometry g_;
  std::array<std::size_t, 3> order_{};
  std::array<std::size_t, 3> stride_{};
  std::size_t volume_ = 0;
};

// y[c][q] = sum_r w[r * CO + c] * x[q + off[r]] for q in [q0, q1), rounded up
// to whole steps.
template <typename T, std::size_t CO>
void forward_block(const T* x, const std::ptrdiff_t* off, std::size_t taps, const T* w, T* y, std::size_t pitch,
                   std::size_t q0, std::size_t q1) {
  constexpr std::size_t L = kLanes<T>;
  constexpr std::size_t QV = kForwardVectors;
  for (std::size_t q = q0; q < q1; q += QV * L) {
    Vec<T> acc[CO][QV];
    _Pragma("GCC unroll 8") for (std::size_t c = 0; c < CO; ++c)
        _Pragma("GCC unroll 8") for (std::size_t v = 0; v < QV; ++v) acc[c][v] = Vec<T>{};
    for (std::size_t r = 0; r < taps; ++r) {
      const T* s = x + off[r] + static_cast<std::ptrdiff_t>(q);
      Vec<T> xv[QV];
      _Pragma("GCC unroll 8") for (std::size_t v = 0; v < QV; ++v) xv[v] = load(s + v * L);
      const T* wr = w + r * CO;
      _Pragma("GCC unroll 8") for (std::size_t c = 0; c < CO; ++c) {
        const T wv = wr[c];
        _Pragma("GCC unroll 8") for (std::size_t v = 0; v < QV; ++v) acc[c][v] += wv * xv[v];
      }
    }
    _Pragma("GCC unroll 8") for (std::size_t c = 0; c < CO; ++c)
        _Pragma("GCC unroll 8") for (std::size_t v = 0; v < QV; ++v) store(y + c * pitch + q + v * L, acc[c][v]);
  }
}

// acc[(c * RB + r) * L ...] += lane-wise sum over q of gy[c][q] * x[q + off[r]].
template <typename T, std::size_t CO, std::size_t RB>
void grad_block(const T* gy, std::size_t pitch, const T* x, const std::ptrdiff_t* off, T* acc_out, std::size_t q0,
                std::size_t q1) {
  constexpr std::size_t L = kLanes<T>;
  Vec<T> acc[CO][RB];
  _Pragma("GCC unroll 8") for (std::size_t c = 0; c < CO; ++c)
      _Pragma("GCC unroll 8") for (std::size_t r = 0; r < RB; ++r) acc[c][r] = Vec<T>{};
  for (std::size_t q = q0; q < q1; q += L) {
    Vec<T> g[CO];
    _Pragma("GCC unroll 8") for (std::size_t c = 0; c < CO; ++c) g[c] = load(gy + c * pitch + q);
    _Pragma("GCC unroll 8") for (std::size_t r = 0; r < RB; ++r) {
      const Vec<T> xv = load(x + off[r] + static_cast<std::ptrdiff_t>(q));
      _Pragma("GCC unroll 8") for (std::size_t c = 0; c < CO; ++c) acc[c][r] += g[c] * xv;
    }
  }
  _Pragma("GCC unroll 8") for (std::size_t c = 0; c < CO; ++c)
      _Pragma("GCC unroll 8") for (std::size_t r = 0; r < RB; ++r) {
    T* a = acc_out + (c * RB + r) * L;
    store(a, load(a) + acc[c][r]);
  }
}

template <typename T>
std::vector<std::ptrdiff_t> tap_offsets(const ConvGeometry& g, const PaddedLayout& layout, std::size_t pitch) {
  std::vector<std::ptrdiff_t> off;
  off.reserve(g.cin * g.taps());
  for (std::size_t ci = 0; ci < g.cin; ++ci)
    for (std::size_t a = 0; a < g.k[0]; ++a)
      for (std::size_t b = 0; b < g.k[1]; ++b)
        for (std::size_t c = 0; c < g.k[2]; ++c) off.push_back(layout.tap_offset(ci, pitch, a, b, c));
  return off;
}

template <typename T, std::size_t CO>
void forward_channels(const T* xp, const std::vector<std::ptrdiff_t>& off, const T* weights, std::size_t co0,
                      const PaddedLayout& layout, T* yp) {
  const std::size_t R = off.size();
  const std::size_t pitch = layout.pitch<T>();
  std::vector<T> wp(R * CO);
  for (std::size_t r = 0; r < R; ++r)
    for (std::size_t c = 0; c < CO; ++c) wp[r * CO + c] = weights[(co0 + c) * R + r];
  for (const auto& [q0, q1] : layout.output_ranges(kForwardVectors * kLanes<T>))
    forward_block<T, CO>(xp, off.data(), R, wp.data(), yp + co0 * pitch, pitch, q0, q1);
}

/// out (+)= conv(x) (+ bias) for weights laid out (cout, cin, k0, k1, k2).
template <typename T>
void conv_padded(const T* x, const T* weights, const T* bias, const ConvGeometry& g, T* out, bool accumulate) {
  const PaddedLayout layout(g);
  const std::size_t pitch = layout.pitch<T>();
  std::vector<T> xp(g.cin * pitch, T(0));
  layout.scatter(x, g.cin, true, xp.data());
  const std::vector<std::ptrdiff_t> off = tap_offsets<T>(g, layout, pitch);
  // Every position gather() reads is written by the microkernels.
  const std::unique_ptr<T[]> yp_buffer(new T[g.cout * pitch]);
  T* const yp = yp_buffer.get();
  std::size_t co = 0;
  for (; co + kForwardChannels <= g.cout; co += kForwardChannels)
    forward_channels<T, kForwardChannels>(xp.data(), off, weights, co, layout, yp);
  switch (g.cout - co) {
    case 5: forward_channels<T, 5>(xp.data(), off, weights, co, layout, yp); break;
    case 4: forward_channels<T, 4>(xp.data(), off, weights, co, layout, yp); break;
    case 3: forward_channels<T, 3>(xp.data(), off, weights, co, layout, yp); break;
    case 2: forward_channels<T, 2>(xp.data(), off, weights, co, layout, yp); break;
    case 1: forward_channels<T, 1>(xp.data(), off, weights, co, layout, yp); break;
    default: break;
  }
  layout.gather(yp, g.cout, out, accumulate, bias);
}

template <typename T, std::size_t CO, std::size_t RB>
void weight_grad_blocks(const T* gyp, const T* xp, const std::vector<std::ptrdiff_t>& off, std::size_t channels,
                        const PaddedLayout& layout, T* acc) {
  const std::size_t pitch = layout.pitch<T>();
  const std::size_t R = off.size();
  const std::size_t L = kLanes<T>;
  for (const auto& [q0, q1] : layout.output_ranges(L))
    for (std::size_t co = 0; co < channels; co += CO)
      for (std::size_t r = 0; r < R; r += RB)
        grad_block<T, CO, RB>(gyp + co * pitch, pitch, xp, off.data() + r, acc + (co * R + r * CO) * L, q0, q1);
}

/// grad_w += d(sum gy * conv(x)) / dw.
template <typename T>
void conv_weight_grad(const T* x, const T* gy, const ConvGeometry& g, T* grad_w) {
  const PaddedLayout layout(g);
  const std::size_t pitch = layout.pitch<T>();
  const std::size_t L = kLanes<T>;
  const bool narrow = g.cout < kGradChannels;
  const std::size_t CO = narrow ? 1 : kGradChannels;
  const std::size_t RB = narrow ? 2 * kGradTaps : kGradTaps;
  const std::size_t channels = (g.cout + CO - 1) / CO * CO;
  std::vector<T> xp(g.cin * pitch, T(0));
  layout.scatter(x, g.cin, true, xp.data());
  std::vector<T> gyp(channels * pitch, T(0));
  layout.scatter(gy, g.cout, false, gyp.data());
  // Padding taps read valid memory and land in discarded accumulators.
  std::vector<std::ptrdiff_t> off = tap_offsets<T>(g, layout, pitch);
  const std::size_t R = off.size();
  off.resize((R + RB - 1) / RB * RB, 0);
  const std::size_t Rp = off.size();
  std::vector<T> acc(channels * Rp * L, T(0));
  if (narrow)
    weight_grad_blocks<T, 1, 2 * kGradTaps>(gyp.data(), xp.data(), off, channels, layout, acc.data());
  else
    weight_grad_blocks<T, kGradChannels, kGradTaps>(gyp.data(), xp.data(), off, channels, layout, acc.data());
  // acc is laid out (co block, r block, c in block, r in block, lane).
  for (std::size_t co = 0; co < g.cout; ++co)
    for (std::size_t r = 0; r < R; ++r) {
      const std::size_t cb = co / CO * CO, c = co % CO;
      const std::size_t rb = r / RB * RB, rr = r % RB;
      const T* lanes = acc.data() + (cb * Rp + rb * CO + c * RB + rr) * L;
      T s = T(0);
      for (std::size_t l = 0; l < L; ++l) s += lanes[l];
      grad_w[co * R + r] += s;
    }
}

}  // namespace paenet::detail
