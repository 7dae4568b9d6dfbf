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

#include "paenet/blocks.hpp"

#include <array>

namespace paenet {

namespace {

// Swapping axis 0 with the pooled axis; each swap is its own inverse.
constexpr std::array<std::array<std::size_t, 4>, 4> kQamOrders{{
    {0, 1, 2, 3},  // pool C, gate (L, W, H)
    {1, 0, 2, 3},  // pool L, gate (C, W, H)
    {2, 1, 0, 3},  // pool W, gate (L, C, H)
    {3, 1, 2, 0},  // pool H, gate (L, W, C)
}};

template <typename T>
void note(BlockTrace<T>* trace, const std::string& key, const Tensor<T>& value) {
  if (trace) (*trace)[key] = value;
}

}  // namespace

// --- parameter layouts -------------------------------------------------------

ApmParams ApmParams::for_channels(std::size_t channels) {
  require(channels >= 2 && channels % 2 == 0, "APM: channel count must be even, got " + std::to_string(channels));
  const std::size_t half = channels / 2;
  const std::size_t reduced = (channels + 3) / 4;
  ApmParams p;
  p.channels = channels;
  p.k1 = ConvSpec::cube(3, half, half);
  p.k2 = ConvSpec::cube(5, half, half);
  p.squeeze = ConvSpec::cube(1, channels, reduced);
  p.excite = ConvSpec::cube(1, reduced, channels);
  return p;
}

template <typename T>
void ApmParams::declare(ParamSet<T>& params, const std::string& prefix, SplitMix64& rng) const {
  declare_conv(params, prefix + ".k1", k1, rng);
  declare_conv(params, prefix + ".k2", k2, rng);
  declare_conv(params, prefix + ".squeeze", squeeze, rng);
  declare_conv(params, prefix + ".excite", excite, rng);
}

template <typename T>
void QamParams::declare(ParamSet<T>& params, const std::string& prefix, SplitMix64& rng) const {
  for (std::size_t k = 0; k < 4; ++k) {
    const std::string b = prefix + ".branch" + std::to_string(k);
    declare_conv(params, b + ".conv", branch, rng);
    declare_batch_norm(params, b + ".bn", branch.out_channels);
  }
}

PsaParams PsaParams::for_channels(std::size_t channels) {
  require(channels >= 2 && channels % 2 == 0, "PSA: channel count must be even, got " + std::to_string(channels));
  const std::size_t half = channels / 2;
  PsaParams p;
  p.channels = channels;
  p.spatial_query = ConvSpec::square(1, channels, half);
  p.spatial_value = ConvSpec::square(1, channels, half);
  p.channel_query = ConvSpec::square(1, channels, 1);
  p.channel_value = ConvSpec::square(1, channels, half);
  p.channel_out = ConvSpec::square(1, half, channels);
  return p;
}

template <typename T>
void PsaParams::declare(ParamSet<T>& params, const std::string& prefix, SplitMix64& rng) const {
  declare_conv(params, prefix + ".spatial_query", spatial_query, rng);
  declare_conv(params, prefix + ".spatial_value", spatial_value, rng);
  declare_conv(params, prefix + ".channel_query", channel_query, rng);
  declare_conv(params, prefix + ".channel_value", channel_value, rng);
  declare_conv(params, prefix + ".channel_out", channel_out, rng);
  declare_layer_norm(params, prefix + ".channel_norm", channels);
}

// --- Z-pool --------------------------------------------------------------------

template <typename T>
Var<T> zpool(Var<T> x) {
  require(x.value().rank() == 4, "zpool: input must be rank 4, got " + to_string(x.shape()));
  const std::array<Var<T>, 2> parts{pool_axis(x, 0, PoolMode::max), pool_axis(x, 0, PoolMode::avg)};
  return concat_axis(std::span<const Var<T>>(parts), 0);
}

template <typename T>
Tensor<T> zpool(const Tensor<T>& x) {
  Tape<T> tape(false);
  return zpool(tape.constant(x)).value();
}

// --- QAM -----------------------------------------------------------------------

template <typename T>
Batch<T> qam_forward(const Scope<T>& scope, const QamParams& p, std::span<const Var<T>> xs, BlockTrace<T>* trace) {
  require(!xs.empty(), "QAM: empty batch");
  for (const auto& x : xs) require(x.value().rank() == 4, "QAM: input must be (C,L,W,H), got " + to_string(x.shape()));

  // Each branch pools along its own axis and only the small pooled maps and
  // gates are permuted; the gate broadcasts back along the pooled axis.
  Batch<T> acc(xs.size());
  for (std::size_t k = 0; k < 4; ++k) {
    const std::string branch = "branch" + std::to_string(k);
    const std::span<const std::size_t> order(kQamOrders[k]);
    auto to_gate_axes = [&](Var<T> v) { return k == 0 ? v : permute_axes(v, order); };
    Batch<T> gates;
    for (const auto& x : xs) {
      const std::array<Var<T>, 2> parts{to_gate_axes(pool_axis(x, k, PoolMode::max)),
                                        to_gate_axes(pool_axis(x, k, PoolMode::avg))};
      gates.push_back(apply_conv(scope, branch + ".conv", p.branch, concat_axis(std::span<const Var<T>>(parts), 0)));
    }
    gates = apply_batch_norm(scope, branch + ".bn", std::span<const Var<T>>(gates));
    for (std::size_t i = 0; i < xs.size(); ++i) {
      const Var<T> weight = sigmoid(gates[i]);
      if (i == 0) note(trace, branch + ".weight", weight.value());
      const Var<T> y = multiply(xs[i], to_gate_axes(weight));
      acc[i] = k == 0 ? y : add(acc[i], y);
    }
  }
  for (auto& y : acc) y = scale(y, T(0.25));
  return acc;
}

// --- APM -----------------------------------------------------------------------

template <typename T>
Var<T> apm_forward(const Scope<T>& scope, const ApmParams& p, Var<T> x, std::size_t pool_size, BlockTrace<T>* trace) {
  const Shape s = x.shape();
  require(s.size() == 4, "APM: input must be (C,L,W,H), got " + to_string(s));
  const std::size_t c = s[0];
  const std::size_t h = s[3];
  require(c == p.channels, "APM: expected " + std::to_string(p.channels) + " channels, got " + std::to_string(c));
  require(c % 2 == 0, "APM: channel count must be even");
  require(pool_size >= 1 && h % pool_size == 0,
          "APM: depth " + std::to_string(h) + " is not divisible by pool size " + std::to_string(pool_size));
  const std::size_t groups = h / pool_size;

  // Multi-scale feature.
  const std::array<Var<T>, 2> branches{
      apply_conv(scope, "k1", p.k1, slice_axis(x, 0, 0, c / 2)),
      apply_conv(scope, "k2", p.k2, slice_axis(x, 0, c / 2, c / 2)),
  };
  const Var<T> m = concat_axis(std::span<const Var<T>>(branches), 0);

  // Channel descriptor, (C,1,1,1).
  const Var<T> z = sigmoid(apply_conv(scope, "excite", p.excite, relu(apply_conv(scope, "squeeze", p.squeeze,
                                                                                 global_avg_pool(m)))));

  const Var<T> m_grouped = regroup_axis(m, 3, groups);
  const Var<T> x_grouped = regroup_axis(x, 3, groups);
  const Var<T> depth_weight = softmax_axis(m_grouped, 0);
  const Var<T> channel_weight = reshape(softmax_axis(z, 0), Shape{1, c, 1, 1, 1});
  const Var<T> weight = multiply(depth_weight, channel_weight);
  note(trace, "depth_weight", depth_weight.value());
  note(trace, "channel_weight", channel_weight.value());
  const Var<T> fused = sum_axis(multiply(x_grouped, weight), 0);
  return reshape(fused, Shape{c, s[1], s[2], pool_size});
}

template <typename T>
Var<T> unidirectional_pool(Var<T> x, std::size_t pool_size) {
  const Shape s = x.shape();
  require(s.size() == 4, "unidirectional_pool: input must be (C,L,W,H)");
  require(pool_size >= 1 && s[3] % pool_size == 0, "unidirectional_pool: depth not divisible by pool size");
  const Var<T> pooled = pool_axis(regroup_axis(x, 3, s[3] / pool_size), 0, PoolMode::max);
  return reshape(pooled, Shape{s[0], s[1], s[2], pool_size});
}

// --- FFM -----------------------------------------------------------------------

template <typename T>
Var<T> ffm_fuse(Var<T> x3d, Var<T> x2d) {
  const Shape v = x3d.shape();
  const Shape p = x2d.shape();
  require(v.size() == 4 && p.size() == 3, "FFM: expects (C3,L,W,H) and (C2,L,W)");
  require(v[1] == p[1] && v[2] == p[2], "FFM: L/W mismatch " + to_string(v) + " vs " + to_string(p));
  const Shape planar{v[0], v[1], v[2]};
  const std::array<Var<T>, 3> parts{
      x2d,
      reshape(pool_axis(x3d, 3, PoolMode::avg), planar),
      reshape(pool_axis(x3d, 3, PoolMode::max), planar),
  };
  return concat_axis(std::span<const Var<T>>(parts), 0);
}

template <typename T>
Tensor<T> ffm_fuse(const Tensor<T>& x3d, const Tensor<T>& x2d) {
  Tape<T> tape(false);
  return ffm_fuse(tape.constant(x3d), tape.constant(x2d)).value();
}

// --- PSA -----------------------------------------------------------------------

namespace {

void check_psa_input(const Shape& s, const PsaParams& p) {
  require(s.size() == 3, "PSA: input must be (C,L,W), got " + to_string(s));
  require(s[0] % 2 == 0, "PSA: channel count must be even, got " + std::to_string(s[0]));
  require(s[0] == p.channels, "PSA: expected " + std::to_string(p.channels) + " channels");
}

}  // namespace

template <typename T>
Var<T> psa_spatial(const Scope<T>& scope, const PsaParams& p, Var<T> x, BlockTrace<T>* trace) {
  const Shape s = x.shape();
  check_psa_input(s, p);
  const std::size_t half = s[0] / 2;
  const std::size_t positions = s[1] * s[2];
  const Var<T> query = reshape(softmax_axis(global_avg_pool(apply_conv(scope, "spatial_query", p.spatial_query, x)), 0),
                               Shape{1, half});
  const Var<T> value = reshape(apply_conv(scope, "spatial_value", p.spatial_value, x), Shape{half, positions});
  const Var<T> map = reshape(sigmoid(matmul2d(query, value)), Shape{1, s[1], s[2]});
  note(trace, "spatial_map", map.value());
  return multiply(x, map);
}

template <typename T>
Var<T> psa_channel(const Scope<T>& scope, const PsaParams& p, Var<T> x, BlockTrace<T>* trace) {
  const Shape s = x.shape();
  check_psa_input(s, p);
  const std::size_t half = s[0] / 2;
  const std::size_t positions = s[1] * s[2];
  const Var<T> attention =
      softmax_axis(reshape(apply_conv(scope, "channel_query", p.channel_query, x), Shape{positions, 1}), 0);
  const Var<T> value = reshape(apply_conv(scope, "channel_value", p.channel_value, x), Shape{half, positions});
  const Var<T> pooled = reshape(matmul2d(value, attention), Shape{half, 1, 1});
  const Var<T> weights =
      sigmoid(apply_layer_norm(scope, "channel_norm", apply_conv(scope, "channel_out", p.channel_out, pooled)));
  note(trace, "channel_weight", weights.value());
  return multiply(x, weights);
}

template <typename T>
Var<T> psa_forward(const Scope<T>& scope, const PsaParams& p, Var<T> x, BlockTrace<T>* trace) {
  return add(psa_spatial(scope, p, x, trace), psa_channel(scope, p, x, trace));
}

#define PAENET_INSTANTIATE_BLOCKS(T)                                                                         \
  template void ApmParams::declare(ParamSet<T>&, const std::string&, SplitMix64&) const;                    \
  template void QamParams::declare(ParamSet<T>&, const std::string&, SplitMix64&) const;                    \
  template void PsaParams::declare(ParamSet<T>&, const std::string&, SplitMix64&) const;                    \
  template Var<T> zpool(Var<T>);                                                                            \
  template Tensor<T> zpool(const Tensor<T>&);                                                               \
  template Batch<T> qam_forward(const Scope<T>&, const QamParams&, std::span<const Var<T>>, BlockTrace<T>*); \
  template Var<T> apm_forward(const Scope<T>&, const ApmParams&, Var<T>, std::size_t, BlockTrace<T>*);      \
  template Var<T> unidirectional_pool(Var<T>, std::size_t);                                                 \
  template Var<T> ffm_fuse(Var<T>, Var<T>);                                                                 \
  template Tensor<T> ffm_fuse(const Tensor<T>&, const Tensor<T>&);                                          \
  template Var<T> psa_spatial(const Scope<T>&, const PsaParams&, Var<T>, BlockTrace<T>*);                   \
  template Var<T> psa_channel(const Scope<T>&, const PsaParams&, Var<T>, BlockTrace<T>*);                   \
  template Var<T> psa_forward(const Scope<T>&, const PsaParams&, Var<T>, BlockTrace<T>*);

PAENET_INSTANTIATE_BLOCKS(float)
PAENET_INSTANTIATE_BLOCKS(double)

#undef PAENET_INSTANTIATE_BLOCKS

}  // namespace paenet
