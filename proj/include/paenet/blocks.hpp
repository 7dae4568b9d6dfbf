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

// Attention and fusion blocks. Volumes are (C, L, W, H) with H the projection
// (depth) axis; planar features are (C, L, W). Blocks are unbatched except
// where batch normalization needs statistics over the whole batch.

#pragma once

#include <map>
#include <string>

#include "paenet/params.hpp"

namespace paenet {

/// Optional sink for intermediate attention maps, keyed by role.
template <typename T>
using BlockTrace = std::map<std::string, Tensor<T>>;

/// Adaptive pooling: learned fusion along H that reduces it to `pool_size`.
struct ApmParams {
  std::size_t channels = 0;
  ConvSpec k1;       // 3x3x3 on the first channel half
  ConvSpec k2;       // 5x5x5 on the second channel half
  ConvSpec squeeze;  // 1x1x1, C -> ceil(C/4)
  ConvSpec excite;   // 1x1x1, ceil(C/4) -> C

  static ApmParams for_channels(std::size_t channels);
  template <typename T>
  void declare(ParamSet<T>& params, const std::string& prefix, SplitMix64& rng) const;
};

/// Quadruple attention: one 7x7x7 gate per pooled axis (C, L, W, H).
struct QamParams {
  ConvSpec branch = ConvSpec::cube(7, 2, 1);

  template <typename T>
  void declare(ParamSet<T>& params, const std::string& prefix, SplitMix64& rng) const;
};

/// Polarized self-attention with spatial-only and channel-only branches.
struct PsaParams {
  std::size_t channels = 0;
  ConvSpec spatial_query;  // C -> C/2
  ConvSpec spatial_value;  // C -> C/2
  ConvSpec channel_query;  // C -> 1
  ConvSpec channel_value;  // C -> C/2
  ConvSpec channel_out;    // C/2 -> C, followed by layer norm

  static PsaParams for_channels(std::size_t channels);
  template <typename T>
  void declare(ParamSet<T>& params, const std::string& prefix, SplitMix64& rng) const;
};

/// Max and mean over the leading axis, stacked in that order: (D,a,b,c) -> (2,a,b,c).
template <typename T>
Var<T> zpool(Var<T> x);
template <typename T>
Tensor<T> zpool(const Tensor<T>& x);

/// Every branch permutes its pooled axis to the front, gates the permuted
/// input with sigmoid(BN(conv(zpool(.)))) and permutes back; the four results
/// are averaged. Shape preserving.
template <typename T>
Batch<T> qam_forward(const Scope<T>& scope, const QamParams& p, std::span<const Var<T>> xs,
                     BlockTrace<T>* trace = nullptr);

/// (C,L,W,H) -> (C,L,W,pool_size). H is split into G = H/pool_size contiguous
/// slabs; outputs sum the slabs weighted by softmax over G of the multi-scale
/// feature times softmax over C of the squeeze-excite channel descriptor.
template <typename T>
Var<T> apm_forward(const Scope<T>& scope, const ApmParams& p, Var<T> x, std::size_t pool_size,
                   BlockTrace<T>* trace = nullptr);

/// Parameter-free stand-in for APM: max over the same slab grouping.
template <typename T>
Var<T> unidirectional_pool(Var<T> x, std::size_t pool_size);

/// Channel concat of (x2d, mean over H of x3d, max over H of x3d).
template <typename T>
Var<T> ffm_fuse(Var<T> x3d, Var<T> x2d);
template <typename T>
Tensor<T> ffm_fuse(const Tensor<T>& x3d, const Tensor<T>& x2d);

template <typename T>
Var<T> psa_spatial(const Scope<T>& scope, const PsaParams& p, Var<T> x, BlockTrace<T>* trace = nullptr);
template <typename T>
Var<T> psa_channel(const Scope<T>& scope, const PsaParams& p, Var<T> x, BlockTrace<T>* trace = nullptr);
/// Sum of the two branches.
template <typename T>
Var<T> psa_forward(const Scope<T>& scope, const PsaParams& p, Var<T> x, BlockTrace<T>* trace = nullptr);

}  // namespace paenet
