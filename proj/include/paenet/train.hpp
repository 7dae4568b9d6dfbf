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

#include <array>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "paenet/network.hpp"

namespace paenet {

using Dims3 = std::array<std::size_t, 3>;

enum class LossKind { bce };

struct TrainConfig {
  double lr0 = 3e-4;
  double power = 0.9;
  std::size_t batch = 4;
  std::size_t max_iters = 600;
  /// Crop size (L, W, H) of training and inference patches.
  Dims3 patch{32, 32, 64};
  LossKind loss = LossKind::bce;
  std::uint64_t seed = 0;
  /// Iterations between checkpoints; 0 disables them.
  std::size_t checkpoint_every = 0;

  /// 25000 iterations on 100 x 100 x 160 patches.
  static TrainConfig full_scale();

  /// Throws ContractError when a field is out of range or the patch depth
  /// does not match the network.
  void validate(const PaenetConfig& net) const;
  bool operator==(const TrainConfig&) const = default;
};

/// lr0 * (1 - iter / max_iters)^power for iter in [0, max_iters].
double poly_lr(std::size_t iter, const TrainConfig& cfg);

inline constexpr double kProbClamp = 1e-7;

/// Pixel-mean binary cross-entropy with the prediction clamped to
/// [kProbClamp, 1 - kProbClamp].
template <typename T>
Var<T> bce_loss(Var<T> prob, const BinaryMask& gt);
double bce_loss(const Tensor<float>& prob, const BinaryMask& gt);

struct AdamState {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::uint64_t step = 0;
  /// Moments of the trainable entries, in ParamSet order; empty before the
  /// first step.
  std::vector<Tensor<float>> m, v;

  bool operator==(const AdamState&) const = default;
};

/// Bias-corrected Adam update of the trainable entries of `params`; `grads`
/// lists one gradient per trainable entry in order.
void adam_step(ParamSet<float>& params, std::span<const Tensor<float>> grads, AdamState& state, double lr);

struct PatchGrid {
  Dims3 dims{};
  Dims3 patch{};
  std::vector<Dims3> origins;
};

/// ceil(dims / patch) windows per axis, the first at 0 and the last flush
/// with the boundary, origins spread evenly in between (floor). When an axis
/// divides evenly this is the stride-`patch` grid; otherwise neighbouring
/// windows overlap, e.g. origins {0, 3, 6} for extent 10 and patch 4.
PatchGrid crop_patches(Dims3 dims, Dims3 patch);

/// (C, L, W, H) sub-volume at `origin`.
Tensor<float> crop_volume(const Tensor<float>& volume, Dims3 origin, Dims3 patch);
BinaryMask crop_mask(const BinaryMask& mask, Dims3 origin, Dims3 patch);

struct PatchPrediction {
  Dims3 origin{};
  Tensor<float> map;  // (patch L, patch W)
};

/// Per-pixel mean over every prediction covering it. Throws ContractError if
/// a pixel of the (L, W) output is not covered.
Tensor<float> stitch_patches(std::span<const PatchPrediction> preds, const PatchGrid& grid,
                             std::array<std::size_t, 2> out_dims);

struct TrainSample {
  Tensor<float> volume;  // (C, L, W, H)
  BinaryMask gt;         // (L, W)
};

struct TrainState {
  std::size_t iteration = 0;
  std::uint64_t rng_state = 0;
  AdamState adam;

  bool operator==(const TrainState&) const = default;
};

TrainState initial_train_state(const TrainConfig& cfg);

struct TrainRecord {
  std::size_t iter = 0;
  double lr = 0.0;
  double loss = 0.0;
};

/// "iter=120 lr=2.85e-04 loss=0.4312"
std::string format_log_line(const TrainRecord& r);

struct TrainHooks {
  std::function<void(const TrainRecord&)> on_iteration;
  /// Called with the state after every `checkpoint_every` iterations.
  std::function<void(const TrainState&)> on_checkpoint;
  /// Stop once state.iteration reaches this value; 0 runs to max_iters.
  std::size_t stop_at = 0;
};

/// Runs iterations state.iteration .. max_iters - 1. Each draws `batch`
/// random crops, minimizes the batch-mean loss with one Adam step at
/// poly_lr(iteration), and advances `state`. Deterministic given the state.
/// Throws NumericError on a non-finite loss.
std::vector<TrainRecord> train_loop(const TrainConfig& cfg, Paenet& net, std::span<const TrainSample> data,
                                    TrainState& state, const TrainHooks& hooks = {});

using PatchForward = std::function<Tensor<float>(const Tensor<float>&)>;

/// Crops the volume on the flush-shift grid, maps every patch through
/// `forward` and stitches the (L, W) result.
Tensor<float> infer_volume(const PatchForward& forward, const Tensor<float>& volume, Dims3 patch);
Tensor<float> infer_volume(const Paenet& net, const Tensor<float>& volume, Dims3 patch);

}  // namespace paenet
