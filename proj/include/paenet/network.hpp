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

#include <cstdint>
#include <string>
#include <vector>

#include "paenet/blocks.hpp"

namespace paenet {

struct StageConfig {
  std::size_t channels = 16;
  /// Factor by which this stage divides the depth axis.
  std::size_t group_factor = 4;

  bool operator==(const StageConfig&) const = default;
};

/// Which of the four modules are active. All off is the plain baseline with
/// parameter-free pooling along depth.
struct ModuleToggles {
  bool apm = true;
  bool qam = true;
  bool ffm = true;
  bool psa = true;

  bool operator==(const ModuleToggles&) const = default;
};

struct PaenetConfig {
  std::size_t input_channels = 2;
  /// Depth (H) of the volumes the network accepts.
  std::size_t input_depth = 64;
  std::vector<StageConfig> stages = {{16, 4}, {32, 4}, {64, 4}};
  ModuleToggles toggles;
  std::size_t depth2d = 3;
  std::size_t base_channels = 32;
  std::uint64_t seed = 0;

  /// Stages (16, 32, 64) with factors (4, 4, input_depth / 16).
  static PaenetConfig with_depth(std::size_t input_depth);

  /// The five cumulative module configurations of the ablation study:
  /// baseline, +APM, +QAM, +FFM, +PSA.
  static std::vector<ModuleToggles> ablation_ladder();

  void validate() const;
  bool operator==(const PaenetConfig&) const = default;
};

/// Short label for a toggle set, e.g. "apm+qam" or "baseline".
std::string toggles_label(const ModuleToggles& t);

struct ManifestEntry {
  std::string name;
  Shape shape;
  bool trainable = true;
};

/// Two-path network: a 3D feature path that reduces depth to 1 stage by stage,
/// and a 2D encoder-decoder segmentation path fed by the squeezed volume
/// features.
class Paenet {
 public:
  explicit Paenet(PaenetConfig config);

  const PaenetConfig& config() const noexcept { return config_; }
  ParamSet<float>& params() noexcept { return params_; }
  const ParamSet<float>& params() const noexcept { return params_; }

  std::vector<ManifestEntry> manifest() const;
  std::size_t parameter_count() const { return params_.total_elements(); }

 private:
  PaenetConfig config_;
  ParamSet<float> params_;
};

/// Declares every parameter of the architecture (seeded init) into `params`.
template <typename T>
void declare_paenet(const PaenetConfig& config, ParamSet<T>& params);

/// Graph of the whole network over a batch of (C_in, L, W, H) inputs;
/// returns one (L, W) probability map per sample.
template <typename T>
Batch<T> paenet_graph(const PaenetConfig& config, const Scope<T>& scope, std::span<const Var<T>> inputs);

Paenet build_paenet(const PaenetConfig& config);

/// Eval-mode forward of one (C_in, L, W, H) volume pair to an (L, W) map.
Tensor<float> paenet_forward(const Paenet& net, const Tensor<float>& pair);

/// Checks an input shape against the architecture; throws ContractError.
void check_input_shape(const PaenetConfig& config, const Shape& shape);

}  // namespace paenet
