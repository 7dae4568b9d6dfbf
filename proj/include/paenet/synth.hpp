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

// Synthetic paired structure/flow volumes with exact en-face vessel masks.
//
// Vessels are chains of capsules (line segments with a radius) whose control
// points wander across the L x W plane inside a slab around mid-depth. The
// flow channel is bright inside vessels, the structure channel shows depth
// layering with only a faint vessel imprint, and both carry uniform noise.

#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "paenet/tensor.hpp"

namespace paenet {

struct SynthSpec {
  std::array<std::size_t, 3> dims{32, 32, 64};  // (L, W, H)
  std::size_t vessels = 6;
  double radius_min = 1.0;
  double radius_max = 2.5;
  /// Lateral wander of successive control points relative to the step length.
  double tortuosity = 0.35;
  /// Half-widths of the uniform noise on the structure and flow channels.
  double oct_noise = 0.05;
  double octa_noise = 0.08;
  std::uint64_t seed = 7;

  void validate() const;
  bool operator==(const SynthSpec&) const = default;
};

/// Segment from `a` to `b` in voxel coordinates (l, w, h), thickened by `radius`.
struct Capsule {
  std::array<double, 3> a{};
  std::array<double, 3> b{};
  double radius = 1.0;

  bool contains(double l, double w, double h) const;
};

struct VolumePair {
  Tensor<float> oct;   // (L, W, H), in [0, 1]
  Tensor<float> octa;  // (L, W, H), in [0, 1]
  BinaryMask gt;       // (L, W)
  std::vector<Capsule> vessels;
  SynthSpec spec;
  std::uint64_t index = 0;

  /// (2, L, W, H) network input with channels (oct, octa).
  Tensor<float> stacked() const;
};

/// Voxel occupancy of the union of tubes, (L, W, H) of 0/1.
BinaryMask tube_occupancy(const std::vector<Capsule>& vessels, const std::array<std::size_t, 3>& dims);

/// Fully determined by (spec.seed XOR index).
VolumePair gen_sample(const SynthSpec& spec, std::uint64_t index);

enum class ProjectionMode { mean, max };

/// (L, W, H) -> (L, W) by reduction over H.
Tensor<float> project_volume(const Tensor<float>& volume, ProjectionMode mode);

struct SplitCounts {
  std::size_t train = 24;
  std::size_t val = 4;
  std::size_t test = 8;
};

struct DatasetEntry {
  std::string split;
  std::uint64_t index = 0;
  std::string volume;  // path relative to the dataset root
  std::string mask;
  std::string sha256;  // of the volume file
};

/// Writes train/val/test samples with consecutive, disjoint index ranges
/// plus `manifest.json` under `root`. Returns the manifest entries.
std::vector<DatasetEntry> gen_dataset(const SynthSpec& spec, const SplitCounts& counts,
                                      const std::filesystem::path& root);

}  // namespace paenet
