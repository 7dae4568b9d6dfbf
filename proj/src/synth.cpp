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

#include "paenet/synth.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <json.hpp>

#include "paenet/io.hpp"
#include "paenet/kernels.hpp"
#include "paenet/rng.hpp"

namespace paenet {

namespace {

// Vessels stay inside this fraction of the depth axis.
constexpr double kSlabLo = 0.35;
constexpr double kSlabHi = 0.65;

constexpr float kFlowInside = 0.75f;
constexpr float kFlowOutside = 0.1f;
constexpr float kStructureContrast = 0.08f;

// Structure intensity of the depth layers, top to bottom.
constexpr std::array<std::pair<double, float>, 5> kLayers{{
    {0.20, 0.15f},
    {0.35, 0.55f},
    {0.65, 0.40f},
    {0.80, 0.65f},
    {1.00, 0.20f},
}};

float layer_level(double depth_fraction) {
  for (const auto& [end, level] : kLayers)
    if (depth_fraction < end) return level;
  return kLayers.back().second;
}

std::array<double, 2> edge_point(std::size_t edge, double t, double L, double W) {
  switch (edge) {
    case 0: return {0.0, t * (W - 1)};
    case 1: return {L - 1, t * (W - 1)};
    case 2: return {t * (L - 1), 0.0};
    default: return {t * (L - 1), W - 1};
  }
}

std::vector<Capsule> make_vessels(const SynthSpec& spec, SplitMix64& rng) {
  const double L = static_cast<double>(spec.dims[0]);
  const double W = static_cast<double>(spec.dims[1]);
  const double H = static_cast<double>(spec.dims[2]);
  std::vector<Capsule> out;
  for (std::size_t v = 0; v < spec.vessels; ++v) {
    const std::size_t points = 3 + rng.below(6);
    const std::size_t from = rng.below(4);
    const std::size_t to = (from + 1 + rng.below(3)) % 4;
    const auto start = edge_point(from, rng.uniform(), L, W);
    const auto end = edge_point(to, rng.uniform(), L, W);
    const double dl = (end[0] - start[0]) / static_cast<double>(points - 1);
    const double dw = (end[1] - start[1]) / static_cast<double>(points - 1);
    const double step = std::sqrt(dl * dl + dw * dw);
    const double nl = step > 0 ? -dw / step : 0.0;
    const double nw = step > 0 ? dl / step : 0.0;

    std::vector<std::array<double, 3>> ctrl;
    for (std::size_t i = 0; i < points; ++i) {
      const double jitter = (i == 0 || i + 1 == points) ? 0.0 : spec.tortuosity * step * rng.uniform(-1.0, 1.0);
      const double l = std::clamp(start[0] + dl * double(i) + nl * jitter, 0.0, L - 1);
      const double w = std::clamp(start[1] + dw * double(i) + nw * jitter, 0.0, W - 1);
      const double h = H * rng.uniform(kSlabLo, kSlabHi);
      ctrl.push_back({l, w, h});
    }
    const double base = rng.uniform(spec.radius_min, spec.radius_max);
    for (std::size_t i = 0; i + 1 < points; ++i) {
      const double r = std::clamp(base * rng.uniform(0.8, 1.2), spec.radius_min, spec.radius_max);
      out.push_back({ctrl[i], ctrl[i + 1], r});
    }
  }
  return out;
}

}  // namespace

void SynthSpec::validate() const {
  for (std::size_t d : dims) require(d >= 8, "synth: every dimension must be >= 8");
  require(vessels >= 1, "synth: need at least one vessel");
  require(radius_min >= 1.0 && radius_max >= radius_min, "synth: radii must satisfy 1 <= min <= max");
  require(tortuosity >= 0.0, "synth: tortuosity must be non-negative");
  require(oct_noise >= 0.0 && octa_noise >= 0.0, "synth: noise amplitudes must be non-negative");
}

bool Capsule::contains(double l, double w, double h) const {
  const double d[3] = {b[0] - a[0], b[1] - a[1], b[2] - a[2]};
  const double p[3] = {l - a[0], w - a[1], h - a[2]};
  const double len2 = d[0] * d[0] + d[1] * d[1] + d[2] * d[2];
  double t = len2 > 0 ? (p[0] * d[0] + p[1] * d[1] + p[2] * d[2]) / len2 : 0.0;
  t = std::clamp(t, 0.0, 1.0);
  double dist2 = 0.0;
  for (int k = 0; k < 3; ++k) {
    const double e = p[k] - t * d[k];
    dist2 += e * e;
  }
  return dist2 <= radius * radius;
}

BinaryMask tube_occupancy(const std::vector<Capsule>& vessels, const std::array<std::size_t, 3>& dims) {
  BinaryMask occ(Shape{dims[0], dims[1], dims[2]});
  for (const auto& c : vessels) {
    std::array<std::size_t, 3> lo{}, hi{};
    for (int k = 0; k < 3; ++k) {
      const double a = std::min(c.a[k], c.b[k]) - c.radius;
      const double b = std::max(c.a[k], c.b[k]) + c.radius;
      lo[k] = static_cast<std::size_t>(std::max(0.0, std::ceil(a)));
      hi[k] = static_cast<std::size_t>(std::clamp(std::floor(b) + 1.0, 0.0, double(dims[k])));
    }
    for (std::size_t l = lo[0]; l < hi[0]; ++l)
      for (std::size_t w = lo[1]; w < hi[1]; ++w)
        for (std::size_t h = lo[2]; h < hi[2]; ++h)
          if (c.contains(double(l), double(w), double(h))) occ[(l * dims[1] + w) * dims[2] + h] = 1;
  }
  return occ;
}

Tensor<float> VolumePair::stacked() const {
  const std::array<Tensor<float>, 2> parts{oct.reshaped(Shape{1, oct.extent(0), oct.extent(1), oct.extent(2)}),
                                           octa.reshaped(Shape{1, octa.extent(0), octa.extent(1), octa.extent(2)})};
  return concat_axis(std::span<const Tensor<float>>(parts), 0);
}

VolumePair gen_sample(const SynthSpec& spec, std::uint64_t index) {
  spec.validate();
  SplitMix64 rng(spec.seed ^ index);
  const auto [L, W, H] = spec.dims;

  VolumePair pair;
  pair.spec = spec;
  pair.index = index;
  pair.vessels = make_vessels(spec, rng);
  const BinaryMask occ = tube_occupancy(pair.vessels, spec.dims);

  pair.oct = Tensor<float>(Shape{L, W, H});
  pair.octa = Tensor<float>(Shape{L, W, H});
  pair.gt = BinaryMask(Shape{L, W});
  for (std::size_t l = 0; l < L; ++l)
    for (std::size_t w = 0; w < W; ++w)
      for (std::size_t h = 0; h < H; ++h) {
        const std::size_t q = (l * W + w) * H + h;
        const bool inside = occ[q] != 0;
        if (inside) pair.gt.at({l, w}) = 1;
        const double depth = double(h) / double(H);
        const double flow = (inside ? kFlowInside : kFlowOutside) + rng.uniform(-spec.octa_noise, spec.octa_noise);
        const double structure = layer_level(depth) + 0.1 * depth + (inside ? kStructureContrast : 0.0f) +
                                 rng.uniform(-spec.oct_noise, spec.oct_noise);
        pair.octa[q] = static_cast<float>(std::clamp(flow, 0.0, 1.0));
        pair.oct[q] = static_cast<float>(std::clamp(structure, 0.0, 1.0));
      }
  return pair;
}

Tensor<float> project_volume(const Tensor<float>& volume, ProjectionMode mode) {
  require(volume.rank() == 3, "project_volume: volume must be (L,W,H), got " + to_string(volume.shape()));
  const Tensor<float> p = pool_axis(volume, 2, mode == ProjectionMode::max ? PoolMode::max : PoolMode::avg);
  return p.reshaped(Shape{volume.extent(0), volume.extent(1)});
}

std::vector<DatasetEntry> gen_dataset(const SynthSpec& spec, const SplitCounts& counts, const fs::path& root) {
  spec.validate();
  require(counts.train >= 1 && counts.test >= 1, "gen_dataset: train and test splits need at least one sample");
  std::error_code ec;
  fs::create_directories(root, ec);
  if (ec) throw DataError("cannot create dataset directory " + root.string() + ": " + ec.message());

  std::vector<DatasetEntry> entries;
  std::uint64_t index = 0;
  const std::array<std::pair<const char*, std::size_t>, 3> splits{{
      {"train", counts.train},
      {"val", counts.val},
      {"test", counts.test},
  }};
  for (const auto& [split, n] : splits) {
    if (n == 0) continue;
    fs::create_directories(root / split, ec);
    if (ec) throw DataError("cannot create " + (root / split).string() + ": " + ec.message());
    for (std::size_t i = 0; i < n; ++i, ++index) {
      const VolumePair pair = gen_sample(spec, index);
      char stem[32];
      std::snprintf(stem, sizeof stem, "sample_%05llu", static_cast<unsigned long long>(index));
      DatasetEntry e;
      e.split = split;
      e.index = index;
      e.volume = std::string(split) + "/" + stem + ".rvv";
      e.mask = std::string(split) + "/" + stem + "_gt.pgm";
      const std::string bytes = encode_volume(pair.stacked(), {"oct", "octa"});
      e.sha256 = sha256_hex(bytes);
      write_file_atomic(root / e.volume, bytes);
      write_mask(root / e.mask, pair.gt);
      entries.push_back(std::move(e));
    }
  }

  nlohmann::ordered_json m;
  m["format"] = "paenet-dataset-1";
  m["spec"] = {{"dims", spec.dims},
               {"vessels", spec.vessels},
               {"radius_min", spec.radius_min},
               {"radius_max", spec.radius_max},
               {"tortuosity", spec.tortuosity},
               {"oct_noise", spec.oct_noise},
               {"octa_noise", spec.octa_noise},
               {"seed", spec.seed}};
  m["counts"] = {{"train", counts.train}, {"val", counts.val}, {"test", counts.test}};
  auto& list = m["samples"] = nlohmann::ordered_json::array();
  for (const auto& e : entries)
    list.push_back({{"split", e.split}, {"index", e.index}, {"volume", e.volume}, {"mask", e.mask}, {"sha256", e.sha256}});
  write_file_atomic(root / "manifest.json", m.dump(2) + "\n");
  return entries;
}

}  // namespace paenet
