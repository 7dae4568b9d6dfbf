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
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <map>
#include <set>

#include "paenet/io.hpp"
#include "paenet/kernels.hpp"
#include "paenet/synth.hpp"
#include "support/oracles.hpp"
#include "support/tempdir.hpp"

using namespace paenet;

namespace {

// Brute-force point-to-segment distance, written independently of Capsule.
bool inside_any(const std::vector<Capsule>& vessels, double l, double w, double h) {
  for (const auto& c : vessels) {
    double best = 1e300;
    // Dense sampling along the segment plus the exact endpoints.
    for (int s = 0; s <= 2000; ++s) {
      const double t = s / 2000.0;
      const double dl = l - (c.a[0] + t * (c.b[0] - c.a[0]));
      const double dw = w - (c.a[1] + t * (c.b[1] - c.a[1]));
      const double dh = h - (c.a[2] + t * (c.b[2] - c.a[2]));
      best = std::min(best, dl * dl + dw * dw + dh * dh);
    }
    if (best <= c.radius * c.radius) return true;
  }
  return false;
}

}  // namespace

TEST_CASE("spec validation") {
  SynthSpec s;
  CHECK_NOTHROW(s.validate());
  s.dims = {7, 32, 32};
  CHECK_THROWS_AS(s.validate(), ContractError);
  CHECK_THROWS_AS(gen_sample(s, 0), ContractError);
  s = SynthSpec{};
  s.radius_min = 0.5;
  CHECK_THROWS_AS(s.validate(), ContractError);
  s = SynthSpec{};
  s.radius_max = 0.9 * s.radius_min;
  CHECK_THROWS_AS(s.validate(), ContractError);
  s = SynthSpec{};
  s.vessels = 0;
  CHECK_THROWS_AS(s.validate(), ContractError);
}

TEST_CASE("capsule membership") {
  const Capsule c{{0, 0, 0}, {10, 0, 0}, 2.0};
  CHECK(c.contains(5, 0, 0));
  CHECK(c.contains(5, 2, 0));
  CHECK_FALSE(c.contains(5, 2.01, 0));
  CHECK(c.contains(-2, 0, 0));
  CHECK_FALSE(c.contains(-1.5, 1.5, 0));
  CHECK(c.contains(11.4, 1.4, 0));
  const Capsule point{{3, 3, 3}, {3, 3, 3}, 1.0};
  CHECK(point.contains(4, 3, 3));
  CHECK_FALSE(point.contains(4, 4, 3));
}

TEST_CASE("gen_sample determinism and ranges") {
  const SynthSpec spec;
  const auto a = gen_sample(spec, 3);
  const auto b = gen_sample(spec, 3);
  CHECK(a.oct == b.oct);
  CHECK(a.octa == b.octa);
  CHECK(a.gt == b.gt);
  CHECK(a.oct.shape() == Shape{32, 32, 64});
  CHECK(a.gt.shape() == Shape{32, 32});
  CHECK(a.index == 3);
  CHECK(a.spec == spec);
  CHECK_FALSE(gen_sample(spec, 4).octa == a.octa);
  SynthSpec other = spec;
  other.seed = 8;
  CHECK_FALSE(gen_sample(other, 3).octa == a.octa);

  for (std::uint64_t i = 0; i < 6; ++i) {
    const auto s = gen_sample(spec, i);
    for (float v : s.oct.data()) REQUIRE((v >= 0.0f && v <= 1.0f));
    for (float v : s.octa.data()) REQUIRE((v >= 0.0f && v <= 1.0f));
    std::size_t fg = 0;
    for (auto v : s.gt.data()) fg += v;
    CHECK(fg > 0);
    CHECK(fg < s.gt.size());
    // Vessel geometry stays inside the mid-depth slab.
    for (const auto& c : s.vessels) {
      CHECK(c.radius >= spec.radius_min);
      CHECK(c.radius <= spec.radius_max);
      for (double h : {c.a[2], c.b[2]}) CHECK((h >= 0.35 * 64 && h <= 0.65 * 64));
    }
  }

  const auto stacked = a.stacked();
  CHECK(stacked.shape() == Shape{2, 32, 32, 64});
  CHECK(stacked.at({0, 4, 5, 6}) == a.oct.at({4, 5, 6}));
  CHECK(stacked.at({1, 4, 5, 6}) == a.octa.at({4, 5, 6}));
}

TEST_CASE("gt is the projection of the tube occupancy") {
  SynthSpec spec;
  spec.dims = {16, 20, 24};
  for (std::uint64_t i = 0; i < 3; ++i) {
    const auto s = gen_sample(spec, i);
    const auto occ = tube_occupancy(s.vessels, spec.dims);
    for (std::size_t l = 0; l < 16; ++l)
      for (std::size_t w = 0; w < 20; ++w) {
        std::uint8_t any = 0;
        for (std::size_t h = 0; h < 24; ++h) any = std::max(any, occ.at({l, w, h}));
        REQUIRE(s.gt.at({l, w}) == any);
      }
  }
  // Occupancy itself against a brute-force distance computation, skipping
  // voxels so close to a surface that the sampled distance is ambiguous.
  const auto s = gen_sample(spec, 1);
  const auto occ = tube_occupancy(s.vessels, spec.dims);
  auto grown = s.vessels, shrunk = s.vessels;
  for (auto& c : grown) c.radius += 1e-3;
  for (auto& c : shrunk) c.radius -= 1e-3;
  std::size_t checked = 0;
  for (std::size_t l = 0; l < 16; l += 3)
    for (std::size_t w = 0; w < 20; w += 3)
      for (std::size_t h = 6; h < 18; ++h) {
        const bool outer = inside_any(grown, double(l), double(w), double(h));
        const bool inner = inside_any(shrunk, double(l), double(w), double(h));
        if (outer != inner) continue;
        CHECK(static_cast<bool>(occ.at({l, w, h})) == inner);
        ++checked;
      }
  CHECK(checked > 100);
}

TEST_CASE("flow contrast") {
  const SynthSpec spec;
  for (std::uint64_t i = 0; i < 4; ++i) {
    const auto s = gen_sample(spec, i);
    const auto occ = tube_occupancy(s.vessels, spec.dims);
    double in = 0.0, out = 0.0, oin = 0.0, oout = 0.0;
    std::size_t nin = 0, nout = 0;
    for (std::size_t q = 0; q < occ.size(); ++q) {
      if (occ[q]) {
        in += s.octa[q];
        oin += s.oct[q];
        ++nin;
      } else {
        out += s.octa[q];
        oout += s.oct[q];
        ++nout;
      }
    }
    REQUIRE(nin > 0);
    const double contrast = in / nin - out / nout;
    CHECK(contrast >= 3.0 * spec.octa_noise);
    // Structure contrast is weaker than flow contrast.
    CHECK(std::abs(oin / nin - oout / nout) < contrast);
  }
}

TEST_CASE("project_volume") {
  CHECK(project_volume(Tensor<float>(Shape{3, 4, 5}, 0.25f), ProjectionMode::mean) == Tensor<float>(Shape{3, 4}, 0.25f));
  CHECK(project_volume(Tensor<float>(Shape{3, 4, 5}, 0.25f), ProjectionMode::max) == Tensor<float>(Shape{3, 4}, 0.25f));

  Tensor<float> v(Shape{3, 4, 5});
  v.at({1, 2, 3}) = 1.0f;
  const auto m = project_volume(v, ProjectionMode::max);
  for (std::size_t l = 0; l < 3; ++l)
    for (std::size_t w = 0; w < 4; ++w) CHECK(m.at({l, w}) == ((l == 1 && w == 2) ? 1.0f : 0.0f));

  SplitMix64 rng(3);
  const auto r = oracle::random_tensor<float>(Shape{5, 6, 7}, rng);
  const auto mean = project_volume(r, ProjectionMode::mean);
  const auto pooled = pool_axis(r, 2, PoolMode::avg);
  CHECK(mean.data().size() == pooled.data().size());
  for (std::size_t i = 0; i < mean.size(); ++i) CHECK(mean[i] == pooled[i]);
  const auto mean64 = oracle::pool(r.cast<double>(), 2, PoolMode::avg, 7);
  for (std::size_t i = 0; i < mean.size(); ++i) CHECK(mean[i] == doctest::Approx(mean64[i]).epsilon(1e-6));

  CHECK_THROWS_AS(project_volume(Tensor<float>(Shape{2, 2}), ProjectionMode::mean), ContractError);
}

TEST_CASE("gen_dataset") {
  test::TempDir dir("synth");
  SynthSpec spec;
  spec.dims = {16, 16, 16};
  const auto entries = gen_dataset(spec, SplitCounts{24, 4, 8}, dir.path() / "a");
  CHECK(entries.size() == 36);

  std::size_t volumes = 0, masks = 0;
  for (const auto& e : fs::recursive_directory_iterator(dir.path() / "a")) {
    if (e.path().extension() == ".rvv") ++volumes;
    if (e.path().extension() == ".pgm") ++masks;
  }
  CHECK(volumes == 36);
  CHECK(masks == 36);
  CHECK(fs::exists(dir.path() / "a" / "manifest.json"));

  std::set<std::uint64_t> indices;
  std::map<std::string, std::size_t> per_split;
  for (const auto& e : entries) {
    indices.insert(e.index);
    ++per_split[e.split];
  }
  CHECK(indices.size() == 36);
  CHECK(per_split["train"] == 24);
  CHECK(per_split["val"] == 4);
  CHECK(per_split["test"] == 8);

  // Stored samples decode to exactly what the generator produced.
  const auto train = load_split(dir.path() / "a", "train");
  REQUIRE(train.size() == 24);
  const auto direct = gen_sample(spec, train[5].entry.index);
  CHECK(train[5].sample.volume == direct.stacked());
  CHECK(train[5].sample.gt == direct.gt);

  gen_dataset(spec, SplitCounts{24, 4, 8}, dir.path() / "b");
  CHECK(sha256_hex(read_file(dir.path() / "a" / "manifest.json")) ==
        sha256_hex(read_file(dir.path() / "b" / "manifest.json")));
  SynthSpec other = spec;
  other.seed = 99;
  gen_dataset(other, SplitCounts{24, 4, 8}, dir.path() / "c");
  CHECK(sha256_hex(read_file(dir.path() / "a" / "manifest.json")) !=
        sha256_hex(read_file(dir.path() / "c" / "manifest.json")));

  CHECK_THROWS_AS(gen_dataset(spec, SplitCounts{0, 1, 1}, dir.path() / "d"), ContractError);
  CHECK_THROWS_AS(gen_dataset(spec, SplitCounts{1, 1, 0}, dir.path() / "d"), ContractError);
}

TEST_CASE("gen_dataset accepts the full-size split ratio") {
  test::TempDir dir("synth-ratio");
  SynthSpec spec;
  spec.dims = {8, 8, 8};
  spec.vessels = 2;
  const auto entries = gen_dataset(spec, SplitCounts{180, 20, 100}, dir.path());
  CHECK(entries.size() == 300);
  CHECK(read_dataset_manifest(dir.path()).size() == 300);
  CHECK(load_split(dir.path(), "val").size() == 20);
}
