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

#include "paenet/network.hpp"
#include "support/oracles.hpp"

using namespace paenet;
using oracle::random_tensor;

namespace {

template <typename T>
void zero_trainable(ParamSet<T>& params) {
  for (auto& e : params.entries())
    if (e.trainable)
      for (auto& v : e.value.data()) v = T(0);
}

template <typename T>
Tensor<T> run_qam(ParamSet<T>& params, const std::vector<Tensor<T>>& xs, NormMode mode,
                  BlockTrace<T>* trace = nullptr) {
  Tape<T> tape(false);
  const Scope<T> scope(tape, params, mode, false);
  Batch<T> in;
  for (const auto& x : xs) in.push_back(tape.constant(x));
  return qam_forward(scope.sub("qam"), QamParams{}, std::span<const Var<T>>(in), trace)[0].value();
}

template <typename T>
Tensor<T> run_apm(ParamSet<T>& params, const Tensor<T>& x, std::size_t pool, BlockTrace<T>* trace = nullptr) {
  Tape<T> tape(false);
  const Scope<T> scope(tape, params, NormMode::train, false);
  return apm_forward(scope.sub("apm"), ApmParams::for_channels(x.extent(0)), tape.constant(x), pool, trace).value();
}

enum class PsaPart { spatial, channel, both };

template <typename T>
Tensor<T> run_psa(ParamSet<T>& params, const Tensor<T>& x, PsaPart part, BlockTrace<T>* trace = nullptr) {
  Tape<T> tape(false);
  const Scope<T> scope(tape, params, NormMode::train, false);
  const auto p = PsaParams::for_channels(x.extent(0));
  const Var<T> v = tape.constant(x);
  const Scope<T> s = scope.sub("psa");
  switch (part) {
    case PsaPart::spatial: return psa_spatial(s, p, v, trace).value();
    case PsaPart::channel: return psa_channel(s, p, v, trace).value();
    default: return psa_forward(s, p, v, trace).value();
  }
}

std::size_t conv_count(std::size_t taps, std::size_t in, std::size_t out) {
  return taps * in * out + out;
}

// Parameter bookkeeping derived from the layer list, independent of the
// declaration code.
std::size_t expected_parameters(const PaenetConfig& c) {
  std::size_t n = 0;
  std::size_t in = c.input_channels;
  std::size_t planar = c.stages.back().channels;
  for (std::size_t s = 0; s < c.stages.size(); ++s) {
    const std::size_t ch = c.stages[s].channels;
    n += conv_count(27, in, ch) + 4 * ch + conv_count(27, ch, ch) + 4 * ch;
    if (c.toggles.qam) n += 4 * (conv_count(343, 2, 1) + 4);
    if (c.toggles.apm) {
      const std::size_t h = ch / 2, q = (ch + 3) / 4;
      n += conv_count(27, h, h) + conv_count(125, h, h) + conv_count(1, ch, q) + conv_count(1, q, ch);
    }
    if (c.toggles.ffm && s + 1 < c.stages.size()) planar += 2 * ch;
    in = ch;
  }
  n += conv_count(1, planar, c.base_channels);
  for (std::size_t i = 0; i < c.depth2d; ++i) {
    const std::size_t ch = c.base_channels << i;
    const std::size_t prev = i == 0 ? c.base_channels : ch / 2;
    n += conv_count(9, prev, ch) + 4 * ch + conv_count(9, ch, ch) + 4 * ch;
    if (c.toggles.psa)
      n += 2 * conv_count(1, ch, ch / 2) + conv_count(1, ch, 1) + conv_count(1, ch, ch / 2) + conv_count(1, ch / 2, ch) +
           2 * ch;
  }
  for (std::size_t i = 0; i + 1 < c.depth2d; ++i) {
    const std::size_t ch = c.base_channels << i;
    n += conv_count(9, 2 * ch, ch) + 4 * ch + conv_count(9, 2 * ch, ch) + 4 * ch + conv_count(9, ch, ch) + 4 * ch;
  }
  return n + conv_count(1, c.base_channels, 1);
}

PaenetConfig small_config(SplitMix64& rng, const ModuleToggles& toggles) {
  PaenetConfig c;
  c.toggles = toggles;
  c.input_depth = 8;
  c.stages = {{2 + 2 * rng.below(2), 2}, {2 + 2 * rng.below(3), 4}};
  c.depth2d = 1 + rng.below(2);
  c.base_channels = 2 + 2 * rng.below(2);
  c.seed = rng.next();
  return c;
}

}  // namespace

TEST_CASE("zpool") {
  CHECK(zpool(Tensor<float>(Shape{3, 2, 2, 2}, 1.5f)) == Tensor<float>(Shape{2, 2, 2, 2}, 1.5f));
  Tensor<double> x(Shape{2, 1, 1, 1}, std::vector<double>{1, 3});
  const auto z = zpool(x);
  CHECK(z.shape() == Shape{2, 1, 1, 1});
  CHECK(z[0] == 3.0);
  CHECK(z[1] == 2.0);
  CHECK_THROWS_AS(zpool(Tensor<double>(Shape{2, 2, 2})), ContractError);
}

TEST_CASE("QAM") {
  SplitMix64 rng(1);
  ParamSet<float> params;
  QamParams{}.declare(params, "qam", rng);
  const auto x = random_tensor<float>({2, 4, 4, 8}, rng, -3, 3);

  SUBCASE("zero parameters give half the input") {
    zero_trainable(params);
    for (auto& e : params.entries())
      if (e.name.find(".gamma") != std::string::npos) e.value = Tensor<float>(e.value.shape(), 1.0f);
    for (NormMode mode : {NormMode::eval, NormMode::train}) {
      const auto y = run_qam(params, {x, random_tensor<float>({2, 4, 4, 8}, rng)}, mode);
      CHECK(y.shape() == x.shape());
      for (std::size_t i = 0; i < x.size(); ++i) CHECK(std::abs(y[i] - 0.5f * x[i]) <= 1e-6f);
    }
  }
  SUBCASE("gates bound the output by the input") {
    BlockTrace<float> trace;
    const auto y = run_qam(params, {x, random_tensor<float>({2, 4, 4, 8}, rng, -3, 3)}, NormMode::train, &trace);
    CHECK(y.shape() == x.shape());
    for (std::size_t i = 0; i < x.size(); ++i) CHECK(std::abs(y[i]) <= std::abs(x[i]));
    CHECK(trace.size() == 4);
    for (const auto& [key, map] : trace)
      for (float v : map.data()) CHECK((v > 0.0f && v < 1.0f));
  }
  SUBCASE("rank check") {
    CHECK_THROWS_AS(run_qam(params, {Tensor<float>(Shape{2, 4, 4})}, NormMode::eval), ContractError);
  }
}

TEST_CASE("APM") {
  SUBCASE("uniform closed form") {
    SplitMix64 rng(2);
    ParamSet<float> params;
    ApmParams::for_channels(2).declare(params, "apm", rng);
    zero_trainable(params);
    const auto y = run_apm(params, Tensor<float>(Shape{2, 3, 3, 8}, 1.0f), 4);
    CHECK(y.shape() == Shape{2, 3, 3, 4});
    for (float v : y.data()) CHECK(std::abs(v - 0.5f) <= 1e-6f);
  }
  SUBCASE("random parameters") {
    SplitMix64 rng(3);
    ParamSet<float> params;
    ApmParams::for_channels(4).declare(params, "apm", rng);
    for (auto& e : params.entries())
      for (auto& v : e.value.data()) v = static_cast<float>(rng.uniform(-1, 1));
    const auto x = random_tensor<float>({4, 3, 5, 8}, rng, -2, 2);
    BlockTrace<float> trace;
    const auto y = run_apm(params, x, 2, &trace);
    CHECK(y.shape() == Shape{4, 3, 5, 2});

    const auto& depth = trace.at("depth_weight");
    const auto sums = sum_axis(depth, 0);
    for (float v : sums.data()) CHECK(std::abs(v - 1.0f) <= 1e-6f);
    const auto csum = sum_axis(trace.at("channel_weight"), 1);
    CHECK(std::abs(csum[0] - 1.0f) <= 1e-6f);

    // |y| <= max over slabs of |x|.
    const auto grouped = regroup_axis(x, 3, 4);
    for (std::size_t c = 0; c < 4; ++c)
      for (std::size_t l = 0; l < 3; ++l)
        for (std::size_t w = 0; w < 5; ++w)
          for (std::size_t p = 0; p < 2; ++p) {
            float bound = 0.0f;
            for (std::size_t g = 0; g < 4; ++g) bound = std::max(bound, std::abs(grouped.at({g, c, l, w, p})));
            CHECK(std::abs(y.at({c, l, w, p})) <= bound * (1 + 1e-6f));
          }
  }
  SUBCASE("single group keeps the input times the channel weight") {
    SplitMix64 rng(4);
    ParamSet<float> params;
    ApmParams::for_channels(2).declare(params, "apm", rng);
    const auto x = random_tensor<float>({2, 2, 2, 3}, rng);
    BlockTrace<float> trace;
    const auto y = run_apm(params, x, 3, &trace);
    const auto& cw = trace.at("channel_weight");
    for (std::size_t c = 0; c < 2; ++c)
      for (std::size_t i = 0; i < 12; ++i) CHECK(std::abs(y[c * 12 + i] - x[c * 12 + i] * cw[c]) <= 1e-6f);
  }
  SUBCASE("contract violations") {
    SplitMix64 rng(5);
    ParamSet<float> params;
    ApmParams::for_channels(2).declare(params, "apm", rng);
    CHECK_THROWS_AS(run_apm(params, Tensor<float>(Shape{2, 2, 2, 7}), 2), ContractError);
    CHECK_THROWS_AS(ApmParams::for_channels(3), ContractError);
  }
}

TEST_CASE("unidirectional pooling") {
  SplitMix64 rng(6);
  const auto x = random_tensor<float>({2, 3, 3, 8}, rng);
  Tape<float> tape(false);
  const auto y = unidirectional_pool(tape.constant(x), 2).value();
  CHECK(y.shape() == Shape{2, 3, 3, 2});
  for (std::size_t c = 0; c < 2; ++c)
    for (std::size_t p = 0; p < 2; ++p) {
      float m = x.at({c, 1, 2, p});
      for (std::size_t g = 1; g < 4; ++g) m = std::max(m, x.at({c, 1, 2, g * 2 + p}));
      CHECK(y.at({c, 1, 2, p}) == m);
    }
}

TEST_CASE("FFM") {
  SplitMix64 rng(7);
  const auto x3 = random_tensor<float>({2, 4, 5, 6}, rng);
  const auto x2 = random_tensor<float>({3, 4, 5}, rng);
  const auto f = ffm_fuse(x3, x2);
  CHECK(f.shape() == Shape{7, 4, 5});
  CHECK(slice_axis(f, 0, 0, 3) == x2);
  for (std::size_t c = 0; c < 2; ++c)
    for (std::size_t i = 0; i < 20; ++i) CHECK(f[(5 + c) * 20 + i] >= f[(3 + c) * 20 + i]);
  const auto flat = ffm_fuse(Tensor<float>(Shape{2, 4, 5, 6}, 0.75f), x2);
  for (std::size_t i = 60; i < flat.size(); ++i) CHECK(flat[i] == 0.75f);
  CHECK_THROWS_AS(ffm_fuse(x3, Tensor<float>(Shape{3, 4, 4})), ContractError);
}

TEST_CASE("PSA") {
  SplitMix64 rng(8);
  ParamSet<float> params;
  PsaParams::for_channels(4).declare(params, "psa", rng);
  const auto x = random_tensor<float>({4, 5, 6}, rng, -3, 3);

  SUBCASE("zero parameters give the identity") {
    zero_trainable(params);
    const auto y = run_psa(params, x, PsaPart::both);
    for (std::size_t i = 0; i < x.size(); ++i) CHECK(std::abs(y[i] - x[i]) <= 1e-6f);
    const auto s = run_psa(params, x, PsaPart::spatial);
    const auto c = run_psa(params, x, PsaPart::channel);
    for (std::size_t i = 0; i < x.size(); ++i) {
      CHECK(std::abs(s[i] - 0.5f * x[i]) <= 1e-6f);
      CHECK(std::abs(c[i] - 0.5f * x[i]) <= 1e-6f);
    }
  }
  SUBCASE("bounds and map ranges") {
    for (auto& e : params.entries())
      for (auto& v : e.value.data()) v = static_cast<float>(rng.uniform(-1, 1));
    BlockTrace<float> trace;
    const auto y = run_psa(params, x, PsaPart::both, &trace);
    CHECK(y.shape() == x.shape());
    for (std::size_t i = 0; i < x.size(); ++i) CHECK(std::abs(y[i]) <= 2.0f * std::abs(x[i]));
    for (const char* key : {"spatial_map", "channel_weight"})
      for (float v : trace.at(key).data()) CHECK((v > 0.0f && v < 1.0f));
  }
  SUBCASE("single position") {
    const auto one = random_tensor<float>({4, 1, 1}, rng);
    CHECK(run_psa(params, one, PsaPart::channel).shape() == one.shape());
  }
  SUBCASE("odd channels") {
    CHECK_THROWS_AS(PsaParams::for_channels(3), ContractError);
  }
}

TEST_CASE("config") {
  const auto c = PaenetConfig::with_depth(64);
  CHECK(c.stages == std::vector<StageConfig>{{16, 4}, {32, 4}, {64, 4}});
  CHECK(c.input_channels == 2);
  CHECK_NOTHROW(c.validate());
  CHECK_THROWS_AS(PaenetConfig::with_depth(63), ContractError);
  PaenetConfig bad = c;
  bad.input_depth = 63;
  CHECK_THROWS_AS(bad.validate(), ContractError);
  bad = c;
  bad.stages[1].channels = 5;
  CHECK_THROWS_AS(bad.validate(), ContractError);

  const auto ladder = PaenetConfig::ablation_ladder();
  CHECK(ladder.size() == 5);
  CHECK(toggles_label(ladder[0]) == "baseline");
  CHECK(toggles_label(ladder[4]) == "apm+qam+ffm+psa");
}

TEST_CASE("manifest bookkeeping") {
  for (const auto& toggles : PaenetConfig::ablation_ladder()) {
    PaenetConfig c = PaenetConfig::with_depth(64);
    c.toggles = toggles;
    const Paenet net = build_paenet(c);
    std::size_t sum = 0;
    for (const auto& e : net.manifest()) sum += numel(e.shape);
    CHECK(sum == net.parameter_count());
    CHECK(sum == expected_parameters(c));
    CHECK(net.manifest().size() == net.params().size());
  }
}

TEST_CASE("initialization is seeded") {
  PaenetConfig c = PaenetConfig::with_depth(16);
  CHECK(build_paenet(c).params() == build_paenet(c).params());
  PaenetConfig d = c;
  d.seed = 99;
  CHECK_FALSE(build_paenet(c).params() == build_paenet(d).params());
  const Paenet net = build_paenet(c);
  for (const auto& e : net.params().entries()) {
    if (e.name.ends_with(".weight") && e.value.rank() >= 4) {
      const double bound = std::sqrt(6.0 / double(e.value.size() / e.value.extent(0)));
      for (float v : e.value.data()) CHECK(std::abs(v) <= bound);
    }
    if (e.name.ends_with(".bias")) CHECK(e.value == Tensor<float>(e.value.shape()));
  }
}

TEST_CASE("toy network forward") {
  const Paenet net = build_paenet(PaenetConfig::with_depth(64));
  SplitMix64 rng(9);
  const auto x = random_tensor<float>({2, 32, 32, 64}, rng, 0, 1);
  const auto y = paenet_forward(net, x);
  CHECK(y.shape() == Shape{32, 32});
  for (float v : y.data()) CHECK((v > 0.0f && v < 1.0f));
  CHECK(paenet_forward(net, x) == y);
  CHECK_THROWS_AS(paenet_forward(net, Tensor<float>(Shape{2, 32, 32, 63})), ContractError);
  CHECK_THROWS_AS(paenet_forward(net, Tensor<float>(Shape{1, 32, 32, 64})), ContractError);
}

TEST_CASE("randomized configs over the ablation ladder") {
  SplitMix64 rng(10);
  for (int round = 0; round < 3; ++round)
    for (const auto& toggles : PaenetConfig::ablation_ladder()) {
      const PaenetConfig c = small_config(rng, toggles);
      CAPTURE(toggles_label(toggles));
      const Paenet net = build_paenet(c);
      const std::size_t side = 4 + 4 * rng.below(2);
      const auto x = random_tensor<float>({2, side, side, 8}, rng, 0, 1);
      const auto y = paenet_forward(net, x);
      CHECK(y.shape() == Shape{side, side});
      for (float v : y.data()) CHECK((v > 0.0f && v < 1.0f));

      // Training-mode batch graph agrees in shape and range too.
      ParamSet<float> params = net.params();
      Tape<float> tape;
      const Scope<float> scope(tape, params, NormMode::train, true);
      const std::array<Var<float>, 2> in{tape.constant(x), tape.constant(random_tensor<float>(x.shape(), rng))};
      const auto out = paenet_graph(c, scope, std::span<const Var<float>>(in));
      CHECK(out.size() == 2);
      for (const auto& o : out)
        for (float v : o.value().data()) CHECK((v > 0.0f && v < 1.0f));
    }
}
