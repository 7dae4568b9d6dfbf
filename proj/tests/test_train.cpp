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
#include <set>

#include "paenet/gradcheck.hpp"
#include "paenet/rng.hpp"
#include "paenet/train.hpp"
#include "support/oracles.hpp"

using namespace paenet;

namespace {

PaenetConfig tiny_config(std::uint64_t seed = 3) {
  PaenetConfig c;
  c.input_depth = 8;
  c.stages = {{4, 2}, {4, 4}};
  c.depth2d = 2;
  c.base_channels = 4;
  c.seed = seed;
  return c;
}

std::vector<TrainSample> tiny_data(std::size_t n, std::uint64_t seed) {
  SplitMix64 rng(seed);
  std::vector<TrainSample> data;
  for (std::size_t i = 0; i < n; ++i) {
    TrainSample s{oracle::random_tensor<float>(Shape{2, 12, 10, 8}, rng, 0.0, 1.0), BinaryMask(Shape{12, 10})};
    for (auto& v : s.gt.data()) v = rng.uniform() < 0.3 ? 1 : 0;
    // Make the mask learnable from the flow channel.
    for (std::size_t l = 0; l < 12; ++l)
      for (std::size_t w = 0; w < 10; ++w)
        for (std::size_t h = 0; h < 8; ++h) s.volume.at({1, l, w, h}) = s.gt.at({l, w}) ? 0.8f : 0.1f;
    data.push_back(std::move(s));
  }
  return data;
}

TrainConfig tiny_train() {
  TrainConfig cfg;
  cfg.batch = 2;
  cfg.max_iters = 6;
  cfg.patch = {8, 8, 8};
  cfg.seed = 11;
  cfg.lr0 = 1e-2;
  return cfg;
}

}  // namespace

TEST_CASE("poly_lr") {
  TrainConfig cfg;
  CHECK(poly_lr(0, cfg) == doctest::Approx(3e-4).epsilon(1e-15));
  CHECK(poly_lr(cfg.max_iters, cfg) == 0.0);
  CHECK(std::abs(poly_lr(cfg.max_iters / 2, cfg) - 3e-4 * std::pow(0.5, 0.9)) < 1e-18);
  CHECK(std::abs(poly_lr(cfg.max_iters / 2, cfg) - 1.6077e-4) < 1e-8);
  for (std::size_t i = 1; i <= cfg.max_iters; ++i) CHECK(poly_lr(i, cfg) < poly_lr(i - 1, cfg));
  CHECK_THROWS_AS(poly_lr(cfg.max_iters + 1, cfg), ContractError);

  CHECK(TrainConfig::full_scale().max_iters == 25000);
  CHECK(TrainConfig::full_scale().patch == Dims3{100, 100, 160});
  CHECK(cfg.batch == 4);
  CHECK(cfg.lr0 == 3e-4);
}

TEST_CASE("train config validation") {
  const PaenetConfig net;
  TrainConfig cfg;
  CHECK_NOTHROW(cfg.validate(net));
  cfg.patch[2] = 32;
  CHECK_THROWS_AS(cfg.validate(net), ContractError);
  cfg = TrainConfig{};
  cfg.lr0 = 0.0;
  CHECK_THROWS_AS(cfg.validate(net), ContractError);
  cfg = TrainConfig{};
  cfg.batch = 0;
  CHECK_THROWS_AS(cfg.validate(net), ContractError);
  cfg = TrainConfig{};
  cfg.power = -1.0;
  CHECK_THROWS_AS(cfg.validate(net), ContractError);
}

TEST_CASE("bce_loss closed forms") {
  BinaryMask gt(Shape{4, 4});
  for (std::size_t i = 0; i < gt.size(); i += 3) gt[i] = 1;
  CHECK(bce_loss(Tensor<float>(Shape{4, 4}, 0.5f), gt) == doctest::Approx(std::log(2.0)).epsilon(1e-12));

  const double saturated = bce_loss(Tensor<float>(Shape{4, 4}, 0.0f), BinaryMask(Shape{4, 4}, 1));
  CHECK(std::isfinite(saturated));
  CHECK(saturated == doctest::Approx(-std::log(kProbClamp)).epsilon(1e-9));
  CHECK(bce_loss(Tensor<float>(Shape{2, 2}, 1.0f), BinaryMask(Shape{2, 2}, 1)) ==
        doctest::Approx(-std::log(1.0 - kProbClamp)).epsilon(1e-6));

  // Independent per-pixel evaluation.
  SplitMix64 rng(5);
  const auto p = oracle::random_tensor<float>(Shape{6, 5}, rng, 0.0, 1.0);
  double expect = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    const double q = std::clamp(static_cast<double>(p[i]), 1e-7, 1.0 - 1e-7);
    const bool y = i % 4 == 1;
    expect -= y ? std::log(q) : std::log(1.0 - q);
  }
  BinaryMask m(Shape{6, 5});
  for (std::size_t i = 0; i < m.size(); ++i) m[i] = i % 4 == 1;
  CHECK(bce_loss(p, m) == doctest::Approx(expect / 30.0).epsilon(1e-12));

  CHECK_THROWS_AS(bce_loss(Tensor<float>(Shape{2, 3}), BinaryMask(Shape{3, 2})), ContractError);
}

TEST_CASE("bce_loss gradient") {
  SplitMix64 rng(9);
  BinaryMask gt(Shape{5, 7});
  for (auto& v : gt.data()) v = rng.uniform() < 0.5;
  const auto p = oracle::random_tensor<double>(Shape{5, 7}, rng, 0.02, 0.98);
  const auto r = grad_check(
      [&](Tape<double>&, std::span<const Var<double>> in) { return bce_loss(in[0], gt); }, {p});
  CHECK(r.passed);
  CHECK(r.max_error <= 1e-4);
}

TEST_CASE("adam_step") {
  ParamSet<float> params;
  params.add("w", Tensor<float>(Shape{3}, std::vector<float>{0.5f, -1.0f, 2.0f}));
  params.add("running", Tensor<float>(Shape{2}, 7.0f), false);
  const ParamSet<float> before = params;

  SUBCASE("zero gradient is a fixpoint") {
    AdamState state;
    const std::vector<Tensor<float>> grads{Tensor<float>(Shape{3})};
    for (int i = 0; i < 5; ++i) adam_step(params, grads, state, 1e-3);
    CHECK(params == before);
    CHECK(state.step == 5);
  }
  SUBCASE("first step") {
    AdamState state;
    const std::vector<Tensor<float>> grads{Tensor<float>(Shape{3}, std::vector<float>{0.01f, -0.01f, 0.0f})};
    adam_step(params, grads, state, 1e-3);
    const double g = 0.01f;
    const double expect = -1e-3 * g / (g + 1e-8);
    CHECK(std::abs((params.at("w")[0] - 0.5f) - expect) < 1e-7);
    CHECK(std::abs((params.at("w")[0] - 0.5f) + 9.99e-4) < 2e-6);
    CHECK(std::abs((params.at("w")[1] + 1.0f) + expect) < 1e-7);
    CHECK(params.at("w")[2] == 2.0f);
    CHECK(params.at("running") == before.at("running"));
    CHECK(state.m[0].shape() == Shape{3});
  }
  SUBCASE("independent reference over several steps") {
    AdamState state;
    SplitMix64 rng(2);
    std::array<double, 3> p{0.5, -1.0, 2.0}, m{}, v{};
    for (int t = 1; t <= 4; ++t) {
      const auto g = oracle::random_tensor<float>(Shape{3}, rng);
      adam_step(params, std::vector<Tensor<float>>{g}, state, 1e-2);
      for (int i = 0; i < 3; ++i) {
        m[i] = 0.9 * m[i] + 0.1 * g[i];
        v[i] = 0.999 * v[i] + 0.001 * double(g[i]) * g[i];
        p[i] -= 1e-2 * (m[i] / (1 - std::pow(0.9, t))) / (std::sqrt(v[i] / (1 - std::pow(0.999, t))) + 1e-8);
      }
    }
    for (int i = 0; i < 3; ++i) CHECK(params.at("w")[i] == doctest::Approx(p[i]).epsilon(1e-5));
  }
  SUBCASE("determinism and contract") {
    ParamSet<float> other = params;
    AdamState s1, s2;
    const std::vector<Tensor<float>> grads{Tensor<float>(Shape{3}, std::vector<float>{0.3f, -0.2f, 0.1f})};
    adam_step(params, grads, s1, 1e-3);
    adam_step(other, grads, s2, 1e-3);
    CHECK(params == other);
    CHECK(s1 == s2);
    CHECK_THROWS_AS(adam_step(params, std::vector<Tensor<float>>{}, s1, 1e-3), ContractError);
  }
}

TEST_CASE("crop_patches") {
  const auto full = crop_patches({400, 400, 640}, {100, 100, 160});
  CHECK(full.origins.size() == 64);

  CHECK(crop_patches({9, 7, 8}, {9, 7, 8}).origins.size() == 1);

  const auto flush = crop_patches({10, 10, 10}, {4, 4, 4});
  CHECK(flush.origins.size() == 27);
  std::array<std::set<std::size_t>, 3> per_axis;
  for (const auto& o : flush.origins)
    for (std::size_t a = 0; a < 3; ++a) per_axis[a].insert(o[a]);
  for (const auto& s : per_axis) CHECK(s == std::set<std::size_t>{0, 3, 6});

  CHECK_THROWS_AS(crop_patches({10, 10, 10}, {11, 4, 4}), ContractError);

  // Property: every voxel is covered and every window stays inside.
  SplitMix64 rng(4);
  for (int trial = 0; trial < 100; ++trial) {
    Dims3 dims, patch;
    for (std::size_t a = 0; a < 3; ++a) {
      dims[a] = 1 + rng.below(13);
      patch[a] = 1 + rng.below(dims[a]);
    }
    const auto g = crop_patches(dims, patch);
    std::vector<int> cover(dims[0] * dims[1] * dims[2], 0);
    for (const auto& o : g.origins) {
      for (std::size_t a = 0; a < 3; ++a) REQUIRE(o[a] + patch[a] <= dims[a]);
      for (std::size_t i = 0; i < patch[0]; ++i)
        for (std::size_t j = 0; j < patch[1]; ++j)
          for (std::size_t k = 0; k < patch[2]; ++k) ++cover[((o[0] + i) * dims[1] + o[1] + j) * dims[2] + o[2] + k];
    }
    for (int c : cover) CHECK(c >= 1);
  }
}

TEST_CASE("crop_volume and crop_mask") {
  SplitMix64 rng(6);
  const auto v = oracle::random_tensor<float>(Shape{2, 5, 6, 7}, rng);
  const auto c = crop_volume(v, {1, 2, 3}, {3, 4, 2});
  CHECK(c.shape() == Shape{2, 3, 4, 2});
  for (std::size_t ch = 0; ch < 2; ++ch)
    for (std::size_t i = 0; i < 3; ++i)
      for (std::size_t j = 0; j < 4; ++j)
        for (std::size_t k = 0; k < 2; ++k) CHECK(c.at({ch, i, j, k}) == v.at({ch, 1 + i, 2 + j, 3 + k}));
  CHECK_THROWS_AS(crop_volume(v, {3, 0, 0}, {3, 1, 1}), ContractError);

  BinaryMask m(Shape{5, 6});
  for (std::size_t i = 0; i < m.size(); ++i) m[i] = i % 3 == 0;
  const auto cm = crop_mask(m, {2, 1, 0}, {3, 4, 1});
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t j = 0; j < 4; ++j) CHECK(cm.at({i, j}) == m.at({2 + i, 1 + j}));
}

TEST_CASE("stitch_patches") {
  SUBCASE("two overlapping patches average") {
    PatchGrid grid{{4, 6, 1}, {4, 4, 1}, {{0, 0, 0}, {0, 2, 0}}};
    const std::vector<PatchPrediction> preds{{{0, 0, 0}, Tensor<float>(Shape{4, 4}, 0.0f)},
                                             {{0, 2, 0}, Tensor<float>(Shape{4, 4}, 1.0f)}};
    const auto out = stitch_patches(preds, grid, {4, 6});
    for (std::size_t i = 0; i < 4; ++i) {
      CHECK(out.at({i, 0}) == 0.0f);
      CHECK(out.at({i, 1}) == 0.0f);
      CHECK(out.at({i, 2}) == 0.5f);
      CHECK(out.at({i, 3}) == 0.5f);
      CHECK(out.at({i, 4}) == 1.0f);
      CHECK(out.at({i, 5}) == 1.0f);
    }
  }
  SUBCASE("coverage gap") {
    PatchGrid grid{{4, 6, 1}, {4, 2, 1}, {{0, 0, 0}}};
    const std::vector<PatchPrediction> preds{{{0, 0, 0}, Tensor<float>(Shape{4, 2}, 0.3f)}};
    CHECK_THROWS_AS(stitch_patches(preds, grid, {4, 6}), ContractError);
  }
  SUBCASE("identity round trip") {
    SplitMix64 rng(8);
    for (const auto& [dims, patch] : std::vector<std::pair<Dims3, Dims3>>{
             {{12, 12, 3}, {4, 4, 3}}, {{10, 13, 2}, {4, 5, 2}}, {{7, 9, 1}, {7, 2, 1}}}) {
      const auto src = oracle::random_tensor<float>(Shape{dims[0], dims[1]}, rng);
      const auto grid = crop_patches(dims, patch);
      std::vector<PatchPrediction> preds;
      for (const auto& o : grid.origins) {
        Tensor<float> map(Shape{patch[0], patch[1]});
        for (std::size_t i = 0; i < patch[0]; ++i)
          for (std::size_t j = 0; j < patch[1]; ++j) map.at({i, j}) = src.at({o[0] + i, o[1] + j});
        preds.push_back({o, map});
      }
      const auto out = stitch_patches(preds, grid, {dims[0], dims[1]});
      CHECK(oracle::max_abs_diff(out, src) <= 1e-7);
      if (dims[0] % patch[0] == 0 && dims[1] % patch[1] == 0) CHECK(out == src);
    }
  }
}

TEST_CASE("infer_volume") {
  SUBCASE("constant stub") {
    SplitMix64 rng(1);
    const auto v = oracle::random_tensor<float>(Shape{2, 20, 13, 8}, rng);
    const PatchForward stub = [](const Tensor<float>& x) { return Tensor<float>(Shape{x.extent(1), x.extent(2)}, 0.3f); };
    const auto out = infer_volume(stub, v, {8, 8, 8});
    CHECK(out.shape() == Shape{20, 13});
    for (float x : out.data()) CHECK(x == 0.3f);
  }
  SUBCASE("patch equal to the volume") {
    const Paenet net = build_paenet(tiny_config());
    SplitMix64 rng(2);
    const auto v = oracle::random_tensor<float>(Shape{2, 8, 8, 8}, rng, 0.0, 1.0);
    const auto whole = infer_volume(net, v, {8, 8, 8});
    CHECK(whole == paenet_forward(net, v));
    const auto tiled = infer_volume(net, oracle::random_tensor<float>(Shape{2, 12, 16, 8}, rng, 0.0, 1.0), {8, 8, 8});
    CHECK(tiled.shape() == Shape{12, 16});
    for (float x : tiled.data()) CHECK((x > 0.0f && x < 1.0f));
  }
}

TEST_CASE("format_log_line") {
  CHECK(format_log_line({120, 2.85e-4, 0.4312}) == "iter=120 lr=2.85e-04 loss=0.4312");
  CHECK(format_log_line({0, 3e-4, 0.69314718}) == "iter=0 lr=3.00e-04 loss=0.6931");
}

TEST_CASE("train_loop determinism, resume and hooks") {
  const auto data = tiny_data(3, 21);
  const TrainConfig cfg = tiny_train();

  Paenet a = build_paenet(tiny_config());
  TrainState sa = initial_train_state(cfg);
  std::vector<std::string> lines;
  TrainHooks hooks;
  hooks.on_iteration = [&](const TrainRecord& r) { lines.push_back(format_log_line(r)); };
  const auto ra = train_loop(cfg, a, data, sa, hooks);
  REQUIRE(ra.size() == cfg.max_iters);
  CHECK(lines.size() == cfg.max_iters);
  CHECK(lines.front().rfind("iter=0 lr=1.00e-02 loss=", 0) == 0);
  CHECK(sa.iteration == cfg.max_iters);
  CHECK(sa.adam.step == cfg.max_iters);
  for (std::size_t i = 0; i < ra.size(); ++i) {
    CHECK(ra[i].iter == i);
    CHECK(ra[i].lr == poly_lr(i, cfg));
    CHECK(std::isfinite(ra[i].loss));
  }
  CHECK(!(a.params() == build_paenet(tiny_config()).params()));

  // Same seed, same everything.
  Paenet b = build_paenet(tiny_config());
  TrainState sb = initial_train_state(cfg);
  const auto rb = train_loop(cfg, b, data, sb);
  CHECK(a.params() == b.params());
  CHECK(sa == sb);
  for (std::size_t i = 0; i < ra.size(); ++i) CHECK(ra[i].loss == rb[i].loss);

  // Interrupted at iteration 3 and resumed from the saved state.
  Paenet c = build_paenet(tiny_config());
  TrainState sc = initial_train_state(cfg);
  TrainConfig every = cfg;
  every.checkpoint_every = 3;
  std::vector<std::size_t> checkpoints;
  TrainHooks stop;
  stop.stop_at = 3;
  stop.on_checkpoint = [&](const TrainState& s) { checkpoints.push_back(s.iteration); };
  train_loop(every, c, data, sc, stop);
  CHECK(sc.iteration == 3);
  CHECK(checkpoints == std::vector<std::size_t>{3});
  Paenet resumed = c;
  TrainState sr = sc;
  const auto tail = train_loop(cfg, resumed, data, sr);
  REQUIRE(tail.size() == 3);
  CHECK(tail[0].loss == ra[3].loss);
  CHECK(resumed.params() == a.params());
  CHECK(sr == sa);

  // A different seed draws different crops.
  TrainConfig other = cfg;
  other.seed = 12;
  Paenet d = build_paenet(tiny_config());
  TrainState sd = initial_train_state(other);
  const auto rd = train_loop(other, d, data, sd);
  CHECK(rd[0].loss != ra[0].loss);
}

TEST_CASE("train_loop reduces the loss on a learnable toy problem") {
  const auto data = tiny_data(4, 5);
  TrainConfig cfg = tiny_train();
  cfg.max_iters = 40;
  Paenet net = build_paenet(tiny_config(7));
  TrainState s = initial_train_state(cfg);
  const auto r = train_loop(cfg, net, data, s);
  double first = 0.0, last = 0.0;
  for (std::size_t i = 0; i < 10; ++i) {
    first += r[i].loss;
    last += r[r.size() - 1 - i].loss;
  }
  CHECK(last < first);
}

TEST_CASE("train_loop contracts") {
  const auto data = tiny_data(1, 1);
  TrainConfig cfg = tiny_train();
  Paenet net = build_paenet(tiny_config());
  TrainState s = initial_train_state(cfg);
  CHECK_THROWS_AS(train_loop(cfg, net, std::span<const TrainSample>(), s), ContractError);
  cfg.patch = {13, 8, 8};
  CHECK_THROWS_AS(train_loop(cfg, net, data, s), ContractError);
  cfg = tiny_train();
  auto bad = data;
  bad[0].volume.at({0, 0, 0, 0}) = std::numeric_limits<float>::quiet_NaN();
  bad[0].volume.at({1, 0, 0, 0}) = std::numeric_limits<float>::quiet_NaN();
  std::vector<TrainSample> all_nan = bad;
  for (auto& v : all_nan[0].volume.data()) v = std::numeric_limits<float>::quiet_NaN();
  CHECK_THROWS_AS(train_loop(cfg, net, all_nan, s), NumericError);
}
