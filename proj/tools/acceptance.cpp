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

// Acceptance runner. Prints one PASS/FAIL line per criterion and exits
// non-zero if any selected criterion fails. Tolerances and time limits are
// pinned below.

#include <CLI11.hpp>

#include <bit>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <iostream>
#include <set>

#include "paenet/io.hpp"
#include "paenet/verify.hpp"
#include "support/oracles.hpp"

namespace {

using namespace paenet;
using oracle::max_abs_diff;
using oracle::random_tensor;

constexpr double kKernelTol = 1e-12;
constexpr double kKernelSeconds = 60;
constexpr double kGradEps = 1e-5;
constexpr double kGradTol = 1e-4;
constexpr double kFaultFloor = 1e-2;
constexpr double kGradSeconds = 120;
constexpr float kIdentityTol = 1e-6f;
constexpr double kMetricTol = 1e-4;
constexpr double kToyLossRatio = 0.5;
constexpr double kToyDice = 0.70;
constexpr double kToySeconds = 30 * 60;
constexpr std::size_t kAblationIters = 100;

struct Outcome {
  bool pass = true;
  std::string detail;

  void require(bool ok, const std::string& what) {
    if (!ok) {
      pass = false;
      detail += (detail.empty() ? "" : "; ") + ("failed: " + what);
    }
  }
  void note(const std::string& what) { detail += (detail.empty() ? "" : "; ") + what; }
};

std::string num(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

template <typename T>
void zero_trainable(ParamSet<T>& params) {
  for (auto& e : params.entries())
    if (e.trainable)
      for (auto& v : e.value.data()) v = T(0);
  for (auto& e : params.entries())
    if (e.name.ends_with(".gamma")) e.value = Tensor<T>(e.value.shape(), T(1));
}

template <typename T>
void randomize(ParamSet<T>& params, SplitMix64& rng) {
  for (auto& e : params.entries())
    for (auto& v : e.value.data()) v = static_cast<T>(rng.uniform(-1, 1));
}

Tensor<float> qam(ParamSet<float>& params, const std::vector<Tensor<float>>& xs) {
  Tape<float> tape(false);
  const Scope<float> scope(tape, params, NormMode::train, false);
  Batch<float> in;
  for (const auto& x : xs) in.push_back(tape.constant(x));
  return qam_forward(scope.sub("qam"), QamParams{}, std::span<const Var<float>>(in))[0].value();
}

Tensor<float> apm(ParamSet<float>& params, const Tensor<float>& x, std::size_t pool, BlockTrace<float>* trace) {
  Tape<float> tape(false);
  const Scope<float> scope(tape, params, NormMode::train, false);
  return apm_forward(scope.sub("apm"), ApmParams::for_channels(x.extent(0)), tape.constant(x), pool, trace).value();
}

Tensor<float> psa(ParamSet<float>& params, const Tensor<float>& x) {
  Tape<float> tape(false);
  const Scope<float> scope(tape, params, NormMode::train, false);
  return psa_forward(scope.sub("psa"), PsaParams::for_channels(x.extent(0)), tape.constant(x)).value();
}

// --- 1: kernels against nested-loop references ----------------------------------

Outcome kernel_oracles() {
  Outcome o;
  const auto t0 = std::chrono::steady_clock::now();
  SplitMix64 rng(101);
  double worst = 0.0;
  std::size_t conv3 = 0, conv2 = 0, pools = 0;
  for (int n = 0; n < 400; ++n) {
    const bool three = n % 2 == 0;
    const std::size_t cin = 1 + rng.below(4), cout = 1 + rng.below(4);
    Shape shape{cin};
    std::vector<std::size_t> kernel;
    for (int a = 0; a < (three ? 3 : 2); ++a) {
      shape.push_back(1 + rng.below(4));
      kernel.push_back(1 + 2 * rng.below(3));
    }
    const ConvSpec spec{kernel, cin, cout};
    const auto x = random_tensor<double>(shape, rng);
    const auto w = random_tensor<double>(spec.weight_shape(), rng);
    const auto b = random_tensor<double>({cout}, rng);
    const auto y = three ? conv3d(x, spec, w, b) : conv2d(x, spec, w, b);
    worst = std::max(worst, max_abs_diff(y, oracle::conv(x, spec, w, b)));
    (three ? conv3 : conv2) += 1;
  }
  for (int n = 0; n < 300; ++n) {
    const std::size_t rank = 1 + rng.below(4);
    Shape s;
    for (std::size_t a = 0; a < rank; ++a) s.push_back(1 + rng.below(4));
    const std::size_t axis = rng.below(rank);
    const std::size_t window = rng.below(2) ? kFullWindow : (s[axis] % 2 == 0 ? 2 : 1);
    const PoolMode mode = rng.below(2) ? PoolMode::max : PoolMode::avg;
    const auto t = random_tensor<double>(s, rng);
    worst = std::max(worst, max_abs_diff(pool_axis(t, axis, mode, window), oracle::pool(t, axis, mode, window)));
    ++pools;
  }
  const double secs = seconds_since(t0);
  o.note(std::to_string(conv3) + " conv3d + " + std::to_string(conv2) + " conv2d + " + std::to_string(pools) +
         " pool shapes, max error " + num("%.2e", worst) + ", " + num("%.1f", secs) + " s");
  o.require(conv3 >= 200 && conv2 >= 200 && pools >= 200, "at least 200 shapes per kernel");
  o.require(worst <= kKernelTol, "error <= 1e-12");
  o.require(secs < kKernelSeconds, "runtime < 60 s");
  return o;
}

// --- 2: gradient suite --------------------------------------------------------------

Outcome gradient_suite() {
  Outcome o;
  const auto t0 = std::chrono::steady_clock::now();
  GradCheckOptions opt;
  opt.eps = kGradEps;
  opt.tol = kGradTol;
  const auto cases = run_grad_suite("all", opt);
  std::set<std::string> groups;
  double worst = 0.0;
  for (const auto& c : cases) {
    groups.insert(c.group);
    worst = std::max(worst, c.result.max_error);
    o.require(c.result.passed && c.result.max_error <= kGradTol, c.group + "/" + c.name);
  }
  for (const char* g : {"ops", "apm", "qam", "ffm", "psa"}) o.require(groups.count(g) == 1, std::string("group ") + g);
  const auto fault = fault_injection_check(opt);
  const double secs = seconds_since(t0);
  o.note(std::to_string(cases.size()) + " cases, worst " + num("%.2e", worst) + ", fault injection " +
         num("%.2e", fault.max_error) + ", " + num("%.1f", secs) + " s");
  o.require(!fault.passed && fault.max_error > kFaultFloor, "fault injection must be detected (> 1e-2)");
  o.require(secs < kGradSeconds, "runtime < 120 s");
  return o;
}

// --- 3: closed-form block identities ------------------------------------------------

Outcome block_identities() {
  Outcome o;
  SplitMix64 rng(303);
  float worst = 0.0f;

  ParamSet<float> qp;
  QamParams{}.declare(qp, "qam", rng);
  zero_trainable(qp);
  const auto x = random_tensor<float>({3, 4, 5, 6}, rng, -3, 3);
  const auto yq = qam(qp, {x, random_tensor<float>({3, 4, 5, 6}, rng, -3, 3)});
  for (std::size_t i = 0; i < x.size(); ++i) worst = std::max(worst, std::abs(yq[i] - 0.5f * x[i]));
  o.require(worst <= kIdentityTol, "QAM = 0.5 x");

  ParamSet<float> pp;
  PsaParams::for_channels(4).declare(pp, "psa", rng);
  zero_trainable(pp);
  const auto xp = random_tensor<float>({4, 5, 6}, rng, -3, 3);
  const auto yp = psa(pp, xp);
  float wp = 0.0f;
  for (std::size_t i = 0; i < xp.size(); ++i) wp = std::max(wp, std::abs(yp[i] - xp[i]));
  o.require(wp <= kIdentityTol, "PSA = x");

  ParamSet<float> ap;
  ApmParams::for_channels(2).declare(ap, "apm", rng);
  zero_trainable(ap);
  const auto ya = apm(ap, Tensor<float>(Shape{2, 3, 3, 8}, 1.0f), 4, nullptr);
  float wa = ya.shape() == Shape{2, 3, 3, 4} ? 0.0f : 1.0f;
  for (float v : ya.data()) wa = std::max(wa, std::abs(v - 0.5f));
  o.require(wa <= kIdentityTol, "uniform APM = 0.5");

  ParamSet<float> rp;
  ApmParams::for_channels(4).declare(rp, "apm", rng);
  randomize(rp, rng);
  BlockTrace<float> trace;
  apm(rp, random_tensor<float>({4, 3, 5, 8}, rng, -2, 2), 2, &trace);
  const auto sums = sum_axis(trace.at("depth_weight"), 0);
  float ws = 0.0f;
  for (float v : sums.data()) ws = std::max(ws, std::abs(v - 1.0f));
  o.require(ws <= kIdentityTol, "APM softmax rows sum to 1");

  o.note("QAM " + num("%.1e", worst) + ", PSA " + num("%.1e", wp) + ", APM " + num("%.1e", wa) + ", row sums " +
         num("%.1e", ws));
  return o;
}

// --- 4: shape and bound invariants ------------------------------------------------

Outcome invariants() {
  Outcome o;
  SplitMix64 rng(404);
  std::size_t checked = 0;
  for (int round = 0; round < 10; ++round) {
    const Shape s{2 + rng.below(3), 2 + rng.below(4), 2 + rng.below(4), 2 + rng.below(6)};
    ParamSet<float> qp;
    QamParams{}.declare(qp, "qam", rng);
    randomize(qp, rng);
    const auto x = random_tensor<float>(s, rng, -3, 3);
    const auto y = qam(qp, {x, random_tensor<float>(s, rng, -3, 3)});
    bool ok = y.shape() == x.shape();
    for (std::size_t i = 0; ok && i < x.size(); ++i) ok = std::abs(y[i]) <= std::abs(x[i]);
    o.require(ok, "QAM |out| <= |in| for " + to_string(s));

    const std::size_t c2 = 1 + rng.below(4), c3 = 1 + rng.below(4);
    const auto x3 = random_tensor<float>({c3, s[1], s[2], s[3]}, rng);
    const auto f = ffm_fuse(x3, random_tensor<float>({c2, s[1], s[2]}, rng));
    ok = f.shape() == Shape{c2 + 2 * c3, s[1], s[2]};
    const std::size_t plane = s[1] * s[2];
    for (std::size_t c = 0; ok && c < c3; ++c)
      for (std::size_t i = 0; ok && i < plane; ++i) ok = f[(c2 + c3 + c) * plane + i] >= f[(c2 + c) * plane + i];
    o.require(ok, "FFM channels and max >= avg");

    const std::size_t pc = 2 * (1 + rng.below(3));
    ParamSet<float> pp;
    PsaParams::for_channels(pc).declare(pp, "psa", rng);
    randomize(pp, rng);
    const auto xp = random_tensor<float>({pc, s[1], s[2]}, rng, -3, 3);
    const auto yp = psa(pp, xp);
    ok = yp.shape() == xp.shape();
    for (std::size_t i = 0; ok && i < xp.size(); ++i) ok = std::abs(yp[i]) <= 2.0f * std::abs(xp[i]);
    o.require(ok, "PSA |out| <= 2|in|");
    checked += 3;
  }

  std::size_t nets = 0;
  for (int round = 0; round < 2; ++round)
    for (const auto& toggles : PaenetConfig::ablation_ladder()) {
      PaenetConfig c;
      c.toggles = toggles;
      c.input_depth = 8;
      c.stages = {{2 + 2 * rng.below(2), 2}, {2 + 2 * rng.below(3), 4}};
      c.depth2d = 1 + rng.below(2);
      c.base_channels = 2 + 2 * rng.below(2);
      c.seed = rng.next();
      const std::size_t L = 4 + 4 * rng.below(2), W = 4 + 4 * rng.below(2);
      const auto y = paenet_forward(build_paenet(c), random_tensor<float>({2, L, W, 8}, rng, 0, 1));
      bool ok = y.shape() == Shape{L, W};
      for (float v : y.data()) ok = ok && v > 0.0f && v < 1.0f;
      o.require(ok, "network output in (0,1) with shape (L,W) for " + toggles_label(toggles));
      ++nets;
    }
  const auto toy = paenet_forward(build_paenet(PaenetConfig::with_depth(64)),
                                  random_tensor<float>({2, 32, 32, 64}, rng, 0, 1));
  bool ok = toy.shape() == Shape{32, 32};
  for (float v : toy.data()) ok = ok && v > 0.0f && v < 1.0f;
  o.require(ok, "toy network output");
  o.note(std::to_string(checked) + " block cases, " + std::to_string(nets + 1) + " networks over 5 toggle sets");
  return o;
}

// --- 5: metrics -------------------------------------------------------------------

Outcome metric_identities() {
  Outcome o;
  SplitMix64 rng(505);
  double worst = 0.0;
  for (int n = 0; n < 1000; ++n) {
    const ConfusionCounts c{rng.below(50), rng.below(50), rng.below(50), rng.below(50)};
    const auto m = metrics_from_counts(c);
    worst = std::max(worst, std::abs(m[Metric::dice] - 2 * m[Metric::jac] / (1 + m[Metric::jac])));
  }
  o.require(worst <= 1e-12, "DICE = 2J/(1+J)");

  ConfusionCounts hand;
  hand.tp = 2;
  hand.fp = 1;
  hand.fn = 1;
  hand.tn = 5;
  const auto m = metrics_from_counts(hand);
  const std::array<double, kMetricCount> want{2.0 / 3, 0.5, 0.75, 2.0 / 3, 2.0 / 3};
  for (std::size_t k = 0; k < kMetricCount; ++k)
    o.require(std::abs(m.v[k] - want[k]) <= kMetricTol, std::string(kMetricNames[k]) + " hand case");

  const std::array<double, 2> pair{0.8, 0.9};
  const MeanSd agg = mean_sd(pair);
  o.require(std::abs(agg.mean - 0.85) <= kMetricTol && std::abs(agg.sd - 0.0707) <= kMetricTol, "0.85 +- 0.0707");
  o.note("identity error " + num("%.1e", worst) + ", hand case " + num("%.4f", m.v[0]) + "/" + num("%.4f", m.v[1]) +
         "/" + num("%.4f", m.v[2]) + "/" + num("%.4f", m.v[3]) + "/" + num("%.4f", m.v[4]) + ", aggregate " +
         num("%.4f", agg.mean) + " +- " + num("%.4f", agg.sd));
  return o;
}

// --- 6: patch pipeline ------------------------------------------------------------

Outcome patch_pipeline() {
  Outcome o;
  const auto full = crop_patches({400, 400, 640}, {100, 100, 160});
  o.require(full.origins.size() == 64, "64 patches for (400,400,640)/(100,100,160)");

  SplitMix64 rng(606);
  const auto volume = random_tensor<float>({2, 12, 8, 6}, rng, 0, 1);
  const PatchForward first_slice = [](const Tensor<float>& patch) {
    const Shape& s = patch.shape();
    Tensor<float> m(Shape{s[1], s[2]});
    for (std::size_t l = 0; l < s[1]; ++l)
      for (std::size_t w = 0; w < s[2]; ++w) m.at({l, w}) = patch.at({1, l, w, 0});
    return m;
  };
  const auto stitched = infer_volume(first_slice, volume, {4, 4, 6});
  o.require(stitched == first_slice(volume), "non-overlapping round trip is exact");

  const auto grid = crop_patches({10, 10, 10}, {4, 4, 4});
  std::set<std::size_t> axis0;
  for (const auto& g : grid.origins) axis0.insert(g[0]);
  o.require(grid.origins.size() == 27 && axis0 == std::set<std::size_t>{0, 3, 6}, "27 patches with origins {0,3,6}");
  o.note(std::to_string(full.origins.size()) + " patches, exact round trip, " + std::to_string(grid.origins.size()) +
         " flush-shift patches");
  return o;
}

// --- 7 and 8: training runs on the toy dataset -----------------------------------

struct ToyData {
  std::vector<TrainSample> train, test;
};

ToyData toy_data(const fs::path& root) {
  SynthSpec spec;
  spec.dims = {32, 32, 64};
  spec.seed = 7;
  gen_dataset(spec, {24, 0, 8}, root);
  ToyData d;
  for (auto& s : load_split(root, "train")) d.train.push_back(std::move(s.sample));
  for (auto& s : load_split(root, "test")) d.test.push_back(std::move(s.sample));
  return d;
}

double mean_of(std::span<const TrainRecord> r) {
  double s = 0.0;
  for (const auto& x : r) s += x.loss;
  return s / double(r.size());
}

MetricsReport evaluate(const Paenet& net, const std::vector<TrainSample>& test, Dims3 patch) {
  std::vector<EvalSample> samples;
  for (const auto& s : test) samples.push_back({infer_volume(net, s.volume, patch), s.gt});
  return evaluate_dataset(samples, kDefaultThreshold);
}

Outcome toy_end_to_end(const fs::path& work) {
  Outcome o;
  const auto t0 = std::chrono::steady_clock::now();
  const ToyData data = toy_data(work / "toy_data");
  TrainConfig cfg;
  cfg.seed = 7;
  Paenet net = build_paenet(PaenetConfig::with_depth(64));
  TrainState state = initial_train_state(cfg);
  TrainHooks hooks;
  hooks.on_iteration = [](const TrainRecord& r) {
    if (r.iter % 50 == 0) std::cerr << "  toy " << format_log_line(r) << '\n';
  };
  const auto log = train_loop(cfg, net, data.train, state, hooks);
  save_weights(work / "toy.paew", net);
  const MetricsReport report = evaluate(net, data.test, cfg.patch);
  write_report(work / "toy_report.json", report, {{}, kDefaultThreshold, "toy"});
  const double secs = seconds_since(t0);

  const std::span<const TrainRecord> all(log);
  const double first = mean_of(all.first(100));
  const double last = mean_of(all.last(100));
  const auto& dice = report.summary(Metric::dice).stats;
  o.note("loss " + num("%.4f", first) + " -> " + num("%.4f", last) + " (ratio " + num("%.3f", last / first) +
         "), test DICE " + num("%.4f", dice.mean) + " +- " + num("%.4f", dice.sd) + ", " + num("%.0f", secs) + " s");
  o.require(log.size() == 600, "600 iterations");
  o.require(last < kToyLossRatio * first, "final-100 mean loss < 0.5 x first-100");
  o.require(dice.mean >= kToyDice, "test DICE >= 0.70");
  o.require(secs <= kToySeconds, "runtime <= 30 min");
  return o;
}

Outcome ablation_structure(const fs::path& work) {
  Outcome o;
  const auto t0 = std::chrono::steady_clock::now();
  const ToyData data = toy_data(work / "ablation_data");
  TrainConfig cfg;
  cfg.seed = 8;
  cfg.max_iters = kAblationIters;
  cfg.patch = {16, 16, 64};
  std::vector<std::string> parts;
  for (const auto& toggles : PaenetConfig::ablation_ladder()) {
    const std::string label = toggles_label(toggles);
    try {
      PaenetConfig c = PaenetConfig::with_depth(64);
      c.toggles = toggles;
      Paenet net = build_paenet(c);
      TrainState state = initial_train_state(cfg);
      const auto log = train_loop(cfg, net, data.train, state);
      bool finite = log.size() == kAblationIters;
      for (const auto& r : log) finite = finite && std::isfinite(r.loss);
      o.require(finite, label + " training");
      const MetricsReport report = evaluate(net, data.test, cfg.patch);
      const fs::path path = work / ("ablation_" + label + ".json");
      write_report(path, report, {{}, kDefaultThreshold, label});
      const MetricsReport back = decode_report(read_file(path));
      o.require(back.sample_count() == data.test.size(), label + " report");
      parts.push_back(label + " " + num("%.3f", report.summary(Metric::dice).stats.mean));
    } catch (const std::exception& e) {
      o.require(false, label + ": " + e.what());
    }
  }
  std::string joined;
  for (const auto& p : parts) joined += (joined.empty() ? "" : ", ") + p;
  o.note("DICE " + joined + ", " + num("%.0f", seconds_since(t0)) + " s");
  return o;
}

// --- 9: determinism and round trips ------------------------------------------------

struct RunArtifacts {
  std::string manifest, weights;
  std::vector<std::string> log;
  std::vector<Tensor<float>> predictions;
};

RunArtifacts small_run(const fs::path& root) {
  SynthSpec spec;
  spec.dims = {16, 16, 16};
  spec.vessels = 3;
  spec.seed = 21;
  gen_dataset(spec, {4, 0, 2}, root);
  RunArtifacts a;
  a.manifest = read_file(root / "manifest.json");
  std::vector<TrainSample> train, test;
  for (auto& s : load_split(root, "train")) train.push_back(std::move(s.sample));
  for (auto& s : load_split(root, "test")) test.push_back(std::move(s.sample));
  PaenetConfig c;
  c.input_depth = 16;
  c.stages = {{4, 4}, {8, 4}};
  c.depth2d = 2;
  c.base_channels = 4;
  TrainConfig cfg;
  cfg.max_iters = 10;
  cfg.batch = 2;
  cfg.patch = {8, 8, 16};
  cfg.lr0 = 1e-2;
  cfg.seed = 5;
  Paenet net = build_paenet(c);
  TrainState state = initial_train_state(cfg);
  for (const auto& r : train_loop(cfg, net, train, state)) a.log.push_back(format_log_line(r));
  a.weights = encode_weights(net);
  for (const auto& s : test) a.predictions.push_back(infer_volume(net, s.volume, cfg.patch));
  save_checkpoint(root / "ck.paew", net, cfg, state);
  return a;
}

bool bit_equal(const Tensor<float>& a, const Tensor<float>& b) {
  return a.shape() == b.shape() && std::equal(a.data().begin(), a.data().end(), b.data().begin(), [](float x, float y) {
           return std::bit_cast<std::uint32_t>(x) == std::bit_cast<std::uint32_t>(y);
         });
}

Outcome determinism(const fs::path& work) {
  Outcome o;
  const RunArtifacts a = small_run(work / "det_a");
  const RunArtifacts b = small_run(work / "det_b");
  o.require(a.manifest == b.manifest, "dataset manifests identical");
  o.require(a.weights == b.weights, "weights identical");
  o.require(a.log == b.log, "logs identical");
  bool preds = a.predictions.size() == b.predictions.size();
  for (std::size_t i = 0; preds && i < a.predictions.size(); ++i) preds = bit_equal(a.predictions[i], b.predictions[i]);
  o.require(preds, "predictions identical");
  o.require(read_file(work / "det_a" / "ck.paew") == read_file(work / "det_b" / "ck.paew"), "checkpoints identical");

  // Round trips through every serialized format.
  SplitMix64 rng(909);
  const auto vol = random_tensor<float>({2, 5, 4, 3}, rng, -1e3, 1e3);
  const std::string vbytes = encode_volume(vol, {"oct", "octa"});
  const VolumeFile vback = decode_volume(vbytes);
  o.require(bit_equal(vback.data, vol) && encode_volume(vback.data, vback.channels) == vbytes, "volume round trip");

  const fs::path wpath = work / "det_w.paew";
  write_file_atomic(wpath, a.weights);
  o.require(encode_weights(load_weights(wpath)) == a.weights, "weights round trip");

  const fs::path cpath = work / "det_a" / "ck.paew";
  const Checkpoint ck = load_checkpoint(cpath);
  save_checkpoint(work / "det_ck2.paew", ck.net, ck.train, ck.state);
  o.require(read_file(work / "det_ck2.paew") == read_file(cpath), "checkpoint round trip");

  const auto levels = random_tensor<float>({6, 7}, rng, 0, 1);
  const std::string pgm = encode_prob_pgm(levels);
  const auto pix = decode_pgm(pgm);
  Tensor<float> back(pix.shape());
  for (std::size_t i = 0; i < pix.size(); ++i) back[i] = float(pix[i]) / 255.0f;
  o.require(encode_prob_pgm(back) == pgm, "image round trip");

  std::vector<EvalSample> es;
  for (const auto& p : a.predictions) es.push_back({p, threshold_map(p, 0.3)});
  const std::string rep = encode_report(evaluate_dataset(es), {{"a", "b"}, 0.5, "det"});
  o.require(encode_report(decode_report(rep), {{"a", "b"}, 0.5, "det"}) == rep, "report round trip");

  PaenetConfig cfg = PaenetConfig::with_depth(32);
  cfg.toggles.qam = false;
  o.require(config_from_json(config_to_json(cfg)) == cfg, "config round trip");
  o.note("2 runs: manifest, weights (" + std::to_string(a.weights.size()) + " B), " + std::to_string(a.log.size()) +
         " log lines, " + std::to_string(a.predictions.size()) + " predictions and checkpoint identical; 6 formats round-trip");
  return o;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Acceptance checks, one PASS/FAIL line per criterion"};
  std::vector<int> only;
  std::string work = (fs::temp_directory_path() / "paenet_acceptance").string();
  app.add_option("--only", only, "Criteria to run (default all)")->check(CLI::Range(1, 9));
  app.add_option("--work", work, "Scratch directory")->capture_default_str();
  CLI11_PARSE(app, argc, argv);
  if (only.empty()) only = {1, 2, 3, 4, 5, 6, 7, 8, 9};

  const std::array<std::pair<const char*, std::function<Outcome()>>, 9> criteria{{
      {"kernel oracles", kernel_oracles},
      {"gradient suite", gradient_suite},
      {"block identities", block_identities},
      {"shape and bound invariants", invariants},
      {"metric identities", metric_identities},
      {"patch pipeline", patch_pipeline},
      {"toy end-to-end", [&] { return toy_end_to_end(work); }},
      {"ablation structure", [&] { return ablation_structure(work); }},
      {"determinism", [&] { return determinism(work); }},
  }};

  fs::remove_all(work);
  fs::create_directories(work);
  int failed = 0;
  for (int n : std::set<int>(only.begin(), only.end())) {
    const auto& [title, run] = criteria[std::size_t(n - 1)];
    Outcome o;
    try {
      o = run();
    } catch (const std::exception& e) {
      o.require(false, std::string("exception: ") + e.what());
    }
    std::cout << "criterion " << n << " " << (o.pass ? "PASS" : "FAIL") << "  " << title << ": " << o.detail << '\n'
              << std::flush;
    failed += o.pass ? 0 : 1;
  }
  return failed == 0 ? 0 : 1;
}
