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

#include "paenet/train.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

namespace paenet {

// --- config and schedule -----------------------------------------------------

TrainConfig TrainConfig::full_scale() {
  TrainConfig c;
  c.max_iters = 25000;
  c.patch = {100, 100, 160};
  return c;
}

void TrainConfig::validate(const PaenetConfig& net) const {
  require(lr0 > 0.0 && std::isfinite(lr0), "train: lr0 must be positive");
  require(power > 0.0 && std::isfinite(power), "train: power must be positive");
  require(batch >= 1, "train: batch must be >= 1");
  require(max_iters >= 1, "train: max_iters must be >= 1");
  check_input_shape(net, Shape{net.input_channels, patch[0], patch[1], patch[2]});
}

double poly_lr(std::size_t iter, const TrainConfig& cfg) {
  require(iter <= cfg.max_iters, "poly_lr: iteration " + std::to_string(iter) + " beyond max_iters " +
                                     std::to_string(cfg.max_iters));
  const double frac = 1.0 - static_cast<double>(iter) / static_cast<double>(cfg.max_iters);
  return cfg.lr0 * std::pow(frac, cfg.power);
}

// --- loss ----------------------------------------------------------------------

namespace {

template <typename T>
void check_loss_shapes(const Tensor<T>& prob, const BinaryMask& gt) {
  require(prob.shape() == gt.shape(),
          "bce_loss: prediction " + to_string(prob.shape()) + " vs ground truth " + to_string(gt.shape()));
}

}  // namespace

template <typename T>
Var<T> bce_loss(Var<T> prob, const BinaryMask& gt) {
  const Tensor<T>& p = prob.value();
  check_loss_shapes(p, gt);
  const T lo = static_cast<T>(kProbClamp);
  const T hi = T(1) - lo;
  const T inv = T(1) / static_cast<T>(p.size());
  T sum = T(0);
  for (std::size_t i = 0; i < p.size(); ++i) {
    const T q = std::clamp(p[i], lo, hi);
    sum -= gt[i] ? std::log(q) : std::log(T(1) - q);
  }
  return prob.tape->record(Tensor<T>::scalar(sum * inv), {prob}, [prob, gt, lo, hi, inv](Tape<T>& t, const Tensor<T>& g) {
    Tensor<T>* slot = t.grad_slot(prob);
    if (!slot) return;
    const Tensor<T>& p = t.value(prob);
    for (std::size_t i = 0; i < p.size(); ++i) {
      if (p[i] < lo || p[i] > hi) continue;
      (*slot)[i] += g[0] * inv * (gt[i] ? -T(1) / p[i] : T(1) / (T(1) - p[i]));
    }
  });
}

double bce_loss(const Tensor<float>& prob, const BinaryMask& gt) {
  Tape<double> tape(false);
  return bce_loss(tape.constant(prob.cast<double>()), gt).value()[0];
}

template Var<float> bce_loss(Var<float>, const BinaryMask&);
template Var<double> bce_loss(Var<double>, const BinaryMask&);

// --- optimizer -----------------------------------------------------------------

void adam_step(ParamSet<float>& params, std::span<const Tensor<float>> grads, AdamState& state, double lr) {
  std::vector<Tensor<float>*> targets;
  for (auto& e : params.entries())
    if (e.trainable) targets.push_back(&e.value);
  require(grads.size() == targets.size(), "adam_step: " + std::to_string(grads.size()) + " gradients for " +
                                              std::to_string(targets.size()) + " trainable tensors");
  if (state.m.empty()) {
    for (const auto* p : targets) {
      state.m.emplace_back(p->shape());
      state.v.emplace_back(p->shape());
    }
  }
  require(state.m.size() == targets.size() && state.v.size() == targets.size(), "adam_step: state does not match");

  ++state.step;
  const double c1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step));
  for (std::size_t k = 0; k < targets.size(); ++k) {
    Tensor<float>& p = *targets[k];
    Tensor<float>& m = state.m[k];
    Tensor<float>& v = state.v[k];
    const Tensor<float>& g = grads[k];
    require(g.shape() == p.shape() && m.shape() == p.shape(), "adam_step: shape mismatch");
    for (std::size_t i = 0; i < p.size(); ++i) {
      const double gi = g[i];
      const double mi = state.beta1 * m[i] + (1.0 - state.beta1) * gi;
      const double vi = state.beta2 * v[i] + (1.0 - state.beta2) * gi * gi;
      m[i] = static_cast<float>(mi);
      v[i] = static_cast<float>(vi);
      const double mhat = mi / c1;
      const double vhat = vi / c2;
      p[i] = static_cast<float>(p[i] - lr * mhat / (std::sqrt(vhat) + state.eps));
    }
  }
}

// --- patches -------------------------------------------------------------------

PatchGrid crop_patches(Dims3 dims, Dims3 patch) {
  std::array<std::vector<std::size_t>, 3> starts;
  for (std::size_t a = 0; a < 3; ++a) {
    require(patch[a] >= 1 && dims[a] >= 1, "crop_patches: extents must be positive");
    require(patch[a] <= dims[a], "crop_patches: patch extent " + std::to_string(patch[a]) +
                                     " exceeds volume extent " + std::to_string(dims[a]));
    const std::size_t n = (dims[a] + patch[a] - 1) / patch[a];
    const std::size_t span = dims[a] - patch[a];
    for (std::size_t i = 0; i < n; ++i) starts[a].push_back(n == 1 ? 0 : i * span / (n - 1));
  }
  PatchGrid g{dims, patch, {}};
  for (std::size_t i : starts[0])
    for (std::size_t j : starts[1])
      for (std::size_t k : starts[2]) g.origins.push_back({i, j, k});
  return g;
}

Tensor<float> crop_volume(const Tensor<float>& volume, Dims3 origin, Dims3 patch) {
  const Shape& s = volume.shape();
  require(s.size() == 4, "crop_volume: volume must be (C,L,W,H)");
  for (std::size_t a = 0; a < 3; ++a)
    require(origin[a] + patch[a] <= s[a + 1], "crop_volume: window leaves the volume");
  Tensor<float> out(Shape{s[0], patch[0], patch[1], patch[2]});
  float* dst = out.ptr();
  for (std::size_t c = 0; c < s[0]; ++c)
    for (std::size_t i = 0; i < patch[0]; ++i)
      for (std::size_t j = 0; j < patch[1]; ++j) {
        const float* src = volume.ptr() + ((c * s[1] + origin[0] + i) * s[2] + origin[1] + j) * s[3] + origin[2];
        dst = std::copy(src, src + patch[2], dst);
      }
  return out;
}

BinaryMask crop_mask(const BinaryMask& mask, Dims3 origin, Dims3 patch) {
  const Shape& s = mask.shape();
  require(s.size() == 2, "crop_mask: mask must be (L,W)");
  require(origin[0] + patch[0] <= s[0] && origin[1] + patch[1] <= s[1], "crop_mask: window leaves the mask");
  BinaryMask out(Shape{patch[0], patch[1]});
  for (std::size_t i = 0; i < patch[0]; ++i)
    for (std::size_t j = 0; j < patch[1]; ++j) out.at({i, j}) = mask.at({origin[0] + i, origin[1] + j});
  return out;
}

Tensor<float> stitch_patches(std::span<const PatchPrediction> preds, const PatchGrid& grid,
                             std::array<std::size_t, 2> out_dims) {
  const auto [L, W] = out_dims;
  std::vector<double> sum(L * W, 0.0);
  std::vector<std::uint32_t> count(L * W, 0);
  for (const auto& p : preds) {
    require(p.map.shape() == Shape{grid.patch[0], grid.patch[1]},
            "stitch_patches: prediction shape " + to_string(p.map.shape()) + " does not match the patch");
    require(p.origin[0] + grid.patch[0] <= L && p.origin[1] + grid.patch[1] <= W,
            "stitch_patches: patch leaves the output");
    for (std::size_t i = 0; i < grid.patch[0]; ++i)
      for (std::size_t j = 0; j < grid.patch[1]; ++j) {
        const std::size_t q = (p.origin[0] + i) * W + p.origin[1] + j;
        sum[q] += p.map.at({i, j});
        ++count[q];
      }
  }
  Tensor<float> out(Shape{L, W});
  for (std::size_t q = 0; q < L * W; ++q) {
    require(count[q] > 0, "stitch_patches: pixel (" + std::to_string(q / W) + "," + std::to_string(q % W) +
                              ") is not covered by any patch");
    out[q] = static_cast<float>(sum[q] / count[q]);
  }
  return out;
}

// --- training ------------------------------------------------------------------

TrainState initial_train_state(const TrainConfig& cfg) {
  TrainState s;
  s.rng_state = cfg.seed;
  return s;
}

std::string format_log_line(const TrainRecord& r) {
  char buf[96];
  std::snprintf(buf, sizeof buf, "iter=%zu lr=%.2e loss=%.4f", r.iter, r.lr, r.loss);
  return buf;
}

namespace {

struct Crop {
  Tensor<float> volume;
  BinaryMask gt;
};

Crop random_crop(std::span<const TrainSample> data, const Dims3& patch, SplitMix64& rng) {
  const TrainSample& s = data[rng.below(data.size())];
  Dims3 origin{};
  for (std::size_t a = 0; a < 3; ++a) origin[a] = rng.below(s.volume.extent(a + 1) - patch[a] + 1);
  return {crop_volume(s.volume, origin, patch), crop_mask(s.gt, origin, patch)};
}

}  // namespace

std::vector<TrainRecord> train_loop(const TrainConfig& cfg, Paenet& net, std::span<const TrainSample> data,
                                    TrainState& state, const TrainHooks& hooks) {
  const PaenetConfig& nc = net.config();
  cfg.validate(nc);
  require(!data.empty(), "train_loop: no training samples");
  for (const auto& s : data) {
    const Shape& v = s.volume.shape();
    require(v.size() == 4 && v[0] == nc.input_channels, "train_loop: sample volume must be (C,L,W,H)");
    require(s.gt.shape() == Shape{v[1], v[2]}, "train_loop: mask does not match its volume");
    for (std::size_t a = 0; a < 3; ++a) require(cfg.patch[a] <= v[a + 1], "train_loop: patch exceeds a sample");
  }
  require(state.iteration <= cfg.max_iters, "train_loop: state is past max_iters");

  const std::size_t stop = hooks.stop_at ? std::min(hooks.stop_at, cfg.max_iters) : cfg.max_iters;
  std::vector<TrainRecord> records;
  while (state.iteration < stop) {
    SplitMix64 rng(state.rng_state);
    std::vector<Crop> crops;
    for (std::size_t b = 0; b < cfg.batch; ++b) crops.push_back(random_crop(data, cfg.patch, rng));

    Tape<float> tape(true);
    const Scope<float> scope(tape, net.params(), NormMode::train, true);
    Batch<float> inputs;
    for (const auto& c : crops) inputs.push_back(tape.constant(c.volume));
    const Batch<float> probs = paenet_graph(nc, scope, std::span<const Var<float>>(inputs));
    Var<float> loss = bce_loss(probs[0], crops[0].gt);
    for (std::size_t b = 1; b < probs.size(); ++b) loss = add(loss, bce_loss(probs[b], crops[b].gt));
    loss = scale(loss, 1.0f / static_cast<float>(cfg.batch));
    const double value = loss.value()[0];
    if (!std::isfinite(value))
      throw NumericError("train: non-finite loss at iteration " + std::to_string(state.iteration));
    tape.backward(loss);

    std::vector<Tensor<float>> grads;
    const auto& bound = scope.bound();
    for (const auto& e : net.params().entries()) {
      if (!e.trainable) continue;
      const auto it = bound.find(e.name);
      grads.push_back(it == bound.end() ? Tensor<float>(e.value.shape()) : tape.grad(it->second));
      check_finite(grads.back(), "train gradient");
    }
    const double lr = poly_lr(state.iteration, cfg);
    adam_step(net.params(), grads, state.adam, lr);

    const TrainRecord rec{state.iteration, lr, value};
    records.push_back(rec);
    ++state.iteration;
    state.rng_state = rng.state();
    if (hooks.on_iteration) hooks.on_iteration(rec);
    if (cfg.checkpoint_every && state.iteration % cfg.checkpoint_every == 0 && hooks.on_checkpoint)
      hooks.on_checkpoint(state);
  }
  return records;
}

// --- inference -----------------------------------------------------------------

Tensor<float> infer_volume(const PatchForward& forward, const Tensor<float>& volume, Dims3 patch) {
  const Shape& s = volume.shape();
  require(s.size() == 4, "infer_volume: volume must be (C,L,W,H)");
  const PatchGrid grid = crop_patches({s[1], s[2], s[3]}, patch);
  std::vector<PatchPrediction> preds;
  preds.reserve(grid.origins.size());
  for (const auto& o : grid.origins) preds.push_back({o, forward(crop_volume(volume, o, patch))});
  return stitch_patches(preds, grid, {s[1], s[2]});
}

Tensor<float> infer_volume(const Paenet& net, const Tensor<float>& volume, Dims3 patch) {
  return infer_volume([&net](const Tensor<float>& x) { return paenet_forward(net, x); }, volume, patch);
}

}  // namespace paenet
