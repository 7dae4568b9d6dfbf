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

#include "paenet/network.hpp"

namespace paenet {

namespace {

std::string indexed(const char* stem, std::size_t i) {
  return stem + std::to_string(i);
}

std::size_t planar_channels(const PaenetConfig& c) {
  std::size_t n = c.stages.back().channels;
  if (c.toggles.ffm)
    for (std::size_t s = 0; s + 1 < c.stages.size(); ++s) n += 2 * c.stages[s].channels;
  return n;
}

std::size_t level_channels(const PaenetConfig& c, std::size_t level) {
  return c.base_channels << level;
}

template <typename T>
Batch<T> conv_bn_relu(const Scope<T>& scope, const std::string& conv, const std::string& bn, const ConvSpec& spec,
                      std::span<const Var<T>> xs) {
  Batch<T> ys;
  for (const auto& x : xs) ys.push_back(apply_conv(scope, conv, spec, x));
  ys = apply_batch_norm(scope, bn, std::span<const Var<T>>(ys));
  for (auto& y : ys) y = relu(y);
  return ys;
}

template <typename T>
Batch<T> double_conv(const Scope<T>& scope, const ConvSpec& first, const ConvSpec& second, std::span<const Var<T>> xs) {
  const Batch<T> h = conv_bn_relu(scope, "conv1", "bn1", first, xs);
  return conv_bn_relu(scope, "conv2", "bn2", second, std::span<const Var<T>>(h));
}

ConvSpec stage_conv(const PaenetConfig& c, std::size_t s, bool first) {
  const std::size_t out = c.stages[s].channels;
  const std::size_t in = !first ? out : (s == 0 ? c.input_channels : c.stages[s - 1].channels);
  return ConvSpec::cube(3, in, out);
}

}  // namespace

// --- config ----------------------------------------------------------------

PaenetConfig PaenetConfig::with_depth(std::size_t input_depth) {
  require(input_depth % 16 == 0 && input_depth >= 16, "default stages need a depth divisible by 16");
  PaenetConfig c;
  c.input_depth = input_depth;
  c.stages = {{16, 4}, {32, 4}, {64, input_depth / 16}};
  return c;
}

std::vector<ModuleToggles> PaenetConfig::ablation_ladder() {
  return {
      {false, false, false, false},
      {true, false, false, false},
      {true, true, false, false},
      {true, true, true, false},
      {true, true, true, true},
  };
}

void PaenetConfig::validate() const {
  require(input_channels >= 1, "config: input_channels must be >= 1");
  require(!stages.empty(), "config: need at least one 3D stage");
  std::size_t product = 1;
  for (const auto& s : stages) {
    require(s.channels >= 2 && s.channels % 2 == 0, "config: stage channels must be even and >= 2");
    require(s.group_factor >= 1, "config: group factors must be >= 1");
    product *= s.group_factor;
  }
  require(product == input_depth, "config: group factors multiply to " + std::to_string(product) +
                                      " but input depth is " + std::to_string(input_depth));
  require(depth2d >= 1, "config: 2D depth must be >= 1");
  require(base_channels >= 2 && base_channels % 2 == 0, "config: base_channels must be even and >= 2");
}

std::string toggles_label(const ModuleToggles& t) {
  std::string s;
  auto append = [&](bool on, const char* name) {
    if (!on) return;
    if (!s.empty()) s += '+';
    s += name;
  };
  append(t.apm, "apm");
  append(t.qam, "qam");
  append(t.ffm, "ffm");
  append(t.psa, "psa");
  return s.empty() ? "baseline" : s;
}

void check_input_shape(const PaenetConfig& config, const Shape& shape) {
  require(shape.size() == 4, "input must be (C,L,W,H), got " + to_string(shape));
  require(shape[0] == config.input_channels, "input has " + std::to_string(shape[0]) + " channels, network expects " +
                                                 std::to_string(config.input_channels));
  require(shape[3] == config.input_depth, "input depth " + std::to_string(shape[3]) +
                                              " does not factor through the stage group factors (expects " +
                                              std::to_string(config.input_depth) + ")");
  const std::size_t align = std::size_t{1} << (config.depth2d - 1);
  require(shape[1] % align == 0 && shape[2] % align == 0,
          "input L and W must be divisible by " + std::to_string(align));
}

// --- declaration -------------------------------------------------------------

template <typename T>
void declare_paenet(const PaenetConfig& c, ParamSet<T>& params) {
  c.validate();
  SplitMix64 rng(c.seed);
  for (std::size_t s = 0; s < c.stages.size(); ++s) {
    const std::string stage = indexed("stage", s);
    declare_conv(params, stage + ".conv1", stage_conv(c, s, true), rng);
    declare_batch_norm(params, stage + ".bn1", c.stages[s].channels);
    declare_conv(params, stage + ".conv2", stage_conv(c, s, false), rng);
    declare_batch_norm(params, stage + ".bn2", c.stages[s].channels);
    if (c.toggles.qam) QamParams{}.declare(params, stage + ".qam", rng);
    if (c.toggles.apm) ApmParams::for_channels(c.stages[s].channels).declare(params, stage + ".apm", rng);
  }
  declare_conv(params, "bridge", ConvSpec::square(1, planar_channels(c), c.base_channels), rng);
  for (std::size_t i = 0; i < c.depth2d; ++i) {
    const std::string enc = indexed("enc", i);
    const std::size_t ch = level_channels(c, i);
    const std::size_t in = i == 0 ? c.base_channels : level_channels(c, i - 1);
    declare_conv(params, enc + ".conv1", ConvSpec::square(3, in, ch), rng);
    declare_batch_norm(params, enc + ".bn1", ch);
    declare_conv(params, enc + ".conv2", ConvSpec::square(3, ch, ch), rng);
    declare_batch_norm(params, enc + ".bn2", ch);
    if (c.toggles.psa) PsaParams::for_channels(ch).declare(params, enc + ".psa", rng);
  }
  for (std::size_t i = c.depth2d - 1; i-- > 0;) {
    const std::string dec = indexed("dec", i);
    const std::size_t ch = level_channels(c, i);
    declare_conv(params, dec + ".up", ConvSpec::square(3, level_channels(c, i + 1), ch), rng);
    declare_batch_norm(params, dec + ".up_bn", ch);
    declare_conv(params, dec + ".conv1", ConvSpec::square(3, 2 * ch, ch), rng);
    declare_batch_norm(params, dec + ".bn1", ch);
    declare_conv(params, dec + ".conv2", ConvSpec::square(3, ch, ch), rng);
    declare_batch_norm(params, dec + ".bn2", ch);
  }
  declare_conv(params, "head", ConvSpec::square(1, c.base_channels, 1), rng);
}

// --- graph ---------------------------------------------------------------------

template <typename T>
Batch<T> paenet_graph(const PaenetConfig& c, const Scope<T>& scope, std::span<const Var<T>> inputs) {
  require(!inputs.empty(), "paenet: empty batch");
  const Shape in_shape = inputs[0].shape();
  check_input_shape(c, in_shape);
  for (const auto& x : inputs) require(x.shape() == in_shape, "paenet: batch samples differ in shape");
  const std::size_t L = in_shape[1];
  const std::size_t W = in_shape[2];

  // 3D feature path.
  Batch<T> x(inputs.begin(), inputs.end());
  std::vector<Batch<T>> stage_out;
  std::size_t depth = c.input_depth;
  for (std::size_t s = 0; s < c.stages.size(); ++s) {
    const Scope<T> st = scope.sub(indexed("stage", s));
    x = double_conv(st, stage_conv(c, s, true), stage_conv(c, s, false), std::span<const Var<T>>(x));
    if (c.toggles.qam) x = qam_forward(st.sub("qam"), QamParams{}, std::span<const Var<T>>(x));
    const std::size_t pool = depth / c.stages[s].group_factor;
    const ApmParams apm = ApmParams::for_channels(c.stages[s].channels);
    for (auto& v : x) v = c.toggles.apm ? apm_forward(st.sub("apm"), apm, v, pool) : unidirectional_pool(v, pool);
    depth = pool;
    stage_out.push_back(x);
  }

  // Squeeze to planar features and inject earlier volume features, latest first.
  Batch<T> y;
  for (std::size_t i = 0; i < x.size(); ++i) {
    Var<T> p = reshape(x[i], Shape{c.stages.back().channels, L, W});
    if (c.toggles.ffm)
      for (std::size_t s = c.stages.size() - 1; s-- > 0;) p = ffm_fuse(stage_out[s][i], p);
    y.push_back(apply_conv(scope, "bridge", ConvSpec::square(1, planar_channels(c), c.base_channels), p));
  }

  // 2D encoder-decoder.
  std::vector<Batch<T>> skips;
  for (std::size_t i = 0; i < c.depth2d; ++i) {
    const Scope<T> enc = scope.sub(indexed("enc", i));
    const std::size_t ch = level_channels(c, i);
    const std::size_t in = i == 0 ? c.base_channels : level_channels(c, i - 1);
    if (i > 0)
      for (auto& v : y) v = pool_axis(pool_axis(v, 1, PoolMode::max, 2), 2, PoolMode::max, 2);
    y = double_conv(enc, ConvSpec::square(3, in, ch), ConvSpec::square(3, ch, ch), std::span<const Var<T>>(y));
    if (c.toggles.psa) {
      const PsaParams psa = PsaParams::for_channels(ch);
      for (auto& v : y) v = psa_forward(enc.sub("psa"), psa, v);
    }
    skips.push_back(y);
  }
  for (std::size_t i = c.depth2d - 1; i-- > 0;) {
    const Scope<T> dec = scope.sub(indexed("dec", i));
    const std::size_t ch = level_channels(c, i);
    for (auto& v : y) v = upsample_axis(upsample_axis(v, 1, 2), 2, 2);
    y = conv_bn_relu(dec, "up", "up_bn", ConvSpec::square(3, level_channels(c, i + 1), ch),
                     std::span<const Var<T>>(y));
    for (std::size_t b = 0; b < y.size(); ++b) {
      const std::array<Var<T>, 2> parts{skips[i][b], y[b]};
      y[b] = concat_axis(std::span<const Var<T>>(parts), 0);
    }
    y = double_conv(dec, ConvSpec::square(3, 2 * ch, ch), ConvSpec::square(3, ch, ch), std::span<const Var<T>>(y));
  }

  Batch<T> out;
  for (const auto& v : y)
    out.push_back(reshape(sigmoid(apply_conv(scope, "head", ConvSpec::square(1, c.base_channels, 1), v)), Shape{L, W}));
  return out;
}

// --- Paenet ----------------------------------------------------------------------

Paenet::Paenet(PaenetConfig config) : config_(std::move(config)) {
  declare_paenet(config_, params_);
}

std::vector<ManifestEntry> Paenet::manifest() const {
  std::vector<ManifestEntry> m;
  m.reserve(params_.size());
  for (const auto& e : params_.entries()) m.push_back({e.name, e.value.shape(), e.trainable});
  return m;
}

Paenet build_paenet(const PaenetConfig& config) {
  return Paenet(config);
}

Tensor<float> paenet_forward(const Paenet& net, const Tensor<float>& pair) {
  check_input_shape(net.config(), pair.shape());
  Tape<float> tape(false);
  const Scope<float> scope(tape, net.params());
  const std::array<Var<float>, 1> in{tape.constant(pair)};
  Tensor<float> out = paenet_graph(net.config(), scope, std::span<const Var<float>>(in))[0].value();
  check_finite(out, "paenet_forward");
  return out;
}

template void declare_paenet(const PaenetConfig&, ParamSet<float>&);
template void declare_paenet(const PaenetConfig&, ParamSet<double>&);
template Batch<float> paenet_graph(const PaenetConfig&, const Scope<float>&, std::span<const Var<float>>);
template Batch<double> paenet_graph(const PaenetConfig&, const Scope<double>&, std::span<const Var<double>>);

}  // namespace paenet
