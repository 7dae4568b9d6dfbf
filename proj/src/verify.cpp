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

#include "paenet/verify.hpp"

#include <array>
#include <memory>

#include "paenet/network.hpp"

namespace paenet {

namespace {

using D = double;
using VarD = Var<D>;
using Outputs = std::vector<VarD>;
using Body = std::function<Outputs(const Scope<D>&, std::span<const VarD>)>;

// Coordinates probed per tensor in the whole-network case.
constexpr std::size_t kNetworkCoords = 24;

Tensor<D> uniform(const Shape& shape, SplitMix64& rng, D lo = -1.0, D hi = 1.0) {
  Tensor<D> t(shape);
  for (auto& v : t.data()) v = rng.uniform(lo, hi);
  return t;
}

bool ends_with(const std::string& s, std::string_view suffix) {
  return s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

/// Moves affine and bias parameters off their identity initialization so the
/// checks do not run at a special point.
void perturb(ParamSet<D>& params, SplitMix64& rng) {
  for (auto& e : params.entries()) {
    if (!e.trainable) continue;
    if (ends_with(e.name, ".gamma"))
      for (auto& v : e.value.data()) v = rng.uniform(0.5, 1.5);
    else if (ends_with(e.name, ".bias") || ends_with(e.name, ".beta"))
      for (auto& v : e.value.data()) v = rng.uniform(-0.5, 0.5);
  }
}

/// A grad-check problem: data tensors followed by the trainable entries of
/// `params`, which the body reaches through a scope bound to the leaves.
class Problem {
 public:
  Problem(std::vector<Tensor<D>> data, ParamSet<D> params, Body body, std::uint64_t seed)
      : data_count_(data.size()),
        params_(std::make_shared<ParamSet<D>>(std::move(params))),
        body_(std::move(body)),
        seed_(seed) {
    inputs_ = std::move(data);
    for (const auto& e : params_->entries())
      if (e.trainable) {
        names_.push_back(e.name);
        inputs_.push_back(e.value);
      }
  }

  GradCheckResult run(const GradCheckOptions& options) const {
    auto params = params_;
    auto names = names_;
    const std::size_t data_count = data_count_;
    const Body body = body_;
    const std::uint64_t seed = seed_;
    const Objective fn = [=](Tape<D>& tape, std::span<const VarD> leaves) {
      const Scope<D> scope(tape, *params, NormMode::train, false);
      for (std::size_t i = 0; i < names.size(); ++i) scope.bind(names[i], leaves[data_count + i]);
      const Outputs outs = body(scope, leaves.first(data_count));
      // Fixed random projection so every output element reaches the loss.
      SplitMix64 rng(seed ^ 0x5eedULL);
      VarD loss = weighted_sum(outs[0], uniform(outs[0].shape(), rng));
      for (std::size_t i = 1; i < outs.size(); ++i) loss = add(loss, weighted_sum(outs[i], uniform(outs[i].shape(), rng)));
      return loss;
    };
    return grad_check(fn, inputs_, options);
  }

 private:
  std::size_t data_count_;
  std::vector<Tensor<D>> inputs_;
  std::vector<std::string> names_;
  std::shared_ptr<ParamSet<D>> params_;
  Body body_;
  std::uint64_t seed_;
};

/// Problem over plain data tensors with no named parameters.
Problem plain(std::vector<Tensor<D>> data, std::function<VarD(std::span<const VarD>)> f, std::uint64_t seed) {
  return Problem(std::move(data), {}, [f](const Scope<D>&, std::span<const VarD> v) { return Outputs{f(v)}; }, seed);
}

struct NamedProblem {
  std::string name;
  Problem problem;
};

std::vector<NamedProblem> op_problems(std::uint64_t seed) {
  SplitMix64 rng(seed);
  std::vector<NamedProblem> p;
  auto add_case = [&](std::string name, std::vector<Tensor<D>> data, std::function<VarD(std::span<const VarD>)> f) {
    p.push_back({std::move(name), plain(std::move(data), std::move(f), rng.next())});
  };

  const ConvSpec c3 = ConvSpec::cube(3, 2, 3);
  add_case("conv3d", {uniform({2, 3, 4, 3}, rng), uniform(c3.weight_shape(), rng), uniform({3}, rng)},
           [c3](auto v) { return conv3d(v[0], c3, v[1], v[2]); });
  const ConvSpec c3m{{1, 3, 5}, 3, 2};
  add_case("conv3d_mixed_kernel", {uniform({3, 2, 3, 5}, rng), uniform(c3m.weight_shape(), rng), uniform({2}, rng)},
           [c3m](auto v) { return conv3d(v[0], c3m, v[1], v[2]); });
  const ConvSpec c2 = ConvSpec::square(3, 3, 2);
  add_case("conv2d", {uniform({3, 5, 4}, rng), uniform(c2.weight_shape(), rng), uniform({2}, rng)},
           [c2](auto v) { return conv2d(v[0], c2, v[1], v[2]); });
  const ConvSpec c1 = ConvSpec::square(1, 4, 3);
  add_case("conv2d_pointwise", {uniform({4, 3, 3}, rng), uniform(c1.weight_shape(), rng), uniform({3}, rng)},
           [c1](auto v) { return conv2d(v[0], c1, v[1], v[2]); });
  add_case("sigmoid_conv_chain", {uniform({2, 3, 4, 3}, rng), uniform(c3.weight_shape(), rng), uniform({3}, rng)},
           [c3](auto v) { return sigmoid(conv3d(v[0], c3, v[1], v[2])); });

  add_case("pool_max_full", {uniform({2, 3, 4}, rng)}, [](auto v) { return pool_axis(v[0], 2, PoolMode::max); });
  add_case("pool_avg_full", {uniform({2, 3, 4}, rng)}, [](auto v) { return pool_axis(v[0], 1, PoolMode::avg); });
  add_case("pool_max_window", {uniform({2, 4, 3}, rng)}, [](auto v) { return pool_axis(v[0], 1, PoolMode::max, 2); });
  add_case("pool_avg_window", {uniform({3, 2, 6}, rng)}, [](auto v) { return pool_axis(v[0], 2, PoolMode::avg, 3); });
  add_case("sum_axis", {uniform({3, 4, 2}, rng)}, [](auto v) { return sum_axis(v[0], 1); });
  add_case("global_avg_pool", {uniform({3, 2, 3, 2}, rng)}, [](auto v) { return global_avg_pool(v[0]); });
  add_case("softmax_axis0", {uniform({4, 3, 2}, rng, -2, 2)}, [](auto v) { return softmax_axis(v[0], 0); });
  add_case("softmax_axis2", {uniform({2, 3, 5}, rng, -2, 2)}, [](auto v) { return softmax_axis(v[0], 2); });
  add_case("relu", {uniform({3, 7}, rng)}, [](auto v) { return relu(v[0]); });
  add_case("sigmoid", {uniform({3, 7}, rng, -4, 4)}, [](auto v) { return sigmoid(v[0]); });

  add_case("batch_norm_train", {uniform({3, 4, 5}, rng), uniform({3}, rng, 0.5, 1.5), uniform({3}, rng)},
           [](auto v) {
             Tensor<D> mean(Shape{3}), var(Shape{3}, 1.0);
             return batch_norm(v[0], v[1], v[2], mean, var, kBatchNormEps, NormMode::train);
           });
  {
    Tensor<D> mean = uniform({3}, rng), var = uniform({3}, rng, 0.5, 2.0);
    add_case("batch_norm_eval", {uniform({3, 4, 5}, rng), uniform({3}, rng, 0.5, 1.5), uniform({3}, rng)},
             [mean, var](auto v) {
               Tensor<D> m = mean, s = var;
               return batch_norm(v[0], v[1], v[2], m, s, kBatchNormEps, NormMode::eval);
             });
  }
  add_case("layer_norm", {uniform({4, 3, 2}, rng), uniform({4}, rng, 0.5, 1.5), uniform({4}, rng)},
           [](auto v) { return layer_norm(v[0], v[1], v[2], kLayerNormEps); });

  add_case("permute_axes", {uniform({2, 3, 4, 2}, rng)}, [](auto v) {
    const std::array<std::size_t, 4> order{2, 0, 3, 1};
    return permute_axes(v[0], std::span<const std::size_t>(order));
  });
  add_case("regroup_axis", {uniform({2, 3, 6}, rng)}, [](auto v) { return regroup_axis(v[0], 2, 3); });
  add_case("merge_axis", {uniform({3, 2, 4, 2}, rng)}, [](auto v) { return merge_axis(v[0], 2); });
  add_case("concat_axis", {uniform({2, 1, 3}, rng), uniform({2, 3, 3}, rng), uniform({2, 2, 3}, rng)}, [](auto v) {
    return concat_axis(v, 1);
  });
  add_case("slice_axis", {uniform({5, 3}, rng)}, [](auto v) { return slice_axis(v[0], 0, 1, 3); });
  add_case("reshape", {uniform({2, 6}, rng)}, [](auto v) { return reshape(v[0], Shape{3, 4}); });
  add_case("upsample_axis", {uniform({2, 3}, rng)}, [](auto v) { return upsample_axis(v[0], 1, 2); });

  add_case("matmul2d", {uniform({3, 4}, rng), uniform({4, 2}, rng)}, [](auto v) { return matmul2d(v[0], v[1]); });
  add_case("add_broadcast", {uniform({2, 3, 4}, rng), uniform({2, 1, 4}, rng)}, [](auto v) { return add(v[0], v[1]); });
  add_case("multiply_broadcast", {uniform({2, 3, 4}, rng), uniform({1, 3, 1}, rng)},
           [](auto v) { return multiply(v[0], v[1]); });
  add_case("scale", {uniform({4}, rng)}, [](auto v) { return scale(v[0], D(-2.5)); });
  add_case("mean_all", {uniform({3, 3}, rng)}, [](auto v) { return mean_all(v[0]); });

  add_case("zpool", {uniform({4, 3, 2, 2}, rng)}, [](auto v) { return zpool(v[0]); });
  add_case("unidirectional_pool", {uniform({2, 3, 3, 8}, rng)}, [](auto v) { return unidirectional_pool(v[0], 2); });
  add_case("ffm_fuse", {uniform({3, 4, 4, 5}, rng), uniform({2, 4, 4}, rng)}, [](auto v) { return ffm_fuse(v[0], v[1]); });
  return p;
}

// Block problems at C=4, L=W=6, H=8.
constexpr std::size_t kC = 4, kL = 6, kW = 6, kH = 8;

std::vector<NamedProblem> apm_problems(std::uint64_t seed) {
  SplitMix64 rng(seed);
  const ApmParams apm = ApmParams::for_channels(kC);
  ParamSet<D> params;
  apm.declare(params, "apm", rng);
  perturb(params, rng);
  std::vector<NamedProblem> p;
  p.push_back({"apm_forward", Problem({uniform({kC, kL, kW, kH}, rng)}, params,
                                      [apm](const Scope<D>& s, std::span<const VarD> v) {
                                        return Outputs{apm_forward(s.sub("apm"), apm, v[0], 2)};
                                      },
                                      rng.next())});
  return p;
}

std::vector<NamedProblem> qam_problems(std::uint64_t seed) {
  SplitMix64 rng(seed);
  const QamParams qam;
  ParamSet<D> params;
  qam.declare(params, "qam", rng);
  perturb(params, rng);
  std::vector<NamedProblem> p;
  // Two samples so the batch statistics of the gate normalization couple them.
  p.push_back({"qam_forward", Problem({uniform({kC, kL, kW, kH}, rng), uniform({kC, kL, kW, kH}, rng)}, params,
                                      [qam](const Scope<D>& s, std::span<const VarD> v) {
                                        return qam_forward(s.sub("qam"), qam, v);
                                      },
                                      rng.next())});
  return p;
}

std::vector<NamedProblem> ffm_problems(std::uint64_t seed) {
  SplitMix64 rng(seed);
  const ConvSpec volume = ConvSpec::cube(3, kC, kC);
  const ConvSpec fuse = ConvSpec::square(1, 3 + 2 * kC, 2);
  ParamSet<D> params;
  declare_conv(params, "volume", volume, rng);
  declare_conv(params, "fuse", fuse, rng);
  perturb(params, rng);
  std::vector<NamedProblem> p;
  // Volume conv, fusion with a planar feature, 1x1 conv and sigmoid.
  p.push_back({"ffm_composite", Problem({uniform({kC, kL, kW, kH}, rng), uniform({3, kL, kW}, rng)}, params,
                                        [volume, fuse](const Scope<D>& s, std::span<const VarD> v) {
                                          const VarD x3 = apply_conv(s, "volume", volume, v[0]);
                                          return Outputs{sigmoid(apply_conv(s, "fuse", fuse, ffm_fuse(x3, v[1])))};
                                        },
                                        rng.next())});
  return p;
}

std::vector<NamedProblem> psa_problems(std::uint64_t seed) {
  SplitMix64 rng(seed);
  const PsaParams psa = PsaParams::for_channels(kC);
  ParamSet<D> params;
  psa.declare(params, "psa", rng);
  perturb(params, rng);
  std::vector<NamedProblem> p;
  const Tensor<D> x = uniform({kC, kL, kW}, rng);
  p.push_back({"psa_spatial", Problem({x}, params,
                                      [psa](const Scope<D>& s, std::span<const VarD> v) {
                                        return Outputs{psa_spatial(s.sub("psa"), psa, v[0])};
                                      },
                                      rng.next())});
  p.push_back({"psa_channel", Problem({x}, params,
                                      [psa](const Scope<D>& s, std::span<const VarD> v) {
                                        return Outputs{psa_channel(s.sub("psa"), psa, v[0])};
                                      },
                                      rng.next())});
  p.push_back({"psa_forward", Problem({x}, params,
                                      [psa](const Scope<D>& s, std::span<const VarD> v) {
                                        return Outputs{psa_forward(s.sub("psa"), psa, v[0])};
                                      },
                                      rng.next())});
  return p;
}

std::vector<NamedProblem> network_problems(std::uint64_t seed) {
  SplitMix64 rng(seed);
  PaenetConfig config;
  config.input_depth = 8;
  config.stages = {{4, 2}, {4, 4}};
  config.depth2d = 2;
  config.base_channels = 4;
  config.seed = rng.next();
  ParamSet<D> params;
  declare_paenet(config, params);
  perturb(params, rng);
  std::vector<NamedProblem> p;
  p.push_back({"paenet_graph", Problem({uniform({2, 4, 4, 8}, rng), uniform({2, 4, 4, 8}, rng)}, params,
                                       [config](const Scope<D>& s, std::span<const VarD> v) {
                                         return paenet_graph(config, s, v);
                                       },
                                       rng.next())});
  return p;
}

std::vector<NamedProblem> problems_for(std::string_view group, std::uint64_t seed) {
  if (group == "ops") return op_problems(seed);
  if (group == "apm") return apm_problems(seed);
  if (group == "qam") return qam_problems(seed);
  if (group == "ffm") return ffm_problems(seed);
  if (group == "psa") return psa_problems(seed);
  if (group == "network") return network_problems(seed);
  throw ContractError("unknown grad-check group '" + std::string(group) + "'");
}

}  // namespace

std::vector<std::string> grad_suite_groups() {
  return {"ops", "apm", "qam", "ffm", "psa", "network"};
}

std::vector<GradSuiteCase> run_grad_suite(std::string_view group, const GradCheckOptions& options) {
  std::vector<GradSuiteCase> out;
  if (group == "all") {
    for (const auto& g : grad_suite_groups()) {
      auto part = run_grad_suite(g, options);
      out.insert(out.end(), part.begin(), part.end());
    }
    return out;
  }
  GradCheckOptions opts = options;
  if (group == "network" && (opts.max_coords == 0 || opts.max_coords > kNetworkCoords)) opts.max_coords = kNetworkCoords;
  for (const auto& [name, problem] : problems_for(group, options.seed)) {
    out.push_back({std::string(group), name, problem.run(opts)});
  }
  return out;
}

GradCheckResult fault_injection_check(const GradCheckOptions& options) {
  SplitMix64 rng(options.seed);
  const ConvSpec spec = ConvSpec::cube(3, 2, 2);
  const std::vector<Tensor<D>> inputs{uniform({2, 3, 3, 3}, rng), uniform(spec.weight_shape(), rng),
                                      uniform({2}, rng)};
  const Tensor<D> proj = uniform({2, 3, 3, 3}, rng);
  const Objective fn = [spec, proj](Tape<D>& tape, std::span<const VarD> v) {
    const VarD z = conv3d(v[0], spec, v[1], v[2]);
    Tensor<D> s = activation(z.value(), Activation::sigmoid);
    // Wrong rule: s instead of s * (1 - s).
    const VarD y = tape.record(s, {z}, [z, s](Tape<D>& t, const Tensor<D>& g) { t.accumulate_grad(z, multiply(g, s)); });
    return weighted_sum(y, proj);
  };
  return grad_check(fn, inputs, options);
}

}  // namespace paenet
