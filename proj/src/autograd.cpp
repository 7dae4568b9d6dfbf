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

#include "paenet/autograd.hpp"

#include <algorithm>

namespace paenet {

// --- Tape --------------------------------------------------------------------

template <typename T>
Var<T> Tape<T>::leaf(Tensor<T> value, bool requires_grad) {
  nodes_.push_back(Node{std::move(value), recording_ && requires_grad, true, {}});
  grads_.emplace_back();
  return Var<T>{this, nodes_.size() - 1};
}

template <typename T>
Var<T> Tape<T>::record(Tensor<T> value, std::initializer_list<Var<T>> inputs, Backward backward) {
  return record(std::move(value), std::span<const Var<T>>(inputs.begin(), inputs.size()), std::move(backward));
}

template <typename T>
Var<T> Tape<T>::record(Tensor<T> value, std::span<const Var<T>> inputs, Backward backward) {
  bool needs = false;
  if (recording_) {
    for (const auto& in : inputs) {
      require(in.tape == this, "autograd: input belongs to a different tape");
      needs = needs || nodes_[in.id].requires_grad;
    }
  }
  nodes_.push_back(Node{std::move(value), needs, false, needs ? std::move(backward) : Backward{}});
  grads_.emplace_back();
  return Var<T>{this, nodes_.size() - 1};
}

template <typename T>
void Tape<T>::accumulate_grad(Var<T> v, const Tensor<T>& g) {
  if (!nodes_[v.id].requires_grad) return;
  auto& slot = grads_[v.id];
  if (slot)
    accumulate(*slot, g);
  else
    slot = g;
}

template <typename T>
void Tape<T>::accumulate_grad(Var<T> v, Tensor<T>&& g) {
  if (!nodes_[v.id].requires_grad) return;
  auto& slot = grads_[v.id];
  if (slot)
    accumulate(*slot, g);
  else
    slot = std::move(g);
}

template <typename T>
Tensor<T>* Tape<T>::grad_slot(Var<T> v) {
  if (!nodes_[v.id].requires_grad) return nullptr;
  auto& slot = grads_[v.id];
  if (!slot) slot = Tensor<T>(nodes_[v.id].value.shape());
  return &*slot;
}

template <typename T>
void Tape<T>::backward(Var<T> loss) {
  require(recording_, "backward: tape is not recording");
  require(loss.tape == this, "backward: loss belongs to a different tape");
  require(nodes_[loss.id].value.size() == 1, "backward: loss must be a single-element tensor, got shape " +
                                                 to_string(nodes_[loss.id].value.shape()));
  for (auto& g : grads_) g.reset();
  if (!nodes_[loss.id].requires_grad) return;
  grads_[loss.id] = Tensor<T>(nodes_[loss.id].value.shape(), T(1));
  for (std::size_t id = loss.id + 1; id-- > 0;) {
    Node& node = nodes_[id];
    if (node.is_leaf || !grads_[id]) continue;
    if (node.backward) node.backward(*this, *grads_[id]);
    grads_[id].reset();
  }
}

template <typename T>
Tensor<T> Tape<T>::grad(Var<T> v) const {
  const auto& slot = grads_.at(v.id);
  if (slot) return *slot;
  return Tensor<T>(nodes_[v.id].value.shape());
}

template class Tape<float>;
template class Tape<double>;

// --- differentiable ops ------------------------------------------------------

namespace {

template <typename T>
Var<T> conv_op(Var<T> input, const ConvSpec& spec, Var<T> weights, Var<T> bias, bool three_d) {
  Tape<T>& tape = *input.tape;
  Tensor<T> out = three_d ? paenet::conv3d(input.value(), spec, weights.value(), bias.value())
                          : paenet::conv2d(input.value(), spec, weights.value(), bias.value());
  return tape.record(std::move(out), {input, weights, bias}, [input, spec, weights, bias](Tape<T>& t, const Tensor<T>& g) {
    conv_backward(t.value(input), spec, t.value(weights), g, t.grad_slot(input), t.grad_slot(weights),
                  t.grad_slot(bias));
  });
}

}  // namespace

template <typename T>
Var<T> conv3d(Var<T> input, const ConvSpec& spec, Var<T> weights, Var<T> bias) {
  require(spec.kernel.size() == 3, "conv3d: kernel must have 3 extents");
  return conv_op(input, spec, weights, bias, true);
}

template <typename T>
Var<T> conv2d(Var<T> input, const ConvSpec& spec, Var<T> weights, Var<T> bias) {
  require(spec.kernel.size() == 2, "conv2d: kernel must have 2 extents");
  return conv_op(input, spec, weights, bias, false);
}

template <typename T>
Var<T> pool_axis(Var<T> input, std::size_t axis, PoolMode mode, std::size_t window) {
  return input.tape->record(paenet::pool_axis(input.value(), axis, mode, window), {input},
                            [input, axis, mode, window](Tape<T>& t, const Tensor<T>& g) {
                              t.accumulate_grad(input, pool_axis_backward(t.value(input), g, axis, mode, window));
                            });
}

template <typename T>
Var<T> sum_axis(Var<T> input, std::size_t axis) {
  return input.tape->record(paenet::sum_axis(input.value(), axis), {input}, [input](Tape<T>& t, const Tensor<T>& g) {
    t.accumulate_grad(input, multiply(Tensor<T>(t.value(input).shape(), T(1)), g));
  });
}

template <typename T>
Var<T> global_avg_pool(Var<T> input) {
  return input.tape->record(paenet::global_avg_pool(input.value()), {input},
                            [input](Tape<T>& t, const Tensor<T>& g) {
                              const Tensor<T>& x = t.value(input);
                              const T inv = T(1) / static_cast<T>(x.size() / x.extent(0));
                              t.accumulate_grad(input, multiply(Tensor<T>(x.shape(), inv), g));
                            });
}

template <typename T>
Var<T> softmax_axis(Var<T> input, std::size_t axis) {
  // The adjoint reads the op's own output, which lands in the next tape slot.
  Tape<T>& tape = *input.tape;
  const std::size_t self = tape.size();
  return tape.record(paenet::softmax_axis(input.value(), axis), {input},
                     [input, self, axis](Tape<T>& t, const Tensor<T>& g) {
                       t.accumulate_grad(input, softmax_axis_backward(t.value(Var<T>{&t, self}), g, axis));
                     });
}

template <typename T>
Var<T> activation(Var<T> input, Activation kind) {
  Tape<T>& tape = *input.tape;
  Tensor<T> out = paenet::activation(input.value(), kind);
  if (kind == Activation::relu) {
    return tape.record(std::move(out), {input}, [input](Tape<T>& t, const Tensor<T>& g) {
      const Tensor<T>& x = t.value(input);
      Tensor<T>* slot = t.grad_slot(input);
      if (!slot) return;
      for (std::size_t i = 0; i < x.size(); ++i)
        if (x[i] > T(0)) (*slot)[i] += g[i];
    });
  }
  const std::size_t self = tape.size();
  return tape.record(std::move(out), {input}, [input, self](Tape<T>& t, const Tensor<T>& g) {
    const Tensor<T>& y = t.value(Var<T>{&t, self});
    Tensor<T>* slot = t.grad_slot(input);
    if (!slot) return;
    for (std::size_t i = 0; i < y.size(); ++i) (*slot)[i] += g[i] * y[i] * (T(1) - y[i]);
  });
}

template <typename T>
Var<T> batch_norm(Var<T> input, Var<T> gamma, Var<T> beta, Tensor<T>& running_mean, Tensor<T>& running_var, T eps,
                  NormMode mode, T momentum) {
  // Eval-mode adjoint needs the statistics used in the forward pass.
  Tensor<T> mean_used = running_mean;
  Tensor<T> var_used = running_var;
  Tensor<T> out = paenet::batch_norm(input.value(), gamma.value(), beta.value(), running_mean, running_var, eps, mode,
                                     momentum);
  return input.tape->record(
      std::move(out), {input, gamma, beta},
      [input, gamma, beta, mean_used = std::move(mean_used), var_used = std::move(var_used), eps, mode](
          Tape<T>& t, const Tensor<T>& g) {
        batch_norm_backward(t.value(input), t.value(gamma), mean_used, var_used, eps, mode, g, t.grad_slot(input),
                            t.grad_slot(gamma), t.grad_slot(beta));
      });
}

template <typename T>
Var<T> layer_norm(Var<T> input, Var<T> gamma, Var<T> beta, T eps) {
  return input.tape->record(paenet::layer_norm(input.value(), gamma.value(), beta.value(), eps), {input, gamma, beta},
                            [input, gamma, beta, eps](Tape<T>& t, const Tensor<T>& g) {
                              layer_norm_backward(t.value(input), t.value(gamma), eps, g, t.grad_slot(input),
                                                  t.grad_slot(gamma), t.grad_slot(beta));
                            });
}

template <typename T>
Var<T> permute_axes(Var<T> input, std::span<const std::size_t> order) {
  std::vector<std::size_t> inverse = inverse_permutation(order);
  return input.tape->record(paenet::permute_axes(input.value(), order), {input},
                            [input, inverse = std::move(inverse)](Tape<T>& t, const Tensor<T>& g) {
                              t.accumulate_grad(input, paenet::permute_axes(g, std::span<const std::size_t>(inverse)));
                            });
}

template <typename T>
Var<T> regroup_axis(Var<T> input, std::size_t axis, std::size_t groups) {
  return input.tape->record(paenet::regroup_axis(input.value(), axis, groups), {input},
                            [input, axis](Tape<T>& t, const Tensor<T>& g) {
                              t.accumulate_grad(input, paenet::merge_axis(g, axis));
                            });
}

template <typename T>
Var<T> merge_axis(Var<T> grouped, std::size_t axis) {
  const std::size_t groups = grouped.value().extent(0);
  return grouped.tape->record(paenet::merge_axis(grouped.value(), axis), {grouped},
                              [grouped, axis, groups](Tape<T>& t, const Tensor<T>& g) {
                                t.accumulate_grad(grouped, paenet::regroup_axis(g, axis, groups));
                              });
}

template <typename T>
Var<T> concat_axis(std::span<const Var<T>> parts, std::size_t axis) {
  require(!parts.empty(), "concat_axis: need at least one part");
  std::vector<Tensor<T>> values;
  values.reserve(parts.size());
  for (const auto& p : parts) values.push_back(p.value());
  Tensor<T> out = paenet::concat_axis(std::span<const Tensor<T>>(values), axis);
  std::vector<Var<T>> inputs(parts.begin(), parts.end());
  return parts[0].tape->record(std::move(out), parts, [inputs, axis](Tape<T>& t, const Tensor<T>& g) {
    std::size_t begin = 0;
    for (const auto& in : inputs) {
      const std::size_t len = t.value(in).extent(axis);
      if (t.requires_grad(in)) t.accumulate_grad(in, paenet::slice_axis(g, axis, begin, len));
      begin += len;
    }
  });
}

template <typename T>
Var<T> slice_axis(Var<T> input, std::size_t axis, std::size_t begin, std::size_t length) {
  return input.tape->record(paenet::slice_axis(input.value(), axis, begin, length), {input},
                            [input, axis, begin, length](Tape<T>& t, const Tensor<T>& g) {
                              Tensor<T>* slot = t.grad_slot(input);
                              if (!slot) return;
                              const Shape& s = slot->shape();
                              std::size_t outer = 1, inner = 1;
                              for (std::size_t i = 0; i < axis; ++i) outer *= s[i];
                              for (std::size_t i = axis + 1; i < s.size(); ++i) inner *= s[i];
                              const std::size_t run = length * inner;
                              for (std::size_t o = 0; o < outer; ++o) {
                                T* dst = slot->ptr() + (o * s[axis] + begin) * inner;
                                const T* src = g.ptr() + o * run;
                                for (std::size_t i = 0; i < run; ++i) dst[i] += src[i];
                              }
                            });
}

template <typename T>
Var<T> reshape(Var<T> input, Shape shape) {
  const Shape original = input.shape();
  return input.tape->record(input.value().reshaped(std::move(shape)), {input},
                            [input, original](Tape<T>& t, const Tensor<T>& g) {
                              t.accumulate_grad(input, g.reshaped(original));
                            });
}

template <typename T>
Var<T> upsample_axis(Var<T> input, std::size_t axis, std::size_t factor) {
  return input.tape->record(paenet::upsample_axis(input.value(), axis, factor), {input},
                            [input, axis, factor](Tape<T>& t, const Tensor<T>& g) {
                              t.accumulate_grad(input, upsample_axis_backward(g, axis, factor));
                            });
}

template <typename T>
Var<T> matmul2d(Var<T> a, Var<T> b) {
  return a.tape->record(paenet::matmul2d(a.value(), b.value()), {a, b}, [a, b](Tape<T>& t, const Tensor<T>& g) {
    if (Tensor<T>* ga = t.grad_slot(a)) matmul_accumulate(g, false, t.value(b), true, *ga);
    if (Tensor<T>* gb = t.grad_slot(b)) matmul_accumulate(t.value(a), true, g, false, *gb);
  });
}

template <typename T>
Var<T> add(Var<T> a, Var<T> b) {
  return a.tape->record(paenet::add(a.value(), b.value()), {a, b}, [a, b](Tape<T>& t, const Tensor<T>& g) {
    if (t.requires_grad(a)) t.accumulate_grad(a, reduce_to_shape(g, t.value(a).shape()));
    if (t.requires_grad(b)) t.accumulate_grad(b, reduce_to_shape(g, t.value(b).shape()));
  });
}

template <typename T>
Var<T> multiply(Var<T> a, Var<T> b) {
  return a.tape->record(paenet::multiply(a.value(), b.value()), {a, b}, [a, b](Tape<T>& t, const Tensor<T>& g) {
    if (t.requires_grad(a)) t.accumulate_grad(a, reduce_to_shape(paenet::multiply(g, t.value(b)), t.value(a).shape()));
    if (t.requires_grad(b)) t.accumulate_grad(b, reduce_to_shape(paenet::multiply(g, t.value(a)), t.value(b).shape()));
  });
}

template <typename T>
Var<T> scale(Var<T> a, T factor) {
  return a.tape->record(paenet::scale(a.value(), factor), {a}, [a, factor](Tape<T>& t, const Tensor<T>& g) {
    t.accumulate_grad(a, paenet::scale(g, factor));
  });
}

template <typename T>
Var<T> weighted_sum(Var<T> a, const Tensor<T>& weights) {
  require(a.shape() == weights.shape(), "weighted_sum: shape mismatch");
  T s = T(0);
  const Tensor<T>& x = a.value();
  for (std::size_t i = 0; i < x.size(); ++i) s += x[i] * weights[i];
  return a.tape->record(Tensor<T>::scalar(s), {a}, [a, weights](Tape<T>& t, const Tensor<T>& g) {
    t.accumulate_grad(a, paenet::scale(weights, g[0]));
  });
}

template <typename T>
Var<T> mean_all(Var<T> a) {
  const Tensor<T>& x = a.value();
  T s = T(0);
  for (auto v : x.data()) s += v;
  const T inv = T(1) / static_cast<T>(x.size());
  return a.tape->record(Tensor<T>::scalar(s * inv), {a}, [a, inv](Tape<T>& t, const Tensor<T>& g) {
    t.accumulate_grad(a, Tensor<T>(t.value(a).shape(), g[0] * inv));
  });
}

#define PAENET_INSTANTIATE_AUTOGRAD(T)                                                                      \
  template Var<T> conv3d(Var<T>, const ConvSpec&, Var<T>, Var<T>);                                         \
  template Var<T> conv2d(Var<T>, const ConvSpec&, Var<T>, Var<T>);                                         \
  template Var<T> pool_axis(Var<T>, std::size_t, PoolMode, std::size_t);                                   \
  template Var<T> sum_axis(Var<T>, std::size_t);                                                           \
  template Var<T> global_avg_pool(Var<T>);                                                                 \
  template Var<T> softmax_axis(Var<T>, std::size_t);                                                       \
  template Var<T> activation(Var<T>, Activation);                                                          \
  template Var<T> batch_norm(Var<T>, Var<T>, Var<T>, Tensor<T>&, Tensor<T>&, T, NormMode, T);               \
  template Var<T> layer_norm(Var<T>, Var<T>, Var<T>, T);                                                   \
  template Var<T> permute_axes(Var<T>, std::span<const std::size_t>);                                      \
  template Var<T> regroup_axis(Var<T>, std::size_t, std::size_t);                                          \
  template Var<T> merge_axis(Var<T>, std::size_t);                                                         \
  template Var<T> concat_axis(std::span<const Var<T>>, std::size_t);                                       \
  template Var<T> slice_axis(Var<T>, std::size_t, std::size_t, std::size_t);                               \
  template Var<T> reshape(Var<T>, Shape);                                                                  \
  template Var<T> upsample_axis(Var<T>, std::size_t, std::size_t);                                         \
  template Var<T> matmul2d(Var<T>, Var<T>);                                                                \
  template Var<T> add(Var<T>, Var<T>);                                                                     \
  template Var<T> multiply(Var<T>, Var<T>);                                                                \
  template Var<T> scale(Var<T>, T);                                                                        \
  template Var<T> weighted_sum(Var<T>, const Tensor<T>&);                                                  \
  template Var<T> mean_all(Var<T>);

PAENET_INSTANTIATE_AUTOGRAD(float)
PAENET_INSTANTIATE_AUTOGRAD(double)

#undef PAENET_INSTANTIATE_AUTOGRAD

}  // namespace paenet
