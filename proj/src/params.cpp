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

#include "paenet/params.hpp"

#include <cmath>

namespace paenet {

// --- ParamSet ------------------------------------------------------------------

template <typename T>
Tensor<T>& ParamSet<T>::add(std::string name, Tensor<T> value, bool trainable) {
  require(!index_.contains(name), "ParamSet: duplicate parameter '" + name + "'");
  index_.emplace(name, entries_.size());
  entries_.push_back(ParamEntry<T>{std::move(name), std::move(value), trainable});
  return entries_.back().value;
}

template <typename T>
bool ParamSet<T>::contains(std::string_view name) const {
  return index_.contains(std::string(name));
}

template <typename T>
Tensor<T>& ParamSet<T>::at(std::string_view name) {
  auto it = index_.find(std::string(name));
  require(it != index_.end(), "ParamSet: unknown parameter '" + std::string(name) + "'");
  return entries_[it->second].value;
}

template <typename T>
const Tensor<T>& ParamSet<T>::at(std::string_view name) const {
  auto it = index_.find(std::string(name));
  require(it != index_.end(), "ParamSet: unknown parameter '" + std::string(name) + "'");
  return entries_[it->second].value;
}

template <typename T>
std::size_t ParamSet<T>::total_elements() const {
  std::size_t n = 0;
  for (const auto& e : entries_) n += e.value.size();
  return n;
}

template <typename T>
bool ParamSet<T>::operator==(const ParamSet& other) const {
  if (entries_.size() != other.entries_.size()) return false;
  for (std::size_t i = 0; i < entries_.size(); ++i) {
    const auto& a = entries_[i];
    const auto& b = other.entries_[i];
    if (a.name != b.name || a.trainable != b.trainable || !(a.value == b.value)) return false;
  }
  return true;
}

template <typename T>
void declare_conv(ParamSet<T>& params, const std::string& name, const ConvSpec& spec, SplitMix64& rng) {
  spec.validate();
  const double bound = std::sqrt(6.0 / static_cast<double>(spec.fan_in()));
  Tensor<T> w(spec.weight_shape());
  for (auto& v : w.data()) v = static_cast<T>(rng.uniform(-bound, bound));
  params.add(name + ".weight", std::move(w));
  params.add(name + ".bias", Tensor<T>(Shape{spec.out_channels}));
}

template <typename T>
void declare_batch_norm(ParamSet<T>& params, const std::string& name, std::size_t channels) {
  params.add(name + ".gamma", Tensor<T>(Shape{channels}, T(1)));
  params.add(name + ".beta", Tensor<T>(Shape{channels}));
  params.add(name + ".running_mean", Tensor<T>(Shape{channels}), false);
  params.add(name + ".running_var", Tensor<T>(Shape{channels}, T(1)), false);
}

template <typename T>
void declare_layer_norm(ParamSet<T>& params, const std::string& name, std::size_t channels) {
  params.add(name + ".gamma", Tensor<T>(Shape{channels}, T(1)));
  params.add(name + ".beta", Tensor<T>(Shape{channels}));
}

// --- Scope ---------------------------------------------------------------------

template <typename T>
Scope<T>::Scope(Tape<T>& tape, ParamSet<T>& params, NormMode mode, bool params_require_grad)
    : shared_(std::make_shared<Shared>(Shared{&tape, &params, mode, params_require_grad, {}})) {}

template <typename T>
Scope<T>::Scope(Tape<T>& tape, const ParamSet<T>& params)
    : Scope(tape, const_cast<ParamSet<T>&>(params), NormMode::eval, false) {}

template <typename T>
Scope<T> Scope<T>::sub(std::string_view child) const {
  return Scope(shared_, full_name(child));
}

template <typename T>
std::string Scope<T>::full_name(std::string_view name) const {
  if (prefix_.empty()) return std::string(name);
  std::string out = prefix_;
  out += '.';
  out += name;
  return out;
}

template <typename T>
Var<T> Scope<T>::param(std::string_view name) const {
  std::string full = full_name(name);
  auto it = shared_->cache.find(full);
  if (it != shared_->cache.end()) return it->second;
  Var<T> v = shared_->tape->leaf(shared_->params->at(full), shared_->requires_grad);
  shared_->cache.emplace(std::move(full), v);
  return v;
}

template <typename T>
Tensor<T>& Scope<T>::buffer(std::string_view name) const {
  return shared_->params->at(full_name(name));
}

template <typename T>
void Scope<T>::bind(const std::string& full, Var<T> v) const {
  shared_->cache[full] = v;
}

// --- layer helpers -----------------------------------------------------------

template <typename T>
Var<T> apply_conv(const Scope<T>& scope, const std::string& name, const ConvSpec& spec, Var<T> x) {
  const Var<T> w = scope.param(name + ".weight");
  const Var<T> b = scope.param(name + ".bias");
  return spec.kernel.size() == 3 ? conv3d(x, spec, w, b) : conv2d(x, spec, w, b);
}

template <typename T>
Batch<T> apply_batch_norm(const Scope<T>& scope, const std::string& name, std::span<const Var<T>> xs) {
  require(!xs.empty(), "batch_norm: empty batch");
  const Var<T> gamma = scope.param(name + ".gamma");
  const Var<T> beta = scope.param(name + ".beta");
  Tensor<T>& mean = scope.buffer(name + ".running_mean");
  Tensor<T>& var = scope.buffer(name + ".running_var");
  const T eps = static_cast<T>(kBatchNormEps);
  const T momentum = static_cast<T>(kBatchNormMomentum);
  if (xs.size() == 1) return {batch_norm(xs[0], gamma, beta, mean, var, eps, scope.mode(), momentum)};
  if (scope.mode() == NormMode::eval) {
    Batch<T> out;
    for (const auto& x : xs) out.push_back(batch_norm(x, gamma, beta, mean, var, eps, NormMode::eval, momentum));
    return out;
  }
  // Joint statistics: lay the samples side by side along the first spatial axis.
  const Shape shape = xs[0].shape();
  require(shape.size() >= 2, "batch_norm: samples need a spatial axis");
  for (const auto& x : xs) require(x.shape() == shape, "batch_norm: batch samples differ in shape");
  const Var<T> joint = concat_axis(xs, 1);
  const Var<T> normed = batch_norm(joint, gamma, beta, mean, var, eps, NormMode::train, momentum);
  Batch<T> out;
  for (std::size_t i = 0; i < xs.size(); ++i) out.push_back(slice_axis(normed, 1, i * shape[1], shape[1]));
  return out;
}

template <typename T>
Var<T> apply_layer_norm(const Scope<T>& scope, const std::string& name, Var<T> x) {
  return layer_norm(x, scope.param(name + ".gamma"), scope.param(name + ".beta"), static_cast<T>(kLayerNormEps));
}

#define PAENET_INSTANTIATE_PARAMS(T)                                                                  \
  template class ParamSet<T>;                                                                        \
  template class Scope<T>;                                                                           \
  template void declare_conv(ParamSet<T>&, const std::string&, const ConvSpec&, SplitMix64&);         \
  template void declare_batch_norm(ParamSet<T>&, const std::string&, std::size_t);                   \
  template void declare_layer_norm(ParamSet<T>&, const std::string&, std::size_t);                   \
  template Var<T> apply_conv(const Scope<T>&, const std::string&, const ConvSpec&, Var<T>);           \
  template Batch<T> apply_batch_norm(const Scope<T>&, const std::string&, std::span<const Var<T>>);   \
  template Var<T> apply_layer_norm(const Scope<T>&, const std::string&, Var<T>);

PAENET_INSTANTIATE_PARAMS(float)
PAENET_INSTANTIATE_PARAMS(double)

#undef PAENET_INSTANTIATE_PARAMS

}  // namespace paenet
