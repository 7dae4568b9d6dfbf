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

#pragma once

#include <map>
#include <memory>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "paenet/autograd.hpp"
#include "paenet/rng.hpp"

namespace paenet {

inline constexpr double kBatchNormEps = 1e-5;
inline constexpr double kBatchNormMomentum = 0.1;
inline constexpr double kLayerNormEps = 1e-5;

template <typename T>
struct ParamEntry {
  std::string name;
  Tensor<T> value;
  /// Running statistics are stored alongside weights but never optimized.
  bool trainable = true;
};

/// Named, insertion-ordered tensors of a block or a whole network.
template <typename T>
class ParamSet {
 public:
  Tensor<T>& add(std::string name, Tensor<T> value, bool trainable = true);

  bool contains(std::string_view name) const;
  Tensor<T>& at(std::string_view name);
  const Tensor<T>& at(std::string_view name) const;

  std::vector<ParamEntry<T>>& entries() noexcept { return entries_; }
  const std::vector<ParamEntry<T>>& entries() const noexcept { return entries_; }
  std::size_t size() const noexcept { return entries_.size(); }
  std::size_t total_elements() const;

  template <typename U>
  ParamSet<U> cast() const {
    ParamSet<U> out;
    for (const auto& e : entries_) out.add(e.name, e.value.template cast<U>(), e.trainable);
    return out;
  }

  bool operator==(const ParamSet& other) const;

 private:
  std::vector<ParamEntry<T>> entries_;
  std::unordered_map<std::string, std::size_t> index_;
};

/// Fan-in scaled uniform weights in [-sqrt(6/fan_in), sqrt(6/fan_in)], zero bias.
template <typename T>
void declare_conv(ParamSet<T>& params, const std::string& name, const ConvSpec& spec, SplitMix64& rng);
/// gamma = 1, beta = 0, running mean 0, running variance 1.
template <typename T>
void declare_batch_norm(ParamSet<T>& params, const std::string& name, std::size_t channels);
template <typename T>
void declare_layer_norm(ParamSet<T>& params, const std::string& name, std::size_t channels);

/// Binds a ParamSet to a tape for one forward pass. Parameters become leaves
/// on first use; sub-scopes share the binding and extend the name prefix.
template <typename T>
class Scope {
 public:
  Scope(Tape<T>& tape, ParamSet<T>& params, NormMode mode, bool params_require_grad);
  /// Eval-mode binding of read-only parameters; nothing is written through it.
  Scope(Tape<T>& tape, const ParamSet<T>& params);

  Scope sub(std::string_view child) const;

  Var<T> param(std::string_view name) const;
  Tensor<T>& buffer(std::string_view name) const;
  /// Pre-binds a full parameter name to an existing tape value.
  void bind(const std::string& full_name, Var<T> v) const;

  std::string full_name(std::string_view name) const;
  Tape<T>& tape() const noexcept { return *shared_->tape; }
  ParamSet<T>& params() const noexcept { return *shared_->params; }
  NormMode mode() const noexcept { return shared_->mode; }
  /// Full name to leaf for every parameter bound so far.
  const std::map<std::string, Var<T>>& bound() const noexcept { return shared_->cache; }

 private:
  struct Shared {
    Tape<T>* tape;
    ParamSet<T>* params;
    NormMode mode;
    bool requires_grad;
    std::map<std::string, Var<T>> cache;
  };

  Scope(std::shared_ptr<Shared> shared, std::string prefix)
      : shared_(std::move(shared)), prefix_(std::move(prefix)) {}

  std::shared_ptr<Shared> shared_;
  std::string prefix_;
};

template <typename T>
using Batch = std::vector<Var<T>>;

// Layer helpers over a scope. Parameter names are "<name>.weight", "<name>.bias",
// "<name>.gamma", "<name>.beta", "<name>.running_mean", "<name>.running_var".

template <typename T>
Var<T> apply_conv(const Scope<T>& scope, const std::string& name, const ConvSpec& spec, Var<T> x);

/// Batch normalization with statistics shared across every sample in `xs`.
template <typename T>
Batch<T> apply_batch_norm(const Scope<T>& scope, const std::string& name, std::span<const Var<T>> xs);

template <typename T>
Var<T> apply_layer_norm(const Scope<T>& scope, const std::string& name, Var<T> x);

}  // namespace paenet
