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

#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "paenet/autograd.hpp"

namespace paenet {

/// Builds a single-element loss from leaves bound to the checked inputs.
using Objective = std::function<Var<double>(Tape<double>&, std::span<const Var<double>>)>;

struct GradCheckOptions {
  double eps = 1e-5;
  double tol = 1e-4;
  /// Coordinates probed per input tensor; 0 probes all of them. Sampled
  /// coordinates are drawn without replacement from `seed`.
  std::size_t max_coords = 0;
  std::uint64_t seed = 0;
};

struct GradCheckResult {
  /// max |analytic - numeric| / max(1, |analytic|, |numeric|)
  double max_error = 0.0;
  std::size_t worst_input = 0;
  std::size_t worst_coord = 0;
  std::size_t probed = 0;
  bool passed = false;
};

/// Compares the tape gradient of `fn` against central differences
/// (f(x+eps) - f(x-eps)) / (2 eps). Throws NumericError on non-finite values.
GradCheckResult grad_check(const Objective& fn, const std::vector<Tensor<double>>& inputs,
                           const GradCheckOptions& options = {});

}  // namespace paenet
