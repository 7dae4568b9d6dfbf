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

#include "paenet/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "paenet/rng.hpp"

namespace paenet {

namespace {

double evaluate(const Objective& fn, const std::vector<Tensor<double>>& inputs) {
  Tape<double> tape(false);
  std::vector<Var<double>> leaves;
  leaves.reserve(inputs.size());
  for (const auto& x : inputs) leaves.push_back(tape.constant(x));
  const Var<double> loss = fn(tape, leaves);
  require(loss.value().size() == 1, "grad_check: objective must return a single-element tensor");
  const double v = loss.value()[0];
  if (!std::isfinite(v)) throw NumericError("grad_check: non-finite objective value");
  return v;
}

std::vector<std::size_t> pick_coords(std::size_t n, std::size_t max_coords, SplitMix64& rng) {
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  if (max_coords == 0 || max_coords >= n) return idx;
  // Partial Fisher-Yates.
  for (std::size_t i = 0; i < max_coords; ++i) {
    const std::size_t j = i + static_cast<std::size_t>(rng.below(n - i));
    std::swap(idx[i], idx[j]);
  }
  idx.resize(max_coords);
  std::sort(idx.begin(), idx.end());
  return idx;
}

}  // namespace

GradCheckResult grad_check(const Objective& fn, const std::vector<Tensor<double>>& inputs,
                           const GradCheckOptions& options) {
  require(options.eps > 0.0, "grad_check: eps must be positive");
  require(!inputs.empty(), "grad_check: need at least one input");

  std::vector<Tensor<double>> analytic;
  {
    Tape<double> tape(true);
    std::vector<Var<double>> leaves;
    for (const auto& x : inputs) leaves.push_back(tape.leaf(x));
    const Var<double> loss = fn(tape, leaves);
    require(loss.value().size() == 1, "grad_check: objective must return a single-element tensor");
    if (!std::isfinite(loss.value()[0])) throw NumericError("grad_check: non-finite objective value");
    tape.backward(loss);
    for (const auto& leaf : leaves) {
      analytic.push_back(tape.grad(leaf));
      check_finite(analytic.back(), "grad_check analytic gradient");
    }
  }

  GradCheckResult result;
  SplitMix64 rng(options.seed);
  std::vector<Tensor<double>> probe = inputs;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    for (std::size_t i : pick_coords(inputs[k].size(), options.max_coords, rng)) {
      const double orig = probe[k][i];
      probe[k][i] = orig + options.eps;
      const double up = evaluate(fn, probe);
      probe[k][i] = orig - options.eps;
      const double down = evaluate(fn, probe);
      probe[k][i] = orig;
      const double numeric = (up - down) / (2.0 * options.eps);
      const double a = analytic[k][i];
      const double err = std::abs(a - numeric) / std::max({1.0, std::abs(a), std::abs(numeric)});
      ++result.probed;
      if (err > result.max_error) {
        result.max_error = err;
        result.worst_input = k;
        result.worst_coord = i;
      }
    }
  }
  result.passed = result.max_error <= options.tol;
  return result;
}

}  // namespace paenet
