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

#include <string>
#include <string_view>
#include <vector>

#include "paenet/gradcheck.hpp"

namespace paenet {

struct GradSuiteCase {
  std::string group;
  std::string name;
  GradCheckResult result;
};

/// Groups accepted by run_grad_suite besides "all".
std::vector<std::string> grad_suite_groups();

/// Finite-difference checks of every differentiable op ("ops") or of one
/// block ("apm", "qam", "ffm", "psa", "network") on small random inputs.
/// Each case is graded against `options.tol`.
std::vector<GradSuiteCase> run_grad_suite(std::string_view group, const GradCheckOptions& options = {});

/// Checks a conv followed by a sigmoid whose registered derivative is
/// deliberately wrong. A working harness reports a large error here.
GradCheckResult fault_injection_check(const GradCheckOptions& options = {});

}  // namespace paenet
