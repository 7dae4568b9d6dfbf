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

// Binary segmentation metrics and their dataset-level aggregation.

#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <string_view>
#include <vector>

#include "paenet/tensor.hpp"

namespace paenet {

inline constexpr double kDefaultThreshold = 0.5;

/// Foreground iff prob >= t.
BinaryMask threshold_map(const Tensor<float>& prob, double t = kDefaultThreshold);

struct ConfusionCounts {
  std::uint64_t tp = 0, fp = 0, tn = 0, fn = 0;

  std::uint64_t total() const noexcept { return tp + fp + tn + fn; }
  bool operator==(const ConfusionCounts&) const = default;
};

ConfusionCounts confusion_counts(const BinaryMask& pred, const BinaryMask& gt);

enum class Metric : std::size_t { dice, jac, bacc, pre, rec };
inline constexpr std::size_t kMetricCount = 5;
/// Report field order.
inline constexpr std::array<std::string_view, kMetricCount> kMetricNames{"dice", "jac", "bacc", "pre", "rec"};

struct MetricValues {
  std::array<double, kMetricCount> v{};

  double operator[](Metric m) const { return v[static_cast<std::size_t>(m)]; }
  double& operator[](Metric m) { return v[static_cast<std::size_t>(m)]; }
};

/// Empty-vs-empty comparisons score 1; a rate whose denominator is zero is 1.
MetricValues metrics_from_counts(const ConfusionCounts& c);

struct MeanSd {
  double mean = 0.0;
  /// Sample standard deviation (n - 1); zero for one value.
  double sd = 0.0;
};

MeanSd mean_sd(std::span<const double> values);

struct MetricSummary {
  std::vector<double> values;
  MeanSd stats;
};

class MetricsReport {
 public:
  /// Throws ContractError for an empty sample list.
  explicit MetricsReport(std::vector<MetricValues> samples);

  std::size_t sample_count() const noexcept { return samples_.size(); }
  const std::vector<MetricValues>& samples() const noexcept { return samples_; }
  const MetricSummary& summary(Metric m) const { return summaries_[static_cast<std::size_t>(m)]; }

 private:
  std::vector<MetricValues> samples_;
  std::array<MetricSummary, kMetricCount> summaries_;
};

struct EvalSample {
  Tensor<float> prob;
  BinaryMask gt;
};

MetricsReport evaluate_dataset(std::span<const EvalSample> samples, double t = kDefaultThreshold);

}  // namespace paenet
