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

#include "paenet/metrics.hpp"

#include <cmath>
#include <string>

namespace paenet {

namespace {

double ratio(std::uint64_t num, std::uint64_t den) {
  return den == 0 ? 1.0 : static_cast<double>(num) / static_cast<double>(den);
}

}  // namespace

BinaryMask threshold_map(const Tensor<float>& prob, double t) {
  require(t >= 0.0 && t <= 1.0, "threshold must lie in [0,1], got " + std::to_string(t));
  BinaryMask mask(prob.shape());
  for (std::size_t i = 0; i < prob.size(); ++i) mask[i] = static_cast<double>(prob[i]) >= t ? 1 : 0;
  return mask;
}

ConfusionCounts confusion_counts(const BinaryMask& pred, const BinaryMask& gt) {
  require(pred.shape() == gt.shape(),
          "confusion_counts: shape mismatch " + to_string(pred.shape()) + " vs " + to_string(gt.shape()));
  ConfusionCounts c;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const bool p = pred[i] != 0;
    const bool g = gt[i] != 0;
    if (p && g)
      ++c.tp;
    else if (p)
      ++c.fp;
    else if (g)
      ++c.fn;
    else
      ++c.tn;
  }
  return c;
}

MetricValues metrics_from_counts(const ConfusionCounts& c) {
  MetricValues m;
  m[Metric::dice] = ratio(2 * c.tp, 2 * c.tp + c.fp + c.fn);
  m[Metric::jac] = ratio(c.tp, c.tp + c.fp + c.fn);
  m[Metric::bacc] = 0.5 * (ratio(c.tp, c.tp + c.fn) + ratio(c.tn, c.tn + c.fp));
  m[Metric::pre] = ratio(c.tp, c.tp + c.fp);
  m[Metric::rec] = ratio(c.tp, c.tp + c.fn);
  return m;
}

MeanSd mean_sd(std::span<const double> values) {
  require(!values.empty(), "mean_sd: no values");
  MeanSd r;
  for (double v : values) r.mean += v;
  r.mean /= static_cast<double>(values.size());
  if (values.size() > 1) {
    double ss = 0.0;
    for (double v : values) ss += (v - r.mean) * (v - r.mean);
    r.sd = std::sqrt(ss / static_cast<double>(values.size() - 1));
  }
  return r;
}

MetricsReport::MetricsReport(std::vector<MetricValues> samples) : samples_(std::move(samples)) {
  require(!samples_.empty(), "metrics report needs at least one sample");
  for (std::size_t k = 0; k < kMetricCount; ++k) {
    auto& s = summaries_[k];
    for (const auto& m : samples_) s.values.push_back(m.v[k]);
    s.stats = mean_sd(s.values);
  }
}

MetricsReport evaluate_dataset(std::span<const EvalSample> samples, double t) {
  require(!samples.empty(), "evaluate_dataset: empty sample list");
  std::vector<MetricValues> values;
  values.reserve(samples.size());
  for (const auto& s : samples) values.push_back(metrics_from_counts(confusion_counts(threshold_map(s.prob, t), s.gt)));
  return MetricsReport(std::move(values));
}

}  // namespace paenet
