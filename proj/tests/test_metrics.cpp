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

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "paenet/metrics.hpp"
#include "paenet/rng.hpp"

using namespace paenet;

namespace {

BinaryMask mask3(std::initializer_list<std::pair<std::size_t, std::size_t>> ones) {
  BinaryMask m(Shape{3, 3});
  for (auto [r, c] : ones) m.at({r, c}) = 1;
  return m;
}

}  // namespace

TEST_CASE("threshold_map") {
  const Tensor<float> p(Shape{2, 2}, std::vector<float>{0.5f, 0.49f, 1.0f, 0.0f});
  const auto m = threshold_map(p, 0.5);
  CHECK(m == BinaryMask(Shape{2, 2}, std::vector<std::uint8_t>{1, 0, 1, 0}));
  CHECK(threshold_map(Tensor<float>(Shape{3}, 0.2f), 0.5) == BinaryMask(Shape{3}));
  CHECK_THROWS_AS(threshold_map(p, 1.5), ContractError);
  CHECK_THROWS_AS(threshold_map(p, -0.1), ContractError);

  SplitMix64 rng(1);
  Tensor<float> r(Shape{16, 16});
  for (auto& v : r.data()) v = static_cast<float>(rng.uniform());
  for (double t1 = 0.0; t1 <= 1.0; t1 += 0.125) {
    const auto lo = threshold_map(r, t1);
    for (double t2 = t1; t2 <= 1.0; t2 += 0.125) {
      const auto hi = threshold_map(r, t2);
      for (std::size_t i = 0; i < r.size(); ++i) CHECK(hi[i] <= lo[i]);
    }
  }
}

TEST_CASE("confusion_counts") {
  const BinaryMask ones(Shape{2, 2}, 1), zeros(Shape{2, 2});
  CHECK(confusion_counts(ones, ones) == ConfusionCounts{4, 0, 0, 0});
  CHECK(confusion_counts(ones, zeros) == ConfusionCounts{0, 4, 0, 0});
  const auto c = confusion_counts(mask3({{0, 0}, {0, 1}, {2, 2}}), mask3({{0, 0}, {0, 1}, {1, 0}}));
  CHECK(c.tp == 2);
  CHECK(c.fp == 1);
  CHECK(c.fn == 1);
  CHECK(c.tn == 5);
  CHECK_THROWS_AS(confusion_counts(ones, BinaryMask(Shape{4})), ContractError);

  SplitMix64 rng(2);
  BinaryMask a(Shape{5, 7}), b(Shape{5, 7});
  for (std::size_t i = 0; i < a.size(); ++i) {
    a[i] = rng.below(2);
    b[i] = rng.below(2);
  }
  const auto ab = confusion_counts(a, b), ba = confusion_counts(b, a);
  CHECK(ab.tp == ba.tp);
  CHECK(ab.tn == ba.tn);
  CHECK(ab.fp == ba.fn);
  CHECK(ab.fn == ba.fp);
  CHECK(ab.total() == 35);
}

TEST_CASE("metrics_from_counts hand case") {
  const auto m = metrics_from_counts({2, 1, 5, 1});
  CHECK(m[Metric::dice] == doctest::Approx(0.6667).epsilon(1e-4));
  CHECK(m[Metric::jac] == doctest::Approx(0.5).epsilon(1e-4));
  CHECK(m[Metric::bacc] == doctest::Approx(0.75).epsilon(1e-4));
  CHECK(m[Metric::pre] == doctest::Approx(0.6667).epsilon(1e-4));
  CHECK(m[Metric::rec] == doctest::Approx(0.6667).epsilon(1e-4));
}

TEST_CASE("metric conventions") {
  for (double v : metrics_from_counts({5, 0, 7, 0}).v) CHECK(v == 1.0);
  for (double v : metrics_from_counts({0, 0, 9, 0}).v) CHECK(v == 1.0);
  const auto miss = metrics_from_counts({0, 0, 0, 3});
  CHECK(miss[Metric::dice] == 0.0);
  CHECK(miss[Metric::pre] == 1.0);
  CHECK(miss[Metric::bacc] == 0.5);
}

TEST_CASE("metric identities over random counts") {
  SplitMix64 rng(3);
  for (int n = 0; n < 1000; ++n) {
    const ConfusionCounts c{rng.below(50), rng.below(50), rng.below(50), rng.below(50)};
    const auto m = metrics_from_counts(c);
    const double j = m[Metric::jac];
    CHECK(std::abs(m[Metric::dice] - 2 * j / (1 + j)) <= 1e-12);
    for (double v : m.v) CHECK((v >= 0.0 && v <= 1.0));
    const double p = m[Metric::pre], r = m[Metric::rec];
    if (c.tp + c.fp > 0 && c.tp + c.fn > 0 && p + r > 0) CHECK(std::abs(m[Metric::dice] - 2 * p * r / (p + r)) <= 1e-12);
  }
}

TEST_CASE("aggregation") {
  const std::vector<double> two{0.8, 0.9};
  const auto s = mean_sd(two);
  CHECK(s.mean == doctest::Approx(0.85).epsilon(1e-12));
  CHECK(s.sd == doctest::Approx(0.0707).epsilon(1e-3));
  const std::vector<double> one{0.4};
  CHECK(mean_sd(one).sd == 0.0);
  CHECK_THROWS_AS(MetricsReport({}), ContractError);
  CHECK_THROWS_AS(evaluate_dataset({}), ContractError);
}

TEST_CASE("evaluate_dataset") {
  const BinaryMask gt = mask3({{0, 0}, {0, 1}, {1, 0}});
  Tensor<float> perfect(Shape{3, 3});
  for (std::size_t i = 0; i < 9; ++i) perfect[i] = gt[i] ? 0.9f : 0.1f;
  Tensor<float> partial(Shape{3, 3});
  partial.at({0, 0}) = partial.at({0, 1}) = partial.at({2, 2}) = 0.7f;
  const std::vector<EvalSample> samples{{perfect, gt}, {partial, gt}};
  const auto report = evaluate_dataset(samples);
  CHECK(report.sample_count() == 2);
  const auto& dice = report.summary(Metric::dice);
  CHECK(dice.values.size() == 2);
  CHECK(dice.values[0] == 1.0);
  CHECK(dice.values[1] == doctest::Approx(2.0 / 3.0));
  CHECK(dice.stats.mean == doctest::Approx(5.0 / 6.0));
  for (std::size_t k = 0; k < kMetricCount; ++k) CHECK(report.summary(static_cast<Metric>(k)).values.size() == 2);
}
