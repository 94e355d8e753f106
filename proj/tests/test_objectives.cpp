// Copyright 2026 the iwsel authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include <gtest/gtest.h>

#include <cmath>

#include "iwsel/objectives.hpp"
#include "iwsel/rng.hpp"
#include "support/gradcheck.hpp"

using namespace iwsel;

TEST(CrossEntropy, HandValues) {
  EXPECT_NEAR(cross_entropy_loss<double>({0.5}, {1}), std::log(2.0), 1e-12);
  // symmetry at p = 0.5
  EXPECT_DOUBLE_EQ(cross_entropy_loss<double>({0.5}, {1}),
                   cross_entropy_loss<double>({0.5}, {0}));
}

TEST(CrossEntropy, VanishesAsProbabilitiesMatchLabels) {
  double prev = cross_entropy_loss<double>({0.9, 0.1}, {1, 0});
  for (double p : {0.99, 0.999, 0.9999}) {
    const double cur = cross_entropy_loss<double>({p, 1.0 - p}, {1, 0});
    EXPECT_LT(cur, prev);
    prev = cur;
  }
  EXPECT_LT(prev, 1e-3);
}

TEST(CrossEntropy, Errors) {
  EXPECT_THROW(cross_entropy_loss<double>({0.5, 0.5}, {1}), ConfigError);
  EXPECT_THROW(cross_entropy_loss<double>({1.0}, {1}), ConfigError);
  EXPECT_THROW(cross_entropy_loss<double>({0.0}, {0}), ConfigError);
}

TEST(CrossEntropy, GradientWithRespectToProbability) {
  // d(loss)/dp = (p - y) / (p (1 - p)), checked by central differences.
  const double h = 1e-7;
  for (double p : {0.2, 0.5, 0.73}) {
    for (int y : {0, 1}) {
      const double analytic = (p - y) / (p * (1.0 - p));
      const double numeric = (cross_entropy_loss<double>({p + h}, {y}) -
                              cross_entropy_loss<double>({p - h}, {y})) /
                             (2 * h);
      EXPECT_NEAR(analytic, numeric, 1e-5 * std::abs(analytic) + 1e-8);
    }
  }
}

TEST(WeightedMargin, HandValues) {
  const MarginConfig gamma025{0.25};
  // hinge inactive
  EXPECT_DOUBLE_EQ(weighted_margin_loss<double>({{0.9, 0.1}}, {1.0}, gamma025), 0.0);
  // 0.5 * (0.7 - 0.4 - 0.25) = 0.025
  EXPECT_NEAR(weighted_margin_loss<double>({{0.4, 0.7}}, {0.5}, gamma025), 0.025,
              1e-12);
  // zero weight annihilates the instance
  EXPECT_DOUBLE_EQ(weighted_margin_loss<double>({{0.1, 0.9}}, {0.0}, gamma025), 0.0);
}

TEST(WeightedMargin, Errors) {
  EXPECT_THROW(weighted_margin_loss<double>({{0.4, 0.7}}, {1.5}, {0.25}), ConfigError);
  EXPECT_THROW(weighted_margin_loss<double>({{0.4, 0.7}}, {-0.1}, {0.25}), ConfigError);
  EXPECT_THROW(weighted_margin_loss<double>({{0.4, 0.7}}, {0.5, 0.5}, {0.25}),
               ConfigError);
  EXPECT_THROW(weighted_margin_loss<double>({{0.4, 0.7}}, {0.5}, {-1.0}), ConfigError);
}

TEST(WeightedMargin, NonNegativeAndZeroCondition) {
  Rng rng(42);
  for (int i = 0; i < 2000; ++i) {
    const double ppos = rng.next_double();
    const double pneg = rng.next_double();
    const double w = rng.next_double();
    const double gamma = rng.next_double() * 0.5;
    const double loss = weighted_margin_loss<double>({{ppos, pneg}}, {w}, {gamma});
    EXPECT_GE(loss, 0.0);
    const bool inactive = pneg - ppos <= gamma;
    if (w == 0.0 || inactive)
      EXPECT_EQ(loss, 0.0);
    else
      EXPECT_GT(loss, 0.0);
  }
}

TEST(WeightedMargin, LinearInWeights) {
  Rng rng(7);
  std::vector<std::pair<double, double>> pairs;
  std::vector<double> weights;
  for (int i = 0; i < 50; ++i) {
    pairs.emplace_back(rng.next_double(), rng.next_double());
    weights.push_back(rng.next_double());
  }
  const double base = weighted_margin_loss<double>(pairs, weights, {0.1});
  for (double c : {0.25, 0.5, 0.9}) {
    auto scaled = weights;
    for (double& w : scaled) w *= c;
    EXPECT_NEAR(weighted_margin_loss<double>(pairs, scaled, {0.1}), c * base, 1e-12);
  }
}

TEST(WeightedMargin, UniformWeightsEqualPlainHinge) {
  Rng rng(11);
  std::vector<std::pair<double, double>> pairs;
  for (int i = 0; i < 40; ++i) pairs.emplace_back(rng.next_double(), rng.next_double());
  const std::vector<double> ones(pairs.size(), 1.0);
  double plain = 0.0;
  for (const auto& [p, n] : pairs) plain += std::max(n - p - 0.2, 0.0);
  EXPECT_DOUBLE_EQ(weighted_margin_loss<double>(pairs, ones, {0.2}), plain);
}

TEST(WeightedMargin, DroppingZeroWeightInstancesChangesNothing) {
  Rng rng(13);
  std::vector<std::pair<double, double>> pairs, kept_pairs;
  std::vector<double> weights, kept_weights;
  for (int i = 0; i < 60; ++i) {
    const auto pr = std::make_pair(rng.next_double(), rng.next_double());
    const double w = i % 3 == 0 ? 0.0 : rng.next_double();
    pairs.push_back(pr);
    weights.push_back(w);
    if (w > 0.0) {
      kept_pairs.push_back(pr);
      kept_weights.push_back(w);
    }
  }
  EXPECT_NEAR(weighted_margin_loss<double>(pairs, weights, {0.15}),
              weighted_margin_loss<double>(kept_pairs, kept_weights, {0.15}), 1e-7);
}

TEST(Gradients, CrossEntropyThroughTinyMatcher) {
  for (Arch arch : {Arch::recurrent, Arch::attention}) {
    const auto rep = testutil::check_cross_entropy(arch);
    EXPECT_TRUE(rep.ok()) << to_string(arch) << ": " << rep.bad << "/" << rep.total
                          << " worst rel " << rep.worst_rel;
  }
}

TEST(Gradients, WeightedMarginThroughTinyMatcher) {
  for (Arch arch : {Arch::recurrent, Arch::attention}) {
    const auto rep = testutil::check_weighted_margin(arch);
    EXPECT_TRUE(rep.ok()) << to_string(arch) << ": " << rep.bad << "/" << rep.total
                          << " worst rel " << rep.worst_rel;
    EXPECT_GT(rep.max_abs_analytic, 1e-9) << "degenerate check";
  }
}
