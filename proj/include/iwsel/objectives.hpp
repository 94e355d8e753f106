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

#pragma once

#include <cmath>
#include <utility>
#include <vector>

#include "iwsel/errors.hpp"
#include "iwsel/graph.hpp"

namespace iwsel {

struct MarginConfig {
  double gamma = 0.25;

  void validate() const {
    if (!(gamma >= 0.0)) throw ConfigError("gamma must be >= 0");
  }
};

// Sum of -[y*log p + (1-y)*log(1-p)] over instances. d(loss)/dp = (p-y)/(p(1-p)).
template <typename T>
T cross_entropy_loss(const std::vector<T>& probabilities,
                     const std::vector<int>& labels) {
  if (probabilities.size() != labels.size())
    throw ConfigError("cross_entropy_loss: length mismatch");
  T loss = T(0);
  for (size_t i = 0; i < probabilities.size(); ++i) {
    const T p = probabilities[i];
    if (!(p > T(0) && p < T(1)))
      throw ConfigError("cross_entropy_loss: probability outside (0,1)");
    loss -= labels[i] == 1 ? std::log(p) : std::log(T(1) - p);
  }
  return loss;
}

// Sum of w_i * max{p_neg_i - p_pos_i - gamma, 0}. Zero-weight instances
// contribute neither loss nor gradient; the hinge subgradient at the kink is 0.
template <typename T>
T weighted_margin_loss(const std::vector<std::pair<T, T>>& pairs,
                       const std::vector<T>& weights, const MarginConfig& config) {
  config.validate();
  if (pairs.size() != weights.size())
    throw ConfigError("weighted_margin_loss: length mismatch");
  T loss = T(0);
  for (size_t i = 0; i < pairs.size(); ++i) {
    const T w = weights[i];
    if (!(w >= T(0) && w <= T(1)))
      throw ConfigError("weighted_margin_loss: weight outside [0,1]");
    const T margin = pairs[i].second - pairs[i].first - T(config.gamma);
    if (margin > T(0)) loss += w * margin;
  }
  return loss;
}

// --- graph builders (single instance; batch losses are sums of these) ------

template <typename T>
typename Graph<T>::Id cross_entropy_node(Graph<T>& g, typename Graph<T>::Id prob,
                                         int label) {
  if (label == 1) return g.scale(g.log_op(prob), T(-1));
  // -log(1 - p)
  return g.scale(g.log_op(g.add_const(g.scale(prob, T(-1)), T(1))), T(-1));
}

template <typename T>
typename Graph<T>::Id weighted_margin_node(Graph<T>& g, typename Graph<T>::Id p_pos,
                                           typename Graph<T>::Id p_neg, T weight,
                                           T gamma) {
  auto hinge = g.relu(g.add_const(g.sub(p_neg, p_pos), -gamma));
  return g.scale(hinge, weight);
}

}  // namespace iwsel
