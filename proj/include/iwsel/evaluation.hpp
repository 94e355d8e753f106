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

#include <algorithm>
#include <numeric>
#include <vector>

#include "iwsel/corpus.hpp"
#include "iwsel/errors.hpp"
#include "iwsel/matcher.hpp"

namespace iwsel {

struct Metrics {
  double map = 0.0;
  double mrr = 0.0;
  double p_at_1 = 0.0;
  int num_groups = 0;
};

// Candidate indices sorted by descending score; ties keep ascending input
// order so results are reproducible.
template <typename T>
std::vector<int> rank_by_score(const std::vector<T>& scores) {
  std::vector<int> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](int a, int b) { return scores[a] > scores[b]; });
  return order;
}

template <typename T>
std::vector<int> rank_candidates(const MatcherModel<T>& model, const EvalGroup& group) {
  if (model.role != Role::response_selection)
    throw ConfigError("rank_candidates: model role must be response_selection");
  std::vector<T> scores;
  scores.reserve(group.candidate_ids.size());
  const auto turns = group.model_turns();
  for (const TokenSeq& cand : group.candidate_ids)
    scores.push_back(model.score(turns, cand));
  return rank_by_score(scores);
}

// Mean over positive positions k (1-based) of (#positives in top k)/k.
inline double average_precision(const std::vector<int>& ordered_labels) {
  int hits = 0;
  double sum = 0.0;
  for (size_t k = 0; k < ordered_labels.size(); ++k) {
    if (ordered_labels[k] == 1) {
      ++hits;
      sum += double(hits) / double(k + 1);
    }
  }
  if (hits == 0) throw DataError("average_precision: no positive label");
  return sum / hits;
}

inline double reciprocal_rank(const std::vector<int>& ordered_labels) {
  for (size_t k = 0; k < ordered_labels.size(); ++k)
    if (ordered_labels[k] == 1) return 1.0 / double(k + 1);
  throw DataError("reciprocal_rank: no positive label");
}

inline double precision_at_1(const std::vector<int>& ordered_labels) {
  return !ordered_labels.empty() && ordered_labels[0] == 1 ? 1.0 : 0.0;
}

// Macro-average over groups using an arbitrary scorer f(group) -> scores.
template <typename Scorer>
Metrics evaluate_with(Scorer&& scorer, const std::vector<EvalGroup>& groups) {
  if (groups.empty()) throw DataError("evaluate: empty group list");
  Metrics m;
  for (const EvalGroup& g : groups) {
    const auto scores = scorer(g);
    const auto order = rank_by_score(scores);
    std::vector<int> ordered;
    ordered.reserve(order.size());
    for (int i : order) ordered.push_back(g.labels[i]);
    m.map += average_precision(ordered);
    m.mrr += reciprocal_rank(ordered);
    m.p_at_1 += precision_at_1(ordered);
  }
  m.num_groups = int(groups.size());
  m.map /= m.num_groups;
  m.mrr /= m.num_groups;
  m.p_at_1 /= m.num_groups;
  return m;
}

template <typename T>
Metrics evaluate(const MatcherModel<T>& model, const std::vector<EvalGroup>& groups) {
  return evaluate_with(
      [&](const EvalGroup& g) {
        std::vector<T> scores;
        scores.reserve(g.candidate_ids.size());
        const auto turns = g.model_turns();
        for (const TokenSeq& cand : g.candidate_ids)
          scores.push_back(model.score(turns, cand));
        return scores;
      },
      groups);
}

}  // namespace iwsel
