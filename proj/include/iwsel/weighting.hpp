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
#include <cmath>
#include <fstream>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "iwsel/corpus.hpp"
#include "iwsel/errors.hpp"
#include "iwsel/matcher.hpp"
#include "iwsel/rng.hpp"

namespace iwsel {

enum class Strategy {
  wm,
  uniform,
  random,
  jaccard,
  embedding,
  response_model,
  single_turn_wm,
  dual,
};

inline std::string to_string(Strategy s) {
  switch (s) {
    case Strategy::wm: return "wm";
    case Strategy::uniform: return "uniform";
    case Strategy::random: return "random";
    case Strategy::jaccard: return "jaccard";
    case Strategy::embedding: return "embedding";
    case Strategy::response_model: return "response_model";
    case Strategy::single_turn_wm: return "single_turn_wm";
    case Strategy::dual: return "dual";
  }
  return "wm";
}

inline Strategy strategy_from_string(const std::string& s) {
  for (Strategy st : {Strategy::wm, Strategy::uniform, Strategy::random,
                      Strategy::jaccard, Strategy::embedding,
                      Strategy::response_model, Strategy::single_turn_wm,
                      Strategy::dual})
    if (to_string(st) == s) return st;
  throw ConfigError("unknown weighting strategy: " + s);
}

struct WeightConfig {
  Strategy strategy = Strategy::wm;
  double epsilon = 0.5;
  uint64_t seed = 0;

  void validate() const {
    if (!std::isfinite(epsilon)) throw ConfigError("epsilon must be finite");
  }
};

struct WeightedInstance {
  int instance_index = 0;
  double weight = 1.0;
  std::optional<double> delta_pos;
  std::optional<double> delta_neg;
};

// How well candidate `response` predicts the true last utterance: the model
// scores q_pos and q_neg against the context with the response appended.
// Returns Pr(y=1 | q_pos, r) - Pr(y=1 | q_neg, r), a value in (-1, 1).
template <typename T>
double delta(const MatcherModel<T>& model_utte,
             const std::vector<TokenSeq>& context_U, const TokenSeq& response,
             const TokenSeq& q_pos, const TokenSeq& q_neg) {
  if (model_utte.role != Role::last_utterance_selection)
    throw ConfigError("delta: model role must be last_utterance_selection");
  std::vector<TokenSeq> turns = context_U;
  turns.push_back(response);
  return double(model_utte.score(turns, q_pos)) -
         double(model_utte.score(turns, q_neg));
}

// min{max{delta_pos - delta_neg + epsilon, 0}, 1}. Depends only on the
// difference of the deltas.
inline double weight_from_deltas(double delta_pos, double delta_neg, double epsilon) {
  return std::min(std::max(delta_pos - delta_neg + epsilon, 0.0), 1.0);
}

namespace detail {

// One shared sampled final turn per instance, drawn from the other instances.
inline std::vector<int> sample_other_indices(size_t n, uint64_t seed) {
  Rng rng(seed);
  std::vector<int> out(n);
  for (size_t i = 0; i < n; ++i) {
    size_t j = n > 1 ? size_t(rng.next_below(n - 1)) : 0;
    if (n > 1 && j >= i) ++j;
    out[i] = int(j);
  }
  return out;
}

inline double jaccard_similarity(const TokenSeq& a, const TokenSeq& b) {
  std::set<int> sa(a.begin(), a.end()), sb(b.begin(), b.end());
  sa.erase(Vocab::kPad);
  sb.erase(Vocab::kPad);
  size_t inter = 0;
  for (int t : sa) inter += sb.count(t);
  const size_t uni = sa.size() + sb.size() - inter;
  return uni == 0 ? 0.0 : double(inter) / double(uni);
}

template <typename T>
double cosine(const Tensor<T>& a, const Tensor<T>& b) {
  double dot = 0, na = 0, nb = 0;
  for (size_t i = 0; i < a.data.size(); ++i) {
    dot += double(a.data[i]) * double(b.data[i]);
    na += double(a.data[i]) * double(a.data[i]);
    nb += double(b.data[i]) * double(b.data[i]);
  }
  if (na == 0 || nb == 0) return 0.0;
  return dot / (std::sqrt(na) * std::sqrt(nb));
}

}  // namespace detail

// Core of the wm family. The scorer judges each instance's candidates by how
// well they predict the instance's own final turn versus a sampled one; works
// for either task direction as long as the scorer has `expected_role`.
template <typename T>
std::vector<WeightedInstance> compute_wm_weights(
    const std::vector<TrainingInstance>& instances, const MatcherModel<T>& scorer,
    Role expected_role, double epsilon, uint64_t seed, bool single_turn) {
  if (scorer.role != expected_role)
    throw ConfigError("compute_weights: wrong model role for this strategy");
  const auto others = detail::sample_other_indices(instances.size(), seed);
  std::vector<WeightedInstance> out;
  out.reserve(instances.size());
  for (size_t i = 0; i < instances.size(); ++i) {
    const TrainingInstance& t = instances[i];
    const TokenSeq& q_neg = instances[others[i]].q;
    const std::vector<TokenSeq> ctx =
        single_turn ? std::vector<TokenSeq>{} : t.context;
    std::vector<TokenSeq> turns_pos = ctx;
    turns_pos.push_back(t.pos);
    std::vector<TokenSeq> turns_neg = ctx;
    turns_neg.push_back(t.neg);
    const double dpos = double(scorer.score(turns_pos, t.q)) -
                        double(scorer.score(turns_pos, q_neg));
    const double dneg = double(scorer.score(turns_neg, t.q)) -
                        double(scorer.score(turns_neg, q_neg));
    out.push_back({int(i), weight_from_deltas(dpos, dneg, epsilon), dpos, dneg});
  }
  return out;
}

template <typename T>
std::vector<WeightedInstance> compute_weights(
    const WeightConfig& config, const std::vector<TrainingInstance>& instances,
    const MatcherModel<T>* model_utte, const MatcherModel<T>* model_res) {
  config.validate();
  std::vector<WeightedInstance> out;
  out.reserve(instances.size());
  switch (config.strategy) {
    case Strategy::wm:
    case Strategy::single_turn_wm:
    case Strategy::dual: {
      if (!model_utte)
        throw ConfigError("compute_weights: strategy requires a "
                          "last-utterance selection model");
      return compute_wm_weights(instances, *model_utte,
                                Role::last_utterance_selection, config.epsilon,
                                config.seed,
                                config.strategy == Strategy::single_turn_wm);
    }
    case Strategy::uniform: {
      for (size_t i = 0; i < instances.size(); ++i)
        out.push_back({int(i), 1.0, std::nullopt, std::nullopt});
      return out;
    }
    case Strategy::random: {
      Rng rng(config.seed);
      for (size_t i = 0; i < instances.size(); ++i)
        out.push_back({int(i), rng.next_double(), std::nullopt, std::nullopt});
      return out;
    }
    case Strategy::jaccard: {
      for (size_t i = 0; i < instances.size(); ++i) {
        const double w = detail::jaccard_similarity(instances[i].pos, instances[i].neg);
        out.push_back({int(i), std::min(std::max(w, 0.0), 1.0), std::nullopt,
                       std::nullopt});
      }
      return out;
    }
    case Strategy::embedding: {
      if (!model_res)
        throw ConfigError("compute_weights: embedding strategy requires a "
                          "response selection model");
      for (size_t i = 0; i < instances.size(); ++i) {
        const auto vp = model_res->response_representation(instances[i].pos);
        const auto vn = model_res->response_representation(instances[i].neg);
        const double w = std::max(detail::cosine(vp, vn), 0.0);
        out.push_back({int(i), std::min(w, 1.0), std::nullopt, std::nullopt});
      }
      return out;
    }
    case Strategy::response_model: {
      if (!model_res)
        throw ConfigError("compute_weights: response_model strategy requires a "
                          "response selection model");
      if (model_res->role != Role::response_selection)
        throw ConfigError("compute_weights: wrong model role for this strategy");
      const auto others = detail::sample_other_indices(instances.size(), config.seed);
      for (size_t i = 0; i < instances.size(); ++i) {
        const TrainingInstance& t = instances[i];
        const TokenSeq& q_neg = instances[others[i]].q;
        std::vector<TokenSeq> turns_pos = t.context;
        turns_pos.push_back(t.q);
        std::vector<TokenSeq> turns_neg = t.context;
        turns_neg.push_back(q_neg);
        auto d = [&](const TokenSeq& r) {
          return double(model_res->score(turns_pos, r)) -
                 double(model_res->score(turns_neg, r));
        };
        const double dpos = d(t.pos), dneg = d(t.neg);
        out.push_back({int(i), weight_from_deltas(dpos, dneg, config.epsilon),
                       dpos, dneg});
      }
      return out;
    }
  }
  throw ConfigError("compute_weights: unknown strategy");
}

// --- weights file (JSONL) ---------------------------------------------------

inline void save_weights(const std::vector<WeightedInstance>& weights,
                         const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write weights file: " + path);
  for (const WeightedInstance& w : weights) {
    nlohmann::json j;
    j["instance_index"] = w.instance_index;
    j["weight"] = w.weight;
    if (w.delta_pos) j["delta_pos"] = *w.delta_pos;
    if (w.delta_neg) j["delta_neg"] = *w.delta_neg;
    out << j.dump() << '\n';
  }
}

inline std::vector<WeightedInstance> load_weights(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open weights file: " + path);
  std::vector<WeightedInstance> out;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    nlohmann::json j = nlohmann::json::parse(line, nullptr, false);
    if (j.is_discarded())
      throw DataError(path + ":" + std::to_string(line_no) + ": malformed record");
    WeightedInstance w;
    w.instance_index = j.at("instance_index").get<int>();
    w.weight = j.at("weight").get<double>();
    if (j.contains("delta_pos")) w.delta_pos = j["delta_pos"].get<double>();
    if (j.contains("delta_neg")) w.delta_neg = j["delta_neg"].get<double>();
    out.push_back(w);
  }
  return out;
}

}  // namespace iwsel
