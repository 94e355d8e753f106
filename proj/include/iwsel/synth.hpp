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

#include <set>
#include <string>
#include <vector>

#include "iwsel/corpus.hpp"
#include "iwsel/errors.hpp"
#include "iwsel/rng.hpp"

namespace iwsel {

// Controlled-noise corpus: intents own disjoint content vocabularies plus a
// shared function-word pool. Each training context pairs its true response
// with one negative; with probability false_negative_rate the negative comes
// from the same intent (a semantically valid reply, flagged as noise),
// otherwise from a different intent. Test groups are noise-free.
struct SynthSpec {
  int num_intents = 20;
  int responses_per_intent = 10;
  int contexts_per_intent = 100;
  int turns_per_context = 3;  // context turns including the last utterance
  double false_negative_rate = 0.3;
  int vocab_per_intent = 25;
  uint64_t seed = 1;

  void validate() const {
    if (false_negative_rate < 0.0 || false_negative_rate > 1.0)
      throw ConfigError("synth: false_negative_rate must be in [0,1]");
    if (num_intents < 2) throw ConfigError("synth: num_intents must be >= 2");
    if (responses_per_intent < 1 || contexts_per_intent < 1 ||
        turns_per_context < 1 || vocab_per_intent < 1)
      throw ConfigError("synth: all counts must be >= 1");
    if (false_negative_rate > 0.0 && responses_per_intent < 2)
      throw ConfigError("synth: false negatives need responses_per_intent >= 2");
  }
};

struct SynthCorpus {
  std::vector<Conversation> train;
  std::vector<Conversation> valid;
  std::vector<EvalGroup> test;
};

namespace detail {

inline const std::vector<std::string>& function_words() {
  static const std::vector<std::string> words = {
      "the", "a",  "is",  "to",   "and",  "of",   "it",   "you",
      "we",  "do", "so",  "well", "that", "what", "just", "now"};
  return words;
}

class SynthBuilder {
 public:
  explicit SynthBuilder(const SynthSpec& spec) : spec_(spec), rng_(spec.seed) {
    for (int i = 0; i < spec_.num_intents; ++i) {
      std::vector<std::string> vocab;
      for (int w = 0; w < spec_.vocab_per_intent; ++w)
        vocab.push_back("t" + std::to_string(i) + "w" + std::to_string(w));
      intent_vocab_.push_back(std::move(vocab));
    }
    for (int i = 0; i < spec_.num_intents; ++i) {
      std::vector<std::string> pool;
      for (int r = 0; r < spec_.responses_per_intent; ++r)
        pool.push_back(content_sentence(i, 4, 7));
      responses_.push_back(std::move(pool));
    }
  }

  SynthCorpus build() {
    SynthCorpus out;
    const int valid_per_intent = std::max(1, spec_.contexts_per_intent / 5);
    const int test_per_intent = std::max(1, spec_.contexts_per_intent / 5);
    for (int i = 0; i < spec_.num_intents; ++i)
      for (int k = 0; k < spec_.contexts_per_intent; ++k)
        emit_pair(out.train, i, /*allow_noise=*/true);
    for (int i = 0; i < spec_.num_intents; ++i)
      for (int k = 0; k < valid_per_intent; ++k)
        emit_pair(out.valid, i, /*allow_noise=*/false);
    for (int i = 0; i < spec_.num_intents; ++i)
      for (int k = 0; k < test_per_intent; ++k) out.test.push_back(make_group(i));
    return out;
  }

 private:
  std::string word(int intent, double intent_word_prob) {
    if (rng_.next_double() < intent_word_prob) {
      const auto& v = intent_vocab_[intent];
      return v[rng_.next_below(v.size())];
    }
    const auto& f = function_words();
    return f[rng_.next_below(f.size())];
  }

  std::string sentence(int intent, int min_len, int max_len, double intent_word_prob) {
    const int len = min_len + int(rng_.next_below(uint64_t(max_len - min_len + 1)));
    std::string s;
    for (int i = 0; i < len; ++i) {
      if (i) s += ' ';
      s += word(intent, intent_word_prob);
    }
    return s;
  }

  // Intent-rich sentence: last utterances and responses.
  std::string content_sentence(int intent, int min_len, int max_len) {
    return sentence(intent, min_len, max_len, 0.7);
  }

  // Context turns are mostly function words so that the response, not the
  // preceding turns, carries the discriminative signal.
  std::string context_sentence(int intent) { return sentence(intent, 3, 6, 0.1); }

  struct Context {
    std::vector<std::string> turns;  // before q
    std::string q;
  };

  Context fresh_context(int intent) {
    for (int attempt = 0; attempt < 1000; ++attempt) {
      Context c;
      for (int t = 0; t < spec_.turns_per_context - 1; ++t)
        c.turns.push_back(context_sentence(intent));
      c.q = content_sentence(intent, 4, 7);
      std::string key;
      for (const auto& t : c.turns) {
        key += t;
        key += '\x1f';
      }
      key += c.q;
      if (seen_contexts_.insert(key).second) return c;
    }
    throw DataError("synth: could not generate a unique context");
  }

  int other_intent(int intent) {
    uint64_t j = rng_.next_below(uint64_t(spec_.num_intents - 1));
    return int(j) >= intent ? int(j) + 1 : int(j);
  }

  void emit_pair(std::vector<Conversation>& out, int intent, bool allow_noise) {
    Context ctx = fresh_context(intent);
    const auto& pool = responses_[intent];
    const int pos_idx = int(rng_.next_below(pool.size()));

    Conversation pos;
    pos.context_texts = ctx.turns;
    pos.last_utterance_text = ctx.q;
    pos.response_text = pool[pos_idx];
    pos.label = 1;

    Conversation neg = pos;
    neg.label = 0;
    const bool planted =
        allow_noise && rng_.next_double() < spec_.false_negative_rate;
    if (planted) {
      int idx = int(rng_.next_below(pool.size() - 1));
      if (idx >= pos_idx) ++idx;
      neg.response_text = pool[idx];
      neg.noise_flag = true;
    } else {
      const int j = other_intent(intent);
      neg.response_text = responses_[j][rng_.next_below(responses_[j].size())];
      neg.noise_flag = false;
    }
    out.push_back(std::move(pos));
    out.push_back(std::move(neg));
  }

  EvalGroup make_group(int intent) {
    Context ctx = fresh_context(intent);
    const auto& pool = responses_[intent];
    EvalGroup g;
    g.context_texts = ctx.turns;
    g.last_utterance_text = ctx.q;

    std::vector<std::pair<std::string, int>> cands;
    cands.emplace_back(pool[rng_.next_below(pool.size())], 1);
    std::set<std::pair<int, int>> used;
    const int available = (spec_.num_intents - 1) * spec_.responses_per_intent;
    while (cands.size() < 10) {
      const int j = other_intent(intent);
      const int idx = int(rng_.next_below(responses_[j].size()));
      // Distinct negatives while the cross-intent pool allows it.
      if (int(used.size()) < available && !used.insert({j, idx}).second) continue;
      cands.emplace_back(responses_[j][idx], 0);
    }
    rng_.shuffle(cands);
    for (auto& [text, label] : cands) {
      g.candidate_texts.push_back(std::move(text));
      g.labels.push_back(label);
    }
    return g;
  }

  SynthSpec spec_;
  Rng rng_;
  std::vector<std::vector<std::string>> intent_vocab_;
  std::vector<std::vector<std::string>> responses_;
  std::set<std::string> seen_contexts_;
};

}  // namespace detail

inline SynthCorpus generate_synthetic(const SynthSpec& spec) {
  spec.validate();
  detail::SynthBuilder builder(spec);
  return builder.build();
}

}  // namespace iwsel
