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
#include <cctype>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "iwsel/errors.hpp"
#include "iwsel/rng.hpp"

namespace iwsel {

using TokenSeq = std::vector<int>;

// ---------------------------------------------------------------------------
// Tokenization: lowercase + whitespace split.
// ---------------------------------------------------------------------------

inline std::vector<std::string> tokenize_text(const std::string& text) {
  std::vector<std::string> out;
  std::string cur;
  for (char ch : text) {
    if (std::isspace(static_cast<unsigned char>(ch))) {
      if (!cur.empty()) {
        out.push_back(cur);
        cur.clear();
      }
    } else {
      cur.push_back(char(std::tolower(static_cast<unsigned char>(ch))));
    }
  }
  if (!cur.empty()) out.push_back(cur);
  return out;
}

// ---------------------------------------------------------------------------
// Vocabulary. Ids 0/1 are reserved for padding/unknown.
// ---------------------------------------------------------------------------

struct Vocab {
  static constexpr int kPad = 0;
  static constexpr int kUnk = 1;

  std::vector<std::string> id_to_token{"<pad>", "<unk>"};
  std::unordered_map<std::string, int> token_to_id;

  int size() const { return int(id_to_token.size()); }

  int id(const std::string& tok) const {
    auto it = token_to_id.find(tok);
    return it == token_to_id.end() ? kUnk : it->second;
  }

  void add(const std::string& tok) {
    token_to_id.emplace(tok, int(id_to_token.size()));
    id_to_token.push_back(tok);
  }

  uint64_t checksum() const {
    uint64_t h = 0xcbf29ce484222325ull;
    for (const auto& t : id_to_token) {
      h = fnv1a(t.data(), t.size(), h);
      h = fnv1a("\n", 1, h);
    }
    return h;
  }

  TokenSeq encode(const std::string& text, int max_tokens) const {
    TokenSeq ids;
    for (const auto& tok : tokenize_text(text)) {
      if (int(ids.size()) >= max_tokens) break;
      ids.push_back(id(tok));
    }
    return ids;
  }
};

// One token per line; line number is the id, lines 0-1 are the reserved ids.
inline void save_vocab(const Vocab& v, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write vocab file: " + path);
  for (const auto& t : v.id_to_token) out << t << '\n';
}

inline Vocab load_vocab(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open vocab file: " + path);
  Vocab v;
  v.id_to_token.clear();
  std::string line;
  while (std::getline(in, line)) {
    v.token_to_id.emplace(line, int(v.id_to_token.size()));
    v.id_to_token.push_back(line);
  }
  if (v.size() < 2) throw DataError("vocab file missing reserved entries: " + path);
  return v;
}

// ---------------------------------------------------------------------------
// Data model
// ---------------------------------------------------------------------------

// Truncation applied when tokenizing: at most `max_utterance_tokens` per
// utterance and the `max_context_turns` most recent context turns. Raw texts
// are kept untruncated so serialization round-trips.
struct LoadOptions {
  int max_utterance_tokens = 50;
  int max_context_turns = 5;
};

// A full conversation record: context turns, last utterance q, response r.
// label says whether r is the true response (train files for sampled corpora
// contain only label-1 records; synthetic files carry explicit negatives).
struct Conversation {
  std::vector<std::string> context_texts;
  std::string last_utterance_text;
  std::string response_text;
  int label = 1;
  std::optional<bool> noise_flag;

  std::vector<TokenSeq> context_ids;
  TokenSeq q_ids;
  TokenSeq r_ids;
};

// A labeled ranking group from a test file.
struct EvalGroup {
  std::vector<std::string> context_texts;
  std::string last_utterance_text;
  std::vector<std::string> candidate_texts;
  std::vector<int> labels;

  std::vector<TokenSeq> context_ids;
  TokenSeq q_ids;
  std::vector<TokenSeq> candidate_ids;

  // Model input turns: context followed by the last utterance.
  std::vector<TokenSeq> model_turns() const {
    std::vector<TokenSeq> t = context_ids;
    t.push_back(q_ids);
    return t;
  }
};

// One (context, candidate, label) training unit. `final_turn` is the turn the
// candidate is matched against on top of `context`: the last utterance q for
// response selection, the response r for last-utterance selection.
struct PointwiseExample {
  std::vector<TokenSeq> context;
  TokenSeq final_turn;
  TokenSeq candidate;
  int label = 0;
  int group = -1;
  std::optional<bool> noise_flag;

  std::vector<std::string> context_texts;
  std::string final_text;
  std::string candidate_text;

  std::vector<TokenSeq> model_turns() const {
    std::vector<TokenSeq> t = context;
    t.push_back(final_turn);
    return t;
  }
};

// A positive/negative response pair sharing one context.
struct TrainingInstance {
  std::vector<TokenSeq> context;
  TokenSeq q;
  TokenSeq pos;
  TokenSeq neg;
  std::optional<bool> noise_flag;  // true iff neg is a planted false negative

  std::vector<std::string> context_texts;
  std::string q_text;
  std::string pos_text;
  std::string neg_text;
};

// ---------------------------------------------------------------------------
// JSONL reading/writing
// ---------------------------------------------------------------------------

namespace detail {

inline nlohmann::json parse_line(const std::string& path, int line_no,
                                 const std::string& line) {
  nlohmann::json j = nlohmann::json::parse(line, nullptr, false);
  if (j.is_discarded() || !j.is_object())
    throw DataError(path + ":" + std::to_string(line_no) + ": malformed record");
  return j;
}

inline void require_nonempty(const std::string& path, int line_no,
                             const std::string& text) {
  if (tokenize_text(text).empty())
    throw DataError(path + ":" + std::to_string(line_no) + ": empty utterance");
}

inline std::string field_str(const nlohmann::json& j, const std::string& path,
                             int line_no, const char* key) {
  if (!j.contains(key) || !j[key].is_string())
    throw DataError(path + ":" + std::to_string(line_no) + ": missing field '" +
                    key + "'");
  return j[key].get<std::string>();
}

}  // namespace detail

inline std::vector<Conversation> load_conversations(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open corpus file: " + path);
  std::vector<Conversation> out;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    nlohmann::json j = detail::parse_line(path, line_no, line);
    Conversation c;
    if (!j.contains("context") || !j["context"].is_array())
      throw DataError(path + ":" + std::to_string(line_no) +
                      ": missing field 'context'");
    for (const auto& u : j["context"]) {
      if (!u.is_string())
        throw DataError(path + ":" + std::to_string(line_no) +
                        ": context entries must be strings");
      detail::require_nonempty(path, line_no, u.get<std::string>());
      c.context_texts.push_back(u.get<std::string>());
    }
    c.last_utterance_text = detail::field_str(j, path, line_no, "last_utterance");
    detail::require_nonempty(path, line_no, c.last_utterance_text);
    c.response_text = detail::field_str(j, path, line_no, "response");
    detail::require_nonempty(path, line_no, c.response_text);
    if (!j.contains("label") || !j["label"].is_number_integer())
      throw DataError(path + ":" + std::to_string(line_no) +
                      ": missing field 'label'");
    c.label = j["label"].get<int>();
    if (c.label != 0 && c.label != 1)
      throw DataError(path + ":" + std::to_string(line_no) + ": label must be 0 or 1");
    if (j.contains("noise_flag")) c.noise_flag = j["noise_flag"].get<bool>();
    out.push_back(std::move(c));
  }
  return out;
}

inline void tokenize_conversations(std::vector<Conversation>& convs,
                                   const Vocab& vocab,
                                   const LoadOptions& opts = {}) {
  for (Conversation& c : convs) {
    c.context_ids.clear();
    const int n = int(c.context_texts.size());
    const int first = std::max(0, n - opts.max_context_turns);
    for (int i = first; i < n; ++i)
      c.context_ids.push_back(vocab.encode(c.context_texts[i], opts.max_utterance_tokens));
    c.q_ids = vocab.encode(c.last_utterance_text, opts.max_utterance_tokens);
    c.r_ids = vocab.encode(c.response_text, opts.max_utterance_tokens);
  }
}

inline std::vector<Conversation> load_conversations(const std::string& path,
                                                    const Vocab& vocab,
                                                    const LoadOptions& opts = {}) {
  std::vector<Conversation> convs = load_conversations(path);
  tokenize_conversations(convs, vocab, opts);
  return convs;
}

inline void tokenize_eval_groups(std::vector<EvalGroup>& groups, const Vocab& vocab,
                                 const LoadOptions& opts = {}) {
  for (EvalGroup& g : groups) {
    g.context_ids.clear();
    g.candidate_ids.clear();
    const int n = int(g.context_texts.size());
    const int first = std::max(0, n - opts.max_context_turns);
    for (int i = first; i < n; ++i)
      g.context_ids.push_back(vocab.encode(g.context_texts[i], opts.max_utterance_tokens));
    g.q_ids = vocab.encode(g.last_utterance_text, opts.max_utterance_tokens);
    for (const auto& cand : g.candidate_texts)
      g.candidate_ids.push_back(vocab.encode(cand, opts.max_utterance_tokens));
  }
}

// Test split loader. Groups must carry exactly `expected_candidates`
// candidates; groups with no positive label are dropped.
inline std::vector<EvalGroup> load_eval_groups(const std::string& path,
                                               const Vocab& vocab,
                                               const LoadOptions& opts = {},
                                               int expected_candidates = 10) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open corpus file: " + path);
  std::vector<EvalGroup> out;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    nlohmann::json j = detail::parse_line(path, line_no, line);
    EvalGroup g;
    if (!j.contains("context") || !j["context"].is_array())
      throw DataError(path + ":" + std::to_string(line_no) +
                      ": missing field 'context'");
    for (const auto& u : j["context"]) {
      detail::require_nonempty(path, line_no, u.get<std::string>());
      g.context_texts.push_back(u.get<std::string>());
    }
    g.last_utterance_text = detail::field_str(j, path, line_no, "last_utterance");
    detail::require_nonempty(path, line_no, g.last_utterance_text);
    if (!j.contains("candidates") || !j.contains("labels"))
      throw DataError(path + ":" + std::to_string(line_no) +
                      ": missing candidates/labels");
    for (const auto& cand : j["candidates"]) {
      detail::require_nonempty(path, line_no, cand.get<std::string>());
      g.candidate_texts.push_back(cand.get<std::string>());
    }
    for (const auto& l : j["labels"]) g.labels.push_back(l.get<int>());
    if (int(g.candidate_texts.size()) != expected_candidates ||
        g.labels.size() != g.candidate_texts.size())
      throw DataError(path + ":" + std::to_string(line_no) + ": expected " +
                      std::to_string(expected_candidates) + " candidates");
    const int n = int(g.context_texts.size());
    const int first = std::max(0, n - opts.max_context_turns);
    for (int i = first; i < n; ++i)
      g.context_ids.push_back(vocab.encode(g.context_texts[i], opts.max_utterance_tokens));
    g.q_ids = vocab.encode(g.last_utterance_text, opts.max_utterance_tokens);
    for (const auto& cand : g.candidate_texts)
      g.candidate_ids.push_back(vocab.encode(cand, opts.max_utterance_tokens));
    const bool has_positive =
        std::any_of(g.labels.begin(), g.labels.end(), [](int l) { return l == 1; });
    if (has_positive) out.push_back(std::move(g));
  }
  return out;
}

enum class Split { train, valid, test };

struct LoadedSplit {
  std::vector<Conversation> conversations;  // train/valid
  std::vector<EvalGroup> groups;            // test
};

inline LoadedSplit load_corpus(const std::string& path, Split split,
                               const Vocab& vocab, const LoadOptions& opts = {}) {
  LoadedSplit s;
  if (split == Split::test)
    s.groups = load_eval_groups(path, vocab, opts);
  else
    s.conversations = load_conversations(path, vocab, opts);
  return s;
}

inline void save_conversations(const std::vector<Conversation>& convs,
                               const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write corpus file: " + path);
  for (const Conversation& c : convs) {
    nlohmann::json j;
    j["context"] = c.context_texts;
    j["last_utterance"] = c.last_utterance_text;
    j["response"] = c.response_text;
    j["label"] = c.label;
    if (c.noise_flag) j["noise_flag"] = *c.noise_flag;
    out << j.dump() << '\n';
  }
}

inline void save_eval_groups(const std::vector<EvalGroup>& groups,
                             const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write corpus file: " + path);
  for (const EvalGroup& g : groups) {
    nlohmann::json j;
    j["context"] = g.context_texts;
    j["last_utterance"] = g.last_utterance_text;
    j["candidates"] = g.candidate_texts;
    j["labels"] = g.labels;
    out << j.dump() << '\n';
  }
}

// ---------------------------------------------------------------------------
// Vocabulary construction
// ---------------------------------------------------------------------------

// Tokens with frequency >= min_freq get ids in descending-frequency order,
// ties broken lexicographically; everything else maps to <unk>.
inline Vocab build_vocab(const std::vector<Conversation>& convs, int min_freq = 1) {
  if (min_freq < 1) throw ConfigError("build_vocab: min_freq must be >= 1");
  if (convs.empty()) throw DataError("build_vocab: empty corpus");
  std::map<std::string, long> counts;
  auto count_text = [&](const std::string& text) {
    for (const auto& tok : tokenize_text(text)) ++counts[tok];
  };
  for (const Conversation& c : convs) {
    for (const auto& t : c.context_texts) count_text(t);
    count_text(c.last_utterance_text);
    count_text(c.response_text);
  }
  std::vector<std::pair<std::string, long>> items(counts.begin(), counts.end());
  std::stable_sort(items.begin(), items.end(), [](const auto& a, const auto& b) {
    if (a.second != b.second) return a.second > b.second;
    return a.first < b.first;
  });
  Vocab v;
  for (const auto& [tok, freq] : items)
    if (freq >= min_freq) v.add(tok);
  return v;
}

// ---------------------------------------------------------------------------
// Training-set construction
// ---------------------------------------------------------------------------

// For each conversation, one positive (its own response) plus `ratio` sampled
// negatives whose candidates are responses of other conversations.
inline std::vector<PointwiseExample> sample_negatives(
    const std::vector<Conversation>& convs, int ratio, uint64_t seed) {
  if (ratio < 1) throw ConfigError("sample_negatives: ratio must be >= 1");
  if (convs.size() < 2) throw DataError("sample_negatives: need >= 2 conversations");
  Rng rng(seed);
  std::vector<PointwiseExample> out;
  out.reserve(convs.size() * size_t(1 + ratio));
  for (size_t i = 0; i < convs.size(); ++i) {
    const Conversation& c = convs[i];
    PointwiseExample pos;
    pos.context = c.context_ids;
    pos.final_turn = c.q_ids;
    pos.candidate = c.r_ids;
    pos.label = 1;
    pos.group = int(i);
    pos.context_texts = c.context_texts;
    pos.final_text = c.last_utterance_text;
    pos.candidate_text = c.response_text;
    out.push_back(std::move(pos));
    for (int k = 0; k < ratio; ++k) {
      size_t j = size_t(rng.next_below(convs.size() - 1));
      if (j >= i) ++j;  // uniform over the other conversations
      // avoid sampling an exact duplicate of the true response
      for (int tries = 0; tries < 32 && convs[j].r_ids == c.r_ids; ++tries) {
        j = size_t(rng.next_below(convs.size() - 1));
        if (j >= i) ++j;
      }
      PointwiseExample neg;
      neg.context = c.context_ids;
      neg.final_turn = c.q_ids;
      neg.candidate = convs[j].r_ids;
      neg.label = 0;
      neg.group = int(i);
      neg.context_texts = c.context_texts;
      neg.final_text = c.last_utterance_text;
      neg.candidate_text = convs[j].response_text;
      out.push_back(std::move(neg));
    }
  }
  return out;
}

// Labeled corpora (synthetic files) already store explicit negatives: turn
// each record into a pointwise example, grouped by identical (context, q).
inline std::vector<PointwiseExample> pointwise_from_labeled(
    const std::vector<Conversation>& convs) {
  std::vector<PointwiseExample> out;
  std::map<std::string, int> group_of;
  for (const Conversation& c : convs) {
    std::string key;
    for (const auto& t : c.context_texts) {
      key += t;
      key += '\x1f';
    }
    key += '\x1e';
    key += c.last_utterance_text;
    auto [it, inserted] = group_of.emplace(key, int(group_of.size()));
    PointwiseExample e;
    e.context = c.context_ids;
    e.final_turn = c.q_ids;
    e.candidate = c.r_ids;
    e.label = c.label;
    e.group = it->second;
    e.noise_flag = c.noise_flag;
    e.context_texts = c.context_texts;
    e.final_text = c.last_utterance_text;
    e.candidate_text = c.response_text;
    out.push_back(std::move(e));
  }
  return out;
}

// Pairs each context's positive with its own negative. Requires exactly one
// of each per group (a 1:1 sampled or labeled corpus).
inline std::vector<TrainingInstance> build_pairwise(
    const std::vector<PointwiseExample>& examples) {
  struct Bucket {
    const PointwiseExample* pos = nullptr;
    const PointwiseExample* neg = nullptr;
    int pos_count = 0;
    int neg_count = 0;
  };
  std::unordered_map<int, Bucket> buckets;
  std::vector<int> order;  // groups in positive-example order
  for (const PointwiseExample& e : examples) {
    Bucket& b = buckets[e.group];
    if (e.label == 1) {
      if (b.pos_count == 0) order.push_back(e.group);
      ++b.pos_count;
      b.pos = &e;
    } else {
      ++b.neg_count;
      b.neg = &e;
    }
  }
  std::vector<TrainingInstance> out;
  out.reserve(order.size());
  for (int g : order) {
    const Bucket& b = buckets[g];
    if (b.pos_count != 1 || b.neg_count != 1)
      throw DataError("build_pairwise: context requires exactly one positive and "
                      "one negative, got " +
                      std::to_string(b.pos_count) + "/" +
                      std::to_string(b.neg_count));
    if (b.pos->candidate == b.neg->candidate)
      throw DataError("build_pairwise: positive and negative responses identical");
    TrainingInstance t;
    t.context = b.pos->context;
    t.q = b.pos->final_turn;
    t.pos = b.pos->candidate;
    t.neg = b.neg->candidate;
    t.noise_flag = b.neg->noise_flag;
    t.context_texts = b.pos->context_texts;
    t.q_text = b.pos->final_text;
    t.pos_text = b.pos->candidate_text;
    t.neg_text = b.neg->candidate_text;
    out.push_back(std::move(t));
  }
  // Any group with only negatives is a data error as well.
  for (const auto& [g, b] : buckets)
    if (b.pos_count == 0)
      throw DataError("build_pairwise: context has negatives but no positive");
  return out;
}

// Complementary-task dataset: for each conversation, context = (u1..u_{n-1}, r)
// and the candidate is the true last utterance q (label 1) plus one sampled
// last utterance from another conversation (label 0).
inline std::vector<PointwiseExample> derive_last_utterance_data(
    const std::vector<Conversation>& convs, uint64_t seed) {
  if (convs.size() < 2)
    throw DataError("derive_last_utterance_data: need >= 2 conversations");
  Rng rng(seed);
  std::vector<PointwiseExample> out;
  out.reserve(convs.size() * 2);
  for (size_t i = 0; i < convs.size(); ++i) {
    const Conversation& c = convs[i];
    PointwiseExample pos;
    pos.context = c.context_ids;
    pos.final_turn = c.r_ids;  // response appended as the final context turn
    pos.candidate = c.q_ids;
    pos.label = 1;
    pos.group = int(i);
    pos.context_texts = c.context_texts;
    pos.final_text = c.response_text;
    pos.candidate_text = c.last_utterance_text;
    out.push_back(std::move(pos));
    size_t j = size_t(rng.next_below(convs.size() - 1));
    if (j >= i) ++j;
    for (int tries = 0; tries < 32 && convs[j].q_ids == c.q_ids; ++tries) {
      j = size_t(rng.next_below(convs.size() - 1));
      if (j >= i) ++j;
    }
    PointwiseExample neg;
    neg.context = c.context_ids;
    neg.final_turn = c.r_ids;
    neg.candidate = convs[j].q_ids;
    neg.label = 0;
    neg.group = int(i);
    neg.context_texts = c.context_texts;
    neg.final_text = c.response_text;
    neg.candidate_text = convs[j].last_utterance_text;
    out.push_back(std::move(neg));
  }
  return out;
}

}  // namespace iwsel
