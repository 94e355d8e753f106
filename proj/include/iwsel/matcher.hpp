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
#include <cstdio>
#include <cstring>
#include <fstream>
#include <string>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "iwsel/corpus.hpp"
#include "iwsel/errors.hpp"
#include "iwsel/graph.hpp"
#include "iwsel/rng.hpp"
#include "iwsel/tensor.hpp"

namespace iwsel {

enum class Arch { recurrent, attention };
enum class Role { response_selection, last_utterance_selection };

inline std::string to_string(Arch a) {
  return a == Arch::recurrent ? "recurrent" : "attention";
}
inline std::string to_string(Role r) {
  return r == Role::response_selection ? "response_selection"
                                       : "last_utterance_selection";
}
inline Arch arch_from_string(const std::string& s) {
  if (s == "recurrent") return Arch::recurrent;
  if (s == "attention") return Arch::attention;
  throw ConfigError("unknown architecture: " + s);
}
inline Role role_from_string(const std::string& s) {
  if (s == "response_selection") return Role::response_selection;
  if (s == "last_utterance_selection") return Role::last_utterance_selection;
  throw ConfigError("unknown role: " + s);
}

struct Dims {
  int embed_dim = 64;
  int hidden_dim = 64;
  int layers = 2;         // attention depth
  int heads = 2;          // attention heads
  int conv_channels = 8;  // similarity-map conv filters
  int max_tokens = 50;    // similarity canvas bound (recurrent matcher)
};

// Width of the per-turn vector the recurrent matcher distills each
// similarity block into, before the turn-level recurrence.
inline constexpr int kTurnVecDim = 32;

// Probabilities are kept strictly inside (0,1) so the loss formulas stay
// finite; the clamp is inactive for any reasonably-scaled score.
template <typename T>
inline constexpr T kProbEps = std::is_same_v<T, double> ? T(1e-12) : T(1e-7);

// Matching model mapping (context turns, candidate utterance) to
// Pr(y=1 | candidate, context). The same computation graph serves the
// response-selection and last-utterance-selection roles; only the training
// data arrangement differs.
template <typename T>
class MatcherModel {
 public:
  using Gr = Graph<T>;
  using Id = typename Gr::Id;

  Arch arch = Arch::recurrent;
  Role role = Role::response_selection;
  Dims dims;
  int vocab_size = 0;
  uint64_t vocab_checksum = 0;
  uint64_t seed = 0;
  std::vector<NamedTensor<T>> params;

  static MatcherModel init(Arch arch, Role role, const Dims& dims, int vocab_size,
                           uint64_t vocab_checksum, uint64_t seed) {
    if (dims.embed_dim < 1 || dims.hidden_dim < 1 || dims.layers < 1 ||
        dims.heads < 1 || dims.conv_channels < 1 || dims.max_tokens < 1)
      throw ConfigError("init_model: dimensions must be positive");
    if (arch == Arch::attention && dims.embed_dim % dims.heads != 0)
      throw ConfigError("init_model: heads must divide embed_dim");
    if (vocab_size < 2) throw ConfigError("init_model: vocabulary too small");

    MatcherModel m;
    m.arch = arch;
    m.role = role;
    m.dims = dims;
    m.vocab_size = vocab_size;
    m.vocab_checksum = vocab_checksum;
    m.seed = seed;

    Rng rng(seed);
    auto weight = [&](const std::string& name, std::vector<int> shape) {
      Tensor<T> t(std::move(shape));
      for (T& v : t.data) v = T(rng.next_uniform(-0.1, 0.1));
      m.params.push_back({name, std::move(t)});
    };
    auto bias = [&](const std::string& name, std::vector<int> shape) {
      m.params.push_back({name, Tensor<T>(std::move(shape))});
    };

    const int e = dims.embed_dim, h = dims.hidden_dim, f = dims.conv_channels;
    weight("embed", {vocab_size, e});
    if (arch == Arch::recurrent) {
      for (const char* gate : {"z", "r", "h"}) {
        weight(std::string("gru_w") + gate, {e, h});
        weight(std::string("gru_u") + gate, {h, h});
        bias(std::string("gru_b") + gate, {1, h});
      }
      weight("bilinear_a", {h, h});
      weight("conv_k", {f, 2, 3, 3});
      bias("conv_b", {1, f});
      const int pooled = pooled_dim(dims);
      weight("turn_w", {pooled, kTurnVecDim});
      bias("turn_b", {1, kTurnVecDim});
      for (const char* gate : {"z", "r", "h"}) {
        weight(std::string("tgru_w") + gate, {kTurnVecDim, h});
        weight(std::string("tgru_u") + gate, {h, h});
        bias(std::string("tgru_b") + gate, {1, h});
      }
      weight("out_w", {h, 1});
      bias("out_b", {1, 1});
    } else {
      for (int l = 1; l <= dims.layers; ++l) {
        const std::string suf = "_" + std::to_string(l);
        for (const char* kind : {"self", "cross"}) {
          weight(std::string(kind) + "_wq" + suf, {e, e});
          weight(std::string(kind) + "_wk" + suf, {e, e});
          weight(std::string(kind) + "_wv" + suf, {e, e});
          weight(std::string(kind) + "_wo" + suf, {e, e});
        }
      }
      const int channels = 2 * dims.layers + 1;
      weight("conv_k", {f, channels, 3, 3});
      bias("conv_b", {1, f});
      weight("mlp_w1", {f, h});
      bias("mlp_b1", {1, h});
      weight("mlp_w2", {h, 1});
      bias("mlp_b2", {1, 1});
    }
    m.build_index();
    return m;
  }

  // --- scoring ----------------------------------------------------------

  struct ScoreGraph {
    Id prob;
    // (param index, leaf id) for every parameter the graph touched.
    std::vector<std::pair<int, Id>> leaves;
  };

  ScoreGraph build_score(Gr& g, const std::vector<TokenSeq>& turns,
                         const TokenSeq& candidate) const {
    Builder b{*this, g, {}, {}};
    const std::vector<TokenSeq> ctx = canonicalize_turns(turns);
    const TokenSeq cand = canonicalize_utterance(candidate, "candidate");
    Id prob = arch == Arch::recurrent ? build_recurrent(b, ctx, cand)
                                      : build_attention(b, ctx, cand);
    return {prob, std::move(b.leaves)};
  }

  T score(const std::vector<TokenSeq>& turns, const TokenSeq& candidate) const {
    Gr g;
    return g.scalar(build_score(g, turns, candidate).prob);
  }

  std::vector<T> score_batch(
      const std::vector<std::pair<std::vector<TokenSeq>, TokenSeq>>& items) const {
    std::vector<T> out;
    out.reserve(items.size());
    for (const auto& [turns, cand] : items) out.push_back(score(turns, cand));
    return out;
  }

  // Mean of the response's final-layer hidden states; used by the embedding
  // weighting strategy.
  Tensor<T> response_representation(const TokenSeq& response) const {
    Gr g;
    Builder b{*this, g, {}, {}};
    const TokenSeq r = canonicalize_utterance(response, "response");
    Id rep;
    if (arch == Arch::recurrent) {
      auto gru = run_gru(b, embed_seq(b, r), "gru");
      rep = g.mean_rows(gru.states);
    } else {
      Id x = embed_with_positions(b, r);
      for (int l = 1; l <= dims.layers; ++l) x = attention_block(b, "self", l, x, x);
      rep = g.mean_rows(x);
    }
    return g.val(rep);
  }

  // --- parameter access / integrity --------------------------------------

  int param_index(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw ConfigError("unknown parameter: " + name);
    return it->second;
  }

  uint64_t param_checksum() const {
    uint64_t h = 0xcbf29ce484222325ull;
    for (const auto& p : params)
      h = fnv1a(p.value.data.data(), p.value.data.size() * sizeof(T), h);
    return h;
  }

  bool params_finite() const {
    for (const auto& p : params)
      for (T v : p.value.data)
        if (!std::isfinite(double(v))) return false;
    return true;
  }

  // --- checkpoint io ------------------------------------------------------

  void save(const std::string& path) const {
    nlohmann::json hdr;
    hdr["format_version"] = 1;
    hdr["architecture"] = to_string(arch);
    hdr["role"] = to_string(role);
    hdr["dims"] = {{"embed_dim", dims.embed_dim},     {"hidden_dim", dims.hidden_dim},
                   {"layers", dims.layers},           {"heads", dims.heads},
                   {"conv_channels", dims.conv_channels},
                   {"max_tokens", dims.max_tokens}};
    hdr["vocab_size"] = vocab_size;
    hdr["vocab_checksum"] = checksum_hex(vocab_checksum);
    hdr["seed"] = seed;
    hdr["scalar_bytes"] = int(sizeof(T));
    nlohmann::json plist = nlohmann::json::array();
    for (const auto& p : params)
      plist.push_back({{"name", p.name}, {"shape", p.value.shape}});
    hdr["params"] = plist;

    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write checkpoint: " + path);
    out << hdr.dump() << '\n';
    for (const auto& p : params)
      out.write(reinterpret_cast<const char*>(p.value.data.data()),
                std::streamsize(p.value.data.size() * sizeof(T)));
  }

  static MatcherModel load(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open checkpoint: " + path);
    std::string line;
    if (!std::getline(in, line)) throw DataError("checkpoint header missing: " + path);
    nlohmann::json hdr = nlohmann::json::parse(line, nullptr, false);
    if (hdr.is_discarded()) throw DataError("checkpoint header malformed: " + path);
    if (hdr.value("format_version", 0) != 1)
      throw DataError("unsupported checkpoint version in " + path);
    if (hdr.value("scalar_bytes", 0) != int(sizeof(T)))
      throw DataError("checkpoint scalar width mismatch in " + path);

    MatcherModel m;
    m.arch = arch_from_string(hdr.at("architecture").get<std::string>());
    m.role = role_from_string(hdr.at("role").get<std::string>());
    const auto& d = hdr.at("dims");
    m.dims.embed_dim = d.at("embed_dim").get<int>();
    m.dims.hidden_dim = d.at("hidden_dim").get<int>();
    m.dims.layers = d.at("layers").get<int>();
    m.dims.heads = d.at("heads").get<int>();
    m.dims.conv_channels = d.at("conv_channels").get<int>();
    m.dims.max_tokens = d.at("max_tokens").get<int>();
    m.vocab_size = hdr.at("vocab_size").get<int>();
    m.vocab_checksum = std::stoull(hdr.at("vocab_checksum").get<std::string>(), nullptr, 16);
    m.seed = hdr.at("seed").get<uint64_t>();
    for (const auto& pj : hdr.at("params")) {
      NamedTensor<T> p;
      p.name = pj.at("name").get<std::string>();
      p.value = Tensor<T>(pj.at("shape").get<std::vector<int>>());
      in.read(reinterpret_cast<char*>(p.value.data.data()),
              std::streamsize(p.value.data.size() * sizeof(T)));
      if (!in) throw DataError("checkpoint truncated: " + path);
      m.params.push_back(std::move(p));
    }
    m.build_index();
    return m;
  }

  static MatcherModel load(const std::string& path, const Vocab& vocab) {
    MatcherModel m = load(path);
    if (m.vocab_checksum != vocab.checksum())
      throw DataError("checkpoint vocab checksum mismatch: " + path);
    return m;
  }

  static std::string checksum_hex(uint64_t h) {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return buf;
  }

  static int pooled_dim(const Dims& d) {
    const int p = (d.max_tokens + 1) / 2;
    return d.conv_channels * p * p;
  }

 private:
  struct Builder {
    const MatcherModel& m;
    Gr& g;
    std::unordered_map<int, Id> leaf_of;
    std::vector<std::pair<int, Id>> leaves;

    Id use(const std::string& name) {
      const int idx = m.param_index(name);
      auto it = leaf_of.find(idx);
      if (it != leaf_of.end()) return it->second;
      Id id = g.leaf(m.params[idx].value);
      leaf_of.emplace(idx, id);
      leaves.emplace_back(idx, id);
      return id;
    }
  };

  // Strip padding tokens, enforce id range, truncate to the model bound.
  TokenSeq canonicalize_utterance(const TokenSeq& seq, const char* what) const {
    TokenSeq out;
    for (int id : seq) {
      if (id < 0 || id >= vocab_size)
        throw DataError(std::string("score: token id out of range in ") + what);
      if (id == Vocab::kPad) continue;
      if (int(out.size()) < dims.max_tokens) out.push_back(id);
    }
    if (out.empty())
      throw DataError(std::string("score: empty ") + what + " utterance");
    return out;
  }

  std::vector<TokenSeq> canonicalize_turns(const std::vector<TokenSeq>& turns) const {
    std::vector<TokenSeq> out;
    for (const TokenSeq& t : turns) {
      TokenSeq s;
      for (int id : t) {
        if (id < 0 || id >= vocab_size)
          throw DataError("score: token id out of range in context");
        if (id == Vocab::kPad) continue;
        if (int(s.size()) < dims.max_tokens) s.push_back(id);
      }
      if (!s.empty()) out.push_back(std::move(s));  // all-padding turns vanish
    }
    if (out.empty()) throw DataError("score: context has no non-empty turn");
    return out;
  }

  Id embed_seq(Builder& b, const TokenSeq& ids) const {
    return b.g.gather_rows(b.use("embed"), std::vector<int>(ids.begin(), ids.end()));
  }

  // --- recurrent path -----------------------------------------------------

  struct GruOut {
    Id states;  // {L, h} stacked hidden states
    Id last;    // {1, h}
  };

  GruOut run_gru(Builder& b, Id inputs, const std::string& prefix) const {
    Gr& g = b.g;
    const int h = g.val(b.use(prefix + "_bz")).cols();
    const int len = g.val(inputs).rows();
    Id wz = b.use(prefix + "_wz"), uz = b.use(prefix + "_uz"), bz = b.use(prefix + "_bz");
    Id wr = b.use(prefix + "_wr"), ur = b.use(prefix + "_ur"), br = b.use(prefix + "_br");
    Id wh = b.use(prefix + "_wh"), uh = b.use(prefix + "_uh"), bh = b.use(prefix + "_bh");
    Id hprev = g.constant(Tensor<T>({1, h}));
    std::vector<Id> states;
    states.reserve(len);
    for (int t = 0; t < len; ++t) {
      Id x = g.row(inputs, t);
      Id z = g.sigmoid(g.add(g.add(g.matmul(x, wz), g.matmul(hprev, uz)), bz));
      Id r = g.sigmoid(g.add(g.add(g.matmul(x, wr), g.matmul(hprev, ur)), br));
      Id hc = g.tanh_op(
          g.add(g.add(g.matmul(x, wh), g.matmul(g.hadamard(r, hprev), uh)), bh));
      hprev = g.add(hprev, g.hadamard(z, g.sub(hc, hprev)));
      states.push_back(hprev);
    }
    return {g.concat_rows(states), states.back()};
  }

  Id build_recurrent(Builder& b, const std::vector<TokenSeq>& turns,
                     const TokenSeq& cand) const {
    Gr& g = b.g;
    const int tc = dims.max_tokens;
    Id er = embed_seq(b, cand);
    GruOut gr = run_gru(b, er, "gru");
    Id a = b.use("bilinear_a");
    std::vector<Id> turn_vecs;
    for (const TokenSeq& turn : turns) {
      Id ek = embed_seq(b, turn);
      GruOut gk = run_gru(b, ek, "gru");
      // Word-level and hidden-level similarity maps, two conv channels.
      Id m1 = g.matmul(ek, er, false, true);
      Id m2 = g.matmul(g.matmul(gk.states, a), gr.states, false, true);
      Id maps = g.stack_channels({g.pad_to(m1, tc, tc), g.pad_to(m2, tc, tc)});
      Id conv = g.relu(g.conv3x3_same(maps, b.use("conv_k"), b.use("conv_b")));
      Id pooled = g.flatten_rowvec(g.maxpool2x2(conv));
      turn_vecs.push_back(
          g.add(g.matmul(pooled, b.use("turn_w")), b.use("turn_b")));
    }
    GruOut agg = run_gru(b, g.concat_rows(turn_vecs), "tgru");
    Id s = g.add(g.matmul(agg.last, b.use("out_w")), b.use("out_b"));
    return g.clamp(g.sigmoid(s), kProbEps<T>, T(1) - kProbEps<T>);
  }

  // --- attention path -------------------------------------------------------

  Id embed_with_positions(Builder& b, const TokenSeq& ids) const {
    Gr& g = b.g;
    Id e = embed_seq(b, ids);
    const int len = int(ids.size()), d = dims.embed_dim;
    Tensor<T> pe({len, d});
    for (int pos = 0; pos < len; ++pos)
      for (int k = 0; k < d; ++k) {
        const double angle = pos / std::pow(10000.0, double(2 * (k / 2)) / d);
        pe.at(pos, k) = T(k % 2 == 0 ? std::sin(angle) : std::cos(angle));
      }
    return g.add(e, g.constant(std::move(pe)));
  }

  Id attention_block(Builder& b, const std::string& kind, int layer, Id query,
                     Id kv) const {
    Gr& g = b.g;
    const std::string suf = "_" + std::to_string(layer);
    Id q = g.matmul(query, b.use(kind + "_wq" + suf));
    Id k = g.matmul(kv, b.use(kind + "_wk" + suf));
    Id v = g.matmul(kv, b.use(kind + "_wv" + suf));
    const int dh = dims.embed_dim / dims.heads;
    const T inv_sqrt = T(1) / T(std::sqrt(double(dh)));
    std::vector<Id> heads;
    for (int i = 0; i < dims.heads; ++i) {
      Id qh = g.cols(q, i * dh, (i + 1) * dh);
      Id kh = g.cols(k, i * dh, (i + 1) * dh);
      Id vh = g.cols(v, i * dh, (i + 1) * dh);
      Id attn = g.softmax_rows(g.scale(g.matmul(qh, kh, false, true), inv_sqrt));
      heads.push_back(g.matmul(attn, vh));
    }
    Id o = g.matmul(g.concat_cols(heads), b.use(kind + "_wo" + suf));
    return g.add(query, o);  // residual
  }

  Id build_attention(Builder& b, const std::vector<TokenSeq>& turns,
                     const TokenSeq& cand) const {
    Gr& g = b.g;
    std::vector<Id> resp_reps{embed_with_positions(b, cand)};
    for (int l = 1; l <= dims.layers; ++l)
      resp_reps.push_back(attention_block(b, "self", l, resp_reps[l - 1], resp_reps[l - 1]));

    std::vector<Id> turn_vecs;
    for (const TokenSeq& turn : turns) {
      std::vector<Id> turn_reps{embed_with_positions(b, turn)};
      for (int l = 1; l <= dims.layers; ++l)
        turn_reps.push_back(attention_block(b, "self", l, turn_reps[l - 1], turn_reps[l - 1]));

      std::vector<Id> maps;
      for (int l = 0; l <= dims.layers; ++l)
        maps.push_back(g.matmul(turn_reps[l], resp_reps[l], false, true));
      for (int l = 1; l <= dims.layers; ++l) {
        Id cu = attention_block(b, "cross", l, turn_reps[l - 1], resp_reps[l - 1]);
        Id cr = attention_block(b, "cross", l, resp_reps[l - 1], turn_reps[l - 1]);
        maps.push_back(g.matmul(cu, cr, false, true));
      }
      Id conv = g.relu(
          g.conv3x3_same(g.stack_channels(maps), b.use("conv_k"), b.use("conv_b")));
      turn_vecs.push_back(g.global_maxpool(conv));
    }
    Id pooled = g.colmax(g.concat_rows(turn_vecs));
    Id h1 = g.relu(g.add(g.matmul(pooled, b.use("mlp_w1")), b.use("mlp_b1")));
    Id s = g.add(g.matmul(h1, b.use("mlp_w2")), b.use("mlp_b2"));
    return g.clamp(g.sigmoid(s), kProbEps<T>, T(1) - kProbEps<T>);
  }

  void build_index() {
    index_.clear();
    for (size_t i = 0; i < params.size(); ++i) index_.emplace(params[i].name, int(i));
  }

  std::unordered_map<std::string, int> index_;
};

}  // namespace iwsel
