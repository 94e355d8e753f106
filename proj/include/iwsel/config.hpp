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

#include <fstream>
#include <map>
#include <set>
#include <string>

#include "iwsel/errors.hpp"
#include "iwsel/synth.hpp"
#include "iwsel/training.hpp"

namespace iwsel {

// Flat `key = value` experiment config. `#` starts a comment; unknown keys
// are rejected.
inline std::map<std::string, std::string> parse_config_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file: " + path);
  std::map<std::string, std::string> kv;
  std::string line;
  int line_no = 0;
  auto trim = [](std::string s) {
    const char* ws = " \t\r\n";
    const size_t a = s.find_first_not_of(ws);
    if (a == std::string::npos) return std::string();
    const size_t b = s.find_last_not_of(ws);
    return s.substr(a, b - a + 1);
  };
  while (std::getline(in, line)) {
    ++line_no;
    const size_t hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const size_t eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError(path + ":" + std::to_string(line_no) +
                        ": expected 'key = value'");
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (key.empty() || value.empty())
      throw ConfigError(path + ":" + std::to_string(line_no) +
                        ": expected 'key = value'");
    if (!kv.emplace(key, value).second)
      throw ConfigError(path + ":" + std::to_string(line_no) +
                        ": duplicate key '" + key + "'");
  }
  return kv;
}

namespace detail {

inline const std::set<std::string>& known_config_keys() {
  static const std::set<std::string> keys = {
      // pipeline
      "architecture", "gamma", "epsilon", "strategy", "lr", "lr_finetune",
      "batch_size",
      "clip", "epochs_pretrain", "epochs_finetune", "patience", "seed",
      "dual_rounds", "min_freq", "max_context_turns", "valid_group_negatives",
      // model dims
      "embed_dim", "hidden_dim", "layers", "heads", "conv_channels",
      "max_tokens",
      // synthetic corpus
      "synth_intents", "synth_responses_per_intent",
      "synth_contexts_per_intent", "synth_turns_per_context",
      "synth_false_negative_rate", "synth_vocab_per_intent"};
  return keys;
}

inline double to_double(const std::string& key, const std::string& v) {
  try {
    size_t pos = 0;
    const double d = std::stod(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return d;
  } catch (const std::exception&) {
    throw ConfigError("config: bad numeric value for '" + key + "': " + v);
  }
}

inline long to_long(const std::string& key, const std::string& v) {
  try {
    size_t pos = 0;
    const long d = std::stol(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return d;
  } catch (const std::exception&) {
    throw ConfigError("config: bad integer value for '" + key + "': " + v);
  }
}

}  // namespace detail

struct ExperimentConfig {
  PipelineConfig pipeline;
  SynthSpec synth;
};

inline ExperimentConfig config_from_map(const std::map<std::string, std::string>& kv) {
  for (const auto& [key, value] : kv)
    if (!detail::known_config_keys().count(key))
      throw ConfigError("config: unknown key '" + key + "'");

  ExperimentConfig c;
  auto has = [&](const char* k) { return kv.count(k) != 0; };
  auto str = [&](const char* k) { return kv.at(k); };
  auto num = [&](const char* k) { return detail::to_double(k, kv.at(k)); };
  auto integer = [&](const char* k) { return detail::to_long(k, kv.at(k)); };

  PipelineConfig& p = c.pipeline;
  if (has("architecture")) p.architecture = arch_from_string(str("architecture"));
  if (has("gamma")) p.gamma = num("gamma");
  if (has("epsilon")) p.epsilon = num("epsilon");
  if (has("strategy")) p.strategy = strategy_from_string(str("strategy"));
  if (has("lr")) p.lr = num("lr");
  if (has("lr_finetune")) p.lr_finetune = num("lr_finetune");
  if (has("batch_size")) p.batch_size = int(integer("batch_size"));
  if (has("clip")) p.clip = num("clip");
  if (has("epochs_pretrain")) p.epochs_pretrain = int(integer("epochs_pretrain"));
  if (has("epochs_finetune")) p.epochs_finetune = int(integer("epochs_finetune"));
  if (has("patience")) p.patience = int(integer("patience"));
  if (has("seed")) p.seed = uint64_t(integer("seed"));
  if (has("dual_rounds")) p.dual_rounds = int(integer("dual_rounds"));
  if (has("min_freq")) p.min_freq = int(integer("min_freq"));
  if (has("max_context_turns")) p.max_context_turns = int(integer("max_context_turns"));
  if (has("valid_group_negatives"))
    p.valid_group_negatives = int(integer("valid_group_negatives"));
  if (has("embed_dim")) p.dims.embed_dim = int(integer("embed_dim"));
  if (has("hidden_dim")) p.dims.hidden_dim = int(integer("hidden_dim"));
  if (has("layers")) p.dims.layers = int(integer("layers"));
  if (has("heads")) p.dims.heads = int(integer("heads"));
  if (has("conv_channels")) p.dims.conv_channels = int(integer("conv_channels"));
  if (has("max_tokens")) p.dims.max_tokens = int(integer("max_tokens"));

  SynthSpec& s = c.synth;
  if (has("synth_intents")) s.num_intents = int(integer("synth_intents"));
  if (has("synth_responses_per_intent"))
    s.responses_per_intent = int(integer("synth_responses_per_intent"));
  if (has("synth_contexts_per_intent"))
    s.contexts_per_intent = int(integer("synth_contexts_per_intent"));
  if (has("synth_turns_per_context"))
    s.turns_per_context = int(integer("synth_turns_per_context"));
  if (has("synth_false_negative_rate"))
    s.false_negative_rate = num("synth_false_negative_rate");
  if (has("synth_vocab_per_intent"))
    s.vocab_per_intent = int(integer("synth_vocab_per_intent"));
  s.seed = phase_seed(p.seed, SeedPhase::synth);

  p.validate();
  return c;
}

inline ExperimentConfig load_config(const std::string& path) {
  return config_from_map(parse_config_file(path));
}

}  // namespace iwsel
