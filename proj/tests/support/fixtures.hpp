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
//
// Shared small-scale pipeline fixtures for the training/weighting tests.

#pragma once

#include "iwsel/synth.hpp"
#include "iwsel/training.hpp"

namespace iwsel::testutil {

inline PipelineConfig small_config(uint64_t seed = 1) {
  PipelineConfig cfg;
  cfg.dims.embed_dim = 16;
  cfg.dims.hidden_dim = 16;
  cfg.dims.layers = 2;
  cfg.dims.heads = 2;
  cfg.dims.conv_channels = 4;
  cfg.dims.max_tokens = 12;
  cfg.lr = 3e-3;
  cfg.batch_size = 32;
  cfg.epochs_pretrain = 6;
  cfg.epochs_finetune = 4;
  cfg.patience = 6;
  cfg.seed = seed;
  return cfg;
}

inline SynthSpec small_synth(uint64_t seed = 1, double pfn = 0.3) {
  SynthSpec spec;
  spec.num_intents = 5;
  spec.responses_per_intent = 6;
  spec.contexts_per_intent = 24;
  spec.turns_per_context = 2;
  spec.false_negative_rate = pfn;
  spec.vocab_per_intent = 12;
  spec.seed = phase_seed(seed, SeedPhase::synth);
  return spec;
}

inline CorpusBundle make_bundle(const SynthCorpus& corpus, const PipelineConfig& cfg) {
  CorpusBundle b;
  b.train = corpus.train;
  b.vocab = build_vocab(b.train, cfg.min_freq);
  tokenize_conversations(b.train, b.vocab, cfg.load_options());
  b.valid = corpus.valid;
  tokenize_conversations(b.valid, b.vocab, cfg.load_options());
  b.test = corpus.test;
  tokenize_eval_groups(b.test, b.vocab, cfg.load_options());
  return b;
}

inline CorpusBundle small_bundle(uint64_t seed = 1, double pfn = 0.3) {
  return make_bundle(generate_synthetic(small_synth(seed, pfn)), small_config(seed));
}

// A budget at which both models demonstrably train (pre-training loss drops
// well below chance and the complementary deltas are macroscopic); used by
// the tests that assert learned behavior rather than contracts.
inline PipelineConfig trained_config(uint64_t seed) {
  PipelineConfig cfg = small_config(seed);
  cfg.lr = 5e-3;
  cfg.batch_size = 16;
  cfg.epochs_pretrain = 12;
  cfg.epochs_finetune = 4;
  return cfg;
}

inline CorpusBundle trained_bundle(uint64_t seed, double pfn = 0.3) {
  SynthSpec spec = small_synth(seed, pfn);
  spec.contexts_per_intent = 40;
  return make_bundle(generate_synthetic(spec), trained_config(seed));
}

}  // namespace iwsel::testutil
