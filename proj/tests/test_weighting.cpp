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

#include <filesystem>

#include "iwsel/weighting.hpp"
#include "support/fixtures.hpp"

using namespace iwsel;
namespace fs = std::filesystem;

namespace {

Vocab tiny_vocab(int n = 20) {
  Vocab v;
  for (int i = 0; i < n; ++i) v.add("w" + std::to_string(i));
  return v;
}

MatcherModel<float> tiny_model(Role role, const Vocab& v, uint64_t seed = 4) {
  Dims d;
  d.embed_dim = 8;
  d.hidden_dim = 8;
  d.layers = 2;
  d.heads = 2;
  d.conv_channels = 4;
  d.max_tokens = 8;
  return MatcherModel<float>::init(Arch::recurrent, role, d, v.size(), v.checksum(),
                                   seed);
}

std::vector<TrainingInstance> toy_instances(int n) {
  std::vector<TrainingInstance> out;
  for (int i = 0; i < n; ++i) {
    TrainingInstance t;
    t.context = {{2, 3}, {4, int(5 + i % 6)}};
    t.q = {6, int(7 + i % 5)};
    t.pos = {8, int(9 + i % 4)};
    t.neg = {10, int(11 + i % 3)};
    t.context_texts = {"a b", "c d"};
    t.q_text = "q";
    t.pos_text = "pos";
    t.neg_text = "neg";
    out.push_back(t);
  }
  return out;
}

}  // namespace

TEST(WeightFromDeltas, HandValues) {
  EXPECT_DOUBLE_EQ(weight_from_deltas(0.6, 0.2, 0.5), 0.9);
  EXPECT_DOUBLE_EQ(weight_from_deltas(0.3, 0.3, 0.0), 0.0);  // lower clamp
  EXPECT_DOUBLE_EQ(weight_from_deltas(0.9, 0.1, 0.5), 1.0);  // upper clamp
}

TEST(WeightFromDeltas, RangeMonotonicityTranslation) {
  Rng rng(99);
  for (int i = 0; i < 5000; ++i) {
    const double dp = rng.next_uniform(-1.0, 1.0);
    const double dn = rng.next_uniform(-1.0, 1.0);
    const double eps = rng.next_uniform(-1.0, 1.0);
    const double w = weight_from_deltas(dp, dn, eps);
    EXPECT_GE(w, 0.0);
    EXPECT_LE(w, 1.0);
    // nondecreasing in delta_pos, nonincreasing in delta_neg
    EXPECT_LE(w, weight_from_deltas(dp + 0.1, dn, eps));
    EXPECT_GE(w, weight_from_deltas(dp, dn + 0.1, eps));
    // depends only on the difference (up to rounding in the shifted inputs)
    const double shift = rng.next_uniform(-0.5, 0.5);
    EXPECT_NEAR(w, weight_from_deltas(dp + shift, dn + shift, eps), 1e-12);
  }
}

TEST(Delta, MatchesScoreArithmeticAndBounds) {
  const Vocab v = tiny_vocab();
  const auto utte = tiny_model(Role::last_utterance_selection, v);
  const std::vector<TokenSeq> ctx = {{2, 3}, {4, 5}};
  const TokenSeq r = {6, 7}, qp = {8, 9}, qn = {10, 11};
  std::vector<TokenSeq> turns = ctx;
  turns.push_back(r);
  const double expected =
      double(utte.score(turns, qp)) - double(utte.score(turns, qn));
  EXPECT_DOUBLE_EQ(delta(utte, ctx, r, qp, qn), expected);
  EXPECT_GT(delta(utte, ctx, r, qp, qn), -1.0);
  EXPECT_LT(delta(utte, ctx, r, qp, qn), 1.0);
  // identical candidates cancel exactly
  EXPECT_DOUBLE_EQ(delta(utte, ctx, r, qp, qp), 0.0);
}

TEST(Delta, WrongRoleRejected) {
  const Vocab v = tiny_vocab();
  const auto res = tiny_model(Role::response_selection, v);
  EXPECT_THROW(delta(res, {{2, 3}}, {4}, {5}, {6}), ConfigError);
}

TEST(ComputeWeights, UniformGivesOnes) {
  const auto instances = toy_instances(10);
  const auto ws = compute_weights<float>({Strategy::uniform, 0.5, 1}, instances,
                                         nullptr, nullptr);
  ASSERT_EQ(ws.size(), 10u);
  for (const auto& w : ws) EXPECT_DOUBLE_EQ(w.weight, 1.0);
}

TEST(ComputeWeights, JaccardHandValue) {
  auto instances = toy_instances(1);
  instances[0].pos = {2, 3, 4};   // {a,b,c}
  instances[0].neg = {3, 4, 5};   // {b,c,d}
  const auto ws = compute_weights<float>({Strategy::jaccard, 0.5, 1}, instances,
                                         nullptr, nullptr);
  EXPECT_DOUBLE_EQ(ws[0].weight, 0.5);  // 2 shared / 4 union
}

TEST(ComputeWeights, RandomSeededAndInRange) {
  const auto instances = toy_instances(50);
  const auto a = compute_weights<float>({Strategy::random, 0.5, 123}, instances,
                                        nullptr, nullptr);
  const auto b = compute_weights<float>({Strategy::random, 0.5, 123}, instances,
                                        nullptr, nullptr);
  const auto c = compute_weights<float>({Strategy::random, 0.5, 124}, instances,
                                        nullptr, nullptr);
  bool any_diff = false;
  for (size_t i = 0; i < a.size(); ++i) {
    EXPECT_DOUBLE_EQ(a[i].weight, b[i].weight);
    EXPECT_GE(a[i].weight, 0.0);
    EXPECT_LE(a[i].weight, 1.0);
    any_diff = any_diff || a[i].weight != c[i].weight;
  }
  EXPECT_TRUE(any_diff);
}

TEST(ComputeWeights, EmbeddingCosineClampedIdenticalIsOne) {
  const Vocab v = tiny_vocab();
  const auto res = tiny_model(Role::response_selection, v);
  auto instances = toy_instances(2);
  instances[0].neg = instances[0].pos;  // identical representations
  const auto ws = compute_weights({Strategy::embedding, 0.5, 1}, instances,
                                  (const MatcherModel<float>*)nullptr, &res);
  EXPECT_NEAR(ws[0].weight, 1.0, 1e-6);
  for (const auto& w : ws) {
    EXPECT_GE(w.weight, 0.0);
    EXPECT_LE(w.weight, 1.0);
  }
}

TEST(ComputeWeights, WmFamilyProducesDeltasInRange) {
  const Vocab v = tiny_vocab();
  const auto utte = tiny_model(Role::last_utterance_selection, v);
  const auto instances = toy_instances(20);
  for (Strategy s : {Strategy::wm, Strategy::single_turn_wm, Strategy::dual}) {
    const auto ws =
        compute_weights({s, 0.5, 7}, instances, &utte, (const MatcherModel<float>*)nullptr);
    ASSERT_EQ(ws.size(), instances.size());
    for (const auto& w : ws) {
      EXPECT_GE(w.weight, 0.0);
      EXPECT_LE(w.weight, 1.0);
      ASSERT_TRUE(w.delta_pos.has_value());
      ASSERT_TRUE(w.delta_neg.has_value());
      EXPECT_GT(*w.delta_pos, -1.0);
      EXPECT_LT(*w.delta_pos, 1.0);
    }
    // deterministic and pure given the frozen model and seed
    const auto again =
        compute_weights({s, 0.5, 7}, instances, &utte, (const MatcherModel<float>*)nullptr);
    for (size_t i = 0; i < ws.size(); ++i)
      EXPECT_DOUBLE_EQ(ws[i].weight, again[i].weight);
  }
}

TEST(ComputeWeights, ResponseModelStrategy) {
  const Vocab v = tiny_vocab();
  const auto res = tiny_model(Role::response_selection, v);
  const auto instances = toy_instances(10);
  const auto ws = compute_weights({Strategy::response_model, 0.5, 7}, instances,
                                  (const MatcherModel<float>*)nullptr, &res);
  ASSERT_EQ(ws.size(), instances.size());
  for (const auto& w : ws) {
    EXPECT_GE(w.weight, 0.0);
    EXPECT_LE(w.weight, 1.0);
    EXPECT_TRUE(w.delta_pos.has_value());
  }
}

TEST(ComputeWeights, MissingModelsRejected) {
  const Vocab v = tiny_vocab();
  const auto res = tiny_model(Role::response_selection, v);
  const auto instances = toy_instances(4);
  EXPECT_THROW(compute_weights<float>({Strategy::wm, 0.5, 1}, instances, nullptr,
                                      nullptr),
               ConfigError);
  // wrong role in place of the complementary model
  EXPECT_THROW(compute_weights({Strategy::wm, 0.5, 1}, instances, &res, &res),
               ConfigError);
  EXPECT_THROW(compute_weights<float>({Strategy::response_model, 0.5, 1}, instances,
                                      nullptr, nullptr),
               ConfigError);
  EXPECT_THROW(compute_weights<float>({Strategy::embedding, 0.5, 1}, instances,
                                      nullptr, nullptr),
               ConfigError);
}

TEST(WeightsFile, RoundTrip) {
  std::vector<WeightedInstance> ws;
  ws.push_back({0, 0.25, 0.6, 0.1});
  ws.push_back({1, 1.0, std::nullopt, std::nullopt});
  ws.push_back({2, 0.0, -0.125, 0.5});
  const std::string path = (fs::temp_directory_path() / "iwsel_weights.jsonl").string();
  save_weights(ws, path);
  const auto loaded = load_weights(path);
  ASSERT_EQ(loaded.size(), ws.size());
  for (size_t i = 0; i < ws.size(); ++i) {
    EXPECT_EQ(loaded[i].instance_index, ws[i].instance_index);
    EXPECT_DOUBLE_EQ(loaded[i].weight, ws[i].weight);
    EXPECT_EQ(loaded[i].delta_pos.has_value(), ws[i].delta_pos.has_value());
    if (ws[i].delta_pos) EXPECT_DOUBLE_EQ(*loaded[i].delta_pos, *ws[i].delta_pos);
  }
}

// Directional check on a small noisy corpus: after the standard pipeline,
// planted false negatives receive lower weights than true negatives.
TEST(WeightSeparation, NoiseGetsLowerMeanWeight) {
  const PipelineConfig cfg = testutil::trained_config(3);
  const CorpusBundle bundle = testutil::trained_bundle(3, 0.4);
  const PipelineResult res = run_pipeline(cfg, bundle);
  double noise_sum = 0, clean_sum = 0;
  int noise_n = 0, clean_n = 0;
  for (size_t i = 0; i < res.instances.size(); ++i) {
    ASSERT_TRUE(res.instances[i].noise_flag.has_value());
    if (*res.instances[i].noise_flag) {
      noise_sum += res.weights[i].weight;
      ++noise_n;
    } else {
      clean_sum += res.weights[i].weight;
      ++clean_n;
    }
  }
  ASSERT_GT(noise_n, 5);
  ASSERT_GT(clean_n, 5);
  EXPECT_LT(noise_sum / noise_n, clean_sum / clean_n);

  // the lowest-weight bucket is enriched in planted false negatives
  std::vector<size_t> order(res.weights.size());
  std::iota(order.begin(), order.end(), size_t(0));
  std::stable_sort(order.begin(), order.end(), [&](size_t a, size_t b) {
    return res.weights[a].weight < res.weights[b].weight;
  });
  const size_t k = 20;
  int bucket_noise = 0;
  for (size_t i = 0; i < k; ++i)
    bucket_noise += *res.instances[order[i]].noise_flag ? 1 : 0;
  const double base_rate = double(noise_n) / double(noise_n + clean_n);
  EXPECT_GT(double(bucket_noise) / double(k), base_rate);
}
