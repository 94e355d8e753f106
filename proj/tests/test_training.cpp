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
#include <limits>

#include "iwsel/training.hpp"
#include "support/fixtures.hpp"

using namespace iwsel;

namespace {

struct Prepared {
  PipelineConfig cfg;
  CorpusBundle bundle;
  std::vector<PointwiseExample> train;
  std::vector<PointwiseExample> valid;
  std::vector<TrainingInstance> instances;
  Model model;
};

Prepared prepare(uint64_t seed = 2, double pfn = 0.3) {
  Prepared p{testutil::small_config(seed), testutil::small_bundle(seed, pfn), {}, {}, {},
             {}};
  p.train = detail::response_task_data(p.bundle.train,
                                       phase_seed(seed, SeedPhase::response_data));
  p.valid = detail::response_task_data(
      p.bundle.valid, phase_seed(seed, SeedPhase::response_data) + 1);
  p.instances = build_pairwise(p.train);
  p.model = Model::init(p.cfg.architecture, Role::response_selection, p.cfg.dims,
                        p.bundle.vocab.size(), p.bundle.vocab.checksum(),
                        phase_seed(seed, SeedPhase::response_init));
  return p;
}

}  // namespace

TEST(OptimConfig, Validation) {
  OptimConfig o;
  o.learning_rate = 0.0;
  EXPECT_THROW(o.validate(), ConfigError);
  o.learning_rate = 1e-4;
  o.batch_size = 0;
  EXPECT_THROW(o.validate(), ConfigError);
  o.batch_size = 1;
  o.grad_clip_norm = 0.0;
  EXPECT_THROW(o.validate(), ConfigError);
}

TEST(TrainCrossEntropy, LossDecreasesOnLearnableData) {
  Prepared p = prepare();
  OptimConfig o = p.cfg.optim(8, SeedPhase::response_train);
  const TrainHistory h = train_cross_entropy(p.model, p.train, p.valid, o);
  ASSERT_GE(h.train_loss.size(), 2u);
  EXPECT_LT(h.train_loss.back(), h.train_loss.front());
  EXPECT_GE(h.best_epoch, 0);
}

TEST(TrainCrossEntropy, SameSeedSameHistory) {
  Prepared a = prepare(5);
  Prepared b = prepare(5);
  OptimConfig o = a.cfg.optim(3, SeedPhase::response_train);
  const TrainHistory ha = train_cross_entropy(a.model, a.train, a.valid, o);
  const TrainHistory hb = train_cross_entropy(b.model, b.train, b.valid, o);
  ASSERT_EQ(ha.train_loss.size(), hb.train_loss.size());
  for (size_t i = 0; i < ha.train_loss.size(); ++i) {
    EXPECT_EQ(ha.train_loss[i], hb.train_loss[i]);
    EXPECT_EQ(ha.valid_loss[i], hb.valid_loss[i]);
  }
  EXPECT_EQ(a.model.param_checksum(), b.model.param_checksum());
}

TEST(TrainCrossEntropy, PostClipGradientNormBounded) {
  Prepared p = prepare();
  OptimConfig o = p.cfg.optim(3, SeedPhase::response_train);
  o.grad_clip_norm = 0.5;
  const TrainHistory h = train_cross_entropy(p.model, p.train, p.valid, o);
  for (double norm : h.max_grad_norm) EXPECT_LE(norm, 0.5 + 1e-6);
}

TEST(TrainCrossEntropy, EmptyDataRejected) {
  Prepared p = prepare();
  EXPECT_THROW(
      train_cross_entropy(p.model, {}, p.valid, p.cfg.optim(1, SeedPhase::response_train)),
      DataError);
}

TEST(TrainCrossEntropy, NanLossAbortsNamingBatch) {
  Prepared p = prepare();
  p.model.params[0].value.data[0] = std::numeric_limits<float>::quiet_NaN();
  try {
    train_cross_entropy(p.model, p.train, p.valid,
                        p.cfg.optim(1, SeedPhase::response_train));
    FAIL() << "expected TrainError";
  } catch (const TrainError& e) {
    EXPECT_NE(std::string(e.what()).find("batch"), std::string::npos);
  }
}

TEST(Finetune, AllZeroWeightsLeaveParametersBitIdentical) {
  Prepared p = prepare();
  const std::vector<double> zeros(p.instances.size(), 0.0);
  const uint64_t before = p.model.param_checksum();
  finetune_weighted(p.model, p.instances, zeros, {}, {0.25},
                    p.cfg.optim(3, SeedPhase::finetune));
  EXPECT_EQ(p.model.param_checksum(), before);
}

TEST(Finetune, UniformWeightsEqualPlainHinge) {
  Prepared a = prepare(7);
  Prepared b = prepare(7);
  const auto uniform = compute_weights<float>({Strategy::uniform, 0.5, 1}, a.instances,
                                              nullptr, nullptr);
  std::vector<double> wa;
  for (const auto& w : uniform) wa.push_back(w.weight);
  const std::vector<double> ones(b.instances.size(), 1.0);
  finetune_weighted(a.model, a.instances, wa, {}, {0.25},
                    a.cfg.optim(3, SeedPhase::finetune));
  finetune_weighted(b.model, b.instances, ones, {}, {0.25},
                    b.cfg.optim(3, SeedPhase::finetune));
  EXPECT_EQ(a.model.param_checksum(), b.model.param_checksum());
}

TEST(Finetune, WeightValidation) {
  Prepared p = prepare();
  std::vector<double> w(p.instances.size(), 0.5);
  w[0] = 1.5;
  EXPECT_THROW(finetune_weighted(p.model, p.instances, w, {}, {0.25},
                                 p.cfg.optim(1, SeedPhase::finetune)),
               ConfigError);
  w.pop_back();
  EXPECT_THROW(finetune_weighted(p.model, p.instances, w, {}, {0.25},
                                 p.cfg.optim(1, SeedPhase::finetune)),
               ConfigError);
}

TEST(Finetune, SkippingZeroWeightsMatchesKeepingThem) {
  // Single batch of 10 instances so the update partition is identical.
  Prepared a = prepare(9);
  Prepared b = prepare(9);
  std::vector<TrainingInstance> ten(a.instances.begin(), a.instances.begin() + 10);
  std::vector<double> w(10, 0.0);
  for (size_t i = 0; i < 10; ++i) w[i] = i % 3 == 0 ? 0.0 : 0.25 + 0.05 * double(i);
  OptimConfig o = a.cfg.optim(5, SeedPhase::finetune);
  o.batch_size = 50;
  finetune_weighted(a.model, ten, w, {}, {0.1}, o, /*skip_zero_weights=*/true);
  finetune_weighted(b.model, ten, w, {}, {0.1}, o, /*skip_zero_weights=*/false);
  for (size_t pi = 0; pi < a.model.params.size(); ++pi) {
    const auto& pa = a.model.params[pi].value.data;
    const auto& pb = b.model.params[pi].value.data;
    for (size_t i = 0; i < pa.size(); ++i)
      EXPECT_NEAR(pa[i], pb[i], 1e-6) << a.model.params[pi].name;
  }
}

TEST(Pipeline, GradientObstruction) {
  // The complementary model is untouched by fine-tuning: weights enter the
  // margin objective as constants.
  const PipelineConfig cfg = testutil::small_config(4);
  const CorpusBundle bundle = testutil::small_bundle(4);
  const PipelineResult res = run_pipeline(cfg, bundle);
  ASSERT_TRUE(res.model_utte.has_value());
  const uint64_t utte_sum = res.model_utte->param_checksum();
  // recompute the weights with the post-pipeline complementary model
  WeightConfig wc{cfg.strategy, cfg.epsilon, phase_seed(cfg.seed, SeedPhase::weights)};
  const auto again =
      compute_weights(wc, res.instances, &*res.model_utte, &res.model_res_pretrained);
  ASSERT_EQ(again.size(), res.weights.size());
  for (size_t i = 0; i < again.size(); ++i)
    EXPECT_DOUBLE_EQ(again[i].weight, res.weights[i].weight);
  EXPECT_EQ(res.model_utte->param_checksum(), utte_sum);
}

TEST(Pipeline, ReportSchemaAndDeterminism) {
  const PipelineConfig cfg = testutil::small_config(6);
  const CorpusBundle bundle = testutil::small_bundle(6);
  PipelineResult a = run_pipeline(cfg, bundle);
  PipelineResult b = run_pipeline(cfg, bundle);

  EXPECT_EQ(a.report["config"]["seed"].get<uint64_t>(), cfg.seed);
  EXPECT_TRUE(a.report.contains("metrics_pretrained"));
  EXPECT_TRUE(a.report.contains("metrics_final"));
  EXPECT_TRUE(a.report.contains("weight_stats"));
  EXPECT_TRUE(a.report["meta"].contains("wall_time_sec"));

  // byte-identical reports once the timing metadata is stripped
  a.report.erase("meta");
  b.report.erase("meta");
  EXPECT_EQ(a.report.dump(), b.report.dump());
  EXPECT_EQ(a.model_res_final.param_checksum(), b.model_res_final.param_checksum());
}

TEST(Pipeline, StrategiesRunEndToEnd) {
  PipelineConfig cfg = testutil::small_config(8);
  cfg.epochs_pretrain = 2;
  cfg.epochs_finetune = 2;
  const CorpusBundle bundle = testutil::small_bundle(8);
  for (Strategy s : {Strategy::uniform, Strategy::random, Strategy::jaccard,
                     Strategy::embedding, Strategy::response_model,
                     Strategy::single_turn_wm}) {
    cfg.strategy = s;
    const PipelineResult res = run_pipeline(cfg, bundle);
    EXPECT_EQ(res.weights.size(), res.instances.size()) << to_string(s);
    EXPECT_GT(res.metrics_final.num_groups, 0) << to_string(s);
  }
}

TEST(Dual, DegenerateScheduleMatchesOneRoundWm) {
  // One round with the mirror half disabled is exactly the wm pipeline with a
  // single fine-tuning epoch (and no validation-based early stopping).
  PipelineConfig dual_cfg = testutil::small_config(11);
  dual_cfg.strategy = Strategy::dual;
  dual_cfg.dual_rounds = 1;
  const CorpusBundle bundle = testutil::small_bundle(11);
  const PipelineResult dual_res =
      run_dual(dual_cfg, bundle, nullptr, /*mirror_enabled=*/false);

  PipelineConfig wm_cfg = dual_cfg;
  wm_cfg.strategy = Strategy::wm;
  wm_cfg.epochs_finetune = 1;
  wm_cfg.valid_group_negatives = 0;  // disables validation groups
  const PipelineResult wm_res = run_pipeline(wm_cfg, bundle);

  EXPECT_EQ(dual_res.model_res_final.param_checksum(),
            wm_res.model_res_final.param_checksum());
  EXPECT_DOUBLE_EQ(dual_res.metrics_final.p_at_1, wm_res.metrics_final.p_at_1);
}

TEST(Dual, DeterministicAcrossReruns) {
  PipelineConfig cfg = testutil::small_config(12);
  cfg.strategy = Strategy::dual;
  cfg.dual_rounds = 2;
  cfg.epochs_pretrain = 2;
  const CorpusBundle bundle = testutil::small_bundle(12);
  const PipelineResult a = run_dual(cfg, bundle);
  const PipelineResult b = run_dual(cfg, bundle);
  EXPECT_EQ(a.model_res_final.param_checksum(), b.model_res_final.param_checksum());
  EXPECT_DOUBLE_EQ(a.metrics_final.map, b.metrics_final.map);
}

TEST(Compare, TwoStrategiesShareOnePretrainedCheckpoint) {
  PipelineConfig cfg = testutil::small_config(13);
  cfg.epochs_pretrain = 2;
  cfg.epochs_finetune = 2;
  const CorpusBundle bundle = testutil::small_bundle(13);
  const CompareResult res =
      run_compare(cfg, {Strategy::uniform, Strategy::wm}, bundle);
  ASSERT_EQ(res.rows.size(), 2u);
  EXPECT_EQ(res.rows[0].strategy, "uniform");
  EXPECT_EQ(res.rows[1].strategy, "wm");
  EXPECT_EQ(res.table["rows"].size(), 2u);
  // 4-decimal fixed-point text table with one row per strategy
  EXPECT_NE(res.text_table.find("uniform"), std::string::npos);
  EXPECT_NE(res.text_table.find("wm"), std::string::npos);
}

TEST(PipelineConfig, Validation) {
  PipelineConfig cfg = testutil::small_config();
  cfg.gamma = -1.0;
  EXPECT_THROW(cfg.validate(), ConfigError);
  cfg = testutil::small_config();
  cfg.lr = 0.0;
  EXPECT_THROW(cfg.validate(), ConfigError);
  cfg = testutil::small_config();
  cfg.strategy = Strategy::dual;
  cfg.dual_rounds = 0;
  EXPECT_THROW(cfg.validate(), ConfigError);
}

TEST(ValidationGroups, ShapeAndDeterminism) {
  const CorpusBundle bundle = testutil::small_bundle(14);
  const auto a = detail::make_validation_groups(bundle.valid, 9, 42);
  const auto b = detail::make_validation_groups(bundle.valid, 9, 42);
  ASSERT_FALSE(a.empty());
  ASSERT_EQ(a.size(), b.size());
  for (size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a[i].candidate_texts, b[i].candidate_texts);
    EXPECT_EQ(std::count(a[i].labels.begin(), a[i].labels.end(), 1), 1);
    EXPECT_EQ(a[i].candidate_texts.size(), 10u);
  }
}
