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

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <limits>
#include <numeric>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "iwsel/corpus.hpp"
#include "iwsel/errors.hpp"
#include "iwsel/evaluation.hpp"
#include "iwsel/matcher.hpp"
#include "iwsel/objectives.hpp"
#include "iwsel/rng.hpp"
#include "iwsel/synth.hpp"
#include "iwsel/weighting.hpp"

namespace iwsel {

// ---------------------------------------------------------------------------
// Optimizer
// ---------------------------------------------------------------------------

struct OptimConfig {
  double learning_rate = 1e-4;
  int batch_size = 50;
  double grad_clip_norm = 1.0;
  int max_epochs = 30;
  int patience = 5;
  uint64_t seed = 0;

  void validate() const {
    if (!(learning_rate > 0.0)) throw ConfigError("learning_rate must be > 0");
    if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
    if (!(grad_clip_norm > 0.0)) throw ConfigError("grad_clip_norm must be > 0");
    if (max_epochs < 1) throw ConfigError("max_epochs must be >= 1");
    if (patience < 0) throw ConfigError("patience must be >= 0");
  }
};

struct TrainHistory {
  std::vector<double> train_loss;
  std::vector<double> valid_loss;
  std::vector<double> valid_p1;       // fine-tuning only
  std::vector<double> max_grad_norm;  // post-clip, per epoch
  int best_epoch = -1;
  int epochs_run = 0;
};

template <typename T>
class Adam {
 public:
  explicit Adam(const std::vector<NamedTensor<T>>& params) {
    for (const auto& p : params) {
      m_.emplace_back(p.value.shape);
      v_.emplace_back(p.value.shape);
    }
  }

  // Scales gradients so the global L2 norm is at most `clip`; returns the
  // post-clip norm.
  static double clip_global_norm(std::vector<Tensor<T>>& grads, double clip) {
    double sq = 0.0;
    for (const auto& g : grads)
      for (T v : g.data) sq += double(v) * double(v);
    const double norm = std::sqrt(sq);
    if (norm > clip) {
      const T factor = T(clip / norm);
      for (auto& g : grads)
        for (T& v : g.data) v *= factor;
      return clip;
    }
    return norm;
  }

  void step(std::vector<NamedTensor<T>>& params, const std::vector<Tensor<T>>& grads,
            double lr) {
    ++t_;
    const T b1 = T(0.9), b2 = T(0.999), eps = T(1e-8);
    const T bc1 = T(1) - T(std::pow(0.9, double(t_)));
    const T bc2 = T(1) - T(std::pow(0.999, double(t_)));
    const T alpha = T(lr);
    for (size_t p = 0; p < params.size(); ++p) {
      auto& theta = params[p].value.data;
      const auto& g = grads[p].data;
      auto& m = m_[p].data;
      auto& v = v_[p].data;
      for (size_t i = 0; i < theta.size(); ++i) {
        m[i] = b1 * m[i] + (T(1) - b1) * g[i];
        v[i] = b2 * v[i] + (T(1) - b2) * g[i] * g[i];
        theta[i] -= alpha * (m[i] / bc1) / (std::sqrt(v[i] / bc2) + eps);
      }
    }
  }

 private:
  std::vector<Tensor<T>> m_, v_;
  long t_ = 0;
};

// ---------------------------------------------------------------------------
// Cross-entropy training (pre-training and the complementary model)
// ---------------------------------------------------------------------------

namespace detail {

template <typename T>
double validation_cross_entropy(const MatcherModel<T>& model,
                                const std::vector<PointwiseExample>& valid) {
  double loss = 0.0;
  for (const PointwiseExample& ex : valid) {
    const double p = double(model.score(ex.model_turns(), ex.candidate));
    loss -= ex.label == 1 ? std::log(p) : std::log(1.0 - p);
  }
  return loss;
}

template <typename T>
std::vector<Tensor<T>> zero_grads(const std::vector<NamedTensor<T>>& params) {
  std::vector<Tensor<T>> g;
  g.reserve(params.size());
  for (const auto& p : params) g.emplace_back(p.value.shape);
  return g;
}

template <typename T>
void reset_grads(std::vector<Tensor<T>>& grads) {
  for (auto& g : grads) g.fill(T(0));
}

}  // namespace detail

template <typename T>
TrainHistory train_cross_entropy(MatcherModel<T>& model,
                                 const std::vector<PointwiseExample>& train,
                                 const std::vector<PointwiseExample>& valid,
                                 const OptimConfig& optim) {
  optim.validate();
  if (train.empty()) throw DataError("train_cross_entropy: empty training data");

  Adam<T> adam(model.params);
  auto grads = detail::zero_grads(model.params);
  Rng shuffle_rng(optim.seed);
  std::vector<size_t> order(train.size());
  std::iota(order.begin(), order.end(), size_t(0));

  TrainHistory hist;
  std::vector<NamedTensor<T>> best_params = model.params;
  double best_valid = std::numeric_limits<double>::infinity();
  int bad_epochs = 0;

  for (int epoch = 0; epoch < optim.max_epochs; ++epoch) {
    shuffle_rng.shuffle(order);
    double epoch_loss = 0.0, max_norm = 0.0;
    int batch_index = 0;
    for (size_t start = 0; start < order.size();
         start += size_t(optim.batch_size), ++batch_index) {
      const size_t end = std::min(order.size(), start + size_t(optim.batch_size));
      detail::reset_grads(grads);
      double batch_loss = 0.0;
      for (size_t k = start; k < end; ++k) {
        const PointwiseExample& ex = train[order[k]];
        Graph<T> g;
        auto sg = model.build_score(g, ex.model_turns(), ex.candidate);
        auto loss = cross_entropy_node(g, sg.prob, ex.label);
        g.backward(loss);
        for (const auto& [pidx, id] : sg.leaves) axpy(grads[pidx], g.grad(id));
        batch_loss += double(g.scalar(loss));
      }
      if (!std::isfinite(batch_loss))
        throw TrainError("non-finite loss at epoch " + std::to_string(epoch) +
                         ", batch " + std::to_string(batch_index));
      max_norm = std::max(max_norm,
                          Adam<T>::clip_global_norm(grads, optim.grad_clip_norm));
      adam.step(model.params, grads, optim.learning_rate);
      if (!model.params_finite())
        throw TrainError("non-finite parameters after update at epoch " +
                         std::to_string(epoch) + ", batch " +
                         std::to_string(batch_index));
      epoch_loss += batch_loss;
    }
    hist.train_loss.push_back(epoch_loss);
    hist.max_grad_norm.push_back(max_norm);
    hist.epochs_run = epoch + 1;
    if (valid.empty()) {
      hist.valid_loss.push_back(0.0);
      hist.best_epoch = epoch;
      continue;
    }
    const double vloss = detail::validation_cross_entropy(model, valid);
    hist.valid_loss.push_back(vloss);
    if (vloss < best_valid) {
      best_valid = vloss;
      hist.best_epoch = epoch;
      best_params = model.params;
      bad_epochs = 0;
    } else if (++bad_epochs > optim.patience) {
      break;
    }
  }
  if (!valid.empty()) model.params = best_params;
  return hist;
}

// ---------------------------------------------------------------------------
// Weighted margin fine-tuning
// ---------------------------------------------------------------------------

// Optimizes the weighted pairwise margin objective. Weights enter as
// constants, so the model that produced them is never touched. Zero-weight
// instances are skipped up front; they are provably gradient-free either way.
template <typename T>
TrainHistory finetune_weighted(MatcherModel<T>& model,
                               const std::vector<TrainingInstance>& instances,
                               const std::vector<double>& weights,
                               const std::vector<EvalGroup>& valid_groups,
                               const MarginConfig& margin, const OptimConfig& optim,
                               bool skip_zero_weights = true) {
  optim.validate();
  margin.validate();
  if (instances.size() != weights.size())
    throw ConfigError("finetune_weighted: weights misaligned with instances");
  for (double w : weights)
    if (!(w >= 0.0 && w <= 1.0))
      throw ConfigError("finetune_weighted: weight outside [0,1]");

  std::vector<size_t> active;
  for (size_t i = 0; i < instances.size(); ++i)
    if (!skip_zero_weights || weights[i] > 0.0) active.push_back(i);

  Adam<T> adam(model.params);
  auto grads = detail::zero_grads(model.params);
  Rng shuffle_rng(optim.seed);

  TrainHistory hist;
  std::vector<NamedTensor<T>> best_params = model.params;
  double best_p1 = -1.0;
  int bad_epochs = 0;

  for (int epoch = 0; epoch < optim.max_epochs; ++epoch) {
    shuffle_rng.shuffle(active);
    double epoch_loss = 0.0, max_norm = 0.0;
    int batch_index = 0;
    for (size_t start = 0; start < active.size();
         start += size_t(optim.batch_size), ++batch_index) {
      const size_t end = std::min(active.size(), start + size_t(optim.batch_size));
      detail::reset_grads(grads);
      double batch_loss = 0.0;
      for (size_t k = start; k < end; ++k) {
        const TrainingInstance& t = instances[active[k]];
        const T w = T(weights[active[k]]);
        Graph<T> g;
        std::vector<TokenSeq> turns = t.context;
        turns.push_back(t.q);
        auto sg_pos = model.build_score(g, turns, t.pos);
        auto sg_neg = model.build_score(g, turns, t.neg);
        auto loss = weighted_margin_node(g, sg_pos.prob, sg_neg.prob, w,
                                         T(margin.gamma));
        g.backward(loss);
        for (const auto& [pidx, id] : sg_pos.leaves) axpy(grads[pidx], g.grad(id));
        for (const auto& [pidx, id] : sg_neg.leaves) axpy(grads[pidx], g.grad(id));
        batch_loss += double(g.scalar(loss));
      }
      if (!std::isfinite(batch_loss))
        throw TrainError("non-finite loss at epoch " + std::to_string(epoch) +
                         ", batch " + std::to_string(batch_index));
      max_norm = std::max(max_norm,
                          Adam<T>::clip_global_norm(grads, optim.grad_clip_norm));
      adam.step(model.params, grads, optim.learning_rate);
      if (!model.params_finite())
        throw TrainError("non-finite parameters after update at epoch " +
                         std::to_string(epoch) + ", batch " +
                         std::to_string(batch_index));
      epoch_loss += batch_loss;
    }
    hist.train_loss.push_back(epoch_loss);
    hist.max_grad_norm.push_back(max_norm);
    hist.epochs_run = epoch + 1;
    if (valid_groups.empty()) {
      hist.best_epoch = epoch;
      continue;
    }
    const double p1 = evaluate(model, valid_groups).p_at_1;
    hist.valid_p1.push_back(p1);
    if (p1 > best_p1) {
      best_p1 = p1;
      hist.best_epoch = epoch;
      best_params = model.params;
      bad_epochs = 0;
    } else if (++bad_epochs > optim.patience) {
      break;
    }
  }
  if (!valid_groups.empty()) model.params = best_params;
  return hist;
}

// ---------------------------------------------------------------------------
// Pipeline
// ---------------------------------------------------------------------------

struct PipelineConfig {
  Arch architecture = Arch::recurrent;
  Dims dims;
  double gamma = 0.25;
  double epsilon = 0.5;
  Strategy strategy = Strategy::wm;
  double lr = 1e-4;
  double lr_finetune = 0.0;  // 0 = same as lr
  int batch_size = 50;
  double clip = 1.0;
  int epochs_pretrain = 30;
  int epochs_finetune = 20;
  int patience = 5;
  uint64_t seed = 1;
  int dual_rounds = 1;
  int min_freq = 1;
  int max_context_turns = 5;
  int valid_group_negatives = 9;

  void validate() const {
    if (!(gamma >= 0.0)) throw ConfigError("gamma must be >= 0");
    if (!std::isfinite(epsilon)) throw ConfigError("epsilon must be finite");
    if (lr_finetune < 0.0) throw ConfigError("lr_finetune must be >= 0");
    optim(1, SeedPhase::complementary_train).validate();
    if (epochs_pretrain < 1 || epochs_finetune < 1)
      throw ConfigError("epoch counts must be >= 1");
    if (strategy == Strategy::dual && dual_rounds < 1)
      throw ConfigError("dual_rounds must be >= 1");
    if (min_freq < 1) throw ConfigError("min_freq must be >= 1");
    if (dims.embed_dim < 1 || dims.hidden_dim < 1 || dims.layers < 1 ||
        dims.heads < 1 || dims.conv_channels < 1 || dims.max_tokens < 1)
      throw ConfigError("model dimensions must be positive");
  }

  OptimConfig optim(int epochs, SeedPhase phase) const {
    OptimConfig o;
    o.learning_rate = lr;
    const bool is_finetune = phase == SeedPhase::finetune ||
                             phase == SeedPhase::dual_mirror_finetune;
    if (is_finetune && lr_finetune > 0.0) o.learning_rate = lr_finetune;
    o.batch_size = batch_size;
    o.grad_clip_norm = clip;
    o.max_epochs = epochs;
    o.patience = patience;
    o.seed = phase_seed(seed, phase);
    return o;
  }

  LoadOptions load_options() const {
    return {dims.max_tokens, max_context_turns};
  }

  MarginConfig margin() const { return {gamma}; }

  bool needs_complementary_model() const {
    return strategy == Strategy::wm || strategy == Strategy::single_turn_wm ||
           strategy == Strategy::dual;
  }
};

struct CorpusBundle {
  Vocab vocab;
  std::vector<Conversation> train;
  std::vector<Conversation> valid;
  std::vector<EvalGroup> test;
};

inline CorpusBundle load_bundle(const std::string& data_dir,
                                const PipelineConfig& cfg) {
  namespace fs = std::filesystem;
  const std::string train_path = data_dir + "/train.jsonl";
  const std::string valid_path = data_dir + "/valid.jsonl";
  const std::string test_path = data_dir + "/test.jsonl";
  for (const std::string& p : {train_path, valid_path, test_path})
    if (!fs::exists(p)) throw DataError("missing corpus file: " + p);
  CorpusBundle b;
  b.train = load_conversations(train_path);
  b.vocab = build_vocab(b.train, cfg.min_freq);
  tokenize_conversations(b.train, b.vocab, cfg.load_options());
  b.valid = load_conversations(valid_path, b.vocab, cfg.load_options());
  b.test = load_eval_groups(test_path, b.vocab, cfg.load_options());
  return b;
}

namespace detail {

inline std::vector<Conversation> positives(const std::vector<Conversation>& convs) {
  std::vector<Conversation> out;
  for (const Conversation& c : convs)
    if (c.label == 1) out.push_back(c);
  return out;
}

inline bool has_negatives(const std::vector<Conversation>& convs) {
  for (const Conversation& c : convs)
    if (c.label == 0) return true;
  return false;
}

// Pointwise data for the response-selection role: stored negatives when the
// corpus carries them, sampled 1:1 negatives otherwise.
inline std::vector<PointwiseExample> response_task_data(
    const std::vector<Conversation>& convs, uint64_t seed) {
  if (has_negatives(convs)) return pointwise_from_labeled(convs);
  return sample_negatives(convs, 1, seed);
}

inline void strip_contexts(std::vector<PointwiseExample>& examples) {
  for (PointwiseExample& e : examples) {
    e.context.clear();
    e.context_texts.clear();
  }
}

// Ranking groups for fine-tuning early stopping: each positive validation
// conversation against sampled responses from other validation conversations.
inline std::vector<EvalGroup> make_validation_groups(
    const std::vector<Conversation>& valid, int negatives, uint64_t seed) {
  const std::vector<Conversation> pos = positives(valid);
  if (negatives < 1 || pos.size() < 2) return {};
  const int k = std::min<int>(negatives, int(pos.size()) - 1);
  Rng rng(seed);
  std::vector<EvalGroup> out;
  out.reserve(pos.size());
  for (size_t i = 0; i < pos.size(); ++i) {
    std::vector<std::pair<const Conversation*, int>> cands;
    cands.emplace_back(&pos[i], 1);
    std::set<size_t> used{i};
    while (int(cands.size()) < k + 1) {
      size_t j = size_t(rng.next_below(pos.size()));
      if (!used.insert(j).second) continue;
      cands.emplace_back(&pos[j], 0);
    }
    rng.shuffle(cands);
    EvalGroup g;
    g.context_texts = pos[i].context_texts;
    g.last_utterance_text = pos[i].last_utterance_text;
    g.context_ids = pos[i].context_ids;
    g.q_ids = pos[i].q_ids;
    for (const auto& [conv, label] : cands) {
      g.candidate_texts.push_back(conv->response_text);
      g.candidate_ids.push_back(conv->r_ids);
      g.labels.push_back(label);
    }
    out.push_back(std::move(g));
  }
  return out;
}

}  // namespace detail

using Model = MatcherModel<float>;

struct PipelineResult {
  std::optional<Model> model_utte;
  Model model_res_pretrained;
  Model model_res_final;
  std::vector<TrainingInstance> instances;
  std::vector<WeightedInstance> weights;
  Metrics metrics_pretrained;
  Metrics metrics_final;
  TrainHistory hist_utte;
  TrainHistory hist_pretrain;
  TrainHistory hist_finetune;
  nlohmann::json report;
};

namespace detail {

inline nlohmann::json history_json(const TrainHistory& h) {
  nlohmann::json j;
  j["train_loss"] = h.train_loss;
  j["valid_loss"] = h.valid_loss;
  if (!h.valid_p1.empty()) j["valid_p1"] = h.valid_p1;
  j["max_grad_norm"] = h.max_grad_norm;
  j["best_epoch"] = h.best_epoch;
  j["epochs_run"] = h.epochs_run;
  return j;
}

inline nlohmann::json metrics_json(const Metrics& m) {
  return {{"map", m.map}, {"mrr", m.mrr}, {"p_at_1", m.p_at_1},
          {"num_groups", m.num_groups}};
}

inline nlohmann::json config_json(const PipelineConfig& c) {
  nlohmann::json j;
  j["architecture"] = to_string(c.architecture);
  j["dims"] = {{"embed_dim", c.dims.embed_dim},
               {"hidden_dim", c.dims.hidden_dim},
               {"layers", c.dims.layers},
               {"heads", c.dims.heads},
               {"conv_channels", c.dims.conv_channels},
               {"max_tokens", c.dims.max_tokens}};
  j["gamma"] = c.gamma;
  j["epsilon"] = c.epsilon;
  j["strategy"] = to_string(c.strategy);
  j["lr"] = c.lr;
  j["lr_finetune"] = c.lr_finetune;
  j["batch_size"] = c.batch_size;
  j["clip"] = c.clip;
  j["epochs_pretrain"] = c.epochs_pretrain;
  j["epochs_finetune"] = c.epochs_finetune;
  j["patience"] = c.patience;
  j["seed"] = c.seed;
  j["dual_rounds"] = c.dual_rounds;
  j["min_freq"] = c.min_freq;
  j["max_context_turns"] = c.max_context_turns;
  return j;
}

inline nlohmann::json weight_stats_json(const std::vector<WeightedInstance>& ws) {
  double mean = 0.0, zero = 0.0, one = 0.0;
  for (const WeightedInstance& w : ws) {
    mean += w.weight;
    if (w.weight <= 0.0) zero += 1.0;
    if (w.weight >= 1.0) one += 1.0;
  }
  const double n = ws.empty() ? 1.0 : double(ws.size());
  return {{"count", ws.size()},
          {"mean", mean / n},
          {"fraction_zero", zero / n},
          {"fraction_one", one / n}};
}

}  // namespace detail

using PhaseCallback = std::function<void(const std::string&)>;

// End-to-end procedure: train the complementary model, pre-train the response
// model, compute instance weights with the frozen complementary model, then
// fine-tune under the weighted margin objective and evaluate both checkpoints.
inline PipelineResult run_pipeline(const PipelineConfig& cfg, const CorpusBundle& bundle,
                                   const PhaseCallback& on_phase = nullptr) {
  cfg.validate();
  if (bundle.test.empty()) throw DataError("run_pipeline: empty test split");
  const auto started = std::chrono::steady_clock::now();
  auto phase = [&](const std::string& p) {
    if (on_phase) on_phase(p);
  };
  PipelineResult res;

  phase("complementary");
  if (cfg.needs_complementary_model()) {
    auto comp_train = derive_last_utterance_data(
        detail::positives(bundle.train), phase_seed(cfg.seed, SeedPhase::complementary_data));
    auto comp_valid = derive_last_utterance_data(
        detail::positives(bundle.valid),
        phase_seed(cfg.seed, SeedPhase::complementary_data) + 1);
    if (cfg.strategy == Strategy::single_turn_wm) {
      detail::strip_contexts(comp_train);
      detail::strip_contexts(comp_valid);
    }
    Model utte = Model::init(cfg.architecture, Role::last_utterance_selection,
                             cfg.dims, bundle.vocab.size(), bundle.vocab.checksum(),
                             phase_seed(cfg.seed, SeedPhase::complementary_init));
    res.hist_utte = train_cross_entropy(
        utte, comp_train, comp_valid,
        cfg.optim(cfg.epochs_pretrain, SeedPhase::complementary_train));
    res.model_utte = std::move(utte);
  }

  phase("pretrain");
  auto res_train = detail::response_task_data(
      bundle.train, phase_seed(cfg.seed, SeedPhase::response_data));
  auto res_valid = detail::response_task_data(
      bundle.valid, phase_seed(cfg.seed, SeedPhase::response_data) + 1);
  res.model_res_pretrained =
      Model::init(cfg.architecture, Role::response_selection, cfg.dims,
                  bundle.vocab.size(), bundle.vocab.checksum(),
                  phase_seed(cfg.seed, SeedPhase::response_init));
  res.hist_pretrain = train_cross_entropy(
      res.model_res_pretrained, res_train, res_valid,
      cfg.optim(cfg.epochs_pretrain, SeedPhase::response_train));

  phase("weights");
  res.instances = build_pairwise(res_train);
  WeightConfig wc{cfg.strategy, cfg.epsilon, phase_seed(cfg.seed, SeedPhase::weights)};
  res.weights = compute_weights(wc, res.instances,
                                res.model_utte ? &*res.model_utte : nullptr,
                                &res.model_res_pretrained);

  phase("finetune");
  const auto vgroups = detail::make_validation_groups(
      bundle.valid, cfg.valid_group_negatives,
      phase_seed(cfg.seed, SeedPhase::valid_groups));
  std::vector<double> w;
  w.reserve(res.weights.size());
  for (const auto& wi : res.weights) w.push_back(wi.weight);
  res.model_res_final = res.model_res_pretrained;
  res.hist_finetune = finetune_weighted(
      res.model_res_final, res.instances, w, vgroups, cfg.margin(),
      cfg.optim(cfg.epochs_finetune, SeedPhase::finetune));

  phase("evaluate");
  res.metrics_pretrained = evaluate(res.model_res_pretrained, bundle.test);
  res.metrics_final = evaluate(res.model_res_final, bundle.test);

  const double wall =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
  nlohmann::json rep;
  rep["config"] = detail::config_json(cfg);
  rep["phases"] = nlohmann::json::object();
  if (res.model_utte) rep["phases"]["complementary"] = detail::history_json(res.hist_utte);
  rep["phases"]["pretrain"] = detail::history_json(res.hist_pretrain);
  rep["phases"]["finetune"] = detail::history_json(res.hist_finetune);
  rep["weight_stats"] = detail::weight_stats_json(res.weights);
  rep["metrics_pretrained"] = detail::metrics_json(res.metrics_pretrained);
  rep["metrics_final"] = detail::metrics_json(res.metrics_final);
  rep["meta"] = {{"wall_time_sec", wall}};
  res.report = std::move(rep);
  return res;
}

// Alternating prime/dual schedule: both models are pre-trained, then each
// round computes weights for one task from the other task's current model and
// fine-tunes that task's model for one epoch.
inline PipelineResult run_dual(const PipelineConfig& cfg, const CorpusBundle& bundle,
                               const PhaseCallback& on_phase = nullptr,
                               bool mirror_enabled = true) {
  if (cfg.strategy != Strategy::dual)
    throw ConfigError("run_dual: strategy must be dual");
  cfg.validate();
  if (bundle.test.empty()) throw DataError("run_dual: empty test split");
  const auto started = std::chrono::steady_clock::now();
  auto phase = [&](const std::string& p) {
    if (on_phase) on_phase(p);
  };
  PipelineResult res;

  phase("complementary");
  auto comp_train = derive_last_utterance_data(
      detail::positives(bundle.train), phase_seed(cfg.seed, SeedPhase::complementary_data));
  auto comp_valid = derive_last_utterance_data(
      detail::positives(bundle.valid),
      phase_seed(cfg.seed, SeedPhase::complementary_data) + 1);
  Model utte = Model::init(cfg.architecture, Role::last_utterance_selection,
                           cfg.dims, bundle.vocab.size(), bundle.vocab.checksum(),
                           phase_seed(cfg.seed, SeedPhase::complementary_init));
  res.hist_utte = train_cross_entropy(
      utte, comp_train, comp_valid,
      cfg.optim(cfg.epochs_pretrain, SeedPhase::complementary_train));

  phase("pretrain");
  auto res_train = detail::response_task_data(
      bundle.train, phase_seed(cfg.seed, SeedPhase::response_data));
  auto res_valid = detail::response_task_data(
      bundle.valid, phase_seed(cfg.seed, SeedPhase::response_data) + 1);
  res.model_res_pretrained =
      Model::init(cfg.architecture, Role::response_selection, cfg.dims,
                  bundle.vocab.size(), bundle.vocab.checksum(),
                  phase_seed(cfg.seed, SeedPhase::response_init));
  res.hist_pretrain = train_cross_entropy(
      res.model_res_pretrained, res_train, res_valid,
      cfg.optim(cfg.epochs_pretrain, SeedPhase::response_train));

  phase("dual_rounds");
  res.instances = build_pairwise(res_train);
  const auto mirror_instances = build_pairwise(comp_train);
  res.model_res_final = res.model_res_pretrained;

  for (int round = 0; round < cfg.dual_rounds; ++round) {
    WeightConfig wc{Strategy::dual, cfg.epsilon,
                    phase_seed(cfg.seed, SeedPhase::weights) + uint64_t(round)};
    res.weights = compute_weights(wc, res.instances, &utte, &res.model_res_final);
    std::vector<double> w;
    for (const auto& wi : res.weights) w.push_back(wi.weight);
    OptimConfig o = cfg.optim(1, SeedPhase::finetune);
    o.seed += uint64_t(round);
    res.hist_finetune = finetune_weighted(res.model_res_final, res.instances, w,
                                          {}, cfg.margin(), o);
    if (!mirror_enabled) continue;
    const auto mirror_weights = compute_wm_weights(
        mirror_instances, res.model_res_final, Role::response_selection,
        cfg.epsilon,
        phase_seed(cfg.seed, SeedPhase::dual_mirror_weights) + uint64_t(round),
        false);
    std::vector<double> mw;
    for (const auto& wi : mirror_weights) mw.push_back(wi.weight);
    OptimConfig om = cfg.optim(1, SeedPhase::dual_mirror_finetune);
    om.seed += uint64_t(round);
    finetune_weighted(utte, mirror_instances, mw, {}, cfg.margin(), om);
  }
  res.model_utte = std::move(utte);

  phase("evaluate");
  res.metrics_pretrained = evaluate(res.model_res_pretrained, bundle.test);
  res.metrics_final = evaluate(res.model_res_final, bundle.test);

  const double wall =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
  nlohmann::json rep;
  rep["config"] = detail::config_json(cfg);
  rep["phases"] = nlohmann::json::object();
  rep["phases"]["complementary"] = detail::history_json(res.hist_utte);
  rep["phases"]["pretrain"] = detail::history_json(res.hist_pretrain);
  rep["phases"]["finetune"] = detail::history_json(res.hist_finetune);
  rep["weight_stats"] = detail::weight_stats_json(res.weights);
  rep["metrics_pretrained"] = detail::metrics_json(res.metrics_pretrained);
  rep["metrics_final"] = detail::metrics_json(res.metrics_final);
  rep["meta"] = {{"wall_time_sec", wall}};
  res.report = std::move(rep);
  return res;
}

// ---------------------------------------------------------------------------
// Strategy comparison (one pre-trained checkpoint shared across strategies)
// ---------------------------------------------------------------------------

struct CompareRow {
  std::string strategy;
  Metrics metrics;
  std::vector<WeightedInstance> weights;
  nlohmann::json weight_stats;
};

struct CompareResult {
  Metrics pretrained;
  std::vector<TrainingInstance> instances;
  std::vector<CompareRow> rows;
  nlohmann::json table;
  std::string text_table;
};

inline CompareResult run_compare(const PipelineConfig& base,
                                 const std::vector<Strategy>& strategies,
                                 const CorpusBundle& bundle,
                                 const PhaseCallback& on_phase = nullptr) {
  base.validate();
  auto phase = [&](const std::string& p) {
    if (on_phase) on_phase(p);
  };

  const bool need_multi_utte =
      std::any_of(strategies.begin(), strategies.end(), [](Strategy s) {
        return s == Strategy::wm || s == Strategy::dual;
      });
  const bool need_single_utte =
      std::any_of(strategies.begin(), strategies.end(),
                  [](Strategy s) { return s == Strategy::single_turn_wm; });

  auto comp_train = derive_last_utterance_data(
      detail::positives(bundle.train), phase_seed(base.seed, SeedPhase::complementary_data));
  auto comp_valid = derive_last_utterance_data(
      detail::positives(bundle.valid),
      phase_seed(base.seed, SeedPhase::complementary_data) + 1);

  std::optional<Model> utte_multi, utte_single;
  if (need_multi_utte) {
    phase("complementary");
    Model m = Model::init(base.architecture, Role::last_utterance_selection,
                          base.dims, bundle.vocab.size(), bundle.vocab.checksum(),
                          phase_seed(base.seed, SeedPhase::complementary_init));
    train_cross_entropy(m, comp_train, comp_valid,
                        base.optim(base.epochs_pretrain, SeedPhase::complementary_train));
    utte_multi = std::move(m);
  }
  if (need_single_utte) {
    phase("complementary_single_turn");
    auto st_train = comp_train, st_valid = comp_valid;
    detail::strip_contexts(st_train);
    detail::strip_contexts(st_valid);
    Model m = Model::init(base.architecture, Role::last_utterance_selection,
                          base.dims, bundle.vocab.size(), bundle.vocab.checksum(),
                          phase_seed(base.seed, SeedPhase::complementary_init));
    train_cross_entropy(m, st_train, st_valid,
                        base.optim(base.epochs_pretrain, SeedPhase::complementary_train));
    utte_single = std::move(m);
  }

  phase("pretrain");
  auto res_train = detail::response_task_data(
      bundle.train, phase_seed(base.seed, SeedPhase::response_data));
  auto res_valid = detail::response_task_data(
      bundle.valid, phase_seed(base.seed, SeedPhase::response_data) + 1);
  Model pretrained = Model::init(base.architecture, Role::response_selection,
                                 base.dims, bundle.vocab.size(),
                                 bundle.vocab.checksum(),
                                 phase_seed(base.seed, SeedPhase::response_init));
  train_cross_entropy(pretrained, res_train, res_valid,
                      base.optim(base.epochs_pretrain, SeedPhase::response_train));

  const auto instances = build_pairwise(res_train);
  const auto vgroups = detail::make_validation_groups(
      bundle.valid, base.valid_group_negatives,
      phase_seed(base.seed, SeedPhase::valid_groups));

  CompareResult out;
  out.pretrained = evaluate(pretrained, bundle.test);
  out.instances = instances;

  for (Strategy s : strategies) {
    phase("strategy_" + to_string(s));
    PipelineConfig cfg = base;
    cfg.strategy = s;
    if (s == Strategy::dual) {
      // The dual schedule retrains both sides from the shared checkpoints.
      Model utte_copy = *utte_multi;
      Model final_model = pretrained;
      std::vector<WeightedInstance> weights;
      const auto mirror_instances = build_pairwise(comp_train);
      for (int round = 0; round < cfg.dual_rounds; ++round) {
        WeightConfig wc{Strategy::dual, cfg.epsilon,
                        phase_seed(cfg.seed, SeedPhase::weights) + uint64_t(round)};
        weights = compute_weights(wc, instances, &utte_copy, &final_model);
        std::vector<double> w;
        for (const auto& wi : weights) w.push_back(wi.weight);
        OptimConfig o = cfg.optim(1, SeedPhase::finetune);
        o.seed += uint64_t(round);
        finetune_weighted(final_model, instances, w, {}, cfg.margin(), o);
        const auto mirror_weights = compute_wm_weights(
            mirror_instances, final_model, Role::response_selection, cfg.epsilon,
            phase_seed(cfg.seed, SeedPhase::dual_mirror_weights) + uint64_t(round),
            false);
        std::vector<double> mw;
        for (const auto& wi : mirror_weights) mw.push_back(wi.weight);
        OptimConfig om = cfg.optim(1, SeedPhase::dual_mirror_finetune);
        om.seed += uint64_t(round);
        finetune_weighted(utte_copy, mirror_instances, mw, {}, cfg.margin(), om);
      }
      out.rows.push_back({to_string(s), evaluate(final_model, bundle.test), weights,
                          detail::weight_stats_json(weights)});
      continue;
    }
    const Model* utte = s == Strategy::single_turn_wm
                            ? (utte_single ? &*utte_single : nullptr)
                            : (utte_multi ? &*utte_multi : nullptr);
    WeightConfig wc{s, cfg.epsilon, phase_seed(cfg.seed, SeedPhase::weights)};
    const auto weights = compute_weights(wc, instances, utte, &pretrained);
    std::vector<double> w;
    for (const auto& wi : weights) w.push_back(wi.weight);
    Model final_model = pretrained;
    finetune_weighted(final_model, instances, w, vgroups, cfg.margin(),
                      cfg.optim(cfg.epochs_finetune, SeedPhase::finetune));
    out.rows.push_back({to_string(s), evaluate(final_model, bundle.test), weights,
                        detail::weight_stats_json(weights)});
  }

  nlohmann::json table;
  table["config"] = detail::config_json(base);
  table["metrics_pretrained"] = detail::metrics_json(out.pretrained);
  table["rows"] = nlohmann::json::array();
  for (const CompareRow& r : out.rows)
    table["rows"].push_back({{"strategy", r.strategy},
                             {"metrics", detail::metrics_json(r.metrics)},
                             {"weight_stats", r.weight_stats}});
  out.table = std::move(table);

  char buf[160];
  std::string text = "strategy            MAP     MRR     P@1\n";
  std::snprintf(buf, sizeof buf, "%-18s  %.4f  %.4f  %.4f\n", "(pretrained)",
                out.pretrained.map, out.pretrained.mrr, out.pretrained.p_at_1);
  text += buf;
  for (const CompareRow& r : out.rows) {
    std::snprintf(buf, sizeof buf, "%-18s  %.4f  %.4f  %.4f\n", r.strategy.c_str(),
                  r.metrics.map, r.metrics.mrr, r.metrics.p_at_1);
    text += buf;
  }
  out.text_table = std::move(text);
  return out;
}

}  // namespace iwsel
