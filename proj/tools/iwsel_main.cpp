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
// Command-line front end: synthetic data generation, the training phases,
// the end-to-end weighted fine-tuning pipeline, strategy comparison, and
// weight inspection.

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "iwsel/config.hpp"
#include "iwsel/corpus.hpp"
#include "iwsel/evaluation.hpp"
#include "iwsel/matcher.hpp"
#include "iwsel/synth.hpp"
#include "iwsel/training.hpp"
#include "iwsel/weighting.hpp"

namespace fs = std::filesystem;
using namespace iwsel;

namespace {

struct CliArgs {
  std::string config_path;
  std::string data_dir;
  std::string out_dir;
  std::string strategies;
  std::optional<long> seed;
  int k = 5;
};

ExperimentConfig load_cli_config(const CliArgs& args) {
  ExperimentConfig cfg = load_config(args.config_path);
  if (args.seed) {
    cfg.pipeline.seed = uint64_t(*args.seed);
    cfg.synth.seed = phase_seed(cfg.pipeline.seed, SeedPhase::synth);
  }
  return cfg;
}

void ensure_out_dir(const std::string& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw DataError("cannot create output directory: " + dir);
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write file: " + path);
  out << text;
}

void write_json(const std::string& path, const nlohmann::json& j) {
  write_text(path, j.dump(2) + "\n");
}

// Rebuilds exactly the pairwise instances the pipeline trained on, so that a
// weights file can be joined back to its corpus.
std::vector<TrainingInstance> rebuild_instances(const PipelineConfig& cfg,
                                                const CorpusBundle& bundle) {
  auto data = detail::response_task_data(
      bundle.train, phase_seed(cfg.seed, SeedPhase::response_data));
  return build_pairwise(data);
}

int cmd_synth(const CliArgs& args) {
  ExperimentConfig cfg = load_cli_config(args);
  ensure_out_dir(args.out_dir);
  SynthCorpus corpus = generate_synthetic(cfg.synth);
  save_conversations(corpus.train, args.out_dir + "/train.jsonl");
  save_conversations(corpus.valid, args.out_dir + "/valid.jsonl");
  save_eval_groups(corpus.test, args.out_dir + "/test.jsonl");
  int planted = 0, negatives = 0;
  for (const Conversation& c : corpus.train)
    if (c.label == 0) {
      ++negatives;
      if (c.noise_flag && *c.noise_flag) ++planted;
    }
  std::cout << "wrote " << corpus.train.size() << " train / " << corpus.valid.size()
            << " valid records, " << corpus.test.size() << " test groups to "
            << args.out_dir << "\n"
            << "planted false negatives: " << planted << "/" << negatives << "\n";
  return 0;
}

int cmd_train_complementary(const CliArgs& args) {
  ExperimentConfig cfg = load_cli_config(args);
  const PipelineConfig& p = cfg.pipeline;
  CorpusBundle bundle = load_bundle(args.data_dir, p);
  ensure_out_dir(args.out_dir);
  save_vocab(bundle.vocab, args.out_dir + "/vocab.txt");

  auto train = derive_last_utterance_data(
      detail::positives(bundle.train), phase_seed(p.seed, SeedPhase::complementary_data));
  auto valid = derive_last_utterance_data(
      detail::positives(bundle.valid),
      phase_seed(p.seed, SeedPhase::complementary_data) + 1);
  if (p.strategy == Strategy::single_turn_wm) {
    detail::strip_contexts(train);
    detail::strip_contexts(valid);
  }
  Model m = Model::init(p.architecture, Role::last_utterance_selection, p.dims,
                        bundle.vocab.size(), bundle.vocab.checksum(),
                        phase_seed(p.seed, SeedPhase::complementary_init));
  TrainHistory h = train_cross_entropy(
      m, train, valid, p.optim(p.epochs_pretrain, SeedPhase::complementary_train));
  m.save(args.out_dir + "/model_utte.ckpt");
  write_json(args.out_dir + "/history_complementary.json", detail::history_json(h));
  std::cout << "complementary model trained (" << h.epochs_run
            << " epochs, best epoch " << h.best_epoch << ")\n";
  return 0;
}

int cmd_pretrain(const CliArgs& args) {
  ExperimentConfig cfg = load_cli_config(args);
  const PipelineConfig& p = cfg.pipeline;
  CorpusBundle bundle = load_bundle(args.data_dir, p);
  ensure_out_dir(args.out_dir);
  save_vocab(bundle.vocab, args.out_dir + "/vocab.txt");

  auto train = detail::response_task_data(bundle.train,
                                          phase_seed(p.seed, SeedPhase::response_data));
  auto valid = detail::response_task_data(
      bundle.valid, phase_seed(p.seed, SeedPhase::response_data) + 1);
  Model m = Model::init(p.architecture, Role::response_selection, p.dims,
                        bundle.vocab.size(), bundle.vocab.checksum(),
                        phase_seed(p.seed, SeedPhase::response_init));
  TrainHistory h = train_cross_entropy(
      m, train, valid, p.optim(p.epochs_pretrain, SeedPhase::response_train));
  m.save(args.out_dir + "/model_res_pretrained.ckpt");
  write_json(args.out_dir + "/history_pretrain.json", detail::history_json(h));
  std::cout << "response model pre-trained (" << h.epochs_run << " epochs, best epoch "
            << h.best_epoch << ")\n";
  return 0;
}

int cmd_weigh(const CliArgs& args) {
  ExperimentConfig cfg = load_cli_config(args);
  const PipelineConfig& p = cfg.pipeline;
  CorpusBundle bundle = load_bundle(args.data_dir, p);
  ensure_out_dir(args.out_dir);

  const auto instances = rebuild_instances(p, bundle);
  std::optional<Model> utte, res;
  if (p.needs_complementary_model())
    utte = Model::load(args.out_dir + "/model_utte.ckpt", bundle.vocab);
  if (p.strategy == Strategy::embedding || p.strategy == Strategy::response_model)
    res = Model::load(args.out_dir + "/model_res_pretrained.ckpt", bundle.vocab);

  WeightConfig wc{p.strategy, p.epsilon, phase_seed(p.seed, SeedPhase::weights)};
  const auto weights = compute_weights(wc, instances, utte ? &*utte : nullptr,
                                       res ? &*res : nullptr);
  save_weights(weights, args.out_dir + "/weights.jsonl");
  std::cout << "computed " << weights.size() << " instance weights ("
            << to_string(p.strategy) << ")\n";
  return 0;
}

int cmd_finetune(const CliArgs& args) {
  ExperimentConfig cfg = load_cli_config(args);
  const PipelineConfig& p = cfg.pipeline;
  CorpusBundle bundle = load_bundle(args.data_dir, p);
  ensure_out_dir(args.out_dir);

  Model m = Model::load(args.out_dir + "/model_res_pretrained.ckpt", bundle.vocab);
  const auto instances = rebuild_instances(p, bundle);
  const auto weight_rows = load_weights(args.out_dir + "/weights.jsonl");
  if (weight_rows.size() != instances.size())
    throw DataError("weights file does not align with corpus instances");
  std::vector<double> w;
  w.reserve(weight_rows.size());
  for (const auto& r : weight_rows) w.push_back(r.weight);

  const auto vgroups = detail::make_validation_groups(
      bundle.valid, p.valid_group_negatives, phase_seed(p.seed, SeedPhase::valid_groups));
  TrainHistory h =
      finetune_weighted(m, instances, w, vgroups, p.margin(),
                        p.optim(p.epochs_finetune, SeedPhase::finetune));
  m.save(args.out_dir + "/model_res_final.ckpt");
  write_json(args.out_dir + "/history_finetune.json", detail::history_json(h));
  std::cout << "fine-tuned (" << h.epochs_run << " epochs, best epoch "
            << h.best_epoch << ")\n";
  return 0;
}

int cmd_evaluate(const CliArgs& args) {
  ExperimentConfig cfg = load_cli_config(args);
  CorpusBundle bundle = load_bundle(args.data_dir, cfg.pipeline);
  const std::string final_path = args.out_dir + "/model_res_final.ckpt";
  const std::string pre_path = args.out_dir + "/model_res_pretrained.ckpt";
  const std::string path = fs::exists(final_path) ? final_path : pre_path;
  Model m = Model::load(path, bundle.vocab);
  const Metrics metrics = evaluate(m, bundle.test);
  nlohmann::json j = detail::metrics_json(metrics);
  j["checkpoint"] = path;
  ensure_out_dir(args.out_dir);
  write_json(args.out_dir + "/metrics.json", j);
  std::cout << j.dump(2) << "\n";
  return 0;
}

int cmd_pipeline(const CliArgs& args) {
  ExperimentConfig cfg = load_cli_config(args);
  const PipelineConfig& p = cfg.pipeline;
  CorpusBundle bundle = load_bundle(args.data_dir, p);
  ensure_out_dir(args.out_dir);

  std::string current_phase = "setup";
  auto on_phase = [&](const std::string& phase) {
    current_phase = phase;
    std::cout << "[phase] " << phase << "\n";
  };
  try {
    PipelineResult res = p.strategy == Strategy::dual
                             ? run_dual(p, bundle, on_phase)
                             : run_pipeline(p, bundle, on_phase);
    save_vocab(bundle.vocab, args.out_dir + "/vocab.txt");
    if (res.model_utte) res.model_utte->save(args.out_dir + "/model_utte.ckpt");
    res.model_res_pretrained.save(args.out_dir + "/model_res_pretrained.ckpt");
    res.model_res_final.save(args.out_dir + "/model_res_final.ckpt");
    save_weights(res.weights, args.out_dir + "/weights.jsonl");
    write_json(args.out_dir + "/report.json", res.report);
    std::cout << "pretrained  MAP " << res.metrics_pretrained.map << "  MRR "
              << res.metrics_pretrained.mrr << "  P@1 "
              << res.metrics_pretrained.p_at_1 << "\n"
              << "final       MAP " << res.metrics_final.map << "  MRR "
              << res.metrics_final.mrr << "  P@1 " << res.metrics_final.p_at_1
              << "\n"
              << "report: " << args.out_dir << "/report.json\n";
    return 0;
  } catch (...) {
    // Keep whatever phase artifacts exist and mark where the run stopped.
    write_text(args.out_dir + "/failed_phase.txt", current_phase + "\n");
    throw;
  }
}

int cmd_compare(const CliArgs& args) {
  ExperimentConfig cfg = load_cli_config(args);
  const PipelineConfig& p = cfg.pipeline;
  if (args.strategies.empty()) throw ConfigError("compare: --strategy is required");
  std::vector<Strategy> strategies;
  std::stringstream ss(args.strategies);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (!item.empty()) strategies.push_back(strategy_from_string(item));
  }
  if (strategies.empty()) throw ConfigError("compare: no strategies given");

  CorpusBundle bundle = load_bundle(args.data_dir, p);
  ensure_out_dir(args.out_dir);
  CompareResult res = run_compare(
      p, strategies, bundle,
      [](const std::string& phase) { std::cout << "[phase] " << phase << "\n"; });
  write_json(args.out_dir + "/compare.json", res.table);
  write_text(args.out_dir + "/compare.txt", res.text_table);
  std::cout << res.text_table;
  return 0;
}

void print_instance(const TrainingInstance& t, const WeightedInstance& w) {
  std::cout << "--- instance " << w.instance_index << "  weight " << w.weight;
  if (w.delta_pos) std::cout << "  delta_pos " << *w.delta_pos;
  if (w.delta_neg) std::cout << "  delta_neg " << *w.delta_neg;
  if (t.noise_flag)
    std::cout << "  noise_flag " << (*t.noise_flag ? "true" : "false");
  std::cout << "\n";
  for (size_t i = 0; i < t.context_texts.size(); ++i)
    std::cout << "  turn " << i + 1 << ": " << t.context_texts[i] << "\n";
  std::cout << "  last utterance: " << t.q_text << "\n"
            << "  positive: " << t.pos_text << "\n"
            << "  negative: " << t.neg_text << "\n";
}

int cmd_inspect_weights(const CliArgs& args) {
  ExperimentConfig cfg = load_cli_config(args);
  CorpusBundle bundle = load_bundle(args.data_dir, cfg.pipeline);
  const auto instances = rebuild_instances(cfg.pipeline, bundle);
  const auto weights = load_weights(args.out_dir + "/weights.jsonl");
  if (weights.size() != instances.size())
    throw DataError("weights file does not align with corpus instances (" +
                    std::to_string(weights.size()) + " vs " +
                    std::to_string(instances.size()) + ")");

  std::vector<size_t> order(weights.size());
  std::iota(order.begin(), order.end(), size_t(0));
  std::stable_sort(order.begin(), order.end(), [&](size_t a, size_t b) {
    return weights[a].weight < weights[b].weight;
  });
  const size_t k = std::min<size_t>(size_t(std::max(args.k, 0)), weights.size());

  std::cout << "=== " << k << " lowest-weight instances ===\n";
  for (size_t i = 0; i < k; ++i)
    print_instance(instances[order[i]], weights[order[i]]);
  std::cout << "=== " << k << " highest-weight instances ===\n";
  for (size_t i = 0; i < k; ++i) {
    const size_t idx = order[order.size() - 1 - i];
    print_instance(instances[idx], weights[idx]);
  }

  // Planted-noise summary when the corpus carries flags.
  size_t flagged = 0, total_flagged_known = 0;
  for (const auto& t : instances)
    if (t.noise_flag) {
      ++total_flagged_known;
      if (*t.noise_flag) ++flagged;
    }
  if (total_flagged_known > 0 && k > 0) {
    size_t low_flagged = 0, low_known = 0;
    for (size_t i = 0; i < k; ++i) {
      const auto& t = instances[order[i]];
      if (t.noise_flag) {
        ++low_known;
        if (*t.noise_flag) ++low_flagged;
      }
    }
    std::cout << "planted false-negative rate: corpus "
              << double(flagged) / double(total_flagged_known) << ", lowest-" << k
              << " bucket "
              << (low_known ? double(low_flagged) / double(low_known) : 0.0) << "\n";
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"instance-weighted multi-turn response selection"};
  app.require_subcommand(1);

  CliArgs args;
  auto add_common = [&](CLI::App* sub, bool need_data) {
    sub->add_option("--config", args.config_path, "experiment config file")
        ->required();
    if (need_data)
      sub->add_option("--data", args.data_dir, "corpus directory")->required();
    sub->add_option("--out", args.out_dir, "output directory")->required();
    sub->add_option("--seed", args.seed, "override the config seed");
  };

  add_common(app.add_subcommand("synth", "generate a synthetic noisy corpus"), false);
  add_common(app.add_subcommand("train-complementary",
                                "train the last-utterance selection model"),
             true);
  add_common(app.add_subcommand("pretrain", "pre-train the response model"), true);
  add_common(app.add_subcommand("weigh", "compute instance weights"), true);
  add_common(app.add_subcommand("finetune", "weighted margin fine-tuning"), true);
  add_common(app.add_subcommand("evaluate", "evaluate a checkpoint on the test split"),
             true);
  add_common(app.add_subcommand("pipeline", "run the full training pipeline"), true);
  CLI::App* compare =
      app.add_subcommand("compare", "compare weighting strategies");
  add_common(compare, true);
  compare->add_option("--strategy", args.strategies,
                      "comma-separated strategy list")
      ->required();
  CLI::App* inspect =
      app.add_subcommand("inspect-weights", "show extreme-weight instances");
  add_common(inspect, true);
  inspect->add_option("--k", args.k, "instances per end");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_name() == "CallForHelp" || e.get_name() == "CallForAllHelp")
      return app.exit(e);
    std::cerr << e.what() << "\n";
    return 1;
  }

  try {
    if (app.got_subcommand("synth")) return cmd_synth(args);
    if (app.got_subcommand("train-complementary")) return cmd_train_complementary(args);
    if (app.got_subcommand("pretrain")) return cmd_pretrain(args);
    if (app.got_subcommand("weigh")) return cmd_weigh(args);
    if (app.got_subcommand("finetune")) return cmd_finetune(args);
    if (app.got_subcommand("evaluate")) return cmd_evaluate(args);
    if (app.got_subcommand("pipeline")) return cmd_pipeline(args);
    if (app.got_subcommand("compare")) return cmd_compare(args);
    if (app.got_subcommand("inspect-weights")) return cmd_inspect_weights(args);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 1;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return 2;
  } catch (const TrainError& e) {
    std::cerr << "training aborted: " << e.what() << "\n";
    return 3;
  }
  return 1;
}
