#pragma once

// End-to-end run on the bundled desk corpus: synthesize, split, train the
// contrastive phase, evaluate, align on rule-generated preferences, evaluate
// again. Shared by the CLI and the acceptance binary.

#include <chrono>
#include <functional>
#include <optional>
#include <string>

#include "clusters.hpp"
#include "config.hpp"
#include "desk.hpp"
#include "evaluation.hpp"
#include "index.hpp"
#include "synthesis.hpp"
#include "trainer.hpp"

namespace fsearch::desk {

struct PipelineConfig {
  std::uint64_t seed = 7;
  double test_fraction = 0.2;
  std::size_t contrastive_epochs = 6;
  double contrastive_lr_multiplier = 100.0;
  double train_augment_rate = 0.2;
  std::size_t align_epochs = 20;
  double align_lr_multiplier = 5.0;
  std::size_t preference_count = 200;
  bool run_align = true;
  std::string timestamp;  // empty -> current UTC time
  ObjectiveConfig objective;

  /// Reads the optional [desk] section.
  static PipelineConfig from_config(const Config& c) {
    PipelineConfig p;
    p.seed = static_cast<std::uint64_t>(c.get_int("desk", "seed", static_cast<std::int64_t>(p.seed)));
    p.test_fraction = c.get_double("desk", "test_fraction", p.test_fraction);
    p.contrastive_epochs = static_cast<std::size_t>(
        c.get_int("desk", "contrastive_epochs", static_cast<std::int64_t>(p.contrastive_epochs)));
    p.contrastive_lr_multiplier = c.get_double("desk", "contrastive_lr_multiplier", p.contrastive_lr_multiplier);
    p.train_augment_rate = c.get_double("desk", "train_augment_rate", p.train_augment_rate);
    p.align_epochs =
        static_cast<std::size_t>(c.get_int("desk", "align_epochs", static_cast<std::int64_t>(p.align_epochs)));
    p.align_lr_multiplier = c.get_double("desk", "align_lr_multiplier", p.align_lr_multiplier);
    p.preference_count = static_cast<std::size_t>(
        c.get_int("desk", "preference_count", static_cast<std::int64_t>(p.preference_count)));
    p.run_align = c.get_bool("desk", "run_align", p.run_align);
    p.timestamp = c.get_string("desk", "timestamp", p.timestamp);
    p.objective.temperature = c.get_double("objective", "temperature", p.objective.temperature);
    p.objective.dpo_beta = c.get_double("objective", "dpo_beta", p.objective.dpo_beta);
    p.objective.joint_lambda = c.get_double("objective", "joint_lambda", p.objective.joint_lambda);
    return p;
  }
};

struct PipelineResult {
  SynthesisOutput synthesis;
  DatasetSplit split;
  EvalReport before_training;
  TrainResult contrastive;
  EvalReport after_contrastive;
  double contrastive_seconds = 0.0;
  std::optional<AlignResult> align;
  std::optional<EvalReport> after_align;
  double align_seconds = 0.0;
};

/// Optional run directories; each phase writes its own layout when set.
struct PipelineDirs {
  std::optional<RunDir> contrastive;
  std::optional<RunDir> align;
};

inline PipelineResult run_pipeline(const PipelineConfig& cfg, const PipelineDirs& dirs = {},
                                   const std::function<void(const std::string&)>& progress = {}) {
  using clock = std::chrono::steady_clock;
  auto say = [&](const std::string& m) {
    if (progress) progress(m);
  };
  PipelineResult r;
  const auto data = make_dataset(cfg.seed);
  DeskGenerator client(cfg.seed, data.transitions, &data.corpus);
  const Generator gen(client);
  r.synthesis = synthesize_dataset<HashedEncoder>(data.corpus, default_clusters(), data.transitions, gen, nullptr);
  r.split = split_queries(r.synthesis.queries, cfg.test_fraction, cfg.seed);
  say("synthesized " + std::to_string(r.synthesis.queries.size()) + " queries; " +
      std::to_string(r.split.train.size()) + " train / " + std::to_string(r.split.test.size()) + " test");

  const auto& corpus = r.synthesis.corpus;
  std::vector<std::string> texts;
  for (const auto& s : corpus.statements()) texts.push_back(s.statement_text);
  for (const auto& q : r.split.train) texts.push_back(q.text);
  const Vocab vocab = Vocab::from_texts(texts);

  EncoderConfig ecfg;
  ecfg.seed = cfg.seed;
  SamplingConfig scfg;
  scfg.vocab = &vocab;
  scfg.augment_rate = cfg.train_augment_rate;
  TrainConfig tcfg;
  tcfg.epochs = cfg.contrastive_epochs;
  tcfg.lr_multiplier = cfg.contrastive_lr_multiplier;
  tcfg.seed = cfg.seed;
  EvalConfig ev;
  ev.vocab = &vocab;
  ev.seed = cfg.seed;
  ev.timestamp = cfg.timestamp;

  auto eval_with = [&](const EncoderParams& p, const std::string& run_id) {
    const HashedEncoder enc(p);
    ev.run_id = run_id;
    return evaluate(build_index(corpus, enc), enc, std::span<const QueryRecord>(r.split.test), ev);
  };
  r.before_training = eval_with(EncoderParams::random(ecfg), "desk-untrained");

  const auto t0 = clock::now();
  r.contrastive = train_contrastive(r.split.train, corpus, ecfg, scfg, cfg.objective, tcfg, dirs.contrastive);
  r.contrastive_seconds = std::chrono::duration<double>(clock::now() - t0).count();
  r.after_contrastive = eval_with(r.contrastive.checkpoint.params, "desk-contrastive");
  say("contrastive phase: " + std::to_string(r.contrastive.schedule.total) + " steps in " +
      format_fixed(r.contrastive_seconds, 1) + " s");

  if (!cfg.run_align) return r;
  const auto prefs = make_preferences(cfg.preference_count, cfg.seed, "train");
  const auto held = make_preferences(cfg.preference_count, cfg.seed, "heldout");
  TrainConfig acfg = tcfg;
  acfg.phase = TrainPhase::align;
  acfg.epochs = cfg.align_epochs;
  acfg.lr_multiplier = cfg.align_lr_multiplier;
  const auto t1 = clock::now();
  r.align = train_align(prefs, held, r.split.train, corpus, r.contrastive.checkpoint, scfg, cfg.objective, acfg,
                        dirs.align);
  r.align_seconds = std::chrono::duration<double>(clock::now() - t1).count();
  r.after_align = eval_with(r.align->train.checkpoint.params, "desk-aligned");
  say("align phase: satisfaction " + format_fixed(r.align->satisfaction_before, 3) + " -> " +
      format_fixed(r.align->satisfaction_after, 3) + " in " + format_fixed(r.align_seconds, 1) + " s");
  return r;
}

}  // namespace fsearch::desk
