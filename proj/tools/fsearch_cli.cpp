// fsearch: command-line driver for every pipeline stage.
//
//   fsearch [--config FILE] [--seed N] [--out-dir DIR] <subcommand> [options]
//
// Each subcommand reads its own config section; flags are written back into
// that section before anything runs, so the saved config reflects what ran.
// Exit codes: 0 ok, 1 data or runtime error, 2 usage or config error.

#include <csignal>
#include <filesystem>
#include <functional>
#include <iostream>
#include <memory>
#include <sstream>

#include <CLI11.hpp>

#include "fsearch/desk_pipeline.hpp"
#include "fsearch/fsearch.hpp"
#include "fsearch/http_generator.hpp"
#include "fsearch/service.hpp"

namespace fs = std::filesystem;
using namespace fsearch;

namespace {

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

constexpr std::int64_t kDefaultSeed = 7;

struct Ctx {
  Config cfg;
  fs::path out;

  std::uint64_t seed(const std::string& sec) const {
    return static_cast<std::uint64_t>(cfg.get_int(sec, "seed", cfg.get_int("", "seed", kDefaultSeed)));
  }
  std::string str(const std::string& sec, const std::string& key, const std::string& fallback) const {
    return cfg.get_string(sec, key, fallback);
  }
  std::size_t size(const std::string& sec, const std::string& key, std::size_t fallback) const {
    const auto v = cfg.get_int(sec, key, static_cast<std::int64_t>(fallback));
    if (v < 0) throw Error(ErrorCode::ConfigError, sec + "." + key, "must be non-negative");
    return static_cast<std::size_t>(v);
  }
  double num(const std::string& sec, const std::string& key, double fallback) const {
    return cfg.get_double(sec, key, fallback);
  }

  /// An input path: the configured value, else `fallback` under the run
  /// directory. Missing inputs are usage errors.
  std::string input(const std::string& sec, const std::string& key, const fs::path& fallback) const {
    const std::string p = cfg.has(sec, key) ? cfg.get_string(sec, key) : (out / fallback).string();
    if (!fs::exists(p))
      throw UsageError("missing input " + p + " (set " + sec + "." + key + " or --" + dashed(key) + ")");
    return p;
  }
  std::optional<std::string> optional_input(const std::string& sec, const std::string& key,
                                            const fs::path& fallback) const {
    if (cfg.has(sec, key)) return input(sec, key, fallback);
    const auto p = out / fallback;
    return fs::exists(p) ? std::optional(p.string()) : std::nullopt;
  }
  /// The informalized corpus when `synthesize` has run, else the ingested one.
  std::string corpus(const std::string& sec) const {
    const auto informal = out / "corpus.informalized.jsonl";
    return input(sec, "corpus", fs::exists(informal) ? fs::path("corpus.informalized.jsonl") : "corpus.jsonl");
  }
  EncoderConfig encoder_config(std::uint64_t s) const {
    EncoderConfig e;
    e.feature_dim = static_cast<std::uint32_t>(size("encoder", "feature_dim", e.feature_dim));
    e.embed_dim = static_cast<std::uint32_t>(size("encoder", "embed_dim", e.embed_dim));
    e.ngram_min = static_cast<int>(cfg.get_int("encoder", "ngram_min", e.ngram_min));
    e.ngram_max = static_cast<int>(cfg.get_int("encoder", "ngram_max", e.ngram_max));
    e.word_unigrams = cfg.get_bool("encoder", "word_unigrams", e.word_unigrams);
    e.seed = s;
    e.validate();
    return e;
  }
  ObjectiveConfig objective() const {
    ObjectiveConfig o;
    o.temperature = num("objective", "temperature", o.temperature);
    o.dpo_beta = num("objective", "dpo_beta", o.dpo_beta);
    o.joint_lambda = num("objective", "joint_lambda", o.joint_lambda);
    return o;
  }

  static std::string dashed(std::string s) {
    std::replace(s.begin(), s.end(), '_', '-');
    return s;
  }
};

void write_out(const fs::path& p, std::string_view content) {
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  write_file(p.string(), content);
}

std::string percent_row(std::string_view name, std::size_t n, std::size_t total) {
  char buf[96];
  const double share = total ? static_cast<double>(n) / static_cast<double>(total) : 0.0;
  std::snprintf(buf, sizeof buf, "  %-24s %7zu %7s%%\n", std::string(name).c_str(), n,
                format_percent(share).c_str());
  return buf;
}

std::vector<std::size_t> parse_ks(const std::string& s) {
  std::vector<std::size_t> ks;
  std::stringstream in(s);
  std::string item;
  while (std::getline(in, item, ',')) {
    const auto t = trim(item);
    std::size_t used = 0;
    unsigned long v = 0;
    try {
      v = std::stoul(t, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used != t.size() || v == 0) throw Error(ErrorCode::ConfigError, "ks", "bad entry '" + t + "'");
    ks.push_back(v);
  }
  if (ks.empty()) throw Error(ErrorCode::ConfigError, "ks", "empty");
  return ks;
}

/// Highest step-N.bin under a run directory's checkpoints/.
std::string latest_checkpoint(const fs::path& run) {
  const auto dir = run / "checkpoints";
  if (!fs::is_directory(dir)) throw UsageError("no checkpoints under " + run.string());
  std::optional<std::pair<std::uint64_t, fs::path>> best;
  for (const auto& e : fs::directory_iterator(dir)) {
    const auto name = e.path().filename().string();
    if (name.rfind("step-", 0) != 0 || e.path().extension() != ".bin") continue;
    const auto n = std::stoull(name.substr(5, name.size() - 9));
    if (!best || n > best->first) best = {n, e.path()};
  }
  if (!best) throw UsageError("no checkpoints under " + run.string());
  return best->second.string();
}

Vocab load_vocab(const Ctx& c, const std::string& sec) {
  const auto v = Vocab::load(c.input(sec, "vocab", "vocab.txt"));
  if (v.empty()) throw Error(ErrorCode::EmptyVocab, "vocab");
  return v;
}

/// Generator backends shared by `synthesize` and `export-preferences`.
struct ClientHolder {
  std::unique_ptr<GeneratorClient> inner;
  std::unique_ptr<RecordingClient> recorder;
};

ClientHolder make_client(const Ctx& c, const std::string& sec, const Corpus& corpus,
                         const std::vector<ProofTransition>& transitions) {
  ClientHolder h;
  const auto kind = c.str(sec, "generator", "desk");
  if (kind == "desk") {
    h.inner = std::make_unique<desk::DeskGenerator>(c.seed(sec), transitions, &corpus);
  } else if (kind == "replay") {
    h.inner = std::make_unique<ReplayClient>(ReplayClient::load(c.input(sec, "replay", "transcript.jsonl")));
  } else if (kind == "http") {
    if (!c.cfg.has(sec, "endpoint")) throw UsageError(sec + ": generator http needs --endpoint");
    h.inner = std::make_unique<HttpGeneratorClient>(c.str(sec, "endpoint", ""),
                                                    c.str(sec, "endpoint_path", "/v1/generate"));
  } else {
    throw Error(ErrorCode::ConfigError, sec + ".generator", "expected desk, replay or http, got '" + kind + "'");
  }
  h.recorder = std::make_unique<RecordingClient>(*h.inner);
  return h;
}

TemplateStore templates(const Ctx& c, const std::string& sec) {
  if (!c.cfg.has(sec, "prompts")) return {};
  return TemplateStore::load_dir(c.input(sec, "prompts", "prompts"));
}

// ---- subcommands ---------------------------------------------------------

int cmd_ingest(Ctx& c) {
  const std::string sec = "ingest";
  Corpus corpus;
  std::vector<ProofTransition> transitions;
  if (c.cfg.get_bool(sec, "desk", false)) {
    auto d = desk::make_dataset(c.seed(sec));
    corpus = std::move(d.corpus);
    transitions = std::move(d.transitions);
  } else {
    if (!c.cfg.has(sec, "corpus")) throw UsageError("ingest needs --corpus FILE or --desk");
    corpus = ingest_corpus(c.input(sec, "corpus", ""));
    if (c.cfg.has(sec, "transitions")) transitions = load_transitions(c.input(sec, "transitions", ""));
  }
  for (const auto& t : transitions)
    for (const auto& p : t.premises_used)
      if (!corpus.contains(p)) throw Error(ErrorCode::UnresolvedGold, p, "premise in " + t.trajectory_id);
  write_out(c.out / "corpus.jsonl", corpus.to_jsonl());
  if (!transitions.empty()) write_out(c.out / "transitions.jsonl", transitions_to_jsonl(transitions));
  std::cout << "ingested " << corpus.size() << " statements, " << transitions.size() << " transitions into "
            << c.out.string() << "\n";
  return 0;
}

int cmd_synthesize(Ctx& c) {
  const std::string sec = "synthesize";
  const auto corpus = ingest_corpus(c.input(sec, "corpus", "corpus.jsonl"));
  std::vector<ProofTransition> transitions;
  if (auto p = c.optional_input(sec, "transitions", "transitions.jsonl")) transitions = load_transitions(*p);
  const auto clusters = c.cfg.has(sec, "clusters") ? load_clusters(c.input(sec, "clusters", "")) : default_clusters();
  auto client = make_client(c, sec, corpus, transitions);
  const Generator gen(*client.recorder, templates(c, sec));

  SynthesisOptions opt;
  opt.informalize = c.cfg.get_bool(sec, "informalize", opt.informalize);
  opt.synthetic_queries = c.cfg.get_bool(sec, "synthetic_queries", opt.synthetic_queries);
  opt.informalized_queries = c.cfg.get_bool(sec, "informalized_queries", opt.informalized_queries);
  opt.formal_queries = c.cfg.get_bool(sec, "formal_queries", opt.formal_queries);
  const auto out = synthesize_dataset<HashedEncoder>(corpus, clusters, transitions, gen, nullptr, opt);
  const double test_fraction = c.num(sec, "test_fraction", 0.2);
  if (!(test_fraction >= 0.0 && test_fraction < 1.0))
    throw Error(ErrorCode::ConfigError, "test_fraction", "must be in [0, 1)");
  const auto split = split_queries(out.queries, test_fraction, c.seed(sec));

  write_out(c.out / "corpus.informalized.jsonl", out.corpus.to_jsonl());
  write_out(c.out / "queries.jsonl", queries_to_jsonl(out.queries));
  write_out(c.out / "train.jsonl", queries_to_jsonl(split.train));
  write_out(c.out / "test.jsonl", queries_to_jsonl(split.test));
  write_out(c.out / "transcript.jsonl", client.recorder->transcript_jsonl());
  nlohmann::ordered_json st;
  st["statements"] = out.stats.statements;
  st["assigned"] = out.stats.assigned;
  st["leaked"] = out.stats.leaked;
  st["transitions"] = out.stats.transitions;
  st["transitions_leaked"] = out.stats.transitions_leaked;
  st["cluster_histogram"] = out.stats.cluster_histogram;
  st["queries"] = out.queries.size();
  st["train"] = split.train.size();
  st["test"] = split.test.size();
  write_out(c.out / "synthesis.json", st.dump(2) + "\n");
  std::cout << "synthesized " << out.queries.size() << " queries (" << split.train.size() << " train, "
            << split.test.size() << " test); " << out.stats.leaked << " dropped for leaking the answer\n";
  return 0;
}

int cmd_vocab(Ctx& c) {
  const std::string sec = "vocab";
  const auto corpus = ingest_corpus(c.corpus(sec));
  std::vector<std::string> texts;
  for (const auto& s : corpus.statements()) texts.push_back(s.statement_text);
  if (auto p = c.optional_input(sec, "queries", "train.jsonl"))
    for (const auto& q : load_queries(*p, corpus)) texts.push_back(q.text);
  const auto vocab = Vocab::from_texts(texts);
  if (vocab.empty()) throw Error(ErrorCode::EmptyVocab, "corpus");
  const auto path = c.out / "vocab.txt";
  fs::create_directories(c.out);
  vocab.save(path.string());
  std::cout << "wrote " << vocab.size() << " tokens to " << path.string() << "\n";
  return 0;
}

SamplingConfig sampling(const Ctx& c, const std::string& sec, const Vocab* vocab, double augment_default) {
  SamplingConfig s;
  s.group_size = c.size(sec, "group_size", s.group_size);
  s.batch_size = c.size(sec, "batch_size", s.batch_size);
  s.augment_rate = c.num(sec, "augment_rate", augment_default);
  s.vocab = vocab;
  s.seed = c.seed(sec);
  return s;
}

TrainConfig train_config(const Ctx& c, const std::string& sec, std::size_t epochs, double mult) {
  TrainConfig t;
  t.learning_rate = c.num(sec, "learning_rate", t.learning_rate);
  t.lr_multiplier = c.num(sec, "lr_multiplier", mult);
  t.epochs = c.size(sec, "epochs", epochs);
  t.grad_accum = c.size(sec, "grad_accum", t.grad_accum);
  t.seed = c.seed(sec);
  if (c.cfg.has(sec, "warmup_steps")) t.warmup_steps = c.size(sec, "warmup_steps", 0);
  if (c.cfg.has(sec, "max_steps")) t.max_steps = c.size(sec, "max_steps", 0);
  t.checkpoint_every = c.size(sec, "checkpoint_every", 0);
  t.preference_batch_size = c.size(sec, "preference_batch_size", t.preference_batch_size);
  return t;
}

/// Hash of the effective config minus keys that only control where a run
/// stops, so a resumed run matches the run that wrote the checkpoint.
std::uint64_t resumable_hash(Config cfg, const std::string& sec) {
  for (const char* k : {"max_steps", "checkpoint_every", "resume", "run_dir"}) cfg.set(sec, k, std::string());
  return cfg.hash();
}

int cmd_train(Ctx& c) {
  const std::string sec = "train";
  const desk::PipelineConfig d;
  const auto corpus = ingest_corpus(c.corpus(sec));
  const auto queries = load_queries(c.input(sec, "queries", "train.jsonl"), corpus);
  const auto vocab = load_vocab(c, sec);
  const auto scfg = sampling(c, sec, &vocab, d.train_augment_rate);
  const auto tcfg = train_config(c, sec, d.contrastive_epochs, d.contrastive_lr_multiplier);
  const auto ecfg = c.encoder_config(c.seed(sec));
  const auto hash = resumable_hash(c.cfg, sec);

  std::optional<Checkpoint> resume;
  if (c.cfg.has(sec, "resume")) {
    resume = Checkpoint::load(c.input(sec, "resume", ""));
    if (resume->config_hash != hash)
      throw Error(ErrorCode::ConfigError, "resume",
                  "checkpoint config " + hex64(resume->config_hash) + " differs from " + hex64(hash));
  }
  const RunDir run(c.out / c.str(sec, "run_dir", "train"));
  write_file(run.config().string(), c.cfg.dump());
  const auto r = train_contrastive(queries, corpus, ecfg, scfg, c.objective(), tcfg, run, std::move(resume), hash);
  std::cout << "trained " << r.checkpoint.step << "/" << r.schedule.total << " steps";
  if (!r.losses.empty()) std::cout << ", loss " << format_fixed(r.losses.back().loss, 4);
  std::cout << "; encoder " << hex64(r.checkpoint.checksum()) << " in " << run.root.string() << "\n";
  return 0;
}

int cmd_align(Ctx& c) {
  const std::string sec = "align";
  const desk::PipelineConfig d;
  const auto corpus = ingest_corpus(c.corpus(sec));
  const auto queries = load_queries(c.input(sec, "queries", "train.jsonl"), corpus);
  const auto vocab = load_vocab(c, sec);
  const auto scfg = sampling(c, sec, &vocab, d.train_augment_rate);
  auto tcfg = train_config(c, sec, d.align_epochs, d.align_lr_multiplier);
  tcfg.phase = TrainPhase::align;

  const std::string start_path =
      c.cfg.has(sec, "checkpoint") ? c.input(sec, "checkpoint", "") : latest_checkpoint(c.out / "train");
  const auto start = Checkpoint::load(start_path);

  std::vector<PreferenceTriplet> prefs, held;
  if (c.cfg.get_bool(sec, "desk_preferences", false)) {
    const auto n = c.size(sec, "preference_count", d.preference_count);
    prefs = desk::make_preferences(n, c.seed(sec), "train");
    held = desk::make_preferences(n, c.seed(sec), "heldout");
  } else {
    const auto set = PreferenceSet::load(c.input(sec, "preferences", "preferences.jsonl"));
    set.validate(corpus);
    prefs = set.triplets();
    if (auto h = c.optional_input(sec, "heldout", "heldout.jsonl")) {
      const auto hs = PreferenceSet::load(*h);
      hs.validate(corpus);
      held = hs.triplets();
    }
  }
  const RunDir run(c.out / c.str(sec, "run_dir", "align"));
  write_file(run.config().string(), c.cfg.dump());
  const auto r = train_align(prefs, held, queries, corpus, start, scfg, c.objective(), tcfg, run);
  std::cout << "aligned on " << prefs.size() << " preferences: " << r.train.checkpoint.step << " steps";
  if (!held.empty())
    std::cout << ", held-out satisfaction " << format_fixed(r.satisfaction_before, 3) << " -> "
              << format_fixed(r.satisfaction_after, 3);
  std::cout << "; reference " << (r.reference_unchanged ? "unchanged" : "CHANGED") << "; encoder "
            << hex64(r.train.checkpoint.checksum()) << " in " << run.root.string() << "\n";
  return r.reference_unchanged ? 0 : 1;
}

EncoderParams load_encoder(const Ctx& c, const std::string& sec) {
  return EncoderParams::load(c.input(sec, "encoder", fs::path("train") / "final" / "encoder.bin"),
                             c.encoder_config(0));
}

int cmd_build_index(Ctx& c) {
  const std::string sec = "index";
  const auto corpus = ingest_corpus(c.corpus(sec));
  const auto params = load_encoder(c, sec);
  const auto field_name = c.str(sec, "field", "statement_text");
  IndexField field;
  if (field_name == "statement_text")
    field = IndexField::statement_text;
  else if (field_name == "informalization")
    field = IndexField::informalization;
  else
    throw Error(ErrorCode::ConfigError, "index.field", "expected statement_text or informalization");
  const auto index = build_index(corpus, HashedEncoder(params), field);
  const fs::path path = c.cfg.has(sec, "output") ? fs::path(c.str(sec, "output", "")) : c.out / "index.bin";
  write_out(path, index.serialize());
  std::cout << "indexed " << corpus.size() << " statements (" << field_name << ") with encoder "
            << hex64(params.checksum()) << " into " << path.string() << "\n";
  return 0;
}

int cmd_eval(Ctx& c) {
  const std::string sec = "eval";
  const auto corpus = ingest_corpus(c.corpus(sec));
  const auto queries = load_queries(c.input(sec, "queries", "test.jsonl"), corpus);
  const auto vocab = load_vocab(c, sec);
  const auto params = load_encoder(c, sec);
  const auto index = VectorIndex::load(c.input(sec, "index", "index.bin"));
  if (index.encoder_checksum() != params.checksum())
    throw Error(ErrorCode::EncoderMismatch, "index",
                hex64(index.encoder_checksum()) + " vs encoder " + hex64(params.checksum()));
  EvalConfig ev;
  ev.ks = parse_ks(c.str(sec, "ks", "1,5,10"));
  ev.formal_augment_rate = c.num(sec, "formal_augment_rate", ev.formal_augment_rate);
  ev.vocab = &vocab;
  ev.seed = c.seed(sec);
  ev.run_id = c.str(sec, "run_id", "eval");
  ev.timestamp = c.str(sec, "timestamp", "");
  const auto report = evaluate(index, HashedEncoder(params), std::span<const QueryRecord>(queries), ev);
  const auto dir = c.out / "eval" / ev.run_id;
  write_out(dir / "report.json", report.to_json().dump(2) + "\n");
  write_out(dir / "search_log.jsonl", report.log_jsonl());
  write_out(dir / "table.txt", report.table());
  std::cout << report.table();
  return 0;
}

int cmd_export_preferences(Ctx& c) {
  const std::string sec = "export";
  const auto corpus = ingest_corpus(c.corpus(sec));
  const auto log = FeedbackLog::load(c.input(sec, "log", "feedback.jsonl"));
  auto client = make_client(c, sec, corpus, {});
  const Generator gen(*client.recorder, templates(c, sec));
  const auto res = mine_preferences(log, gen, corpus);

  write_out(c.out / "preferences.jsonl", res.preferences.to_jsonl());
  std::string skipped, labels;
  for (const auto& s : res.skipped)
    skipped += nlohmann::ordered_json{{"session_id", s.session_id}, {"reason", s.reason}}.dump() + "\n";
  for (const auto& l : res.labels)
    labels += nlohmann::ordered_json{{"query", l.query}, {"statement_id", l.statement_id}, {"helpful", l.helpful}}
                  .dump() +
              "\n";
  write_out(c.out / "skipped_sessions.jsonl", skipped);
  write_out(c.out / "judge_labels.jsonl", labels);
  write_out(c.out / "judge_transcript.jsonl", client.recorder->transcript_jsonl());
  std::cout << "mined " << res.preferences.size() << " preferences from " << log.size() << " events ("
            << res.preferences.count(PreferenceSource::statement_vote) << " statement votes, "
            << res.preferences.count(PreferenceSource::arena_refined) << " arena); " << res.skipped.size()
            << " sessions skipped, " << res.labels.size() << " judge calls\n";
  return 0;
}

int cmd_serve(Ctx& c) {
  const std::string sec = "service";
  auto& cfg = c.cfg;
  auto fallback = [&](const char* key, const fs::path& rel) {
    if (!cfg.has(sec, key)) cfg.set(sec, key, (c.out / rel).string());
  };
  if (!cfg.has(sec, "corpus"))
    cfg.set(sec, "corpus", c.corpus(sec));
  fallback("index", "index.bin");
  fallback("encoder", fs::path("train") / "final" / "encoder.bin");
  fallback("feedback_log", "feedback.jsonl");
  fallback("request_log", "requests.jsonl");
  if (!cfg.has(sec, "seed")) cfg.set(sec, "seed", static_cast<std::int64_t>(c.seed(sec)));
  for (const char* key : {"corpus", "index", "encoder"}) c.input(sec, key, "");
  const auto scfg = ServiceConfig::from_config(cfg);
  fs::create_directories(c.out);

  // Block the stop signals before any worker thread starts so only sigwait sees them.
  sigset_t stop;
  sigemptyset(&stop);
  sigaddset(&stop, SIGINT);
  sigaddset(&stop, SIGTERM);
  pthread_sigmask(SIG_BLOCK, &stop, nullptr);

  auto svc = SearchService::create(scfg);
  HttpServer server(*svc, scfg.request_log, scfg.threads);
  const int port = server.bind(scfg.host, scfg.port);
  server.start();
  std::cout << "serving " << svc->corpus().size() << " statements on http://" << scfg.host << ":" << port
            << (scfg.arena ? " (arena enabled)" : "") << std::endl;
  int sig = 0;
  sigwait(&stop, &sig);
  server.stop();
  std::cout << "stopped after " << svc->log().size() << " feedback events" << std::endl;
  return 0;
}

int cmd_stats(Ctx& c) {
  const std::string sec = "stats";
  const auto corpus = ingest_corpus(c.corpus(sec));
  nlohmann::ordered_json j;
  std::string text = "statements: " + std::to_string(corpus.size()) + "\n";
  nlohmann::ordered_json src;
  for (const auto& [s, n] : corpus.source_histogram()) {
    text += percent_row(to_string(s), n, corpus.size());
    src[std::string(to_string(s))] = n;
  }
  j["statements"] = corpus.size();
  j["sources"] = src;
  if (auto p = c.optional_input(sec, "queries", "queries.jsonl")) {
    const auto queries = load_queries(*p, corpus);
    text += "queries: " + std::to_string(queries.size()) + "\n";
    nlohmann::ordered_json mods;
    for (const auto& [m, n] : modality_counts(queries)) {
      text += percent_row(to_string(m), n, queries.size());
      mods[std::string(to_string(m))] = n;
    }
    j["queries"] = queries.size();
    j["modalities"] = mods;
  }
  write_out(c.out / "stats.json", j.dump(2) + "\n");
  std::cout << text;
  return 0;
}

// ---- flag plumbing -------------------------------------------------------

/// Flags declared per subcommand; after parsing, set ones are copied into
/// the config section so config files and flags share one code path.
class Flags {
 public:
  Flags(CLI::App* app, std::string section) : app_(app), section_(std::move(section)) {}

  template <typename T>
  Flags& opt(const std::string& key, const std::string& help) {
    auto holder = std::make_shared<std::optional<T>>();
    app_->add_option("--" + Ctx::dashed(key), *holder, help);
    setters_.push_back([holder, key, this](Config& c) {
      if (!*holder) return;
      if constexpr (std::is_same_v<T, std::string>)
        c.set(section_, key, **holder);
      else if constexpr (std::is_floating_point_v<T>)
        c.set(section_, key, static_cast<double>(**holder));
      else
        c.set(section_, key, static_cast<std::int64_t>(**holder));
    });
    return *this;
  }

  Flags& flag(const std::string& key, const std::string& help) {
    auto* o = app_->add_flag("--" + Ctx::dashed(key), help);
    setters_.push_back([o, key, this](Config& c) {
      if (o->count()) c.set(section_, key, true);
    });
    return *this;
  }

  void apply(Config& c) const {
    for (const auto& s : setters_) s(c);
  }
  const std::string& section() const { return section_; }
  CLI::App* app() const { return app_; }

 private:
  CLI::App* app_;
  std::string section_;
  std::vector<std::function<void(Config&)>> setters_;
};

struct Command {
  std::unique_ptr<Flags> flags;
  std::function<int(Ctx&)> run;
};

int run(int argc, char** argv) {
  CLI::App app{"Semantic search over formal statements: data synthesis, training, evaluation and serving."};
  app.require_subcommand(1);
  app.fallthrough();
  std::optional<std::string> config_path, out_dir;
  std::optional<std::int64_t> seed;
  app.add_option("--config", config_path, "TOML config with per-subcommand sections")->check(CLI::ExistingFile);
  app.add_option("--seed", seed, "Seed for every seeded stage (overrides config)");
  app.add_option("--out-dir", out_dir, "Run directory for outputs and default inputs (default: run)");

  std::vector<Command> cmds;
  auto add = [&](const std::string& name, const std::string& section, const std::string& desc,
                 std::function<int(Ctx&)> fn) -> Flags& {
    cmds.push_back({std::make_unique<Flags>(app.add_subcommand(name, desc), section), std::move(fn)});
    return *cmds.back().flags;
  };

  add("ingest", "ingest", "Validate a statement corpus and copy it into the run directory", cmd_ingest)
      .opt<std::string>("corpus", "Statement JSONL")
      .opt<std::string>("transitions", "Proof-transition JSONL")
      .flag("desk", "Use the bundled desk corpus and transitions");
  add("synthesize", "synthesize", "Informalize statements and synthesize the query dataset", cmd_synthesize)
      .opt<std::string>("corpus", "Statement JSONL (default: <out>/corpus.jsonl)")
      .opt<std::string>("transitions", "Proof-transition JSONL")
      .opt<std::string>("clusters", "Intent cluster JSON (default: built-in)")
      .opt<std::string>("prompts", "Directory of prompt templates")
      .opt<std::string>("generator", "desk | replay | http")
      .opt<std::string>("replay", "Transcript to replay (generator=replay)")
      .opt<std::string>("endpoint", "Base URL (generator=http)")
      .opt<double>("test_fraction", "Held-out query fraction");
  add("vocab", "vocab", "Build the augmentation vocabulary", cmd_vocab)
      .opt<std::string>("corpus", "Statement JSONL")
      .opt<std::string>("queries", "Training queries (default: <out>/train.jsonl)");
  add("train", "train", "Contrastive training", cmd_train)
      .opt<std::string>("corpus", "Statement JSONL")
      .opt<std::string>("queries", "Training queries")
      .opt<std::string>("vocab", "Vocabulary file")
      .opt<std::size_t>("epochs", "Epochs")
      .opt<double>("learning_rate", "Base learning rate")
      .opt<double>("lr_multiplier", "Scale applied to the base learning rate")
      .opt<double>("augment_rate", "Token replacement rate for formal-statement queries")
      .opt<std::size_t>("batch_size", "Queries per micro-batch")
      .opt<std::size_t>("group_size", "Statements per group")
      .opt<std::size_t>("grad_accum", "Micro-batches per optimizer step")
      .opt<std::size_t>("max_steps", "Stop after this many optimizer steps")
      .opt<std::size_t>("checkpoint_every", "Checkpoint interval in optimizer steps")
      .opt<std::string>("resume", "Checkpoint to resume from")
      .opt<std::string>("run_dir", "Run directory name under --out-dir");
  add("align", "align", "Preference alignment from a trained checkpoint", cmd_align)
      .opt<std::string>("corpus", "Statement JSONL")
      .opt<std::string>("queries", "Training queries")
      .opt<std::string>("vocab", "Vocabulary file")
      .opt<std::string>("checkpoint", "Start checkpoint (default: latest under <out>/train)")
      .opt<std::string>("preferences", "Preference JSONL (default: <out>/preferences.jsonl)")
      .opt<std::string>("heldout", "Held-out preference JSONL")
      .flag("desk_preferences", "Use rule-generated desk preferences")
      .opt<std::size_t>("preference_count", "Desk preferences per split")
      .opt<std::size_t>("epochs", "Epochs over the preferences")
      .opt<double>("lr_multiplier", "Scale applied to the base learning rate")
      .opt<std::size_t>("max_steps", "Stop after this many optimizer steps")
      .opt<std::string>("run_dir", "Run directory name under --out-dir");
  add("build-index", "index", "Embed the corpus into a persisted index", cmd_build_index)
      .opt<std::string>("corpus", "Statement JSONL")
      .opt<std::string>("encoder", "Encoder weights (default: <out>/train/final/encoder.bin)")
      .opt<std::string>("field", "statement_text | informalization")
      .opt<std::string>("output", "Index file (default: <out>/index.bin)");
  add("eval", "eval", "Evaluate retrieval on held-out queries", cmd_eval)
      .opt<std::string>("corpus", "Statement JSONL")
      .opt<std::string>("queries", "Evaluation queries (default: <out>/test.jsonl)")
      .opt<std::string>("vocab", "Vocabulary file")
      .opt<std::string>("encoder", "Encoder weights")
      .opt<std::string>("index", "Index file")
      .opt<std::string>("ks", "Comma-separated cutoffs")
      .opt<std::string>("run_id", "Report id and output subdirectory")
      .opt<std::string>("timestamp", "Report timestamp (default: now)");
  add("export-preferences", "export", "Mine preference triplets from a feedback log", cmd_export_preferences)
      .opt<std::string>("corpus", "Statement JSONL")
      .opt<std::string>("log", "Feedback log (default: <out>/feedback.jsonl)")
      .opt<std::string>("prompts", "Directory of prompt templates")
      .opt<std::string>("generator", "Judge backend: desk | replay | http")
      .opt<std::string>("replay", "Judge transcript to replay")
      .opt<std::string>("endpoint", "Base URL (generator=http)");
  add("serve", "service", "Run the HTTP search service", cmd_serve)
      .opt<std::string>("host", "Bind address")
      .opt<int>("port", "Port (0 picks a free one)")
      .opt<std::string>("corpus", "Statement JSONL")
      .opt<std::string>("index", "Index file")
      .opt<std::string>("encoder", "Encoder weights")
      .opt<std::string>("feedback_log", "Feedback log path")
      .opt<std::string>("request_log", "Request log path")
      .opt<std::size_t>("threads", "HTTP worker threads");
  add("stats", "stats", "Per-source and per-modality histograms", cmd_stats)
      .opt<std::string>("corpus", "Statement JSONL")
      .opt<std::string>("queries", "Query JSONL (default: <out>/queries.jsonl)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  Ctx ctx;
  if (config_path) ctx.cfg = Config::load(*config_path);
  for (const auto& cmd : cmds) {
    if (!cmd.flags->app()->parsed()) continue;
    cmd.flags->apply(ctx.cfg);
    if (seed) {
      ctx.cfg.set("", "seed", *seed);
      ctx.cfg.set(cmd.flags->section(), "seed", *seed);
    }
    ctx.out = out_dir ? *out_dir : ctx.cfg.get_string("", "out_dir", "run");
    return cmd.run(ctx);
  }
  return 2;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return run(argc, argv);
  } catch (const UsageError& e) {
    std::cerr << "fsearch: " << e.what() << "\n";
    return 2;
  } catch (const Error& e) {
    std::cerr << "fsearch: error: " << e.what() << "\n";
    return e.code() == ErrorCode::ConfigError ? 2 : 1;
  } catch (const std::exception& e) {
    std::cerr << "fsearch: error: " << e.what() << "\n";
    return 1;
  }
}
