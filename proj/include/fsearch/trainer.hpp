#pragma once

#include <cmath>
#include <condition_variable>
#include <deque>
#include <filesystem>
#include <fstream>
#include <mutex>
#include <numbers>
#include <optional>
#include <thread>
#include <vector>

#include <json.hpp>

#include "objectives.hpp"
#include "optimizer.hpp"
#include "sampling.hpp"

namespace fsearch {

enum class TrainPhase { contrastive, align };

inline std::string_view to_string(TrainPhase p) {
  return p == TrainPhase::contrastive ? "contrastive" : "align";
}

struct TrainConfig {
  double learning_rate = 2e-5;
  double lr_multiplier = 100.0;  // desk-scale factor applied to learning_rate
  /// Linear warmup length; unset means 5% of total optimizer steps.
  std::optional<std::size_t> warmup_steps;
  std::size_t epochs = 1;
  std::size_t grad_accum = 4;
  std::uint64_t seed = 0;
  TrainPhase phase = TrainPhase::contrastive;
  AdamWConfig adamw;
  /// Stop after this many optimizer steps (for resumable runs); unset = run to the end.
  std::optional<std::size_t> max_steps;
  /// Write checkpoints/step-N.bin every N steps (0 = only the final step).
  std::size_t checkpoint_every = 0;
  /// Align phase: preference triplets per micro-batch.
  std::size_t preference_batch_size = 8;

  double peak_lr() const { return learning_rate * lr_multiplier; }
};

struct LrSchedule {
  double peak = 0.0;
  std::size_t warmup = 0;
  std::size_t total = 0;
};

inline std::size_t default_warmup(std::size_t total) {
  return static_cast<std::size_t>(std::llround(0.05 * static_cast<double>(total)));
}

inline LrSchedule make_schedule(const TrainConfig& cfg, std::size_t total) {
  LrSchedule s{cfg.peak_lr(), cfg.warmup_steps.value_or(default_warmup(total)), total};
  if (s.warmup > s.total)
    throw Error(ErrorCode::ConfigError, "warmup_steps", "exceeds total steps");
  return s;
}

/// Linear warmup to the peak, then cosine decay to zero at `total`.
inline double lr_at(std::size_t step, const LrSchedule& s) {
  if (step > s.total) throw Error(ErrorCode::PreconditionViolation, "step", "beyond total");
  if (step < s.warmup) return s.peak * static_cast<double>(step) / static_cast<double>(s.warmup);
  if (s.total == s.warmup) return s.peak;
  const double frac =
      static_cast<double>(step - s.warmup) / static_cast<double>(s.total - s.warmup);
  return s.peak * 0.5 * (1.0 + std::cos(std::numbers::pi * frac));
}

/// Parameters plus optimizer state; enough to resume a run bit-for-bit.
struct Checkpoint {
  EncoderParams params;
  AdamW optimizer;
  std::uint64_t step = 0;
  std::uint64_t config_hash = 0;

  static constexpr std::uint32_t kMagic = 0x4B435346;  // "FSCK"
  static constexpr std::uint32_t kVersion = 1;

  std::string serialize() const {
    BinaryWriter w;
    w.put(kMagic);
    w.put(kVersion);
    w.put(step);
    w.put(config_hash);
    w.put_string(params.serialize());
    optimizer.write(w);
    return w.data();
  }

  static Checkpoint deserialize(std::string_view bytes) {
    BinaryReader r(bytes, ErrorCode::BadCheckpoint, "checkpoint");
    if (r.get<std::uint32_t>() != kMagic)
      throw Error(ErrorCode::BadCheckpoint, "checkpoint", "bad magic");
    if (r.get<std::uint32_t>() != kVersion)
      throw Error(ErrorCode::BadCheckpoint, "checkpoint", "unsupported version");
    Checkpoint c;
    c.step = r.get<std::uint64_t>();
    c.config_hash = r.get<std::uint64_t>();
    c.params = EncoderParams::deserialize(r.get_string());
    c.optimizer = AdamW::read(r);
    return c;
  }

  void save(const std::string& path) const { write_file(path, serialize()); }
  static Checkpoint load(const std::string& path) { return deserialize(read_file(path)); }
  std::uint64_t checksum() const { return params.checksum(); }
};

struct LossRecord {
  std::size_t step = 0;
  TrainPhase phase = TrainPhase::contrastive;
  double loss = 0.0;
  double lr = 0.0;

  friend bool operator==(const LossRecord&, const LossRecord&) = default;
};

/// Consumer thread that appends loss rows to a CSV file. Producers block
/// when `capacity` records are pending.
class LossLogger {
 public:
  LossLogger(std::optional<std::filesystem::path> csv, std::size_t capacity = 256)
      : capacity_(capacity) {
    if (csv) {
      const bool fresh = !std::filesystem::exists(*csv);
      out_.open(*csv, std::ios::app);
      if (!out_) throw Error(ErrorCode::IoError, csv->string(), "cannot open loss log");
      if (fresh) out_ << "step,phase,loss,lr\n";
    }
    worker_ = std::thread([this] { run(); });
  }

  LossLogger(const LossLogger&) = delete;
  LossLogger& operator=(const LossLogger&) = delete;

  ~LossLogger() { close(); }

  void push(LossRecord rec) {
    std::unique_lock lk(mu_);
    not_full_.wait(lk, [&] { return queue_.size() < capacity_; });
    queue_.push_back(rec);
    not_empty_.notify_one();
  }

  void close() {
    {
      std::lock_guard lk(mu_);
      if (closed_) return;
      closed_ = true;
    }
    not_empty_.notify_one();
    if (worker_.joinable()) worker_.join();
  }

 private:
  void run() {
    for (;;) {
      LossRecord rec;
      {
        std::unique_lock lk(mu_);
        not_empty_.wait(lk, [&] { return !queue_.empty() || closed_; });
        if (queue_.empty()) return;
        rec = queue_.front();
        queue_.pop_front();
        not_full_.notify_one();
      }
      if (out_.is_open()) {
        out_ << rec.step << ',' << to_string(rec.phase) << ',' << std::setprecision(17)
             << rec.loss << ',' << rec.lr << '\n';
      }
    }
  }

  std::size_t capacity_;
  std::ofstream out_;
  std::mutex mu_;
  std::condition_variable not_empty_, not_full_;
  std::deque<LossRecord> queue_;
  bool closed_ = false;
  std::thread worker_;
};

/// Run directory layout: config.toml, loss.csv, checkpoints/step-N.bin, final/.
struct RunDir {
  std::filesystem::path root;

  explicit RunDir(std::filesystem::path r) : root(std::move(r)) {
    std::filesystem::create_directories(root / "checkpoints");
    std::filesystem::create_directories(root / "final");
  }
  std::filesystem::path config() const { return root / "config.toml"; }
  std::filesystem::path loss_csv() const { return root / "loss.csv"; }
  std::filesystem::path checkpoint(std::size_t step) const {
    return root / "checkpoints" / ("step-" + std::to_string(step) + ".bin");
  }
  std::filesystem::path metrics() const { return root / "final" / "metrics.json"; }
  std::filesystem::path encoder() const { return root / "final" / "encoder.bin"; }
};

struct TrainResult {
  Checkpoint checkpoint;
  std::vector<LossRecord> losses;
  LrSchedule schedule;
};

/// Owns the parameters and optimizer for one phase and applies accumulated
/// optimizer steps.
class Trainer {
 public:
  Trainer(Checkpoint start, ObjectiveConfig obj) : ckpt_(std::move(start)), obj_(obj) {}

  const Checkpoint& checkpoint() const { return ckpt_; }
  Checkpoint& checkpoint() { return ckpt_; }
  const EncoderParams& params() const { return ckpt_.params; }

  /// Averages the gradients of the micro-batches and takes one AdamW step.
  double step_contrastive(std::span<const TrainingBatch> micro, double lr) {
    ParamGrad acc(params().dim(), params().features());
    double loss = 0.0;
    for (const auto& b : micro) {
      auto lg = contrastive_loss(b, params(), obj_);
      loss += lg.loss;
      acc.add_scaled(lg.grad, 1.0);
    }
    return apply(acc, loss, micro.size(), lr);
  }

  /// One AdamW step on the joint objective; micro-batch k pairs contrastive
  /// batch k with preference batch k.
  double step_joint(std::span<const TrainingBatch> micro,
                    std::span<const std::vector<PreferenceTriplet>> prefs,
                    std::span<const std::vector<double>> ref_margins, const StatementText& text,
                    const EncoderParams& ref, double lr) {
    ParamGrad acc(params().dim(), params().features());
    double loss = 0.0;
    for (std::size_t k = 0; k < prefs.size(); ++k) {
      auto lg = joint_loss(micro[k], prefs[k], text, params(), ref, obj_, true, ref_margins[k]);
      loss += lg.loss;
      acc.add_scaled(lg.grad, 1.0);
    }
    return apply(acc, loss, prefs.size(), lr);
  }

 private:
  double apply(ParamGrad& acc, double loss, std::size_t n, double lr) {
    const double inv = 1.0 / static_cast<double>(n);
    acc.scale(inv);
    loss *= inv;
    if (!std::isfinite(loss) || !acc.all_finite())
      throw Error(ErrorCode::NumericalError, "step " + std::to_string(ckpt_.step + 1),
                  "non-finite loss or gradient");
    ckpt_.optimizer.step(ckpt_.params, acc, lr);
    ++ckpt_.step;
    return loss;
  }

  Checkpoint ckpt_;
  ObjectiveConfig obj_;
};

namespace detail {

inline void write_checkpoint(const std::optional<RunDir>& run, const Checkpoint& c) {
  if (run) c.save(run->checkpoint(c.step).string());
}

inline nlohmann::json run_summary(const TrainResult& r, TrainPhase phase) {
  nlohmann::json j = {{"phase", std::string(to_string(phase))},
                      {"steps", r.checkpoint.step},
                      {"total_steps", r.schedule.total},
                      {"warmup_steps", r.schedule.warmup},
                      {"peak_lr", r.schedule.peak},
                      {"encoder_checksum", hex64(r.checkpoint.checksum())}};
  if (!r.losses.empty()) {
    j["first_loss"] = r.losses.front().loss;
    j["final_loss"] = r.losses.back().loss;
  }
  return j;
}

inline void write_metrics(const RunDir& run, const nlohmann::json& j) {
  write_file(run.metrics().string(), j.dump(2) + "\n");
}

}  // namespace detail

/// Flattened micro-batch schedule across epochs. Optimizer step s consumes
/// micro-batches [s*accum, (s+1)*accum).
inline std::vector<std::vector<std::size_t>> contrastive_schedule(
    std::span<const QueryRecord> queries, std::size_t batch_size, std::size_t epochs,
    std::uint64_t seed) {
  std::vector<std::vector<std::size_t>> all;
  for (std::size_t e = 0; e < epochs; ++e) {
    auto plan = plan_epoch(queries, batch_size, derive_seed(seed, "epoch-" + std::to_string(e)));
    for (auto& b : plan) all.push_back(std::move(b));
  }
  return all;
}

inline TrainingBatch schedule_batch(std::span<const QueryRecord> queries,
                                    const std::vector<std::size_t>& idx, const Corpus& corpus,
                                    SamplingConfig scfg, std::uint64_t seed, std::size_t k) {
  std::vector<QueryRecord> qs;
  qs.reserve(idx.size());
  for (auto i : idx) qs.push_back(queries[i]);
  scfg.seed = derive_seed(seed, "batch-" + std::to_string(k));
  return build_batch(qs, corpus, scfg);
}

/// Phase 1: contrastive pretraining. `resume` continues a run that stopped at
/// `resume->step`; the schedule is regenerated from the seed so the continued
/// trajectory matches an uninterrupted one.
inline TrainResult train_contrastive(std::span<const QueryRecord> queries, const Corpus& corpus,
                                     const EncoderConfig& ecfg, const SamplingConfig& scfg,
                                     const ObjectiveConfig& ocfg, const TrainConfig& tcfg,
                                     std::optional<RunDir> run = std::nullopt,
                                     std::optional<Checkpoint> resume = std::nullopt,
                                     std::uint64_t config_hash = 0) {
  if (queries.empty()) throw Error(ErrorCode::PreconditionViolation, "dataset", "empty");
  const auto micro = contrastive_schedule(queries, scfg.batch_size, tcfg.epochs, tcfg.seed);
  const std::size_t accum = std::max<std::size_t>(1, tcfg.grad_accum);
  const std::size_t total = (micro.size() + accum - 1) / accum;
  TrainResult res;
  res.schedule = make_schedule(tcfg, total);

  Checkpoint start;
  if (resume) {
    start = std::move(*resume);
  } else {
    start.params = EncoderParams::random(ecfg);
    start.optimizer = AdamW(start.params.raw().size(), tcfg.adamw);
    start.config_hash = config_hash;
  }
  Trainer trainer(std::move(start), ocfg);
  LossLogger logger(run ? std::optional(run->loss_csv()) : std::nullopt);

  const std::size_t stop = std::min(total, tcfg.max_steps.value_or(total));
  for (std::size_t s = trainer.checkpoint().step; s < stop; ++s) {
    std::vector<TrainingBatch> batches;
    for (std::size_t k = s * accum; k < std::min(micro.size(), (s + 1) * accum); ++k)
      batches.push_back(schedule_batch(queries, micro[k], corpus, scfg, tcfg.seed, k));
    const double lr = lr_at(s, res.schedule);
    const double loss = trainer.step_contrastive(batches, lr);
    LossRecord rec{s + 1, TrainPhase::contrastive, loss, lr};
    res.losses.push_back(rec);
    logger.push(rec);
    if (tcfg.checkpoint_every && (s + 1) % tcfg.checkpoint_every == 0 && s + 1 != stop)
      detail::write_checkpoint(run, trainer.checkpoint());
  }
  logger.close();
  res.checkpoint = trainer.checkpoint();
  if (run) {
    detail::write_checkpoint(run, res.checkpoint);
    res.checkpoint.params.save(run->encoder().string());
    detail::write_metrics(*run, detail::run_summary(res, TrainPhase::contrastive));
  }
  return res;
}

/// Fraction of triplets with sim(q,c+) > sim(q,c-).
inline double preference_satisfaction(std::span<const PreferenceTriplet> triplets,
                                      const EncoderParams& p, const StatementText& text) {
  if (triplets.empty()) return 0.0;
  std::size_t ok = 0;
  for (const auto& t : triplets)
    if (preference_margin(t, p, text) > 0.0) ++ok;
  return static_cast<double>(ok) / static_cast<double>(triplets.size());
}

struct AlignResult {
  TrainResult train;
  std::uint64_t reference_checksum = 0;
  bool reference_unchanged = false;
  double satisfaction_before = 0.0;
  double satisfaction_after = 0.0;
};

/// Phase 2: DPO + lambda * contrastive against a frozen copy of `start`.
/// Each micro-step draws one preference mini-batch and one contrastive
/// mini-batch from separate shuffled iterators.
inline AlignResult train_align(std::span<const PreferenceTriplet> preferences,
                               std::span<const PreferenceTriplet> held_out,
                               std::span<const QueryRecord> queries, const Corpus& corpus,
                               const Checkpoint& start, const SamplingConfig& scfg,
                               const ObjectiveConfig& ocfg, const TrainConfig& tcfg,
                               std::optional<RunDir> run = std::nullopt) {
  if (preferences.empty()) throw Error(ErrorCode::EmptyPreferences, "align");
  if (queries.empty()) throw Error(ErrorCode::PreconditionViolation, "dataset", "empty");
  const auto text = corpus_text(corpus);
  const ReferenceSnapshot ref(start.params);

  AlignResult out;
  out.reference_checksum = ref.checksum();
  out.satisfaction_before = preference_satisfaction(held_out, start.params, text);

  const auto all_ref = reference_margins(preferences, ref.params(), text);
  const std::size_t pb = std::max<std::size_t>(1, tcfg.preference_batch_size);
  std::vector<std::vector<std::size_t>> pref_batches;
  for (std::size_t e = 0; e < tcfg.epochs; ++e) {
    std::vector<std::size_t> order(preferences.size());
    std::iota(order.begin(), order.end(), 0);
    std::mt19937_64 rng(derive_seed(tcfg.seed, "pref-epoch-" + std::to_string(e)));
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t i = 0; i < order.size(); i += pb)
      pref_batches.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(i),
                                order.begin() + static_cast<std::ptrdiff_t>(
                                                    std::min(order.size(), i + pb)));
  }
  const std::size_t accum = std::max<std::size_t>(1, tcfg.grad_accum);
  const std::size_t total = (pref_batches.size() + accum - 1) / accum;
  out.train.schedule = make_schedule(tcfg, total);

  // Contrastive iterator: as many epochs as needed to pair every preference batch.
  std::vector<std::vector<std::size_t>> con;
  for (std::size_t e = 0; con.size() < pref_batches.size(); ++e) {
    auto plan = plan_epoch(queries, scfg.batch_size,
                           derive_seed(tcfg.seed, "align-epoch-" + std::to_string(e)));
    for (auto& b : plan) con.push_back(std::move(b));
  }

  Checkpoint init;
  init.params = start.params;
  init.optimizer = AdamW(init.params.raw().size(), tcfg.adamw);
  init.config_hash = start.config_hash;
  Trainer trainer(std::move(init), ocfg);
  LossLogger logger(run ? std::optional(run->loss_csv()) : std::nullopt);

  const std::size_t stop = std::min(total, tcfg.max_steps.value_or(total));
  for (std::size_t s = 0; s < stop; ++s) {
    std::vector<TrainingBatch> batches;
    std::vector<std::vector<PreferenceTriplet>> prefs;
    std::vector<std::vector<double>> margins;
    for (std::size_t k = s * accum; k < std::min(pref_batches.size(), (s + 1) * accum); ++k) {
      batches.push_back(schedule_batch(queries, con[k], corpus, scfg,
                                       derive_seed(tcfg.seed, "align"), k));
      prefs.emplace_back();
      margins.emplace_back();
      for (auto i : pref_batches[k]) {
        prefs.back().push_back(preferences[i]);
        margins.back().push_back(all_ref[i]);
      }
    }
    const double lr = lr_at(s, out.train.schedule);
    const double loss = trainer.step_joint(batches, prefs, margins, text, ref.params(), lr);
    LossRecord rec{s + 1, TrainPhase::align, loss, lr};
    out.train.losses.push_back(rec);
    logger.push(rec);
    if (tcfg.checkpoint_every && (s + 1) % tcfg.checkpoint_every == 0 && s + 1 != stop)
      detail::write_checkpoint(run, trainer.checkpoint());
  }
  logger.close();
  out.train.checkpoint = trainer.checkpoint();
  out.reference_unchanged = ref.verify() && ref.checksum() == start.params.checksum();
  out.satisfaction_after = preference_satisfaction(held_out, out.train.checkpoint.params, text);
  if (run) {
    detail::write_checkpoint(run, out.train.checkpoint);
    out.train.checkpoint.params.save(run->encoder().string());
    auto j = detail::run_summary(out.train, TrainPhase::align);
    j["reference_checksum"] = hex64(out.reference_checksum);
    j["reference_unchanged"] = out.reference_unchanged;
    j["satisfaction_before"] = out.satisfaction_before;
    j["satisfaction_after"] = out.satisfaction_after;
    detail::write_metrics(*run, j);
  }
  return out;
}

}  // namespace fsearch
