#pragma once

#include <cmath>
#include <functional>
#include <memory>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "corpus.hpp"
#include "embedder.hpp"
#include "sampling.hpp"

namespace fsearch {

struct ObjectiveConfig {
  double temperature = 0.01;  // tau
  double dpo_beta = 0.1;
  double joint_lambda = 0.01;
};

enum class PreferenceSource { statement_vote, arena_refined, judged_zulip };

inline std::string_view to_string(PreferenceSource s) {
  switch (s) {
    case PreferenceSource::statement_vote: return "statement_vote";
    case PreferenceSource::arena_refined: return "arena_refined";
    case PreferenceSource::judged_zulip: return "judged_zulip";
  }
  return "?";
}

inline std::optional<PreferenceSource> parse_preference_source(std::string_view s) {
  for (auto p : {PreferenceSource::statement_vote, PreferenceSource::arena_refined,
                 PreferenceSource::judged_zulip})
    if (to_string(p) == s) return p;
  return std::nullopt;
}

struct PreferenceTriplet {
  std::string query;
  std::string chosen;    // c+
  std::string rejected;  // c-
  PreferenceSource source = PreferenceSource::statement_vote;

  friend bool operator==(const PreferenceTriplet&, const PreferenceTriplet&) = default;
};

struct LossAndGrad {
  double loss = 0.0;
  ParamGrad grad;
};

/// -log sigma(x), computed without overflow.
inline double neg_log_sigmoid(double x) {
  return x >= 0.0 ? std::log1p(std::exp(-x)) : -x + std::log1p(std::exp(x));
}

inline double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

// ---------------------------------------------------------------------------
// Contrastive objective
// ---------------------------------------------------------------------------

struct SimilarityLoss {
  double loss = 0.0;
  std::vector<std::vector<double>> dsims;  // dL/dsim, same shape as the input
};

/// Mean over rows of softmax cross-entropy of sims/tau against the positive
/// column. Log-sum-exp uses a max shift.
inline SimilarityLoss contrastive_from_sims(const std::vector<std::vector<double>>& sims,
                                            std::span<const std::size_t> positive,
                                            double tau) {
  SimilarityLoss out;
  const double inv_b = 1.0 / static_cast<double>(sims.size());
  out.dsims.resize(sims.size());
  for (std::size_t i = 0; i < sims.size(); ++i) {
    const auto& row = sims[i];
    double mx = -std::numeric_limits<double>::infinity();
    for (double s : row) mx = std::max(mx, s / tau);
    double z = 0.0;
    for (double s : row) z += std::exp(s / tau - mx);
    const double lse = mx + std::log(z);
    out.loss += (lse - row[positive[i]] / tau) * inv_b;
    auto& d = out.dsims[i];
    d.resize(row.size());
    for (std::size_t c = 0; c < row.size(); ++c) {
      const double p = std::exp(row[c] / tau - lse);
      d[c] = (p - (c == positive[i] ? 1.0 : 0.0)) * inv_b / tau;
    }
  }
  return out;
}

namespace detail {

inline std::vector<EncodedText> encode_all(std::span<const std::string> texts,
                                           const EncoderParams& p,
                                           std::span<const std::string> names = {}) {
  std::vector<EncodedText> out;
  out.reserve(texts.size());
  for (std::size_t i = 0; i < texts.size(); ++i)
    out.push_back(encode(texts[i], p, names.empty() ? std::string_view{} : names[i]));
  return out;
}

}  // namespace detail

/// Returns only the loss when `want_grad` is false (used by finite differences).
inline LossAndGrad contrastive_loss(const TrainingBatch& batch, const EncoderParams& p,
                                    const ObjectiveConfig& cfg, bool want_grad = true) {
  std::vector<std::string> qtexts, qnames;
  for (const auto& g : batch.groups) {
    qtexts.push_back(g.query_text);
    qnames.push_back(g.query.id);
  }
  const auto queries = detail::encode_all(qtexts, p, qnames);
  const auto cands = detail::encode_all(batch.candidate_texts, p, batch.candidates);

  std::vector<std::vector<double>> sims(queries.size(), std::vector<double>(cands.size()));
  for (std::size_t i = 0; i < queries.size(); ++i)
    for (std::size_t c = 0; c < cands.size(); ++c) sims[i][c] = sim(queries[i].e, cands[c].e);

  auto sl = contrastive_from_sims(sims, batch.positive_index, cfg.temperature);
  LossAndGrad out{sl.loss, ParamGrad(p.dim(), p.features())};
  if (!want_grad) return out;

  const std::size_t d = p.dim();
  std::vector<std::vector<double>> up_c(cands.size(), std::vector<double>(d, 0.0));
  for (std::size_t i = 0; i < queries.size(); ++i) {
    std::vector<double> up_q(d, 0.0);
    for (std::size_t c = 0; c < cands.size(); ++c) {
      const double w = sl.dsims[i][c];
      for (std::size_t r = 0; r < d; ++r) {
        up_q[r] += w * cands[c].e[r];
        up_c[c][r] += w * queries[i].e[r];
      }
    }
    backward(queries[i], up_q, out.grad);
  }
  for (std::size_t c = 0; c < cands.size(); ++c) backward(cands[c], up_c[c], out.grad);
  return out;
}

// ---------------------------------------------------------------------------
// Preference (DPO) objective
// ---------------------------------------------------------------------------

/// Frozen reference parameters. The checksum is taken at construction and
/// re-verified on demand.
class ReferenceSnapshot {
 public:
  explicit ReferenceSnapshot(EncoderParams params)
      : params_(std::make_shared<const EncoderParams>(std::move(params))),
        checksum_(params_->checksum()) {}

  static ReferenceSnapshot load(const std::string& path, std::uint64_t expected_checksum) {
    ReferenceSnapshot snap(EncoderParams::load(path));
    if (snap.checksum_ != expected_checksum)
      throw Error(ErrorCode::ChecksumMismatch, path,
                  "expected " + hex64(expected_checksum) + " got " + hex64(snap.checksum_));
    return snap;
  }

  const EncoderParams& params() const { return *params_; }
  std::uint64_t checksum() const { return checksum_; }
  bool verify() const { return params_->checksum() == checksum_; }

 private:
  std::shared_ptr<const EncoderParams> params_;
  std::uint64_t checksum_;
};

/// Resolves statement ids to the text that gets embedded.
using StatementText = std::function<const std::string&(const std::string& id)>;

inline StatementText corpus_text(const Corpus& corpus) {
  return [&corpus](const std::string& id) -> const std::string& {
    const auto* s = corpus.find(id);
    if (!s) throw Error(ErrorCode::UnresolvedGold, id);
    return s->statement_text;
  };
}

struct MarginLoss {
  double loss = 0.0;
  std::vector<double> dmargin;  // dL / d(policy margin)
};

/// mean_i -log sigma(beta * (policy_i - reference_i)).
inline MarginLoss dpo_from_margins(std::span<const double> policy,
                                   std::span<const double> reference, double beta) {
  if (policy.empty()) throw Error(ErrorCode::EmptyTripletSet, "dpo");
  MarginLoss out;
  const double inv_n = 1.0 / static_cast<double>(policy.size());
  out.dmargin.resize(policy.size());
  for (std::size_t i = 0; i < policy.size(); ++i) {
    const double x = beta * (policy[i] - reference[i]);
    out.loss += neg_log_sigmoid(x) * inv_n;
    out.dmargin[i] = -sigmoid(-x) * beta * inv_n;
  }
  return out;
}

/// sim(q,c+) - sim(q,c-) under `p`.
inline double preference_margin(const PreferenceTriplet& t, const EncoderParams& p,
                                 const StatementText& text) {
  const auto q = encode(t.query, p);
  const auto cp = encode(text(t.chosen), p, t.chosen);
  const auto cn = encode(text(t.rejected), p, t.rejected);
  return sim(q.e, cp.e) - sim(q.e, cn.e);
}

inline std::vector<double> reference_margins(std::span<const PreferenceTriplet> triplets,
                                             const EncoderParams& ref, const StatementText& text) {
  std::vector<double> out;
  out.reserve(triplets.size());
  for (const auto& t : triplets) out.push_back(preference_margin(t, ref, text));
  return out;
}

/// Gradient flows through `p` only. `ref_margins` may be supplied to skip
/// re-encoding under the frozen reference.
inline LossAndGrad dpo_loss(std::span<const PreferenceTriplet> triplets, const StatementText& text,
                            const EncoderParams& p, const EncoderParams& ref,
                            const ObjectiveConfig& cfg, bool want_grad = true,
                            std::span<const double> ref_margins = {}) {
  if (triplets.empty()) throw Error(ErrorCode::EmptyTripletSet, "dpo");
  std::vector<double> refm(ref_margins.begin(), ref_margins.end());
  if (refm.empty()) refm = reference_margins(triplets, ref, text);

  std::vector<EncodedText> q, cp, cn;
  std::vector<double> pol;
  for (const auto& t : triplets) {
    q.push_back(encode(t.query, p));
    cp.push_back(encode(text(t.chosen), p, t.chosen));
    cn.push_back(encode(text(t.rejected), p, t.rejected));
    pol.push_back(sim(q.back().e, cp.back().e) - sim(q.back().e, cn.back().e));
  }
  auto ml = dpo_from_margins(pol, refm, cfg.dpo_beta);
  LossAndGrad out{ml.loss, ParamGrad(p.dim(), p.features())};
  if (!want_grad) return out;

  const std::size_t d = p.dim();
  for (std::size_t i = 0; i < triplets.size(); ++i) {
    const double w = ml.dmargin[i];
    std::vector<double> uq(d), up(d), un(d);
    for (std::size_t r = 0; r < d; ++r) {
      uq[r] = w * (cp[i].e[r] - cn[i].e[r]);
      up[r] = w * q[i].e[r];
      un[r] = -w * q[i].e[r];
    }
    backward(q[i], uq, out.grad);
    backward(cp[i], up, out.grad);
    backward(cn[i], un, out.grad);
  }
  return out;
}

inline LossAndGrad dpo_loss(std::span<const PreferenceTriplet> triplets, const Corpus& corpus,
                            const EncoderParams& p, const EncoderParams& ref,
                            const ObjectiveConfig& cfg, bool want_grad = true) {
  return dpo_loss(triplets, corpus_text(corpus), p, ref, cfg, want_grad);
}

/// L = L_dpo + lambda * L_contrastive, the two terms on independent batches.
inline LossAndGrad joint_loss(const TrainingBatch& batch,
                              std::span<const PreferenceTriplet> triplets,
                              const StatementText& text, const EncoderParams& p,
                              const EncoderParams& ref, const ObjectiveConfig& cfg,
                              bool want_grad = true, std::span<const double> ref_margins = {}) {
  auto dpo = dpo_loss(triplets, text, p, ref, cfg, want_grad, ref_margins);
  if (cfg.joint_lambda == 0.0) return dpo;
  auto con = contrastive_loss(batch, p, cfg, want_grad);
  dpo.loss += cfg.joint_lambda * con.loss;
  if (want_grad) dpo.grad.add_scaled(con.grad, cfg.joint_lambda);
  return dpo;
}

// ---------------------------------------------------------------------------
// Finite-difference verification
// ---------------------------------------------------------------------------

enum class LossKind { contrastive, dpo, joint };

inline std::string_view to_string(LossKind k) {
  switch (k) {
    case LossKind::contrastive: return "contrastive";
    case LossKind::dpo: return "dpo";
    case LossKind::joint: return "joint";
  }
  return "?";
}

struct GradCheckInputs {
  const TrainingBatch* batch = nullptr;
  std::span<const PreferenceTriplet> triplets;
  StatementText text;
  const EncoderParams* reference = nullptr;
};

struct GradCheckEntry {
  std::size_t row = 0;
  std::uint32_t feature = 0;
  double analytic = 0.0;
  double numeric = 0.0;
  double rel_error = 0.0;
};

struct GradCheckReport {
  LossKind kind = LossKind::contrastive;
  std::string method;
  double step = 1e-5;
  double tolerance = 1e-4;
  std::vector<std::vector<GradCheckEntry>> trials;
  double max_rel_error = 0.0;
  bool passed = false;
  std::vector<std::string> failures;
};

inline constexpr double kGradCheckStep = 1e-5;
inline constexpr double kGradCheckTolerance = 1e-4;
// Denominator floor for the relative error, so entries whose true gradient
// is ~0 are judged on absolute agreement instead of amplified rounding noise.
// The floor grows with the loss value: a central difference of a loss L
// carries rounding error of order eps*|L|/h, and at tau=0.01 a random
// encoder has L ~ 25. With the factor below an entry passes only when
// |analytic - numeric| < 1e-4 * floor = 10 * eps * |L| / h.
inline constexpr double kGradCheckFloor = 1e-7;
inline constexpr double kGradCheckNoiseFactor = 1e5;

inline double grad_check_floor(double loss_plus, double loss_minus, double h) {
  const double noise = std::numeric_limits<double>::epsilon() *
                       std::max(std::abs(loss_plus), std::abs(loss_minus)) / h;
  return std::max(kGradCheckFloor, kGradCheckNoiseFactor * noise);
}

inline double evaluate_loss(LossKind kind, const GradCheckInputs& in, const EncoderParams& p,
                            const ObjectiveConfig& cfg, bool want_grad, ParamGrad* grad) {
  LossAndGrad lg;
  switch (kind) {
    case LossKind::contrastive: lg = contrastive_loss(*in.batch, p, cfg, want_grad); break;
    case LossKind::dpo: lg = dpo_loss(in.triplets, in.text, p, *in.reference, cfg, want_grad); break;
    case LossKind::joint:
      lg = joint_loss(*in.batch, in.triplets, in.text, p, *in.reference, cfg, want_grad);
      break;
  }
  if (grad) *grad = std::move(lg.grad);
  return lg.loss;
}

/// Compares the analytic gradient with central differences
/// (L(W + h e_ij) - L(W - h e_ij)) / 2h on `entries_per_trial` W entries drawn
/// from columns the inputs actually touch. Trial t perturbs a copy of `p`
/// whose entries are jittered with seed+t so trials differ.
inline GradCheckReport grad_check(LossKind kind, const GradCheckInputs& in,
                                  const EncoderParams& p, const ObjectiveConfig& cfg,
                                  std::size_t trials, std::uint64_t seed = 0,
                                  std::size_t entries_per_trial = 20, bool jitter = true) {
  if (trials < 1) throw Error(ErrorCode::PreconditionViolation, "trials", "must be >= 1");
  GradCheckReport rep;
  rep.kind = kind;
  rep.step = kGradCheckStep;
  rep.tolerance = kGradCheckTolerance;
  rep.method =
      "central difference (L(W+h*e_ij) - L(W-h*e_ij)) / (2h), h=1e-5, 64-bit; "
      "rel = |analytic-numeric| / max(|analytic|, |numeric|, floor), "
      "floor = max(1e-7, 1e5 * eps * max|L(W+-h*e_ij)| / h)";
  for (std::size_t t = 0; t < trials; ++t) {
    std::mt19937_64 rng(derive_seed(seed, "trial-" + std::to_string(t)));
    EncoderParams w = p;
    if (jitter && t > 0) {
      std::normal_distribution<double> n(0.0, 0.1 / std::sqrt(static_cast<double>(p.features())));
      for (auto& v : w.raw()) v += n(rng);
    }
    ParamGrad g;
    evaluate_loss(kind, in, w, cfg, true, &g);
    const auto& cols = g.touched();
    std::vector<GradCheckEntry> entries;
    if (cols.empty()) {
      rep.failures.push_back("trial " + std::to_string(t) + ": no gradient columns");
      rep.trials.push_back({});
      continue;
    }
    std::uniform_int_distribution<std::size_t> pc(0, cols.size() - 1);
    std::uniform_int_distribution<std::size_t> pr(0, p.dim() - 1);
    for (std::size_t k = 0; k < entries_per_trial; ++k) {
      GradCheckEntry e;
      e.feature = cols[pc(rng)];
      e.row = pr(rng);
      e.analytic = g.at(e.row, e.feature);
      const double orig = w.at(e.row, e.feature);
      w.at(e.row, e.feature) = orig + kGradCheckStep;
      const double lp = evaluate_loss(kind, in, w, cfg, false, nullptr);
      w.at(e.row, e.feature) = orig - kGradCheckStep;
      const double lm = evaluate_loss(kind, in, w, cfg, false, nullptr);
      w.at(e.row, e.feature) = orig;
      e.numeric = (lp - lm) / (2.0 * kGradCheckStep);
      e.rel_error = std::abs(e.analytic - e.numeric) /
                    std::max({std::abs(e.analytic), std::abs(e.numeric),
                              grad_check_floor(lp, lm, kGradCheckStep)});
      rep.max_rel_error = std::max(rep.max_rel_error, e.rel_error);
      if (!(e.rel_error < kGradCheckTolerance))
        rep.failures.push_back("trial " + std::to_string(t) + " W[" + std::to_string(e.row) +
                               "," + std::to_string(e.feature) +
                               "] rel=" + std::to_string(e.rel_error));
      entries.push_back(e);
    }
    rep.trials.push_back(std::move(entries));
  }
  rep.passed = rep.failures.empty();
  return rep;
}

}  // namespace fsearch
