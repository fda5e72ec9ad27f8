#pragma once

#include <algorithm>
#include <numeric>
#include <random>
#include <set>
#include <span>
#include <string>
#include <unordered_set>
#include <vector>

#include "corpus.hpp"
#include "text.hpp"

namespace fsearch {

struct SamplingConfig {
  std::size_t group_size = 8;  // G
  std::size_t batch_size = 8;  // B
  double augment_rate = 0.0;
  std::set<Modality> augment_modalities{Modality::formal_statement};
  const Vocab* vocab = nullptr;
  std::uint64_t seed = 0;
};

struct TrainingGroup {
  QueryRecord query;
  std::string query_text;  // q~ after token-level augmentation
  std::string positive;
  std::vector<std::string> negatives;  // G-1 ids
};

struct TrainingBatch {
  std::vector<TrainingGroup> groups;
  /// B*G ids, group-major with each group's positive first.
  std::vector<std::string> candidates;
  std::vector<std::string> candidate_texts;
  /// positive_index[i] = position of group i's positive in `candidates`.
  std::vector<std::size_t> positive_index;

  std::size_t group_size() const {
    return groups.empty() ? 0 : candidates.size() / groups.size();
  }
};

/// Applies the configured augmentation to one query; deterministic in (seed, query id).
inline std::string training_query_text(const QueryRecord& q, const SamplingConfig& cfg,
                                       std::uint64_t seed) {
  if (cfg.augment_rate <= 0.0 || !cfg.augment_modalities.count(q.modality)) return q.text;
  static const Vocab kEmpty;
  return augment_text(q.text, cfg.augment_rate, cfg.vocab ? *cfg.vocab : kEmpty,
                      derive_seed(seed, q.id));
}

/// One batch of B groups. Negatives are drawn uniformly without replacement
/// from the corpus minus every positive in the batch, so all B*G candidates
/// are distinct.
inline TrainingBatch build_batch(std::span<const QueryRecord> queries, const Corpus& corpus,
                                 const SamplingConfig& cfg) {
  if (cfg.group_size < 1 || queries.empty())
    throw Error(ErrorCode::PreconditionViolation, "build_batch", "need G >= 1 and B >= 1");
  const std::size_t b = queries.size();
  const std::size_t g = cfg.group_size;
  if (corpus.size() < b * g)
    throw Error(ErrorCode::CorpusTooSmall, std::to_string(corpus.size()),
                "need at least B*G = " + std::to_string(b * g));

  std::unordered_set<std::size_t> taken;
  std::vector<std::size_t> positives;
  for (const auto& q : queries) {
    const auto idx = corpus.index_of(q.gold_id);
    if (!taken.insert(idx).second) throw Error(ErrorCode::DuplicateGold, q.gold_id);
    positives.push_back(idx);
  }

  std::mt19937_64 rng(cfg.seed);
  std::uniform_int_distribution<std::size_t> pick(0, corpus.size() - 1);
  const std::size_t need = b * (g - 1);
  std::vector<std::size_t> negatives;
  negatives.reserve(need);
  if (need > 0 && need * 2 > corpus.size() - b) {
    // Dense case: shuffle the complement instead of rejection sampling.
    std::vector<std::size_t> pool;
    for (std::size_t i = 0; i < corpus.size(); ++i)
      if (!taken.count(i)) pool.push_back(i);
    for (std::size_t i = 0; i < need; ++i) {
      std::uniform_int_distribution<std::size_t> p(i, pool.size() - 1);
      std::swap(pool[i], pool[p(rng)]);
    }
    negatives.assign(pool.begin(), pool.begin() + static_cast<std::ptrdiff_t>(need));
  } else {
    while (negatives.size() < need) {
      const auto idx = pick(rng);
      if (taken.insert(idx).second) negatives.push_back(idx);
    }
  }

  TrainingBatch batch;
  batch.groups.reserve(b);
  for (std::size_t i = 0; i < b; ++i) {
    TrainingGroup grp;
    grp.query = queries[i];
    grp.query_text = training_query_text(queries[i], cfg, cfg.seed);
    grp.positive = corpus[positives[i]].id;
    batch.positive_index.push_back(batch.candidates.size());
    batch.candidates.push_back(grp.positive);
    batch.candidate_texts.push_back(corpus[positives[i]].statement_text);
    for (std::size_t k = 0; k + 1 < g; ++k) {
      const auto& s = corpus[negatives[i * (g - 1) + k]];
      grp.negatives.push_back(s.id);
      batch.candidates.push_back(s.id);
      batch.candidate_texts.push_back(s.statement_text);
    }
    batch.groups.push_back(std::move(grp));
  }
  return batch;
}

/// Shuffled epoch plan: lists of query indices with no gold repeated inside a
/// batch. A query whose gold is already present is deferred to a later batch.
inline std::vector<std::vector<std::size_t>> plan_epoch(std::span<const QueryRecord> queries,
                                                        std::size_t batch_size,
                                                        std::uint64_t seed) {
  std::vector<std::size_t> order(queries.size());
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 rng(seed);
  std::shuffle(order.begin(), order.end(), rng);

  std::vector<std::vector<std::size_t>> plan;
  std::vector<std::size_t> pending(order.begin(), order.end());
  while (!pending.empty()) {
    std::vector<std::size_t> next_pending;
    std::vector<std::size_t> cur;
    std::unordered_set<std::string> golds;
    for (auto qi : pending) {
      if (cur.size() < batch_size && golds.insert(queries[qi].gold_id).second) {
        cur.push_back(qi);
        if (cur.size() == batch_size) {
          plan.push_back(std::move(cur));
          cur.clear();
          golds.clear();
        }
      } else {
        next_pending.push_back(qi);
      }
    }
    if (!cur.empty()) plan.push_back(std::move(cur));
    pending = std::move(next_pending);
  }
  return plan;
}

}  // namespace fsearch
