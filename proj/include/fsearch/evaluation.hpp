#pragma once

#include <chrono>
#include <cstdio>
#include <ctime>
#include <map>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "corpus.hpp"
#include "index.hpp"
#include "text.hpp"

namespace fsearch {

struct RankedQuery {
  std::string gold_id;
  std::vector<std::string> retrieved;  // best first, duplicate-free

  /// 1-based position of the gold id, or nullopt when absent.
  std::optional<std::size_t> rank() const {
    for (std::size_t i = 0; i < retrieved.size(); ++i)
      if (retrieved[i] == gold_id) return i + 1;
    return std::nullopt;
  }
};

struct RankedRun {
  std::vector<RankedQuery> queries;
  std::size_t k_max = 10;
};

/// count[r] = number of queries whose gold sits at rank r (index 0 = absent).
inline std::vector<std::size_t> rank_histogram(const RankedRun& run) {
  std::vector<std::size_t> h(run.k_max + 1, 0);
  for (const auto& q : run.queries) {
    const auto r = q.rank();
    if (r && *r <= run.k_max)
      ++h[*r];
    else
      ++h[0];
  }
  return h;
}

/// Fraction of queries whose gold is within the top k.
inline double recall_at_k(const RankedRun& run, std::size_t k) {
  if (run.queries.empty()) throw Error(ErrorCode::EmptyRun, "recall_at_k");
  if (k < 1 || k > run.k_max)
    throw Error(ErrorCode::PreconditionViolation, "k", "must be in [1, k_max]");
  const auto h = rank_histogram(run);
  std::size_t hits = 0;
  for (std::size_t r = 1; r <= k; ++r) hits += h[r];
  return static_cast<double>(hits) / static_cast<double>(run.queries.size());
}

/// Mean reciprocal rank; a gold missing from the list contributes 0.
/// With L = lcm(1..k_max) the sum is the integer sum_r h[r] * (L/r), so the
/// result is one correctly rounded division and independent of query order.
inline double mrr(const RankedRun& run) {
  if (run.queries.empty()) throw Error(ErrorCode::EmptyRun, "mrr");
  const auto h = rank_histogram(run);
  constexpr std::uint64_t kExact = 1ULL << 53;
  const std::uint64_t n = run.queries.size();
  std::uint64_t l = 1;
  bool exact = true;
  for (std::uint64_t r = 2; r <= run.k_max && exact; ++r) {
    l = l / std::gcd(l, r) * r;
    exact = l < kExact / n;
  }
  if (exact) {
    std::uint64_t num = 0;
    for (std::size_t r = 1; r <= run.k_max; ++r) num += h[r] * (l / r);
    return static_cast<double>(num) / static_cast<double>(l * n);
  }
  long double sum = 0.0L;
  for (std::size_t r = 1; r <= run.k_max; ++r)
    sum += static_cast<long double>(h[r]) / static_cast<long double>(r);
  return static_cast<double>(sum / static_cast<long double>(n));
}

struct BallotCounts {
  std::size_t n1 = 0, n2 = 0, n3 = 0;
  std::size_t valid = 0;  // N
};

/// (3*n1 + 2*n2 + n3) / (3N).
inline double borda(const BallotCounts& c) {
  if (c.valid == 0) throw Error(ErrorCode::ZeroBallots, "borda");
  if (c.n1 + c.n2 + c.n3 > c.valid)
    throw Error(ErrorCode::PreconditionViolation, "ballots", "n1+n2+n3 exceeds N");
  return static_cast<double>(3 * c.n1 + 2 * c.n2 + c.n3) / static_cast<double>(3 * c.valid);
}

enum class NameMatch { full, stem };

inline std::string_view name_stem(std::string_view name) {
  const auto dot = name.rfind('.');
  return dot == std::string_view::npos ? name : name.substr(dot + 1);
}

inline bool match_name(std::string_view predicted, std::string_view gold, NameMatch mode) {
  if (mode == NameMatch::full) return predicted == gold;
  return name_stem(predicted) == name_stem(gold);
}

/// "64.2" style: percentage with one decimal.
inline std::string format_percent(double fraction) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.1f", fraction * 100.0);
  return buf;
}

inline std::string format_fixed(double v, int digits) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

struct MetricRow {
  std::size_t count = 0;
  std::map<std::size_t, double> recall;  // k -> R@k
  double mrr = 0.0;
};

struct SearchLogEntry {
  std::string query_id;
  Modality modality = Modality::synthetic_user_query;
  std::string gold_id;
  std::vector<std::string> retrieved;
};

struct EvalReport {
  std::string run_id;
  std::uint64_t encoder_checksum = 0;
  std::string timestamp;
  std::size_t k_max = 10;
  std::vector<std::size_t> ks;
  std::map<Modality, MetricRow> modalities;
  MetricRow all;
  std::vector<SearchLogEntry> log;  // not serialized into the report

  nlohmann::ordered_json to_json() const {
    auto row_json = [](const MetricRow& r) {
      nlohmann::ordered_json j;
      j["count"] = r.count;
      nlohmann::ordered_json rec;
      for (const auto& [k, v] : r.recall) rec[std::to_string(k)] = v;
      j["recall"] = rec;
      j["mrr"] = r.mrr;
      return j;
    };
    nlohmann::ordered_json j;
    j["run_id"] = run_id;
    j["encoder_checksum"] = hex64(encoder_checksum);
    j["timestamp"] = timestamp;
    j["k_max"] = k_max;
    nlohmann::ordered_json mods = nlohmann::ordered_json::object();
    for (const auto& [m, r] : modalities) mods[std::string(to_string(m))] = row_json(r);
    j["modalities"] = mods;
    j["all"] = row_json(all);
    return j;
  }

  /// Modalities x R@k / MRR, percentages to one decimal.
  std::string table() const {
    char head[64];
    std::snprintf(head, sizeof head, "%-24s %5s  ", "modality", "n");
    std::string out = head;
    for (auto k : ks) {
      std::snprintf(head, sizeof head, "%6s ", ("R@" + std::to_string(k)).c_str());
      out += head;
    }
    out += "  MRR\n";
    auto line = [&](std::string_view name, const MetricRow& r) {
      char head[64];
      std::snprintf(head, sizeof head, "%-24s %5zu  ", std::string(name).c_str(), r.count);
      std::string l = head;
      for (auto k : ks) {
        char cell[16];
        std::snprintf(cell, sizeof cell, "%6s ", format_percent(r.recall.at(k)).c_str());
        l += cell;
      }
      l += " " + format_fixed(r.mrr, 2) + "\n";
      return l;
    };
    for (const auto& [m, r] : modalities) out += line(to_string(m), r);
    out += line("all", all);
    return out;
  }

  std::string log_jsonl() const {
    std::string out;
    for (const auto& e : log) {
      nlohmann::ordered_json j;
      j["query_id"] = e.query_id;
      j["modality"] = std::string(to_string(e.modality));
      j["gold_id"] = e.gold_id;
      j["retrieved"] = e.retrieved;
      out += j.dump() + "\n";
    }
    return out;
  }
};

inline MetricRow metric_row(const RankedRun& run, std::span<const std::size_t> ks) {
  MetricRow row;
  row.count = run.queries.size();
  if (run.queries.empty()) return row;
  for (auto k : ks) row.recall[k] = recall_at_k(run, k);
  row.mrr = mrr(run);
  return row;
}

struct EvalConfig {
  std::vector<std::size_t> ks{1, 5, 10};
  /// Token replacement applied to formal-statement queries at evaluation.
  double formal_augment_rate = 0.2;
  const Vocab* vocab = nullptr;
  std::uint64_t seed = 0;
  std::string run_id = "eval";
  std::string timestamp;  // empty -> current UTC time
};

inline std::string utc_timestamp() {
  const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

/// The query text actually searched: formal statements get the evaluation
/// token augmentation, seeded per query id.
inline std::string evaluation_query_text(const QueryRecord& q, const EvalConfig& cfg) {
  if (q.modality != Modality::formal_statement || cfg.formal_augment_rate <= 0.0) return q.text;
  static const Vocab kEmpty;
  return augment_text(q.text, cfg.formal_augment_rate, cfg.vocab ? *cfg.vocab : kEmpty,
                      derive_seed(cfg.seed, q.id));
}

/// Builds per-modality and pooled metrics from search logs.
inline EvalReport report_from_log(std::vector<SearchLogEntry> log, const EvalConfig& cfg,
                                  std::uint64_t checksum) {
  EvalReport rep;
  rep.run_id = cfg.run_id;
  rep.encoder_checksum = checksum;
  rep.timestamp = cfg.timestamp.empty() ? utc_timestamp() : cfg.timestamp;
  rep.ks = cfg.ks;
  rep.k_max = *std::max_element(cfg.ks.begin(), cfg.ks.end());
  std::map<Modality, RankedRun> runs;
  RankedRun all;
  all.k_max = rep.k_max;
  for (const auto& e : log) {
    auto& r = runs[e.modality];
    r.k_max = rep.k_max;
    r.queries.push_back({e.gold_id, e.retrieved});
    all.queries.push_back({e.gold_id, e.retrieved});
  }
  for (const auto& [m, r] : runs) rep.modalities[m] = metric_row(r, cfg.ks);
  rep.all = metric_row(all, cfg.ks);
  rep.log = std::move(log);
  return rep;
}

template <TextEncoder E>
EvalReport evaluate(const VectorIndex& index, const E& enc, std::span<const QueryRecord> queries,
                    const EvalConfig& cfg) {
  if (cfg.ks.empty()) throw Error(ErrorCode::PreconditionViolation, "ks", "empty");
  const std::size_t k_max = *std::max_element(cfg.ks.begin(), cfg.ks.end());
  std::vector<SearchLogEntry> log;
  log.reserve(queries.size());
  for (const auto& q : queries) {
    SearchLogEntry e{q.id, q.modality, q.gold_id, {}};
    for (auto& r : index.search(evaluation_query_text(q, cfg), enc, k_max))
      e.retrieved.push_back(std::move(r.id));
    log.push_back(std::move(e));
  }
  std::sort(log.begin(), log.end(),
            [](const SearchLogEntry& a, const SearchLogEntry& b) { return a.query_id < b.query_id; });
  return report_from_log(std::move(log), cfg, enc.checksum());
}

}  // namespace fsearch
