#pragma once

#include <algorithm>
#include <array>
#include <map>
#include <optional>
#include <random>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include <json.hpp>

#include "util.hpp"

namespace fsearch {

using json = nlohmann::ordered_json;

enum class Source { mathlib, research_repo, library_dep };

inline constexpr std::array<Source, 3> kAllSources{Source::mathlib, Source::research_repo,
                                                   Source::library_dep};

inline std::string_view to_string(Source s) {
  switch (s) {
    case Source::mathlib: return "mathlib";
    case Source::research_repo: return "research_repo";
    case Source::library_dep: return "library_dep";
  }
  return "?";
}

inline std::optional<Source> parse_source(std::string_view s) {
  for (auto src : kAllSources)
    if (to_string(src) == s) return src;
  return std::nullopt;
}

enum class Modality {
  synthetic_user_query,
  informalized_statement,
  augmented_proof_state,
  formal_statement
};

inline constexpr std::array<Modality, 4> kAllModalities{
    Modality::synthetic_user_query, Modality::informalized_statement,
    Modality::augmented_proof_state, Modality::formal_statement};

inline std::string_view to_string(Modality m) {
  switch (m) {
    case Modality::synthetic_user_query: return "synthetic_user_query";
    case Modality::informalized_statement: return "informalized_statement";
    case Modality::augmented_proof_state: return "augmented_proof_state";
    case Modality::formal_statement: return "formal_statement";
  }
  return "?";
}

inline std::optional<Modality> parse_modality(std::string_view s) {
  for (auto m : kAllModalities)
    if (to_string(m) == s) return m;
  return std::nullopt;
}

/// A corpus entry: one declaration without its proof body.
///
/// `line`, `docstring` and `dependencies` are optional extensions used only
/// when assembling informalization context; records without them are valid.
struct FormalStatement {
  std::string id;
  std::string full_name;
  std::string statement_text;
  std::optional<std::string> informalization;
  Source source = Source::mathlib;
  std::optional<std::string> module_path;
  std::optional<int> line;
  std::optional<std::string> docstring;
  std::vector<std::string> dependencies;

  friend bool operator==(const FormalStatement&, const FormalStatement&) = default;
};

struct QueryRecord {
  std::string id;
  Modality modality = Modality::synthetic_user_query;
  std::string text;
  std::string gold_id;
  std::optional<std::string> cluster;

  friend bool operator==(const QueryRecord&, const QueryRecord&) = default;
};

inline json to_json(const FormalStatement& s) {
  json j;
  j["id"] = s.id;
  j["full_name"] = s.full_name;
  j["statement_text"] = s.statement_text;
  if (s.informalization) j["informalization"] = *s.informalization;
  j["source"] = std::string(to_string(s.source));
  if (s.module_path) j["module_path"] = *s.module_path;
  if (s.line) j["line"] = *s.line;
  if (s.docstring) j["docstring"] = *s.docstring;
  if (!s.dependencies.empty()) j["dependencies"] = s.dependencies;
  return j;
}

inline json to_json(const QueryRecord& q) {
  json j;
  j["id"] = q.id;
  j["modality"] = std::string(to_string(q.modality));
  j["text"] = q.text;
  j["gold_id"] = q.gold_id;
  if (q.cluster) j["cluster"] = *q.cluster;
  return j;
}

namespace detail {

inline std::optional<std::string> opt_string(const json& j, const char* key) {
  auto it = j.find(key);
  if (it == j.end() || it->is_null()) return std::nullopt;
  if (!it->is_string()) throw std::invalid_argument(std::string(key) + " must be a string");
  return it->get<std::string>();
}

inline std::string req_string(const json& j, const char* key) {
  auto v = opt_string(j, key);
  if (!v) throw std::invalid_argument(std::string("missing field ") + key);
  return *v;
}

}  // namespace detail

inline FormalStatement statement_from_json(const json& j) {
  FormalStatement s;
  s.id = detail::req_string(j, "id");
  s.full_name = detail::req_string(j, "full_name");
  s.statement_text = detail::req_string(j, "statement_text");
  s.informalization = detail::opt_string(j, "informalization");
  const auto src = detail::req_string(j, "source");
  auto parsed = parse_source(src);
  if (!parsed) throw std::invalid_argument("unknown source " + src);
  s.source = *parsed;
  s.module_path = detail::opt_string(j, "module_path");
  if (auto it = j.find("line"); it != j.end() && !it->is_null()) s.line = it->get<int>();
  s.docstring = detail::opt_string(j, "docstring");
  if (auto it = j.find("dependencies"); it != j.end() && !it->is_null())
    s.dependencies = it->get<std::vector<std::string>>();
  return s;
}

/// Statement collection with id lookup. After construction only
/// informalizations may change. Safe for concurrent reads.
class Corpus {
 public:
  Corpus() = default;

  /// Validates invariants (unique ids, non-empty names and texts).
  explicit Corpus(std::vector<FormalStatement> statements) : statements_(std::move(statements)) {
    by_id_.reserve(statements_.size());
    for (std::size_t i = 0; i < statements_.size(); ++i) {
      const auto& s = statements_[i];
      if (s.id.empty()) throw Error(ErrorCode::InvalidRecord, "#" + std::to_string(i), "empty id");
      if (trim(s.full_name).empty())
        throw Error(ErrorCode::InvalidRecord, s.id, "empty full_name");
      if (trim(s.statement_text).empty()) throw Error(ErrorCode::EmptyStatement, s.id);
      if (!by_id_.emplace(s.id, i).second) throw Error(ErrorCode::DuplicateId, s.id);
    }
  }

  std::size_t size() const { return statements_.size(); }
  bool empty() const { return statements_.empty(); }
  const std::vector<FormalStatement>& statements() const { return statements_; }
  const FormalStatement& operator[](std::size_t i) const { return statements_[i]; }

  bool contains(const std::string& id) const { return by_id_.count(id) > 0; }

  void set_informalization(std::size_t i, std::string text) {
    statements_.at(i).informalization = std::move(text);
  }

  const FormalStatement* find(const std::string& id) const {
    auto it = by_id_.find(id);
    return it == by_id_.end() ? nullptr : &statements_[it->second];
  }

  std::size_t index_of(const std::string& id) const {
    auto it = by_id_.find(id);
    if (it == by_id_.end()) throw Error(ErrorCode::UnresolvedGold, id);
    return it->second;
  }

  std::map<Source, std::size_t> source_histogram() const {
    std::map<Source, std::size_t> h;
    for (auto src : kAllSources) h[src] = 0;
    for (const auto& s : statements_) ++h[s.source];
    return h;
  }

  std::string to_jsonl() const {
    std::string out;
    for (const auto& s : statements_) out += to_json(s).dump() + "\n";
    return out;
  }

 private:
  std::vector<FormalStatement> statements_;
  std::unordered_map<std::string, std::size_t> by_id_;
};

/// Parses one statement per line. Blank lines are skipped.
inline Corpus parse_corpus(std::string_view content) {
  std::vector<FormalStatement> out;
  std::unordered_set<std::string> seen;
  std::istringstream in{std::string(content)};
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    FormalStatement s;
    try {
      s = statement_from_json(json::parse(line));
    } catch (const std::exception& e) {
      throw Error(ErrorCode::MalformedLine, std::to_string(line_no), e.what());
    }
    if (trim(s.statement_text).empty()) throw Error(ErrorCode::EmptyStatement, s.id);
    if (!seen.insert(s.id).second) throw Error(ErrorCode::DuplicateId, s.id);
    out.push_back(std::move(s));
  }
  return Corpus(std::move(out));
}

inline Corpus ingest_corpus(const std::string& path) { return parse_corpus(read_file(path)); }

using ModalityCounts = std::map<Modality, std::size_t>;

inline ModalityCounts modality_counts(const std::vector<QueryRecord>& queries) {
  ModalityCounts c;
  for (auto m : kAllModalities) c[m] = 0;
  for (const auto& q : queries) ++c[q.modality];
  return c;
}

inline std::vector<QueryRecord> parse_queries(std::string_view content, const Corpus& corpus) {
  std::vector<QueryRecord> out;
  std::istringstream in{std::string(content)};
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    json j;
    QueryRecord q;
    std::string modality;
    try {
      j = json::parse(line);
      q.id = detail::req_string(j, "id");
      modality = detail::req_string(j, "modality");
      q.text = detail::req_string(j, "text");
      q.gold_id = detail::req_string(j, "gold_id");
      q.cluster = detail::opt_string(j, "cluster");
    } catch (const std::exception& e) {
      throw Error(ErrorCode::MalformedLine, std::to_string(line_no), e.what());
    }
    auto m = parse_modality(modality);
    if (!m) throw Error(ErrorCode::UnknownModality, q.id, modality);
    q.modality = *m;
    if (q.cluster.has_value() != (q.modality == Modality::synthetic_user_query))
      throw Error(ErrorCode::InvalidRecord, q.id,
                  "cluster must be present exactly for synthetic_user_query");
    if (!corpus.contains(q.gold_id)) throw Error(ErrorCode::UnresolvedGold, q.id);
    out.push_back(std::move(q));
  }
  return out;
}

inline std::vector<QueryRecord> load_queries(const std::string& path, const Corpus& corpus) {
  return parse_queries(read_file(path), corpus);
}

inline std::string queries_to_jsonl(const std::vector<QueryRecord>& queries) {
  std::string out;
  for (const auto& q : queries) out += to_json(q).dump() + "\n";
  return out;
}

struct DatasetSplit {
  std::vector<QueryRecord> train;
  std::vector<QueryRecord> test;
  std::uint64_t seed = 0;
};

/// Throws SplitOverlap if a test query shares an id or its exact text with train.
inline void validate_split(const DatasetSplit& split) {
  std::unordered_set<std::string> ids, texts;
  for (const auto& q : split.train) {
    ids.insert(q.id);
    texts.insert(q.text);
  }
  for (const auto& q : split.test) {
    if (ids.count(q.id)) throw Error(ErrorCode::SplitOverlap, q.id, "id in both splits");
    if (texts.count(q.text)) throw Error(ErrorCode::SplitOverlap, q.id, "text appears in train");
  }
}

/// Seeded random split by query. Test candidates whose text also occurs in the
/// training portion are moved to train so the verbatim-exclusion rule holds.
inline DatasetSplit split_queries(std::vector<QueryRecord> queries, double test_fraction,
                                  std::uint64_t seed) {
  std::sort(queries.begin(), queries.end(),
            [](const QueryRecord& a, const QueryRecord& b) { return a.id < b.id; });
  std::mt19937_64 rng(seed);
  std::shuffle(queries.begin(), queries.end(), rng);
  const auto n_test = static_cast<std::size_t>(test_fraction * static_cast<double>(queries.size()));
  DatasetSplit split;
  split.seed = seed;
  std::unordered_set<std::string> train_texts;
  for (std::size_t i = n_test; i < queries.size(); ++i) train_texts.insert(queries[i].text);
  for (std::size_t i = 0; i < queries.size(); ++i) {
    if (i < n_test && !train_texts.count(queries[i].text))
      split.test.push_back(queries[i]);
    else
      split.train.push_back(queries[i]);
  }
  auto by_id = [](const QueryRecord& a, const QueryRecord& b) { return a.id < b.id; };
  std::sort(split.train.begin(), split.train.end(), by_id);
  std::sort(split.test.begin(), split.test.end(), by_id);
  validate_split(split);
  return split;
}

}  // namespace fsearch
