#pragma once

#include <algorithm>
#include <cctype>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <mutex>
#include <optional>
#include <set>
#include <string>
#include <tuple>
#include <vector>

#include <json.hpp>

#include "corpus.hpp"
#include "evaluation.hpp"
#include "generator.hpp"
#include "index.hpp"
#include "objectives.hpp"

namespace fsearch {

enum class FeedbackKind { statement_vote, arena_vote };

inline std::string_view to_string(FeedbackKind k) {
  return k == FeedbackKind::statement_vote ? "statement_vote" : "arena_vote";
}

enum class Vote { up, down };

inline std::string_view to_string(Vote v) { return v == Vote::up ? "up" : "down"; }

inline std::optional<Vote> parse_vote(std::string_view s) {
  if (s == "up") return Vote::up;
  if (s == "down") return Vote::down;
  return std::nullopt;
}

enum class ArenaOutcome { a_better, b_better, tie, both_bad };

inline std::string_view to_string(ArenaOutcome o) {
  switch (o) {
    case ArenaOutcome::a_better: return "a_better";
    case ArenaOutcome::b_better: return "b_better";
    case ArenaOutcome::tie: return "tie";
    case ArenaOutcome::both_bad: return "both_bad";
  }
  return "?";
}

inline std::optional<ArenaOutcome> parse_outcome(std::string_view s) {
  for (auto o : {ArenaOutcome::a_better, ArenaOutcome::b_better, ArenaOutcome::tie,
                 ArenaOutcome::both_bad})
    if (to_string(o) == s) return o;
  return std::nullopt;
}

struct ArenaSide {
  std::string engine;
  std::vector<std::string> ids;
};

struct ArenaSession {
  std::string session_id;
  std::string query_text;
  ArenaSide side_a;
  ArenaSide side_b;
};

/// Arena verdict attributed to engines rather than sides.
struct ArenaVerdict {
  enum class Kind { win, tie, both_bad } kind = Kind::both_bad;
  std::string query_text;
  std::string session_id;
  ArenaSide winner;  // for ties: side A
  ArenaSide loser;   // for ties: side B
};

inline ArenaVerdict attribute(const ArenaSession& s, ArenaOutcome o) {
  ArenaVerdict v;
  v.query_text = s.query_text;
  v.session_id = s.session_id;
  switch (o) {
    case ArenaOutcome::a_better:
      v.kind = ArenaVerdict::Kind::win;
      v.winner = s.side_a;
      v.loser = s.side_b;
      break;
    case ArenaOutcome::b_better:
      v.kind = ArenaVerdict::Kind::win;
      v.winner = s.side_b;
      v.loser = s.side_a;
      break;
    case ArenaOutcome::tie:
      v.kind = ArenaVerdict::Kind::tie;
      v.winner = s.side_a;
      v.loser = s.side_b;
      break;
    case ArenaOutcome::both_bad:
      v.kind = ArenaVerdict::Kind::both_bad;
      v.winner = s.side_a;
      v.loser = s.side_b;
      break;
  }
  return v;
}

struct FeedbackEvent {
  std::uint64_t event_id = 0;
  std::string timestamp;
  std::string query_text;
  FeedbackKind kind = FeedbackKind::statement_vote;
  nlohmann::ordered_json payload;
};

inline nlohmann::ordered_json to_json(const FeedbackEvent& e) {
  nlohmann::ordered_json j;
  j["event_id"] = e.event_id;
  j["timestamp"] = e.timestamp;
  j["query_text"] = e.query_text;
  j["kind"] = std::string(to_string(e.kind));
  j["payload"] = e.payload;
  return j;
}

inline FeedbackEvent event_from_json(const nlohmann::ordered_json& j) {
  FeedbackEvent e;
  e.event_id = j.at("event_id").get<std::uint64_t>();
  e.timestamp = j.at("timestamp").get<std::string>();
  e.query_text = j.at("query_text").get<std::string>();
  const auto kind = j.at("kind").get<std::string>();
  if (kind == "statement_vote")
    e.kind = FeedbackKind::statement_vote;
  else if (kind == "arena_vote")
    e.kind = FeedbackKind::arena_vote;
  else
    throw Error(ErrorCode::InvalidRecord, std::to_string(e.event_id), "unknown kind " + kind);
  e.payload = j.at("payload");
  return e;
}

inline nlohmann::ordered_json statement_vote_payload(const std::string& query_id,
                                                     const std::string& statement_id, Vote v,
                                                     const std::string& user = {}) {
  nlohmann::ordered_json p;
  p["query_id"] = query_id;
  p["statement_id"] = statement_id;
  p["vote"] = std::string(to_string(v));
  if (!user.empty()) p["user"] = user;
  return p;
}

inline nlohmann::ordered_json arena_vote_payload(const ArenaSession& s, ArenaOutcome o) {
  const auto v = attribute(s, o);
  nlohmann::ordered_json p;
  p["session_id"] = s.session_id;
  p["verdict"] = v.kind == ArenaVerdict::Kind::win   ? "win"
                 : v.kind == ArenaVerdict::Kind::tie ? "tie"
                                                     : "both_bad";
  if (v.kind == ArenaVerdict::Kind::win) {
    p["winner"] = v.winner.engine;
    p["loser"] = v.loser.engine;
  }
  nlohmann::ordered_json results;
  results[s.side_a.engine] = s.side_a.ids;
  results[s.side_b.engine] = s.side_b.ids;
  p["results"] = results;
  p["assignment"] = {{"side_a", s.side_a.engine}, {"side_b", s.side_b.engine}};
  return p;
}

/// Rebuilds the session and the outcome as voted from a logged arena event.
inline std::pair<ArenaSession, ArenaOutcome> session_from_event(const FeedbackEvent& e) {
  const auto& p = e.payload;
  ArenaSession s;
  s.session_id = p.at("session_id").get<std::string>();
  s.query_text = e.query_text;
  s.side_a.engine = p.at("assignment").at("side_a").get<std::string>();
  s.side_b.engine = p.at("assignment").at("side_b").get<std::string>();
  s.side_a.ids = p.at("results").at(s.side_a.engine).get<std::vector<std::string>>();
  s.side_b.ids = p.at("results").at(s.side_b.engine).get<std::vector<std::string>>();
  const auto verdict = p.at("verdict").get<std::string>();
  ArenaOutcome o;
  if (verdict == "win")
    o = p.at("winner").get<std::string>() == s.side_a.engine ? ArenaOutcome::a_better
                                                             : ArenaOutcome::b_better;
  else if (verdict == "tie")
    o = ArenaOutcome::tie;
  else if (verdict == "both_bad")
    o = ArenaOutcome::both_bad;
  else
    throw Error(ErrorCode::InvalidRecord, std::to_string(e.event_id), "unknown verdict " + verdict);
  return {s, o};
}

inline std::string default_clock() { return utc_timestamp(); }

/// Append-only JSONL event log. One writer lock; each append is flushed
/// before it returns, so an acknowledged event is on disk.
class FeedbackLog {
 public:
  using Clock = std::function<std::string()>;

  explicit FeedbackLog(std::optional<std::string> path = std::nullopt, Clock clock = default_clock)
      : path_(std::move(path)), clock_(std::move(clock)) {
    if (path_ && std::filesystem::exists(*path_)) events_ = parse(read_file(*path_));
    if (!events_.empty()) next_id_ = events_.back().event_id + 1;
    if (path_) {
      out_.open(*path_, std::ios::app | std::ios::binary);
      if (!out_) throw Error(ErrorCode::IoError, *path_, "cannot open feedback log");
    }
  }

  FeedbackEvent append(FeedbackKind kind, std::string query_text, nlohmann::ordered_json payload) {
    std::lock_guard lock(mu_);
    FeedbackEvent e{next_id_++, clock_(), std::move(query_text), kind, std::move(payload)};
    if (out_.is_open()) {
      out_ << to_json(e).dump() << '\n';
      out_.flush();
      if (!out_) throw Error(ErrorCode::IoError, *path_, "append failed");
    }
    events_.push_back(e);
    return e;
  }

  std::vector<FeedbackEvent> snapshot() const {
    std::lock_guard lock(mu_);
    return events_;
  }

  std::size_t size() const {
    std::lock_guard lock(mu_);
    return events_.size();
  }

  static std::vector<FeedbackEvent> parse(std::string_view jsonl) {
    std::vector<FeedbackEvent> out;
    std::size_t pos = 0, line_no = 0;
    while (pos < jsonl.size()) {
      auto end = jsonl.find('\n', pos);
      if (end == std::string_view::npos) end = jsonl.size();
      const auto line = trim(jsonl.substr(pos, end - pos));
      pos = end + 1;
      ++line_no;
      if (line.empty()) continue;
      try {
        out.push_back(event_from_json(nlohmann::ordered_json::parse(line)));
      } catch (const nlohmann::json::exception& e) {
        throw Error(ErrorCode::MalformedLine, std::to_string(line_no), e.what());
      }
      if (out.size() > 1 && out.back().event_id <= out[out.size() - 2].event_id)
        throw Error(ErrorCode::InvalidRecord, std::to_string(line_no), "event ids not increasing");
    }
    return out;
  }

  static std::vector<FeedbackEvent> load(const std::string& path) { return parse(read_file(path)); }

 private:
  std::optional<std::string> path_;
  Clock clock_;
  mutable std::mutex mu_;
  std::vector<FeedbackEvent> events_;
  std::uint64_t next_id_ = 1;
  std::ofstream out_;
};

/// Deduplicated triplets plus per-source counts.
class PreferenceSet {
 public:
  bool add(PreferenceTriplet t) {
    if (t.chosen == t.rejected) return false;
    if (!seen_.insert({t.query, t.chosen, t.rejected}).second) return false;
    ++counts_[t.source];
    triplets_.push_back(std::move(t));
    return true;
  }

  const std::vector<PreferenceTriplet>& triplets() const { return triplets_; }
  std::size_t size() const { return triplets_.size(); }
  std::size_t count(PreferenceSource s) const {
    auto it = counts_.find(s);
    return it == counts_.end() ? 0 : it->second;
  }

  void validate(const Corpus& corpus) const {
    for (const auto& t : triplets_) {
      if (!corpus.contains(t.chosen)) throw Error(ErrorCode::UnresolvedGold, t.chosen);
      if (!corpus.contains(t.rejected)) throw Error(ErrorCode::UnresolvedGold, t.rejected);
    }
  }

  std::string to_jsonl() const {
    std::string out;
    for (const auto& t : triplets_) {
      nlohmann::ordered_json j;
      j["query"] = t.query;
      j["chosen_id"] = t.chosen;
      j["rejected_id"] = t.rejected;
      j["source"] = std::string(to_string(t.source));
      out += j.dump() + "\n";
    }
    return out;
  }

  static PreferenceSet parse(std::string_view jsonl) {
    PreferenceSet s;
    std::size_t pos = 0, line_no = 0;
    while (pos < jsonl.size()) {
      auto end = jsonl.find('\n', pos);
      if (end == std::string_view::npos) end = jsonl.size();
      const auto line = trim(jsonl.substr(pos, end - pos));
      pos = end + 1;
      ++line_no;
      if (line.empty()) continue;
      try {
        const auto j = nlohmann::json::parse(line);
        const auto src = parse_preference_source(j.at("source").get<std::string>());
        if (!src) throw Error(ErrorCode::InvalidRecord, std::to_string(line_no), "unknown source");
        s.add({j.at("query").get<std::string>(), j.at("chosen_id").get<std::string>(),
               j.at("rejected_id").get<std::string>(), *src});
      } catch (const nlohmann::json::exception& e) {
        throw Error(ErrorCode::MalformedLine, std::to_string(line_no), e.what());
      }
    }
    return s;
  }

  static PreferenceSet load(const std::string& path) { return parse(read_file(path)); }

 private:
  std::vector<PreferenceTriplet> triplets_;
  std::set<std::tuple<std::string, std::string, std::string>> seen_;
  std::map<PreferenceSource, std::size_t> counts_;
};

/// Pairs every up-voted statement with every down-voted one, per query
/// text. A statement voted both ways on the same query is dropped.
inline std::vector<PreferenceTriplet> mine_statement_votes(std::span<const FeedbackEvent> log) {
  struct Votes {
    std::vector<std::string> up, down;  // first-seen order
  };
  std::vector<std::string> query_order;
  std::map<std::string, Votes> by_query;
  for (const auto& e : log) {
    if (e.kind != FeedbackKind::statement_vote) continue;
    const auto vote = parse_vote(e.payload.at("vote").get<std::string>());
    if (!vote) throw Error(ErrorCode::InvalidRecord, std::to_string(e.event_id), "bad vote");
    const auto id = e.payload.at("statement_id").get<std::string>();
    auto [it, fresh] = by_query.try_emplace(e.query_text);
    if (fresh) query_order.push_back(e.query_text);
    auto& list = *vote == Vote::up ? it->second.up : it->second.down;
    if (std::find(list.begin(), list.end(), id) == list.end()) list.push_back(id);
  }
  std::vector<PreferenceTriplet> out;
  for (const auto& q : query_order) {
    const auto& v = by_query[q];
    auto conflicted = [&](const std::string& id) {
      return std::find(v.up.begin(), v.up.end(), id) != v.up.end() &&
             std::find(v.down.begin(), v.down.end(), id) != v.down.end();
    };
    for (const auto& u : v.up) {
      if (conflicted(u)) continue;
      for (const auto& d : v.down)
        if (!conflicted(d)) out.push_back({q, u, d, PreferenceSource::statement_vote});
    }
  }
  return out;
}

struct JudgeLabel {
  std::string query;
  std::string statement_id;
  bool helpful = false;
};

/// Relevance judge on top of a generator client. Every label is kept so a
/// mining run can be audited and replayed.
class Judge {
 public:
  Judge(const Generator& gen, const Corpus& corpus) : gen_(&gen), corpus_(&corpus) {}

  bool helpful(const std::string& query, const std::string& statement_id) {
    const auto* s = corpus_->find(statement_id);
    if (!s) throw Error(ErrorCode::UnresolvedGold, statement_id);
    std::string text = s->full_name + " : " + s->statement_text;
    if (s->informalization) text += "\n" + *s->informalization;
    std::string raw;
    try {
      raw = gen_->run(TemplateId::judge_relevance,
                      {{"query", query}, {"statement_id", statement_id}, {"statement_text", text}});
    } catch (const Error& e) {
      if (e.code() == ErrorCode::GeneratorUnavailable)
        throw Error(ErrorCode::JudgeUnavailable, e.subject());
      throw;
    }
    std::string word = trim(raw);
    word = word.substr(0, word.find_first_of(" \n.\t"));
    std::transform(word.begin(), word.end(), word.begin(), [](unsigned char c) { return std::toupper(c); });
    bool h;
    if (word == "HELPFUL")
      h = true;
    else if (word == "UNHELPFUL")
      h = false;
    else
      throw Error(ErrorCode::UnparseableResponse, raw);
    labels_.push_back({query, statement_id, h});
    return h;
  }

  const std::vector<JudgeLabel>& labels() const { return labels_; }

 private:
  const Generator* gen_;
  const Corpus* corpus_;
  std::vector<JudgeLabel> labels_;
};

inline bool contains_id(const std::vector<std::string>& v, const std::string& id) {
  return std::find(v.begin(), v.end(), id) != v.end();
}

/// Winner: c+ are judged-helpful statements only the winner returned, c- are
/// judged-unhelpful statements from the loser's list. Tie: c+ come from the
/// intersection, c- from either side. Both bad: nothing.
inline std::vector<PreferenceTriplet> refine_arena(const ArenaSession& session, ArenaOutcome outcome,
                                                   Judge& judge) {
  const auto v = attribute(session, outcome);
  if (v.kind == ArenaVerdict::Kind::both_bad) return {};
  const auto& q = session.query_text;
  std::vector<std::string> pos_pool, neg_pool;
  if (v.kind == ArenaVerdict::Kind::win) {
    for (const auto& id : v.winner.ids)
      if (!contains_id(v.loser.ids, id)) pos_pool.push_back(id);
    if (pos_pool.empty())
      throw Error(ErrorCode::JudgeInconsistent, session.session_id, "winner adds nothing over loser");
    neg_pool = v.loser.ids;
  } else {
    for (const auto& id : v.winner.ids)
      if (contains_id(v.loser.ids, id)) pos_pool.push_back(id);
    if (pos_pool.empty())
      throw Error(ErrorCode::JudgeInconsistent, session.session_id, "tie with disjoint lists");
    neg_pool = v.winner.ids;
    for (const auto& id : v.loser.ids)
      if (!contains_id(neg_pool, id)) neg_pool.push_back(id);
  }
  std::map<std::string, bool> label;
  auto judged = [&](const std::string& id) {
    auto it = label.find(id);
    if (it == label.end()) it = label.emplace(id, judge.helpful(q, id)).first;
    return it->second;
  };
  std::vector<std::string> chosen, rejected;
  for (const auto& id : pos_pool)
    if (judged(id)) chosen.push_back(id);
  for (const auto& id : neg_pool)
    if (!judged(id)) rejected.push_back(id);
  if (chosen.empty())
    throw Error(ErrorCode::JudgeInconsistent, session.session_id, "no helpful candidate");
  if (v.kind == ArenaVerdict::Kind::win && rejected.empty())
    throw Error(ErrorCode::JudgeInconsistent, session.session_id, "loser has no unhelpful result");
  std::vector<PreferenceTriplet> out;
  for (const auto& c : chosen)
    for (const auto& r : rejected) out.push_back({q, c, r, PreferenceSource::arena_refined});
  return out;
}

/// Retrieves top-k per query, judges each hit, pairs helpful x unhelpful.
template <TextEncoder E>
std::vector<PreferenceTriplet> mine_judged_queries(std::span<const std::string> queries,
                                                   const VectorIndex& index, const E& enc,
                                                   Judge& judge, std::size_t k = 10) {
  std::vector<PreferenceTriplet> out;
  for (const auto& q : queries) {
    std::vector<std::string> good, bad;
    for (const auto& r : index.search(q, enc, k)) (judge.helpful(q, r.id) ? good : bad).push_back(r.id);
    for (const auto& g : good)
      for (const auto& b : bad) out.push_back({q, g, b, PreferenceSource::judged_zulip});
  }
  return out;
}

struct SkippedSession {
  std::string session_id;
  std::string reason;
};

struct MiningResult {
  PreferenceSet preferences;
  std::vector<SkippedSession> skipped;
  std::vector<JudgeLabel> labels;
};

/// Offline mining over a log snapshot: statement votes first, then arena
/// sessions in log order. Judge failures other than inconsistency abort.
inline MiningResult mine_preferences(std::span<const FeedbackEvent> log, const Generator& judge_gen,
                                     const Corpus& corpus) {
  MiningResult res;
  for (auto& t : mine_statement_votes(log)) res.preferences.add(std::move(t));
  Judge judge(judge_gen, corpus);
  for (const auto& e : log) {
    if (e.kind != FeedbackKind::arena_vote) continue;
    const auto [session, outcome] = session_from_event(e);
    try {
      for (auto& t : refine_arena(session, outcome, judge)) res.preferences.add(std::move(t));
    } catch (const Error& err) {
      if (err.code() != ErrorCode::JudgeInconsistent) throw;
      res.skipped.push_back({session.session_id, err.what()});
    }
  }
  res.preferences.validate(corpus);
  res.labels = judge.labels();
  return res;
}

}  // namespace fsearch
