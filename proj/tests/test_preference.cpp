#include <gtest/gtest.h>

#include <cstdio>
#include <set>

#include "fsearch/preference.hpp"
#include "test_support.hpp"

using namespace fsearch;

namespace {

FeedbackLog::Clock fixed_clock() {
  auto n = std::make_shared<int>(0);
  return [n] {
    char buf[32];
    std::snprintf(buf, sizeof buf, "2026-01-01T00:%02d:%02dZ", *n / 60 % 60, *n % 60);
    ++*n;
    return std::string(buf);
  };
}

ArenaSession session(std::string id, std::string query, ArenaSide a, ArenaSide b) {
  return {std::move(id), std::move(query), std::move(a), std::move(b)};
}

/// Judge that finds a statement helpful iff its id is in the set.
struct SetJudge {
  std::set<std::string> helpful;
  int calls = 0;
  FunctionClient client{[this](const GeneratorRequest& r) {
    ++calls;
    return helpful.count(r.variables.at("statement_id")) ? "HELPFUL" : "UNHELPFUL";
  }};
  Generator gen{client};
};

void vote(FeedbackLog& log, const std::string& q, const std::string& sid, Vote v) {
  log.append(FeedbackKind::statement_vote, q, statement_vote_payload("q-1", sid, v));
}

}  // namespace

TEST(Arena, AttributionFollowsSides) {
  const auto s = session("x", "q", {"alpha", {"s1"}}, {"beta", {"s2"}});
  auto v = attribute(s, ArenaOutcome::a_better);
  EXPECT_EQ(v.kind, ArenaVerdict::Kind::win);
  EXPECT_EQ(v.winner.engine, "alpha");
  v = attribute(s, ArenaOutcome::b_better);
  EXPECT_EQ(v.winner.engine, "beta");
  EXPECT_EQ(v.loser.engine, "alpha");
  EXPECT_EQ(attribute(s, ArenaOutcome::tie).kind, ArenaVerdict::Kind::tie);
  EXPECT_EQ(attribute(s, ArenaOutcome::both_bad).kind, ArenaVerdict::Kind::both_bad);
  for (auto o : {ArenaOutcome::a_better, ArenaOutcome::b_better, ArenaOutcome::tie, ArenaOutcome::both_bad})
    EXPECT_EQ(parse_outcome(to_string(o)), o);
  EXPECT_FALSE(parse_outcome("draw"));
}

TEST(Arena, PayloadRoundTrip) {
  const auto s = session("sess", "query text", {"beta", {"s2", "s3"}}, {"alpha", {"s1"}});
  for (auto o : {ArenaOutcome::a_better, ArenaOutcome::b_better, ArenaOutcome::tie, ArenaOutcome::both_bad}) {
    FeedbackEvent e{7, "t", s.query_text, FeedbackKind::arena_vote, arena_vote_payload(s, o)};
    const auto back = event_from_json(nlohmann::ordered_json::parse(to_json(e).dump()));
    const auto [s2, o2] = session_from_event(back);
    EXPECT_EQ(o2, o);
    EXPECT_EQ(s2.side_a.engine, "beta");
    EXPECT_EQ(s2.side_b.ids, std::vector<std::string>{"s1"});
    EXPECT_EQ(s2.session_id, "sess");
  }
  const auto p = arena_vote_payload(s, ArenaOutcome::b_better);
  EXPECT_EQ(p["winner"], "alpha");
  EXPECT_EQ(p["loser"], "beta");
}

TEST(FeedbackLog, AppendsAreDurableAndIdsContinue) {
  tsupport::TempDir dir;
  const auto path = dir.file("feedback.jsonl");
  {
    FeedbackLog log(path, fixed_clock());
    vote(log, "q", "s1", Vote::up);
    const auto e = log.append(FeedbackKind::statement_vote, "q", statement_vote_payload("q-1", "s2", Vote::down));
    EXPECT_EQ(e.event_id, 2u);
    // Visible on disk before the log is closed.
    EXPECT_EQ(FeedbackLog::load(path).size(), 2u);
  }
  FeedbackLog again(path, fixed_clock());
  EXPECT_EQ(again.size(), 2u);
  EXPECT_EQ(again.append(FeedbackKind::statement_vote, "q", statement_vote_payload("q", "s3", Vote::up)).event_id, 3u);
  const auto events = FeedbackLog::load(path);
  ASSERT_EQ(events.size(), 3u);
  EXPECT_EQ(events[0].timestamp, "2026-01-01T00:00:00Z");
  EXPECT_EQ(events[2].payload["statement_id"], "s3");
}

TEST(FeedbackLog, RejectsMalformedInput) {
  try {
    FeedbackLog::parse("{\"event_id\":1}\n");
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::MalformedLine);
  }
  const std::string line =
      R"({"event_id":2,"timestamp":"t","query_text":"q","kind":"statement_vote","payload":{}})";
  EXPECT_THROW(FeedbackLog::parse(line + "\n" + line + "\n"), Error);
  EXPECT_EQ(FeedbackLog::parse("\n" + line + "\n\n").size(), 1u);
}

TEST(StatementVotes, TwoUpThreeDownGivesSix) {
  FeedbackLog log(std::nullopt, fixed_clock());
  for (auto id : {"u1", "u2"}) vote(log, "q", id, Vote::up);
  for (auto id : {"d1", "d2", "d3"}) vote(log, "q", id, Vote::down);
  const auto events = log.snapshot();
  const auto t = mine_statement_votes(events);
  ASSERT_EQ(t.size(), 6u);
  EXPECT_EQ(t[0], (PreferenceTriplet{"q", "u1", "d1", PreferenceSource::statement_vote}));
  EXPECT_EQ(t[5], (PreferenceTriplet{"q", "u2", "d3", PreferenceSource::statement_vote}));
}

TEST(StatementVotes, GroupsByQueryAndDropsConflicts) {
  FeedbackLog log(std::nullopt, fixed_clock());
  vote(log, "q1", "a", Vote::up);
  vote(log, "q2", "b", Vote::down);
  vote(log, "q1", "b", Vote::down);
  vote(log, "q1", "c", Vote::up);
  vote(log, "q1", "c", Vote::down);  // c conflicted on q1
  vote(log, "q1", "a", Vote::up);    // repeat vote counts once
  vote(log, "q2", "a", Vote::up);
  log.append(FeedbackKind::arena_vote, "q1",
             arena_vote_payload(session("s", "q1", {"x", {"a"}}, {"y", {"b"}}), ArenaOutcome::a_better));
  const auto events = log.snapshot();
  const auto t = mine_statement_votes(events);
  ASSERT_EQ(t.size(), 2u);
  EXPECT_EQ(t[0], (PreferenceTriplet{"q1", "a", "b", PreferenceSource::statement_vote}));
  EXPECT_EQ(t[1], (PreferenceTriplet{"q2", "a", "b", PreferenceSource::statement_vote}));
}

TEST(PreferenceSet, DedupesCountsAndRoundTrips) {
  PreferenceSet s;
  EXPECT_TRUE(s.add({"q", "a", "b", PreferenceSource::statement_vote}));
  EXPECT_FALSE(s.add({"q", "a", "b", PreferenceSource::arena_refined}));
  EXPECT_FALSE(s.add({"q", "a", "a", PreferenceSource::statement_vote}));
  EXPECT_TRUE(s.add({"q", "b", "a", PreferenceSource::judged_zulip}));
  EXPECT_EQ(s.size(), 2u);
  EXPECT_EQ(s.count(PreferenceSource::statement_vote), 1u);
  EXPECT_EQ(s.count(PreferenceSource::arena_refined), 0u);
  EXPECT_EQ(s.to_jsonl(),
            "{\"query\":\"q\",\"chosen_id\":\"a\",\"rejected_id\":\"b\",\"source\":\"statement_vote\"}\n"
            "{\"query\":\"q\",\"chosen_id\":\"b\",\"rejected_id\":\"a\",\"source\":\"judged_zulip\"}\n");
  EXPECT_EQ(PreferenceSet::parse(s.to_jsonl()).to_jsonl(), s.to_jsonl());
  EXPECT_THROW(PreferenceSet::parse("{\"query\":\"q\",\"chosen_id\":\"a\",\"rejected_id\":\"b\",\"source\":\"x\"}"),
               Error);
  const auto corpus = Corpus({tsupport::statement("a", "A", "t a")});
  try {
    s.validate(corpus);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::UnresolvedGold);
  }
}

TEST(Judge, ParsesLabelsAndMapsErrors) {
  const auto corpus = tsupport::numbered_corpus(2);
  std::string answer;
  FunctionClient c([&](const GeneratorRequest& r) {
    EXPECT_EQ(r.temperature, 0.0);
    EXPECT_NE(r.variables.at("statement_text").find("Test.lemma1"), std::string::npos);
    return answer;
  });
  Generator g(c);
  Judge j(g, corpus);
  answer = " helpful.";
  EXPECT_TRUE(j.helpful("q", "s1"));
  answer = "Unhelpful because it is about g";
  EXPECT_FALSE(j.helpful("q", "s1"));
  answer = "maybe";
  EXPECT_THROW(j.helpful("q", "s1"), Error);
  EXPECT_EQ(j.labels().size(), 2u);
  EXPECT_THROW(j.helpful("q", "missing"), Error);

  UnavailableClient down;
  Generator gd(down);
  Judge jd(gd, corpus);
  try {
    jd.helpful("q", "s0");
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::JudgeUnavailable);
  }
}

TEST(RefineArena, WinnerPairsUniqueHelpfulWithLoserUnhelpful) {
  const auto corpus = tsupport::numbered_corpus(8);
  SetJudge sj{{"s1", "s2", "s3", "s6"}};
  Judge judge(sj.gen, corpus);
  const auto s = session("x", "q", {"alpha", {"s1", "s2", "s3", "s7"}}, {"beta", {"s2", "s4", "s5", "s6"}});
  const auto t = refine_arena(s, ArenaOutcome::a_better, judge);
  // c+ = {s1, s3} (s2 is shared, s7 unhelpful); c- = {s4, s5} (s2, s6 helpful).
  const std::vector<PreferenceTriplet> expect{{"q", "s1", "s4", PreferenceSource::arena_refined},
                                              {"q", "s1", "s5", PreferenceSource::arena_refined},
                                              {"q", "s3", "s4", PreferenceSource::arena_refined},
                                              {"q", "s3", "s5", PreferenceSource::arena_refined}};
  EXPECT_EQ(t, expect);
  EXPECT_EQ(sj.calls, 7);  // each distinct id judged once
}

TEST(RefineArena, TieUsesIntersectionForPositives) {
  const auto corpus = tsupport::numbered_corpus(6);
  SetJudge sj{{"s2"}};
  Judge judge(sj.gen, corpus);
  const auto s = session("x", "q", {"alpha", {"s1", "s2"}}, {"beta", {"s2", "s3"}});
  const auto t = refine_arena(s, ArenaOutcome::tie, judge);
  ASSERT_EQ(t.size(), 2u);
  EXPECT_EQ(t[0].chosen, "s2");
  EXPECT_EQ(t[0].rejected, "s1");
  EXPECT_EQ(t[1].rejected, "s3");
  const auto disjoint = session("y", "q", {"alpha", {"s1"}}, {"beta", {"s3"}});
  try {
    refine_arena(disjoint, ArenaOutcome::tie, judge);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::JudgeInconsistent);
  }
}

TEST(RefineArena, BothBadYieldsNothingWithoutJudging) {
  const auto corpus = tsupport::numbered_corpus(4);
  SetJudge sj{{"s0", "s1"}};
  Judge judge(sj.gen, corpus);
  const auto s = session("x", "q", {"alpha", {"s0", "s1"}}, {"beta", {"s2", "s3"}});
  EXPECT_TRUE(refine_arena(s, ArenaOutcome::both_bad, judge).empty());
  EXPECT_EQ(sj.calls, 0);
}

TEST(RefineArena, InconsistentCases) {
  const auto corpus = tsupport::numbered_corpus(4);
  SetJudge sj{{"s0", "s1", "s2", "s3"}};
  Judge judge(sj.gen, corpus);
  auto code = [&](const ArenaSession& s, ArenaOutcome o) {
    try {
      refine_arena(s, o, judge);
    } catch (const Error& e) {
      return e.code();
    }
    return ErrorCode::PreconditionViolation;
  };
  EXPECT_EQ(code(session("a", "q", {"x", {"s0"}}, {"y", {"s0", "s1"}}), ArenaOutcome::a_better),
            ErrorCode::JudgeInconsistent);
  EXPECT_EQ(code(session("b", "q", {"x", {"s0"}}, {"y", {"s1"}}), ArenaOutcome::a_better),
            ErrorCode::JudgeInconsistent);  // loser has nothing unhelpful
  sj.helpful.clear();
  EXPECT_EQ(code(session("c", "q", {"x", {"s0"}}, {"y", {"s1"}}), ArenaOutcome::b_better),
            ErrorCode::JudgeInconsistent);  // winner has nothing helpful
}

TEST(MinePreferences, ReplayIsByteIdentical) {
  const auto corpus = tsupport::numbered_corpus(10);
  tsupport::TempDir dir;
  const auto log_path = dir.file("feedback.jsonl");
  {
    FeedbackLog log(log_path, fixed_clock());
    vote(log, "q1", "s0", Vote::up);
    vote(log, "q1", "s1", Vote::down);
    auto arena = [&](const char* id, ArenaSide a, ArenaSide b, ArenaOutcome o) {
      log.append(FeedbackKind::arena_vote, "q2", arena_vote_payload(session(id, "q2", a, b), o));
    };
    arena("w", {"alpha", {"s2", "s3"}}, {"beta", {"s4", "s5"}}, ArenaOutcome::b_better);
    arena("t", {"alpha", {"s2", "s6"}}, {"beta", {"s6", "s7"}}, ArenaOutcome::tie);
    arena("bad", {"alpha", {"s8"}}, {"beta", {"s9"}}, ArenaOutcome::both_bad);
    arena("inc", {"alpha", {"s2"}}, {"beta", {"s2"}}, ArenaOutcome::a_better);
  }
  SetJudge sj{{"s4", "s6"}};
  RecordingClient rec(sj.client);
  Generator g1(rec);
  const auto events = FeedbackLog::load(log_path);
  const auto first = mine_preferences(events, g1, corpus);
  write_file(dir.file("judge.jsonl"), rec.transcript_jsonl());

  auto replay = ReplayClient::parse(read_file(dir.file("judge.jsonl")));
  Generator g2(replay);
  const auto reloaded = FeedbackLog::load(log_path);
  const auto second = mine_preferences(reloaded, g2, corpus);
  EXPECT_EQ(second.preferences.to_jsonl(), first.preferences.to_jsonl());
  EXPECT_EQ(first.preferences.count(PreferenceSource::statement_vote), 1u);
  // Win for beta: c+ = {s4}, c- = {s2, s3}. Tie: c+ = {s6}, c- = {s2, s7}.
  EXPECT_EQ(first.preferences.count(PreferenceSource::arena_refined), 4u);
  ASSERT_EQ(first.skipped.size(), 1u);
  EXPECT_EQ(first.skipped[0].session_id, "inc");
  EXPECT_EQ(first.labels.size(), 7u);
}

TEST(MineJudgedQueries, PairsHelpfulWithUnhelpfulHits) {
  const auto corpus = tsupport::numbered_corpus(5);
  EncoderConfig ec;
  ec.feature_dim = 4096;
  ec.embed_dim = 16;
  const auto p = EncoderParams::random(ec);
  HashedEncoder enc(p);
  const auto index = build_index(corpus, enc);
  SetJudge sj{{"s1", "s2"}};
  Judge judge(sj.gen, corpus);
  const std::vector<std::string> queries{"f1 x1"};
  const auto t = mine_judged_queries(std::span<const std::string>(queries), index, enc, judge, 5);
  EXPECT_EQ(t.size(), 6u);
  for (const auto& x : t) {
    EXPECT_TRUE(x.chosen == "s1" || x.chosen == "s2");
    EXPECT_EQ(x.source, PreferenceSource::judged_zulip);
  }
}
