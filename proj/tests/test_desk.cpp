#include <gtest/gtest.h>

#include <cmath>
#include <set>

#include "fsearch/desk.hpp"
#include "fsearch/preference.hpp"

using namespace fsearch;

namespace {

struct DeskData {
  desk::Dataset data = desk::make_dataset(7);
  desk::DeskGenerator client{7, data.transitions, &data.corpus};
  Generator gen{client};
  SynthesisOutput out =
      synthesize_dataset<HashedEncoder>(data.corpus, default_clusters(), data.transitions, gen, nullptr);
};

const DeskData& desk_data() {
  static const DeskData d;
  return d;
}

}  // namespace

TEST(DeskCorpus, ShapeAndMetadata) {
  const auto corpus = desk::make_corpus();
  ASSERT_EQ(corpus.size(), 1000u);
  std::set<std::string> names;
  std::map<Source, int> sources;
  int docstrings = 0, with_deps = 0;
  for (const auto& s : corpus.statements()) {
    EXPECT_TRUE(names.insert(s.full_name).second);
    ++sources[s.source];
    docstrings += s.docstring.has_value();
    with_deps += !s.dependencies.empty();
    const auto c = desk::parse_full_name(s.full_name);
    ASSERT_TRUE(c) << s.full_name;
    EXPECT_EQ(desk::statement_id(*c), s.id);
    EXPECT_EQ(s.statement_text.rfind("theorem " + s.full_name + " (", 0), 0u);
    for (const auto& d : s.dependencies) EXPECT_TRUE(corpus.contains(d));
  }
  EXPECT_EQ(sources[Source::library_dep], 20);
  EXPECT_EQ(sources[Source::research_repo], 10);
  EXPECT_EQ(sources[Source::mathlib], 970);
  EXPECT_EQ(docstrings, 200);
  EXPECT_EQ(with_deps, 100);
  EXPECT_EQ(corpus.find("desk-0000")->statement_text, "theorem Nat.add_comm (a b : ℕ) : a + b = b + a");
  EXPECT_EQ(corpus.find("desk-0049")->statement_text,
            "theorem Nat.pow_cancel (a b c : ℕ) (h : a ^ b = a ^ c) : b = c");
  EXPECT_FALSE(desk::parse_full_name("Nat.frobnicate_comm"));
  EXPECT_FALSE(desk::parse_full_name("Nat"));
}

TEST(DeskCorpus, TransitionsResolveAndAreSeeded) {
  const auto a = desk::make_dataset(7), b = desk::make_dataset(7), c = desk::make_dataset(8);
  ASSERT_EQ(a.transitions.size(), desk::kTransitions);
  std::size_t two = 0;
  for (std::size_t i = 0; i < a.transitions.size(); ++i) {
    const auto& t = a.transitions[i];
    EXPECT_EQ(to_json(t).dump(), to_json(b.transitions[i]).dump());
    ASSERT_FALSE(t.premises_used.empty());
    for (const auto& p : t.premises_used) EXPECT_TRUE(a.corpus.contains(p));
    EXPECT_NE(t.state_before.find("⊢ "), std::string::npos);
    two += t.premises_used.size() == 2;
  }
  // One in seven on average: 1200/7 = 171.4, sd about 12.
  EXPECT_GT(two, 120u);
  EXPECT_LT(two, 225u);
  EXPECT_NE(to_json(a.transitions[0]).dump() + to_json(a.transitions[1]).dump(),
            to_json(c.transitions[0]).dump() + to_json(c.transitions[1]).dump());
}

TEST(DeskGenerator, JudgeRuleFollowsOperationAndProperty) {
  const desk::Concept c{0, 0, 0};  // Nat.add_comm
  EXPECT_TRUE(desk::judged_helpful("for naturals, addition is commutative?", c));
  EXPECT_TRUE(desk::judged_helpful("Sums: does not depend on argument order", c));
  EXPECT_FALSE(desk::judged_helpful("is multiplication commutative?", c));
  EXPECT_FALSE(desk::judged_helpful("is addition commutativity", c));
  EXPECT_FALSE(desk::judged_helpful("addition with zero on the right", c));

  const auto corpus = desk::make_corpus();
  desk::DeskGenerator g(3);
  Generator gen(g);
  Judge judge(gen, corpus);
  EXPECT_TRUE(judge.helpful("Is there a lemma saying that sums of reals is commutative?", "desk-0000"));
  EXPECT_FALSE(judge.helpful("Is there a lemma saying that sums of reals is commutative?", "desk-0010"));
}

TEST(DeskGenerator, AnswersEveryTemplate) {
  const auto d = desk::make_dataset(7);
  desk::DeskGenerator client(7, d.transitions, &d.corpus);
  Generator gen(client);
  const auto& s = d.corpus[0];
  EXPECT_NE(gen.run(TemplateId::informalize, assemble_context(s, d.corpus).variables()).find("Commutativity"),
            std::string::npos);
  EXPECT_EQ(filter_answerable("no question here", gen), std::nullopt);
  EXPECT_EQ(filter_answerable(" How? ", gen), "How?");
  EXPECT_EQ(bootstrap_clusters({{"d", "q?"}}, gen), default_clusters());
  EXPECT_EQ(update_clusters({{"d", "q?"}}, default_clusters(), gen), default_clusters());
  const auto qs = augment_state(d.transitions[0], d.corpus, gen);
  ASSERT_FALSE(qs.empty());
  EXPECT_NE(qs[0].text.find("the fact that"), std::string::npos);
  GeneratorRequest bogus = gen.templates().request(TemplateId::informalize,
                                                   assemble_context(s, d.corpus).variables());
  bogus.variables["formal_name"] = "Not.desk";
  EXPECT_THROW(client.complete(bogus), Error);
}

TEST(DeskSynthesis, CountsAndClusterHistogram) {
  const auto& d = desk_data();
  const auto& st = d.out.stats;
  EXPECT_EQ(st.statements, 1000u);
  EXPECT_EQ(st.leaked, 0u);
  EXPECT_EQ(st.transitions_leaked, 0u);
  const auto counts = modality_counts(d.out.queries);
  EXPECT_EQ(counts.at(Modality::informalized_statement), 1000u);
  EXPECT_EQ(counts.at(Modality::formal_statement), 1000u);
  EXPECT_EQ(counts.at(Modality::synthetic_user_query), st.assigned);
  std::size_t two = 0;
  for (const auto& t : d.data.transitions) two += t.premises_used.size() == 2;
  EXPECT_EQ(counts.at(Modality::augmented_proof_state), desk::kTransitions + two);

  // Each cluster is drawn independently per statement; check every count is
  // within 4 binomial standard deviations of its expectation.
  for (const auto& [id, prior] : desk::cluster_priors()) {
    const double p = std::min(1.0, desk::kQueriesPerStatement * prior);
    const double mean = 1000 * p, sd = std::sqrt(1000 * p * (1 - p));
    const auto it = st.cluster_histogram.find(id);
    const double got = it == st.cluster_histogram.end() ? 0.0 : static_cast<double>(it->second);
    EXPECT_NEAR(got, mean, 4 * sd + 1) << id;
  }
  // The two large intents dominate, as in the prior.
  EXPECT_GT(st.cluster_histogram.at("lemma_search"), 5 * st.cluster_histogram.at("library_design"));
}

TEST(DeskSynthesis, QueriesNeverNameTheirGold) {
  const auto& d = desk_data();
  for (const auto& q : d.out.queries) {
    if (q.modality != Modality::synthetic_user_query) continue;
    ASSERT_EQ(q.text.find(d.data.corpus.find(q.gold_id)->full_name), std::string::npos) << q.id;
  }
  for (const auto& s : d.out.corpus.statements()) ASSERT_TRUE(s.informalization) << s.id;
}

TEST(DeskSynthesis, DeterministicAndReplayable) {
  const auto& d = desk_data();
  const auto again = desk::make_dataset(7);
  desk::DeskGenerator live(7, again.transitions, &again.corpus);
  RecordingClient rec(live);
  Generator g(rec);
  const auto out = synthesize_dataset<HashedEncoder>(again.corpus, default_clusters(), again.transitions, g, nullptr);
  EXPECT_EQ(queries_to_jsonl(out.queries), queries_to_jsonl(d.out.queries));
  auto replay = ReplayClient::parse(rec.transcript_jsonl());
  Generator gr(replay);
  const auto replayed =
      synthesize_dataset<HashedEncoder>(again.corpus, default_clusters(), again.transitions, gr, nullptr);
  EXPECT_EQ(queries_to_jsonl(replayed.queries), queries_to_jsonl(d.out.queries));
  EXPECT_EQ(replayed.corpus.to_jsonl(), d.out.corpus.to_jsonl());
}

TEST(DeskPreferences, RuleAndSeeding) {
  const auto a = desk::make_preferences(200, 7, "train");
  const auto b = desk::make_preferences(200, 7, "train");
  const auto held = desk::make_preferences(200, 7, "heldout");
  ASSERT_EQ(a.size(), 200u);
  EXPECT_EQ(a, b);
  EXPECT_NE(a, held);
  const auto corpus = desk::make_corpus();
  for (const auto& t : a) {
    const auto c = *desk::parse_full_name(corpus.find(t.chosen)->full_name);
    const auto r = *desk::parse_full_name(corpus.find(t.rejected)->full_name);
    EXPECT_NE(t.chosen, t.rejected);
    EXPECT_EQ(c.prop, r.prop);
    EXPECT_TRUE(desk::judged_helpful(t.query, c)) << t.query;
    EXPECT_FALSE(desk::judged_helpful(t.query, r)) << t.query;
  }
}
