#include <gtest/gtest.h>

#include <atomic>
#include <functional>
#include <set>

#include "fsearch/clusters.hpp"
#include "fsearch/synthesis.hpp"
#include "test_support.hpp"

using namespace fsearch;

namespace {

const std::string kSource = FSEARCH_SOURCE_DIR;

ErrorCode code_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  ADD_FAILURE() << "no exception";
  return ErrorCode::PreconditionViolation;
}

struct Scripted {
  std::function<std::string(const GeneratorRequest&)> fn;
  FunctionClient client{[this](const GeneratorRequest& r) { return fn(r); }};
  Generator gen{client};
  explicit Scripted(std::function<std::string(const GeneratorRequest&)> f) : fn(std::move(f)) {}
};

Corpus file_corpus() {
  auto base = tsupport::statement("m0", "Foo.base", "theorem Foo.base (n : ℕ) : 0 ≤ n");
  base.module_path = "Mathlib/Foo.lean";
  base.line = 3;
  base.informalization = "Every natural number is nonnegative.";
  auto bar = tsupport::statement("m1", "Foo.bar", "theorem Foo.bar (n : ℕ) (h : 0 < n) : 1 ≤ n");
  bar.module_path = "Mathlib/Foo.lean";
  bar.line = 10;
  bar.docstring = "Positive naturals are at least one.";
  bar.dependencies = {"m0"};
  auto far = tsupport::statement("m2", "Foo.far", "theorem Foo.far : True");
  far.module_path = "Mathlib/Foo.lean";
  far.line = 40;
  auto other = tsupport::statement("x0", "Bar.other", "theorem Bar.other : True");
  other.module_path = "Mathlib/Bar.lean";
  other.line = 10;
  return Corpus({base, bar, far, other});
}

}  // namespace

TEST(Templates, PlaceholdersAndEscapes) {
  EXPECT_EQ(render_template("a {x} {{y}} {x}", {{"x", "1"}}), "a 1 {y} 1");
  EXPECT_EQ(template_placeholders("{a} {{b}} {c} {a}"), (std::vector<std::string>{"a", "c"}));
  EXPECT_EQ(code_of([] { render_template("{missing}", {}); }), ErrorCode::UnboundPlaceholder);
  EXPECT_EQ(code_of([] { render_template("{open", {}); }), ErrorCode::ConfigError);
}

TEST(Templates, ShippedFilesMatchBuiltinsAndDefaults) {
  const auto store = TemplateStore::load_dir(kSource + "/config/prompts");
  const TemplateStore builtin;
  for (auto t : kAllTemplates) {
    EXPECT_EQ(store.get(t), builtin.get(t)) << to_string(t);
    EXPECT_FALSE(template_placeholders(store.get(t)).empty()) << to_string(t);
  }
  EXPECT_EQ(sampling_defaults(TemplateId::informalize).temperature, 0.2);
  EXPECT_EQ(sampling_defaults(TemplateId::synthesize_query).temperature, 0.7);
  EXPECT_EQ(sampling_defaults(TemplateId::filter_answerable).temperature, 0.0);
  EXPECT_EQ(sampling_defaults(TemplateId::bootstrap_clusters).temperature, 1.0);
  EXPECT_EQ(sampling_defaults(TemplateId::progressive_clusters).temperature, 1.0);
  EXPECT_EQ(template_placeholders(builtin.get(TemplateId::informalize)),
            (std::vector<std::string>{"formal_name", "formal_statement", "docstring",
                                      "neighbor_statement", "dependent_statements",
                                      "related_statement"}));
  for (auto t : kAllTemplates) EXPECT_EQ(parse_template_id(to_string(t)), t);
  EXPECT_FALSE(parse_template_id("nope"));
}

TEST(Templates, OverrideFromDirectory) {
  tsupport::TempDir dir;
  write_file(dir.file("judge_relevance.txt"), "Q={query}");
  const auto store = TemplateStore::load_dir(dir.path().string());
  EXPECT_EQ(store.get(TemplateId::judge_relevance), "Q={query}");
  const auto r = store.request(TemplateId::judge_relevance, {{"query", "x"}});
  EXPECT_EQ(r.prompt, "Q=x");
  EXPECT_EQ(r.temperature, 0.0);
  EXPECT_EQ(store.get(TemplateId::informalize), TemplateStore().get(TemplateId::informalize));
}

TEST(AssignClusters, ParsesIdsInClusterOrder) {
  const auto cs = default_clusters();
  const auto s = tsupport::statement("a", "A.b", "theorem A.b : True");
  Scripted echo([](const GeneratorRequest&) { return "proof_engineering, lemma_search\n"; });
  EXPECT_EQ(assign_clusters(s, cs, echo.gen),
            (std::vector<std::string>{"lemma_search", "proof_engineering"}));
  Scripted none([](const GeneratorRequest&) { return "NONE"; });
  EXPECT_TRUE(assign_clusters(s, cs, none.gen).empty());
  Scripted bad([](const GeneratorRequest&) { return "lemma_search, foo"; });
  EXPECT_EQ(code_of([&] { assign_clusters(s, cs, bad.gen); }), ErrorCode::UnparseableResponse);
  UnavailableClient down;
  Generator g(down);
  EXPECT_EQ(code_of([&] { assign_clusters(s, cs, g); }), ErrorCode::GeneratorUnavailable);
}

TEST(SynthesizeQuery, RecordAndLeakCheck) {
  const auto cs = default_clusters();
  const auto s = tsupport::statement("a", "Nat.add_comm", "theorem Nat.add_comm : True");
  Scripted ok([](const GeneratorRequest& r) {
    EXPECT_EQ(r.template_id, TemplateId::synthesize_query);
    EXPECT_EQ(r.temperature, 0.7);
    return "  is addition commutative?  ";
  });
  const auto q = synthesize_query(s, cs[0], ok.gen);
  EXPECT_EQ(q.text, "is addition commutative?");
  EXPECT_EQ(q.gold_id, "a");
  EXPECT_EQ(q.cluster, cs[0].id);
  EXPECT_EQ(q.modality, Modality::synthetic_user_query);
  Scripted leak([](const GeneratorRequest&) { return "is Nat.add_comm a thing"; });
  EXPECT_EQ(code_of([&] { synthesize_query(s, cs[0], leak.gen); }), ErrorCode::RevealsAnswer);
  Scripted empty([](const GeneratorRequest&) { return " \n"; });
  EXPECT_EQ(code_of([&] { synthesize_query(s, cs[0], empty.gen); }), ErrorCode::EmptyResponse);
}

TEST(SynthesizeQuery, CountEqualsSumOfAssignedClusters) {
  // Mock assigns cluster subsets by statement index; the oracle sums them.
  const auto cs = default_clusters();
  const auto corpus = tsupport::numbered_corpus(23);
  Scripted mock([&](const GeneratorRequest& r) -> std::string {
    if (r.template_id == TemplateId::assign_clusters) {
      const auto name = r.variables.at("formal_name");
      const auto i = std::stoul(name.substr(name.find("lemma") + 5));
      std::string out;
      for (std::size_t c = 0; c < cs.size(); ++c)
        if ((i >> c) & 1) out += cs[c].id + ",";
      return out;
    }
    if (r.template_id == TemplateId::synthesize_query) return "how do I prove this";
    return "informal";
  });
  SynthesisOptions opt;
  opt.informalize = false;
  opt.informalized_queries = false;
  opt.formal_queries = false;
  const auto out = synthesize_dataset<HashedEncoder>(corpus, cs, {}, mock.gen, nullptr, opt);
  std::size_t expect = 0;
  for (std::size_t i = 0; i < 23; ++i) expect += static_cast<std::size_t>(__builtin_popcountl(i & 31));
  EXPECT_EQ(out.queries.size(), expect);
  EXPECT_EQ(out.stats.assigned, expect);
  std::set<std::string> ids;
  for (const auto& q : out.queries) EXPECT_TRUE(ids.insert(q.id).second);
}

TEST(Informalize, GoldenPromptAndContextOrder) {
  const auto corpus = file_corpus();
  const auto& s = corpus[1];
  const auto ctx = assemble_context(s, corpus);
  EXPECT_EQ(ctx.neighbor_statement, "Foo.base: theorem Foo.base (n : ℕ) : 0 ≤ n");
  EXPECT_EQ(ctx.same_file_count, 3u);
  std::string prompt;
  Scripted cap([&](const GeneratorRequest& r) {
    prompt = r.prompt;
    EXPECT_EQ(r.temperature, 0.2);
    return "If n is positive then 1 ≤ n.";
  });
  EXPECT_EQ(informalize(s, ctx, cap.gen), "If n is positive then 1 ≤ n.");
  EXPECT_EQ(prompt, read_file(kSource + "/tests/golden/informalize_prompt.txt"));
}

TEST(Informalize, DocstringEchoAndErrors) {
  const auto corpus = file_corpus();
  Scripted echo([](const GeneratorRequest& r) { return r.variables.at("docstring"); });
  const auto& s = corpus[1];
  EXPECT_EQ(informalize(s, assemble_context(s, corpus), echo.gen),
            "Positive naturals are at least one.");

  auto ctx = assemble_context(s, corpus);
  ctx.neighbor_statement.reset();
  EXPECT_EQ(code_of([&] { informalize(s, ctx, echo.gen); }), ErrorCode::ContextAssembly);
  EXPECT_EQ(code_of([&] { informalize(corpus[0], assemble_context(s, corpus), echo.gen); }),
            ErrorCode::ContextAssembly);
  Scripted blank([](const GeneratorRequest&) { return "   "; });
  EXPECT_EQ(code_of([&] { informalize(s, assemble_context(s, corpus), blank.gen); }),
            ErrorCode::EmptyResponse);

  // Dependency not yet informalized.
  auto st = corpus.statements();
  st[0].informalization.reset();
  const Corpus raw(st);
  EXPECT_EQ(code_of([&] { assemble_context(raw[1], raw); }), ErrorCode::ContextAssembly);
}

TEST(Informalize, NeighborTieGoesToEarlierLine) {
  auto a = tsupport::statement("a", "A.a", "t a");
  auto b = tsupport::statement("b", "A.b", "t b");
  auto c = tsupport::statement("c", "A.c", "t c");
  for (auto* s : {&a, &b, &c}) s->module_path = "M.lean";
  a.line = 10;
  b.line = 20;
  c.line = 30;
  const Corpus corpus({c, b, a});
  EXPECT_EQ(nearest_neighbor(corpus[1], corpus)->id, "a");
  EXPECT_EQ(nearest_neighbor(corpus[0], corpus)->id, "b");
}

TEST(Informalize, CorpusFillsDependenciesFirst) {
  auto st = file_corpus().statements();
  st[0].informalization.reset();
  std::swap(st[0], st[1]);  // dependent before dependency in file order
  const Corpus corpus(st);
  std::vector<std::string> calls;
  Scripted mock([&](const GeneratorRequest& r) {
    calls.push_back(r.variables.at("formal_name"));
    return "informal " + r.variables.at("formal_name");
  });
  const auto out = informalize_corpus(corpus, mock.gen);
  EXPECT_EQ(calls.front(), "Foo.base");
  EXPECT_EQ(calls.size(), 4u);
  for (const auto& s : out.statements()) EXPECT_EQ(s.informalization, "informal " + s.full_name);

  auto cyc = st;
  cyc[1].dependencies = {"m1"};
  EXPECT_EQ(code_of([&] { dependency_order(Corpus(cyc)); }), ErrorCode::ContextAssembly);
}

TEST(Informalize, RelatedExemplarFromEncoder) {
  auto st = tsupport::numbered_corpus(6).statements();
  st[2].informalization = "two";
  const Corpus corpus(st);
  EncoderConfig ec;
  ec.feature_dim = 4096;
  ec.embed_dim = 16;
  const auto p = EncoderParams::random(ec);
  HashedEncoder enc(p);
  std::vector<std::string> related;
  Scripted mock([&](const GeneratorRequest& r) {
    related.push_back(r.variables.at("related_statement"));
    return "x";
  });
  informalize_corpus(corpus, mock.gen, &enc);
  ASSERT_EQ(related.size(), 5u);
  EXPECT_EQ(related[0], formal_line(corpus[2]) + "\ninformal: two");
}

TEST(AugmentState, FanOutSeparatorAndLeaks) {
  const auto corpus = tsupport::numbered_corpus(5);
  ProofTransition t;
  t.state_before = "⊢ f1 x1 = g1 x1";
  t.state_after = "no goals";
  t.premises_used = {"s1", "s3"};
  t.trajectory_id = "traj";
  t.step_index = 2;
  t.step_count = 3;
  Scripted mock([](const GeneratorRequest& r) {
    EXPECT_EQ(r.variables.at("state_before"), "⊢ f1 x1 = g1 x1");
    return "rewrite f as g";
  });
  const auto qs = augment_state(t, corpus, mock.gen);
  ASSERT_EQ(qs.size(), 2u);
  EXPECT_EQ(qs[0].gold_id, "s1");
  EXPECT_EQ(qs[1].gold_id, "s3");
  EXPECT_EQ(qs[0].id, "traj/2/s1");
  EXPECT_EQ(qs[0].text, "⊢ f1 x1 = g1 x1\n-- intended direction:\nrewrite f as g");
  EXPECT_EQ(qs[0].modality, Modality::augmented_proof_state);

  Scripted leak([](const GeneratorRequest&) { return "use Test.lemma3"; });
  EXPECT_EQ(code_of([&] { augment_state(t, corpus, leak.gen); }), ErrorCode::RevealsPremise);
  t.premises_used.clear();
  EXPECT_EQ(code_of([&] { augment_state(t, corpus, mock.gen); }), ErrorCode::PreconditionViolation);

  const ProofTransition back = transition_from_json(to_json(t));
  EXPECT_EQ(back.trajectory_id, "traj");
  EXPECT_EQ(back.step_index, 2u);
  auto j = to_json(t);
  j["step_index"] = 5;
  EXPECT_THROW(transition_from_json(j), Error);
}

TEST(AugmentState, TransitionsJsonlRoundTrip) {
  ProofTransition a{"⊢ p", "⊢ q", "rw [s1]", {"s1"}, "t1", 1, 2};
  ProofTransition b{"⊢ q", "no goals", "exact s2 s3", {"s2", "s3"}, "t1", 2, 2};
  const auto text = transitions_to_jsonl({a, b});
  const auto back = parse_transitions(text + "\n");
  ASSERT_EQ(back.size(), 2u);
  EXPECT_EQ(back[1].premises_used, b.premises_used);
  EXPECT_EQ(transitions_to_jsonl(back), text);
  try {
    parse_transitions(text + "{\"trajectory_id\": 3}\n");
    FAIL() << "expected MalformedLine";
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::MalformedLine);
    EXPECT_EQ(e.subject(), "3");
  }
}

TEST(Clusters, FilterBootstrapAndMonotoneUpdates) {
  Scripted accept([](const GeneratorRequest&) { return "ACCEPT\nHow do I find X?"; });
  EXPECT_EQ(filter_answerable("long thread", accept.gen), "How do I find X?");
  Scripted reject([](const GeneratorRequest&) { return "REJECT"; });
  EXPECT_FALSE(filter_answerable("x", reject.gen));
  Scripted junk([](const GeneratorRequest&) { return "maybe"; });
  EXPECT_EQ(code_of([&] { filter_answerable("x", junk.gen); }), ErrorCode::UnparseableResponse);

  const auto cs = default_clusters();
  nlohmann::ordered_json arr = nlohmann::ordered_json::array();
  for (const auto& c : cs) arr.push_back(to_json(c));
  Scripted boot([&](const GeneratorRequest&) { return arr.dump(); });
  EXPECT_EQ(bootstrap_clusters({{"d1", "q"}}, boot.gen), cs);

  const std::vector<Discussion> batch{{"d1", "How do I X?"}};
  Scripted same([&](const GeneratorRequest& r) {
    EXPECT_EQ(r.template_id, TemplateId::progressive_clusters);
    return r.variables.at("clusters");
  });
  EXPECT_EQ(update_clusters(batch, cs, same.gen), cs);

  auto grown = arr;
  grown.push_back(to_json(IntentCluster{"new", "New", "Something new.", {"e1"}}));
  grown[0]["examples"].push_back("one more");
  grown[0]["description"] = grown[0]["description"].get<std::string>() + " Extra sentence.";
  Scripted add([&](const GeneratorRequest&) { return grown.dump(); });
  const auto after = update_clusters(batch, cs, add.gen);
  EXPECT_EQ(after.size(), cs.size() + 1);

  auto removed = arr;
  removed[0]["examples"].erase(0);
  Scripted del([&](const GeneratorRequest&) { return removed.dump(); });
  EXPECT_EQ(code_of([&] { update_clusters(batch, cs, del.gen); }), ErrorCode::DestructiveUpdate);

  auto two_sentences = arr;
  two_sentences[1]["description"] = two_sentences[1]["description"].get<std::string>() + " A. B.";
  Scripted much([&](const GeneratorRequest&) { return two_sentences.dump(); });
  EXPECT_EQ(code_of([&] { update_clusters(batch, cs, much.gen); }), ErrorCode::DestructiveUpdate);

  auto dropped = arr;
  dropped.erase(2);
  Scripted drop([&](const GeneratorRequest&) { return dropped.dump(); });
  EXPECT_EQ(code_of([&] { update_clusters(batch, cs, drop.gen); }), ErrorCode::DestructiveUpdate);

  Scripted notjson([](const GeneratorRequest&) { return "[{"; });
  EXPECT_EQ(code_of([&] { update_clusters(batch, cs, notjson.gen); }), ErrorCode::UnparseableResponse);
}

TEST(Transcripts, RecordThenReplayIsIdentical) {
  const auto corpus = tsupport::numbered_corpus(8);
  const auto cs = default_clusters();
  std::atomic<int> n{0};
  FunctionClient live([&](const GeneratorRequest& r) -> std::string {
    ++n;
    if (r.template_id == TemplateId::assign_clusters) return "lemma_search";
    return "text for " + r.variables.at("formal_name").substr(0, 4) + " #" + std::to_string(n.load());
  });
  RecordingClient rec(live);
  Generator g1(rec);
  const auto first = synthesize_dataset<HashedEncoder>(corpus, cs, {}, g1, nullptr);

  auto replay = ReplayClient::parse(rec.transcript_jsonl());
  Generator g2(replay);
  const auto second = synthesize_dataset<HashedEncoder>(corpus, cs, {}, g2, nullptr);
  EXPECT_EQ(queries_to_jsonl(second.queries), queries_to_jsonl(first.queries));
  EXPECT_EQ(second.corpus.to_jsonl(), first.corpus.to_jsonl());

  const auto one = tsupport::statement("zz", "New.one", "theorem New.one : True");
  EXPECT_EQ(code_of([&] { assign_clusters(one, cs, g2); }), ErrorCode::GeneratorUnavailable);
  EXPECT_EQ(code_of([] { ReplayClient::parse("{bad"); }), ErrorCode::MalformedLine);
}

TEST(SynthesizeDataset, LeaksAreCountedAndOutputSorted) {
  const auto corpus = tsupport::numbered_corpus(6);
  const auto cs = default_clusters();
  Scripted mock([](const GeneratorRequest& r) -> std::string {
    if (r.template_id == TemplateId::assign_clusters) return "lemma_search,typeclass_instance";
    if (r.template_id == TemplateId::synthesize_query) {
      if (r.variables.at("formal_name") == "Test.lemma2") return "see Test.lemma2";
      return "question about " + r.variables.at("cluster_name");
    }
    if (r.template_id == TemplateId::augment_state) return "go forward";
    return "informal " + r.variables.at("formal_name");
  });
  ProofTransition t{"⊢ a", "⊢ b", "simp", {"s0", "s4"}, "p", 1, 1};
  const auto out = synthesize_dataset<HashedEncoder>(corpus, cs, {t}, mock.gen, nullptr);
  EXPECT_EQ(out.stats.leaked, 2u);
  EXPECT_EQ(out.stats.assigned, 12u);
  const auto counts = modality_counts(out.queries);
  EXPECT_EQ(counts.at(Modality::synthetic_user_query), 10u);
  EXPECT_EQ(counts.at(Modality::informalized_statement), 6u);
  EXPECT_EQ(counts.at(Modality::formal_statement), 6u);
  EXPECT_EQ(counts.at(Modality::augmented_proof_state), 2u);
  EXPECT_TRUE(std::is_sorted(out.queries.begin(), out.queries.end(),
                             [](const QueryRecord& a, const QueryRecord& b) { return a.id < b.id; }));
  for (const auto& q : out.queries) {
    if (q.modality == Modality::synthetic_user_query) {
      EXPECT_EQ(q.text.find(corpus.find(q.gold_id)->full_name), std::string::npos);
    }
  }
}
