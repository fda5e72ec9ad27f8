#include <gtest/gtest.h>

#include <thread>

#include "service_fixture.hpp"

using namespace fsearch;
using tsupport::ServiceFixture;

namespace {

nlohmann::json body(const ServiceResponse& r) { return nlohmann::json::parse(r.body.dump()); }

}  // namespace

TEST(Service, SearchReturnsRankedResultsAndQueryId) {
  ServiceFixture f;
  const auto r = f.service->search({{"query", (*f.corpus)[3].statement_text}, {"k", 4}});
  ASSERT_EQ(r.status, 200);
  const auto b = body(r);
  EXPECT_EQ(b["query_id"], "q-1");
  ASSERT_EQ(b["results"].size(), 4u);
  EXPECT_EQ(b["results"][0]["id"], "s3");
  EXPECT_EQ(b["results"][0]["rank"], 1);
  EXPECT_EQ(b["results"][0]["full_name"], "Test.lemma3");
  EXPECT_TRUE(b["results"][0]["informalization"].is_null());
  for (std::size_t i = 1; i < 4; ++i)
    EXPECT_GE(b["results"][i - 1]["score"].get<double>(), b["results"][i]["score"].get<double>());
  EXPECT_EQ(body(f.service->search({{"query", "x"}}))["query_id"], "q-2");
  EXPECT_EQ(body(f.service->search({{"query", "f3"}}))["results"].size(), 10u);
}

TEST(Service, SearchValidation) {
  ServiceFixture f;
  EXPECT_EQ(f.service->search({{"query", "  "}}).status, 400);
  EXPECT_EQ(f.service->search({{"k", 3}}).status, 400);
  EXPECT_EQ(f.service->search({{"query", "a"}, {"k", 0}}).status, 400);
  EXPECT_EQ(f.service->search({{"query", "a"}, {"k", "3"}}).status, 400);
  EXPECT_EQ(f.service->search({{"query", "a"}, {"modality", "poetry"}}).status, 400);
  EXPECT_EQ(f.service->search({{"query", "a"}, {"modality", "formal_statement"}}).status, 200);
  EXPECT_EQ(f.service->search(nlohmann::json::array()).status, 400);
  EXPECT_EQ(f.service->search({{"query", "a"}, {"k", 500}})
                .body["results"].size(), 40u);
}

TEST(Service, StatementFeedbackIsLoggedOnce) {
  ServiceFixture f;
  const auto qid = body(f.service->search({{"query", "f1 x1"}}))["query_id"].get<std::string>();
  const nlohmann::json up{{"query_id", qid}, {"statement_id", "s1"}, {"vote", "up"}};
  const auto first = f.service->feedback(up);
  ASSERT_EQ(first.status, 200);
  EXPECT_EQ(first.body["status"], "recorded");
  EXPECT_EQ(f.service->feedback(up).body["status"], "duplicate");
  EXPECT_EQ(f.service->feedback({{"query_id", qid}, {"statement_id", "s1"}, {"vote", "down"}}).status, 200);
  EXPECT_EQ(f.log->size(), 2u);
  const auto e = f.log->snapshot()[0];
  EXPECT_EQ(e.query_text, "f1 x1");
  EXPECT_EQ(e.payload["vote"], "up");

  EXPECT_EQ(f.service->feedback({{"query_id", "q-99"}, {"statement_id", "s1"}, {"vote", "up"}}).status, 404);
  EXPECT_EQ(f.service->feedback({{"query_id", qid}, {"statement_id", "nope"}, {"vote", "up"}}).status, 404);
  EXPECT_EQ(f.service->feedback({{"query_id", qid}, {"statement_id", "s1"}, {"vote", "sideways"}}).status, 400);
  EXPECT_EQ(f.service->feedback({{"query_id", qid}}).status, 400);
}

TEST(Service, ArenaHidesEnginesAndVotesOnce) {
  ServiceFixture f;
  const auto r = f.service->arena_query({{"query", "f2 x2"}});
  ASSERT_EQ(r.status, 200);
  const auto text = r.body.dump();
  for (const auto& name : f.service->engine_names()) EXPECT_EQ(text.find(name), std::string::npos);
  EXPECT_EQ(r.body["side_a"].size(), 5u);
  EXPECT_EQ(r.body["side_b"].size(), 5u);
  const auto sid = r.body["session_id"].get<std::string>();
  const auto s = f.service->session(sid);
  ASSERT_TRUE(s);
  EXPECT_EQ(s->side_a.ids[0], r.body["side_a"][0]["id"]);

  const auto v = f.service->arena_vote({{"session_id", sid}, {"outcome", "a_better"}});
  ASSERT_EQ(v.status, 200);
  EXPECT_EQ(f.service->arena_vote({{"session_id", sid}, {"outcome", "tie"}}).status, 409);
  EXPECT_EQ(f.service->arena_vote({{"session_id", "s-0"}, {"outcome", "tie"}}).status, 404);
  EXPECT_EQ(f.service->arena_vote({{"session_id", sid}, {"outcome", "draw"}}).status, 400);
  ASSERT_EQ(f.log->size(), 1u);
  const auto [logged, outcome] = session_from_event(f.log->snapshot()[0]);
  EXPECT_EQ(outcome, ArenaOutcome::a_better);
  EXPECT_EQ(logged.side_a.engine, s->side_a.engine);
}

TEST(Service, ArenaAssignmentIsSeededAndBalanced) {
  ServiceFixture a(5), b(5);
  std::size_t alpha_first = 0;
  for (int i = 0; i < 200; ++i) {
    const auto ra = a.service->arena_query({{"query", "f1"}});
    const auto rb = b.service->arena_query({{"query", "f1"}});
    EXPECT_EQ(ra.body.dump(), rb.body.dump());
    alpha_first += a.service->session(ra.body["session_id"])->side_a.engine == "engine-alpha";
  }
  EXPECT_GT(alpha_first, 70u);
  EXPECT_LT(alpha_first, 130u);
}

TEST(Service, ArenaNotConfigured) {
  auto corpus = std::make_shared<const Corpus>(tsupport::numbered_corpus(5));
  SearchService svc(corpus, tsupport::random_engine("main", *corpus, 1), std::nullopt, {},
                    std::make_shared<FeedbackLog>());
  EXPECT_EQ(svc.arena_query({{"query", "a"}}).status, 503);
}

TEST(Service, RejectsMismatchedComponents) {
  auto corpus = std::make_shared<const Corpus>(tsupport::numbered_corpus(5));
  auto other = tsupport::numbered_corpus(6);
  auto log = std::make_shared<FeedbackLog>();
  EXPECT_THROW(SearchService(corpus, tsupport::random_engine("m", other, 1), std::nullopt, {}, log), Error);
  SearchService::ArenaPair same{tsupport::random_engine("x", *corpus, 1), tsupport::random_engine("x", *corpus, 2)};
  EXPECT_THROW(SearchService(corpus, tsupport::random_engine("m", *corpus, 1), same, {}, log), Error);

  EncoderConfig ec;
  ec.feature_dim = 4096;
  ec.embed_dim = 16;
  auto p1 = EncoderParams::random(ec);
  ec.seed = 9;
  auto p2 = EncoderParams::random(ec);
  auto idx = build_index(*corpus, HashedEncoder(p1));
  try {
    Engine("bad", p2, idx);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::EncoderMismatch);
  }
}

TEST(Service, SwapEngineKeepsServing) {
  ServiceFixture f;
  const auto before = f.service->engine()->checksum;
  auto next = tsupport::random_engine("main-v2", *f.corpus, 99);
  f.service->swap_engine(next);
  EXPECT_NE(f.service->engine()->checksum, before);
  const auto h = f.service->health();
  EXPECT_EQ(h.body["corpus_size"], 40);
  EXPECT_EQ(h.body["indexes"]["main-v2"], 40);
  EXPECT_EQ(h.body["encoder_checksums"].size(), 3u);
}

TEST(Service, CreateFromFiles) {
  tsupport::TempDir dir;
  const auto corpus = tsupport::numbered_corpus(12);
  write_file(dir.file("corpus.jsonl"), corpus.to_jsonl());
  EncoderConfig ec;
  ec.feature_dim = 4096;
  ec.embed_dim = 16;
  const auto p = EncoderParams::random(ec);
  p.save(dir.file("enc.bin"));
  build_index(corpus, HashedEncoder(p)).save(dir.file("index.bin"));
  ServiceConfig cfg;
  cfg.corpus_path = dir.file("corpus.jsonl");
  cfg.engine = {"main", dir.file("index.bin"), dir.file("enc.bin")};
  cfg.feedback_log = dir.file("feedback.jsonl");
  auto svc = SearchService::create(cfg);
  EXPECT_EQ(svc->search({{"query", corpus[4].statement_text}}).body["results"][0]["id"], "s4");
  cfg.engine.index_path = dir.file("missing.bin");
  EXPECT_THROW(SearchService::create(cfg), Error);

  const auto c = Config::parse(
      "[service]\ncorpus = \"c.jsonl\"\nindex = \"i.bin\"\nencoder = \"e.bin\"\nport = 9000\n"
      "[arena]\nengine_a_index = \"a.bin\"\nengine_a_encoder = \"ae.bin\"\n"
      "engine_b_index = \"b.bin\"\nengine_b_encoder = \"be.bin\"\n");
  const auto sc = ServiceConfig::from_config(c);
  EXPECT_EQ(sc.port, 9000);
  ASSERT_TRUE(sc.arena);
  EXPECT_EQ(sc.arena->first.name, "engine-a");
  EXPECT_EQ(sc.arena_k, 5u);
}

TEST(Http, EndpointsAndConcurrentClients) {
  tsupport::TempDir dir;
  ServiceFixture f(3, 40, dir.file("feedback.jsonl"));
  HttpServer server(*f.service, dir.file("requests.jsonl"));
  const int port = server.bind("127.0.0.1", 0);
  server.start();

  httplib::Client cli("127.0.0.1", port);
  auto health = cli.Get("/v1/health");
  ASSERT_TRUE(health);
  EXPECT_EQ(health->status, 200);
  auto bad = cli.Post("/v1/search", "{not json", "application/json");
  ASSERT_TRUE(bad);
  EXPECT_EQ(bad->status, 400);

  constexpr int kClients = 100;
  std::vector<std::thread> threads;
  std::vector<int> statuses(kClients, 0);
  for (int i = 0; i < kClients; ++i) {
    threads.emplace_back([&, i] {
      httplib::Client c("127.0.0.1", port);
      const auto q = nlohmann::json{{"query", "f" + std::to_string(i % 40) + " x" + std::to_string(i % 40)}}.dump();
      auto r = c.Post("/v1/search", q, "application/json");
      if (!r || r->status != 200) return;
      const auto b = nlohmann::json::parse(r->body);
      const auto vote = nlohmann::json{{"query_id", b["query_id"]},
                                       {"statement_id", b["results"][0]["id"]},
                                       {"vote", "up"}}.dump();
      auto v = c.Post("/v1/feedback/statement", vote, "application/json");
      auto a = c.Post("/v1/arena/query", q, "application/json");
      if (!v || !a) return;
      const auto sid = nlohmann::json::parse(a->body)["session_id"];
      auto av = c.Post("/v1/arena/vote", nlohmann::json{{"session_id", sid}, {"outcome", "tie"}}.dump(),
                       "application/json");
      statuses[i] = av ? av->status : -1;
      if (v->status != 200) statuses[i] = v->status;
    });
  }
  for (auto& t : threads) t.join();
  server.stop();
  for (int s : statuses) EXPECT_EQ(s, 200);

  const auto events = FeedbackLog::load(dir.file("feedback.jsonl"));
  EXPECT_EQ(events.size(), 2u * kClients);
  for (std::size_t i = 0; i < events.size(); ++i) EXPECT_EQ(events[i].event_id, i + 1);
  const auto requests = read_file(dir.file("requests.jsonl"));
  EXPECT_EQ(static_cast<int>(std::count(requests.begin(), requests.end(), '\n')), 2 + 4 * kClients);
}
