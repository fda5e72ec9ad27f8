#pragma once

#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <random>
#include <set>
#include <string>
#include <thread>
#include <tuple>

#ifndef CPPHTTPLIB_LISTEN_BACKLOG
#define CPPHTTPLIB_LISTEN_BACKLOG 256
#endif
#include <httplib.h>
#include <json.hpp>

#include "config.hpp"
#include "corpus.hpp"
#include "embedder.hpp"
#include "index.hpp"
#include "preference.hpp"

namespace fsearch {

struct EngineSpec {
  std::string name;
  std::string index_path;
  std::string encoder_path;
};

/// One retriever: encoder weights plus the index built from them.
struct Engine {
  std::string name;
  std::shared_ptr<const EncoderParams> params;
  std::shared_ptr<const VectorIndex> index;
  std::uint64_t checksum = 0;

  Engine(std::string n, EncoderParams p, VectorIndex idx)
      : name(std::move(n)),
        params(std::make_shared<const EncoderParams>(std::move(p))),
        index(std::make_shared<const VectorIndex>(std::move(idx))),
        checksum(params->checksum()) {
    if (index->encoder_checksum() != checksum)
      throw Error(ErrorCode::EncoderMismatch, name,
                  "index " + hex64(index->encoder_checksum()) + " vs encoder " + hex64(checksum));
  }

  static std::shared_ptr<const Engine> load(const EngineSpec& spec) {
    for (const auto& p : {spec.index_path, spec.encoder_path})
      if (!std::filesystem::exists(p)) throw Error(ErrorCode::IoError, p, "missing file");
    return std::make_shared<const Engine>(spec.name, EncoderParams::load(spec.encoder_path),
                                          VectorIndex::load(spec.index_path));
  }

  std::vector<SearchResult> search(std::string_view text, std::size_t k) const {
    return index->search(text, HashedEncoder(*params), k);
  }
};

struct ServiceConfig {
  std::string host = "127.0.0.1";
  int port = 8080;
  std::string corpus_path;
  EngineSpec engine{"main", "", ""};
  std::optional<std::pair<EngineSpec, EngineSpec>> arena;
  std::size_t default_k = 10;
  std::size_t arena_k = 5;
  std::optional<std::string> feedback_log;
  std::optional<std::string> request_log;
  std::uint64_t seed = 0;
  std::size_t threads = 64;  // HTTP workers; each keep-alive connection holds one

  /// Reads the [service] and [arena] sections.
  static ServiceConfig from_config(const Config& c) {
    ServiceConfig s;
    s.host = c.get_string("service", "host", s.host);
    s.port = static_cast<int>(c.get_int("service", "port", s.port));
    s.corpus_path = c.get_string("service", "corpus");
    s.engine.name = c.get_string("service", "engine_name", s.engine.name);
    s.engine.index_path = c.get_string("service", "index");
    s.engine.encoder_path = c.get_string("service", "encoder");
    s.default_k = static_cast<std::size_t>(c.get_int("service", "k", 10));
    if (c.has("service", "feedback_log")) s.feedback_log = c.get_string("service", "feedback_log");
    if (c.has("service", "request_log")) s.request_log = c.get_string("service", "request_log");
    s.seed = static_cast<std::uint64_t>(c.get_int("service", "seed", 0));
    s.threads = static_cast<std::size_t>(c.get_int("service", "threads", 64));
    if (s.threads == 0) throw Error(ErrorCode::ConfigError, "threads", "must be positive");
    if (c.has("arena", "engine_a_index")) {
      EngineSpec a{c.get_string("arena", "engine_a_name", "engine-a"),
                   c.get_string("arena", "engine_a_index"), c.get_string("arena", "engine_a_encoder")};
      EngineSpec b{c.get_string("arena", "engine_b_name", "engine-b"),
                   c.get_string("arena", "engine_b_index"), c.get_string("arena", "engine_b_encoder")};
      if (a.name == b.name) throw Error(ErrorCode::ConfigError, "arena", "engines need distinct names");
      s.arena = std::pair{a, b};
      s.arena_k = static_cast<std::size_t>(c.get_int("arena", "k", 5));
    }
    return s;
  }
};

struct ServiceResponse {
  int status = 200;
  nlohmann::ordered_json body;
};

/// Transport-independent request handling. Engines are immutable snapshots;
/// swapping one replaces the pointer while in-flight requests keep the old one.
class SearchService {
 public:
  struct Options {
    std::size_t default_k = 10;
    std::size_t arena_k = 5;
    std::uint64_t seed = 0;
  };

  using ArenaPair = std::pair<std::shared_ptr<const Engine>, std::shared_ptr<const Engine>>;

  SearchService(std::shared_ptr<const Corpus> corpus, std::shared_ptr<const Engine> engine,
                std::optional<ArenaPair> arena, Options opt, std::shared_ptr<FeedbackLog> log)
      : corpus_(std::move(corpus)),
        engine_(std::move(engine)),
        arena_(std::move(arena)),
        opt_(opt),
        log_(std::move(log)),
        rng_(opt.seed) {
    if (!corpus_ || !engine_ || !log_) throw Error(ErrorCode::PreconditionViolation, "service", "null component");
    if (arena_ && arena_->first->name == arena_->second->name)
      throw Error(ErrorCode::ConfigError, "arena", "engines need distinct names");
    check_engine(*engine_);
    if (arena_) {
      check_engine(*arena_->first);
      check_engine(*arena_->second);
    }
  }

  static std::unique_ptr<SearchService> create(const ServiceConfig& cfg) {
    if (!std::filesystem::exists(cfg.corpus_path))
      throw Error(ErrorCode::IoError, cfg.corpus_path, "missing corpus");
    auto corpus = std::make_shared<const Corpus>(ingest_corpus(cfg.corpus_path));
    auto engine = Engine::load(cfg.engine);
    std::optional<ArenaPair> arena;
    if (cfg.arena) arena = ArenaPair{Engine::load(cfg.arena->first), Engine::load(cfg.arena->second)};
    return std::make_unique<SearchService>(corpus, engine, arena,
                                           Options{cfg.default_k, cfg.arena_k, cfg.seed},
                                           std::make_shared<FeedbackLog>(cfg.feedback_log));
  }

  void swap_engine(std::shared_ptr<const Engine> e) {
    check_engine(*e);
    std::lock_guard lock(engine_mu_);
    engine_ = std::move(e);
  }

  std::shared_ptr<const Engine> engine() const {
    std::lock_guard lock(engine_mu_);
    return engine_;
  }

  FeedbackLog& log() { return *log_; }
  const Corpus& corpus() const { return *corpus_; }

  ServiceResponse search(const nlohmann::json& req) {
    std::string query;
    std::size_t k = opt_.default_k;
    if (auto err = read_query(req, opt_.default_k, query, k)) return *err;
    if (auto it = req.find("modality"); it != req.end() && !it->is_null()) {
      if (!it->is_string() || !parse_modality(it->get<std::string>()))
        return error(400, "unknown modality");
    }
    const auto eng = engine();
    std::vector<SearchResult> hits;
    if (auto err = run_search(*eng, query, k, hits)) return *err;
    std::string qid;
    {
      std::lock_guard lock(state_mu_);
      qid = "q-" + std::to_string(++query_counter_);
      queries_[qid] = query;
    }
    nlohmann::ordered_json body;
    body["query_id"] = qid;
    body["results"] = results_json(hits);
    return {200, body};
  }

  ServiceResponse feedback(const nlohmann::json& req) {
    std::string qid, sid, vote_s;
    if (!get_string(req, "query_id", qid) || !get_string(req, "statement_id", sid) ||
        !get_string(req, "vote", vote_s))
      return error(400, "query_id, statement_id and vote are required");
    const auto vote = parse_vote(vote_s);
    if (!vote) return error(400, "vote must be up or down");
    std::lock_guard lock(state_mu_);
    const auto q = queries_.find(qid);
    if (q == queries_.end()) return error(404, "unknown query_id");
    if (!corpus_->contains(sid)) return error(404, "unknown statement_id");
    nlohmann::ordered_json body;
    if (!votes_.insert({qid, sid, *vote}).second) {
      body["status"] = "duplicate";
      return {200, body};
    }
    const auto e = log_->append(FeedbackKind::statement_vote, q->second,
                                statement_vote_payload(qid, sid, *vote));
    body["status"] = "recorded";
    body["event_id"] = e.event_id;
    return {200, body};
  }

  ServiceResponse arena_query(const nlohmann::json& req) {
    if (!arena_) return error(503, "arena not configured");
    std::string query;
    std::size_t k = opt_.arena_k;
    if (auto err = read_query(req, opt_.arena_k, query, k)) return *err;
    std::vector<SearchResult> first, second;
    if (auto err = run_search(*arena_->first, query, k, first)) return *err;
    if (auto err = run_search(*arena_->second, query, k, second)) return *err;
    bool first_is_a;
    std::string sid;
    {
      std::lock_guard lock(state_mu_);
      first_is_a = (rng_() >> 63) == 0;
      sid = "s-" + hex64(mix64(opt_.seed ^ ++session_counter_));
      auto ids = [](const std::vector<SearchResult>& r) {
        std::vector<std::string> v;
        for (const auto& x : r) v.push_back(x.id);
        return v;
      };
      ArenaSide s1{arena_->first->name, ids(first)}, s2{arena_->second->name, ids(second)};
      ArenaSession s{sid, query, first_is_a ? s1 : s2, first_is_a ? s2 : s1};
      sessions_[sid] = {std::move(s), false};
    }
    nlohmann::ordered_json body;
    body["session_id"] = sid;
    body["side_a"] = results_json(first_is_a ? first : second);
    body["side_b"] = results_json(first_is_a ? second : first);
    return {200, body};
  }

  ServiceResponse arena_vote(const nlohmann::json& req) {
    std::string sid, outcome_s;
    if (!get_string(req, "session_id", sid) || !get_string(req, "outcome", outcome_s))
      return error(400, "session_id and outcome are required");
    const auto outcome = parse_outcome(outcome_s);
    if (!outcome) return error(400, "outcome must be a_better, b_better, tie or both_bad");
    std::lock_guard lock(state_mu_);
    const auto it = sessions_.find(sid);
    if (it == sessions_.end()) return error(404, "unknown session");
    if (it->second.voted) return error(409, "session already voted");
    const auto e = log_->append(FeedbackKind::arena_vote, it->second.session.query_text,
                                arena_vote_payload(it->second.session, *outcome));
    it->second.voted = true;
    nlohmann::ordered_json body;
    body["status"] = "recorded";
    body["event_id"] = e.event_id;
    return {200, body};
  }

  ServiceResponse health() const {
    nlohmann::ordered_json body;
    body["status"] = "ok";
    nlohmann::ordered_json counts, sums;
    auto add = [&](const Engine& e) {
      counts[e.name] = e.index->size();
      sums[e.name] = hex64(e.checksum);
    };
    add(*engine());
    if (arena_) {
      add(*arena_->first);
      add(*arena_->second);
    }
    body["corpus_size"] = corpus_->size();
    body["indexes"] = counts;
    body["encoder_checksums"] = sums;
    return {200, body};
  }

  /// Server-side view of a session, for tests and audits.
  std::optional<ArenaSession> session(const std::string& sid) const {
    std::lock_guard lock(state_mu_);
    const auto it = sessions_.find(sid);
    if (it == sessions_.end()) return std::nullopt;
    return it->second.session;
  }

  std::vector<std::string> engine_names() const {
    std::vector<std::string> v{engine()->name};
    if (arena_) {
      v.push_back(arena_->first->name);
      v.push_back(arena_->second->name);
    }
    return v;
  }

 private:
  struct OpenSession {
    ArenaSession session;
    bool voted = false;
  };

  void check_engine(const Engine& e) const {
    if (e.index->size() != corpus_->size())
      throw Error(ErrorCode::BadIndexFile, e.name, "index size differs from corpus size");
    for (const auto& id : e.index->ids())
      if (!corpus_->contains(id)) throw Error(ErrorCode::BadIndexFile, id, "not in corpus");
  }

  static ServiceResponse error(int status, std::string msg) {
    nlohmann::ordered_json body;
    body["error"] = std::move(msg);
    return {status, body};
  }

  static bool get_string(const nlohmann::json& req, const char* key, std::string& out) {
    const auto it = req.find(key);
    if (it == req.end() || !it->is_string()) return false;
    out = it->get<std::string>();
    return true;
  }

  static std::optional<ServiceResponse> read_query(const nlohmann::json& req, std::size_t default_k,
                                                   std::string& query, std::size_t& k) {
    if (!req.is_object()) return error(400, "expected a JSON object");
    if (!get_string(req, "query", query) || trim(query).empty()) return error(400, "empty query");
    k = default_k;
    if (auto it = req.find("k"); it != req.end() && !it->is_null()) {
      if (!it->is_number_integer() || it->get<long long>() < 1) return error(400, "k must be a positive integer");
      k = static_cast<std::size_t>(it->get<long long>());
    }
    return std::nullopt;
  }

  static std::optional<ServiceResponse> run_search(const Engine& e, const std::string& query,
                                                   std::size_t k, std::vector<SearchResult>& out) {
    try {
      out = e.search(query, k);
    } catch (const Error& err) {
      if (err.code() == ErrorCode::DegenerateEmbedding) return error(422, "query has no usable features");
      return error(500, "index unavailable");
    }
    return std::nullopt;
  }

  nlohmann::ordered_json results_json(const std::vector<SearchResult>& hits) const {
    nlohmann::ordered_json arr = nlohmann::ordered_json::array();
    for (const auto& h : hits) {
      const auto* s = corpus_->find(h.id);
      nlohmann::ordered_json r;
      r["id"] = h.id;
      r["full_name"] = s->full_name;
      r["statement_text"] = s->statement_text;
      r["informalization"] = s->informalization ? nlohmann::ordered_json(*s->informalization) : nullptr;
      r["score"] = h.score;
      r["rank"] = h.rank;
      arr.push_back(std::move(r));
    }
    return arr;
  }

  std::shared_ptr<const Corpus> corpus_;
  mutable std::mutex engine_mu_;
  std::shared_ptr<const Engine> engine_;
  std::optional<ArenaPair> arena_;
  Options opt_;
  std::shared_ptr<FeedbackLog> log_;

  mutable std::mutex state_mu_;
  std::mt19937_64 rng_;
  std::uint64_t query_counter_ = 0;
  std::uint64_t session_counter_ = 0;
  std::map<std::string, std::string> queries_;
  std::set<std::tuple<std::string, std::string, Vote>> votes_;
  std::map<std::string, OpenSession> sessions_;
};

/// Binds SearchService to the /v1 HTTP endpoints.
class HttpServer {
 public:
  explicit HttpServer(SearchService& svc, std::optional<std::string> request_log = std::nullopt,
                      std::size_t threads = 64)
      : svc_(svc) {
    server_.new_task_queue = [threads] { return new httplib::ThreadPool(threads); };
    if (request_log) {
      req_log_.open(*request_log, std::ios::app | std::ios::binary);
      if (!req_log_) throw Error(ErrorCode::IoError, *request_log, "cannot open request log");
    }
    auto json_route = [this](auto handler) {
      return [this, handler](const httplib::Request& req, httplib::Response& res) {
        ServiceResponse out;
        try {
          const auto body = req.body.empty() ? nlohmann::json::object() : nlohmann::json::parse(req.body);
          out = handler(body);
        } catch (const nlohmann::json::exception&) {
          out = {400, {{"error", "malformed JSON"}}};
        } catch (const std::exception& e) {
          out = {500, {{"error", e.what()}}};
        }
        reply(req, res, out);
      };
    };
    server_.Post("/v1/search", json_route([this](const nlohmann::json& b) { return svc_.search(b); }));
    server_.Post("/v1/feedback/statement",
                 json_route([this](const nlohmann::json& b) { return svc_.feedback(b); }));
    server_.Post("/v1/arena/query", json_route([this](const nlohmann::json& b) { return svc_.arena_query(b); }));
    server_.Post("/v1/arena/vote", json_route([this](const nlohmann::json& b) { return svc_.arena_vote(b); }));
    server_.Get("/v1/health", [this](const httplib::Request& req, httplib::Response& res) {
      reply(req, res, svc_.health());
    });
  }

  ~HttpServer() { stop(); }

  /// Port 0 picks a free port. Returns the bound port.
  int bind(const std::string& host, int port) {
    if (port == 0) {
      port_ = server_.bind_to_any_port(host);
    } else {
      port_ = server_.bind_to_port(host, port) ? port : -1;
    }
    if (port_ < 0) throw Error(ErrorCode::IoError, host + ":" + std::to_string(port), "bind failed");
    return port_;
  }

  void listen() { server_.listen_after_bind(); }

  void start() {
    thread_ = std::thread([this] { listen(); });
    server_.wait_until_ready();
  }

  void stop() {
    server_.stop();
    if (thread_.joinable()) thread_.join();
  }

  int port() const { return port_; }

 private:
  void reply(const httplib::Request& req, httplib::Response& res, const ServiceResponse& out) {
    res.status = out.status;
    res.set_content(out.body.dump(), "application/json");
    if (req_log_.is_open()) {
      nlohmann::ordered_json line;
      line["method"] = req.method;
      line["path"] = req.path;
      line["request"] = req.body;
      line["status"] = out.status;
      std::lock_guard lock(log_mu_);
      req_log_ << line.dump() << '\n';
      req_log_.flush();
    }
  }

  SearchService& svc_;
  httplib::Server server_;
  std::thread thread_;
  int port_ = -1;
  std::mutex log_mu_;
  std::ofstream req_log_;
};

}  // namespace fsearch
