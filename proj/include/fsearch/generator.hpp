#pragma once

#include <array>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <string>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "error.hpp"
#include "prompts.hpp"
#include "util.hpp"

namespace fsearch {

enum class TemplateId {
  informalize,
  filter_answerable,
  bootstrap_clusters,
  progressive_clusters,
  synthesize_query,
  augment_state,
  assign_clusters,
  judge_relevance,
};

inline constexpr std::array<TemplateId, 8> kAllTemplates{
    TemplateId::informalize,       TemplateId::filter_answerable,
    TemplateId::bootstrap_clusters, TemplateId::progressive_clusters,
    TemplateId::synthesize_query,  TemplateId::augment_state,
    TemplateId::assign_clusters,   TemplateId::judge_relevance};

inline std::string_view to_string(TemplateId t) {
  switch (t) {
    case TemplateId::informalize: return "informalize";
    case TemplateId::filter_answerable: return "filter_answerable";
    case TemplateId::bootstrap_clusters: return "bootstrap_clusters";
    case TemplateId::progressive_clusters: return "progressive_clusters";
    case TemplateId::synthesize_query: return "synthesize_query";
    case TemplateId::augment_state: return "augment_state";
    case TemplateId::assign_clusters: return "assign_clusters";
    case TemplateId::judge_relevance: return "judge_relevance";
  }
  return "?";
}

inline std::optional<TemplateId> parse_template_id(std::string_view s) {
  for (auto t : kAllTemplates)
    if (to_string(t) == s) return t;
  return std::nullopt;
}

struct SamplingDefaults {
  double temperature;
  int max_tokens;
};

/// Per-template decoding defaults. Classification-style calls run greedy.
inline SamplingDefaults sampling_defaults(TemplateId t) {
  switch (t) {
    case TemplateId::informalize: return {0.2, 1000};
    case TemplateId::filter_answerable: return {0.0, 500};
    case TemplateId::bootstrap_clusters: return {1.0, 20000};
    case TemplateId::progressive_clusters: return {1.0, 20000};
    case TemplateId::synthesize_query: return {0.7, 1000};
    case TemplateId::augment_state: return {0.7, 1000};
    case TemplateId::assign_clusters: return {0.0, 200};
    case TemplateId::judge_relevance: return {0.0, 50};
  }
  return {0.0, 1000};
}

inline std::string_view builtin_template(TemplateId t) {
  switch (t) {
    case TemplateId::informalize: return prompts::kInformalize;
    case TemplateId::filter_answerable: return prompts::kFilterAnswerable;
    case TemplateId::bootstrap_clusters: return prompts::kBootstrapClusters;
    case TemplateId::progressive_clusters: return prompts::kProgressiveClusters;
    case TemplateId::synthesize_query: return prompts::kSynthesizeQuery;
    case TemplateId::augment_state: return prompts::kAugmentState;
    case TemplateId::assign_clusters: return prompts::kAssignClusters;
    case TemplateId::judge_relevance: return prompts::kJudgeRelevance;
  }
  return {};
}

using Variables = std::map<std::string, std::string>;

struct GeneratorRequest {
  TemplateId template_id = TemplateId::informalize;
  Variables variables;
  double temperature = 0.0;
  int max_tokens = 0;
  std::string prompt;  // rendered template

  /// Stable identity of the request for transcripts: template + variables.
  std::string key() const {
    nlohmann::ordered_json j;
    j["template_id"] = std::string(to_string(template_id));
    j["variables"] = variables;  // std::map keeps keys sorted
    return hex64(fnv1a64(j.dump()));
  }
};

/// Placeholder names in order of first appearance.
inline std::vector<std::string> template_placeholders(std::string_view tpl) {
  std::vector<std::string> out;
  for (std::size_t i = 0; i < tpl.size(); ++i) {
    if (tpl[i] == '{') {
      if (i + 1 < tpl.size() && tpl[i + 1] == '{') {
        ++i;
        continue;
      }
      const auto close = tpl.find('}', i);
      if (close == std::string_view::npos) break;
      std::string name(tpl.substr(i + 1, close - i - 1));
      if (std::find(out.begin(), out.end(), name) == out.end()) out.push_back(name);
      i = close;
    }
  }
  return out;
}

inline std::string render_template(std::string_view tpl, const Variables& vars,
                                   std::string_view template_name = "template") {
  std::string out;
  out.reserve(tpl.size());
  for (std::size_t i = 0; i < tpl.size(); ++i) {
    const char c = tpl[i];
    if (c == '{' && i + 1 < tpl.size() && tpl[i + 1] == '{') {
      out += '{';
      ++i;
    } else if (c == '}' && i + 1 < tpl.size() && tpl[i + 1] == '}') {
      out += '}';
      ++i;
    } else if (c == '{') {
      const auto close = tpl.find('}', i);
      if (close == std::string_view::npos)
        throw Error(ErrorCode::ConfigError, std::string(template_name), "unterminated placeholder");
      const std::string name(tpl.substr(i + 1, close - i - 1));
      const auto it = vars.find(name);
      if (it == vars.end())
        throw Error(ErrorCode::UnboundPlaceholder, name, "in " + std::string(template_name));
      out += it->second;
      i = close;
    } else {
      out += c;
    }
  }
  return out;
}

/// Prompt templates by id. Starts from the built-ins; files named
/// `<template_id>.txt` in a directory override them.
class TemplateStore {
 public:
  TemplateStore() {
    for (auto t : kAllTemplates) templates_[t] = std::string(builtin_template(t));
  }

  static TemplateStore load_dir(const std::string& dir) {
    TemplateStore s;
    for (auto t : kAllTemplates) {
      const auto path = std::filesystem::path(dir) / (std::string(to_string(t)) + ".txt");
      if (std::filesystem::exists(path)) s.templates_[t] = read_file(path.string());
    }
    return s;
  }

  void write_dir(const std::string& dir) const {
    std::filesystem::create_directories(dir);
    for (const auto& [t, text] : templates_)
      write_file((std::filesystem::path(dir) / (std::string(to_string(t)) + ".txt")).string(), text);
  }

  const std::string& get(TemplateId t) const { return templates_.at(t); }
  void set(TemplateId t, std::string text) { templates_[t] = std::move(text); }

  GeneratorRequest request(TemplateId t, Variables vars) const {
    const auto d = sampling_defaults(t);
    GeneratorRequest r{t, std::move(vars), d.temperature, d.max_tokens, {}};
    r.prompt = render_template(get(t), r.variables, to_string(t));
    return r;
  }

 private:
  std::map<TemplateId, std::string> templates_;
};

/// Text-generation backend. Implementations must be safe to call concurrently.
class GeneratorClient {
 public:
  virtual ~GeneratorClient() = default;
  virtual std::string complete(const GeneratorRequest& request) = 0;
};

/// Templates plus a client; what pipeline operations talk to.
class Generator {
 public:
  Generator(GeneratorClient& client, TemplateStore templates = {})
      : client_(&client), templates_(std::move(templates)) {}

  std::string run(TemplateId t, Variables vars) const {
    return client_->complete(templates_.request(t, std::move(vars)));
  }

  const TemplateStore& templates() const { return templates_; }

 private:
  GeneratorClient* client_;
  TemplateStore templates_;
};

/// Answers from a callable; the usual way to script a test double.
class FunctionClient : public GeneratorClient {
 public:
  using Fn = std::function<std::string(const GeneratorRequest&)>;
  explicit FunctionClient(Fn fn) : fn_(std::move(fn)) {}
  std::string complete(const GeneratorRequest& r) override { return fn_(r); }

 private:
  Fn fn_;
};

class UnavailableClient : public GeneratorClient {
 public:
  std::string complete(const GeneratorRequest& r) override {
    throw Error(ErrorCode::GeneratorUnavailable, std::string(to_string(r.template_id)));
  }
};

/// One request/response pair as persisted in a transcript.
struct TranscriptEntry {
  std::string key;
  TemplateId template_id;
  Variables variables;
  std::string response;
};

inline nlohmann::ordered_json to_json(const TranscriptEntry& e) {
  nlohmann::ordered_json j;
  j["key"] = e.key;
  j["template_id"] = std::string(to_string(e.template_id));
  j["variables"] = e.variables;
  j["response"] = e.response;
  return j;
}

/// Passes calls through and records every exchange, in call order.
class RecordingClient : public GeneratorClient {
 public:
  explicit RecordingClient(GeneratorClient& inner) : inner_(&inner) {}

  std::string complete(const GeneratorRequest& r) override {
    std::string out = inner_->complete(r);
    std::lock_guard lock(mu_);
    entries_.push_back({r.key(), r.template_id, r.variables, out});
    return out;
  }

  std::vector<TranscriptEntry> entries() const {
    std::lock_guard lock(mu_);
    return entries_;
  }

  std::string transcript_jsonl() const {
    std::string out;
    for (const auto& e : entries()) out += to_json(e).dump() + "\n";
    return out;
  }

 private:
  GeneratorClient* inner_;
  mutable std::mutex mu_;
  std::vector<TranscriptEntry> entries_;
};

/// Serves responses from a recorded transcript. A request that was never
/// recorded is treated as an unreachable backend.
class ReplayClient : public GeneratorClient {
 public:
  static ReplayClient parse(std::string_view jsonl) {
    ReplayClient c;
    std::size_t line_no = 0, pos = 0;
    while (pos < jsonl.size()) {
      auto end = jsonl.find('\n', pos);
      if (end == std::string_view::npos) end = jsonl.size();
      const auto line = trim(jsonl.substr(pos, end - pos));
      pos = end + 1;
      ++line_no;
      if (line.empty()) continue;
      try {
        const auto j = nlohmann::json::parse(line);
        c.responses_[j.at("key").get<std::string>()] = j.at("response").get<std::string>();
      } catch (const nlohmann::json::exception& e) {
        throw Error(ErrorCode::MalformedLine, std::to_string(line_no), e.what());
      }
    }
    return c;
  }

  static ReplayClient load(const std::string& path) { return parse(read_file(path)); }

  std::string complete(const GeneratorRequest& r) override {
    const auto it = responses_.find(r.key());
    if (it == responses_.end())
      throw Error(ErrorCode::GeneratorUnavailable, r.key(), "not in transcript");
    return it->second;
  }

  std::size_t size() const { return responses_.size(); }

 private:
  std::unordered_map<std::string, std::string> responses_;
};

}  // namespace fsearch
