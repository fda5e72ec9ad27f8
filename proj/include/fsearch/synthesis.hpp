#pragma once

#include <algorithm>
#include <cstdlib>
#include <functional>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "clusters.hpp"
#include "corpus.hpp"
#include "embedder.hpp"
#include "generator.hpp"
#include "index.hpp"

namespace fsearch {

inline constexpr std::string_view kIntendedDirection = "-- intended direction:";
inline constexpr std::string_view kNoneMarker = "(none)";

inline std::string render_cluster_list(const std::vector<IntentCluster>& clusters) {
  std::string out;
  for (const auto& c : clusters) out += "- " + c.id + " (" + c.name + "): " + c.description + "\n";
  return out;
}

inline std::string render_examples(const std::vector<std::string>& examples) {
  std::string out;
  for (const auto& e : examples) out += "  * " + e + "\n";
  return out;
}

/// Cluster ids the generator considers plausible sources of a question
/// answered by `statement`. Output keeps the input cluster order.
inline std::vector<std::string> assign_clusters(const FormalStatement& statement,
                                                const std::vector<IntentCluster>& clusters,
                                                const Generator& gen) {
  if (clusters.empty()) throw Error(ErrorCode::PreconditionViolation, "clusters", "empty");
  const std::string raw =
      gen.run(TemplateId::assign_clusters,
              {{"formal_name", statement.full_name},
               {"formal_statement", statement.statement_text},
               {"informal_statement", statement.informalization.value_or(std::string(kNoneMarker))},
               {"clusters", render_cluster_list(clusters)}});
  std::set<std::string> picked;
  std::string item;
  auto flush = [&] {
    std::string t = trim(item);
    item.clear();
    if (t.empty()) return;
    if (t == "NONE" || t == "none") return;
    if (!find_cluster(clusters, t)) throw Error(ErrorCode::UnparseableResponse, raw);
    picked.insert(t);
  };
  for (char c : raw) {
    if (c == ',' || c == '\n')
      flush();
    else
      item += c;
  }
  flush();
  std::vector<std::string> out;
  for (const auto& c : clusters)
    if (picked.count(c.id)) out.push_back(c.id);
  return out;
}

inline std::string synthetic_query_id(const FormalStatement& s, const IntentCluster& c) {
  return s.id + "/q/" + c.id;
}

inline QueryRecord synthesize_query(const FormalStatement& statement, const IntentCluster& cluster,
                                    const Generator& gen) {
  std::string text = trim(gen.run(TemplateId::synthesize_query,
                                   {{"cluster_name", cluster.name},
                                    {"cluster_description", cluster.description},
                                    {"cluster_examples", render_examples(cluster.examples)},
                                    {"formal_name", statement.full_name},
                                    {"formal_statement", statement.statement_text},
                                    {"informal_statement", statement.informalization.value_or(
                                                               std::string(kNoneMarker))}}));
  if (text.empty()) throw Error(ErrorCode::EmptyResponse, statement.id);
  if (text.find(statement.full_name) != std::string::npos)
    throw Error(ErrorCode::RevealsAnswer, statement.id, statement.full_name);
  return {synthetic_query_id(statement, cluster), Modality::synthetic_user_query, std::move(text),
          statement.id, cluster.id};
}

struct InformalPair {
  std::string formal;
  std::string informal;
};

struct InformalizationContext {
  std::string formal_name;
  std::string formal_code;
  std::optional<std::string> docstring;
  std::optional<std::string> neighbor_statement;
  std::vector<InformalPair> dependent_statements;
  std::optional<InformalPair> related_statement_pair;
  /// Statements sharing the module (including this one); 0 when unknown.
  std::size_t same_file_count = 0;

  /// Template bindings, one per component.
  Variables variables() const {
    const std::string none(kNoneMarker);
    std::string deps;
    for (const auto& d : dependent_statements)
      deps += "- " + d.formal + "\n  informal: " + d.informal + "\n";
    std::string related = none;
    if (related_statement_pair)
      related = related_statement_pair->formal + "\ninformal: " + related_statement_pair->informal;
    return {{"formal_name", formal_name},
            {"formal_statement", formal_code},
            {"docstring", docstring.value_or(none)},
            {"neighbor_statement", neighbor_statement.value_or(none)},
            {"dependent_statements", deps.empty() ? none : deps},
            {"related_statement", related}};
  }
};

/// Closest other statement in the same module by line; ties go to the
/// earlier line.
inline const FormalStatement* nearest_neighbor(const FormalStatement& s, const Corpus& corpus) {
  if (!s.module_path || !s.line) return nullptr;
  const FormalStatement* best = nullptr;
  for (const auto& o : corpus.statements()) {
    if (o.id == s.id || o.module_path != s.module_path || !o.line) continue;
    if (!best) {
      best = &o;
      continue;
    }
    const int d = std::abs(*o.line - *s.line), bd = std::abs(*best->line - *s.line);
    if (d < bd || (d == bd && (*o.line < *best->line || (*o.line == *best->line && o.id < best->id))))
      best = &o;
  }
  return best;
}

inline std::size_t same_file_count(const FormalStatement& s, const Corpus& corpus) {
  if (!s.module_path) return 0;
  return static_cast<std::size_t>(std::count_if(
      corpus.statements().begin(), corpus.statements().end(),
      [&](const FormalStatement& o) { return o.module_path == s.module_path; }));
}

inline std::string formal_line(const FormalStatement& s) { return s.full_name + ": " + s.statement_text; }

/// Nearest statement (excluding the target) that already has an
/// informalization, used as a style exemplar.
using RelatedLookup = std::function<std::optional<InformalPair>(const FormalStatement&)>;

inline InformalizationContext assemble_context(const FormalStatement& s, const Corpus& corpus,
                                               const RelatedLookup& related = {}) {
  InformalizationContext ctx;
  ctx.formal_name = s.full_name;
  ctx.formal_code = s.statement_text;
  ctx.docstring = s.docstring;
  ctx.same_file_count = same_file_count(s, corpus);
  if (const auto* n = nearest_neighbor(s, corpus)) ctx.neighbor_statement = formal_line(*n);
  for (const auto& dep_id : s.dependencies) {
    const auto* dep = corpus.find(dep_id);
    if (!dep) throw Error(ErrorCode::ContextAssembly, dep_id, "unknown dependency of " + s.id);
    if (!dep->informalization)
      throw Error(ErrorCode::ContextAssembly, dep_id, "dependency not informalized yet");
    ctx.dependent_statements.push_back({formal_line(*dep), *dep->informalization});
  }
  if (related) ctx.related_statement_pair = related(s);
  return ctx;
}

inline std::string informalize(const FormalStatement& statement, const InformalizationContext& ctx,
                               const Generator& gen) {
  if (ctx.formal_name != statement.full_name || ctx.formal_code != statement.statement_text)
    throw Error(ErrorCode::ContextAssembly, statement.id, "context built for another statement");
  if (ctx.same_file_count >= 2 && !ctx.neighbor_statement)
    throw Error(ErrorCode::ContextAssembly, statement.id, "missing neighbor statement");
  std::string text = trim(gen.run(TemplateId::informalize, ctx.variables()));
  if (text.empty()) throw Error(ErrorCode::EmptyResponse, statement.id);
  return text;
}

/// Dependencies before dependents; otherwise corpus order.
inline std::vector<std::size_t> dependency_order(const Corpus& corpus) {
  const auto& st = corpus.statements();
  std::vector<int> state(st.size(), 0);  // 0 new, 1 visiting, 2 done
  std::vector<std::size_t> order;
  order.reserve(st.size());
  std::function<void(std::size_t)> visit = [&](std::size_t i) {
    if (state[i] == 2) return;
    if (state[i] == 1) throw Error(ErrorCode::ContextAssembly, st[i].id, "dependency cycle");
    state[i] = 1;
    for (const auto& d : st[i].dependencies) {
      if (!corpus.contains(d)) throw Error(ErrorCode::ContextAssembly, d, "unknown dependency");
      visit(corpus.index_of(d));
    }
    state[i] = 2;
    order.push_back(i);
  };
  for (std::size_t i = 0; i < st.size(); ++i) visit(i);
  return order;
}

/// Fills every missing informalization. With an encoder, the related
/// exemplar is the most similar statement informalized so far.
template <TextEncoder E>
Corpus informalize_corpus(const Corpus& corpus, const Generator& gen, const E* enc) {
  Corpus out = corpus;
  const auto& st = out.statements();
  std::vector<Embedding> emb;
  if (enc) {
    emb.reserve(st.size());
    for (const auto& s : st) emb.push_back(enc->embed(s.statement_text));
  }
  for (auto i : dependency_order(corpus)) {
    if (st[i].informalization) continue;
    RelatedLookup related;
    if (enc) {
      related = [&, i](const FormalStatement&) -> std::optional<InformalPair> {
        std::optional<std::size_t> best;
        double best_score = 0.0;
        for (std::size_t j = 0; j < st.size(); ++j) {
          if (j == i || !st[j].informalization) continue;
          double s = 0.0;
          for (std::size_t r = 0; r < emb[i].size(); ++r) s += emb[i][r] * emb[j][r];
          if (!best || result_before(s, st[j].id, best_score, st[*best].id)) {
            best = j;
            best_score = s;
          }
        }
        if (!best) return std::nullopt;
        return InformalPair{formal_line(st[*best]), *st[*best].informalization};
      };
    }
    out.set_informalization(i, informalize(st[i], assemble_context(st[i], out, related), gen));
  }
  return out;
}

/// Overload for runs without an encoder (no related exemplar).
inline Corpus informalize_corpus(const Corpus& corpus, const Generator& gen) {
  return informalize_corpus<HashedEncoder>(corpus, gen, nullptr);
}

struct ProofTransition {
  std::string state_before;
  std::string state_after;
  std::string tactic;
  std::vector<std::string> premises_used;
  std::string trajectory_id;
  std::size_t step_index = 1;
  std::size_t step_count = 1;
};

inline nlohmann::ordered_json to_json(const ProofTransition& t) {
  nlohmann::ordered_json j;
  j["trajectory_id"] = t.trajectory_id;
  j["step_index"] = t.step_index;
  j["step_count"] = t.step_count;
  j["state_before"] = t.state_before;
  j["state_after"] = t.state_after;
  j["tactic"] = t.tactic;
  j["premises_used"] = t.premises_used;
  return j;
}

inline ProofTransition transition_from_json(const nlohmann::ordered_json& j) {
  ProofTransition t;
  t.trajectory_id = j.at("trajectory_id").get<std::string>();
  t.step_index = j.at("step_index").get<std::size_t>();
  t.step_count = j.value("step_count", t.step_index);
  t.state_before = j.at("state_before").get<std::string>();
  t.state_after = j.at("state_after").get<std::string>();
  t.tactic = j.value("tactic", std::string());
  t.premises_used = j.at("premises_used").get<std::vector<std::string>>();
  if (t.step_index < 1 || t.step_index > t.step_count)
    throw Error(ErrorCode::InvalidRecord, t.trajectory_id, "step_index out of range");
  return t;
}

inline std::string transitions_to_jsonl(const std::vector<ProofTransition>& ts) {
  std::string out;
  for (const auto& t : ts) out += to_json(t).dump() + "\n";
  return out;
}

inline std::vector<ProofTransition> parse_transitions(std::string_view content) {
  std::vector<ProofTransition> out;
  std::istringstream in{std::string(content)};
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    try {
      out.push_back(transition_from_json(nlohmann::ordered_json::parse(line)));
    } catch (const nlohmann::json::exception& e) {
      throw Error(ErrorCode::MalformedLine, std::to_string(line_no), e.what());
    }
  }
  return out;
}

inline std::vector<ProofTransition> load_transitions(const std::string& path) {
  return parse_transitions(read_file(path));
}

/// One record per premise, all sharing the same generated description.
inline std::vector<QueryRecord> augment_state(const ProofTransition& t, const Corpus& corpus,
                                              const Generator& gen) {
  if (t.premises_used.empty())
    throw Error(ErrorCode::PreconditionViolation, t.trajectory_id, "no premises used");
  for (const auto& p : t.premises_used)
    if (!corpus.contains(p)) throw Error(ErrorCode::UnresolvedGold, p);
  std::string desc = trim(gen.run(TemplateId::augment_state,
                                  {{"state_before", t.state_before}, {"state_after", t.state_after}}));
  if (desc.empty()) throw Error(ErrorCode::EmptyResponse, t.trajectory_id);
  for (const auto& p : t.premises_used) {
    const auto& name = corpus.find(p)->full_name;
    if (desc.find(name) != std::string::npos) throw Error(ErrorCode::RevealsPremise, p, name);
  }
  const std::string text = t.state_before + "\n" + std::string(kIntendedDirection) + "\n" + desc;
  std::vector<QueryRecord> out;
  for (const auto& p : t.premises_used)
    out.push_back({t.trajectory_id + "/" + std::to_string(t.step_index) + "/" + p,
                   Modality::augmented_proof_state, text, p, std::nullopt});
  return out;
}

/// A community thread that passed the answerability filter.
struct Discussion {
  std::string id;
  std::string main_question;
};

/// Returns the restated main question when the thread is accepted.
inline std::optional<std::string> filter_answerable(std::string_view excerpt, const Generator& gen) {
  const std::string raw = gen.run(TemplateId::filter_answerable, {{"excerpt", std::string(excerpt)}});
  const auto nl = raw.find('\n');
  const std::string head = trim(std::string_view(raw).substr(0, nl));
  if (head == "REJECT") return std::nullopt;
  if (head != "ACCEPT") throw Error(ErrorCode::UnparseableResponse, raw);
  std::string rest = nl == std::string::npos ? std::string() : trim(std::string_view(raw).substr(nl + 1));
  return rest.empty() ? std::string(excerpt) : rest;
}

inline std::string render_excerpts(const std::vector<Discussion>& batch) {
  std::string out;
  for (const auto& d : batch) out += "[" + d.id + "] " + d.main_question + "\n";
  return out;
}

inline std::vector<IntentCluster> parse_cluster_response(const std::string& raw) {
  try {
    const auto j = nlohmann::ordered_json::parse(raw);
    if (!j.is_array()) throw Error(ErrorCode::UnparseableResponse, raw);
    std::vector<IntentCluster> out;
    for (const auto& c : j) out.push_back(cluster_from_json(c));
    return out;
  } catch (const nlohmann::json::exception&) {
    throw Error(ErrorCode::UnparseableResponse, raw);
  } catch (const Error& e) {
    if (e.code() == ErrorCode::InvalidRecord) throw Error(ErrorCode::UnparseableResponse, raw);
    throw;
  }
}

inline std::vector<IntentCluster> bootstrap_clusters(const std::vector<Discussion>& batch,
                                                     const Generator& gen) {
  return parse_cluster_response(gen.run(TemplateId::bootstrap_clusters, {{"excerpts", render_excerpts(batch)}}));
}

inline std::size_t count_sentences(std::string_view s) {
  std::size_t n = 0;
  bool in_sentence = false;
  for (std::size_t i = 0; i < s.size(); ++i) {
    const char c = s[i];
    if (c == '.' || c == '?' || c == '!') {
      if (in_sentence && (i + 1 == s.size() || s[i + 1] == ' ' || s[i + 1] == '\n')) {
        ++n;
        in_sentence = false;
      }
    } else if (c != ' ' && c != '\n') {
      in_sentence = true;
    }
  }
  return n + (in_sentence ? 1 : 0);
}

/// Checks that `after` only extends `before`: nothing removed or reworded,
/// at most one new sentence and one new example per existing cluster.
inline void check_monotone(const std::vector<IntentCluster>& before,
                           const std::vector<IntentCluster>& after) {
  std::set<std::string> ids;
  for (const auto& c : after)
    if (!ids.insert(c.id).second) throw Error(ErrorCode::DestructiveUpdate, c.id, "duplicate cluster id");
  for (const auto& old : before) {
    const auto* now = find_cluster(after, old.id);
    if (!now) throw Error(ErrorCode::DestructiveUpdate, old.id, "cluster removed");
    if (now->description.compare(0, old.description.size(), old.description) != 0)
      throw Error(ErrorCode::DestructiveUpdate, old.id, "description rewritten");
    if (count_sentences(std::string_view(now->description).substr(old.description.size())) > 1)
      throw Error(ErrorCode::DestructiveUpdate, old.id, "description grew by more than one sentence");
    std::multiset<std::string> remaining(now->examples.begin(), now->examples.end());
    for (const auto& e : old.examples) {
      const auto it = remaining.find(e);
      if (it == remaining.end()) throw Error(ErrorCode::DestructiveUpdate, old.id, "example removed: " + e);
      remaining.erase(it);
    }
    if (remaining.size() > 1)
      throw Error(ErrorCode::DestructiveUpdate, old.id, "more than one example added");
  }
  for (const auto& c : after)
    if (!find_cluster(before, c.id) && c.examples.size() > 10)
      throw Error(ErrorCode::DestructiveUpdate, c.id, "new cluster with more than ten examples");
}

inline std::vector<IntentCluster> update_clusters(const std::vector<Discussion>& batch,
                                                  const std::vector<IntentCluster>& clusters,
                                                  const Generator& gen) {
  nlohmann::ordered_json cj = nlohmann::ordered_json::array();
  for (const auto& c : clusters) cj.push_back(to_json(c));
  auto after = parse_cluster_response(gen.run(
      TemplateId::progressive_clusters, {{"clusters", cj.dump(2)}, {"excerpts", render_excerpts(batch)}}));
  check_monotone(clusters, after);
  return after;
}

struct SynthesisStats {
  std::size_t statements = 0;
  std::size_t assigned = 0;           // sum of |assigned clusters|
  std::size_t leaked = 0;             // synthetic queries dropped by the leak check
  std::size_t transitions = 0;
  std::size_t transitions_leaked = 0;
  std::map<std::string, std::size_t> cluster_histogram;
};

struct SynthesisOutput {
  Corpus corpus;  // with informalizations filled in
  std::vector<QueryRecord> queries;
  SynthesisStats stats;
};

struct SynthesisOptions {
  bool informalize = true;
  bool synthetic_queries = true;
  bool informalized_queries = true;
  bool formal_queries = true;
};

/// Runs every synthesis stage over the corpus. Records are sorted by id, so
/// with a deterministic generator the output is byte-stable.
template <TextEncoder E>
SynthesisOutput synthesize_dataset(const Corpus& corpus, const std::vector<IntentCluster>& clusters,
                                   const std::vector<ProofTransition>& transitions,
                                   const Generator& gen, const E* enc,
                                   const SynthesisOptions& opt = {}) {
  SynthesisOutput out{opt.informalize ? informalize_corpus(corpus, gen, enc) : corpus, {}, {}};
  auto& st = out.stats;
  for (const auto& s : out.corpus.statements()) {
    ++st.statements;
    if (opt.synthetic_queries) {
      for (const auto& cid : assign_clusters(s, clusters, gen)) {
        ++st.assigned;
        try {
          out.queries.push_back(synthesize_query(s, *find_cluster(clusters, cid), gen));
          ++st.cluster_histogram[cid];
        } catch (const Error& e) {
          if (e.code() != ErrorCode::RevealsAnswer) throw;
          ++st.leaked;
        }
      }
    }
    if (opt.informalized_queries && s.informalization)
      out.queries.push_back({s.id + "/informal", Modality::informalized_statement,
                             *s.informalization, s.id, std::nullopt});
    if (opt.formal_queries)
      out.queries.push_back({s.id + "/formal", Modality::formal_statement, s.statement_text, s.id,
                             std::nullopt});
  }
  for (const auto& t : transitions) {
    if (t.premises_used.empty()) continue;
    ++st.transitions;
    try {
      for (auto& q : augment_state(t, out.corpus, gen)) out.queries.push_back(std::move(q));
    } catch (const Error& e) {
      if (e.code() != ErrorCode::RevealsPremise) throw;
      ++st.transitions_leaked;
    }
  }
  std::sort(out.queries.begin(), out.queries.end(),
            [](const QueryRecord& a, const QueryRecord& b) { return a.id < b.id; });
  return out;
}

}  // namespace fsearch
