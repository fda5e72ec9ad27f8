#pragma once

#include <string>
#include <vector>

#include <json.hpp>

#include "util.hpp"

namespace fsearch {

struct IntentCluster {
  std::string id;
  std::string name;
  std::string description;
  std::vector<std::string> examples;

  friend bool operator==(const IntentCluster&, const IntentCluster&) = default;
};

inline nlohmann::ordered_json to_json(const IntentCluster& c) {
  nlohmann::ordered_json j;
  j["id"] = c.id;
  j["name"] = c.name;
  j["description"] = c.description;
  j["examples"] = c.examples;
  return j;
}

inline IntentCluster cluster_from_json(const nlohmann::ordered_json& j) {
  IntentCluster c;
  c.id = j.at("id").get<std::string>();
  c.name = j.at("name").get<std::string>();
  c.description = j.at("description").get<std::string>();
  c.examples = j.at("examples").get<std::vector<std::string>>();
  if (c.id.empty() || c.examples.empty())
    throw Error(ErrorCode::InvalidRecord, c.id, "cluster needs an id and at least one example");
  return c;
}

/// The five user-intent clusters shipped by default. Wording is our own;
/// config/clusters.json can replace it.
inline std::vector<IntentCluster> default_clusters() {
  return {
      {"lemma_search", "Lemma and definition lookup",
       "The user wants to know whether a result or definition already exists in the library "
       "and what it is called.",
       {"Is there a lemma saying ...", "What is the name of the fact that ...",
        "Does the library already define ..."}},
      {"metaprogramming", "Tactic and meta code",
       "Writing tactics, macros or elaborators and working with expressions, goals and "
       "metavariables from meta code.",
       {"How do I build an Expr for ... inside a tactic?",
        "Why does my macro expand to the wrong term?"}},
      {"typeclass_instance", "Instances and classes",
       "Instance search fails or picks the wrong instance, or the user needs help declaring, "
       "deriving or avoiding an instance.",
       {"Why can't Lean find an instance of ...", "How should I declare this instance?"}},
      {"proof_engineering", "Day-to-day proving",
       "A concrete goal or broken proof script where the user needs the right rewrite, "
       "simplification or case split to finish.",
       {"How do I close this goal about ...", "Why does simp not rewrite ...",
        "How do I move a coercion out of ..."}},
      {"library_design", "Library design",
       "Structuring larger developments: new structures, refactors, generality and "
       "performance of definitions.",
       {"What is the right generality for a definition of ..."}},
  };
}

inline std::vector<IntentCluster> load_clusters(const std::string& path) {
  const auto j = nlohmann::ordered_json::parse(read_file(path));
  std::vector<IntentCluster> out;
  for (const auto& c : j) out.push_back(cluster_from_json(c));
  return out;
}

inline const IntentCluster* find_cluster(const std::vector<IntentCluster>& clusters,
                                         std::string_view id) {
  for (const auto& c : clusters)
    if (c.id == id) return &c;
  return nullptr;
}

}  // namespace fsearch
