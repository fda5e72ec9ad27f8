#pragma once

// Bundled synthetic corpus: 10 namespaces x 10 operations x 10 properties,
// plus a rule-based generator client that paraphrases them. Everything is a
// pure function of the seed, so datasets are reproducible byte for byte.

#include <array>
#include <cctype>
#include <map>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include <json.hpp>

#include "clusters.hpp"
#include "corpus.hpp"
#include "generator.hpp"
#include "objectives.hpp"
#include "synthesis.hpp"

namespace fsearch::desk {

struct Namespace {
  std::string_view name;
  std::string_view type;
  std::vector<std::string_view> phrases;
};

struct Operation {
  std::string_view name;
  std::string_view symbol;  // infix symbol, or empty for prefix application
  std::vector<std::string_view> phrases;
};

struct Property {
  std::string_view name;
  std::vector<std::string_view> phrases;
  std::string_view title;
};

inline const std::vector<Namespace>& namespaces() {
  static const std::vector<Namespace> v{
      {"Nat", "ℕ", {"natural numbers", "naturals", "nonnegative integers"}},
      {"Int", "ℤ", {"integers", "signed integers", "whole numbers"}},
      {"Rat", "ℚ", {"rationals", "rational numbers", "fractions"}},
      {"Real", "ℝ", {"real numbers", "reals", "the real line"}},
      {"Complex", "ℂ", {"complex numbers", "complexes", "the complex plane"}},
      {"ZMod", "ZMod n", {"integers modulo n", "residues mod n", "modular arithmetic"}},
      {"Polynomial", "Polynomial R", {"polynomials", "polynomial rings", "univariate polynomials"}},
      {"Matrix", "Matrix n n R", {"square matrices", "matrices", "matrix algebra"}},
      {"Finset", "Finset α", {"finite sets", "finsets", "finite subsets"}},
      {"Set", "Set α", {"sets", "subsets of a type", "set theory"}},
  };
  return v;
}

inline const std::vector<Operation>& operations() {
  static const std::vector<Operation> v{
      {"add", "+", {"addition", "sums", "adding"}},
      {"mul", "*", {"multiplication", "products", "multiplying"}},
      {"sub", "-", {"subtraction", "differences", "subtracting"}},
      {"div", "/", {"division", "quotients", "dividing"}},
      {"pow", "^", {"exponentiation", "powers", "raising to a power"}},
      {"max", "", {"maximum", "max of two elements", "taking the larger element"}},
      {"min", "", {"minimum", "min of two elements", "taking the smaller element"}},
      {"gcd", "", {"greatest common divisor", "gcd", "common divisors"}},
      {"lcm", "", {"least common multiple", "lcm", "common multiples"}},
      {"dist", "", {"distance", "dist function", "metric distance"}},
  };
  return v;
}

inline const std::vector<Property>& properties() {
  static const std::vector<Property> v{
      {"comm", {"is commutative", "does not depend on argument order", "lets me swap the operands"},
       "Commutativity"},
      {"assoc", {"is associative", "can be regrouped", "does not depend on bracketing"},
       "Associativity"},
      {"zero", {"with zero on the right", "when the second argument is zero", "against 0"},
       "Zero law"},
      {"one", {"with one on the right", "when the second argument is one", "against 1"},
       "One law"},
      {"self", {"of an element with itself", "is idempotent", "on equal arguments"},
       "Idempotence"},
      {"neg", {"with a negated first argument", "pulls out a negation", "of a negative input"},
       "Negation law"},
      {"le", {"is at least the left operand", "bounds the first argument from above",
              "is greater or equal than its input"},
       "Lower bound"},
      {"lt", {"is strictly larger than the left operand", "strictly increases its input",
              "gives a strict inequality"},
       "Strict bound"},
      {"pos", {"is positive", "stays above zero", "of positive inputs is positive"},
       "Positivity"},
      {"cancel", {"can be cancelled", "is injective in the second argument", "admits cancellation"},
       "Cancellation"},
  };
  return v;
}

struct Concept {
  std::size_t ns = 0, op = 0, prop = 0;

  std::string full_name() const {
    return std::string(namespaces()[ns].name) + "." + std::string(operations()[op].name) + "_" +
           std::string(properties()[prop].name);
  }
  std::size_t index() const { return ns * 100 + op * 10 + prop; }
  friend bool operator==(const Concept&, const Concept&) = default;
};

inline std::string statement_id(const Concept& c) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "desk-%04zu", c.index());
  return buf;
}

inline std::optional<Concept> parse_full_name(std::string_view name) {
  const auto dot = name.find('.');
  const auto us = name.find('_', dot == std::string_view::npos ? 0 : dot);
  if (dot == std::string_view::npos || us == std::string_view::npos) return std::nullopt;
  const auto ns = name.substr(0, dot), op = name.substr(dot + 1, us - dot - 1), prop = name.substr(us + 1);
  Concept c;
  auto find = [](const auto& table, std::string_view key, std::size_t& out) {
    for (std::size_t i = 0; i < table.size(); ++i)
      if (table[i].name == key) {
        out = i;
        return true;
      }
    return false;
  };
  if (!find(namespaces(), ns, c.ns) || !find(operations(), op, c.op) || !find(properties(), prop, c.prop))
    return std::nullopt;
  return c;
}

inline std::string apply(const Operation& op, const std::string& x, const std::string& y) {
  if (!op.symbol.empty()) return x + " " + std::string(op.symbol) + " " + y;
  return std::string(op.name) + " " + x + " " + y;
}

inline std::string paren(const std::string& s) { return "(" + s + ")"; }

struct Shape {
  std::vector<std::string> vars;
  std::vector<std::string> hyps;  // "h : ..." without parentheses
  std::string conclusion;
};

/// Statement shape for a concept, with the given variable names.
inline Shape shape(const Concept& c, const std::array<std::string, 3>& v) {
  const auto& op = operations()[c.op];
  auto f = [&](const std::string& x, const std::string& y) { return apply(op, x, y); };
  const auto &a = v[0], &b = v[1], &cc = v[2];
  switch (c.prop) {
    case 0: return {{a, b}, {}, f(a, b) + " = " + f(b, a)};
    case 1: return {{a, b, cc}, {}, f(paren(f(a, b)), cc) + " = " + f(a, paren(f(b, cc)))};
    case 2: return {{a}, {}, f(a, "0") + " = " + a};
    case 3: return {{a}, {}, f(a, "1") + " = " + a};
    case 4: return {{a}, {}, f(a, a) + " = " + a};
    case 5: return {{a, b}, {}, f("-" + a, b) + " = -" + paren(f(a, b))};
    case 6: return {{a, b}, {"h : 0 ≤ " + b}, a + " ≤ " + f(a, b)};
    case 7: return {{a, b}, {"h : 0 < " + b}, a + " < " + f(a, b)};
    case 8: return {{a, b}, {"ha : 0 < " + a, "hb : 0 < " + b}, "0 < " + f(a, b)};
    default: return {{a, b, cc}, {"h : " + f(a, b) + " = " + f(a, cc)}, b + " = " + cc};
  }
}

inline std::string join(const std::vector<std::string>& v, std::string_view sep) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) out += (i ? std::string(sep) : "") + v[i];
  return out;
}

inline std::string statement_text(const Concept& c) {
  const auto s = shape(c, {"a", "b", "c"});
  std::string out = "theorem " + c.full_name() + " (" + join(s.vars, " ") + " : " +
                    std::string(namespaces()[c.ns].type) + ")";
  for (const auto& h : s.hyps) out += " (" + h + ")";
  return out + " : " + s.conclusion;
}

inline Source source_of(const Concept& c) {
  if (c.ns == 9 && c.op < 2) return Source::library_dep;    // 20 statements
  if (c.ns == 8 && c.op == 0) return Source::research_repo;  // 10 statements
  return Source::mathlib;
}

inline std::string module_of(const Concept& c) {
  const std::string ns(namespaces()[c.ns].name), op(operations()[c.op].name);
  switch (source_of(c)) {
    case Source::library_dep: return "Batteries/Desk/" + ns + "/" + op + ".lean";
    case Source::research_repo: return "Research/Desk/" + ns + "/" + op + ".lean";
    default: return "Mathlib/Desk/" + ns + "/" + op + ".lean";
  }
}

inline std::string pick(const std::vector<std::string_view>& v, std::uint64_t h) {
  return std::string(v[h % v.size()]);
}

inline std::string capitalize(std::string s) {
  if (!s.empty() && std::islower(static_cast<unsigned char>(s[0])))
    s[0] = static_cast<char>(std::toupper(static_cast<unsigned char>(s[0])));
  return s;
}

inline std::vector<Concept> all_concepts() {
  std::vector<Concept> v;
  for (std::size_t n = 0; n < 10; ++n)
    for (std::size_t o = 0; o < 10; ++o)
      for (std::size_t p = 0; p < 10; ++p) v.push_back({n, o, p});
  return v;
}

/// The 1,000 raw statements (no informalizations).
inline Corpus make_corpus() {
  std::vector<FormalStatement> out;
  for (const auto& c : all_concepts()) {
    FormalStatement s;
    s.id = statement_id(c);
    s.full_name = c.full_name();
    s.statement_text = statement_text(c);
    s.source = source_of(c);
    s.module_path = module_of(c);
    s.line = static_cast<int>(10 + 12 * c.prop);
    if (c.prop <= 1)
      s.docstring = capitalize(std::string(operations()[c.op].phrases[0])) + " " +
                    std::string(properties()[c.prop].phrases[0]) + ".";
    if (c.prop == 9) s.dependencies.push_back(statement_id({c.ns, c.op, 0}));
    out.push_back(std::move(s));
  }
  return Corpus(std::move(out));
}

/// Sampling weight of each cluster among synthesized queries.
inline const std::map<std::string, double>& cluster_priors() {
  static const std::map<std::string, double> p{{"lemma_search", 0.41},
                                               {"proof_engineering", 0.41},
                                               {"typeclass_instance", 0.10},
                                               {"library_design", 0.07},
                                               {"metaprogramming", 0.01}};
  return p;
}

/// Expected synthetic queries per statement; each cluster is included
/// independently with probability min(1, kQueriesPerStatement * prior).
inline constexpr double kQueriesPerStatement = 2.4;

inline double uniform01(std::uint64_t h) { return static_cast<double>(h >> 11) * 0x1.0p-53; }

struct Phrasing {
  std::string type, op, prop;
};

inline Phrasing phrasing(const Concept& c, std::uint64_t h) {
  return {pick(namespaces()[c.ns].phrases, mix64(h ^ 1)), pick(operations()[c.op].phrases, mix64(h ^ 2)),
          pick(properties()[c.prop].phrases, mix64(h ^ 3))};
}

inline std::string query_for(const Concept& c, std::string_view cluster_id, std::uint64_t h) {
  const auto p = phrasing(c, h);
  const std::size_t t = mix64(h ^ 4) % 3;
  if (cluster_id == "lemma_search") {
    switch (t) {
      case 0: return "Is there a lemma saying that " + p.op + " of " + p.type + " " + p.prop + "?";
      case 1: return "Looking for the result that " + p.op + " on " + p.type + " " + p.prop + ".";
      default: return "Which theorem states that for " + p.type + ", " + p.op + " " + p.prop + "?";
    }
  }
  if (cluster_id == "proof_engineering") {
    switch (t) {
      case 0: return "How do I close a goal about " + p.op + " of " + p.type + "? I need that it " + p.prop + " and simp fails.";
      case 1: return "Stuck in a proof over " + p.type + ": the step needs " + p.op + " that " + p.prop + ", how to rewrite?";
      default: return "My calc block on " + p.type + " breaks where " + p.op + " " + p.prop + ". What should I apply?";
    }
  }
  if (cluster_id == "typeclass_instance")
    return "Does the instance on " + p.type + " already give that " + p.op + " " + p.prop + ", or do I need a new one?";
  if (cluster_id == "library_design")
    return "Where in the library is it recorded that " + p.op + " of " + p.type + " " + p.prop + ", and is it stated generally?";
  return "Writing a tactic for " + p.type + " that must know " + p.op + " " + p.prop + ". Which declaration should it call?";
}

inline std::string informalization_for(const Concept& c, std::uint64_t h) {
  const auto p = phrasing(c, h);
  const auto s = shape(c, {"a", "b", "c"});
  std::string out = std::string(properties()[c.prop].title) + " of " + p.op + " on " + p.type + ": for all " +
                    join(s.vars, ", ") + " in " + std::string(namespaces()[c.ns].type);
  if (!s.hyps.empty()) {
    std::vector<std::string> hs;
    for (const auto& x : s.hyps) hs.push_back(x.substr(x.find(':') + 2));
    out += " with " + join(hs, " and ");
  }
  return out + ", we have " + s.conclusion + ". In words, " + p.op + " " + p.prop + ".";
}

inline std::string direction_for(const std::vector<Concept>& cs, std::uint64_t h) {
  std::vector<std::string> parts;
  for (std::size_t i = 0; i < cs.size(); ++i) {
    const auto p = phrasing(cs[i], mix64(h + i));
    parts.push_back("the fact that " + p.op + " on " + p.type + " " + p.prop);
  }
  switch (mix64(h ^ 5) % 3) {
    case 0: return "Finish the goal using " + join(parts, " together with ") + ".";
    case 1: return "The next step should rewrite with " + join(parts, " and then ") + ".";
    default: return "I want to close this by appealing to " + join(parts, " plus ") + ".";
  }
}

struct Dataset {
  Corpus corpus;
  std::vector<ProofTransition> transitions;
};

/// Proof transitions over the corpus; about one in seven uses two premises.
inline std::vector<ProofTransition> make_transitions(const Corpus& corpus, std::size_t count,
                                                     std::uint64_t seed) {
  static const std::array<std::array<std::string, 3>, 3> names{
      {{"x", "y", "z"}, {"m", "n", "k"}, {"p", "q", "r"}}};
  std::mt19937_64 rng(derive_seed(seed, "transitions"));
  std::vector<ProofTransition> out;
  for (std::size_t i = 0; i < count; ++i) {
    std::vector<Concept> used{*parse_full_name(corpus[rng() % corpus.size()].full_name)};
    if (rng() % 7 == 0) {
      Concept second = used[0];
      second.op = (second.op + 1 + rng() % 9) % 10;
      used.push_back(second);
    }
    const auto& v = names[rng() % names.size()];
    std::vector<std::string> hyps, goals;
    std::vector<std::string> vars;
    for (const auto& c : used) {
      const auto s = shape(c, v);
      for (const auto& x : s.vars)
        if (std::find(vars.begin(), vars.end(), x) == vars.end()) vars.push_back(x);
      for (const auto& hy : s.hyps)
        if (std::find(hyps.begin(), hyps.end(), hy) == hyps.end()) hyps.push_back(hy);
      goals.push_back(s.conclusion);
    }
    std::string before = join(vars, " ") + " : " + std::string(namespaces()[used[0].ns].type) + "\n";
    for (const auto& hy : hyps) before += hy + "\n";
    before += "⊢ " + join(goals, " ∧ ");
    ProofTransition t;
    t.trajectory_id = "traj-" + std::to_string(i);
    t.step_index = 1;
    t.step_count = 1;
    t.state_before = before;
    t.state_after = "no goals";
    std::vector<std::string> names_used;
    for (const auto& c : used) {
      t.premises_used.push_back(statement_id(c));
      names_used.push_back(c.full_name());
    }
    t.tactic = used.size() == 1 ? "exact " + names_used[0] : "exact ⟨" + join(names_used, ", ") + "⟩";
    out.push_back(std::move(t));
  }
  return out;
}

inline constexpr std::size_t kTransitions = 1200;

inline Dataset make_dataset(std::uint64_t seed) {
  Dataset d{make_corpus(), {}};
  d.transitions = make_transitions(d.corpus, kTransitions, seed);
  return d;
}

/// Lowercased runs of ASCII letters and digits; everything else separates.
inline std::vector<std::string> lower_tokens(std::string_view s) {
  std::vector<std::string> out;
  std::string cur;
  for (char ch : s) {
    const auto u = static_cast<unsigned char>(ch);
    if (u < 0x80 && std::isalnum(u)) {
      cur += static_cast<char>(std::tolower(u));
    } else if (!cur.empty()) {
      out.push_back(std::move(cur));
      cur.clear();
    }
  }
  if (!cur.empty()) out.push_back(std::move(cur));
  return out;
}

inline bool mentions(const std::vector<std::string>& hay, std::string_view phrase) {
  const auto needle = lower_tokens(phrase);
  if (needle.empty() || needle.size() > hay.size()) return false;
  for (std::size_t i = 0; i + needle.size() <= hay.size(); ++i)
    if (std::equal(needle.begin(), needle.end(), hay.begin() + static_cast<std::ptrdiff_t>(i))) return true;
  return false;
}

/// Judge rule: helpful when the query names the statement's operation and
/// property (under any phrasing).
inline bool judged_helpful(std::string_view query, const Concept& c) {
  const auto toks = lower_tokens(query);
  auto any = [&](const auto& phrases) {
    return std::any_of(phrases.begin(), phrases.end(), [&](std::string_view p) { return mentions(toks, p); });
  };
  return any(operations()[c.op].phrases) && any(properties()[c.prop].phrases);
}

/// Deterministic stand-in for a hosted model, answering every template for
/// desk statements. Thread-safe: it holds only immutable state.
class DeskGenerator : public GeneratorClient {
 public:
  DeskGenerator(std::uint64_t seed, const std::vector<ProofTransition>& transitions = {},
                const Corpus* corpus = nullptr)
      : seed_(seed) {
    for (const auto& t : transitions) {
      std::vector<Concept> cs;
      for (const auto& p : t.premises_used) {
        const FormalStatement* s = corpus ? corpus->find(p) : nullptr;
        const auto c = s ? parse_full_name(s->full_name) : std::nullopt;
        if (c) cs.push_back(*c);
      }
      if (!cs.empty()) premises_[t.state_before] = cs;
    }
    for (const auto& c : default_clusters()) cluster_by_name_[c.name] = c.id;
  }

  std::string complete(const GeneratorRequest& r) override {
    const auto& v = r.variables;
    switch (r.template_id) {
      case TemplateId::informalize: {
        const auto c = concept_of(v.at("formal_name"));
        return informalization_for(c, h("inf", v.at("formal_name")));
      }
      case TemplateId::assign_clusters: {
        const auto& name = v.at("formal_name");
        std::vector<std::string> ids;
        for (const auto& [id, prior] : cluster_priors())
          if (v.at("clusters").find("- " + id + " ") != std::string::npos &&
              uniform01(h("assign", name + "|" + id)) < std::min(1.0, kQueriesPerStatement * prior))
            ids.push_back(id);
        return ids.empty() ? "NONE" : join(ids, ", ");
      }
      case TemplateId::synthesize_query: {
        const auto& name = v.at("formal_name");
        const auto it = cluster_by_name_.find(v.at("cluster_name"));
        const std::string cid = it == cluster_by_name_.end() ? "lemma_search" : it->second;
        return query_for(concept_of(name), cid, h("query", name + "|" + cid));
      }
      case TemplateId::augment_state: {
        const auto it = premises_.find(v.at("state_before"));
        if (it == premises_.end()) return "Simplify the goal and close it.";
        return direction_for(it->second, h("direction", v.at("state_before")));
      }
      case TemplateId::judge_relevance: {
        const auto& text = v.at("statement_text");
        const auto c = concept_of(text.substr(0, text.find(' ')));
        return judged_helpful(v.at("query"), c) ? "HELPFUL" : "UNHELPFUL";
      }
      case TemplateId::filter_answerable: {
        const auto& ex = v.at("excerpt");
        return ex.find('?') != std::string::npos ? "ACCEPT\n" + trim(ex) : "REJECT";
      }
      case TemplateId::bootstrap_clusters: {
        nlohmann::ordered_json j = nlohmann::ordered_json::array();
        for (const auto& c : default_clusters()) j.push_back(to_json(c));
        return j.dump();
      }
      case TemplateId::progressive_clusters:
        return v.at("clusters");
    }
    throw Error(ErrorCode::GeneratorUnavailable, std::string(to_string(r.template_id)));
  }

 private:
  std::uint64_t h(std::string_view tag, const std::string& key) const {
    return derive_seed(seed_, std::string(tag) + ":" + key);
  }

  static Concept concept_of(const std::string& full_name) {
    const auto c = parse_full_name(full_name);
    if (!c) throw Error(ErrorCode::UnparseableResponse, full_name, "not a desk statement");
    return *c;
  }

  std::uint64_t seed_;
  std::map<std::string, std::vector<Concept>> premises_;
  std::map<std::string, std::string> cluster_by_name_;
};

/// Rule-generated preferences: for a query about concept X the preferred
/// statement keeps X's operation and property in another namespace, the
/// rejected one keeps X's namespace and property with another operation.
inline std::vector<PreferenceTriplet> make_preferences(std::size_t count, std::uint64_t seed,
                                                       std::string_view tag) {
  std::mt19937_64 rng(derive_seed(seed, "prefs:" + std::string(tag)));
  std::vector<PreferenceTriplet> out;
  for (std::size_t i = 0; i < count; ++i) {
    const Concept x{rng() % 10, rng() % 10, rng() % 10};
    Concept chosen = x, rejected = x;
    chosen.ns = (x.ns + 1 + rng() % 9) % 10;
    rejected.op = (x.op + 1 + rng() % 9) % 10;
    const std::string query = query_for(x, "lemma_search", rng());
    out.push_back({query, statement_id(chosen), statement_id(rejected), PreferenceSource::statement_vote});
  }
  return out;
}

}  // namespace fsearch::desk
