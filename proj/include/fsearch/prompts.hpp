#pragma once

// Built-in prompt templates. `{name}` is a placeholder; `{{` and `}}` are
// literal braces. `fsearch prompts` writes these to files that can then be
// edited and loaded with TemplateStore::load_dir.

#include <string_view>

namespace fsearch::prompts {

inline constexpr std::string_view kInformalize = R"(You are a mathematician fluent in Lean 4 and Mathlib.

Rewrite the formal declaration below as a precise informal statement a working
mathematician can read. Use standard notation (LaTeX is fine). Keep every
hypothesis, state the conclusion plainly, and give a short informal name that
reflects the logical content.

Context, in order:
1. Formal name: {formal_name}
2. Formal statement: {formal_statement}
3. Docstring: {docstring}
4. Neighbor statement (same file): {neighbor_statement}
5. Dependent statements with their informal versions:
{dependent_statements}
6. Related statement with its informal version (style reference):
{related_statement}

Answer with the informal statement only.
)";

inline constexpr std::string_view kFilterAnswerable = R"(You read Lean community discussion threads.

Below is an excerpt with the opening messages of one thread. Decide whether the
main question could be answered, fully or in part, by pointing to an existing
Lean 4 declaration, or whether showing such a declaration would clearly move
the thread forward. Questions about tooling, builds, CI, versions or style are
rejected.

Reply with ACCEPT or REJECT on the first line. If ACCEPT, put a one-sentence
restatement of the main question on the second line.

Excerpt:
{excerpt}
)";

inline constexpr std::string_view kBootstrapClusters = R"(You read Lean community discussion threads.

Each excerpt below has already been judged answerable by some Lean 4
declaration. Group the excerpts by the intent behind the main question. For
every group give: an id (snake_case), a short name, a description detailed
enough that someone could write new questions of this kind, and up to five
example questions copied from the excerpts' main questions.

Return a JSON array of objects with keys id, name, description, examples.

Excerpts:
{excerpts}
)";

inline constexpr std::string_view kProgressiveClusters = R"(You maintain a set of query-intent clusters for Lean questions.

Current clusters (JSON):
{clusters}

New excerpts:
{excerpts}

Place each excerpt in an existing cluster when it fits. For a cluster that
gained excerpts you may append at most one sentence to its description and add
at most one example. Never delete or reword existing descriptions, examples or
clusters. If an excerpt fits nowhere, add one new cluster with an id, name,
description and at most ten examples.

Return the full updated cluster list as a JSON array with keys id, name,
description, examples.
)";

inline constexpr std::string_view kAssignClusters = R"(You know how people ask for Lean 4 declarations.

Declaration:
- formal name: {formal_name}
- formal statement: {formal_statement}
- informal statement: {informal_statement}

Query-intent clusters:
{clusters}

Which clusters could plausibly produce a real question whose answer is this
declaration? Reply with a comma-separated list of cluster ids, or NONE.
)";

inline constexpr std::string_view kSynthesizeQuery = R"(You are an experienced Lean 4 user who often asks the community for existing declarations.

Query-intent cluster:
- name: {cluster_name}
- description: {cluster_description}
- example questions:
{cluster_examples}

Target declaration:
- formal name: {formal_name}
- formal statement: {formal_statement}
- informal statement: {informal_statement}

Write a single question that belongs to this cluster, that the target
declaration would answer or advance, and that reads like a real forum post.
Do not mention the declaration's name or paste its statement.
)";

inline constexpr std::string_view kAugmentState = R"(You are guiding a Lean 4 proof.

Proof state before the step:
{state_before}

Proof state after the step:
{state_after}

Describe in one or two sentences what the step is trying to achieve, as a user
searching for a helpful lemma would phrase it. Do not name the lemmas or the
tactic that were used.
)";

inline constexpr std::string_view kJudgeRelevance = R"(You review search results for Lean 4 questions.

Question:
{query}

Candidate declaration {statement_id}:
{statement_text}

Would showing this declaration help answer the question? Reply HELPFUL or UNHELPFUL.
)";

}  // namespace fsearch::prompts
