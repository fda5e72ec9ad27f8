#include <gtest/gtest.h>

#include <map>
#include <set>

#include "fsearch/sampling.hpp"
#include "test_support.hpp"

using namespace fsearch;
using tsupport::query;

namespace {

std::vector<QueryRecord> queries_for(const Corpus& c, std::size_t n, std::size_t stride = 1) {
  std::vector<QueryRecord> qs;
  for (std::size_t i = 0; i < n; ++i)
    qs.push_back(query("q" + std::to_string(i), "what is lemma " + std::to_string(i),
                       c[(i * stride) % c.size()].id));
  return qs;
}

}  // namespace

TEST(BuildBatch, ShapeAndDistinctCandidates) {
  const auto corpus = tsupport::numbered_corpus(100);
  const auto qs = queries_for(corpus, 8, 3);
  SamplingConfig cfg;
  cfg.seed = 9;
  const auto b = build_batch(qs, corpus, cfg);
  ASSERT_EQ(b.groups.size(), 8u);
  ASSERT_EQ(b.candidates.size(), 64u);
  EXPECT_EQ(b.group_size(), 8u);
  std::set<std::string> uniq(b.candidates.begin(), b.candidates.end());
  EXPECT_EQ(uniq.size(), 64u);
  std::set<std::string> golds;
  for (const auto& q : qs) golds.insert(q.gold_id);
  for (std::size_t i = 0; i < 8; ++i) {
    EXPECT_EQ(b.positive_index[i], i * 8);
    EXPECT_EQ(b.candidates[i * 8], qs[i].gold_id);
    EXPECT_EQ(b.candidate_texts[i * 8], corpus.find(qs[i].gold_id)->statement_text);
    ASSERT_EQ(b.groups[i].negatives.size(), 7u);
    for (const auto& n : b.groups[i].negatives) EXPECT_FALSE(golds.count(n)) << n;
    EXPECT_EQ(b.groups[i].query_text, qs[i].text);
  }
  const auto again = build_batch(qs, corpus, cfg);
  EXPECT_EQ(again.candidates, b.candidates);
  cfg.seed = 10;
  EXPECT_NE(build_batch(qs, corpus, cfg).candidates, b.candidates);
}

TEST(BuildBatch, DenseCaseUsesWholeComplement) {
  const auto corpus = tsupport::numbered_corpus(16);
  const auto qs = queries_for(corpus, 2);
  SamplingConfig cfg;
  const auto b = build_batch(qs, corpus, cfg);
  std::set<std::string> uniq(b.candidates.begin(), b.candidates.end());
  EXPECT_EQ(uniq.size(), 16u);
}

TEST(BuildBatch, Errors) {
  const auto corpus = tsupport::numbered_corpus(20);
  SamplingConfig cfg;
  auto qs = queries_for(corpus, 3);
  try {
    build_batch(qs, corpus, cfg);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::CorpusTooSmall);
  }
  qs = queries_for(corpus, 2);
  qs[1].gold_id = qs[0].gold_id;
  try {
    build_batch(qs, tsupport::numbered_corpus(40), cfg);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::DuplicateGold);
  }
  qs[1].gold_id = "missing";
  EXPECT_THROW(build_batch(qs, tsupport::numbered_corpus(40), cfg), Error);
}

TEST(BuildBatch, NegativesAreUniformOverNonGolds) {
  const auto corpus = tsupport::numbered_corpus(40);
  const auto qs = queries_for(corpus, 1);
  std::map<std::string, int> hits;
  SamplingConfig cfg;
  const int trials = 4000;
  for (int t = 0; t < trials; ++t) {
    cfg.seed = static_cast<std::uint64_t>(t);
    const auto b = build_batch(qs, corpus, cfg);
    for (const auto& n : b.groups[0].negatives) ++hits[n];
  }
  EXPECT_EQ(hits.size(), 39u);
  EXPECT_FALSE(hits.count(qs[0].gold_id));
  const double expect = trials * 7.0 / 39.0;
  for (auto& [id, h] : hits) EXPECT_NEAR(h, expect, 0.15 * expect) << id;
}

TEST(BuildBatch, AugmentationOnlyTouchesConfiguredModalities) {
  const auto corpus = tsupport::numbered_corpus(40);
  auto qs = queries_for(corpus, 2);
  qs[0].modality = Modality::formal_statement;
  qs[0].text = "theorem a b c d e f g h i j";
  qs[1].text = "informal a b c d e f g h i j";
  const Vocab v(std::vector<std::string>{"ZZ"});
  SamplingConfig cfg;
  cfg.augment_rate = 0.2;
  cfg.vocab = &v;
  const auto b = build_batch(qs, corpus, cfg);
  EXPECT_EQ(tokenize(b.groups[0].query_text).size(), 11u);
  EXPECT_NE(b.groups[0].query_text, qs[0].text);
  std::size_t zz = 0;
  for (auto& t : tokenize(b.groups[0].query_text)) zz += t == "ZZ";
  EXPECT_EQ(zz, 2u);
  EXPECT_EQ(b.groups[1].query_text, qs[1].text);
}

TEST(PlanEpoch, CoversEveryQueryOnceWithoutGoldRepeats) {
  const auto corpus = tsupport::numbered_corpus(10);
  // Many queries share golds, forcing deferrals.
  std::vector<QueryRecord> qs;
  for (int i = 0; i < 57; ++i)
    qs.push_back(query("q" + std::to_string(i), "t", corpus[static_cast<std::size_t>(i % 10)].id));
  const auto plan = plan_epoch(qs, 8, 5);
  std::vector<int> seen(qs.size(), 0);
  for (const auto& batch : plan) {
    EXPECT_LE(batch.size(), 8u);
    std::set<std::string> golds;
    for (auto i : batch) {
      ++seen[i];
      EXPECT_TRUE(golds.insert(qs[i].gold_id).second);
    }
  }
  for (int s : seen) EXPECT_EQ(s, 1);
  EXPECT_EQ(plan_epoch(qs, 8, 5), plan);
  EXPECT_NE(plan_epoch(qs, 8, 6), plan);
}
