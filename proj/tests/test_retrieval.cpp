/*
 * Copyright 2026 The qracdr Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#include <gtest/gtest.h>

#include "qracdr/retrieval.hpp"
#include "support.hpp"

using namespace qracdr;
using namespace qracdr::retrieval;

namespace {

Collection small() {
  return build_collection({{"a", Embedding{1, 0}}, {"b", Embedding{0, 1}}, {"c", Embedding{0.5, 0.5}}});
}

std::vector<std::string> ids_of(const std::vector<Hit>& hits) {
  std::vector<std::string> out;
  for (const auto& h : hits) out.push_back(h.doc_id);
  return out;
}

}  // namespace

TEST(BuildCollection, RejectsBadInput) {
  EXPECT_THROW(build_collection({}), ValidationError);
  EXPECT_THROW(build_collection({{"a", Embedding{1, 0}}, {"a", Embedding{0, 1}}}), ValidationError);
  try {
    build_collection({{"a", Embedding{1, 0}}, {"b", Embedding{0, 1, 0}}});
    FAIL();
  } catch (const ValidationError& e) {
    EXPECT_NE(std::string(e.what()).find("'b'"), std::string::npos);
  }
}

TEST(BuildCollection, LookupByIdAndRow) {
  const auto c = small();
  EXPECT_EQ(c.size(), 3u);
  EXPECT_EQ(c.dim(), 2u);
  EXPECT_EQ(c.row_of("c"), 2u);
  EXPECT_EQ(c.lookup("b"), (Embedding{0, 1}));
  EXPECT_FALSE(c.contains("z"));
  EXPECT_THROW(c.row_of("z"), ValidationError);
}

TEST(Search, HandExamples) {
  const auto c = small();
  auto hits = search(c, Embedding{1, 0}, 3);
  EXPECT_EQ(ids_of(hits), (std::vector<std::string>{"a", "c", "b"}));
  EXPECT_EQ(hits[0].score, 1.0);
  EXPECT_EQ(hits[1].score, 0.5);
  EXPECT_EQ(hits[2].score, 0.0);
  EXPECT_EQ(hits[2].rank, 3u);

  // all three score 1: ties broken by id
  hits = search(c, Embedding{1, 1}, 3);
  EXPECT_EQ(ids_of(hits), (std::vector<std::string>{"a", "b", "c"}));

  hits = search(c, Embedding{1, 0}, 10);
  EXPECT_EQ(hits.size(), 3u);
  hits = search(c, Embedding{0, 1}, 1);
  EXPECT_EQ(ids_of(hits), (std::vector<std::string>{"b"}));
}

TEST(Search, Errors) {
  const auto c = small();
  EXPECT_THROW(search(c, Embedding{1, 0}, 0), ValidationError);
  EXPECT_THROW(search(c, Embedding{1, 0, 0}, 1), ValidationError);
}

TEST(Search, MatchesFullSortOracle) {
  support::Gen g(61);
  for (int i = 0; i < 300; ++i) {
    const bool ties = i % 2 == 0;
    const std::size_t dim = g.index(2, 12);
    const auto entries = support::random_entries(g, g.index(1, 200), dim, ties);
    const auto c = build_collection(entries);
    const auto q = ties ? g.lattice(dim) : g.vec(dim);
    const std::size_t k = g.index(1, 250);
    EXPECT_EQ(search(c, q, k), support::oracle_search(entries, q, k));
  }
}

TEST(Search, ScoresEqualDotAndDecrease) {
  support::Gen g(62);
  const auto entries = support::random_entries(g, 300, 16, false);
  const auto c = build_collection(entries);
  for (int i = 0; i < 50; ++i) {
    const auto q = g.vec(16);
    const auto hits = search(c, q, 50);
    ASSERT_EQ(hits.size(), 50u);
    for (std::size_t r = 0; r < hits.size(); ++r) {
      EXPECT_EQ(hits[r].score, dot(q, c.lookup(hits[r].doc_id)));
      EXPECT_EQ(hits[r].rank, r + 1);
      if (r > 0) {
        EXPECT_LE(hits[r].score, hits[r - 1].score);
      }
    }
  }
}

TEST(Search, PrefixOfLargerK) {
  support::Gen g(63);
  const auto c = build_collection(support::random_entries(g, 100, 8, true));
  for (int i = 0; i < 50; ++i) {
    const auto q = g.lattice(8);
    const auto big = search(c, q, 100);
    const auto few = search(c, q, 7);
    EXPECT_TRUE(std::equal(few.begin(), few.end(), big.begin()));
  }
}

TEST(RankedRun, ValidatesHits) {
  RankedRun run;
  EXPECT_THROW(run.add("q", {{"a", 1.0, 1}, {"b", 0.5, 3}}), ValidationError);
  EXPECT_THROW(run.add("q", {{"a", 1.0, 1}, {"b", 2.0, 2}}), ValidationError);
  EXPECT_THROW(run.add("q", {{"a", 1.0, 1}, {"a", 0.5, 2}}), ValidationError);
  run.add("q", {{"a", 1.0, 1}, {"b", 1.0, 2}});
  EXPECT_THROW(run.add("q", {}), ValidationError);
  EXPECT_THROW(run.hits("r"), ValidationError);
  EXPECT_EQ(run.size(), 1u);
}

TEST(RunQueries, EmptyAndOrder) {
  const auto c = small();
  EXPECT_TRUE(run_queries(c, {}, 5).empty());
  const auto run = run_queries(c, {{"z", Embedding{0, 1}}, {"y", Embedding{1, 0}}}, 2);
  ASSERT_EQ(run.size(), 2u);
  EXPECT_EQ(run.results()[0].query_id, "z");
  EXPECT_EQ(run.hits("y").front().doc_id, "a");
}

TEST(RunQueries, ThreadCountDoesNotChangeOutput) {
  support::Gen g(64);
  const auto c = build_collection(support::random_entries(g, 400, 10, true));
  std::vector<std::pair<std::string, Embedding>> queries;
  for (int i = 0; i < 97; ++i) queries.emplace_back("q" + std::to_string(i), g.lattice(10));
  const auto one = run_queries(c, queries, 20, 1);
  for (unsigned t : {2u, 3u, 8u}) EXPECT_EQ(run_queries(c, queries, 20, t), one);
}

TEST(RunQueries, SameAsIndividualSearches) {
  support::Gen g(65);
  const auto c = build_collection(support::random_entries(g, 50, 6, false));
  std::vector<std::pair<std::string, Embedding>> queries;
  for (int i = 0; i < 20; ++i) queries.emplace_back("q" + std::to_string(i), g.vec(6));
  const auto run = run_queries(c, queries, 5, 4);
  for (const auto& [id, q] : queries) EXPECT_EQ(run.hits(id), search(c, q, 5));
}
