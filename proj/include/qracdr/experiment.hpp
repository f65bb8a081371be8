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

#pragma once

/** \file experiment.hpp
 *  \brief Retrieval with composed representations: the midpoint of rewrite and
 *  relevant document (aligned), the rewrite itself (original), and their half
 *  difference (non-aligned). Kept apart from geometry.hpp so the geometry
 *  header stays free of data and retrieval dependencies.
 */

#include <string>
#include <utility>
#include <vector>

#include "qracdr/data.hpp"
#include "qracdr/geometry.hpp"
#include "qracdr/metrics.hpp"
#include "qracdr/retrieval.hpp"

namespace qracdr::geometry {

enum class Representation { aligned, original, non_aligned };

inline const char* to_string(Representation r) {
  switch (r) {
    case Representation::aligned: return "aligned";
    case Representation::original: return "original";
    case Representation::non_aligned: return "non_aligned";
  }
  return "unknown";
}

inline Embedding represent(Representation mode, const Embedding& rewrite, const Embedding& positive) {
  switch (mode) {
    case Representation::aligned: return compose_aligned(rewrite, positive);
    case Representation::original: return rewrite;
    case Representation::non_aligned: return compose_non_aligned(rewrite, positive);
  }
  return rewrite;
}

/// One row per representation, in the order aligned, original, non-aligned.
inline std::vector<metrics::MetricReport> prelim_experiment(const std::vector<data::SessionRecord>& records,
                                                            const retrieval::Collection& collection,
                                                            const metrics::Qrels& qrels,
                                                            const metrics::EvalOptions& opt = {},
                                                            unsigned threads = 1) {
  if (records.empty()) throw ValidationError("prelim_experiment: empty dataset");
  if (collection.size() == 0) throw ValidationError("prelim_experiment: empty collection");
  const metrics::Qrels judged = data::qrels_for(records, qrels);
  std::size_t depth = std::max(opt.mrr_cutoff, opt.ndcg_k);
  for (std::size_t k : opt.recall_ks) depth = std::max(depth, k);

  std::vector<metrics::MetricReport> table;
  for (Representation mode : {Representation::aligned, Representation::original, Representation::non_aligned}) {
    std::vector<std::pair<std::string, Embedding>> queries;
    queries.reserve(records.size());
    for (const auto& r : records) {
      queries.emplace_back(r.query_id, represent(mode, r.rewrite_embedding, collection.lookup(r.positive_doc_id)));
    }
    const auto run = retrieval::run_queries(collection, queries, depth, threads);
    table.push_back(metrics::evaluate(run, judged, opt, to_string(mode)));
  }
  return table;
}

}  // namespace qracdr::geometry
