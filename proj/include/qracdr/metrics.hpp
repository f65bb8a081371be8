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

/** \file metrics.hpp
 *  \brief Ranking metrics (MRR, NDCG@k, Recall@k) and the analysis views built
 *  on them: per-turn NDCG, query-query and query-document similarity.
 *
 *  Evaluated queries are the run's queries. In strict mode (the default) a
 *  judged query missing from the run is an error; otherwise it scores zero.
 *  Per-query values are reduced in sorted query-id order so results do not
 *  depend on run order.
 */

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdio>
#include <limits>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "qracdr/retrieval.hpp"
#include "qracdr/vecspace.hpp"

namespace qracdr::metrics {

/// query id -> (document id -> grade)
using Qrels = std::map<std::string, std::map<std::string, int>>;

enum class Gain { linear, exponential };

struct EvalOptions {
  std::size_t mrr_cutoff = 100;
  std::size_t ndcg_k = 3;
  std::vector<std::size_t> recall_ks{10, 100};
  Gain gain = Gain::linear;
  bool strict = true;
};

namespace detail {

inline const std::map<std::string, int>& judgments(const Qrels& qrels, const std::string& qid) {
  auto it = qrels.find(qid);
  if (it == qrels.end()) throw ValidationError("qrels: no judgments for query '" + qid + "'");
  bool any = false;
  for (const auto& [doc, grade] : it->second) any = any || grade > 0;
  if (!any) throw ValidationError("qrels: query '" + qid + "' has no positively judged document");
  return it->second;
}

inline int grade_of(const std::map<std::string, int>& judged, const std::string& doc) {
  auto it = judged.find(doc);
  return it == judged.end() ? 0 : it->second;
}

inline double gain(int grade, Gain g) {
  return g == Gain::linear ? static_cast<double>(grade) : std::exp2(static_cast<double>(grade)) - 1.0;
}

/// Query ids to average over, sorted. Validates coverage in both directions.
inline std::vector<std::string> evaluated_queries(const retrieval::RankedRun& run, const Qrels& qrels,
                                                  bool strict) {
  std::vector<std::string> ids;
  std::vector<std::string> missing;
  for (const auto& r : run.results()) {
    if (!qrels.count(r.query_id)) missing.push_back(r.query_id);
    ids.push_back(r.query_id);
  }
  if (!missing.empty()) {
    std::string msg = "qrels: run queries without judgments:";
    for (const auto& m : missing) msg += " " + m;
    throw ValidationError(msg);
  }
  for (const auto& [qid, judged] : qrels) {
    if (run.contains(qid)) continue;
    if (strict) throw ValidationError("run: judged query '" + qid + "' is missing from the run");
    ids.push_back(qid);
  }
  std::sort(ids.begin(), ids.end());
  return ids;
}

template <typename PerQuery>
double mean_over(const retrieval::RankedRun& run, const Qrels& qrels, bool strict, PerQuery&& f) {
  const auto ids = evaluated_queries(run, qrels, strict);
  if (ids.empty()) return 0.0;
  static const std::vector<retrieval::Hit> kNoHits;
  double sum = 0.0;
  for (const auto& qid : ids) {
    const auto& hits = run.contains(qid) ? run.hits(qid) : kNoHits;
    sum += f(hits, judgments(qrels, qid));
  }
  return sum / static_cast<double>(ids.size());
}

}  // namespace detail

inline double reciprocal_rank(const std::vector<retrieval::Hit>& hits, const std::map<std::string, int>& judged,
                              std::size_t cutoff) {
  const std::size_t n = std::min(cutoff, hits.size());
  for (std::size_t i = 0; i < n; ++i) {
    if (detail::grade_of(judged, hits[i].doc_id) > 0) return 1.0 / static_cast<double>(i + 1);
  }
  return 0.0;
}

inline double ndcg(const std::vector<retrieval::Hit>& hits, const std::map<std::string, int>& judged,
                   std::size_t k, Gain g = Gain::linear) {
  double dcg = 0.0;
  for (std::size_t i = 0; i < std::min(k, hits.size()); ++i) {
    dcg += detail::gain(detail::grade_of(judged, hits[i].doc_id), g) / std::log2(static_cast<double>(i + 2));
  }
  std::vector<int> grades;
  for (const auto& [doc, grade] : judged) grades.push_back(grade);
  std::sort(grades.rbegin(), grades.rend());
  double idcg = 0.0;
  for (std::size_t i = 0; i < std::min(k, grades.size()); ++i) {
    idcg += detail::gain(grades[i], g) / std::log2(static_cast<double>(i + 2));
  }
  return idcg > 0.0 ? dcg / idcg : 0.0;
}

inline double recall(const std::vector<retrieval::Hit>& hits, const std::map<std::string, int>& judged,
                     std::size_t k) {
  std::size_t relevant = 0;
  for (const auto& [doc, grade] : judged) relevant += grade > 0 ? 1 : 0;
  if (relevant == 0) return 0.0;
  std::size_t found = 0;
  for (std::size_t i = 0; i < std::min(k, hits.size()); ++i) {
    found += detail::grade_of(judged, hits[i].doc_id) > 0 ? 1 : 0;
  }
  return static_cast<double>(found) / static_cast<double>(relevant);
}

inline double mrr(const retrieval::RankedRun& run, const Qrels& qrels, std::size_t cutoff = 100,
                  bool strict = true) {
  return detail::mean_over(run, qrels, strict,
                           [&](const auto& hits, const auto& judged) { return reciprocal_rank(hits, judged, cutoff); });
}

inline double ndcg_at_k(const retrieval::RankedRun& run, const Qrels& qrels, std::size_t k = 3,
                        Gain g = Gain::linear, bool strict = true) {
  return detail::mean_over(run, qrels, strict,
                           [&](const auto& hits, const auto& judged) { return ndcg(hits, judged, k, g); });
}

inline double recall_at_k(const retrieval::RankedRun& run, const Qrels& qrels, std::size_t k,
                          bool strict = true) {
  return detail::mean_over(run, qrels, strict,
                           [&](const auto& hits, const auto& judged) { return recall(hits, judged, k); });
}

struct MetricReport {
  std::string name;
  double mrr = 0.0;
  double ndcg = 0.0;
  std::vector<std::pair<std::size_t, double>> recall;  // (k, value)
};

inline MetricReport evaluate(const retrieval::RankedRun& run, const Qrels& qrels, const EvalOptions& opt = {},
                             std::string name = "run") {
  MetricReport r;
  r.name = std::move(name);
  r.mrr = mrr(run, qrels, opt.mrr_cutoff, opt.strict);
  r.ndcg = ndcg_at_k(run, qrels, opt.ndcg_k, opt.gain, opt.strict);
  for (std::size_t k : opt.recall_ks) r.recall.emplace_back(k, recall_at_k(run, qrels, k, opt.strict));
  return r;
}

inline std::string format_value(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.6f", v);
  return buf;
}

/// CSV with header `name,MRR,NDCG@k,Recall@k...`; the first column header is
/// configurable (e.g. "strategy", "representation").
inline std::string reports_to_csv(const std::vector<MetricReport>& reports, const EvalOptions& opt,
                                  const std::string& first_column = "name") {
  std::ostringstream out;
  out << first_column << ",MRR,NDCG@" << opt.ndcg_k;
  for (std::size_t k : opt.recall_ks) out << ",Recall@" << k;
  out << "\n";
  for (const auto& r : reports) {
    out << r.name << "," << format_value(r.mrr) << "," << format_value(r.ndcg);
    for (const auto& [k, v] : r.recall) out << "," << format_value(v);
    out << "\n";
  }
  return out.str();
}

struct TurnKey {
  std::string conversation_id;
  std::size_t turn = 1;
};

struct TurnRow {
  std::size_t turn = 0;
  double ndcg = 0.0;
  std::size_t count = 0;
};

/// Mean NDCG@k grouped by turn index. Only non-empty groups are emitted, in
/// ascending turn order.
inline std::vector<TurnRow> per_turn_ndcg(const retrieval::RankedRun& run, const Qrels& qrels,
                                          const std::map<std::string, TurnKey>& turns, std::size_t k = 3,
                                          Gain g = Gain::linear, bool strict = true) {
  const auto ids = detail::evaluated_queries(run, qrels, strict);
  std::map<std::size_t, std::pair<double, std::size_t>> groups;
  static const std::vector<retrieval::Hit> kNoHits;
  for (const auto& qid : ids) {
    auto it = turns.find(qid);
    if (it == turns.end()) throw ValidationError("per_turn_ndcg: query '" + qid + "' has no turn mapping");
    if (it->second.turn < 1) throw ValidationError("per_turn_ndcg: turn index must be >= 1");
    const auto& hits = run.contains(qid) ? run.hits(qid) : kNoHits;
    auto& [sum, count] = groups[it->second.turn];
    sum += ndcg(hits, detail::judgments(qrels, qid), k, g);
    ++count;
  }
  std::vector<TurnRow> rows;
  for (const auto& [turn, acc] : groups) {
    rows.push_back({turn, acc.first / static_cast<double>(acc.second), acc.second});
  }
  return rows;
}

inline std::string turn_rows_to_csv(const std::vector<TurnRow>& rows, std::size_t k = 3) {
  std::ostringstream out;
  out << "turn,ndcg@" << k << ",count\n";
  for (const auto& r : rows) out << r.turn << "," << format_value(r.ndcg) << "," << r.count << "\n";
  return out.str();
}

using EncodingMap = std::map<std::string, Embedding>;

/// Mean dot product between two encodings of the same queries.
inline double qq_similarity(const EncodingMap& a, const EncodingMap& b) {
  if (a.size() != b.size()) throw ValidationError("qq_similarity: query id sets differ in size");
  if (a.empty()) throw ValidationError("qq_similarity: no queries");
  double sum = 0.0;
  for (const auto& [qid, ea] : a) {
    auto it = b.find(qid);
    if (it == b.end()) throw ValidationError("qq_similarity: query '" + qid + "' missing from second map");
    sum += dot(ea, it->second);
  }
  return sum / static_cast<double>(a.size());
}

struct Summary {
  std::size_t count = 0;
  double mean = 0.0;
  double min = 0.0;
  double q1 = 0.0;
  double median = 0.0;
  double q3 = 0.0;
  double max = 0.0;
};

/// Linear-interpolation quantile of sorted data.
inline double quantile_sorted(const std::vector<double>& sorted, double p) {
  if (sorted.empty()) return 0.0;
  const double pos = p * static_cast<double>(sorted.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
  return sorted[lo] + (pos - static_cast<double>(lo)) * (sorted[hi] - sorted[lo]);
}

inline Summary summarize(std::vector<double> values) {
  Summary s;
  s.count = values.size();
  if (values.empty()) return s;
  std::sort(values.begin(), values.end());
  double sum = 0.0;
  for (double v : values) sum += v;
  s.mean = sum / static_cast<double>(values.size());
  s.min = values.front();
  s.max = values.back();
  s.q1 = quantile_sorted(values, 0.25);
  s.median = quantile_sorted(values, 0.5);
  s.q3 = quantile_sorted(values, 0.75);
  return s;
}

/// Per query, the largest dot product with any of its relevant documents;
/// summarized over queries.
inline Summary qd_similarity(const EncodingMap& encodings, const Qrels& qrels,
                             const retrieval::Collection& collection) {
  std::vector<double> best;
  best.reserve(encodings.size());
  for (const auto& [qid, q] : encodings) {
    const auto& judged = detail::judgments(qrels, qid);
    double top = -std::numeric_limits<double>::infinity();
    for (const auto& [doc, grade] : judged) {
      if (grade <= 0) continue;
      if (!collection.contains(doc)) {
        throw ValidationError("qd_similarity: relevant document '" + doc + "' not in collection");
      }
      top = std::max(top, dot(q.values(), collection.row(collection.row_of(doc))));
    }
    best.push_back(top);
  }
  return summarize(std::move(best));
}

}  // namespace qracdr::metrics
