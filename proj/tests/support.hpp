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

// Random instance generators and brute-force reference implementations shared
// by the unit tests and the acceptance binary. The oracles are written as
// plain loops and deliberately share no code with the library beyond its data
// types.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <random>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "qracdr/losses.hpp"
#include "qracdr/metrics.hpp"
#include "qracdr/retrieval.hpp"
#include "qracdr/vecspace.hpp"

namespace qracdr::support {

// --- generators -----------------------------------------------------------------

/// Thin wrapper over a std engine so generators do not consume library RNG
/// streams.
class Gen {
 public:
  explicit Gen(std::uint64_t seed) : eng_(seed) {}

  double real(double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(eng_); }
  double normal() { return std::normal_distribution<double>(0.0, 1.0)(eng_); }
  std::size_t index(std::size_t lo, std::size_t hi) {
    return std::uniform_int_distribution<std::size_t>(lo, hi)(eng_);
  }
  bool coin(double p = 0.5) { return real(0.0, 1.0) < p; }

  Embedding vec(std::size_t dim, double scale = 1.0) {
    std::vector<double> v(dim);
    for (double& x : v) x = scale * normal();
    return Embedding(std::move(v));
  }

  Embedding unit(std::size_t dim) {
    for (;;) {
      Embedding v = vec(dim);
      double n = 0.0;
      for (double x : v.values()) n += x * x;
      if (n > 1e-12) {
        n = std::sqrt(n);
        std::vector<double> out(dim);
        for (std::size_t i = 0; i < dim; ++i) out[i] = v[i] / n;
        return Embedding(std::move(out));
      }
    }
  }

  /// Coordinates drawn from a small lattice so that ties are common.
  Embedding lattice(std::size_t dim, int levels = 3) {
    std::vector<double> v(dim);
    for (double& x : v) x = static_cast<double>(static_cast<int>(index(0, 2 * levels)) - levels) * 0.5;
    return Embedding(std::move(v));
  }

  losses::LossInputs loss_inputs(std::size_t dim, std::size_t max_negatives) {
    losses::LossInputs in;
    in.session_query = vec(dim);
    in.rewrite = vec(dim);
    in.positive = vec(dim);
    in.hard_negative = vec(dim);
    const std::size_t n = index(1, max_negatives);
    for (std::size_t i = 0; i < n; ++i) in.negatives.push_back(vec(dim));
    return in;
  }

  std::mt19937_64& engine() { return eng_; }

 private:
  std::mt19937_64 eng_;
};

inline std::string doc_name(std::size_t i) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "doc%04zu", i);
  return buf;
}

/// Random collection; with `ties` the rows come from a coarse lattice.
inline std::vector<std::pair<std::string, Embedding>> random_entries(Gen& g, std::size_t count, std::size_t dim,
                                                                     bool ties) {
  std::vector<std::pair<std::string, Embedding>> entries;
  std::vector<std::size_t> names(count);
  for (std::size_t i = 0; i < count; ++i) names[i] = i;
  std::shuffle(names.begin(), names.end(), g.engine());  // id order differs from row order
  for (std::size_t i = 0; i < count; ++i) {
    entries.emplace_back(doc_name(names[i]), ties ? g.lattice(dim) : g.vec(dim));
  }
  return entries;
}

struct RunInstance {
  retrieval::RankedRun run;
  metrics::Qrels qrels;
};

/// Small random run plus qrels. Scores strictly decrease with rank. Some
/// judged documents are never retrieved, some retrieved ones are unjudged, and
/// grades range over 0..3.
inline RunInstance random_run(Gen& g) {
  RunInstance out;
  const std::size_t queries = g.index(1, 6);
  const std::size_t pool = g.index(3, 30);
  for (std::size_t q = 0; q < queries; ++q) {
    const std::string qid = "q" + std::to_string(q);
    std::vector<std::size_t> docs(pool);
    for (std::size_t i = 0; i < pool; ++i) docs[i] = i;
    std::shuffle(docs.begin(), docs.end(), g.engine());
    const std::size_t depth = g.index(0, pool);
    std::vector<retrieval::Hit> hits;
    double score = g.real(5.0, 10.0);
    for (std::size_t r = 0; r < depth; ++r) {
      hits.push_back({doc_name(docs[r]), score, r + 1});
      score -= g.real(0.001, 1.0);
    }
    out.run.add(qid, hits);
    auto& judged = out.qrels[qid];
    const std::size_t n_judged = g.index(1, std::min<std::size_t>(pool, 6));
    std::shuffle(docs.begin(), docs.end(), g.engine());
    for (std::size_t i = 0; i < n_judged; ++i) judged[doc_name(docs[i])] = static_cast<int>(g.index(0, 3));
    judged[doc_name(docs[0])] = static_cast<int>(g.index(1, 3));  // at least one positive
  }
  return out;
}

// --- oracles --------------------------------------------------------------------

/// Full sort of every document by (score desc, id asc).
inline std::vector<retrieval::Hit> oracle_search(const std::vector<std::pair<std::string, Embedding>>& entries,
                                                 const Embedding& query, std::size_t k) {
  std::vector<retrieval::Hit> all;
  for (const auto& [id, e] : entries) {
    double s = 0.0;
    for (std::size_t i = 0; i < e.dim(); ++i) s += query[i] * e[i];
    all.push_back({id, s, 0});
  }
  std::sort(all.begin(), all.end(), [](const retrieval::Hit& a, const retrieval::Hit& b) {
    if (a.score != b.score) return a.score > b.score;
    return a.doc_id < b.doc_id;
  });
  if (all.size() > k) all.resize(k);
  for (std::size_t i = 0; i < all.size(); ++i) all[i].rank = i + 1;
  return all;
}

inline int oracle_grade(const metrics::Qrels& qrels, const std::string& q, const std::string& d) {
  auto it = qrels.find(q);
  if (it == qrels.end()) return 0;
  auto jt = it->second.find(d);
  return jt == it->second.end() ? 0 : jt->second;
}

/// Queries that are evaluated: everything in qrels (missing runs score 0).
inline std::vector<std::string> oracle_queries(const metrics::Qrels& qrels) {
  std::vector<std::string> ids;
  for (const auto& kv : qrels) ids.push_back(kv.first);
  return ids;
}

inline double oracle_mrr(const retrieval::RankedRun& run, const metrics::Qrels& qrels, std::size_t cutoff) {
  double total = 0.0;
  const auto ids = oracle_queries(qrels);
  for (const auto& q : ids) {
    double rr = 0.0;
    if (run.contains(q)) {
      const auto& hits = run.hits(q);
      for (std::size_t i = 0; i < hits.size() && i < cutoff; ++i) {
        if (oracle_grade(qrels, q, hits[i].doc_id) > 0) {
          rr = 1.0 / static_cast<double>(i + 1);
          break;
        }
      }
    }
    total += rr;
  }
  return total / static_cast<double>(ids.size());
}

inline double oracle_ndcg(const retrieval::RankedRun& run, const metrics::Qrels& qrels, std::size_t k,
                          bool exponential = false) {
  auto gain = [&](int g) { return exponential ? std::pow(2.0, g) - 1.0 : static_cast<double>(g); };
  double total = 0.0;
  const auto ids = oracle_queries(qrels);
  for (const auto& q : ids) {
    double dcg = 0.0;
    if (run.contains(q)) {
      const auto& hits = run.hits(q);
      for (std::size_t i = 0; i < hits.size() && i < k; ++i) {
        dcg += gain(oracle_grade(qrels, q, hits[i].doc_id)) / std::log2(static_cast<double>(i) + 2.0);
      }
    }
    std::vector<int> grades;
    for (const auto& kv : qrels.at(q)) grades.push_back(kv.second);
    std::sort(grades.rbegin(), grades.rend());
    double idcg = 0.0;
    for (std::size_t i = 0; i < grades.size() && i < k; ++i) {
      idcg += gain(grades[i]) / std::log2(static_cast<double>(i) + 2.0);
    }
    total += idcg > 0.0 ? dcg / idcg : 0.0;
  }
  return total / static_cast<double>(ids.size());
}

inline double oracle_recall(const retrieval::RankedRun& run, const metrics::Qrels& qrels, std::size_t k) {
  double total = 0.0;
  const auto ids = oracle_queries(qrels);
  for (const auto& q : ids) {
    std::size_t relevant = 0;
    for (const auto& kv : qrels.at(q)) relevant += kv.second > 0 ? 1 : 0;
    std::size_t found = 0;
    if (run.contains(q)) {
      const auto& hits = run.hits(q);
      for (std::size_t i = 0; i < hits.size() && i < k; ++i) {
        found += oracle_grade(qrels, q, hits[i].doc_id) > 0 ? 1 : 0;
      }
    }
    total += relevant ? static_cast<double>(found) / static_cast<double>(relevant) : 0.0;
  }
  return total / static_cast<double>(ids.size());
}

/// Loss values written straight from the formulas, with a naive softmax.
inline double oracle_sqdist(const Embedding& a, const Embedding& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.dim(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
  return s;
}

inline double oracle_dot(const Embedding& a, const Embedding& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.dim(); ++i) s += a[i] * b[i];
  return s;
}

inline double oracle_cl(const losses::LossInputs& in) {
  const double pos = std::exp(oracle_dot(in.session_query, in.positive));
  double denom = pos;
  for (const auto& n : in.negatives) denom += std::exp(oracle_dot(in.session_query, n));
  return -std::log(pos / denom);
}

// --- files ----------------------------------------------------------------------

inline std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

/// Fresh scratch directory under the system temp dir.
inline std::filesystem::path scratch_dir(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / ("qracdr_test_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

}  // namespace qracdr::support
