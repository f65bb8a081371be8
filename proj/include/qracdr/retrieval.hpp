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

/** \file retrieval.hpp
 *  \brief Exact dot-product retrieval over an immutable collection.
 *
 *  Ranking is by raw dot product, descending, with ties broken by document id
 *  ascending so run files are reproducible.
 */

#include <algorithm>
#include <cstddef>
#include <numeric>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "qracdr/parallel.hpp"
#include "qracdr/vecspace.hpp"

namespace qracdr::retrieval {

class Collection {
 public:
  Collection() = default;

  std::size_t size() const noexcept { return ids_.size(); }
  std::size_t dim() const noexcept { return dim_; }

  const std::string& id(std::size_t row) const { return ids_[row]; }
  const std::vector<std::string>& ids() const noexcept { return ids_; }

  std::span<const double> row(std::size_t r) const {
    return std::span<const double>(data_).subspan(r * dim_, dim_);
  }

  Embedding embedding(std::size_t r) const { return Embedding(row(r)); }

  bool contains(const std::string& doc_id) const { return index_.count(doc_id) != 0; }

  std::size_t row_of(const std::string& doc_id) const {
    auto it = index_.find(doc_id);
    if (it == index_.end()) throw ValidationError("document '" + doc_id + "' not found in collection");
    return it->second;
  }

  Embedding lookup(const std::string& doc_id) const { return embedding(row_of(doc_id)); }

  friend Collection build_collection(std::vector<std::pair<std::string, Embedding>> entries);

 private:
  std::size_t dim_ = 0;
  std::vector<std::string> ids_;
  std::vector<double> data_;
  std::unordered_map<std::string, std::size_t> index_;
};

inline Collection build_collection(std::vector<std::pair<std::string, Embedding>> entries) {
  if (entries.empty()) throw ValidationError("collection must not be empty");
  Collection c;
  c.dim_ = entries.front().second.dim();
  if (c.dim_ == 0) throw ValidationError("collection embeddings must have positive dimension");
  c.ids_.reserve(entries.size());
  c.data_.reserve(entries.size() * c.dim_);
  for (auto& [id, emb] : entries) {
    if (emb.dim() != c.dim_) {
      throw ValidationError("document '" + id + "' has dimension " + std::to_string(emb.dim()) +
                            ", expected " + std::to_string(c.dim_));
    }
    emb.check_finite();
    if (!c.index_.emplace(id, c.ids_.size()).second) {
      throw ValidationError("duplicate document id '" + id + "'");
    }
    c.ids_.push_back(std::move(id));
    c.data_.insert(c.data_.end(), emb.begin(), emb.end());
  }
  return c;
}

struct Hit {
  std::string doc_id;
  double score = 0.0;
  std::size_t rank = 0;  // 1-based

  friend bool operator==(const Hit&, const Hit&) = default;
};

struct QueryResult {
  std::string query_id;
  std::vector<Hit> hits;

  friend bool operator==(const QueryResult&, const QueryResult&) = default;
};

/// Throws unless scores are non-increasing, ranks run 1..n, and no document repeats.
inline void validate_hits(const std::string& query_id, const std::vector<Hit>& hits) {
  std::unordered_map<std::string, std::size_t> seen;
  for (std::size_t i = 0; i < hits.size(); ++i) {
    if (hits[i].rank != i + 1) {
      throw ValidationError("run: query '" + query_id + "' has non-contiguous rank " +
                            std::to_string(hits[i].rank) + " at position " + std::to_string(i + 1));
    }
    if (i > 0 && hits[i].score > hits[i - 1].score) {
      throw ValidationError("run: query '" + query_id + "' has increasing score at rank " +
                            std::to_string(i + 1));
    }
    if (!seen.emplace(hits[i].doc_id, i).second) {
      throw ValidationError("run: query '" + query_id + "' lists document '" + hits[i].doc_id + "' twice");
    }
  }
}

/// Per-query ranked lists in insertion order.
class RankedRun {
 public:
  void add(std::string query_id, std::vector<Hit> hits) {
    validate_hits(query_id, hits);
    if (index_.count(query_id)) throw ValidationError("run: duplicate query '" + query_id + "'");
    index_.emplace(query_id, results_.size());
    results_.push_back({std::move(query_id), std::move(hits)});
  }

  std::size_t size() const noexcept { return results_.size(); }
  bool empty() const noexcept { return results_.empty(); }
  const std::vector<QueryResult>& results() const noexcept { return results_; }

  bool contains(const std::string& query_id) const { return index_.count(query_id) != 0; }

  const std::vector<Hit>& hits(const std::string& query_id) const {
    auto it = index_.find(query_id);
    if (it == index_.end()) throw ValidationError("run: unknown query '" + query_id + "'");
    return results_[it->second].hits;
  }

  friend bool operator==(const RankedRun& a, const RankedRun& b) { return a.results_ == b.results_; }

 private:
  std::vector<QueryResult> results_;
  std::unordered_map<std::string, std::size_t> index_;
};

/// Top-min(k, size) documents by dot product.
inline std::vector<Hit> search(const Collection& collection, const Embedding& query, std::size_t k) {
  if (k < 1) throw ValidationError("search: k must be >= 1");
  detail::require_same_dim(query.dim(), collection.dim(), "search");
  const std::size_t n = collection.size();
  std::vector<double> scores(n);
  for (std::size_t r = 0; r < n; ++r) scores[r] = detail::dot_unchecked(query.values(), collection.row(r));

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  const std::size_t top = std::min(k, n);
  auto better = [&](std::size_t a, std::size_t b) {
    if (scores[a] != scores[b]) return scores[a] > scores[b];
    return collection.id(a) < collection.id(b);
  };
  std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(top), order.end(), better);

  std::vector<Hit> hits;
  hits.reserve(top);
  for (std::size_t i = 0; i < top; ++i) {
    hits.push_back({collection.id(order[i]), scores[order[i]], i + 1});
  }
  return hits;
}

/// Batch search. Output order follows `queries` for any thread count.
inline RankedRun run_queries(const Collection& collection,
                             const std::vector<std::pair<std::string, Embedding>>& queries, std::size_t k,
                             unsigned threads = 1) {
  std::vector<std::vector<Hit>> slots(queries.size());
  parallel_for(queries.size(), threads,
               [&](std::size_t i) { slots[i] = search(collection, queries[i].second, k); });
  RankedRun run;
  for (std::size_t i = 0; i < queries.size(); ++i) run.add(queries[i].first, std::move(slots[i]));
  return run;
}

}  // namespace qracdr::retrieval
