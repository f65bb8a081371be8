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

/** \file data.hpp
 *  \brief Conversational session records and the synthetic benchmark generator.
 *
 *  Generative model. g denotes a standard Gaussian vector, so every noise
 *  level is a per-coordinate standard deviation.
 *
 *    topic_t   ~ uniform direction
 *    doc       = normalize(topic_t + doc_noise * g)
 *    rewrite   = normalize(d+ + rewrite_noise * g)
 *    signal    = d+ + intent_share * (rewrite - d+) + history_noise * H z + leak_n
 *    features  = normalize(P signal)
 *
 *  The session signal sits between the relevant document and its rewrite, as
 *  the user intent does, and is corrupted by history noise confined to a fixed
 *  random subspace H of rank history_rank (z ~ N(0, I)). A learned linear
 *  encoder can project that subspace out; the identity map cannot. With
 *  history_rank == 0 or >= dim the noise is isotropic instead.
 *
 *  Each conversation starts on a random topic and switches to a different one
 *  with probability topic_shift_prob before every later turn. leak_n models
 *  off-topic history: it points at the mean topic of the earlier turns whose
 *  topic differs from the current one, weighted by the fraction of such turns,
 *  and grows with depth as leakage * (n-1)/n. This form is a modeling choice.
 *
 *  P is the identity when feature_dim == dim and a fixed Gaussian projection
 *  otherwise. Random draws never depend on noise levels, so two configs that
 *  differ only in a noise level share topics, documents and positives.
 */

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <cstdio>
#include <map>
#include <numeric>
#include <string>
#include <vector>

#include "qracdr/metrics.hpp"
#include "qracdr/retrieval.hpp"
#include "qracdr/vecspace.hpp"

namespace qracdr::data {

struct SessionRecord {
  std::string conversation_id;
  std::size_t turn = 1;
  std::string query_id;
  std::vector<double> features;
  Embedding rewrite_embedding;
  std::string positive_doc_id;
  std::vector<std::string> hard_negative_doc_ids;

  friend bool operator==(const SessionRecord&, const SessionRecord&) = default;
};

struct GenConfig {
  std::size_t num_topics = 20;
  std::size_t docs_per_topic = 500;
  std::size_t dim = 64;
  std::size_t feature_dim = 64;
  std::size_t sessions = 300;
  std::size_t min_turns = 3;
  std::size_t max_turns = 8;
  double doc_noise = 0.0625;
  double rewrite_noise = 0.2;
  double history_noise = 0.8;
  std::size_t history_rank = 16;
  double intent_share = 0.5;
  double leakage = 0.6;
  double topic_shift_prob = 0.3;
  std::size_t hard_negatives = 3;
  std::size_t positives_per_turn = 1;
  double train_fraction = 0.7;
  double dev_fraction = 0.15;
  std::uint64_t seed = 42;

  void validate() const {
    auto positive = [](std::size_t v, const char* name) {
      if (v == 0) throw ValidationError(std::string("generator: ") + name + " must be positive");
    };
    positive(num_topics, "num_topics");
    positive(docs_per_topic, "docs_per_topic");
    positive(sessions, "sessions");
    positive(min_turns, "min_turns");
    positive(positives_per_turn, "positives_per_turn");
    if (dim < 2) throw ValidationError("generator: dim must be >= 2");
    if (feature_dim < 1) throw ValidationError("generator: feature_dim must be positive");
    if (max_turns < min_turns) throw ValidationError("generator: max_turns < min_turns");
    auto nonneg = [](double v, const char* name) {
      if (!(v >= 0.0) || !std::isfinite(v)) {
        throw ValidationError(std::string("generator: ") + name + " must be finite and >= 0");
      }
    };
    nonneg(doc_noise, "doc_noise");
    nonneg(rewrite_noise, "rewrite_noise");
    nonneg(history_noise, "history_noise");
    nonneg(leakage, "leakage");
    auto prob = [](double v, const char* name) {
      if (!(v >= 0.0 && v <= 1.0)) throw ValidationError(std::string("generator: ") + name + " must lie in [0, 1]");
    };
    prob(topic_shift_prob, "topic_shift_prob");
    prob(train_fraction, "train_fraction");
    prob(dev_fraction, "dev_fraction");
    prob(intent_share, "intent_share");
    if (train_fraction + dev_fraction > 1.0) {
      throw ValidationError("generator: train_fraction + dev_fraction must not exceed 1");
    }
    if (positives_per_turn + hard_negatives > docs_per_topic) {
      throw ValidationError("generator: docs_per_topic too small for positives plus hard negatives");
    }
    if (topic_shift_prob > 0.0 && num_topics < 2) {
      throw ValidationError("generator: topic shifts need at least two topics");
    }
  }
};

struct Dataset {
  std::size_t dim = 0;
  std::size_t feature_dim = 0;
  retrieval::Collection collection;
  std::vector<SessionRecord> train;
  std::vector<SessionRecord> dev;
  std::vector<SessionRecord> test;
  metrics::Qrels qrels;
  std::map<std::string, std::size_t> doc_topics;  // sidecar: document -> topic
};

/// Qrels restricted to the given records.
inline metrics::Qrels qrels_for(const std::vector<SessionRecord>& records, const metrics::Qrels& all) {
  metrics::Qrels out;
  for (const auto& r : records) {
    auto it = all.find(r.query_id);
    if (it == all.end()) throw ValidationError("qrels: no judgments for query '" + r.query_id + "'");
    out.emplace(r.query_id, it->second);
  }
  return out;
}

inline std::map<std::string, metrics::TurnKey> turn_map(const std::vector<SessionRecord>& records) {
  std::map<std::string, metrics::TurnKey> out;
  for (const auto& r : records) out.emplace(r.query_id, metrics::TurnKey{r.conversation_id, r.turn});
  return out;
}

namespace detail {

inline std::string padded(const char* prefix, std::size_t v, int width) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%s%0*zu", prefix, width, v);
  return buf;
}

/// Fisher-Yates with the library's own generator, so the order does not
/// depend on the standard library's shuffle.
template <class T>
void shuffle(std::vector<T>& v, Rng& rng) {
  for (std::size_t i = v.size(); i > 1; --i) std::swap(v[i - 1], v[rng.below(i)]);
}

}  // namespace detail

inline Dataset generate(const GenConfig& cfg) {
  cfg.validate();
  Rng rng(cfg.seed);
  const std::size_t m = cfg.dim;

  std::vector<Embedding> topics;
  topics.reserve(cfg.num_topics);
  for (std::size_t t = 0; t < cfg.num_topics; ++t) topics.push_back(random_unit(m, rng));

  Dataset ds;
  ds.dim = m;
  ds.feature_dim = cfg.feature_dim;
  std::vector<std::pair<std::string, Embedding>> entries;
  entries.reserve(cfg.num_topics * cfg.docs_per_topic);
  const int id_width = static_cast<int>(std::to_string(cfg.num_topics * cfg.docs_per_topic).size());
  for (std::size_t t = 0; t < cfg.num_topics; ++t) {
    for (std::size_t j = 0; j < cfg.docs_per_topic; ++j) {
      std::string id = detail::padded("d", t * cfg.docs_per_topic + j, id_width);
      ds.doc_topics.emplace(id, t);
      Embedding doc = topics[t];
      axpy(cfg.doc_noise, gaussian(m, rng), doc);
      entries.emplace_back(std::move(id), normalized(doc));
    }
  }
  ds.collection = retrieval::build_collection(entries);
  const auto& docs = ds.collection;

  // projection for feature_dim != dim
  std::vector<double> projection;
  if (cfg.feature_dim != m) {
    projection.resize(cfg.feature_dim * m);
    const double s = 1.0 / std::sqrt(static_cast<double>(m));
    for (double& v : projection) v = s * rng.normal();
  }

  // orthonormal basis of the history-noise subspace (Gram-Schmidt)
  std::vector<Embedding> history_basis;
  if (cfg.history_rank > 0 && cfg.history_rank < m) {
    while (history_basis.size() < cfg.history_rank) {
      Embedding v = gaussian(m, rng);
      for (const auto& b : history_basis) axpy(-dot(v, b), b, v);
      history_basis.push_back(normalized(v));
    }
  }

  std::vector<std::vector<SessionRecord>> conversations(cfg.sessions);
  const int conv_width = static_cast<int>(std::to_string(cfg.sessions).size());
  for (std::size_t s = 0; s < cfg.sessions; ++s) {
    const std::string conv_id = detail::padded("c", s, conv_width);
    const std::size_t turns = rng.between(cfg.min_turns, cfg.max_turns);
    std::size_t topic = rng.below(cfg.num_topics);
    std::vector<std::size_t> turn_topics;
    for (std::size_t n = 1; n <= turns; ++n) {
      const double shift_draw = rng.uniform();
      if (n > 1 && shift_draw < cfg.topic_shift_prob) {
        topic = (topic + 1 + rng.below(cfg.num_topics - 1)) % cfg.num_topics;
      }
      const std::size_t first_row = topic * cfg.docs_per_topic;
      const std::size_t pos_row = first_row + rng.below(cfg.docs_per_topic);
      const Embedding positive = docs.embedding(pos_row);

      // extra positives and hard negatives: nearest same-topic documents to d+
      std::vector<std::size_t> neighbours;
      for (std::size_t r = first_row; r < first_row + cfg.docs_per_topic; ++r) {
        if (r != pos_row) neighbours.push_back(r);
      }
      std::vector<double> sim(docs.size(), 0.0);
      for (std::size_t r : neighbours) sim[r] = dot(positive.values(), docs.row(r));
      const std::size_t want = cfg.positives_per_turn - 1 + cfg.hard_negatives;
      std::partial_sort(neighbours.begin(), neighbours.begin() + static_cast<std::ptrdiff_t>(want),
                        neighbours.end(), [&](std::size_t a, std::size_t b) {
                          if (sim[a] != sim[b]) return sim[a] > sim[b];
                          return a < b;
                        });

      SessionRecord rec;
      rec.conversation_id = conv_id;
      rec.turn = n;
      rec.query_id = conv_id + "_t" + std::to_string(n);
      rec.positive_doc_id = docs.id(pos_row);

      auto& judged = ds.qrels[rec.query_id];
      judged[rec.positive_doc_id] = 1;
      for (std::size_t i = 0; i + 1 < cfg.positives_per_turn; ++i) judged[docs.id(neighbours[i])] = 1;
      for (std::size_t i = cfg.positives_per_turn - 1; i < want; ++i) {
        rec.hard_negative_doc_ids.push_back(docs.id(neighbours[i]));
      }

      // rewrite = normalize(d+ + r); exact copy of d+ in the noiseless limit
      const Embedding rewrite_noise = gaussian(m, rng);
      Embedding rewrite_raw = positive;
      axpy(cfg.rewrite_noise, rewrite_noise, rewrite_raw);
      rec.rewrite_embedding = cfg.rewrite_noise == 0.0 ? positive : normalized(rewrite_raw);

      // session signal: intent + history noise + leakage from earlier off-topic turns
      Embedding signal = positive;
      axpy(cfg.intent_share, rec.rewrite_embedding - positive, signal);
      const Embedding z = gaussian(history_basis.empty() ? m : cfg.history_rank, rng);
      if (history_basis.empty()) {
        axpy(cfg.history_noise, z, signal);
      } else {
        for (std::size_t j = 0; j < cfg.history_rank; ++j) axpy(cfg.history_noise * z[j], history_basis[j], signal);
      }
      Embedding leak(m);
      std::size_t off_topic = 0;
      for (std::size_t prev : turn_topics) {
        if (prev != topic) {
          axpy(1.0, topics[prev], leak);
          ++off_topic;
        }
      }
      if (off_topic > 0) {
        const double depth = static_cast<double>(n - 1) / static_cast<double>(n);
        const double share = static_cast<double>(off_topic) / static_cast<double>(n - 1);
        axpy(cfg.leakage * depth * share / static_cast<double>(off_topic), leak, signal);
      }
      Embedding projected(cfg.feature_dim);
      if (projection.empty()) {
        projected = signal;
      } else {
        for (std::size_t f = 0; f < cfg.feature_dim; ++f) {
          projected[f] = qracdr::detail::dot_unchecked(std::span<const double>(projection).subspan(f * m, m),
                                                       signal.values());
        }
      }
      rec.features = normalized(projected).vector();
      turn_topics.push_back(topic);
      conversations[s].push_back(std::move(rec));
    }
  }

  // splits are disjoint by conversation
  std::vector<std::size_t> order(cfg.sessions);
  std::iota(order.begin(), order.end(), 0);
  detail::shuffle(order, rng);
  const auto n_train = static_cast<std::size_t>(std::llround(cfg.train_fraction * static_cast<double>(cfg.sessions)));
  const auto n_dev = static_cast<std::size_t>(std::llround(cfg.dev_fraction * static_cast<double>(cfg.sessions)));
  std::vector<int> split_of(cfg.sessions, 2);
  for (std::size_t i = 0; i < cfg.sessions; ++i) {
    if (i < n_train) {
      split_of[order[i]] = 0;
    } else if (i < n_train + n_dev) {
      split_of[order[i]] = 1;
    }
  }
  for (std::size_t s = 0; s < cfg.sessions; ++s) {
    auto& target = split_of[s] == 0 ? ds.train : split_of[s] == 1 ? ds.dev : ds.test;
    for (auto& rec : conversations[s]) target.push_back(std::move(rec));
  }
  return ds;
}

}  // namespace qracdr::data
