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

/** \file trainer.hpp
 *  \brief Session-query encoder and its training loop.
 *
 *  Only the session side learns. Documents and rewrites are read through const
 *  references and never modified. Two encoder modes exist:
 *
 *  - linear: q = W f + b over the record's session features;
 *  - free_table: one free vector per training query, which makes every
 *    objective a function of independent per-query points (used for
 *    convex-oracle checks).
 *
 *  Each optimizer step minimizes the mean loss over the batch. Per-record
 *  gradients may be computed in parallel; they are always reduced in batch
 *  order, so the thread count never changes the result.
 */

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <cstdio>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

#include "qracdr/data.hpp"
#include "qracdr/losses.hpp"
#include "qracdr/metrics.hpp"
#include "qracdr/parallel.hpp"
#include "qracdr/retrieval.hpp"
#include "qracdr/vecspace.hpp"

namespace qracdr::trainer {

using losses::LossStrategy;

enum class EncoderMode { linear, free_table };
enum class OptimizerKind { sgd, adam };
enum class InitKind { identity, random };

inline const char* to_string(EncoderMode m) { return m == EncoderMode::linear ? "linear" : "free_table"; }
inline const char* to_string(OptimizerKind o) { return o == OptimizerKind::sgd ? "sgd" : "adam"; }
inline const char* to_string(InitKind i) { return i == InitKind::identity ? "identity" : "random"; }

inline EncoderMode encoder_mode_from_string(const std::string& s) {
  if (s == "linear") return EncoderMode::linear;
  if (s == "free_table" || s == "table") return EncoderMode::free_table;
  throw UsageError("unknown encoder mode '" + s + "'");
}

inline OptimizerKind optimizer_from_string(const std::string& s) {
  if (s == "sgd") return OptimizerKind::sgd;
  if (s == "adam") return OptimizerKind::adam;
  throw UsageError("unknown optimizer '" + s + "'");
}

inline InitKind init_from_string(const std::string& s) {
  if (s == "identity") return InitKind::identity;
  if (s == "random") return InitKind::random;
  throw UsageError("unknown init '" + s + "'");
}

/// Trainable parameters stored as one flat vector.
///   linear:     [W (dim x feature_dim, row-major) | b (dim)]
///   free_table: [row_0 | row_1 | ...], one row of length dim per query id
class EncoderParams {
 public:
  EncoderParams() = default;

  static EncoderParams linear(std::size_t dim, std::size_t feature_dim, InitKind init, Rng& rng) {
    if (dim == 0 || feature_dim == 0) throw ValidationError("encoder dimensions must be positive");
    EncoderParams p;
    p.mode_ = EncoderMode::linear;
    p.dim_ = dim;
    p.feature_dim_ = feature_dim;
    p.theta_.assign(dim * feature_dim + dim, 0.0);
    const double scale = 1.0 / std::sqrt(static_cast<double>(feature_dim));
    if (init == InitKind::identity && dim == feature_dim) {
      for (std::size_t i = 0; i < dim; ++i) p.theta_[i * feature_dim + i] = 1.0;
    } else {
      for (std::size_t i = 0; i < dim * feature_dim; ++i) p.theta_[i] = scale * rng.normal();
    }
    return p;
  }

  /// One row per record. Identity init copies the record's features (needs
  /// feature_dim == dim); random init draws scaled Gaussians.
  static EncoderParams free_table(const std::vector<data::SessionRecord>& records, std::size_t dim, InitKind init,
                                  Rng& rng) {
    EncoderParams p;
    p.mode_ = EncoderMode::free_table;
    p.dim_ = dim;
    p.feature_dim_ = 0;
    p.theta_.reserve(records.size() * dim);
    const double scale = 1.0 / std::sqrt(static_cast<double>(dim));
    for (const auto& r : records) {
      if (!p.rows_.emplace(r.query_id, p.ids_.size()).second) {
        throw ValidationError("free_table: duplicate query id '" + r.query_id + "'");
      }
      p.ids_.push_back(r.query_id);
      if (init == InitKind::identity && r.features.size() == dim) {
        p.theta_.insert(p.theta_.end(), r.features.begin(), r.features.end());
      } else {
        for (std::size_t i = 0; i < dim; ++i) p.theta_.push_back(scale * rng.normal());
      }
    }
    return p;
  }

  static EncoderParams from_parts(EncoderMode mode, std::size_t dim, std::size_t feature_dim,
                                  std::vector<std::string> ids, std::vector<double> theta) {
    EncoderParams p;
    p.mode_ = mode;
    p.dim_ = dim;
    p.feature_dim_ = feature_dim;
    const std::size_t expected = mode == EncoderMode::linear ? dim * feature_dim + dim : ids.size() * dim;
    if (theta.size() != expected) {
      throw ValidationError("encoder parameters have " + std::to_string(theta.size()) + " values, expected " +
                            std::to_string(expected));
    }
    for (double v : theta) {
      if (!std::isfinite(v)) throw ValidationError("encoder parameters contain a non-finite value");
    }
    for (std::size_t i = 0; i < ids.size(); ++i) {
      if (!p.rows_.emplace(ids[i], i).second) throw ValidationError("duplicate table id '" + ids[i] + "'");
    }
    p.ids_ = std::move(ids);
    p.theta_ = std::move(theta);
    return p;
  }

  EncoderMode mode() const noexcept { return mode_; }
  std::size_t dim() const noexcept { return dim_; }
  std::size_t feature_dim() const noexcept { return feature_dim_; }
  const std::vector<std::string>& table_ids() const noexcept { return ids_; }

  std::vector<double>& theta() noexcept { return theta_; }
  const std::vector<double>& theta() const noexcept { return theta_; }

  std::span<const double> weight() const {
    return std::span<const double>(theta_).subspan(0, dim_ * feature_dim_);
  }
  std::span<const double> bias() const { return std::span<const double>(theta_).subspan(dim_ * feature_dim_, dim_); }

  std::size_t table_row(const std::string& query_id) const {
    auto it = rows_.find(query_id);
    if (it == rows_.end()) throw ValidationError("free_table: unknown query id '" + query_id + "'");
    return it->second;
  }

  friend bool operator==(const EncoderParams& a, const EncoderParams& b) {
    return a.mode_ == b.mode_ && a.dim_ == b.dim_ && a.feature_dim_ == b.feature_dim_ && a.ids_ == b.ids_ &&
           a.theta_ == b.theta_;
  }

 private:
  EncoderMode mode_ = EncoderMode::linear;
  std::size_t dim_ = 0;
  std::size_t feature_dim_ = 0;
  std::vector<std::string> ids_;
  std::unordered_map<std::string, std::size_t> rows_;
  std::vector<double> theta_;
};

/// W f + b.
inline Embedding encode_session(const EncoderParams& p, std::span<const double> features) {
  if (p.mode() != EncoderMode::linear) throw ValidationError("encode_session: encoder is not linear");
  detail::require_same_dim(features.size(), p.feature_dim(), "encode_session");
  const auto w = p.weight();
  const auto b = p.bias();
  Embedding out(p.dim());
  for (std::size_t i = 0; i < p.dim(); ++i) {
    out[i] = detail::dot_unchecked(w.subspan(i * p.feature_dim(), p.feature_dim()), features) + b[i];
  }
  out.check_finite();
  return out;
}

/// Table lookup by row index.
inline Embedding encode_table(const EncoderParams& p, std::size_t index) {
  if (p.mode() != EncoderMode::free_table) throw ValidationError("encode_table: encoder is not a free table");
  if (index >= p.table_ids().size()) throw ValidationError("encode_table: query index out of range");
  return Embedding(std::span<const double>(p.theta()).subspan(index * p.dim(), p.dim()));
}

inline Embedding encode(const EncoderParams& p, const data::SessionRecord& r) {
  if (p.mode() == EncoderMode::linear) return encode_session(p, r.features);
  return encode_table(p, p.table_row(r.query_id));
}

struct TrainConfig {
  LossStrategy strategy = LossStrategy::qra_cont;
  std::size_t batch_size = 32;
  std::size_t epochs = 10;
  double learning_rate = 1e-3;
  OptimizerKind optimizer = OptimizerKind::adam;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  EncoderMode encoder = EncoderMode::linear;
  InitKind init = InitKind::identity;
  std::uint64_t seed = 42;
  bool in_batch_negatives = true;
  bool cl_hard_negatives = true;
  double hard_negative_weight = 1.0;
  std::optional<double> hard_negative_floor;
  unsigned threads = 1;

  void validate() const {
    if (batch_size < 1) throw ValidationError("batch_size must be >= 1");
    if (epochs < 1) throw ValidationError("epochs must be >= 1");
    if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) throw ValidationError("learning_rate must be > 0");
    if (!std::isfinite(hard_negative_weight)) throw ValidationError("hard_negative_weight must be finite");
  }

  losses::LossOptions loss_options() const { return {hard_negative_weight, hard_negative_floor}; }
};

/// Loss inputs for one record plus the ids that went into its negative pool.
struct BatchEntry {
  losses::LossInputs inputs;
  std::vector<std::string> negative_ids;
};

/// Assembles loss inputs for a batch. Each record's pool holds the positives of
/// the other records (when in-batch negatives are on) followed by its own hard
/// negatives (when enabled), deduplicated by id and never containing the
/// record's own positive.
inline std::vector<BatchEntry> build_batch(const std::vector<const data::SessionRecord*>& batch,
                                           const retrieval::Collection& collection, const TrainConfig& cfg,
                                           const EncoderParams& params) {
  if (batch.empty()) throw ValidationError("build_batch: empty batch");
  const bool contrastive = losses::uses_contrastive(cfg.strategy);
  std::vector<BatchEntry> out;
  out.reserve(batch.size());
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const auto& rec = *batch[i];
    BatchEntry e;
    e.inputs.session_query = encode(params, rec);
    e.inputs.rewrite = rec.rewrite_embedding;
    e.inputs.positive = collection.lookup(rec.positive_doc_id);
    if (!rec.hard_negative_doc_ids.empty()) {
      e.inputs.hard_negative = collection.lookup(rec.hard_negative_doc_ids.front());
    } else if (losses::uses_hard_negative(cfg.strategy)) {
      throw ValidationError("record '" + rec.query_id + "' has no hard negative for " +
                            std::string(losses::to_string(cfg.strategy)));
    }
    if (contrastive) {
      auto add = [&](const std::string& id) {
        if (id == rec.positive_doc_id) return;
        if (std::find(e.negative_ids.begin(), e.negative_ids.end(), id) != e.negative_ids.end()) return;
        e.negative_ids.push_back(id);
        e.inputs.negatives.push_back(collection.lookup(id));
      };
      if (cfg.in_batch_negatives) {
        for (std::size_t j = 0; j < batch.size(); ++j) {
          if (j != i) add(batch[j]->positive_doc_id);
        }
      }
      if (cfg.cl_hard_negatives) {
        for (const auto& id : rec.hard_negative_doc_ids) add(id);
      }
      if (e.inputs.negatives.empty()) {
        throw ValidationError("record '" + rec.query_id + "' has an empty negative pool for " +
                              std::string(losses::to_string(cfg.strategy)));
      }
    }
    out.push_back(std::move(e));
  }
  return out;
}

/// SGD or Adam over the flat parameter vector.
class Optimizer {
 public:
  Optimizer(const TrainConfig& cfg, std::size_t size) : cfg_(cfg) {
    if (cfg.optimizer == OptimizerKind::adam) {
      m_.assign(size, 0.0);
      v_.assign(size, 0.0);
    }
  }

  void step(std::vector<double>& theta, const std::vector<double>& grad) {
    const double lr = cfg_.learning_rate;
    if (cfg_.optimizer == OptimizerKind::sgd) {
      for (std::size_t i = 0; i < theta.size(); ++i) theta[i] -= lr * grad[i];
      return;
    }
    ++t_;
    const double b1 = cfg_.adam_beta1;
    const double b2 = cfg_.adam_beta2;
    const double c1 = 1.0 - std::pow(b1, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(b2, static_cast<double>(t_));
    for (std::size_t i = 0; i < theta.size(); ++i) {
      m_[i] = b1 * m_[i] + (1.0 - b1) * grad[i];
      v_[i] = b2 * v_[i] + (1.0 - b2) * grad[i] * grad[i];
      const double m_hat = m_[i] / c1;
      const double v_hat = v_[i] / c2;
      theta[i] -= lr * m_hat / (std::sqrt(v_hat) + cfg_.adam_eps);
    }
  }

 private:
  TrainConfig cfg_;
  std::vector<double> m_;
  std::vector<double> v_;
  std::size_t t_ = 0;
};

struct BatchGradient {
  double mean_loss = 0.0;
  double loss_sum = 0.0;
  std::vector<double> grad;  // same layout as theta
};

/// Batch-mean loss and its gradient with respect to the encoder parameters.
/// Throws NumericalError naming the step and records when a loss or gradient
/// is not finite.
inline BatchGradient batch_gradient(const std::vector<const data::SessionRecord*>& batch,
                                    const retrieval::Collection& collection, const TrainConfig& cfg,
                                    const EncoderParams& params, std::size_t step_index = 0) {
  const auto entries = build_batch(batch, collection, cfg, params);
  const auto opt = cfg.loss_options();
  std::vector<losses::LossEval> evals(entries.size());
  parallel_for(entries.size(), cfg.threads,
               [&](std::size_t i) { evals[i] = losses::evaluate(cfg.strategy, entries[i].inputs, opt); });

  std::vector<std::string> bad;
  for (std::size_t i = 0; i < evals.size(); ++i) {
    bool finite = std::isfinite(evals[i].value);
    for (double g : evals[i].gradient) finite = finite && std::isfinite(g);
    if (!finite) bad.push_back(batch[i]->query_id);
  }
  if (!bad.empty()) {
    std::string msg = "non-finite loss at step " + std::to_string(step_index) + " (" +
                      std::string(losses::to_string(cfg.strategy)) + "), records:";
    for (const auto& id : bad) msg += " " + id;
    throw NumericalError(msg);
  }

  BatchGradient out;
  out.grad.assign(params.theta().size(), 0.0);
  const double inv = 1.0 / static_cast<double>(batch.size());
  const std::size_t m = params.dim();
  for (std::size_t i = 0; i < evals.size(); ++i) {
    out.loss_sum += evals[i].value;
    const auto& g = evals[i].gradient;
    if (params.mode() == EncoderMode::linear) {
      const std::size_t f_dim = params.feature_dim();
      const auto& f = batch[i]->features;
      for (std::size_t r = 0; r < m; ++r) {
        const double gr = g[r] * inv;
        double* row = out.grad.data() + r * f_dim;
        for (std::size_t c = 0; c < f_dim; ++c) row[c] += gr * f[c];
        out.grad[m * f_dim + r] += gr;
      }
    } else {
      const std::size_t row = params.table_row(batch[i]->query_id);
      for (std::size_t r = 0; r < m; ++r) out.grad[row * m + r] += g[r] * inv;
    }
  }
  out.mean_loss = out.loss_sum * inv;
  return out;
}

struct EpochLog {
  std::size_t epoch = 0;
  double mean_loss = 0.0;
  std::optional<double> dev_mrr;
  std::optional<double> dev_ndcg3;
};

struct TrainResult {
  EncoderParams params;
  std::vector<EpochLog> log;
};

inline std::string format_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.12g", v);
  return buf;
}

inline std::string log_to_csv(const std::vector<EpochLog>& log) {
  std::ostringstream out;
  out << "epoch,mean_loss,dev_mrr,dev_ndcg@3\n";
  for (const auto& e : log) {
    out << e.epoch << "," << format_double(e.mean_loss) << ","
        << (e.dev_mrr ? format_double(*e.dev_mrr) : std::string()) << ","
        << (e.dev_ndcg3 ? format_double(*e.dev_ndcg3) : std::string()) << "\n";
  }
  return out.str();
}

/// Queries encoded with the given parameters, in record order.
inline std::vector<std::pair<std::string, Embedding>> encode_all(const EncoderParams& params,
                                                                 const std::vector<data::SessionRecord>& records,
                                                                 unsigned threads = 1) {
  std::vector<std::pair<std::string, Embedding>> out(records.size());
  parallel_for(records.size(), threads,
               [&](std::size_t i) { out[i] = {records[i].query_id, encode(params, records[i])}; });
  return out;
}

struct Evaluation {
  metrics::MetricReport report;
  retrieval::RankedRun run;
};

/// Encodes every record, retrieves top `depth` and scores against qrels.
inline Evaluation evaluate_checkpoint(const EncoderParams& params, const std::vector<data::SessionRecord>& records,
                                      const metrics::Qrels& qrels, const retrieval::Collection& collection,
                                      const metrics::EvalOptions& opt = {}, const std::string& name = "run",
                                      unsigned threads = 1) {
  if (records.empty()) throw ValidationError("evaluate_checkpoint: no evaluation records");
  std::size_t depth = std::max(opt.mrr_cutoff, opt.ndcg_k);
  for (std::size_t k : opt.recall_ks) depth = std::max(depth, k);
  Evaluation ev;
  ev.run = retrieval::run_queries(collection, encode_all(params, records, threads), depth, threads);
  ev.report = metrics::evaluate(ev.run, data::qrels_for(records, qrels), opt, name);
  return ev;
}

/// Development split used for per-epoch monitoring.
struct DevSet {
  const std::vector<data::SessionRecord>* records = nullptr;
  const metrics::Qrels* qrels = nullptr;
};

inline EncoderParams initial_params(const std::vector<data::SessionRecord>& records, std::size_t dim,
                                    const TrainConfig& cfg) {
  Rng rng = Rng(cfg.seed).substream(1);
  if (cfg.encoder == EncoderMode::linear) {
    const std::size_t f_dim = records.front().features.size();
    return EncoderParams::linear(dim, f_dim, cfg.init, rng);
  }
  return EncoderParams::free_table(records, dim, cfg.init, rng);
}

/// Runs epochs x ceil(N / batch_size) optimizer steps. The last, possibly
/// shorter, batch of an epoch is kept.
inline TrainResult train(const std::vector<data::SessionRecord>& records, const retrieval::Collection& collection,
                         const TrainConfig& cfg, std::optional<DevSet> dev = std::nullopt,
                         std::optional<EncoderParams> init = std::nullopt) {
  cfg.validate();
  if (records.empty()) throw ValidationError("train: empty dataset");
  for (const auto& r : records) {
    if (!collection.contains(r.positive_doc_id)) {
      throw ValidationError("train: record '" + r.query_id + "' references unknown document '" + r.positive_doc_id + "'");
    }
    for (const auto& h : r.hard_negative_doc_ids) {
      if (!collection.contains(h)) {
        throw ValidationError("train: record '" + r.query_id + "' references unknown document '" + h + "'");
      }
    }
    if (r.features.size() != records.front().features.size()) {
      throw ValidationError("train: record '" + r.query_id + "' has a different feature dimension");
    }
  }

  TrainResult result;
  result.params = init ? std::move(*init) : initial_params(records, collection.dim(), cfg);
  Optimizer optimizer(cfg, result.params.theta().size());
  Rng shuffle_rng = Rng(cfg.seed).substream(2);

  std::vector<std::size_t> order(records.size());
  std::iota(order.begin(), order.end(), 0);
  std::size_t step = 0;
  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    data::detail::shuffle(order, shuffle_rng);
    double loss_sum = 0.0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::size_t stop = std::min(order.size(), start + cfg.batch_size);
      std::vector<const data::SessionRecord*> batch;
      batch.reserve(stop - start);
      for (std::size_t i = start; i < stop; ++i) batch.push_back(&records[order[i]]);
      const auto bg = batch_gradient(batch, collection, cfg, result.params, step);
      loss_sum += bg.loss_sum;
      optimizer.step(result.params.theta(), bg.grad);
      if (!std::all_of(result.params.theta().begin(), result.params.theta().end(),
                       [](double v) { return std::isfinite(v); })) {
        std::string msg = "non-finite parameters after step " + std::to_string(step) + " (" +
                          std::string(losses::to_string(cfg.strategy)) + "), records:";
        for (const auto* r : batch) msg += " " + r->query_id;
        throw NumericalError(msg);
      }
      ++step;
    }
    EpochLog entry;
    entry.epoch = epoch;
    entry.mean_loss = loss_sum / static_cast<double>(records.size());
    if (dev && dev->records && !dev->records->empty() && result.params.mode() == EncoderMode::linear) {
      const auto ev = evaluate_checkpoint(result.params, *dev->records, *dev->qrels, collection, {}, "dev", cfg.threads);
      entry.dev_mrr = ev.report.mrr;
      entry.dev_ndcg3 = ev.report.ndcg;
    }
    result.log.push_back(entry);
  }
  return result;
}

}  // namespace qracdr::trainer
