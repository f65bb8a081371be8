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

/** \file losses.hpp
 *  \brief Training objectives for the session-query representation and their
 *  gradients with respect to the session query.
 *
 *  Notation in comments: q is the session query, q' the rewrite, d+ the
 *  relevant document, d- the negative pool and h the hard negative.
 *
 *  MSE(q, v) is the plain squared distance |q - v|^2 (no averaging over
 *  dimensions). The contrastive loss uses raw dot products with no temperature.
 */

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <limits>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "qracdr/vecspace.hpp"

namespace qracdr::losses {

enum class LossStrategy {
  cl_only,
  rewrite_only,
  qra_base,
  qra_neg,
  qra_cont,
  qra_both,
  qra_base_no_rewrite,
  qra_base_no_doc,
  cl_plus_reg,
  cl_plus_negdot,
};

inline constexpr std::array<LossStrategy, 10> kAllStrategies = {
    LossStrategy::cl_only,        LossStrategy::rewrite_only,        LossStrategy::qra_base,
    LossStrategy::qra_neg,        LossStrategy::qra_cont,            LossStrategy::qra_both,
    LossStrategy::qra_base_no_rewrite, LossStrategy::qra_base_no_doc, LossStrategy::cl_plus_reg,
    LossStrategy::cl_plus_negdot,
};

inline std::string_view to_string(LossStrategy s) {
  switch (s) {
    case LossStrategy::cl_only: return "cl_only";
    case LossStrategy::rewrite_only: return "rewrite_only";
    case LossStrategy::qra_base: return "qra_base";
    case LossStrategy::qra_neg: return "qra_neg";
    case LossStrategy::qra_cont: return "qra_cont";
    case LossStrategy::qra_both: return "qra_both";
    case LossStrategy::qra_base_no_rewrite: return "qra_base_no_rewrite";
    case LossStrategy::qra_base_no_doc: return "qra_base_no_doc";
    case LossStrategy::cl_plus_reg: return "cl_plus_reg";
    case LossStrategy::cl_plus_negdot: return "cl_plus_negdot";
  }
  return "unknown";
}

inline LossStrategy strategy_from_string(std::string_view name) {
  for (LossStrategy s : kAllStrategies) {
    if (to_string(s) == name) return s;
  }
  throw UsageError("unknown loss strategy '" + std::string(name) + "'");
}

/// Strategies whose value includes the contrastive term.
inline bool uses_contrastive(LossStrategy s) {
  switch (s) {
    case LossStrategy::cl_only:
    case LossStrategy::qra_cont:
    case LossStrategy::qra_both:
    case LossStrategy::cl_plus_reg:
    case LossStrategy::cl_plus_negdot:
      return true;
    default:
      return false;
  }
}

inline bool uses_hard_negative(LossStrategy s) {
  return s == LossStrategy::qra_neg || s == LossStrategy::qra_both;
}

inline bool uses_positive(LossStrategy s) {
  return s != LossStrategy::rewrite_only && s != LossStrategy::qra_base_no_doc;
}

inline bool uses_rewrite(LossStrategy s) {
  return s != LossStrategy::cl_only && s != LossStrategy::qra_base_no_rewrite;
}

/// One example. Only session_query is trainable.
struct LossInputs {
  Embedding session_query;
  Embedding rewrite;
  Embedding positive;
  std::vector<Embedding> negatives;
  std::optional<Embedding> hard_negative;

  void check_dims() const {
    const std::size_t m = session_query.dim();
    auto check = [m](const Embedding& e, const char* what) {
      if (!e.empty() && e.dim() != m) {
        throw ValidationError(std::string("loss inputs: ") + what + " has dimension " +
                              std::to_string(e.dim()) + ", session query has " + std::to_string(m));
      }
    };
    check(rewrite, "rewrite");
    check(positive, "positive");
    for (const auto& n : negatives) check(n, "negative");
    if (hard_negative) check(*hard_negative, "hard negative");
  }
};

struct LossOptions {
  /// Weight on the subtracted MSE(q, h) term of the hard-negative variants.
  double hard_negative_weight = 1.0;
  /// Optional lower bound on the hard-negative MSE objective. Off by default;
  /// when the floor is active the objective is constant and its gradient zero.
  std::optional<double> hard_negative_floor;
};

inline double mse(const Embedding& q, const Embedding& v) { return l2_distance_sq(q, v); }

struct MseDecomposition {
  double regularized = 0.0;  // |q|^2 + |v|^2
  double neg_dot = 0.0;      // -2 q.v
};

inline MseDecomposition mse_decomposition(const Embedding& q, const Embedding& v) {
  detail::require_same_dim(q.dim(), v.dim(), "mse_decomposition");
  return {squared_norm(q) + squared_norm(v), -2.0 * dot(q, v)};
}

/// Contrastive loss value plus the softmax weights needed by its gradient.
struct ContrastiveTerms {
  double value = 0.0;
  double positive_weight = 0.0;              // p+ - 1
  std::vector<double> negative_weights;      // p- per negative
};

inline ContrastiveTerms contrastive_terms(const LossInputs& in) {
  if (in.negatives.empty()) {
    throw ValidationError("contrastive loss needs at least one negative in the pool");
  }
  if (in.positive.empty()) throw ValidationError("contrastive loss needs a positive document");
  const double pos_score = dot(in.session_query, in.positive);
  std::vector<double> scores;
  scores.reserve(in.negatives.size());
  double max_score = pos_score;
  for (const auto& n : in.negatives) {
    scores.push_back(dot(in.session_query, n));
    max_score = std::max(max_score, scores.back());
  }
  double denom = std::exp(pos_score - max_score);
  for (double s : scores) denom += std::exp(s - max_score);
  const double log_denom = max_score + std::log(denom);

  ContrastiveTerms out;
  out.value = log_denom - pos_score;
  out.positive_weight = std::exp(pos_score - log_denom) - 1.0;
  out.negative_weights.reserve(scores.size());
  for (double s : scores) out.negative_weights.push_back(std::exp(s - log_denom));
  return out;
}

/// -log softmax of the positive score against the negative pool.
inline double cl_loss(const LossInputs& in) { return contrastive_terms(in).value; }

namespace detail {

inline void require_rewrite_and_positive(const LossInputs& in) {
  if (in.rewrite.empty()) throw ValidationError("loss needs a rewrite embedding");
  if (in.positive.empty()) throw ValidationError("loss needs a positive document");
}

inline void require_hard_negative(const LossInputs& in) {
  if (!in.hard_negative) throw ValidationError("loss needs a hard negative");
}

}  // namespace detail

/// MSE(q, d+) + MSE(q, q').
inline double qra_base(const LossInputs& in) {
  detail::require_rewrite_and_positive(in);
  return mse(in.session_query, in.positive) + mse(in.session_query, in.rewrite);
}

inline double qra_neg(const LossInputs& in, const LossOptions& opt = {}) {
  detail::require_hard_negative(in);
  const double value = qra_base(in) - opt.hard_negative_weight * mse(in.session_query, *in.hard_negative);
  if (opt.hard_negative_floor && value < *opt.hard_negative_floor) return *opt.hard_negative_floor;
  return value;
}

inline double qra_cont(const LossInputs& in) { return qra_base(in) + cl_loss(in); }

inline double qra_both(const LossInputs& in, const LossOptions& opt = {}) {
  return qra_neg(in, opt) + cl_loss(in);
}

/// Value and gradient with respect to the session query, computed together so
/// shared sub-terms are evaluated once.
struct LossEval {
  double value = 0.0;
  Embedding gradient;
};

namespace detail {

inline void require_inputs(LossStrategy s, const LossInputs& in) {
  in.check_dims();
  if (in.session_query.empty()) throw ValidationError("loss needs a session query");
  if (uses_positive(s) && in.positive.empty()) {
    throw ValidationError(std::string(to_string(s)) + " needs a positive document");
  }
  if (uses_rewrite(s) && in.rewrite.empty()) {
    throw ValidationError(std::string(to_string(s)) + " needs a rewrite embedding");
  }
  if (uses_hard_negative(s) && !in.hard_negative) {
    throw ValidationError(std::string(to_string(s)) + " needs a hard negative");
  }
  if (uses_contrastive(s) && in.negatives.empty()) {
    throw ValidationError(std::string(to_string(s)) + " needs a nonempty negative pool");
  }
}

/// value += MSE(q, v) * w ; grad += 2w(q - v)
inline void add_mse(const Embedding& q, const Embedding& v, double w, LossEval& out) {
  out.value += w * mse(q, v);
  for (std::size_t i = 0; i < q.dim(); ++i) out.gradient[i] += 2.0 * w * (q[i] - v[i]);
}

inline void add_contrastive(const LossInputs& in, LossEval& out) {
  const ContrastiveTerms cl = contrastive_terms(in);
  out.value += cl.value;
  axpy(cl.positive_weight, in.positive, out.gradient);
  for (std::size_t j = 0; j < in.negatives.size(); ++j) {
    axpy(cl.negative_weights[j], in.negatives[j], out.gradient);
  }
}

inline void add_qra_neg(const LossInputs& in, const LossOptions& opt, LossEval& out) {
  LossEval part{0.0, Embedding(in.session_query.dim())};
  add_mse(in.session_query, in.positive, 1.0, part);
  add_mse(in.session_query, in.rewrite, 1.0, part);
  add_mse(in.session_query, *in.hard_negative, -opt.hard_negative_weight, part);
  if (opt.hard_negative_floor && part.value < *opt.hard_negative_floor) {
    out.value += *opt.hard_negative_floor;
    return;
  }
  out.value += part.value;
  axpy(1.0, part.gradient, out.gradient);
}

}  // namespace detail

inline LossEval evaluate(LossStrategy strategy, const LossInputs& in, const LossOptions& opt = {}) {
  detail::require_inputs(strategy, in);
  const Embedding& q = in.session_query;
  LossEval out{0.0, Embedding(q.dim())};
  switch (strategy) {
    case LossStrategy::cl_only:
      detail::add_contrastive(in, out);
      break;
    case LossStrategy::rewrite_only:
    case LossStrategy::qra_base_no_doc:
      detail::add_mse(q, in.rewrite, 1.0, out);
      break;
    case LossStrategy::qra_base_no_rewrite:
      detail::add_mse(q, in.positive, 1.0, out);
      break;
    case LossStrategy::qra_base:
      detail::add_mse(q, in.positive, 1.0, out);
      detail::add_mse(q, in.rewrite, 1.0, out);
      break;
    case LossStrategy::qra_neg:
      detail::add_qra_neg(in, opt, out);
      break;
    case LossStrategy::qra_cont:
      detail::add_mse(q, in.positive, 1.0, out);
      detail::add_mse(q, in.rewrite, 1.0, out);
      detail::add_contrastive(in, out);
      break;
    case LossStrategy::qra_both:
      detail::add_qra_neg(in, opt, out);
      detail::add_contrastive(in, out);
      break;
    case LossStrategy::cl_plus_reg: {
      detail::add_contrastive(in, out);
      const MseDecomposition to_doc = mse_decomposition(q, in.positive);
      const MseDecomposition to_rewrite = mse_decomposition(q, in.rewrite);
      out.value += to_doc.regularized + to_rewrite.regularized;
      axpy(4.0, q, out.gradient);
      break;
    }
    case LossStrategy::cl_plus_negdot: {
      detail::add_contrastive(in, out);
      const MseDecomposition to_doc = mse_decomposition(q, in.positive);
      const MseDecomposition to_rewrite = mse_decomposition(q, in.rewrite);
      out.value += to_doc.neg_dot + to_rewrite.neg_dot;
      axpy(-2.0, in.positive, out.gradient);
      axpy(-2.0, in.rewrite, out.gradient);
      break;
    }
  }
  return out;
}

inline double loss_value(LossStrategy strategy, const LossInputs& in, const LossOptions& opt = {}) {
  return evaluate(strategy, in, opt).value;
}

inline Embedding loss_gradient(LossStrategy strategy, const LossInputs& in, const LossOptions& opt = {}) {
  return evaluate(strategy, in, opt).gradient;
}

/// Central-difference check of loss_gradient. Returns the largest
/// |analytic - numeric| / max(1, |numeric|) over coordinates.
inline double finite_diff_check(LossStrategy strategy, const LossInputs& in, double step,
                                const LossOptions& opt = {}) {
  if (!(step > 0.0 && step <= 1e-2)) {
    throw ValidationError("finite_diff_check: step must lie in (0, 1e-2]");
  }
  const Embedding analytic = loss_gradient(strategy, in, opt);
  LossInputs probe = in;
  double worst = 0.0;
  for (std::size_t i = 0; i < in.session_query.dim(); ++i) {
    const double base = in.session_query[i];
    probe.session_query[i] = base + step;
    const double up = loss_value(strategy, probe, opt);
    probe.session_query[i] = base - step;
    const double down = loss_value(strategy, probe, opt);
    probe.session_query[i] = base;
    const double numeric = (up - down) / (2.0 * step);
    worst = std::max(worst, std::abs(analytic[i] - numeric) / std::max(1.0, std::abs(numeric)));
  }
  return worst;
}

}  // namespace qracdr::losses
