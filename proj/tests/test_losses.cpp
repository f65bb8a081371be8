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

#include <cmath>

#include "qracdr/geometry.hpp"
#include "qracdr/losses.hpp"
#include "support.hpp"

using namespace qracdr;
using namespace qracdr::losses;

namespace {

LossInputs make(Embedding q, Embedding rewrite, Embedding positive, std::vector<Embedding> negatives = {},
                std::optional<Embedding> hard = std::nullopt) {
  LossInputs in;
  in.session_query = std::move(q);
  in.rewrite = std::move(rewrite);
  in.positive = std::move(positive);
  in.negatives = std::move(negatives);
  in.hard_negative = std::move(hard);
  return in;
}

double tol(double v, double rel) { return rel * std::max(1.0, std::abs(v)); }

}  // namespace

TEST(Strategy, NamesRoundTrip) {
  for (LossStrategy s : kAllStrategies) EXPECT_EQ(strategy_from_string(to_string(s)), s);
  EXPECT_THROW(strategy_from_string("qra_everything"), UsageError);
}

TEST(Mse, HandExamples) {
  EXPECT_EQ(mse(Embedding{0.4, 2}, Embedding{0.4, 2}), 0.0);
  EXPECT_EQ(mse(Embedding{1, 0}, Embedding{0, 1}), 2.0);
  EXPECT_EQ(mse(Embedding{1, 0}, Embedding{3, 0}), 4.0);
  EXPECT_THROW(mse(Embedding{1, 0}, Embedding{1}), ValidationError);
}

TEST(MseDecomposition, HandExamples) {
  auto d = mse_decomposition(Embedding{1, 0}, Embedding{0, 1});
  EXPECT_EQ(d.regularized, 2.0);
  EXPECT_EQ(d.neg_dot, 0.0);
  const double s = std::sqrt(0.5);
  d = mse_decomposition(Embedding{s, s}, Embedding{s, s});
  EXPECT_NEAR(d.regularized, 2.0, 1e-15);
  EXPECT_NEAR(d.neg_dot, -2.0, 1e-15);
  d = mse_decomposition(Embedding{1, 1}, Embedding{2, 0});
  EXPECT_EQ(d.regularized, 6.0);
  EXPECT_EQ(d.neg_dot, -4.0);
  EXPECT_EQ(d.regularized + d.neg_dot, 2.0);
  EXPECT_THROW(mse_decomposition(Embedding{1, 0}, Embedding{1}), ValidationError);
}

TEST(MseDecomposition, IdentityOnRandomPairs) {
  support::Gen g(41);
  for (int i = 0; i < 1000; ++i) {
    const auto q = g.vec(g.index(1, 64), g.real(0.01, 10.0));
    const auto v = g.vec(q.dim(), g.real(0.01, 10.0));
    const auto d = mse_decomposition(q, v);
    EXPECT_NEAR(d.regularized + d.neg_dot, mse(q, v), tol(mse(q, v), 1e-9));
  }
}

TEST(ClLoss, HandExamples) {
  // equal scores, one negative
  EXPECT_NEAR(cl_loss(make(Embedding{1, 1}, {}, Embedding{1, 0}, {Embedding{0, 1}})), std::log(2.0), 1e-15);
  // q.d+ = 1, q.d- = 0
  EXPECT_NEAR(cl_loss(make(Embedding{1, 0}, {}, Embedding{1, 0}, {Embedding{0, 1}})), 0.313262, 1e-6);
  EXPECT_NEAR(cl_loss(make(Embedding{1, 0}, {}, Embedding{1, 0}, {Embedding{0, 1}})), std::log1p(std::exp(-1.0)),
              1e-15);
  // K equal-score negatives
  for (std::size_t k = 1; k <= 9; ++k) {
    std::vector<Embedding> negs(k, Embedding{0.5, 0.5});
    EXPECT_NEAR(cl_loss(make(Embedding{1, 1}, {}, Embedding{0.5, 0.5}, negs)), std::log(1.0 + k), 1e-14);
  }
}

TEST(ClLoss, EmptyPoolIsError) {
  EXPECT_THROW(cl_loss(make(Embedding{1, 0}, {}, Embedding{1, 0})), ValidationError);
  EXPECT_THROW(loss_value(LossStrategy::cl_only, make(Embedding{1, 0}, {}, Embedding{1, 0})), ValidationError);
}

TEST(ClLoss, MatchesNaiveSoftmaxAndStaysFiniteForLargeScores) {
  support::Gen g(42);
  for (int i = 0; i < 500; ++i) {
    const auto in = g.loss_inputs(g.index(2, 16), 8);
    const double v = cl_loss(in);
    EXPECT_NEAR(v, support::oracle_cl(in), tol(v, 1e-12));
    EXPECT_GT(v, 0.0);
  }
  // scores around 1e4 would overflow exp()
  const auto in = make(Embedding{100, 0}, {}, Embedding{100, 0}, {Embedding{99, 0}, Embedding{100, 0}});
  const double v = cl_loss(in);
  EXPECT_TRUE(std::isfinite(v));
  EXPECT_NEAR(v, std::log(2.0 + std::exp(-100.0)), 1e-12);
}

TEST(ClLoss, DecreasesAsPositiveScoreGrows) {
  const Embedding neg{0, 1};
  double prev = 1e300;
  for (double s = -3.0; s <= 3.0; s += 0.5) {
    const double v = cl_loss(make(Embedding{s, 0.2}, {}, Embedding{1, 0}, {neg}));
    EXPECT_LT(v, prev);
    prev = v;
  }
}

TEST(ClLoss, InvariantToOrthogonalShift) {
  support::Gen g(43);
  for (int i = 0; i < 200; ++i) {
    const std::size_t dim = 12;
    // documents live in the first 6 coordinates; shift along the rest
    auto in = g.loss_inputs(dim, 5);
    for (auto* e : {&in.positive}) {
      for (std::size_t k = 6; k < dim; ++k) (*e)[k] = 0.0;
    }
    for (auto& n : in.negatives) {
      for (std::size_t k = 6; k < dim; ++k) n[k] = 0.0;
    }
    auto shifted = in;
    for (std::size_t k = 6; k < dim; ++k) shifted.session_query[k] += g.real(-5, 5);
    EXPECT_NEAR(cl_loss(in), cl_loss(shifted), 1e-10);
  }
}

TEST(ClGradient, CoefficientsSumToZero) {
  support::Gen g(44);
  for (int i = 0; i < 500; ++i) {
    const auto t = contrastive_terms(g.loss_inputs(8, 8));
    double s = t.positive_weight;
    for (double w : t.negative_weights) s += w;
    EXPECT_NEAR(s, 0.0, 1e-14);
  }
}

TEST(QraBase, HandExamples) {
  EXPECT_EQ(qra_base(make(Embedding{1, 0}, Embedding{2, 0}, Embedding{0, 0})), 2.0);
  EXPECT_EQ(qra_base(make(Embedding{0.3, 1}, Embedding{0.3, 1}, Embedding{0.3, 1})), 0.0);
  EXPECT_EQ(qra_base(make(Embedding{0, 0}, Embedding{2, 0}, Embedding{0, 0})), 4.0);
  EXPECT_THROW(qra_base(make(Embedding{0, 0}, {}, Embedding{0, 0})), ValidationError);
  EXPECT_THROW(qra_base(make(Embedding{0, 0}, Embedding{0, 0}, {})), ValidationError);
}

TEST(QraBase, MinimumAtMidpoint) {
  support::Gen g(45);
  for (int i = 0; i < 100; ++i) {
    const std::size_t dim = g.index(1, 32);
    const auto rw = g.vec(dim), pos = g.vec(dim);
    const auto mid = geometry::compose_aligned(rw, pos);
    const double at_mid = qra_base(make(mid, rw, pos));
    EXPECT_NEAR(at_mid, l2_distance_sq(rw, pos) / 2.0, 1e-12 * std::max(1.0, at_mid));
    for (int k = 0; k < 100; ++k) {
      EXPECT_LE(at_mid, qra_base(make(mid + g.vec(dim, g.real(1e-6, 1.0)), rw, pos)));
    }
    const auto grad = loss_gradient(LossStrategy::qra_base, make(mid, rw, pos));
    for (double x : grad) EXPECT_NEAR(x, 0.0, 1e-12);
  }
}

TEST(QraNeg, HandExamples) {
  EXPECT_EQ(qra_neg(make(Embedding{1, 0}, Embedding{2, 0}, Embedding{0, 0}, {}, Embedding{1, 0})), 2.0);
  EXPECT_EQ(qra_neg(make(Embedding{1, 1}, Embedding{1, 1}, Embedding{1, 1}, {}, Embedding{1, 1})), 0.0);
  EXPECT_EQ(qra_neg(make(Embedding{0, 0}, Embedding{0, 0}, Embedding{0, 0}, {}, Embedding{1, 0})), -1.0);
  EXPECT_THROW(qra_neg(make(Embedding{0, 0}, Embedding{0, 0}, Embedding{0, 0})), ValidationError);
}

TEST(QraNeg, WeightAndFloor) {
  const auto in = make(Embedding{0, 0}, Embedding{0, 0}, Embedding{0, 0}, {}, Embedding{2, 0});
  EXPECT_EQ(qra_neg(in, {0.5, std::nullopt}), -2.0);
  EXPECT_EQ(qra_neg(in, {1.0, -1.5}), -1.5);
  const auto e = evaluate(LossStrategy::qra_neg, in, {1.0, -1.5});
  EXPECT_EQ(e.value, -1.5);
  for (double x : e.gradient) EXPECT_EQ(x, 0.0);
  EXPECT_EQ(loss_value(LossStrategy::qra_neg, in), -4.0);  // unbounded below by default
}

TEST(QraCont, HandExamples) {
  // components 2 and ln 2
  const auto in = make(Embedding{1, 0}, Embedding{2, 0}, Embedding{0, 0}, {Embedding{0, 1}});
  EXPECT_NEAR(qra_cont(in), 2.0 + std::log(2.0), 1e-15);
  EXPECT_NEAR(qra_cont(in), 2.693147, 1e-6);
  const auto same = make(Embedding{1, 0}, Embedding{1, 0}, Embedding{1, 0}, {Embedding{1, 0}});
  EXPECT_NEAR(qra_cont(same), std::log(2.0), 1e-15);
}

TEST(QraBoth, HandExamples) {
  const auto in = make(Embedding{1, 0}, Embedding{2, 0}, Embedding{0, 0}, {Embedding{0, 1}}, Embedding{1, 0});
  EXPECT_NEAR(qra_both(in), 2.693147, 1e-6);
  const auto same = make(Embedding{1, 0}, Embedding{1, 0}, Embedding{1, 0}, {Embedding{1, 0}}, Embedding{1, 0});
  EXPECT_NEAR(qra_both(same), std::log(2.0), 1e-15);
}

TEST(LossProperties, AdditivityOfComposites) {
  support::Gen g(46);
  for (int i = 0; i < 500; ++i) {
    const auto in = g.loss_inputs(g.index(1, 32), 8);
    const double cont = loss_value(LossStrategy::qra_cont, in);
    const double both = loss_value(LossStrategy::qra_both, in);
    EXPECT_NEAR(cont, qra_base(in) + cl_loss(in), tol(cont, 1e-12));
    EXPECT_NEAR(both, qra_neg(in) + cl_loss(in), tol(both, 1e-12));
    EXPECT_NEAR(qra_cont(in), qra_base(in) + cl_loss(in), tol(cont, 1e-12));
  }
}

TEST(LossValue, DispatchMatchesFormulas) {
  support::Gen g(47);
  using support::oracle_cl;
  using support::oracle_dot;
  using support::oracle_sqdist;
  for (int i = 0; i < 300; ++i) {
    const auto in = g.loss_inputs(g.index(1, 24), 8);
    const auto& q = in.session_query;
    const double sq = oracle_dot(q, q);
    const std::pair<LossStrategy, double> expected[] = {
        {LossStrategy::cl_only, oracle_cl(in)},
        {LossStrategy::rewrite_only, oracle_sqdist(q, in.rewrite)},
        {LossStrategy::qra_base, oracle_sqdist(q, in.positive) + oracle_sqdist(q, in.rewrite)},
        {LossStrategy::qra_neg,
         oracle_sqdist(q, in.positive) + oracle_sqdist(q, in.rewrite) - oracle_sqdist(q, *in.hard_negative)},
        {LossStrategy::qra_cont, oracle_sqdist(q, in.positive) + oracle_sqdist(q, in.rewrite) + oracle_cl(in)},
        {LossStrategy::qra_both, oracle_sqdist(q, in.positive) + oracle_sqdist(q, in.rewrite) -
                                     oracle_sqdist(q, *in.hard_negative) + oracle_cl(in)},
        {LossStrategy::qra_base_no_rewrite, oracle_sqdist(q, in.positive)},
        {LossStrategy::qra_base_no_doc, oracle_sqdist(q, in.rewrite)},
        {LossStrategy::cl_plus_reg,
         oracle_cl(in) + (sq + oracle_dot(in.positive, in.positive)) + (sq + oracle_dot(in.rewrite, in.rewrite))},
        {LossStrategy::cl_plus_negdot,
         oracle_cl(in) - 2.0 * oracle_dot(q, in.positive) - 2.0 * oracle_dot(q, in.rewrite)},
    };
    for (const auto& [s, v] : expected) {
      EXPECT_NEAR(loss_value(s, in), v, tol(v, 1e-10)) << to_string(s);
    }
  }
}

TEST(LossValue, SmallExamples) {
  EXPECT_EQ(loss_value(LossStrategy::qra_base_no_rewrite, make(Embedding{0.2, 1}, Embedding{5, 5}, Embedding{0.2, 1})),
            0.0);
  EXPECT_EQ(loss_value(LossStrategy::rewrite_only, make(Embedding{0, 0}, Embedding{1, 1}, {})), 2.0);
}

TEST(LossValue, DecompositionCompleteness) {
  support::Gen g(48);
  for (int i = 0; i < 100; ++i) {
    const auto in = g.loss_inputs(g.index(2, 32), 8);
    const double lhs = loss_value(LossStrategy::cl_plus_reg, in) + loss_value(LossStrategy::cl_plus_negdot, in) -
                       loss_value(LossStrategy::cl_only, in);
    const double rhs = loss_value(LossStrategy::qra_cont, in);
    EXPECT_NEAR(lhs, rhs, tol(rhs, 1e-9));
  }
}

TEST(LossValue, MissingInputsNamed) {
  const Embedding q{1, 0};
  try {
    loss_value(LossStrategy::qra_neg, make(q, q, q, {}));
    FAIL();
  } catch (const ValidationError& e) {
    EXPECT_NE(std::string(e.what()).find("qra_neg"), std::string::npos);
    EXPECT_NE(std::string(e.what()).find("hard negative"), std::string::npos);
  }
  EXPECT_THROW(loss_value(LossStrategy::qra_cont, make(q, q, q, {})), ValidationError);
  EXPECT_THROW(loss_value(LossStrategy::rewrite_only, make(q, {}, q)), ValidationError);
  EXPECT_THROW(loss_value(LossStrategy::qra_base_no_rewrite, make(q, q, {})), ValidationError);
  EXPECT_NO_THROW(loss_value(LossStrategy::qra_base_no_doc, make(q, q, {})));
  EXPECT_THROW(loss_value(LossStrategy::qra_base, make(q, Embedding{1, 0, 0}, q)), ValidationError);
}

TEST(LossGradient, HandExamples) {
  const auto g1 = loss_gradient(LossStrategy::qra_base_no_rewrite, make(Embedding{1, 0}, {}, Embedding{0, 0}));
  EXPECT_EQ(g1, (Embedding{2, 0}));
  const auto g2 = loss_gradient(LossStrategy::cl_only, make(Embedding{1, 1}, {}, Embedding{1, 0}, {Embedding{0, 1}}));
  EXPECT_NEAR(g2[0], -0.5, 1e-15);
  EXPECT_NEAR(g2[1], 0.5, 1e-15);
}

TEST(LossGradient, ContrastiveMatchesSoftmaxFormula) {
  support::Gen g(49);
  for (int i = 0; i < 300; ++i) {
    const auto in = g.loss_inputs(g.index(2, 16), 8);
    // (p+ - 1) d+ + sum p- d-, with p from a naive softmax
    std::vector<double> e;
    double z = std::exp(support::oracle_dot(in.session_query, in.positive));
    for (const auto& n : in.negatives) {
      e.push_back(std::exp(support::oracle_dot(in.session_query, n)));
      z += e.back();
    }
    const double p_pos = std::exp(support::oracle_dot(in.session_query, in.positive)) / z;
    const auto grad = loss_gradient(LossStrategy::cl_only, in);
    for (std::size_t k = 0; k < grad.dim(); ++k) {
      double expect = (p_pos - 1.0) * in.positive[k];
      for (std::size_t j = 0; j < e.size(); ++j) expect += e[j] / z * in.negatives[j][k];
      EXPECT_NEAR(grad[k], expect, 1e-10);
    }
  }
}

TEST(FiniteDiff, AllStrategiesPass) {
  support::Gen g(50);
  for (LossStrategy s : kAllStrategies) {
    for (int i = 0; i < 100; ++i) {
      const auto in = g.loss_inputs(g.index(1, 32), 8);
      EXPECT_LT(finite_diff_check(s, in, 1e-5), 1e-4) << to_string(s);
    }
  }
}

TEST(FiniteDiff, QuadraticIsNearExact) {
  support::Gen g(51);
  for (int i = 0; i < 100; ++i) {
    EXPECT_LT(finite_diff_check(LossStrategy::qra_base, g.loss_inputs(16, 1), 1e-5), 1e-6);
  }
}

TEST(FiniteDiff, WeightedHardNegative) {
  support::Gen g(52);
  for (int i = 0; i < 50; ++i) {
    const auto in = g.loss_inputs(8, 4);
    EXPECT_LT(finite_diff_check(LossStrategy::qra_both, in, 1e-5, {0.3, std::nullopt}), 1e-4);
  }
}

TEST(FiniteDiff, StepValidated) {
  support::Gen g(53);
  const auto in = g.loss_inputs(4, 2);
  EXPECT_THROW(finite_diff_check(LossStrategy::qra_base, in, 0.0), ValidationError);
  EXPECT_THROW(finite_diff_check(LossStrategy::qra_base, in, 0.02), ValidationError);
  EXPECT_NO_THROW(finite_diff_check(LossStrategy::qra_base, in, 1e-2));
}
