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

// Library walk-through: generate a small dataset, train two objectives and
// compare them on the held-out split.

#include <iostream>

#include "qracdr/data.hpp"
#include "qracdr/experiment.hpp"
#include "qracdr/trainer.hpp"

int main() {
  using namespace qracdr;

  data::GenConfig gen;
  gen.sessions = 120;
  gen.docs_per_topic = 200;
  const data::Dataset ds = data::generate(gen);
  std::cout << "collection " << ds.collection.size() << " docs, train " << ds.train.size() << ", test "
            << ds.test.size() << " turns\n";

  metrics::EvalOptions opt;
  const auto prelim = geometry::prelim_experiment(ds.test, ds.collection, ds.qrels, opt);
  std::cout << metrics::reports_to_csv(prelim, opt, "representation");

  std::vector<metrics::MetricReport> reports;
  for (auto strategy : {losses::LossStrategy::cl_only, losses::LossStrategy::qra_base}) {
    trainer::TrainConfig cfg;
    cfg.strategy = strategy;
    const auto result = trainer::train(ds.train, ds.collection, cfg);
    reports.push_back(trainer::evaluate_checkpoint(result.params, ds.test, ds.qrels, ds.collection, opt,
                                                   std::string(losses::to_string(strategy)))
                          .report);
  }
  std::cout << metrics::reports_to_csv(reports, opt, "strategy");
  return 0;
}
