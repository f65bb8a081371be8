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

// qracdr command-line driver. Every subcommand writes into a fresh --out
// directory together with a manifest.json.

#include <cctype>
#include <chrono>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "qracdr/checkpoint.hpp"
#include "qracdr/data.hpp"
#include "qracdr/data_io.hpp"
#include "qracdr/errors.hpp"
#include "qracdr/experiment.hpp"
#include "qracdr/geometry.hpp"
#include "qracdr/losses.hpp"
#include "qracdr/metrics.hpp"
#include "qracdr/retrieval.hpp"
#include "qracdr/trainer.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace qracdr;

namespace {

constexpr const char* kArtifactVersion = "1.0.0";

struct Common {
  std::string out;
  bool force = false;
  unsigned threads = 1;
};

struct MetricFlags {
  std::size_t mrr_cutoff = 100;
  std::size_t ndcg_k = 3;
  std::vector<std::size_t> recall_ks{10, 100};
  std::string gain = "linear";
  bool lenient = false;

  metrics::EvalOptions options() const {
    metrics::EvalOptions o;
    o.mrr_cutoff = mrr_cutoff;
    o.ndcg_k = ndcg_k;
    o.recall_ks = recall_ks;
    if (gain == "linear") {
      o.gain = metrics::Gain::linear;
    } else if (gain == "exponential") {
      o.gain = metrics::Gain::exponential;
    } else {
      throw UsageError("--gain must be linear or exponential");
    }
    o.strict = !lenient;
    return o;
  }
};

void add_common(CLI::App* sub, Common& c, bool threads = true) {
  sub->add_option("--out", c.out, "Output directory")->required();
  sub->add_flag("--force", c.force, "Write into an existing output directory");
  if (threads) sub->add_option("--threads", c.threads, "Worker threads")->check(CLI::PositiveNumber);
  sub->add_option("--config", "JSON file supplying any subset of the flags");
}

void add_metric_flags(CLI::App* sub, MetricFlags& m) {
  sub->add_option("--mrr-cutoff", m.mrr_cutoff, "MRR cutoff rank")->check(CLI::PositiveNumber);
  sub->add_option("--ndcg-k", m.ndcg_k, "NDCG depth")->check(CLI::PositiveNumber);
  sub->add_option("--recall-ks", m.recall_ks, "Recall depths")->delimiter(',');
  sub->add_option("--gain", m.gain, "NDCG gain: linear or exponential");
  sub->add_flag("--lenient", m.lenient, "Score queries missing from the run as 0 instead of failing");
}

/// Refuses to reuse an existing directory unless forced.
fs::path prepare_out(const Common& c) {
  const fs::path dir(c.out);
  std::error_code ec;
  if (fs::exists(dir, ec)) {
    if (!fs::is_directory(dir)) throw IoError("output path '" + c.out + "' exists and is not a directory");
    if (!c.force) throw UsageError("output directory '" + c.out + "' exists; pass --force to overwrite");
  } else {
    fs::create_directories(dir, ec);
    if (ec) throw IoError("cannot create output directory '" + c.out + "': " + ec.message());
  }
  return dir;
}

/// Every option of the subcommand with its effective value.
/// Numbers and booleans keep their JSON type; everything else stays a string.
json typed(const std::string& s) {
  if (s == "true" || s == "false") return s == "true";
  if (!s.empty() && (std::isdigit(static_cast<unsigned char>(s[0])) || s[0] == '-' || s[0] == '.')) {
    try {
      json j = json::parse(s);
      if (j.is_number()) return j;
    } catch (const json::exception&) {
    }
  }
  return s;
}

json config_echo(const CLI::App* sub) {
  json cfg = json::object();
  for (const CLI::Option* opt : sub->get_options()) {
    if (opt->get_lnames().empty()) continue;
    const std::string& name = opt->get_lnames().front();
    if (name == "help" || name == "config") continue;
    if (opt->get_expected_max() == 0) {
      cfg[name] = opt->count() > 0;
    } else if (opt->count() > 0) {
      const auto& res = opt->results();
      if (res.size() == 1 && opt->get_expected_max() <= 1) {
        cfg[name] = typed(res.front());
      } else {
        json arr = json::array();
        for (const auto& r : res) arr.push_back(typed(r));
        cfg[name] = arr;
      }
    } else {
      cfg[name] = typed(opt->get_default_str());
    }
  }
  return cfg;
}

std::string utc_now() {
  const std::time_t t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

struct Manifest {
  explicit Manifest(std::string name) : subcommand(std::move(name)) {}

  std::string subcommand;
  json inputs = json::object();
  std::vector<std::string> outputs;
  std::optional<std::uint64_t> seed;
  std::chrono::steady_clock::time_point started = std::chrono::steady_clock::now();
  std::string started_at = utc_now();

  void write(const fs::path& dir, const CLI::App* sub) const {
    json j;
    j["subcommand"] = subcommand;
    j["artifact_version"] = kArtifactVersion;
    j["config"] = config_echo(sub);
    j["seed"] = seed ? json(*seed) : json();
    j["inputs"] = inputs;
    j["outputs"] = outputs;
    j["started_at"] = started_at;
    j["duration_seconds"] =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
    data::write_file(dir / "manifest.json", [&](std::ostream& o) { o << j.dump(2) << "\n"; });
  }
};

void write_text(const fs::path& path, const std::string& text) {
  data::write_file(path, [&](std::ostream& o) { o << text; });
}

const std::vector<data::SessionRecord>& split_records(const data::Dataset& ds, const std::string& split) {
  if (split == "train") return ds.train;
  if (split == "dev") return ds.dev;
  if (split == "test") return ds.test;
  throw UsageError("--split must be train, dev or test");
}

std::string checkpoint_strategy(const fs::path& path) {
  const json j = data::read_file(path, [](std::istream& in) {
    json v;
    try {
      in >> v;
    } catch (const json::exception& e) {
      throw ValidationError(std::string("checkpoint: malformed JSON (") + e.what() + ")");
    }
    return v;
  });
  if (j.contains("config") && j["config"].contains("strategy")) return j["config"]["strategy"].get<std::string>();
  return "checkpoint";
}

// --- config file support ----------------------------------------------------

std::string flag_name(std::string key) {
  for (char& c : key) {
    if (c == '_') c = '-';
  }
  return "--" + key;
}

std::string json_scalar(const json& v) {
  if (v.is_string()) return v.get<std::string>();
  if (v.is_boolean()) return v.get<bool>() ? "true" : "false";
  return v.dump();
}

/// Expands `--config FILE` into explicit flags. A flag given on the command
/// line wins over the same key in the file.
std::vector<std::string> expand_config(std::vector<std::string> args) {
  std::optional<std::string> path;
  std::vector<std::string> rest;
  for (std::size_t i = 0; i < args.size(); ++i) {
    if (args[i] == "--config") {
      if (i + 1 >= args.size()) throw UsageError("--config needs a file");
      path = args[++i];
    } else if (args[i].rfind("--config=", 0) == 0) {
      path = args[i].substr(9);
    } else {
      rest.push_back(args[i]);
    }
  }
  if (!path) return rest;

  std::ifstream in(*path);
  if (!in) throw IoError("cannot open config file '" + *path + "'");
  json cfg;
  try {
    in >> cfg;
  } catch (const json::exception& e) {
    throw ValidationError("config file '" + *path + "': " + e.what());
  }
  if (!cfg.is_object()) throw ValidationError("config file '" + *path + "' must hold a JSON object");

  std::set<std::string> given;
  for (const auto& a : rest) {
    if (a.rfind("--", 0) == 0) given.insert(a.substr(0, a.find('=')));
  }
  for (const auto& [key, value] : cfg.items()) {
    const std::string flag = flag_name(key);
    if (flag == "--config" || given.count(flag)) continue;
    if (value.is_array()) {
      std::string joined;
      for (const auto& v : value) joined += (joined.empty() ? "" : ",") + json_scalar(v);
      rest.push_back(flag + "=" + joined);
    } else if (value.is_null()) {
      continue;
    } else {
      rest.push_back(flag + "=" + json_scalar(value));
    }
  }
  return rest;
}

// --- subcommands --------------------------------------------------------------

struct GenerateCmd {
  Common common;
  data::GenConfig gen;

  void attach(CLI::App* sub) {
    add_common(sub, common, false);
    sub->add_option("--seed", gen.seed, "Random seed");
    sub->add_option("--num-topics", gen.num_topics, "Number of topics");
    sub->add_option("--docs-per-topic", gen.docs_per_topic, "Documents per topic");
    sub->add_option("--dim", gen.dim, "Embedding dimension");
    sub->add_option("--feature-dim", gen.feature_dim, "Session feature dimension");
    sub->add_option("--sessions", gen.sessions, "Number of conversations");
    sub->add_option("--min-turns", gen.min_turns, "Fewest turns per conversation");
    sub->add_option("--max-turns", gen.max_turns, "Most turns per conversation");
    sub->add_option("--doc-noise", gen.doc_noise, "Per-coordinate document noise");
    sub->add_option("--rewrite-noise", gen.rewrite_noise, "Per-coordinate rewrite noise");
    sub->add_option("--history-noise", gen.history_noise, "Per-coordinate history noise");
    sub->add_option("--history-rank", gen.history_rank, "Rank of the history-noise subspace (0 = isotropic)");
    sub->add_option("--intent-share", gen.intent_share, "Position of the session signal between d+ and rewrite");
    sub->add_option("--leakage", gen.leakage, "Strength of off-topic history leakage");
    sub->add_option("--topic-shift-prob", gen.topic_shift_prob, "Per-turn topic switch probability");
    sub->add_option("--hard-negatives", gen.hard_negatives, "Hard negatives per turn");
    sub->add_option("--positives-per-turn", gen.positives_per_turn, "Relevant documents per turn");
    sub->add_option("--train-fraction", gen.train_fraction, "Share of conversations in train");
    sub->add_option("--dev-fraction", gen.dev_fraction, "Share of conversations in dev");
  }

  void run(const CLI::App* sub) {
    gen.validate();
    const fs::path dir = prepare_out(common);
    Manifest mf("generate-data");
    mf.seed = gen.seed;
    const auto ds = data::generate(gen);
    data::write_dataset(dir, ds);
    mf.outputs = {data::kCollectionFile, data::split_file("train"), data::split_file("dev"), data::split_file("test"),
                  data::qrels_file("train"), data::qrels_file("dev"), data::qrels_file("test"), data::kDocTopicsFile};
    mf.write(dir, sub);
  }
};

struct TrainCmd {
  Common common;
  std::string data_dir;
  std::string split = "train";
  std::string dev_split = "dev";
  std::string strategy = "qra_cont";
  std::string optimizer = "adam";
  std::string encoder = "linear";
  std::string init = "identity";
  std::optional<double> floor;
  trainer::TrainConfig cfg;

  void attach(CLI::App* sub) {
    add_common(sub, common);
    sub->add_option("--data", data_dir, "Dataset directory")->required();
    sub->add_option("--split", split, "Training split");
    sub->add_option("--dev-split", dev_split, "Split monitored each epoch, or 'none'");
    sub->add_option("--strategy", strategy, "Loss strategy");
    sub->add_option("--batch-size", cfg.batch_size, "Batch size");
    sub->add_option("--epochs", cfg.epochs, "Epochs");
    sub->add_option("--learning-rate", cfg.learning_rate, "Learning rate");
    sub->add_option("--optimizer", optimizer, "sgd or adam");
    sub->add_option("--adam-beta1", cfg.adam_beta1, "Adam beta1");
    sub->add_option("--adam-beta2", cfg.adam_beta2, "Adam beta2");
    sub->add_option("--adam-eps", cfg.adam_eps, "Adam epsilon");
    sub->add_option("--encoder", encoder, "linear or free_table");
    sub->add_option("--init", init, "identity or random");
    sub->add_option("--seed", cfg.seed, "Random seed");
    sub->add_option("--in-batch-negatives", cfg.in_batch_negatives, "Use other batch positives as negatives");
    sub->add_option("--cl-hard-negatives", cfg.cl_hard_negatives, "Add the record's hard negatives to the pool");
    sub->add_option("--hard-negative-weight", cfg.hard_negative_weight, "Weight of the hard-negative MSE term");
    sub->add_option("--hard-negative-floor", floor, "Lower bound on the weighted hard-negative term");
  }

  void run(const CLI::App* sub) {
    cfg.strategy = losses::strategy_from_string(strategy);
    cfg.optimizer = trainer::optimizer_from_string(optimizer);
    cfg.encoder = trainer::encoder_mode_from_string(encoder);
    cfg.init = trainer::init_from_string(init);
    cfg.hard_negative_floor = floor;
    cfg.threads = common.threads;
    cfg.validate();
    const auto ds = data::read_dataset(data_dir);
    const fs::path dir = prepare_out(common);
    Manifest mf("train");
    mf.seed = cfg.seed;
    mf.inputs["data"] = data_dir;

    std::optional<trainer::DevSet> dev;
    if (dev_split != "none") dev = trainer::DevSet{&split_records(ds, dev_split), &ds.qrels};
    const auto result = trainer::train(split_records(ds, split), ds.collection, cfg, dev);
    trainer::save_checkpoint(dir / "checkpoint.json", result.params, cfg);
    write_text(dir / "train_log.csv", trainer::log_to_csv(result.log));
    mf.outputs = {"checkpoint.json", "train_log.csv"};
    mf.write(dir, sub);
  }
};

struct RetrieveCmd {
  Common common;
  std::string data_dir;
  std::string checkpoint;
  std::string split = "test";
  std::string query = "encoder";
  std::size_t k = 100;
  std::string tag;

  void attach(CLI::App* sub) {
    add_common(sub, common);
    sub->add_option("--data", data_dir, "Dataset directory")->required();
    sub->add_option("--checkpoint", checkpoint, "Encoder checkpoint (required for --query encoder)");
    sub->add_option("--split", split, "Split whose queries are run");
    sub->add_option("--query", query, "encoder, rewrite, aligned or non_aligned");
    sub->add_option("--k", k, "Results per query")->check(CLI::PositiveNumber);
    sub->add_option("--tag", tag, "Run tag (defaults to the strategy or query source)");
  }

  void run(const CLI::App* sub) {
    const auto ds = data::read_dataset(data_dir);
    const auto& records = split_records(ds, split);
    std::vector<std::pair<std::string, Embedding>> queries;
    Manifest mf("retrieve");
    mf.inputs["data"] = data_dir;
    std::string run_tag = tag;
    if (query == "encoder") {
      if (checkpoint.empty()) throw UsageError("--query encoder needs --checkpoint");
      const auto params = trainer::load_checkpoint(checkpoint);
      mf.inputs["checkpoint"] = checkpoint;
      queries = trainer::encode_all(params, records, common.threads);
      if (run_tag.empty()) run_tag = checkpoint_strategy(checkpoint);
    } else {
      geometry::Representation mode;
      if (query == "rewrite") {
        mode = geometry::Representation::original;
      } else if (query == "aligned") {
        mode = geometry::Representation::aligned;
      } else if (query == "non_aligned") {
        mode = geometry::Representation::non_aligned;
      } else {
        throw UsageError("--query must be encoder, rewrite, aligned or non_aligned");
      }
      for (const auto& r : records) {
        queries.emplace_back(r.query_id,
                             geometry::represent(mode, r.rewrite_embedding, ds.collection.lookup(r.positive_doc_id)));
      }
      if (run_tag.empty()) run_tag = query;
    }
    const auto run = retrieval::run_queries(ds.collection, queries, k, common.threads);
    const fs::path dir = prepare_out(common);
    data::write_file(dir / "run.trec", [&](std::ostream& o) { data::write_run(o, run, run_tag); });
    mf.outputs = {"run.trec"};
    mf.write(dir, sub);
  }
};

struct EvaluateCmd {
  Common common;
  std::string data_dir;
  std::string split = "test";
  std::string checkpoint;
  std::string run_file;
  std::string qrels_path;
  std::string name;
  MetricFlags metric;

  void attach(CLI::App* sub) {
    add_common(sub, common);
    sub->add_option("--data", data_dir, "Dataset directory (with --checkpoint)");
    sub->add_option("--split", split, "Evaluated split");
    sub->add_option("--checkpoint", checkpoint, "Encoder checkpoint to evaluate");
    sub->add_option("--run", run_file, "TREC run file to evaluate");
    sub->add_option("--qrels", qrels_path, "TREC qrels (defaults to the split's qrels under --data)");
    sub->add_option("--name", name, "Row label (defaults to the strategy or run tag)");
    add_metric_flags(sub, metric);
  }

  void run(const CLI::App* sub) {
    if (checkpoint.empty() == run_file.empty()) throw UsageError("pass exactly one of --checkpoint and --run");
    const auto opt = metric.options();
    Manifest mf("evaluate");
    metrics::MetricReport report;
    if (!checkpoint.empty()) {
      if (data_dir.empty()) throw UsageError("--checkpoint needs --data");
      const auto ds = data::read_dataset(data_dir);
      const auto params = trainer::load_checkpoint(checkpoint);
      mf.inputs["data"] = data_dir;
      mf.inputs["checkpoint"] = checkpoint;
      metrics::Qrels qrels = ds.qrels;
      if (!qrels_path.empty()) {
        qrels = data::read_file(qrels_path, [](std::istream& i) { return data::read_qrels(i); });
        mf.inputs["qrels"] = qrels_path;
      }
      const std::string label = name.empty() ? checkpoint_strategy(checkpoint) : name;
      report = trainer::evaluate_checkpoint(params, split_records(ds, split), qrels, ds.collection, opt, label,
                                            common.threads)
                   .report;
    } else {
      std::string qpath = qrels_path;
      if (qpath.empty()) {
        if (data_dir.empty()) throw UsageError("--run needs --qrels or --data");
        qpath = (fs::path(data_dir) / data::qrels_file(split)).string();
      }
      const auto run = data::read_file(run_file, [](std::istream& i) { return data::read_run(i); });
      const auto qrels = data::read_file(qpath, [](std::istream& i) { return data::read_qrels(i); });
      mf.inputs["run"] = run_file;
      mf.inputs["qrels"] = qpath;
      std::string label = name;
      if (label.empty()) {
        std::ifstream in(run_file);
        std::string line;
        std::getline(in, line);
        std::istringstream ss(line);
        std::string tok;
        while (ss >> tok) label = tok;
        if (label.empty()) label = "run";
      }
      report = metrics::evaluate(run, qrels, opt, label);
    }
    const fs::path dir = prepare_out(common);
    write_text(dir / "metrics.csv", metrics::reports_to_csv({report}, opt, "strategy"));
    mf.outputs = {"metrics.csv"};
    mf.write(dir, sub);
  }
};

struct PrelimCmd {
  Common common;
  std::string data_dir;
  std::string split = "test";
  MetricFlags metric;

  void attach(CLI::App* sub) {
    add_common(sub, common);
    sub->add_option("--data", data_dir, "Dataset directory")->required();
    sub->add_option("--split", split, "Split whose queries are used");
    add_metric_flags(sub, metric);
  }

  void run(const CLI::App* sub) {
    const auto opt = metric.options();
    const auto ds = data::read_dataset(data_dir);
    const auto table = geometry::prelim_experiment(split_records(ds, split), ds.collection, ds.qrels, opt,
                                                   common.threads);
    const fs::path dir = prepare_out(common);
    Manifest mf("prelim-experiment");
    mf.inputs["data"] = data_dir;
    write_text(dir / "prelim.csv", metrics::reports_to_csv(table, opt, "representation"));
    mf.outputs = {"prelim.csv"};
    mf.write(dir, sub);
  }
};

struct GeometryCmd {
  Common common;
  std::vector<std::size_t> dims{8, 64, 256, 768};
  std::vector<double> alphas{0.1, 0.3, 0.5};
  std::size_t samples = 100000;
  std::uint64_t seed = 42;
  double num_stderr = 3.0;

  void attach(CLI::App* sub) {
    add_common(sub, common);
    sub->add_option("--dims", dims, "Dimensions")->delimiter(',');
    sub->add_option("--alpha,--alphas", alphas, "Cap thresholds")->delimiter(',');
    sub->add_option("--samples", samples, "Samples per estimate")->check(CLI::PositiveNumber);
    sub->add_option("--seed", seed, "Random seed");
    sub->add_option("--num-stderr", num_stderr, "Allowed standard errors above the bound");
  }

  void run(const CLI::App* sub) {
    std::ostringstream csv;
    csv << "dim,alpha,samples,estimate,stderr,bound,within_bound\n";
    std::vector<std::string> violations;
    for (double alpha : alphas) {
      for (std::size_t dim : dims) {
        const auto est = geometry::cap_ratio_mc(dim, alpha, samples, seed, common.threads);
        const bool ok = est.within_bound(num_stderr);
        csv << dim << "," << trainer::format_double(alpha) << "," << samples << "," << trainer::format_double(est.estimate)
            << "," << trainer::format_double(est.standard_error) << "," << trainer::format_double(est.theorem_bound)
            << "," << (ok ? "true" : "false") << "\n";
        if (!ok) violations.push_back("dim=" + std::to_string(dim) + " alpha=" + trainer::format_double(alpha));
      }
    }
    const fs::path dir = prepare_out(common);
    Manifest mf("geometry-verify");
    mf.seed = seed;
    write_text(dir / "cap_ratio.csv", csv.str());
    mf.outputs = {"cap_ratio.csv"};
    mf.write(dir, sub);
    if (!violations.empty()) {
      std::string msg = "cap ratio above bound for";
      for (const auto& v : violations) msg += " " + v;
      throw ValidationError(msg);
    }
  }
};

struct GradCheckCmd {
  Common common;
  std::vector<std::string> strategies{"all"};
  std::size_t trials = 100;
  std::size_t dim = 16;
  std::size_t max_negatives = 8;
  double step = 1e-5;
  double tolerance = 1e-4;
  std::uint64_t seed = 42;

  void attach(CLI::App* sub) {
    add_common(sub, common, false);
    sub->add_option("--strategies", strategies, "Strategies to check, or 'all'")->delimiter(',');
    sub->add_option("--trials", trials, "Random instances per strategy")->check(CLI::PositiveNumber);
    sub->add_option("--dim", dim, "Embedding dimension")->check(CLI::PositiveNumber);
    sub->add_option("--max-negatives", max_negatives, "Largest negative pool")->check(CLI::PositiveNumber);
    sub->add_option("--step", step, "Central-difference step");
    sub->add_option("--tolerance", tolerance, "Largest accepted relative error");
    sub->add_option("--seed", seed, "Random seed");
  }

  void run(const CLI::App* sub) {
    std::vector<losses::LossStrategy> chosen;
    for (const auto& s : strategies) {
      if (s == "all") {
        chosen.assign(losses::kAllStrategies.begin(), losses::kAllStrategies.end());
      } else {
        chosen.push_back(losses::strategy_from_string(s));
      }
    }
    std::ostringstream csv;
    csv << "strategy,trials,max_rel_error,passed\n";
    std::vector<std::string> failed;
    for (std::size_t si = 0; si < chosen.size(); ++si) {
      Rng rng = Rng(seed).substream(static_cast<std::uint64_t>(chosen[si]));
      double worst = 0.0;
      for (std::size_t t = 0; t < trials; ++t) {
        losses::LossInputs in;
        in.session_query = gaussian(dim, rng);
        in.rewrite = gaussian(dim, rng);
        in.positive = gaussian(dim, rng);
        in.hard_negative = gaussian(dim, rng);
        const std::size_t negs = 1 + rng.below(max_negatives);
        for (std::size_t j = 0; j < negs; ++j) in.negatives.push_back(gaussian(dim, rng));
        worst = std::max(worst, losses::finite_diff_check(chosen[si], in, step));
      }
      const bool ok = worst < tolerance;
      csv << losses::to_string(chosen[si]) << "," << trials << "," << trainer::format_double(worst) << ","
          << (ok ? "true" : "false") << "\n";
      if (!ok) failed.emplace_back(losses::to_string(chosen[si]));
    }
    const fs::path dir = prepare_out(common);
    Manifest mf("grad-check");
    mf.seed = seed;
    write_text(dir / "grad_check.csv", csv.str());
    mf.outputs = {"grad_check.csv"};
    mf.write(dir, sub);
    if (!failed.empty()) {
      std::string msg = "gradient check failed for";
      for (const auto& f : failed) msg += " " + f;
      throw NumericalError(msg);
    }
  }
};

struct AnalyzeCmd {
  Common common;
  std::string data_dir;
  std::string checkpoint;
  std::string split = "test";
  MetricFlags metric;

  void attach(CLI::App* sub) {
    add_common(sub, common);
    sub->add_option("--data", data_dir, "Dataset directory")->required();
    sub->add_option("--checkpoint", checkpoint, "Encoder checkpoint")->required();
    sub->add_option("--split", split, "Analyzed split");
    add_metric_flags(sub, metric);
  }

  static std::string summary_row(const std::string& source, const metrics::Summary& s) {
    using trainer::format_double;
    return source + "," + std::to_string(s.count) + "," + format_double(s.mean) + "," + format_double(s.min) + "," +
           format_double(s.q1) + "," + format_double(s.median) + "," + format_double(s.q3) + "," +
           format_double(s.max) + "\n";
  }

  void run(const CLI::App* sub) {
    const auto opt = metric.options();
    const auto ds = data::read_dataset(data_dir);
    const auto& records = split_records(ds, split);
    const auto params = trainer::load_checkpoint(checkpoint);
    const auto ev = trainer::evaluate_checkpoint(params, records, ds.qrels, ds.collection, opt, "encoder",
                                                 common.threads);
    const auto judged = data::qrels_for(records, ds.qrels);
    const auto turns = metrics::per_turn_ndcg(ev.run, judged, data::turn_map(records), opt.ndcg_k, opt.gain,
                                              opt.strict);

    metrics::EncodingMap encoded, rewrites;
    for (const auto& [qid, e] : trainer::encode_all(params, records, common.threads)) encoded.emplace(qid, e);
    for (const auto& r : records) rewrites.emplace(r.query_id, r.rewrite_embedding);

    std::ostringstream qq;
    qq << "pair,count,mean_dot\n";
    qq << "encoder_vs_rewrite," << encoded.size() << ","
       << trainer::format_double(metrics::qq_similarity(encoded, rewrites)) << "\n";
    qq << "rewrite_vs_rewrite," << rewrites.size() << ","
       << trainer::format_double(metrics::qq_similarity(rewrites, rewrites)) << "\n";

    std::ostringstream qd;
    qd << "source,count,mean,min,q1,median,q3,max\n";
    qd << summary_row("encoder", metrics::qd_similarity(encoded, judged, ds.collection));
    qd << summary_row("rewrite", metrics::qd_similarity(rewrites, judged, ds.collection));

    const fs::path dir = prepare_out(common);
    Manifest mf("analyze");
    mf.inputs["data"] = data_dir;
    mf.inputs["checkpoint"] = checkpoint;
    write_text(dir / "per_turn.csv", metrics::turn_rows_to_csv(turns, opt.ndcg_k));
    write_text(dir / "qq_similarity.csv", qq.str());
    write_text(dir / "qd_similarity.csv", qd.str());
    mf.outputs = {"per_turn.csv", "qq_similarity.csv", "qd_similarity.csv"};
    mf.write(dir, sub);
  }
};

int fail(ErrorKind kind, const std::string& message) {
  std::string flat = message;
  for (char& c : flat) {
    if (c == '\n' || c == '\r') c = ' ';
  }
  std::cerr << "error kind=" << kind_name(kind) << " code=" << exit_code(kind) << " message=" << json(flat).dump()
            << "\n";
  return exit_code(kind);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Query representation alignment for conversational dense retrieval"};
  app.require_subcommand(1);
  app.option_defaults()->always_capture_default();

  GenerateCmd generate;
  TrainCmd train;
  RetrieveCmd retrieve;
  EvaluateCmd evaluate;
  PrelimCmd prelim;
  GeometryCmd geometry_verify;
  GradCheckCmd grad_check;
  AnalyzeCmd analyze;

  struct Entry {
    CLI::App* app;
    std::function<void(const CLI::App*)> run;
  };
  std::vector<Entry> entries;
  auto add = [&](const char* name, const char* help, auto& cmd) {
    CLI::App* sub = app.add_subcommand(name, help);
    cmd.attach(sub);
    entries.push_back({sub, [&cmd](const CLI::App* s) { cmd.run(s); }});
  };
  add("generate-data", "Generate a synthetic conversational dataset", generate);
  add("train", "Train the session-query encoder", train);
  add("retrieve", "Run exact retrieval and write a TREC run", retrieve);
  add("evaluate", "Score a checkpoint or run file", evaluate);
  add("prelim-experiment", "Compare aligned, original and non-aligned representations", prelim);
  add("geometry-verify", "Monte-Carlo cap ratios against the exponential bound", geometry_verify);
  add("grad-check", "Finite-difference check of every loss gradient", grad_check);
  add("analyze", "Per-turn NDCG, Q-Q and Q-D similarity", analyze);

  try {
    std::vector<std::string> args(argv + 1, argv + argc);
    args = expand_config(std::move(args));
    std::reverse(args.begin(), args.end());
    try {
      app.parse(args);
    } catch (const CLI::CallForHelp& e) {
      return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
      return app.exit(e);
    } catch (const CLI::ParseError& e) {
      return fail(ErrorKind::usage, e.what());
    }
    for (const auto& e : entries) {
      if (e.app->parsed()) e.run(e.app);
    }
  } catch (const Error& e) {
    return fail(e.kind(), e.what());
  } catch (const std::filesystem::filesystem_error& e) {
    return fail(ErrorKind::io, e.what());
  } catch (const std::exception& e) {
    return fail(ErrorKind::validation, e.what());
  }
  return 0;
}
