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

/** \file data_io.hpp
 *  \brief File formats.
 *
 *  Sessions and collections are JSON Lines whose first line is a header object
 *  {"dim": m, "version": 1} (sessions also carry "feature_dim"). Doubles are
 *  written in shortest round-trip form, so read(write(x)) is bit-exact.
 *
 *  Qrels:  <query_id> 0 <doc_id> <grade>
 *  Runs:   <query_id> Q0 <doc_id> <rank> <score> <tag>   (score with 6 decimals)
 */

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "qracdr/data.hpp"
#include "qracdr/metrics.hpp"
#include "qracdr/retrieval.hpp"

namespace qracdr::data {

inline constexpr int kFormatVersion = 1;

namespace detail {

inline std::ofstream open_out(const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
  return out;
}

inline std::ifstream open_in(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path.string() + "' for reading");
  return in;
}

[[noreturn]] inline void parse_error(std::size_t line, const std::string& reason) {
  throw ValidationError("line " + std::to_string(line) + ": " + reason);
}

inline nlohmann::json parse_line(const std::string& text, std::size_t line) {
  try {
    return nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    parse_error(line, std::string("malformed JSON (") + e.what() + ")");
  }
}

template <typename T>
T field(const nlohmann::json& obj, const char* key, std::size_t line) {
  if (!obj.is_object() || !obj.contains(key)) parse_error(line, std::string("missing field '") + key + "'");
  try {
    return obj.at(key).get<T>();
  } catch (const nlohmann::json::exception&) {
    parse_error(line, std::string("field '") + key + "' has the wrong type");
  }
}

struct Header {
  std::size_t dim = 0;
  std::size_t feature_dim = 0;
};

inline Header read_header(std::istream& in, bool sessions) {
  std::string text;
  if (!std::getline(in, text)) parse_error(1, "missing header line");
  const auto obj = parse_line(text, 1);
  const int version = field<int>(obj, "version", 1);
  if (version != kFormatVersion) parse_error(1, "unsupported version " + std::to_string(version));
  Header h;
  h.dim = field<std::size_t>(obj, "dim", 1);
  h.feature_dim = sessions && obj.contains("feature_dim") ? field<std::size_t>(obj, "feature_dim", 1) : h.dim;
  if (h.dim == 0) parse_error(1, "dim must be positive");
  return h;
}

inline Embedding to_embedding(const std::vector<double>& values, std::size_t dim, const std::string& id,
                              const char* what, std::size_t line) {
  if (values.size() != dim) {
    parse_error(line, std::string(what) + " of '" + id + "' has " + std::to_string(values.size()) +
                          " values, header dim is " + std::to_string(dim));
  }
  try {
    return Embedding(values);
  } catch (const ValidationError& e) {
    parse_error(line, std::string(what) + " of '" + id + "': " + e.what());
  }
}

inline std::vector<std::string> split_ws(const std::string& line) {
  std::istringstream ss(line);
  std::vector<std::string> tok;
  std::string t;
  while (ss >> t) tok.push_back(t);
  return tok;
}

}  // namespace detail

inline void write_sessions(std::ostream& out, const std::vector<SessionRecord>& records, std::size_t dim,
                           std::size_t feature_dim) {
  out << nlohmann::json{{"dim", dim}, {"feature_dim", feature_dim}, {"version", kFormatVersion}}.dump() << "\n";
  for (const auto& r : records) {
    nlohmann::json obj;
    obj["conversation_id"] = r.conversation_id;
    obj["turn"] = r.turn;
    obj["query_id"] = r.query_id;
    obj["features"] = r.features;
    obj["rewrite_embedding"] = r.rewrite_embedding.vector();
    obj["positive_doc_id"] = r.positive_doc_id;
    obj["hard_negative_doc_ids"] = r.hard_negative_doc_ids;
    out << obj.dump() << "\n";
  }
}

struct SessionFile {
  std::size_t dim = 0;
  std::size_t feature_dim = 0;
  std::vector<SessionRecord> records;
};

inline SessionFile read_sessions(std::istream& in) {
  SessionFile file;
  const auto header = detail::read_header(in, true);
  file.dim = header.dim;
  file.feature_dim = header.feature_dim;
  std::string text;
  std::size_t line = 1;
  while (std::getline(in, text)) {
    ++line;
    if (text.empty()) continue;
    const auto obj = detail::parse_line(text, line);
    SessionRecord r;
    r.conversation_id = detail::field<std::string>(obj, "conversation_id", line);
    r.turn = detail::field<std::size_t>(obj, "turn", line);
    if (r.turn < 1) detail::parse_error(line, "turn must be >= 1");
    r.query_id = detail::field<std::string>(obj, "query_id", line);
    r.features = detail::field<std::vector<double>>(obj, "features", line);
    if (r.features.size() != file.feature_dim) {
      detail::parse_error(line, "features of '" + r.query_id + "' have " + std::to_string(r.features.size()) +
                                    " values, header feature_dim is " + std::to_string(file.feature_dim));
    }
    r.rewrite_embedding = detail::to_embedding(detail::field<std::vector<double>>(obj, "rewrite_embedding", line),
                                               file.dim, r.query_id, "rewrite_embedding", line);
    r.positive_doc_id = detail::field<std::string>(obj, "positive_doc_id", line);
    r.hard_negative_doc_ids = detail::field<std::vector<std::string>>(obj, "hard_negative_doc_ids", line);
    for (const auto& h : r.hard_negative_doc_ids) {
      if (h == r.positive_doc_id) detail::parse_error(line, "positive document listed as hard negative");
    }
    file.records.push_back(std::move(r));
  }
  return file;
}

inline void write_collection(std::ostream& out, const retrieval::Collection& c) {
  out << nlohmann::json{{"dim", c.dim()}, {"version", kFormatVersion}}.dump() << "\n";
  for (std::size_t r = 0; r < c.size(); ++r) {
    const auto row = c.row(r);
    nlohmann::json obj;
    obj["doc_id"] = c.id(r);
    obj["embedding"] = std::vector<double>(row.begin(), row.end());
    out << obj.dump() << "\n";
  }
}

inline retrieval::Collection read_collection(std::istream& in) {
  const auto header = detail::read_header(in, false);
  std::vector<std::pair<std::string, Embedding>> entries;
  std::string text;
  std::size_t line = 1;
  while (std::getline(in, text)) {
    ++line;
    if (text.empty()) continue;
    const auto obj = detail::parse_line(text, line);
    auto id = detail::field<std::string>(obj, "doc_id", line);
    auto emb = detail::to_embedding(detail::field<std::vector<double>>(obj, "embedding", line), header.dim, id,
                                    "embedding", line);
    entries.emplace_back(std::move(id), std::move(emb));
  }
  return retrieval::build_collection(std::move(entries));
}

inline void write_qrels(std::ostream& out, const metrics::Qrels& qrels) {
  for (const auto& [qid, judged] : qrels) {
    for (const auto& [doc, grade] : judged) out << qid << " 0 " << doc << " " << grade << "\n";
  }
}

inline metrics::Qrels read_qrels(std::istream& in) {
  metrics::Qrels qrels;
  std::string text;
  std::size_t line = 0;
  while (std::getline(in, text)) {
    ++line;
    const auto tok = detail::split_ws(text);
    if (tok.empty()) continue;
    if (tok.size() != 4) detail::parse_error(line, "qrels line needs 4 fields, got " + std::to_string(tok.size()));
    int grade = 0;
    try {
      std::size_t used = 0;
      grade = std::stoi(tok[3], &used);
      if (used != tok[3].size()) throw std::invalid_argument("trailing");
    } catch (const std::exception&) {
      detail::parse_error(line, "grade '" + tok[3] + "' is not an integer");
    }
    if (grade < 0) detail::parse_error(line, "negative grade " + tok[3]);
    qrels[tok[0]][tok[2]] = grade;
  }
  return qrels;
}

inline std::string format_score(double score) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.6f", score);
  return buf;
}

inline void write_run(std::ostream& out, const retrieval::RankedRun& run, const std::string& tag) {
  for (const auto& r : run.results()) {
    for (const auto& h : r.hits) {
      out << r.query_id << " Q0 " << h.doc_id << " " << h.rank << " " << format_score(h.score) << " " << tag << "\n";
    }
  }
}

/// Reads a TREC run and re-validates ranking invariants. Lines of a query must
/// be contiguous and ordered by rank.
inline retrieval::RankedRun read_run(std::istream& in) {
  retrieval::RankedRun run;
  std::string text;
  std::size_t line = 0;
  std::string current;
  std::vector<retrieval::Hit> hits;
  auto flush = [&] {
    if (!current.empty()) run.add(current, std::move(hits));
    hits.clear();
  };
  while (std::getline(in, text)) {
    ++line;
    const auto tok = detail::split_ws(text);
    if (tok.empty()) continue;
    if (tok.size() != 6) detail::parse_error(line, "run line needs 6 fields, got " + std::to_string(tok.size()));
    retrieval::Hit h;
    h.doc_id = tok[2];
    try {
      std::size_t used = 0;
      const long long rank = std::stoll(tok[3], &used);
      if (used != tok[3].size() || rank < 1) throw std::invalid_argument("rank");
      h.rank = static_cast<std::size_t>(rank);
      h.score = std::stod(tok[4], &used);
      if (used != tok[4].size() || !std::isfinite(h.score)) throw std::invalid_argument("score");
    } catch (const std::exception&) {
      detail::parse_error(line, "bad rank or score");
    }
    if (tok[0] != current) {
      flush();
      current = tok[0];
      if (run.contains(current)) detail::parse_error(line, "query '" + current + "' is not contiguous");
    }
    hits.push_back(std::move(h));
  }
  try {
    flush();
  } catch (const ValidationError& e) {
    throw ValidationError(std::string("run file: ") + e.what());
  }
  return run;
}

inline void write_doc_topics(std::ostream& out, const std::map<std::string, std::size_t>& topics) {
  for (const auto& [doc, t] : topics) out << doc << "\t" << t << "\n";
}

inline std::map<std::string, std::size_t> read_doc_topics(std::istream& in) {
  std::map<std::string, std::size_t> topics;
  std::string text;
  std::size_t line = 0;
  while (std::getline(in, text)) {
    ++line;
    const auto tok = detail::split_ws(text);
    if (tok.empty()) continue;
    if (tok.size() != 2) detail::parse_error(line, "topic line needs 2 fields");
    try {
      std::size_t used = 0;
      const unsigned long t = std::stoul(tok[1], &used);
      if (used != tok[1].size()) throw std::invalid_argument("topic");
      topics[tok[0]] = static_cast<std::size_t>(t);
    } catch (const std::exception&) {
      detail::parse_error(line, "bad topic index");
    }
  }
  return topics;
}

// Path helpers.

template <typename Writer>
void write_file(const std::filesystem::path& path, Writer&& writer) {
  auto out = detail::open_out(path);
  writer(out);
  out.flush();
  if (!out) throw IoError("write to '" + path.string() + "' failed");
}

template <typename Reader>
auto read_file(const std::filesystem::path& path, Reader&& reader) {
  auto in = detail::open_in(path);
  try {
    return reader(in);
  } catch (const ValidationError& e) {
    throw ValidationError(path.string() + ": " + e.what());
  }
}

inline constexpr const char* kCollectionFile = "collection.jsonl";
inline constexpr const char* kDocTopicsFile = "doc_topics.tsv";

inline std::string split_file(const std::string& split) { return split + ".jsonl"; }
inline std::string qrels_file(const std::string& split) { return "qrels." + split + ".txt"; }

/// Writes a generated dataset into `dir` (which must exist).
inline void write_dataset(const std::filesystem::path& dir, const Dataset& ds) {
  write_file(dir / kCollectionFile, [&](std::ostream& o) { write_collection(o, ds.collection); });
  const std::pair<const char*, const std::vector<SessionRecord>*> splits[] = {
      {"train", &ds.train}, {"dev", &ds.dev}, {"test", &ds.test}};
  for (const auto& [name, recs] : splits) {
    write_file(dir / split_file(name), [&](std::ostream& o) { write_sessions(o, *recs, ds.dim, ds.feature_dim); });
    write_file(dir / qrels_file(name), [&](std::ostream& o) { write_qrels(o, qrels_for(*recs, ds.qrels)); });
  }
  write_file(dir / kDocTopicsFile, [&](std::ostream& o) { write_doc_topics(o, ds.doc_topics); });
}

/// Loads what write_dataset produced. Missing split files are an IoError.
inline Dataset read_dataset(const std::filesystem::path& dir) {
  Dataset ds;
  ds.collection = read_file(dir / kCollectionFile, [](std::istream& i) { return read_collection(i); });
  ds.dim = ds.collection.dim();
  const std::pair<const char*, std::vector<SessionRecord>*> splits[] = {
      {"train", &ds.train}, {"dev", &ds.dev}, {"test", &ds.test}};
  for (const auto& [name, recs] : splits) {
    auto file = read_file(dir / split_file(name), [](std::istream& i) { return read_sessions(i); });
    if (file.dim != ds.dim) {
      throw ValidationError(split_file(name) + ": dim " + std::to_string(file.dim) + " differs from collection dim " +
                            std::to_string(ds.dim));
    }
    ds.feature_dim = file.feature_dim;
    *recs = std::move(file.records);
    auto q = read_file(dir / qrels_file(name), [](std::istream& i) { return read_qrels(i); });
    ds.qrels.insert(q.begin(), q.end());
  }
  if (std::filesystem::exists(dir / kDocTopicsFile)) {
    ds.doc_topics = read_file(dir / kDocTopicsFile, [](std::istream& i) { return read_doc_topics(i); });
  }
  return ds;
}

}  // namespace qracdr::data
