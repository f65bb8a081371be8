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

// Versioned JSON checkpoints. Doubles use shortest round-trip formatting, so a
// loaded checkpoint reproduces encoder outputs bit for bit.

#include <filesystem>
#include <string>

#include "json.hpp"
#include "qracdr/data_io.hpp"
#include "qracdr/trainer.hpp"

namespace qracdr::trainer {

inline constexpr const char* kCheckpointFormat = "qracdr-checkpoint";
inline constexpr int kCheckpointVersion = 1;

inline nlohmann::json config_to_json(const TrainConfig& cfg) {
  nlohmann::json j;
  j["strategy"] = std::string(losses::to_string(cfg.strategy));
  j["batch_size"] = cfg.batch_size;
  j["epochs"] = cfg.epochs;
  j["learning_rate"] = cfg.learning_rate;
  j["optimizer"] = to_string(cfg.optimizer);
  j["adam_beta1"] = cfg.adam_beta1;
  j["adam_beta2"] = cfg.adam_beta2;
  j["adam_eps"] = cfg.adam_eps;
  j["encoder"] = to_string(cfg.encoder);
  j["init"] = to_string(cfg.init);
  j["seed"] = cfg.seed;
  j["in_batch_negatives"] = cfg.in_batch_negatives;
  j["cl_hard_negatives"] = cfg.cl_hard_negatives;
  j["hard_negative_weight"] = cfg.hard_negative_weight;
  j["hard_negative_floor"] = cfg.hard_negative_floor ? nlohmann::json(*cfg.hard_negative_floor) : nlohmann::json();
  return j;
}

inline nlohmann::json checkpoint_to_json(const EncoderParams& p, const TrainConfig& cfg) {
  nlohmann::json j;
  j["format"] = kCheckpointFormat;
  j["version"] = kCheckpointVersion;
  j["mode"] = to_string(p.mode());
  j["dim"] = p.dim();
  j["feature_dim"] = p.feature_dim();
  if (p.mode() == EncoderMode::linear) {
    const auto w = p.weight();
    const auto b = p.bias();
    j["weight"] = std::vector<double>(w.begin(), w.end());
    j["bias"] = std::vector<double>(b.begin(), b.end());
  } else {
    j["table_ids"] = p.table_ids();
    j["table"] = p.theta();
  }
  j["config"] = config_to_json(cfg);
  j["seed"] = cfg.seed;
  return j;
}

inline EncoderParams checkpoint_from_json(const nlohmann::json& j) {
  try {
    if (j.at("format").get<std::string>() != kCheckpointFormat) throw ValidationError("checkpoint: wrong format tag");
    if (j.at("version").get<int>() != kCheckpointVersion) throw ValidationError("checkpoint: unsupported version");
    const auto mode = encoder_mode_from_string(j.at("mode").get<std::string>());
    const auto dim = j.at("dim").get<std::size_t>();
    const auto f_dim = j.at("feature_dim").get<std::size_t>();
    if (mode == EncoderMode::linear) {
      auto theta = j.at("weight").get<std::vector<double>>();
      const auto bias = j.at("bias").get<std::vector<double>>();
      if (theta.size() != dim * f_dim || bias.size() != dim) {
        throw ValidationError("checkpoint: weight/bias sizes do not match dims");
      }
      theta.insert(theta.end(), bias.begin(), bias.end());
      return EncoderParams::from_parts(mode, dim, f_dim, {}, std::move(theta));
    }
    return EncoderParams::from_parts(mode, dim, f_dim, j.at("table_ids").get<std::vector<std::string>>(),
                                     j.at("table").get<std::vector<double>>());
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("checkpoint: ") + e.what());
  }
}

inline void save_checkpoint(const std::filesystem::path& path, const EncoderParams& p, const TrainConfig& cfg) {
  data::write_file(path, [&](std::ostream& o) { o << checkpoint_to_json(p, cfg).dump() << "\n"; });
}

inline EncoderParams load_checkpoint(const std::filesystem::path& path) {
  return data::read_file(path, [](std::istream& in) {
    nlohmann::json j;
    try {
      in >> j;
    } catch (const nlohmann::json::exception& e) {
      throw ValidationError(std::string("checkpoint: malformed JSON (") + e.what() + ")");
    }
    return checkpoint_from_json(j);
  });
}

}  // namespace qracdr::trainer
