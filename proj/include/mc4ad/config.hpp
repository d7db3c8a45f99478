#pragma once

// One JSON document configuring every stage. Every field has a default and
// unknown keys are rejected.

#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include "json.hpp"

#include "mc4ad/dataset.hpp"
#include "mc4ad/losses.hpp"
#include "mc4ad/network.hpp"
#include "mc4ad/scoring.hpp"
#include "mc4ad/training.hpp"

namespace mc4ad {

struct PathsConfig {
  std::string data;
  std::string checkpoint;
  std::string out;
};

inline void to_json(nlohmann::json& j, const PathsConfig& p) {
  j = nlohmann::json{{"data", p.data}, {"checkpoint", p.checkpoint}, {"out", p.out}};
}

inline void from_json(const nlohmann::json& j, PathsConfig& p) {
  for (const auto& [key, value] : j.items()) {
    if (key == "data") p.data = value.get<std::string>();
    else if (key == "checkpoint") p.checkpoint = value.get<std::string>();
    else if (key == "out") p.out = value.get<std::string>();
    else throw ConfigError("unknown key paths." + key);
  }
}

struct RunConfig {
  DaGenParams dagen;
  NetworkConfig network;
  TrainConfig train;
  LossConfig loss;
  HqcConfig hqc;
  SynthConfig synth;
  PathsConfig paths;

  void validate() const {
    dagen.validate();
    network.validate();
    train.validate(network.variant);
    loss.validate();
    hqc.validate();
    synth.validate();
  }
};

inline void to_json(nlohmann::json& j, const RunConfig& c) {
  j = nlohmann::json{{"dagen", c.dagen}, {"network", c.network}, {"train", c.train}, {"loss", c.loss},
                     {"hqc", c.hqc},     {"synth", c.synth},     {"paths", c.paths}};
}

/// Parses a run configuration on top of the defaults.
inline RunConfig parse_run_config(const nlohmann::json& j) {
  if (!j.is_object()) throw ConfigError("config root must be a JSON object");
  RunConfig c;
  try {
    for (const auto& [key, value] : j.items()) {
      if (key == "dagen") from_json(value, c.dagen);
      else if (key == "network") from_json(value, c.network);
      else if (key == "train") from_json(value, c.train);
      else if (key == "loss") from_json(value, c.loss);
      else if (key == "hqc") from_json(value, c.hqc);
      else if (key == "synth") from_json(value, c.synth);
      else if (key == "paths") from_json(value, c.paths);
      else throw ConfigError("unknown key " + key);
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("config type error: ") + e.what());
  }
  return c;
}

inline RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot open config " + path.string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(is);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("config " + path.string() + " is not valid JSON: " + e.what());
  }
  return parse_run_config(j);
}

}  // namespace mc4ad
