// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>

#include <nlohmann/json.hpp>

#include "mtnet/data.hpp"
#include "mtnet/mtconv.hpp"
#include "mtnet/network.hpp"
#include "mtnet/optim.hpp"

namespace mtn {

/// Everything `mtnet train` needs: {"network": ..., "train": ..., "data": ...}.
struct ExperimentConfig {
  NetworkConfig network;
  TrainConfig train;
  SyntheticSpec data = SyntheticSpec::default_task();
};

// Conversions reject unknown keys and ill-typed values with ConfigError.
// Missing keys keep their defaults. Triples accept [t, h, w] or one number.

MTConvConfig mtconv_config_from_json(const nlohmann::json& j);
nlohmann::json to_json(const MTConvConfig& c);

NetworkConfig network_config_from_json(const nlohmann::json& j);
nlohmann::json to_json(const NetworkConfig& c);

TrainConfig train_config_from_json(const nlohmann::json& j);
nlohmann::json to_json(const TrainConfig& c);

SyntheticSpec synthetic_spec_from_json(const nlohmann::json& j);
nlohmann::json to_json(const SyntheticSpec& s);

ExperimentConfig experiment_config_from_json(const nlohmann::json& j);
nlohmann::json to_json(const ExperimentConfig& c);

/// Parses a JSON file; IoError when unreadable, ConfigError when malformed.
nlohmann::json load_json_file(const std::string& path);

}  // namespace mtn
