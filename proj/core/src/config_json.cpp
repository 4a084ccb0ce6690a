// SPDX-License-Identifier: Apache-2.0
#include "mtnet/config_json.hpp"

#include <initializer_list>
#include <string_view>
#include <type_traits>

#include "mtnet/checkpoint.hpp"
#include "mtnet/errors.hpp"

namespace mtn {

using nlohmann::json;

namespace {

void check_object(const json& j, std::initializer_list<std::string_view> keys, const char* what) {
  if (!j.is_object()) throw ConfigError(std::string(what) + " must be a JSON object");
  for (const auto& [key, value] : j.items()) {
    bool known = false;
    for (auto k : keys) known = known || k == key;
    if (!known) throw ConfigError(std::string(what) + ": unknown key '" + key + "'");
  }
}

template <class T, class F>
void read(const json& j, const char* key, T& out, F&& convert) {
  if (!j.contains(key)) return;
  try {
    out = convert(j.at(key));
  } catch (const json::exception& e) {
    throw ConfigError(std::string("key '") + key + "': " + e.what());
  } catch (const ConfigError& e) {
    throw ConfigError(std::string("key '") + key + "': " + e.what());
  }
}

template <class T>
void read(const json& j, const char* key, T& out) {
  read(j, key, out, [](const json& v) {
    if constexpr (std::is_unsigned_v<T> && !std::is_same_v<T, bool>) {
      if (!v.is_number_unsigned()) throw ConfigError("expected a non-negative integer");
    }
    return v.get<T>();
  });
}

Triple triple_from(const json& v) {
  if (v.is_number_unsigned()) {
    const auto n = v.get<std::size_t>();
    return {n, n, n};
  }
  if (!v.is_array() || v.size() != 3) throw ConfigError("expected [t, h, w] or a single integer");
  for (const auto& e : v)
    if (!e.is_number_unsigned()) throw ConfigError("triple entries must be non-negative integers");
  return {v[0].get<std::size_t>(), v[1].get<std::size_t>(), v[2].get<std::size_t>()};
}

json triple_json(Triple t) { return json::array({t.t, t.h, t.w}); }

template <class F>
auto named(F&& parse) {
  return [parse](const json& v) { return parse(v.get<std::string>()); };
}

BlockConfig block_from(const json& j) {
  check_object(j, {"in", "out", "delta", "cell", "stride", "projection"}, "stage");
  BlockConfig b;
  read(j, "in", b.in_channels);
  read(j, "out", b.out_channels);
  read(j, "delta", b.delta);
  read(j, "cell", b.cell, named(parse_cell_kind));
  read(j, "stride", b.stride, triple_from);
  read(j, "projection", b.projection);
  return b;
}

}  // namespace

MTConvConfig mtconv_config_from_json(const json& j) {
  check_object(j, {"in", "out", "delta", "k_local", "k_prolonged", "stride", "pooling"}, "MTConv config");
  MTConvConfig c;
  read(j, "in", c.in_channels);
  read(j, "out", c.out_channels);
  read(j, "delta", c.delta);
  read(j, "k_local", c.k_local, triple_from);
  read(j, "k_prolonged", c.k_prolonged, triple_from);
  read(j, "stride", c.stride, triple_from);
  read(j, "pooling", c.pooling, named(parse_pooling_mode));
  c.validate();
  return c;
}

json to_json(const MTConvConfig& c) {
  return {{"in", c.in_channels},        {"out", c.out_channels},
          {"delta", c.delta},           {"k_local", triple_json(c.k_local)},
          {"k_prolonged", triple_json(c.k_prolonged)}, {"stride", triple_json(c.stride)},
          {"pooling", std::string(to_string(c.pooling))}};
}

NetworkConfig network_config_from_json(const json& j) {
  check_object(j,
               {"in_channels", "clip", "stem", "stages", "classes", "pooling", "k_local", "k_prolonged", "gate_squash",
                "gate_source"},
               "network config");
  NetworkConfig c;
  read(j, "in_channels", c.in_channels);
  read(j, "clip", c.clip, triple_from);
  if (j.contains("stem")) {
    const json& s = j.at("stem");
    check_object(s, {"out", "kernel", "stride"}, "stem");
    read(s, "out", c.stem.out_channels);
    read(s, "kernel", c.stem.kernel, triple_from);
    read(s, "stride", c.stem.stride, triple_from);
  }
  if (j.contains("stages")) {
    if (!j.at("stages").is_array()) throw ConfigError("'stages' must be an array");
    for (const auto& s : j.at("stages")) c.stages.push_back(block_from(s));
  }
  read(j, "classes", c.classes);
  read(j, "pooling", c.pooling, named(parse_pooling_mode));
  read(j, "k_local", c.k_local, triple_from);
  read(j, "k_prolonged", c.k_prolonged, triple_from);
  read(j, "gate_squash", c.squash, named(parse_gate_squash));
  read(j, "gate_source", c.gate_source, named(parse_gate_source));
  c.validate();
  return c;
}

json to_json(const NetworkConfig& c) {
  json stages = json::array();
  for (const auto& b : c.stages) {
    stages.push_back({{"in", b.in_channels},
                      {"out", b.out_channels},
                      {"delta", b.delta},
                      {"cell", std::string(to_string(b.cell))},
                      {"stride", triple_json(b.stride)},
                      {"projection", b.projection}});
  }
  return {{"in_channels", c.in_channels},
          {"clip", triple_json(c.clip)},
          {"stem",
           {{"out", c.stem.out_channels}, {"kernel", triple_json(c.stem.kernel)}, {"stride", triple_json(c.stem.stride)}}},
          {"stages", stages},
          {"classes", c.classes},
          {"pooling", std::string(to_string(c.pooling))},
          {"k_local", triple_json(c.k_local)},
          {"k_prolonged", triple_json(c.k_prolonged)},
          {"gate_squash", std::string(to_string(c.squash))},
          {"gate_source", std::string(to_string(c.gate_source))}};
}

TrainConfig train_config_from_json(const json& j) {
  check_object(j,
               {"lr0", "n_max", "warmup_iters", "momentum", "weight_decay", "batch_size", "epochs", "seed",
                "clip_length", "temporal_stride", "stop_train_acc", "stop_val_acc"},
               "train config");
  TrainConfig c;
  read(j, "lr0", c.lr0);
  read(j, "n_max", c.n_max);
  read(j, "warmup_iters", c.warmup_iters);
  read(j, "momentum", c.momentum);
  read(j, "weight_decay", c.weight_decay);
  read(j, "batch_size", c.batch_size);
  read(j, "epochs", c.epochs);
  read(j, "seed", c.seed);
  read(j, "clip_length", c.clip_length);
  read(j, "temporal_stride", c.temporal_stride);
  read(j, "stop_train_acc", c.stop_train_acc);
  read(j, "stop_val_acc", c.stop_val_acc);
  c.validate();
  return c;
}

json to_json(const TrainConfig& c) {
  return {{"lr0", c.lr0},
          {"n_max", c.n_max},
          {"warmup_iters", c.warmup_iters},
          {"momentum", c.momentum},
          {"weight_decay", c.weight_decay},
          {"batch_size", c.batch_size},
          {"epochs", c.epochs},
          {"seed", c.seed},
          {"clip_length", c.clip_length},
          {"temporal_stride", c.temporal_stride},
          {"stop_train_acc", c.stop_train_acc},
          {"stop_val_acc", c.stop_val_acc}};
}

SyntheticSpec synthetic_spec_from_json(const json& j) {
  check_object(j,
               {"classes", "channels", "frames", "height", "width", "square", "train_per_class", "val_per_class",
                "noise", "seed"},
               "synthetic data spec");
  SyntheticSpec s = SyntheticSpec::default_task();
  if (j.contains("classes")) {
    if (!j.at("classes").is_array()) throw ConfigError("'classes' must be an array");
    s.classes.clear();
    for (const auto& c : j.at("classes")) {
      check_object(c, {"direction", "speed", "pattern"}, "class");
      ClassSpec cls;
      read(c, "direction", cls.direction, named(parse_direction));
      read(c, "speed", cls.speed);
      read(c, "pattern", cls.pattern);
      s.classes.push_back(cls);
    }
  }
  read(j, "channels", s.channels);
  read(j, "frames", s.frames);
  read(j, "height", s.height);
  read(j, "width", s.width);
  read(j, "square", s.square);
  read(j, "train_per_class", s.train_per_class);
  read(j, "val_per_class", s.val_per_class);
  read(j, "noise", s.noise);
  read(j, "seed", s.seed);
  s.validate();
  return s;
}

json to_json(const SyntheticSpec& s) {
  json classes = json::array();
  for (const auto& c : s.classes) {
    classes.push_back({{"direction", std::string(to_string(c.direction))}, {"speed", c.speed}, {"pattern", c.pattern}});
  }
  return {{"classes", classes},
          {"channels", s.channels},
          {"frames", s.frames},
          {"height", s.height},
          {"width", s.width},
          {"square", s.square},
          {"train_per_class", s.train_per_class},
          {"val_per_class", s.val_per_class},
          {"noise", s.noise},
          {"seed", s.seed}};
}

ExperimentConfig experiment_config_from_json(const json& j) {
  check_object(j, {"network", "train", "data"}, "experiment config");
  if (!j.contains("network")) throw ConfigError("experiment config needs a 'network' section");
  ExperimentConfig c;
  c.network = network_config_from_json(j.at("network"));
  if (j.contains("train")) c.train = train_config_from_json(j.at("train"));
  if (j.contains("data")) c.data = synthetic_spec_from_json(j.at("data"));
  if (c.data.channels != c.network.in_channels) {
    throw ConfigError("data channels (" + std::to_string(c.data.channels) + ") differ from network in_channels (" +
                      std::to_string(c.network.in_channels) + ")");
  }
  if (c.data.classes.size() != c.network.classes) {
    throw ConfigError("data defines " + std::to_string(c.data.classes.size()) + " classes, network has " +
                      std::to_string(c.network.classes));
  }
  const Triple clip{c.train.clip_length, c.data.height, c.data.width};
  if (!(clip == c.network.clip)) throw ConfigError("network clip extent must equal (clip_length, height, width)");
  return c;
}

json to_json(const ExperimentConfig& c) {
  return {{"network", to_json(c.network)}, {"train", to_json(c.train)}, {"data", to_json(c.data)}};
}

json load_json_file(const std::string& path) {
  const std::string text = read_file(path);
  try {
    return json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError("'" + path + "' is not valid JSON: " + e.what());
  }
}

}  // namespace mtn
