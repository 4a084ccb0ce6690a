// SPDX-License-Identifier: Apache-2.0
#include "mtnet/train.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <random>

#include "mtnet/errors.hpp"
#include "mtnet/ops.hpp"

namespace mtn {

namespace {

using Snapshot = std::vector<std::vector<double>>;

Snapshot snapshot(const ParamStore& store) {
  Snapshot s;
  for (const auto* map : {&store.params(), &store.buffers()})
    for (const auto& [path, t] : *map) s.emplace_back(t.values().begin(), t.values().end());
  return s;
}

void restore(ParamStore& store, const Snapshot& s) {
  std::size_t k = 0;
  for (const auto* map : {&store.params(), &store.buffers()})
    for (const auto& [path, t] : *map) {
      Tensor handle = t;
      std::copy(s[k].begin(), s[k].end(), handle.mutable_values().begin());
      ++k;
    }
}

bool all_finite(const ParamStore& store) {
  for (const auto& [path, t] : store.params())
    for (double v : t.values())
      if (!std::isfinite(v)) return false;
  return true;
}

}  // namespace

double accuracy(Network& network, const Dataset& data, std::size_t clip_length, std::size_t stride) {
  if (data.size() == 0) return 0.0;
  NoGradGuard guard;
  std::size_t correct = 0;
  for (std::size_t i = 0; i < data.size(); ++i) {
    const Tensor logits = network.forward(center_clip(data.videos[i], clip_length, stride));
    const auto v = logits.values();
    const auto best = static_cast<int>(std::max_element(v.begin(), v.end()) - v.begin());
    correct += best == data.labels[i];
  }
  return static_cast<double>(correct) / static_cast<double>(data.size());
}

std::size_t total_iterations(const TrainConfig& config, std::size_t train_size) {
  if (config.n_max != 0) return config.n_max;
  return config.epochs * ((train_size + config.batch_size - 1) / config.batch_size);
}

TrainResult train_loop(Network& network, const Dataset& train, const Dataset& val, const TrainConfig& config,
                       const std::function<void(const HistoryRow&)>& on_epoch) {
  config.validate();
  if (train.size() == 0) throw ConfigError("training set is empty");
  if (train.labels.size() != train.size()) throw DimensionError("training labels and videos differ in count");
  TrainConfig cfg = config;
  cfg.n_max = total_iterations(config, train.size());
  if (cfg.warmup_iters >= cfg.n_max) throw ConfigError("warmup_iters must be smaller than n_max");

  std::mt19937_64 rng(cfg.seed);
  Sgd sgd(cfg);
  ParamStore& store = network.params();
  TrainResult result;
  std::vector<std::size_t> order(train.size());
  std::iota(order.begin(), order.end(), 0);
  Snapshot before;
  const auto fail = [&](std::size_t epoch, const NumericError& e) {
    restore(store, before);
    result.diverged = true;
    result.failure = "epoch " + std::to_string(epoch) + ", iteration " + std::to_string(result.iterations) + ": " +
                     e.what();
  };

  for (std::size_t epoch = 1; epoch <= cfg.epochs && result.iterations < cfg.n_max; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double loss_sum = 0.0;
    std::size_t seen = 0;
    for (std::size_t b = 0; b < order.size() && result.iterations < cfg.n_max; b += cfg.batch_size) {
      const std::size_t end = std::min(order.size(), b + cfg.batch_size);
      std::vector<Tensor> clips;
      std::vector<int> labels;
      for (std::size_t k = b; k < end; ++k) {
        clips.push_back(sample_clip(train.videos[order[k]], cfg.clip_length, cfg.temporal_stride, rng));
        labels.push_back(train.labels[order[k]]);
      }
      before = snapshot(store);
      const double rate = cosine_lr(result.iterations, cfg);
      try {
        store.zero_grad();
        ForwardContext ctx{true, nullptr, &rng};
        const Tensor loss = cross_entropy(network.forward(stack_clips(clips), ctx), labels);
        const double value = loss.item();
        if (!std::isfinite(value)) throw NumericError("non-finite training loss");
        loss.backward();
        sgd.step(store, rate);
        if (!all_finite(store)) throw NumericError("non-finite parameter after an SGD step");
        loss_sum += value * static_cast<double>(clips.size());
        seen += clips.size();
      } catch (const NumericError& e) {
        fail(epoch, e);
        return result;
      }
      ++result.iterations;
    }
    HistoryRow row;
    row.epoch = epoch;
    row.loss = seen ? loss_sum / static_cast<double>(seen) : 0.0;
    try {
      row.train_acc = accuracy(network, train, cfg.clip_length, cfg.temporal_stride);
      row.val_acc = accuracy(network, val, cfg.clip_length, cfg.temporal_stride);
    } catch (const NumericError& e) {
      // finite weights whose outputs overflow: roll back the last step
      fail(epoch, e);
      return result;
    }
    result.history.push_back(row);
    if (on_epoch) on_epoch(row);
    const bool enabled = cfg.stop_train_acc > 0.0 || cfg.stop_val_acc > 0.0;
    const bool train_done = cfg.stop_train_acc <= 0.0 || row.train_acc >= cfg.stop_train_acc;
    const bool val_done = cfg.stop_val_acc <= 0.0 || row.val_acc >= cfg.stop_val_acc;
    if (enabled && train_done && val_done) break;
  }
  store.zero_grad();
  return result;
}

std::string history_csv(const std::vector<HistoryRow>& history) {
  std::string out = "epoch,loss,train_acc,val_acc\n";
  char buf[128];
  for (const auto& r : history) {
    std::snprintf(buf, sizeof buf, "%zu,%.17g,%.17g,%.17g\n", r.epoch, r.loss, r.train_acc, r.val_acc);
    out += buf;
  }
  return out;
}

}  // namespace mtn
