// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <functional>
#include <string>
#include <vector>

#include "mtnet/data.hpp"
#include "mtnet/network.hpp"
#include "mtnet/optim.hpp"

namespace mtn {

struct HistoryRow {
  std::size_t epoch = 0;
  double loss = 0.0;  // mean training loss over the epoch's samples
  double train_acc = 0.0;
  double val_acc = 0.0;
};

struct TrainResult {
  std::vector<HistoryRow> history;
  std::size_t iterations = 0;
  bool diverged = false;  // parameters hold the last finite state
  std::string failure;
};

/// Fraction of videos whose centre clip is classified correctly (eval mode).
double accuracy(Network& network, const Dataset& data, std::size_t clip_length, std::size_t stride);

/// Mini-batch SGD on cross-entropy with the cosine schedule. Batches are
/// drawn from a seeded shuffle and each video contributes a randomly placed
/// clip. Accuracies are measured after every epoch.
TrainResult train_loop(Network& network, const Dataset& train, const Dataset& val, const TrainConfig& config,
                       const std::function<void(const HistoryRow&)>& on_epoch = {});

/// n_max implied by a config: the explicit value, else epochs x batches per epoch.
std::size_t total_iterations(const TrainConfig& config, std::size_t train_size);

/// "epoch,loss,train_acc,val_acc" rows; floats printed with 17 significant digits.
std::string history_csv(const std::vector<HistoryRow>& history);

}  // namespace mtn
