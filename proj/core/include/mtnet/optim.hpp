// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "mtnet/param_store.hpp"

namespace mtn {

struct TrainConfig {
  double lr0 = 0.05;
  std::size_t n_max = 0;  // total iterations; 0 derives epochs x batches per epoch
  std::size_t warmup_iters = 0;
  double momentum = 0.9;
  double weight_decay = 5e-5;
  std::size_t batch_size = 8;
  std::size_t epochs = 30;
  std::uint64_t seed = 0;
  std::size_t clip_length = 8;
  std::size_t temporal_stride = 1;
  /// Stop after the first epoch that reaches every nonzero accuracy target.
  double stop_train_acc = 0.0;
  double stop_val_acc = 0.0;

  void validate() const;
};

/// Linear warm-up lr0 * n / warmup, then lr0 * 0.5 * (cos(pi n / n_max) + 1)
/// rescaled so the cosine starts at lr0 at the end of warm-up. Without warm-up
/// this is the plain cosine decay.
double cosine_lr(std::size_t n, const TrainConfig& config);

/// v <- momentum * v + g + weight_decay * p; p <- p - rate * v.
void sgd_update(std::span<double> param, std::span<const double> grad, std::span<double> velocity, double rate,
                double momentum, double weight_decay);

/// SGD with momentum and coupled weight decay over a ParamStore.
class Sgd {
 public:
  Sgd(double momentum, double weight_decay) : momentum_(momentum), weight_decay_(weight_decay) {}
  explicit Sgd(const TrainConfig& config) : Sgd(config.momentum, config.weight_decay) {}

  /// Applies one step to every parameter; a parameter without a gradient is
  /// treated as having a zero gradient.
  void step(ParamStore& store, double rate);
  const std::map<std::string, std::vector<double>>& velocity() const { return velocity_; }

 private:
  double momentum_;
  double weight_decay_;
  std::map<std::string, std::vector<double>> velocity_;
};

}  // namespace mtn
