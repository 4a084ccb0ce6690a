// SPDX-License-Identifier: Apache-2.0
#include "mtnet/optim.hpp"

#include <cmath>
#include <numbers>

#include "mtnet/errors.hpp"

namespace mtn {

void TrainConfig::validate() const {
  if (!(lr0 >= 0.0) || !std::isfinite(lr0)) throw ConfigError("lr0 must be a finite number >= 0");
  if (n_max != 0 && warmup_iters >= n_max) throw ConfigError("warmup_iters must be smaller than n_max");
  if (!(momentum >= 0.0 && momentum < 1.0)) throw ConfigError("momentum must lie in [0, 1)");
  if (!(weight_decay >= 0.0)) throw ConfigError("weight_decay must be >= 0");
  if (batch_size == 0) throw ConfigError("batch_size must be >= 1");
  if (epochs == 0) throw ConfigError("epochs must be >= 1");
  if (clip_length == 0) throw ConfigError("clip_length must be >= 1");
  if (temporal_stride == 0) throw ConfigError("temporal_stride must be >= 1");
}

double cosine_lr(std::size_t n, const TrainConfig& config) {
  if (config.n_max == 0) throw ConfigError("cosine_lr needs n_max >= 1");
  if (n > config.n_max) throw ConfigError("cosine_lr: iteration " + std::to_string(n) + " exceeds n_max");
  const double w = static_cast<double>(config.warmup_iters);
  const double x = static_cast<double>(n);
  if (n < config.warmup_iters) return config.lr0 * x / w;
  const double span = static_cast<double>(config.n_max);
  const double cosine = std::cos(std::numbers::pi * x / span) + 1.0;
  if (config.warmup_iters == 0) return config.lr0 * 0.5 * cosine;
  return config.lr0 * cosine / (std::cos(std::numbers::pi * w / span) + 1.0);
}

void sgd_update(std::span<double> param, std::span<const double> grad, std::span<double> velocity, double rate,
                double momentum, double weight_decay) {
  if (param.size() != velocity.size() || (!grad.empty() && grad.size() != param.size())) {
    throw DimensionError("sgd_update: parameter, gradient and velocity sizes differ");
  }
  for (std::size_t i = 0; i < param.size(); ++i) {
    const double g = grad.empty() ? 0.0 : grad[i];
    velocity[i] = momentum * velocity[i] + g + weight_decay * param[i];
    param[i] -= rate * velocity[i];
  }
}

void Sgd::step(ParamStore& store, double rate) {
  for (const auto& [path, tensor] : store.params()) {
    Tensor t = tensor;
    auto& v = velocity_[path];
    if (v.size() != t.numel()) v.assign(t.numel(), 0.0);
    const std::vector<double> g = t.has_grad() ? t.grad() : std::vector<double>{};
    sgd_update(t.mutable_values(), g, v, rate, momentum_, weight_decay_);
  }
}

}  // namespace mtn
