// SPDX-License-Identifier: Apache-2.0
#include "mtnet/layers.hpp"

#include <cmath>

#include "mtnet/param_store.hpp"

namespace mtn {

std::vector<FrameSelection> SelectionLog::next(const Tensor& volume) {
  if (cursor_ < entries_.size()) {
    auto& sel = entries_[cursor_++];
    const VolumeDims d = volume_dims(volume, "SelectionLog");
    if (sel.size() != d.n || (!sel.empty() && sel.front().scores.size() != d.t)) {
      throw DimensionError("replayed frame selection does not match the volume shape");
    }
    return sel;
  }
  entries_.push_back(select_frames(volume));
  cursor_ = entries_.size();
  return entries_.back();
}

Tensor BatchNormLayer::forward(const Tensor& x, bool training) {
  return batch_norm3d(x, gamma, beta, stats, training);
}

Tensor ConvBn::forward(const Tensor& x, bool training) {
  return bn.forward(conv3d(x, weight, std::nullopt, stride, padding), training);
}

ConvBn make_conv_bn(std::size_t in, std::size_t out, Triple kernel, Triple stride, std::mt19937_64& rng,
                    ParamStore& store, const std::string& prefix) {
  const double fan_in = static_cast<double>(in * kernel.volume());
  std::normal_distribution<double> dist(0.0, std::sqrt(2.0 / fan_in));
  std::vector<double> w(out * in * kernel.volume());
  for (auto& v : w) v = dist(rng);
  ConvBn layer;
  layer.weight = store.add(prefix + ".weight", Tensor({out, in, kernel.t, kernel.h, kernel.w}, std::move(w)));
  layer.bn.gamma = store.add(prefix + ".bn.gamma", Tensor::full({out}, 1.0));
  layer.bn.beta = store.add(prefix + ".bn.beta", Tensor::zeros({out}));
  layer.bn.stats = BatchNormStats::init(out);
  store.add_buffer(prefix + ".bn.running_mean", layer.bn.stats.mean);
  store.add_buffer(prefix + ".bn.running_var", layer.bn.stats.var);
  layer.stride = stride;
  layer.padding = same_padding(kernel);
  return layer;
}

}  // namespace mtn
