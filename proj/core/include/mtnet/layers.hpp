// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <random>
#include <string>
#include <vector>

#include "mtnet/ops.hpp"
#include "mtnet/pooling.hpp"

namespace mtn {

class ParamStore;

/// Records frame selections on first use and replays them afterwards, so a
/// forward pass can be repeated with the routing decisions frozen.
class SelectionLog {
 public:
  /// Recorded selection at the cursor, or a fresh one (recorded) for `volume`.
  std::vector<FrameSelection> next(const Tensor& volume);
  void rewind() { cursor_ = 0; }
  void clear() {
    entries_.clear();
    cursor_ = 0;
  }
  const std::vector<std::vector<FrameSelection>>& entries() const { return entries_; }

 private:
  std::vector<std::vector<FrameSelection>> entries_;
  std::size_t cursor_ = 0;
};

/// Mode and side inputs of one forward pass.
struct ForwardContext {
  bool training = false;
  SelectionLog* selections = nullptr;  // null: select afresh every time
  std::mt19937_64* rng = nullptr;      // stochastic pooling in training mode
};

struct BatchNormLayer {
  Tensor gamma;
  Tensor beta;
  BatchNormStats stats;

  Tensor forward(const Tensor& x, bool training);
};

/// Bias-free Conv3D followed by batch normalization.
struct ConvBn {
  Tensor weight;
  BatchNormLayer bn;
  Triple stride;
  Triple padding;

  bool defined() const { return weight.defined(); }
  std::size_t out_channels() const { return weight.dim(0); }
  Tensor forward(const Tensor& x, bool training);
};

/// He-normal conv weights, gamma = 1, beta = 0; registered under
/// `prefix`.weight, `prefix`.bn.{gamma,beta} and buffers `prefix`.bn.running_{mean,var}.
ConvBn make_conv_bn(std::size_t in, std::size_t out, Triple kernel, Triple stride, std::mt19937_64& rng,
                    ParamStore& store, const std::string& prefix);

/// "Same" padding for odd kernels.
inline Triple same_padding(Triple kernel) { return {kernel.t / 2, kernel.h / 2, kernel.w / 2}; }

}  // namespace mtn
