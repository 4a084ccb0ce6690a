// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <random>
#include <string>
#include <string_view>

#include "mtnet/layers.hpp"
#include "mtnet/ops.hpp"

namespace mtn {

class ParamStore;

/// How the prolonged branch halves its inputs. The `_cos` modes pool
/// spatially and keep T/2 frames by triplet cosine selection; the others pool
/// all three axes with a 2x2x2 window.
enum class PoolingMode { softpool_cos, avg_cos, softpool, avg, max, stochastic };

std::string_view to_string(PoolingMode mode);
PoolingMode parse_pooling_mode(std::string_view name);

struct ChannelSplit {
  std::size_t local = 0;
  std::size_t prolonged = 0;
};

/// local = floor(delta * out), prolonged = ceil((1 - delta) * out), with the
/// prolonged count pinned to out - local should rounding break the sum.
/// delta must lie in (0, 1].
ChannelSplit split_channels(std::size_t out_channels, double delta);

struct MTConvConfig {
  std::size_t in_channels = 0;
  std::size_t out_channels = 0;
  double delta = 0.875;
  Triple k_local{3, 3, 3};
  Triple k_prolonged{3, 3, 3};
  Triple stride{1, 1, 1};
  PoolingMode pooling = PoolingMode::softpool_cos;

  ChannelSplit split() const { return split_channels(out_channels, delta); }
  /// Hyperparameter checks (delta range, channel counts, odd kernels).
  void validate() const;
  /// Output extent for an input extent; also checks the prolonged branch's
  /// halving constraints (even T, H, W on both pathways).
  Triple output_extent(Triple input) const;
};

struct MTConvParams {
  ConvBn local;               // C -> C_L
  ConvBn local_to_prolonged;  // C_L -> C_P on the reduced local output
  ConvBn prolonged;           // C -> C_P on the reduced layer input
};

MTConvParams make_mtconv_params(const MTConvConfig& config, std::mt19937_64& rng, ParamStore& store,
                                const std::string& prefix);

/// Halves T, H and W according to `mode`.
Tensor prolonged_downsample(const Tensor& x, PoolingMode mode, ForwardContext& ctx);

/// Conv3D -> BN -> ReLU over the full layer input.
Tensor local_branch(const Tensor& a, MTConvParams& params, const MTConvConfig& config, ForwardContext& ctx);

/// Both inputs are halved, convolved and batch-normalized on their own
/// pathway, ReLU'd, summed and resampled back to the local output's extent.
Tensor prolonged_branch(const Tensor& a_local, const Tensor& a_in, MTConvParams& params, const MTConvConfig& config,
                        ForwardContext& ctx);

/// local(a) concatenated with prolonged(local(a), a) along channels. With no
/// prolonged channels (delta = 1) this is exactly the local branch.
Tensor mtconv_forward(const Tensor& a, MTConvParams& params, const MTConvConfig& config, ForwardContext& ctx);

}  // namespace mtn
