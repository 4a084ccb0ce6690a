// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <vector>

#include "mtnet/layers.hpp"
#include "mtnet/mtconv.hpp"
#include "mtnet/param_store.hpp"
#include "mtnet/recurrent.hpp"

namespace mtn {

/// Squashing applied to the recurrent outputs before they gate the trunk.
enum class GateSquash { sigmoid, none };
/// Which activation the gating recurrence summarizes: the output of the three
/// MTConvs (default) or the block input.
enum class GateSource { trunk, input };

std::string_view to_string(GateSquash squash);
std::string_view to_string(GateSource source);
GateSquash parse_gate_squash(std::string_view name);
GateSource parse_gate_source(std::string_view name);

struct BlockConfig {
  std::size_t in_channels = 0;
  std::size_t out_channels = 0;
  double delta = 0.875;
  CellKind cell = CellKind::gru;
  Triple stride{1, 1, 1};  // applied by the first MTConv
  bool projection = false;

  /// A 1x1x1 conv+BN skip is used when requested or when the shapes differ.
  bool uses_projection() const { return projection || in_channels != out_channels || !(stride == Triple{1, 1, 1}); }
};

struct StemConfig {
  std::size_t out_channels = 8;
  Triple kernel{3, 3, 3};
  Triple stride{1, 1, 1};
};

struct NetworkConfig {
  std::size_t in_channels = 3;
  Triple clip{16, 32, 32};
  StemConfig stem;
  std::vector<BlockConfig> stages;
  std::size_t classes = 4;
  PoolingMode pooling = PoolingMode::softpool_cos;
  Triple k_local{3, 3, 3};
  Triple k_prolonged{3, 3, 3};
  GateSquash squash = GateSquash::sigmoid;
  GateSource gate_source = GateSource::trunk;

  /// Checks the stage chain and every extent; errors name the first
  /// offending stage.
  void validate() const;
  /// The three MTConv configs of stage `i`.
  std::array<MTConvConfig, 3> conv_configs(std::size_t i) const;
  /// Activation extent after the stem and after each stage.
  std::vector<Triple> extents() const;
};

/// Pool over H, W, run the two stacked cells over T, squash, and multiply the
/// C x T map into `target` broadcast over H and W. `source` feeds the
/// recurrence; it must match `target` in channels and frames.
Tensor global_importance(const Tensor& source, const Tensor& target, const CellParams& first,
                         const CellParams& second, GateSquash squash = GateSquash::sigmoid);
inline Tensor global_importance(const Tensor& a, const CellParams& first, const CellParams& second,
                                GateSquash squash = GateSquash::sigmoid) {
  return global_importance(a, a, first, second, squash);
}

struct MTBlockParams {
  std::array<MTConvConfig, 3> configs;
  std::array<MTConvParams, 3> convs;
  CellParams gate_first;
  CellParams gate_second;
  ConvBn projection;  // undefined for an identity skip
};

MTBlockParams make_block_params(const NetworkConfig& net, std::size_t stage, std::mt19937_64& rng,
                                ParamStore& store, const std::string& prefix);

/// ReLU(importance(MTConv^3(a)) + skip(a)).
Tensor mtblock_forward(const Tensor& a, MTBlockParams& params, const NetworkConfig& net, ForwardContext& ctx);

/// Stem conv+BN+ReLU, MTBlocks, global average pool and a linear head.
class Network {
 public:
  Network(NetworkConfig config, std::uint64_t seed);
  Network(const Network&) = delete;
  Network& operator=(const Network&) = delete;
  Network(Network&&) = default;
  Network& operator=(Network&&) = default;

  /// Logits [classes] for a C x T x H x W clip, or [N x classes] for a batch.
  Tensor forward(const Tensor& clip, ForwardContext& ctx);
  Tensor forward(const Tensor& clip);  // eval mode, fresh frame selections

  ParamStore& params() { return store_; }
  const ParamStore& params() const { return store_; }
  const NetworkConfig& config() const { return config_; }
  std::vector<MTBlockParams>& blocks() { return blocks_; }
  Tensor& head_weight() { return head_weight_; }
  Tensor& head_bias() { return head_bias_; }

 private:
  NetworkConfig config_;
  ParamStore store_;
  ConvBn stem_;
  std::vector<MTBlockParams> blocks_;
  Tensor head_weight_;
  Tensor head_bias_;
};

/// Deterministic in `seed`.
Network build_network(const NetworkConfig& config, std::uint64_t seed);

/// Eval-mode logits for one clip; checks the clip shape against the config.
Tensor forward_logits(Network& network, const Tensor& clip);

struct MultiviewResult {
  std::size_t predicted = 0;
  std::vector<double> probabilities;
  std::size_t views = 0;
  bool fallback = false;  // video smaller than one clip: one centre view, edges repeated
};

/// Clip window starting at (t0, h0, w0); indices past the end repeat the last
/// frame, row or column.
Tensor crop_clip(const Tensor& video, Triple origin, Triple extent);

/// Origins of n evenly spaced windows of `extent` along an axis of length `full`.
std::vector<std::size_t> view_offsets(std::size_t full, std::size_t extent, std::size_t count);

/// Mean of per-view probability vectors. Each class's terms are summed in
/// sorted order, so the result does not depend on view order.
std::vector<double> average_probabilities(const std::vector<std::vector<double>>& views);

/// Averages softmax probabilities over n_clips evenly spaced temporal clips
/// times n_crops crops along W (left, centre, right for three), centred on H.
MultiviewResult multiview_infer(Network& network, const Tensor& video, std::size_t n_clips = 10,
                                std::size_t n_crops = 3);

}  // namespace mtn
