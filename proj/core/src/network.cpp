// SPDX-License-Identifier: Apache-2.0
#include "mtnet/network.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "mtnet/errors.hpp"
#include "mtnet/pooling.hpp"

namespace mtn {

std::string_view to_string(GateSquash squash) { return squash == GateSquash::none ? "none" : "sigmoid"; }
std::string_view to_string(GateSource source) { return source == GateSource::input ? "input" : "trunk"; }

GateSquash parse_gate_squash(std::string_view name) {
  if (name == "sigmoid") return GateSquash::sigmoid;
  if (name == "none") return GateSquash::none;
  throw ConfigError("unknown gate squash '" + std::string(name) + "'");
}

GateSource parse_gate_source(std::string_view name) {
  if (name == "trunk") return GateSource::trunk;
  if (name == "input") return GateSource::input;
  throw ConfigError("unknown gate source '" + std::string(name) + "'");
}

namespace {

std::string stage_name(std::size_t i) { return "stage " + std::to_string(i); }

Triple conv_extent(Triple in, Triple k, Triple s) {
  return {window_extent(in.t, k.t, s.t, k.t / 2, "T"), window_extent(in.h, k.h, s.h, k.h / 2, "H"),
          window_extent(in.w, k.w, s.w, k.w / 2, "W")};
}

std::string extent_str(Triple x) {
  return std::to_string(x.t) + "x" + std::to_string(x.h) + "x" + std::to_string(x.w);
}

}  // namespace

std::array<MTConvConfig, 3> NetworkConfig::conv_configs(std::size_t i) const {
  const BlockConfig& b = stages.at(i);
  std::array<MTConvConfig, 3> out;
  for (std::size_t j = 0; j < 3; ++j) {
    MTConvConfig& c = out[j];
    c.in_channels = j == 0 ? b.in_channels : b.out_channels;
    c.out_channels = b.out_channels;
    c.delta = b.delta;
    c.k_local = k_local;
    c.k_prolonged = k_prolonged;
    c.stride = j == 0 ? b.stride : Triple{1, 1, 1};
    c.pooling = pooling;
  }
  return out;
}

void NetworkConfig::validate() const {
  if (in_channels == 0) throw ConfigError("network input channel count must be >= 1");
  if (classes < 2) throw ConfigError("class count must be >= 2, got " + std::to_string(classes));
  if (stem.out_channels == 0) throw ConfigError("stem output channel count must be >= 1");
  if (clip.t == 0 || clip.h == 0 || clip.w == 0) throw ConfigError("clip extent must be nonzero on every axis");
  for (const Triple& k : {stem.kernel, k_local, k_prolonged}) {
    if (k.t % 2 == 0 || k.h % 2 == 0 || k.w % 2 == 0) throw ConfigError("kernel extents must be odd");
  }
  if (stem.stride.t == 0 || stem.stride.h == 0 || stem.stride.w == 0) throw ConfigError("stem stride must be >= 1");
  std::size_t channels = stem.out_channels;
  for (std::size_t i = 0; i < stages.size(); ++i) {
    const BlockConfig& b = stages[i];
    if (b.in_channels != channels) {
      throw ConfigError(stage_name(i) + ": input channels " + std::to_string(b.in_channels) +
                        " do not match the preceding output " + std::to_string(channels));
    }
    if (gate_source == GateSource::input && b.uses_projection()) {
      throw ConfigError(stage_name(i) + ": an input-sourced gate needs equal channels, stride 1 and no projection");
    }
    channels = b.out_channels;
  }
  (void)extents();
}

std::vector<Triple> NetworkConfig::extents() const {
  std::vector<Triple> out;
  Triple x;
  try {
    x = conv_extent(clip, stem.kernel, stem.stride);
  } catch (const DimensionError& e) {
    throw ConfigError(std::string("stem: ") + e.what());
  }
  out.push_back(x);
  for (std::size_t i = 0; i < stages.size(); ++i) {
    for (std::size_t j = 0; j < 3; ++j) {
      const MTConvConfig c = conv_configs(i)[j];
      try {
        x = c.output_extent(x);
      } catch (const std::invalid_argument& e) {
        throw ConfigError(stage_name(i) + " conv " + std::to_string(j) + " on " + extent_str(x) + ": " + e.what());
      }
    }
    out.push_back(x);
  }
  return out;
}

Tensor global_importance(const Tensor& source, const Tensor& target, const CellParams& first,
                         const CellParams& second, GateSquash squash) {
  const VolumeDims ds = volume_dims(source, "global_importance");
  const VolumeDims dt = volume_dims(target, "global_importance");
  if (ds.n != dt.n || ds.c != dt.c || ds.t != dt.t || ds.batched != dt.batched) {
    throw DimensionError("global_importance: gate source " + shape_str(source.shape()) +
                         " does not match target " + shape_str(target.shape()) + " on N, C, T");
  }
  if (second.hidden != ds.c) {
    throw DimensionError("global_importance: recurrent hidden size " + std::to_string(second.hidden) +
                         " must equal the channel count " + std::to_string(ds.c));
  }
  Tensor gate = run_dual_layer(global_avg_pool(source), first, second);
  if (squash == GateSquash::sigmoid) gate = sigmoid(gate);
  return gate_multiply(target, gate);
}

MTBlockParams make_block_params(const NetworkConfig& net, std::size_t stage, std::mt19937_64& rng,
                                ParamStore& store, const std::string& prefix) {
  const BlockConfig& b = net.stages.at(stage);
  MTBlockParams p;
  p.configs = net.conv_configs(stage);
  for (std::size_t j = 0; j < 3; ++j) {
    p.convs[j] = make_mtconv_params(p.configs[j], rng, store, prefix + ".conv" + std::to_string(j));
  }
  const std::size_t c = b.out_channels;
  p.gate_first = make_cell_params(b.cell, c, c, rng, store, prefix + ".sr.layer1");
  p.gate_second = make_cell_params(b.cell, c, c, rng, store, prefix + ".sr.layer2");
  if (b.uses_projection()) {
    p.projection = make_conv_bn(b.in_channels, b.out_channels, {1, 1, 1}, b.stride, rng, store, prefix + ".proj");
  }
  return p;
}

Tensor mtblock_forward(const Tensor& a, MTBlockParams& params, const NetworkConfig& net, ForwardContext& ctx) {
  Tensor trunk = a;
  for (std::size_t j = 0; j < 3; ++j) trunk = mtconv_forward(trunk, params.convs[j], params.configs[j], ctx);
  const Tensor& source = net.gate_source == GateSource::input ? a : trunk;
  const Tensor gated = global_importance(source, trunk, params.gate_first, params.gate_second, net.squash);
  const Tensor skip = params.projection.defined() ? params.projection.forward(a, ctx.training) : a;
  if (skip.shape() != gated.shape()) {
    throw DimensionError("mtblock_forward: skip " + shape_str(skip.shape()) + " does not match trunk " +
                         shape_str(gated.shape()));
  }
  return relu(add(gated, skip));
}

Network::Network(NetworkConfig config, std::uint64_t seed) : config_(std::move(config)) {
  config_.validate();
  std::mt19937_64 rng(seed);
  stem_ = make_conv_bn(config_.in_channels, config_.stem.out_channels, config_.stem.kernel, config_.stem.stride, rng,
                       store_, "stem.conv");
  for (std::size_t i = 0; i < config_.stages.size(); ++i) {
    blocks_.push_back(make_block_params(config_, i, rng, store_, "block" + std::to_string(i)));
  }
  const std::size_t features = config_.stages.empty() ? config_.stem.out_channels : config_.stages.back().out_channels;
  const double bound = 1.0 / std::sqrt(static_cast<double>(features));
  std::uniform_real_distribution<double> dist(-bound, bound);
  std::vector<double> w(config_.classes * features);
  for (auto& v : w) v = dist(rng);
  head_weight_ = store_.add("head.weight", Tensor({config_.classes, features}, std::move(w)));
  head_bias_ = store_.add("head.bias", Tensor::zeros({config_.classes}));
}

Tensor Network::forward(const Tensor& clip, ForwardContext& ctx) {
  const VolumeDims d = volume_dims(clip, "Network::forward");
  if (d.c != config_.in_channels || !(Triple{d.t, d.h, d.w} == config_.clip)) {
    throw DimensionError("Network::forward: clip " + shape_str(clip.shape()) + " does not match configured " +
                         std::to_string(config_.in_channels) + "x" + extent_str(config_.clip));
  }
  Tensor x = relu(stem_.forward(clip, ctx.training));
  for (auto& block : blocks_) x = mtblock_forward(x, block, config_, ctx);
  return linear(global_mean(x), head_weight_, head_bias_);
}

Tensor Network::forward(const Tensor& clip) {
  ForwardContext ctx;
  return forward(clip, ctx);
}

Network build_network(const NetworkConfig& config, std::uint64_t seed) { return Network(config, seed); }

Tensor forward_logits(Network& network, const Tensor& clip) {
  if (clip.rank() != 4) throw DimensionError("forward_logits: clip must be C x T x H x W");
  return network.forward(clip);
}

Tensor crop_clip(const Tensor& video, Triple origin, Triple extent) {
  if (video.rank() != 4) throw DimensionError("crop_clip: video must be C x T x H x W");
  const std::size_t C = video.dim(0), T = video.dim(1), H = video.dim(2), W = video.dim(3);
  if (T == 0 || H == 0 || W == 0) throw DimensionError("crop_clip: empty video");
  const auto src = video.values();
  std::vector<double> out(C * extent.volume());
  std::size_t k = 0;
  for (std::size_t c = 0; c < C; ++c)
    for (std::size_t t = 0; t < extent.t; ++t) {
      const std::size_t st = std::min(origin.t + t, T - 1);
      for (std::size_t h = 0; h < extent.h; ++h) {
        const std::size_t sh = std::min(origin.h + h, H - 1);
        for (std::size_t w = 0; w < extent.w; ++w) {
          const std::size_t sw = std::min(origin.w + w, W - 1);
          out[k++] = src[((c * T + st) * H + sh) * W + sw];
        }
      }
    }
  return Tensor({C, extent.t, extent.h, extent.w}, std::move(out));
}

std::vector<std::size_t> view_offsets(std::size_t full, std::size_t extent, std::size_t count) {
  if (count == 0) throw ConfigError("view count must be >= 1");
  const std::size_t span = full > extent ? full - extent : 0;
  std::vector<std::size_t> out(count);
  if (count == 1) {
    out[0] = span / 2;
    return out;
  }
  for (std::size_t i = 0; i < count; ++i) {
    out[i] = static_cast<std::size_t>(
        std::llround(static_cast<double>(i) * static_cast<double>(span) / static_cast<double>(count - 1)));
  }
  return out;
}

std::vector<double> average_probabilities(const std::vector<std::vector<double>>& views) {
  if (views.empty()) throw DimensionError("average_probabilities: no views");
  const std::size_t k = views.front().size();
  std::vector<double> out(k);
  std::vector<double> column(views.size());
  for (std::size_t c = 0; c < k; ++c) {
    for (std::size_t v = 0; v < views.size(); ++v) {
      if (views[v].size() != k) throw DimensionError("average_probabilities: views disagree on class count");
      column[v] = views[v][c];
    }
    std::sort(column.begin(), column.end());
    double s = 0.0;
    for (double p : column) s += p;
    out[c] = s / static_cast<double>(views.size());
  }
  return out;
}

MultiviewResult multiview_infer(Network& network, const Tensor& video, std::size_t n_clips, std::size_t n_crops) {
  const NetworkConfig& cfg = network.config();
  if (video.rank() != 4 || video.dim(0) != cfg.in_channels) {
    throw DimensionError("multiview_infer: video must be " + std::to_string(cfg.in_channels) + " x T x H x W, got " +
                         shape_str(video.shape()));
  }
  if (n_clips == 0 || n_crops == 0) throw ConfigError("multiview_infer: view counts must be >= 1");
  const Triple full{video.dim(1), video.dim(2), video.dim(3)};
  const Triple clip = cfg.clip;
  MultiviewResult result;
  result.fallback = full.t < clip.t || full.h < clip.h || full.w < clip.w;
  std::vector<Triple> origins;
  if (result.fallback) {
    origins.push_back({full.t > clip.t ? (full.t - clip.t) / 2 : 0, full.h > clip.h ? (full.h - clip.h) / 2 : 0,
                       full.w > clip.w ? (full.w - clip.w) / 2 : 0});
  } else {
    const std::size_t h0 = (full.h - clip.h) / 2;
    for (std::size_t t0 : view_offsets(full.t, clip.t, n_clips))
      for (std::size_t w0 : view_offsets(full.w, clip.w, n_crops)) origins.push_back({t0, h0, w0});
  }
  NoGradGuard guard;
  std::vector<std::vector<double>> probs;
  probs.reserve(origins.size());
  for (const Triple& o : origins) {
    const Tensor logits = forward_logits(network, crop_clip(video, o, clip));
    probs.push_back(softmax(logits.values(), cfg.classes));
  }
  result.probabilities = average_probabilities(probs);
  result.views = origins.size();
  result.predicted = static_cast<std::size_t>(
      std::max_element(result.probabilities.begin(), result.probabilities.end()) - result.probabilities.begin());
  return result;
}

}  // namespace mtn
