// SPDX-License-Identifier: Apache-2.0
#include "mtnet/mtconv.hpp"

#include <cmath>
#include <string>

#include "mtnet/param_store.hpp"
#include "mtnet/pooling.hpp"

namespace mtn {

std::string_view to_string(PoolingMode mode) {
  switch (mode) {
    case PoolingMode::softpool_cos: return "softpool_cos";
    case PoolingMode::avg_cos: return "avg_cos";
    case PoolingMode::softpool: return "softpool";
    case PoolingMode::avg: return "avg";
    case PoolingMode::max: return "max";
    case PoolingMode::stochastic: return "stochastic";
  }
  return "softpool_cos";
}

PoolingMode parse_pooling_mode(std::string_view name) {
  for (auto m : {PoolingMode::softpool_cos, PoolingMode::avg_cos, PoolingMode::softpool, PoolingMode::avg,
                 PoolingMode::max, PoolingMode::stochastic}) {
    if (to_string(m) == name) return m;
  }
  throw ConfigError("unknown pooling mode '" + std::string(name) + "'");
}

ChannelSplit split_channels(std::size_t out_channels, double delta) {
  if (!(delta > 0.0)) throw ConfigError("channel ratio delta must be > 0 (zero ratios are not feasible)");
  if (delta > 1.0 || !std::isfinite(delta)) throw ConfigError("channel ratio delta must be <= 1");
  if (out_channels == 0) throw ConfigError("output channel count must be >= 1");
  const double c = static_cast<double>(out_channels);
  ChannelSplit s;
  s.local = static_cast<std::size_t>(std::floor(delta * c));
  s.prolonged = static_cast<std::size_t>(std::ceil((1.0 - delta) * c));
  if (s.local + s.prolonged != out_channels) s.prolonged = out_channels - s.local;
  return s;
}

void MTConvConfig::validate() const {
  if (in_channels == 0) throw ConfigError("MTConv input channel count must be >= 1");
  const ChannelSplit s = split();
  if (s.local == 0) {
    throw ConfigError("MTConv with " + std::to_string(out_channels) + " channels and delta " + std::to_string(delta) +
                      " leaves the local branch without channels");
  }
  for (const Triple& k : {k_local, k_prolonged}) {
    if (k.t % 2 == 0 || k.h % 2 == 0 || k.w % 2 == 0) throw ConfigError("MTConv kernels must have odd extents");
  }
  if (stride.t == 0 || stride.h == 0 || stride.w == 0) throw ConfigError("MTConv stride must be >= 1");
}

namespace {

std::size_t conv_extent(std::size_t in, std::size_t k, std::size_t s, const char* axis) {
  return window_extent(in, k, s, k / 2, axis);
}

Triple conv_extent(Triple in, Triple k, Triple s) {
  return {conv_extent(in.t, k.t, s.t, "T"), conv_extent(in.h, k.h, s.h, "H"), conv_extent(in.w, k.w, s.w, "W")};
}

void require_even(Triple x, const std::string& what) {
  const char* axis = x.t % 2 ? "T" : x.h % 2 ? "H" : x.w % 2 ? "W" : nullptr;
  if (axis) {
    throw ConfigError(what + " extent " + std::to_string(x.t) + "x" + std::to_string(x.h) + "x" + std::to_string(x.w) +
                      " must be even on axis " + axis + " for the prolonged branch");
  }
}

Triple halved(Triple x) { return {x.t / 2, x.h / 2, x.w / 2}; }

}  // namespace

Triple MTConvConfig::output_extent(Triple input) const {
  validate();
  const Triple out = conv_extent(input, k_local, stride);
  if (split().prolonged == 0) return out;
  require_even(input, "MTConv input");
  require_even(out, "MTConv local output");
  const Triple via_input = conv_extent(halved(input), k_prolonged, stride);
  const Triple via_local = conv_extent(halved(out), k_prolonged, {1, 1, 1});
  if (!(via_input == via_local) || !(via_local == halved(out))) {
    throw ConfigError("MTConv stride does not map the halved input onto the halved local output");
  }
  return out;
}

MTConvParams make_mtconv_params(const MTConvConfig& config, std::mt19937_64& rng, ParamStore& store,
                                const std::string& prefix) {
  config.validate();
  const ChannelSplit s = config.split();
  MTConvParams p;
  p.local = make_conv_bn(config.in_channels, s.local, config.k_local, config.stride, rng, store, prefix + ".local");
  if (s.prolonged > 0) {
    p.local_to_prolonged =
        make_conv_bn(s.local, s.prolonged, config.k_prolonged, {1, 1, 1}, rng, store, prefix + ".local_to_prolonged");
    p.prolonged =
        make_conv_bn(config.in_channels, s.prolonged, config.k_prolonged, config.stride, rng, store, prefix + ".prolonged");
  }
  return p;
}

Tensor prolonged_downsample(const Tensor& x, PoolingMode mode, ForwardContext& ctx) {
  const Triple spatial{1, 2, 2};
  const Triple cube{2, 2, 2};
  auto cosine_select = [&ctx](const Tensor& pooled) {
    const auto sel = ctx.selections ? ctx.selections->next(pooled) : select_frames(pooled);
    return gather_frames(pooled, sel);
  };
  switch (mode) {
    case PoolingMode::softpool_cos: return cosine_select(softpool(x, spatial, spatial));
    case PoolingMode::avg_cos: return cosine_select(pool(x, PoolKind::avg, spatial, spatial));
    case PoolingMode::softpool: return softpool(x, cube, cube);
    case PoolingMode::avg: return pool(x, PoolKind::avg, cube, cube);
    case PoolingMode::max: return pool(x, PoolKind::max, cube, cube);
    case PoolingMode::stochastic: return pool(x, PoolKind::stochastic, cube, cube, ctx.training, ctx.rng);
  }
  throw ConfigError("unhandled pooling mode");
}

Tensor local_branch(const Tensor& a, MTConvParams& params, const MTConvConfig& config, ForwardContext& ctx) {
  const VolumeDims d = volume_dims(a, "local_branch");
  if (d.c != config.in_channels) {
    throw DimensionError("local_branch: input has " + std::to_string(d.c) + " channels, config expects " +
                         std::to_string(config.in_channels));
  }
  return relu(params.local.forward(a, ctx.training));
}

Tensor prolonged_branch(const Tensor& a_local, const Tensor& a_in, MTConvParams& params, const MTConvConfig& config,
                        ForwardContext& ctx) {
  const VolumeDims dl = volume_dims(a_local, "prolonged_branch");
  const VolumeDims di = volume_dims(a_in, "prolonged_branch");
  const ChannelSplit s = config.split();
  if (s.prolonged == 0) throw ConfigError("prolonged_branch: delta = 1 leaves no prolonged channels");
  if (dl.c != s.local || di.c != config.in_channels) {
    throw DimensionError("prolonged_branch: channel axis mismatch with the MTConv config");
  }
  config.output_extent({di.t, di.h, di.w});

  const Tensor from_local = relu(params.local_to_prolonged.forward(prolonged_downsample(a_local, config.pooling, ctx),
                                                                   ctx.training));
  const Tensor from_input =
      relu(params.prolonged.forward(prolonged_downsample(a_in, config.pooling, ctx), ctx.training));
  return trilinear_interp(add(from_local, from_input), {dl.t, dl.h, dl.w});
}

Tensor mtconv_forward(const Tensor& a, MTConvParams& params, const MTConvConfig& config, ForwardContext& ctx) {
  const Tensor local = local_branch(a, params, config, ctx);
  if (config.split().prolonged == 0) return local;
  return concat_channels(local, prolonged_branch(local, a, params, config, ctx));
}

}  // namespace mtn
