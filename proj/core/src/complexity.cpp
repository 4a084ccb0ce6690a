// SPDX-License-Identifier: Apache-2.0
#include "mtnet/complexity.hpp"

#include <cstdio>
#include <sstream>

#include "mtnet/errors.hpp"

namespace mtn {

void ComplexityReport::add(std::string name, std::uint64_t flops, std::uint64_t params, Shape shape) {
  total_flops += flops;
  total_params += params;
  records.push_back({std::move(name), flops, params, std::move(shape)});
}

void ComplexityReport::append(const ComplexityReport& other) {
  for (const auto& r : other.records) add(r.name, r.flops, r.params, r.shape);
}

std::uint64_t conv3d_flops(std::size_t in, std::size_t out, Triple kernel, Triple output_extent) {
  return 2ULL * kernel.volume() * in * out * output_extent.volume();
}

std::uint64_t conv3d_params(std::size_t in, std::size_t out, Triple kernel, bool bias) {
  return static_cast<std::uint64_t>(kernel.volume()) * in * out + (bias ? out : 0);
}

std::uint64_t cosine_flops(std::size_t channels) { return 3 * (2 * channels - 1) + 4; }

std::uint64_t recurrence_flops(CellKind kind, std::size_t hidden, std::size_t input, std::size_t steps) {
  return 2ULL * hidden * (hidden + input) * gate_names(kind).size() * steps;
}

namespace {

Triple conv_extent(Triple in, Triple k, Triple s) {
  return {window_extent(in.t, k.t, s.t, k.t / 2, "T"), window_extent(in.h, k.h, s.h, k.h / 2, "H"),
          window_extent(in.w, k.w, s.w, k.w / 2, "W")};
}

Shape vol(std::size_t c, Triple x) { return {c, x.t, x.h, x.w}; }

std::uint64_t numel(std::size_t c, Triple x) { return static_cast<std::uint64_t>(c) * x.volume(); }

/// conv -> BN -> ReLU, appended as three records.
Triple conv_bn_relu(ComplexityReport& r, const std::string& name, std::size_t in, std::size_t out, Triple kernel,
                    Triple stride, Triple input, bool with_relu = true) {
  const Triple y = conv_extent(input, kernel, stride);
  r.add(name + ".conv", conv3d_flops(in, out, kernel, y), conv3d_params(in, out, kernel), vol(out, y));
  r.add(name + ".bn", flop_cost::batch_norm * numel(out, y), 2 * out, vol(out, y));
  if (with_relu) r.add(name + ".relu", flop_cost::relu * numel(out, y), 0, vol(out, y));
  return y;
}

/// Halving of a C-channel volume of extent x per the pooling mode.
Triple downsample(ComplexityReport& r, const std::string& name, PoolingMode mode, std::size_t c, Triple x) {
  const Triple half{x.t / 2, x.h / 2, x.w / 2};
  const std::uint64_t covered = numel(c, x);
  switch (mode) {
    case PoolingMode::softpool_cos:
    case PoolingMode::avg_cos: {
      const Triple pooled{x.t, half.h, half.w};
      const std::uint64_t per = mode == PoolingMode::softpool_cos ? flop_cost::softpool : flop_cost::avg_pool;
      r.add(name + ".pool", per * covered, 0, vol(c, pooled));
      const std::uint64_t frames = pooled.t;
      const std::uint64_t select = flop_cost::reduce * numel(c, pooled) +
                                   (frames > 0 ? (frames - 1) * cosine_flops(c) : 0) + frames;
      r.add(name + ".select", select, 0, vol(c, half));
      break;
    }
    case PoolingMode::softpool: r.add(name + ".pool", flop_cost::softpool * covered, 0, vol(c, half)); break;
    case PoolingMode::avg: r.add(name + ".pool", flop_cost::avg_pool * covered, 0, vol(c, half)); break;
    case PoolingMode::max: r.add(name + ".pool", flop_cost::max_pool * covered, 0, vol(c, half)); break;
    case PoolingMode::stochastic:
      r.add(name + ".pool", flop_cost::stochastic_pool * covered, 0, vol(c, half));
      break;
  }
  return half;
}

std::uint64_t cell_params(CellKind kind, std::size_t hidden, std::size_t input) {
  const std::uint64_t per_gate = static_cast<std::uint64_t>(hidden) * (hidden + input) + hidden;
  return per_gate * gate_names(kind).size() + (kind == CellKind::lstm_peephole ? 3 * hidden : 0);
}

}  // namespace

ComplexityReport mtconv_complexity(const MTConvConfig& config, Triple input, const std::string& prefix) {
  const Triple out = config.output_extent(input);
  const ChannelSplit s = config.split();
  ComplexityReport r;
  conv_bn_relu(r, prefix + ".local", config.in_channels, s.local, config.k_local, config.stride, input);
  if (s.prolonged == 0) return r;
  const Triple lp = downsample(r, prefix + ".local_to_prolonged", config.pooling, s.local, out);
  const Triple a = conv_bn_relu(r, prefix + ".local_to_prolonged", s.local, s.prolonged, config.k_prolonged,
                                {1, 1, 1}, lp);
  const Triple ip = downsample(r, prefix + ".prolonged", config.pooling, config.in_channels, input);
  conv_bn_relu(r, prefix + ".prolonged", config.in_channels, s.prolonged, config.k_prolonged, config.stride, ip);
  r.add(prefix + ".prolonged.add", flop_cost::add * numel(s.prolonged, a), 0, vol(s.prolonged, a));
  r.add(prefix + ".prolonged.interp", flop_cost::interp * numel(s.prolonged, out), 0, vol(s.prolonged, out));
  return r;
}

ComplexityReport count_flops(const NetworkConfig& config) {
  config.validate();
  ComplexityReport r;
  Triple x = conv_bn_relu(r, "stem.conv", config.in_channels, config.stem.out_channels, config.stem.kernel,
                          config.stem.stride, config.clip);
  std::size_t channels = config.stem.out_channels;
  for (std::size_t i = 0; i < config.stages.size(); ++i) {
    const BlockConfig& b = config.stages[i];
    const std::string name = "block" + std::to_string(i);
    const auto convs = config.conv_configs(i);
    const Triple in = x;
    for (std::size_t j = 0; j < 3; ++j) {
      r.append(mtconv_complexity(convs[j], x, name + ".conv" + std::to_string(j)));
      x = convs[j].output_extent(x);
    }
    const std::size_t c = b.out_channels;
    const Triple source = config.gate_source == GateSource::input ? in : x;
    r.add(name + ".sr.pool", flop_cost::reduce * numel(c, source), 0, {c, source.t});
    r.add(name + ".sr.layer1", recurrence_flops(b.cell, c, c, x.t), cell_params(b.cell, c, c), {c, x.t});
    r.add(name + ".sr.layer2", recurrence_flops(b.cell, c, c, x.t), cell_params(b.cell, c, c), {c, x.t});
    if (config.squash == GateSquash::sigmoid) r.add(name + ".sr.sigmoid", flop_cost::sigmoid * c * x.t, 0, {c, x.t});
    r.add(name + ".sr.mul", flop_cost::mul * numel(c, x), 0, vol(c, x));
    if (b.uses_projection()) conv_bn_relu(r, name + ".proj", channels, c, {1, 1, 1}, b.stride, in, false);
    r.add(name + ".add", flop_cost::add * numel(c, x), 0, vol(c, x));
    r.add(name + ".relu", flop_cost::relu * numel(c, x), 0, vol(c, x));
    channels = c;
  }
  r.add("head.pool", flop_cost::reduce * numel(channels, x), 0, {channels});
  r.add("head.linear", 2ULL * channels * config.classes + config.classes,
        static_cast<std::uint64_t>(channels) * config.classes + config.classes, {config.classes});
  return r;
}

ComplexityReport count_flops(const Network& network, const Shape& input) {
  if (input.size() != 4) throw DimensionError("count_flops: input shape must be C x T x H x W");
  NetworkConfig cfg = network.config();
  if (input[0] != cfg.in_channels) {
    throw DimensionError("count_flops: input has " + std::to_string(input[0]) + " channels, network expects " +
                         std::to_string(cfg.in_channels));
  }
  cfg.clip = {input[1], input[2], input[3]};
  return count_flops(cfg);
}

std::size_t count_params(const ParamStore& store) { return store.param_count(); }
std::size_t count_params(const Network& network) { return count_params(network.params()); }

std::vector<SweepRow> delta_sweep(const NetworkConfig& base, std::span<const double> deltas) {
  if (deltas.empty()) throw ConfigError("delta sweep needs at least one delta");
  std::vector<SweepRow> rows;
  for (double d : deltas) {
    NetworkConfig cfg = base;
    for (auto& b : cfg.stages) b.delta = d;
    const Network net(cfg, 0);
    const ComplexityReport report = count_flops(cfg);
    rows.push_back({d, report.gflops(), count_params(net)});
  }
  return rows;
}

std::string sweep_csv(const std::vector<SweepRow>& rows) {
  std::ostringstream os;
  os << "delta,gflops,params\n";
  char buf[64];
  for (const auto& row : rows) {
    std::snprintf(buf, sizeof buf, "%g,%.3f,", row.delta, row.gflops);
    os << buf << row.params << "\n";
  }
  return os.str();
}

std::string report_csv(const ComplexityReport& report) {
  std::ostringstream os;
  os << "name,flops,params,shape\n";
  for (const auto& r : report.records) {
    std::string shape;
    for (std::size_t i = 0; i < r.shape.size(); ++i) shape += (i ? "x" : "") + std::to_string(r.shape[i]);
    os << r.name << "," << r.flops << "," << r.params << "," << shape << "\n";
  }
  os << "total," << report.total_flops << "," << report.total_params << ",\n";
  return os.str();
}

}  // namespace mtn
