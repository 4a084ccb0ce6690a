// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "mtnet/mtconv.hpp"
#include "mtnet/network.hpp"

namespace mtn {

/// Per-output-element FLOP costs used by the counter. A multiply-accumulate
/// counts as two FLOPs.
namespace flop_cost {
inline constexpr std::uint64_t batch_norm = 4;  // subtract, scale, multiply, shift
inline constexpr std::uint64_t relu = 1;
inline constexpr std::uint64_t sigmoid = 4;
inline constexpr std::uint64_t tanh = 4;
inline constexpr std::uint64_t add = 1;
inline constexpr std::uint64_t mul = 1;
inline constexpr std::uint64_t interp = 4;
// per input element covered by a pooling window
inline constexpr std::uint64_t softpool = 4;  // exp, multiply, two accumulations
inline constexpr std::uint64_t avg_pool = 1;
inline constexpr std::uint64_t max_pool = 1;
inline constexpr std::uint64_t stochastic_pool = 3;
inline constexpr std::uint64_t reduce = 1;  // spatial sums and means
}  // namespace flop_cost

struct LayerRecord {
  std::string name;
  std::uint64_t flops = 0;
  std::uint64_t params = 0;
  Shape shape;  // output shape for one sample
};

struct ComplexityReport {
  std::vector<LayerRecord> records;
  std::uint64_t total_flops = 0;
  std::uint64_t total_params = 0;
  std::string convention = "multiply-accumulate = 2 FLOPs; batch of one clip; selection comparisons are free";

  void add(std::string name, std::uint64_t flops, std::uint64_t params, Shape shape);
  void append(const ComplexityReport& other);
  double gflops() const { return static_cast<double>(total_flops) * 1e-9; }
};

std::uint64_t conv3d_flops(std::size_t in, std::size_t out, Triple kernel, Triple output_extent);
std::uint64_t conv3d_params(std::size_t in, std::size_t out, Triple kernel, bool bias = false);

/// Cosine similarity of two C-vectors: C multiplies and C - 1 adds for the
/// dot product, the same for each squared norm, two square roots, one
/// multiply and one divide.
std::uint64_t cosine_flops(std::size_t channels);

/// One MTConv on an input of extent `input`.
ComplexityReport mtconv_complexity(const MTConvConfig& config, Triple input, const std::string& prefix = "mtconv");

/// Two stacked cells over T steps, 2 * hidden * (hidden + input) * gates * T per layer.
std::uint64_t recurrence_flops(CellKind kind, std::size_t hidden, std::size_t input, std::size_t steps);

/// Whole network on its configured clip.
ComplexityReport count_flops(const NetworkConfig& config);
/// Whole network on a C x T x H x W input shape.
ComplexityReport count_flops(const Network& network, const Shape& input);

/// Sum of trainable tensor sizes; running statistics are excluded.
std::size_t count_params(const Network& network);
std::size_t count_params(const ParamStore& store);

struct SweepRow {
  double delta = 1.0;
  double gflops = 0.0;
  std::size_t params = 0;
};

/// Rebuilds `base` with every stage's delta replaced by each entry of `deltas`.
std::vector<SweepRow> delta_sweep(const NetworkConfig& base, std::span<const double> deltas);

/// "delta,gflops,params" with GFLOPs to three decimals.
std::string sweep_csv(const std::vector<SweepRow>& rows);
/// "name,flops,params,shape" per record plus a total row.
std::string report_csv(const ComplexityReport& report);

}  // namespace mtn
