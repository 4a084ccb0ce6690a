// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <cstring>
#include <nlohmann/json.hpp>

#include "mtnet/checkpoint.hpp"
#include "mtnet/complexity.hpp"
#include "mtnet/config_json.hpp"
#include "mtnet/errors.hpp"
#include "oracles.hpp"

using namespace mtn;

namespace {

NetworkConfig toy() { return network_config_from_json(load_json_file(MTNET_CONFIG_DIR "/toy_mtnet.json")); }

MTConvConfig mtconv(std::size_t in, std::size_t out, double delta) {
  MTConvConfig c;
  c.in_channels = in;
  c.out_channels = out;
  c.delta = delta;
  return c;
}

// Parameter count read straight from the serialized bytes: the index gives
// each record's kind and offset, and each record header gives its dims.
std::uint64_t checkpoint_walk(const std::string& bytes) {
  std::uint64_t len = 0;
  std::memcpy(&len, bytes.data() + 8, 8);
  const auto index = nlohmann::json::parse(bytes.substr(16, len));
  const std::size_t base = 16 + len;
  std::uint64_t total = 0;
  for (const auto& e : index["tensors"]) {
    if (e["kind"] != "param") continue;
    const std::size_t at = base + e["offset"].get<std::size_t>();
    std::uint32_t rank = 0;
    std::memcpy(&rank, bytes.data() + at + 4, 4);
    std::uint64_t n = 1;
    for (std::uint32_t i = 0; i < rank; ++i) {
      std::uint32_t d = 0;
      std::memcpy(&d, bytes.data() + at + 8 + 4 * i, 4);
      n *= d;
    }
    total += n;
  }
  return total;
}

}  // namespace

TEST(ConvCounts, Examples) {
  EXPECT_EQ(conv3d_params(4, 8, {3, 3, 3}), 864u);
  EXPECT_EQ(conv3d_params(4, 8, {3, 3, 3}, true), 872u);
  EXPECT_EQ(conv3d_flops(1, 1, {1, 1, 1}, {2, 2, 2}), 16u);
}

TEST(ConvCounts, SingleConvNetworkLayer) {
  // A 1x1x1 stem on 1x2x2x2 with no stages: the conv record alone is 16 FLOPs.
  NetworkConfig cfg;
  cfg.in_channels = 1;
  cfg.clip = {2, 2, 2};
  cfg.stem.out_channels = 1;
  cfg.stem.kernel = {1, 1, 1};
  cfg.classes = 2;
  const ComplexityReport r = count_flops(cfg);
  EXPECT_EQ(r.records.front().name, "stem.conv.conv");
  EXPECT_EQ(r.records.front().flops, 16u);
  EXPECT_EQ(r.records.front().params, 1u);
}

TEST(CosineFlops, HandCount) {
  // dot, |a|^2, |b|^2: C multiplies and C - 1 adds each; two roots, a product, a divide.
  for (std::size_t c : {1u, 2u, 16u, 28u}) EXPECT_EQ(cosine_flops(c), 3 * (c + (c - 1)) + 4);
}

TEST(MTConvComplexity, DeltaOneIsPlainConv) {
  const Triple in{8, 16, 16};
  const ComplexityReport r = mtconv_complexity(mtconv(16, 32, 1.0), in);
  const std::uint64_t vol = 32ULL * in.volume();
  EXPECT_EQ(r.records.size(), 3u);
  EXPECT_EQ(r.records[0].flops, conv3d_flops(16, 32, {3, 3, 3}, in));
  EXPECT_EQ(r.total_flops, conv3d_flops(16, 32, {3, 3, 3}, in) + flop_cost::batch_norm * vol + flop_cost::relu * vol);
  EXPECT_EQ(r.total_params, conv3d_params(16, 32, {3, 3, 3}) + 64);
}

TEST(MTConvComplexity, ClosedFormAudit) {
  const std::uint64_t full = 8 * 16 * 16, pooled = 8 * 8 * 8, half = 4 * 8 * 8;
  const std::uint64_t CL = 28, CP = 4, C = 16;
  const std::uint64_t local = 2 * 27 * C * CL * full + 4 * CL * full + CL * full;
  const std::uint64_t via_local = 4 * CL * full + (CL * pooled + 7 * cosine_flops(CL) + 8) +
                                  2 * 27 * CL * CP * half + 4 * CP * half + CP * half;
  const std::uint64_t via_input = 4 * C * full + (C * pooled + 7 * cosine_flops(C) + 8) +
                                  2 * 27 * C * CP * half + 4 * CP * half + CP * half;
  const std::uint64_t fuse = CP * half + 4 * CP * full;
  const ComplexityReport r = mtconv_complexity(mtconv(16, 32, 7.0 / 8.0), {8, 16, 16});
  EXPECT_EQ(r.total_flops, local + via_local + via_input + fuse);
  EXPECT_EQ(r.total_params, 27 * C * CL + 2 * CL + 27 * CL * CP + 2 * CP + 27 * C * CP + 2 * CP);
  std::uint64_t sum = 0;
  for (const auto& rec : r.records) sum += rec.flops;
  EXPECT_EQ(sum, r.total_flops);
}

TEST(MTConvComplexity, ParamsMatchBuiltLayer) {
  oracle::Gen gen(1);
  for (int i = 0; i < 30; ++i) {
    const MTConvConfig cfg = mtconv(gen.index(1, 8), gen.index(2, 16), 0.125 * static_cast<double>(gen.index(4, 8)));
    if (cfg.split().local == 0) continue;
    ParamStore store;
    std::mt19937_64 rng(i);
    make_mtconv_params(cfg, rng, store, "m");
    EXPECT_EQ(mtconv_complexity(cfg, {4, 4, 4}).total_params, store.param_count());
  }
}

TEST(CountFlops, TotalsAreRecordSums) {
  const ComplexityReport r = count_flops(toy());
  std::uint64_t f = 0, p = 0;
  for (const auto& rec : r.records) f += rec.flops, p += rec.params;
  EXPECT_EQ(f, r.total_flops);
  EXPECT_EQ(p, r.total_params);
  EXPECT_NE(r.convention.find("2 FLOPs"), std::string::npos);
}

TEST(CountFlops, ReportParamsMatchStore) {
  for (double d : {1.0, 0.875, 0.5, 0.25}) {
    NetworkConfig cfg = toy();
    for (auto& b : cfg.stages) b.delta = d;
    const Network net(cfg, 0);
    EXPECT_EQ(count_flops(cfg).total_params, count_params(net)) << d;
    EXPECT_EQ(count_flops(net, {3, 16, 32, 32}).total_flops, count_flops(cfg).total_flops);
  }
}

TEST(CountFlops, RecurrenceTerm) {
  EXPECT_EQ(recurrence_flops(CellKind::gru, 4, 4, 8), 2u * 4 * 8 * 3 * 8);
  EXPECT_EQ(recurrence_flops(CellKind::lstm, 2, 3, 5), 2u * 2 * 5 * 4 * 5);
}

TEST(CountParams, MatchesCheckpointWalk) {
  const Network net(toy(), 0);
  EXPECT_EQ(checkpoint_walk(encode_checkpoint(net.params())), count_params(net));
}

TEST(DeltaSweep, FlopsStrictlyDecreaseOnToy) {
  const std::vector<double> deltas{1.0, 0.875, 0.75, 0.625, 0.5, 0.375, 0.25};
  const auto rows = delta_sweep(toy(), deltas);
  ASSERT_EQ(rows.size(), deltas.size());
  for (std::size_t i = 1; i < rows.size(); ++i) EXPECT_LT(rows[i].gflops, rows[i - 1].gflops);
}

TEST(DeltaSweep, FlopsDecreaseOverFinerGrid) {
  oracle::Gen gen(2);
  for (int trial = 0; trial < 5; ++trial) {
    NetworkConfig cfg;
    cfg.in_channels = 1;
    cfg.clip = {8, 16, 16};
    cfg.stem.out_channels = 8 * gen.index(1, 2);
    BlockConfig b;
    b.in_channels = cfg.stem.out_channels;
    b.out_channels = 16 * gen.index(1, 2);
    cfg.stages = {b};
    std::vector<double> deltas;
    for (int k = 16; k >= 4; --k) deltas.push_back(k / 16.0);
    const auto rows = delta_sweep(cfg, deltas);
    for (std::size_t i = 1; i < rows.size(); ++i) EXPECT_LE(rows[i].gflops, rows[i - 1].gflops);
    EXPECT_LT(rows.back().gflops, rows.front().gflops);
  }
}

TEST(DeltaSweep, SingleRowIsPlainBaseline) {
  const std::vector<double> one{1.0};
  const auto rows = delta_sweep(toy(), one);
  ASSERT_EQ(rows.size(), 1u);
  NetworkConfig cfg = toy();
  for (auto& b : cfg.stages) b.delta = 1.0;
  EXPECT_EQ(rows[0].params, count_params(Network(cfg, 0)));
  EXPECT_DOUBLE_EQ(rows[0].gflops, count_flops(cfg).gflops());
}

TEST(DeltaSweep, CsvFormat) {
  const std::vector<SweepRow> rows{{1.0, 2.89349, 103868}, {0.875, 2.6471, 115244}};
  EXPECT_EQ(sweep_csv(rows), "delta,gflops,params\n1,2.893,103868\n0.875,2.647,115244\n");
  EXPECT_THROW(delta_sweep(toy(), std::vector<double>{}), ConfigError);
  EXPECT_THROW(delta_sweep(toy(), std::vector<double>{0.0}), ConfigError);
}

TEST(ReportCsv, HasTotalRow) {
  const std::string csv = report_csv(count_flops(toy()));
  EXPECT_EQ(csv.rfind("name,flops,params,shape\n", 0), 0u);
  EXPECT_NE(csv.find("\ntotal,"), std::string::npos);
  EXPECT_NE(csv.find("stem.conv.conv,"), std::string::npos);
}
