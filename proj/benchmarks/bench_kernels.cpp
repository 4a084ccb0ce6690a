// SPDX-License-Identifier: Apache-2.0
#include <benchmark/benchmark.h>

#include <random>

#include "mtnet/complexity.hpp"
#include "mtnet/mtconv.hpp"
#include "mtnet/network.hpp"
#include "mtnet/param_store.hpp"
#include "mtnet/pooling.hpp"

namespace {

using namespace mtn;

Tensor random_tensor(Shape shape, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> dist(-1.0, 1.0);
  std::vector<double> v(shape_numel(shape));
  for (auto& x : v) x = dist(rng);
  return Tensor(std::move(shape), std::move(v));
}

void BM_Conv3dForward(benchmark::State& state) {
  const auto c = static_cast<std::size_t>(state.range(0));
  const Tensor x = random_tensor({c, 8, 16, 16}, 1);
  const Tensor w = random_tensor({c, c, 3, 3, 3}, 2);
  NoGradGuard guard;
  for (auto _ : state) benchmark::DoNotOptimize(conv3d(x, w, std::nullopt, {1, 1, 1}, {1, 1, 1}));
  state.counters["FLOPs"] = benchmark::Counter(
      static_cast<double>(conv3d_flops(c, c, {3, 3, 3}, {8, 16, 16})), benchmark::Counter::kIsIterationInvariantRate);
}
BENCHMARK(BM_Conv3dForward)->Arg(4)->Arg(8)->Arg(16)->Unit(benchmark::kMillisecond);

void BM_Conv3dBackward(benchmark::State& state) {
  const auto c = static_cast<std::size_t>(state.range(0));
  Tensor x = random_tensor({c, 8, 16, 16}, 3);
  Tensor w = random_tensor({c, c, 3, 3, 3}, 4);
  x.set_requires_grad(true);
  w.set_requires_grad(true);
  for (auto _ : state) {
    const Tensor y = conv3d(x, w, std::nullopt, {1, 1, 1}, {1, 1, 1});
    const std::vector<double> seed(y.numel(), 1.0);
    y.backward(seed);
    x.zero_grad();
    w.zero_grad();
  }
}
BENCHMARK(BM_Conv3dBackward)->Arg(4)->Arg(8)->Unit(benchmark::kMillisecond);

void BM_SoftpoolSpatial(benchmark::State& state) {
  const auto hw = static_cast<std::size_t>(state.range(0));
  const Tensor x = random_tensor({16, 8, hw, hw}, 5);
  NoGradGuard guard;
  for (auto _ : state) benchmark::DoNotOptimize(softpool_spatial(x));
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(x.numel()));
}
BENCHMARK(BM_SoftpoolSpatial)->Arg(16)->Arg(32)->Arg(64);

void BM_FrameSelection(benchmark::State& state) {
  const auto t = static_cast<std::size_t>(state.range(0));
  const Tensor x = random_tensor({16, t, 8, 8}, 6);
  for (auto _ : state) benchmark::DoNotOptimize(select_frames(x));
}
BENCHMARK(BM_FrameSelection)->Arg(8)->Arg(16)->Arg(64);

void BM_MTConvForward(benchmark::State& state) {
  MTConvConfig cfg;
  cfg.in_channels = 8;
  cfg.out_channels = 16;
  cfg.delta = static_cast<double>(state.range(0)) / 8.0;
  std::mt19937_64 rng(7);
  ParamStore store;
  MTConvParams params = make_mtconv_params(cfg, rng, store, "bench");
  const Tensor x = random_tensor({8, 8, 16, 16}, 8);
  NoGradGuard guard;
  ForwardContext ctx;
  for (auto _ : state) benchmark::DoNotOptimize(mtconv_forward(x, params, cfg, ctx));
}
BENCHMARK(BM_MTConvForward)->Arg(8)->Arg(7)->Arg(4)->Unit(benchmark::kMillisecond);

void BM_NetworkForward(benchmark::State& state) {
  NetworkConfig cfg;
  cfg.in_channels = 1;
  cfg.clip = {8, 16, 16};
  cfg.stem.out_channels = 8;
  cfg.stem.stride = {1, 2, 2};
  BlockConfig block;
  block.in_channels = 8;
  block.out_channels = 16;
  cfg.stages = {block};
  Network net(cfg, 1);
  const Tensor clip = random_tensor({1, 8, 16, 16}, 9);
  NoGradGuard guard;
  for (auto _ : state) benchmark::DoNotOptimize(net.forward(clip));
}
BENCHMARK(BM_NetworkForward)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
