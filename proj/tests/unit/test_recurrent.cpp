// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <cmath>

#include "mtnet/errors.hpp"
#include "mtnet/gradcheck.hpp"
#include "mtnet/param_store.hpp"
#include "mtnet/recurrent.hpp"
#include "oracles.hpp"

using namespace mtn;

namespace {

std::vector<double> vec(const Tensor& t) { return {t.values().begin(), t.values().end()}; }

oracle::GruWeights weights_of(const CellParams& p) {
  return {vec(p.gates[0].weight), vec(p.gates[1].weight), vec(p.gates[2].weight),
          vec(p.gates[0].bias),   vec(p.gates[1].bias),   vec(p.gates[2].bias)};
}

CellParams random_cell(CellKind kind, std::size_t hidden, std::size_t input, std::uint64_t seed, double scale = 1.0) {
  std::mt19937_64 rng(seed);
  ParamStore store;
  CellParams p = make_cell_params(kind, hidden, input, rng, store, "cell");
  std::uniform_real_distribution<double> dist(-scale, scale);
  for (auto& [path, t] : store.params()) {
    Tensor h = t;
    for (auto& v : h.mutable_values()) v = dist(rng);
  }
  return p;
}

CellState state_of(const std::vector<double>& h) { return {Tensor({h.size()}, h), {}}; }

}  // namespace

TEST(Gru, AllZeroParametersHalveTheState) {
  const CellParams p = zero_cell_params(CellKind::gru, 1, 1);
  const CellState s = cell_step(Tensor({1}, {0.3}), state_of({0.8}), p);
  EXPECT_DOUBLE_EQ(s.hidden.item(), 0.4);
}

TEST(Gru, ZeroInputAndStateWithZeroBiasStaysZero) {
  CellParams p = random_cell(CellKind::gru, 3, 2, 1);
  for (auto& g : p.gates)
    for (auto& v : g.bias.mutable_values()) v = 0.0;
  const CellState s = cell_step(Tensor::zeros({2}), state_of({0, 0, 0}), p);
  for (double v : s.hidden.values()) EXPECT_EQ(v, 0.0);
}

TEST(Gru, MatchesScalarOracle) {
  oracle::Gen gen(2);
  for (int trial = 0; trial < 200; ++trial) {
    const CellParams p = random_cell(CellKind::gru, 3, 3, 100 + trial, 2.0);
    const auto h = gen.values(3), x = gen.values(3);
    const CellState s = cell_step(Tensor({3}, x), state_of(h), p);
    ASSERT_LE(oracle::max_abs_diff(s.hidden.values(), oracle::gru_step(h, x, weights_of(p))), 1e-12);
  }
}

TEST(Gru, SeparateResetBias) {
  // Only the reset bias differs between the two cells; the outputs must too.
  CellParams a = zero_cell_params(CellKind::gru, 1, 1);
  a.gates[2].weight.mutable_values()[0] = 1.0;
  CellParams b = zero_cell_params(CellKind::gru, 1, 1);
  b.gates[2].weight.mutable_values()[0] = 1.0;
  b.gates[1].bias.mutable_values()[0] = 3.0;
  const double ya = cell_step(Tensor({1}, {0.0}), state_of({0.5}), a).hidden.item();
  const double yb = cell_step(Tensor({1}, {0.0}), state_of({0.5}), b).hidden.item();
  EXPECT_NEAR(ya, 0.25 + 0.5 * std::tanh(0.25), 1e-15);
  EXPECT_NEAR(yb, 0.25 + 0.5 * std::tanh(0.5 * oracle::sigmoid(3.0)), 1e-15);
}

TEST(Gru, HiddenStaysInUnitBoxOverRandomRollouts) {
  oracle::Gen gen(3);
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t H = gen.index(1, 4), I = gen.index(1, 4);
    const CellParams p = random_cell(CellKind::gru, H, I, 5000 + trial, 4.0);
    CellState s = state_of(gen.values(H));
    for (int t = 0; t < 8; ++t) {
      s = cell_step(gen.tensor({I}, -10.0, 10.0), s, p);
      for (double v : s.hidden.values()) {
        ASSERT_GE(v, -1.0);
        ASSERT_LE(v, 1.0);
      }
    }
  }
}

TEST(Lstm, MatchesStandardForm) {
  oracle::Gen gen(4);
  for (CellKind kind : {CellKind::lstm, CellKind::lstm_peephole}) {
    const CellParams p = random_cell(kind, 2, 3, 7);
    const auto h = gen.values(2), c = gen.values(2), x = gen.values(3);
    const CellState s = cell_step(Tensor({3}, x), {Tensor({2}, h), Tensor({2}, c)}, p);
    const bool peep = kind == CellKind::lstm_peephole;
    auto pre = [&](std::size_t g, std::size_t row) {
      const auto w = vec(p.gates[g].weight);
      double v = p.gates[g].bias.values()[row];
      for (std::size_t j = 0; j < 2; ++j) v += w[row * 5 + j] * h[j];
      for (std::size_t j = 0; j < 3; ++j) v += w[row * 5 + 2 + j] * x[j];
      return v;
    };
    for (std::size_t r = 0; r < 2; ++r) {
      const double peep_i = peep ? p.peepholes[0].values()[r] * c[r] : 0.0;
      const double peep_f = peep ? p.peepholes[1].values()[r] * c[r] : 0.0;
      const double i = oracle::sigmoid(pre(0, r) + peep_i);
      const double f = oracle::sigmoid(pre(1, r) + peep_f);
      const double g = std::tanh(pre(3, r));
      const double cn = f * c[r] + i * g;
      const double o = oracle::sigmoid(pre(2, r) + (peep ? p.peepholes[2].values()[r] * cn : 0.0));
      EXPECT_NEAR(s.cell.values()[r], cn, 1e-12);
      EXPECT_NEAR(s.hidden.values()[r], o * std::tanh(cn), 1e-12);
    }
  }
}

TEST(Rnn, IsTanhOfAffine) {
  const CellParams p = random_cell(CellKind::rnn, 2, 1, 8);
  const std::vector<double> h{0.2, -0.4};
  const CellState s = cell_step(Tensor({1}, {0.7}), state_of(h), p);
  const auto w = vec(p.gates[0].weight);
  for (std::size_t r = 0; r < 2; ++r) {
    const double a = p.gates[0].bias.values()[r] + w[r * 3] * h[0] + w[r * 3 + 1] * h[1] + w[r * 3 + 2] * 0.7;
    EXPECT_NEAR(s.hidden.values()[r], std::tanh(a), 1e-15);
  }
}

TEST(CellStep, DimensionMismatchThrows) {
  const CellParams p = zero_cell_params(CellKind::gru, 2, 3);
  EXPECT_THROW(cell_step(Tensor::zeros({2}), state_of({0, 0}), p), DimensionError);
  EXPECT_THROW(cell_step(Tensor::zeros({3}), state_of({0, 0, 0}), p), DimensionError);
  CellParams bad = p;
  bad.gates[1].weight = Tensor::zeros({2, 4});
  EXPECT_THROW(bad.validate(), DimensionError);
}

TEST(CellParams, CountsAndNames) {
  EXPECT_EQ(zero_cell_params(CellKind::gru, 4, 4).param_count(), 3u * (4 * 8 + 4));
  EXPECT_EQ(zero_cell_params(CellKind::lstm, 4, 4).param_count(), 4u * (4 * 8 + 4));
  EXPECT_EQ(zero_cell_params(CellKind::lstm_peephole, 4, 4).param_count(), 4u * (4 * 8 + 4) + 12);
  EXPECT_EQ(zero_cell_params(CellKind::rnn, 4, 4).param_count(), 4u * 8 + 4);
  std::mt19937_64 rng(1);
  ParamStore store;
  make_cell_params(CellKind::gru, 2, 2, rng, store, "block0.sr.layer1");
  EXPECT_TRUE(store.contains("block0.sr.layer1.z.weight"));
  EXPECT_TRUE(store.contains("block0.sr.layer1.r.bias"));
  EXPECT_TRUE(store.contains("block0.sr.layer1.h.weight"));
  for (auto k : {CellKind::rnn, CellKind::lstm, CellKind::lstm_peephole, CellKind::gru})
    EXPECT_EQ(parse_cell_kind(to_string(k)), k);
  EXPECT_THROW(parse_cell_kind("transformer"), ConfigError);
}

TEST(CellParams, InitWithinFanInBound) {
  std::mt19937_64 rng(9);
  ParamStore store;
  make_cell_params(CellKind::lstm_peephole, 5, 4, rng, store, "c");
  const double bound = 1.0 / 3.0;
  for (const auto& [path, t] : store.params())
    for (double v : t.values()) EXPECT_LE(std::abs(v), bound) << path;
}

TEST(DualLayer, ZeroParametersGiveZeros) {
  oracle::Gen gen(5);
  const CellParams p = zero_cell_params(CellKind::gru, 3, 3);
  const Tensor out = run_dual_layer(gen.tensor({3, 5}), p, p);
  EXPECT_EQ(out.shape(), (Shape{3, 5}));
  for (double v : out.values()) EXPECT_EQ(v, 0.0);
}

TEST(DualLayer, SingleStepIsTwoChainedCells) {
  oracle::Gen gen(6);
  const CellParams a = random_cell(CellKind::gru, 3, 3, 11), b = random_cell(CellKind::gru, 3, 3, 12);
  const Tensor x = gen.tensor({3, 1});
  const Tensor h1 = cell_step(Tensor({3}, vec(x)), zero_state(a, 1, false), a).hidden;
  const Tensor h2 = cell_step(h1, zero_state(b, 1, false), b).hidden;
  EXPECT_EQ(oracle::max_abs_diff(run_dual_layer(x, a, b).values(), h2.values()), 0.0);
}

TEST(DualLayer, MatchesLoopOracle) {
  oracle::Gen gen(7);
  const CellParams a = random_cell(CellKind::gru, 3, 3, 21), b = random_cell(CellKind::gru, 3, 3, 22);
  const Tensor seq = gen.tensor({3, 4});
  const Tensor out = run_dual_layer(seq, a, b);
  std::vector<double> h1(3, 0.0), h2(3, 0.0);
  for (std::size_t t = 0; t < 4; ++t) {
    const std::vector<double> x{seq.at({0, t}), seq.at({1, t}), seq.at({2, t})};
    h1 = oracle::gru_step(h1, x, weights_of(a));
    h2 = oracle::gru_step(h2, h1, weights_of(b));
    for (std::size_t c = 0; c < 3; ++c) EXPECT_NEAR(out.at({c, t}), h2[c], 1e-12);
  }
}

TEST(DualLayer, KindChangesOnlyArithmetic) {
  oracle::Gen gen(8);
  const Tensor seq = gen.tensor({2, 3, 5});
  for (auto k : {CellKind::rnn, CellKind::lstm, CellKind::lstm_peephole, CellKind::gru}) {
    const CellParams a = random_cell(k, 3, 3, 31), b = random_cell(k, 3, 3, 32);
    EXPECT_EQ(run_dual_layer(seq, a, b).shape(), (Shape{2, 3, 5}));
  }
}

TEST(DualLayer, BatchedEqualsPerSample) {
  oracle::Gen gen(9);
  const CellParams a = random_cell(CellKind::gru, 2, 2, 41), b = random_cell(CellKind::gru, 2, 2, 42);
  const Tensor s0 = gen.tensor({2, 3}), s1 = gen.tensor({2, 3});
  auto both = vec(s0);
  const auto v1 = vec(s1);
  both.insert(both.end(), v1.begin(), v1.end());
  const Tensor out = run_dual_layer(Tensor({2, 2, 3}, both), a, b);
  auto expect = vec(run_dual_layer(s0, a, b));
  const auto e1 = vec(run_dual_layer(s1, a, b));
  expect.insert(expect.end(), e1.begin(), e1.end());
  EXPECT_LE(oracle::max_abs_diff(out.values(), expect), 1e-15);
}

TEST(DualLayer, MismatchedSizesThrow) {
  const CellParams a = zero_cell_params(CellKind::gru, 3, 2), b = zero_cell_params(CellKind::gru, 3, 4);
  EXPECT_THROW(run_dual_layer(Tensor::zeros({3, 4}), a, b), DimensionError);
  EXPECT_THROW(run_dual_layer(Tensor::zeros({2, 4}), a, b), DimensionError);
}

TEST(DualLayer, GradcheckOverFourSteps) {
  oracle::Gen gen(10);
  const CellParams a = random_cell(CellKind::gru, 3, 3, 51), b = random_cell(CellKind::gru, 3, 3, 52);
  const auto r = gradcheck("dual_gru", [a, b](const auto& in) { return run_dual_layer(in[0], a, b); },
                           {gen.tensor({3, 4})});
  EXPECT_LE(r.max_rel_error, 1e-4);
}
