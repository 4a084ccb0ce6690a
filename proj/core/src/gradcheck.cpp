// SPDX-License-Identifier: Apache-2.0
#include "mtnet/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "mtnet/errors.hpp"
#include "mtnet/mtconv.hpp"
#include "mtnet/ops.hpp"
#include "mtnet/pooling.hpp"
#include "mtnet/recurrent.hpp"

namespace mtn {

GradcheckResult gradcheck(const std::string& name, const GradFn& f, std::vector<Tensor> inputs,
                          const GradcheckOptions& options) {
  for (auto& x : inputs) {
    x.set_requires_grad(true);
    x.zero_grad();
  }
  const Tensor y = f(inputs);
  std::mt19937_64 rng(options.seed);
  std::uniform_real_distribution<double> dist(-1.0, 1.0);
  std::vector<double> r(y.numel());
  for (auto& v : r) v = dist(rng);
  y.backward(r);

  std::vector<double> analytic, numeric;
  const double h = options.step;
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    const std::vector<double> g = inputs[i].grad();
    analytic.insert(analytic.end(), g.begin(), g.end());
    auto values = inputs[i].mutable_values();
    for (std::size_t k = 0; k < values.size(); ++k) {
      const double orig = values[k];
      Tensor plus, minus;
      {
        NoGradGuard guard;
        values[k] = orig + h;
        plus = f(inputs);
        values[k] = orig - h;
        minus = f(inputs);
        values[k] = orig;
      }
      const auto p = plus.values(), m = minus.values();
      double s = 0.0;
      for (std::size_t j = 0; j < r.size(); ++j) s += r[j] * (p[j] - m[j]);
      numeric.push_back(s / (2.0 * h));
    }
  }
  for (std::size_t k = 0; k < analytic.size(); ++k) {
    if (!std::isfinite(analytic[k]) || !std::isfinite(numeric[k])) {
      throw NumericError(name + ": non-finite gradient at entry " + std::to_string(k));
    }
  }
  double scale = 0.0;
  for (std::size_t k = 0; k < analytic.size(); ++k) scale = std::max({scale, std::abs(analytic[k]), std::abs(numeric[k])});
  GradcheckResult result;
  result.name = name;
  result.checked = analytic.size();
  for (std::size_t k = 0; k < analytic.size(); ++k) {
    const double denom = std::max({std::abs(analytic[k]), std::abs(numeric[k]), 1e-3 * scale, 1e-8});
    result.max_rel_error = std::max(result.max_rel_error, std::abs(analytic[k] - numeric[k]) / denom);
  }
  result.passed = result.max_rel_error <= options.tolerance;
  for (auto& x : inputs) x.zero_grad();
  return result;
}

NetworkConfig micro_network_config() {
  NetworkConfig c;
  c.in_channels = 1;
  c.clip = {4, 4, 4};
  c.stem.out_channels = 4;
  BlockConfig b;
  b.in_channels = 4;
  b.out_channels = 4;
  b.delta = 0.5;
  c.stages = {b};
  c.classes = 2;
  return c;
}

namespace {

class Suite {
 public:
  explicit Suite(const GradcheckOptions& options) : options_(options), rng_(options.seed) {}

  Tensor rand(Shape shape, double lo = -1.0, double hi = 1.0) {
    std::uniform_real_distribution<double> dist(lo, hi);
    std::vector<double> v(shape_numel(shape));
    for (auto& x : v) x = dist(rng_);
    return Tensor(std::move(shape), std::move(v));
  }

  /// Values bounded away from zero, for ops with a kink at the origin.
  Tensor rand_off_zero(Shape shape) {
    Tensor t = rand(std::move(shape), 0.1, 1.0);
    std::bernoulli_distribution sign(0.5);
    for (auto& x : t.mutable_values())
      if (sign(rng_)) x = -x;
    return t;
  }

  void check(const std::string& name, const GradFn& f, std::vector<Tensor> inputs) {
    results_.push_back(gradcheck(name, f, std::move(inputs), options_));
  }

  std::mt19937_64& rng() { return rng_; }
  std::vector<GradcheckResult> take() { return std::move(results_); }

 private:
  GradcheckOptions options_;
  std::mt19937_64 rng_;
  std::vector<GradcheckResult> results_;
};

std::vector<Tensor> with_params(std::vector<Tensor> inputs, const ParamStore& store) {
  for (const auto& [path, t] : store.params()) inputs.push_back(t);
  return inputs;
}

void tensor_ops(Suite& s) {
  s.check("conv3d", [](const auto& x) { return conv3d(x[0], x[1], x[2], {1, 2, 1}, {1, 1, 1}); },
          {s.rand({2, 4, 5, 5}), s.rand({3, 2, 3, 3, 3}), s.rand({3})});
  s.check("conv3d_batched", [](const auto& x) { return conv3d(x[0], x[1], std::nullopt, {2, 1, 2}, {0, 1, 0}); },
          {s.rand({2, 2, 4, 4, 5}), s.rand({2, 2, 1, 3, 3})});
  s.check("batch_norm3d_train",
          [](const auto& x) {
            BatchNormStats stats = BatchNormStats::init(3);
            return batch_norm3d(x[0], x[1], x[2], stats, true);
          },
          {s.rand({2, 3, 2, 3, 3}), s.rand({3}, 0.5, 1.5), s.rand({3})});
  {
    BatchNormStats stats{s.rand({3}), s.rand({3}, 0.5, 2.0)};
    s.check("batch_norm3d_eval",
            [stats](const auto& x) mutable { return batch_norm3d(x[0], x[1], x[2], stats, false); },
            {s.rand({3, 2, 2, 3}), s.rand({3}), s.rand({3})});
  }
  s.check("relu", [](const auto& x) { return relu(x[0]); }, {s.rand_off_zero({2, 3, 4})});
  s.check("sigmoid", [](const auto& x) { return sigmoid(x[0]); }, {s.rand({2, 3, 4}, -3.0, 3.0)});
  s.check("tanh", [](const auto& x) { return tanh(x[0]); }, {s.rand({2, 3, 4}, -3.0, 3.0)});
  s.check("add", [](const auto& x) { return add(x[0], x[1]); }, {s.rand({3, 4}), s.rand({3, 4})});
  s.check("mul", [](const auto& x) { return mul(x[0], x[1]); }, {s.rand({3, 4}), s.rand({3, 4})});
  s.check("affine", [](const auto& x) { return affine(x[0], -1.5, 0.25); }, {s.rand({5})});
  s.check("mul_rowwise", [](const auto& x) { return mul_rowwise(x[0], x[1]); }, {s.rand({2, 4}), s.rand({4})});
  s.check("concat_channels", [](const auto& x) { return concat_channels(x[0], x[1]); },
          {s.rand({2, 1, 2, 2, 2}), s.rand({2, 3, 2, 2, 2})});
  s.check("slice_channels", [](const auto& x) { return slice_channels(x[0], 1, 3); }, {s.rand({4, 2, 2, 2})});
  s.check("trilinear_upsample", [](const auto& x) { return trilinear_interp(x[0], {4, 5, 6}); },
          {s.rand({2, 2, 3, 3})});
  s.check("trilinear_resample", [](const auto& x) { return trilinear_interp(x[0], {3, 2, 5}); },
          {s.rand({2, 1, 4, 6, 3})});
  s.check("gate_multiply", [](const auto& x) { return gate_multiply(x[0], x[1]); },
          {s.rand({2, 3, 2, 2, 3}), s.rand({2, 3, 2})});
  s.check("global_mean", [](const auto& x) { return global_mean(x[0]); }, {s.rand({2, 3, 2, 2, 2})});
  s.check("linear", [](const auto& x) { return linear(x[0], x[1], x[2]); }, {s.rand({2, 4}), s.rand({3, 4}), s.rand({3})});
  s.check("concat_features", [](const auto& x) { return concat_features(x[0], x[1]); }, {s.rand({2, 3}), s.rand({2, 2})});
  s.check("time_step", [](const auto& x) { return time_step(x[0], 1); }, {s.rand({2, 3, 4})});
  s.check("stack_steps", [](const auto& x) { return stack_steps({x[0], x[1], x[2]}); },
          {s.rand({2, 3}), s.rand({2, 3}), s.rand({2, 3})});
  const std::vector<int> labels{2, 0, 1};
  s.check("cross_entropy", [labels](const auto& x) { return cross_entropy(x[0], labels); }, {s.rand({3, 4}, -2.0, 2.0)});
  const std::vector<double> weights{0.5, -1.0, 2.0, 0.25};
  s.check("weighted_sum", [weights](const auto& x) { return weighted_sum(x[0], weights); }, {s.rand({2, 2})});
}

void pooling_ops(Suite& s) {
  s.check("softpool_2x2x2", [](const auto& x) { return softpool(x[0], {2, 2, 2}, {2, 2, 2}); },
          {s.rand({2, 4, 4, 4}, -2.0, 2.0)});
  s.check("softpool_spatial", [](const auto& x) { return softpool_spatial(x[0]); }, {s.rand({2, 2, 3, 4, 4}, -2.0, 2.0)});
  s.check("avg_pool", [](const auto& x) { return pool(x[0], PoolKind::avg, {2, 2, 2}, {2, 2, 2}); },
          {s.rand({2, 4, 4, 4})});
  s.check("max_pool", [](const auto& x) { return pool(x[0], PoolKind::max, {2, 2, 2}, {2, 2, 2}); },
          {s.rand({2, 4, 4, 4})});
  s.check("stochastic_pool_eval", [](const auto& x) { return pool(x[0], PoolKind::stochastic, {2, 2, 2}, {2, 2, 2}); },
          {s.rand_off_zero({2, 4, 4, 4})});
  s.check("spatial_sum", [](const auto& x) { return spatial_sum(x[0]); }, {s.rand({2, 3, 2, 2})});
  s.check("global_avg_pool", [](const auto& x) { return global_avg_pool(x[0]); }, {s.rand({2, 2, 3, 2, 2})});
  const Tensor probe = s.rand({2, 3, 6, 2, 2});
  const auto sel = select_frames(probe);
  s.check("gather_frames", [sel](const auto& x) { return gather_frames(x[0], sel); }, {probe});
}

void recurrent_ops(Suite& s) {
  for (CellKind kind : {CellKind::rnn, CellKind::lstm, CellKind::lstm_peephole, CellKind::gru}) {
    ParamStore store;
    const CellParams base = make_cell_params(kind, 3, 2, s.rng(), store, "cell");
    const bool lstm = kind == CellKind::lstm || kind == CellKind::lstm_peephole;
    std::vector<Tensor> inputs{s.rand({2, 2}), s.rand({2, 3})};
    if (lstm) inputs.push_back(s.rand({2, 3}));
    // The store aliases the cell's tensors, so perturbing an input reaches `params`.
    const auto f = [params = base, lstm](const std::vector<Tensor>& x) {
      const CellState out = cell_step(x[0], CellState{x[1], lstm ? x[2] : Tensor()}, params);
      return lstm ? concat_features(out.hidden, out.cell) : out.hidden;
    };
    s.check("cell_step_" + std::string(to_string(kind)), f, with_params(inputs, store));
  }
  ParamStore store;
  const CellParams first = make_cell_params(CellKind::gru, 3, 2, s.rng(), store, "l1");
  const CellParams second = make_cell_params(CellKind::gru, 3, 3, s.rng(), store, "l2");
  s.check("run_dual_layer_gru", [first, second](const auto& x) { return run_dual_layer(x[0], first, second); },
          with_params({s.rand({2, 2, 4})}, store));
}

void mtconv_ops(Suite& s) {
  for (PoolingMode mode : {PoolingMode::softpool_cos, PoolingMode::avg_cos, PoolingMode::softpool, PoolingMode::avg,
                           PoolingMode::max, PoolingMode::stochastic}) {
    MTConvConfig cfg;
    cfg.in_channels = 2;
    cfg.out_channels = 4;
    cfg.delta = 0.5;
    cfg.pooling = mode;
    ParamStore store;
    auto params = std::make_shared<MTConvParams>(make_mtconv_params(cfg, s.rng(), store, "mtconv"));
    auto log = std::make_shared<SelectionLog>();
    const auto f = [cfg, params, log](const std::vector<Tensor>& x) {
      log->rewind();
      std::mt19937_64 sampler(11);  // reseeded per call: stochastic picks stay fixed
      ForwardContext ctx{true, log.get(), &sampler};
      return mtconv_forward(x[0], *params, cfg, ctx);
    };
    s.check("mtconv_" + std::string(to_string(mode)), f, with_params({s.rand({2, 2, 4, 4, 4})}, store));
  }
  MTConvConfig cfg;
  cfg.in_channels = 2;
  cfg.out_channels = 3;
  cfg.delta = 1.0;
  ParamStore store;
  auto params = std::make_shared<MTConvParams>(make_mtconv_params(cfg, s.rng(), store, "plain"));
  s.check("mtconv_delta_one",
          [cfg, params](const auto& x) {
            ForwardContext ctx{true, nullptr, nullptr};
            return mtconv_forward(x[0], *params, cfg, ctx);
          },
          with_params({s.rand({2, 3, 3, 3})}, store));
}

void network_ops(Suite& s, std::uint64_t seed) {
  for (CellKind kind : {CellKind::gru, CellKind::lstm_peephole}) {
    ParamStore store;
    const CellParams first = make_cell_params(kind, 3, 3, s.rng(), store, "sr1");
    const CellParams second = make_cell_params(kind, 3, 3, s.rng(), store, "sr2");
    s.check("global_importance_" + std::string(to_string(kind)),
            [first, second](const auto& x) { return global_importance(x[0], first, second); },
            with_params({s.rand({2, 3, 3, 2, 2})}, store));
  }
  auto net = std::make_shared<Network>(micro_network_config(), seed);
  auto log = std::make_shared<SelectionLog>();
  {
    MTBlockParams& block = net->blocks().front();
    std::vector<Tensor> inputs{s.rand({4, 4, 4, 4})};
    for (const auto& [path, t] : net->params().params())
      if (path.rfind("block0.", 0) == 0) inputs.push_back(t);
    s.check("mtblock",
            [net, log, &block](const auto& x) {
              log->rewind();
              ForwardContext ctx{true, log.get(), nullptr};
              return mtblock_forward(x[0], block, net->config(), ctx);
            },
            inputs);
  }
  log->clear();
  s.check("micro_network",
          [net, log](const auto& x) {
            log->rewind();
            ForwardContext ctx{true, log.get(), nullptr};
            return net->forward(x[0], ctx);
          },
          with_params({s.rand({1, 4, 4, 4})}, net->params()));
}

}  // namespace

std::vector<GradcheckResult> run_gradcheck_suite(const GradcheckOptions& options) {
  Suite s(options);
  tensor_ops(s);
  pooling_ops(s);
  recurrent_ops(s);
  mtconv_ops(s);
  network_ops(s, options.seed);
  return s.take();
}

}  // namespace mtn
