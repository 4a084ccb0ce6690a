// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

#include "mtnet/config_json.hpp"
#include "mtnet/data.hpp"
#include "mtnet/errors.hpp"
#include "mtnet/optim.hpp"
#include "mtnet/train.hpp"
#include "oracles.hpp"

using namespace mtn;

namespace {

std::vector<double> vec(const Tensor& t) { return {t.values().begin(), t.values().end()}; }

TrainConfig schedule(double lr0, std::size_t n_max, std::size_t warmup = 0) {
  TrainConfig c;
  c.lr0 = lr0;
  c.n_max = n_max;
  c.warmup_iters = warmup;
  return c;
}

NetworkConfig tiny_net(std::size_t classes) {
  NetworkConfig c;
  c.in_channels = 1;
  c.clip = {4, 8, 8};
  c.stem.out_channels = 4;
  c.stem.stride = {1, 2, 2};
  BlockConfig b;
  b.in_channels = 4;
  b.out_channels = 4;
  b.delta = 0.5;
  c.stages = {b};
  c.classes = classes;
  return c;
}

SyntheticSpec tiny_spec() {
  SyntheticSpec s = SyntheticSpec::default_task();
  s.frames = 8;
  s.height = 8;
  s.width = 8;
  s.square = 2;
  s.train_per_class = 2;
  s.val_per_class = 1;
  s.seed = 5;
  return s;
}

}  // namespace

TEST(CosineLr, ExactPoints) {
  const TrainConfig c = schedule(0.1, 1000);
  EXPECT_EQ(cosine_lr(0, c), 0.1);
  EXPECT_NEAR(cosine_lr(500, c), 0.05, 1e-12);
  EXPECT_NEAR(cosine_lr(1000, c), 0.0, 1e-12);
  for (std::size_t n : {1u, 123u, 777u})
    EXPECT_NEAR(cosine_lr(n, c), 0.1 * 0.5 * (std::cos(std::numbers::pi * n / 1000.0) + 1.0), 1e-15);
}

TEST(CosineLr, WarmupIsLinearAndContinuous) {
  const TrainConfig c = schedule(0.2, 1000, 80);
  EXPECT_EQ(cosine_lr(0, c), 0.0);
  EXPECT_NEAR(cosine_lr(40, c), 0.1, 1e-15);
  EXPECT_NEAR(cosine_lr(79, c), 0.2 * 79.0 / 80.0, 1e-15);
  EXPECT_NEAR(cosine_lr(80, c), 0.2, 1e-12);
  // the ramp's limit at the boundary equals the decay's first value
  EXPECT_NEAR(0.2 * 80.0 / 80.0, cosine_lr(80, c), 1e-12);
  EXPECT_NEAR(cosine_lr(1000, c), 0.0, 1e-12);
  for (std::size_t n = 81; n <= 1000; ++n) EXPECT_LE(cosine_lr(n, c), cosine_lr(n - 1, c));
}

TEST(CosineLr, RejectsOutOfRange) {
  EXPECT_THROW(cosine_lr(1001, schedule(0.1, 1000)), ConfigError);
  EXPECT_THROW(cosine_lr(0, schedule(0.1, 0)), ConfigError);
  EXPECT_THROW(schedule(0.1, 10, 10).validate(), ConfigError);
  EXPECT_THROW(schedule(-0.1, 10).validate(), ConfigError);
}

TEST(Sgd, ZeroGradientIsIdentity) {
  std::vector<double> p{1.5, -2.0}, v{0.0, 0.0};
  sgd_update(p, std::vector<double>{0.0, 0.0}, v, 0.1, 0.9, 0.0);
  EXPECT_EQ(p, (std::vector<double>{1.5, -2.0}));
}

TEST(Sgd, PlainStep) {
  std::vector<double> p{1.0}, v{0.0};
  sgd_update(p, std::vector<double>{0.5}, v, 0.1, 0.0, 0.0);
  EXPECT_DOUBLE_EQ(p[0], 1.0 - 0.05);
}

TEST(Sgd, TwoMomentumStepsMatchRecurrence) {
  const double g = 0.3, rate = 0.1, m = 0.9, wd = 5e-5;
  std::vector<double> p{2.0}, v{0.0};
  sgd_update(p, std::vector<double>{g}, v, rate, m, wd);
  sgd_update(p, std::vector<double>{g}, v, rate, m, wd);
  double pp = 2.0, vv = 0.0;
  for (int i = 0; i < 2; ++i) {
    vv = m * vv + g + wd * pp;
    pp = pp - rate * vv;
  }
  EXPECT_EQ(p[0], pp);
  EXPECT_EQ(v[0], vv);
}

TEST(Sgd, RateZeroIsIdentity) {
  oracle::Gen gen(1);
  auto p = gen.values(20);
  const auto before = p;
  std::vector<double> v = gen.values(20);
  sgd_update(p, gen.values(20), v, 0.0, 0.9, 5e-5);
  EXPECT_EQ(p, before);
}

TEST(Sgd, StoreStepTracksVelocityPerPath) {
  ParamStore store;
  Tensor w = store.add("w", Tensor({2}, {1.0, 1.0}));
  store.add("unused", Tensor({1}, {3.0}));
  weighted_sum(w, std::vector<double>{1.0, -1.0}).backward();
  Sgd sgd(0.0, 0.0);
  sgd.step(store, 0.5);
  EXPECT_EQ(vec(w), (std::vector<double>{0.5, 1.5}));
  EXPECT_EQ(store.get("unused").values()[0], 3.0);
  EXPECT_EQ(sgd.velocity().size(), 2u);
}

TEST(SampleClip, Examples) {
  std::vector<double> frames(8);
  for (std::size_t i = 0; i < 8; ++i) frames[i] = static_cast<double>(i);
  const Tensor video({1, 8, 1, 1}, frames);
  EXPECT_EQ(vec(sample_clip(video, 4, 2, 0)), (std::vector<double>{0, 2, 4, 6}));
  EXPECT_EQ(vec(sample_clip(video, 8, 1, 0)), frames);
  EXPECT_EQ(vec(center_clip(video, 4, 1)), (std::vector<double>{2, 3, 4, 5}));
  EXPECT_THROW(sample_clip(video, 5, 2, 0), DimensionError);
  EXPECT_THROW(sample_clip(video, 4, 2, 2), DimensionError);
  try {
    sample_clip(video, 5, 2, 0);
  } catch (const DimensionError& e) {
    EXPECT_NE(std::string(e.what()).find("needs at least 9"), std::string::npos);
  }
}

TEST(SampleClip, SeededStartsAreReproducibleAndInRange) {
  oracle::Gen gen(2);
  const Tensor video = gen.tensor({2, 20, 2, 2});
  std::mt19937_64 a(9), b(9);
  for (int i = 0; i < 50; ++i) {
    const Tensor x = sample_clip(video, 5, 3, a);
    EXPECT_EQ(vec(x), vec(sample_clip(video, 5, 3, b)));
    bool found = false;
    for (std::size_t s = 0; s <= 20 - 13 && !found; ++s) found = vec(sample_clip(video, 5, 3, s)) == vec(x);
    EXPECT_TRUE(found);
  }
}

TEST(Synthetic, DeterministicAndNoiseFree) {
  SyntheticSpec s = tiny_spec();
  s.noise = 0.0;
  const SyntheticData a = gen_synthetic(s), b = gen_synthetic(s);
  ASSERT_EQ(a.train.size(), 8u);
  ASSERT_EQ(a.val.size(), 4u);
  for (std::size_t i = 0; i < a.train.size(); ++i) EXPECT_EQ(vec(a.train.videos[i]), vec(b.train.videos[i]));
  for (double v : a.train.videos[0].values()) EXPECT_TRUE(v == 0.0 || v == 1.0);
  std::mt19937_64 r1(1), r2(2);
  EXPECT_EQ(vec(render_video(s, 3, 1, 2, r1)), vec(render_video(s, 3, 1, 2, r2)));
}

TEST(Synthetic, SpeedTwoMovesTwiceAsFar) {
  const SyntheticSpec s = SyntheticSpec::default_task();
  for (std::size_t t = 0; t + 1 < s.frames; ++t) {
    const auto step = [&](std::size_t label) {
      const std::size_t a = square_column(s, label, 5, t), b = square_column(s, label, 5, t + 1);
      return (b + s.width - a) % s.width;
    };
    EXPECT_EQ(step(2), 1u);
    EXPECT_EQ(step(3), 2u);
    EXPECT_EQ(step(0), s.width - 1);
    EXPECT_EQ(step(1), s.width - 2);
  }
}

TEST(Synthetic, SquareIsWhereTheColumnSays) {
  SyntheticSpec s = tiny_spec();
  s.noise = 0.0;
  std::mt19937_64 rng(3);
  const Tensor v = render_video(s, 1, 2, 6, rng);
  for (std::size_t t = 0; t < s.frames; ++t) {
    const std::size_t x = square_column(s, 1, 6, t);
    EXPECT_EQ(v.at({0, t, 2, x}), 1.0);
    EXPECT_EQ(v.at({0, t, 3, (x + 1) % s.width}), 1.0);
    EXPECT_EQ(v.at({0, t, 5, x}), 0.0);
  }
}

TEST(Synthetic, ClassHistogramMatchesSpec) {
  SyntheticSpec s = tiny_spec();
  s.train_per_class = 3;
  s.val_per_class = 2;
  const SyntheticData d = gen_synthetic(s);
  std::vector<int> train(4, 0), val(4, 0);
  for (int l : d.train.labels) ++train[l];
  for (int l : d.val.labels) ++val[l];
  EXPECT_EQ(train, (std::vector<int>{3, 3, 3, 3}));
  EXPECT_EQ(val, (std::vector<int>{2, 2, 2, 2}));
}

TEST(Synthetic, NoiseIsBounded) {
  SyntheticSpec s = tiny_spec();
  s.noise = 0.25;
  for (const Tensor& v : gen_synthetic(s).train.videos)
    for (double x : v.values()) EXPECT_TRUE(std::abs(x) <= 0.25 || std::abs(x - 1.0) <= 0.25);
}

TEST(Synthetic, SpecValidation) {
  SyntheticSpec s = tiny_spec();
  s.classes = {{Direction::left, 1, "square"}, {Direction::right, 1, "square"}};
  EXPECT_THROW(s.validate(), ConfigError);
  s.classes = {{Direction::left, 1, "square"}};
  EXPECT_THROW(s.validate(), ConfigError);
  s = tiny_spec();
  s.square = 9;
  EXPECT_THROW(s.validate(), ConfigError);
  s = tiny_spec();
  s.classes[1].pattern = "circle";
  EXPECT_THROW(s.validate(), ConfigError);
}

TEST(StackClips, AddsBatchAxis) {
  oracle::Gen gen(4);
  const Tensor a = gen.tensor({1, 2, 2, 2}), b = gen.tensor({1, 2, 2, 2});
  const Tensor s = stack_clips({a, b});
  EXPECT_EQ(s.shape(), (Shape{2, 1, 2, 2, 2}));
  EXPECT_THROW(stack_clips({a, gen.tensor({1, 2, 2, 3})}), DimensionError);
}

TEST(TrainLoop, ZeroRateLeavesParametersUntouched) {
  Network net(tiny_net(4), 1);
  std::map<std::string, std::vector<double>> before;
  for (const auto& [p, t] : net.params().params()) before[p] = vec(t);
  const SyntheticData d = gen_synthetic(tiny_spec());
  TrainConfig c;
  c.lr0 = 0.0;
  c.epochs = 1;
  c.batch_size = 4;
  c.clip_length = 4;
  const TrainResult r = train_loop(net, d.train, d.val, c);
  EXPECT_EQ(r.history.size(), 1u);
  for (const auto& [p, t] : net.params().params()) EXPECT_EQ(vec(t), before[p]) << p;
}

TEST(TrainLoop, HistoryLengthEqualsEpochs) {
  Network net(tiny_net(4), 2);
  const SyntheticData d = gen_synthetic(tiny_spec());
  TrainConfig c;
  c.epochs = 3;
  c.batch_size = 3;
  c.clip_length = 4;
  const TrainResult r = train_loop(net, d.train, d.val, c);
  ASSERT_EQ(r.history.size(), 3u);
  EXPECT_EQ(r.iterations, 9u);
  for (std::size_t i = 0; i < 3; ++i) EXPECT_EQ(r.history[i].epoch, i + 1);
  EXPECT_FALSE(r.diverged);
}

TEST(TrainLoop, OneSampleOverfits) {
  Network net(tiny_net(2), 3);
  SyntheticSpec s = tiny_spec();
  const SyntheticData d = gen_synthetic(s);
  Dataset one;
  one.videos = {d.train.videos[0]};
  one.labels = {1};
  TrainConfig c;
  c.lr0 = 0.05;
  c.epochs = 100;
  c.batch_size = 1;
  c.clip_length = 4;
  c.weight_decay = 0.0;
  const TrainResult r = train_loop(net, one, one, c);
  ASSERT_EQ(r.history.size(), 100u);
  EXPECT_LE(r.history.back().loss, 1e-3);
  // Non-increasing trend over ten-epoch averages, up to sampling jitter on the plateau.
  double prev = INFINITY;
  for (std::size_t w = 0; w < 10; ++w) {
    double mean = 0.0;
    for (std::size_t i = 0; i < 10; ++i) mean += r.history[w * 10 + i].loss / 10.0;
    EXPECT_LE(mean, prev * 1.01);
    prev = mean;
  }
  EXPECT_EQ(r.history.back().train_acc, 1.0);
}

TEST(TrainLoop, SeededRunsAreBitIdentical) {
  const SyntheticData d = gen_synthetic(tiny_spec());
  TrainConfig c;
  c.epochs = 2;
  c.batch_size = 4;
  c.clip_length = 4;
  c.seed = 17;
  Network a(tiny_net(4), 17), b(tiny_net(4), 17);
  const TrainResult ra = train_loop(a, d.train, d.val, c), rb = train_loop(b, d.train, d.val, c);
  EXPECT_EQ(history_csv(ra.history), history_csv(rb.history));
  for (const auto& [p, t] : a.params().params()) EXPECT_EQ(vec(t), vec(b.params().get(p))) << p;
}

TEST(TrainLoop, DivergenceKeepsLastFiniteState) {
  Network net(tiny_net(4), 4);
  const SyntheticData d = gen_synthetic(tiny_spec());
  TrainConfig c;
  c.lr0 = 1e300;
  c.momentum = 0.0;
  c.epochs = 3;
  c.batch_size = 8;
  c.clip_length = 4;
  const TrainResult r = train_loop(net, d.train, d.val, c);
  EXPECT_TRUE(r.diverged);
  EXPECT_FALSE(r.failure.empty());
  for (const auto& [p, t] : net.params().params())
    for (double v : t.values()) ASSERT_TRUE(std::isfinite(v)) << p;
}

TEST(TrainLoop, EmptyTrainingSetRejected) {
  Network net(tiny_net(4), 5);
  EXPECT_THROW(train_loop(net, Dataset{}, Dataset{}, TrainConfig{}), ConfigError);
}

TEST(HistoryCsv, Format) {
  const std::string csv = history_csv({{1, 0.5, 0.25, 1.0}});
  EXPECT_EQ(csv, "epoch,loss,train_acc,val_acc\n1,0.5,0.25,1\n");
}

TEST(ExperimentJson, RoundTripsShippedConfig) {
  const auto j = load_json_file(MTNET_CONFIG_DIR "/synthetic_train.json");
  const ExperimentConfig cfg = experiment_config_from_json(j);
  EXPECT_EQ(to_json(experiment_config_from_json(to_json(cfg))), to_json(cfg));
  auto bad = j;
  bad["train"]["learning_rate"] = 0.1;
  EXPECT_THROW(experiment_config_from_json(bad), ConfigError);
  bad = j;
  bad["train"]["batch_size"] = true;
  EXPECT_THROW(experiment_config_from_json(bad), ConfigError);
  EXPECT_THROW(load_json_file("/nonexistent/config.json"), IoError);
}
