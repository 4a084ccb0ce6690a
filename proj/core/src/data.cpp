// SPDX-License-Identifier: Apache-2.0
#include "mtnet/data.hpp"

#include <algorithm>

#include "mtnet/errors.hpp"

namespace mtn {

namespace {

void check_video(const Tensor& video, std::size_t length, std::size_t stride) {
  if (video.rank() != 4) throw DimensionError("sample_clip: video must be C x T x H x W, got " + shape_str(video.shape()));
  if (length == 0 || stride == 0) throw ConfigError("sample_clip: clip length and stride must be >= 1");
  const std::size_t need = (length - 1) * stride + 1;
  if (video.dim(1) < need) {
    throw DimensionError("sample_clip: video has " + std::to_string(video.dim(1)) + " frames, a clip of " +
                         std::to_string(length) + " at stride " + std::to_string(stride) + " needs at least " +
                         std::to_string(need));
  }
}

std::size_t last_start(const Tensor& video, std::size_t length, std::size_t stride) {
  return video.dim(1) - ((length - 1) * stride + 1);
}

}  // namespace

Tensor sample_clip(const Tensor& video, std::size_t length, std::size_t stride, std::size_t start) {
  check_video(video, length, stride);
  if (start > last_start(video, length, stride)) {
    throw DimensionError("sample_clip: start frame " + std::to_string(start) + " leaves too few frames");
  }
  const std::size_t C = video.dim(0), T = video.dim(1), plane = video.dim(2) * video.dim(3);
  const auto src = video.values();
  std::vector<double> out(C * length * plane);
  for (std::size_t c = 0; c < C; ++c)
    for (std::size_t t = 0; t < length; ++t) {
      const auto from = src.begin() + static_cast<std::ptrdiff_t>((c * T + start + t * stride) * plane);
      std::copy(from, from + static_cast<std::ptrdiff_t>(plane), out.begin() + static_cast<std::ptrdiff_t>((c * length + t) * plane));
    }
  return Tensor({C, length, video.dim(2), video.dim(3)}, std::move(out));
}

Tensor sample_clip(const Tensor& video, std::size_t length, std::size_t stride, std::mt19937_64& rng) {
  check_video(video, length, stride);
  std::uniform_int_distribution<std::size_t> dist(0, last_start(video, length, stride));
  return sample_clip(video, length, stride, dist(rng));
}

Tensor center_clip(const Tensor& video, std::size_t length, std::size_t stride) {
  check_video(video, length, stride);
  return sample_clip(video, length, stride, last_start(video, length, stride) / 2);
}

std::string_view to_string(Direction d) { return d == Direction::left ? "left" : "right"; }

Direction parse_direction(std::string_view name) {
  if (name == "left") return Direction::left;
  if (name == "right") return Direction::right;
  throw ConfigError("unknown motion direction '" + std::string(name) + "'");
}

SyntheticSpec SyntheticSpec::default_task() {
  SyntheticSpec s;
  s.classes = {{Direction::left, 1, "square"},
               {Direction::left, 2, "square"},
               {Direction::right, 1, "square"},
               {Direction::right, 2, "square"}};
  return s;
}

void SyntheticSpec::validate() const {
  if (classes.size() < 2) throw ConfigError("synthetic task needs at least two classes");
  if (channels == 0 || frames == 0 || height == 0 || width == 0) throw ConfigError("synthetic video dims must be >= 1");
  if (square == 0 || square > height || square > width) throw ConfigError("square size must fit inside the frame");
  if (!(noise >= 0.0)) throw ConfigError("noise level must be >= 0");
  bool speed_pair = false;
  for (std::size_t i = 0; i < classes.size(); ++i) {
    if (classes[i].pattern != "square") throw ConfigError("unknown pattern '" + classes[i].pattern + "'");
    if (classes[i].speed == 0) throw ConfigError("class speed must be >= 1");
    for (std::size_t j = 0; j < i; ++j) {
      const bool same_motion = classes[i].direction == classes[j].direction && classes[i].pattern == classes[j].pattern;
      if (same_motion && classes[i].speed == classes[j].speed) {
        throw ConfigError("classes " + std::to_string(j) + " and " + std::to_string(i) + " are identical");
      }
      speed_pair = speed_pair || same_motion;
    }
  }
  if (!speed_pair) throw ConfigError("at least two classes must differ only in speed");
}

std::size_t square_column(const SyntheticSpec& spec, std::size_t label, std::size_t x0, std::size_t t) {
  const ClassSpec& c = spec.classes.at(label);
  const std::size_t step = (c.speed * t) % spec.width;
  return c.direction == Direction::right ? (x0 + step) % spec.width : (x0 + spec.width - step) % spec.width;
}

Tensor render_video(const SyntheticSpec& spec, std::size_t label, std::size_t y0, std::size_t x0,
                    std::mt19937_64& rng) {
  const std::size_t C = spec.channels, T = spec.frames, H = spec.height, W = spec.width;
  std::vector<double> v(C * T * H * W, 0.0);
  for (std::size_t t = 0; t < T; ++t) {
    const std::size_t x = square_column(spec, label, x0, t);
    for (std::size_t c = 0; c < C; ++c)
      for (std::size_t dy = 0; dy < spec.square; ++dy)
        for (std::size_t dx = 0; dx < spec.square; ++dx) {
          const std::size_t yy = (y0 + dy) % H, xx = (x + dx) % W;
          v[((c * T + t) * H + yy) * W + xx] = 1.0;
        }
  }
  if (spec.noise > 0.0) {
    std::uniform_real_distribution<double> noise(-spec.noise, spec.noise);
    for (auto& x : v) x += noise(rng);
  }
  return Tensor({C, T, H, W}, std::move(v));
}

SyntheticData gen_synthetic(const SyntheticSpec& spec) {
  spec.validate();
  SyntheticData out;
  const auto fill = [&spec](Dataset& ds, std::uint64_t split, std::size_t per_class) {
    for (std::size_t label = 0; label < spec.classes.size(); ++label)
      for (std::size_t i = 0; i < per_class; ++i) {
        std::seed_seq seq{spec.seed, split, static_cast<std::uint64_t>(label), static_cast<std::uint64_t>(i)};
        std::mt19937_64 rng(seq);
        std::uniform_int_distribution<std::size_t> ys(0, spec.height - spec.square);
        std::uniform_int_distribution<std::size_t> xs(0, spec.width - 1);
        const std::size_t y0 = ys(rng);
        const std::size_t x0 = xs(rng);
        ds.videos.push_back(render_video(spec, label, y0, x0, rng));
        ds.labels.push_back(static_cast<int>(label));
      }
  };
  fill(out.train, 0, spec.train_per_class);
  fill(out.val, 1, spec.val_per_class);
  return out;
}

Tensor stack_clips(const std::vector<Tensor>& clips) {
  if (clips.empty()) throw DimensionError("stack_clips: no clips");
  const Shape s = clips.front().shape();
  if (s.size() != 4) throw DimensionError("stack_clips: clips must be C x T x H x W");
  std::vector<double> out;
  out.reserve(clips.size() * shape_numel(s));
  for (const auto& c : clips) {
    if (c.shape() != s) throw DimensionError("stack_clips: clip shapes differ");
    out.insert(out.end(), c.values().begin(), c.values().end());
  }
  Shape batched{clips.size()};
  batched.insert(batched.end(), s.begin(), s.end());
  return Tensor(std::move(batched), std::move(out));
}

}  // namespace mtn
