// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <random>
#include <string>
#include <string_view>
#include <vector>

#include "mtnet/tensor.hpp"

namespace mtn {

/// Frames start, start + stride, ... of a C x T_full x H x W video.
Tensor sample_clip(const Tensor& video, std::size_t length, std::size_t stride, std::size_t start);
/// Same with the start drawn uniformly over the valid range.
Tensor sample_clip(const Tensor& video, std::size_t length, std::size_t stride, std::mt19937_64& rng);
/// The middle window.
Tensor center_clip(const Tensor& video, std::size_t length, std::size_t stride);

enum class Direction { left, right };

struct ClassSpec {
  Direction direction = Direction::right;
  std::size_t speed = 1;  // pixels per frame
  std::string pattern = "square";
};

/// A bright square moving horizontally (with wrap-around) over a dark field.
struct SyntheticSpec {
  std::vector<ClassSpec> classes;
  std::size_t channels = 1;
  std::size_t frames = 16;
  std::size_t height = 16;
  std::size_t width = 16;
  std::size_t square = 4;
  std::size_t train_per_class = 16;
  std::size_t val_per_class = 8;
  double noise = 0.1;  // amplitude of uniform noise in [-noise, noise]
  std::uint64_t seed = 0;

  /// left x1, left x2, right x1, right x2.
  static SyntheticSpec default_task();
  void validate() const;
};

std::string_view to_string(Direction d);
Direction parse_direction(std::string_view name);

struct Dataset {
  std::vector<Tensor> videos;  // C x T_full x H x W each
  std::vector<int> labels;

  std::size_t size() const { return videos.size(); }
};

struct SyntheticData {
  Dataset train;
  Dataset val;
};

/// Renders one video of class `label` with the square's top-left corner at
/// (y0, x0) in frame 0; noise is drawn from `rng`.
Tensor render_video(const SyntheticSpec& spec, std::size_t label, std::size_t y0, std::size_t x0, std::mt19937_64& rng);

/// Square column at frame t for a start column x0, wrapping around the width.
std::size_t square_column(const SyntheticSpec& spec, std::size_t label, std::size_t x0, std::size_t t);

/// Deterministic in spec.seed. Every sample draws its position and noise
/// from its own generator, ordered class by class.
SyntheticData gen_synthetic(const SyntheticSpec& spec);

/// Stacks C x T x H x W clips into N x C x T x H x W.
Tensor stack_clips(const std::vector<Tensor>& clips);

}  // namespace mtn
