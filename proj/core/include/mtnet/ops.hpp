// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cstddef>
#include <optional>
#include <span>
#include <vector>

#include "mtnet/tensor.hpp"

namespace mtn {

/// Per-axis (time, height, width) integer triple.
struct Triple {
  std::size_t t = 1;
  std::size_t h = 1;
  std::size_t w = 1;

  friend bool operator==(const Triple&, const Triple&) = default;
  std::size_t volume() const { return t * h * w; }
};

/// Activation volume geometry. Rank-4 tensors (C x T x H x W) are a batch of
/// one; rank-5 tensors carry a leading batch axis.
struct VolumeDims {
  std::size_t n = 1;
  std::size_t c = 0;
  std::size_t t = 0;
  std::size_t h = 0;
  std::size_t w = 0;
  bool batched = false;

  std::size_t frame_size() const { return h * w; }
  std::size_t channel_size() const { return t * h * w; }
  std::size_t sample_size() const { return c * t * h * w; }
  std::size_t numel() const { return n * sample_size(); }
  Shape shape() const;
  Shape shape_with(std::size_t c, std::size_t t, std::size_t h, std::size_t w) const;
};

VolumeDims volume_dims(const Tensor& x, const char* op);

/// Output extent of a sliding window: (in + 2 pad - kernel) / stride + 1.
std::size_t window_extent(std::size_t in, std::size_t kernel, std::size_t stride, std::size_t pad,
                          const char* axis);

// ---- convolution and normalization ---------------------------------------

/// 3D cross-correlation. weight is C_out x C_in x K_t x K_h x K_w.
Tensor conv3d(const Tensor& input, const Tensor& weight, const std::optional<Tensor>& bias,
              Triple stride = {}, Triple padding = {0, 0, 0});

/// Running statistics owned by a batch-norm layer.
struct BatchNormStats {
  Tensor mean;  // [C], no gradient
  Tensor var;   // [C], no gradient
  static BatchNormStats init(std::size_t channels);
};

inline constexpr double kBatchNormEps = 1e-5;
inline constexpr double kBatchNormMomentum = 0.9;

/// Per-channel normalization over (batch, T, H, W). In training mode uses the
/// biased batch variance and updates `stats` as
/// running = 0.9 * running + 0.1 * batch (unbiased variance for the update).
Tensor batch_norm3d(const Tensor& input, const Tensor& gamma, const Tensor& beta,
                    BatchNormStats& stats, bool training, double eps = kBatchNormEps);

// ---- elementwise ------------------------------------------------------------

enum class Activation { relu, sigmoid, tanh };

Tensor activation(const Tensor& input, Activation kind);
inline Tensor relu(const Tensor& x) { return activation(x, Activation::relu); }
inline Tensor sigmoid(const Tensor& x) { return activation(x, Activation::sigmoid); }
inline Tensor tanh(const Tensor& x) { return activation(x, Activation::tanh); }

Tensor add(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
/// scale * x + shift, elementwise.
Tensor affine(const Tensor& x, double scale, double shift);
/// x [H] or [N x H] times a vector [H] broadcast over rows.
Tensor mul_rowwise(const Tensor& x, const Tensor& v);

// ---- shape plumbing ------------------------------------------------------

/// Channel concatenation; `a` occupies channels [0, C_a).
Tensor concat_channels(const Tensor& a, const Tensor& b);
/// Channels [begin, end) of a volume.
Tensor slice_channels(const Tensor& x, std::size_t begin, std::size_t end);

/// Trilinear resampling to (T, H, W) with align_corners = false:
/// src = (i + 0.5) * in / out - 0.5, clamped to [0, in - 1].
Tensor trilinear_interp(const Tensor& input, Triple target);

/// Multiplies a volume N x C x T x H x W by a gate N x C x T broadcast over H, W.
Tensor gate_multiply(const Tensor& volume, const Tensor& gate);

/// Mean over T, H, W: volume -> [C] or [N x C].
Tensor global_mean(const Tensor& volume);

// ---- dense algebra used by recurrent cells and the classifier head ----------

/// x [in] or [N x in], weight [out x in], bias [out] -> [out] or [N x out].
Tensor linear(const Tensor& x, const Tensor& weight, const std::optional<Tensor>& bias);
/// Feature concatenation along the last axis of two rank-1 or rank-2 tensors.
Tensor concat_features(const Tensor& a, const Tensor& b);
/// Step t of a sequence [C x T] or [N x C x T] -> [C] or [N x C].
Tensor time_step(const Tensor& seq, std::size_t t);
/// Inverse of time_step over all steps: [C] or [N x C] per step -> [C x T] or [N x C x T].
Tensor stack_steps(const std::vector<Tensor>& steps);

// ---- losses and reductions ------------------------------------------------

/// Row-wise softmax of logits [K] or [N x K] (no gradient).
std::vector<double> softmax(std::span<const double> logits, std::size_t classes);
/// Mean cross-entropy of softmaxed logits against integer labels.
Tensor cross_entropy(const Tensor& logits, std::span<const int> labels);
/// sum_i x_i * weights_i, a scalar.
Tensor weighted_sum(const Tensor& x, std::span<const double> weights);

}  // namespace mtn
