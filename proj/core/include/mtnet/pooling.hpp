// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <random>
#include <span>
#include <vector>

#include "mtnet/ops.hpp"
#include "mtnet/tensor.hpp"

namespace mtn {

// ---- spatial / spatio-temporal downsampling --------------------------------

/// Softmax-weighted pooling: each window yields sum_r e^{a_r} a_r / sum_k e^{a_k}.
/// The window max is subtracted inside the exponentials, which leaves the
/// weights unchanged. Kernel and stride are (T, H, W); no padding.
Tensor softpool(const Tensor& input, Triple kernel, Triple stride);

/// Per-frame softpool with a (kh x kw) window; the T axis is untouched.
inline Tensor softpool_spatial(const Tensor& input, std::size_t kh = 2, std::size_t kw = 2,
                               std::size_t sh = 2, std::size_t sw = 2) {
  return softpool(input, {1, kh, kw}, {1, sh, sw});
}

enum class PoolKind { avg, max, stochastic };

/// Baseline pooling. Stochastic pooling samples an element with probability
/// proportional to its positive part in training mode and returns the
/// probability-weighted average in eval mode; a window with no positive
/// element falls back to uniform probabilities. `rng` is required for
/// stochastic pooling in training mode.
Tensor pool(const Tensor& input, PoolKind kind, Triple kernel, Triple stride, bool training = false,
            std::mt19937_64* rng = nullptr);

/// Sum over H, W: volume -> [C x T] (or [N x C x T]).
Tensor spatial_sum(const Tensor& input);

/// Mean over H, W: volume -> [C x T] (or [N x C x T]).
Tensor global_avg_pool(const Tensor& input);

// ---- temporal triplet cosine frame selection ------------------------------

struct FrameSelection {
  std::vector<std::size_t> indices;  // strictly increasing, |indices| == floor(T/2)
  std::vector<double> scores;        // one triplet score per frame
  bool odd_length = false;           // T was odd; floor(T/2) frames were kept
};

/// Cosine similarity of consecutive frame vectors of a [C x T] matrix stored
/// channel-major. A zero-magnitude frame gives similarity 0.
std::vector<double> adjacent_cosine(std::span<const double> framevecs, std::size_t channels, std::size_t frames);
std::vector<double> adjacent_cosine(const Tensor& framevecs);

/// Keeps the floor(T/2) frames with the lowest triplet score
/// score(t) = sim(t-1, t) + sim(t, t+1); boundary frames use twice their single
/// similarity. Ties go to the lower index. Indices are returned ascending.
FrameSelection triplet_select(std::span<const double> similarities, std::size_t frames);

/// Selection for every sample of a (spatially pooled) volume, computed from
/// its spatial sums. Values only; no gradient flows through the choice.
std::vector<FrameSelection> select_frames(const Tensor& volume);

/// Copies the selected frames in order. Unselected frames receive no gradient.
Tensor gather_frames(const Tensor& input, const FrameSelection& selection);
/// Batched variant: one selection per sample.
Tensor gather_frames(const Tensor& input, std::span<const FrameSelection> selections);

}  // namespace mtn
