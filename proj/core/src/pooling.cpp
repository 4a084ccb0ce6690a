// SPDX-License-Identifier: Apache-2.0
#include "mtnet/pooling.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

namespace mtn {

using detail::Node;

namespace {

// Flat list of window element offsets (within one C plane), `size` per output.
struct Windows {
  std::size_t size = 0;
  std::size_t outputs = 0;
  Triple out;
  std::vector<std::size_t> offsets;
};

Windows make_windows(const VolumeDims& d, Triple kernel, Triple stride) {
  Windows win;
  win.out = {window_extent(d.t, kernel.t, stride.t, 0, "T"), window_extent(d.h, kernel.h, stride.h, 0, "H"),
             window_extent(d.w, kernel.w, stride.w, 0, "W")};
  win.size = kernel.volume();
  win.outputs = win.out.volume();
  win.offsets.reserve(win.size * win.outputs);
  for (std::size_t ot = 0; ot < win.out.t; ++ot)
    for (std::size_t oh = 0; oh < win.out.h; ++oh)
      for (std::size_t ow = 0; ow < win.out.w; ++ow)
        for (std::size_t a = 0; a < kernel.t; ++a)
          for (std::size_t b = 0; b < kernel.h; ++b)
            for (std::size_t e = 0; e < kernel.w; ++e) {
              const std::size_t t = ot * stride.t + a, h = oh * stride.h + b, w = ow * stride.w + e;
              win.offsets.push_back((t * d.h + h) * d.w + w);
            }
  return win;
}

}  // namespace

Tensor softpool(const Tensor& input, Triple kernel, Triple stride) {
  const VolumeDims d = volume_dims(input, "softpool");
  const Windows win = make_windows(d, kernel, stride);
  const std::size_t planes = d.n * d.c;
  const std::size_t in_plane = d.channel_size();
  const std::size_t k = win.size;
  const double* x = input.values().data();
  std::vector<double> out(planes * win.outputs);
  std::vector<double> weights(planes * win.outputs * k);
  for (std::size_t pl = 0; pl < planes; ++pl) {
    const double* px = x + pl * in_plane;
    for (std::size_t o = 0; o < win.outputs; ++o) {
      const std::size_t* off = win.offsets.data() + o * k;
      double* wgt = weights.data() + (pl * win.outputs + o) * k;
      double mx = px[off[0]];
      for (std::size_t r = 1; r < k; ++r) mx = std::max(mx, px[off[r]]);
      double z = 0.0;
      for (std::size_t r = 0; r < k; ++r) z += (wgt[r] = std::exp(px[off[r]] - mx));
      // Accumulated relative to the max, so a constant window returns its value exactly.
      double s = 0.0;
      for (std::size_t r = 0; r < k; ++r) {
        wgt[r] /= z;
        s += wgt[r] * (px[off[r]] - mx);
      }
      out[pl * win.outputs + o] = mx + s;
    }
  }
  auto xn = input.node();
  std::vector<double> saved_out = out;
  return detail::make_result(
      d.shape_with(d.c, win.out.t, win.out.h, win.out.w), std::move(out), {&input},
      [xn, win, planes, in_plane, weights = std::move(weights), saved_out = std::move(saved_out)](Node& self) {
        auto& g = xn->grad_buffer();
        const std::size_t k = win.size;
        for (std::size_t pl = 0; pl < planes; ++pl) {
          const double* px = xn->values.data() + pl * in_plane;
          double* pg = g.data() + pl * in_plane;
          for (std::size_t o = 0; o < win.outputs; ++o) {
            const std::size_t idx = pl * win.outputs + o;
            const double gy = self.grad[idx];
            const double y = saved_out[idx];
            const std::size_t* off = win.offsets.data() + o * k;
            const double* wgt = weights.data() + idx * k;
            // d out / d a_j = w_j (1 + a_j - out)
            for (std::size_t r = 0; r < k; ++r) pg[off[r]] += gy * wgt[r] * (1.0 + px[off[r]] - y);
          }
        }
      });
}

Tensor pool(const Tensor& input, PoolKind kind, Triple kernel, Triple stride, bool training,
            std::mt19937_64* rng) {
  const VolumeDims d = volume_dims(input, "pool");
  const Windows win = make_windows(d, kernel, stride);
  if (kind == PoolKind::stochastic && training && rng == nullptr) {
    throw ConfigError("stochastic pooling in training mode needs a random source");
  }
  const std::size_t planes = d.n * d.c;
  const std::size_t in_plane = d.channel_size();
  const std::size_t k = win.size;
  const double* x = input.values().data();
  std::vector<double> out(planes * win.outputs);
  // Per-window backward coefficients d out / d a_r.
  std::vector<double> coef(planes * win.outputs * k, 0.0);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  for (std::size_t pl = 0; pl < planes; ++pl) {
    const double* px = x + pl * in_plane;
    for (std::size_t o = 0; o < win.outputs; ++o) {
      const std::size_t* off = win.offsets.data() + o * k;
      double* cf = coef.data() + (pl * win.outputs + o) * k;
      double& y = out[pl * win.outputs + o];
      switch (kind) {
        case PoolKind::avg: {
          double s = 0.0;
          for (std::size_t r = 0; r < k; ++r) s += px[off[r]];
          y = s / static_cast<double>(k);
          std::fill_n(cf, k, 1.0 / static_cast<double>(k));
          break;
        }
        case PoolKind::max: {
          std::size_t best = 0;
          for (std::size_t r = 1; r < k; ++r)
            if (px[off[r]] > px[off[best]]) best = r;
          y = px[off[best]];
          cf[best] = 1.0;
          break;
        }
        case PoolKind::stochastic: {
          double pos = 0.0;
          for (std::size_t r = 0; r < k; ++r) pos += std::max(px[off[r]], 0.0);
          const bool uniform = !(pos > 0.0);
          auto prob = [&](std::size_t r) {
            return uniform ? 1.0 / static_cast<double>(k) : std::max(px[off[r]], 0.0) / pos;
          };
          if (training) {
            const double u = unit(*rng);
            double acc = 0.0;
            std::size_t pick = k - 1;
            for (std::size_t r = 0; r < k; ++r) {
              acc += prob(r);
              if (u < acc) {
                pick = r;
                break;
              }
            }
            y = px[off[pick]];
            cf[pick] = 1.0;
          } else {
            double s = 0.0;
            for (std::size_t r = 0; r < k; ++r) s += prob(r) * px[off[r]];
            y = s;
            for (std::size_t r = 0; r < k; ++r) {
              if (uniform) {
                cf[r] = 1.0 / static_cast<double>(k);
              } else if (px[off[r]] > 0.0) {
                cf[r] = (2.0 * px[off[r]] - s) / pos;
              }
            }
          }
          break;
        }
      }
    }
  }
  auto xn = input.node();
  return detail::make_result(d.shape_with(d.c, win.out.t, win.out.h, win.out.w), std::move(out), {&input},
                             [xn, win, planes, in_plane, coef = std::move(coef)](Node& self) {
                               auto& g = xn->grad_buffer();
                               const std::size_t k = win.size;
                               for (std::size_t pl = 0; pl < planes; ++pl) {
                                 double* pg = g.data() + pl * in_plane;
                                 for (std::size_t o = 0; o < win.outputs; ++o) {
                                   const std::size_t idx = pl * win.outputs + o;
                                   const std::size_t* off = win.offsets.data() + o * k;
                                   const double* cf = coef.data() + idx * k;
                                   for (std::size_t r = 0; r < k; ++r) pg[off[r]] += self.grad[idx] * cf[r];
                                 }
                               }
                             });
}

namespace {

Tensor frame_reduce(const Tensor& input, double scale, const char* op) {
  const VolumeDims d = volume_dims(input, op);
  const std::size_t fs = d.frame_size();
  const auto x = input.values();
  std::vector<double> out(d.n * d.c * d.t);
  for (std::size_t k = 0; k < out.size(); ++k) {
    double s = 0.0;
    for (std::size_t j = 0; j < fs; ++j) s += x[k * fs + j];
    out[k] = s * scale;
  }
  auto xn = input.node();
  return detail::make_result(d.batched ? Shape{d.n, d.c, d.t} : Shape{d.c, d.t}, std::move(out), {&input},
                             [xn, fs, scale](Node& self) {
                               auto& g = xn->grad_buffer();
                               for (std::size_t k = 0; k < self.grad.size(); ++k)
                                 for (std::size_t j = 0; j < fs; ++j) g[k * fs + j] += self.grad[k] * scale;
                             });
}

}  // namespace

Tensor spatial_sum(const Tensor& input) { return frame_reduce(input, 1.0, "spatial_sum"); }

Tensor global_avg_pool(const Tensor& input) {
  const VolumeDims d = volume_dims(input, "global_avg_pool");
  if (d.frame_size() == 0) throw DimensionError("global_avg_pool: empty H x W extent");
  return frame_reduce(input, 1.0 / static_cast<double>(d.frame_size()), "global_avg_pool");
}

std::vector<double> adjacent_cosine(std::span<const double> framevecs, std::size_t channels, std::size_t frames) {
  if (frames < 2) throw DimensionError("adjacent_cosine: need at least 2 frames on the T axis");
  if (framevecs.size() != channels * frames) throw DimensionError("adjacent_cosine: size mismatch");
  std::vector<double> sims(frames - 1);
  for (std::size_t t = 0; t + 1 < frames; ++t) {
    double dot = 0.0, na = 0.0, nb = 0.0;
    for (std::size_t c = 0; c < channels; ++c) {
      const double a = framevecs[c * frames + t];
      const double b = framevecs[c * frames + t + 1];
      dot += a * b;
      na += a * a;
      nb += b * b;
    }
    if (na == 0.0 || nb == 0.0) {
      sims[t] = 0.0;
    } else {
      sims[t] = std::clamp(dot / (std::sqrt(na) * std::sqrt(nb)), -1.0, 1.0);
    }
  }
  return sims;
}

std::vector<double> adjacent_cosine(const Tensor& framevecs) {
  if (framevecs.rank() != 2) throw DimensionError("adjacent_cosine: expected a C x T matrix");
  return adjacent_cosine(framevecs.values(), framevecs.dim(0), framevecs.dim(1));
}

FrameSelection triplet_select(std::span<const double> similarities, std::size_t frames) {
  if (frames < 2) throw DimensionError("triplet_select: need at least 2 frames on the T axis");
  if (similarities.size() != frames - 1) {
    throw DimensionError("triplet_select: expected " + std::to_string(frames - 1) + " similarities");
  }
  FrameSelection sel;
  sel.odd_length = frames % 2 != 0;
  sel.scores.resize(frames);
  for (std::size_t t = 0; t < frames; ++t) {
    if (t == 0) {
      sel.scores[t] = 2.0 * similarities[0];
    } else if (t + 1 == frames) {
      sel.scores[t] = 2.0 * similarities[t - 1];
    } else {
      sel.scores[t] = similarities[t - 1] + similarities[t];
    }
  }
  std::vector<std::size_t> order(frames);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return sel.scores[a] < sel.scores[b]; });
  sel.indices.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(frames / 2));
  std::sort(sel.indices.begin(), sel.indices.end());
  return sel;
}

std::vector<FrameSelection> select_frames(const Tensor& volume) {
  const VolumeDims d = volume_dims(volume, "select_frames");
  std::vector<FrameSelection> out;
  out.reserve(d.n);
  NoGradGuard no_grad;
  const Tensor sums = spatial_sum(volume.detach());
  const std::size_t per = d.c * d.t;
  for (std::size_t n = 0; n < d.n; ++n) {
    const auto sims = adjacent_cosine(sums.values().subspan(n * per, per), d.c, d.t);
    out.push_back(triplet_select(sims, d.t));
  }
  return out;
}

Tensor gather_frames(const Tensor& input, const FrameSelection& selection) {
  return gather_frames(input, std::span<const FrameSelection>(&selection, 1));
}

Tensor gather_frames(const Tensor& input, std::span<const FrameSelection> selections) {
  const VolumeDims d = volume_dims(input, "gather_frames");
  if (selections.size() != d.n) throw DimensionError("gather_frames: need one selection per batch sample");
  const std::size_t kept = selections.empty() ? 0 : selections[0].indices.size();
  std::vector<std::size_t> src;  // source frame per (n, kept)
  src.reserve(d.n * kept);
  for (const auto& s : selections) {
    if (s.indices.size() != kept) throw DimensionError("gather_frames: selections keep different frame counts");
    for (auto i : s.indices) {
      if (i >= d.t) throw DimensionError("gather_frames: frame index " + std::to_string(i) + " out of range on T axis");
      src.push_back(i);
    }
  }
  const std::size_t fs = d.frame_size();
  const auto x = input.values();
  std::vector<double> out(d.n * d.c * kept * fs);
  for (std::size_t n = 0; n < d.n; ++n)
    for (std::size_t c = 0; c < d.c; ++c)
      for (std::size_t k = 0; k < kept; ++k)
        std::copy_n(x.begin() + ((n * d.c + c) * d.t + src[n * kept + k]) * fs, fs,
                    out.begin() + ((n * d.c + c) * kept + k) * fs);
  auto xn = input.node();
  return detail::make_result(d.shape_with(d.c, kept, d.h, d.w), std::move(out), {&input},
                             [xn, d, kept, fs, src = std::move(src)](Node& self) {
                               auto& g = xn->grad_buffer();
                               for (std::size_t n = 0; n < d.n; ++n)
                                 for (std::size_t c = 0; c < d.c; ++c)
                                   for (std::size_t k = 0; k < kept; ++k) {
                                     const double* gy = self.grad.data() + ((n * d.c + c) * kept + k) * fs;
                                     double* gx = g.data() + ((n * d.c + c) * d.t + src[n * kept + k]) * fs;
                                     for (std::size_t j = 0; j < fs; ++j) gx[j] += gy[j];
                                   }
                             });
}

}  // namespace mtn
