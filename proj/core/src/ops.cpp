// SPDX-License-Identifier: Apache-2.0
#include "mtnet/ops.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace mtn {

using detail::Node;

Shape VolumeDims::shape() const { return shape_with(c, t, h, w); }

Shape VolumeDims::shape_with(std::size_t c_, std::size_t t_, std::size_t h_, std::size_t w_) const {
  if (batched) return {n, c_, t_, h_, w_};
  return {c_, t_, h_, w_};
}

VolumeDims volume_dims(const Tensor& x, const char* op) {
  const auto& s = x.shape();
  VolumeDims d;
  if (s.size() == 4) {
    d = {1, s[0], s[1], s[2], s[3], false};
  } else if (s.size() == 5) {
    d = {s[0], s[1], s[2], s[3], s[4], true};
  } else {
    throw DimensionError(std::string(op) + ": expected a C x T x H x W volume (optionally batched), got " +
                         shape_str(s));
  }
  return d;
}

std::size_t window_extent(std::size_t in, std::size_t kernel, std::size_t stride, std::size_t pad,
                          const char* axis) {
  if (stride == 0) throw DimensionError(std::string("stride must be >= 1 on axis ") + axis);
  if (kernel == 0 || kernel > in + 2 * pad) {
    throw DimensionError(std::string("kernel extent ") + std::to_string(kernel) +
                         " exceeds padded input extent " + std::to_string(in + 2 * pad) +
                         " on axis " + axis);
  }
  return (in + 2 * pad - kernel) / stride + 1;
}

namespace {

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
  }
}

// Range of output positions o in [0, out) whose input index o*stride + k - pad
// lies inside [0, in). Returns an empty range as lo > hi.
struct Range {
  long lo;
  long hi;
};

Range valid_outputs(std::size_t in, std::size_t out, std::size_t stride, std::size_t k, std::size_t pad) {
  const long s = static_cast<long>(stride);
  const long off = static_cast<long>(k) - static_cast<long>(pad);
  long lo = 0;
  if (off < 0) lo = (-off + s - 1) / s;
  long hi = (static_cast<long>(in) - 1 - off);
  hi = hi < 0 ? -1 : hi / s;
  hi = std::min(hi, static_cast<long>(out) - 1);
  return {lo, hi};
}

struct ConvGeometry {
  VolumeDims in;
  std::size_t co, kt, kh, kw;
  Triple stride, pad;
  std::size_t to, ho, wo;
};

// Calls fn(out_offset, in_offset, weight_offset, count) for each
// contiguous run of output columns touched by one kernel tap. Shared by the
// forward pass and both backward passes so the index arithmetic lives once.
template <typename Fn>
void for_each_tap(const ConvGeometry& g, std::size_t n, std::size_t co, std::size_t ci, Fn&& fn) {
  const auto& d = g.in;
  const std::size_t out_base = (n * g.co + co) * g.to * g.ho * g.wo;
  const std::size_t in_base = (n * d.c + ci) * d.t * d.h * d.w;
  const std::size_t w_base = (co * d.c + ci) * g.kt * g.kh * g.kw;
  for (std::size_t a = 0; a < g.kt; ++a) {
    const Range rt = valid_outputs(d.t, g.to, g.stride.t, a, g.pad.t);
    for (std::size_t b = 0; b < g.kh; ++b) {
      const Range rh = valid_outputs(d.h, g.ho, g.stride.h, b, g.pad.h);
      for (std::size_t e = 0; e < g.kw; ++e) {
        const Range rw = valid_outputs(d.w, g.wo, g.stride.w, e, g.pad.w);
        if (rw.lo > rw.hi) continue;
        const std::size_t w_off = w_base + (a * g.kh + b) * g.kw + e;
        const std::size_t count = static_cast<std::size_t>(rw.hi - rw.lo + 1);
        for (long ot = rt.lo; ot <= rt.hi; ++ot) {
          const std::size_t it = ot * g.stride.t + a - g.pad.t;
          for (long oh = rh.lo; oh <= rh.hi; ++oh) {
            const std::size_t ih = oh * g.stride.h + b - g.pad.h;
            const std::size_t iw0 = rw.lo * g.stride.w + e - g.pad.w;
            fn(out_base + (ot * g.ho + oh) * g.wo + rw.lo, in_base + (it * d.h + ih) * d.w + iw0, w_off,
               count);
          }
        }
      }
    }
  }
}

}  // namespace

Tensor conv3d(const Tensor& input, const Tensor& weight, const std::optional<Tensor>& bias, Triple stride,
              Triple padding) {
  const VolumeDims d = volume_dims(input, "conv3d");
  const auto& ws = weight.shape();
  if (ws.size() != 5) throw DimensionError("conv3d: weight must be C_out x C_in x K_t x K_h x K_w, got " + shape_str(ws));
  if (ws[1] != d.c) {
    throw DimensionError("conv3d: channel axis mismatch, input has " + std::to_string(d.c) +
                         " channels but weight expects " + std::to_string(ws[1]));
  }
  if (bias && (bias->rank() != 1 || bias->dim(0) != ws[0])) {
    throw DimensionError("conv3d: bias must have C_out = " + std::to_string(ws[0]) + " entries");
  }
  ConvGeometry g;
  g.in = d;
  g.co = ws[0];
  g.kt = ws[2];
  g.kh = ws[3];
  g.kw = ws[4];
  g.stride = stride;
  g.pad = padding;
  g.to = window_extent(d.t, g.kt, stride.t, padding.t, "T");
  g.ho = window_extent(d.h, g.kh, stride.h, padding.h, "H");
  g.wo = window_extent(d.w, g.kw, stride.w, padding.w, "W");

  const std::size_t out_plane = g.to * g.ho * g.wo;
  std::vector<double> out(d.n * g.co * out_plane, 0.0);
  const double* x = input.values().data();
  const double* wv = weight.values().data();
  const std::size_t sw = stride.w;
  for (std::size_t n = 0; n < d.n; ++n) {
    for (std::size_t co = 0; co < g.co; ++co) {
      if (bias) std::fill_n(out.begin() + (n * g.co + co) * out_plane, out_plane, bias->values()[co]);
      for (std::size_t ci = 0; ci < d.c; ++ci) {
        for_each_tap(g, n, co, ci, [&](std::size_t o, std::size_t i, std::size_t wi, std::size_t count) {
          const double k = wv[wi];
          double* po = out.data() + o;
          const double* pi = x + i;
          for (std::size_t j = 0; j < count; ++j) po[j] += k * pi[j * sw];
        });
      }
    }
  }

  auto in_node = input.node();
  auto w_node = weight.node();
  std::shared_ptr<Node> b_node = bias ? bias->node() : nullptr;
  const bool has_bias = bias.has_value();
  return detail::make_result(
      {d.batched ? Shape{d.n, g.co, g.to, g.ho, g.wo} : Shape{g.co, g.to, g.ho, g.wo}}, std::move(out),
      {&input, &weight, has_bias ? &*bias : nullptr}, [g, in_node, w_node, b_node](Node& self) {
        const auto& gy = self.grad;
        const std::size_t out_plane = g.to * g.ho * g.wo;
        const std::size_t sw = g.stride.w;
        const auto& d = g.in;
        double* gx = in_node->requires_grad ? in_node->grad_buffer().data() : nullptr;
        double* gw = w_node->requires_grad ? w_node->grad_buffer().data() : nullptr;
        const double* x = in_node->values.data();
        const double* wv = w_node->values.data();
        for (std::size_t n = 0; n < d.n; ++n) {
          for (std::size_t co = 0; co < g.co; ++co) {
            if (b_node && b_node->requires_grad) {
              double s = 0.0;
              const double* p = gy.data() + (n * g.co + co) * out_plane;
              for (std::size_t j = 0; j < out_plane; ++j) s += p[j];
              b_node->grad_buffer()[co] += s;
            }
            for (std::size_t ci = 0; ci < d.c; ++ci) {
              for_each_tap(g, n, co, ci, [&](std::size_t o, std::size_t i, std::size_t wi, std::size_t count) {
                const double* pg = gy.data() + o;
                if (gx) {
                  const double k = wv[wi];
                  double* px = gx + i;
                  for (std::size_t j = 0; j < count; ++j) px[j * sw] += k * pg[j];
                }
                if (gw) {
                  const double* pi = x + i;
                  double s = 0.0;
                  for (std::size_t j = 0; j < count; ++j) s += pg[j] * pi[j * sw];
                  gw[wi] += s;
                }
              });
            }
          }
        }
      });
}

BatchNormStats BatchNormStats::init(std::size_t channels) {
  return {Tensor::zeros({channels}), Tensor::full({channels}, 1.0)};
}

Tensor batch_norm3d(const Tensor& input, const Tensor& gamma, const Tensor& beta, BatchNormStats& stats,
                    bool training, double eps) {
  const VolumeDims d = volume_dims(input, "batch_norm3d");
  if (gamma.numel() != d.c || beta.numel() != d.c) {
    throw DimensionError("batch_norm3d: gamma/beta must have " + std::to_string(d.c) + " entries (channel axis)");
  }
  if (stats.mean.numel() != d.c || stats.var.numel() != d.c) {
    throw DimensionError("batch_norm3d: running statistics must have " + std::to_string(d.c) + " entries");
  }
  const std::size_t plane = d.channel_size();
  const std::size_t m = d.n * plane;
  const double* x = input.values().data();
  std::vector<double> mean(d.c), invstd(d.c);
  for (std::size_t c = 0; c < d.c; ++c) {
    if (training) {
      double s = 0.0;
      for (std::size_t n = 0; n < d.n; ++n) {
        const double* p = x + (n * d.c + c) * plane;
        for (std::size_t j = 0; j < plane; ++j) s += p[j];
      }
      const double mu = m ? s / static_cast<double>(m) : 0.0;
      double v = 0.0;
      for (std::size_t n = 0; n < d.n; ++n) {
        const double* p = x + (n * d.c + c) * plane;
        for (std::size_t j = 0; j < plane; ++j) v += (p[j] - mu) * (p[j] - mu);
      }
      const double var = m ? v / static_cast<double>(m) : 0.0;
      mean[c] = mu;
      invstd[c] = 1.0 / std::sqrt(var + eps);
      auto rm = stats.mean.mutable_values();
      auto rv = stats.var.mutable_values();
      const double unbiased = m > 1 ? var * static_cast<double>(m) / static_cast<double>(m - 1) : var;
      rm[c] = kBatchNormMomentum * rm[c] + (1.0 - kBatchNormMomentum) * mu;
      rv[c] = kBatchNormMomentum * rv[c] + (1.0 - kBatchNormMomentum) * unbiased;
    } else {
      mean[c] = stats.mean.values()[c];
      invstd[c] = 1.0 / std::sqrt(stats.var.values()[c] + eps);
    }
  }

  std::vector<double> xhat(input.numel());
  std::vector<double> out(input.numel());
  const double* gm = gamma.values().data();
  const double* bt = beta.values().data();
  for (std::size_t n = 0; n < d.n; ++n) {
    for (std::size_t c = 0; c < d.c; ++c) {
      const std::size_t base = (n * d.c + c) * plane;
      for (std::size_t j = 0; j < plane; ++j) {
        xhat[base + j] = (x[base + j] - mean[c]) * invstd[c];
        out[base + j] = gm[c] * xhat[base + j] + bt[c];
      }
    }
  }

  auto in_node = input.node();
  auto g_node = gamma.node();
  auto b_node = beta.node();
  return detail::make_result(
      input.shape(), std::move(out), {&input, &gamma, &beta},
      [d, training, in_node, g_node, b_node, xhat = std::move(xhat), invstd = std::move(invstd)](Node& self) {
        const auto& gy = self.grad;
        const std::size_t plane = d.channel_size();
        const double m = static_cast<double>(d.n * plane);
        const double* gm = g_node->values.data();
        for (std::size_t c = 0; c < d.c; ++c) {
          double sum_dy = 0.0, sum_dy_xhat = 0.0;
          for (std::size_t n = 0; n < d.n; ++n) {
            const std::size_t base = (n * d.c + c) * plane;
            for (std::size_t j = 0; j < plane; ++j) {
              sum_dy += gy[base + j];
              sum_dy_xhat += gy[base + j] * xhat[base + j];
            }
          }
          if (g_node->requires_grad) g_node->grad_buffer()[c] += sum_dy_xhat;
          if (b_node->requires_grad) b_node->grad_buffer()[c] += sum_dy;
          if (!in_node->requires_grad) continue;
          auto& gx = in_node->grad_buffer();
          const double k = gm[c] * invstd[c];
          for (std::size_t n = 0; n < d.n; ++n) {
            const std::size_t base = (n * d.c + c) * plane;
            for (std::size_t j = 0; j < plane; ++j) {
              if (training) {
                gx[base + j] += k * (gy[base + j] - sum_dy / m - xhat[base + j] * sum_dy_xhat / m);
              } else {
                gx[base + j] += k * gy[base + j];
              }
            }
          }
        }
      });
}

Tensor activation(const Tensor& input, Activation kind) {
  const auto x = input.values();
  std::vector<double> y(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    switch (kind) {
      case Activation::relu: y[i] = x[i] > 0.0 ? x[i] : 0.0; break;
      case Activation::sigmoid: y[i] = 1.0 / (1.0 + std::exp(-x[i])); break;
      case Activation::tanh: y[i] = std::tanh(x[i]); break;
    }
  }
  auto in_node = input.node();
  std::vector<double> saved = y;
  return detail::make_result(input.shape(), std::move(y), {&input},
                             [kind, in_node, saved = std::move(saved)](Node& self) {
                               auto& gx = in_node->grad_buffer();
                               const auto& gy = self.grad;
                               for (std::size_t i = 0; i < gy.size(); ++i) {
                                 const double s = saved[i];
                                 switch (kind) {
                                   // subgradient at 0 is 0
                                   case Activation::relu: gx[i] += s > 0.0 ? gy[i] : 0.0; break;
                                   case Activation::sigmoid: gx[i] += gy[i] * s * (1.0 - s); break;
                                   case Activation::tanh: gx[i] += gy[i] * (1.0 - s * s); break;
                                 }
                               }
                             });
}

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  const auto x = a.values(), y = b.values();
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] + y[i];
  auto an = a.node(), bn = b.node();
  return detail::make_result(a.shape(), std::move(out), {&a, &b}, [an, bn](Node& self) {
    for (auto* p : {an.get(), bn.get()}) {
      if (!p->requires_grad) continue;
      auto& g = p->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    }
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mul");
  const auto x = a.values(), y = b.values();
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] * y[i];
  auto an = a.node(), bn = b.node();
  return detail::make_result(a.shape(), std::move(out), {&a, &b}, [an, bn](Node& self) {
    if (an->requires_grad) {
      auto& g = an->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * bn->values[i];
    }
    if (bn->requires_grad) {
      auto& g = bn->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * an->values[i];
    }
  });
}

Tensor affine(const Tensor& x, double scale, double shift) {
  const auto v = x.values();
  std::vector<double> out(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) out[i] = scale * v[i] + shift;
  auto xn = x.node();
  return detail::make_result(x.shape(), std::move(out), {&x}, [xn, scale](Node& self) {
    auto& g = xn->grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += scale * self.grad[i];
  });
}

Tensor mul_rowwise(const Tensor& x, const Tensor& v) {
  if (v.rank() != 1 || x.rank() < 1 || x.rank() > 2 || x.shape().back() != v.dim(0)) {
    throw DimensionError("mul_rowwise: expected [H] or [N x H] times [H], got " + shape_str(x.shape()) + " and " +
                         shape_str(v.shape()));
  }
  const std::size_t width = v.numel();
  const auto xv = x.values();
  std::vector<double> out(xv.size());
  for (std::size_t i = 0; i < xv.size(); ++i) out[i] = xv[i] * v.values()[i % width];
  auto xn = x.node(), vn = v.node();
  return detail::make_result(x.shape(), std::move(out), {&x, &v}, [xn, vn, width](Node& self) {
    for (std::size_t i = 0; i < self.grad.size(); ++i) {
      if (xn->requires_grad) xn->grad_buffer()[i] += self.grad[i] * vn->values[i % width];
      if (vn->requires_grad) vn->grad_buffer()[i % width] += self.grad[i] * xn->values[i];
    }
  });
}

Tensor concat_channels(const Tensor& a, const Tensor& b) {
  const VolumeDims da = volume_dims(a, "concat_channels");
  const VolumeDims db = volume_dims(b, "concat_channels");
  if (da.batched != db.batched || da.n != db.n) throw DimensionError("concat_channels: batch axis mismatch");
  if (da.t != db.t) throw DimensionError("concat_channels: T axis mismatch");
  if (da.h != db.h) throw DimensionError("concat_channels: H axis mismatch");
  if (da.w != db.w) throw DimensionError("concat_channels: W axis mismatch");
  const std::size_t sa = da.sample_size(), sb = db.sample_size();
  std::vector<double> out(da.n * (sa + sb));
  const auto x = a.values(), y = b.values();
  for (std::size_t n = 0; n < da.n; ++n) {
    std::copy_n(x.begin() + n * sa, sa, out.begin() + n * (sa + sb));
    std::copy_n(y.begin() + n * sb, sb, out.begin() + n * (sa + sb) + sa);
  }
  auto an = a.node(), bn = b.node();
  return detail::make_result(da.shape_with(da.c + db.c, da.t, da.h, da.w), std::move(out), {&a, &b},
                             [an, bn, n_batch = da.n, sa, sb](Node& self) {
                               for (std::size_t n = 0; n < n_batch; ++n) {
                                 const double* g = self.grad.data() + n * (sa + sb);
                                 if (an->requires_grad) {
                                   double* ga = an->grad_buffer().data() + n * sa;
                                   for (std::size_t i = 0; i < sa; ++i) ga[i] += g[i];
                                 }
                                 if (bn->requires_grad) {
                                   double* gb = bn->grad_buffer().data() + n * sb;
                                   for (std::size_t i = 0; i < sb; ++i) gb[i] += g[sa + i];
                                 }
                               }
                             });
}

Tensor slice_channels(const Tensor& x, std::size_t begin, std::size_t end) {
  const VolumeDims d = volume_dims(x, "slice_channels");
  if (begin > end || end > d.c) throw DimensionError("slice_channels: channel range out of bounds");
  const std::size_t plane = d.channel_size();
  const std::size_t take = (end - begin) * plane;
  std::vector<double> out(d.n * take);
  const auto v = x.values();
  for (std::size_t n = 0; n < d.n; ++n) {
    std::copy_n(v.begin() + (n * d.c + begin) * plane, take, out.begin() + n * take);
  }
  auto xn = x.node();
  return detail::make_result(d.shape_with(end - begin, d.t, d.h, d.w), std::move(out), {&x},
                             [xn, d, begin, take, plane](Node& self) {
                               auto& g = xn->grad_buffer();
                               for (std::size_t n = 0; n < d.n; ++n) {
                                 const std::size_t off = (n * d.c + begin) * plane;
                                 for (std::size_t i = 0; i < take; ++i) g[off + i] += self.grad[n * take + i];
                               }
                             });
}

namespace {

struct InterpTap {
  std::size_t i0, i1;
  double frac;
};

std::vector<InterpTap> interp_taps(std::size_t in, std::size_t out) {
  std::vector<InterpTap> taps(out);
  const double scale = static_cast<double>(in) / static_cast<double>(out);
  for (std::size_t i = 0; i < out; ++i) {
    double src = (static_cast<double>(i) + 0.5) * scale - 0.5;
    src = std::clamp(src, 0.0, static_cast<double>(in - 1));
    const auto i0 = static_cast<std::size_t>(std::floor(src));
    const std::size_t i1 = std::min(i0 + 1, in - 1);
    taps[i] = {i0, i1, src - static_cast<double>(i0)};
  }
  return taps;
}

}  // namespace

Tensor trilinear_interp(const Tensor& input, Triple target) {
  const VolumeDims d = volume_dims(input, "trilinear_interp");
  if (target.t == 0 || target.h == 0 || target.w == 0) throw DimensionError("trilinear_interp: target extents must be >= 1");
  if (d.t == 0 || d.h == 0 || d.w == 0) throw DimensionError("trilinear_interp: empty source volume");
  const auto tt = interp_taps(d.t, target.t);
  const auto th = interp_taps(d.h, target.h);
  const auto tw = interp_taps(d.w, target.w);
  const std::size_t in_plane = d.channel_size();
  const std::size_t out_plane = target.volume();
  const std::size_t planes = d.n * d.c;
  std::vector<double> out(planes * out_plane);
  const double* x = input.values().data();

  // Visits the 8 weighted source taps of each output element.
  auto visit = [tt, th, tw, d, target](auto&& fn) {
    for (std::size_t ot = 0; ot < target.t; ++ot) {
      const auto& a = tt[ot];
      for (std::size_t oh = 0; oh < target.h; ++oh) {
        const auto& b = th[oh];
        for (std::size_t ow = 0; ow < target.w; ++ow) {
          const auto& e = tw[ow];
          const std::size_t o = (ot * target.h + oh) * target.w + ow;
          const std::size_t ts[2] = {a.i0, a.i1};
          const std::size_t hs[2] = {b.i0, b.i1};
          const std::size_t ws[2] = {e.i0, e.i1};
          const double wt[2] = {1.0 - a.frac, a.frac};
          const double wh[2] = {1.0 - b.frac, b.frac};
          const double ww[2] = {1.0 - e.frac, e.frac};
          for (int p = 0; p < 2; ++p)
            for (int q = 0; q < 2; ++q)
              for (int r = 0; r < 2; ++r) fn(o, (ts[p] * d.h + hs[q]) * d.w + ws[r], wt[p] * wh[q] * ww[r]);
        }
      }
    }
  };

  for (std::size_t pl = 0; pl < planes; ++pl) {
    double* po = out.data() + pl * out_plane;
    const double* pi = x + pl * in_plane;
    visit([&](std::size_t o, std::size_t i, double wgt) { po[o] += wgt * pi[i]; });
  }
  auto xn = input.node();
  return detail::make_result(d.shape_with(d.c, target.t, target.h, target.w), std::move(out), {&input},
                             [xn, visit, planes, in_plane, out_plane](Node& self) {
                               auto& g = xn->grad_buffer();
                               for (std::size_t pl = 0; pl < planes; ++pl) {
                                 double* pg = g.data() + pl * in_plane;
                                 const double* gy = self.grad.data() + pl * out_plane;
                                 visit([&](std::size_t o, std::size_t i, double wgt) { pg[i] += wgt * gy[o]; });
                               }
                             });
}

Tensor gate_multiply(const Tensor& volume, const Tensor& gate) {
  const VolumeDims d = volume_dims(volume, "gate_multiply");
  const Shape expected = d.batched ? Shape{d.n, d.c, d.t} : Shape{d.c, d.t};
  if (gate.shape() != expected) {
    throw DimensionError("gate_multiply: gate must be " + shape_str(expected) + ", got " + shape_str(gate.shape()));
  }
  const std::size_t fs = d.frame_size();
  const auto x = volume.values();
  const auto gv = gate.values();
  std::vector<double> out(x.size());
  for (std::size_t k = 0; k < gv.size(); ++k)
    for (std::size_t j = 0; j < fs; ++j) out[k * fs + j] = x[k * fs + j] * gv[k];
  auto vn = volume.node(), gn = gate.node();
  return detail::make_result(volume.shape(), std::move(out), {&volume, &gate}, [vn, gn, fs](Node& self) {
    const std::size_t frames = gn->values.size();
    for (std::size_t k = 0; k < frames; ++k) {
      const double* gy = self.grad.data() + k * fs;
      if (vn->requires_grad) {
        double* gx = vn->grad_buffer().data() + k * fs;
        for (std::size_t j = 0; j < fs; ++j) gx[j] += gy[j] * gn->values[k];
      }
      if (gn->requires_grad) {
        double s = 0.0;
        const double* xv = vn->values.data() + k * fs;
        for (std::size_t j = 0; j < fs; ++j) s += gy[j] * xv[j];
        gn->grad_buffer()[k] += s;
      }
    }
  });
}

Tensor global_mean(const Tensor& volume) {
  const VolumeDims d = volume_dims(volume, "global_mean");
  const std::size_t plane = d.channel_size();
  if (plane == 0) throw DimensionError("global_mean: empty T x H x W extent");
  const auto x = volume.values();
  std::vector<double> out(d.n * d.c);
  for (std::size_t k = 0; k < out.size(); ++k) {
    double s = 0.0;
    for (std::size_t j = 0; j < plane; ++j) s += x[k * plane + j];
    out[k] = s / static_cast<double>(plane);
  }
  auto vn = volume.node();
  return detail::make_result(d.batched ? Shape{d.n, d.c} : Shape{d.c}, std::move(out), {&volume},
                             [vn, plane](Node& self) {
                               auto& g = vn->grad_buffer();
                               const double inv = 1.0 / static_cast<double>(plane);
                               for (std::size_t k = 0; k < self.grad.size(); ++k)
                                 for (std::size_t j = 0; j < plane; ++j) g[k * plane + j] += self.grad[k] * inv;
                             });
}

Tensor linear(const Tensor& x, const Tensor& weight, const std::optional<Tensor>& bias) {
  if (weight.rank() != 2) throw DimensionError("linear: weight must be rank 2");
  const std::size_t out_f = weight.dim(0), in_f = weight.dim(1);
  std::size_t rows = 1;
  Shape out_shape;
  if (x.rank() == 1) {
    out_shape = {out_f};
  } else if (x.rank() == 2) {
    rows = x.dim(0);
    out_shape = {rows, out_f};
  } else {
    throw DimensionError("linear: input must be rank 1 or 2");
  }
  if (x.shape().back() != in_f) {
    throw DimensionError("linear: feature axis mismatch, input has " + std::to_string(x.shape().back()) +
                         " features, weight expects " + std::to_string(in_f));
  }
  if (bias && bias->numel() != out_f) throw DimensionError("linear: bias must have " + std::to_string(out_f) + " entries");
  const double* xv = x.values().data();
  const double* wv = weight.values().data();
  std::vector<double> out(rows * out_f);
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t o = 0; o < out_f; ++o) {
      double s = bias ? bias->values()[o] : 0.0;
      const double* wr = wv + o * in_f;
      const double* xr = xv + r * in_f;
      for (std::size_t i = 0; i < in_f; ++i) s += wr[i] * xr[i];
      out[r * out_f + o] = s;
    }
  }
  auto xn = x.node(), wn = weight.node();
  std::shared_ptr<Node> bn = bias ? bias->node() : nullptr;
  return detail::make_result(std::move(out_shape), std::move(out), {&x, &weight, bias ? &*bias : nullptr},
                             [xn, wn, bn, rows, in_f, out_f](Node& self) {
                               const auto& gy = self.grad;
                               double* gx = xn->requires_grad ? xn->grad_buffer().data() : nullptr;
                               double* gw = wn->requires_grad ? wn->grad_buffer().data() : nullptr;
                               double* gb = bn && bn->requires_grad ? bn->grad_buffer().data() : nullptr;
                               for (std::size_t r = 0; r < rows; ++r) {
                                 for (std::size_t o = 0; o < out_f; ++o) {
                                   const double g = gy[r * out_f + o];
                                   if (gb) gb[o] += g;
                                   for (std::size_t i = 0; i < in_f; ++i) {
                                     if (gx) gx[r * in_f + i] += g * wn->values[o * in_f + i];
                                     if (gw) gw[o * in_f + i] += g * xn->values[r * in_f + i];
                                   }
                                 }
                               }
                             });
}

Tensor concat_features(const Tensor& a, const Tensor& b) {
  if (a.rank() != b.rank() || a.rank() < 1 || a.rank() > 2) {
    throw DimensionError("concat_features: expects two rank-1 or two rank-2 tensors");
  }
  const std::size_t rows = a.rank() == 2 ? a.dim(0) : 1;
  if (a.rank() == 2 && b.dim(0) != rows) throw DimensionError("concat_features: batch axis mismatch");
  const std::size_t p = a.shape().back(), q = b.shape().back();
  std::vector<double> out(rows * (p + q));
  for (std::size_t r = 0; r < rows; ++r) {
    std::copy_n(a.values().begin() + r * p, p, out.begin() + r * (p + q));
    std::copy_n(b.values().begin() + r * q, q, out.begin() + r * (p + q) + p);
  }
  Shape s = a.rank() == 2 ? Shape{rows, p + q} : Shape{p + q};
  auto an = a.node(), bn = b.node();
  return detail::make_result(std::move(s), std::move(out), {&a, &b}, [an, bn, rows, p, q](Node& self) {
    for (std::size_t r = 0; r < rows; ++r) {
      const double* g = self.grad.data() + r * (p + q);
      if (an->requires_grad) {
        double* ga = an->grad_buffer().data() + r * p;
        for (std::size_t i = 0; i < p; ++i) ga[i] += g[i];
      }
      if (bn->requires_grad) {
        double* gb = bn->grad_buffer().data() + r * q;
        for (std::size_t i = 0; i < q; ++i) gb[i] += g[p + i];
      }
    }
  });
}

Tensor time_step(const Tensor& seq, std::size_t t) {
  if (seq.rank() != 2 && seq.rank() != 3) throw DimensionError("time_step: sequence must be C x T or N x C x T");
  const bool batched = seq.rank() == 3;
  const std::size_t rows = batched ? seq.dim(0) : 1;
  const std::size_t c = seq.dim(batched ? 1 : 0), steps = seq.dim(batched ? 2 : 1);
  if (t >= steps) throw DimensionError("time_step: step index out of range on T axis");
  std::vector<double> out(rows * c);
  for (std::size_t k = 0; k < rows * c; ++k) out[k] = seq.values()[k * steps + t];
  auto sn = seq.node();
  return detail::make_result(batched ? Shape{rows, c} : Shape{c}, std::move(out), {&seq},
                             [sn, steps, t](Node& self) {
                               auto& g = sn->grad_buffer();
                               for (std::size_t k = 0; k < self.grad.size(); ++k) g[k * steps + t] += self.grad[k];
                             });
}

Tensor stack_steps(const std::vector<Tensor>& steps) {
  if (steps.empty()) throw DimensionError("stack_steps: empty sequence");
  const Shape& s0 = steps.front().shape();
  if (s0.size() != 1 && s0.size() != 2) throw DimensionError("stack_steps: steps must be rank 1 or 2");
  for (const auto& s : steps) {
    if (s.shape() != s0) throw DimensionError("stack_steps: step shapes differ");
  }
  const std::size_t len = steps.size();
  const std::size_t width = shape_numel(s0);
  std::vector<double> out(width * len);
  for (std::size_t t = 0; t < len; ++t)
    for (std::size_t k = 0; k < width; ++k) out[k * len + t] = steps[t].values()[k];
  Shape shape = s0;
  shape.push_back(len);
  std::vector<std::shared_ptr<Node>> nodes;
  for (const auto& s : steps) nodes.push_back(s.node());
  return detail::make_result(std::move(shape), std::move(out), steps, [nodes, width, len](Node& self) {
    for (std::size_t t = 0; t < len; ++t) {
      if (!nodes[t]->requires_grad) continue;
      auto& g = nodes[t]->grad_buffer();
      for (std::size_t k = 0; k < width; ++k) g[k] += self.grad[k * len + t];
    }
  });
}

std::vector<double> softmax(std::span<const double> logits, std::size_t classes) {
  if (classes == 0 || logits.size() % classes != 0) throw DimensionError("softmax: logits not divisible by class count");
  std::vector<double> p(logits.size());
  for (std::size_t r = 0; r < logits.size() / classes; ++r) {
    const auto row = logits.subspan(r * classes, classes);
    const double mx = *std::max_element(row.begin(), row.end());
    double z = 0.0;
    for (std::size_t k = 0; k < classes; ++k) z += (p[r * classes + k] = std::exp(row[k] - mx));
    for (std::size_t k = 0; k < classes; ++k) p[r * classes + k] /= z;
  }
  return p;
}

Tensor cross_entropy(const Tensor& logits, std::span<const int> labels) {
  if (logits.rank() != 1 && logits.rank() != 2) throw DimensionError("cross_entropy: logits must be [K] or [N x K]");
  const std::size_t classes = logits.shape().back();
  const std::size_t rows = logits.rank() == 2 ? logits.dim(0) : 1;
  if (labels.size() != rows) throw DimensionError("cross_entropy: label count mismatch on batch axis");
  auto p = softmax(logits.values(), classes);
  double loss = 0.0;
  for (std::size_t r = 0; r < rows; ++r) {
    const int y = labels[r];
    if (y < 0 || static_cast<std::size_t>(y) >= classes) throw DimensionError("cross_entropy: label out of range");
    const auto row = logits.values().subspan(r * classes, classes);
    const double mx = *std::max_element(row.begin(), row.end());
    double z = 0.0;
    for (double v : row) z += std::exp(v - mx);
    loss += -(row[y] - mx - std::log(z));
  }
  loss /= static_cast<double>(rows);
  auto ln = logits.node();
  std::vector<int> ys(labels.begin(), labels.end());
  return detail::make_result({}, {loss}, {&logits}, [ln, p = std::move(p), ys, classes, rows](Node& self) {
    auto& g = ln->grad_buffer();
    const double scale = self.grad[0] / static_cast<double>(rows);
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t k = 0; k < classes; ++k)
        g[r * classes + k] += scale * (p[r * classes + k] - (static_cast<int>(k) == ys[r] ? 1.0 : 0.0));
  });
}

Tensor weighted_sum(const Tensor& x, std::span<const double> weights) {
  if (weights.size() != x.numel()) throw DimensionError("weighted_sum: weight count mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < weights.size(); ++i) s += x.values()[i] * weights[i];
  auto xn = x.node();
  std::vector<double> w(weights.begin(), weights.end());
  return detail::make_result({}, {s}, {&x}, [xn, w = std::move(w)](Node& self) {
    auto& g = xn->grad_buffer();
    for (std::size_t i = 0; i < w.size(); ++i) g[i] += self.grad[0] * w[i];
  });
}

}  // namespace mtn
