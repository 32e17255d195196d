#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "bglab/tensor.hpp"

namespace bglab::ops {

namespace detail {

inline void require_same_shape(const char* op, const Tensor& a, const Tensor& b) {
  if (a.rank() != b.rank()) {
    throw ShapeError(std::string(op) + ": rank mismatch " + shape_str(a.shape()) + " vs " +
                     shape_str(b.shape()));
  }
  for (std::size_t d = 0; d < a.rank(); ++d) {
    if (a.dim(d) != b.dim(d)) {
      throw ShapeError(std::string(op) + ": dimension " + std::to_string(d) + " is " +
                       std::to_string(a.dim(d)) + " vs " + std::to_string(b.dim(d)));
    }
  }
}

inline void require_rank(const char* op, const Tensor& t, std::size_t rank, const char* what) {
  if (t.rank() != rank) {
    throw ShapeError(std::string(op) + ": " + what + " must be " + std::to_string(rank) +
                     "-D, got shape " + shape_str(t.shape()));
  }
}

inline std::size_t window_out(const char* op, const char* axis, std::size_t in,
                              std::size_t kernel, std::size_t stride, std::size_t pad) {
  if (stride == 0) throw ShapeError(std::string(op) + ": stride along " + axis + " is zero");
  if (kernel == 0) throw ShapeError(std::string(op) + ": kernel along " + axis + " is zero");
  if (in + 2 * pad < kernel) {
    throw ShapeError(std::string(op) + ": " + axis + " dimension " + std::to_string(in) +
                     " (padding " + std::to_string(pad) + ") is smaller than kernel " +
                     std::to_string(kernel));
  }
  return (in + 2 * pad - kernel) / stride + 1;
}

inline double sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

}  // namespace detail

/// Per-axis window geometry in (time, height, width) order.
struct Window3d {
  std::array<std::size_t, 3> kernel{1, 1, 1};
  std::array<std::size_t, 3> stride{1, 1, 1};
  std::array<std::size_t, 3> pad{0, 0, 0};
};

inline Shape conv3d_output_shape(const Shape& input, std::size_t out_channels,
                                 const Window3d& win) {
  static constexpr const char* axes[3] = {"time", "height", "width"};
  Shape out{input[0], out_channels, 0, 0, 0};
  for (std::size_t a = 0; a < 3; ++a) {
    out[2 + a] = detail::window_out("conv3d", axes[a], input[2 + a], win.kernel[a],
                                    win.stride[a], win.pad[a]);
  }
  return out;
}

inline Tensor add(const Tensor& a, const Tensor& b) {
  detail::require_same_shape("add", a, b);
  std::vector<double> out(a.numel());
  const auto x = a.data();
  const auto y = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] + y[i];
  return apply_op("add", a.shape(), std::move(out), {a, b},
                  [](std::span<const double> g, std::span<std::vector<double>*> gin) {
                    for (auto* buf : gin) {
                      if (!buf) continue;
                      for (std::size_t i = 0; i < g.size(); ++i) (*buf)[i] += g[i];
                    }
                  });
}

inline Tensor sub(const Tensor& a, const Tensor& b) {
  detail::require_same_shape("sub", a, b);
  std::vector<double> out(a.numel());
  const auto x = a.data();
  const auto y = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] - y[i];
  return apply_op("sub", a.shape(), std::move(out), {a, b},
                  [](std::span<const double> g, std::span<std::vector<double>*> gin) {
                    if (gin[0])
                      for (std::size_t i = 0; i < g.size(); ++i) (*gin[0])[i] += g[i];
                    if (gin[1])
                      for (std::size_t i = 0; i < g.size(); ++i) (*gin[1])[i] -= g[i];
                  });
}

inline Tensor mul(const Tensor& a, const Tensor& b) {
  detail::require_same_shape("mul", a, b);
  std::vector<double> out(a.numel());
  const auto x = a.data();
  const auto y = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] * y[i];
  auto ai = a.impl();
  auto bi = b.impl();
  return apply_op("mul", a.shape(), std::move(out), {a, b},
                  [ai, bi](std::span<const double> g, std::span<std::vector<double>*> gin) {
                    if (gin[0])
                      for (std::size_t i = 0; i < g.size(); ++i) (*gin[0])[i] += g[i] * bi->data[i];
                    if (gin[1])
                      for (std::size_t i = 0; i < g.size(); ++i) (*gin[1])[i] += g[i] * ai->data[i];
                  });
}

inline Tensor scale(const Tensor& a, double factor) {
  std::vector<double> out(a.data().begin(), a.data().end());
  for (auto& v : out) v *= factor;
  return apply_op("scale", a.shape(), std::move(out), {a},
                  [factor](std::span<const double> g, std::span<std::vector<double>*> gin) {
                    for (std::size_t i = 0; i < g.size(); ++i) (*gin[0])[i] += factor * g[i];
                  });
}

/// Multiplies x (N x C x ...) by m (N x 1 x ... or 1 x 1 x ...), broadcasting
/// m over channels and, when its leading dim is 1, over the batch.
inline Tensor mul_broadcast(const Tensor& x, const Tensor& m) {
  if (x.rank() < 2 || m.rank() != x.rank()) {
    throw ShapeError("mul_broadcast: operand ranks differ, " + shape_str(x.shape()) + " vs " +
                     shape_str(m.shape()));
  }
  if (m.dim(1) != 1) {
    throw ShapeError("mul_broadcast: multiplier channel dimension (dim 1) must be 1, got " +
                     std::to_string(m.dim(1)));
  }
  if (m.dim(0) != 1 && m.dim(0) != x.dim(0)) {
    throw ShapeError("mul_broadcast: batch dimension (dim 0) is " + std::to_string(m.dim(0)) +
                     " but input batch is " + std::to_string(x.dim(0)));
  }
  for (std::size_t d = 2; d < x.rank(); ++d) {
    if (m.dim(d) != x.dim(d)) {
      throw ShapeError("mul_broadcast: dimension " + std::to_string(d) + " is " +
                       std::to_string(m.dim(d)) + " vs " + std::to_string(x.dim(d)));
    }
  }
  const std::size_t batch = x.dim(0);
  const std::size_t channels = x.dim(1);
  const std::size_t plane = x.numel() / (batch * channels);
  const bool per_sample = m.dim(0) != 1;
  std::vector<double> out(x.numel());
  const auto xv = x.data();
  const auto mv = m.data();
  for (std::size_t n = 0; n < batch; ++n) {
    const double* mrow = mv.data() + (per_sample ? n * plane : 0);
    for (std::size_t c = 0; c < channels; ++c) {
      const std::size_t base = (n * channels + c) * plane;
      for (std::size_t i = 0; i < plane; ++i) out[base + i] = xv[base + i] * mrow[i];
    }
  }
  auto xi = x.impl();
  auto mi = m.impl();
  return apply_op(
      "mul_broadcast", x.shape(), std::move(out), {x, m},
      [xi, mi, batch, channels, plane, per_sample](std::span<const double> g,
                                                   std::span<std::vector<double>*> gin) {
        for (std::size_t n = 0; n < batch; ++n) {
          const std::size_t moff = per_sample ? n * plane : 0;
          for (std::size_t c = 0; c < channels; ++c) {
            const std::size_t base = (n * channels + c) * plane;
            if (gin[0])
              for (std::size_t i = 0; i < plane; ++i)
                (*gin[0])[base + i] += g[base + i] * mi->data[moff + i];
            if (gin[1])
              for (std::size_t i = 0; i < plane; ++i)
                (*gin[1])[moff + i] += g[base + i] * xi->data[base + i];
          }
        }
      });
}

inline Tensor relu(const Tensor& a) {
  std::vector<double> out(a.numel());
  const auto x = a.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] > 0 ? x[i] : 0.0;
  auto ai = a.impl();
  return apply_op("relu", a.shape(), std::move(out), {a},
                  [ai](std::span<const double> g, std::span<std::vector<double>*> gin) {
                    for (std::size_t i = 0; i < g.size(); ++i)
                      if (ai->data[i] > 0) (*gin[0])[i] += g[i];
                  });
}

/// 2 * sigmoid(x) - 1, mapping the real line onto (-1, 1).
inline Tensor scaled_sigmoid(const Tensor& a) {
  std::vector<double> out(a.numel());
  const auto x = a.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = 2.0 * detail::sigmoid(x[i]) - 1.0;
  auto ai = a.impl();
  return apply_op("scaled_sigmoid", a.shape(), std::move(out), {a},
                  [ai](std::span<const double> g, std::span<std::vector<double>*> gin) {
                    for (std::size_t i = 0; i < g.size(); ++i) {
                      const double s = detail::sigmoid(ai->data[i]);
                      (*gin[0])[i] += g[i] * 2.0 * s * (1.0 - s);
                    }
                  });
}

inline Tensor sum(const Tensor& a) {
  double total = 0;
  for (const double v : a.data()) total += v;
  return apply_op("sum", {}, {total}, {a},
                  [](std::span<const double> g, std::span<std::vector<double>*> gin) {
                    for (auto& v : *gin[0]) v += g[0];
                  });
}

inline Tensor mean(const Tensor& a) { return scale(sum(a), 1.0 / static_cast<double>(a.numel())); }

/// Dense 3-D convolution. input: N x Cin x T x H x W, weight: Cout x Cin x kT x kH x kW,
/// optional bias: Cout. Cross-correlation convention, zero padding.
inline Tensor conv3d(const Tensor& input, const Tensor& weight, const std::optional<Tensor>& bias,
                     std::array<std::size_t, 3> stride = {1, 1, 1},
                     std::array<std::size_t, 3> pad = {0, 0, 0}) {
  detail::require_rank("conv3d", input, 5, "input");
  detail::require_rank("conv3d", weight, 5, "kernel");
  if (weight.dim(1) != input.dim(1)) {
    throw ShapeError("conv3d: input channel dimension (dim 1) is " + std::to_string(input.dim(1)) +
                     " but kernel expects " + std::to_string(weight.dim(1)));
  }
  const std::size_t cout = weight.dim(0);
  if (bias && (bias->rank() != 1 || bias->dim(0) != cout)) {
    throw ShapeError("conv3d: bias must have shape [" + std::to_string(cout) + "], got " +
                     shape_str(bias->shape()));
  }
  Window3d win;
  win.kernel = {weight.dim(2), weight.dim(3), weight.dim(4)};
  win.stride = stride;
  win.pad = pad;
  const Shape out_shape = conv3d_output_shape(input.shape(), cout, win);

  struct Geometry {
    std::size_t n, ci, co, ti, hi, wi, to, ho, wo, kt, kh, kw, st, sh, sw, pt, ph, pw;
  };
  const Geometry g{input.dim(0),  input.dim(1),  cout,         input.dim(2),  input.dim(3),
                   input.dim(4),  out_shape[2],  out_shape[3], out_shape[4],  win.kernel[0],
                   win.kernel[1], win.kernel[2], stride[0],    stride[1],     stride[2],
                   pad[0],        pad[1],        pad[2]};

  // Visits every (input, weight, output) triple of the correlation in a
  // cache-friendly order; the callback receives flat offsets of the three rows.
  auto for_each_row = [g](auto&& fn) {
    for (std::size_t n = 0; n < g.n; ++n)
      for (std::size_t co = 0; co < g.co; ++co)
        for (std::size_t ci = 0; ci < g.ci; ++ci)
          for (std::size_t kt = 0; kt < g.kt; ++kt)
            for (std::size_t kh = 0; kh < g.kh; ++kh)
              for (std::size_t kw = 0; kw < g.kw; ++kw) {
                const std::size_t widx = (((co * g.ci + ci) * g.kt + kt) * g.kh + kh) * g.kw + kw;
                // valid ow range: 0 <= ow*sw - pw + kw < wi
                std::size_t ow_lo = 0;
                if (g.pw > kw) ow_lo = (g.pw - kw + g.sw - 1) / g.sw;
                std::size_t ow_hi = 0;  // exclusive
                if (g.wi + g.pw > kw) ow_hi = std::min(g.wo, (g.wi + g.pw - kw - 1) / g.sw + 1);
                if (ow_lo >= ow_hi) continue;
                for (std::size_t ot = 0; ot < g.to; ++ot) {
                  const auto it = static_cast<std::ptrdiff_t>(ot * g.st + kt) -
                                  static_cast<std::ptrdiff_t>(g.pt);
                  if (it < 0 || it >= static_cast<std::ptrdiff_t>(g.ti)) continue;
                  for (std::size_t oh = 0; oh < g.ho; ++oh) {
                    const auto ih = static_cast<std::ptrdiff_t>(oh * g.sh + kh) -
                                    static_cast<std::ptrdiff_t>(g.ph);
                    if (ih < 0 || ih >= static_cast<std::ptrdiff_t>(g.hi)) continue;
                    const std::size_t in_row =
                        (((n * g.ci + ci) * g.ti + static_cast<std::size_t>(it)) * g.hi +
                         static_cast<std::size_t>(ih)) *
                        g.wi;
                    const std::size_t out_row = (((n * g.co + co) * g.to + ot) * g.ho + oh) * g.wo;
                    fn(in_row, widx, out_row, ow_lo, ow_hi, kw);
                  }
                }
              }
  };

  std::vector<double> out(shape_numel(out_shape), 0.0);
  const std::size_t out_plane = g.to * g.ho * g.wo;
  if (bias) {
    for (std::size_t n = 0; n < g.n; ++n)
      for (std::size_t co = 0; co < g.co; ++co)
        std::fill_n(out.begin() + static_cast<std::ptrdiff_t>((n * g.co + co) * out_plane),
                    out_plane, (*bias)[co]);
  }
  {
    const double* x = input.data().data();
    const double* w = weight.data().data();
    double* y = out.data();
    for_each_row([&](std::size_t in_row, std::size_t widx, std::size_t out_row, std::size_t lo,
                     std::size_t hi, std::size_t kw) {
      const double wv = w[widx];
      // unsigned wrap in xoff cancels once ow * sw is added
      const std::size_t xoff = in_row + kw - g.pw;
      double* yr = y + out_row;
      for (std::size_t ow = lo; ow < hi; ++ow) yr[ow] += wv * x[xoff + ow * g.sw];
    });
  }

  std::vector<Tensor> inputs{input, weight};
  if (bias) inputs.push_back(*bias);
  auto xi = input.impl();
  auto wi = weight.impl();
  return apply_op(
      "conv3d", out_shape, std::move(out), inputs,
      [g, xi, wi, for_each_row, out_plane](std::span<const double> gout,
                                           std::span<std::vector<double>*> gin) {
        const double* x = xi->data.data();
        const double* w = wi->data.data();
        const double* gy = gout.data();
        double* gx = gin[0] ? gin[0]->data() : nullptr;
        double* gw = gin[1] ? gin[1]->data() : nullptr;
        if (gx || gw) {
          for_each_row([&](std::size_t in_row, std::size_t widx, std::size_t out_row,
                           std::size_t lo, std::size_t hi, std::size_t kw) {
            const double* gyr = gy + out_row;
            const std::size_t xoff = in_row + kw - g.pw;
            if (gx) {
              const double wv = w[widx];
              for (std::size_t ow = lo; ow < hi; ++ow) gx[xoff + ow * g.sw] += wv * gyr[ow];
            }
            if (gw) {
              double acc = 0;
              for (std::size_t ow = lo; ow < hi; ++ow) acc += x[xoff + ow * g.sw] * gyr[ow];
              gw[widx] += acc;
            }
          });
        }
        if (gin.size() > 2 && gin[2]) {
          auto& gb = *gin[2];
          for (std::size_t n = 0; n < g.n; ++n)
            for (std::size_t co = 0; co < g.co; ++co) {
              const double* p = gy + (n * g.co + co) * out_plane;
              double acc = 0;
              for (std::size_t i = 0; i < out_plane; ++i) acc += p[i];
              gb[co] += acc;
            }
        }
      });
}

enum class PoolKind { kMax, kAvg };

/// 3-D pooling over N x C x T x H x W. Padded cells never win a max and are
/// excluded from the average count.
inline Tensor pool3d(const Tensor& input, PoolKind kind, const Window3d& win) {
  detail::require_rank("pool3d", input, 5, "input");
  static constexpr const char* axes[3] = {"time", "height", "width"};
  Shape out_shape{input.dim(0), input.dim(1), 0, 0, 0};
  for (std::size_t a = 0; a < 3; ++a) {
    if (win.pad[a] >= win.kernel[a] && win.kernel[a] > 0) {
      throw ShapeError(std::string("pool3d: padding along ") + axes[a] +
                       " must be smaller than the kernel");
    }
    out_shape[2 + a] = detail::window_out("pool3d", axes[a], input.dim(2 + a), win.kernel[a],
                                          win.stride[a], win.pad[a]);
  }
  const std::size_t planes = input.dim(0) * input.dim(1);
  const std::size_t ti = input.dim(2), hi = input.dim(3), wi = input.dim(4);
  const std::size_t to = out_shape[2], ho = out_shape[3], wo = out_shape[4];
  std::vector<double> out(shape_numel(out_shape));
  // For max: winning flat input index per output. For avg: unused.
  std::vector<std::size_t> argmax(kind == PoolKind::kMax ? out.size() : 0);
  std::vector<double> counts(kind == PoolKind::kAvg ? to * ho * wo : 0);
  const auto x = input.data();

  auto range = [](std::size_t o, std::size_t stride, std::size_t pad, std::size_t kernel,
                  std::size_t extent) {
    const auto start = static_cast<std::ptrdiff_t>(o * stride) - static_cast<std::ptrdiff_t>(pad);
    const auto lo = std::max<std::ptrdiff_t>(start, 0);
    const auto hi = std::min<std::ptrdiff_t>(start + static_cast<std::ptrdiff_t>(kernel),
                                             static_cast<std::ptrdiff_t>(extent));
    return std::pair<std::size_t, std::size_t>(static_cast<std::size_t>(lo),
                                               static_cast<std::size_t>(hi));
  };

  for (std::size_t p = 0; p < planes; ++p) {
    const std::size_t in_base = p * ti * hi * wi;
    const std::size_t out_base = p * to * ho * wo;
    for (std::size_t ot = 0; ot < to; ++ot) {
      const auto [t0, t1] = range(ot, win.stride[0], win.pad[0], win.kernel[0], ti);
      for (std::size_t oh = 0; oh < ho; ++oh) {
        const auto [h0, h1] = range(oh, win.stride[1], win.pad[1], win.kernel[1], hi);
        for (std::size_t ow = 0; ow < wo; ++ow) {
          const auto [w0, w1] = range(ow, win.stride[2], win.pad[2], win.kernel[2], wi);
          const std::size_t o = (ot * ho + oh) * wo + ow;
          double best = -std::numeric_limits<double>::infinity();
          std::size_t best_idx = 0;
          double acc = 0;
          for (std::size_t t = t0; t < t1; ++t)
            for (std::size_t h = h0; h < h1; ++h)
              for (std::size_t w = w0; w < w1; ++w) {
                const std::size_t idx = in_base + (t * hi + h) * wi + w;
                if (x[idx] > best) {
                  best = x[idx];
                  best_idx = idx;
                }
                acc += x[idx];
              }
          if (kind == PoolKind::kMax) {
            out[out_base + o] = best;
            argmax[out_base + o] = best_idx;
          } else {
            const double count = static_cast<double>((t1 - t0) * (h1 - h0) * (w1 - w0));
            if (p == 0) counts[o] = count;
            out[out_base + o] = acc / count;
          }
        }
      }
    }
  }

  if (kind == PoolKind::kMax) {
    return apply_op("pool3d_max", out_shape, std::move(out), {input},
                    [argmax = std::move(argmax)](std::span<const double> g,
                                                 std::span<std::vector<double>*> gin) {
                      for (std::size_t i = 0; i < g.size(); ++i) (*gin[0])[argmax[i]] += g[i];
                    });
  }
  return apply_op(
      "pool3d_avg", out_shape, std::move(out), {input},
      [=, counts = std::move(counts)](std::span<const double> g,
                                      std::span<std::vector<double>*> gin) {
        auto& gx = *gin[0];
        for (std::size_t p = 0; p < planes; ++p) {
          const std::size_t in_base = p * ti * hi * wi;
          const std::size_t out_base = p * to * ho * wo;
          for (std::size_t ot = 0; ot < to; ++ot) {
            const auto [t0, t1] = range(ot, win.stride[0], win.pad[0], win.kernel[0], ti);
            for (std::size_t oh = 0; oh < ho; ++oh) {
              const auto [h0, h1] = range(oh, win.stride[1], win.pad[1], win.kernel[1], hi);
              for (std::size_t ow = 0; ow < wo; ++ow) {
                const auto [w0, w1] = range(ow, win.stride[2], win.pad[2], win.kernel[2], wi);
                const std::size_t o = (ot * ho + oh) * wo + ow;
                const double share = g[out_base + o] / counts[o];
                for (std::size_t t = t0; t < t1; ++t)
                  for (std::size_t h = h0; h < h1; ++h)
                    for (std::size_t w = w0; w < w1; ++w) gx[in_base + (t * hi + h) * wi + w] += share;
              }
            }
          }
        }
      });
}

/// N x F input, Out x F weight, optional Out bias -> N x Out.
inline Tensor linear(const Tensor& input, const Tensor& weight, const std::optional<Tensor>& bias) {
  detail::require_rank("linear", input, 2, "input");
  detail::require_rank("linear", weight, 2, "weight");
  if (weight.dim(1) != input.dim(1)) {
    throw ShapeError("linear: input feature dimension (dim 1) is " + std::to_string(input.dim(1)) +
                     " but weight expects " + std::to_string(weight.dim(1)));
  }
  const std::size_t n = input.dim(0), f = input.dim(1), o = weight.dim(0);
  if (bias && (bias->rank() != 1 || bias->dim(0) != o)) {
    throw ShapeError("linear: bias must have shape [" + std::to_string(o) + "], got " +
                     shape_str(bias->shape()));
  }
  std::vector<double> out(n * o);
  const auto x = input.data();
  const auto w = weight.data();
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < o; ++j) {
      double acc = bias ? (*bias)[j] : 0.0;
      for (std::size_t k = 0; k < f; ++k) acc += x[i * f + k] * w[j * f + k];
      out[i * o + j] = acc;
    }
  std::vector<Tensor> inputs{input, weight};
  if (bias) inputs.push_back(*bias);
  auto xi = input.impl();
  auto wi = weight.impl();
  return apply_op("linear", {n, o}, std::move(out), inputs,
                  [=](std::span<const double> g, std::span<std::vector<double>*> gin) {
                    for (std::size_t i = 0; i < n; ++i)
                      for (std::size_t j = 0; j < o; ++j) {
                        const double gij = g[i * o + j];
                        if (gin[0])
                          for (std::size_t k = 0; k < f; ++k)
                            (*gin[0])[i * f + k] += gij * wi->data[j * f + k];
                        if (gin[1])
                          for (std::size_t k = 0; k < f; ++k)
                            (*gin[1])[j * f + k] += gij * xi->data[i * f + k];
                        if (gin.size() > 2 && gin[2]) (*gin[2])[j] += gij;
                      }
                  });
}

/// y[n,c,...] = x[n,c,...] * scale[c] + shift[c]
inline Tensor channel_affine(const Tensor& input, const Tensor& scale_c, const Tensor& shift_c) {
  if (input.rank() < 2) {
    throw ShapeError("channel_affine: input needs a channel dimension, got " +
                     shape_str(input.shape()));
  }
  const std::size_t n = input.dim(0), c = input.dim(1);
  if (scale_c.numel() != c || shift_c.numel() != c) {
    throw ShapeError("channel_affine: channel dimension (dim 1) is " + std::to_string(c) +
                     " but affine parameters hold " + std::to_string(scale_c.numel()) + " and " +
                     std::to_string(shift_c.numel()));
  }
  const std::size_t plane = input.numel() / (n * c);
  std::vector<double> out(input.numel());
  const auto x = input.data();
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t ch = 0; ch < c; ++ch) {
      const std::size_t base = (i * c + ch) * plane;
      const double a = scale_c[ch], b = shift_c[ch];
      for (std::size_t k = 0; k < plane; ++k) out[base + k] = x[base + k] * a + b;
    }
  auto xi = input.impl();
  auto si = scale_c.impl();
  return apply_op("channel_affine", input.shape(), std::move(out), {input, scale_c, shift_c},
                  [=](std::span<const double> g, std::span<std::vector<double>*> gin) {
                    for (std::size_t i = 0; i < n; ++i)
                      for (std::size_t ch = 0; ch < c; ++ch) {
                        const std::size_t base = (i * c + ch) * plane;
                        double gs = 0, gb = 0;
                        for (std::size_t k = 0; k < plane; ++k) {
                          if (gin[0]) (*gin[0])[base + k] += g[base + k] * si->data[ch];
                          gs += g[base + k] * xi->data[base + k];
                          gb += g[base + k];
                        }
                        if (gin[1]) (*gin[1])[ch] += gs;
                        if (gin[2]) (*gin[2])[ch] += gb;
                      }
                  });
}

/// Concatenates along dim 1. All other dims must agree.
inline Tensor concat_channels(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw ShapeError("concat_channels: no inputs");
  const Tensor& first = parts.front();
  if (first.rank() < 2) {
    throw ShapeError("concat_channels: inputs need a channel dimension, got " +
                     shape_str(first.shape()));
  }
  std::size_t channels = 0;
  for (std::size_t p = 0; p < parts.size(); ++p) {
    const Tensor& t = parts[p];
    if (t.rank() != first.rank()) {
      throw ShapeError("concat_channels: input " + std::to_string(p) + " has rank " +
                       std::to_string(t.rank()) + ", expected " + std::to_string(first.rank()));
    }
    for (std::size_t d = 0; d < t.rank(); ++d) {
      if (d != 1 && t.dim(d) != first.dim(d)) {
        throw ShapeError("concat_channels: input " + std::to_string(p) + " dimension " +
                         std::to_string(d) + " is " + std::to_string(t.dim(d)) + ", expected " +
                         std::to_string(first.dim(d)));
      }
    }
    channels += t.dim(1);
  }
  Shape out_shape = first.shape();
  out_shape[1] = channels;
  const std::size_t n = first.dim(0);
  const std::size_t plane = first.numel() / (n * first.dim(1));
  std::vector<double> out(shape_numel(out_shape));
  std::vector<std::size_t> widths;
  for (const auto& t : parts) widths.push_back(t.dim(1));
  for (std::size_t i = 0; i < n; ++i) {
    std::size_t offset = 0;
    for (std::size_t p = 0; p < parts.size(); ++p) {
      const std::size_t block = widths[p] * plane;
      const auto src = parts[p].data().subspan(i * block, block);
      std::copy(src.begin(), src.end(),
                out.begin() + static_cast<std::ptrdiff_t>((i * channels + offset) * plane));
      offset += widths[p];
    }
  }
  return apply_op("concat_channels", out_shape, std::move(out), parts,
                  [=](std::span<const double> g, std::span<std::vector<double>*> gin) {
                    for (std::size_t i = 0; i < n; ++i) {
                      std::size_t offset = 0;
                      for (std::size_t p = 0; p < gin.size(); ++p) {
                        const std::size_t block = widths[p] * plane;
                        if (gin[p]) {
                          const double* src = g.data() + (i * channels + offset) * plane;
                          double* dst = gin[p]->data() + i * block;
                          for (std::size_t k = 0; k < block; ++k) dst[k] += src[k];
                        }
                        offset += widths[p];
                      }
                    }
                  });
}

/// N x C x ... -> N x C, averaging every trailing dimension.
inline Tensor global_avg_pool(const Tensor& input) {
  if (input.rank() < 3) {
    throw ShapeError("global_avg_pool: expected N x C x ..., got " + shape_str(input.shape()));
  }
  const std::size_t n = input.dim(0), c = input.dim(1);
  const std::size_t plane = input.numel() / (n * c);
  std::vector<double> out(n * c);
  const auto x = input.data();
  for (std::size_t i = 0; i < n * c; ++i) {
    double acc = 0;
    for (std::size_t k = 0; k < plane; ++k) acc += x[i * plane + k];
    out[i] = acc / static_cast<double>(plane);
  }
  return apply_op("global_avg_pool", {n, c}, std::move(out), {input},
                  [=](std::span<const double> g, std::span<std::vector<double>*> gin) {
                    const double inv = 1.0 / static_cast<double>(plane);
                    for (std::size_t i = 0; i < n * c; ++i)
                      for (std::size_t k = 0; k < plane; ++k) (*gin[0])[i * plane + k] += g[i] * inv;
                  });
}

/// Mean over the batch of -log softmax(logits)[target].
inline Tensor softmax_cross_entropy(const Tensor& logits, std::span<const std::size_t> targets) {
  detail::require_rank("softmax_cross_entropy", logits, 2, "logits");
  const std::size_t b = logits.dim(0), c = logits.dim(1);
  if (targets.size() != b) {
    throw ShapeError("softmax_cross_entropy: batch dimension (dim 0) is " + std::to_string(b) +
                     " but " + std::to_string(targets.size()) + " targets were given");
  }
  for (const auto t : targets) {
    if (t >= c) {
      throw std::out_of_range("softmax_cross_entropy: target " + std::to_string(t) +
                              " out of range for " + std::to_string(c) + " classes");
    }
  }
  const auto z = logits.data();
  std::vector<double> probs(b * c);
  double loss = 0;
  for (std::size_t i = 0; i < b; ++i) {
    const double* row = z.data() + i * c;
    const double mx = *std::max_element(row, row + c);
    double denom = 0;
    for (std::size_t j = 0; j < c; ++j) denom += std::exp(row[j] - mx);
    const double log_denom = std::log(denom);
    for (std::size_t j = 0; j < c; ++j) probs[i * c + j] = std::exp(row[j] - mx - log_denom);
    loss -= row[targets[i]] - mx - log_denom;
  }
  loss /= static_cast<double>(b);
  std::vector<std::size_t> tgt(targets.begin(), targets.end());
  return apply_op("softmax_cross_entropy", {}, {loss}, {logits},
                  [=, probs = std::move(probs)](std::span<const double> g,
                                                std::span<std::vector<double>*> gin) {
                    const double s = g[0] / static_cast<double>(b);
                    for (std::size_t i = 0; i < b; ++i)
                      for (std::size_t j = 0; j < c; ++j) {
                        const double onehot = j == tgt[i] ? 1.0 : 0.0;
                        (*gin[0])[i * c + j] += s * (probs[i * c + j] - onehot);
                      }
                  });
}

}  // namespace bglab::ops
