#ifndef IRISLOC_OPS_HPP
#define IRISLOC_OPS_HPP

// Differentiable operations for the two model families. Every function takes
// and returns graph handles; forward values are computed eagerly and a
// backward closure is recorded when gradients are tracked.

#include <cmath>
#include <cstddef>
#include <limits>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Core>

#include "irisloc/errors.hpp"
#include "irisloc/graph.hpp"
#include "irisloc/tensor.hpp"

namespace irisloc {

namespace detail {

template <typename T>
using RowMatrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

struct ConvGeometry {
  std::size_t channels, height, width;
  std::size_t kernel_h, kernel_w;
  std::size_t stride, pad;
  std::size_t out_h, out_w;

  std::size_t patch() const { return channels * kernel_h * kernel_w; }
  std::size_t pixels() const { return out_h * out_w; }
};

// Column matrix layout: row (c*kh + i)*kw + j, column oy*out_w + ox.
template <typename T>
void im2col(const T* image, const ConvGeometry& g, T* col) {
  const auto pad = static_cast<std::ptrdiff_t>(g.pad);
  const auto H = static_cast<std::ptrdiff_t>(g.height);
  const auto W = static_cast<std::ptrdiff_t>(g.width);
  for (std::size_t c = 0; c < g.channels; ++c) {
    const T* plane = image + c * g.height * g.width;
    for (std::size_t i = 0; i < g.kernel_h; ++i) {
      for (std::size_t j = 0; j < g.kernel_w; ++j) {
        T* row = col + ((c * g.kernel_h + i) * g.kernel_w + j) * g.pixels();
        for (std::size_t oy = 0; oy < g.out_h; ++oy) {
          const auto iy = static_cast<std::ptrdiff_t>(oy * g.stride + i) - pad;
          T* dst = row + oy * g.out_w;
          if (iy < 0 || iy >= H) {
            std::fill(dst, dst + g.out_w, T{0});
            continue;
          }
          const T* src = plane + iy * W;
          for (std::size_t ox = 0; ox < g.out_w; ++ox) {
            const auto ix = static_cast<std::ptrdiff_t>(ox * g.stride + j) - pad;
            dst[ox] = (ix >= 0 && ix < W) ? src[ix] : T{0};
          }
        }
      }
    }
  }
}

// Adjoint of im2col: accumulates column entries back onto the image.
template <typename T>
void col2im(const T* col, const ConvGeometry& g, T* image) {
  const auto pad = static_cast<std::ptrdiff_t>(g.pad);
  const auto H = static_cast<std::ptrdiff_t>(g.height);
  const auto W = static_cast<std::ptrdiff_t>(g.width);
  for (std::size_t c = 0; c < g.channels; ++c) {
    T* plane = image + c * g.height * g.width;
    for (std::size_t i = 0; i < g.kernel_h; ++i) {
      for (std::size_t j = 0; j < g.kernel_w; ++j) {
        const T* row = col + ((c * g.kernel_h + i) * g.kernel_w + j) * g.pixels();
        for (std::size_t oy = 0; oy < g.out_h; ++oy) {
          const auto iy = static_cast<std::ptrdiff_t>(oy * g.stride + i) - pad;
          if (iy < 0 || iy >= H) continue;
          const T* src = row + oy * g.out_w;
          T* dst = plane + iy * W;
          for (std::size_t ox = 0; ox < g.out_w; ++ox) {
            const auto ix = static_cast<std::ptrdiff_t>(ox * g.stride + j) - pad;
            if (ix >= 0 && ix < W) dst[ix] += src[ox];
          }
        }
      }
    }
  }
}

inline void require_rank4(const Shape& s, const char* op, const char* what) {
  if (s.size() != 4) {
    throw ShapeError(std::string(op) + ": " + what + " must be rank 4 (N,C,H,W), got " + describe(s));
  }
}

}  // namespace detail

/// 2-D cross-correlation with per-output-channel bias.
///
/// input [N,C,H,W], weight [F,C,kh,kw], bias [F]. Kernel sizes must be odd
/// and (H + 2*padding - kh) must be a multiple of stride.
template <typename T>
Var<T> conv2d(Var<T> input, Var<T> weight, Var<T> bias, std::size_t stride = 1,
              std::size_t padding = 0) {
  const auto& x = input.value();
  const auto& w = weight.value();
  const auto& b = bias.value();
  detail::require_rank4(x.shape(), "conv2d", "input");
  detail::require_rank4(w.shape(), "conv2d", "weight");
  const auto report = [&] {
    return " (input " + describe(x.shape()) + ", weight " + describe(w.shape()) + ", bias " +
           describe(b.shape()) + ", stride " + std::to_string(stride) + ", padding " +
           std::to_string(padding) + ")";
  };
  if (w.dim(1) != x.dim(1)) throw ShapeError("conv2d: channel mismatch" + report());
  if (b.rank() != 1 || b.dim(0) != w.dim(0)) throw ShapeError("conv2d: bias must be [F]" + report());
  if (w.dim(2) % 2 == 0 || w.dim(3) % 2 == 0) throw ShapeError("conv2d: kernel must be odd" + report());
  if (stride == 0) throw ShapeError("conv2d: stride must be positive" + report());
  const std::size_t span_h = x.dim(2) + 2 * padding;
  const std::size_t span_w = x.dim(3) + 2 * padding;
  if (span_h < w.dim(2) || span_w < w.dim(3) || (span_h - w.dim(2)) % stride != 0 ||
      (span_w - w.dim(3)) % stride != 0) {
    throw ShapeError("conv2d: output size is not integral" + report());
  }

  const detail::ConvGeometry geo{x.dim(1), x.dim(2), x.dim(3), w.dim(2), w.dim(3), stride, padding,
                                 (span_h - w.dim(2)) / stride + 1, (span_w - w.dim(3)) / stride + 1};
  const std::size_t N = x.dim(0), F = w.dim(0), K = geo.patch(), P = geo.pixels();
  const std::size_t in_plane = geo.channels * geo.height * geo.width;

  using Mat = detail::RowMatrix<T>;
  using CMap = Eigen::Map<const Mat>;
  using MMap = Eigen::Map<Mat>;

  Tensor<T> out(Shape{N, F, geo.out_h, geo.out_w});
  Buffer<T> col(K * P);
  const CMap wm(w.data().data(), F, K);
  for (std::size_t n = 0; n < N; ++n) {
    detail::im2col(x.data().data() + n * in_plane, geo, col.data());
    MMap y(out.data().data() + n * F * P, F, P);
    y.noalias() = wm * CMap(col.data(), K, P);
    for (std::size_t f = 0; f < F; ++f) y.row(f).array() += b[f];
  }

  const std::size_t xi = input.id, wi = weight.id, bi = bias.id;
  return input.graph->record(
      "conv2d", {xi, wi, bi}, std::move(out), [geo, N, F, K, P, in_plane, xi, wi, bi](Graph<T>& g, std::size_t self) {
        auto gy = g.grad(self);
        auto gx = g.grad_if_required(xi);
        auto gw = g.grad_if_required(wi);
        auto gb = g.grad_if_required(bi);
        const auto& xv = g.value(xi);
        const CMap wm(g.value(wi).data().data(), F, K);
        Buffer<T> col(gw.empty() ? 0 : K * P);
        Buffer<T> dcol(gx.empty() ? 0 : K * P);
        for (std::size_t n = 0; n < N; ++n) {
          const CMap gyn(gy.data() + n * F * P, F, P);
          if (!gb.empty()) {
            for (std::size_t f = 0; f < F; ++f) gb[f] += gyn.row(f).sum();
          }
          if (!gw.empty()) {
            detail::im2col(xv.data().data() + n * in_plane, geo, col.data());
            MMap gwm(gw.data(), F, K);
            gwm.noalias() += gyn * CMap(col.data(), K, P).transpose();
          }
          if (!gx.empty()) {
            MMap dc(dcol.data(), K, P);
            dc.noalias() = wm.transpose() * gyn;
            detail::col2im(dcol.data(), geo, gx.data() + n * in_plane);
          }
        }
      });
}

/// 2x2 non-overlapping max pool. Ties go to the first element of the window
/// in row-major order, and so does the gradient.
template <typename T>
Var<T> maxpool2(Var<T> input) {
  const auto& x = input.value();
  detail::require_rank4(x.shape(), "maxpool2", "input");
  if (x.dim(2) % 2 || x.dim(3) % 2) {
    throw ShapeError("maxpool2: spatial size must be even, got " + describe(x.shape()));
  }
  const std::size_t N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  const std::size_t Ho = H / 2, Wo = W / 2;
  Tensor<T> out(Shape{N, C, Ho, Wo});
  std::vector<std::size_t> argmax(out.size());
  std::size_t o = 0;
  for (std::size_t nc = 0; nc < N * C; ++nc) {
    const std::size_t base = nc * H * W;
    for (std::size_t oy = 0; oy < Ho; ++oy) {
      for (std::size_t ox = 0; ox < Wo; ++ox, ++o) {
        std::size_t best = base + 2 * oy * W + 2 * ox;
        const std::size_t candidates[3] = {best + 1, best + W, best + W + 1};
        for (auto c : candidates) {
          if (x[c] > x[best]) best = c;
        }
        out[o] = x[best];
        argmax[o] = best;
      }
    }
  }
  const std::size_t xi = input.id;
  return input.graph->record("maxpool2", {xi}, std::move(out),
                             [xi, argmax = std::move(argmax)](Graph<T>& g, std::size_t self) {
                               auto gy = g.grad(self);
                               auto gx = g.grad(xi);
                               for (std::size_t i = 0; i < gy.size(); ++i) gx[argmax[i]] += gy[i];
                             });
}

/// Nearest-neighbour x2 upsampling: every pixel becomes a 2x2 block.
template <typename T>
Var<T> upsample_nearest2(Var<T> input) {
  const auto& x = input.value();
  detail::require_rank4(x.shape(), "upsample_nearest2", "input");
  const std::size_t NC = x.dim(0) * x.dim(1), H = x.dim(2), W = x.dim(3);
  Tensor<T> out(Shape{x.dim(0), x.dim(1), 2 * H, 2 * W});
  for (std::size_t nc = 0; nc < NC; ++nc) {
    const T* src = x.data().data() + nc * H * W;
    T* dst = out.data().data() + nc * 4 * H * W;
    for (std::size_t y = 0; y < 2 * H; ++y) {
      for (std::size_t xx = 0; xx < 2 * W; ++xx) dst[y * 2 * W + xx] = src[(y / 2) * W + xx / 2];
    }
  }
  const std::size_t xi = input.id;
  return input.graph->record("upsample_nearest2", {xi}, std::move(out),
                             [xi, NC, H, W](Graph<T>& g, std::size_t self) {
                               auto gy = g.grad(self);
                               auto gx = g.grad(xi);
                               for (std::size_t nc = 0; nc < NC; ++nc) {
                                 const T* src = gy.data() + nc * 4 * H * W;
                                 T* dst = gx.data() + nc * H * W;
                                 for (std::size_t y = 0; y < 2 * H; ++y) {
                                   for (std::size_t xx = 0; xx < 2 * W; ++xx) {
                                     dst[(y / 2) * W + xx / 2] += src[y * 2 * W + xx];
                                   }
                                 }
                               }
                             });
}

/// max(0, x). The gradient at exactly zero is zero.
template <typename T>
Var<T> relu(Var<T> input) {
  const auto& x = input.value();
  Tensor<T> out(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] > T{0} ? x[i] : T{0};
  const std::size_t xi = input.id;
  return input.graph->record("relu", {xi}, std::move(out), [xi](Graph<T>& g, std::size_t self) {
    auto gy = g.grad(self);
    auto gx = g.grad(xi);
    const auto& xv = g.value(xi);
    for (std::size_t i = 0; i < gy.size(); ++i) {
      if (xv[i] > T{0}) gx[i] += gy[i];
    }
  });
}

template <typename T>
T sigmoid_value(T x) {
  if (x >= T{0}) return T{1} / (T{1} + std::exp(-x));
  const T e = std::exp(x);
  return e / (T{1} + e);
}

template <typename T>
Var<T> sigmoid(Var<T> input) {
  const auto& x = input.value();
  Tensor<T> out(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = sigmoid_value(x[i]);
  const std::size_t xi = input.id;
  return input.graph->record("sigmoid", {xi}, std::move(out), [xi](Graph<T>& g, std::size_t self) {
    auto gy = g.grad(self);
    auto gx = g.grad(xi);
    const auto& y = g.value(self);
    for (std::size_t i = 0; i < gy.size(); ++i) gx[i] += gy[i] * y[i] * (T{1} - y[i]);
  });
}

/// Stack `a` then `b` along the channel axis.
template <typename T>
Var<T> concat_channels(Var<T> a, Var<T> b) {
  const auto& av = a.value();
  const auto& bv = b.value();
  detail::require_rank4(av.shape(), "concat_channels", "first input");
  detail::require_rank4(bv.shape(), "concat_channels", "second input");
  if (av.dim(0) != bv.dim(0) || av.dim(2) != bv.dim(2) || av.dim(3) != bv.dim(3)) {
    throw ShapeError("concat_channels: N,H,W must match, got " + describe(av.shape()) + " and " +
                     describe(bv.shape()));
  }
  const std::size_t N = av.dim(0), plane = av.dim(2) * av.dim(3);
  const std::size_t ca = av.dim(1) * plane, cb = bv.dim(1) * plane;
  Tensor<T> out(Shape{N, av.dim(1) + bv.dim(1), av.dim(2), av.dim(3)});
  for (std::size_t n = 0; n < N; ++n) {
    std::copy_n(av.data().data() + n * ca, ca, out.data().data() + n * (ca + cb));
    std::copy_n(bv.data().data() + n * cb, cb, out.data().data() + n * (ca + cb) + ca);
  }
  const std::size_t ai = a.id, bi = b.id;
  return a.graph->record("concat_channels", {ai, bi}, std::move(out),
                         [ai, bi, N, ca, cb](Graph<T>& g, std::size_t self) {
                           auto gy = g.grad(self);
                           auto ga = g.grad_if_required(ai);
                           auto gb = g.grad_if_required(bi);
                           for (std::size_t n = 0; n < N; ++n) {
                             const T* src = gy.data() + n * (ca + cb);
                             if (!ga.empty()) {
                               for (std::size_t i = 0; i < ca; ++i) ga[n * ca + i] += src[i];
                             }
                             if (!gb.empty()) {
                               for (std::size_t i = 0; i < cb; ++i) gb[n * cb + i] += src[ca + i];
                             }
                           }
                         });
}

/// Normalised coordinate of index i on an axis of length n: linear in [-1, 1],
/// and 0 for a single-element axis.
inline double coord_value(std::size_t i, std::size_t n) {
  return n <= 1 ? 0.0 : 2.0 * static_cast<double>(i) / static_cast<double>(n - 1) - 1.0;
}

/// CoordConv input augmentation: appends a column-coordinate channel and a
/// row-coordinate channel. With `zeroed` the two channels are present but
/// hold zeros.
template <typename T>
Var<T> coord_augment(Var<T> input, bool zeroed = false) {
  const auto& x = input.value();
  detail::require_rank4(x.shape(), "coord_augment", "input");
  const std::size_t N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  const std::size_t plane = H * W;
  Tensor<T> out(Shape{N, C + 2, H, W});
  for (std::size_t n = 0; n < N; ++n) {
    std::copy_n(x.data().data() + n * C * plane, C * plane, out.data().data() + n * (C + 2) * plane);
    if (zeroed) continue;
    for (std::size_t r = 0; r < H; ++r) {
      for (std::size_t c = 0; c < W; ++c) {
        out.at(n, C, r, c) = static_cast<T>(coord_value(c, W));
        out.at(n, C + 1, r, c) = static_cast<T>(coord_value(r, H));
      }
    }
  }
  const std::size_t xi = input.id;
  return input.graph->record("coord_augment", {xi}, std::move(out),
                             [xi, N, C, plane](Graph<T>& g, std::size_t self) {
                               auto gy = g.grad(self);
                               auto gx = g.grad(xi);
                               for (std::size_t n = 0; n < N; ++n) {
                                 for (std::size_t i = 0; i < C * plane; ++i) {
                                   gx[n * C * plane + i] += gy[n * (C + 2) * plane + i];
                                 }
                               }
                             });
}

/// a + scale * b, elementwise on equal shapes.
template <typename T>
Var<T> add(Var<T> a, Var<T> b, T scale = T{1}) {
  const auto& av = a.value();
  const auto& bv = b.value();
  if (av.shape() != bv.shape()) {
    throw ShapeError("add: shapes differ, " + describe(av.shape()) + " vs " + describe(bv.shape()));
  }
  Tensor<T> out(av.shape());
  for (std::size_t i = 0; i < av.size(); ++i) out[i] = av[i] + scale * bv[i];
  const std::size_t ai = a.id, bi = b.id;
  return a.graph->record("add", {ai, bi}, std::move(out), [ai, bi, scale](Graph<T>& g, std::size_t self) {
    auto gy = g.grad(self);
    auto ga = g.grad_if_required(ai);
    auto gb = g.grad_if_required(bi);
    for (std::size_t i = 0; i < gy.size(); ++i) {
      if (!ga.empty()) ga[i] += gy[i];
      if (!gb.empty()) gb[i] += scale * gy[i];
    }
  });
}

/// Scalar sum(x * weights) for a constant weight tensor of the same size.
template <typename T>
Var<T> weighted_sum(Var<T> input, Tensor<T> weights) {
  const auto& x = input.value();
  if (x.size() != weights.size()) {
    throw ShapeError("weighted_sum: input " + describe(x.shape()) + " vs weights " +
                     describe(weights.shape()));
  }
  T total{0};
  for (std::size_t i = 0; i < x.size(); ++i) total += x[i] * weights[i];
  const std::size_t xi = input.id;
  return input.graph->record("weighted_sum", {xi}, Tensor<T>::scalar(total),
                             [xi, weights = std::move(weights)](Graph<T>& g, std::size_t self) {
                               const T gy = g.grad(self)[0];
                               auto gx = g.grad(xi);
                               for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += gy * weights[i];
                             });
}

}  // namespace irisloc

#endif  // IRISLOC_OPS_HPP
