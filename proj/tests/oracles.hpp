#ifndef IRISLOC_TESTS_ORACLES_HPP
#define IRISLOC_TESTS_ORACLES_HPP

// Slow, direct reference implementations used to check the library.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <deque>
#include <limits>
#include <optional>
#include <utility>
#include <vector>

#include "irisloc/grid.hpp"
#include "irisloc/rng.hpp"
#include "irisloc/tensor.hpp"

namespace oracle {

using irisloc::BinaryMask;
using irisloc::Tensor;

/// Direct cross-correlation with zero padding.
inline Tensor<double> conv2d(const Tensor<double>& x, const Tensor<double>& w, const Tensor<double>& b,
                             std::size_t stride, std::size_t pad) {
  const std::size_t N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  const std::size_t F = w.dim(0), kh = w.dim(2), kw = w.dim(3);
  const std::size_t Ho = (H + 2 * pad - kh) / stride + 1, Wo = (W + 2 * pad - kw) / stride + 1;
  Tensor<double> out(irisloc::Shape{N, F, Ho, Wo});
  for (std::size_t n = 0; n < N; ++n)
    for (std::size_t f = 0; f < F; ++f)
      for (std::size_t i = 0; i < Ho; ++i)
        for (std::size_t j = 0; j < Wo; ++j) {
          double s = b[f];
          for (std::size_t c = 0; c < C; ++c)
            for (std::size_t u = 0; u < kh; ++u)
              for (std::size_t v = 0; v < kw; ++v) {
                const long r = static_cast<long>(i * stride + u) - static_cast<long>(pad);
                const long q = static_cast<long>(j * stride + v) - static_cast<long>(pad);
                if (r < 0 || q < 0 || r >= static_cast<long>(H) || q >= static_cast<long>(W)) continue;
                s += x.at(n, c, static_cast<std::size_t>(r), static_cast<std::size_t>(q)) * w.at(f, c, u, v);
              }
          out.at(n, f, i, j) = s;
        }
  return out;
}

struct Blob {
  std::size_t area = 0;
  std::vector<std::pair<std::size_t, std::size_t>> pixels;  // sorted (r, c)
};

/// Breadth-first flood fill, 8-connected; blobs in order of their first
/// pixel in row-major scan.
inline std::vector<Blob> flood_fill(const BinaryMask& m) {
  std::vector<std::vector<bool>> seen(m.height, std::vector<bool>(m.width, false));
  std::vector<Blob> out;
  for (std::size_t r = 0; r < m.height; ++r)
    for (std::size_t c = 0; c < m.width; ++c) {
      if (!m(r, c) || seen[r][c]) continue;
      Blob blob;
      std::deque<std::pair<std::size_t, std::size_t>> q{{r, c}};
      seen[r][c] = true;
      while (!q.empty()) {
        const auto [pr, pc] = q.front();
        q.pop_front();
        blob.pixels.emplace_back(pr, pc);
        for (int dr = -1; dr <= 1; ++dr)
          for (int dc = -1; dc <= 1; ++dc) {
            const long nr = static_cast<long>(pr) + dr, nc = static_cast<long>(pc) + dc;
            if (nr < 0 || nc < 0 || nr >= static_cast<long>(m.height) || nc >= static_cast<long>(m.width)) continue;
            const auto ur = static_cast<std::size_t>(nr), uc = static_cast<std::size_t>(nc);
            if (m(ur, uc) && !seen[ur][uc]) {
              seen[ur][uc] = true;
              q.emplace_back(ur, uc);
            }
          }
      }
      std::sort(blob.pixels.begin(), blob.pixels.end());
      blob.area = blob.pixels.size();
      out.push_back(std::move(blob));
    }
  return out;
}

inline std::optional<irisloc::PixelPoint> largest_centroid(const BinaryMask& m) {
  const auto blobs = flood_fill(m);
  if (blobs.empty()) return std::nullopt;
  std::size_t best = 0;
  for (std::size_t k = 1; k < blobs.size(); ++k)
    if (blobs[k].area > blobs[best].area) best = k;
  double sx = 0, sy = 0;
  for (const auto& [r, c] : blobs[best].pixels) {
    sx += static_cast<double>(c);
    sy += static_cast<double>(r);
  }
  const auto n = static_cast<double>(blobs[best].area);
  return irisloc::PixelPoint{sx / n, sy / n};
}

/// All-pairs signed distance: every pixel against every boundary pixel.
inline irisloc::Grid<float> signed_distance(const BinaryMask& m) {
  const long H = static_cast<long>(m.height), W = static_cast<long>(m.width);
  const auto fg = [&](long r, long c) {
    return r >= 0 && c >= 0 && r < H && c < W && m(static_cast<std::size_t>(r), static_cast<std::size_t>(c));
  };
  std::vector<std::pair<long, long>> boundary;
  for (long r = 0; r < H; ++r)
    for (long c = 0; c < W; ++c)
      if (fg(r, c) && (!fg(r - 1, c) || !fg(r + 1, c) || !fg(r, c - 1) || !fg(r, c + 1))) boundary.emplace_back(r, c);
  irisloc::Grid<float> out(m.height, m.width, 0.0f);
  if (boundary.empty()) return out;
  for (long r = 0; r < H; ++r)
    for (long c = 0; c < W; ++c) {
      long best = std::numeric_limits<long>::max();
      for (const auto& [br, bc] : boundary) best = std::min(best, (r - br) * (r - br) + (c - bc) * (c - bc));
      const double d = std::sqrt(static_cast<double>(best));
      out(static_cast<std::size_t>(r), static_cast<std::size_t>(c)) = static_cast<float>(fg(r, c) ? -d : d);
    }
  return out;
}

struct Counts {
  std::size_t tp = 0, fp = 0, fn = 0, tn = 0;
};

inline Counts confusion(const BinaryMask& pred, const BinaryMask& gt) {
  Counts c;
  for (std::size_t r = 0; r < gt.height; ++r)
    for (std::size_t col = 0; col < gt.width; ++col) {
      const bool p = pred(r, col) != 0, g = gt(r, col) != 0;
      if (p && g) ++c.tp;
      else if (p) ++c.fp;
      else if (g) ++c.fn;
      else ++c.tn;
    }
  return c;
}

inline BinaryMask random_mask(irisloc::Rng& rng, std::size_t h, std::size_t w, double p) {
  BinaryMask m(h, w);
  for (auto& v : m.values) v = rng.bernoulli(p) ? 1 : 0;
  return m;
}

}  // namespace oracle

#endif  // IRISLOC_TESTS_ORACLES_HPP
