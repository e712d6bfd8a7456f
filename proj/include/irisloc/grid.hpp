#ifndef IRISLOC_GRID_HPP
#define IRISLOC_GRID_HPP

#include <cstddef>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "irisloc/errors.hpp"
#include "irisloc/tensor.hpp"

namespace irisloc {

/// Row-major single-channel 2-D map.
template <typename T>
struct Grid {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<T> values;

  Grid() = default;
  Grid(std::size_t h, std::size_t w, T fill = T{}) : height(h), width(w), values(h * w, fill) {}
  Grid(std::size_t h, std::size_t w, std::vector<T> v) : height(h), width(w), values(std::move(v)) {
    if (values.size() != h * w) throw ShapeError("grid: value count does not match " + dims());
  }

  std::size_t size() const noexcept { return values.size(); }
  bool empty() const noexcept { return values.empty(); }

  T& operator()(std::size_t r, std::size_t c) { return values[r * width + c]; }
  const T& operator()(std::size_t r, std::size_t c) const { return values[r * width + c]; }

  std::string dims() const { return std::to_string(height) + "x" + std::to_string(width); }

  template <typename U>
  bool same_shape(const Grid<U>& other) const {
    return height == other.height && width == other.width;
  }

  friend bool operator==(const Grid&, const Grid&) = default;
};

/// Gray image or heatmap, float per pixel.
using Heatmap = Grid<float>;
using Image = Grid<float>;
/// 0/1 per pixel.
using BinaryMask = Grid<std::uint8_t>;
/// Per-pixel signed Euclidean distance to the ground-truth boundary: negative
/// inside the region, positive outside, zero on boundary pixels.
using SignedDistanceMap = Grid<float>;

/// Sub-pixel image coordinate: x is the column, y the row, origin at the
/// centre of the top-left pixel.
struct PixelPoint {
  double x = 0.0;
  double y = 0.0;

  friend bool operator==(const PixelPoint&, const PixelPoint&) = default;
};

template <typename T, typename U>
void require_same_shape(const Grid<T>& a, const Grid<U>& b, const char* op) {
  if (!a.same_shape(b)) throw ShapeError(std::string(op) + ": shape mismatch " + a.dims() + " vs " + b.dims());
}

/// Stack equally sized grids into an [N,1,H,W] tensor.
template <typename T, typename G>
Tensor<T> stack_batch(const std::vector<const G*>& grids) {
  if (grids.empty()) throw ShapeError("stack_batch: no grids");
  const std::size_t h = grids[0]->height, w = grids[0]->width;
  Tensor<T> out(Shape{grids.size(), 1, h, w});
  for (std::size_t n = 0; n < grids.size(); ++n) {
    if (grids[n]->height != h || grids[n]->width != w) {
      throw ShapeError("stack_batch: grid " + grids[n]->dims() + " differs from " + grids[0]->dims());
    }
    for (std::size_t i = 0; i < h * w; ++i) out[n * h * w + i] = static_cast<T>(grids[n]->values[i]);
  }
  return out;
}

/// Extract sample n of an [N,1,H,W] tensor as a grid.
template <typename T>
Grid<float> unstack(const Tensor<T>& batch, std::size_t n) {
  if (batch.rank() != 4 || batch.dim(1) != 1 || n >= batch.dim(0)) {
    throw ShapeError("unstack: expected [N,1,H,W] with N > " + std::to_string(n) + ", got " +
                     describe(batch.shape()));
  }
  const std::size_t h = batch.dim(2), w = batch.dim(3);
  Grid<float> out(h, w);
  for (std::size_t i = 0; i < h * w; ++i) out.values[i] = static_cast<float>(batch[n * h * w + i]);
  return out;
}

}  // namespace irisloc

#endif  // IRISLOC_GRID_HPP
