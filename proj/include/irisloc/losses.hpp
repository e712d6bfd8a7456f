#ifndef IRISLOC_LOSSES_HPP
#define IRISLOC_LOSSES_HPP

// Training objectives.
//
// Segmentation uses the plain sum  dice_loss + lambda * boundary_loss  with
// lambda = 1 by default. The boundary term is the mean over pixels of
// (soft prediction x signed distance to the ground-truth boundary), which is
// negative when predicted mass sits inside the region and grows with every
// unit of mass placed far outside it. Regression uses per-pixel MSE against
// a Gaussian target heatmap.
//
// Each loss exists twice: a scalar form on grids (double accumulation) and a
// batched graph form over [N,1,H,W] tensors that averages the per-sample
// value over the batch.

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <utility>
#include <vector>

#include "irisloc/errors.hpp"
#include "irisloc/graph.hpp"
#include "irisloc/grid.hpp"
#include "irisloc/ops.hpp"
#include "irisloc/tensor.hpp"

namespace irisloc {

inline constexpr double kDiceEpsilon = 1e-6;

/// 1 - (2*sum(p*g) + eps) / (sum(p) + sum(g) + eps).
inline double dice_loss(const Grid<float>& pred, const Grid<float>& gt) {
  require_same_shape(pred, gt, "dice_loss");
  double inter = 0.0, total = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    inter += static_cast<double>(pred.values[i]) * gt.values[i];
    total += static_cast<double>(pred.values[i]) + gt.values[i];
  }
  return 1.0 - (2.0 * inter + kDiceEpsilon) / (total + kDiceEpsilon);
}

inline double dice_loss(const Grid<float>& pred, const BinaryMask& gt) {
  Grid<float> g(gt.height, gt.width);
  for (std::size_t i = 0; i < gt.size(); ++i) g.values[i] = gt.values[i] ? 1.0f : 0.0f;
  return dice_loss(pred, g);
}

/// A foreground pixel is on the boundary when one of its 4-neighbours is
/// background or lies outside the image.
inline bool is_boundary_pixel(const BinaryMask& mask, std::size_t r, std::size_t c) {
  if (!mask(r, c)) return false;
  if (r == 0 || c == 0 || r + 1 == mask.height || c + 1 == mask.width) return true;
  return !mask(r - 1, c) || !mask(r + 1, c) || !mask(r, c - 1) || !mask(r, c + 1);
}

/// Exact signed Euclidean distance to the nearest boundary pixel, by brute
/// force over the boundary set. An empty mask gives an all-zero map.
inline SignedDistanceMap signed_distance_map(const BinaryMask& mask) {
  SignedDistanceMap out(mask.height, mask.width, 0.0f);
  std::vector<std::pair<std::int64_t, std::int64_t>> boundary;
  for (std::size_t r = 0; r < mask.height; ++r) {
    for (std::size_t c = 0; c < mask.width; ++c) {
      if (is_boundary_pixel(mask, r, c)) boundary.emplace_back(r, c);
    }
  }
  if (boundary.empty()) return out;
  for (std::size_t r = 0; r < mask.height; ++r) {
    for (std::size_t c = 0; c < mask.width; ++c) {
      std::int64_t best = std::numeric_limits<std::int64_t>::max();
      for (const auto& [br, bc] : boundary) {
        const std::int64_t dr = static_cast<std::int64_t>(r) - br;
        const std::int64_t dc = static_cast<std::int64_t>(c) - bc;
        best = std::min(best, dr * dr + dc * dc);
      }
      const auto dist = static_cast<float>(std::sqrt(static_cast<double>(best)));
      out(r, c) = mask(r, c) ? -dist : dist;
    }
  }
  return out;
}

/// mean(pred * sdm).
inline double boundary_loss(const Grid<float>& pred, const SignedDistanceMap& sdm) {
  require_same_shape(pred, sdm, "boundary_loss");
  if (pred.empty()) return 0.0;
  double total = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) total += static_cast<double>(pred.values[i]) * sdm.values[i];
  return total / static_cast<double>(pred.size());
}

inline double total_seg_loss(const Grid<float>& pred, const BinaryMask& gt, double lambda = 1.0) {
  return dice_loss(pred, gt) + lambda * boundary_loss(pred, signed_distance_map(gt));
}

inline double mse_heatmap_loss(const Grid<float>& pred, const Grid<float>& gt) {
  require_same_shape(pred, gt, "mse_heatmap_loss");
  if (pred.empty()) return 0.0;
  double total = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const double d = static_cast<double>(pred.values[i]) - gt.values[i];
    total += d * d;
  }
  return total / static_cast<double>(pred.size());
}

namespace detail {

inline void require_batch_match(const Shape& pred, const Shape& target, const char* op) {
  if (pred.size() != 4 || pred[1] != 1 || pred != target) {
    throw ShapeError(std::string(op) + ": prediction " + describe(pred) + " and target " + describe(target) +
                     " must both be [N,1,H,W]");
  }
}

}  // namespace detail

/// Batch mean of the per-sample Dice loss.
template <typename T>
Var<T> dice_loss(Var<T> pred, Tensor<T> gt) {
  const auto& p = pred.value();
  detail::require_batch_match(p.shape(), gt.shape(), "dice_loss");
  const std::size_t N = p.dim(0), plane = p.dim(2) * p.dim(3);
  const T eps = static_cast<T>(kDiceEpsilon);
  std::vector<T> inter(N, T{0}), total(N, T{0});
  T loss{0};
  for (std::size_t n = 0; n < N; ++n) {
    for (std::size_t i = n * plane; i < (n + 1) * plane; ++i) {
      inter[n] += p[i] * gt[i];
      total[n] += p[i] + gt[i];
    }
    loss += T{1} - (T{2} * inter[n] + eps) / (total[n] + eps);
  }
  loss /= static_cast<T>(N);
  const std::size_t pi = pred.id;
  return pred.graph->record(
      "dice_loss", {pi}, Tensor<T>::scalar(loss),
      [pi, N, plane, eps, gt = std::move(gt), inter = std::move(inter), total = std::move(total)](
          Graph<T>& g, std::size_t self) {
        const T gy = g.grad(self)[0] / static_cast<T>(N);
        auto gp = g.grad(pi);
        for (std::size_t n = 0; n < N; ++n) {
          const T denom = total[n] + eps;
          const T num = T{2} * inter[n] + eps;
          for (std::size_t i = n * plane; i < (n + 1) * plane; ++i) {
            gp[i] -= gy * (T{2} * gt[i] * denom - num) / (denom * denom);
          }
        }
      });
}

/// Batch mean of mean(pred * sdm).
template <typename T>
Var<T> boundary_loss(Var<T> pred, Tensor<T> sdm) {
  const auto& p = pred.value();
  detail::require_batch_match(p.shape(), sdm.shape(), "boundary_loss");
  T loss{0};
  for (std::size_t i = 0; i < p.size(); ++i) loss += p[i] * sdm[i];
  const T scale = T{1} / static_cast<T>(p.size());
  loss *= scale;
  const std::size_t pi = pred.id;
  return pred.graph->record("boundary_loss", {pi}, Tensor<T>::scalar(loss),
                            [pi, scale, sdm = std::move(sdm)](Graph<T>& g, std::size_t self) {
                              const T gy = g.grad(self)[0];
                              auto gp = g.grad(pi);
                              for (std::size_t i = 0; i < gp.size(); ++i) gp[i] += gy * sdm[i] * scale;
                            });
}

/// dice + lambda * boundary, exactly as a plain weighted sum.
template <typename T>
Var<T> total_seg_loss(Var<T> pred, Tensor<T> gt, Tensor<T> sdm, T lambda = T{1}) {
  auto dice = dice_loss(pred, std::move(gt));
  auto boundary = boundary_loss(pred, std::move(sdm));
  return add(dice, boundary, lambda);
}

/// Mean over all pixels of (pred - target)^2.
template <typename T>
Var<T> mse_loss(Var<T> pred, Tensor<T> target) {
  const auto& p = pred.value();
  detail::require_batch_match(p.shape(), target.shape(), "mse_loss");
  T loss{0};
  for (std::size_t i = 0; i < p.size(); ++i) {
    const T d = p[i] - target[i];
    loss += d * d;
  }
  const T scale = T{1} / static_cast<T>(p.size());
  loss *= scale;
  const std::size_t pi = pred.id;
  return pred.graph->record("mse_loss", {pi}, Tensor<T>::scalar(loss),
                            [pi, scale, target = std::move(target)](Graph<T>& g, std::size_t self) {
                              const T gy = g.grad(self)[0];
                              auto gp = g.grad(pi);
                              const auto& pv = g.value(pi);
                              for (std::size_t i = 0; i < gp.size(); ++i) {
                                gp[i] += gy * T{2} * (pv[i] - target[i]) * scale;
                              }
                            });
}

}  // namespace irisloc

#endif  // IRISLOC_LOSSES_HPP
