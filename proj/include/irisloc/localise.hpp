#ifndef IRISLOC_LOCALISE_HPP
#define IRISLOC_LOCALISE_HPP

// From model output to an iris-centre coordinate.
//
//   regression:   heatmap -> argmax_point          (integer "hottest" pixel)
//   segmentation: soft mask -> binarize -> connected_components
//                 -> centroid of the largest blob  (none on an empty mask)

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numeric>
#include <optional>
#include <vector>

#include "irisloc/errors.hpp"
#include "irisloc/grid.hpp"

namespace irisloc {

inline constexpr double kDefaultThreshold = 0.5;
inline constexpr double kDefaultSigma = 3.0;

/// exp(-((c - x)^2 + (r - y)^2) / (2 sigma^2)), unnormalised (peak 1 on a
/// lattice point).
inline Heatmap gaussian_heatmap(PixelPoint center, std::size_t height, std::size_t width, double sigma) {
  if (!(sigma > 0.0)) throw ValidationError("gaussian_heatmap: sigma must be positive");
  if (!std::isfinite(center.x) || !std::isfinite(center.y) || center.x < -0.5 || center.y < -0.5 ||
      center.x > static_cast<double>(width) - 0.5 || center.y > static_cast<double>(height) - 0.5) {
    throw ValidationError("gaussian_heatmap: centre lies outside the image");
  }
  Heatmap out(height, width);
  const double denom = 2.0 * sigma * sigma;
  for (std::size_t r = 0; r < height; ++r) {
    const double dy = static_cast<double>(r) - center.y;
    for (std::size_t c = 0; c < width; ++c) {
      const double dx = static_cast<double>(c) - center.x;
      out(r, c) = static_cast<float>(std::exp(-(dx * dx + dy * dy) / denom));
    }
  }
  return out;
}

/// Position of the maximum; ties go to the smallest row-major index.
inline PixelPoint argmax_point(const Heatmap& map) {
  if (map.empty()) throw ShapeError("argmax_point: empty map");
  std::size_t best = 0;
  for (std::size_t i = 1; i < map.size(); ++i) {
    if (map.values[i] > map.values[best]) best = i;
  }
  return {static_cast<double>(best % map.width), static_cast<double>(best / map.width)};
}

/// Optional refinement: intensity-weighted mean over the 3x3 neighbourhood of
/// the argmax, using values clipped at zero. Falls back to the integer point
/// when the neighbourhood carries no positive mass.
inline PixelPoint refine_subpixel(const Heatmap& map, PixelPoint peak) {
  const auto r0 = static_cast<std::ptrdiff_t>(peak.y), c0 = static_cast<std::ptrdiff_t>(peak.x);
  double sx = 0, sy = 0, sw = 0;
  for (std::ptrdiff_t dr = -1; dr <= 1; ++dr) {
    for (std::ptrdiff_t dc = -1; dc <= 1; ++dc) {
      const auto r = r0 + dr, c = c0 + dc;
      if (r < 0 || c < 0 || r >= static_cast<std::ptrdiff_t>(map.height) ||
          c >= static_cast<std::ptrdiff_t>(map.width)) {
        continue;
      }
      const double w = std::max(0.0f, map(static_cast<std::size_t>(r), static_cast<std::size_t>(c)));
      sx += w * static_cast<double>(c);
      sy += w * static_cast<double>(r);
      sw += w;
    }
  }
  if (sw <= 0.0) return peak;
  return {sx / sw, sy / sw};
}

/// mask = soft >= threshold.
inline BinaryMask binarize(const Grid<float>& soft, double threshold = kDefaultThreshold) {
  if (!(threshold > 0.0 && threshold < 1.0)) throw ValidationError("binarize: threshold must lie in (0, 1)");
  BinaryMask out(soft.height, soft.width, 0);
  for (std::size_t i = 0; i < soft.size(); ++i) out.values[i] = soft.values[i] >= threshold ? 1 : 0;
  return out;
}

struct Components {
  /// 0 for background, 1..count() for components.
  Grid<std::uint32_t> labels;
  /// areas[k] is the pixel count of label k + 1.
  std::vector<std::size_t> areas;

  std::size_t count() const noexcept { return areas.size(); }
};

/// 8-connected labelling. Labels follow first encounter in row-major order.
inline Components connected_components(const BinaryMask& mask) {
  const std::size_t H = mask.height, W = mask.width;
  Grid<std::uint32_t> provisional(H, W, 0);
  std::vector<std::uint32_t> parent{0};

  const auto find = [&](std::uint32_t x) {
    while (parent[x] != x) {
      parent[x] = parent[parent[x]];
      x = parent[x];
    }
    return x;
  };
  const auto unite = [&](std::uint32_t a, std::uint32_t b) {
    a = find(a);
    b = find(b);
    if (a == b) return;
    if (a < b) parent[b] = a;
    else parent[a] = b;
  };

  // First pass: provisional labels from the already-visited neighbours
  // (W, NW, N, NE).
  for (std::size_t r = 0; r < H; ++r) {
    for (std::size_t c = 0; c < W; ++c) {
      if (!mask(r, c)) continue;
      std::uint32_t label = 0;
      const auto visit = [&](std::size_t rr, std::size_t cc) {
        const auto l = provisional(rr, cc);
        if (!l) return;
        if (!label) label = l;
        else unite(label, l);
      };
      if (c > 0) visit(r, c - 1);
      if (r > 0) {
        if (c > 0) visit(r - 1, c - 1);
        visit(r - 1, c);
        if (c + 1 < W) visit(r - 1, c + 1);
      }
      if (!label) {
        label = static_cast<std::uint32_t>(parent.size());
        parent.push_back(label);
      }
      provisional(r, c) = label;
    }
  }

  // Second pass: compact roots into labels ordered by first encounter.
  Components out{Grid<std::uint32_t>(H, W, 0), {}};
  std::vector<std::uint32_t> final_label(parent.size(), 0);
  for (std::size_t i = 0; i < provisional.size(); ++i) {
    const auto l = provisional.values[i];
    if (!l) continue;
    const auto root = find(l);
    if (!final_label[root]) {
      out.areas.push_back(0);
      final_label[root] = static_cast<std::uint32_t>(out.areas.size());
    }
    out.labels.values[i] = final_label[root];
    ++out.areas[final_label[root] - 1];
  }
  return out;
}

/// Mean pixel coordinate of the largest component (ties: smallest label), or
/// nothing for an empty mask.
inline std::optional<PixelPoint> largest_blob_centroid(const BinaryMask& mask) {
  const auto comps = connected_components(mask);
  if (comps.count() == 0) return std::nullopt;
  std::uint32_t best = 1;
  for (std::uint32_t k = 2; k <= comps.count(); ++k) {
    if (comps.areas[k - 1] > comps.areas[best - 1]) best = k;
  }
  double sx = 0, sy = 0;
  for (std::size_t r = 0; r < mask.height; ++r) {
    for (std::size_t c = 0; c < mask.width; ++c) {
      if (comps.labels(r, c) == best) {
        sx += static_cast<double>(c);
        sy += static_cast<double>(r);
      }
    }
  }
  const auto n = static_cast<double>(comps.areas[best - 1]);
  return PixelPoint{sx / n, sy / n};
}

}  // namespace irisloc

#endif  // IRISLOC_LOCALISE_HPP
