#ifndef IRISLOC_OVERLAY_HPP
#define IRISLOC_OVERLAY_HPP

// Prediction overlays written as binary PPM (P6). Segmentation output is
// drawn as the boundary of the binarized mask; heatmap output as the
// half-maximum iso-contour. Both get a crosshair on the predicted centre.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include "irisloc/errors.hpp"
#include "irisloc/grid.hpp"
#include "irisloc/localise.hpp"
#include "irisloc/losses.hpp"

namespace irisloc {

struct Rgb {
  std::uint8_t r = 0, g = 0, b = 0;
};

struct RgbImage {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<std::uint8_t> bytes;  // r,g,b per pixel, row-major

  RgbImage(std::size_t h, std::size_t w) : height(h), width(w), bytes(h * w * 3, 0) {}

  void set(std::size_t r, std::size_t c, Rgb v) {
    auto* p = &bytes[(r * width + c) * 3];
    p[0] = v.r;
    p[1] = v.g;
    p[2] = v.b;
  }
  Rgb get(std::size_t r, std::size_t c) const {
    const auto* p = &bytes[(r * width + c) * 3];
    return {p[0], p[1], p[2]};
  }
};

inline constexpr Rgb kOverlayRed{255, 0, 0};
inline constexpr Rgb kOverlayYellow{255, 220, 0};

inline RgbImage to_rgb(const Image& img) {
  RgbImage out(img.height, img.width);
  for (std::size_t r = 0; r < img.height; ++r) {
    for (std::size_t c = 0; c < img.width; ++c) {
      const auto v = static_cast<std::uint8_t>(std::lround(std::clamp(img(r, c), 0.0f, 1.0f) * 255.0f));
      out.set(r, c, {v, v, v});
    }
  }
  return out;
}

inline void draw_crosshair(RgbImage& img, PixelPoint p, int arm, Rgb colour) {
  const auto r0 = static_cast<long>(std::lround(p.y)), c0 = static_cast<long>(std::lround(p.x));
  const auto put = [&](long r, long c) {
    if (r >= 0 && c >= 0 && r < static_cast<long>(img.height) && c < static_cast<long>(img.width)) {
      img.set(static_cast<std::size_t>(r), static_cast<std::size_t>(c), colour);
    }
  };
  for (long d = -arm; d <= arm; ++d) {
    put(r0 + d, c0);
    put(r0, c0 + d);
  }
}

inline void draw_mask_boundary(RgbImage& img, const BinaryMask& mask, Rgb colour) {
  for (std::size_t r = 0; r < mask.height; ++r) {
    for (std::size_t c = 0; c < mask.width; ++c) {
      if (mask(r, c) && is_boundary_pixel(mask, r, c)) img.set(r, c, colour);
    }
  }
}

/// Pixels at or above `fraction` of the map's maximum.
inline BinaryMask level_set(const Heatmap& map, double fraction) {
  BinaryMask out(map.height, map.width, 0);
  if (map.empty()) return out;
  const float peak = *std::max_element(map.values.begin(), map.values.end());
  const double level = fraction * static_cast<double>(peak);
  for (std::size_t i = 0; i < map.size(); ++i) out.values[i] = map.values[i] >= level ? 1 : 0;
  return out;
}

inline RgbImage render_overlay(const Image& image, const Grid<float>& output, bool segmentation,
                               const std::optional<PixelPoint>& centre, double threshold = kDefaultThreshold) {
  require_same_shape(image, output, "render_overlay");
  auto out = to_rgb(image);
  draw_mask_boundary(out, segmentation ? binarize(output, threshold) : level_set(output, 0.5), kOverlayRed);
  if (centre) draw_crosshair(out, *centre, 3, kOverlayYellow);
  return out;
}

inline void write_ppm(const RgbImage& img, const std::string& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("overlay '" + path + "': cannot open for writing");
  out << "P6\n" << img.width << " " << img.height << "\n255\n";
  out.write(reinterpret_cast<const char*>(img.bytes.data()), static_cast<std::streamsize>(img.bytes.size()));
  if (!out) throw IoError("overlay '" + path + "': write failed");
}

}  // namespace irisloc

#endif  // IRISLOC_OVERLAY_HPP
