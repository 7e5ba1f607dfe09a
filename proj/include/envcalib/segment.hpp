#pragma once

// Stand-in segmenter: connected components over quantized intensity, or over
// depth continuity. A pixel value of exactly 0 is background.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <vector>

#include "envcalib/image.hpp"
#include "envcalib/mask.hpp"

namespace envcalib {

struct SegmentParams {
  int levels = 8;               // intensity quantization levels
  std::size_t min_area = 25;    // smaller components are discarded
  double depth_rel_tol = 0.03;  // depth continuity: |d1 - d2| <= max(abs, rel * min(d1, d2))
  double depth_abs_tol = 0.05;  // meters
};

namespace detail {

/// 4-connected labelling where `same(a, b)` decides whether two adjacent
/// foreground pixels (flat indices) join. Returns masks ordered by first pixel.
template <typename Fg, typename Same>
std::vector<Mask> connected_masks(int width, int height, Fg&& foreground, Same&& same, std::size_t min_area) {
  std::vector<Mask> masks;
  Image<std::int32_t> labels(width, height, -1);
  std::vector<std::array<int, 2>> stack;
  std::vector<std::array<int, 2>> members;
  int next_label = 0;
  for (int y = 0; y < height; ++y) {
    for (int x = 0; x < width; ++x) {
      if (labels(x, y) >= 0 || !foreground(x, y)) continue;
      const int label = next_label++;
      labels(x, y) = label;
      stack.assign(1, {x, y});
      members.clear();
      int x0 = x, x1 = x, y0 = y, y1 = y;
      while (!stack.empty()) {
        const auto p = stack.back();
        stack.pop_back();
        members.push_back(p);
        x0 = std::min(x0, p[0]);
        x1 = std::max(x1, p[0]);
        y0 = std::min(y0, p[1]);
        y1 = std::max(y1, p[1]);
        static constexpr int kDx[4] = {1, -1, 0, 0};
        static constexpr int kDy[4] = {0, 0, 1, -1};
        for (int k = 0; k < 4; ++k) {
          const int nx = p[0] + kDx[k], ny = p[1] + kDy[k];
          if (!labels.in_bounds(nx, ny) || labels(nx, ny) >= 0 || !foreground(nx, ny)) continue;
          if (!same(p[0], p[1], nx, ny)) continue;
          labels(nx, ny) = label;
          stack.push_back({nx, ny});
        }
      }
      if (members.size() < min_area) continue;
      ImageU8 local(x1 - x0 + 1, y1 - y0 + 1, 0);
      for (const auto& p : members) local(p[0] - x0, p[1] - y0) = 1;
      Region region = Region::from_labels<std::uint8_t>(local, 1).shifted(x0, y0);
      masks.push_back(mask_from_region(static_cast<int>(masks.size()), std::move(region)));
    }
  }
  return masks;
}

}  // namespace detail

inline int quantize_level(float v, int levels) {
  return std::clamp(static_cast<int>(std::floor(static_cast<double>(v) * levels)), 0, levels - 1);
}

/// Components of equal quantized intensity (values in [0, 1]).
inline std::vector<Mask> segment_intensity(const ImageF& img, const SegmentParams& params = {}) {
  if (params.levels < 1) throw Error(ErrorCode::InvalidArgument, "levels must be >= 1");
  return detail::connected_masks(
      img.width(), img.height(), [&](int x, int y) { return img(x, y) != 0.0f; },
      [&](int ax, int ay, int bx, int by) {
        return quantize_level(img(ax, ay), params.levels) == quantize_level(img(bx, by), params.levels);
      },
      params.min_area);
}

/// Components of continuous depth (meters; 0 = no depth).
inline std::vector<Mask> segment_depth(const ImageF& depth, const SegmentParams& params = {}) {
  return detail::connected_masks(
      depth.width(), depth.height(), [&](int x, int y) { return depth(x, y) > 0.0f; },
      [&](int ax, int ay, int bx, int by) {
        const double a = depth(ax, ay), b = depth(bx, by);
        return std::abs(a - b) <= std::max(params.depth_abs_tol, params.depth_rel_tol * std::min(a, b));
      },
      params.min_area);
}

}  // namespace envcalib
