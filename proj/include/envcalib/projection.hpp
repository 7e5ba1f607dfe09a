#pragma once

// Virtual-camera rendering of LiDAR intensity (LIP) and depth (LDP) images,
// LiDAR field-of-view estimation and depth normalization.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <vector>

#include "envcalib/error.hpp"
#include "envcalib/geometry.hpp"
#include "envcalib/image.hpp"

namespace envcalib {

enum class Channel { Intensity, Depth };

struct VirtualCamera {
  Intrinsics intrinsics;
  Pose pose;  // camera-from-LiDAR
  Channel channel = Channel::Intensity;
};

constexpr std::int32_t kNoSource = -1;

/// Z-buffered rendering of a point cloud through one virtual camera. Both
/// channels are produced from the same z-buffer; `channel` selects the one
/// the image stands for.
struct ProjectionImage {
  Intrinsics intrinsics;
  Pose pose;
  Channel channel = Channel::Intensity;

  ImageF intensity;                 // winning point intensity, 0 = empty
  ImageF depth;                     // winning point depth (m), 0 = empty
  Image<std::int32_t> source_index; // winning point index, kNoSource = empty

  // Every point landing in a pixel (not just the z-buffer winner), CSR layout.
  std::vector<std::uint32_t> bucket_offsets;
  std::vector<std::int32_t> bucket_points;

  double min_depth = 0.0;  // depth range of all points that land in the image
  double max_depth = 0.0;
  std::size_t filled = 0;

  const ImageF& pixels() const { return channel == Channel::Intensity ? intensity : depth; }

  int width() const { return intensity.width(); }
  int height() const { return intensity.height(); }

  template <typename F>
  void for_each_in_pixel(int x, int y, F&& f) const {
    const std::size_t idx = intensity.index(x, y);
    for (std::uint32_t k = bucket_offsets[idx]; k < bucket_offsets[idx + 1]; ++k) f(bucket_points[k]);
  }
};

namespace detail {
inline bool pixel_of(const Vec2& uv, const Intrinsics& K, int& x, int& y) {
  x = static_cast<int>(std::lround(uv.x()));
  y = static_cast<int>(std::lround(uv.y()));
  return x >= 0 && y >= 0 && x < K.width && y < K.height;
}
}  // namespace detail

/// Splats each point with positive depth to its nearest pixel. The nearest
/// depth wins; depths within 1e-9 m resolve to the lower point index.
inline ProjectionImage render(const PointCloud& cloud, const VirtualCamera& cam) {
  if (cloud.empty()) throw Error(ErrorCode::InvalidArgument, "render: empty point cloud");
  const Intrinsics& K = cam.intrinsics;
  K.validate();

  ProjectionImage img;
  img.intrinsics = K;
  img.pose = cam.pose;
  img.channel = cam.channel;
  img.intensity = ImageF(K.width, K.height, 0.0f);
  img.depth = ImageF(K.width, K.height, 0.0f);
  img.source_index = Image<std::int32_t>(K.width, K.height, kNoSource);

  std::vector<double> best(img.intensity.size(), std::numeric_limits<double>::infinity());
  std::vector<std::int64_t> pixel_of_point(cloud.size(), -1);
  std::vector<std::uint32_t> counts(img.intensity.size() + 1, 0);
  double dmin = std::numeric_limits<double>::infinity();
  double dmax = -std::numeric_limits<double>::infinity();
  std::size_t landed = 0;

  for (std::size_t i = 0; i < cloud.size(); ++i) {
    const Vec3 pc = cam.pose * cloud.points[i].position;
    if (!(pc.z() > 0.0)) continue;
    const Vec2 uv(K.fx * pc.x() / pc.z() + K.cx, K.fy * pc.y() / pc.z() + K.cy);
    int x = 0, y = 0;
    if (!detail::pixel_of(uv, K, x, y)) continue;
    ++landed;
    const std::size_t idx = img.intensity.index(x, y);
    pixel_of_point[i] = static_cast<std::int64_t>(idx);
    ++counts[idx + 1];
    dmin = std::min(dmin, pc.z());
    dmax = std::max(dmax, pc.z());
    if (pc.z() < best[idx] - 1e-9) {
      best[idx] = pc.z();
      img.source_index.data()[idx] = static_cast<std::int32_t>(i);
    }
  }
  if (landed == 0) throw Error(ErrorCode::EmptyProjection, "no point lands inside the virtual image");

  for (std::size_t idx = 0; idx < img.intensity.size(); ++idx) {
    const std::int32_t s = img.source_index.data()[idx];
    if (s == kNoSource) continue;
    img.depth.data()[idx] = static_cast<float>(best[idx]);
    img.intensity.data()[idx] = static_cast<float>(cloud.points[static_cast<std::size_t>(s)].intensity);
    ++img.filled;
  }

  for (std::size_t idx = 1; idx < counts.size(); ++idx) counts[idx] += counts[idx - 1];
  img.bucket_offsets = counts;
  img.bucket_points.assign(landed, kNoSource);
  std::vector<std::uint32_t> cursor(counts.begin(), counts.end() - 1);
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    if (pixel_of_point[i] < 0) continue;
    img.bucket_points[cursor[static_cast<std::size_t>(pixel_of_point[i])]++] = static_cast<std::int32_t>(i);
  }
  img.min_depth = dmin;
  img.max_depth = dmax;
  return img;
}

/// Fills empty pixels from their nearest-depth 8-neighbour, `passes` times.
/// Returns the dilated channel image and the matching depth image; source
/// indices are not propagated.
struct DilatedImage {
  ImageF values;
  ImageF depth;
};

inline DilatedImage dilate(const ProjectionImage& img, Channel channel, int passes) {
  DilatedImage out{channel == Channel::Intensity ? img.intensity : img.depth, img.depth};
  for (int pass = 0; pass < passes; ++pass) {
    DilatedImage next = out;
    for (int y = 0; y < out.depth.height(); ++y) {
      for (int x = 0; x < out.depth.width(); ++x) {
        if (out.depth(x, y) > 0.0f) continue;
        float best = std::numeric_limits<float>::infinity();
        float value = 0.0f;
        for (int dy = -1; dy <= 1; ++dy) {
          for (int dx = -1; dx <= 1; ++dx) {
            const int nx = x + dx, ny = y + dy;
            if (!out.depth.in_bounds(nx, ny)) continue;
            const float d = out.depth(nx, ny);
            if (d > 0.0f && d < best) {
              best = d;
              value = out.values(nx, ny);
            }
          }
        }
        if (std::isfinite(best)) {
          next.depth(x, y) = best;
          next.values(x, y) = value;
        }
      }
    }
    out = std::move(next);
  }
  return out;
}

/// Undoes the outward growth of `dilate`: `passes` times, clears every pixel
/// that was empty in the render and has an empty 8-neighbour. Holes closed by
/// the dilation stay filled; rendered pixels are never cleared.
inline void erode_added(DilatedImage& d, const ProjectionImage& img, int passes) {
  for (int pass = 0; pass < passes; ++pass) {
    const ImageF depth = d.depth;
    for (int y = 0; y < depth.height(); ++y)
      for (int x = 0; x < depth.width(); ++x) {
        if (!(depth(x, y) > 0.0f) || img.source_index(x, y) != kNoSource) continue;
        bool edge = false;
        for (int dy = -1; dy <= 1 && !edge; ++dy)
          for (int dx = -1; dx <= 1 && !edge; ++dx)
            edge = depth.in_bounds(x + dx, y + dy) && !(depth(x + dx, y + dy) > 0.0f);
        if (edge) {
          d.depth(x, y) = 0.0f;
          d.values(x, y) = 0.0f;
        }
      }
  }
}

/// Dilation passes that close most gaps between rendered points: the 90th
/// percentile distance from a filled pixel to the next filled pixel to the
/// right and below (searched up to 8 px), passes = ceil((gap - 1) / 2), at most 4.
inline int estimate_dilation_passes(const ProjectionImage& img) {
  constexpr int kSearch = 8;
  std::vector<int> gx, gy;
  for (int y = 0; y < img.height(); ++y)
    for (int x = 0; x < img.width(); ++x) {
      if (img.source_index(x, y) == kNoSource) continue;
      for (int d = 1; d <= kSearch && x + d < img.width(); ++d)
        if (img.source_index(x + d, y) != kNoSource) {
          gx.push_back(d);
          break;
        }
      for (int d = 1; d <= kSearch && y + d < img.height(); ++d)
        if (img.source_index(x, y + d) != kNoSource) {
          gy.push_back(d);
          break;
        }
    }
  auto p90 = [](std::vector<int>& v) {
    if (v.empty()) return 1;
    const auto k = static_cast<long>(v.size() * 9 / 10);
    std::nth_element(v.begin(), v.begin() + k, v.end());
    return v[static_cast<std::size_t>(k)];
  };
  const int gap = std::max(p90(gx), p90(gy));
  return std::clamp(gap / 2, 0, 4);
}

struct FieldOfView {
  double horizontal = 0.0;  // degrees
  double vertical = 0.0;    // degrees
};

/// Horizontal FoV is 360 degrees minus the largest empty azimuth gap, so
/// clouds straddling the +-180 degree seam are measured correctly; gaps no
/// wider than one 1-degree bin count as full coverage. Vertical FoV is the
/// elevation range.
inline FieldOfView estimate_fov(const PointCloud& cloud) {
  if (cloud.size() < 2) throw Error(ErrorCode::DegenerateCloud, "need at least two points");
  std::vector<double> az;
  az.reserve(cloud.size());
  double el_min = std::numeric_limits<double>::infinity();
  double el_max = -std::numeric_limits<double>::infinity();
  for (const auto& p : cloud.points) {
    const Vec3& q = p.position;
    const double rxy = std::hypot(q.x(), q.y());
    if (rxy == 0.0 && q.z() == 0.0) continue;
    az.push_back(rad2deg(std::atan2(q.y(), q.x())));
    const double el = rad2deg(std::atan2(q.z(), rxy));
    el_min = std::min(el_min, el);
    el_max = std::max(el_max, el);
  }
  if (az.size() < 2) throw Error(ErrorCode::DegenerateCloud, "fewer than two points with a bearing");
  std::sort(az.begin(), az.end());
  double max_gap = az.front() + 360.0 - az.back();
  for (std::size_t i = 1; i < az.size(); ++i) max_gap = std::max(max_gap, az[i] - az[i - 1]);

  FieldOfView fov;
  fov.horizontal = max_gap <= 1.0 ? 360.0 : 360.0 - max_gap;
  fov.vertical = el_max - el_min;
  if (fov.horizontal <= 1e-12 && fov.vertical <= 1e-12)
    throw Error(ErrorCode::DegenerateCloud, "all points share one bearing");
  return fov;
}

struct NormalizedDepths {
  std::vector<double> values;
  bool constant = false;  // d_max == d_min; values are all zero
};

/// d' = (d - d_min) / (d_max - d_min), clamped to [0, 1].
inline NormalizedDepths normalize_depth(const std::vector<double>& depths, double d_min, double d_max) {
  NormalizedDepths out;
  out.values.assign(depths.size(), 0.0);
  if (!(d_max > d_min)) {
    out.constant = true;
    return out;
  }
  const double inv = 1.0 / (d_max - d_min);
  for (std::size_t i = 0; i < depths.size(); ++i) out.values[i] = std::clamp((depths[i] - d_min) * inv, 0.0, 1.0);
  return out;
}

/// Same, with d_min / d_max taken from the list itself.
inline NormalizedDepths normalize_depth(const std::vector<double>& depths) {
  if (depths.empty()) return {};
  const auto [lo, hi] = std::minmax_element(depths.begin(), depths.end());
  return normalize_depth(depths, *lo, *hi);
}

}  // namespace envcalib
