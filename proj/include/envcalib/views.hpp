#pragma once

// Mask sets of one virtual viewpoint (LIP and LDP) with corners traced back
// to LiDAR points, and of the real camera (image and depth).

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

#include "envcalib/error.hpp"
#include "envcalib/geometry.hpp"
#include "envcalib/image.hpp"
#include "envcalib/mask.hpp"
#include "envcalib/projection.hpp"
#include "envcalib/segment.hpp"

namespace envcalib {

struct ViewParams {
  SegmentParams segment;
  CornerParams corners;
  double snap_radius = 4.0;     // px searched around a virtual corner for its LiDAR point, plus one per dilation pass
  double border_px = 2.0;       // corners this close to the image border are dropped
  int dilation_passes = -1;     // < 0: estimated from the render
  double depth_gate_abs = 0.1;  // m, bucket points this close to the z-buffer winner count
  double depth_gate_rel = 0.05;
};

/// Divides by the 99th percentile of all pixels and clamps to [0, 1].
inline void normalize_image(ImageF& img) {
  if (img.empty()) return;
  std::vector<float> v = img.data();
  const auto k = static_cast<std::size_t>(std::floor(0.99 * static_cast<double>(v.size() - 1)));
  std::nth_element(v.begin(), v.begin() + static_cast<long>(k), v.end());
  const float p99 = v[k];
  for (auto& x : img.data()) x = p99 > 0.0f ? std::clamp(x / p99, 0.0f, 1.0f) : 0.0f;
}

/// Depth rescaled to [0, 1] over its positive pixels; empty pixels stay 0.
inline ImageF normalized_depth_image(const ImageF& depth) {
  float lo = std::numeric_limits<float>::infinity(), hi = 0.0f;
  for (float d : depth.data())
    if (d > 0.0f) {
      lo = std::min(lo, d);
      hi = std::max(hi, d);
    }
  ImageF out(depth.width(), depth.height(), 0.0f);
  if (!(hi > lo)) return out;
  for (std::size_t i = 0; i < out.size(); ++i) {
    const float d = depth.data()[i];
    if (d > 0.0f) out.data()[i] = (d - lo) / (hi - lo);
  }
  return out;
}

inline bool near_border(const Vec2& p, int width, int height, double border) {
  return p.x() < border || p.y() < border || p.x() > width - 1 - border || p.y() > height - 1 - border;
}

inline void drop_border_corners(Mask& m, int width, int height, double border) {
  std::erase_if(m.corners, [&](const CornerPoint& c) { return near_border(c.position, width, height, border); });
}

/// Moves each corner onto the LiDAR point that lies furthest along the
/// corner's outward bisector among the points of mask pixels within the snap
/// radius. Only points near the z-buffer winner of their pixel are eligible.
/// Corners without an eligible point keep their position and no lidar_point.
inline std::size_t trace_corners(Mask& m, const ProjectionImage& img, const PointCloud& cloud, const ImageF& texture,
                                 const ViewParams& params, int passes = 0) {
  const Intrinsics& K = img.intrinsics;
  const double radius = params.snap_radius + passes;
  const int r = static_cast<int>(std::ceil(radius));
  std::size_t untraced = 0;
  for (auto& c : m.corners) {
    const int cx = static_cast<int>(std::lround(c.position.x()));
    const int cy = static_cast<int>(std::lround(c.position.y()));
    double best_score = -std::numeric_limits<double>::infinity();
    std::int32_t best = kNoSource;
    Vec2 best_uv = Vec2::Zero();
    for (int y = cy - r; y <= cy + r; ++y)
      for (int x = cx - r; x <= cx + r; ++x) {
        if (!img.intensity.in_bounds(x, y) || !m.region.contains(x, y)) continue;
        if (Vec2(x - c.position.x(), y - c.position.y()).norm() > radius) continue;
        const double z_win = img.depth(x, y);
        if (!(z_win > 0.0)) continue;
        const double gate = std::max(params.depth_gate_abs, params.depth_gate_rel * z_win);
        img.for_each_in_pixel(x, y, [&](std::int32_t idx) {
          const Vec3 pc = img.pose * cloud.points[static_cast<std::size_t>(idx)].position;
          if (std::abs(pc.z() - z_win) > gate) return;
          const Vec2 uv = project_pinhole(pc, K);
          const double score = c.bisector.dot(uv - c.position);
          if (score > best_score || (score == best_score && idx < best)) {
            best_score = score;
            best = idx;
            best_uv = uv;
          }
        });
      }
    if (best == kNoSource) {
      ++untraced;
      continue;
    }
    move_corner(c, best_uv);
    c.lidar_point = cloud.points[static_cast<std::size_t>(best)].position;
    c.texture = sample_texture(texture, c.position, params.corners.b);
  }
  return untraced;
}

struct VirtualView {
  Pose pose;
  int passes = 0;
  std::vector<Mask> intensity_masks;  // LIP
  std::vector<Mask> depth_masks;      // LDP
  std::size_t degenerate = 0;         // masks dropped for too few corners
  std::size_t untraced = 0;           // corners left without a LiDAR point
};

namespace detail {

inline std::vector<Mask> finish_masks(std::vector<Mask> masks, const ImageF& texture, const ProjectionImage* img,
                                      const PointCloud* cloud, const ViewParams& params, int passes,
                                      std::size_t& degenerate, std::size_t& untraced) {
  std::vector<Mask> out;
  CornerParams cp = params.corners;
  cp.epsilon += passes;  // dilated edges are ragged on the scale of the point gap
  for (auto& m : masks) {
    try {
      extract_corners(m, texture, cp);
    } catch (const Error& e) {
      if (e.code() != ErrorCode::DegenerateContour) throw;
      ++degenerate;
      continue;
    }
    if (img) {
      untraced += trace_corners(m, *img, *cloud, texture, params, passes);
      assign_neighbors(m.corners, params.corners);
    }
    drop_border_corners(m, texture.width(), texture.height(), params.border_px);
    m.id = static_cast<int>(out.size());
    out.push_back(std::move(m));
  }
  return out;
}

}  // namespace detail

/// Renders the cloud from `pose`, closes the gaps between points (dilation then
/// erosion of the added pixels), segments the LIP and LDP images and traces
/// every corner back to a LiDAR point.
inline VirtualView build_virtual_view(const PointCloud& cloud, const Intrinsics& K, const Pose& pose,
                                      const ViewParams& params) {
  VirtualView v;
  v.pose = pose;
  const ProjectionImage img = render(cloud, VirtualCamera{K, pose, Channel::Intensity});
  v.passes = params.dilation_passes >= 0 ? params.dilation_passes : estimate_dilation_passes(img);
  DilatedImage lip = dilate(img, Channel::Intensity, v.passes);
  DilatedImage ldp = dilate(img, Channel::Depth, v.passes);
  erode_added(lip, img, v.passes);
  erode_added(ldp, img, v.passes);
  const ImageF ldp_norm = normalized_depth_image(ldp.values);
  v.intensity_masks = detail::finish_masks(segment_intensity(lip.values, params.segment), lip.values, &img, &cloud,
                                           params, v.passes, v.degenerate, v.untraced);
  v.depth_masks = detail::finish_masks(segment_depth(ldp.values, params.segment), ldp_norm, &img, &cloud, params,
                                       v.passes, v.degenerate, v.untraced);
  return v;
}

struct CameraView {
  std::vector<Mask> intensity_masks;
  std::vector<Mask> depth_masks;
  std::size_t degenerate = 0;
};

/// Corners of the camera masks: textures from the (normalized) image for the
/// textural pathway and from normalized depth for the spatial pathway. When
/// `depth_masks` is empty the image masks are used on both pathways.
inline CameraView build_camera_view(const ImageF& image, const ImageF& depth, const std::vector<Mask>& masks,
                                    const std::vector<Mask>& depth_masks, const ViewParams& params) {
  CameraView v;
  std::size_t untraced = 0;
  v.intensity_masks = detail::finish_masks(masks, image, nullptr, nullptr, params, 0, v.degenerate, untraced);
  if (!depth.empty()) {
    const ImageF dn = normalized_depth_image(depth);
    v.depth_masks = detail::finish_masks(depth_masks.empty() ? masks : depth_masks, dn, nullptr, nullptr, params,
                                         0, v.degenerate, untraced);
  }
  return v;
}

}  // namespace envcalib
