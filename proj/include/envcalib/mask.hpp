#pragma once

// Mask data model shared by camera and virtual images: region bitmap,
// ordered contour, instance box, corner points with neighbour vertices and
// texture patches.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <vector>

#include "envcalib/error.hpp"
#include "envcalib/geometry.hpp"
#include "envcalib/image.hpp"

namespace envcalib {

struct CornerPoint {
  Vec2 position = Vec2::Zero();
  std::vector<Vec2> neighbors;        // e_1..e_K in contour order
  std::vector<float> texture;         // b*b row-major patch
  std::optional<Vec3> lidar_point;    // set for virtual-image corners
  Vec2 source_pixel = Vec2::Zero();   // pixel the corner was detected at
  Vec2 bisector = Vec2::Zero();       // outward unit bisector of the simplified polygon
};

/// Pixel region stored as a tight bitmap over its bounding box.
class Region {
 public:
  Region() = default;

  /// Builds from a full-image label image: pixels equal to `label`.
  template <typename Label>
  static Region from_labels(const Image<Label>& labels, Label label) {
    int x0 = labels.width(), y0 = labels.height(), x1 = -1, y1 = -1;
    for (int y = 0; y < labels.height(); ++y)
      for (int x = 0; x < labels.width(); ++x)
        if (labels(x, y) == label) {
          x0 = std::min(x0, x);
          y0 = std::min(y0, y);
          x1 = std::max(x1, x);
          y1 = std::max(y1, y);
        }
    Region r;
    if (x1 < 0) return r;
    r.x0_ = x0;
    r.y0_ = y0;
    r.bits_ = ImageU8(x1 - x0 + 1, y1 - y0 + 1, 0);
    for (int y = y0; y <= y1; ++y)
      for (int x = x0; x <= x1; ++x)
        if (labels(x, y) == label) {
          r.bits_(x - x0, y - y0) = 1;
          ++r.area_;
        }
    return r;
  }

  /// Pixels whose centers lie inside the polygon (even-odd rule), clipped to
  /// a width x height image.
  static Region rasterize(const std::vector<Vec2>& polygon, int width, int height) {
    Region r;
    if (polygon.size() < 3) return r;
    double ymin = std::numeric_limits<double>::infinity(), ymax = -ymin;
    double xmin = ymin, xmax = -ymin;
    for (const auto& p : polygon) {
      xmin = std::min(xmin, p.x());
      xmax = std::max(xmax, p.x());
      ymin = std::min(ymin, p.y());
      ymax = std::max(ymax, p.y());
    }
    const int bx0 = std::max(0, static_cast<int>(std::ceil(xmin)));
    const int bx1 = std::min(width - 1, static_cast<int>(std::floor(xmax)));
    const int by0 = std::max(0, static_cast<int>(std::ceil(ymin)));
    const int by1 = std::min(height - 1, static_cast<int>(std::floor(ymax)));
    if (bx1 < bx0 || by1 < by0) return r;

    Image<std::uint8_t> bits(bx1 - bx0 + 1, by1 - by0 + 1, 0);
    std::vector<double> xs;
    for (int y = by0; y <= by1; ++y) {
      xs.clear();
      const double yc = y;
      for (std::size_t i = 0; i < polygon.size(); ++i) {
        const Vec2& a = polygon[i];
        const Vec2& b = polygon[(i + 1) % polygon.size()];
        if ((a.y() <= yc) != (b.y() <= yc)) xs.push_back(a.x() + (yc - a.y()) / (b.y() - a.y()) * (b.x() - a.x()));
      }
      std::sort(xs.begin(), xs.end());
      for (std::size_t k = 0; k + 1 < xs.size(); k += 2) {
        const int xa = std::max(bx0, static_cast<int>(std::ceil(xs[k])));
        const int xb = std::min(bx1, static_cast<int>(std::ceil(xs[k + 1])) - 1);
        for (int x = xa; x <= xb; ++x) bits(x - bx0, y - by0) = 1;
      }
    }
    return from_labels<std::uint8_t>(bits, 1).shifted(bx0, by0);
  }

  Region shifted(int dx, int dy) const {
    Region r = *this;
    r.x0_ += dx;
    r.y0_ += dy;
    return r;
  }

  bool empty() const { return area_ == 0; }
  std::size_t area() const { return area_; }
  int x0() const { return x0_; }
  int y0() const { return y0_; }
  int box_width() const { return bits_.width(); }
  int box_height() const { return bits_.height(); }

  bool contains(int x, int y) const {
    const int lx = x - x0_, ly = y - y0_;
    return bits_.in_bounds(lx, ly) && bits_(lx, ly) != 0;
  }

  template <typename F>
  void for_each_pixel(F&& f) const {
    for (int y = 0; y < bits_.height(); ++y)
      for (int x = 0; x < bits_.width(); ++x)
        if (bits_(x, y)) f(x + x0_, y + y0_);
  }

  /// Topmost-leftmost pixel, the tracing start.
  std::array<int, 2> first_pixel() const {
    for (int y = 0; y < bits_.height(); ++y)
      for (int x = 0; x < bits_.width(); ++x)
        if (bits_(x, y)) return {x + x0_, y + y0_};
    return {-1, -1};
  }

 private:
  int x0_ = 0;
  int y0_ = 0;
  ImageU8 bits_;
  std::size_t area_ = 0;
};

struct Mask {
  int id = 0;
  Region region;
  std::vector<Vec2> polygon;  // outline as supplied (file or tracer), original orientation
  std::vector<Vec2> contour;  // same outline, positive shoelace area in image coordinates
  std::vector<CornerPoint> corners;
  Vec2 instance_center = Vec2::Zero();
  double instance_h = 0.0;
  double instance_w = 0.0;
  double perimeter = 0.0;

  std::size_t area() const { return region.area(); }
  double diagonal() const { return std::hypot(instance_h, instance_w); }
};

inline double signed_area(const std::vector<Vec2>& poly) {
  double a = 0.0;
  for (std::size_t i = 0; i < poly.size(); ++i) {
    const Vec2& p = poly[i];
    const Vec2& q = poly[(i + 1) % poly.size()];
    a += p.x() * q.y() - q.x() * p.y();
  }
  return 0.5 * a;
}

inline double closed_length(const std::vector<Vec2>& poly) {
  double len = 0.0;
  for (std::size_t i = 0; i < poly.size(); ++i) len += (poly[(i + 1) % poly.size()] - poly[i]).norm();
  return len;
}

/// Moore-neighbour tracing of the outer boundary (8-connected). Returns pixel
/// centers in traversal order without repeating the start pixel.
inline std::vector<Vec2> trace_contour(const Region& region) {
  std::vector<Vec2> out;
  if (region.empty()) return out;
  static constexpr std::array<std::array<int, 2>, 8> kDirs = {
      {{1, 0}, {1, 1}, {0, 1}, {-1, 1}, {-1, 0}, {-1, -1}, {0, -1}, {1, -1}}};
  const auto s = region.first_pixel();
  auto dir_index = [](int dx, int dy) {
    for (int k = 0; k < 8; ++k)
      if (kDirs[static_cast<std::size_t>(k)][0] == dx && kDirs[static_cast<std::size_t>(k)][1] == dy) return k;
    return -1;
  };

  std::array<int, 2> c = s;
  std::array<int, 2> b = {s[0] - 1, s[1]};
  std::array<int, 2> first_next = {-1, -1};
  out.emplace_back(s[0], s[1]);
  const std::size_t limit = 4 * region.area() + 8;
  for (std::size_t step = 0; step < limit; ++step) {
    const int k = dir_index(b[0] - c[0], b[1] - c[1]);
    int found = -1;
    std::array<int, 2> prev = b;
    for (int j = 1; j <= 8; ++j) {
      const auto& d = kDirs[static_cast<std::size_t>((k + j) % 8)];
      const std::array<int, 2> n = {c[0] + d[0], c[1] + d[1]};
      if (region.contains(n[0], n[1])) {
        found = (k + j) % 8;
        break;
      }
      prev = n;
    }
    if (found < 0) break;  // isolated pixel
    const auto& d = kDirs[static_cast<std::size_t>(found)];
    const std::array<int, 2> n = {c[0] + d[0], c[1] + d[1]};
    if (c == s) {
      if (first_next[0] < 0) {
        first_next = n;
      } else if (n == first_next) {
        break;
      }
    }
    b = prev;
    c = n;
    out.emplace_back(c[0], c[1]);
  }
  if (out.size() > 1 && out.back() == out.front()) out.pop_back();
  return out;
}

namespace detail {

inline double point_segment_distance(const Vec2& p, const Vec2& a, const Vec2& b) {
  const Vec2 ab = b - a;
  const double len2 = ab.squaredNorm();
  if (len2 == 0.0) return (p - a).norm();
  const double t = std::clamp((p - a).dot(ab) / len2, 0.0, 1.0);
  return (p - (a + t * ab)).norm();
}

inline void dp_recurse(const std::vector<Vec2>& pts, std::size_t i0, std::size_t i1, double eps,
                       std::vector<std::size_t>& keep) {
  const std::size_t n = pts.size();
  if ((i1 + n - i0) % n < 2) return;
  double best = -1.0;
  std::size_t idx = i0;
  for (std::size_t i = (i0 + 1) % n; i != i1; i = (i + 1) % n) {
    const double d = point_segment_distance(pts[i], pts[i0], pts[i1]);
    if (d > best) {
      best = d;
      idx = i;
    }
  }
  if (best > eps) {
    dp_recurse(pts, i0, idx, eps, keep);
    keep.push_back(idx);
    dp_recurse(pts, idx, i1, eps, keep);
  }
}

}  // namespace detail

/// Douglas-Peucker on a closed contour. The contour is split at the point
/// farthest from its centroid and the point farthest from that one; both
/// chains are simplified. Returns kept indices in contour order.
inline std::vector<std::size_t> simplify_closed(const std::vector<Vec2>& contour, double epsilon) {
  const std::size_t n = contour.size();
  if (n < 3) {
    std::vector<std::size_t> all(n);
    for (std::size_t i = 0; i < n; ++i) all[i] = i;
    return all;
  }
  Vec2 centroid = Vec2::Zero();
  for (const auto& p : contour) centroid += p;
  centroid /= static_cast<double>(n);
  std::size_t a = 0;
  for (std::size_t i = 1; i < n; ++i)
    if ((contour[i] - centroid).squaredNorm() > (contour[a] - centroid).squaredNorm()) a = i;
  std::size_t b = a;
  for (std::size_t i = 0; i < n; ++i)
    if ((contour[i] - contour[a]).squaredNorm() > (contour[b] - contour[a]).squaredNorm()) b = i;
  if (b == a) return {a};

  std::vector<std::size_t> keep{a};
  detail::dp_recurse(contour, a, b, epsilon, keep);
  keep.push_back(b);
  detail::dp_recurse(contour, b, a, epsilon, keep);
  // Rotate so indices ascend along the contour.
  const auto lowest = std::min_element(keep.begin(), keep.end());
  std::rotate(keep.begin(), lowest, keep.end());
  return keep;
}

/// Fills instance box, perimeter and orients the contour consistently.
inline void finalize_mask_geometry(Mask& m) {
  if (signed_area(m.contour) < 0.0) std::reverse(m.contour.begin(), m.contour.end());
  m.perimeter = closed_length(m.contour);
  if (!m.region.empty()) {
    m.instance_w = m.region.box_width();
    m.instance_h = m.region.box_height();
    m.instance_center = Vec2(m.region.x0() + 0.5 * (m.instance_w - 1), m.region.y0() + 0.5 * (m.instance_h - 1));
  }
}

/// Mask from a traced pixel region.
inline Mask mask_from_region(int id, Region region) {
  Mask m;
  m.id = id;
  m.region = std::move(region);
  m.contour = trace_contour(m.region);
  m.polygon = m.contour;
  finalize_mask_geometry(m);
  return m;
}

/// Mask from an authoritative polygon; pixels are rasterized.
inline Mask mask_from_polygon(int id, const std::vector<Vec2>& polygon, int width, int height) {
  Mask m;
  m.id = id;
  m.region = Region::rasterize(polygon, width, height);
  m.polygon = polygon;
  m.contour = polygon;
  finalize_mask_geometry(m);
  return m;
}

struct CornerParams {
  double epsilon = 2.0;         // Douglas-Peucker tolerance (px)
  int K = 6;                    // neighbour vertices per corner, even
  int b = 7;                    // texture patch size, odd
  double neighbor_spacing = 0.02;  // arc length between neighbours, fraction of the corner polygon's perimeter
};

namespace detail {

/// Point at signed arc length `s` from vertex `i` along a closed polygon.
inline Vec2 walk_polygon(const std::vector<Vec2>& poly, std::size_t i, double s) {
  const std::size_t n = poly.size();
  const double total = closed_length(poly);
  if (total <= 0.0) return poly[i];
  s = std::fmod(s, total);
  if (s < 0.0) {
    // Walk backwards by |s|.
    double remaining = -s;
    std::size_t cur = i;
    while (true) {
      const std::size_t prev = (cur + n - 1) % n;
      const double len = (poly[cur] - poly[prev]).norm();
      if (remaining <= len && len > 0.0) return poly[cur] + (poly[prev] - poly[cur]) * (remaining / len);
      remaining -= len;
      cur = prev;
    }
  }
  double remaining = s;
  std::size_t cur = i;
  while (true) {
    const std::size_t next = (cur + 1) % n;
    const double len = (poly[next] - poly[cur]).norm();
    if (remaining <= len && len > 0.0) return poly[cur] + (poly[next] - poly[cur]) * (remaining / len);
    remaining -= len;
    cur = next;
  }
}

}  // namespace detail

/// b x b patch centered on the nearest pixel, mirrored at the borders.
inline std::vector<float> sample_texture(const ImageF& img, const Vec2& center, int b) {
  std::vector<float> patch(static_cast<std::size_t>(b) * static_cast<std::size_t>(b), 0.0f);
  if (img.empty()) return patch;
  const int cx = static_cast<int>(std::lround(center.x()));
  const int cy = static_cast<int>(std::lround(center.y()));
  const int h = b / 2;
  for (int dy = -h; dy <= h; ++dy)
    for (int dx = -h; dx <= h; ++dx)
      patch[static_cast<std::size_t>((dy + h) * b + (dx + h))] = img.mirrored(cx + dx, cy + dy);
  return patch;
}

/// Recomputes neighbours around a new corner position, keeping their offsets.
inline void move_corner(CornerPoint& c, const Vec2& position) {
  const Vec2 delta = position - c.position;
  for (auto& e : c.neighbors) e += delta;
  c.position = position;
}

/// Neighbours of every corner: K points at multiples of `neighbor_spacing`
/// times the perimeter, walked along the polygon through all corner positions,
/// K/2 before and K/2 after the corner. Scaling the polygon scales them along.
inline void assign_neighbors(std::vector<CornerPoint>& corners, const CornerParams& params) {
  std::vector<Vec2> poly;
  poly.reserve(corners.size());
  for (const auto& c : corners) poly.push_back(c.position);
  const double step = params.neighbor_spacing * closed_length(poly);
  const int half = params.K / 2;
  for (std::size_t i = 0; i < corners.size(); ++i) {
    corners[i].neighbors.clear();
    for (int k = -half; k <= half; ++k) {
      if (k == 0) continue;
      corners[i].neighbors.push_back(detail::walk_polygon(poly, i, k * step));
    }
  }
}

/// Douglas-Peucker corners of the contour, each with neighbours along the
/// simplified polygon (see assign_neighbors) and a b x b texture patch from
/// `texture_image`.
inline void extract_corners(Mask& mask, const ImageF& texture_image, const CornerParams& params) {
  if (params.K < 2 || params.K % 2 != 0) throw Error(ErrorCode::InvalidArgument, "K must be even and >= 2");
  if (params.b < 1 || params.b % 2 == 0) throw Error(ErrorCode::InvalidArgument, "b must be odd and >= 1");
  if (!(params.epsilon >= 0.0)) throw Error(ErrorCode::InvalidArgument, "epsilon must be non-negative");
  mask.corners.clear();
  if (mask.contour.size() < 3)
    throw Error(ErrorCode::DegenerateContour, "mask " + std::to_string(mask.id) + ": contour has fewer than 3 vertices");
  const auto idx = simplify_closed(mask.contour, params.epsilon);
  if (idx.size() < 3)
    throw Error(ErrorCode::DegenerateContour, "mask " + std::to_string(mask.id) + ": fewer than 3 corners");

  std::vector<Vec2> poly;
  poly.reserve(idx.size());
  for (auto i : idx) poly.push_back(mask.contour[i]);

  for (std::size_t i = 0; i < poly.size(); ++i) {
    CornerPoint c;
    c.position = poly[i];
    c.source_pixel = poly[i];
    const Vec2& prev = poly[(i + poly.size() - 1) % poly.size()];
    const Vec2& next = poly[(i + 1) % poly.size()];
    const Vec2 din = (poly[i] - prev).normalized();
    const Vec2 dout = (next - poly[i]).normalized();
    const Vec2 bis = din - dout;
    c.bisector = bis.norm() > 1e-12 ? Vec2(bis.normalized()) : Vec2(dout.y(), -dout.x());
    c.texture = sample_texture(texture_image, c.position, params.b);
    mask.corners.push_back(std::move(c));
  }
  assign_neighbors(mask.corners, params);
}

/// Pixel count of the union of all masks (for masks from one image).
inline std::size_t union_area(const std::vector<Mask>& masks) {
  if (masks.empty()) return 0;
  int x0 = std::numeric_limits<int>::max(), y0 = x0, x1 = std::numeric_limits<int>::min(), y1 = x1;
  for (const auto& m : masks) {
    if (m.region.empty()) continue;
    x0 = std::min(x0, m.region.x0());
    y0 = std::min(y0, m.region.y0());
    x1 = std::max(x1, m.region.x0() + m.region.box_width() - 1);
    y1 = std::max(y1, m.region.y0() + m.region.box_height() - 1);
  }
  if (x1 < x0) return 0;
  ImageU8 acc(x1 - x0 + 1, y1 - y0 + 1, 0);
  std::size_t n = 0;
  for (const auto& m : masks)
    m.region.for_each_pixel([&](int x, int y) {
      auto& v = acc(x - x0, y - y0);
      if (!v) {
        v = 1;
        ++n;
      }
    });
  return n;
}

}  // namespace envcalib
