#pragma once

// Parametric scenes with known extrinsics: planar and box primitives are
// ray-cast by a LiDAR lattice and rendered analytically by the camera.
// Plane vertices can be snapped onto LiDAR rays so every face corner has an
// exact LiDAR return.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <optional>
#include <random>
#include <vector>

#include "envcalib/error.hpp"
#include "envcalib/geometry.hpp"
#include "envcalib/image.hpp"
#include "envcalib/mask.hpp"

namespace envcalib {

enum class LidarKind { Spinning, SolidState };

struct LidarModel {
  LidarKind kind = LidarKind::SolidState;
  // Spinning: n_lines elevations top - k * vertical_fov / n_lines, full azimuth sweep.
  int n_lines = 64;
  double az_resolution_deg = 0.2;
  double elevation_top_deg = 2.0;
  double vertical_fov_deg = 26.8;
  // Solid state: az x el lattice centered on +X, emitted in shuffled order.
  double fov_h_deg = 80.0;
  double fov_v_deg = 40.0;
  double resolution_deg = 0.1;

  double max_range = 200.0;

  static LidarModel spinning(int lines, double az_res_deg) {
    LidarModel m;
    m.kind = LidarKind::Spinning;
    m.n_lines = lines;
    m.az_resolution_deg = az_res_deg;
    return m;
  }
  static LidarModel solid_state(double fov_h, double fov_v, double res) {
    LidarModel m;
    m.kind = LidarKind::SolidState;
    m.fov_h_deg = fov_h;
    m.fov_v_deg = fov_v;
    m.resolution_deg = res;
    return m;
  }

  void validate() const {
    if (kind == LidarKind::Spinning) {
      if (n_lines < 1 || !(az_resolution_deg > 0.0) || !(vertical_fov_deg > 0.0))
        throw Error(ErrorCode::InvalidArgument, "invalid spinning LiDAR model");
    } else if (!(resolution_deg > 0.0) || !(fov_h_deg > 0.0) || !(fov_v_deg > 0.0) || fov_h_deg >= 180.0 ||
               fov_v_deg >= 180.0) {
      throw Error(ErrorCode::InvalidArgument, "invalid solid-state LiDAR model");
    }
  }

  int az_count() const {
    if (kind == LidarKind::Spinning) return static_cast<int>(std::lround(360.0 / az_resolution_deg));
    return static_cast<int>(std::floor(fov_h_deg / resolution_deg + 1e-9)) + 1;
  }
  int el_count() const {
    if (kind == LidarKind::Spinning) return n_lines;
    return static_cast<int>(std::floor(fov_v_deg / resolution_deg + 1e-9)) + 1;
  }
  double az_deg(int i) const {
    return kind == LidarKind::Spinning ? -180.0 + i * az_resolution_deg : -0.5 * fov_h_deg + i * resolution_deg;
  }
  double el_deg(int j) const {
    return kind == LidarKind::Spinning ? elevation_top_deg - j * vertical_fov_deg / n_lines
                                       : -0.5 * fov_v_deg + j * resolution_deg;
  }
  Vec3 direction(int i, int j) const {
    const double az = deg2rad(az_deg(i)), el = deg2rad(el_deg(j));
    return {std::cos(el) * std::cos(az), std::cos(el) * std::sin(az), std::sin(el)};
  }

  /// Lattice ray nearest to `dir` in (azimuth, elevation); false outside the lattice.
  bool nearest_ray(const Vec3& dir, int& i, int& j) const {
    const double az = rad2deg(std::atan2(dir.y(), dir.x()));
    const double el = rad2deg(std::atan2(dir.z(), std::hypot(dir.x(), dir.y())));
    if (kind == LidarKind::Spinning) {
      const int n = az_count();
      i = static_cast<int>(std::lround((az + 180.0) / az_resolution_deg));
      i = ((i % n) + n) % n;
      j = static_cast<int>(std::lround((elevation_top_deg - el) * n_lines / vertical_fov_deg));
    } else {
      i = static_cast<int>(std::lround((az + 0.5 * fov_h_deg) / resolution_deg));
      j = static_cast<int>(std::lround((el + 0.5 * fov_v_deg) / resolution_deg));
    }
    return i >= 0 && i < az_count() && j >= 0 && j < el_count();
  }
};

struct Primitive {
  enum class Kind { Plane, Box };
  Kind kind = Kind::Plane;
  Pose pose;                          // primitive frame -> LiDAR frame
  Vec3 extent = Vec3(1.0, 1.0, 1.0);  // plane: x width, y height; box: all three (m)
  std::vector<double> face_intensity = {0.5};  // plane: 1 value, box: 6 values (or 1 shared)
  bool snap_to_lidar = true;          // planes only
};

struct NoiseSpec {
  double pixel_sigma = 0.0;   // px, on camera mask vertices
  double point_sigma = 0.0;   // m, per coordinate on LiDAR points
  double outlier_rate = 0.0;  // fraction of camera mask vertices displaced by 2-10 px
  double dropout_rate = 0.0;  // fraction of LiDAR returns removed
};

struct SceneSpec {
  std::vector<Primitive> primitives;
  LidarModel lidar;
  Intrinsics camera = Intrinsics{500.0, 500.0, 320.0, 240.0, 640, 480};
  Pose true_extrinsic;  // camera-from-LiDAR
  NoiseSpec noise;
  std::uint64_t seed = 0;
  bool shuffle_points = true;  // solid-state emission order
};

struct Face {
  std::vector<Vec3> vertices;  // LiDAR frame, convex, planar
  Vec3 normal = Vec3::UnitZ();
  double offset = 0.0;         // normal . x = offset on the plane
  double intensity = 0.5;
  bool two_sided = true;
  int primitive = 0;
};

struct SyntheticScene {
  PointCloud cloud;
  ImageF image;            // camera intensity, 0 = background
  ImageF depth;            // camera-frame depth (m), 0 = background
  std::vector<Mask> masks; // camera masks (noisy polygons)
  std::vector<PointPixel> ground_truth;  // visible face corners, noiseless
  std::vector<Face> faces;
  Pose true_extrinsic;
  Intrinsics camera;
};

namespace detail {

inline bool ray_face(const Face& f, const Vec3& origin, const Vec3& dir, double& t) {
  const double denom = f.normal.dot(dir);
  if (std::abs(denom) < 1e-12) return false;
  if (!f.two_sided && denom > 0.0) return false;  // back face
  t = (f.offset - f.normal.dot(origin)) / denom;
  if (!(t > 0.0)) return false;
  const Vec3 p = origin + t * dir;
  const std::size_t n = f.vertices.size();
  const Vec3 e0 = f.vertices[1] - f.vertices[0], e1 = f.vertices[2] - f.vertices[1];
  const double orient = e0.cross(e1).dot(f.normal) >= 0.0 ? 1.0 : -1.0;
  for (std::size_t k = 0; k < n; ++k) {
    const Vec3& a = f.vertices[k];
    const Vec3 e = f.vertices[(k + 1) % n] - a;
    const double s = orient * e.cross(p - a).dot(f.normal) / e.norm();
    if (s < -1e-9) return false;
  }
  return true;
}

inline Face make_face(std::vector<Vec3> vertices, double intensity, bool two_sided, int primitive) {
  Face f;
  f.vertices = std::move(vertices);
  const Vec3 n = (f.vertices[1] - f.vertices[0]).cross(f.vertices[2] - f.vertices[0]);
  f.normal = n.normalized();
  f.offset = f.normal.dot(f.vertices[0]);
  f.intensity = intensity;
  f.two_sided = two_sided;
  f.primitive = primitive;
  return f;
}

}  // namespace detail

/// Faces of all primitives in the LiDAR frame. Plane vertices flagged for
/// snapping are moved onto the nearest lattice ray within the plane.
inline std::vector<Face> build_faces(const SceneSpec& spec) {
  std::vector<Face> faces;
  for (std::size_t pi = 0; pi < spec.primitives.size(); ++pi) {
    const Primitive& p = spec.primitives[pi];
    if (!(p.extent.x() > 0.0) || !(p.extent.y() > 0.0) || (p.kind == Primitive::Kind::Box && !(p.extent.z() > 0.0)))
      throw Error(ErrorCode::InvalidArgument, "primitive extents must be positive");
    if (p.face_intensity.empty()) throw Error(ErrorCode::InvalidArgument, "primitive needs a face intensity");
    for (double v : p.face_intensity)
      if (!(v >= 0.0 && v <= 1.0)) throw Error(ErrorCode::InvalidArgument, "face intensity must be in [0, 1]");
    const double hx = 0.5 * p.extent.x(), hy = 0.5 * p.extent.y(), hz = 0.5 * p.extent.z();
    if (p.kind == Primitive::Kind::Plane) {
      std::vector<Vec3> v = {p.pose * Vec3(-hx, -hy, 0.0), p.pose * Vec3(hx, -hy, 0.0), p.pose * Vec3(hx, hy, 0.0),
                             p.pose * Vec3(-hx, hy, 0.0)};
      Face f = detail::make_face(v, p.face_intensity[0], true, static_cast<int>(pi));
      if (p.snap_to_lidar) {
        for (auto& x : f.vertices) {
          int i = 0, j = 0;
          if (!spec.lidar.nearest_ray(x.normalized(), i, j)) continue;
          const Vec3 d = spec.lidar.direction(i, j);
          const double denom = f.normal.dot(d);
          if (std::abs(denom) < 1e-12) continue;
          x = (f.offset - f.normal.dot(Vec3::Zero())) / denom * d;
        }
      }
      faces.push_back(f);
    } else {
      // Outward-facing quads, vertices counter-clockwise seen from outside.
      const std::array<std::array<Vec3, 4>, 6> quads = {{
          {Vec3(hx, -hy, -hz), Vec3(hx, hy, -hz), Vec3(hx, hy, hz), Vec3(hx, -hy, hz)},
          {Vec3(-hx, hy, -hz), Vec3(-hx, -hy, -hz), Vec3(-hx, -hy, hz), Vec3(-hx, hy, hz)},
          {Vec3(hx, hy, -hz), Vec3(-hx, hy, -hz), Vec3(-hx, hy, hz), Vec3(hx, hy, hz)},
          {Vec3(-hx, -hy, -hz), Vec3(hx, -hy, -hz), Vec3(hx, -hy, hz), Vec3(-hx, -hy, hz)},
          {Vec3(-hx, -hy, hz), Vec3(hx, -hy, hz), Vec3(hx, hy, hz), Vec3(-hx, hy, hz)},
          {Vec3(-hx, hy, -hz), Vec3(hx, hy, -hz), Vec3(hx, -hy, -hz), Vec3(-hx, -hy, -hz)},
      }};
      for (std::size_t k = 0; k < 6; ++k) {
        std::vector<Vec3> v;
        for (const auto& q : quads[k]) v.push_back(p.pose * q);
        const double inten = p.face_intensity[std::min(k, p.face_intensity.size() - 1)];
        faces.push_back(detail::make_face(v, inten, false, static_cast<int>(pi)));
      }
    }
  }
  return faces;
}

/// Nearest face hit along a ray; -1 when nothing is hit.
inline int cast_ray(const std::vector<Face>& faces, const Vec3& origin, const Vec3& dir, double& t_best) {
  int best = -1;
  t_best = std::numeric_limits<double>::infinity();
  for (std::size_t k = 0; k < faces.size(); ++k) {
    double t = 0.0;
    if (detail::ray_face(faces[k], origin, dir, t) && t < t_best) {
      t_best = t;
      best = static_cast<int>(k);
    }
  }
  return best;
}

/// LiDAR returns of all lattice rays that hit a face. Spinning scans are
/// ordered azimuth-major; solid-state scans are shuffled when `shuffle`.
inline PointCloud cast_lidar(const std::vector<Face>& faces, const LidarModel& model, bool shuffle,
                             std::mt19937_64& rng) {
  model.validate();
  const int na = model.az_count(), ne = model.el_count();
  const std::size_t total = static_cast<std::size_t>(na) * static_cast<std::size_t>(ne);
  std::vector<double> best_t(total, std::numeric_limits<double>::infinity());
  std::vector<int> best_face(total, -1);

  const double az_step = model.kind == LidarKind::Spinning ? model.az_resolution_deg : model.resolution_deg;
  const double el_step =
      model.kind == LidarKind::Spinning ? model.vertical_fov_deg / model.n_lines : model.resolution_deg;
  for (std::size_t fi = 0; fi < faces.size(); ++fi) {
    const Face& f = faces[fi];
    // Angular box from densely sampled edges (edges bulge in elevation).
    double az_lo = 1e9, az_hi = -1e9, el_lo = 1e9, el_hi = -1e9;
    for (std::size_t k = 0; k < f.vertices.size(); ++k) {
      const Vec3& a = f.vertices[k];
      const Vec3& b = f.vertices[(k + 1) % f.vertices.size()];
      for (int s = 0; s <= 32; ++s) {
        const Vec3 p = a + (b - a) * (s / 32.0);
        const double az = rad2deg(std::atan2(p.y(), p.x()));
        const double el = rad2deg(std::atan2(p.z(), std::hypot(p.x(), p.y())));
        az_lo = std::min(az_lo, az);
        az_hi = std::max(az_hi, az);
        el_lo = std::min(el_lo, el);
        el_hi = std::max(el_hi, el);
      }
    }
    const bool full_az = az_hi - az_lo > 180.0;
    int i0 = 0, i1 = na - 1;
    if (!full_az) {
      i0 = static_cast<int>(std::floor((az_lo - model.az_deg(0)) / az_step)) - 2;
      i1 = static_cast<int>(std::ceil((az_hi - model.az_deg(0)) / az_step)) + 2;
      if (model.kind == LidarKind::SolidState) {
        i0 = std::max(i0, 0);
        i1 = std::min(i1, na - 1);
      }
    }
    int j0 = 0, j1 = ne - 1;
    if (model.kind == LidarKind::Spinning) {
      j0 = std::max(0, static_cast<int>(std::floor((model.elevation_top_deg - el_hi) / el_step)) - 2);
      j1 = std::min(ne - 1, static_cast<int>(std::ceil((model.elevation_top_deg - el_lo) / el_step)) + 2);
    } else {
      j0 = std::max(0, static_cast<int>(std::floor((el_lo - model.el_deg(0)) / el_step)) - 2);
      j1 = std::min(ne - 1, static_cast<int>(std::ceil((el_hi - model.el_deg(0)) / el_step)) + 2);
    }
    for (int ii = i0; ii <= i1; ++ii) {
      const int i = ((ii % na) + na) % na;
      for (int j = j0; j <= j1; ++j) {
        const Vec3 d = model.direction(i, j);
        double t = 0.0;
        if (!detail::ray_face(f, Vec3::Zero(), d, t) || t > model.max_range) continue;
        const std::size_t key = static_cast<std::size_t>(i) * static_cast<std::size_t>(ne) + static_cast<std::size_t>(j);
        if (t < best_t[key]) {
          best_t[key] = t;
          best_face[key] = static_cast<int>(fi);
        }
      }
    }
  }

  PointCloud cloud;
  for (int i = 0; i < na; ++i)
    for (int j = 0; j < ne; ++j) {
      const std::size_t key = static_cast<std::size_t>(i) * static_cast<std::size_t>(ne) + static_cast<std::size_t>(j);
      if (best_face[key] < 0) continue;
      cloud.points.push_back({best_t[key] * model.direction(i, j), faces[static_cast<std::size_t>(best_face[key])].intensity});
    }
  if (shuffle && model.kind == LidarKind::SolidState) std::shuffle(cloud.points.begin(), cloud.points.end(), rng);
  return cloud;
}

/// Analytic camera render: per-pixel ray cast through the faces.
inline void render_camera(const std::vector<Face>& faces, const Intrinsics& K, const Pose& camera_from_lidar,
                          ImageF& image, ImageF& depth) {
  image = ImageF(K.width, K.height, 0.0f);
  depth = ImageF(K.width, K.height, 0.0f);
  const Mat3 Rt = camera_from_lidar.rotation().transpose();
  const Vec3 origin = camera_from_lidar.center();
  std::vector<double> zbuf(image.size(), std::numeric_limits<double>::infinity());
  for (const auto& f : faces) {
    int x0 = 0, x1 = K.width - 1, y0 = 0, y1 = K.height - 1;
    bool all_front = true;
    double umin = 1e18, umax = -1e18, vmin = 1e18, vmax = -1e18;
    for (const auto& v : f.vertices) {
      const Vec3 pc = camera_from_lidar * v;
      if (!(pc.z() > 0.0)) {
        all_front = false;
        break;
      }
      const Vec2 uv = project_pinhole(pc, K);
      umin = std::min(umin, uv.x());
      umax = std::max(umax, uv.x());
      vmin = std::min(vmin, uv.y());
      vmax = std::max(vmax, uv.y());
    }
    if (all_front) {
      if (umax < -1.0 || vmax < -1.0 || umin > K.width || vmin > K.height) continue;
      x0 = std::max(0, static_cast<int>(std::floor(umin)) - 1);
      x1 = std::min(K.width - 1, static_cast<int>(std::ceil(umax)) + 1);
      y0 = std::max(0, static_cast<int>(std::floor(vmin)) - 1);
      y1 = std::min(K.height - 1, static_cast<int>(std::ceil(vmax)) + 1);
    }
    for (int y = y0; y <= y1; ++y)
      for (int x = x0; x <= x1; ++x) {
        const Vec3 rc((x - K.cx) / K.fx, (y - K.cy) / K.fy, 1.0);
        double t = 0.0;
        if (!detail::ray_face(f, origin, Rt * rc, t)) continue;
        const std::size_t idx = image.index(x, y);
        if (t < zbuf[idx]) {
          zbuf[idx] = t;
          image.data()[idx] = static_cast<float>(f.intensity);
          depth.data()[idx] = static_cast<float>(t);
        }
      }
  }
}

namespace detail {

inline bool occluded(const std::vector<Face>& faces, std::size_t own, const Vec3& origin, const Vec3& target) {
  const Vec3 d = target - origin;
  for (std::size_t k = 0; k < faces.size(); ++k) {
    if (k == own) continue;
    double t = 0.0;
    if (ray_face(faces[k], origin, d, t) && t < 1.0 - 1e-9) return true;
  }
  return false;
}

inline bool face_in_front(const Face& f, const Vec3& origin) {
  return f.two_sided || f.normal.dot(origin - f.vertices[0]) > 0.0;
}

}  // namespace detail

/// Point cloud, camera image, depth, noisy camera masks and the noiseless
/// corner correspondences of a scene.
inline SyntheticScene generate(const SceneSpec& spec) {
  spec.camera.validate();
  spec.lidar.validate();
  const NoiseSpec& nz = spec.noise;
  for (double r : {nz.outlier_rate, nz.dropout_rate})
    if (!(r >= 0.0 && r <= 1.0)) throw Error(ErrorCode::InvalidArgument, "noise rates must be in [0, 1]");
  if (!(nz.pixel_sigma >= 0.0) || !(nz.point_sigma >= 0.0))
    throw Error(ErrorCode::InvalidArgument, "noise sigmas must be non-negative");

  std::mt19937_64 rng(spec.seed);
  SyntheticScene out;
  out.camera = spec.camera;
  out.true_extrinsic = spec.true_extrinsic;
  out.faces = build_faces(spec);

  PointCloud raw = cast_lidar(out.faces, spec.lidar, spec.shuffle_points, rng);
  std::vector<std::size_t> hits_per_face(out.faces.size(), 0);
  {
    std::bernoulli_distribution drop(nz.dropout_rate);
    std::normal_distribution<double> gauss(0.0, 1.0);
    for (const auto& p : raw.points) {
      if (nz.dropout_rate > 0.0 && drop(rng)) continue;
      LidarPoint q = p;
      if (nz.point_sigma > 0.0) q.position += nz.point_sigma * Vec3(gauss(rng), gauss(rng), gauss(rng));
      out.cloud.points.push_back(q);
    }
  }
  for (const auto& p : raw.points) {
    double t = 0.0;
    const int f = cast_ray(out.faces, Vec3::Zero(), p.position.normalized(), t);
    if (f >= 0) ++hits_per_face[static_cast<std::size_t>(f)];
  }

  render_camera(out.faces, spec.camera, spec.true_extrinsic, out.image, out.depth);

  const Vec3 cam_center = spec.true_extrinsic.center();
  std::normal_distribution<double> pix(0.0, 1.0);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  bool any_visible = false;
  for (std::size_t fi = 0; fi < out.faces.size(); ++fi) {
    const Face& f = out.faces[fi];
    if (!detail::face_in_front(f, cam_center)) continue;
    std::vector<Vec2> poly;
    bool ok = true;
    for (const auto& v : f.vertices) {
      const Vec3 pc = spec.true_extrinsic * v;
      if (!(pc.z() > 0.0)) {
        ok = false;
        break;
      }
      poly.push_back(project_pinhole(pc, spec.camera));
    }
    if (!ok) continue;
    const bool inside = std::any_of(poly.begin(), poly.end(), [&](const Vec2& p) { return spec.camera.contains(p); });
    if (!inside) continue;

    for (std::size_t k = 0; k < f.vertices.size(); ++k) {
      const Vec3& v = f.vertices[k];
      if (!spec.camera.contains(poly[k])) continue;
      int li = 0, lj = 0;
      if (!spec.lidar.nearest_ray(v.normalized(), li, lj)) continue;
      if (detail::occluded(out.faces, fi, cam_center, v) || detail::occluded(out.faces, fi, Vec3::Zero(), v)) continue;
      if (!detail::face_in_front(f, Vec3::Zero())) continue;
      out.ground_truth.push_back({v, poly[k]});
    }

    std::vector<Vec2> noisy = poly;
    for (auto& p : noisy) {
      if (nz.pixel_sigma > 0.0) p += nz.pixel_sigma * Vec2(pix(rng), pix(rng));
      if (nz.outlier_rate > 0.0 && unit(rng) < nz.outlier_rate) {
        const double mag = 2.0 + 8.0 * unit(rng);
        const double ang = 2.0 * kPi * unit(rng);
        p += mag * Vec2(std::cos(ang), std::sin(ang));
      }
    }
    Mask m = mask_from_polygon(static_cast<int>(out.masks.size()), noisy, spec.camera.width, spec.camera.height);
    if (m.region.empty()) continue;
    out.masks.push_back(std::move(m));
    if (hits_per_face[fi] > 0) any_visible = true;
  }
  if (!any_visible) throw Error(ErrorCode::NoVisibleGeometry, "no primitive is visible to both sensors");
  return out;
}

/// Splits by point order into `parts` consecutive segments and returns the
/// cumulative unions (1/parts, 2/parts, ..., all of the cloud).
inline std::vector<PointCloud> density_split(const PointCloud& cloud, int parts) {
  if (parts < 1) throw Error(ErrorCode::InvalidArgument, "parts must be >= 1");
  std::vector<PointCloud> out;
  const std::size_t n = cloud.size();
  for (int k = 1; k <= parts; ++k) {
    const std::size_t end = n * static_cast<std::size_t>(k) / static_cast<std::size_t>(parts);
    PointCloud c;
    c.points.assign(cloud.points.begin(), cloud.points.begin() + static_cast<long>(end));
    out.push_back(std::move(c));
  }
  return out;
}

/// Consecutive segments themselves (a partition of the cloud).
inline std::vector<PointCloud> density_segments(const PointCloud& cloud, int parts) {
  if (parts < 1) throw Error(ErrorCode::InvalidArgument, "parts must be >= 1");
  std::vector<PointCloud> out;
  const std::size_t n = cloud.size();
  std::size_t begin = 0;
  for (int k = 1; k <= parts; ++k) {
    const std::size_t end = n * static_cast<std::size_t>(k) / static_cast<std::size_t>(parts);
    PointCloud c;
    c.points.assign(cloud.points.begin() + static_cast<long>(begin), cloud.points.begin() + static_cast<long>(end));
    out.push_back(std::move(c));
    begin = end;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Random scenes

/// Rotation by a random axis and an angle uniform in [0, max_deg], plus a
/// translation offset of uniform direction and magnitude in [0, max_m].
inline Pose perturb_pose(const Pose& p, double max_deg, double max_m, std::mt19937_64& rng) {
  std::normal_distribution<double> g(0.0, 1.0);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  Vec3 axis(g(rng), g(rng), g(rng));
  axis.normalize();
  Vec3 dir(g(rng), g(rng), g(rng));
  dir.normalize();
  const double ang = deg2rad(max_deg) * u(rng);
  const double mag = max_m * u(rng);
  const Mat3 dR = so3_exp(ang * axis);
  return Pose(dR * p.rotation(), p.translation() + mag * dir);
}

struct RandomSceneParams {
  int n_primitives = 5;
  LidarModel lidar;
  Intrinsics camera = Intrinsics{500.0, 500.0, 320.0, 240.0, 640, 480};
  Pose true_extrinsic = kitti_reference_extrinsic();
  NoiseSpec noise;
  double min_distance = 4.0;
  double max_distance = 12.0;
  double min_size = 1.0;
  double max_size = 2.2;
  double max_tilt_deg = 30.0;
  double image_margin_px = 30.0;  // face corners stay this far inside the camera image
  double gap_px = 12.0;           // minimum gap between faces' image boxes
  int max_attempts = 2000;
};

/// Non-overlapping planar faces with distinct intensities, fully visible in
/// the camera and inside the LiDAR field of view.
inline SceneSpec random_scene_spec(const RandomSceneParams& params, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::normal_distribution<double> g(0.0, 1.0);
  const Intrinsics& K = params.camera;
  const Pose& T = params.true_extrinsic;

  SceneSpec spec;
  spec.lidar = params.lidar;
  spec.camera = K;
  spec.true_extrinsic = T;
  spec.noise = params.noise;
  spec.seed = seed ^ 0x9e3779b97f4a7c15ULL;

  std::vector<int> levels = {1, 2, 3, 4, 5, 6, 7};
  std::shuffle(levels.begin(), levels.end(), rng);

  // Camera at the LiDAR origin with the true orientation: the front virtual view.
  const Pose origin_view(T.rotation(), Vec3::Zero());
  struct Box {
    double x0, y0, x1, y1;
  };
  std::vector<Box> cam_boxes, lidar_boxes;
  auto overlaps = [&](const std::vector<Box>& boxes, const Box& b) {
    for (const auto& o : boxes)
      if (b.x0 < o.x1 + params.gap_px && o.x0 < b.x1 + params.gap_px && b.y0 < o.y1 + params.gap_px &&
          o.y0 < b.y1 + params.gap_px)
        return true;
    return false;
  };

  int attempts = 0;
  while (static_cast<int>(spec.primitives.size()) < params.n_primitives && attempts < params.max_attempts) {
    ++attempts;
    const double m = params.image_margin_px;
    const Vec2 uv(m + u(rng) * (K.width - 2 * m), m + u(rng) * (K.height - 2 * m));
    const double z = params.min_distance + u(rng) * (params.max_distance - params.min_distance);
    const Vec3 center = T.inverse() * back_project(uv, z, K);

    // Normal toward the sensors, tilted by up to max_tilt.
    const Vec3 toward = (0.5 * T.center() - center).normalized();
    Vec3 axis = toward.cross(Vec3(g(rng), g(rng), g(rng)));
    if (axis.norm() < 1e-9) continue;
    axis.normalize();
    const Vec3 normal = so3_exp(deg2rad(params.max_tilt_deg) * u(rng) * axis) * toward;
    Vec3 ex = normal.cross(Vec3::UnitZ());
    if (ex.norm() < 1e-6) ex = normal.cross(Vec3::UnitX());
    ex.normalize();
    const Vec3 ey = normal.cross(ex);
    const double spin = 2.0 * kPi * u(rng);
    const Vec3 ax = std::cos(spin) * ex + std::sin(spin) * ey;
    const Vec3 ay = normal.cross(ax);
    Mat3 R;
    R << ax, ay, normal;

    Primitive p;
    p.kind = Primitive::Kind::Plane;
    p.pose = Pose(R, center);
    p.extent = Vec3(params.min_size + u(rng) * (params.max_size - params.min_size),
                    params.min_size + u(rng) * (params.max_size - params.min_size), 0.0);
    p.face_intensity = {(levels[spec.primitives.size() % levels.size()] + 0.5) / 8.0};
    p.snap_to_lidar = true;

    SceneSpec probe = spec;
    probe.primitives = {p};
    const Face f = build_faces(probe).front();

    bool ok = true;
    Box cb{1e18, 1e18, -1e18, -1e18}, lb = cb;
    for (const auto& v : f.vertices) {
      int li = 0, lj = 0;
      if (!params.lidar.nearest_ray(v.normalized(), li, lj)) {
        ok = false;
        break;
      }
      // Keep a one-degree margin inside the LiDAR lattice.
      const double az = rad2deg(std::atan2(v.y(), v.x()));
      const double el = rad2deg(std::atan2(v.z(), std::hypot(v.x(), v.y())));
      if (params.lidar.kind == LidarKind::SolidState &&
          (std::abs(az) > 0.5 * params.lidar.fov_h_deg - 1.0 || std::abs(el) > 0.5 * params.lidar.fov_v_deg - 1.0))
        ok = false;
      if (params.lidar.kind == LidarKind::Spinning &&
          (el > params.lidar.elevation_top_deg - 1.0 ||
           el < params.lidar.elevation_top_deg - params.lidar.vertical_fov_deg + 1.0))
        ok = false;
      const Vec3 pc = T * v, pl = origin_view * v;
      if (!(pc.z() > 0.5) || !(pl.z() > 0.5)) {
        ok = false;
        break;
      }
      const Vec2 a = project_pinhole(pc, K), b = project_pinhole(pl, K);
      if (a.x() < m || a.y() < m || a.x() > K.width - 1 - m || a.y() > K.height - 1 - m) ok = false;
      if (b.x() < m || b.y() < m || b.x() > K.width - 1 - m || b.y() > K.height - 1 - m) ok = false;
      cb = {std::min(cb.x0, a.x()), std::min(cb.y0, a.y()), std::max(cb.x1, a.x()), std::max(cb.y1, a.y())};
      lb = {std::min(lb.x0, b.x()), std::min(lb.y0, b.y()), std::max(lb.x1, b.x()), std::max(lb.y1, b.y())};
    }
    if (!ok || overlaps(cam_boxes, cb) || overlaps(lidar_boxes, lb)) continue;
    // Reject faces seen nearly edge-on by either sensor.
    if (std::abs(f.normal.dot(center.normalized())) < 0.5 ||
        std::abs(f.normal.dot((center - T.center()).normalized())) < 0.5)
      continue;
    cam_boxes.push_back(cb);
    lidar_boxes.push_back(lb);
    spec.primitives.push_back(p);
  }
  if (spec.primitives.empty()) throw Error(ErrorCode::NoVisibleGeometry, "could not place any primitive");
  return spec;
}

}  // namespace envcalib
