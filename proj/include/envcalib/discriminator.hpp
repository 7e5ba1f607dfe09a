#pragma once

// Feature density of a segmented image and virtual-camera planning.

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "envcalib/error.hpp"
#include "envcalib/geometry.hpp"
#include "envcalib/mask.hpp"
#include "envcalib/projection.hpp"

namespace envcalib {

struct FeatureDensity {
  double textural = 0.0;    // rho_t
  double structural = 0.0;  // rho_s
  double total = 0.0;       // rho_t * rho_s
};

constexpr std::size_t kMinDensityMaskArea = 9;

/// rho_t = ln((sum m_i)^2), rho_s = sum ln(|union| / |M_i|). Masks under 9 px
/// are ignored. Throws NoMasks when nothing is left.
inline FeatureDensity feature_density(const std::vector<Mask>& masks) {
  std::vector<Mask> kept;
  for (const auto& m : masks)
    if (m.area() >= kMinDensityMaskArea) kept.push_back(m);
  if (kept.empty()) throw Error(ErrorCode::NoMasks, "no mask large enough for a density estimate");

  double corners = 0.0;
  for (const auto& m : kept) corners += static_cast<double>(m.corners.size());
  const double uni = static_cast<double>(union_area(kept));

  FeatureDensity d;
  d.textural = corners > 0.0 ? std::log(corners * corners) : 0.0;
  for (const auto& m : kept) d.structural += std::log(uni / static_cast<double>(m.area()));
  d.total = d.textural * d.structural;
  return d;
}

/// Same, returning zero density instead of throwing on an empty list.
inline FeatureDensity feature_density_or_zero(const std::vector<Mask>& masks) {
  try {
    return feature_density(masks);
  } catch (const Error& e) {
    if (e.code() == ErrorCode::NoMasks) return {};
    throw;
  }
}

enum class CameraStrategy { DensityBalance, FovRatio, InitialGuess, Manual };

inline std::string to_string(CameraStrategy s) {
  switch (s) {
    case CameraStrategy::DensityBalance: return "density";
    case CameraStrategy::FovRatio: return "fov";
    case CameraStrategy::InitialGuess: return "initial-guess";
    case CameraStrategy::Manual: return "manual";
  }
  return "density";
}

inline CameraStrategy camera_strategy_from_string(const std::string& s) {
  if (s == "density") return CameraStrategy::DensityBalance;
  if (s == "fov") return CameraStrategy::FovRatio;
  if (s == "initial-guess") return CameraStrategy::InitialGuess;
  if (s == "manual") return CameraStrategy::Manual;
  throw Error(ErrorCode::InvalidArgument, "unknown camera strategy '" + s + "'");
}

struct CameraPlan {
  int n_intensity = 1;
  int n_depth = 1;
  std::vector<Pose> intensity_poses;  // camera-from-LiDAR
  std::vector<Pose> depth_poses;
  CameraStrategy strategy = CameraStrategy::DensityBalance;
  bool zero_baseline = false;  // a baseline density was 0; counts fell back to 1
};

/// Virtual camera at `position` (LiDAR frame) with camera-from-LiDAR rotation R.
inline Pose camera_at(const Mat3& R, const Vec3& position) { return Pose(R, -R * position); }

/// Viewpoint k of the sphere layout: origin, then +X, -X, +Y, -Y, +Z, -Z at
/// radius r; further shells at r/2, r/4, ...
inline Vec3 sphere_position(int k, double r) {
  if (k == 0) return Vec3::Zero();
  const int shell = (k - 1) / 6;
  const int axis = (k - 1) % 6;
  const double radius = r / std::pow(2.0, shell);
  Vec3 p = Vec3::Zero();
  p[axis / 2] = (axis % 2 == 0 ? 1.0 : -1.0) * radius;
  return p;
}

inline std::vector<Pose> sphere_poses(int n, double r, const Mat3& orientation) {
  std::vector<Pose> poses;
  for (int k = 0; k < n; ++k) poses.push_back(camera_at(orientation, sphere_position(k, r)));
  return poses;
}

struct DensityPlanParams {
  double radius = 0.3;  // meters
  int n_max = 7;
};

/// n = ceil(rho_camera / rho_virtual_baseline), clamped to [1, n_max].
inline int density_camera_count(double camera_density, double baseline_density, int n_max, bool& zero_baseline) {
  if (!(baseline_density > 0.0)) {
    zero_baseline = true;
    return 1;
  }
  const double ratio = std::max(camera_density, 0.0) / baseline_density;
  const double n = std::ceil(ratio - 1e-12);
  return static_cast<int>(std::clamp(n, 1.0, static_cast<double>(std::max(1, n_max))));
}

inline CameraPlan plan_cameras_density(const FeatureDensity& camera_intensity, const FeatureDensity& camera_depth,
                                       const FeatureDensity& lidar_intensity, const FeatureDensity& lidar_depth,
                                       const Mat3& orientation, const DensityPlanParams& params = {}) {
  CameraPlan plan;
  plan.strategy = CameraStrategy::DensityBalance;
  plan.n_intensity = density_camera_count(camera_intensity.total, lidar_intensity.total, params.n_max, plan.zero_baseline);
  plan.n_depth = density_camera_count(camera_depth.total, lidar_depth.total, params.n_max, plan.zero_baseline);
  plan.intensity_poses = sphere_poses(plan.n_intensity, params.radius, orientation);
  plan.depth_poses = sphere_poses(plan.n_depth, params.radius, orientation);
  return plan;
}

/// n = rho_fov * ceil(FoV_lidar / FoV_cam) with FoV_cam = 2 atan(W / 2 fx).
/// Cameras sit at the LiDAR origin, yawed to tile the LiDAR's horizontal range.
inline CameraPlan plan_cameras_fov(const FieldOfView& lidar_fov, const Intrinsics& cam, double rho_fov,
                                   const Mat3& orientation) {
  if (!(rho_fov >= 1.0)) throw Error(ErrorCode::InvalidArgument, "rho_fov must be >= 1");
  cam.validate();
  const double cam_fov = rad2deg(cam.horizontal_fov());
  const double tiles = std::max(1.0, std::ceil(lidar_fov.horizontal / cam_fov - 1e-9));
  const int n = std::max(1, static_cast<int>(std::lround(rho_fov * tiles)));

  CameraPlan plan;
  plan.strategy = CameraStrategy::FovRatio;
  plan.n_intensity = plan.n_depth = n;
  const double span = std::min(lidar_fov.horizontal, 360.0);
  for (int k = 0; k < n; ++k) {
    double yaw = 0.0;
    if (n > 1) yaw = span >= 360.0 ? 360.0 * k / n : -span / 2.0 + span * (k + 0.5) / n;
    const Mat3 R = orientation * Eigen::AngleAxisd(deg2rad(yaw), Vec3::UnitZ()).toRotationMatrix().transpose();
    plan.intensity_poses.push_back(camera_at(R, Vec3::Zero()));
  }
  plan.depth_poses = plan.intensity_poses;
  return plan;
}

/// n = max(1, round(m |t|)), positions at fractions k / (n - 1) of the segment
/// from the LiDAR origin to `segment_end` (the initial-guess camera position).
inline CameraPlan plan_cameras_initial_guess(const Vec3& segment_end, double per_meter, const Mat3& orientation) {
  if (!(per_meter > 0.0)) throw Error(ErrorCode::InvalidArgument, "per-meter density must be positive");
  const int n = std::max(1, static_cast<int>(std::lround(per_meter * segment_end.norm())));
  CameraPlan plan;
  plan.strategy = CameraStrategy::InitialGuess;
  plan.n_intensity = plan.n_depth = n;
  for (int k = 0; k < n; ++k) {
    const double f = n == 1 ? 0.0 : static_cast<double>(k) / (n - 1);
    plan.intensity_poses.push_back(camera_at(orientation, f * segment_end));
  }
  plan.depth_poses = plan.intensity_poses;
  return plan;
}

/// Fixed counts on the sphere layout.
inline CameraPlan plan_cameras_manual(int n_intensity, int n_depth, const Mat3& orientation,
                                      const DensityPlanParams& params = {}) {
  if (n_intensity < 1 || n_depth < 1) throw Error(ErrorCode::InvalidArgument, "camera counts must be >= 1");
  CameraPlan plan;
  plan.strategy = CameraStrategy::Manual;
  plan.n_intensity = n_intensity;
  plan.n_depth = n_depth;
  plan.intensity_poses = sphere_poses(n_intensity, params.radius, orientation);
  plan.depth_poses = sphere_poses(n_depth, params.radius, orientation);
  return plan;
}

}  // namespace envcalib
