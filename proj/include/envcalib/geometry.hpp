#pragma once

// Rigid-body math, the pinhole camera model and the calibration error metrics.
//
// Conventions:
//  * A Pose maps points from a source frame into a target frame,
//    p_target = R * p_source + t. The extrinsic is camera-from-LiDAR.
//  * Pixel (u, v) = (fx * x / z + cx, fy * y / z + cy). Integer pixel
//    indices sit at pixel centers, so pixel (i, j) covers [i-0.5, i+0.5).
//  * Euler angles are intrinsic Z-Y-X (yaw, pitch, roll), stored in radians.

#include <Eigen/Core>
#include <Eigen/Geometry>
#include <Eigen/SVD>

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>
#include <vector>

#include "envcalib/error.hpp"

namespace envcalib {

using Vec2 = Eigen::Vector2d;
using Vec3 = Eigen::Vector3d;
using Vec6 = Eigen::Matrix<double, 6, 1>;
using Mat3 = Eigen::Matrix3d;

constexpr double kPi = std::numbers::pi;

inline double deg2rad(double deg) { return deg * kPi / 180.0; }
inline double rad2deg(double rad) { return rad * 180.0 / kPi; }

/// Wraps an angle (radians) into (-pi, pi].
inline double wrap_angle(double a) {
  a = std::remainder(a, 2.0 * kPi);
  if (a <= -kPi) a += 2.0 * kPi;
  return a;
}

inline Mat3 skew(const Vec3& v) {
  Mat3 m;
  m << 0.0, -v.z(), v.y(), v.z(), 0.0, -v.x(), -v.y(), v.x(), 0.0;
  return m;
}

/// Rodrigues exponential of a rotation vector.
inline Mat3 so3_exp(const Vec3& w) {
  const double theta = w.norm();
  const Mat3 W = skew(w);
  if (theta < 1e-8) return Mat3::Identity() + W + 0.5 * W * W;
  const double a = std::sin(theta) / theta;
  const double b = (1.0 - std::cos(theta)) / (theta * theta);
  return Mat3::Identity() + a * W + b * W * W;
}

inline Vec3 so3_log(const Mat3& R) {
  const Eigen::AngleAxisd aa(R);
  return aa.angle() * aa.axis();
}

struct EulerAngles {
  double yaw = 0.0;    // about Z, radians
  double pitch = 0.0;  // about Y, radians
  double roll = 0.0;   // about X, radians

  static EulerAngles from_degrees(double yaw_deg, double pitch_deg, double roll_deg) {
    return {deg2rad(yaw_deg), deg2rad(pitch_deg), deg2rad(roll_deg)};
  }
  Vec3 degrees() const { return {rad2deg(yaw), rad2deg(pitch), rad2deg(roll)}; }

  Mat3 to_rotation() const {
    return (Eigen::AngleAxisd(yaw, Vec3::UnitZ()) * Eigen::AngleAxisd(pitch, Vec3::UnitY()) *
            Eigen::AngleAxisd(roll, Vec3::UnitX()))
        .toRotationMatrix();
  }

  static EulerAngles from_rotation(const Mat3& R) {
    EulerAngles e;
    const double sp = std::clamp(-R(2, 0), -1.0, 1.0);
    e.pitch = std::asin(sp);
    if (std::abs(sp) < 1.0 - 1e-12) {
      e.yaw = std::atan2(R(1, 0), R(0, 0));
      e.roll = std::atan2(R(2, 1), R(2, 2));
    } else {
      // Gimbal lock: only yaw -/+ roll is observable; put it all in yaw.
      e.roll = 0.0;
      e.yaw = std::atan2(-R(0, 1), R(1, 1));
    }
    return e;
  }
};

/// Rigid transform in SE(3).
class Pose {
 public:
  Pose() : R_(Mat3::Identity()), t_(Vec3::Zero()) {}

  Pose(const Mat3& R, const Vec3& t) : R_(R), t_(t) {
    if (!R.allFinite() || !t.allFinite())
      throw Error(ErrorCode::InvalidArgument, "pose has non-finite entries");
    if ((R.transpose() * R - Mat3::Identity()).norm() > 1e-6 || R.determinant() < 0.0)
      throw Error(ErrorCode::InvalidArgument, "rotation is not orthonormal with det +1");
  }

  static Pose identity() { return {}; }

  /// Projects R onto SO(3) first (SVD). For published matrices printed with
  /// a few significant digits.
  static Pose orthonormalized(const Mat3& R, const Vec3& t) {
    Eigen::JacobiSVD<Mat3> svd(R, Eigen::ComputeFullU | Eigen::ComputeFullV);
    Mat3 U = svd.matrixU();
    if ((U * svd.matrixV().transpose()).determinant() < 0.0) U.col(2) *= -1.0;
    return {U * svd.matrixV().transpose(), t};
  }

  static Pose from_euler(const EulerAngles& e, const Vec3& t) { return {e.to_rotation(), t}; }

  /// Pose whose rotation is exp(rotvec).
  static Pose from_rotvec(const Vec3& rotvec, const Vec3& t) { return {so3_exp(rotvec), t}; }

  const Mat3& rotation() const { return R_; }
  const Vec3& translation() const { return t_; }

  Vec3 operator*(const Vec3& p) const { return R_ * p + t_; }

  Pose operator*(const Pose& rhs) const { return Pose(R_ * rhs.R_, R_ * rhs.t_ + t_, Unchecked{}); }

  Pose inverse() const {
    const Mat3 Rt = R_.transpose();
    return Pose(Rt, -Rt * t_, Unchecked{});
  }

  /// Origin of the target frame expressed in the source frame, -R^T t.
  /// For a camera-from-LiDAR extrinsic this is the camera position in the LiDAR frame.
  Vec3 center() const { return -R_.transpose() * t_; }

  /// exp(xi) * this, with xi = (rotation vector, translation).
  Pose left_perturbed(const Vec6& xi) const {
    const Mat3 dR = so3_exp(xi.head<3>());
    return Pose(dR * R_, dR * t_ + xi.tail<3>(), Unchecked{});
  }

  Eigen::Matrix4d matrix() const {
    Eigen::Matrix4d m = Eigen::Matrix4d::Identity();
    m.topLeftCorner<3, 3>() = R_;
    m.topRightCorner<3, 1>() = t_;
    return m;
  }

 private:
  struct Unchecked {};
  Pose(const Mat3& R, const Vec3& t, Unchecked) : R_(R), t_(t) {}

  Mat3 R_;
  Vec3 t_;
};

struct Intrinsics {
  double fx = 0.0;
  double fy = 0.0;
  double cx = 0.0;
  double cy = 0.0;
  int width = 0;
  int height = 0;

  static Intrinsics make(double fx, double fy, double cx, double cy, int width, int height) {
    Intrinsics k{fx, fy, cx, cy, width, height};
    k.validate();
    return k;
  }

  void validate() const {
    if (!(fx > 0.0) || !(fy > 0.0))
      throw Error(ErrorCode::InvalidArgument, "focal lengths must be positive");
    if (width <= 0 || height <= 0)
      throw Error(ErrorCode::InvalidArgument, "image size must be positive");
  }

  Mat3 matrix() const {
    Mat3 K;
    K << fx, 0.0, cx, 0.0, fy, cy, 0.0, 0.0, 1.0;
    return K;
  }

  /// True when the pixel center nearest to `uv` lies inside the image.
  bool contains(const Vec2& uv) const {
    return uv.x() > -0.5 && uv.y() > -0.5 && uv.x() < width - 0.5 && uv.y() < height - 0.5;
  }

  /// Full field of view along the width (horizontal) or height, in radians.
  double horizontal_fov() const { return 2.0 * std::atan(width / (2.0 * fx)); }
  double vertical_fov() const { return 2.0 * std::atan(height / (2.0 * fy)); }
};

struct LidarPoint {
  Vec3 position = Vec3::Zero();
  double intensity = 0.0;
};

struct PointCloud {
  std::vector<LidarPoint> points;

  std::size_t size() const { return points.size(); }
  bool empty() const { return points.empty(); }
};

/// Pinhole projection of a camera-frame point.
inline Vec2 project_pinhole(const Vec3& p, const Intrinsics& K) {
  if (!(p.z() > 0.0)) throw Error(ErrorCode::NonPositiveDepth, "point is not in front of the camera");
  return {K.fx * p.x() / p.z() + K.cx, K.fy * p.y() / p.z() + K.cy};
}

/// Inverse of project_pinhole at a known depth.
inline Vec3 back_project(const Vec2& uv, double depth, const Intrinsics& K) {
  return {(uv.x() - K.cx) / K.fx * depth, (uv.y() - K.cy) / K.fy * depth, depth};
}

/// A single 3D-2D pair: LiDAR point and its pixel in the camera image.
struct PointPixel {
  Vec3 lidar_point = Vec3::Zero();
  Vec2 pixel = Vec2::Zero();
};

inline double reprojection_error(const PointPixel& corr, const Pose& camera_from_lidar,
                                 const Intrinsics& K) {
  return (project_pinhole(camera_from_lidar * corr.lidar_point, K) - corr.pixel).norm();
}

/// 2x6 Jacobian of the projected pixel of `p_lidar` with respect to a left
/// perturbation xi = (rotation vector, translation) of `camera_from_lidar`.
inline Eigen::Matrix<double, 2, 6> projection_jacobian(const Pose& camera_from_lidar,
                                                       const Vec3& p_lidar, const Intrinsics& K) {
  const Vec3 pc = camera_from_lidar * p_lidar;
  const double iz = 1.0 / pc.z();
  Eigen::Matrix<double, 2, 3> dpix;
  dpix << K.fx * iz, 0.0, -K.fx * pc.x() * iz * iz, 0.0, K.fy * iz, -K.fy * pc.y() * iz * iz;
  Eigen::Matrix<double, 3, 6> dpc;
  dpc.leftCols<3>() = -skew(pc);
  dpc.rightCols<3>() = Mat3::Identity();
  return dpix * dpc;
}

struct PoseErrors {
  double rotation_deg = 0.0;    // e_r
  double translation_m = 0.0;   // e_t
};

/// Calibration error between an estimated and a ground-truth camera-from-LiDAR
/// extrinsic.
///
/// e_t is the distance between the two camera centers -R^-1 t. e_r is the L2
/// norm of the difference of yaw/pitch/roll vectors, each component wrapped to
/// (-180, 180]. The Euler vectors are taken from the camera orientation in the
/// LiDAR frame (R^-1), which keeps the usual forward-facing mounting far from
/// the Z-Y-X gimbal lock that R itself sits on.
inline PoseErrors error_metrics(const Pose& estimated, const Pose& ground_truth) {
  const EulerAngles a = EulerAngles::from_rotation(estimated.rotation().transpose());
  const EulerAngles b = EulerAngles::from_rotation(ground_truth.rotation().transpose());
  const Vec3 d(wrap_angle(a.yaw - b.yaw), wrap_angle(a.pitch - b.pitch), wrap_angle(a.roll - b.roll));
  PoseErrors e;
  e.rotation_deg = rad2deg(d.norm());
  e.translation_m = (estimated.center() - ground_truth.center()).norm();
  return e;
}

/// Left-camera extrinsic released for KITTI odometry sequence 00.
inline Pose kitti_reference_extrinsic() {
  Mat3 R;
  R << -2.5863e-04, -9.9997e-01, -7.5239e-03, -6.8893e-03, 7.5255e-03, -9.9995e-01, 9.9998e-01, -2.0678e-04,
      -6.8911e-03;
  return Pose::orthonormalized(R, Vec3(0.070478, -0.057913, -0.286353));
}

/// Rotation taking a LiDAR frame (x forward, y left, z up) to a camera frame
/// (z forward, x right, y down). Used as the front-facing virtual-camera
/// orientation when no initial guess is available.
inline Mat3 lidar_to_camera_axes() {
  Mat3 R;
  R << 0.0, -1.0, 0.0, 0.0, 0.0, -1.0, 1.0, 0.0, 0.0;
  return R;
}

}  // namespace envcalib
