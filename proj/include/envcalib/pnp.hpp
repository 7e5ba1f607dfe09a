#pragma once

// Perspective-n-point: closed-form initialization (DLT for general 3D
// configurations, plane homography otherwise) followed by Levenberg-Marquardt
// on the squared reprojection error.

#include <Eigen/Dense>
#include <Eigen/SVD>

#include <cmath>
#include <limits>
#include <vector>

#include "envcalib/error.hpp"
#include "envcalib/geometry.hpp"

namespace envcalib {

struct PnpParams {
  int max_iterations = 100;
  double gradient_tolerance = 1e-10;
  double step_tolerance = 1e-14;
};

struct PnpResult {
  Pose pose;
  double rms_px = 0.0;
  int iterations = 0;
};

namespace detail {

inline Vec2 normalized_pixel(const Vec2& uv, const Intrinsics& K) {
  return {(uv.x() - K.cx) / K.fx, (uv.y() - K.cy) / K.fy};
}

/// Similarity normalization (Hartley): returns T with T * [x; 1] centered and
/// scaled to mean distance sqrt(dim).
template <int D>
Eigen::Matrix<double, D + 1, D + 1> normalizer(const std::vector<Eigen::Matrix<double, D, 1>>& pts) {
  Eigen::Matrix<double, D, 1> mean = Eigen::Matrix<double, D, 1>::Zero();
  for (const auto& p : pts) mean += p;
  mean /= static_cast<double>(pts.size());
  double dist = 0.0;
  for (const auto& p : pts) dist += (p - mean).norm();
  dist /= static_cast<double>(pts.size());
  const double s = dist > 0.0 ? std::sqrt(static_cast<double>(D)) / dist : 1.0;
  Eigen::Matrix<double, D + 1, D + 1> T = Eigen::Matrix<double, D + 1, D + 1>::Identity();
  T.template topLeftCorner<D, D>() *= s;
  T.template topRightCorner<D, 1>() = -s * mean;
  return T;
}

inline Mat3 nearest_rotation(const Mat3& M) {
  Eigen::JacobiSVD<Mat3> svd(M, Eigen::ComputeFullU | Eigen::ComputeFullV);
  Mat3 R = svd.matrixU() * svd.matrixV().transpose();
  if (R.determinant() < 0.0) {
    Mat3 U = svd.matrixU();
    U.col(2) *= -1.0;
    R = U * svd.matrixV().transpose();
  }
  return R;
}

/// Direct linear transform for >= 6 points in general position.
inline Pose dlt_pose(const std::vector<Vec3>& X, const std::vector<Vec2>& m) {
  const auto T3 = normalizer<3>(X);
  const auto T2 = normalizer<2>(m);
  const int n = static_cast<int>(X.size());
  Eigen::MatrixXd A = Eigen::MatrixXd::Zero(2 * n, 12);
  for (int i = 0; i < n; ++i) {
    const Eigen::Vector4d Xh = T3 * X[static_cast<std::size_t>(i)].homogeneous();
    const Eigen::Vector3d mh = T2 * m[static_cast<std::size_t>(i)].homogeneous();
    A.block<1, 4>(2 * i, 0) = Xh.transpose();
    A.block<1, 4>(2 * i, 8) = -mh.x() * Xh.transpose();
    A.block<1, 4>(2 * i + 1, 4) = Xh.transpose();
    A.block<1, 4>(2 * i + 1, 8) = -mh.y() * Xh.transpose();
  }
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(A, Eigen::ComputeFullV);
  const Eigen::VectorXd p = svd.matrixV().col(11);
  Eigen::Matrix<double, 3, 4> Pn;
  Pn << p.segment<4>(0).transpose(), p.segment<4>(4).transpose(), p.segment<4>(8).transpose();
  Eigen::Matrix<double, 3, 4> P = T2.inverse() * Pn * T3;
  Mat3 M = P.leftCols<3>();
  if (M.determinant() < 0.0) {
    P = -P;
    M = -M;
  }
  Eigen::JacobiSVD<Mat3> msvd(M);
  const double scale = msvd.singularValues().mean();
  if (!(scale > 0.0)) throw Error(ErrorCode::DegenerateConfiguration, "DLT produced a singular projection");
  return Pose(nearest_rotation(M / scale), P.col(3) / scale);
}

/// Pose from a plane-induced homography. X are expressed in a plane frame:
/// X = origin + a e1 + b e2; points off the plane are projected onto it.
inline Pose homography_pose(const std::vector<Vec3>& X, const std::vector<Vec2>& m) {
  Vec3 c = Vec3::Zero();
  for (const auto& p : X) c += p;
  c /= static_cast<double>(X.size());
  Eigen::MatrixXd D(static_cast<Eigen::Index>(X.size()), 3);
  for (std::size_t i = 0; i < X.size(); ++i) D.row(static_cast<Eigen::Index>(i)) = (X[i] - c).transpose();
  Eigen::JacobiSVD<Eigen::MatrixXd> dsvd(D, Eigen::ComputeThinV);
  const Vec3 e1 = dsvd.matrixV().col(0), e2 = dsvd.matrixV().col(1);

  std::vector<Vec2> ab;
  for (const auto& p : X) ab.emplace_back(e1.dot(p - c), e2.dot(p - c));
  const auto Ta = normalizer<2>(ab);
  const auto Tm = normalizer<2>(m);
  const int n = static_cast<int>(X.size());
  Eigen::MatrixXd A = Eigen::MatrixXd::Zero(2 * n, 9);
  for (int i = 0; i < n; ++i) {
    const Vec3 a = Ta * ab[static_cast<std::size_t>(i)].homogeneous();
    const Vec3 q = Tm * m[static_cast<std::size_t>(i)].homogeneous();
    A.block<1, 3>(2 * i, 0) = a.transpose();
    A.block<1, 3>(2 * i, 6) = -q.x() * a.transpose();
    A.block<1, 3>(2 * i + 1, 3) = a.transpose();
    A.block<1, 3>(2 * i + 1, 6) = -q.y() * a.transpose();
  }
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(A, Eigen::ComputeFullV);
  const Eigen::VectorXd h = svd.matrixV().col(8);
  Mat3 Hn;
  Hn << h.segment<3>(0).transpose(), h.segment<3>(3).transpose(), h.segment<3>(6).transpose();
  const Mat3 H = Tm.inverse() * Hn * Ta;

  double lambda = 0.5 * (H.col(0).norm() + H.col(1).norm());
  if (!(lambda > 0.0)) throw Error(ErrorCode::DegenerateConfiguration, "homography is singular");
  if (H(2, 2) < 0.0) lambda = -lambda;  // plane origin must lie in front of the camera
  const Vec3 r1 = H.col(0) / lambda, r2 = H.col(1) / lambda;
  Mat3 Rp;
  Rp << r1, r2, r1.cross(r2);
  Rp = nearest_rotation(Rp);
  Mat3 E;
  E << e1, e2, e1.cross(e2);
  const Mat3 R = Rp * E.transpose();
  const Vec3 t = H.col(2) / lambda - R * c;
  return Pose(nearest_rotation(R), t);
}

inline double squared_error(const std::vector<PointPixel>& pts, const Pose& T, const Intrinsics& K) {
  double s = 0.0;
  for (const auto& c : pts) {
    const Vec3 pc = T * c.lidar_point;
    if (!(pc.z() > 1e-12)) return std::numeric_limits<double>::infinity();
    s += (project_pinhole(pc, K) - c.pixel).squaredNorm();
  }
  return s;
}

}  // namespace detail

/// Levenberg-Marquardt on the sum of squared reprojection errors.
inline PnpResult refine_pnp(const std::vector<PointPixel>& pts, const Pose& init, const Intrinsics& K,
                            const PnpParams& params = {}) {
  Pose T = init;
  double cost = detail::squared_error(pts, T, K);
  if (!std::isfinite(cost)) throw Error(ErrorCode::DegenerateConfiguration, "initial pose puts points behind the camera");
  double mu = 1e-3;
  PnpResult res;
  bool converged = false;
  int it = 0;
  for (; it < params.max_iterations && !converged; ++it) {
    Eigen::Matrix<double, 6, 6> A = Eigen::Matrix<double, 6, 6>::Zero();
    Vec6 g = Vec6::Zero();
    for (const auto& c : pts) {
      const Vec2 r = project_pinhole(T * c.lidar_point, K) - c.pixel;
      const auto J = projection_jacobian(T, c.lidar_point, K);
      A.noalias() += J.transpose() * J;
      g.noalias() += J.transpose() * r;
    }
    if (g.lpNorm<Eigen::Infinity>() < params.gradient_tolerance || cost == 0.0) {
      converged = true;
      break;
    }
    while (true) {
      Eigen::Matrix<double, 6, 6> Ad = A;
      Ad.diagonal() += mu * A.diagonal().cwiseMax(1e-12);
      const Vec6 step = Ad.ldlt().solve(-g);
      const Pose cand = T.left_perturbed(step);
      const double c2 = detail::squared_error(pts, cand, K);
      if (c2 < cost) {
        const double rel = (cost - c2) / cost;
        T = cand;
        cost = c2;
        mu = std::max(mu / 3.0, 1e-12);
        if (step.norm() < params.step_tolerance || rel < 1e-15) converged = true;
        break;
      }
      mu *= 4.0;
      if (mu > 1e16) {
        converged = true;  // no further decrease representable
        break;
      }
    }
  }
  if (!converged) throw Error(ErrorCode::NonConvergence, "PnP refinement hit the iteration limit");
  res.pose = T;
  res.rms_px = std::sqrt(cost / static_cast<double>(pts.size()));
  res.iterations = it;
  return res;
}

/// Pose minimizing the squared reprojection error of >= 4 correspondences.
inline PnpResult solve_pnp(const std::vector<PointPixel>& pts, const Intrinsics& K, const PnpParams& params = {}) {
  if (pts.size() < 4) throw Error(ErrorCode::DegenerateConfiguration, "PnP needs at least 4 correspondences");
  K.validate();
  std::vector<Vec3> X;
  std::vector<Vec2> m;
  for (const auto& c : pts) {
    if (!c.lidar_point.allFinite() || !c.pixel.allFinite())
      throw Error(ErrorCode::InvalidArgument, "non-finite correspondence");
    X.push_back(c.lidar_point);
    m.push_back(detail::normalized_pixel(c.pixel, K));
  }
  Vec3 mean = Vec3::Zero();
  for (const auto& p : X) mean += p;
  mean /= static_cast<double>(X.size());
  Eigen::MatrixXd D(static_cast<Eigen::Index>(X.size()), 3);
  for (std::size_t i = 0; i < X.size(); ++i) D.row(static_cast<Eigen::Index>(i)) = (X[i] - mean).transpose();
  const Vec3 sv = Eigen::JacobiSVD<Eigen::MatrixXd>(D).singularValues();
  if (!(sv(0) > 0.0) || sv(1) < 1e-9 * sv(0))
    throw Error(ErrorCode::DegenerateConfiguration, "3D points are coincident or collinear");
  const bool planar = sv(2) < 1e-6 * sv(0);

  Pose init;
  if (!planar && pts.size() >= 6) {
    init = detail::dlt_pose(X, m);
  } else {
    init = detail::homography_pose(X, m);
  }
  if (!std::isfinite(detail::squared_error(pts, init, K))) {
    // A closed-form start with points behind the camera; retry from the other model.
    init = (!planar && pts.size() >= 6) ? detail::homography_pose(X, m) : init;
    if (!std::isfinite(detail::squared_error(pts, init, K)))
      throw Error(ErrorCode::DegenerateConfiguration, "no initialization with all points in front of the camera");
  }
  return refine_pnp(pts, init, K, params);
}

}  // namespace envcalib
