#pragma once

// Dual-path corner matching: mask matching, per-pair 4-DoF similarity, the
// corner cost matrix and mutual-best selection.

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <limits>
#include <ostream>
#include <string>
#include <vector>

#include "envcalib/error.hpp"
#include "envcalib/geometry.hpp"
#include "envcalib/mask.hpp"

namespace envcalib {

using Mat2 = Eigen::Matrix2d;

struct SimilarityTransform {
  double scale = 1.0;
  Mat2 rotation = Mat2::Identity();
  Vec2 translation = Vec2::Zero();
  bool rotation_fallback = false;  // principal axes unstable; rotation set to identity
  bool degenerate = false;         // zero-size instance; pure translation

  Vec2 apply(const Vec2& p) const { return scale * (rotation * p) + translation; }
  Vec2 invert(const Vec2& q) const { return rotation.transpose() * (q - translation) / scale; }
  double angle_deg() const { return rad2deg(std::atan2(rotation(1, 0), rotation(0, 0))); }
};

inline Mat2 rotation2d(double angle) {
  Mat2 R;
  R << std::cos(angle), -std::sin(angle), std::sin(angle), std::cos(angle);
  return R;
}

struct PrincipalAxis {
  double angle = 0.0;       // radians, in (-pi/2, pi/2]
  double anisotropy = 0.0;  // (l1 - l2) / (l1 + l2), 0 for isotropic regions
};

inline PrincipalAxis principal_axis(const Mask& m) {
  double n = 0.0;
  Vec2 mean = Vec2::Zero();
  m.region.for_each_pixel([&](int x, int y) {
    mean += Vec2(x, y);
    n += 1.0;
  });
  PrincipalAxis pa;
  if (n < 2.0) return pa;
  mean /= n;
  double sxx = 0.0, syy = 0.0, sxy = 0.0;
  m.region.for_each_pixel([&](int x, int y) {
    const double dx = x - mean.x(), dy = y - mean.y();
    sxx += dx * dx;
    syy += dy * dy;
    sxy += dx * dy;
  });
  pa.angle = 0.5 * std::atan2(2.0 * sxy, sxx - syy);
  const double tr = sxx + syy;
  const double diff = std::hypot(sxx - syy, 2.0 * sxy);
  pa.anisotropy = tr > 0.0 ? diff / tr : 0.0;
  return pa;
}

struct SimilarityParams {
  double min_anisotropy = 0.2;     // both masks must be at least this elongated
  double max_rotation_deg = 45.0;  // larger estimated rotations are treated as unstable
};

/// s = sqrt(h_C w_C / (h_V w_V)), rotation from principal-axis alignment,
/// t = o_C - s R o_V. Falls back to R = I when the axes are unreliable.
inline SimilarityTransform estimate_similarity(const Mask& virt, const Mask& cam, const SimilarityParams& params = {}) {
  SimilarityTransform T;
  if (virt.instance_h <= 0.0 || virt.instance_w <= 0.0 || cam.instance_h <= 0.0 || cam.instance_w <= 0.0) {
    T.degenerate = true;
    T.translation = cam.instance_center - virt.instance_center;
    return T;
  }
  T.scale = std::sqrt(cam.instance_h * cam.instance_w / (virt.instance_h * virt.instance_w));
  const PrincipalAxis pv = principal_axis(virt);
  const PrincipalAxis pc = principal_axis(cam);
  double angle = wrap_angle(2.0 * (pc.angle - pv.angle)) / 2.0;  // axes are defined modulo pi
  if (pv.anisotropy < params.min_anisotropy || pc.anisotropy < params.min_anisotropy ||
      std::abs(rad2deg(angle)) > params.max_rotation_deg) {
    T.rotation_fallback = true;
    angle = 0.0;
  }
  T.rotation = rotation2d(angle);
  T.translation = cam.instance_center - T.scale * (T.rotation * virt.instance_center);
  return T;
}

enum class LWidth { PerimeterSquaredHalf, Perimeter };

struct MaskMatchParams {
  double threshold = 1.5;
  LWidth l_width = LWidth::PerimeterSquaredHalf;
  SimilarityParams similarity;
};

struct MaskPair {
  int virtual_index = 0;  // index into the virtual mask list
  int camera_index = 0;   // index into the camera mask list
  double cost = 0.0;
  SimilarityTransform transform;
};

struct MaskMatchSet {
  std::vector<MaskPair> pairs;
  double L = 1.0;
};

/// Cost between a virtual and a camera mask: normalized center distance plus
/// absolute log area ratio plus absolute log aspect ratio.
inline double mask_cost(const Mask& v, const Mask& c) {
  const double av = static_cast<double>(v.area()), ac = static_cast<double>(c.area());
  if (av <= 0.0 || ac <= 0.0 || v.instance_h <= 0.0 || c.instance_h <= 0.0) return std::numeric_limits<double>::infinity();
  const double center = (v.instance_center - c.instance_center).norm() / std::sqrt(std::max(av, ac));
  const double area = std::abs(std::log(ac / av));
  const double aspect = std::abs(std::log((c.instance_w / c.instance_h) / (v.instance_w / v.instance_h)));
  return center + area + aspect;
}

/// Greedy assignment: repeatedly take the globally cheapest remaining cell
/// below the threshold (ties to the lower row, then column).
inline std::vector<std::pair<int, int>> greedy_assignment(const Eigen::MatrixXd& cost, double threshold) {
  std::vector<std::pair<int, int>> out;
  std::vector<bool> row_used(static_cast<std::size_t>(cost.rows()), false);
  std::vector<bool> col_used(static_cast<std::size_t>(cost.cols()), false);
  while (true) {
    double best = threshold;
    int bi = -1, bj = -1;
    for (int i = 0; i < cost.rows(); ++i) {
      if (row_used[static_cast<std::size_t>(i)]) continue;
      for (int j = 0; j < cost.cols(); ++j) {
        if (col_used[static_cast<std::size_t>(j)]) continue;
        if (cost(i, j) < best) {
          best = cost(i, j);
          bi = i;
          bj = j;
        }
      }
    }
    if (bi < 0) break;
    row_used[static_cast<std::size_t>(bi)] = true;
    col_used[static_cast<std::size_t>(bj)] = true;
    out.emplace_back(bi, bj);
  }
  std::sort(out.begin(), out.end());
  return out;
}

inline MaskMatchSet match_masks(const std::vector<Mask>& virtual_masks, const std::vector<Mask>& camera_masks,
                                const MaskMatchParams& params = {}) {
  if (virtual_masks.empty() || camera_masks.empty()) throw Error(ErrorCode::NoMatches, "empty mask list");
  Eigen::MatrixXd cost(static_cast<Eigen::Index>(virtual_masks.size()), static_cast<Eigen::Index>(camera_masks.size()));
  for (std::size_t i = 0; i < virtual_masks.size(); ++i)
    for (std::size_t j = 0; j < camera_masks.size(); ++j)
      cost(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = mask_cost(virtual_masks[i], camera_masks[j]);

  MaskMatchSet out;
  double perimeter = 0.0;
  for (const auto& [i, j] : greedy_assignment(cost, params.threshold)) {
    MaskPair p;
    p.virtual_index = i;
    p.camera_index = j;
    p.cost = cost(i, j);
    p.transform = estimate_similarity(virtual_masks[static_cast<std::size_t>(i)],
                                      camera_masks[static_cast<std::size_t>(j)], params.similarity);
    perimeter += virtual_masks[static_cast<std::size_t>(i)].perimeter + camera_masks[static_cast<std::size_t>(j)].perimeter;
    out.pairs.push_back(p);
  }
  if (out.pairs.empty()) throw Error(ErrorCode::NoMatches, "no mask pair below the matching threshold");
  const double mean_perimeter = perimeter / (2.0 * static_cast<double>(out.pairs.size()));
  out.L = params.l_width == LWidth::PerimeterSquaredHalf ? 0.5 * mean_perimeter * mean_perimeter : mean_perimeter;
  if (!(out.L > 0.0)) out.L = 1.0;
  return out;
}

struct CornerCostParams {
  double beta_s = 1.0;
  double beta_t = 1.0;
  double w = 1.0;
  bool structural = true;  // neighbour-vertex consistency term
  bool textural = true;    // texture patch term
};

/// S(e_hat, e) = w |(e_hat - c_hat) - (e - c)| / max(|e_hat - c_hat|, |e - c|).
inline double structural_similarity(const Vec2& e_hat, const Vec2& c_hat, const Vec2& e, const Vec2& c, double w) {
  const Vec2 a = e_hat - c_hat, b = e - c;
  const double denom = std::max(a.norm(), b.norm());
  if (denom == 0.0) return 0.0;
  return w * (a - b).norm() / denom;
}

/// Sum over k of min(S(e_hat_k, e_k), S(e_hat_k, e_{K-k+1})).
inline double structural_term(const CornerPoint& v, const CornerPoint& c, const SimilarityTransform& T, double w) {
  const std::size_t K = std::min(v.neighbors.size(), c.neighbors.size());
  const Vec2 ch = T.apply(v.position);
  double sum = 0.0;
  for (std::size_t k = 0; k < K; ++k) {
    const Vec2 eh = T.apply(v.neighbors[k]);
    const double fwd = structural_similarity(eh, ch, c.neighbors[k], c.position, w);
    const double rev = structural_similarity(eh, ch, c.neighbors[K - 1 - k], c.position, w);
    sum += std::min(fwd, rev);
  }
  return sum;
}

inline double texture_term(const CornerPoint& v, const CornerPoint& c) {
  const std::size_t n = std::min(v.texture.size(), c.texture.size());
  if (n == 0) return 0.0;
  double s = 0.0;
  for (std::size_t i = 0; i < n; ++i) s += std::abs(static_cast<double>(v.texture[i]) - c.texture[i]);
  return s / static_cast<double>(n);
}

inline double corner_cost(const CornerPoint& v, const CornerPoint& c, const SimilarityTransform& T, double L,
                          const CornerCostParams& p = {}) {
  const double d2 = (T.apply(v.position) - c.position).squaredNorm();
  double structural = 1.0 - std::exp(-d2 / L);
  if (p.structural) structural += structural_term(v, c, T, p.w);
  double cost = p.beta_s * structural;
  if (p.textural) cost += p.beta_t * texture_term(v, c);
  return cost;
}

/// Cells that are the strict minimum of both their row and column and below
/// `tau`, as (row, col) pairs sorted by row.
inline std::vector<std::pair<int, int>> mutual_best(const Eigen::MatrixXd& cost, double tau) {
  const Eigen::Index R = cost.rows(), C = cost.cols();
  std::vector<int> row_best(static_cast<std::size_t>(R), -1), col_best(static_cast<std::size_t>(C), -1);
  for (Eigen::Index i = 0; i < R; ++i) {
    double best = std::numeric_limits<double>::infinity();
    int arg = -1;
    bool unique = false;
    for (Eigen::Index j = 0; j < C; ++j) {
      if (cost(i, j) < best) {
        best = cost(i, j);
        arg = static_cast<int>(j);
        unique = true;
      } else if (cost(i, j) == best) {
        unique = false;
      }
    }
    if (unique) row_best[static_cast<std::size_t>(i)] = arg;
  }
  for (Eigen::Index j = 0; j < C; ++j) {
    double best = std::numeric_limits<double>::infinity();
    int arg = -1;
    bool unique = false;
    for (Eigen::Index i = 0; i < R; ++i) {
      if (cost(i, j) < best) {
        best = cost(i, j);
        arg = static_cast<int>(i);
        unique = true;
      } else if (cost(i, j) == best) {
        unique = false;
      }
    }
    if (unique) col_best[static_cast<std::size_t>(j)] = arg;
  }
  std::vector<std::pair<int, int>> out;
  for (Eigen::Index i = 0; i < R; ++i) {
    const int j = row_best[static_cast<std::size_t>(i)];
    if (j >= 0 && col_best[static_cast<std::size_t>(j)] == i && cost(i, j) < tau) out.emplace_back(static_cast<int>(i), j);
  }
  return out;
}

enum class Pathway { Textural, Spatial };

inline std::string to_string(Pathway p) { return p == Pathway::Textural ? "textural" : "spatial"; }

struct Correspondence {
  Vec3 lidar_point = Vec3::Zero();
  Vec2 pixel = Vec2::Zero();
  double cost = 0.0;
};

struct CorrespondenceSet {
  std::vector<Correspondence> pairs;
  Pathway pathway = Pathway::Textural;
  int view_index = 0;

  std::size_t size() const { return pairs.size(); }
  bool empty() const { return pairs.empty(); }
};

struct DpcmParams {
  MaskMatchParams mask_match;
  CornerCostParams cost;
  double tau = 0.5;
  double neighbor_radius = 1.5;  // extra camera masks within this many instance diagonals
};

struct CornerMatchStats {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::size_t accepted = 0;
  std::size_t without_lidar = 0;  // accepted but dropped, no LiDAR traceback
  std::size_t duplicates = 0;     // dropped, LiDAR point or pixel already used
};

/// Corner cost matrix between corners of matched virtual masks (rows) and
/// corners of matched camera masks plus unmatched camera masks near them
/// (columns); mutual-best cells below tau become correspondences.
inline CorrespondenceSet match_corners(const std::vector<Mask>& virtual_masks, const std::vector<Mask>& camera_masks,
                                       const MaskMatchSet& matches, const DpcmParams& params,
                                       CornerMatchStats* stats = nullptr) {
  if (matches.pairs.empty()) throw Error(ErrorCode::InvalidArgument, "match_corners: empty mask match set");
  struct Row {
    const CornerPoint* corner;
    const SimilarityTransform* T;
  };
  std::vector<Row> rows;
  for (const auto& p : matches.pairs)
    for (const auto& c : virtual_masks[static_cast<std::size_t>(p.virtual_index)].corners)
      rows.push_back({&c, &p.transform});

  std::vector<bool> col_mask(camera_masks.size(), false);
  for (const auto& p : matches.pairs) col_mask[static_cast<std::size_t>(p.camera_index)] = true;
  for (std::size_t j = 0; j < camera_masks.size(); ++j) {
    if (col_mask[j]) continue;
    for (const auto& p : matches.pairs) {
      const Mask& m = camera_masks[static_cast<std::size_t>(p.camera_index)];
      if ((camera_masks[j].instance_center - m.instance_center).norm() <= params.neighbor_radius * m.diagonal()) {
        col_mask[j] = true;
        break;
      }
    }
  }
  std::vector<const CornerPoint*> cols;
  for (std::size_t j = 0; j < camera_masks.size(); ++j)
    if (col_mask[j])
      for (const auto& c : camera_masks[j].corners) cols.push_back(&c);

  Eigen::MatrixXd cost(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(cols.size()));
  for (std::size_t i = 0; i < rows.size(); ++i)
    for (std::size_t j = 0; j < cols.size(); ++j)
      cost(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) =
          corner_cost(*rows[i].corner, *cols[j], *rows[i].T, matches.L, params.cost);

  CornerMatchStats st;
  st.rows = rows.size();
  st.cols = cols.size();
  CorrespondenceSet out;
  auto selected = mutual_best(cost, params.tau);
  std::stable_sort(selected.begin(), selected.end(),
                   [&](const auto& a, const auto& b) { return cost(a.first, a.second) < cost(b.first, b.second); });
  for (const auto& [i, j] : selected) {
    ++st.accepted;
    const CornerPoint& v = *rows[static_cast<std::size_t>(i)].corner;
    if (!v.lidar_point) {
      ++st.without_lidar;
      continue;
    }
    const Vec2 pixel = cols[static_cast<std::size_t>(j)]->position;
    const bool dup = std::any_of(out.pairs.begin(), out.pairs.end(), [&](const Correspondence& c) {
      return c.lidar_point == *v.lidar_point || c.pixel == pixel;
    });
    if (dup) {
      ++st.duplicates;
      continue;
    }
    out.pairs.push_back({*v.lidar_point, pixel, cost(i, j)});
  }
  if (stats) *stats = st;
  return out;
}

inline void write_correspondence_csv_header(std::ostream& out) { out << "x,y,z,u,v,cost,pathway,view\n"; }

inline void write_correspondence_csv(std::ostream& out, const CorrespondenceSet& set) {
  const auto old = out.precision(17);
  for (const auto& c : set.pairs)
    out << c.lidar_point.x() << ',' << c.lidar_point.y() << ',' << c.lidar_point.z() << ',' << c.pixel.x() << ','
        << c.pixel.y() << ',' << c.cost << ',' << to_string(set.pathway) << ',' << set.view_index << '\n';
  out.precision(old);
}

}  // namespace envcalib
