#pragma once

// Gaussian depth-normalized reprojection loss, hypothesis-and-test solution
// over pooled views, per-scene subset selection and joint multi-scene
// refinement.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <random>
#include <set>
#include <vector>

#include "envcalib/dpcm.hpp"
#include "envcalib/error.hpp"
#include "envcalib/geometry.hpp"
#include "envcalib/pnp.hpp"

namespace envcalib {

struct RobustLossParams {
  double H = 1.0;                // image height (px)
  double mean_norm_depth = 0.0;  // d-bar'
  double mean_depth = 1.0;       // d-bar_g (m)
};

/// G = eps (e - K) / (H + eps), K = exp(-(d' - d-bar')^2 / (2 d-bar_g^2)).
/// An infinite eps gives the saturation value e - K.
inline double depth_kernel(double d_norm, const RobustLossParams& p) {
  const double diff = d_norm - p.mean_norm_depth;
  return std::exp(-(diff * diff) / (2.0 * p.mean_depth * p.mean_depth));
}

inline double g_loss(double eps, double d_norm, const RobustLossParams& p) {
  const double a = std::numbers::e - depth_kernel(d_norm, p);
  if (std::isinf(eps)) return a;
  return eps * a / (p.H + eps);
}

struct OptimizerParams {
  int hypotheses = 200;
  int subset_size = 6;
  double inlier_px = 3.0;
  int max_iterations = 100;
  double step_tolerance = 1e-10;
  double relative_loss_tolerance = 1e-12;
  double image_height = 0.0;  // 0 = use the intrinsics' height
  int max_refine_rounds = 3;
  PnpParams pnp;
};

/// Per-correspondence loss terms of one group (scene) under a pose.
struct GroupEvaluation {
  std::vector<double> eps;     // reprojection error, +inf behind the camera
  std::vector<double> weight;  // e - K per correspondence (unused behind the camera)
  double loss = 0.0;
};

inline GroupEvaluation evaluate_group(const std::vector<PointPixel>& pts, const Pose& T, const Intrinsics& K,
                                      double H) {
  GroupEvaluation ev;
  const std::size_t n = pts.size();
  ev.eps.assign(n, std::numeric_limits<double>::infinity());
  ev.weight.assign(n, std::numbers::e - 1.0);
  std::vector<double> z(n, 0.0);
  double zmin = std::numeric_limits<double>::infinity(), zmax = -zmin, zsum = 0.0;
  std::size_t front = 0;
  for (std::size_t j = 0; j < n; ++j) {
    const Vec3 pc = T * pts[j].lidar_point;
    z[j] = pc.z();
    if (!(pc.z() > 0.0)) continue;
    ev.eps[j] = (project_pinhole(pc, K) - pts[j].pixel).norm();
    zmin = std::min(zmin, pc.z());
    zmax = std::max(zmax, pc.z());
    zsum += pc.z();
    ++front;
  }
  RobustLossParams lp;
  lp.H = H;
  std::vector<double> dn(n, 0.0);
  if (front > 0) {
    lp.mean_depth = zsum / static_cast<double>(front);
    double sum = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      if (!std::isfinite(ev.eps[j])) continue;
      dn[j] = zmax > zmin ? (z[j] - zmin) / (zmax - zmin) : 0.0;
      sum += dn[j];
    }
    lp.mean_norm_depth = sum / static_cast<double>(front);
  }
  for (std::size_t j = 0; j < n; ++j) {
    ev.weight[j] = std::numbers::e - depth_kernel(dn[j], lp);
    ev.loss += g_loss(ev.eps[j], dn[j], lp);
  }
  return ev;
}

struct RefineResult {
  Pose pose;
  double loss = 0.0;
  int iterations = 0;
  bool converged = false;
};

/// Minimizes sum over groups of sum of G(eps) by iteratively reweighted,
/// damped Gauss-Newton on a left-perturbation 6-vector. Steps are accepted
/// only if the true loss decreases.
inline RefineResult refine_g_loss(const std::vector<std::vector<PointPixel>>& groups, const Pose& init,
                                  const Intrinsics& K, const OptimizerParams& params) {
  const double H = params.image_height > 0.0 ? params.image_height : static_cast<double>(K.height);
  auto total_loss = [&](const Pose& T, std::vector<GroupEvaluation>* evs) {
    double s = 0.0;
    for (const auto& g : groups) {
      GroupEvaluation ev = evaluate_group(g, T, K, H);
      s += ev.loss;
      if (evs) evs->push_back(std::move(ev));
    }
    return s;
  };

  RefineResult res;
  res.pose = init;
  std::vector<GroupEvaluation> evs;
  res.loss = total_loss(init, &evs);
  double mu = 1e-4;
  for (res.iterations = 0; res.iterations < params.max_iterations; ++res.iterations) {
    if (res.loss == 0.0) {
      res.converged = true;
      break;
    }
    Eigen::Matrix<double, 6, 6> A = Eigen::Matrix<double, 6, 6>::Zero();
    Vec6 g = Vec6::Zero();
    for (std::size_t gi = 0; gi < groups.size(); ++gi) {
      for (std::size_t j = 0; j < groups[gi].size(); ++j) {
        const double eps = evs[gi].eps[j];
        if (!std::isfinite(eps)) continue;
        const double e = std::max(eps, 1e-8);
        const double w = evs[gi].weight[j] * H / ((H + eps) * (H + eps) * e);
        const PointPixel& c = groups[gi][j];
        const Vec2 r = project_pinhole(res.pose * c.lidar_point, K) - c.pixel;
        const auto J = projection_jacobian(res.pose, c.lidar_point, K);
        A.noalias() += w * J.transpose() * J;
        g.noalias() += w * J.transpose() * r;
      }
    }
    bool accepted = false;
    bool stop = false;
    while (!accepted) {
      Eigen::Matrix<double, 6, 6> Ad = A;
      Ad.diagonal() += mu * A.diagonal().cwiseMax(1e-300);
      const Vec6 step = Ad.ldlt().solve(-g);
      if (!step.allFinite()) {
        stop = true;
        break;
      }
      const Pose cand = res.pose.left_perturbed(step);
      std::vector<GroupEvaluation> cand_evs;
      const double cand_loss = total_loss(cand, &cand_evs);
      if (cand_loss < res.loss) {
        const double rel = (res.loss - cand_loss) / res.loss;
        res.pose = cand;
        res.loss = cand_loss;
        evs = std::move(cand_evs);
        mu = std::max(mu / 3.0, 1e-12);
        accepted = true;
        if (step.norm() < params.step_tolerance || rel < params.relative_loss_tolerance) stop = true;
      } else {
        mu *= 4.0;
        if (mu > 1e12) {
          stop = true;  // damping saturated: no descent direction left
          break;
        }
      }
    }
    if (stop) {
      res.converged = true;
      ++res.iterations;
      break;
    }
  }
  return res;
}

struct Hypothesis {
  Pose pose;
  std::vector<std::size_t> subset;   // sampled correspondences the pose was solved from
  std::vector<std::size_t> support;  // correspondences with eps < inlier_px
  double score = 0.0;                // sum of G over all correspondences of the scene
};

struct SceneBundle {
  int scene_index = 0;
  std::vector<CorrespondenceSet> sets;
  std::vector<PointPixel> pooled;      // all pairs across views and pathways
  std::vector<Hypothesis> hypotheses;  // ranked, best first; the first one is refined
  std::vector<std::size_t> selected;   // S_t, indices into pooled
  int s_t = 0;

  void pool() {
    pooled.clear();
    for (const auto& s : sets)
      for (const auto& c : s.pairs) pooled.push_back({c.lidar_point, c.pixel});
  }
  std::size_t q() const { return pooled.size(); }
};

namespace detail {

inline std::vector<std::size_t> inliers(const GroupEvaluation& ev, double inlier_px) {
  std::vector<std::size_t> out;
  for (std::size_t j = 0; j < ev.eps.size(); ++j)
    if (ev.eps[j] < inlier_px) out.push_back(j);
  return out;
}

inline std::vector<PointPixel> gather(const std::vector<PointPixel>& pts, const std::vector<std::size_t>& idx) {
  std::vector<PointPixel> out;
  out.reserve(idx.size());
  for (auto i : idx) out.push_back(pts[i]);
  return out;
}

}  // namespace detail

struct MultiViewResult {
  Hypothesis best;
  std::vector<Hypothesis> ranked;
  bool refine_converged = false;
};

/// Random subsets of the pooled correspondences are solved by PnP and scored
/// by the total G-loss of all correspondences; the best pose is refined on its
/// inliers with the G-loss. Fills scene.hypotheses.
inline MultiViewResult multi_view_solve(SceneBundle& scene, const Intrinsics& K, const OptimizerParams& params,
                                        std::mt19937_64& rng) {
  if (scene.pooled.empty()) scene.pool();
  const auto& pts = scene.pooled;
  const std::size_t n = pts.size();
  if (n < 4)
    throw Error(ErrorCode::InsufficientCorrespondences,
                "scene " + std::to_string(scene.scene_index) + ": " + std::to_string(n) + " correspondences");
  const double H = params.image_height > 0.0 ? params.image_height : static_cast<double>(K.height);
  const std::size_t m = std::min<std::size_t>(static_cast<std::size_t>(std::max(4, params.subset_size)), n);

  std::vector<Hypothesis> hyps;
  std::vector<std::size_t> perm(n);
  const int draws = n == m ? 1 : params.hypotheses;
  for (int k = 0; k < draws; ++k) {
    for (std::size_t i = 0; i < n; ++i) perm[i] = i;
    for (std::size_t i = 0; i < m; ++i) {
      std::uniform_int_distribution<std::size_t> pick(i, n - 1);
      std::swap(perm[i], perm[pick(rng)]);
    }
    Hypothesis h;
    h.subset.assign(perm.begin(), perm.begin() + static_cast<long>(m));
    std::sort(h.subset.begin(), h.subset.end());
    try {
      h.pose = solve_pnp(detail::gather(pts, h.subset), K, params.pnp).pose;
    } catch (const Error&) {
      continue;
    }
    const GroupEvaluation ev = evaluate_group(pts, h.pose, K, H);
    h.score = ev.loss;
    h.support = detail::inliers(ev, params.inlier_px);
    hyps.push_back(std::move(h));
  }
  if (hyps.empty()) {
    Hypothesis h;
    for (std::size_t i = 0; i < n; ++i) h.subset.push_back(i);
    try {
      h.pose = solve_pnp(pts, K, params.pnp).pose;
    } catch (const Error& e) {
      throw Error(ErrorCode::InsufficientCorrespondences,
                  "scene " + std::to_string(scene.scene_index) + ": no solvable subset (" + e.what() + ")");
    }
    const GroupEvaluation ev = evaluate_group(pts, h.pose, K, H);
    h.score = ev.loss;
    h.support = detail::inliers(ev, params.inlier_px);
    hyps.push_back(std::move(h));
  }
  std::stable_sort(hyps.begin(), hyps.end(), [](const Hypothesis& a, const Hypothesis& b) { return a.score < b.score; });

  MultiViewResult res;
  Hypothesis best = hyps.front();
  for (int round = 0; round < params.max_refine_rounds; ++round) {
    const auto& fit_idx = best.support.size() >= 4 ? best.support : best.subset;
    const RefineResult r = refine_g_loss({detail::gather(pts, fit_idx)}, best.pose, K, params);
    res.refine_converged = r.converged;
    best.pose = r.pose;
    const GroupEvaluation ev = evaluate_group(pts, best.pose, K, H);
    best.score = ev.loss;
    auto support = detail::inliers(ev, params.inlier_px);
    const bool same = support == best.support;
    best.support = std::move(support);
    if (same) break;
  }
  hyps.front() = best;
  res.best = best;
  res.ranked = hyps;
  scene.hypotheses = std::move(hyps);
  return res;
}

/// s_t = min(floor(Q_max q_t / sum q), s_max), at least 1 when q_t > 0;
/// S_t = union of the supports of the top s_t hypotheses.
inline void select_scene_subsets(std::vector<SceneBundle>& scenes, int Q_max, int s_max) {
  double total = 0.0;
  for (const auto& s : scenes) total += static_cast<double>(s.q());
  for (auto& s : scenes) {
    s.selected.clear();
    s.s_t = 0;
    if (s.q() == 0 || total <= 0.0) continue;
    const double share = std::floor(static_cast<double>(Q_max) * static_cast<double>(s.q()) / total);
    s.s_t = std::max(1, static_cast<int>(std::min(share, static_cast<double>(s_max))));
    std::set<std::size_t> uni;
    const int k = std::min<int>(s.s_t, static_cast<int>(s.hypotheses.size()));
    for (int i = 0; i < k; ++i) uni.insert(s.hypotheses[static_cast<std::size_t>(i)].support.begin(),
                                           s.hypotheses[static_cast<std::size_t>(i)].support.end());
    s.selected.assign(uni.begin(), uni.end());
  }
}

struct MultiSceneResult {
  Pose pose;
  double loss = 0.0;
  int iterations = 0;
  bool converged = false;
};

/// Joint refinement of sum over scenes of sum over S_t of G(eps).
inline MultiSceneResult multi_scene_solve(const std::vector<SceneBundle>& scenes, const Intrinsics& K, const Pose& init,
                                          const OptimizerParams& params) {
  std::vector<std::vector<PointPixel>> groups;
  std::size_t total = 0;
  for (const auto& s : scenes) {
    if (s.selected.empty()) continue;
    groups.push_back(detail::gather(s.pooled, s.selected));
    total += s.selected.size();
  }
  if (total < 4) throw Error(ErrorCode::InsufficientCorrespondences, "fewer than 4 selected correspondences");
  const RefineResult r = refine_g_loss(groups, init, K, params);
  MultiSceneResult out;
  out.converged = r.converged;
  out.pose = r.converged ? r.pose : init;
  out.loss = r.loss;
  out.iterations = r.iterations;
  return out;
}

}  // namespace envcalib
