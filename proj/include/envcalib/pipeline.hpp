#pragma once

// Scene-level calibration: virtual-camera planning, dual-path matching over
// all views, per-scene hypothesis solving and the joint multi-scene
// refinement.

#include <algorithm>
#include <atomic>
#include <cstdint>
#include <deque>
#include <optional>
#include <random>
#include <string>
#include <thread>
#include <vector>

#include "envcalib/cloud_io.hpp"
#include "envcalib/discriminator.hpp"
#include "envcalib/dpcm.hpp"
#include "envcalib/error.hpp"
#include "envcalib/geometry.hpp"
#include "envcalib/optimizer.hpp"
#include "envcalib/projection.hpp"
#include "envcalib/views.hpp"

namespace envcalib {

struct SceneData {
  std::string name;
  PointCloud cloud;
  ImageF image;                  // camera intensity
  ImageF depth;                  // camera depth, any positive scale; may be empty
  std::vector<Mask> masks;       // camera masks (geometry only)
  std::vector<Mask> depth_masks; // optional masks of the depth image
  std::string error;             // set when loading failed; the scene is skipped with this reason
};

struct PipelineParams {
  CameraStrategy strategy = CameraStrategy::DensityBalance;
  DensityPlanParams density;
  double rho_fov = 1.0;
  double per_meter = 10.0;
  int manual_intensity = 1;
  int manual_depth = 1;
  ViewParams view;
  DpcmParams dpcm;
  OptimizerParams optimizer;
  int q_max = 2000;
  int s_max = 5;
  bool single_scene = false;
  std::uint64_t seed = 0;
  int jobs = 1;
};

struct PathwayStats {
  int view = 0;
  Pathway pathway = Pathway::Textural;
  std::size_t virtual_masks = 0;
  std::size_t camera_masks = 0;
  std::size_t mask_pairs = 0;
  std::size_t correspondences = 0;
  std::string note;
};

struct SceneResult {
  int index = 0;
  std::string name;
  bool ok = false;
  std::string error;  // "<code>: <message>" when !ok
  CameraPlan plan;
  std::vector<PathwayStats> pathways;
  SceneBundle bundle;
  Pose pose;          // best single-scene hypothesis after refinement
  std::size_t support = 0;
  std::vector<double> residuals;  // px, over the support, under the final pose
};

struct CalibrationResult {
  Pose pose;
  bool multi_scene = false;        // joint refinement ran
  bool multi_scene_converged = false;
  std::string multi_scene_note;    // why it was skipped or fell back
  int best_scene = -1;
  std::vector<SceneResult> scenes;
  std::size_t succeeded() const {
    return static_cast<std::size_t>(std::count_if(scenes.begin(), scenes.end(), [](const SceneResult& s) { return s.ok; }));
  }
};

namespace detail {

inline std::string describe(const Error& e) { return e.what(); }

inline std::uint64_t scene_seed(std::uint64_t seed, std::size_t index) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(index)};
  std::uint32_t out[2];
  seq.generate(out, out + 2);
  return (static_cast<std::uint64_t>(out[0]) << 32) | out[1];
}

inline CameraPlan plan_views(const PipelineParams& params, const CameraView& cam, const VirtualView& baseline,
                             const PointCloud& cloud, const Intrinsics& K, const Mat3& orientation,
                             const std::optional<Pose>& init) {
  switch (params.strategy) {
    case CameraStrategy::DensityBalance:
      return plan_cameras_density(feature_density_or_zero(cam.intensity_masks), feature_density_or_zero(cam.depth_masks),
                                  feature_density_or_zero(baseline.intensity_masks),
                                  feature_density_or_zero(baseline.depth_masks), orientation, params.density);
    case CameraStrategy::FovRatio:
      return plan_cameras_fov(estimate_fov(cloud), K, params.rho_fov, orientation);
    case CameraStrategy::InitialGuess:
      return plan_cameras_initial_guess(init ? init->center() : Vec3::Zero(), params.per_meter, orientation);
    case CameraStrategy::Manual:
      return plan_cameras_manual(params.manual_intensity, params.manual_depth, orientation, params.density);
  }
  throw Error(ErrorCode::InvalidArgument, "unknown camera strategy");
}

inline void run_pathway(const std::vector<Mask>& virt, const std::vector<Mask>& cam, int view, Pathway pathway,
                        const DpcmParams& params, SceneBundle& bundle, std::vector<PathwayStats>& stats) {
  PathwayStats st;
  st.view = view;
  st.pathway = pathway;
  st.virtual_masks = virt.size();
  st.camera_masks = cam.size();
  try {
    if (virt.empty() || cam.empty()) throw Error(ErrorCode::NoMatches, "no masks on one side");
    const MaskMatchSet mm = match_masks(virt, cam, params.mask_match);
    st.mask_pairs = mm.pairs.size();
    CorrespondenceSet set = match_corners(virt, cam, mm, params);
    set.pathway = pathway;
    set.view_index = view;
    st.correspondences = set.size();
    bundle.sets.push_back(std::move(set));
  } catch (const Error& e) {
    if (e.code() != ErrorCode::NoMatches) throw;
    st.note = e.what();
  }
  stats.push_back(st);
}

}  // namespace detail

/// One scene: camera and virtual mask sets, correspondences over every planned
/// view on both pathways, and the hypothesis-and-test solution.
inline SceneResult process_scene(const SceneData& scene, std::size_t index, const Intrinsics& K,
                                 const PipelineParams& params, const std::optional<Pose>& init) {
  SceneResult res;
  res.index = static_cast<int>(index);
  res.name = scene.name;
  res.bundle.scene_index = static_cast<int>(index);
  if (!scene.error.empty()) {
    res.error = scene.error;
    return res;
  }
  try {
    if (scene.cloud.empty()) throw Error(ErrorCode::InvalidArgument, "empty point cloud");
    if (scene.image.width() != K.width || scene.image.height() != K.height)
      throw Error(ErrorCode::InvalidArgument, "camera image size does not match the intrinsics");
    PointCloud cloud = scene.cloud;
    normalize_intensity(cloud);
    ImageF image = scene.image;
    normalize_image(image);

    const CameraView cam = build_camera_view(image, scene.depth, scene.masks, scene.depth_masks, params.view);
    const Mat3 orientation = init ? init->rotation() : lidar_to_camera_axes();

    std::deque<std::pair<Pose, VirtualView>> cache;  // stable references
    auto view_at = [&](const Pose& p) -> const VirtualView& {
      for (const auto& [q, v] : cache)
        if (q.rotation() == p.rotation() && q.translation() == p.translation()) return v;
      cache.emplace_back(p, build_virtual_view(cloud, K, p, params.view));
      return cache.back().second;
    };
    const VirtualView& baseline = view_at(camera_at(orientation, Vec3::Zero()));
    res.plan = detail::plan_views(params, cam, baseline, cloud, K, orientation, init);

    for (std::size_t k = 0; k < res.plan.intensity_poses.size(); ++k) {
      const VirtualView& v = view_at(res.plan.intensity_poses[k]);
      detail::run_pathway(v.intensity_masks, cam.intensity_masks, static_cast<int>(k), Pathway::Textural, params.dpcm,
                          res.bundle, res.pathways);
    }
    for (std::size_t k = 0; k < res.plan.depth_poses.size(); ++k) {
      const VirtualView& v = view_at(res.plan.depth_poses[k]);
      detail::run_pathway(v.depth_masks, cam.depth_masks, static_cast<int>(k), Pathway::Spatial, params.dpcm,
                          res.bundle, res.pathways);
    }
    res.bundle.pool();

    std::mt19937_64 rng(detail::scene_seed(params.seed, index));
    const MultiViewResult mv = multi_view_solve(res.bundle, K, params.optimizer, rng);
    res.pose = mv.best.pose;
    res.support = mv.best.support.size();
    res.ok = true;
  } catch (const Error& e) {
    res.ok = false;
    res.error = detail::describe(e);
  }
  return res;
}

/// Reprojection errors of a scene's best-hypothesis support under `pose`.
inline std::vector<double> support_residuals(const SceneResult& s, const Pose& pose, const Intrinsics& K) {
  std::vector<double> out;
  if (!s.ok || s.bundle.hypotheses.empty()) return out;
  for (auto i : s.bundle.hypotheses.front().support) {
    const Vec3 pc = pose * s.bundle.pooled[i].lidar_point;
    if (!(pc.z() > 0.0)) continue;
    out.push_back((project_pinhole(pc, K) - s.bundle.pooled[i].pixel).norm());
  }
  return out;
}

/// Full pipeline over all scenes. Scenes run concurrently up to params.jobs;
/// failures are isolated per scene and the merge is in scene order, so the
/// result does not depend on scheduling.
inline CalibrationResult run_calibration(const std::vector<SceneData>& scenes, const Intrinsics& K,
                                         const PipelineParams& params, const std::optional<Pose>& init = std::nullopt) {
  K.validate();
  if (scenes.empty()) throw Error(ErrorCode::InvalidArgument, "no scenes");
  CalibrationResult out;
  out.scenes.resize(scenes.size());
  const int jobs = std::clamp(params.jobs, 1, static_cast<int>(scenes.size()));
  if (jobs == 1) {
    for (std::size_t i = 0; i < scenes.size(); ++i) out.scenes[i] = process_scene(scenes[i], i, K, params, init);
  } else {
    std::atomic<std::size_t> next{0};
    std::vector<std::thread> pool;
    for (int j = 0; j < jobs; ++j)
      pool.emplace_back([&] {
        for (std::size_t i = next++; i < scenes.size(); i = next++)
          out.scenes[i] = process_scene(scenes[i], i, K, params, init);
      });
    for (auto& t : pool) t.join();
  }
  if (out.succeeded() == 0) {
    std::string why;
    for (const auto& s : out.scenes) why += "\n  " + s.name + ": " + s.error;
    throw Error(ErrorCode::AllScenesFailed, "every scene failed:" + why);
  }

  // Best single scene: largest support, then lowest loss.
  for (const auto& s : out.scenes) {
    if (!s.ok) continue;
    if (out.best_scene < 0) {
      out.best_scene = s.index;
      continue;
    }
    const SceneResult& b = out.scenes[static_cast<std::size_t>(out.best_scene)];
    if (s.support > b.support ||
        (s.support == b.support && s.bundle.hypotheses.front().score < b.bundle.hypotheses.front().score))
      out.best_scene = s.index;
  }
  out.pose = out.scenes[static_cast<std::size_t>(out.best_scene)].pose;

  if (params.single_scene) {
    out.multi_scene_note = "skipped: single-scene mode";
  } else if (out.succeeded() < 2) {
    out.multi_scene_note = "skipped: fewer than two calibrated scenes";
  } else {
    std::vector<SceneBundle> bundles;
    for (const auto& s : out.scenes)
      if (s.ok) bundles.push_back(s.bundle);
    select_scene_subsets(bundles, params.q_max, params.s_max);
    try {
      const MultiSceneResult ms = multi_scene_solve(bundles, K, out.pose, params.optimizer);
      out.multi_scene = true;
      out.multi_scene_converged = ms.converged;
      out.pose = ms.pose;
      if (!ms.converged) out.multi_scene_note = "not converged: kept the best single-scene pose";
    } catch (const Error& e) {
      out.multi_scene_note = "failed: " + detail::describe(e);
    }
  }
  for (auto& s : out.scenes) s.residuals = support_residuals(s, out.pose, K);
  return out;
}

}  // namespace envcalib
