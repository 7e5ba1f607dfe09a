#pragma once

// Seeded synthetic trials and parameter sweeps with median error summaries.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <ostream>
#include <random>
#include <string>
#include <vector>

#include "envcalib/error.hpp"
#include "envcalib/geometry.hpp"
#include "envcalib/pipeline.hpp"
#include "envcalib/synthetic.hpp"

namespace envcalib {

struct TrialSpec {
  RandomSceneParams scene;
  int scenes = 5;
  double truth_rot_deg = 3.0;    // true extrinsic = reference perturbed by up to this much
  double truth_trans_m = 0.2;
  double init_rot_deg = 2.0;     // initial guess = truth perturbed by up to this much
  double init_trans_m = 0.5;
  int density_parts = 1;         // keep the first density_keep/density_parts of every cloud
  int density_keep = 1;
};

struct TrialOutcome {
  bool ok = false;
  std::string error;
  PoseErrors joint;   // full pipeline over all scenes
  PoseErrors single;  // scene 0 alone (its best hypothesis)
  double seconds = 0.0;
  std::size_t correspondences = 0;
  std::size_t correct = 0;  // correspondences within 2 px under the true pose
};

inline constexpr PoseErrors kFailedErrors{std::numeric_limits<double>::infinity(),
                                          std::numeric_limits<double>::infinity()};

inline std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b) {
  std::uint64_t z = a + 0x9e3779b97f4a7c15ULL * (b + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

struct TrialSpecs {
  Pose truth;
  Pose init;
  std::vector<SceneSpec> scenes;
};

/// True extrinsic, initial guess and scene specs of one seeded trial.
inline TrialSpecs make_trial_specs(const TrialSpec& spec, std::uint64_t seed) {
  std::mt19937_64 rng(mix_seed(seed, 0xC0FFEE));
  TrialSpecs t;
  t.truth = perturb_pose(kitti_reference_extrinsic(), spec.truth_rot_deg, spec.truth_trans_m, rng);
  t.init = perturb_pose(t.truth, spec.init_rot_deg, spec.init_trans_m, rng);
  RandomSceneParams rp = spec.scene;
  rp.true_extrinsic = t.truth;
  for (int i = 0; i < spec.scenes; ++i)
    t.scenes.push_back(random_scene_spec(rp, mix_seed(seed, static_cast<std::uint64_t>(i) + 1)));
  return t;
}

struct TrialData {
  Pose truth;
  Pose init;
  std::vector<SceneData> scenes;
};

inline TrialData make_trial(const TrialSpec& spec, std::uint64_t seed) {
  const TrialSpecs specs = make_trial_specs(spec, seed);
  TrialData d;
  d.truth = specs.truth;
  d.init = specs.init;
  for (std::size_t i = 0; i < specs.scenes.size(); ++i) {
    SyntheticScene g = generate(specs.scenes[i]);
    if (spec.density_parts > 1)
      g.cloud = density_split(g.cloud, spec.density_parts)[static_cast<std::size_t>(spec.density_keep - 1)];
    d.scenes.push_back({"scene" + std::to_string(i), std::move(g.cloud), std::move(g.image), std::move(g.depth),
                        std::move(g.masks), {}, {}});
  }
  return d;
}

inline TrialOutcome run_trial(const TrialData& data, const Intrinsics& K, const PipelineParams& params) {
  TrialOutcome out;
  const auto t0 = std::chrono::steady_clock::now();
  try {
    const CalibrationResult r = run_calibration(data.scenes, K, params, data.init);
    out.ok = true;
    out.joint = error_metrics(r.pose, data.truth);
    out.single = r.scenes.front().ok ? error_metrics(r.scenes.front().pose, data.truth) : kFailedErrors;
    for (const auto& s : r.scenes)
      for (const auto& c : s.bundle.pooled) {
        ++out.correspondences;
        const Vec3 pc = data.truth * c.lidar_point;
        if (pc.z() > 0.0 && (project_pinhole(pc, K) - c.pixel).norm() < 2.0) ++out.correct;
      }
  } catch (const Error& e) {
    out.ok = false;
    out.error = e.what();
    out.joint = out.single = kFailedErrors;
  }
  out.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return out;
}

inline TrialOutcome run_trial(const TrialSpec& spec, const PipelineParams& params, std::uint64_t seed) {
  return run_trial(make_trial(spec, seed), spec.scene.camera, params);
}

/// Median with the usual midpoint for even sizes; infinities sort last.
inline double median(std::vector<double> v) {
  if (v.empty()) return std::numeric_limits<double>::quiet_NaN();
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 == 1 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

struct SweepCell {
  std::string axis;
  std::string value;
  TrialSpec trial;
  PipelineParams params;
};

struct SweepRow {
  std::string axis;
  std::string value;
  double median_er = 0.0;
  double median_et = 0.0;
  int trials = 0;
  int failures = 0;
};

/// Runs `trials` seeded trials per cell; trial k of every cell uses seed
/// base_seed + k, so cells differ only in the swept parameter.
inline std::vector<SweepRow> run_sweep(const std::vector<SweepCell>& cells, int trials, std::uint64_t base_seed) {
  std::vector<SweepRow> rows;
  for (const auto& cell : cells) {
    SweepRow row{cell.axis, cell.value, 0.0, 0.0, trials, 0};
    std::vector<double> er, et;
    for (int k = 0; k < trials; ++k) {
      const TrialOutcome o = run_trial(cell.trial, cell.params, base_seed + static_cast<std::uint64_t>(k));
      if (!o.ok) ++row.failures;
      er.push_back(o.joint.rotation_deg);
      et.push_back(o.joint.translation_m);
    }
    row.median_er = median(er);
    row.median_et = median(et);
    rows.push_back(row);
  }
  return rows;
}

inline void write_sweep_csv(std::ostream& out, const std::vector<SweepRow>& rows) {
  const auto old = out.precision(17);
  out << "parameter,value,median_e_r_deg,median_e_t_m,trials,failures\n";
  for (const auto& r : rows)
    out << r.axis << ',' << r.value << ',' << r.median_er << ',' << r.median_et << ',' << r.trials << ',' << r.failures
        << '\n';
  out.precision(old);
}

}  // namespace envcalib
