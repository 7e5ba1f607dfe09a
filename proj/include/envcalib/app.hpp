#pragma once

// The command-line workflows: calibrate a dataset, write a synthetic dataset,
// run experiment sweeps, evaluate a report against ground truth.

#include <filesystem>
#include <fstream>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "envcalib/dataset.hpp"
#include "envcalib/experiment.hpp"
#include "envcalib/pipeline.hpp"
#include "envcalib/report.hpp"
#include "envcalib/synthetic.hpp"

namespace envcalib {

enum ExitCode { kExitOk = 0, kExitTotalFailure = 1, kExitPartial = 2 };

struct CalibrateOverrides {
  std::optional<std::string> camera_strategy;
  std::optional<bool> single_scene;
  std::optional<int> jobs;
  std::optional<std::uint64_t> seed;
  std::optional<bool> overlay;
  std::optional<std::filesystem::path> output;
};

inline void apply_overrides(PipelineConfig& cfg, const CalibrateOverrides& o) {
  if (o.camera_strategy) cfg.params.strategy = camera_strategy_from_string(*o.camera_strategy);
  if (o.single_scene) cfg.params.single_scene = *o.single_scene;
  if (o.jobs) cfg.params.jobs = *o.jobs;
  if (o.seed) cfg.params.seed = *o.seed;
  if (o.overlay) cfg.overlay = *o.overlay;
  if (o.output) cfg.output = *o.output;
}

/// Writes <output>/report.txt, one correspondence CSV per calibrated scene and
/// optional overlays. Returns the process exit code.
inline int calibrate_command(const PipelineConfig& cfg, std::ostream& log) {
  const std::vector<SceneData> scenes = load_scenes(cfg);
  std::filesystem::create_directories(cfg.output);
  CalibrationResult r;
  try {
    r = run_calibration(scenes, cfg.intrinsics, cfg.params, cfg.initial_guess);
  } catch (const Error& e) {
    if (e.code() != ErrorCode::AllScenesFailed) throw;
    log << e.what() << '\n';
    std::ofstream out(cfg.output / "report.txt");
    out << "# envcalib calibration report (camera-from-LiDAR)\nstatus: failed\n";
    for (std::size_t i = 0; i < scenes.size(); ++i) {
      out << "scene " << i << ' ' << scenes[i].name << ": skipped ";
      out << (scenes[i].error.empty() ? std::string("no calibration") : scenes[i].error) << '\n';
    }
    return kExitTotalFailure;
  }
  save_report(r, cfg.ground_truth, cfg.output / "report.txt");
  for (const auto& s : r.scenes) {
    if (!s.ok) {
      log << "scene " << s.index << ' ' << s.name << " skipped: " << s.error << '\n';
      continue;
    }
    std::ofstream csv(cfg.output / ("correspondences_" + s.name + ".csv"));
    write_correspondence_csv_header(csv);
    for (const auto& set : s.bundle.sets) write_correspondence_csv(csv, set);
    if (cfg.overlay) {
      const SceneData& d = scenes[static_cast<std::size_t>(s.index)];
      write_overlay(d.image, d.cloud, r.pose, cfg.intrinsics, cfg.output / ("overlay_" + s.name + ".png"));
    }
  }
  log << "calibrated " << r.succeeded() << " of " << r.scenes.size() << " scenes; report: "
      << (cfg.output / "report.txt").string() << '\n';
  if (cfg.ground_truth) {
    const PoseErrors e = error_metrics(r.pose, *cfg.ground_truth);
    log << "e_r " << format_double(e.rotation_deg) << " deg, e_t " << format_double(e.translation_m) << " m\n";
  }
  return r.succeeded() == r.scenes.size() ? kExitOk : kExitPartial;
}

struct SynthOptions {
  std::filesystem::path out;
  std::vector<std::filesystem::path> specs;  // scene spec files; empty = random scenes
  TrialSpec trial;
  std::uint64_t seed = 0;
};

/// Random scenes follow the trial generator (true extrinsic and initial guess
/// drawn from the seed); spec files are used as given and share the first
/// one's true extrinsic.
inline std::filesystem::path synth_command(const SynthOptions& o, std::ostream& log) {
  std::vector<SceneSpec> specs;
  std::optional<Pose> init;
  if (o.specs.empty()) {
    const TrialSpecs t = make_trial_specs(o.trial, o.seed);
    specs = t.scenes;
    init = t.init;
  } else {
    for (const auto& p : o.specs) {
      std::ifstream in(p);
      if (!in) throw Error(ErrorCode::IoError, "cannot open " + p.string());
      try {
        specs.push_back(scene_spec_from_json(nlohmann::json::parse(in)));
      } catch (const nlohmann::json::parse_error& e) {
        throw Error(ErrorCode::FormatError, p.string() + ": " + e.what());
      }
    }
    for (auto& s : specs) s.true_extrinsic = specs.front().true_extrinsic;
  }
  std::vector<SyntheticScene> scenes;
  for (const auto& s : specs) scenes.push_back(generate(s));
  const auto cfg = write_synthetic_dataset(specs, scenes, o.out, init);
  log << "wrote " << scenes.size() << " scenes; config: " << cfg.string() << '\n';
  return cfg;
}

struct ExperimentOptions {
  std::vector<std::string> axes;  // noise, density, cameras, consistency, scenes
  TrialSpec trial;
  PipelineParams params;
  int trials = 10;
  std::uint64_t seed = 0;
};

inline std::vector<SweepCell> sweep_cells(const ExperimentOptions& o) {
  std::vector<SweepCell> cells;
  auto cell = [&](const std::string& axis, const std::string& value) {
    cells.push_back({axis, value, o.trial, o.params});
    return &cells.back();
  };
  if (o.axes.empty()) cell("baseline", "-");
  for (const auto& axis : o.axes) {
    if (axis == "noise") {
      for (double s : {0.0, 0.5, 1.0, 2.0}) cell(axis, format_double(s))->trial.scene.noise.pixel_sigma = s;
    } else if (axis == "density") {
      for (int k = 1; k <= 6; ++k) {
        SweepCell* c = cell(axis, std::to_string(k) + "/6");
        c->trial.density_parts = 6;
        c->trial.density_keep = k;
      }
    } else if (axis == "cameras") {
      for (int n : {1, 2, 4, 7}) {
        SweepCell* c = cell(axis, std::to_string(n));
        c->params.strategy = CameraStrategy::Manual;
        c->params.manual_intensity = c->params.manual_depth = n;
        c->params.density.n_max = std::max(c->params.density.n_max, n);
      }
    } else if (axis == "consistency") {
      for (int k = 0; k < 4; ++k) {
        const bool st = k == 0 || k == 1, tx = k == 0 || k == 2;
        SweepCell* c = cell(axis, std::string(st ? "structural" : "-") + "+" + (tx ? "textural" : "-"));
        c->params.dpcm.cost.structural = st;
        c->params.dpcm.cost.textural = tx;
      }
    } else if (axis == "scenes") {
      for (int n : {1, 5, 20}) cell(axis, std::to_string(n))->trial.scenes = n;
    } else {
      throw Error(ErrorCode::InvalidArgument, "unknown sweep axis '" + axis + "'");
    }
  }
  return cells;
}

inline void experiment_command(const ExperimentOptions& o, std::ostream& csv) {
  write_sweep_csv(csv, run_sweep(sweep_cells(o), o.trials, o.seed));
}

/// Prints e_r / e_t of the report's pose against the ground truth. Fails
/// (exit 1) if the report states errors that do not match the recomputation.
inline int eval_command(const std::filesystem::path& report, const std::filesystem::path& truth, std::ostream& log) {
  const ParsedReport r = load_report(report);
  const PoseErrors e = error_metrics(r.pose, load_pose(truth));
  log << "e_r_deg: " << format_double(e.rotation_deg) << "\ne_t_m: " << format_double(e.translation_m) << '\n';
  if (r.errors && (format_double(r.errors->rotation_deg) != format_double(e.rotation_deg) ||
                   format_double(r.errors->translation_m) != format_double(e.translation_m))) {
    log << "mismatch: report states e_r " << format_double(r.errors->rotation_deg) << " e_t "
        << format_double(r.errors->translation_m) << '\n';
    return kExitTotalFailure;
  }
  return kExitOk;
}

}  // namespace envcalib
