#include <iostream>
#include <fstream>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "envcalib/app.hpp"

using namespace envcalib;

int main(int argc, char** argv) {
  CLI::App app{"LiDAR-camera extrinsic calibration from natural scenes"};
  app.require_subcommand(1);

  // calibrate
  auto* cal = app.add_subcommand("calibrate", "calibrate the scenes listed in a config file");
  std::string config;
  std::string strategy;
  bool single_scene = false, overlay = false;
  int jobs = 0;
  std::uint64_t seed = 0;
  std::string output;
  cal->add_option("config", config, "pipeline config (JSON)")->required()->check(CLI::ExistingFile);
  cal->add_option("--camera-strategy", strategy, "density | fov | initial-guess | manual");
  cal->add_flag("--single-scene", single_scene, "skip the joint multi-scene refinement");
  cal->add_option("--jobs", jobs, "scenes processed concurrently")->check(CLI::PositiveNumber);
  auto* seed_opt = cal->add_option("--seed", seed, "random seed");
  cal->add_flag("--overlay", overlay, "write LiDAR-on-image overlay PNGs");
  cal->add_option("-o,--output", output, "output directory");

  // synth
  auto* syn = app.add_subcommand("synth", "write a synthetic dataset");
  SynthOptions so;
  std::string synth_out;
  double truth_rot = so.trial.truth_rot_deg, truth_trans = so.trial.truth_trans_m;
  syn->add_option("out", synth_out, "output directory")->required();
  syn->add_option("--spec", so.specs, "scene spec files (JSON); default: random scenes");
  syn->add_option("--scenes", so.trial.scenes, "number of random scenes")->check(CLI::PositiveNumber);
  syn->add_option("--seed", so.seed, "random seed");
  syn->add_option("--pixel-sigma", so.trial.scene.noise.pixel_sigma, "camera vertex noise (px)");
  syn->add_option("--outlier-rate", so.trial.scene.noise.outlier_rate, "fraction of displaced vertices");
  syn->add_option("--point-sigma", so.trial.scene.noise.point_sigma, "LiDAR point noise (m)");
  syn->add_option("--dropout-rate", so.trial.scene.noise.dropout_rate, "fraction of dropped LiDAR returns");
  syn->add_option("--truth-rot-deg", truth_rot, "true extrinsic deviation from the reference (deg)");
  syn->add_option("--truth-trans-m", truth_trans, "true extrinsic deviation from the reference (m)");

  // experiment
  auto* exp = app.add_subcommand("experiment", "seeded synthetic sweeps, one CSV row per cell");
  ExperimentOptions eo;
  std::string csv_path;
  exp->add_option("--axis", eo.axes, "noise | density | cameras | consistency | scenes (repeatable)");
  exp->add_option("--trials", eo.trials, "trials per cell")->check(CLI::PositiveNumber);
  exp->add_option("--scenes", eo.trial.scenes, "scenes per trial")->check(CLI::PositiveNumber);
  exp->add_option("--seed", eo.seed, "base seed");
  exp->add_option("--pixel-sigma", eo.trial.scene.noise.pixel_sigma, "camera vertex noise (px)");
  exp->add_option("--outlier-rate", eo.trial.scene.noise.outlier_rate, "fraction of displaced vertices");
  exp->add_option("-o,--output", csv_path, "CSV file (default: stdout)");

  // eval
  auto* ev = app.add_subcommand("eval", "errors of a report against a ground-truth pose file");
  std::string report, truth;
  ev->add_option("report", report, "calibration report")->required()->check(CLI::ExistingFile);
  ev->add_option("ground_truth", truth, "pose file (R/t or Tr lines)")->required()->check(CLI::ExistingFile);

  CLI11_PARSE(app, argc, argv);

  try {
    if (*cal) {
      PipelineConfig cfg = load_config(config);
      CalibrateOverrides o;
      if (!strategy.empty()) o.camera_strategy = strategy;
      if (single_scene) o.single_scene = true;
      if (jobs > 0) o.jobs = jobs;
      if (*seed_opt) o.seed = seed;
      if (overlay) o.overlay = true;
      if (!output.empty()) o.output = output;
      apply_overrides(cfg, o);
      return calibrate_command(cfg, std::cout);
    }
    if (*syn) {
      so.out = synth_out;
      so.trial.truth_rot_deg = truth_rot;
      so.trial.truth_trans_m = truth_trans;
      synth_command(so, std::cout);
      return kExitOk;
    }
    if (*exp) {
      if (csv_path.empty()) {
        experiment_command(eo, std::cout);
      } else {
        std::ofstream out(csv_path);
        if (!out) throw Error(ErrorCode::IoError, "cannot write " + csv_path);
        experiment_command(eo, out);
      }
      return kExitOk;
    }
    if (*ev) return eval_command(report, truth, std::cout);
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitTotalFailure;
  }
  return kExitOk;
}
