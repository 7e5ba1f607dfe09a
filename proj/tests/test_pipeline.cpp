#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>

#include <gtest/gtest.h>

#include "envcalib/app.hpp"

using namespace envcalib;
namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

fs::path fresh_dir(const std::string& name) {
  const fs::path d = fs::temp_directory_path() / ("envcalib_test_" + name);
  fs::remove_all(d);
  fs::create_directories(d);
  return d;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

TrialSpec small_trial(int scenes) {
  TrialSpec t;
  t.scenes = scenes;
  return t;
}

fs::path write_dataset(const std::string& name, int scenes, std::uint64_t seed) {
  SynthOptions o;
  o.out = fresh_dir(name);
  o.trial = small_trial(scenes);
  o.seed = seed;
  std::ostringstream log;
  return synth_command(o, log);
}

}  // namespace

TEST(Pipeline, NoiselessCorrespondencesAreCorrect) {
  PipelineParams params;
  for (std::uint64_t seed = 0; seed < 3; ++seed) {
    const TrialOutcome o = run_trial(small_trial(2), params, seed);
    ASSERT_TRUE(o.ok) << o.error;
    ASSERT_GT(o.correspondences, 0u);
    EXPECT_GE(static_cast<double>(o.correct), 0.95 * static_cast<double>(o.correspondences)) << "seed " << seed;
  }
}

TEST(Pipeline, VirtualCornersTraceBackToTheirLidarPoints) {
  const TrialData d = make_trial(small_trial(1), 4);
  const Intrinsics K = TrialSpec{}.scene.camera;
  const VirtualView v = build_virtual_view(d.scenes[0].cloud, K, d.init, ViewParams{});
  std::size_t traced = 0;
  for (const auto* masks : {&v.intensity_masks, &v.depth_masks})
    for (const auto& m : *masks)
      for (const auto& c : m.corners) {
        if (!c.lidar_point) continue;
        ++traced;
        const Vec3 pc = v.pose * *c.lidar_point;
        ASSERT_GT(pc.z(), 0.0);
        EXPECT_LT((project_pinhole(pc, K) - c.position).norm(), 1e-9);
      }
  EXPECT_GT(traced, 10u);
}

TEST(Pipeline, ReportIsReproducibleAndIndependentOfJobs) {
  const TrialData d = make_trial(small_trial(3), 9);
  const Intrinsics K = TrialSpec{}.scene.camera;
  PipelineParams p;
  auto report = [&](int jobs) {
    p.jobs = jobs;
    std::ostringstream out;
    write_report(out, run_calibration(d.scenes, K, p, d.init), d.truth);
    return out.str();
  };
  const std::string a = report(1);
  EXPECT_EQ(a, report(1));
  EXPECT_EQ(a, report(3));
  std::istringstream in(a);
  const ParsedReport parsed = parse_report(in);
  ASSERT_TRUE(parsed.errors);
  const PoseErrors e = error_metrics(parsed.pose, d.truth);
  EXPECT_EQ(format_double(e.rotation_deg), format_double(parsed.errors->rotation_deg));
  EXPECT_EQ(format_double(e.translation_m), format_double(parsed.errors->translation_m));
}

TEST(Pipeline, SingleSceneModeSkipsJointRefinement) {
  const TrialData d = make_trial(small_trial(2), 2);
  PipelineParams p;
  p.single_scene = true;
  const CalibrationResult r = run_calibration(d.scenes, TrialSpec{}.scene.camera, p, d.init);
  EXPECT_FALSE(r.multi_scene);
  EXPECT_EQ(r.multi_scene_note, "skipped: single-scene mode");
  ASSERT_GE(r.best_scene, 0);
  EXPECT_EQ(r.pose.matrix(), r.scenes[static_cast<std::size_t>(r.best_scene)].pose.matrix());
}

TEST(Cli, CalibrateSyntheticDatasetAndEvaluate) {
  const fs::path cfg_path = write_dataset("e2e", 3, 11);
  const PipelineConfig cfg = load_config(cfg_path);
  std::ostringstream log;
  ASSERT_EQ(calibrate_command(cfg, log), kExitOk) << log.str();
  const fs::path report = cfg.output / "report.txt";
  const ParsedReport r = load_report(report);
  ASSERT_TRUE(r.errors);
  EXPECT_LT(r.errors->rotation_deg, 0.1);
  EXPECT_LT(r.errors->translation_m, 0.01);
  for (int i = 0; i < 3; ++i) EXPECT_TRUE(fs::exists(cfg.output / ("correspondences_scene" + std::to_string(i) + ".csv")));
  std::ostringstream eval_log;
  EXPECT_EQ(eval_command(report, cfg_path.parent_path() / "ground_truth.txt", eval_log), kExitOk) << eval_log.str();

  // A tampered error line is caught.
  std::string text = slurp(report);
  const auto at = text.find("e_r_deg: ");
  ASSERT_NE(at, std::string::npos);
  text = text.substr(0, at) + "e_r_deg: 12.5\n" + text.substr(text.find('\n', at) + 1);
  std::ofstream(report) << text;
  EXPECT_EQ(eval_command(report, cfg_path.parent_path() / "ground_truth.txt", eval_log), kExitTotalFailure);
}

TEST(Cli, MissingMaskFileSkipsOnlyThatScene) {
  const fs::path cfg_path = write_dataset("fault", 5, 3);
  fs::remove(cfg_path.parent_path() / "scene2" / "masks.jsonl");
  const PipelineConfig cfg = load_config(cfg_path);
  std::ostringstream log;
  EXPECT_EQ(calibrate_command(cfg, log), kExitPartial) << log.str();
  const std::string report = slurp(cfg.output / "report.txt");
  EXPECT_NE(report.find("scene 2 scene2: skipped FormatError"), std::string::npos) << report;
  EXPECT_NE(report.find("calibrated: 4"), std::string::npos) << report;
  EXPECT_NE(report.find("multi_scene: joint"), std::string::npos) << report;
  const ParsedReport r = load_report(cfg.output / "report.txt");
  ASSERT_TRUE(r.errors);
  EXPECT_LT(r.errors->rotation_deg, 0.1);
}

TEST(Cli, EveryScenefailingExitsWithOne) {
  const fs::path cfg_path = write_dataset("allfail", 2, 5);
  for (int i = 0; i < 2; ++i) fs::remove(cfg_path.parent_path() / ("scene" + std::to_string(i)) / "cloud.bin");
  const PipelineConfig cfg = load_config(cfg_path);
  std::ostringstream log;
  EXPECT_EQ(calibrate_command(cfg, log), kExitTotalFailure);
  const std::string report = slurp(cfg.output / "report.txt");
  EXPECT_NE(report.find("status: failed"), std::string::npos);
  EXPECT_NE(report.find("scene 1 scene1: skipped"), std::string::npos);
}

TEST(Cli, OnlyOneGoodSceneSkipsJointRefinement) {
  const fs::path cfg_path = write_dataset("onegood", 2, 8);
  fs::remove(cfg_path.parent_path() / "scene0" / "masks.jsonl");
  const PipelineConfig cfg = load_config(cfg_path);
  std::ostringstream log;
  EXPECT_EQ(calibrate_command(cfg, log), kExitPartial);
  EXPECT_NE(slurp(cfg.output / "report.txt").find("multi_scene: skipped: fewer than two calibrated scenes"),
            std::string::npos);
}

TEST(Dataset, KittiCalibMatchesProjectionMatrices) {
  const std::string text =
      "P0: 7.188560e+02 0 6.071928e+02 0 0 7.188560e+02 1.852157e+02 0 0 0 1 0\n"
      "P2: 7.188560e+02 0 6.071928e+02 4.538225e+01 0 7.188560e+02 1.852157e+02 -1.130887e-01 0 0 1 3.779761e-03\n"
      "Tr: 4.276802e-04 -9.999672e-01 -8.084491e-03 -1.198459e-02 -7.210626e-03 8.081198e-03 -9.999413e-01 "
      "-5.403984e-02 9.999738e-01 4.859485e-04 -7.206933e-03 -2.921968e-01\n";
  std::istringstream in(text);
  const KittiCalib c = parse_kitti_calib(in);
  Eigen::Matrix<double, 3, 4> P2;
  P2 << 7.188560e+02, 0, 6.071928e+02, 4.538225e+01, 0, 7.188560e+02, 1.852157e+02, -1.130887e-01, 0, 0, 1,
      3.779761e-03;
  Eigen::Matrix4d Tr = Eigen::Matrix4d::Identity();
  Tr.topRows<3>() << 4.276802e-04, -9.999672e-01, -8.084491e-03, -1.198459e-02, -7.210626e-03, 8.081198e-03,
      -9.999413e-01, -5.403984e-02, 9.999738e-01, 4.859485e-04, -7.206933e-03, -2.921968e-01;
  EXPECT_DOUBLE_EQ(c.intrinsics.fx, 718.856);
  EXPECT_DOUBLE_EQ(c.intrinsics.cy, 185.2157);
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> u(-10.0, 10.0);
  for (int i = 0; i < 50; ++i) {
    const Vec3 X(std::abs(u(rng)) + 5.0, u(rng), 0.2 * u(rng));
    const Vec3 a = P2 * (Tr * X.homogeneous());
    const Vec3 pc = c.ground_truth * X;
    ASSERT_GT(pc.z(), 0.0);
    const Vec2 uv = project_pinhole(pc, c.intrinsics);
    // Tr is orthonormal to ~1e-6; times f |X| / z that is a few 1e-3 px at most.
    EXPECT_NEAR(uv.x(), a.x() / a.z(), 5e-3);
    EXPECT_NEAR(uv.y(), a.y() / a.z(), 5e-3);
  }
  std::istringstream bad("P2: 1 2 3\nTr: 1 0 0 0 0 1 0 0 0 0 1 0\n");
  EXPECT_THROW(parse_kitti_calib(bad), Error);
}

TEST(Dataset, ConfigResolvesRelativePathsAndParams) {
  const json j = json::parse(R"({
    "intrinsics": {"fx": 500, "fy": 510, "cx": 320, "cy": 240, "width": 640, "height": 480},
    "scenes": [{"cloud": "a/c.bin", "image": "a/i.png", "masks": "a/m.jsonl", "depth": "a/d.png"}],
    "initial_guess": {"R": [1,0,0, 0,1,0, 0,0,1], "t": [0.1, 0.2, 0.3]},
    "output": "res",
    "params": {"camera_strategy": "fov", "rho_fov": 2.0, "dpcm": {"tau": 0.7, "structural": false},
               "optimizer": {"hypotheses": 33}, "s_max": 3, "single_scene": true}
  })");
  const PipelineConfig cfg = parse_config(j, "/data/run");
  ASSERT_EQ(cfg.scenes.size(), 1u);
  EXPECT_EQ(cfg.scenes[0].name, "scene0");
  EXPECT_EQ(cfg.scenes[0].cloud, fs::path("/data/run/a/c.bin"));
  EXPECT_EQ(cfg.scenes[0].depth, fs::path("/data/run/a/d.png"));
  EXPECT_TRUE(cfg.scenes[0].depth_masks.empty());
  EXPECT_EQ(cfg.output, fs::path("/data/run/res"));
  EXPECT_DOUBLE_EQ(cfg.intrinsics.fy, 510.0);
  ASSERT_TRUE(cfg.initial_guess);
  EXPECT_EQ(cfg.initial_guess->translation(), Vec3(0.1, 0.2, 0.3));
  EXPECT_FALSE(cfg.ground_truth);
  EXPECT_EQ(cfg.params.strategy, CameraStrategy::FovRatio);
  EXPECT_DOUBLE_EQ(cfg.params.rho_fov, 2.0);
  EXPECT_DOUBLE_EQ(cfg.params.dpcm.tau, 0.7);
  EXPECT_FALSE(cfg.params.dpcm.cost.structural);
  EXPECT_TRUE(cfg.params.dpcm.cost.textural);
  EXPECT_EQ(cfg.params.optimizer.hypotheses, 33);
  EXPECT_EQ(cfg.params.s_max, 3);
  EXPECT_TRUE(cfg.params.single_scene);

  EXPECT_THROW(parse_config(json::parse(R"({"scenes": []})"), "/"), Error);
  EXPECT_THROW(parse_config(json::parse(R"({"intrinsics": {"fx": 1}})"), "/"), Error);
}

TEST(Dataset, SceneSpecJsonRoundTrip) {
  RandomSceneParams rp;
  rp.noise.pixel_sigma = 0.5;
  rp.noise.dropout_rate = 0.1;
  const SceneSpec a = random_scene_spec(rp, 21);
  const SceneSpec b = scene_spec_from_json(scene_spec_to_json(a));
  // Rotations are re-orthonormalized on load, so they come back to rounding.
  json ja = scene_spec_to_json(a), jb = scene_spec_to_json(b);
  auto take_rotations = [](json& j) {
    std::vector<double> r = j["true_extrinsic"]["R"].get<std::vector<double>>();
    j["true_extrinsic"].erase("R");
    for (auto& p : j["primitives"]) {
      for (double v : p["pose"]["R"].get<std::vector<double>>()) r.push_back(v);
      p["pose"].erase("R");
    }
    return r;
  };
  const auto ra = take_rotations(ja), rb = take_rotations(jb);
  ASSERT_EQ(ra.size(), rb.size());
  for (std::size_t i = 0; i < ra.size(); ++i) EXPECT_NEAR(ra[i], rb[i], 1e-14);
  EXPECT_EQ(ja.dump(), jb.dump());
  const SyntheticScene ga = generate(a), gb = generate(b);
  EXPECT_EQ(ga.image.data(), gb.image.data());
  EXPECT_EQ(ga.cloud.size(), gb.cloud.size());
}

TEST(Io, KittiBinRoundTrip) {
  const fs::path dir = fresh_dir("bin");
  PointCloud c;
  for (int i = 0; i < 37; ++i) c.points.push_back({Vec3(0.25 * i, -1.5 + i, 3.0), 0.125 * (i % 8)});
  write_kitti_bin(c, dir / "c.bin");
  EXPECT_EQ(fs::file_size(dir / "c.bin"), 37u * 16u);
  const PointCloud back = read_kitti_bin(dir / "c.bin");
  ASSERT_EQ(back.size(), c.size());
  for (std::size_t i = 0; i < c.size(); ++i) {
    EXPECT_EQ(back.points[i].position, c.points[i].position);
    EXPECT_EQ(back.points[i].intensity, c.points[i].intensity);
  }
  std::ofstream(dir / "bad.bin", std::ios::binary) << "123456789";
  try {
    read_kitti_bin(dir / "bad.bin");
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::FormatError);
  }
}

TEST(Io, DepthPngRoundTripWithSidecarScale) {
  const fs::path dir = fresh_dir("depth");
  ImageF d(13, 7, 0.0f);
  for (int y = 0; y < 7; ++y)
    for (int x = 1; x < 13; ++x) d(x, y) = 0.5f + 4.0f * static_cast<float>(x) + 0.37f * static_cast<float>(y);
  write_depth_png(d, dir / "d.png", 2.0);
  const ImageF back = read_depth_png(dir / "d.png");
  ASSERT_EQ(back.width(), 13);
  ASSERT_EQ(back.height(), 7);
  for (int y = 0; y < 7; ++y) {
    EXPECT_EQ(back(0, y), 0.0f);
    for (int x = 1; x < 13; ++x) EXPECT_NEAR(back(x, y), d(x, y), 0.001 + 1e-6);  // half of 2 mm
  }
  // Without the sidecar the file is read as plain millimetres.
  fs::remove(depth_header_path(dir / "d.png"));
  EXPECT_NEAR(read_depth_png(dir / "d.png")(5, 3), 0.5 * d(5, 3), 0.0006);
}

TEST(Io, GrayPngRoundTrip) {
  const fs::path dir = fresh_dir("gray");
  ImageF img(9, 4);
  for (int y = 0; y < 4; ++y)
    for (int x = 0; x < 9; ++x) img(x, y) = static_cast<float>(x * 4 + y) / 35.0f;
  write_png_gray8(img, dir / "g.png");
  const ImageF back = read_png_gray(dir / "g.png");
  for (int y = 0; y < 4; ++y)
    for (int x = 0; x < 9; ++x) EXPECT_NEAR(back(x, y), img(x, y), 0.5 / 255.0 + 1e-6);
}

TEST(Experiment, SweepCells) {
  ExperimentOptions o;
  auto cells = sweep_cells(o);
  ASSERT_EQ(cells.size(), 1u);
  EXPECT_EQ(cells[0].axis, "baseline");
  o.axes = {"consistency"};
  cells = sweep_cells(o);
  ASSERT_EQ(cells.size(), 4u);
  EXPECT_TRUE(cells[0].params.dpcm.cost.structural && cells[0].params.dpcm.cost.textural);
  EXPECT_FALSE(cells[3].params.dpcm.cost.structural || cells[3].params.dpcm.cost.textural);
  o.axes = {"density", "noise"};
  cells = sweep_cells(o);
  ASSERT_EQ(cells.size(), 10u);
  EXPECT_EQ(cells[2].trial.density_keep, 3);
  EXPECT_EQ(cells[2].value, "3/6");
  o.axes = {"bogus"};
  EXPECT_THROW(sweep_cells(o), Error);
}

TEST(Experiment, SweepRowMatchesDirectTrial) {
  ExperimentOptions o;
  o.trial = small_trial(1);
  o.trials = 1;
  o.seed = 40;
  std::ostringstream csv;
  experiment_command(o, csv);
  const TrialOutcome t = run_trial(o.trial, o.params, 40);
  ASSERT_TRUE(t.ok) << t.error;
  std::istringstream in(csv.str());
  std::string header, row;
  std::getline(in, header);
  std::getline(in, row);
  EXPECT_EQ(header, "parameter,value,median_e_r_deg,median_e_t_m,trials,failures");
  std::ostringstream expect;
  expect.precision(17);
  expect << "baseline,-," << t.joint.rotation_deg << ',' << t.joint.translation_m << ",1,0";
  EXPECT_EQ(row, expect.str());
}

TEST(Experiment, MedianConvention) {
  EXPECT_EQ(median({3.0, 1.0, 2.0}), 2.0);
  EXPECT_EQ(median({4.0, 1.0, 2.0, 3.0}), 2.5);
  EXPECT_TRUE(std::isnan(median({})));
  EXPECT_EQ(median({1.0, std::numeric_limits<double>::infinity(), 2.0}), 2.0);
}
