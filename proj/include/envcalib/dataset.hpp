#pragma once

// Dataset ingestion and output: pipeline config files, per-scene file sets,
// KITTI sequences, synthetic datasets written in the standard formats, and
// overlay images.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "envcalib/cloud_io.hpp"
#include "envcalib/error.hpp"
#include "envcalib/geometry.hpp"
#include "envcalib/mask_io.hpp"
#include "envcalib/pipeline.hpp"
#include "envcalib/png_io.hpp"
#include "envcalib/report.hpp"
#include "envcalib/synthetic.hpp"

namespace envcalib {

namespace fs = std::filesystem;
using nlohmann::json;

struct SceneFiles {
  std::string name;
  fs::path cloud;
  fs::path image;
  fs::path masks;
  fs::path depth;        // optional
  fs::path depth_masks;  // optional
};

struct PipelineConfig {
  Intrinsics intrinsics;
  std::vector<SceneFiles> scenes;
  std::optional<Pose> ground_truth;
  std::optional<Pose> initial_guess;
  PipelineParams params;
  fs::path output = "envcalib_out";
  bool overlay = false;
};

/// Reads one scene's files. Missing or malformed files throw; the caller
/// records the message and skips the scene.
inline SceneData load_scene(const SceneFiles& f, const Intrinsics& K) {
  SceneData s;
  s.name = f.name;
  s.cloud = load_point_cloud(f.cloud);
  s.image = read_png_gray(f.image);
  if (s.image.width() != K.width || s.image.height() != K.height)
    throw Error(ErrorCode::FormatError, f.image.string() + ": image size does not match the intrinsics");
  s.masks = load_masks(f.masks, K.width, K.height);
  if (s.masks.empty()) throw Error(ErrorCode::EmptyFile, f.masks.string() + ": no masks");
  if (!f.depth.empty()) {
    s.depth = read_depth_png(f.depth);
    if (s.depth.width() != K.width || s.depth.height() != K.height)
      throw Error(ErrorCode::FormatError, f.depth.string() + ": depth size does not match the intrinsics");
  }
  if (!f.depth_masks.empty()) s.depth_masks = load_masks(f.depth_masks, K.width, K.height);
  return s;
}

/// Loads every scene, turning load failures into skipped scenes.
inline std::vector<SceneData> load_scenes(const PipelineConfig& cfg) {
  std::vector<SceneData> out;
  for (const auto& f : cfg.scenes) {
    try {
      out.push_back(load_scene(f, cfg.intrinsics));
    } catch (const Error& e) {
      SceneData s;
      s.name = f.name;
      s.error = e.what();
      out.push_back(std::move(s));
    }
  }
  return out;
}

// ---- KITTI ----

struct KittiCalib {
  Eigen::Matrix<double, 3, 4> P2;
  Pose velo_to_cam0;  // Tr
  Pose ground_truth;  // camera 2 from LiDAR, [I | b] Tr with b = K^-1 P2(:, 3)
  Intrinsics intrinsics;  // from P2; width/height left 0
};

inline KittiCalib parse_kitti_calib(std::istream& in, const std::string& source = "calib.txt") {
  std::optional<std::vector<double>> p2, tr;
  std::string line;
  while (std::getline(in, line)) {
    const auto colon = line.find(':');
    if (colon == std::string::npos) continue;
    const std::string key = line.substr(0, colon);
    std::istringstream ss(line.substr(colon + 1));
    std::vector<double> v;
    double x = 0.0;
    while (ss >> x) v.push_back(x);
    if (key == "P2" || key == "P_rect_02") p2 = v;
    if (key == "Tr" || key == "Tr_velo_to_cam") tr = v;
  }
  if (!p2 || p2->size() != 12) throw Error(ErrorCode::FormatError, source + ": missing or short P2 row");
  if (!tr || tr->size() != 12) throw Error(ErrorCode::FormatError, source + ": missing or short Tr row");
  KittiCalib c;
  Mat3 R;
  Vec3 t;
  for (int r = 0; r < 3; ++r) {
    for (int k = 0; k < 4; ++k) c.P2(r, k) = (*p2)[static_cast<std::size_t>(4 * r + k)];
    for (int k = 0; k < 3; ++k) R(r, k) = (*tr)[static_cast<std::size_t>(4 * r + k)];
    t(r) = (*tr)[static_cast<std::size_t>(4 * r + 3)];
  }
  c.velo_to_cam0 = Pose::orthonormalized(R, t);
  c.intrinsics = Intrinsics{c.P2(0, 0), c.P2(1, 1), c.P2(0, 2), c.P2(1, 2), 0, 0};
  const Vec3 b = c.P2.leftCols<3>().inverse() * c.P2.col(3);
  c.ground_truth = Pose(Mat3::Identity(), b) * c.velo_to_cam0;
  return c;
}

struct KittiSource {
  fs::path sequence;  // holds calib.txt, velodyne/, image_2/
  fs::path masks;     // <stem>.jsonl
  fs::path depth;     // <stem>.png, optional
  int stride = 10;
  int max_frames = 0;  // 0 = all
};

/// Frames of a KITTI sequence with every file matched by basename stem; every
/// `stride`-th velodyne scan (in name order) is used.
inline void add_kitti_scenes(PipelineConfig& cfg, const KittiSource& src, bool use_calib_ground_truth) {
  if (src.stride < 1) throw Error(ErrorCode::InvalidArgument, "kitti stride must be >= 1");
  std::ifstream calib(src.sequence / "calib.txt");
  if (!calib) throw Error(ErrorCode::IoError, "cannot open " + (src.sequence / "calib.txt").string());
  const KittiCalib kc = parse_kitti_calib(calib, (src.sequence / "calib.txt").string());
  std::vector<fs::path> bins;
  for (const auto& e : fs::directory_iterator(src.sequence / "velodyne"))
    if (e.path().extension() == ".bin") bins.push_back(e.path());
  std::sort(bins.begin(), bins.end());
  for (std::size_t i = 0; i < bins.size(); i += static_cast<std::size_t>(src.stride)) {
    if (src.max_frames > 0 && static_cast<int>(cfg.scenes.size()) >= src.max_frames) break;
    const std::string stem = bins[i].stem().string();
    SceneFiles f;
    f.name = stem;
    f.cloud = bins[i];
    f.image = src.sequence / "image_2" / (stem + ".png");
    f.masks = src.masks / (stem + ".jsonl");
    if (!src.depth.empty()) f.depth = src.depth / (stem + ".png");
    cfg.scenes.push_back(f);
  }
  if (cfg.scenes.empty()) throw Error(ErrorCode::InvalidArgument, "no velodyne scans in " + src.sequence.string());
  Intrinsics K = kc.intrinsics;
  const ImageF first = read_png_gray(cfg.scenes.front().image);
  K.width = first.width();
  K.height = first.height();
  cfg.intrinsics = K;
  if (use_calib_ground_truth && !cfg.ground_truth) cfg.ground_truth = kc.ground_truth;
}

// ---- config file ----

namespace detail {

template <typename T>
void read_opt(const json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}

inline Pose pose_from_json(const json& j, const fs::path& base) {
  if (j.is_string()) return load_pose(base / j.get<std::string>());
  std::vector<double> R = j.at("R").get<std::vector<double>>();
  std::vector<double> t = j.at("t").get<std::vector<double>>();
  if (R.size() != 9 || t.size() != 3) throw Error(ErrorCode::FormatError, "pose needs R[9] and t[3]");
  Mat3 M;
  for (int k = 0; k < 9; ++k) M(k / 3, k % 3) = R[static_cast<std::size_t>(k)];
  return Pose::orthonormalized(M, Vec3(t[0], t[1], t[2]));
}

inline void params_from_json(const json& j, PipelineParams& p) {
  if (j.contains("camera_strategy")) p.strategy = camera_strategy_from_string(j.at("camera_strategy").get<std::string>());
  if (j.contains("density")) {
    read_opt(j["density"], "radius", p.density.radius);
    read_opt(j["density"], "n_max", p.density.n_max);
  }
  read_opt(j, "rho_fov", p.rho_fov);
  read_opt(j, "per_meter", p.per_meter);
  read_opt(j, "manual_intensity", p.manual_intensity);
  read_opt(j, "manual_depth", p.manual_depth);
  if (j.contains("segment")) {
    read_opt(j["segment"], "levels", p.view.segment.levels);
    read_opt(j["segment"], "min_area", p.view.segment.min_area);
    read_opt(j["segment"], "depth_rel_tol", p.view.segment.depth_rel_tol);
    read_opt(j["segment"], "depth_abs_tol", p.view.segment.depth_abs_tol);
  }
  if (j.contains("corners")) {
    read_opt(j["corners"], "epsilon", p.view.corners.epsilon);
    read_opt(j["corners"], "K", p.view.corners.K);
    read_opt(j["corners"], "b", p.view.corners.b);
    read_opt(j["corners"], "neighbor_spacing", p.view.corners.neighbor_spacing);
  }
  if (j.contains("view")) {
    read_opt(j["view"], "snap_radius", p.view.snap_radius);
    read_opt(j["view"], "border_px", p.view.border_px);
    read_opt(j["view"], "dilation_passes", p.view.dilation_passes);
  }
  if (j.contains("dpcm")) {
    const json& d = j["dpcm"];
    read_opt(d, "beta_s", p.dpcm.cost.beta_s);
    read_opt(d, "beta_t", p.dpcm.cost.beta_t);
    read_opt(d, "w", p.dpcm.cost.w);
    read_opt(d, "structural", p.dpcm.cost.structural);
    read_opt(d, "textural", p.dpcm.cost.textural);
    read_opt(d, "tau", p.dpcm.tau);
    read_opt(d, "neighbor_radius", p.dpcm.neighbor_radius);
    read_opt(d, "mask_threshold", p.dpcm.mask_match.threshold);
  }
  if (j.contains("optimizer")) {
    const json& o = j["optimizer"];
    read_opt(o, "hypotheses", p.optimizer.hypotheses);
    read_opt(o, "subset_size", p.optimizer.subset_size);
    read_opt(o, "inlier_px", p.optimizer.inlier_px);
    read_opt(o, "max_iterations", p.optimizer.max_iterations);
    read_opt(o, "image_height", p.optimizer.image_height);
  }
  read_opt(j, "q_max", p.q_max);
  read_opt(j, "s_max", p.s_max);
  read_opt(j, "single_scene", p.single_scene);
  read_opt(j, "seed", p.seed);
  read_opt(j, "jobs", p.jobs);
}

}  // namespace detail

/// Config keys: intrinsics {fx, fy, cx, cy, width, height}; scenes [{name,
/// cloud, image, masks, depth?, depth_masks?}] and/or kitti {sequence, masks,
/// depth?, stride?, max_frames?}; ground_truth / initial_guess as a pose file
/// path or {R, t}; output; overlay; params {...}. Relative paths are taken
/// from the config file's directory. Scene files are checked when loaded, so
/// a bad scene is skipped rather than failing the whole run.
inline PipelineConfig parse_config(const json& j, const fs::path& base) {
  PipelineConfig cfg;
  try {
    if (j.contains("ground_truth")) cfg.ground_truth = detail::pose_from_json(j["ground_truth"], base);
    if (j.contains("initial_guess")) cfg.initial_guess = detail::pose_from_json(j["initial_guess"], base);
    if (j.contains("kitti")) {
      const json& k = j["kitti"];
      KittiSource src;
      src.sequence = base / k.at("sequence").get<std::string>();
      src.masks = base / k.at("masks").get<std::string>();
      if (k.contains("depth")) src.depth = base / k["depth"].get<std::string>();
      detail::read_opt(k, "stride", src.stride);
      detail::read_opt(k, "max_frames", src.max_frames);
      add_kitti_scenes(cfg, src, true);
    }
    if (j.contains("intrinsics")) {
      const json& k = j["intrinsics"];
      cfg.intrinsics = Intrinsics{k.at("fx").get<double>(), k.at("fy").get<double>(), k.at("cx").get<double>(),
                                  k.at("cy").get<double>(), k.at("width").get<int>(), k.at("height").get<int>()};
    }
    if (j.contains("scenes"))
      for (const auto& s : j["scenes"]) {
        SceneFiles f;
        f.name = s.value("name", "scene" + std::to_string(cfg.scenes.size()));
        f.cloud = base / s.at("cloud").get<std::string>();
        f.image = base / s.at("image").get<std::string>();
        f.masks = base / s.at("masks").get<std::string>();
        if (s.contains("depth")) f.depth = base / s["depth"].get<std::string>();
        if (s.contains("depth_masks")) f.depth_masks = base / s["depth_masks"].get<std::string>();
        cfg.scenes.push_back(f);
      }
    if (j.contains("output")) cfg.output = base / j["output"].get<std::string>();
    detail::read_opt(j, "overlay", cfg.overlay);
    if (j.contains("params")) detail::params_from_json(j["params"], cfg.params);
  } catch (const json::exception& e) {
    throw Error(ErrorCode::FormatError, std::string("config: ") + e.what());
  }
  if (cfg.intrinsics.width == 0 && cfg.intrinsics.fx == 0.0)
    throw Error(ErrorCode::InvalidArgument, "config: intrinsics are mandatory");
  cfg.intrinsics.validate();
  if (cfg.scenes.empty()) throw Error(ErrorCode::InvalidArgument, "config: no scenes");
  return cfg;
}

inline PipelineConfig load_config(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::IoError, "cannot open " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw Error(ErrorCode::FormatError, path.string() + ": " + e.what());
  }
  return parse_config(j, path.parent_path());
}

// ---- scene specs ----

inline json pose_to_json(const Pose& p) {
  std::vector<double> R, t;
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 3; ++c) R.push_back(p.rotation()(r, c));
  for (int k = 0; k < 3; ++k) t.push_back(p.translation()(k));
  return {{"R", R}, {"t", t}};
}

inline json scene_spec_to_json(const SceneSpec& s) {
  json prims = json::array();
  for (const auto& p : s.primitives)
    prims.push_back({{"kind", p.kind == Primitive::Kind::Plane ? "plane" : "box"},
                     {"pose", pose_to_json(p.pose)},
                     {"extent", {p.extent.x(), p.extent.y(), p.extent.z()}},
                     {"face_intensity", p.face_intensity},
                     {"snap_to_lidar", p.snap_to_lidar}});
  json lidar;
  if (s.lidar.kind == LidarKind::Spinning)
    lidar = {{"kind", "spinning"},
             {"n_lines", s.lidar.n_lines},
             {"az_resolution_deg", s.lidar.az_resolution_deg},
             {"elevation_top_deg", s.lidar.elevation_top_deg},
             {"vertical_fov_deg", s.lidar.vertical_fov_deg}};
  else
    lidar = {{"kind", "solid_state"},
             {"fov_h_deg", s.lidar.fov_h_deg},
             {"fov_v_deg", s.lidar.fov_v_deg},
             {"resolution_deg", s.lidar.resolution_deg}};
  lidar["max_range"] = s.lidar.max_range;
  const Intrinsics& K = s.camera;
  return {{"primitives", prims},
          {"lidar", lidar},
          {"camera", {{"fx", K.fx}, {"fy", K.fy}, {"cx", K.cx}, {"cy", K.cy}, {"width", K.width}, {"height", K.height}}},
          {"true_extrinsic", pose_to_json(s.true_extrinsic)},
          {"noise",
           {{"pixel_sigma", s.noise.pixel_sigma},
            {"point_sigma", s.noise.point_sigma},
            {"outlier_rate", s.noise.outlier_rate},
            {"dropout_rate", s.noise.dropout_rate}}},
          {"seed", s.seed},
          {"shuffle_points", s.shuffle_points}};
}

inline SceneSpec scene_spec_from_json(const json& j) {
  SceneSpec s;
  try {
    for (const auto& p : j.at("primitives")) {
      Primitive q;
      const std::string kind = p.at("kind").get<std::string>();
      if (kind != "plane" && kind != "box") throw Error(ErrorCode::FormatError, "primitive kind must be plane or box");
      q.kind = kind == "plane" ? Primitive::Kind::Plane : Primitive::Kind::Box;
      q.pose = detail::pose_from_json(p.at("pose"), {});
      const auto e = p.at("extent").get<std::vector<double>>();
      if (e.size() != 3) throw Error(ErrorCode::FormatError, "extent needs 3 values");
      q.extent = Vec3(e[0], e[1], e[2]);
      q.face_intensity = p.at("face_intensity").get<std::vector<double>>();
      detail::read_opt(p, "snap_to_lidar", q.snap_to_lidar);
      s.primitives.push_back(q);
    }
    if (j.contains("lidar")) {
      const json& l = j["lidar"];
      if (l.value("kind", "solid_state") == "spinning") {
        s.lidar = LidarModel::spinning(l.value("n_lines", 64), l.value("az_resolution_deg", 0.2));
        detail::read_opt(l, "elevation_top_deg", s.lidar.elevation_top_deg);
        detail::read_opt(l, "vertical_fov_deg", s.lidar.vertical_fov_deg);
      } else {
        s.lidar = LidarModel::solid_state(l.value("fov_h_deg", 80.0), l.value("fov_v_deg", 40.0),
                                          l.value("resolution_deg", 0.1));
      }
      detail::read_opt(l, "max_range", s.lidar.max_range);
    }
    if (j.contains("camera")) {
      const json& k = j["camera"];
      s.camera = Intrinsics{k.at("fx").get<double>(), k.at("fy").get<double>(), k.at("cx").get<double>(),
                            k.at("cy").get<double>(), k.at("width").get<int>(), k.at("height").get<int>()};
    }
    if (j.contains("true_extrinsic")) s.true_extrinsic = detail::pose_from_json(j["true_extrinsic"], {});
    if (j.contains("noise")) {
      const json& n = j["noise"];
      detail::read_opt(n, "pixel_sigma", s.noise.pixel_sigma);
      detail::read_opt(n, "point_sigma", s.noise.point_sigma);
      detail::read_opt(n, "outlier_rate", s.noise.outlier_rate);
      detail::read_opt(n, "dropout_rate", s.noise.dropout_rate);
    }
    detail::read_opt(j, "seed", s.seed);
    detail::read_opt(j, "shuffle_points", s.shuffle_points);
  } catch (const json::exception& e) {
    throw Error(ErrorCode::FormatError, std::string("scene spec: ") + e.what());
  }
  return s;
}

// ---- writing ----

/// Writes scenes as <dir>/<name>/{cloud.bin, image.png, masks.jsonl,
/// depth.png(+.hdr), spec.json}, plus <dir>/ground_truth.txt and a
/// <dir>/config.json that the calibrate command reads directly.
inline fs::path write_synthetic_dataset(const std::vector<SceneSpec>& specs, const std::vector<SyntheticScene>& scenes,
                                        const fs::path& dir, const std::optional<Pose>& initial_guess = std::nullopt) {
  if (scenes.empty()) throw Error(ErrorCode::InvalidArgument, "no scenes to write");
  fs::create_directories(dir);
  json cfg;
  const Intrinsics& K = scenes.front().camera;
  cfg["intrinsics"] = {{"fx", K.fx}, {"fy", K.fy}, {"cx", K.cx}, {"cy", K.cy}, {"width", K.width}, {"height", K.height}};
  cfg["scenes"] = json::array();
  for (std::size_t i = 0; i < scenes.size(); ++i) {
    const SyntheticScene& s = scenes[i];
    const std::string name = "scene" + std::to_string(i);
    fs::create_directories(dir / name);
    write_kitti_bin(s.cloud, dir / name / "cloud.bin");
    write_png_gray8(s.image, dir / name / "image.png");
    save_masks(s.masks, dir / name / "masks.jsonl");
    write_depth_png(s.depth, dir / name / "depth.png");
    if (i < specs.size()) {
      std::ofstream spec(dir / name / "spec.json");
      spec << scene_spec_to_json(specs[i]).dump(2) << '\n';
    }
    cfg["scenes"].push_back({{"name", name},
                             {"cloud", name + "/cloud.bin"},
                             {"image", name + "/image.png"},
                             {"masks", name + "/masks.jsonl"},
                             {"depth", name + "/depth.png"}});
  }
  save_pose(scenes.front().true_extrinsic, dir / "ground_truth.txt");
  cfg["ground_truth"] = "ground_truth.txt";
  if (initial_guess) {
    save_pose(*initial_guess, dir / "initial_guess.txt");
    cfg["initial_guess"] = "initial_guess.txt";
  }
  cfg["output"] = "out";
  const fs::path path = dir / "config.json";
  std::ofstream out(path);
  if (!out) throw Error(ErrorCode::IoError, "cannot write " + path.string());
  out << cfg.dump(2) << '\n';
  return path;
}

/// The camera image in gray with every LiDAR point that projects into it
/// drawn as a 3x3 dot colored by depth (near red, far blue).
inline void write_overlay(const ImageF& image, const PointCloud& cloud, const Pose& pose, const Intrinsics& K,
                          const fs::path& path) {
  std::vector<unsigned char> rgb(static_cast<std::size_t>(K.width) * static_cast<std::size_t>(K.height) * 3, 0);
  if (image.width() == K.width && image.height() == K.height)
    for (std::size_t i = 0; i < image.size(); ++i) {
      const auto g = static_cast<unsigned char>(std::lround(std::clamp(image.data()[i], 0.0f, 1.0f) * 255.0f));
      rgb[3 * i] = rgb[3 * i + 1] = rgb[3 * i + 2] = g;
    }
  std::vector<std::pair<Vec2, double>> pts;
  double zmin = std::numeric_limits<double>::infinity(), zmax = 0.0;
  for (const auto& p : cloud.points) {
    const Vec3 pc = pose * p.position;
    if (!(pc.z() > 0.0)) continue;
    const Vec2 uv = project_pinhole(pc, K);
    if (!K.contains(uv)) continue;
    pts.emplace_back(uv, pc.z());
    zmin = std::min(zmin, pc.z());
    zmax = std::max(zmax, pc.z());
  }
  for (const auto& [uv, z] : pts) {
    const double a = zmax > zmin ? (z - zmin) / (zmax - zmin) : 0.0;
    const std::array<unsigned char, 3> c = {static_cast<unsigned char>(std::lround(255.0 * (1.0 - a))),
                                            static_cast<unsigned char>(std::lround(255.0 * (1.0 - std::abs(2.0 * a - 1.0)))),
                                            static_cast<unsigned char>(std::lround(255.0 * a))};
    const int x0 = static_cast<int>(std::lround(uv.x())), y0 = static_cast<int>(std::lround(uv.y()));
    for (int y = y0 - 1; y <= y0 + 1; ++y)
      for (int x = x0 - 1; x <= x0 + 1; ++x) {
        if (x < 0 || y < 0 || x >= K.width || y >= K.height) continue;
        const std::size_t i = (static_cast<std::size_t>(y) * static_cast<std::size_t>(K.width) + static_cast<std::size_t>(x)) * 3;
        rgb[i] = c[0];
        rgb[i + 1] = c[1];
        rgb[i + 2] = c[2];
      }
  }
  write_png_rgb8(K.width, K.height, rgb, path);
}

}  // namespace envcalib
