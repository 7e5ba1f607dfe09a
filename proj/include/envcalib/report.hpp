#pragma once

// Calibration report: a plain-text block with the extrinsic as R (row-major),
// t and the 3x4 Tr row, one line per scene and the errors against ground
// truth when it is known. Pose files use the same R/t/Tr lines.

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <istream>
#include <map>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "envcalib/error.hpp"
#include "envcalib/geometry.hpp"
#include "envcalib/pipeline.hpp"

namespace envcalib {

/// Shortest round-trip text for a double (17 significant digits).
inline std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline void write_pose_block(std::ostream& out, const Pose& p) {
  const Mat3& R = p.rotation();
  const Vec3& t = p.translation();
  out << "R:";
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 3; ++c) out << ' ' << format_double(R(r, c));
  out << "\nt:";
  for (int k = 0; k < 3; ++k) out << ' ' << format_double(t(k));
  out << "\nTr:";
  for (int r = 0; r < 3; ++r) {
    for (int c = 0; c < 3; ++c) out << ' ' << format_double(R(r, c));
    out << ' ' << format_double(t(r));
  }
  out << '\n';
}

namespace detail {

/// Values of "key: v1 v2 ..." lines for the listed keys; other lines are ignored.
inline std::map<std::string, std::vector<double>> numeric_lines(std::istream& in, const std::string& source,
                                                                const std::vector<std::string>& keys) {
  std::map<std::string, std::vector<double>> out;
  std::string line;
  while (std::getline(in, line)) {
    const auto colon = line.find(':');
    if (colon == std::string::npos) continue;
    const std::string key = line.substr(0, colon);
    if (std::find(keys.begin(), keys.end(), key) == keys.end()) continue;
    std::istringstream ss(line.substr(colon + 1));
    std::vector<double> v;
    std::string tok;
    while (ss >> tok) {
      try {
        std::size_t used = 0;
        v.push_back(std::stod(tok, &used));
        if (used != tok.size()) throw std::invalid_argument(tok);
      } catch (const std::exception&) {
        throw Error(ErrorCode::FormatError, source + ": '" + key + "' has a non-numeric value '" + tok + "'");
      }
    }
    out[key] = std::move(v);
  }
  return out;
}

inline Pose pose_from_values(const std::map<std::string, std::vector<double>>& kv, const std::string& source) {
  Mat3 R;
  Vec3 t;
  if (kv.count("R") && kv.count("t")) {
    const auto& r = kv.at("R");
    const auto& tv = kv.at("t");
    if (r.size() != 9 || tv.size() != 3) throw Error(ErrorCode::FormatError, source + ": R needs 9 values and t 3");
    for (int k = 0; k < 9; ++k) R(k / 3, k % 3) = r[static_cast<std::size_t>(k)];
    t = Vec3(tv[0], tv[1], tv[2]);
  } else if (kv.count("Tr")) {
    const auto& v = kv.at("Tr");
    if (v.size() != 12) throw Error(ErrorCode::FormatError, source + ": Tr needs 12 values");
    for (int r = 0; r < 3; ++r) {
      for (int c = 0; c < 3; ++c) R(r, c) = v[static_cast<std::size_t>(4 * r + c)];
      t(r) = v[static_cast<std::size_t>(4 * r + 3)];
    }
  } else {
    throw Error(ErrorCode::FormatError, source + ": no pose (need R and t, or Tr)");
  }
  try {
    return Pose(R, t);
  } catch (const Error&) {
    return Pose::orthonormalized(R, t);
  }
}

}  // namespace detail

inline Pose parse_pose(std::istream& in, const std::string& source = "<stream>") {
  return detail::pose_from_values(detail::numeric_lines(in, source, {"R", "t", "Tr"}), source);
}

inline Pose load_pose(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::IoError, "cannot open " + path.string());
  return parse_pose(in, path.string());
}

inline void save_pose(const Pose& p, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorCode::IoError, "cannot write " + path.string());
  write_pose_block(out, p);
}

struct ResidualStats {
  std::size_t count = 0;
  double mean = 0.0;
  double median = 0.0;
  double max = 0.0;
};

inline ResidualStats residual_stats(std::vector<double> r) {
  ResidualStats s;
  s.count = r.size();
  if (r.empty()) return s;
  std::sort(r.begin(), r.end());
  double sum = 0.0;
  for (double x : r) sum += x;
  s.mean = sum / static_cast<double>(r.size());
  const std::size_t n = r.size();
  s.median = n % 2 ? r[n / 2] : 0.5 * (r[n / 2 - 1] + r[n / 2]);
  s.max = r.back();
  return s;
}

/// Everything in the report depends only on the inputs and the seed, so equal
/// runs give byte-identical files.
inline void write_report(std::ostream& out, const CalibrationResult& r, const std::optional<Pose>& truth = std::nullopt) {
  out << "# envcalib calibration report (camera-from-LiDAR)\n";
  write_pose_block(out, r.pose);
  out << "scenes: " << r.scenes.size() << " calibrated: " << r.succeeded() << '\n';
  if (r.best_scene >= 0)
    out << "best_scene: " << r.best_scene << ' ' << r.scenes[static_cast<std::size_t>(r.best_scene)].name << '\n';
  out << "multi_scene: ";
  if (r.multi_scene)
    out << "joint" << (r.multi_scene_note.empty() ? "" : " (" + r.multi_scene_note + ")");
  else
    out << r.multi_scene_note;
  out << '\n';
  for (const auto& s : r.scenes) {
    out << "scene " << s.index << ' ' << s.name << ": ";
    if (!s.ok) {
      out << "skipped " << s.error << '\n';
      continue;
    }
    const ResidualStats st = residual_stats(s.residuals);
    out << "ok views " << s.plan.intensity_poses.size() << '/' << s.plan.depth_poses.size() << " correspondences "
        << s.bundle.pooled.size() << " support " << s.support << " residual_px mean " << format_double(st.mean)
        << " median " << format_double(st.median) << " max " << format_double(st.max) << '\n';
  }
  if (truth) {
    const PoseErrors e = error_metrics(r.pose, *truth);
    out << "e_r_deg: " << format_double(e.rotation_deg) << '\n';
    out << "e_t_m: " << format_double(e.translation_m) << '\n';
  }
}

inline void save_report(const CalibrationResult& r, const std::optional<Pose>& truth, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorCode::IoError, "cannot write " + path.string());
  write_report(out, r, truth);
}

struct ParsedReport {
  Pose pose;
  std::optional<PoseErrors> errors;  // present when the report was written with ground truth
};

inline ParsedReport parse_report(std::istream& in, const std::string& source = "<stream>") {
  const auto kv = detail::numeric_lines(in, source, {"R", "t", "Tr", "e_r_deg", "e_t_m"});
  ParsedReport p;
  p.pose = detail::pose_from_values(kv, source);
  if (kv.count("e_r_deg") && kv.count("e_t_m")) {
    const auto& a = kv.at("e_r_deg");
    const auto& b = kv.at("e_t_m");
    if (a.size() != 1 || b.size() != 1) throw Error(ErrorCode::FormatError, source + ": bad error lines");
    p.errors = PoseErrors{a[0], b[0]};
  }
  return p;
}

inline ParsedReport load_report(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::IoError, "cannot open " + path.string());
  return parse_report(in, path.string());
}

}  // namespace envcalib
