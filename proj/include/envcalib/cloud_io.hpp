#pragma once

// Point-cloud ingestion: KITTI velodyne binaries (x, y, z, intensity as
// little-endian float32) and a whitespace text format "x y z intensity".

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include "envcalib/error.hpp"
#include "envcalib/geometry.hpp"

namespace envcalib {

namespace detail {

inline float load_le_float(const unsigned char* bytes) {
  std::uint32_t bits = static_cast<std::uint32_t>(bytes[0]) | (static_cast<std::uint32_t>(bytes[1]) << 8) |
                       (static_cast<std::uint32_t>(bytes[2]) << 16) |
                       (static_cast<std::uint32_t>(bytes[3]) << 24);
  return std::bit_cast<float>(bits);
}

inline void store_le_float(float value, unsigned char* bytes) {
  const auto bits = std::bit_cast<std::uint32_t>(value);
  bytes[0] = static_cast<unsigned char>(bits & 0xffu);
  bytes[1] = static_cast<unsigned char>((bits >> 8) & 0xffu);
  bytes[2] = static_cast<unsigned char>((bits >> 16) & 0xffu);
  bytes[3] = static_cast<unsigned char>((bits >> 24) & 0xffu);
}

}  // namespace detail

inline PointCloud read_kitti_bin(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::IoError, "cannot open " + path.string());
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (bytes.size() % 16 != 0)
    throw Error(ErrorCode::FormatError,
                path.string() + ": size " + std::to_string(bytes.size()) + " is not a multiple of 16 bytes");
  PointCloud cloud;
  cloud.points.reserve(bytes.size() / 16);
  const auto* p = reinterpret_cast<const unsigned char*>(bytes.data());
  for (std::size_t off = 0; off < bytes.size(); off += 16) {
    LidarPoint pt;
    pt.position = Vec3(detail::load_le_float(p + off), detail::load_le_float(p + off + 4),
                       detail::load_le_float(p + off + 8));
    pt.intensity = detail::load_le_float(p + off + 12);
    if (!pt.position.allFinite() || !std::isfinite(pt.intensity))
      throw Error(ErrorCode::FormatError, path.string() + ": non-finite value at point " + std::to_string(off / 16));
    cloud.points.push_back(pt);
  }
  return cloud;
}

inline void write_kitti_bin(const PointCloud& cloud, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::IoError, "cannot write " + path.string());
  std::array<unsigned char, 16> buf{};
  for (const auto& pt : cloud.points) {
    detail::store_le_float(static_cast<float>(pt.position.x()), buf.data());
    detail::store_le_float(static_cast<float>(pt.position.y()), buf.data() + 4);
    detail::store_le_float(static_cast<float>(pt.position.z()), buf.data() + 8);
    detail::store_le_float(static_cast<float>(pt.intensity), buf.data() + 12);
    out.write(reinterpret_cast<const char*>(buf.data()), buf.size());
  }
}

inline PointCloud read_text_cloud(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::IoError, "cannot open " + path.string());
  PointCloud cloud;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto first = line.find_first_not_of(" \t\r");
    if (first == std::string::npos || line[first] == '#') continue;
    std::istringstream ss(line);
    LidarPoint pt;
    double x = 0, y = 0, z = 0, i = 0;
    if (!(ss >> x >> y >> z >> i))
      throw Error(ErrorCode::FormatError, path.string() + ":" + std::to_string(lineno) + ": expected 'x y z intensity'");
    pt.position = Vec3(x, y, z);
    pt.intensity = i;
    if (!pt.position.allFinite() || !std::isfinite(i))
      throw Error(ErrorCode::FormatError, path.string() + ":" + std::to_string(lineno) + ": non-finite value");
    cloud.points.push_back(pt);
  }
  return cloud;
}

inline void write_text_cloud(const PointCloud& cloud, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorCode::IoError, "cannot write " + path.string());
  out.precision(17);
  for (const auto& pt : cloud.points)
    out << pt.position.x() << ' ' << pt.position.y() << ' ' << pt.position.z() << ' ' << pt.intensity << '\n';
}

/// Divides intensities by their 99th percentile and clamps to [0, 1].
inline void normalize_intensity(PointCloud& cloud) {
  if (cloud.empty()) return;
  std::vector<double> values;
  values.reserve(cloud.size());
  for (const auto& p : cloud.points) values.push_back(p.intensity);
  const auto k = static_cast<std::size_t>(std::floor(0.99 * static_cast<double>(values.size() - 1)));
  std::nth_element(values.begin(), values.begin() + static_cast<long>(k), values.end());
  const double p99 = values[k];
  for (auto& p : cloud.points) {
    const double v = p99 > 0.0 ? p.intensity / p99 : 0.0;
    p.intensity = std::clamp(v, 0.0, 1.0);
  }
}

/// Loads `.bin` as KITTI binary and anything else as text, then normalizes intensity.
inline PointCloud load_point_cloud(const std::filesystem::path& path) {
  PointCloud cloud = path.extension() == ".bin" ? read_kitti_bin(path) : read_text_cloud(path);
  normalize_intensity(cloud);
  return cloud;
}

}  // namespace envcalib
