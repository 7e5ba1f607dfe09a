#pragma once

// Mask files: one JSON object per line,
//   {"id": 3, "polygon": [[x, y], ...], "area": 812, "bbox": [cx, cy, h, w]}
// The polygon is authoritative; area and bbox are informational and are
// recomputed from the rasterized polygon on load.

#include "json.hpp"

#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "envcalib/error.hpp"
#include "envcalib/mask.hpp"

namespace envcalib {

inline std::vector<Mask> parse_masks(std::istream& in, int width, int height, const std::string& source = "<stream>") {
  std::vector<Mask> masks;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const std::string where = source + ":" + std::to_string(lineno);
    nlohmann::json rec;
    try {
      rec = nlohmann::json::parse(line);
    } catch (const nlohmann::json::parse_error& e) {
      throw Error(ErrorCode::FormatError, where + ": invalid JSON (" + e.what() + ")");
    }
    if (!rec.is_object()) throw Error(ErrorCode::FormatError, where + ": record is not an object");
    if (!rec.contains("id") || !rec["id"].is_number_integer())
      throw Error(ErrorCode::FormatError, where + ": field 'id' missing or not an integer");
    const int id = rec["id"].get<int>();
    const std::string who = where + ": mask " + std::to_string(id);
    if (!rec.contains("polygon") || !rec["polygon"].is_array())
      throw Error(ErrorCode::FormatError, who + ": field 'polygon' missing or not an array");
    std::vector<Vec2> poly;
    for (const auto& v : rec["polygon"]) {
      if (!v.is_array() || v.size() != 2 || !v[0].is_number() || !v[1].is_number())
        throw Error(ErrorCode::FormatError, who + ": polygon vertex is not [x, y]");
      const Vec2 p(v[0].get<double>(), v[1].get<double>());
      if (!p.allFinite()) throw Error(ErrorCode::FormatError, who + ": non-finite polygon vertex");
      poly.push_back(p);
    }
    if (poly.size() < 3)
      throw Error(ErrorCode::FormatError, who + ": polygon has " + std::to_string(poly.size()) + " vertices, need >= 3");
    if (rec.contains("area") && !rec["area"].is_number())
      throw Error(ErrorCode::FormatError, who + ": field 'area' is not a number");
    if (rec.contains("bbox") && (!rec["bbox"].is_array() || rec["bbox"].size() != 4))
      throw Error(ErrorCode::FormatError, who + ": field 'bbox' must be [cx, cy, h, w]");
    Mask m = mask_from_polygon(id, poly, width, height);
    if (m.region.empty()) throw Error(ErrorCode::FormatError, who + ": polygon covers no pixel");
    masks.push_back(std::move(m));
  }
  return masks;
}

/// An empty file (no records) yields an empty list; callers flag the scene.
inline std::vector<Mask> load_masks(const std::filesystem::path& path, int width, int height) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::FormatError, "cannot open mask file " + path.string());
  return parse_masks(in, width, height, path.string());
}

inline nlohmann::json mask_record(const Mask& m) {
  nlohmann::json poly = nlohmann::json::array();
  for (const auto& p : m.polygon) poly.push_back({p.x(), p.y()});
  return {{"id", m.id},
          {"polygon", poly},
          {"area", m.area()},
          {"bbox", {m.instance_center.x(), m.instance_center.y(), m.instance_h, m.instance_w}}};
}

inline void write_masks(std::ostream& out, const std::vector<Mask>& masks) {
  for (const auto& m : masks) out << mask_record(m).dump() << '\n';
}

inline void save_masks(const std::vector<Mask>& masks, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorCode::IoError, "cannot write " + path.string());
  write_masks(out, masks);
}

}  // namespace envcalib
