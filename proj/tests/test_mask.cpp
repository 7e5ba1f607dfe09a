#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <gtest/gtest.h>

#include "envcalib/mask_io.hpp"
#include "envcalib/segment.hpp"

using namespace envcalib;

namespace {

Region filled_rect(int x0, int y0, int x1, int y1, int w = 100, int h = 100) {
  ImageU8 img(w, h, 0);
  for (int y = y0; y <= y1; ++y)
    for (int x = x0; x <= x1; ++x) img(x, y) = 1;
  return Region::from_labels<unsigned char>(img, 1);
}

std::vector<Vec2> corner_positions(const Mask& m) {
  std::vector<Vec2> out;
  for (const auto& c : m.corners) out.push_back(c.position);
  return out;
}

bool contains_point(const std::vector<Vec2>& pts, const Vec2& p) {
  for (const auto& q : pts)
    if ((q - p).norm() < 1e-9) return true;
  return false;
}

}  // namespace

TEST(ExtractCorners, TracedSquareHasFourCorners) {
  Mask m = mask_from_region(0, filled_rect(10, 10, 49, 49));
  extract_corners(m, ImageF(100, 100, 0.5f), CornerParams{});
  const auto pts = corner_positions(m);
  ASSERT_EQ(pts.size(), 4u);
  for (const Vec2& p : {Vec2(10, 10), Vec2(49, 10), Vec2(49, 49), Vec2(10, 49)}) EXPECT_TRUE(contains_point(pts, p));
  EXPECT_EQ(m.area(), 1600u);
}

TEST(ExtractCorners, PolygonSquareKeepsItsVertices) {
  Mask m = mask_from_polygon(1, {{10, 10}, {50, 10}, {50, 50}, {10, 50}}, 100, 100);
  extract_corners(m, ImageF(100, 100, 0.5f), CornerParams{});
  EXPECT_EQ(m.corners.size(), 4u);
  EXPECT_EQ(m.area(), 1600u);
}

TEST(ExtractCorners, CircleCornersLieOnTheCircle) {
  ImageU8 img(120, 120, 0);
  const Vec2 c(60, 60);
  const double r = 40.0;
  for (int y = 0; y < 120; ++y)
    for (int x = 0; x < 120; ++x)
      if ((Vec2(x, y) - c).norm() <= r) img(x, y) = 1;
  Mask m = mask_from_region(0, Region::from_labels<unsigned char>(img, 1));
  extract_corners(m, ImageF(120, 120, 0.5f), CornerParams{});
  EXPECT_GE(m.corners.size(), 8u);
  EXPECT_LE(m.corners.size(), 64u);
  for (const auto& k : m.corners) EXPECT_LE(std::abs((k.position - c).norm() - r), 1.0);
}

TEST(ExtractCorners, ConstantImageGivesConstantTexture) {
  Mask m = mask_from_region(0, filled_rect(0, 0, 19, 29, 40, 40));  // touches the border: mirrored sampling
  CornerParams p;
  p.b = 5;
  extract_corners(m, ImageF(40, 40, 0.375f), p);
  for (const auto& k : m.corners) {
    ASSERT_EQ(k.texture.size(), 25u);
    for (float v : k.texture) EXPECT_EQ(v, 0.375f);
  }
}

TEST(ExtractCorners, NeighbourCountAndSpacing) {
  Mask m = mask_from_polygon(0, {{0, 0}, {100, 0}, {100, 100}, {0, 100}}, 200, 200);
  CornerParams p;
  p.K = 6;
  p.neighbor_spacing = 0.01;  // 4 px along a 400 px perimeter
  extract_corners(m, ImageF(200, 200, 0.0f), p);
  for (const auto& k : m.corners) {
    ASSERT_EQ(k.neighbors.size(), 6u);
    // Within one edge length, arc distance equals straight-line distance.
    for (int j = 0; j < 3; ++j) {
      EXPECT_NEAR((k.neighbors[static_cast<std::size_t>(j)] - k.position).norm(), 4.0 * (3 - j), 1e-9);
      EXPECT_NEAR((k.neighbors[static_cast<std::size_t>(3 + j)] - k.position).norm(), 4.0 * (j + 1), 1e-9);
    }
  }
}

TEST(ExtractCorners, ReversedOrderReversesNeighbours) {
  std::vector<CornerPoint> fwd, rev;
  const std::vector<Vec2> poly = {{3, 1}, {40, 5}, {52, 33}, {20, 47}, {1, 25}};
  for (const auto& v : poly) fwd.push_back({v});
  for (auto it = poly.rbegin(); it != poly.rend(); ++it) rev.push_back({*it});
  CornerParams p;
  p.neighbor_spacing = 0.05;
  assign_neighbors(fwd, p);
  assign_neighbors(rev, p);
  const std::size_t n = poly.size();
  for (std::size_t i = 0; i < n; ++i) {
    const auto& a = fwd[i].neighbors;
    const auto& b = rev[n - 1 - i].neighbors;
    ASSERT_EQ(a.size(), b.size());
    for (std::size_t k = 0; k < a.size(); ++k) EXPECT_LT((a[k] - b[a.size() - 1 - k]).norm(), 1e-9);
  }
}

TEST(ExtractCorners, TranslationEquivariant) {
  const Vec2 d(7, 4);
  Mask a = mask_from_region(0, filled_rect(10, 12, 40, 30));
  Mask b = mask_from_region(0, filled_rect(17, 16, 47, 34));
  extract_corners(a, ImageF(100, 100, 0.2f), CornerParams{});
  extract_corners(b, ImageF(100, 100, 0.2f), CornerParams{});
  ASSERT_EQ(a.corners.size(), b.corners.size());
  for (std::size_t i = 0; i < a.corners.size(); ++i) {
    EXPECT_LT((a.corners[i].position + d - b.corners[i].position).norm(), 1e-9);
    for (std::size_t k = 0; k < a.corners[i].neighbors.size(); ++k)
      EXPECT_LT((a.corners[i].neighbors[k] + d - b.corners[i].neighbors[k]).norm(), 1e-9);
  }
}

TEST(ExtractCorners, RejectsBadParameters) {
  Mask m = mask_from_region(0, filled_rect(10, 10, 20, 20));
  CornerParams p;
  p.K = 3;
  EXPECT_THROW(extract_corners(m, ImageF(100, 100), p), Error);
  p = CornerParams{};
  p.b = 4;
  EXPECT_THROW(extract_corners(m, ImageF(100, 100), p), Error);
}

TEST(ExtractCorners, LineMaskIsDegenerate) {
  Mask m = mask_from_region(0, filled_rect(10, 10, 30, 10));
  try {
    extract_corners(m, ImageF(100, 100), CornerParams{});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::DegenerateContour);
  }
}

TEST(MaskFile, RoundTrip) {
  std::vector<Mask> masks;
  masks.push_back(mask_from_polygon(3, {{10, 10}, {30, 10}, {30, 25}, {10, 25}}, 64, 48));
  masks.push_back(mask_from_polygon(8, {{40, 5}, {60, 20}, {45, 40}}, 64, 48));
  std::stringstream ss;
  write_masks(ss, masks);
  const auto back = parse_masks(ss, 64, 48);
  ASSERT_EQ(back.size(), 2u);
  for (std::size_t i = 0; i < 2; ++i) {
    EXPECT_EQ(back[i].id, masks[i].id);
    EXPECT_EQ(back[i].area(), masks[i].area());
    ASSERT_EQ(back[i].polygon.size(), masks[i].polygon.size());
    for (std::size_t k = 0; k < back[i].polygon.size(); ++k) EXPECT_EQ(back[i].polygon[k], masks[i].polygon[k]);
  }
  EXPECT_EQ(back[0].area(), 300u);
}

TEST(MaskFile, TwoVertexPolygonNamesTheMask) {
  std::istringstream in(R"({"id": 0, "polygon": [[0,0],[5,0],[5,5]]}
{"id": 17, "polygon": [[1,1],[9,9]], "area": 0, "bbox": [0,0,0,0]})");
  try {
    parse_masks(in, 20, 20, "m.jsonl");
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::FormatError);
    EXPECT_NE(std::string(e.what()).find("mask 17"), std::string::npos) << e.what();
    EXPECT_NE(std::string(e.what()).find("m.jsonl:2"), std::string::npos) << e.what();
  }
}

TEST(MaskFile, MalformedRecords) {
  for (const char* line : {"not json", "[1,2]", R"({"polygon": [[0,0],[5,0],[5,5]]})",
                           R"({"id": 1, "polygon": [[0,0],[5,0],[5]]})", R"({"id": 1})",
                           R"({"id": 1, "polygon": [[0,0],[5,0],[5,5]], "bbox": [1,2]})"}) {
    std::istringstream in(line);
    try {
      parse_masks(in, 20, 20);
      ADD_FAILURE() << line;
    } catch (const Error& e) {
      EXPECT_EQ(e.code(), ErrorCode::FormatError) << line;
    }
  }
}

TEST(MaskFile, EmptyFileGivesNoMasks) {
  std::istringstream in("\n  \n");
  EXPECT_TRUE(parse_masks(in, 10, 10).empty());
}

TEST(MaskFile, MissingFileIsFormatError) {
  try {
    load_masks(std::filesystem::temp_directory_path() / "envcalib_no_such_masks.jsonl", 10, 10);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::FormatError);
  }
}

TEST(MaskFile, OverlappingMasksCountedOnceInUnion) {
  std::istringstream in(R"({"id": 0, "polygon": [[0,0],[10,0],[10,10],[0,10]]}
{"id": 1, "polygon": [[5,5],[15,5],[15,15],[5,15]]})");
  const auto masks = parse_masks(in, 40, 40);
  ASSERT_EQ(masks.size(), 2u);
  EXPECT_EQ(masks[0].area(), 100u);
  EXPECT_EQ(masks[1].area(), 100u);
  EXPECT_EQ(union_area(masks), 175u);
}

TEST(Segment, TwoRectangles) {
  ImageF img(60, 40, 0.0f);
  for (int y = 5; y < 15; ++y)
    for (int x = 5; x < 20; ++x) img(x, y) = 0.3f;
  for (int y = 20; y < 35; ++y)
    for (int x = 30; x < 50; ++x) img(x, y) = 0.3f;
  const auto masks = segment_intensity(img);
  ASSERT_EQ(masks.size(), 2u);
  EXPECT_EQ(masks[0].area(), 150u);
  EXPECT_EQ(masks[1].area(), 300u);
}

TEST(Segment, CheckerboardQuadrants) {
  ImageF img(40, 40, 0.0f);
  for (int y = 0; y < 40; ++y)
    for (int x = 0; x < 40; ++x) img(x, y) = ((x < 20) == (y < 20)) ? 0.2f : 0.8f;
  const auto masks = segment_intensity(img);
  ASSERT_EQ(masks.size(), 4u);
  for (const auto& m : masks) EXPECT_EQ(m.area(), 400u);
}

TEST(Segment, AllZeroImageHasNoMasks) {
  EXPECT_TRUE(segment_intensity(ImageF(30, 30, 0.0f)).empty());
  EXPECT_TRUE(segment_depth(ImageF(30, 30, 0.0f)).empty());
}

TEST(Segment, DepthStepSplitsComponents) {
  ImageF d(40, 20, 0.0f);
  for (int y = 0; y < 20; ++y)
    for (int x = 0; x < 40; ++x) d(x, y) = x < 20 ? 5.0f : 8.0f;
  EXPECT_EQ(segment_depth(d).size(), 2u);
  for (int y = 0; y < 20; ++y)
    for (int x = 0; x < 40; ++x) d(x, y) = 5.0f + 0.01f * x;  // smooth ramp
  EXPECT_EQ(segment_depth(d).size(), 1u);
}
