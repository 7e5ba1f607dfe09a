#include <algorithm>
#include <cmath>
#include <random>

#include <gtest/gtest.h>

#include "envcalib/projection.hpp"

using namespace envcalib;

namespace {

const Intrinsics kCam{100.0, 100.0, 50.0, 50.0, 101, 101};

PointCloud cloud_of(std::initializer_list<std::pair<Vec3, double>> pts) {
  PointCloud c;
  for (const auto& [p, i] : pts) c.points.push_back({p, i});
  return c;
}

}  // namespace

TEST(Render, SinglePointOnPrincipalRay) {
  const ProjectionImage img = render(cloud_of({{Vec3(0, 0, 2), 0.5}}), {kCam, Pose(), Channel::Intensity});
  EXPECT_EQ(img.filled, 1u);
  EXPECT_FLOAT_EQ(img.intensity(50, 50), 0.5f);
  EXPECT_FLOAT_EQ(img.depth(50, 50), 2.0f);
  EXPECT_EQ(img.source_index(50, 50), 0);
}

TEST(Render, NearestPointWins) {
  const ProjectionImage img =
      render(cloud_of({{Vec3(0, 0, 3), 0.9}, {Vec3(0, 0, 2), 0.1}}), {kCam, Pose(), Channel::Depth});
  EXPECT_FLOAT_EQ(img.depth(50, 50), 2.0f);
  EXPECT_FLOAT_EQ(img.intensity(50, 50), 0.1f);
  EXPECT_EQ(img.source_index(50, 50), 1);
  int bucket = 0;
  img.for_each_in_pixel(50, 50, [&](std::int32_t) { ++bucket; });
  EXPECT_EQ(bucket, 2);
}

TEST(Render, DepthTieGoesToLowerIndex) {
  const ProjectionImage img =
      render(cloud_of({{Vec3(0, 0, 2.0 + 5e-10), 0.2}, {Vec3(0, 0, 2.0), 0.7}}), {kCam, Pose(), Channel::Intensity});
  EXPECT_EQ(img.source_index(50, 50), 0);
}

TEST(Render, FilledPixelsAreExactlyThoseWithDepth) {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(-1.0, 1.0), z(1.0, 5.0);
  PointCloud c;
  for (int i = 0; i < 3000; ++i) c.points.push_back({Vec3(u(rng), u(rng), z(rng)), 0.5});
  const ProjectionImage img = render(c, {kCam, Pose(), Channel::Intensity});
  for (int y = 0; y < img.height(); ++y)
    for (int x = 0; x < img.width(); ++x) EXPECT_EQ(img.source_index(x, y) != kNoSource, img.depth(x, y) > 0.0f);
}

TEST(Render, PlaneGridPixelsBackProjectToTheirSource) {
  const Intrinsics K{500.0, 500.0, 320.0, 240.0, 640, 480};
  const Pose pose = Pose::from_rotvec(Vec3(0.05, -0.1, 0.02), Vec3(0.1, 0.0, 0.3));
  PointCloud c;
  for (int i = 0; i < 100; ++i)
    for (int j = 0; j < 100; ++j) c.points.push_back({Vec3(-2.0 + 0.04 * i, -1.5 + 0.03 * j, 6.0 + 0.01 * i), 0.5});
  const ProjectionImage img = render(c, {K, pose, Channel::Intensity});
  std::size_t checked = 0;
  for (int y = 0; y < img.height(); ++y)
    for (int x = 0; x < img.width(); ++x) {
      const std::int32_t s = img.source_index(x, y);
      if (s == kNoSource) continue;
      const Vec3 pc = pose * c.points[static_cast<std::size_t>(s)].position;
      const Vec2 uv = project_pinhole(pc, K);
      EXPECT_LE(std::abs(uv.x() - x), 0.5 + 1e-12);
      EXPECT_LE(std::abs(uv.y() - y), 0.5 + 1e-12);
      const Vec3 back = back_project(Vec2(x, y), img.depth(x, y), K);
      EXPECT_LT((project_pinhole(back, K) - Vec2(x, y)).norm(), 1e-6);
      ++checked;
    }
  EXPECT_GT(checked, 5000u);
}

TEST(Render, NothingInFrontThrows) {
  try {
    render(cloud_of({{Vec3(0, 0, -2), 0.5}}), {kCam, Pose(), Channel::Intensity});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::EmptyProjection);
  }
  EXPECT_THROW(render(PointCloud{}, {kCam, Pose(), Channel::Intensity}), Error);
}

TEST(Dilate, FillsGapsAndErosionRestoresTheOutline) {
  PointCloud c;
  // A square lattice with a 2 px pitch: every other pixel of a 21 x 21 block.
  for (int i = 0; i <= 10; ++i)
    for (int j = 0; j <= 10; ++j) c.points.push_back({Vec3((2 * i - 10) * 0.02, (2 * j - 10) * 0.02, 2.0), 0.5});
  const ProjectionImage img = render(c, {kCam, Pose(), Channel::Intensity});
  const int passes = estimate_dilation_passes(img);
  EXPECT_EQ(passes, 1);
  DilatedImage d = dilate(img, Channel::Intensity, passes);
  for (int y = 40; y <= 60; ++y)
    for (int x = 40; x <= 60; ++x) EXPECT_GT(d.depth(x, y), 0.0f) << x << "," << y;
  EXPECT_GT(d.depth(39, 50), 0.0f);  // grown by one pixel
  erode_added(d, img, passes);
  for (int y = 40; y <= 60; ++y)
    for (int x = 40; x <= 60; ++x) EXPECT_GT(d.depth(x, y), 0.0f);
  EXPECT_EQ(d.depth(39, 50), 0.0f);
  EXPECT_EQ(d.depth(61, 61), 0.0f);
}

TEST(EstimateFov, TwoSymmetricBearings) {
  const FieldOfView f = estimate_fov(cloud_of({{Vec3(1, 1, 0), 0}, {Vec3(1, -1, 0), 0}}));
  EXPECT_NEAR(f.horizontal, 90.0, 1e-9);
  EXPECT_NEAR(f.vertical, 0.0, 1e-9);
}

TEST(EstimateFov, FullRing) {
  PointCloud c;
  for (int k = 0; k < 720; ++k) {
    const double a = deg2rad(k * 0.5);
    c.points.push_back({Vec3(std::cos(a), std::sin(a), 0.0), 0.0});
  }
  EXPECT_DOUBLE_EQ(estimate_fov(c).horizontal, 360.0);
}

TEST(EstimateFov, SeamStraddlingSector) {
  PointCloud c;
  for (int k = -20; k <= 20; ++k) {
    const double a = deg2rad(180.0 + k);
    c.points.push_back({Vec3(std::cos(a), std::sin(a), 0.0), 0.0});
  }
  EXPECT_NEAR(estimate_fov(c).horizontal, 40.0, 1e-9);
}

TEST(EstimateFov, RandomConeConvergesToItsAperture) {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  auto cone = [&](int n) {
    PointCloud c;
    const double half = deg2rad(30.0);
    for (int i = 0; i < n; ++i) {
      // Uniform over the spherical cap around +X.
      const double cos_t = 1.0 - u(rng) * (1.0 - std::cos(half));
      const double sin_t = std::sqrt(1.0 - cos_t * cos_t);
      const double phi = 2.0 * kPi * u(rng);
      c.points.push_back({Vec3(cos_t, sin_t * std::cos(phi), sin_t * std::sin(phi)) * 10.0, 0.0});
    }
    return estimate_fov(c);
  };
  const FieldOfView small = cone(200), large = cone(20000);
  EXPECT_LE(small.horizontal, 60.0 + 1e-9);
  EXPECT_LE(small.vertical, 60.0 + 1e-9);
  EXPECT_LE(large.horizontal, 60.0 + 1e-9);
  EXPECT_GT(large.horizontal, 59.0);
  EXPECT_GT(large.vertical, 59.0);
  EXPECT_GE(large.horizontal, small.horizontal - 1.0);
}

TEST(EstimateFov, PermutationAndScaleInvariant) {
  std::mt19937_64 rng(6);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  PointCloud c;
  for (int i = 0; i < 500; ++i) c.points.push_back({Vec3(2.0 + u(rng), u(rng), 0.3 * u(rng)), 0.0});
  const FieldOfView a = estimate_fov(c);
  PointCloud d = c;
  std::shuffle(d.points.begin(), d.points.end(), rng);
  for (auto& p : d.points) p.position *= 7.5;
  const FieldOfView b = estimate_fov(d);
  EXPECT_NEAR(a.horizontal, b.horizontal, 1e-9);
  EXPECT_NEAR(a.vertical, b.vertical, 1e-9);
}

TEST(EstimateFov, DegenerateClouds) {
  EXPECT_THROW(estimate_fov(cloud_of({{Vec3(1, 0, 0), 0}})), Error);
  try {
    estimate_fov(cloud_of({{Vec3(1, 0, 0), 0}, {Vec3(2, 0, 0), 0}}));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::DegenerateCloud);
  }
}

TEST(NormalizeDepth, BoundsAndMidpoint) {
  const NormalizedDepths n = normalize_depth({2.0, 10.0, 6.0}, 2.0, 10.0);
  EXPECT_DOUBLE_EQ(n.values[0], 0.0);
  EXPECT_DOUBLE_EQ(n.values[1], 1.0);
  EXPECT_DOUBLE_EQ(n.values[2], 0.5);
  EXPECT_FALSE(n.constant);
}

TEST(NormalizeDepth, AffineAndClamped) {
  std::mt19937_64 rng(8);
  std::uniform_real_distribution<double> u(0.0, 30.0);
  std::vector<double> d;
  for (int i = 0; i < 200; ++i) d.push_back(u(rng));
  const NormalizedDepths n = normalize_depth(d, 5.0, 25.0);
  for (std::size_t i = 0; i < d.size(); ++i) {
    EXPECT_GE(n.values[i], 0.0);
    EXPECT_LE(n.values[i], 1.0);
    if (d[i] >= 5.0 && d[i] <= 25.0) {
      EXPECT_NEAR(n.values[i], (d[i] - 5.0) / 20.0, 1e-15);
    }
  }
}

TEST(NormalizeDepth, ConstantInputFlagged) {
  const NormalizedDepths n = normalize_depth({3.0, 3.0});
  EXPECT_TRUE(n.constant);
  EXPECT_EQ(n.values, (std::vector<double>{0.0, 0.0}));
}
