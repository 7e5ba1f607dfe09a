#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>

#include <gtest/gtest.h>

#include "envcalib/optimizer.hpp"

using namespace envcalib;

namespace {

const Intrinsics kK{718.856, 718.856, 607.1928, 185.2157, 1241, 376};

Pose random_extrinsic(std::mt19937_64& rng) {
  std::normal_distribution<double> g(0.0, 1.0);
  const Vec3 axis = Vec3(g(rng), g(rng), g(rng)).normalized();
  std::uniform_real_distribution<double> ang(0.0, deg2rad(10.0));
  return Pose::from_rotvec(ang(rng) * axis, Vec3(g(rng), g(rng), g(rng)) * 0.3) * kitti_reference_extrinsic();
}

// Points in the camera frustum at 5-40 m, expressed in the LiDAR frame, with
// their exact projections.
std::vector<PointPixel> forward_project(const Pose& T, int n, std::mt19937_64& rng, double sigma = 0.0) {
  std::uniform_real_distribution<double> u(40.0, 1200.0), v(30.0, 350.0), z(5.0, 40.0);
  std::normal_distribution<double> noise(0.0, sigma > 0.0 ? sigma : 1.0);
  std::vector<PointPixel> out;
  for (int i = 0; i < n; ++i) {
    const Vec2 px(u(rng), v(rng));
    const Vec3 pc = back_project(px, z(rng), kK);
    Vec2 obs = px;
    if (sigma > 0.0) obs += Vec2(noise(rng), noise(rng));
    out.push_back({T.inverse() * pc, obs});
  }
  return out;
}

SceneBundle bundle_of(const std::vector<PointPixel>& pts, int index = 0) {
  SceneBundle b;
  b.scene_index = index;
  CorrespondenceSet set;
  for (const auto& p : pts) set.pairs.push_back({p.lidar_point, p.pixel, 0.0});
  b.sets.push_back(set);
  b.pool();
  return b;
}

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

}  // namespace

TEST(GLoss, Examples) {
  RobustLossParams p;
  p.H = 100.0;
  p.mean_norm_depth = 0.4;
  p.mean_depth = 12.0;
  EXPECT_EQ(g_loss(0.0, 0.4, p), 0.0);
  EXPECT_NEAR(g_loss(100.0, 0.4, p), (std::numbers::e - 1.0) / 2.0, 1e-12);
  EXPECT_NEAR(g_loss(100.0, 0.4, p), 0.8591, 1e-4);
  const double k = std::exp(-(0.9 - 0.4) * (0.9 - 0.4) / (2.0 * 144.0));
  EXPECT_NEAR(g_loss(1e9, 0.9, p), std::numbers::e - k, 1e-6);
  EXPECT_EQ(g_loss(std::numeric_limits<double>::infinity(), 0.9, p), std::numbers::e - k);
}

TEST(GLoss, MonotoneAndBounded) {
  std::mt19937_64 rng(41);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int trial = 0; trial < 200; ++trial) {
    RobustLossParams p;
    p.H = 50.0 + 1000.0 * u(rng);
    p.mean_norm_depth = u(rng);
    p.mean_depth = 0.5 + 50.0 * u(rng);
    const double d = u(rng);
    double prev = 0.0;
    for (double eps = 0.0; eps < 1e5; eps = eps * 1.7 + 0.01) {
      const double g = g_loss(eps, d, p);
      EXPECT_GE(g, prev);
      EXPECT_GE(g, 0.0);
      EXPECT_LT(g, std::numbers::e);
      prev = g;
    }
  }
}

TEST(SelectSceneSubsets, TwoScenesByHand) {
  std::vector<SceneBundle> s(2);
  s[0].pooled.resize(100);
  s[1].pooled.resize(300);
  for (auto& b : s)
    for (std::size_t k = 0; k < 10; ++k) b.hypotheses.push_back({Pose(), {}, {k, k + 1}, 0.0});
  select_scene_subsets(s, 8, 10);
  EXPECT_EQ(s[0].s_t, 2);
  EXPECT_EQ(s[1].s_t, 6);
  EXPECT_EQ(s[0].selected, (std::vector<std::size_t>{0, 1, 2}));
  EXPECT_EQ(s[1].selected.size(), 7u);
}

TEST(SelectSceneSubsets, SingleSceneAndClamp) {
  std::vector<SceneBundle> s(1);
  s[0].pooled.resize(40);
  for (std::size_t k = 0; k < 12; ++k) s[0].hypotheses.push_back({Pose(), {}, {3 * k}, 0.0});
  select_scene_subsets(s, 8, 5);
  EXPECT_EQ(s[0].s_t, 5);
  select_scene_subsets(s, 3, 5);
  EXPECT_EQ(s[0].s_t, 3);
}

TEST(SelectSceneSubsets, SMaxOneTakesBestSupportOnly) {
  std::vector<SceneBundle> s(3);
  for (std::size_t t = 0; t < 3; ++t) {
    s[t].pooled.resize(50 * (t + 1));
    s[t].hypotheses.push_back({Pose(), {}, {t, 10 + t, 20 + t}, 0.0});
    s[t].hypotheses.push_back({Pose(), {}, {40}, 1.0});
  }
  select_scene_subsets(s, 100, 1);
  for (std::size_t t = 0; t < 3; ++t) {
    EXPECT_EQ(s[t].s_t, 1);
    EXPECT_EQ(s[t].selected, s[t].hypotheses[0].support);
  }
}

TEST(SelectSceneSubsets, SharesNeverExceedBudget) {
  std::mt19937_64 rng(42);
  std::uniform_int_distribution<int> q(1, 500), nscenes(1, 8), qmax(8, 60);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<SceneBundle> s(static_cast<std::size_t>(nscenes(rng)));
    for (auto& b : s) {
      b.pooled.resize(static_cast<std::size_t>(q(rng)));
      b.hypotheses.resize(20);
    }
    const int Q = qmax(rng);
    select_scene_subsets(s, Q, 20);
    double total = 0.0;
    for (const auto& b : s) total += static_cast<double>(b.q());
    int sum = 0;
    for (const auto& b : s) {
      EXPECT_GE(b.s_t, 1);
      const double share = std::floor(Q * static_cast<double>(b.q()) / total);
      EXPECT_EQ(b.s_t, std::max(1, static_cast<int>(std::min(share, 20.0))));
      sum += static_cast<int>(share);
    }
    EXPECT_LE(sum, Q);
  }
}

TEST(SolvePnp, SixPointOracle) {
  std::mt19937_64 rng(43);
  for (int trial = 0; trial < 50; ++trial) {
    const Pose T = random_extrinsic(rng);
    const PnpResult r = solve_pnp(forward_project(T, 6, rng), kK);
    const PoseErrors e = error_metrics(r.pose, T);
    EXPECT_LT(e.rotation_deg, 1e-4);
    EXPECT_LT(e.translation_m, 1e-6);
  }
}

TEST(SolvePnp, PlanarPoints) {
  std::mt19937_64 rng(44);
  const Pose T = random_extrinsic(rng);
  std::vector<PointPixel> pts;
  for (int i = 0; i < 5; ++i)
    for (int j = 0; j < 4; ++j) {
      const Vec3 pc(-2.0 + i, -1.0 + 0.7 * j, 10.0 + 0.3 * i);  // a tilted plane
      pts.push_back({T.inverse() * pc, project_pinhole(pc, kK)});
    }
  const PoseErrors e = error_metrics(solve_pnp(pts, kK).pose, T);
  EXPECT_LT(e.rotation_deg, 1e-4);
  EXPECT_LT(e.translation_m, 1e-6);
}

TEST(SolvePnp, DegenerateConfigurations) {
  std::vector<PointPixel> ray;
  for (int i = 1; i <= 6; ++i) ray.push_back({Vec3(0, 0, 2.0 * i), Vec2(kK.cx, kK.cy)});
  try {
    solve_pnp(ray, kK);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::DegenerateConfiguration);
  }
  std::vector<PointPixel> three(ray.begin(), ray.begin() + 3);
  EXPECT_THROW(solve_pnp(three, kK), Error);
}

TEST(SolvePnp, PixelNoiseMonteCarlo) {
  std::mt19937_64 rng(45);
  std::vector<double> er;
  for (int trial = 0; trial < 50; ++trial) {
    const Pose T = random_extrinsic(rng);
    er.push_back(error_metrics(solve_pnp(forward_project(T, 20, rng, 1.0), kK).pose, T).rotation_deg);
  }
  EXPECT_LT(median(er), 0.3);
}

TEST(MultiViewSolve, NoiselessSingleView) {
  std::mt19937_64 rng(46);
  const Pose T = random_extrinsic(rng);
  SceneBundle b = bundle_of(forward_project(T, 40, rng));
  OptimizerParams p;
  p.hypotheses = 30;
  const MultiViewResult r = multi_view_solve(b, kK, p, rng);
  EXPECT_LT(error_metrics(r.best.pose, T).rotation_deg, 1e-3);
  EXPECT_EQ(r.best.support.size(), 40u);
  EXPECT_EQ(b.hypotheses.size(), r.ranked.size());
  for (std::size_t k = 2; k < r.ranked.size(); ++k) EXPECT_LE(r.ranked[k - 1].score, r.ranked[k].score);
}

TEST(MultiViewSolve, ThirtyPercentOutliers) {
  std::mt19937_64 rng(47);
  std::uniform_real_distribution<double> u(0.0, 1241.0), v(0.0, 376.0);
  std::vector<double> er;
  for (int trial = 0; trial < 20; ++trial) {
    const Pose T = random_extrinsic(rng);
    auto pts = forward_project(T, 50, rng, 1.0);
    for (int i = 0; i < 15; ++i) pts[static_cast<std::size_t>(i)].pixel = Vec2(u(rng), v(rng));
    SceneBundle b = bundle_of(pts);
    er.push_back(error_metrics(multi_view_solve(b, kK, OptimizerParams{}, rng).best.pose, T).rotation_deg);
  }
  EXPECT_LT(median(er), 0.5);
}

TEST(MultiViewSolve, ViewsTooSmallAloneSucceedJointly) {
  std::mt19937_64 rng(48);
  const Pose T = random_extrinsic(rng);
  const auto pts = forward_project(T, 6, rng);
  SceneBundle a = bundle_of({pts.begin(), pts.begin() + 3});
  SceneBundle b = bundle_of({pts.begin() + 3, pts.end()});
  try {
    multi_view_solve(a, kK, OptimizerParams{}, rng);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::InsufficientCorrespondences);
  }
  EXPECT_THROW(multi_view_solve(b, kK, OptimizerParams{}, rng), Error);
  SceneBundle joint;
  joint.sets = {a.sets[0], b.sets[0]};
  joint.sets[1].view_index = 1;
  joint.pool();
  EXPECT_LT(error_metrics(multi_view_solve(joint, kK, OptimizerParams{}, rng).best.pose, T).rotation_deg, 1e-3);
}

TEST(MultiSceneSolve, IdenticalCopiesGiveTheSingleSceneResult) {
  std::mt19937_64 rng(49);
  const Pose T = random_extrinsic(rng);
  SceneBundle b = bundle_of(forward_project(T, 30, rng, 1.0));
  OptimizerParams p;
  p.hypotheses = 50;
  const MultiViewResult r = multi_view_solve(b, kK, p, rng);
  const Pose init = Pose::from_rotvec(Vec3(0.002, -0.001, 0.003), Vec3(0.01, 0.0, -0.02)) * r.best.pose;
  std::vector<SceneBundle> one = {b};
  select_scene_subsets(one, 10, 1);
  const Pose single = multi_scene_solve(one, kK, init, p).pose;
  for (int copies : {2, 5}) {
    std::vector<SceneBundle> many(static_cast<std::size_t>(copies), b);
    select_scene_subsets(many, 10 * copies, 1);
    const Pose joint = multi_scene_solve(many, kK, init, p).pose;
    EXPECT_LT((joint.rotation() - single.rotation()).norm(), 1e-9);
    EXPECT_LT((joint.translation() - single.translation()).norm(), 1e-9);
  }
}

TEST(MultiSceneSolve, FiveNoiselessScenes) {
  std::mt19937_64 rng(50);
  const Pose T = random_extrinsic(rng);
  std::vector<SceneBundle> scenes;
  OptimizerParams p;
  p.hypotheses = 30;
  for (int t = 0; t < 5; ++t) {
    scenes.push_back(bundle_of(forward_project(T, 25, rng), t));
    multi_view_solve(scenes.back(), kK, p, rng);
  }
  select_scene_subsets(scenes, 40, 10);
  const Pose init = Pose::from_rotvec(Vec3(0.01, 0.0, -0.01), Vec3(0.05, 0.02, 0.0)) * T;
  const MultiSceneResult r = multi_scene_solve(scenes, kK, init, p);
  EXPECT_TRUE(r.converged);
  const PoseErrors e = error_metrics(r.pose, T);
  EXPECT_LT(e.rotation_deg, 1e-3);
  EXPECT_LT(e.translation_m, 1e-4);
}

TEST(RefineGLoss, LossNeverIncreases) {
  std::mt19937_64 rng(51);
  for (int trial = 0; trial < 20; ++trial) {
    const Pose T = random_extrinsic(rng);
    const auto pts = forward_project(T, 30, rng, 2.0);
    const Pose init = Pose::from_rotvec(Vec3(0.01, -0.02, 0.01), Vec3(0.1, 0.0, 0.05)) * T;
    const double start = evaluate_group(pts, init, kK, kK.height).loss;
    double prev = start;
    for (int iters : {1, 2, 5, 20}) {
      OptimizerParams p;
      p.max_iterations = iters;
      const RefineResult r = refine_g_loss({pts}, init, kK, p);
      EXPECT_LE(r.loss, prev + 1e-12);
      EXPECT_NEAR(r.loss, evaluate_group(pts, r.pose, kK, kK.height).loss, 1e-9);
      prev = r.loss;
    }
    EXPECT_LT(prev, start);
  }
}

TEST(MultiSceneSolve, TooFewSelected) {
  std::vector<SceneBundle> s(1);
  s[0].pooled.resize(3);
  s[0].selected = {0, 1, 2};
  EXPECT_THROW(multi_scene_solve(s, kK, Pose(), OptimizerParams{}), Error);
}
