#include <gtest/gtest.h>

#include <algorithm>
#include <random>

#include "vpit/pillars.hpp"

using namespace vpit;

namespace {

PillarConfig small_config(double half = 8.0, double ps = 0.5) {
  PillarConfig cfg;
  cfg.grid = {-half, half, -half, half, ps, -3, 1};
  cfg.feature_channels = 4;
  return cfg;
}

PointCloud random_cloud(std::size_t n, double half, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> xy(-half, half), z(-2.5, 0.5), in(0, 1);
  PointCloud c;
  for (std::size_t i = 0; i < n; ++i) c.points.push_back({xy(rng), xy(rng), z(rng), in(rng)});
  return c;
}

}  // namespace

TEST(Voxelize, EmptyCloud) {
  const PillarSet s = voxelize({}, small_config());
  EXPECT_TRUE(s.pillars.empty());
  EXPECT_EQ(s.width, 32);
  EXPECT_EQ(s.height, 32);
}

TEST(Voxelize, SinglePointAtCenter) {
  PointCloud c;
  c.points.push_back({0.01, 0.01, 0.0, 0.5});
  const PillarSet s = voxelize(c, small_config());
  ASSERT_EQ(s.pillars.size(), 1u);
  EXPECT_EQ(s.pillars[0].points.size(), 1u);
  EXPECT_EQ(s.pillars[0].row, 16);
  EXPECT_EQ(s.pillars[0].col, 16);
  const auto& f = s.pillars[0].points[0];
  EXPECT_DOUBLE_EQ(f[0], 0.01);
  EXPECT_DOUBLE_EQ(f[3], 0.5);
  EXPECT_DOUBLE_EQ(f[4], 0.0);  // offset to point mean
  EXPECT_NEAR(f[7], 0.01 - 0.25, 1e-12);  // offset to cell center
}

TEST(Voxelize, PartitionRecount) {
  PillarConfig cfg = small_config();
  cfg.max_points_per_pillar = 100000;
  cfg.max_pillars = 100000;
  PointCloud c = random_cloud(1000, 10.0, 1);  // some fall outside
  std::size_t inside = 0;
  for (const auto& p : c.points) inside += p.x >= -8 && p.x < 8 && p.y >= -8 && p.y < 8;
  const PillarSet s = voxelize(c, cfg);
  EXPECT_EQ(s.point_count(), inside);
  for (std::size_t i = 1; i < s.pillars.size(); ++i) {
    EXPECT_LT(std::tie(s.pillars[i - 1].row, s.pillars[i - 1].col), std::tie(s.pillars[i].row, s.pillars[i].col));
  }
  // Every stored point lies inside its pillar.
  for (const auto& p : s.pillars) {
    for (const auto& f : p.points) {
      const double x = f[0], y = f[1];
      EXPECT_GE(x, -8 + p.col * 0.5 - 1e-12);
      EXPECT_LT(x, -8 + (p.col + 1) * 0.5 + 1e-12);
      EXPECT_GE(y, -8 + p.row * 0.5 - 1e-12);
      EXPECT_LT(y, -8 + (p.row + 1) * 0.5 + 1e-12);
    }
  }
}

TEST(Voxelize, ZRangeFilter) {
  PointCloud c;
  c.points.push_back({0, 0, -3.5, 0});
  c.points.push_back({0, 0, 1.0, 0});  // closed upper bound
  c.points.push_back({0, 0, -3.0, 0});
  EXPECT_EQ(voxelize(c, small_config()).point_count(), 2u);
}

TEST(Voxelize, PointCapacityKeepsFirstComers) {
  PillarConfig cfg = small_config();
  cfg.max_points_per_pillar = 3;
  PointCloud c;
  for (int i = 0; i < 6; ++i) c.points.push_back({0.1, 0.1, 0.0, i / 10.0});
  const PillarSet s = voxelize(c, cfg);
  ASSERT_EQ(s.pillars.size(), 1u);
  ASSERT_EQ(s.pillars[0].points.size(), 3u);
  for (int i = 0; i < 3; ++i) EXPECT_DOUBLE_EQ(s.pillars[0].points[i][3], i / 10.0);
}

TEST(Voxelize, PillarCapacityKeepsMostPopulated) {
  PillarConfig cfg = small_config();
  cfg.max_pillars = 2;
  PointCloud c;
  c.points.push_back({-5.1, -5.1, 0, 0});            // 1 point
  for (int i = 0; i < 3; ++i) c.points.push_back({3.1, 3.1, 0, 0});  // 3 points
  c.points.push_back({-7.9, -7.9, 0, 0});            // 1 point, lower grid index
  const PillarSet s = voxelize(c, cfg);
  ASSERT_EQ(s.pillars.size(), 2u);
  EXPECT_EQ(s.pillars[0].row, 0);  // tie broken by grid order
  EXPECT_EQ(s.pillars[1].points.size(), 3u);
}

TEST(EncodePillars, EmptyIsZero) {
  std::mt19937_64 rng(1);
  const PillarConfig cfg = small_config();
  const PseudoImage img = encode_pillars(voxelize({}, cfg), EncoderParams::random(4, rng));
  EXPECT_EQ(img.features.shape(), (nn::Shape{4, 32, 32}));
  EXPECT_EQ(img.features.max_value(), 0.0);
}

TEST(EncodePillars, OneHotPlacement) {
  EncoderParams w{nn::Tensor({4, kPointFeatures}), nn::Tensor({4})};
  for (std::size_t c = 0; c < 4; ++c) w.weight[c * kPointFeatures + c] = 1.0;  // pass x, y, z, intensity through
  PointCloud cloud;
  cloud.points.push_back({1.2, 2.3, 0.4, 0.7});
  const PseudoImage img = encode_pillars(voxelize(cloud, small_config()), w);
  std::size_t nonzero_pixels = 0;
  for (std::size_t y = 0; y < 32; ++y) {
    for (std::size_t x = 0; x < 32; ++x) {
      bool any = false;
      for (std::size_t c = 0; c < 4; ++c) any |= img.features.at(c, y, x) != 0.0;
      nonzero_pixels += any;
    }
  }
  EXPECT_EQ(nonzero_pixels, 1u);
  EXPECT_DOUBLE_EQ(img.features.at(0, 20, 18), 1.2);
  EXPECT_DOUBLE_EQ(img.features.at(1, 20, 18), 2.3);
  EXPECT_DOUBLE_EQ(img.features.at(2, 20, 18), 0.4);
  EXPECT_DOUBLE_EQ(img.features.at(3, 20, 18), 0.7);
}

TEST(EncodePillars, PermutationInvariant) {
  std::mt19937_64 rng(11);
  const PillarConfig cfg = small_config(2.0, 1.0);
  PointCloud cloud = random_cloud(200, 2.0, 4);
  const EncoderParams w = EncoderParams::random(6, rng);
  const PseudoImage ref = encode_pillars(voxelize(cloud, cfg), w);
  PillarSet s = voxelize(cloud, cfg);
  for (int trial = 0; trial < 20; ++trial) {
    for (auto& p : s.pillars) std::shuffle(p.points.begin(), p.points.end(), rng);
    EXPECT_EQ(encode_pillars(s, w).features, ref.features);
  }
}

TEST(EncodePillars, WrongWeightShapeThrows) {
  EncoderParams w{nn::Tensor({4, 8}), nn::Tensor({4})};
  EXPECT_THROW(encode_pillars(voxelize({}, small_config()), w), nn::ShapeError);
}

TEST(EncodePillars, BackwardMatchesFiniteDifferences) {
  std::mt19937_64 rng(2);
  PillarConfig cfg = small_config(1.0, 1.0);
  PointCloud cloud;
  std::uniform_real_distribution<double> u(0.05, 0.95);
  for (int i = 0; i < 5; ++i) cloud.points.push_back({u(rng) - 1, u(rng) - 1, u(rng) - 1, u(rng)});
  const PillarSet s = voxelize(cloud, cfg);
  ASSERT_EQ(s.pillars.size(), 1u);
  EncoderParams w = EncoderParams::random(3, rng);
  nn::Tensor g({3, 2, 2});
  for (double& v : g.values()) v = u(rng) - 0.5;
  auto loss = [&](const EncoderParams& p) {
    const auto img = encode_pillars(s, p);
    double l = 0;
    for (std::size_t i = 0; i < g.size(); ++i) l += g[i] * img.features[i];
    return l;
  };
  const EncoderParams grads = encode_pillars_backward(s, w, g);
  const double h = 1e-5;
  auto check = [&](nn::Tensor& param, const nn::Tensor& analytic) {
    for (std::size_t i = 0; i < param.size(); ++i) {
      const double old = param[i];
      param[i] = old + h;
      const double lp = loss(w);
      param[i] = old - h;
      const double lm = loss(w);
      param[i] = old;
      const double fd = (lp - lm) / (2 * h);
      EXPECT_NEAR(analytic[i], fd, 1e-3 * std::max(1.0, std::abs(fd)));
    }
  };
  check(w.weight, grads.weight);
  check(w.bias, grads.bias);
}

TEST(RegionPseudoImage, WholeGridMatchesGlobalVoxelization) {
  std::mt19937_64 rng(6);
  const PillarConfig cfg = small_config();
  const PointCloud cloud = random_cloud(2000, 7.99, 8);
  const EncoderParams w = EncoderParams::random(4, rng);
  const PseudoImage global = encode_pillars(voxelize(cloud, cfg), w);
  const PseudoImage region = region_pseudo_image(cloud, {16, 16, 32, 32, 0}, w, cfg);
  EXPECT_EQ(region.features, global.features);
}

TEST(RegionPseudoImage, QuarterTurnOfSymmetricSetKeepsChannelSums) {
  const PillarConfig cfg = small_config(8.0, 0.25);
  PointCloud circle;
  const int n = 64;
  for (int k = 0; k < n; ++k) {
    const double t = kTwoPi * k / n + 0.1;
    circle.points.push_back({1.5 * std::cos(t) + 0.3, 1.5 * std::sin(t) - 0.2, -1.0 + 0.1 * (k % (n / 4)), 0.5});
  }
  // Weights on rotation-invariant features only (z, intensity, z offset).
  EncoderParams w{nn::Tensor({3, kPointFeatures}), nn::Tensor({3}, 0.1)};
  w.weight[0 * kPointFeatures + 2] = 1.0;
  w.weight[1 * kPointFeatures + 3] = 2.0;
  w.weight[2 * kPointFeatures + 6] = -1.5;
  const Vec2 c = meters_to_pixels({0.3, -0.2}, cfg.grid);
  for (double a : {0.0, 0.37, -1.1}) {
    const PseudoImage p = region_pseudo_image(circle, {c.x, c.y, 16, 16, a}, w, cfg);
    const PseudoImage q = region_pseudo_image(circle, {c.x, c.y, 16, 16, a + kPi / 2}, w, cfg);
    for (std::size_t ch = 0; ch < 3; ++ch) {
      double sp = 0, sq = 0;
      for (std::size_t i = 0; i < 16 * 16; ++i) {
        sp += p.features[ch * 256 + i];
        sq += q.features[ch * 256 + i];
      }
      EXPECT_NEAR(sp, sq, 1e-9) << "alpha " << a << " channel " << ch;
    }
  }
}

TEST(RegionPseudoImage, EmptyRegionShapeDependsOnlyOnSize) {
  std::mt19937_64 rng(1);
  const PillarConfig cfg = small_config();
  const EncoderParams w = EncoderParams::random(4, rng);
  const PseudoImage a = region_pseudo_image({}, {10, 12, 7.2, 3.5, 0.0}, w, cfg);
  const PseudoImage b = region_pseudo_image(random_cloud(500, 8, 2), {20, 5, 7.2, 3.5, 2.1}, w, cfg);
  EXPECT_EQ(a.features.shape(), (nn::Shape{4, 4, 8}));
  EXPECT_EQ(b.features.shape(), a.features.shape());
  EXPECT_EQ(a.features.max_value(), 0.0);
}
