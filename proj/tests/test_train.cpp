#include <gtest/gtest.h>

#include <random>
#include <set>
#include <sstream>

#include "vpit/data.hpp"
#include "vpit/nn/checkpoint.hpp"
#include "vpit/train.hpp"

using namespace vpit;
using nn::Tensor;

namespace {

PillarConfig desk_pillars() {
  PillarConfig p;
  p.grid = {-25, 25, -25, 25, 0.2, -3, 1};
  p.feature_channels = 4;
  return p;
}

nn::SiamModel small_model(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  nn::FgnConfig fc;
  fc.channels = 4;
  return nn::SiamModel::random(4, fc, rng);
}

std::vector<Sequence> tiny_data() {
  std::vector<Sequence> out;
  for (int i = 0; i < 2; ++i) {
    SceneConfig sc;
    sc.frames = 6;
    sc.clutter = 40;
    sc.density = 20;
    sc.seed = 50 + i;
    out.push_back(generate_scene(sc, "s" + std::to_string(i)));
  }
  return out;
}

bool inside_region(Vec2 p, const Region2D& r) {
  const Vec2 l = rotate({p.x - r.x, p.y - r.y}, -r.alpha);
  return std::abs(l.x) <= r.w / 2 + 1e-9 && std::abs(l.y) <= r.h / 2 + 1e-9;
}

}  // namespace

TEST(ShiftAugment, BoundsOverManyDraws) {
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> side(5, 30), a(-kPi, kPi), pos(50, 200);
  for (int i = 0; i < 10000; ++i) {
    const Region2D t{pos(rng), pos(rng), side(rng), side(rng), a(rng)};
    const Region2D s = make_search(t, 2.0);
    const Region2D out = shift_augment(s, t, rng);
    const Vec2 e = rotate({out.x - t.x, out.y - t.y}, -s.alpha);
    EXPECT_LE(std::abs(e.x), (s.w - t.w) / 2 + 1e-9);
    EXPECT_LE(std::abs(e.y), (s.h - t.h) / 2 + 1e-9);
    EXPECT_EQ(out.w, s.w);
    EXPECT_EQ(out.alpha, s.alpha);
    // The target footprint still intersects the search region: its center is inside.
    EXPECT_TRUE(inside_region({t.x, t.y}, out));
  }
}

TEST(ShiftAugment, DegenerateAxisDoesNotMove) {
  std::mt19937_64 rng(2);
  const Region2D t{10, 10, 8, 6, 0};
  const Region2D s{10, 10, 8, 12, 0};
  for (int i = 0; i < 100; ++i) EXPECT_EQ(shift_augment(s, t, rng).x, 10.0);
}

TEST(DetectionPairs, NoShiftKeepsCenter) {
  std::mt19937_64 rng(3);
  TrainConfig cfg;
  cfg.shift = false;
  const GridSpec g = desk_pillars().grid;
  auto cloud = std::make_shared<const PointCloud>();
  const auto pairs = sample_detection_pairs(cloud, {{1, 2, 0, 4, 2, 1.5, 0.3}, {100, 0, 0, 4, 2, 1.5, 0}}, cfg, {}, g, rng);
  ASSERT_EQ(pairs.size(), 1u);  // second box is off the grid
  EXPECT_EQ(pairs[0].search.x, pairs[0].target.x);
  EXPECT_EQ(pairs[0].search.y, pairs[0].target.y);
  EXPECT_NEAR(pairs[0].search.w, 2 * pairs[0].target.w, 1e-12);
  EXPECT_EQ(pairs[0].target_cloud, pairs[0].search_cloud);
}

TEST(TrackingPairs, DistinctFramesOfOneTrack) {
  std::mt19937_64 rng(4);
  TrainConfig cfg;
  cfg.samples_per_object = 200;
  const GridSpec g = desk_pillars().grid;
  auto clouds = std::make_shared<std::vector<PointCloud>>(5);
  Track tr;
  for (int f = 0; f < 5; ++f) tr.frames.push_back({f, {1.0 * f, 0, 0, 4, 2, 1.5, 0}});
  const auto pairs = sample_tracking_pairs(tr, clouds, cfg, {}, g, rng);
  ASSERT_EQ(pairs.size(), 200u);
  std::set<std::pair<const PointCloud*, const PointCloud*>> seen;
  for (const auto& p : pairs) {
    EXPECT_NE(p.target_cloud.get(), p.search_cloud.get());
    EXPECT_FALSE(p.fallback);
    seen.insert({p.target_cloud.get(), p.search_cloud.get()});
    // Target region comes from the target frame's box.
    const auto ft = p.target_cloud.get() - clouds->data();
    EXPECT_NEAR(p.target.x, box_to_region(tr.frames[static_cast<std::size_t>(ft)].box, g).x, 1e-9);
  }
  EXPECT_EQ(seen.size(), 20u);  // every ordered pair drawn
}

TEST(TrackingPairs, SingleFrameFallsBack) {
  std::mt19937_64 rng(5);
  TrainConfig cfg;
  cfg.samples_per_object = 3;
  auto clouds = std::make_shared<std::vector<PointCloud>>(1);
  Track tr;
  tr.frames.push_back({0, {0, 0, 0, 4, 2, 1.5, 0}});
  const auto pairs = sample_tracking_pairs(tr, clouds, cfg, {}, desk_pillars().grid, rng);
  ASSERT_EQ(pairs.size(), 3u);
  for (const auto& p : pairs) EXPECT_TRUE(p.fallback);
  EXPECT_THROW(sample_tracking_pairs(Track{}, clouds, cfg, {}, desk_pillars().grid, rng), std::invalid_argument);
}

TEST(LabelMap, ValuesAtKeyRadii) {
  const Tensor m = make_label_map(11, 11, {5, 5}, 2.0, 0.5, 1.0);
  EXPECT_NEAR(m.at(0, 5, 5), 1.0, 1e-9);
  EXPECT_NEAR(m.at(0, 5, 7), 0.5, 1e-9);
  EXPECT_NEAR(m.at(0, 8, 5), 0.25, 1e-9);
  EXPECT_EQ(m.at(0, 5, 9), 0.0);
  EXPECT_NEAR(m.at(0, 6, 6), 0.5 * std::sqrt(2.0) / 2 + (1 - std::sqrt(2.0) / 2), 1e-9);
}

TEST(LabelMap, RadialAndMonotone) {
  const Vec2 c{7.3, 6.1};
  const Tensor m = make_label_map(15, 16, c, 3.0, 0.2, 0.9);
  std::vector<std::pair<double, double>> dv;
  for (std::size_t y = 0; y < 15; ++y)
    for (std::size_t x = 0; x < 16; ++x) {
      const double d = std::hypot(x - c.x, y - c.y);
      dv.push_back({d, m.at(0, y, x)});
      EXPECT_GE(m.at(0, y, x), 0.0);
      EXPECT_LE(m.at(0, y, x), 1.0);
    }
  std::sort(dv.begin(), dv.end());
  for (std::size_t i = 1; i < dv.size(); ++i) EXPECT_LE(dv[i].second, dv[i - 1].second + 1e-12);
}

TEST(LabelMap, ClampedWhenBandGoesNegative) {
  const Tensor m = make_label_map(9, 9, {4, 4}, 1.0, 0.0, 1.0);
  for (double v : m.values()) EXPECT_GE(v, 0.0);
}

TEST(BalanceWeights, ClassSumsEqual) {
  std::mt19937_64 rng(6);
  std::uniform_real_distribution<double> u(0, 1);
  std::uniform_int_distribution<std::size_t> dim(1, 30);
  for (int i = 0; i < 1000; ++i) {
    const std::size_t r = dim(rng), c = dim(rng);
    const Tensor m = make_label_map(r, c, {u(rng) * c, u(rng) * r}, 1 + 3 * u(rng), 0.5, 1.0);
    const Tensor w = balance_weights(m);
    double pos = 0, neg = 0;
    std::size_t np = 0;
    for (std::size_t k = 0; k < m.size(); ++k) {
      (m[k] > 0 ? pos : neg) += w[k];
      np += m[k] > 0;
    }
    if (np == 0 || np == m.size()) continue;
    EXPECT_LT(std::abs(pos - neg), 1e-9);
  }
}

TEST(BalanceWeights, SingleClassIsUniform) {
  EXPECT_EQ(balance_weights(Tensor({1, 4, 4})), Tensor({1, 4, 4}, 1.0));
  EXPECT_EQ(balance_weights(Tensor({1, 2, 2}, 0.7)), Tensor({1, 2, 2}, 1.0));
}

TEST(LabelCenter, CenteredTargetHitsMapCenter) {
  const Vec2 c = label_center({50, 60, 10, 10, 0.4}, {50, 60, 20, 20, 0.4}, 9, 13, 1, 1);
  EXPECT_NEAR(c.x, 6.0, 1e-12);
  EXPECT_NEAR(c.y, 4.0, 1e-12);
  // Offset along the search x axis by 3 pixels with 2 pixels per map cell.
  const Vec2 o = label_center({50 + 3 * std::cos(0.4), 60 + 3 * std::sin(0.4), 10, 10, 0.4}, {50, 60, 20, 20, 0.4}, 9, 13,
                              2, 2);
  EXPECT_NEAR(o.x, 7.5, 1e-12);
  EXPECT_NEAR(o.y, 4.0, 1e-12);
}

TEST(GlobalAugmentation, CloudAndRegionMoveTogether) {
  const GridSpec g = desk_pillars().grid;
  const Region2D r{140, 90, 20, 10, 0.3};
  const Vec2 m = pixels_to_meters({r.x, r.y}, g);
  PointCloud c;
  c.points.push_back({m.x, m.y, 0.0, 1.0});
  const PointCloud tc = transform_cloud(c, 0.07, {0.3, -0.2});
  const Region2D tr = transform_region(r, 0.07, {0.3, -0.2}, g);
  const Vec2 p = meters_to_pixels({tc.points[0].x, tc.points[0].y}, g);
  EXPECT_NEAR(p.x, tr.x, 1e-9);
  EXPECT_NEAR(p.y, tr.y, 1e-9);
  EXPECT_NEAR(tr.alpha, 0.37, 1e-15);
}

TEST(MixSeed, DeterministicAndSaltSensitive) {
  EXPECT_EQ(mix_seed(7, 3), mix_seed(7, 3));
  EXPECT_NE(mix_seed(7, 3), mix_seed(7, 4));
  EXPECT_NE(mix_seed(7, 3), mix_seed(8, 3));
}

TEST(TrainConfig, Validation) {
  TrainConfig c;
  EXPECT_NO_THROW(c.validate());
  c.label_radius = 0.5;
  EXPECT_THROW(c.validate(), std::invalid_argument);
  c = {};
  c.v_min = 0.8;
  c.v_max = 0.5;
  EXPECT_THROW(c.validate(), std::invalid_argument);
}

TEST(EpochSamples, PureFunctionOfSeedAndEpoch) {
  const auto data = tiny_data();
  TrainConfig cfg;
  cfg.samples_per_object = 4;
  const GridSpec g = desk_pillars().grid;
  const auto a = epoch_samples(data, cfg, {}, g, 3);
  const auto b = epoch_samples(data, cfg, {}, g, 3);
  const auto c = epoch_samples(data, cfg, {}, g, 4);
  ASSERT_EQ(a.size(), b.size());
  ASSERT_FALSE(a.empty());
  bool differs = false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a[i].search.x, b[i].search.x);
    EXPECT_EQ(a[i].target_cloud, b[i].target_cloud);
    differs |= i < c.size() && a[i].search.x != c[i].search.x;
  }
  EXPECT_TRUE(differs);
}

TEST(TrainStep, DescendsOnOneSample) {
  const PillarConfig pc = desk_pillars();
  nn::SiamModel model = small_model(7);
  nn::AdamState adam;
  TrainConfig cfg;
  cfg.lr = 1e-4;
  cfg.global_rotation = cfg.global_translation = false;
  const auto data = tiny_data();
  const auto pool = epoch_samples(data, cfg, {}, pc.grid, 0);
  std::mt19937_64 rng(1);
  double prev = train_step(pool[0], model, adam, cfg, {}, pc, rng).loss;
  for (int i = 0; i < 30; ++i) {
    const double l = train_step(pool[0], model, adam, cfg, {}, pc, rng).loss;
    EXPECT_LT(l, prev) << "step " << i + 2;
    prev = l;
  }
  EXPECT_EQ(adam.step, 31);
  for (const auto* p : nn::parameters(static_cast<const nn::SiamModel&>(model))) {
    for (double v : p->values()) EXPECT_EQ(v, static_cast<double>(static_cast<float>(v)));
  }
}

TEST(TrainLoop, ResumeMatchesUninterruptedRun) {
  const PillarConfig pc = desk_pillars();
  const auto data = tiny_data();
  TrainConfig cfg;
  cfg.steps = 8;
  cfg.lr = 1e-3;
  cfg.samples_per_object = 2;
  cfg.checkpoint_every = 0;

  nn::SiamModel straight = small_model(9);
  nn::AdamState sa;
  std::vector<double> losses;
  train_loop(data, straight, sa, cfg, {}, pc, {[&](std::int64_t, double l) { losses.push_back(l); }, {}});
  ASSERT_EQ(losses.size(), 8u);

  // Interrupt after 5 steps, round-trip through a checkpoint, continue.
  TrainConfig half = cfg;
  half.steps = 5;
  nn::SiamModel m = small_model(9);
  nn::AdamState st;
  train_loop(data, m, st, half, {}, pc);
  nn::Checkpoint ck;
  nn::add_model_blobs(ck, m);
  nn::add_optimizer_blobs(ck, m, st);
  std::stringstream buf;
  nn::write_checkpoint(buf, ck);
  const nn::Checkpoint back = nn::read_checkpoint(buf);
  nn::SiamModel resumed = nn::model_from_checkpoint(back);
  nn::AdamState rs = nn::optimizer_from_checkpoint(back, resumed);
  std::vector<double> tail;
  train_loop(data, resumed, rs, cfg, {}, pc, {[&](std::int64_t, double l) { tail.push_back(l); }, {}});
  ASSERT_EQ(tail.size(), 3u);
  for (std::size_t i = 0; i < 3; ++i) EXPECT_EQ(tail[i], losses[5 + i]);
  const auto a = nn::parameters(static_cast<const nn::SiamModel&>(straight));
  const auto b = nn::parameters(static_cast<const nn::SiamModel&>(resumed));
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_EQ(*a[i], *b[i]);
}

TEST(TrainLoop, CheckpointHookCadence) {
  const PillarConfig pc = desk_pillars();
  TrainConfig cfg;
  cfg.steps = 7;
  cfg.checkpoint_every = 3;
  cfg.samples_per_object = 1;
  nn::SiamModel m = small_model(10);
  nn::AdamState st;
  std::vector<std::int64_t> at;
  train_loop(tiny_data(), m, st, cfg, {}, pc, {{}, [&](std::int64_t s, const nn::SiamModel&, const nn::AdamState&) {
                                                 at.push_back(s);
                                               }});
  EXPECT_EQ(at, (std::vector<std::int64_t>{3, 6, 7}));
}

TEST(TrainLoop, EmptyDataThrows) {
  nn::SiamModel m = small_model(11);
  nn::AdamState st;
  TrainConfig cfg;
  cfg.steps = 1;
  EXPECT_THROW(train_loop({}, m, st, cfg, {}, desk_pillars()), std::invalid_argument);
}
