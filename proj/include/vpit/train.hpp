#ifndef VPIT_TRAIN_HPP
#define VPIT_TRAIN_HPP

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "vpit/data.hpp"
#include "vpit/geometry.hpp"
#include "vpit/nn/adam.hpp"
#include "vpit/nn/checkpoint.hpp"
#include "vpit/nn/model.hpp"
#include "vpit/pillars.hpp"
#include "vpit/tracker.hpp"

namespace vpit {

struct TrainConfig {
  std::int64_t steps = 64000;
  double lr = 1e-5;
  double label_radius = 2.0;
  double v_min = 0.5;
  double v_max = 1.0;
  int samples_per_object = 8;
  bool detection_pairs = true;  // add one detection-style frame per sequence and epoch
  bool shift = true;
  bool global_rotation = true;
  bool global_translation = true;
  double max_rotation = 5.0 * kPi / 180.0;  // radians
  double max_translation = 0.5;             // meters
  std::int64_t checkpoint_every = 500;
  std::uint64_t seed = 1;

  void validate() const {
    if (steps < 0) throw std::invalid_argument("steps must be >= 0");
    if (!(lr >= 0.0)) throw std::invalid_argument("lr must be >= 0");
    if (!(label_radius >= 1.0)) throw std::invalid_argument("label_radius must be >= 1");
    if (!(v_min >= 0.0 && v_min <= v_max && v_max <= 1.0)) throw std::invalid_argument("need 0 <= v_min <= v_max <= 1");
    if (samples_per_object < 1) throw std::invalid_argument("samples_per_object must be >= 1");
    if (checkpoint_every < 0) throw std::invalid_argument("checkpoint_every must be >= 0");
  }
};

struct TrainSample {
  std::shared_ptr<const PointCloud> target_cloud;
  Region2D target;
  std::shared_ptr<const PointCloud> search_cloud;
  Region2D search;
  bool fallback = false;  // tracking pair degraded to a detection pair
};

/// Moves the search center to target center + eps with each eps component
/// uniform in [-(s - t)/2, (s - t)/2] along the region axes.
template <class Rng>
Region2D shift_augment(const Region2D& search, const Region2D& target, Rng& rng) {
  auto draw = [&](double s, double t) {
    const double half = std::max(0.0, (s - t) / 2.0);
    return half > 0.0 ? std::uniform_real_distribution<double>(-half, half)(rng) : 0.0;
  };
  const double ex = draw(search.w, target.w);
  const double ey = draw(search.h, target.h);
  const Vec2 e = rotate({ex, ey}, search.alpha);
  Region2D out = search;
  out.x = target.x + e.x;
  out.y = target.y + e.y;
  return out;
}

/// One sample per box: t = context(box), s = shift(search(t), t).
template <class Rng>
std::vector<TrainSample> sample_detection_pairs(const std::shared_ptr<const PointCloud>& cloud,
                                                const std::vector<Box3D>& boxes, const TrainConfig& cfg,
                                                const TrackerConfig& tcfg, const GridSpec& grid, Rng& rng) {
  std::vector<TrainSample> out;
  for (const Box3D& b : boxes) {
    if (!footprint_intersects_grid(b, grid)) continue;
    const Region2D t = add_context(box_to_region(b, grid), tcfg.context_amount);
    const Region2D s = make_search(t, tcfg.search_scale);
    out.push_back({cloud, t, cloud, cfg.shift ? shift_augment(s, t, rng) : s, false});
  }
  return out;
}

/// samples_per_object pairs (f_t != f_s) drawn uniformly from the track.
/// `clouds` is indexed by frame id. A single-frame track yields detection
/// pairs flagged as fallback.
template <class Rng>
std::vector<TrainSample> sample_tracking_pairs(const Track& track,
                                               const std::shared_ptr<const std::vector<PointCloud>>& clouds,
                                               const TrainConfig& cfg, const TrackerConfig& tcfg,
                                               const GridSpec& grid, Rng& rng) {
  if (track.frames.empty()) throw std::invalid_argument("track has no frames");
  auto cloud_at = [&](std::size_t k) {
    const auto f = static_cast<std::size_t>(track.frames[k].frame_id);
    return std::shared_ptr<const PointCloud>(clouds, &clouds->at(f));
  };
  std::vector<TrainSample> out;
  const std::size_t n = track.frames.size();
  for (int k = 0; k < cfg.samples_per_object; ++k) {
    if (n < 2) {
      auto s = sample_detection_pairs(cloud_at(0), {track.frames[0].box}, cfg, tcfg, grid, rng);
      for (auto& x : s) x.fallback = true;
      out.insert(out.end(), s.begin(), s.end());
      continue;
    }
    std::uniform_int_distribution<std::size_t> pick(0, n - 1);
    const std::size_t ft = pick(rng);
    std::size_t fs = std::uniform_int_distribution<std::size_t>(0, n - 2)(rng);
    if (fs >= ft) ++fs;
    const Region2D t = add_context(box_to_region(track.frames[ft].box, grid), tcfg.context_amount);
    const Region2D ts = add_context(box_to_region(track.frames[fs].box, grid), tcfg.context_amount);
    const Region2D s = make_search(ts, tcfg.search_scale);
    out.push_back({cloud_at(ft), t, cloud_at(fs), cfg.shift ? shift_augment(s, ts, rng) : s, false});
  }
  return out;
}

/// v(d) = v_min d / r + v_max (1 - d / r) for d <= r + 1, else 0, clamped
/// to [0, 1]. `center` is (col, row) in map pixels.
inline nn::Tensor make_label_map(std::size_t rows, std::size_t cols, Vec2 center, double r, double v_min,
                                 double v_max) {
  nn::Tensor m({1, rows, cols});
  for (std::size_t y = 0; y < rows; ++y) {
    for (std::size_t x = 0; x < cols; ++x) {
      const double d = std::hypot(static_cast<double>(x) - center.x, static_cast<double>(y) - center.y);
      if (d > r + 1.0) continue;
      m.at(0, y, x) = std::clamp(v_min * d / r + v_max * (1.0 - d / r), 0.0, 1.0);
    }
  }
  return m;
}

/// Constant per-class weights with sum over positives (v > 0) equal to the
/// sum over negatives, both N / 2. Single-class maps get uniform weight 1.
inline nn::Tensor balance_weights(const nn::Tensor& labels) {
  std::size_t pos = 0;
  for (double v : labels.values()) pos += v > 0.0;
  const std::size_t n = labels.size();
  const std::size_t neg = n - pos;
  nn::Tensor w(labels.shape(), 1.0);
  if (pos == 0 || neg == 0) return w;
  const double wp = 0.5 * static_cast<double>(n) / static_cast<double>(pos);
  const double wn = 0.5 * static_cast<double>(n) / static_cast<double>(neg);
  for (std::size_t i = 0; i < n; ++i) w[i] = labels[i] > 0.0 ? wp : wn;
  return w;
}

/// Rotates the cloud about the sensor origin and translates it. Regions
/// follow through transform_region.
inline PointCloud transform_cloud(const PointCloud& cloud, double angle, Vec2 shift) {
  PointCloud out;
  out.frame_id = cloud.frame_id;
  out.points.reserve(cloud.points.size());
  const double c = std::cos(angle), s = std::sin(angle);
  for (const auto& p : cloud.points) {
    out.points.push_back({c * p.x - s * p.y + shift.x, s * p.x + c * p.y + shift.y, p.z, p.intensity});
  }
  return out;
}

inline Region2D transform_region(const Region2D& r, double angle, Vec2 shift, const GridSpec& grid) {
  const Vec2 m = pixels_to_meters({r.x, r.y}, grid);
  const Vec2 q = rotate(m, angle);
  const Vec2 p = meters_to_pixels({q.x + shift.x, q.y + shift.y}, grid);
  return {p.x, p.y, r.w, r.h, r.alpha + angle};
}

/// Position of the target center on the score map of `search`, in map
/// pixels (col, row). One map pixel spans `cell` search-image pixels.
inline Vec2 label_center(const Region2D& target, const Region2D& search, std::size_t rows, std::size_t cols,
                         double cell_x, double cell_y) {
  const Vec2 local = rotate({target.x - search.x, target.y - search.y}, -search.alpha);
  return {0.5 * (static_cast<double>(cols) - 1.0) + local.x / cell_x,
          0.5 * (static_cast<double>(rows) - 1.0) + local.y / cell_y};
}

struct StepStats {
  double loss = 0.0;
  std::size_t rows = 0;
  std::size_t cols = 0;
};

/// Forward, weighted BCE, backward and one Adam update. Parameters and
/// optimizer moments are rounded to binary32 afterwards, the precision at
/// which checkpoints store them.
template <class Rng>
StepStats train_step(const TrainSample& sample, nn::SiamModel& model, nn::AdamState& adam, const TrainConfig& cfg,
                     const TrackerConfig& tcfg, const PillarConfig& pcfg, Rng& rng) {
  Region2D t = sample.target, s = sample.search;
  PillarSet tp, sp;
  if (cfg.global_rotation || cfg.global_translation) {
    const double angle =
        cfg.global_rotation ? std::uniform_real_distribution<double>(-cfg.max_rotation, cfg.max_rotation)(rng) : 0.0;
    Vec2 shift;
    if (cfg.global_translation) {
      std::uniform_real_distribution<double> u(-cfg.max_translation, cfg.max_translation);
      shift.x = u(rng);
      shift.y = u(rng);
    }
    t = transform_region(t, angle, shift, pcfg.grid);
    s = transform_region(s, angle, shift, pcfg.grid);
    const PointCloud tc = transform_cloud(*sample.target_cloud, angle, shift);
    tp = region_pillars(tc, t, pcfg);
    sp = sample.search_cloud == sample.target_cloud ? region_pillars(tc, s, pcfg)
                                                    : region_pillars(transform_cloud(*sample.search_cloud, angle, shift), s, pcfg);
  } else {
    tp = region_pillars(*sample.target_cloud, t, pcfg);
    sp = region_pillars(*sample.search_cloud, s, pcfg);
  }

  nn::SiamGraph graph;
  const nn::Tensor& score = graph.forward(model, std::move(tp), std::move(sp), tcfg.target_interp_size,
                                          tcfg.search_interp_size);
  const std::size_t rows = score.dim(1), cols = score.dim(2);
  const double stride = static_cast<double>(model.fgn.total_stride());
  const double sx = tcfg.search_interp_size > 0 ? region_pixels(s.w) / double(tcfg.search_interp_size) : 1.0;
  const double sy = tcfg.search_interp_size > 0 ? region_pixels(s.h) / double(tcfg.search_interp_size) : 1.0;
  const Vec2 c = label_center(t, s, rows, cols, stride * sx, stride * sy);
  const nn::Tensor labels = make_label_map(rows, cols, c, cfg.label_radius, cfg.v_min, cfg.v_max);
  const nn::Tensor weights = balance_weights(labels);
  const nn::BceResult bce = nn::weighted_bce(score, labels, weights);
  nn::SiamModel grads = graph.backward(bce.grad);

  std::vector<nn::Tensor*> params;
  std::vector<const nn::Tensor*> gs;
  for (auto& p : nn::parameters(model)) params.push_back(p.tensor);
  for (auto& p : nn::parameters(grads)) gs.push_back(p.tensor);
  nn::adam_step(params, gs, adam, {cfg.lr});
  nn::quantize_f32(model);
  for (auto& slot : adam.slots) {
    nn::quantize_f32(slot.m);
    nn::quantize_f32(slot.v);
  }
  return {bce.loss, rows, cols};
}

inline std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t salt) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(salt), static_cast<std::uint32_t>(salt >> 32)};
  std::uint32_t words[2];
  seq.generate(words, words + 2);
  return (static_cast<std::uint64_t>(words[0]) << 32) | words[1];
}

/// Shuffled sample pool of one epoch, a pure function of (data, seed, epoch).
inline std::vector<TrainSample> epoch_samples(const std::vector<Sequence>& data, const TrainConfig& cfg,
                                              const TrackerConfig& tcfg, const GridSpec& grid, std::uint64_t epoch) {
  std::mt19937_64 rng(mix_seed(cfg.seed, 2 * epoch + 1));
  std::vector<TrainSample> pool;
  for (const Sequence& seq : data) {
    if (seq.frames() == 0) continue;
    for (const Track& tr : tracks_of(seq)) {
      auto s = sample_tracking_pairs(tr, seq.clouds, cfg, tcfg, grid, rng);
      pool.insert(pool.end(), s.begin(), s.end());
    }
    if (cfg.detection_pairs) {
      const std::size_t f = std::uniform_int_distribution<std::size_t>(0, seq.frames() - 1)(rng);
      std::vector<Box3D> boxes;
      for (const auto& l : seq.labels[f]) boxes.push_back(l.box);
      auto s = sample_detection_pairs(std::shared_ptr<const PointCloud>(seq.clouds, &seq.clouds->at(f)), boxes, cfg,
                                      tcfg, grid, rng);
      pool.insert(pool.end(), s.begin(), s.end());
    }
  }
  std::shuffle(pool.begin(), pool.end(), rng);
  return pool;
}

struct TrainHooks {
  std::function<void(std::int64_t step, double loss)> on_loss;
  std::function<void(std::int64_t step, const nn::SiamModel&, const nn::AdamState&)> on_checkpoint;
};

/// Runs steps adam.step + 1 .. cfg.steps. Step k uses sample k - 1 of the
/// epoch sequence and an augmentation generator seeded by (seed, k), so a
/// run resumed from a checkpoint continues exactly as the uninterrupted one.
inline void train_loop(const std::vector<Sequence>& data, nn::SiamModel& model, nn::AdamState& adam,
                       const TrainConfig& cfg, const TrackerConfig& tcfg, const PillarConfig& pcfg,
                       const TrainHooks& hooks = {}) {
  cfg.validate();
  tcfg.validate();
  std::uint64_t epoch = 0;
  std::vector<TrainSample> pool = epoch_samples(data, cfg, tcfg, pcfg.grid, epoch);
  if (pool.empty()) throw std::invalid_argument("training data yields no samples");
  std::int64_t offset = 0;  // index of pool[0] in the global sample sequence
  for (std::int64_t step = adam.step + 1; step <= cfg.steps; ++step) {
    const std::int64_t index = step - 1;
    while (index >= offset + static_cast<std::int64_t>(pool.size())) {
      offset += static_cast<std::int64_t>(pool.size());
      pool = epoch_samples(data, cfg, tcfg, pcfg.grid, ++epoch);
      if (pool.empty()) throw std::invalid_argument("training data yields no samples");
    }
    std::mt19937_64 rng(mix_seed(cfg.seed, 2 * static_cast<std::uint64_t>(step)));
    const StepStats st = train_step(pool[static_cast<std::size_t>(index - offset)], model, adam, cfg, tcfg, pcfg, rng);
    if (hooks.on_loss) hooks.on_loss(step, st.loss);
    if (hooks.on_checkpoint && ((cfg.checkpoint_every > 0 && step % cfg.checkpoint_every == 0) || step == cfg.steps)) {
      hooks.on_checkpoint(step, model, adam);
    }
  }
}

}  // namespace vpit

#endif  // VPIT_TRAIN_HPP
