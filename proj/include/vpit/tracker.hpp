#ifndef VPIT_TRACKER_HPP
#define VPIT_TRACKER_HPP

#include <algorithm>
#include <array>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <memory>
#include <optional>
#include <stdexcept>
#include <string>
#include <tuple>
#include <vector>

#include "vpit/geometry.hpp"
#include "vpit/nn/model.hpp"
#include "vpit/nn/ops.hpp"
#include "vpit/pillars.hpp"

namespace vpit {

enum class PenaltyKind { kHann, kDirectionalGaussian };

inline const char* to_string(PenaltyKind k) { return k == PenaltyKind::kHann ? "hann" : "directional-gaussian"; }

struct TrackerConfig {
  double context_amount = 0.27;
  double search_scale = 2.0;
  int rotations_count = 3;
  double rotation_step = 0.15;
  double rotation_penalty = 0.98;
  double rotation_interpolation = 1.0;
  double window_influence = 0.85;
  int score_upscale = 8;
  std::size_t target_interp_size = 0;
  std::size_t search_interp_size = 0;
  double offset_interpolation = 0.3;
  double feature_merge_scale = 0.005;
  bool extrapolation = true;
  PenaltyKind penalty_kind = PenaltyKind::kDirectionalGaussian;
  // Gaussian standard deviations as fractions of the upscaled map size.
  double sigma_plus = 0.25;
  double sigma_minus = 0.15;
  int hash_sectors = 16;

  void validate() const {
    auto in01 = [](double v) { return v >= 0.0 && v <= 1.0; };
    if (!(context_amount > -1.0 && context_amount < 1.0)) throw std::invalid_argument("context_amount must be in (-1, 1)");
    if (!(search_scale > 1.0)) throw std::invalid_argument("search_scale must be > 1");
    if (rotations_count < 1 || rotations_count % 2 == 0) throw std::invalid_argument("rotations_count must be odd");
    if (!in01(rotation_penalty)) throw std::invalid_argument("rotation_penalty must be in [0, 1]");
    if (!in01(rotation_interpolation) || !in01(window_influence) || !in01(offset_interpolation) ||
        !in01(feature_merge_scale)) {
      throw std::invalid_argument("interpolation, window and merge parameters must be in [0, 1]");
    }
    if (score_upscale < 1) throw std::invalid_argument("score_upscale must be >= 1");
    if (!(sigma_plus > 0.0) || !(sigma_minus > 0.0)) throw std::invalid_argument("gaussian sigmas must be > 0");
    if (hash_sectors < 1) throw std::invalid_argument("hash_sectors must be >= 1");
  }
};

// ---------------------------------------------------------------------------
// Region construction

/// Adds context: c > 0 gives a square of side sqrt((w + m)(h + m)) with
/// m = c (w + h); otherwise each side is scaled by (1 - c).
inline Region2D add_context(const Region2D& r, double c) {
  Region2D out = r;
  if (c > 0.0) {
    const double m = c * (r.w + r.h);
    const double side = std::sqrt((r.w + m) * (r.h + m));
    out.w = side;
    out.h = side;
  } else {
    out.w = r.w * (1.0 - c);
    out.h = r.h * (1.0 - c);
  }
  if (!(out.w > 0.0) || !(out.h > 0.0)) throw std::invalid_argument("context produced a non-positive region side");
  return out;
}

inline Region2D make_search(const Region2D& r, double search_scale) {
  return {r.x, r.y, r.w * search_scale, r.h * search_scale, r.alpha};
}

/// 2K + 1 copies with alphas alpha0 + i * step for i in [-K, K], ordered by i.
inline std::vector<Region2D> rotated_search_set(const Region2D& search, int k, double step) {
  if (k < 0) throw std::invalid_argument("rotation half-count must be >= 0");
  std::vector<Region2D> set;
  set.reserve(2 * k + 1);
  for (int i = -k; i <= k; ++i) {
    Region2D r = search;
    r.alpha = search.alpha + i * step;
    set.push_back(r);
  }
  return set;
}

/// Region pseudo image, optional bicubic resize to interp x interp, FGN.
inline nn::Tensor extract_features(const PointCloud& cloud, const Region2D& region, const PillarConfig& pillar_cfg,
                                   const nn::SiamModel& model, std::size_t interp) {
  PseudoImage img = region_pseudo_image(cloud, region, model.encoder, pillar_cfg);
  nn::Tensor input = interp > 0 ? nn::bicubic_resize(img.features, interp, interp) : std::move(img.features);
  return nn::fgn_forward(input, model.fgn);
}

// ---------------------------------------------------------------------------
// Rotation selection

struct RotationChoice {
  std::size_t index = 0;  // position in the search set
  int offset = 0;         // i in [-K, K]
  double new_alpha = 0.0;
  double raw_max = 0.0;
};

/// Picks argmax_i Lambda_i * S(max M_i) with Lambda_0 = 1. Ties go to i = 0,
/// then to smaller |i|, then to negative i. S is the logistic function, so
/// the multiplier always penalizes regardless of the sign of the raw score.
inline RotationChoice select_rotation(const std::vector<nn::Tensor>& score_maps, const std::vector<Region2D>& search_set,
                                      double rotation_penalty, double rotation_interpolation, double prev_alpha) {
  if (score_maps.empty() || score_maps.size() != search_set.size()) {
    throw std::invalid_argument("select_rotation needs one score map per search region");
  }
  const int k = static_cast<int>(search_set.size() / 2);
  RotationChoice best;
  double best_score = -1.0;
  bool have = false;
  for (int dist = 0; dist <= k; ++dist) {
    for (int sign : {-1, 1}) {
      if (dist == 0 && sign > 0) continue;
      const int i = sign * dist;
      const std::size_t idx = static_cast<std::size_t>(i + k);
      const double raw = score_maps[idx].max_value();
      const double lambda = i == 0 ? 1.0 : rotation_penalty;
      const double score = lambda * nn::sigmoid(raw);
      if (!have || score > best_score) {
        have = true;
        best_score = score;
        best.index = idx;
        best.offset = i;
        best.raw_max = raw;
      }
    }
  }
  const double chosen = search_set[best.index].alpha;
  best.new_alpha = rotation_interpolation * chosen + (1.0 - rotation_interpolation) * prev_alpha;
  return best;
}

// ---------------------------------------------------------------------------
// Penalty maps

/// Rotation hash: sector floor(n * phi / 2pi) of phi mapped into [0, 2pi).
inline int rotation_hash(double phi, int sectors) {
  double p = std::fmod(phi, kTwoPi);
  if (p < 0.0) p += kTwoPi;
  const int k = static_cast<int>(std::floor(sectors * p / kTwoPi));
  return std::min(k, sectors - 1);
}

inline double sector_center(int sector, int sectors) { return (sector + 0.5) * kTwoPi / sectors; }

struct PenaltyMap {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> values;  // row-major, max 1
  PenaltyKind kind = PenaltyKind::kHann;
  int sector = -1;
  std::array<double, 4> precision{};  // row-major 2x2, gaussian only

  double at(std::size_t r, std::size_t c) const { return values[r * cols + c]; }
};

/// Per-tracker cache keyed by (rows, cols, kind, sector).
class PenaltyCache {
 public:
  using Key = std::tuple<std::size_t, std::size_t, int, int>;

  std::shared_ptr<const PenaltyMap> find(const Key& k) const {
    auto it = maps_.find(k);
    return it == maps_.end() ? nullptr : it->second;
  }
  void insert(const Key& k, std::shared_ptr<const PenaltyMap> m) { maps_[k] = std::move(m); }
  std::size_t size() const { return maps_.size(); }

 private:
  std::map<Key, std::shared_ptr<const PenaltyMap>> maps_;
};

namespace detail {

inline std::vector<double> hann_1d(std::size_t n) {
  std::vector<double> w(n, 1.0);
  if (n > 1) {
    for (std::size_t k = 0; k < n; ++k) w[k] = 0.5 - 0.5 * std::cos(kTwoPi * static_cast<double>(k) / (n - 1));
  }
  return w;
}

inline void normalize_max(std::vector<double>& v) {
  double mx = 0.0;
  for (double x : v) mx = std::max(mx, x);
  if (mx > 0.0) {
    for (double& x : v) x /= mx;
  }
}

}  // namespace detail

inline PenaltyMap make_hann_penalty(std::size_t rows, std::size_t cols) {
  PenaltyMap p{rows, cols, std::vector<double>(rows * cols), PenaltyKind::kHann, -1, {}};
  const auto wr = detail::hann_1d(rows);
  const auto wc = detail::hann_1d(cols);
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < cols; ++c) p.values[r * cols + c] = wr[r] * wc[c];
  }
  detail::normalize_max(p.values);
  return p;
}

/// Gaussian with variance sigma_plus along direction phi and sigma_minus
/// across it, centered on the map center. Variances are in map pixels^2.
inline PenaltyMap make_gaussian_penalty(std::size_t rows, std::size_t cols, double phi, double sigma_plus,
                                        double sigma_minus) {
  // Sigma0 = diag(sigma-, sigma+) carries sigma+ on its second axis, so the
  // rotation that aligns it with phi is phi - pi/2.
  const double rot = phi - kPi / 2.0;
  const double c = std::cos(rot), s = std::sin(rot);
  const double a = 1.0 / sigma_minus, b = 1.0 / sigma_plus;
  // R diag(a, b) R^T
  const double p00 = c * c * a + s * s * b;
  const double p01 = c * s * a - s * c * b;
  const double p11 = s * s * a + c * c * b;
  PenaltyMap p{rows, cols, std::vector<double>(rows * cols), PenaltyKind::kDirectionalGaussian, -1, {p00, p01, p01, p11}};
  const double cy = 0.5 * (static_cast<double>(rows) - 1.0);
  const double cx = 0.5 * (static_cast<double>(cols) - 1.0);
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t col = 0; col < cols; ++col) {
      const double x = static_cast<double>(col) - cx;
      const double y = static_cast<double>(r) - cy;
      p.values[r * cols + col] = std::exp(-0.5 * (x * (p00 * x + p01 * y) + y * (p01 * x + p11 * y)));
    }
  }
  detail::normalize_max(p.values);
  return p;
}

/// Returns the cached penalty map for the requested geometry. A directional
/// map is built for the center of the sector that `direction` hashes into;
/// a zero direction falls back to a Hann window.
inline std::shared_ptr<const PenaltyMap> penalty_map(PenaltyKind kind, std::size_t rows, std::size_t cols,
                                                     Vec2 direction, const TrackerConfig& cfg, PenaltyCache& cache) {
  if (rows == 0 || cols == 0) throw std::invalid_argument("penalty map size must be >= 1");
  const bool directional =
      kind == PenaltyKind::kDirectionalGaussian && (direction.x != 0.0 || direction.y != 0.0);
  const int sector = directional ? rotation_hash(std::atan2(direction.y, direction.x), cfg.hash_sectors) : -1;
  const PenaltyCache::Key key{rows, cols, directional ? 1 : 0, sector};
  if (auto hit = cache.find(key)) return hit;
  std::shared_ptr<PenaltyMap> map;
  if (directional) {
    const double size = 0.5 * static_cast<double>(rows + cols);
    const double sp = cfg.sigma_plus * size, sm = cfg.sigma_minus * size;
    map = std::make_shared<PenaltyMap>(
        make_gaussian_penalty(rows, cols, sector_center(sector, cfg.hash_sectors), sp * sp, sm * sm));
    map->sector = sector;
  } else {
    map = std::make_shared<PenaltyMap>(make_hann_penalty(rows, cols));
  }
  cache.insert(key, map);
  return map;
}

// ---------------------------------------------------------------------------
// Score post-processing

struct ScorePeak {
  nn::Tensor map;  // 1 x Hr x Hc
  std::size_t row = 0;
  std::size_t col = 0;
};

/// H = eta * P + (1 - eta) * bicubic(M, u_M). Argmax ties go to the smallest
/// row, then column.
inline ScorePeak postprocess_scores(const nn::Tensor& raw, int upscale, double window_influence,
                                    const PenaltyMap& penalty) {
  const std::size_t rows = raw.dim(1) * static_cast<std::size_t>(upscale);
  const std::size_t cols = raw.dim(2) * static_cast<std::size_t>(upscale);
  if (penalty.rows != rows || penalty.cols != cols) {
    throw std::invalid_argument("penalty map " + std::to_string(penalty.rows) + "x" + std::to_string(penalty.cols) +
                                " does not match upscaled score map " + std::to_string(rows) + "x" +
                                std::to_string(cols));
  }
  ScorePeak out;
  if (raw.dim(1) >= 2 && raw.dim(2) >= 2) {
    out.map = nn::bicubic_resize(raw, rows, cols);
  } else {
    // Degenerate map: nearest-neighbour replication.
    out.map = nn::Tensor({1, rows, cols});
    for (std::size_t r = 0; r < rows; ++r) {
      for (std::size_t c = 0; c < cols; ++c) out.map.at(0, r, c) = raw.at(0, r / upscale, c / upscale);
    }
  }
  double best = -std::numeric_limits<double>::infinity();
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < cols; ++c) {
      double& v = out.map.at(0, r, c);
      v = window_influence * penalty.at(r, c) + (1.0 - window_influence) * v;
      if (v > best) {
        best = v;
        out.row = r;
        out.col = c;
      }
    }
  }
  return out;
}

/// Offset of the argmax from the map center, scaled by extent / H_size per
/// axis and rotated by the region's alpha into the global pixel frame.
inline Vec2 decode_offset(std::size_t row, std::size_t col, std::size_t rows, std::size_t cols,
                          const Region2D& extent) {
  if (row >= rows || col >= cols) throw std::out_of_range("argmax outside the score map");
  const double lx = (static_cast<double>(col) - 0.5 * (static_cast<double>(cols) - 1.0)) * extent.w / cols;
  const double ly = (static_cast<double>(row) - 0.5 * (static_cast<double>(rows) - 1.0)) * extent.h / rows;
  return rotate({lx, ly}, extent.alpha);
}

/// Next search center under constant velocity: 2a - b.
inline Vec2 extrapolate_center(Vec2 current, Vec2 previous) {
  return {2.0 * current.x - previous.x, 2.0 * current.y - previous.y};
}

/// w * previous + (1 - w) * predicted.
inline Vec2 interpolate_offset(Vec2 previous, Vec2 predicted, double w) {
  return {w * previous.x + (1.0 - w) * predicted.x, w * previous.y + (1.0 - w) * predicted.y};
}

// ---------------------------------------------------------------------------
// Tracking state machine

struct TrackerState {
  Region2D target;  // context-augmented, global pixels
  Box3D object;     // initial box: size, z and d are reported unchanged
  nn::Tensor target_features;
  Vec2 previous_center;
  PenaltyCache penalty_cache;
  std::int64_t frames = 0;
  bool empty_init = false;
};

struct StepDiagnostics {
  nn::Tensor raw_scores;  // chosen rotation, 1 x M x N
  ScorePeak peak;
  std::shared_ptr<const PenaltyMap> penalty;
  Region2D search;
  std::vector<Region2D> search_set;
};

struct StepResult {
  Box3D box;
  double raw_score_max = 0.0;
  int rotation_index = 0;
  bool clamped = false;
  std::optional<StepDiagnostics> diagnostics;
};

inline TrackerState init_tracker(const PointCloud& cloud, const Box3D& box, const nn::SiamModel& model,
                                 const TrackerConfig& cfg, const PillarConfig& pillar_cfg) {
  cfg.validate();
  TrackerState st;
  st.object = box;
  st.target = add_context(box_to_region(box, pillar_cfg.grid), cfg.context_amount);
  st.previous_center = {st.target.x, st.target.y};
  st.empty_init = region_points(cloud, st.target, pillar_cfg.grid).points.empty();
  st.target_features = extract_features(cloud, st.target, pillar_cfg, model, cfg.target_interp_size);
  return st;
}

inline Box3D current_box(const TrackerState& st, const GridSpec& grid) {
  if (st.frames == 0) return st.object;
  const Vec2 m = pixels_to_meters({st.target.x, st.target.y}, grid);
  return {m.x, m.y, st.object.z, st.object.w, st.object.h, st.object.d, normalize_angle(st.target.alpha)};
}

inline StepResult step_tracker(TrackerState& st, const PointCloud& cloud, const nn::SiamModel& model,
                               const TrackerConfig& cfg, const PillarConfig& pillar_cfg, bool keep_diagnostics = false) {
  const GridSpec& grid = pillar_cfg.grid;
  StepResult result;

  // (1) search placement, linearly extrapolated from the last two centers.
  const Vec2 current{st.target.x, st.target.y};
  const Vec2 extrapolation{current.x - st.previous_center.x, current.y - st.previous_center.y};
  Region2D search = make_search(st.target, cfg.search_scale);
  if (cfg.extrapolation) {
    const Vec2 e = extrapolate_center(current, st.previous_center);
    search.x = e.x;
    search.y = e.y;
  }
  const double gw = grid.width(), gh = grid.height();
  const bool outside = search.x + search.w / 2 <= 0.0 || search.x - search.w / 2 >= gw ||
                       search.y + search.h / 2 <= 0.0 || search.y - search.h / 2 >= gh;
  if (outside) {
    search.x = std::clamp(search.x, 0.0, gw);
    search.y = std::clamp(search.y, 0.0, gh);
    result.clamped = true;
  }

  // (2) rotated search set and raw score maps.
  const int k = (cfg.rotations_count - 1) / 2;
  const auto search_set = rotated_search_set(search, k, cfg.rotation_step);
  std::vector<nn::Tensor> scores;
  std::vector<double> footprint_scale;
  scores.reserve(search_set.size());
  const double norm = nn::head_norm(st.target_features);
  for (const auto& region : search_set) {
    const nn::Tensor feat = extract_features(cloud, region, pillar_cfg, model, cfg.search_interp_size);
    if (feat.dim(1) < st.target_features.dim(1) || feat.dim(2) < st.target_features.dim(2)) {
      throw nn::ShapeError("search features smaller than target features; increase search_scale");
    }
    scores.push_back(nn::apply_head(nn::cross_correlate(feat, st.target_features), model.head, norm));
  }

  // (3) rotation.
  const RotationChoice choice =
      select_rotation(scores, search_set, cfg.rotation_penalty, cfg.rotation_interpolation, st.target.alpha);
  const Region2D& chosen = search_set[choice.index];
  const nn::Tensor& raw = scores[choice.index];

  // (4) penalty, upscale, decode. The score map spans M * stride feature
  // pixels of the search image, which is the extent its argmax decodes over.
  const std::size_t hr = raw.dim(1) * static_cast<std::size_t>(cfg.score_upscale);
  const std::size_t hc = raw.dim(2) * static_cast<std::size_t>(cfg.score_upscale);
  const Vec2 local_dir = rotate(extrapolation, -chosen.alpha);
  const auto penalty = penalty_map(cfg.extrapolation ? cfg.penalty_kind : PenaltyKind::kHann, hr, hc, local_dir, cfg,
                                   st.penalty_cache);
  ScorePeak peak = postprocess_scores(raw, cfg.score_upscale, cfg.window_influence, *penalty);
  const double stride = static_cast<double>(model.fgn.total_stride());
  const double sx = cfg.search_interp_size > 0 ? region_pixels(chosen.w) / double(cfg.search_interp_size) : 1.0;
  const double sy = cfg.search_interp_size > 0 ? region_pixels(chosen.h) / double(cfg.search_interp_size) : 1.0;
  const Region2D extent{chosen.x, chosen.y, raw.dim(2) * stride * sx, raw.dim(1) * stride * sy, chosen.alpha};
  const Vec2 offset = decode_offset(peak.row, peak.col, hr, hc, extent);

  // (5) offset interpolation between the previous and the predicted center.
  const Vec2 predicted{search.x + offset.x, search.y + offset.y};
  const Vec2 blended = interpolate_offset(current, predicted, cfg.offset_interpolation);
  Region2D next = st.target;
  next.x = blended.x;
  next.y = blended.y;
  next.alpha = normalize_angle(choice.new_alpha);

  st.previous_center = current;
  st.target = next;
  ++st.frames;

  // (6) target feature merge.
  if (cfg.feature_merge_scale > 0.0) {
    const nn::Tensor fresh = extract_features(cloud, st.target, pillar_cfg, model, cfg.target_interp_size);
    const double m = cfg.feature_merge_scale;
    for (std::size_t i = 0; i < fresh.size(); ++i) {
      st.target_features[i] = (1.0 - m) * st.target_features[i] + m * fresh[i];
    }
  }

  // (7) output box.
  result.box = current_box(st, grid);
  result.raw_score_max = choice.raw_max;
  result.rotation_index = choice.offset;
  if (keep_diagnostics) {
    result.diagnostics = StepDiagnostics{raw, std::move(peak), penalty, search, search_set};
  }
  return result;
}

/// Owns a tracker state plus shared read-only model parameters, and times
/// each frame with a monotonic clock.
class VpitTracker {
 public:
  VpitTracker(std::shared_ptr<const nn::SiamModel> model, TrackerConfig cfg, PillarConfig pillar_cfg)
      : model_(std::move(model)), cfg_(cfg), pillar_cfg_(std::move(pillar_cfg)) {
    cfg_.validate();
    pillar_cfg_.validate();
  }

  void init(const PointCloud& cloud, const Box3D& box) {
    state_ = init_tracker(cloud, box, *model_, cfg_, pillar_cfg_);
  }

  StepResult step(const PointCloud& cloud, bool keep_diagnostics = false) {
    if (!state_) throw std::logic_error("tracker stepped before init");
    const auto t0 = std::chrono::steady_clock::now();
    StepResult r = step_tracker(*state_, cloud, *model_, cfg_, pillar_cfg_, keep_diagnostics);
    last_ns_ = std::chrono::duration_cast<std::chrono::nanoseconds>(std::chrono::steady_clock::now() - t0).count();
    return r;
  }

  std::int64_t last_step_ns() const { return last_ns_; }
  const TrackerState& state() const { return *state_; }
  const TrackerConfig& config() const { return cfg_; }

 private:
  std::shared_ptr<const nn::SiamModel> model_;
  TrackerConfig cfg_;
  PillarConfig pillar_cfg_;
  std::optional<TrackerState> state_;
  std::int64_t last_ns_ = 0;
};

}  // namespace vpit

#endif  // VPIT_TRACKER_HPP
