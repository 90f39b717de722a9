#ifndef VPIT_PILLARS_HPP
#define VPIT_PILLARS_HPP

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <random>
#include <stdexcept>
#include <tuple>
#include <vector>

#include "vpit/geometry.hpp"
#include "vpit/nn/tensor.hpp"

namespace vpit {

inline constexpr std::size_t kPointFeatures = 9;

struct PillarConfig {
  GridSpec grid;
  std::size_t max_points_per_pillar = 32;
  std::size_t max_pillars = 12000;
  std::size_t feature_channels = 32;

  void validate() const {
    grid.validate();
    if (max_points_per_pillar < 1 || max_pillars < 1 || feature_channels < 1) {
      throw std::invalid_argument("pillar capacities and feature_channels must be >= 1");
    }
  }
};

/// Augmented point: x, y, z, intensity, offsets to the pillar point mean (3),
/// offsets to the pillar cell center (2). x and y are relative to the grid center.
using PointFeature = std::array<double, kPointFeatures>;

struct Pillar {
  int row = 0;
  int col = 0;
  std::vector<PointFeature> points;
};

struct PillarSet {
  GridSpec grid;
  int width = 0;
  int height = 0;
  std::vector<Pillar> pillars;  // sorted by (row, col)

  std::size_t point_count() const {
    std::size_t n = 0;
    for (const auto& p : pillars) n += p.points.size();
    return n;
  }
};

/// Weights of the per-point linear stage: weight is C x 9, bias is C.
struct EncoderParams {
  nn::Tensor weight;
  nn::Tensor bias;

  std::size_t channels() const { return weight.empty() ? 0 : weight.dim(0); }

  template <class Rng>
  static EncoderParams random(std::size_t channels, Rng& rng, double scale = 0.0) {
    if (scale <= 0.0) scale = std::sqrt(2.0 / static_cast<double>(kPointFeatures));
    std::normal_distribution<double> normal(0.0, scale);
    EncoderParams p{nn::Tensor({channels, kPointFeatures}), nn::Tensor({channels})};
    for (double& v : p.weight.values()) v = normal(rng);
    // Small positive bias keeps occupied pillars distinguishable from empty ones.
    for (double& v : p.bias.values()) v = 0.1;
    return p;
  }
};

struct PseudoImage {
  nn::Tensor features;  // C x H x W
  GridSpec grid;

  std::size_t channels() const { return features.dim(0); }
  std::size_t height() const { return features.dim(1); }
  std::size_t width() const { return features.dim(2); }
};

/// Bins points into vertical pillars. Points outside [min, max) in x/y or
/// [z_min, z_max] are ignored. Per-pillar overflow keeps the first points in
/// input order; pillar overflow keeps the most populated pillars, ties broken
/// by grid index.
inline PillarSet voxelize(const PointCloud& cloud, const PillarConfig& cfg) {
  const GridSpec& g = cfg.grid;
  PillarSet out;
  out.grid = g;
  out.width = g.width();
  out.height = g.height();
  const double cx = 0.5 * (g.x_min + g.x_max);
  const double cy = 0.5 * (g.y_min + g.y_max);

  std::vector<int> cell_to_pillar(static_cast<std::size_t>(out.width) * out.height, -1);
  std::vector<Pillar> pillars;
  std::vector<std::vector<Point3D>> raw;
  for (const Point3D& p : cloud.points) {
    if (p.z < g.z_min || p.z > g.z_max) continue;
    const double fx = (p.x - g.x_min) / g.pillar_size;
    const double fy = (p.y - g.y_min) / g.pillar_size;
    if (!(fx >= 0.0) || !(fy >= 0.0)) continue;
    const int col = static_cast<int>(std::floor(fx));
    const int row = static_cast<int>(std::floor(fy));
    if (col >= out.width || row >= out.height) continue;
    const std::size_t cell = static_cast<std::size_t>(row) * out.width + col;
    int& idx = cell_to_pillar[cell];
    if (idx < 0) {
      idx = static_cast<int>(pillars.size());
      pillars.push_back({row, col, {}});
      raw.emplace_back();
    }
    if (raw[idx].size() < cfg.max_points_per_pillar) raw[idx].push_back(p);
  }

  std::vector<std::size_t> order(pillars.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  auto grid_less = [&](std::size_t a, std::size_t b) {
    return std::tie(pillars[a].row, pillars[a].col) < std::tie(pillars[b].row, pillars[b].col);
  };
  if (order.size() > cfg.max_pillars) {
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
      if (raw[a].size() != raw[b].size()) return raw[a].size() > raw[b].size();
      return grid_less(a, b);
    });
    order.resize(cfg.max_pillars);
  }
  std::sort(order.begin(), order.end(), grid_less);

  out.pillars.reserve(order.size());
  for (std::size_t idx : order) {
    Pillar pillar{pillars[idx].row, pillars[idx].col, {}};
    const auto& pts = raw[idx];
    double mx = 0, my = 0, mz = 0;
    for (const auto& p : pts) {
      mx += p.x;
      my += p.y;
      mz += p.z;
    }
    const double inv = 1.0 / static_cast<double>(pts.size());
    mx *= inv;
    my *= inv;
    mz *= inv;
    const double cell_x = g.x_min + (pillar.col + 0.5) * g.pillar_size;
    const double cell_y = g.y_min + (pillar.row + 0.5) * g.pillar_size;
    pillar.points.reserve(pts.size());
    for (const auto& p : pts) {
      pillar.points.push_back(
          {p.x - cx, p.y - cy, p.z, p.intensity, p.x - mx, p.y - my, p.z - mz, p.x - cell_x, p.y - cell_y});
    }
    out.pillars.push_back(std::move(pillar));
  }
  return out;
}

inline void check_encoder(const EncoderParams& w) {
  if (w.weight.rank() != 2 || w.weight.dim(1) != kPointFeatures || w.bias.size() != w.weight.dim(0)) {
    throw nn::ShapeError("encoder weights must be C x " + std::to_string(kPointFeatures) + " with C biases, got " +
                         nn::shape_str(w.weight.shape()) + " / " + nn::shape_str(w.bias.shape()));
  }
}

namespace detail {
inline double encoder_preact(const EncoderParams& w, std::size_t c, const PointFeature& f) {
  const double* row = w.weight.data() + c * kPointFeatures;
  double acc = w.bias[c];
  for (std::size_t k = 0; k < kPointFeatures; ++k) acc += row[k] * f[k];
  return acc;
}
}  // namespace detail

/// Per point linear + ReLU, channelwise max over each pillar, scattered into
/// a C x H x W image. Empty pixels are zero.
inline PseudoImage encode_pillars(const PillarSet& pillars, const EncoderParams& weights) {
  check_encoder(weights);
  const std::size_t c = weights.channels();
  const std::size_t h = static_cast<std::size_t>(pillars.height);
  const std::size_t w = static_cast<std::size_t>(pillars.width);
  PseudoImage img{nn::Tensor({c, h, w}), pillars.grid};
  for (const Pillar& p : pillars.pillars) {
    for (std::size_t ch = 0; ch < c; ++ch) {
      double best = 0.0;
      for (const auto& f : p.points) best = std::max(best, detail::encoder_preact(weights, ch, f));
      img.features.at(ch, p.row, p.col) = best;
    }
  }
  return img;
}

/// Gradient of encode_pillars w.r.t. the encoder weights, given dL/dImage.
/// The max routes the gradient to the first maximizing point of each channel.
inline EncoderParams encode_pillars_backward(const PillarSet& pillars, const EncoderParams& weights,
                                             const nn::Tensor& grad_image) {
  check_encoder(weights);
  EncoderParams grads{nn::Tensor(weights.weight.shape()), nn::Tensor(weights.bias.shape())};
  const std::size_t c = weights.channels();
  for (const Pillar& p : pillars.pillars) {
    for (std::size_t ch = 0; ch < c; ++ch) {
      const double g = grad_image.at(ch, p.row, p.col);
      if (g == 0.0) continue;
      double best = 0.0;
      const PointFeature* arg = nullptr;
      for (const auto& f : p.points) {
        const double v = detail::encoder_preact(weights, ch, f);
        if (v > best) {
          best = v;
          arg = &f;
        }
      }
      if (arg == nullptr) continue;
      double* row = grads.weight.data() + ch * kPointFeatures;
      for (std::size_t k = 0; k < kPointFeatures; ++k) row[k] += g * (*arg)[k];
      grads.bias[ch] += g;
    }
  }
  return grads;
}

/// Integer pixel extent of a region image. Depends only on (w, h).
inline int region_pixels(double side) { return std::max(1, static_cast<int>(std::ceil(side - 1e-9))); }

/// Region-aligned grid in the region's local frame, centered at the origin.
inline GridSpec region_grid(const Region2D& region, const GridSpec& grid) {
  const double ps = grid.pillar_size;
  const double half_w = 0.5 * region_pixels(region.w) * ps;
  const double half_h = 0.5 * region_pixels(region.h) * ps;
  return {-half_w, half_w, -half_h, half_h, ps, grid.z_min, grid.z_max};
}

/// Points of `cloud` inside `region`, expressed in the region frame: rotated
/// by -alpha about the region center.
inline PointCloud region_points(const PointCloud& cloud, const Region2D& region, const GridSpec& grid) {
  const double ps = grid.pillar_size;
  const Vec2 center = pixels_to_meters({region.x, region.y}, grid);
  const double half_w = 0.5 * region.w * ps;
  const double half_h = 0.5 * region.h * ps;
  const double reach2 = half_w * half_w + half_h * half_h;
  const double c = std::cos(-region.alpha);
  const double s = std::sin(-region.alpha);
  PointCloud local;
  local.frame_id = cloud.frame_id;
  for (const Point3D& p : cloud.points) {
    const double dx = p.x - center.x;
    const double dy = p.y - center.y;
    if (dx * dx + dy * dy > reach2) continue;
    const double lx = c * dx - s * dy;
    const double ly = s * dx + c * dy;
    if (std::abs(lx) > half_w || std::abs(ly) > half_h) continue;
    local.points.push_back({lx, ly, p.z, p.intensity});
  }
  return local;
}

/// Re-voxelizes the content of a rotated region on its own aligned grid of
/// ceil(w) x ceil(h) pillars.
inline PillarSet region_pillars(const PointCloud& cloud, const Region2D& region, const PillarConfig& cfg) {
  PillarConfig local = cfg;
  local.grid = region_grid(region, cfg.grid);
  return voxelize(region_points(cloud, region, cfg.grid), local);
}

inline PseudoImage region_pseudo_image(const PointCloud& cloud, const Region2D& region, const EncoderParams& weights,
                                       const PillarConfig& cfg) {
  return encode_pillars(region_pillars(cloud, region, cfg), weights);
}

}  // namespace vpit

#endif  // VPIT_PILLARS_HPP
