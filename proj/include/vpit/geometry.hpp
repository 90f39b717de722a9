#ifndef VPIT_GEOMETRY_HPP
#define VPIT_GEOMETRY_HPP

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <stdexcept>
#include <string>
#include <vector>

namespace vpit {

inline constexpr double kPi = std::numbers::pi;
inline constexpr double kTwoPi = 2.0 * std::numbers::pi;

struct Point3D {
  double x = 0.0;
  double y = 0.0;
  double z = 0.0;
  double intensity = 0.0;
};

struct PointCloud {
  std::vector<Point3D> points;
  std::int64_t frame_id = 0;
};

struct Vec2 {
  double x = 0.0;
  double y = 0.0;
};

/// Oriented box. `w` is the length along the heading, `h` the footprint
/// extent across it, `d` the vertical extent. (x, y, z) is the center.
struct Box3D {
  double x = 0.0;
  double y = 0.0;
  double z = 0.0;
  double w = 1.0;
  double h = 1.0;
  double d = 1.0;
  double alpha = 0.0;
};

/// Rectangle in pseudo-image pixel space. The center is continuous.
struct Region2D {
  double x = 0.0;
  double y = 0.0;
  double w = 1.0;
  double h = 1.0;
  double alpha = 0.0;
};

/// Bird's-eye-view raster definition. Pixel coordinate p of a metric
/// coordinate m is (m - min) / pillar_size.
struct GridSpec {
  double x_min = -40.0;
  double x_max = 40.0;
  double y_min = -40.0;
  double y_max = 40.0;
  double pillar_size = 0.16;
  double z_min = -3.0;
  double z_max = 1.0;

  // The epsilon keeps ranges that are an exact multiple of the pillar
  // size from gaining a spurious extra column.
  int width() const { return static_cast<int>(std::ceil((x_max - x_min) / pillar_size - 1e-9)); }
  int height() const { return static_cast<int>(std::ceil((y_max - y_min) / pillar_size - 1e-9)); }

  void validate() const {
    if (!(x_max > x_min) || !(y_max > y_min) || !(pillar_size > 0.0) || !(z_max > z_min)) {
      throw std::invalid_argument("invalid grid spec: ranges must be increasing and pillar_size > 0");
    }
  }
};

struct Track {
  std::int64_t track_id = 0;
  std::int64_t object_id = 0;
  std::string object_class = "Car";
  struct Entry {
    std::int64_t frame_id;
    Box3D box;
  };
  std::vector<Entry> frames;
};

/// Maps an angle into (-pi, pi].
inline double normalize_angle(double alpha) {
  double a = std::fmod(alpha, kTwoPi);
  if (a <= -kPi) a += kTwoPi;
  if (a > kPi) a -= kTwoPi;
  return a;
}

inline Vec2 rotate(Vec2 v, double angle) {
  const double c = std::cos(angle);
  const double s = std::sin(angle);
  return {c * v.x - s * v.y, s * v.x + c * v.y};
}

inline Vec2 meters_to_pixels(Vec2 m, const GridSpec& grid) {
  return {(m.x - grid.x_min) / grid.pillar_size, (m.y - grid.y_min) / grid.pillar_size};
}

inline Vec2 pixels_to_meters(Vec2 p, const GridSpec& grid) {
  return {grid.x_min + p.x * grid.pillar_size, grid.y_min + p.y * grid.pillar_size};
}

/// Corners in counter-clockwise order, starting at local (-w/2, -h/2).
inline std::array<Vec2, 4> rotated_rect_corners(double cx, double cy, double w, double h, double alpha) {
  const std::array<Vec2, 4> local{{{-w / 2, -h / 2}, {w / 2, -h / 2}, {w / 2, h / 2}, {-w / 2, h / 2}}};
  std::array<Vec2, 4> out{};
  for (std::size_t i = 0; i < 4; ++i) {
    const Vec2 r = rotate(local[i], alpha);
    out[i] = {cx + r.x, cy + r.y};
  }
  return out;
}

inline std::array<Vec2, 4> rotated_rect_corners(const Region2D& r) {
  return rotated_rect_corners(r.x, r.y, r.w, r.h, r.alpha);
}

inline std::array<Vec2, 4> footprint_corners(const Box3D& b) {
  return rotated_rect_corners(b.x, b.y, b.w, b.h, b.alpha);
}

inline bool footprint_intersects_grid(const Box3D& box, const GridSpec& grid) {
  const auto corners = footprint_corners(box);
  double lo_x = corners[0].x, hi_x = corners[0].x, lo_y = corners[0].y, hi_y = corners[0].y;
  for (const auto& c : corners) {
    lo_x = std::min(lo_x, c.x);
    hi_x = std::max(hi_x, c.x);
    lo_y = std::min(lo_y, c.y);
    hi_y = std::max(hi_y, c.y);
  }
  return hi_x > grid.x_min && lo_x < grid.x_max && hi_y > grid.y_min && lo_y < grid.y_max;
}

inline Region2D box_to_region(const Box3D& box, const GridSpec& grid) {
  if (!footprint_intersects_grid(box, grid)) {
    throw std::out_of_range("box footprint lies entirely outside the grid");
  }
  const Vec2 p = meters_to_pixels({box.x, box.y}, grid);
  return {p.x, p.y, box.w / grid.pillar_size, box.h / grid.pillar_size, box.alpha};
}

/// z and d are not represented in pixel space and are supplied by the caller.
inline Box3D region_to_box(const Region2D& region, const GridSpec& grid, double z, double d) {
  const Vec2 m = pixels_to_meters({region.x, region.y}, grid);
  return {m.x, m.y, z, region.w * grid.pillar_size, region.h * grid.pillar_size, d, region.alpha};
}

}  // namespace vpit

#endif  // VPIT_GEOMETRY_HPP
