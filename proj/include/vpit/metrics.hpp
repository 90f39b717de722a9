#ifndef VPIT_METRICS_HPP
#define VPIT_METRICS_HPP

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <vector>

#include "vpit/geometry.hpp"

namespace vpit {

namespace detail {

inline double cross(Vec2 o, Vec2 a, Vec2 b) { return (a.x - o.x) * (b.y - o.y) - (a.y - o.y) * (b.x - o.x); }

inline double polygon_area(const std::vector<Vec2>& poly) {
  double a = 0.0;
  for (std::size_t i = 0, n = poly.size(); i < n; ++i) {
    const Vec2& p = poly[i];
    const Vec2& q = poly[(i + 1) % n];
    a += p.x * q.y - q.x * p.y;
  }
  return 0.5 * std::abs(a);
}

// Intersection of segment pq with the infinite line through ab.
inline Vec2 line_intersection(Vec2 p, Vec2 q, Vec2 a, Vec2 b) {
  const double c1 = cross(a, b, p);
  const double c2 = cross(a, b, q);
  const double t = c1 / (c1 - c2);
  return {p.x + t * (q.x - p.x), p.y + t * (q.y - p.y)};
}

}  // namespace detail

/// Sutherland-Hodgman clipping of a convex polygon by a convex,
/// counter-clockwise clip polygon.
inline std::vector<Vec2> clip_convex(std::vector<Vec2> subject, const std::vector<Vec2>& clip) {
  for (std::size_t e = 0; e < clip.size() && !subject.empty(); ++e) {
    const Vec2 a = clip[e];
    const Vec2 b = clip[(e + 1) % clip.size()];
    std::vector<Vec2> out;
    out.reserve(subject.size() + 2);
    for (std::size_t i = 0; i < subject.size(); ++i) {
      const Vec2 p = subject[i];
      const Vec2 q = subject[(i + 1) % subject.size()];
      const bool p_in = detail::cross(a, b, p) >= 0.0;
      const bool q_in = detail::cross(a, b, q) >= 0.0;
      if (p_in) out.push_back(p);
      if (p_in != q_in) out.push_back(detail::line_intersection(p, q, a, b));
    }
    subject = std::move(out);
  }
  return subject;
}

inline double bev_intersection_area(const Box3D& a, const Box3D& b) {
  const auto ca = footprint_corners(a);
  const auto cb = footprint_corners(b);
  const auto poly = clip_convex({ca.begin(), ca.end()}, {cb.begin(), cb.end()});
  return poly.size() < 3 ? 0.0 : detail::polygon_area(poly);
}

/// 3D IoU of two yaw-rotated boxes: BEV polygon intersection times vertical
/// overlap, over the union volume.
inline double iou3d(const Box3D& a, const Box3D& b) {
  if (!(a.w > 0 && a.h > 0 && a.d > 0 && b.w > 0 && b.h > 0 && b.d > 0)) {
    throw std::invalid_argument("iou3d: degenerate (zero-volume) box");
  }
  if (a.x == b.x && a.y == b.y && a.z == b.z && a.w == b.w && a.h == b.h && a.d == b.d && a.alpha == b.alpha) {
    return 1.0;
  }
  const double z_lo = std::max(a.z - a.d / 2, b.z - b.d / 2);
  const double z_hi = std::min(a.z + a.d / 2, b.z + b.d / 2);
  const double dz = z_hi - z_lo;
  if (dz <= 0.0) return 0.0;
  const double inter = bev_intersection_area(a, b) * dz;
  const double uni = a.w * a.h * a.d + b.w * b.h * b.d - inter;
  return std::clamp(inter / uni, 0.0, 1.0);
}

inline double center_distance(const Box3D& a, const Box3D& b) {
  return std::sqrt((a.x - b.x) * (a.x - b.x) + (a.y - b.y) * (a.y - b.y) + (a.z - b.z) * (a.z - b.z));
}

struct OpeResult {
  double success = 0.0;    // percent
  double precision = 0.0;  // percent
  std::vector<double> ious;
  std::vector<double> distances;  // meters
};

inline constexpr int kOpeThresholds = 101;
inline constexpr double kPrecisionMaxDistance = 2.0;

/// Trapezoidal area under a curve sampled at 101 equally spaced thresholds
/// over [0, range], normalized by the range.
inline double curve_auc(const std::vector<double>& curve) {
  double area = 0.0;
  for (std::size_t k = 1; k < curve.size(); ++k) area += 0.5 * (curve[k - 1] + curve[k]);
  return area / static_cast<double>(curve.size() - 1);
}

/// Success: AUC of the fraction of frames with IoU >= t, t in 0..1.
/// Precision: AUC of the fraction with center distance <= t, t in 0..2 m.
inline OpeResult ope_from_errors(std::vector<double> ious, std::vector<double> distances) {
  if (ious.empty() || ious.size() != distances.size()) throw std::invalid_argument("ope metrics need aligned, non-empty lists");
  const double n = static_cast<double>(ious.size());
  std::vector<double> succ(kOpeThresholds), prec(kOpeThresholds);
  for (int k = 0; k < kOpeThresholds; ++k) {
    const double t_iou = k / 100.0;
    const double t_dist = kPrecisionMaxDistance * k / 100.0;
    succ[k] = std::count_if(ious.begin(), ious.end(), [&](double v) { return v >= t_iou; }) / n;
    prec[k] = std::count_if(distances.begin(), distances.end(), [&](double v) { return v <= t_dist; }) / n;
  }
  OpeResult r;
  r.success = 100.0 * curve_auc(succ);
  r.precision = 100.0 * curve_auc(prec);
  r.ious = std::move(ious);
  r.distances = std::move(distances);
  return r;
}

inline OpeResult ope_metrics(const std::vector<Box3D>& pred, const std::vector<Box3D>& gt) {
  if (pred.empty() || pred.size() != gt.size()) throw std::invalid_argument("ope_metrics: sequences empty or misaligned");
  std::vector<double> ious, dists;
  ious.reserve(pred.size());
  dists.reserve(pred.size());
  for (std::size_t i = 0; i < pred.size(); ++i) {
    ious.push_back(iou3d(pred[i], gt[i]));
    dists.push_back(center_distance(pred[i], gt[i]));
  }
  return ope_from_errors(std::move(ious), std::move(dists));
}

}  // namespace vpit

#endif  // VPIT_METRICS_HPP
