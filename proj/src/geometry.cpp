#include "gensel/geometry.hpp"

#include <algorithm>
#include <limits>

#include "gensel/errors.hpp"

namespace gensel {

double wrap_angle(double a) {
  constexpr double two_pi = 2.0 * std::numbers::pi;
  a = std::fmod(a, two_pi);
  if (a <= -std::numbers::pi) a += two_pi;
  if (a > std::numbers::pi) a -= two_pi;
  return a;
}

Pose lerp(const Pose& a, const Pose& b, double f) {
  return {a.x + f * (b.x - a.x), a.y + f * (b.y - a.y), wrap_angle(a.heading + f * wrap_angle(b.heading - a.heading))};
}

std::array<Vec2, 4> OrientedRect::corners() const {
  const Vec2 c = center.position();
  const Vec2 f = unit_from_angle(center.heading);
  const Vec2 l{-f.y, f.x};
  const double hl = 0.5 * length, hw = 0.5 * width;
  return {c + hl * f + hw * l, c - hl * f + hw * l, c - hl * f - hw * l, c + hl * f - hw * l};
}

namespace {

// Projects both corner sets onto `axis`; separated only if the intervals have a gap.
bool separated_on(const std::array<Vec2, 4>& a, const std::array<Vec2, 4>& b, Vec2 axis) {
  double amin = std::numeric_limits<double>::infinity(), amax = -amin;
  double bmin = amin, bmax = -amin;
  for (const Vec2& p : a) {
    const double d = dot(p, axis);
    amin = std::min(amin, d);
    amax = std::max(amax, d);
  }
  for (const Vec2& p : b) {
    const double d = dot(p, axis);
    bmin = std::min(bmin, d);
    bmax = std::max(bmax, d);
  }
  return amax < bmin || bmax < amin;
}

}  // namespace

bool rects_intersect(const OrientedRect& a, const OrientedRect& b) {
  // Bounding circles that do not meet cannot hold intersecting rectangles.
  const double reach = 0.5 * (std::hypot(a.length, a.width) + std::hypot(b.length, b.width));
  const Vec2 d = a.center.position() - b.center.position();
  if (dot(d, d) > reach * reach * (1.0 + 1e-12) + 1e-12) return false;
  const auto ca = a.corners();
  const auto cb = b.corners();
  for (double h : {a.center.heading, b.center.heading}) {
    const Vec2 f = unit_from_angle(h);
    if (separated_on(ca, cb, f) || separated_on(ca, cb, Vec2{-f.y, f.x})) return false;
  }
  return true;
}

bool rects_collide_within(const OrientedRect& a, Vec2 va, const OrientedRect& b, Vec2 vb, double t0, double t1) {
  const auto ca = a.corners();
  const auto cb = b.corners();
  const Vec2 rel = va - vb;
  double lo = t0, hi = t1;
  for (double h : {a.center.heading, b.center.heading}) {
    const Vec2 f = unit_from_angle(h);
    for (const Vec2 axis : {f, Vec2{-f.y, f.x}}) {
      double amin = std::numeric_limits<double>::infinity(), amax = -amin, bmin = amin, bmax = -amin;
      for (const Vec2& p : ca) {
        amin = std::min(amin, dot(p, axis));
        amax = std::max(amax, dot(p, axis));
      }
      for (const Vec2& p : cb) {
        bmin = std::min(bmin, dot(p, axis));
        bmax = std::max(bmax, dot(p, axis));
      }
      // Overlap on this axis while amin + k t <= bmax and amax + k t >= bmin.
      const double k = dot(rel, axis);
      if (k == 0.0) {
        if (amin > bmax || amax < bmin) return false;
        continue;
      }
      double enter = (bmin - amax) / k, leave = (bmax - amin) / k;
      if (enter > leave) std::swap(enter, leave);
      lo = std::max(lo, enter);
      hi = std::min(hi, leave);
      if (lo > hi) return false;
    }
  }
  return true;
}

double polygon_area(const Polygon& poly) {
  double twice = 0.0;
  for (std::size_t i = 0; i < poly.size(); ++i) twice += cross(poly[i], poly[(i + 1) % poly.size()]);
  return 0.5 * std::fabs(twice);
}

double point_segment_distance(Vec2 p, Vec2 a, Vec2 b) {
  const Vec2 ab = b - a;
  const double len2 = dot(ab, ab);
  double t = len2 > 0.0 ? dot(p - a, ab) / len2 : 0.0;
  t = std::clamp(t, 0.0, 1.0);
  return norm(p - (a + t * ab));
}

bool point_in_polygon(Vec2 p, const Polygon& poly, double boundary_tol) {
  const std::size_t n = poly.size();
  bool inside = false;
  for (std::size_t i = 0, j = n - 1; i < n; j = i++) {
    const Vec2 a = poly[j], b = poly[i];
    if (point_segment_distance(p, a, b) <= boundary_tol) return true;
    if ((a.y > p.y) != (b.y > p.y)) {
      const double x_cross = a.x + (p.y - a.y) * (b.x - a.x) / (b.y - a.y);
      if (p.x < x_cross) inside = !inside;
    }
  }
  return inside;
}

Polyline::Polyline(std::vector<Vec2> points) : points_(std::move(points)) {
  if (points_.size() < 2) throw ContractError("polyline needs at least two points");
  cumulative_.assign(points_.size(), 0.0);
  for (std::size_t i = 1; i < points_.size(); ++i) {
    const double seg = norm(points_[i] - points_[i - 1]);
    if (!(seg > 0.0)) throw ContractError("polyline has a zero-length segment");
    cumulative_[i] = cumulative_[i - 1] + seg;
  }
}

std::size_t Polyline::segment_for(double s) const {
  if (s <= 0.0) return 0;
  const auto it = std::upper_bound(cumulative_.begin(), cumulative_.end(), s);
  const std::size_t idx = static_cast<std::size_t>(it - cumulative_.begin());
  return std::min(idx == 0 ? 0 : idx - 1, points_.size() - 2);
}

Vec2 Polyline::segment_direction(std::size_t i) const {
  const Vec2 d = points_[i + 1] - points_[i];
  return (1.0 / (cumulative_[i + 1] - cumulative_[i])) * d;
}

Vec2 Polyline::point_at(double s) const {
  const std::size_t i = segment_for(s);
  return points_[i] + (s - cumulative_[i]) * segment_direction(i);
}

Vec2 Polyline::tangent_at(double s) const { return segment_direction(segment_for(s)); }

double Polyline::heading_at(double s) const {
  const Vec2 t = tangent_at(s);
  return wrap_angle(std::atan2(t.y, t.x));
}

Pose Polyline::pose_at(double s) const {
  const Vec2 p = point_at(s);
  return {p.x, p.y, heading_at(s)};
}

PolylineProjection Polyline::project(Vec2 p) const {
  PolylineProjection best{0.0, std::numeric_limits<double>::infinity(), 0};
  for (std::size_t i = 0; i + 1 < points_.size(); ++i) {
    const Vec2 a = points_[i];
    const Vec2 ab = points_[i + 1] - a;
    const double seg_len = cumulative_[i + 1] - cumulative_[i];
    const double t = std::clamp(dot(p - a, ab) / (seg_len * seg_len), 0.0, 1.0);
    const double d = norm(p - (a + t * ab));
    if (d < best.distance) best = {cumulative_[i] + t * seg_len, d, i};
  }
  return best;
}

}  // namespace gensel
