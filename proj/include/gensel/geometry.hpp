#pragma once

#include <array>
#include <cmath>
#include <numbers>
#include <vector>

namespace gensel {

struct Vec2 {
  double x = 0.0;
  double y = 0.0;

  friend Vec2 operator+(Vec2 a, Vec2 b) { return {a.x + b.x, a.y + b.y}; }
  friend Vec2 operator-(Vec2 a, Vec2 b) { return {a.x - b.x, a.y - b.y}; }
  friend Vec2 operator*(double s, Vec2 a) { return {s * a.x, s * a.y}; }
  friend bool operator==(Vec2 a, Vec2 b) = default;
};

inline double dot(Vec2 a, Vec2 b) { return a.x * b.x + a.y * b.y; }
inline double cross(Vec2 a, Vec2 b) { return a.x * b.y - a.y * b.x; }
inline double norm(Vec2 a) { return std::hypot(a.x, a.y); }
inline Vec2 unit_from_angle(double a) { return {std::cos(a), std::sin(a)}; }

/// Wraps into (-pi, pi].
double wrap_angle(double a);

struct Pose {
  double x = 0.0;
  double y = 0.0;
  double heading = 0.0;

  Vec2 position() const { return {x, y}; }
  friend bool operator==(const Pose&, const Pose&) = default;
};

/// Linear interpolation of position, shortest-arc interpolation of heading.
Pose lerp(const Pose& a, const Pose& b, double f);

/// Oriented rectangle centered on a pose: `length` along the heading, `width` across.
struct OrientedRect {
  Pose center;
  double length = 0.0;
  double width = 0.0;

  /// Counter-clockwise: front-left, rear-left, rear-right, front-right.
  std::array<Vec2, 4> corners() const;
};

/// Closed-set test: rectangles that only touch count as intersecting.
bool rects_intersect(const OrientedRect& a, const OrientedRect& b);

/// Whether two rectangles translating at constant velocities `va` and `vb`
/// touch at any time in [t0, t1]. Exact: separating-axis intervals are solved
/// as linear inequalities in time.
bool rects_collide_within(const OrientedRect& a, Vec2 va, const OrientedRect& b, Vec2 vb, double t0, double t1);

using Polygon = std::vector<Vec2>;

double polygon_area(const Polygon& poly);
double point_segment_distance(Vec2 p, Vec2 a, Vec2 b);
/// Closed polygon: points on the boundary count as inside.
bool point_in_polygon(Vec2 p, const Polygon& poly, double boundary_tol = 1e-9);

struct PolylineProjection {
  double s = 0.0;         // arc length of the foot point
  double distance = 0.0;  // unsigned distance to the foot point
  std::size_t segment = 0;
};

/// Piecewise-linear curve parameterized by arc length. Evaluation beyond
/// either end extrapolates along the first or last segment.
class Polyline {
 public:
  Polyline() = default;
  explicit Polyline(std::vector<Vec2> points);

  const std::vector<Vec2>& points() const { return points_; }
  double length() const { return cumulative_.empty() ? 0.0 : cumulative_.back(); }
  bool empty() const { return points_.size() < 2; }

  Vec2 point_at(double s) const;
  /// Unit direction of the segment containing s.
  Vec2 tangent_at(double s) const;
  double heading_at(double s) const;
  Pose pose_at(double s) const;
  /// Nearest point; ties go to the lowest arc length.
  PolylineProjection project(Vec2 p) const;
  Vec2 segment_direction(std::size_t i) const;

 private:
  std::size_t segment_for(double s) const;

  std::vector<Vec2> points_;
  std::vector<double> cumulative_;
};

}  // namespace gensel
