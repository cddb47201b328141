#pragma once

// Trajectory anchor vocabulary: K-Means over expert trajectories, clustering
// on (x, y) waypoints only. Headings are rebuilt from waypoint tangents.

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "gensel/world.hpp"

namespace gensel {

struct AnchorVocabulary {
  std::vector<Trajectory> anchors;  // sorted by (final x, final y)
  std::vector<double> inertia_history;

  std::size_t size() const { return anchors.size(); }
  std::size_t horizon() const { return anchors.empty() ? 0 : anchors.front().horizon(); }
  double dt() const { return anchors.empty() ? 0.0 : anchors.front().dt; }
};

/// Lloyd iterations with k-means++ seeding. Inputs are sorted canonically
/// before seeding, so the result does not depend on input order. Throws
/// ConfigError when fewer than n distinct trajectories are given.
AnchorVocabulary fit_anchors(const std::vector<Trajectory>& trajectories, std::size_t n, std::size_t max_iters,
                             std::uint64_t seed);

/// Index of the nearest anchor by Euclidean distance on (x, y); ties go to the lowest index.
std::size_t assign_anchor(const Trajectory& traj, const AnchorVocabulary& vocab);

/// Heading at each waypoint from the central difference of neighbors, with
/// the origin as the point before the first waypoint.
std::vector<double> tangent_headings(const std::vector<Vec2>& points);

void save_anchors(std::ostream& os, const AnchorVocabulary& vocab);
AnchorVocabulary load_anchors(std::istream& is);
void save_anchors_file(const std::string& path, const AnchorVocabulary& vocab);
AnchorVocabulary load_anchors_file(const std::string& path);

}  // namespace gensel
