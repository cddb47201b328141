#include "gensel/anchors.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <istream>
#include <limits>
#include <ostream>

#include <nlohmann/json.hpp>

#include "gensel/errors.hpp"
#include "gensel/rng.hpp"

namespace gensel {

namespace {

using json = nlohmann::json;
using Point = std::vector<double>;

constexpr int kAnchorFormatVersion = 1;

Point flatten_xy(const Trajectory& t) {
  Point p;
  p.reserve(2 * t.poses.size());
  for (const auto& pose : t.poses) {
    p.push_back(pose.x);
    p.push_back(pose.y);
  }
  return p;
}

double sq_dist(const Point& a, const Point& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    s += d * d;
  }
  return s;
}

std::size_t nearest(const Point& p, const std::vector<Point>& centers, double* dist = nullptr) {
  std::size_t best = 0;
  double best_d = std::numeric_limits<double>::infinity();
  for (std::size_t k = 0; k < centers.size(); ++k) {
    const double d = sq_dist(p, centers[k]);
    if (d < best_d) {
      best_d = d;
      best = k;
    }
  }
  if (dist) *dist = best_d;
  return best;
}

std::vector<Point> kmeanspp(const std::vector<Point>& pts, std::size_t n, Rng& rng) {
  std::vector<Point> centers{pts[rng.index(pts.size())]};
  std::vector<double> d2(pts.size());
  while (centers.size() < n) {
    double total = 0.0;
    for (std::size_t i = 0; i < pts.size(); ++i) {
      nearest(pts[i], centers, &d2[i]);
      total += d2[i];
    }
    // Points already chosen have weight zero, so a distinct point is always drawn.
    const double target = rng.uniform() * total;
    double acc = 0.0;
    std::size_t pick = pts.size();
    for (std::size_t i = 0; i < pts.size(); ++i) {
      if (d2[i] <= 0.0) continue;
      acc += d2[i];
      pick = i;
      if (acc > target) break;
    }
    centers.push_back(pts[pick]);
  }
  return centers;
}

Trajectory unflatten(const Point& c, double dt) {
  std::vector<Vec2> pts;
  for (std::size_t i = 0; i + 1 < c.size(); i += 2) pts.push_back({c[i], c[i + 1]});
  const auto headings = tangent_headings(pts);
  Trajectory t;
  t.dt = dt;
  for (std::size_t i = 0; i < pts.size(); ++i) t.poses.push_back({pts[i].x, pts[i].y, headings[i]});
  return t;
}

json pose_array(const Trajectory& t) {
  json a = json::array();
  for (const auto& p : t.poses) a.push_back({p.x, p.y, p.heading});
  return a;
}

}  // namespace

std::vector<double> tangent_headings(const std::vector<Vec2>& points) {
  std::vector<double> out(points.size(), 0.0);
  double prev = 0.0;
  for (std::size_t i = 0; i < points.size(); ++i) {
    const Vec2 before = i == 0 ? Vec2{} : points[i - 1];
    const Vec2 after = i + 1 < points.size() ? points[i + 1] : points[i];
    const Vec2 d = after - before;
    out[i] = norm(d) > 1e-6 ? std::atan2(d.y, d.x) : prev;
    prev = out[i];
  }
  return out;
}

AnchorVocabulary fit_anchors(const std::vector<Trajectory>& trajectories, std::size_t n, std::size_t max_iters,
                             std::uint64_t seed) {
  if (n == 0) throw ConfigError("anchor count must be at least 1");
  if (trajectories.empty()) throw ConfigError("no trajectories to cluster");
  const std::size_t T = trajectories.front().horizon();
  const double dt = trajectories.front().dt;
  std::vector<Point> pts;
  pts.reserve(trajectories.size());
  for (const auto& t : trajectories) {
    if (t.horizon() != T || t.dt != dt) throw DimensionError("trajectories differ in horizon or dt");
    pts.push_back(flatten_xy(t));
  }
  std::sort(pts.begin(), pts.end());
  std::vector<Point> uniq = pts;
  uniq.erase(std::unique(uniq.begin(), uniq.end()), uniq.end());
  if (uniq.size() < n)
    throw ConfigError("need at least " + std::to_string(n) + " distinct trajectories, got " + std::to_string(uniq.size()));

  Rng rng(seed);
  std::vector<Point> centers = kmeanspp(pts, n, rng);
  const std::size_t dim = pts.front().size();
  std::vector<std::size_t> assign(pts.size(), n);
  AnchorVocabulary vocab;
  for (std::size_t iter = 0; iter < max_iters; ++iter) {
    bool changed = false;
    double inertia = 0.0;
    for (std::size_t i = 0; i < pts.size(); ++i) {
      double d = 0.0;
      const std::size_t k = nearest(pts[i], centers, &d);
      changed |= k != assign[i];
      assign[i] = k;
      inertia += d;
    }
    if (!changed) break;
    if (iter == 0) vocab.inertia_history.push_back(inertia);
    std::vector<Point> sums(n, Point(dim, 0.0));
    std::vector<std::size_t> counts(n, 0);
    for (std::size_t i = 0; i < pts.size(); ++i) {
      for (std::size_t j = 0; j < dim; ++j) sums[assign[i]][j] += pts[i][j];
      ++counts[assign[i]];
    }
    for (std::size_t k = 0; k < n; ++k) {
      if (counts[k] == 0) continue;  // empty cluster keeps its center
      for (std::size_t j = 0; j < dim; ++j) centers[k][j] = sums[k][j] / static_cast<double>(counts[k]);
    }
    double updated = 0.0;
    for (std::size_t i = 0; i < pts.size(); ++i) updated += sq_dist(pts[i], centers[assign[i]]);
    vocab.inertia_history.push_back(updated);
  }

  for (const auto& c : centers) vocab.anchors.push_back(unflatten(c, dt));
  std::sort(vocab.anchors.begin(), vocab.anchors.end(), [](const Trajectory& a, const Trajectory& b) {
    const Pose& pa = a.poses.back();
    const Pose& pb = b.poses.back();
    return pa.x != pb.x ? pa.x < pb.x : pa.y < pb.y;
  });
  return vocab;
}

std::size_t assign_anchor(const Trajectory& traj, const AnchorVocabulary& vocab) {
  if (vocab.anchors.empty()) throw ContractError("anchor vocabulary is empty");
  if (traj.horizon() != vocab.horizon())
    throw DimensionError("trajectory horizon " + std::to_string(traj.horizon()) + " does not match anchors (" +
                         std::to_string(vocab.horizon()) + ")");
  std::vector<Point> centers;
  for (const auto& a : vocab.anchors) centers.push_back(flatten_xy(a));
  return nearest(flatten_xy(traj), centers);
}

void save_anchors(std::ostream& os, const AnchorVocabulary& vocab) {
  json header = {{"format_version", kAnchorFormatVersion},
                 {"N", vocab.size()},
                 {"T", vocab.horizon()},
                 {"dt", vocab.dt()},
                 {"inertia_history", vocab.inertia_history}};
  os << header.dump() << '\n';
  for (std::size_t i = 0; i < vocab.size(); ++i) os << json{{"index", i}, {"poses", pose_array(vocab.anchors[i])}}.dump() << '\n';
}

AnchorVocabulary load_anchors(std::istream& is) {
  std::string line;
  std::size_t line_no = 0;
  AnchorVocabulary vocab;
  std::size_t n = 0, T = 0;
  double dt = 0.0;
  bool have_header = false;
  while (std::getline(is, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      const json j = json::parse(line);
      if (!have_header) {
        if (j.at("format_version").get<int>() != kAnchorFormatVersion)
          throw std::invalid_argument("unsupported format_version " + j.at("format_version").dump());
        n = j.at("N").get<std::size_t>();
        T = j.at("T").get<std::size_t>();
        dt = j.at("dt").get<double>();
        vocab.inertia_history = j.at("inertia_history").get<std::vector<double>>();
        have_header = true;
        continue;
      }
      if (j.at("index").get<std::size_t>() != vocab.anchors.size()) throw std::invalid_argument("anchor index out of order");
      Trajectory t;
      t.dt = dt;
      for (const auto& p : j.at("poses")) {
        if (p.size() != 3) throw std::invalid_argument("pose needs 3 values");
        t.poses.push_back({p.at(0).get<double>(), p.at(1).get<double>(), p.at(2).get<double>()});
      }
      if (t.horizon() != T) throw std::invalid_argument("anchor has " + std::to_string(t.horizon()) + " poses, header says " + std::to_string(T));
      vocab.anchors.push_back(std::move(t));
    } catch (const std::exception& ex) {
      throw ParseError(line_no, std::string("malformed anchor record: ") + ex.what());
    }
  }
  if (!have_header) throw ParseError(line_no == 0 ? 1 : line_no, "anchor file has no header");
  if (vocab.anchors.size() != n)
    throw ParseError(line_no, "header announces " + std::to_string(n) + " anchors, found " + std::to_string(vocab.anchors.size()));
  return vocab;
}

void save_anchors_file(const std::string& path, const AnchorVocabulary& vocab) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot write anchor file '" + path + "'");
  save_anchors(os, vocab);
  if (!os) throw IoError("failed writing anchor file '" + path + "'");
}

AnchorVocabulary load_anchors_file(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot read anchor file '" + path + "'");
  return load_anchors(is);
}

}  // namespace gensel
