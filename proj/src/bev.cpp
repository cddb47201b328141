#include "gensel/bev.hpp"

#include <algorithm>
#include <cmath>

#include "gensel/errors.hpp"

namespace gensel {

GridPoint project_to_bev(double x, double y, const GridSpec& g) {
  GridPoint p;
  p.h = x * static_cast<double>(g.H) / g.Lx;
  p.w = y * static_cast<double>(g.W) / g.Ly + static_cast<double>(g.W) / 2.0;
  p.in_grid = p.h >= 0.0 && p.h <= static_cast<double>(g.H - 1) && p.w >= 0.0 && p.w <= static_cast<double>(g.W - 1);
  return p;
}

Vec2 bev_to_metric(double h, double w, const GridSpec& g) {
  return {h * g.Lx / static_cast<double>(g.H), (w - static_cast<double>(g.W) / 2.0) * g.Ly / static_cast<double>(g.W)};
}

GridFootprint bilinear_footprint(double h, double w) {
  GridFootprint fp;
  const double h0 = std::floor(h), w0 = std::floor(w);
  const double fh = h - h0, fw = w - w0;
  const long ih = static_cast<long>(h0), iw = static_cast<long>(w0);
  fp.h = {ih, ih, ih + 1, ih + 1};
  fp.w = {iw, iw + 1, iw, iw + 1};
  fp.weight = {(1.0 - fh) * (1.0 - fw), (1.0 - fh) * fw, fh * (1.0 - fw), fh * fw};
  return fp;
}

std::vector<CellWeight> clip_footprint(const GridFootprint& fp, const GridSpec& g) {
  std::vector<CellWeight> cells;
  double total = 0.0;
  for (int i = 0; i < 4; ++i) {
    if (fp.weight[i] == 0.0) continue;
    if (fp.h[i] < 0 || fp.w[i] < 0 || fp.h[i] >= static_cast<long>(g.H) || fp.w[i] >= static_cast<long>(g.W)) continue;
    cells.push_back({static_cast<std::size_t>(fp.h[i]), static_cast<std::size_t>(fp.w[i]), fp.weight[i]});
    total += fp.weight[i];
  }
  if (cells.empty()) return cells;
  if (total != 1.0) {
    for (auto& c : cells) c.weight /= total;
  }
  return cells;
}

SemanticBevMap render_semantic_bev(const ScenarioRecord& sc, double t, const GridSpec& g) {
  SemanticBevMap m;
  m.H = g.H;
  m.W = g.W;
  m.Lx = g.Lx;
  m.Ly = g.Ly;
  m.values.assign(kBevLayers * g.H * g.W, 0.0);
  const auto agent_poses = step_agents(sc, t);
  std::vector<OrientedRect> rects;
  for (std::size_t i = 0; i < sc.agents.size(); ++i) rects.push_back(agent_rect(sc.agents[i], agent_poses[i]));
  const bool red = sc.map.signal && sc.map.signal->red_at(t);
  const double line_reach = 0.5 * std::max(g.cell_x(), g.cell_y());

  for (std::size_t h = 0; h < g.H; ++h) {
    for (std::size_t w = 0; w < g.W; ++w) {
      const Vec2 p = bev_to_metric(static_cast<double>(h), static_cast<double>(w), g);
      m.at(kDrivable, h, w) = point_in_polygon(p, sc.map.drivable) ? 1.0 : 0.0;
      double lane = 0.0;
      for (const auto& l : sc.map.lanes) {
        const double d = l.centerline.project(p).distance;
        lane = std::max(lane, 1.0 - d / (0.5 * l.width));
      }
      m.at(kLaneCenter, h, w) = lane;
      for (const auto& r : rects) {
        // Lattice point inside the closed rectangle, tested in its own frame.
        const Vec2 f = unit_from_angle(r.center.heading);
        const Vec2 d = p - r.center.position();
        if (std::fabs(dot(d, f)) <= 0.5 * r.length && std::fabs(cross(f, d)) <= 0.5 * r.width) {
          m.at(kOccupancy, h, w) = 1.0;
          break;
        }
      }
      if (red && point_segment_distance(p, sc.map.signal->stop_a, sc.map.signal->stop_b) <= line_reach)
        m.at(kRedStopLine, h, w) = 1.0;
    }
  }
  return m;
}

namespace {

// Channel c carries layer c % L with sign + on even passes and - on odd ones.
std::size_t lift_layer(std::size_t c) { return c % kBevLayers; }
double lift_sign(std::size_t c) { return (c / kBevLayers) % 2 == 0 ? 1.0 : -1.0; }

std::size_t largest_power_of_two_at_most(std::size_t n) {
  std::size_t p = 1;
  while (p * 2 <= n) p *= 2;
  return p;
}

// Pairwise sum; with 2^k equal terms every partial sum is exact.
double pairwise_sum(std::vector<double> v) {
  while (v.size() > 1) {
    std::vector<double> next;
    for (std::size_t i = 0; i + 1 < v.size(); i += 2) next.push_back(v[i] + v[i + 1]);
    if (v.size() % 2) next.push_back(v.back());
    v.swap(next);
  }
  return v.empty() ? 0.0 : v[0];
}

}  // namespace

BevGrid encode_bev_features(const SemanticBevMap& map, std::size_t C) {
  if (C < kBevLayers + 2)
    throw ConfigError("feature channels C=" + std::to_string(C) + " below the minimum " + std::to_string(kBevLayers + 2));
  const std::size_t lifted = C - 2;
  std::vector<double> data(map.H * map.W * C, 0.0);
  for (std::size_t h = 0; h < map.H; ++h) {
    for (std::size_t w = 0; w < map.W; ++w) {
      double* cell = &data[(h * map.W + w) * C];
      for (std::size_t c = 0; c < lifted; ++c) cell[c] = lift_sign(c) * map.at(lift_layer(c), h, w);
      cell[lifted] = static_cast<double>(h) / static_cast<double>(map.H);
      cell[lifted + 1] = 2.0 * (static_cast<double>(w) - static_cast<double>(map.W) / 2.0) / static_cast<double>(map.W);
    }
  }
  return {Tensor({map.H, map.W, C}, std::move(data)), map.Lx, map.Ly};
}

SemanticBevMap decode_bev_layers(const BevGrid& grid) {
  const auto& shape = grid.features.shape();
  if (shape.size() != 3) throw DimensionError("BEV features must be [H,W,C], got " + shape_str(shape));
  const std::size_t H = shape[0], W = shape[1], C = shape[2];
  if (C < kBevLayers + 2) throw DimensionError("BEV features have too few channels: " + shape_str(shape));
  const std::size_t lifted = C - 2;
  SemanticBevMap m;
  m.H = H;
  m.W = W;
  m.Lx = grid.Lx;
  m.Ly = grid.Ly;
  m.values.assign(kBevLayers * H * W, 0.0);
  const auto f = grid.features.data();
  for (std::size_t layer = 0; layer < kBevLayers; ++layer) {
    std::vector<std::size_t> channels;
    for (std::size_t c = layer; c < lifted; c += kBevLayers) channels.push_back(c);
    channels.resize(largest_power_of_two_at_most(channels.size()));
    const double inv = 1.0 / static_cast<double>(channels.size());
    for (std::size_t h = 0; h < H; ++h) {
      for (std::size_t w = 0; w < W; ++w) {
        std::vector<double> terms;
        for (std::size_t c : channels) terms.push_back(lift_sign(c) * f[(h * W + w) * C + c]);
        m.at(layer, h, w) = pairwise_sum(std::move(terms)) * inv;
      }
    }
  }
  return m;
}

}  // namespace gensel
