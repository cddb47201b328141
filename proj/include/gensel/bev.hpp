#pragma once

// Bird's-eye-view grids. Cell (h, w) sits at the lattice point
// x = h * L_x / H, y = (w - W/2) * L_y / W, so rows follow the forward axis and
// columns the lateral axis with the ego on the center column.

#include <array>
#include <cstddef>
#include <vector>

#include "gensel/tensor.hpp"
#include "gensel/world.hpp"

namespace gensel {

struct GridSpec {
  std::size_t H = 64;
  std::size_t W = 64;
  double Lx = 64.0;
  double Ly = 64.0;
  std::size_t C = 16;

  double cell_x() const { return Lx / static_cast<double>(H); }
  double cell_y() const { return Ly / static_cast<double>(W); }
};

/// Continuous grid coordinates of a metric point.
struct GridPoint {
  double h = 0.0;
  double w = 0.0;
  bool in_grid = false;  // 0 <= h <= H-1 and 0 <= w <= W-1
};

GridPoint project_to_bev(double x, double y, const GridSpec& g);
Vec2 bev_to_metric(double h, double w, const GridSpec& g);

/// Bilinear neighborhood of a continuous grid point: cells
/// [(h0,w0), (h0,w0+1), (h0+1,w0), (h0+1,w0+1)] with h0 = floor(h), w0 = floor(w).
struct GridFootprint {
  std::array<long, 4> h{};
  std::array<long, 4> w{};
  std::array<double, 4> weight{};
};

GridFootprint bilinear_footprint(double h, double w);

/// Keeps the in-grid cells of a footprint and rescales their weights to sum
/// to 1. Returns an empty list when no cell is inside the grid.
struct CellWeight {
  std::size_t h = 0;
  std::size_t w = 0;
  double weight = 0.0;
};
std::vector<CellWeight> clip_footprint(const GridFootprint& fp, const GridSpec& g);

enum BevLayer : std::size_t { kDrivable = 0, kLaneCenter = 1, kOccupancy = 2, kRedStopLine = 3 };
inline constexpr std::size_t kBevLayers = 4;

struct SemanticBevMap {
  std::size_t H = 0;
  std::size_t W = 0;
  double Lx = 0.0;
  double Ly = 0.0;
  std::vector<double> values;  // [layer][h][w]

  double at(std::size_t layer, std::size_t h, std::size_t w) const { return values[(layer * H + h) * W + w]; }
  double& at(std::size_t layer, std::size_t h, std::size_t w) { return values[(layer * H + h) * W + w]; }
  friend bool operator==(const SemanticBevMap&, const SemanticBevMap&) = default;
};

/// Layers: drivable (binary), lane-center tent (1 on a centerline, 0 at half a
/// lane width), agent occupancy at t (binary, lattice point inside a closed
/// agent rectangle), red stop line (binary, cells within half a cell of the
/// line while the signal is red).
SemanticBevMap render_semantic_bev(const ScenarioRecord& sc, double t, const GridSpec& g);

struct BevGrid {
  Tensor features;  // [H, W, C]
  double Lx = 0.0;
  double Ly = 0.0;
};

/// Fixed linear lift of the layers into channels 0..C-3 (each channel is +-1
/// times one layer) plus normalized coordinates x / L_x and 2y / L_y in the
/// last two channels. Needs C >= kBevLayers + 2.
BevGrid encode_bev_features(const SemanticBevMap& map, std::size_t C);

/// Exact left inverse of the lift on the layer subspace.
SemanticBevMap decode_bev_layers(const BevGrid& grid);

}  // namespace gensel
