// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "archx/cache_key.hpp"
#include "archx/cluster.hpp"
#include "archx/distance.hpp"

namespace archx {

using Point = std::array<double, 2>;

// ---------------------------------------------------------------------------
// Cluster centers

struct StressResult {
  std::vector<Point> positions;
  std::vector<double> trace;  // stress before normalization, per sweep
};

/// Positions whose pairwise distances approximate `d` (K x K, row-major) by
/// weighted stress majorization, w_ij = 1 / d_ij^2.
StressResult stress_layout(std::span<const double> d, std::size_t k, int iterations = 300, std::uint64_t seed = 0);
double weighted_stress(std::span<const double> d, std::size_t k, std::span<const Point> p);

// ---------------------------------------------------------------------------
// Hexagonal grid

struct HexCell {
  int q = 0;
  int r = 0;
  double x = 0.0;
  double y = 0.0;
};

class HexGrid {
 public:
  HexGrid() = default;
  explicit HexGrid(std::vector<HexCell> cells);

  std::size_t size() const noexcept { return cells_.size(); }
  const HexCell& cell(std::size_t i) const { return cells_.at(i); }
  const std::vector<HexCell>& cells() const noexcept { return cells_; }
  /// In-grid neighbors of cell i (up to 6).
  const std::vector<int>& neighbors(std::size_t i) const { return adj_.at(i); }
  std::optional<int> find(int q, int r) const;
  /// Largest center distance from the origin.
  double radius() const;

 private:
  std::vector<HexCell> cells_;
  std::vector<std::vector<int>> adj_;
  std::map<std::pair<int, int>, int> index_;
};

Point hex_center(int q, int r);

/// Exactly `members + 6 * reps` cells ordered by distance from the origin,
/// then by angle.
HexGrid hex_grid(std::size_t members, std::size_t reps);
HexGrid hex_grid_cells(std::size_t count);

// ---------------------------------------------------------------------------
// Cell assignment

/// cell_of[i] = grid cell of local member i.
struct Placement {
  std::vector<int> cell_of;
  std::vector<int> fixed;                // local indices that swaps never move
  std::vector<std::vector<int>> glyph_cells;  // per fixed member: its own cell then reserved ones
};

/// Adjacent-pair distance sum over the grid, each unordered pair counted in
/// both directions.
double layout_objective(const std::vector<int>& cell_of, const DistanceMatrix& local, const HexGrid& grid);

/// Representatives (local indices, placement order) take 7-cell blocks first;
/// then each free cell in grid order takes the member adding the least
/// adjacent distance. `first` forces the member of the first free cell.
/// Throws GridOverflow when a block does not fit.
Placement greedy_assign(const DistanceMatrix& local, const HexGrid& grid, std::span<const std::size_t> reps,
                        std::optional<std::size_t> first = std::nullopt);

struct RefineStats {
  int passes = 0;
  int swaps = 0;
  bool converged = false;
};

/// Best-improvement 2-swaps between non-fixed members until a full pass finds
/// no improving swap, or `max_passes` passes.
RefineStats swap_refine(Placement& placement, const DistanceMatrix& local, const HexGrid& grid, int max_passes = 50);

struct ClusterPlacement {
  HexGrid grid;
  Placement placement;
  double greedy_objective = 0.0;
  double objective = 0.0;
  RefineStats refine;
  bool regrown = false;
};

/// Grid + greedy + swaps for one cluster; regrows the grid once on overflow.
/// Greedy runs from the `starts` most central members as the first cell and
/// the best refined result is kept, then perturbed by seeded swap kicks.
ClusterPlacement place_cluster(const DistanceMatrix& local, std::span<const std::size_t> reps, int max_passes = 50,
                               int starts = 8);

// ---------------------------------------------------------------------------
// Views

struct CellPlacement {
  ArchId arch_id = 0;
  int q = 0;
  int r = 0;
  double x = 0.0;
  double y = 0.0;
};

struct GlyphPlacement {
  ArchId arch_id = 0;
  std::vector<std::pair<int, int>> cells;
  Point label_anchor{};
};

struct ClusterView {
  int id = 0;  // cluster tree node
  Point center{};
  double radius = 0.0;
  std::vector<CellPlacement> cells;
  std::vector<GlyphPlacement> glyphs;
  double objective = 0.0;
};

struct LayoutResult {
  CacheKey key;
  int level = 0;
  int focus = 0;  // tree node whose children are shown
  double scale = 1.0;
  std::vector<ClusterView> clusters;
};

struct LayoutOptions {
  std::size_t budget = 500;  // displayed architectures per view
  int stress_iterations = 300;
  int max_passes = 50;
  std::uint64_t seed = 0;
  double gap = 1.0;           // between cluster discs
  double label_radius = 1.5;  // structure glyph footprint
};

/// Layout of the clusters under `focus`: its children, or the node itself if
/// it is a leaf. With `parent`, members also shown there keep their cyclic
/// angular order within each cluster.
LayoutResult layout_view(const ClusterTree& tree, const DistanceMatrix& dm, AccuracyView accuracy, int focus,
                         const LayoutOptions& options = {}, const LayoutResult* parent = nullptr);

/// Uniform scale of cluster centers so no two discs overlap.
double separation_scale(std::span<const Point> centers, std::span<const double> radii, double gap);

struct Disc {
  Point center{};
  double radius = 0.0;
};

struct LabelRequest {
  Point from{};  // glyph position
  int disc = 0;  // disc the glyph belongs to
};

/// Greedy ring search: each label goes to the nearest slot outside every disc
/// and clear of earlier labels, starting from the glyph's direction.
std::vector<Point> place_labels(std::span<const Disc> discs, std::span<const LabelRequest> requests,
                                double label_radius);

std::string layout_to_json(const LayoutResult& layout);
LayoutResult layout_from_json(std::string_view text, const CacheKey* expected = nullptr);

}  // namespace archx
