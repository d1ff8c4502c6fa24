// SPDX-License-Identifier: Apache-2.0
#include "archx/layout.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <numeric>

#include <json.hpp>

#include "archx/error.hpp"
#include "archx/util.hpp"

namespace archx {

namespace {

using ojson = nlohmann::ordered_json;
constexpr double kInf = std::numeric_limits<double>::infinity();
constexpr int kDq[6] = {1, 1, 0, -1, -1, 0};
constexpr int kDr[6] = {0, -1, -1, 0, 1, 1};

double dist(const Point& a, const Point& b) { return std::hypot(a[0] - b[0], a[1] - b[1]); }

double angle_of(double x, double y) {
  double a = std::atan2(y, x);
  if (a < 0.0) a += 2.0 * std::numbers::pi;
  return a;
}

}  // namespace

// ---------------------------------------------------------------------------
// Stress layout

double weighted_stress(std::span<const double> d, std::size_t k, std::span<const Point> p) {
  double s = 0.0;
  for (std::size_t i = 0; i < k; ++i) {
    for (std::size_t j = i + 1; j < k; ++j) {
      const double dij = d[i * k + j];
      if (dij <= 0.0) continue;
      const double e = dist(p[i], p[j]) - dij;
      s += e * e / (dij * dij);
    }
  }
  return s;
}

StressResult stress_layout(std::span<const double> d, std::size_t k, int iterations, std::uint64_t seed) {
  if (d.size() != k * k) throw Error(ErrorCode::invalid_argument, "stress layout: matrix must be K x K");
  StressResult out;
  out.positions.assign(k, Point{0.0, 0.0});
  if (k <= 1) return out;

  double mean_d = 0.0;
  std::size_t pairs = 0;
  for (std::size_t i = 0; i < k; ++i)
    for (std::size_t j = i + 1; j < k; ++j) {
      mean_d += d[i * k + j];
      ++pairs;
    }
  mean_d /= static_cast<double>(pairs);
  if (mean_d <= 0.0) return out;

  Rng rng(seed);
  const double offset = rng.uniform() * 2.0 * std::numbers::pi;
  const double radius = mean_d / 2.0;
  for (std::size_t i = 0; i < k; ++i) {
    const double a = offset + 2.0 * std::numbers::pi * static_cast<double>(i) / static_cast<double>(k);
    out.positions[i] = {radius * std::cos(a), radius * std::sin(a)};
  }

  auto& p = out.positions;
  double prev = weighted_stress(d, k, p);
  out.trace.push_back(prev);
  for (int it = 0; it < iterations; ++it) {
    // One vertex at a time; each update minimizes the majorizer in x_i, so
    // the stress never rises.
    for (std::size_t i = 0; i < k; ++i) {
      double wsum = 0.0;
      Point acc{0.0, 0.0};
      for (std::size_t j = 0; j < k; ++j) {
        if (j == i) continue;
        const double dij = d[i * k + j];
        if (dij <= 0.0) continue;
        const double w = 1.0 / (dij * dij);
        const double len = dist(p[i], p[j]);
        Point dir{0.0, 0.0};
        if (len > 1e-12) dir = {(p[i][0] - p[j][0]) / len, (p[i][1] - p[j][1]) / len};
        acc[0] += w * (p[j][0] + dij * dir[0]);
        acc[1] += w * (p[j][1] + dij * dir[1]);
        wsum += w;
      }
      if (wsum > 0.0) p[i] = {acc[0] / wsum, acc[1] / wsum};
    }
    const double cur = weighted_stress(d, k, p);
    out.trace.push_back(cur);
    if (prev - cur <= 1e-12 * std::max(1.0, prev)) break;
    prev = cur;
  }

  // Center, then scale so the mean realized distance matches the mean target.
  Point c{0.0, 0.0};
  for (const auto& q : p) {
    c[0] += q[0];
    c[1] += q[1];
  }
  c[0] /= static_cast<double>(k);
  c[1] /= static_cast<double>(k);
  double mean_r = 0.0;
  for (std::size_t i = 0; i < k; ++i)
    for (std::size_t j = i + 1; j < k; ++j) mean_r += dist(p[i], p[j]);
  mean_r /= static_cast<double>(pairs);
  const double s = mean_r > 0.0 ? mean_d / mean_r : 1.0;
  for (auto& q : p) q = {(q[0] - c[0]) * s, (q[1] - c[1]) * s};
  return out;
}

// ---------------------------------------------------------------------------
// Hex grid

Point hex_center(int q, int r) { return {q + r / 2.0, r * std::numbers::sqrt3 / 2.0}; }

HexGrid::HexGrid(std::vector<HexCell> cells) : cells_(std::move(cells)) {
  for (std::size_t i = 0; i < cells_.size(); ++i) {
    if (!index_.emplace(std::pair{cells_[i].q, cells_[i].r}, static_cast<int>(i)).second) {
      throw Error(ErrorCode::invalid_argument, "hex grid: duplicate cell");
    }
  }
  adj_.resize(cells_.size());
  for (std::size_t i = 0; i < cells_.size(); ++i) {
    for (int k = 0; k < 6; ++k) {
      if (auto j = find(cells_[i].q + kDq[k], cells_[i].r + kDr[k])) adj_[i].push_back(*j);
    }
  }
}

std::optional<int> HexGrid::find(int q, int r) const {
  const auto it = index_.find({q, r});
  if (it == index_.end()) return std::nullopt;
  return it->second;
}

double HexGrid::radius() const {
  double r = 0.0;
  for (const auto& c : cells_) r = std::max(r, std::hypot(c.x, c.y));
  return r;
}

HexGrid hex_grid_cells(std::size_t count) {
  if (count == 0) return HexGrid{};
  const int ring = static_cast<int>(std::ceil(std::sqrt(static_cast<double>(count) / 2.5))) + 2;
  struct Cand {
    long norm;
    double angle;
    int q, r;
  };
  std::vector<Cand> cands;
  for (int q = -ring; q <= ring; ++q) {
    for (int r = std::max(-ring, -q - ring); r <= std::min(ring, -q + ring); ++r) {
      const auto p = hex_center(q, r);
      cands.push_back({static_cast<long>(q) * q + static_cast<long>(q) * r + static_cast<long>(r) * r,
                       (q == 0 && r == 0) ? 0.0 : angle_of(p[0], p[1]), q, r});
    }
  }
  std::sort(cands.begin(), cands.end(), [](const Cand& a, const Cand& b) {
    if (a.norm != b.norm) return a.norm < b.norm;
    if (a.angle != b.angle) return a.angle < b.angle;
    return std::pair{a.q, a.r} < std::pair{b.q, b.r};
  });
  cands.resize(count);
  std::vector<HexCell> cells;
  cells.reserve(count);
  for (const auto& c : cands) {
    const auto p = hex_center(c.q, c.r);
    cells.push_back({c.q, c.r, p[0], p[1]});
  }
  return HexGrid(std::move(cells));
}

HexGrid hex_grid(std::size_t members, std::size_t reps) {
  if (members == 0) throw Error(ErrorCode::invalid_argument, "hex grid needs at least one member");
  return hex_grid_cells(members + 6 * reps);
}

// ---------------------------------------------------------------------------
// Assignment

double layout_objective(const std::vector<int>& cell_of, const DistanceMatrix& local, const HexGrid& grid) {
  std::vector<int> at(grid.size(), -1);
  for (std::size_t i = 0; i < cell_of.size(); ++i) at[static_cast<std::size_t>(cell_of[i])] = static_cast<int>(i);
  double total = 0.0;
  for (std::size_t i = 0; i < cell_of.size(); ++i) {
    for (int nb : grid.neighbors(static_cast<std::size_t>(cell_of[i]))) {
      const int j = at[static_cast<std::size_t>(nb)];
      if (j >= 0) total += local(i, static_cast<std::size_t>(j));
    }
  }
  return total;
}

Placement greedy_assign(const DistanceMatrix& local, const HexGrid& grid, std::span<const std::size_t> reps,
                        std::optional<std::size_t> first) {
  const std::size_t m = local.size();
  constexpr int kFree = -1;
  constexpr int kReserved = -2;
  Placement out;
  out.cell_of.assign(m, -1);
  std::vector<int> at(grid.size(), kFree);

  for (auto rep : reps) {
    if (rep >= m) throw Error(ErrorCode::invalid_argument, "representative outside the cluster");
    if (out.cell_of[rep] >= 0) continue;
    int chosen = -1;
    for (std::size_t c = 0; c < grid.size() && chosen < 0; ++c) {
      if (at[c] != kFree || grid.neighbors(c).size() != 6) continue;
      bool clear = true;
      for (int nb : grid.neighbors(c)) clear = clear && at[static_cast<std::size_t>(nb)] == kFree;
      if (clear) chosen = static_cast<int>(c);
    }
    if (chosen < 0) throw Error(ErrorCode::grid_overflow, "no free 7-cell block for a representative");
    at[static_cast<std::size_t>(chosen)] = static_cast<int>(rep);
    out.cell_of[rep] = chosen;
    std::vector<int> block{chosen};
    for (int nb : grid.neighbors(static_cast<std::size_t>(chosen))) {
      at[static_cast<std::size_t>(nb)] = kReserved;
      block.push_back(nb);
    }
    out.fixed.push_back(static_cast<int>(rep));
    out.glyph_cells.push_back(std::move(block));
  }

  std::vector<double> total(m, 0.0);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < m; ++j) total[i] += local(i, j);
  std::vector<std::size_t> pending;
  for (std::size_t i = 0; i < m; ++i)
    if (out.cell_of[i] < 0) pending.push_back(i);

  if (first && (*first >= m || out.cell_of[*first] >= 0)) first.reset();
  for (std::size_t c = 0; c < grid.size() && !pending.empty(); ++c) {
    if (at[c] != kFree) continue;
    if (first) {
      const auto it = std::find(pending.begin(), pending.end(), *first);
      at[c] = static_cast<int>(*first);
      out.cell_of[*first] = static_cast<int>(c);
      pending.erase(it);
      first.reset();
      continue;
    }
    std::size_t best_pos = 0;
    double best_add = kInf;
    for (std::size_t p = 0; p < pending.size(); ++p) {
      const auto u = pending[p];
      double add = 0.0;
      for (int nb : grid.neighbors(c)) {
        const int v = at[static_cast<std::size_t>(nb)];
        if (v >= 0) add += local(u, static_cast<std::size_t>(v));
      }
      const auto b = pending[best_pos];
      if (add < best_add || (add == best_add && (total[u] < total[b] || (total[u] == total[b] && u < b)))) {
        best_add = add;
        best_pos = p;
      }
    }
    const auto u = pending[best_pos];
    at[c] = static_cast<int>(u);
    out.cell_of[u] = static_cast<int>(c);
    pending.erase(pending.begin() + static_cast<std::ptrdiff_t>(best_pos));
  }
  if (!pending.empty()) throw Error(ErrorCode::grid_overflow, "grid has fewer free cells than members");
  return out;
}

RefineStats swap_refine(Placement& placement, const DistanceMatrix& local, const HexGrid& grid, int max_passes) {
  RefineStats stats;
  const std::size_t m = placement.cell_of.size();
  std::vector<int> at(grid.size(), -1);
  for (std::size_t i = 0; i < m; ++i) at[static_cast<std::size_t>(placement.cell_of[i])] = static_cast<int>(i);
  std::vector<char> fixed(m, 0);
  for (int f : placement.fixed) fixed[static_cast<std::size_t>(f)] = 1;

  double scale = 0.0;
  for (double v : local.values()) scale = std::max(scale, v);
  const double eps = 1e-12 * std::max(1.0, scale);

  // Adjacent distance of member x if it sat in `cell`, ignoring member `skip`.
  auto around = [&](std::size_t x, int cell, int skip) {
    double s = 0.0;
    for (int nb : grid.neighbors(static_cast<std::size_t>(cell))) {
      const int v = at[static_cast<std::size_t>(nb)];
      if (v >= 0 && v != skip) s += local(x, static_cast<std::size_t>(v));
    }
    return s;
  };

  while (stats.passes < max_passes) {
    ++stats.passes;
    bool improved = false;
    for (std::size_t a = 0; a < m; ++a) {
      if (fixed[a]) continue;
      const int ca = placement.cell_of[a];
      double best = -eps;
      std::size_t partner = m;
      for (std::size_t b = 0; b < m; ++b) {
        if (b == a || fixed[b]) continue;
        const int cb = placement.cell_of[b];
        const auto ia = static_cast<int>(a);
        const auto ib = static_cast<int>(b);
        const double delta = 2.0 * (around(a, cb, ia) + around(b, ca, ib) - around(a, ca, ib) - around(b, cb, ia));
        if (delta < best) {
          best = delta;
          partner = b;
        }
      }
      if (partner == m) continue;
      const int cb = placement.cell_of[partner];
      placement.cell_of[a] = cb;
      placement.cell_of[partner] = ca;
      at[static_cast<std::size_t>(cb)] = static_cast<int>(a);
      at[static_cast<std::size_t>(ca)] = static_cast<int>(partner);
      ++stats.swaps;
      improved = true;
    }
    if (!improved) {
      stats.converged = true;
      break;
    }
  }
  return stats;
}

ClusterPlacement place_cluster(const DistanceMatrix& local, std::span<const std::size_t> reps, int max_passes,
                               int starts) {
  const std::size_t m = local.size();
  HexGrid grid = hex_grid(m, reps.size());
  bool regrown = false;
  try {
    greedy_assign(local, grid, reps);
  } catch (const Error& e) {
    if (e.code() != ErrorCode::grid_overflow) throw;
    regrown = true;
    grid = hex_grid_cells(4 * (m + 7 * reps.size()) + 37);
    greedy_assign(local, grid, reps);
  }

  // Most central non-representative members seed the first free cell.
  std::vector<char> is_rep(m, 0);
  for (auto r : reps) is_rep[r] = 1;
  std::vector<std::pair<double, std::size_t>> central;
  for (std::size_t i = 0; i < m; ++i) {
    if (is_rep[i]) continue;
    double total = 0.0;
    for (std::size_t j = 0; j < m; ++j) total += local(i, j);
    central.emplace_back(total, i);
  }
  std::sort(central.begin(), central.end());
  std::vector<std::optional<std::size_t>> firsts{std::nullopt};
  for (std::size_t i = 0; i < central.size() && static_cast<int>(firsts.size()) < std::max(1, starts); ++i) {
    if (i == 0) continue;  // the plain greedy already starts from the most central member
    firsts.emplace_back(central[i].second);
  }

  ClusterPlacement best;
  bool have = false;
  for (const auto& first : firsts) {
    ClusterPlacement cp;
    cp.grid = grid;
    cp.regrown = regrown;
    cp.placement = greedy_assign(local, grid, reps, first);
    cp.greedy_objective = layout_objective(cp.placement.cell_of, local, grid);
    cp.refine = swap_refine(cp.placement, local, grid, max_passes);
    cp.objective = layout_objective(cp.placement.cell_of, local, grid);
    if (!have || cp.objective < best.objective) {
      best = std::move(cp);
      have = true;
    }
  }

  // Kicks: two random swaps, refine again, keep converged improvements.
  std::vector<std::size_t> movable;
  std::vector<char> is_fixed(m, 0);
  for (int f : best.placement.fixed) is_fixed[static_cast<std::size_t>(f)] = 1;
  for (std::size_t i = 0; i < m; ++i)
    if (!is_fixed[i]) movable.push_back(i);
  if (movable.size() >= 3) {
    const std::size_t kicks = std::min<std::size_t>(32, 2'000'000 / (m * m));
    Rng rng(mix64(m));
    for (std::size_t k = 0; k < kicks; ++k) {
      Placement p = best.placement;
      for (int z = 0; z < 2; ++z) {
        const auto a = movable[rng.below(movable.size())];
        const auto b = movable[rng.below(movable.size())];
        std::swap(p.cell_of[a], p.cell_of[b]);
      }
      const auto stats = swap_refine(p, local, grid, max_passes);
      const double objective = layout_objective(p.cell_of, local, grid);
      if (stats.converged && objective < best.objective) {
        best.placement = std::move(p);
        best.objective = objective;
        best.refine = stats;
      }
    }
  }
  return best;
}

// ---------------------------------------------------------------------------
// Views

double separation_scale(std::span<const Point> centers, std::span<const double> radii, double gap) {
  double s = 1.0;
  for (std::size_t i = 0; i < centers.size(); ++i) {
    for (std::size_t j = i + 1; j < centers.size(); ++j) {
      const double need = radii[i] + radii[j] + gap;
      const double have = dist(centers[i], centers[j]);
      if (have <= 1e-12) continue;
      s = std::max(s, need / have);
    }
  }
  return s;
}

std::vector<Point> place_labels(std::span<const Disc> discs, std::span<const LabelRequest> requests,
                                double label_radius) {
  std::vector<Point> placed;
  placed.reserve(requests.size());
  constexpr int kAngles = 24;
  for (const auto& req : requests) {
    const Disc& home = discs[static_cast<std::size_t>(req.disc)];
    const double dx = req.from[0] - home.center[0];
    const double dy = req.from[1] - home.center[1];
    const double base = (std::abs(dx) + std::abs(dy) > 1e-12) ? std::atan2(dy, dx) : 0.0;
    bool done = false;
    for (int ring = 0; !done; ++ring) {
      const double rho = home.radius + label_radius + 0.5 + 2.0 * label_radius * ring;
      for (int k = 0; k <= kAngles && !done; ++k) {
        // 0, +1, -1, +2, -2, ... steps around the preferred direction.
        const int step = (k + 1) / 2 * (k % 2 == 1 ? 1 : -1);
        const double a = base + step * (2.0 * std::numbers::pi / kAngles);
        const Point p{home.center[0] + rho * std::cos(a), home.center[1] + rho * std::sin(a)};
        bool ok = true;
        for (const auto& d : discs) ok = ok && dist(p, d.center) >= d.radius + label_radius;
        for (const auto& q : placed) ok = ok && dist(p, q) >= 2.0 * label_radius;
        if (ok) {
          placed.push_back(p);
          done = true;
        }
      }
    }
  }
  return placed;
}

namespace {

struct Polar {
  double angle;
  double radius;
  bool operator<(const Polar& o) const { return angle != o.angle ? angle < o.angle : radius < o.radius; }
};

// Reassigns retained members among their own cells so that their cyclic
// order around the cluster center follows `order_key`; the rotation with the
// lowest objective wins.
void keep_cyclic_order(ClusterPlacement& cp, const DistanceMatrix& local,
                       const std::vector<std::pair<std::size_t, Polar>>& retained) {
  if (retained.size() < 3) return;
  std::vector<std::pair<std::size_t, Polar>> members = retained;
  std::sort(members.begin(), members.end(), [](const auto& a, const auto& b) { return a.second < b.second; });
  std::vector<std::pair<Polar, int>> cells;
  for (const auto& [m, _] : members) {
    const auto& c = cp.grid.cell(static_cast<std::size_t>(cp.placement.cell_of[m]));
    cells.push_back({{angle_of(c.x, c.y), std::hypot(c.x, c.y)}, cp.placement.cell_of[m]});
  }
  std::sort(cells.begin(), cells.end(), [](const auto& a, const auto& b) { return a.first < b.first; });
  const std::size_t n = members.size();
  std::vector<int> best_cells = cp.placement.cell_of;
  double best = kInf;
  for (std::size_t t = 0; t < n; ++t) {
    std::vector<int> trial = cp.placement.cell_of;
    for (std::size_t k = 0; k < n; ++k) trial[members[k].first] = cells[(k + t) % n].second;
    const double obj = layout_objective(trial, local, cp.grid);
    if (obj < best) {
      best = obj;
      best_cells = std::move(trial);
    }
  }
  cp.placement.cell_of = std::move(best_cells);
  cp.objective = best;
}

}  // namespace

LayoutResult layout_view(const ClusterTree& tree, const DistanceMatrix& dm, AccuracyView accuracy, int focus,
                         const LayoutOptions& options, const LayoutResult* parent) {
  if (focus < 0 || static_cast<std::size_t>(focus) >= tree.nodes.size()) {
    throw Error(ErrorCode::out_of_range, "unknown cluster " + std::to_string(focus));
  }
  const auto& node = tree.nodes[static_cast<std::size_t>(focus)];
  LayoutResult out;
  out.key = tree.key;
  out.focus = focus;
  std::vector<int> clusters = node.children;
  if (clusters.empty()) clusters.push_back(focus);
  out.level = tree.nodes[static_cast<std::size_t>(clusters.front())].level;

  const std::size_t budget = std::max(options.budget, 10 * clusters.size());
  const auto sample = sample_clusters(tree, dm, clusters, budget, true);

  const std::size_t k = clusters.size();
  std::vector<std::vector<std::size_t>> members(k);
  std::vector<std::vector<std::size_t>> reps(k);  // local indices
  {
    std::size_t pos = 0;
    for (std::size_t i = 0; i < k; ++i) {
      const auto q = sample.quotas[i].quota;
      members[i].assign(sample.selected.begin() + static_cast<std::ptrdiff_t>(pos),
                        sample.selected.begin() + static_cast<std::ptrdiff_t>(pos + q));
      pos += q;
      std::vector<std::size_t> r = tree.nodes[static_cast<std::size_t>(clusters[i])].representatives;
      auto acc = [&](std::size_t x) {
        return x < accuracy.size() && !std::isnan(accuracy[x]) ? accuracy[x] : -kInf;
      };
      std::stable_sort(r.begin(), r.end(), [&](auto a, auto b) { return acc(a) > acc(b); });
      for (auto x : r) {
        const auto it = std::find(members[i].begin(), members[i].end(), x);
        if (it != members[i].end()) reps[i].push_back(static_cast<std::size_t>(it - members[i].begin()));
      }
    }
  }

  std::vector<DistanceMatrix> locals(k);
  std::vector<ClusterPlacement> placed(k);
  parallel_for(k, default_threads(), [&](std::size_t i) {
    locals[i] = dm.subset(members[i]);
    placed[i] = place_cluster(locals[i], reps[i], options.max_passes);
  });

  if (parent) {
    const ClusterView* prev = nullptr;
    for (const auto& cv : parent->clusters)
      if (cv.id == focus) prev = &cv;
    if (prev) {
      std::map<ArchId, Polar> before;
      for (const auto& c : prev->cells) {
        const Point p = hex_center(c.q, c.r);
        before[c.arch_id] = {angle_of(p[0], p[1]), std::hypot(p[0], p[1])};
      }
      for (std::size_t i = 0; i < k; ++i) {
        std::vector<char> is_fixed(members[i].size(), 0);
        for (int f : placed[i].placement.fixed) is_fixed[static_cast<std::size_t>(f)] = 1;
        std::vector<std::pair<std::size_t, Polar>> retained;
        for (std::size_t m = 0; m < members[i].size(); ++m) {
          if (is_fixed[m]) continue;
          const auto it = before.find(tree.ids.at(members[i][m]));
          if (it != before.end()) retained.push_back({m, it->second});
        }
        keep_cyclic_order(placed[i], locals[i], retained);
      }
    }
  }

  // Cluster centers from medoid distances, then spread so discs do not touch.
  std::vector<double> cd(k * k, 0.0);
  for (std::size_t i = 0; i < k; ++i)
    for (std::size_t j = 0; j < k; ++j)
      cd[i * k + j] = dm(tree.nodes[static_cast<std::size_t>(clusters[i])].medoid,
                         tree.nodes[static_cast<std::size_t>(clusters[j])].medoid);
  auto centers = stress_layout(cd, k, options.stress_iterations, options.seed).positions;
  std::vector<double> radii(k);
  for (std::size_t i = 0; i < k; ++i) {
    double r = 0.0;
    const auto& g = placed[i].grid;
    for (int c : placed[i].placement.cell_of) r = std::max(r, std::hypot(g.cell(static_cast<std::size_t>(c)).x,
                                                                         g.cell(static_cast<std::size_t>(c)).y));
    for (const auto& block : placed[i].placement.glyph_cells)
      for (int c : block)
        r = std::max(r, std::hypot(g.cell(static_cast<std::size_t>(c)).x, g.cell(static_cast<std::size_t>(c)).y));
    radii[i] = r + 0.5;
  }
  const double s = separation_scale(centers, radii, options.gap);
  for (auto& c : centers) c = {c[0] * s, c[1] * s};

  std::vector<Disc> discs(k);
  std::vector<LabelRequest> requests;
  for (std::size_t i = 0; i < k; ++i) {
    discs[i] = {centers[i], radii[i]};
    for (int f : placed[i].placement.fixed) {
      const auto& c = placed[i].grid.cell(static_cast<std::size_t>(placed[i].placement.cell_of[static_cast<std::size_t>(f)]));
      requests.push_back({{centers[i][0] + c.x, centers[i][1] + c.y}, static_cast<int>(i)});
    }
  }
  const auto anchors = place_labels(discs, requests, options.label_radius);

  std::size_t next_anchor = 0;
  for (std::size_t i = 0; i < k; ++i) {
    ClusterView cv;
    cv.id = clusters[i];
    cv.center = centers[i];
    cv.radius = radii[i];
    cv.objective = placed[i].objective;
    const auto& g = placed[i].grid;
    for (std::size_t m = 0; m < members[i].size(); ++m) {
      const auto& c = g.cell(static_cast<std::size_t>(placed[i].placement.cell_of[m]));
      cv.cells.push_back({tree.ids.at(members[i][m]), c.q, c.r, centers[i][0] + c.x, centers[i][1] + c.y});
    }
    for (std::size_t f = 0; f < placed[i].placement.fixed.size(); ++f) {
      GlyphPlacement gp;
      gp.arch_id = tree.ids.at(members[i][static_cast<std::size_t>(placed[i].placement.fixed[f])]);
      for (int c : placed[i].placement.glyph_cells[f]) {
        const auto& cell = g.cell(static_cast<std::size_t>(c));
        gp.cells.emplace_back(cell.q, cell.r);
      }
      gp.label_anchor = anchors[next_anchor++];
      cv.glyphs.push_back(std::move(gp));
    }
    out.clusters.push_back(std::move(cv));
  }
  return out;
}

// ---------------------------------------------------------------------------
// JSON

std::string layout_to_json(const LayoutResult& layout) {
  ojson j;
  j["version"] = 1;
  j["kind"] = "layout";
  j["cache_key"] = layout.key.to_json();
  j["level"] = layout.level;
  j["focus"] = layout.focus;
  j["scale"] = layout.scale;
  ojson clusters = ojson::array();
  for (const auto& cv : layout.clusters) {
    ojson c;
    c["id"] = cv.id;
    c["center"] = {cv.center[0], cv.center[1]};
    c["radius"] = cv.radius;
    c["objective"] = cv.objective;
    ojson cells = ojson::array();
    for (const auto& p : cv.cells) {
      ojson e;
      e["arch_id"] = p.arch_id;
      e["q"] = p.q;
      e["r"] = p.r;
      e["x"] = p.x;
      e["y"] = p.y;
      cells.push_back(e);
    }
    c["cells"] = cells;
    ojson glyphs = ojson::array();
    for (const auto& g : cv.glyphs) {
      ojson e;
      e["arch_id"] = g.arch_id;
      ojson gc = ojson::array();
      for (auto [q, r] : g.cells) gc.push_back({q, r});
      e["cells"] = gc;
      e["label_anchor"] = {g.label_anchor[0], g.label_anchor[1]};
      glyphs.push_back(e);
    }
    c["glyphs"] = glyphs;
    clusters.push_back(c);
  }
  j["clusters"] = clusters;
  return j.dump(2) + "\n";
}

LayoutResult layout_from_json(std::string_view text, const CacheKey* expected) {
  auto corrupt = [](const std::string& msg) -> void { throw Error(ErrorCode::corrupt_file, "layout: " + msg); };
  LayoutResult out;
  try {
    const auto j = ojson::parse(text);
    if (!j.is_object() || j.value("version", 0) != 1 || j.value("kind", "") != "layout") corrupt("not a layout file");
    out.key = CacheKey::from_json(j.at("cache_key"));
    if (expected) check_cache_key(*expected, out.key, "layout");
    out.level = j.at("level").get<int>();
    out.focus = j.at("focus").get<int>();
    out.scale = j.at("scale").get<double>();
    for (const auto& c : j.at("clusters")) {
      ClusterView cv;
      cv.id = c.at("id").get<int>();
      cv.center = {c.at("center").at(0).get<double>(), c.at("center").at(1).get<double>()};
      cv.radius = c.at("radius").get<double>();
      cv.objective = c.at("objective").get<double>();
      for (const auto& e : c.at("cells")) {
        cv.cells.push_back({e.at("arch_id").get<ArchId>(), e.at("q").get<int>(), e.at("r").get<int>(),
                            e.at("x").get<double>(), e.at("y").get<double>()});
      }
      for (const auto& e : c.at("glyphs")) {
        GlyphPlacement g;
        g.arch_id = e.at("arch_id").get<ArchId>();
        for (const auto& qr : e.at("cells")) g.cells.emplace_back(qr.at(0).get<int>(), qr.at(1).get<int>());
        g.label_anchor = {e.at("label_anchor").at(0).get<double>(), e.at("label_anchor").at(1).get<double>()};
        cv.glyphs.push_back(std::move(g));
      }
      out.clusters.push_back(std::move(cv));
    }
  } catch (const nlohmann::json::exception& e) {
    corrupt(e.what());
  }
  return out;
}

}  // namespace archx
