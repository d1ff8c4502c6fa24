// SPDX-License-Identifier: Apache-2.0
#include "archx/distance.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <limits>
#include <queue>
#include <unordered_map>

#include "archx/error.hpp"
#include "archx/hungarian.hpp"
#include "archx/util.hpp"

namespace archx {

namespace {
constexpr double kInf = std::numeric_limits<double>::infinity();
}

std::string_view to_string(DistanceBackend backend) {
  switch (backend) {
    case DistanceBackend::exact_apsp: return "exact_apsp";
    case DistanceBackend::exact_astar: return "exact_astar";
    case DistanceBackend::approx_bipartite: return "approx_bipartite";
  }
  return "unknown";
}

// ---------------------------------------------------------------------------
// DistanceMatrix

DistanceMatrix::DistanceMatrix(std::vector<ArchId> ids, DistanceBackend backend)
    : n_(ids.size()), backend_(backend), ids_(std::move(ids)), values_(n_ * n_, 0.0) {}

DistanceMatrix DistanceMatrix::from_values(std::size_t n, std::vector<double> values, DistanceBackend backend,
                                           std::vector<ArchId> ids) {
  if (values.size() != n * n) throw Error(ErrorCode::invalid_argument, "distance matrix must be n x n");
  if (ids.empty()) {
    ids.resize(n);
    for (std::size_t i = 0; i < n; ++i) ids[i] = i;
  }
  if (ids.size() != n) throw Error(ErrorCode::invalid_argument, "distance matrix ids must have n entries");
  DistanceMatrix dm(std::move(ids), backend);
  dm.values_ = std::move(values);
  return dm;
}

std::optional<std::size_t> DistanceMatrix::index_of(ArchId id) const {
  const auto it = std::find(ids_.begin(), ids_.end(), id);
  if (it == ids_.end()) return std::nullopt;
  return static_cast<std::size_t>(it - ids_.begin());
}

DistanceMatrix DistanceMatrix::subset(std::span<const std::size_t> rows) const {
  std::vector<ArchId> ids;
  ids.reserve(rows.size());
  for (auto r : rows) ids.push_back(ids_.at(r));
  DistanceMatrix out(std::move(ids), backend_);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    for (std::size_t j = 0; j < rows.size(); ++j) out.values_[i * rows.size() + j] = (*this)(rows[i], rows[j]);
  }
  return out;
}

// ---------------------------------------------------------------------------
// ArchGraph

std::optional<std::uint32_t> ArchGraph::index_of(ArchId id) const {
  if (ids_.empty()) {
    if (id >= vertex_count()) return std::nullopt;
    return static_cast<std::uint32_t>(id);
  }
  const auto it = std::lower_bound(ids_.begin(), ids_.end(), id);
  if (it == ids_.end() || *it != id) return std::nullopt;
  return static_cast<std::uint32_t>(it - ids_.begin());
}

ArchGraph ArchGraph::build(const Space& space, std::span<const ArchId> sampled, std::uint64_t cap) {
  const auto total = space.count(cap);
  if (!total) {
    throw Error(ErrorCode::space_too_large,
                "space exceeds the edit-graph cap of " + std::to_string(cap) + "; use the bipartite backend");
  }
  if (*total > std::numeric_limits<std::uint32_t>::max()) {
    throw Error(ErrorCode::space_too_large, "space too large for 32-bit vertex indices");
  }
  ArchGraph g;
  const std::size_t n = static_cast<std::size_t>(*total);
  g.min_cost_ = kInf;
  g.max_cost_ = 0.0;
  auto note_cost = [&](double c) {
    g.min_cost_ = std::min(g.min_cost_, c);
    g.max_cost_ = std::max(g.max_cost_, c);
  };

  if (space.family() == SpaceFamily::op_slot) {
    // Dense ids: vertex index == arch id, neighbors by mixed-radix arithmetic.
    const auto c = static_cast<std::uint64_t>(space.op_count());
    const int slots = space.positions();
    const std::size_t k = static_cast<std::size_t>(slots) * (c - 1);
    g.offsets_.resize(n + 1);
    g.targets_.resize(n * k);
    g.costs_.resize(n * k);
    std::vector<double> sub(c * c);
    for (std::uint64_t a = 0; a < c; ++a) {
      for (std::uint64_t b = 0; b < c; ++b) {
        sub[a * c + b] = space.substitution_cost(static_cast<OpId>(a), static_cast<OpId>(b));
        if (a != b) note_cost(sub[a * c + b]);
      }
    }
    for (std::size_t v = 0; v < n; ++v) {
      g.offsets_[v] = v * k;
      std::size_t e = v * k;
      for (int s = 0; s < slots; ++s) {
        const std::uint64_t stride = space.radix(s);
        const std::uint64_t cur = (v / stride) % c;
        for (std::uint64_t o = 0; o < c; ++o) {
          if (o == cur) continue;
          g.targets_[e] = static_cast<std::uint32_t>(v + o * stride - cur * stride);
          g.costs_[e] = sub[cur * c + o];
          ++e;
        }
      }
    }
    g.offsets_[n] = n * k;
  } else {
    g.ids_.reserve(n);
    space.enumerate([&](const Architecture& a) { g.ids_.push_back(space.id_of(a)); });
    std::sort(g.ids_.begin(), g.ids_.end());
    g.offsets_.assign(1, 0);
    g.offsets_.reserve(n + 1);
    for (std::size_t v = 0; v < n; ++v) {
      const Architecture a = space.decode(g.ids_[v]);
      space.for_each_neighbor(a, [&](const Architecture& b, double cost) {
        const auto idx = g.index_of(space.id_of(b));
        if (!idx) throw Error(ErrorCode::invalid_argument, "neighbor outside enumerated space");
        g.targets_.push_back(*idx);
        g.costs_.push_back(cost);
        note_cost(cost);
      });
      g.offsets_.push_back(g.targets_.size());
    }
  }
  if (!std::isfinite(g.min_cost_)) g.min_cost_ = 0.0;

  g.sampled_flag_.assign(n, 0);
  g.sampled_.reserve(sampled.size());
  for (ArchId id : sampled) {
    const auto idx = g.index_of(id);
    if (!idx) throw Error(ErrorCode::unknown_arch, "sampled architecture " + std::to_string(id) + " not in space");
    if (g.sampled_flag_[*idx]) {
      throw Error(ErrorCode::invalid_argument, "duplicate sampled architecture " + std::to_string(id));
    }
    g.sampled_flag_[*idx] = 1;
    g.sampled_.push_back(*idx);
  }
  return g;
}

ArchGraph ArchGraph::without_vertices(std::span<const std::uint32_t> removed) const {
  std::vector<char> drop(vertex_count(), 0);
  for (auto v : removed) {
    if (v >= vertex_count()) throw Error(ErrorCode::invalid_argument, "vertex out of range");
    if (sampled_flag_[v]) throw Error(ErrorCode::invalid_argument, "cannot remove a sampled vertex");
    drop[v] = 1;
  }
  ArchGraph g;
  g.ids_ = ids_;
  g.sampled_flag_ = sampled_flag_;
  g.sampled_ = sampled_;
  g.min_cost_ = min_cost_;
  g.max_cost_ = max_cost_;
  g.offsets_.assign(1, 0);
  for (std::uint32_t v = 0; v < vertex_count(); ++v) {
    if (!drop[v]) {
      const auto nb = neighbors(v);
      const auto cs = costs(v);
      for (std::size_t i = 0; i < nb.size(); ++i) {
        if (drop[nb[i]]) continue;
        g.targets_.push_back(nb[i]);
        g.costs_.push_back(cs[i]);
      }
    }
    g.offsets_.push_back(g.targets_.size());
  }
  return g;
}

// ---------------------------------------------------------------------------
// Bucketed Dijkstra

double bucket_width(const ArchGraph& g) {
  const double quantum = std::ldexp(g.max_edge_cost(), -20);
  return std::max(quantum, g.min_edge_cost());
}

namespace {

struct SsspWorkspace {
  std::vector<double> dist;
  std::vector<char> settled;
  std::vector<std::vector<std::uint32_t>> buckets;
};

void run_sssp(const ArchGraph& g, std::uint32_t source, SsspWorkspace& ws, SsspStats* stats) {
  const std::size_t n = g.vertex_count();
  ws.dist.assign(n, kInf);
  ws.settled.assign(n, 0);
  const double width = bucket_width(g);
  const bool exact_in_bucket = width > g.min_edge_cost();
  const std::size_t span =
      width > 0.0 ? static_cast<std::size_t>(std::floor(g.max_edge_cost() / width)) + 2 : 2;
  if (ws.buckets.size() != span) ws.buckets.assign(span, {});
  for (auto& b : ws.buckets) b.clear();

  SsspStats local;
  local.bucket_width = width;
  local.exact_within_bucket = exact_in_bucket;

  auto key_of = [&](double d) -> std::uint64_t {
    return width > 0.0 ? static_cast<std::uint64_t>(std::floor(d / width)) : 0;
  };

  ws.dist[source] = 0.0;
  ws.buckets[0].push_back(source);
  std::size_t pending = 1;
  std::uint64_t cursor = 0;

  using Entry = std::pair<double, std::uint32_t>;
  std::priority_queue<Entry, std::vector<Entry>, std::greater<>> local_heap;

  auto relax_from = [&](std::uint32_t u, auto&& push_current) {
    const auto nb = g.neighbors(u);
    const auto cs = g.costs(u);
    const double du = ws.dist[u];
    for (std::size_t i = 0; i < nb.size(); ++i) {
      const std::uint32_t v = nb[i];
      if (ws.settled[v]) continue;
      const double nd = du + cs[i];
      ++local.relaxations;
      if (nd < ws.dist[v]) {
        ws.dist[v] = nd;
        std::uint64_t key = key_of(nd);
        if (key <= cursor) {
          if (exact_in_bucket) {
            push_current(nd, v);
            continue;
          }
          key = cursor + 1;  // rounding at a bucket edge; costs >= width
        }
        ws.buckets[key % span].push_back(v);
        ++pending;
      }
    }
  };

  while (pending > 0) {
    auto& bucket = ws.buckets[cursor % span];
    ++local.buckets_scanned;
    if (bucket.empty()) {
      ++cursor;
      continue;
    }
    pending -= bucket.size();
    if (!exact_in_bucket) {
      // Every entry is final: nothing in this bucket can improve another, and
      // relaxations never land in the bucket being drained.
      for (std::uint32_t u : bucket) {
        if (ws.settled[u]) continue;
        ws.settled[u] = 1;
        ++local.settled;
        relax_from(u, [](double, std::uint32_t) {});
      }
      bucket.clear();
    } else {
      for (std::uint32_t u : bucket) local_heap.emplace(ws.dist[u], u);
      bucket.clear();
      while (!local_heap.empty()) {
        const auto [d, u] = local_heap.top();
        local_heap.pop();
        if (ws.settled[u] || d != ws.dist[u]) continue;
        ws.settled[u] = 1;
        ++local.settled;
        relax_from(u, [&](double nd, std::uint32_t v) { local_heap.emplace(nd, v); });
      }
    }
    ++cursor;
  }
  if (stats) *stats = local;
}

}  // namespace

std::vector<double> sssp_bucketed(const ArchGraph& g, std::uint32_t source, SsspStats* stats) {
  if (source >= g.vertex_count()) throw Error(ErrorCode::invalid_argument, "source out of range");
  SsspWorkspace ws;
  run_sssp(g, source, ws, stats);
  return std::move(ws.dist);
}

DistanceMatrix apsp_sampled(const ArchGraph& g, unsigned threads) {
  const auto& sampled = g.sampled();
  std::vector<ArchId> ids;
  ids.reserve(sampled.size());
  for (auto v : sampled) ids.push_back(g.arch_id(v));
  DistanceMatrix dm(std::move(ids), DistanceBackend::exact_apsp);
  const std::size_t n = sampled.size();
  if (threads == 0) threads = default_threads();

  // Each source writes only its own row; the matrix is symmetrized after.
  std::vector<double> rows(n * n, 0.0);
  const unsigned workers = std::max(1u, std::min<unsigned>(threads, static_cast<unsigned>(std::max<std::size_t>(n, 1))));
  std::vector<SsspWorkspace> spaces(workers);
  // Partition sources into contiguous blocks, one workspace per block.
  const std::size_t block = (n + workers - 1) / std::max(1u, workers);
  parallel_for(workers, workers, [&](std::size_t w) {
    SsspWorkspace& ws = spaces[w];
    const std::size_t begin = w * block;
    const std::size_t end = std::min(n, begin + block);
    for (std::size_t i = begin; i < end; ++i) {
      run_sssp(g, sampled[i], ws, nullptr);
      for (std::size_t j = 0; j < n; ++j) rows[i * n + j] = ws.dist[sampled[j]];
    }
  });
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      const double d = rows[i * n + j];
      if (!std::isfinite(d)) {
        throw Error(ErrorCode::disconnected, "sampled architectures " + std::to_string(g.arch_id(sampled[i])) +
                                                 " and " + std::to_string(g.arch_id(sampled[j])) +
                                                 " are not connected in the edit graph");
      }
      dm.set(i, j, d);
    }
  }
  return dm;
}

// ---------------------------------------------------------------------------
// A*

namespace {

class MultisetBound {
 public:
  MultisetBound(const Space& space, const Architecture& target) : space_(space), target_(target) {
    const auto n = static_cast<std::size_t>(space.positions());
    costs_.resize(n * n);
  }

  double operator()(const Architecture& a) {
    const int n = space_.positions();
    const auto N = static_cast<std::size_t>(n);
    double h = 0.0;
    if (N > 0) {
      for (std::size_t i = 0; i < N; ++i) {
        for (std::size_t j = 0; j < N; ++j) costs_[i * N + j] = space_.closure_cost(a.ops[i], target_.ops[j]);
      }
      h = solve_assignment(costs_, n).cost;
    }
    if (space_.family() == SpaceFamily::topology) {
      h += space_.deletion_cost() * std::popcount(a.edges ^ target_.edges);
    }
    return h;
  }

 private:
  const Space& space_;
  const Architecture& target_;
  std::vector<double> costs_;
};

}  // namespace

double exact_ged_astar(const Space& space, const Architecture& a, const Architecture& b,
                       std::uint64_t max_expansions) {
  if (!space.valid(a) || !space.valid(b)) throw Error(ErrorCode::invalid_argument, "astar: invalid architecture");
  const int layers = 2 * space.positions();
  if (layers > 16) {
    throw Error(ErrorCode::invalid_argument, "astar: combined layer count " + std::to_string(layers) + " exceeds 16");
  }
  if (a == b) return 0.0;
  const ArchId goal = space.id_of(b);

  struct Node {
    double f;
    double g;
    ArchId id;
  };
  auto worse = [](const Node& x, const Node& y) {
    if (x.f != y.f) return x.f > y.f;
    return x.g < y.g;  // prefer deeper nodes among equal f
  };
  std::priority_queue<Node, std::vector<Node>, decltype(worse)> open(worse);
  struct State {
    double g;
    bool closed;
  };
  std::unordered_map<ArchId, State> states;
  states.reserve(1024);

  MultisetBound heuristic(space, b);
  const ArchId start = space.id_of(a);
  states[start] = {0.0, false};
  open.push({heuristic(a), 0.0, start});

  std::uint64_t expansions = 0;
  while (!open.empty()) {
    const Node cur = open.top();
    open.pop();
    auto& st = states[cur.id];
    if (st.closed || cur.g > st.g) continue;
    if (cur.id == goal) return cur.g;
    st.closed = true;
    if (++expansions > max_expansions) {
      throw Error(ErrorCode::budget_exceeded, "astar: expansion budget exceeded");
    }
    const Architecture arch = space.decode(cur.id);
    space.for_each_neighbor(arch, [&](const Architecture& next, double cost) {
      const ArchId nid = space.id_of(next);
      const double ng = cur.g + cost;
      auto [it, inserted] = states.try_emplace(nid, State{ng, false});
      if (!inserted) {
        if (it->second.closed || ng >= it->second.g) return;
        it->second.g = ng;
      }
      open.push({ng + heuristic(next), ng, nid});
    });
  }
  throw Error(ErrorCode::disconnected, "astar: target unreachable under the space's edit set");
}

// ---------------------------------------------------------------------------
// Bipartite approximation

namespace {

// In topology spaces the planned edits must be applied in an order that keeps
// every intermediate encoding admissible. Growth edits go first, removals
// after; if no planned edit applies, the rest is finished by exact search.
double induced_topology_path(const Space& space, const Architecture& a, const Architecture& b, double planned) {
  Architecture cur = a;
  double spent = 0.0;
  const double del = space.deletion_cost();
  for (;;) {
    if (cur == b) return planned;
    bool applied = false;
    for (int pass = 0; pass < 2 && !applied; ++pass) {
      const bool grow = pass == 0;
      for (std::size_t p = 0; p < cur.ops.size() && !applied; ++p) {
        if (cur.ops[p] == b.ops[p] || space.is_none(b.ops[p]) != grow) continue;
        Architecture next = cur;
        next.ops[p] = b.ops[p];
        if (!space.admissible(next)) continue;
        spent += space.closure_cost(cur.ops[p], b.ops[p]);
        cur = std::move(next);
        applied = true;
      }
      for (int e = 0; e < space.edge_slots() && !applied; ++e) {
        const std::uint32_t bit = 1u << e;
        if ((cur.edges & bit) == (b.edges & bit) || ((b.edges & bit) != 0) != grow) continue;
        Architecture next = cur;
        next.edges ^= bit;
        if (!space.admissible(next)) continue;
        spent += del;
        cur = std::move(next);
        applied = true;
      }
    }
    if (!applied) return spent + exact_ged_astar(space, cur, b);
  }
}

}  // namespace

double approx_ged_bipartite(const Space& space, const Architecture& a, const Architecture& b) {
  if (!space.valid(a) || !space.valid(b)) throw Error(ErrorCode::invalid_argument, "bipartite: invalid architecture");
  // Layers are the op positions holding a non-`none` op. Positions are part
  // of a layer's identity, so only same-position layers may be substituted.
  std::vector<int> la, lb;
  for (int p = 0; p < space.positions(); ++p) {
    if (!space.is_none(a.ops[static_cast<std::size_t>(p)])) la.push_back(p);
    if (!space.is_none(b.ops[static_cast<std::size_t>(p)])) lb.push_back(p);
  }
  const std::size_t na = la.size();
  const std::size_t nb = lb.size();
  const std::size_t n = na + nb;
  const double del = space.deletion_cost();
  // Large enough to never be chosen over deletion + insertion.
  const double forbid = 4.0 * del + 4.0 * space.max_edit_cost() + 1.0;

  std::vector<double> m(n * n, 0.0);
  for (std::size_t i = 0; i < na; ++i) {
    for (std::size_t j = 0; j < nb; ++j) {
      m[i * n + j] = la[i] == lb[j]
                         ? space.closure_cost(a.ops[static_cast<std::size_t>(la[i])], b.ops[static_cast<std::size_t>(lb[j])])
                         : forbid;
    }
    for (std::size_t j = 0; j < na; ++j) m[i * n + nb + j] = i == j ? del : forbid;
  }
  for (std::size_t i = 0; i < nb; ++i) {
    for (std::size_t j = 0; j < nb; ++j) m[(na + i) * n + j] = i == j ? del : forbid;
    // Bottom-right block stays zero.
  }
  const Assignment match = solve_assignment(m, static_cast<int>(n));

  // Induced edit path: the node operations chosen by the assignment plus the
  // edge edits implied by keeping positions fixed.
  if (space.family() == SpaceFamily::op_slot) return match.cost;
  return induced_topology_path(space, a, b, match.cost + del * std::popcount(a.edges ^ b.edges));
}

DistanceMatrix pairwise_matrix(const Space& space, std::span<const Architecture> archs, DistanceBackend backend,
                               unsigned threads) {
  if (backend == DistanceBackend::exact_apsp) {
    throw Error(ErrorCode::invalid_argument, "pairwise_matrix: use apsp_sampled for the edit-graph backend");
  }
  std::vector<ArchId> ids;
  ids.reserve(archs.size());
  for (const auto& a : archs) ids.push_back(space.id_of(a));
  DistanceMatrix dm(std::move(ids), backend);
  const std::size_t n = archs.size();
  std::vector<std::pair<std::size_t, std::size_t>> pairs;
  pairs.reserve(n * (n - (n > 0 ? 1 : 0)) / 2);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) pairs.emplace_back(i, j);
  }
  std::vector<double> out(pairs.size());
  parallel_for(pairs.size(), threads == 0 ? default_threads() : threads, [&](std::size_t k) {
    const auto [i, j] = pairs[k];
    out[k] = backend == DistanceBackend::exact_astar ? exact_ged_astar(space, archs[i], archs[j])
                                                     : approx_ged_bipartite(space, archs[i], archs[j]);
  });
  for (std::size_t k = 0; k < pairs.size(); ++k) dm.set(pairs[k].first, pairs[k].second, out[k]);
  return dm;
}

}  // namespace archx
