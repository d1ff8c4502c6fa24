#include <doctest.h>

#include <cmath>
#include <queue>
#include <set>

#include "archx/distance.hpp"
#include "archx/error.hpp"
#include "archx/util.hpp"

using namespace archx;

namespace {

// Reference binary-heap Dijkstra over the same CSR graph.
std::vector<double> heap_dijkstra(const ArchGraph& g, std::uint32_t src) {
  std::vector<double> dist(g.vertex_count(), std::numeric_limits<double>::infinity());
  using E = std::pair<double, std::uint32_t>;
  std::priority_queue<E, std::vector<E>, std::greater<>> pq;
  dist[src] = 0.0;
  pq.emplace(0.0, src);
  while (!pq.empty()) {
    auto [d, u] = pq.top();
    pq.pop();
    if (d > dist[u]) continue;
    const auto nb = g.neighbors(u);
    const auto cs = g.costs(u);
    for (std::size_t i = 0; i < nb.size(); ++i) {
      if (d + cs[i] < dist[nb[i]]) {
        dist[nb[i]] = d + cs[i];
        pq.emplace(dist[nb[i]], nb[i]);
      }
    }
  }
  return dist;
}

std::vector<ArchId> all_ids(const Space& space) {
  std::vector<ArchId> ids;
  space.enumerate([&](const Architecture& a) { ids.push_back(space.id_of(a)); });
  return ids;
}

// Per-slot closure oracle: op-slot positions edit independently, so the
// exact distance is the sum over slots of the cheapest substitution chain.
double slotwise_oracle(const Space& space, const Architecture& a, const Architecture& b) {
  const int c = space.op_count();
  std::vector<double> d(static_cast<std::size_t>(c * c));
  for (int i = 0; i < c; ++i)
    for (int j = 0; j < c; ++j)
      d[static_cast<std::size_t>(i * c + j)] = space.substitution_cost(static_cast<OpId>(i), static_cast<OpId>(j));
  for (int k = 0; k < c; ++k)
    for (int i = 0; i < c; ++i)
      for (int j = 0; j < c; ++j)
        d[static_cast<std::size_t>(i * c + j)] =
            std::min(d[static_cast<std::size_t>(i * c + j)],
                     d[static_cast<std::size_t>(i * c + k)] + d[static_cast<std::size_t>(k * c + j)]);
  double total = 0.0;
  for (std::size_t s = 0; s < a.ops.size(); ++s) total += d[static_cast<std::size_t>(a.ops[s] * c + b.ops[s])];
  return total;
}

}  // namespace

TEST_CASE("edit graph shape") {
  SUBCASE("toy space") {
    const Space space(toy_spec(3, 3));
    const auto g = ArchGraph::build(space, all_ids(space));
    CHECK(g.vertex_count() == 27u);
    CHECK(g.edge_count() == 81u);
    for (std::uint32_t v = 0; v < 27; ++v) CHECK(g.degree(v) == 6u);
    CHECK(g.sampled_count() == 27u);
    std::size_t dummies = 0;
    for (std::uint32_t v = 0; v < 27; ++v) dummies += !g.is_sampled(v);
    CHECK(dummies == 0u);
  }
  SUBCASE("NAS-201-like space") {
    const Space space(nas201_spec());
    const std::vector<ArchId> sample{0, 17, 15624};
    const auto g = ArchGraph::build(space, sample);
    CHECK(g.vertex_count() == 15625u);
    for (std::uint32_t v = 0; v < 15625; ++v) REQUIRE(g.degree(v) == 24u);
    CHECK(g.sampled_count() == 3u);
  }
  SUBCASE("edges are undirected with equal cost") {
    const Space space(nas101_like_spec(5, 6));
    const auto g = ArchGraph::build(space, {});
    for (std::uint32_t u = 0; u < g.vertex_count(); ++u) {
      const auto nb = g.neighbors(u);
      for (std::size_t i = 0; i < nb.size(); ++i) {
        const auto back = g.neighbors(nb[i]);
        const auto it = std::find(back.begin(), back.end(), u);
        REQUIRE(it != back.end());
        CHECK(g.costs(nb[i])[static_cast<std::size_t>(it - back.begin())] == g.costs(u)[i]);
      }
      CHECK(g.degree(u) == space.one_edit_neighbors(space.decode(g.arch_id(u))).size());
    }
  }
  SUBCASE("over the cap") {
    const Space space(nas201_spec());
    CHECK_THROWS_AS(ArchGraph::build(space, {}, 1000), Error);
  }
}

TEST_CASE("bucketed SSSP equals heap Dijkstra") {
  SUBCASE("NAS-201-like, random sources") {
    const Space space(nas201_spec());
    const auto g = ArchGraph::build(space, {});
    Rng rng(7);
    for (int t = 0; t < 10; ++t) {
      const auto src = static_cast<std::uint32_t>(rng.below(g.vertex_count()));
      const auto got = sssp_bucketed(g, src);
      CHECK(got[src] == 0.0);
      REQUIRE(got == heap_dijkstra(g, src));
    }
  }
  SUBCASE("non-integer custom costs use exact in-bucket ordering") {
    SpaceSpec spec = toy_spec(4, 4);
    spec.cost_matrix = CostMatrix{{0, 0.3, 1.7, 2}, {0.3, 0, 0.45, 2}, {1.7, 0.45, 0, 2}, {2, 2, 2, 0}};
    const Space space(spec);
    const auto g = ArchGraph::build(space, {});
    for (std::uint32_t src : {0u, 5u, 100u, 255u}) {
      const auto got = sssp_bucketed(g, src);
      const auto ref = heap_dijkstra(g, src);
      for (std::size_t v = 0; v < got.size(); ++v) REQUIRE(got[v] == doctest::Approx(ref[v]).epsilon(1e-12));
    }
  }
  SUBCASE("width wider than the cheapest edge") {
    SpaceSpec spec = toy_spec(3, 3);
    spec.cost_matrix = CostMatrix{{0, 1e-7, 1}, {1e-7, 0, 1}, {1, 1, 0}};
    const Space space(spec);
    const auto g = ArchGraph::build(space, {});
    SsspStats stats;
    const auto got = sssp_bucketed(g, 0, &stats);
    CHECK(stats.exact_within_bucket);
    const auto ref = heap_dijkstra(g, 0);
    for (std::size_t v = 0; v < got.size(); ++v) CHECK(got[v] == doctest::Approx(ref[v]).epsilon(1e-12));
  }
  SUBCASE("topology graph") {
    const Space space(nas101_like_spec(5, 6));
    const auto g = ArchGraph::build(space, {});
    for (std::uint32_t src = 0; src < g.vertex_count(); src += 97) REQUIRE(sssp_bucketed(g, src) == heap_dijkstra(g, src));
  }
}

TEST_CASE("toy space distances") {
  const Space space(toy_spec(3, 3));
  const auto g = ArchGraph::build(space, all_ids(space));
  const auto dm = apsp_sampled(g, 2);
  const auto archs = space.enumerate_all();
  const OpId c3 = *space.op_by_name("conv3x3");
  const OpId c1 = *space.op_by_name("conv1x1");
  Architecture a{{c3, c3, c3}, 0}, b{{c1, c1, c3}, 0};
  CHECK(dm(*dm.index_of(space.id_of(a)), *dm.index_of(space.id_of(b))) == 2.0);
  CHECK(exact_ged_astar(space, a, b) == 2.0);

  for (std::size_t i = 0; i < archs.size(); ++i) {
    CHECK(dm(i, i) == 0.0);
    for (std::size_t j = 0; j < archs.size(); ++j) {
      CHECK(dm(i, j) == dm(j, i));
      CHECK(dm(i, j) == slotwise_oracle(space, archs[i], archs[j]));
      CHECK(dm(i, j) == exact_ged_astar(space, archs[i], archs[j]));
    }
  }
}

TEST_CASE("A* basics") {
  const Space space(nas201_spec());
  Rng rng(3);
  for (int t = 0; t < 30; ++t) {
    const Architecture a = space.random_architecture(rng.next());
    CHECK(exact_ged_astar(space, a, a) == 0.0);
    for (const auto& nb : space.one_edit_neighbors(a)) {
      if (rng.below(6) != 0) continue;
      CHECK(exact_ged_astar(space, a, nb.arch) == nb.cost);
    }
  }
  SUBCASE("budget") {
    const Architecture a{{0, 0, 0, 0, 0, 0}, 0}, b{{4, 4, 4, 4, 4, 4}, 0};
    CHECK_THROWS_AS(exact_ged_astar(space, a, b, 2), Error);
  }
}

TEST_CASE("A* with a non-metric cost matrix finds substitution chains") {
  SpaceSpec spec = toy_spec(2, 4);
  // Direct 0->2 costs 3, but 0->1->2 costs 1.
  spec.cost_matrix = CostMatrix{{0, 0.5, 3, 1}, {0.5, 0, 0.5, 1}, {3, 0.5, 0, 1}, {1, 1, 1, 0}};
  const Space space(spec);
  const auto archs = space.enumerate_all();
  const auto g = ArchGraph::build(space, all_ids(space));
  const auto dm = apsp_sampled(g, 1);
  for (std::size_t i = 0; i < archs.size(); ++i)
    for (std::size_t j = 0; j < archs.size(); ++j) {
      CHECK(dm(i, j) == doctest::Approx(slotwise_oracle(space, archs[i], archs[j])));
      CHECK(exact_ged_astar(space, archs[i], archs[j]) == doctest::Approx(dm(i, j)));
    }
}

TEST_CASE("topology backends agree with the edit graph") {
  const Space space(nas101_like_spec(4, 4));
  const auto ids = all_ids(space);
  const auto g = ArchGraph::build(space, ids);
  const auto dm = apsp_sampled(g);
  for (std::size_t i = 0; i < ids.size(); ++i) {
    for (std::size_t j = i + 1; j < ids.size(); j += 3) {
      const auto a = space.decode(ids[i]);
      const auto b = space.decode(ids[j]);
      CHECK(exact_ged_astar(space, a, b) == doctest::Approx(dm(i, j)));
    }
  }
}

TEST_CASE("metric axioms on the exact matrix") {
  const Space space(nas201_spec());
  Rng rng(11);
  std::set<ArchId> pick;
  while (pick.size() < 60) pick.insert(rng.below(15625));
  const std::vector<ArchId> sample(pick.begin(), pick.end());
  const auto g = ArchGraph::build(space, sample);
  const auto dm = apsp_sampled(g);
  const std::size_t n = dm.size();
  for (std::size_t i = 0; i < n; ++i) {
    REQUIRE(dm(i, i) == 0.0);
    for (std::size_t j = 0; j < n; ++j) {
      REQUIRE(dm(i, j) == dm(j, i));
      if (i != j) REQUIRE(dm(i, j) > 0.0);
      for (std::size_t k = 0; k < n; ++k) REQUIRE(dm(i, k) <= dm(i, j) + dm(j, k) + 1e-9);
    }
  }
}

TEST_CASE("results are independent of worker count") {
  const Space space(nas201_spec());
  std::vector<ArchId> sample;
  for (ArchId id = 3; id < 15625; id += 311) sample.push_back(id);
  const auto g = ArchGraph::build(space, sample);
  const auto one = apsp_sampled(g, 1);
  const auto many = apsp_sampled(g, 7);
  CHECK(one.values() == many.values());
  CHECK(one.ids() == sample);
}

TEST_CASE("removing dummy vertices never shortens sampled distances") {
  const Space space(toy_spec(3, 4));
  const std::vector<ArchId> sample{0, 21, 42, 63};
  const auto g = ArchGraph::build(space, sample);
  const auto base = apsp_sampled(g, 1);
  Rng rng(5);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<std::uint32_t> removed;
    for (std::uint32_t v = 0; v < g.vertex_count(); ++v)
      if (!g.is_sampled(v) && rng.below(4) == 0) removed.push_back(v);
    const auto h = g.without_vertices(removed);
    for (std::size_t i = 0; i < sample.size(); ++i) {
      const auto d = sssp_bucketed(h, h.sampled()[i]);
      for (std::size_t j = 0; j < sample.size(); ++j) CHECK(d[h.sampled()[j]] >= base(i, j));
    }
  }
  CHECK_THROWS_AS(g.without_vertices(std::vector<std::uint32_t>{0}), Error);
}

TEST_CASE("disconnected sampled pairs are an error") {
  const Space space(toy_spec(2, 3));
  const auto g = ArchGraph::build(space, std::vector<ArchId>{0, 8});
  // Cut every neighbor of vertex 0.
  std::vector<std::uint32_t> cut(g.neighbors(0).begin(), g.neighbors(0).end());
  const auto h = g.without_vertices(cut);
  try {
    apsp_sampled(h, 1);
    FAIL("expected Disconnected");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::disconnected);
  }
}

TEST_CASE("bipartite approximation") {
  SUBCASE("upper bound and substitution equality on the toy space") {
    const Space space(toy_spec(3, 3));
    const auto archs = space.enumerate_all();
    for (const auto& a : archs) {
      CHECK(approx_ged_bipartite(space, a, a) == 0.0);
      for (const auto& b : archs) {
        const double exact = exact_ged_astar(space, a, b);
        const double approx = approx_ged_bipartite(space, a, b);
        CHECK(approx >= exact);
        bool substitution_only = true;
        for (std::size_t s = 0; s < 3; ++s)
          if (a.ops[s] != b.ops[s] && (space.is_none(a.ops[s]) || space.is_none(b.ops[s]))) substitution_only = false;
        if (substitution_only) CHECK(approx == exact);
      }
    }
  }
  SUBCASE("upper bound on a topology space") {
    const Space space(nas101_like_spec(4, 4));
    const auto archs = space.enumerate_all();
    for (std::size_t i = 0; i < archs.size(); i += 2)
      for (std::size_t j = 0; j < archs.size(); j += 5)
        CHECK(approx_ged_bipartite(space, archs[i], archs[j]) >= exact_ged_astar(space, archs[i], archs[j]) - 1e-9);
  }
  SUBCASE("pairwise matrix") {
    const Space space(toy_spec(3, 3));
    const auto archs = space.enumerate_all();
    const auto bp = pairwise_matrix(space, archs, DistanceBackend::approx_bipartite, 3);
    const auto as = pairwise_matrix(space, archs, DistanceBackend::exact_astar, 3);
    CHECK(bp.backend() == DistanceBackend::approx_bipartite);
    for (std::size_t i = 0; i < archs.size(); ++i)
      for (std::size_t j = 0; j < archs.size(); ++j) CHECK(bp(i, j) >= as(i, j));
  }
}
