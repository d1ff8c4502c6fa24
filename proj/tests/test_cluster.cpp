#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>

#include "archx/cluster.hpp"
#include "archx/error.hpp"
#include "archx/util.hpp"

using namespace archx;

namespace {

DistanceMatrix two_blobs(std::size_t a, std::size_t b) {
  const std::size_t n = a + b;
  std::vector<double> v(n * n, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j)
      if (i != j) v[i * n + j] = ((i < a) == (j < a)) ? 1.0 : 10.0;
  return DistanceMatrix::from_values(n, std::move(v));
}

DistanceMatrix random_points(std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<std::pair<double, double>> p(n);
  for (auto& q : p) q = {rng.uniform() * 10.0, rng.uniform() * 10.0};
  std::vector<double> v(n * n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) v[i * n + j] = std::hypot(p[i].first - p[j].first, p[i].second - p[j].second);
  return DistanceMatrix::from_values(n, std::move(v));
}

DistanceMatrix uniform_random(std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<double> v(n * n, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j) v[i * n + j] = v[j * n + i] = 1.0 + rng.uniform();
  return DistanceMatrix::from_values(n, std::move(v));
}

std::vector<std::size_t> iota_n(std::size_t n) {
  std::vector<std::size_t> v(n);
  std::iota(v.begin(), v.end(), 0);
  return v;
}

// Best 2-medoid objective over all bipartitions, each side at its own medoid.
double brute_force_two_medoids(const DistanceMatrix& dm) {
  const std::size_t n = dm.size();
  double best = 1e300;
  for (std::size_t a = 0; a < n; ++a)
    for (std::size_t b = a + 1; b < n; ++b) {
      double total = 0.0;
      for (std::size_t i = 0; i < n; ++i) total += std::min(dm(i, a), dm(i, b));
      best = std::min(best, total);
    }
  return best;
}

}  // namespace

TEST_CASE("kmedoids with K equal to the member count") {
  const auto dm = random_points(12, 1);
  const auto members = iota_n(12);
  const auto r = kmedoids(dm, members, 12, 0);
  CHECK(r.objective == 0.0);
  std::set<std::size_t> meds(r.medoids.begin(), r.medoids.end());
  CHECK(meds.size() == 12u);
}

TEST_CASE("kmedoids recovers two blobs") {
  const auto dm = two_blobs(5, 5);
  const auto members = iota_n(10);
  for (std::uint64_t seed : {0ull, 3ull, 99ull}) {
    const auto r = kmedoids(dm, members, 2, seed);
    for (std::size_t i = 0; i < 10; ++i) CHECK((r.assignment[i] == r.assignment[0]) == (i < 5));
    CHECK(r.objective == brute_force_two_medoids(dm));
  }
}

TEST_CASE("kmedoids objective never increases") {
  for (std::uint64_t t = 0; t < 50; ++t) {
    const auto dm = random_points(40, 100 + t);
    const auto members = iota_n(40);
    const auto r = kmedoids(dm, members, 2 + static_cast<int>(t % 6), t);
    CHECK(r.iterations <= 100);
    for (std::size_t i = 1; i < r.trace.size(); ++i) CHECK(r.trace[i] <= r.trace[i - 1]);
    CHECK(r.objective == r.trace.back());
  }
}

TEST_CASE("kmedoids rejects K above the distinct count") {
  std::vector<double> v(16, 0.0);
  v[1] = v[4] = 1.0;  // only points 0 and 1 differ; 2 and 3 duplicate 0
  v[1 * 4 + 2] = v[2 * 4 + 1] = 1.0;
  v[1 * 4 + 3] = v[3 * 4 + 1] = 1.0;
  const auto dm = DistanceMatrix::from_values(4, v);
  const auto members = iota_n(4);
  CHECK_NOTHROW(kmedoids(dm, members, 2, 0));
  try {
    kmedoids(dm, members, 3, 0);
    FAIL("expected DegenerateK");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::degenerate_k);
  }
}

TEST_CASE("grid search over K") {
  SUBCASE("two blobs pick K=2 strictly") {
    const auto dm = two_blobs(20, 20);
    const auto members = iota_n(40);
    const auto s = grid_search_k(dm, members, 2, 6);
    CHECK(s.best_k == 2);
    REQUIRE(s.curve.size() == 5u);
    for (std::size_t i = 1; i < s.curve.size(); ++i) CHECK(s.curve[0].score < s.curve[i].score);
    for (std::size_t i = 0; i < 40; ++i) CHECK((s.best.assignment[i] == s.best.assignment[0]) == (i < 20));
  }
  SUBCASE("two members") {
    const auto dm = random_points(2, 4);
    const auto members = iota_n(2);
    const auto s = grid_search_k(dm, members, 2, 2);
    CHECK(s.best_k == 2);
    CHECK(s.curve[0].mean_distance == 0.0);
  }
  SUBCASE("selection is the argmin of the recorded curve") {
    for (std::uint64_t t = 0; t < 10; ++t) {
      const auto dm = uniform_random(30, t);
      const auto members = iota_n(30);
      const auto s = grid_search_k(dm, members, 2, 4, t);
      int expect = s.curve[0].k;
      double best = s.curve[0].score;
      for (const auto& c : s.curve)
        if (c.score < best) {
          best = c.score;
          expect = c.k;
        }
      CHECK(s.best_k == expect);
      for (const auto& c : s.curve) CHECK(c.mean_distance == doctest::Approx(c.objective / 30.0));
    }
  }
  SUBCASE("bad range") { CHECK_THROWS_AS(grid_search_k(two_blobs(2, 2), iota_n(4), 2, 5), Error); }
}

TEST_CASE("hierarchy") {
  SUBCASE("below min_cluster is a single leaf") {
    const auto dm = random_points(20, 9);
    const auto tree = build_hierarchy(dm);
    CHECK(tree.nodes.size() == 1u);
    CHECK(tree.root().members.size() == 20u);
  }
  SUBCASE("two blobs give two children") {
    const auto dm = two_blobs(30, 30);
    const auto tree = build_hierarchy(dm);
    REQUIRE(tree.root().children.size() == 2u);
    CHECK(tree.depth() == 1);
    for (int c : tree.root().children) CHECK(tree.nodes[static_cast<std::size_t>(c)].members.size() == 30u);
  }
  SUBCASE("partition and medoid invariants") {
    const auto dm = random_points(300, 17);
    HierarchyOptions opt;
    opt.min_cluster = 30;
    const auto tree = build_hierarchy(dm, opt);
    CHECK(tree.depth() >= 2);
    for (const auto& node : tree.nodes) {
      double best = 1e300;
      for (auto c : node.members) {
        double sum = 0.0;
        for (auto m : node.members) sum += dm(c, m);
        best = std::min(best, sum);
      }
      double med = 0.0;
      for (auto m : node.members) med += dm(node.medoid, m);
      CHECK(med == best);
      CHECK(std::binary_search(node.members.begin(), node.members.end(), node.medoid));
      if (node.children.empty()) continue;
      std::vector<std::size_t> joined;
      for (int c : node.children) {
        const auto& ch = tree.nodes[static_cast<std::size_t>(c)];
        CHECK(ch.parent == node.id);
        CHECK(ch.level == node.level + 1);
        joined.insert(joined.end(), ch.members.begin(), ch.members.end());
      }
      std::sort(joined.begin(), joined.end());
      CHECK(joined == node.members);
    }
    for (int level = 0; level <= tree.depth() + 1; ++level) {
      std::vector<std::size_t> all;
      for (int id : tree.clusters_at(level)) {
        const auto& m = tree.nodes[static_cast<std::size_t>(id)].members;
        all.insert(all.end(), m.begin(), m.end());
      }
      std::sort(all.begin(), all.end());
      CHECK(all == iota_n(300));
    }
  }
  SUBCASE("deterministic") {
    const auto dm = random_points(120, 5);
    HierarchyOptions opt;
    opt.seed = 42;
    CHECK(tree_to_json(build_hierarchy(dm, opt)) == tree_to_json(build_hierarchy(dm, opt)));
  }
}

namespace {

ClusterTree flat_tree(const std::vector<std::size_t>& sizes, const DistanceMatrix& dm) {
  ClusterTree tree;
  tree.ids = dm.ids();
  ClusterNode root;
  root.members = iota_n(dm.size());
  root.medoid = 0;
  tree.nodes.push_back(root);
  std::size_t start = 0;
  for (auto s : sizes) {
    ClusterNode c;
    c.id = static_cast<int>(tree.nodes.size());
    c.level = 1;
    c.parent = 0;
    for (std::size_t i = 0; i < s; ++i) c.members.push_back(start + i);
    c.medoid = medoid_of(dm, c.members);
    start += s;
    tree.nodes[0].children.push_back(c.id);
    tree.nodes.push_back(c);
  }
  return tree;
}

}  // namespace

TEST_CASE("cluster-aware sampling") {
  SUBCASE("quota formula") {
    const auto dm = random_points(1000, 2);
    const auto tree = flat_tree({800, 150, 50}, dm);
    const auto s = sample_cluster_aware(tree, dm, 1, 200);
    REQUIRE(s.quotas.size() == 3u);
    CHECK(s.quotas[0].quota == 160u);
    CHECK(s.quotas[1].quota == 30u);
    CHECK(s.quotas[2].quota == 10u);
    CHECK(s.selected.size() == 200u);
    std::set<std::size_t> uniq(s.selected.begin(), s.selected.end());
    CHECK(uniq.size() == 200u);
    CHECK(s.selected[0] == tree.nodes[1].medoid);
  }
  SUBCASE("budget at least n selects everything") {
    const auto dm = random_points(50, 2);
    const auto tree = flat_tree({20, 30}, dm);
    const auto s = sample_cluster_aware(tree, dm, 1, 50);
    std::vector<std::size_t> sel = s.selected;
    std::sort(sel.begin(), sel.end());
    CHECK(sel == iota_n(50));
  }
  SUBCASE("budget too small") {
    const auto dm = random_points(50, 2);
    const auto tree = flat_tree({20, 20, 10}, dm);
    try {
      sample_cluster_aware(tree, dm, 1, 29);
      FAIL("expected BudgetTooSmall");
    } catch (const Error& e) {
      CHECK(e.code() == ErrorCode::budget_too_small);
    }
  }
  SUBCASE("floor and proportionality on random trees") {
    Rng rng(77);
    for (int t = 0; t < 100; ++t) {
      const std::size_t k = 2 + rng.below(6);
      std::vector<std::size_t> sizes;
      std::size_t n = 0;
      for (std::size_t i = 0; i < k; ++i) {
        sizes.push_back(1 + rng.below(120));
        n += sizes.back();
      }
      const auto dm = random_points(n, static_cast<std::uint64_t>(t));
      const auto tree = flat_tree(sizes, dm);
      const std::size_t budget = 10 * k + rng.below(n);
      const auto s = sample_cluster_aware(tree, dm, 1, budget);
      for (const auto& q : s.quotas) {
        CHECK(q.quota >= std::min<std::size_t>(10, q.size));
        CHECK(q.quota <= q.size);
        if (budget < n && q.size * budget >= 10 * n) {
          const double diff = std::abs(static_cast<double>(q.quota) / static_cast<double>(budget) -
                                       static_cast<double>(q.size) / static_cast<double>(n));
          CHECK(diff <= 2.0 / static_cast<double>(budget));
        }
      }
    }
  }
}

TEST_CASE("representatives") {
  const auto dm = random_points(20, 33);
  ClusterNode node;
  node.members = iota_n(20);
  node.medoid = medoid_of(dm, node.members);

  SUBCASE("singleton") {
    ClusterNode one;
    one.members = {4};
    one.medoid = 4;
    CHECK(select_representatives(dm, one, {}) == std::vector<std::size_t>{4});
  }
  SUBCASE("medoid with top accuracy is not duplicated") {
    std::vector<double> acc(20, 0.5);
    acc[node.medoid] = 0.99;
    const auto reps = select_representatives(dm, node, acc);
    CHECK(reps.front() == node.medoid);
    CHECK(std::count(reps.begin(), reps.end(), node.medoid) == 1);
    CHECK(std::set<std::size_t>(reps.begin(), reps.end()).size() == reps.size());
  }
  SUBCASE("max-min dispersion over the accuracy pool, brute force") {
    Rng rng(8);
    for (int trial = 0; trial < 10; ++trial) {
      std::vector<double> acc(20);
      for (auto& a : acc) a = rng.uniform();
      for (int count : {3, 4, 5}) {
        const auto reps = select_representatives(dm, node, acc, count);
        std::vector<std::size_t> pool = iota_n(20);
        std::sort(pool.begin(), pool.end(), [&](auto a, auto b) { return acc[a] > acc[b]; });
        pool.resize(10);
        std::vector<std::size_t> cands{node.medoid};
        for (auto p : pool)
          if (p != node.medoid) cands.push_back(p);
        REQUIRE(reps.size() == static_cast<std::size_t>(count));
        CHECK(reps[0] == node.medoid);
        auto min_pair = [&](const std::vector<std::size_t>& s) {
          double m = 1e300;
          for (std::size_t i = 0; i < s.size(); ++i)
            for (std::size_t j = i + 1; j < s.size(); ++j) m = std::min(m, dm(s[i], s[j]));
          return m;
        };
        double best = -1;
        for (unsigned mask = 0; mask < (1u << cands.size()); ++mask) {
          if (!(mask & 1u) || std::popcount(mask) != count) continue;
          std::vector<std::size_t> s;
          for (std::size_t i = 0; i < cands.size(); ++i)
            if (mask >> i & 1u) s.push_back(cands[i]);
          best = std::max(best, min_pair(s));
        }
        CHECK(min_pair(reps) == best);
        for (auto r : reps) CHECK(std::find(cands.begin(), cands.end(), r) != cands.end());
      }
    }
  }
  SUBCASE("no metrics falls back to farthest points") {
    const auto reps = select_representatives(dm, node, {});
    CHECK(reps.size() == 5u);
    CHECK(reps[0] == node.medoid);
  }
}

TEST_CASE("cluster tree JSON") {
  const auto dm = random_points(90, 12);
  std::vector<double> acc(90);
  for (std::size_t i = 0; i < 90; ++i) acc[i] = 0.5 + 0.005 * static_cast<double>(i);
  auto tree = build_hierarchy(dm, {}, acc);
  tree.key = {1, 2, 3};
  const auto text = tree_to_json(tree);
  CHECK(text.rfind("{\n  \"version\": 1", 0) == 0);
  const auto back = tree_from_json(text, &tree.key);
  CHECK(tree_to_json(back) == text);
  CHECK(back.nodes.size() == tree.nodes.size());
  const CacheKey other{1, 9, 3};
  try {
    tree_from_json(text, &other);
    FAIL("expected StaleCache");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::stale_cache);
  }
  CHECK_THROWS_AS(tree_from_json("{\"version\":1}"), Error);
}
