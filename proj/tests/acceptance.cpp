// Acceptance suite: one result line per criterion, nonzero exit on any FAIL.
#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <functional>
#include <iostream>
#include <limits>
#include <numeric>
#include <optional>
#include <queue>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "archx/cluster.hpp"
#include "archx/data_io.hpp"
#include "archx/distance.hpp"
#include "archx/layout.hpp"
#include "archx/principles.hpp"
#include "archx/space.hpp"
#include "archx/util.hpp"

using namespace archx;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

struct Outcome {
  enum Kind { pass, fail, skip } kind = fail;
  std::string detail;
};

Outcome verdict(bool ok, std::string detail) { return {ok ? Outcome::pass : Outcome::fail, std::move(detail)}; }

std::string fmt(double v, int digits = 3) {
  std::ostringstream os;
  os.precision(digits);
  os << v;
  return os.str();
}

// --- independent references -------------------------------------------------

std::vector<double> heap_dijkstra(const ArchGraph& g, std::uint32_t src) {
  std::vector<double> dist(g.vertex_count(), std::numeric_limits<double>::infinity());
  using E = std::pair<double, std::uint32_t>;
  std::priority_queue<E, std::vector<E>, std::greater<>> pq;
  dist[src] = 0.0;
  pq.emplace(0.0, src);
  while (!pq.empty()) {
    const auto [d, u] = pq.top();
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

DistanceMatrix euclidean(const std::vector<Point>& p) {
  const std::size_t n = p.size();
  std::vector<double> v(n * n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) v[i * n + j] = std::hypot(p[i][0] - p[j][0], p[i][1] - p[j][1]);
  return DistanceMatrix::from_values(n, std::move(v));
}

DistanceMatrix random_plane(std::size_t n, Rng& rng) {
  std::vector<Point> p(n);
  for (auto& q : p) q = {rng.uniform() * 10, rng.uniform() * 10};
  return euclidean(p);
}

std::vector<std::size_t> iota_n(std::size_t n) {
  std::vector<std::size_t> v(n);
  std::iota(v.begin(), v.end(), 0);
  return v;
}

double brute_force_layout(const DistanceMatrix& dm, const HexGrid& grid) {
  std::vector<int> perm(dm.size());
  std::iota(perm.begin(), perm.end(), 0);
  double best = std::numeric_limits<double>::infinity();
  do best = std::min(best, layout_objective(perm, dm, grid));
  while (std::next_permutation(perm.begin(), perm.end()));
  return best;
}

bool two_swap_optimal(const Placement& p, const DistanceMatrix& dm, const HexGrid& grid) {
  const double base = layout_objective(p.cell_of, dm, grid);
  const std::set<int> fixed(p.fixed.begin(), p.fixed.end());
  for (std::size_t a = 0; a < p.cell_of.size(); ++a)
    for (std::size_t b = a + 1; b < p.cell_of.size(); ++b) {
      if (fixed.count(static_cast<int>(a)) || fixed.count(static_cast<int>(b))) continue;
      auto trial = p.cell_of;
      std::swap(trial[a], trial[b]);
      if (layout_objective(trial, dm, grid) < base - 1e-9) return false;
    }
  return true;
}

bool substitution_only(const Space& space, const Architecture& a, const Architecture& b) {
  for (std::size_t s = 0; s < a.ops.size(); ++s)
    if (a.ops[s] != b.ops[s] && (space.is_none(a.ops[s]) || space.is_none(b.ops[s]))) return false;
  return true;
}

// --- criteria ----------------------------------------------------------------

Outcome oracle_equivalence() {
  const auto t0 = Clock::now();
  const Space space(toy_spec(3, 3));
  const auto archs = space.enumerate_all();
  std::vector<ArchId> ids;
  for (const auto& a : archs) ids.push_back(space.id_of(a));
  const auto dm = apsp_sampled(ArchGraph::build(space, ids));
  std::size_t pairs = 0, mismatches = 0;
  for (std::size_t i = 0; i < archs.size(); ++i)
    for (std::size_t j = i + 1; j < archs.size(); ++j) {
      ++pairs;
      const auto ii = *dm.index_of(ids[i]), jj = *dm.index_of(ids[j]);
      if (dm(ii, jj) != exact_ged_astar(space, archs[i], archs[j])) ++mismatches;
    }
  const double secs = seconds_since(t0);
  return verdict(archs.size() == 27 && pairs == 351 && mismatches == 0 && secs < 10.0,
                 std::to_string(archs.size()) + " archs, " + std::to_string(pairs) + " pairs, " +
                     std::to_string(mismatches) + " mismatches, " + fmt(secs) + " s");
}

Outcome dijkstra_equality() {
  const auto t0 = Clock::now();
  const Space space(nas201_spec());
  const auto g = ArchGraph::build(space, {});
  Rng rng(20240601);
  std::size_t differing = 0;
  for (int t = 0; t < 100; ++t) {
    const auto src = static_cast<std::uint32_t>(rng.below(g.vertex_count()));
    if (sssp_bucketed(g, src) != heap_dijkstra(g, src)) ++differing;
  }
  const double secs = seconds_since(t0);
  return verdict(g.vertex_count() == 15625 && differing == 0 && secs < 60.0,
                 std::to_string(g.vertex_count()) + " vertices, 100 sources, " + std::to_string(differing) +
                     " differing, " + fmt(secs) + " s including both backends");
}

Outcome speedup(unsigned threads) {
  const Space space(nas201_spec());
  const auto ids = sample_ids(space, 100, 11);
  auto t0 = Clock::now();
  const auto apsp = apsp_sampled(ArchGraph::build(space, ids), threads);
  const double apsp_secs = seconds_since(t0);

  std::vector<Architecture> archs;
  for (ArchId id : apsp.ids()) archs.push_back(space.decode(id));
  t0 = Clock::now();
  const auto pairwise = pairwise_matrix(space, archs, DistanceBackend::exact_astar, threads);
  const double astar_secs = seconds_since(t0);

  const bool same = pairwise.values() == apsp.values();
  const double ratio = astar_secs / apsp_secs;
  return verdict(same && ratio >= 10.0, "n=100, " + std::to_string(threads) + " threads: APSP " + fmt(apsp_secs) +
                                            " s, pairwise A* " + fmt(astar_secs) + " s, ratio " + fmt(ratio) +
                                            (same ? ", matrices equal" : ", matrices differ"));
}

Outcome bipartite_bound() {
  const Space space(toy_spec(3, 3));
  const auto archs = space.enumerate_all();
  std::size_t pairs = 0, below = 0, sub_pairs = 0, sub_unequal = 0;
  for (std::size_t i = 0; i < archs.size(); ++i)
    for (std::size_t j = 0; j < archs.size(); ++j) {
      ++pairs;
      const double exact = exact_ged_astar(space, archs[i], archs[j]);
      const double approx = approx_ged_bipartite(space, archs[i], archs[j]);
      if (approx < exact) ++below;
      if (substitution_only(space, archs[i], archs[j])) {
        ++sub_pairs;
        if (approx != exact) ++sub_unequal;
      }
    }
  return verdict(below == 0 && sub_unequal == 0 && sub_pairs > 0,
                 std::to_string(pairs) + " ordered pairs, " + std::to_string(below) + " below exact, " +
                     std::to_string(sub_pairs) + " substitution-only pairs, " + std::to_string(sub_unequal) +
                     " unequal");
}

Outcome layout_quality() {
  Rng rng(31337);
  double worst = 0.0;
  std::size_t not_optimal = 0;
  for (int t = 0; t < 30; ++t) {
    const std::size_t n = 3 + rng.below(6);  // 3..8
    const auto dm = random_plane(n, rng);
    const auto cp = place_cluster(dm, {});
    const double best = brute_force_layout(dm, cp.grid);
    worst = std::max(worst, best > 0 ? cp.objective / best - 1.0 : 0.0);
    if (!two_swap_optimal(cp.placement, dm, cp.grid)) ++not_optimal;
  }
  return verdict(worst <= 0.05 && not_optimal == 0, "30 instances, worst gap " + fmt(100 * worst) + "%, " +
                                                        std::to_string(not_optimal) + " not 2-swap optimal");
}

ClusterTree flat_tree(const std::vector<std::size_t>& sizes, const DistanceMatrix& dm) {
  ClusterTree tree;
  tree.ids = dm.ids();
  ClusterNode root;
  root.members = iota_n(dm.size());
  tree.nodes.push_back(root);
  std::size_t start = 0;
  for (auto s : sizes) {
    ClusterNode c;
    c.id = static_cast<int>(tree.nodes.size());
    c.level = 1;
    for (std::size_t i = 0; i < s; ++i) c.members.push_back(start + i);
    c.medoid = medoid_of(dm, c.members);
    start += s;
    tree.nodes[0].children.push_back(c.id);
    tree.nodes.push_back(c);
  }
  return tree;
}

Outcome clustering_properties() {
  // Monotone objective on every logged assign step.
  std::size_t runs = 0, increases = 0;
  Rng rng(5);
  for (int t = 0; t < 60; ++t) {
    const auto dm = random_plane(30 + rng.below(50), rng);
    const auto members = iota_n(dm.size());
    const auto r = kmedoids(dm, members, 2 + static_cast<int>(rng.below(8)), static_cast<std::uint64_t>(t));
    ++runs;
    for (std::size_t i = 1; i < r.trace.size(); ++i)
      if (r.trace[i] > r.trace[i - 1]) ++increases;
  }

  // Two blobs: within 1, across 10.
  const std::size_t half = 20;
  std::vector<double> v(4 * half * half, 0.0);
  for (std::size_t i = 0; i < 2 * half; ++i)
    for (std::size_t j = 0; j < 2 * half; ++j)
      if (i != j) v[i * 2 * half + j] = ((i < half) == (j < half)) ? 1.0 : 10.0;
  const auto blobs = DistanceMatrix::from_values(2 * half, std::move(v));
  const auto members = iota_n(2 * half);
  const auto ks = grid_search_k(blobs, members, 2, 10);
  bool exact = ks.best_k == 2;
  for (std::size_t i = 0; exact && i < 2 * half; ++i)
    exact = (ks.best.assignment[i] == ks.best.assignment[0]) == (i < half);

  // Quota floor on random trees.
  std::size_t floor_violations = 0;
  for (int t = 0; t < 100; ++t) {
    const std::size_t k = 2 + rng.below(6);
    std::vector<std::size_t> sizes;
    std::size_t n = 0;
    for (std::size_t i = 0; i < k; ++i) {
      sizes.push_back(1 + rng.below(120));
      n += sizes.back();
    }
    const auto dm = random_plane(n, rng);
    const auto tree = flat_tree(sizes, dm);
    const auto s = sample_cluster_aware(tree, dm, 1, 10 * k + rng.below(n));
    for (const auto& q : s.quotas)
      if (q.quota < std::min<std::size_t>(10, q.size)) ++floor_violations;
  }
  return verdict(increases == 0 && exact && floor_violations == 0,
                 std::to_string(runs) + " k-medoids runs with " + std::to_string(increases) +
                     " increases; two blobs K*=" + std::to_string(ks.best_k) + (exact ? " exact" : " inexact") +
                     "; 100 trees with " + std::to_string(floor_violations) + " quota floor violations");
}

Outcome principle_predicates() {
  const Space sp(nas201_spec());
  // Op ids: none, identity, conv1x1, conv3x3, avgpool. Slots 0->1, 0->2, 1->2, 0->3, 1->3, 2->3.
  constexpr OpId none = 0, id = 1, c1 = 2, c3 = 3, avg = 4;
  const std::vector<Architecture> cells{{{c3, c3, none, id, c3, c1}, 0},
                                        {{c3, c3, c3, id, c3, c3}, 0},
                                        {{c3, c1, none, id, c3, c3}, 0}};
  const std::vector<std::string> wanted{"P4", "P5", "P6", "P7", "P8"};
  const auto set = principles_by_id(wanted);
  std::size_t failing = 0;
  for (const auto& a : cells)
    for (const auto& [pid, ok] : evaluate_principles(sp, a, set)) failing += !ok;

  const auto p5 = principles_by_id(std::vector<std::string>{"P5"});
  std::size_t passes = 0, histogram = 0;
  sp.enumerate([&](const Architecture& a) {
    passes += passes_filters(sp, a, p5);
    std::vector<int> counts(static_cast<std::size_t>(sp.op_count()), 0);
    for (OpId op : a.ops) ++counts[op];
    histogram += counts[avg] == 0;
  });
  return verdict(failing == 0 && passes == histogram,
                 "3 cells, " + std::to_string(failing) + " failed checks; P5 passes " + std::to_string(passes) +
                     ", histogram count " + std::to_string(histogram));
}

Outcome search_reduction() {
  const Space sp(nas201_spec());
  const SurrogateModel model;
  const auto scorer = surrogate_scorer(sp, model);
  const auto filters = principles_by_id(std::vector<std::string>{"P4", "P5", "P6", "P7", "P8"});
  std::vector<double> fractions;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    SearchOptions o;
    o.budget = 400;
    o.seed = seed;
    const auto u = filtered_search(sp, scorer, {}, o);
    const auto f = filtered_search(sp, scorer, filters, o);
    double frac = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < f.evaluated.size(); ++i)
      if (f.evaluated[i].score >= u.best_score) {
        frac = static_cast<double>(i + 1) / static_cast<double>(u.evaluated.size());
        break;
      }
    fractions.push_back(frac);
  }
  std::sort(fractions.begin(), fractions.end());
  const double median = (fractions[9] + fractions[10]) / 2;
  const auto matched = std::count_if(fractions.begin(), fractions.end(), [](double f) { return std::isfinite(f); });
  return verdict(median <= 0.5, "budget 400, 20 paired seeds, median evaluations to match " + fmt(100 * median) +
                                    "% of the unfiltered run, " + std::to_string(matched) + "/20 matched");
}

Outcome benchmark_csv(const std::string& path) {
  if (path.empty()) return {Outcome::skip, "no accuracy CSV given (--nb201-csv or ARCHX_NB201_CSV)"};
  const Space sp(nas201_spec());
  const auto table = ingest_metrics(path, sp);
  const auto pairs = table.accuracy_pairs();
  const auto sig = principle_significance(sp, pairs, builtin_principle("P5"));
  return verdict(sig.p_value < 0.001 && sig.mean_fail < sig.mean_pass,
                 std::to_string(sig.n_pass) + " without avg-pool, " + std::to_string(sig.n_fail) + " with; p=" +
                     fmt(sig.p_value) + ", mean " + fmt(sig.mean_pass, 4) + " vs " + fmt(sig.mean_fail, 4));
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"acceptance suite"};
  std::string csv;
  unsigned threads = 0;
  app.add_option("--nb201-csv", csv, "NAS-Bench-201 accuracy CSV")->envname("ARCHX_NB201_CSV");
  app.add_option("--threads", threads, "Worker threads for the timed distance runs (0: all cores)");
  CLI11_PARSE(app, argc, argv);
  if (threads == 0) threads = default_threads();

  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
      {"oracle equivalence", oracle_equivalence},
      {"dijkstra backend equality", dijkstra_equality},
      {"apsp speedup", [threads] { return speedup(threads); }},
      {"bipartite upper bound", bipartite_bound},
      {"layout quality", layout_quality},
      {"clustering properties", clustering_properties},
      {"principle predicates", principle_predicates},
      {"search cost reduction", search_reduction},
      {"benchmark significance", [&csv] { return benchmark_csv(csv); }},
      {"out of scope",
       [] {
         return Outcome{Outcome::skip,
                        "cross-dataset generalization accuracies, GPU-hour figures and activation-map percentages "
                        "need trained networks"};
       }},
  };

  int failures = 0;
  for (const auto& [name, run] : criteria) {
    Outcome o;
    try {
      o = run();
    } catch (const std::exception& e) {
      o = {Outcome::fail, std::string("exception: ") + e.what()};
    }
    const char* tag = o.kind == Outcome::pass ? "PASS" : o.kind == Outcome::skip ? "SKIP" : "FAIL";
    failures += o.kind == Outcome::fail;
    std::cout << tag << "  " << name << ": " << o.detail << std::endl;
  }
  return failures ? 1 : 0;
}
