// SPDX-License-Identifier: Apache-2.0
#include "archx/cluster.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <limits>
#include <map>
#include <numeric>

#include <json.hpp>

#include "archx/error.hpp"
#include "archx/util.hpp"

namespace archx {

namespace {

using ojson = nlohmann::ordered_json;
constexpr double kInf = std::numeric_limits<double>::infinity();

// Members that are not at distance zero from an earlier member.
std::size_t distinct_count(const DistanceMatrix& dm, std::span<const std::size_t> members) {
  std::vector<std::size_t> reps;
  for (auto m : members) {
    bool dup = false;
    for (auto r : reps) {
      if (dm(m, r) == 0.0) {
        dup = true;
        break;
      }
    }
    if (!dup) reps.push_back(m);
  }
  return reps.size();
}

bool near_chosen(const DistanceMatrix& dm, const std::vector<std::size_t>& chosen, std::size_t cand) {
  for (auto c : chosen)
    if (c == cand || dm(c, cand) == 0.0) return true;
  return false;
}

// Park and Jun: v_j = sum_i d_ij / sum_l d_il, take the k smallest.
std::vector<std::size_t> park_jun_init(const DistanceMatrix& dm, std::span<const std::size_t> members, int k) {
  const std::size_t m = members.size();
  std::vector<double> row_sum(m, 0.0);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t l = 0; l < m; ++l) row_sum[i] += dm(members[i], members[l]);
  std::vector<double> v(m, 0.0);
  for (std::size_t j = 0; j < m; ++j) {
    for (std::size_t i = 0; i < m; ++i) {
      if (row_sum[i] > 0.0) v[j] += dm(members[i], members[j]) / row_sum[i];
    }
  }
  std::vector<std::size_t> order(m);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return v[a] < v[b]; });
  std::vector<std::size_t> chosen;
  for (auto j : order) {
    if (static_cast<int>(chosen.size()) == k) break;
    if (!near_chosen(dm, chosen, members[j])) chosen.push_back(members[j]);
  }
  return chosen;
}

std::vector<std::size_t> random_init(const DistanceMatrix& dm, std::span<const std::size_t> members, int k,
                                     std::uint64_t seed) {
  std::vector<std::size_t> order(members.begin(), members.end());
  Rng rng(seed);
  rng.shuffle(order);
  std::vector<std::size_t> chosen;
  for (auto j : order) {
    if (static_cast<int>(chosen.size()) == k) break;
    if (!near_chosen(dm, chosen, j)) chosen.push_back(j);
  }
  return chosen;
}

}  // namespace

std::size_t medoid_of(const DistanceMatrix& dm, std::span<const std::size_t> members) {
  if (members.empty()) throw Error(ErrorCode::invalid_argument, "medoid of an empty set");
  std::size_t best = members[0];
  double best_sum = kInf;
  for (auto c : members) {
    double sum = 0.0;
    for (auto m : members) sum += dm(c, m);
    if (sum < best_sum || (sum == best_sum && c < best)) {
      best_sum = sum;
      best = c;
    }
  }
  return best;
}

KMedoidsResult kmedoids(const DistanceMatrix& dm, std::span<const std::size_t> members, int k, std::uint64_t seed,
                        int max_iterations) {
  if (k < 1 || static_cast<std::size_t>(k) > members.size()) {
    throw Error(ErrorCode::degenerate_k, "K=" + std::to_string(k) + " outside [1, " + std::to_string(members.size()) + "]");
  }
  if (static_cast<std::size_t>(k) > distinct_count(dm, members)) {
    throw Error(ErrorCode::degenerate_k, "K=" + std::to_string(k) + " exceeds the number of distinct members");
  }
  KMedoidsResult r;
  r.medoids = seed == 0 ? park_jun_init(dm, members, k) : random_init(dm, members, k, seed);
  const std::size_t m = members.size();
  r.assignment.assign(m, 0);

  auto assign = [&] {
    double total = 0.0;
    for (std::size_t i = 0; i < m; ++i) {
      int best = 0;
      double bd = kInf;
      for (int c = 0; c < k; ++c) {
        const auto med = r.medoids[static_cast<std::size_t>(c)];
        if (med == members[i]) {
          best = c;
          bd = 0.0;
          break;
        }
        const double d = dm(members[i], med);
        if (d < bd) {
          bd = d;
          best = c;
        }
      }
      r.assignment[i] = best;
      total += bd;
    }
    r.objective = total;
    r.trace.push_back(total);
  };

  assign();
  std::vector<std::vector<std::size_t>> groups(static_cast<std::size_t>(k));
  while (r.iterations < max_iterations) {
    ++r.iterations;
    for (auto& g : groups) g.clear();
    for (std::size_t i = 0; i < m; ++i) groups[static_cast<std::size_t>(r.assignment[i])].push_back(members[i]);
    bool changed = false;
    for (std::size_t c = 0; c < groups.size(); ++c) {
      const auto cur = r.medoids[c];
      double cur_sum = 0.0;
      for (auto x : groups[c]) cur_sum += dm(cur, x);
      std::size_t best = cur;
      double best_sum = cur_sum;
      for (auto cand : groups[c]) {
        double sum = 0.0;
        for (auto x : groups[c]) sum += dm(cand, x);
        if (sum < best_sum) {
          best_sum = sum;
          best = cand;
        }
      }
      if (best != cur) {
        r.medoids[c] = best;
        changed = true;
      }
    }
    if (!changed) break;
    assign();
  }
  return r;
}

double separation_score(const DistanceMatrix& dm, std::span<const std::size_t> members, const KMedoidsResult& r) {
  const std::size_t k = r.medoids.size();
  if (k < 2) return kInf;
  std::vector<double> spread(k, 0.0);
  std::vector<std::size_t> size(k, 0);
  for (std::size_t i = 0; i < members.size(); ++i) {
    const auto c = static_cast<std::size_t>(r.assignment[i]);
    spread[c] += dm(members[i], r.medoids[c]);
    ++size[c];
  }
  for (std::size_t c = 0; c < k; ++c) spread[c] = size[c] ? spread[c] / static_cast<double>(size[c]) : 0.0;
  double total = 0.0;
  for (std::size_t i = 0; i < k; ++i) {
    double worst = 0.0;
    for (std::size_t j = 0; j < k; ++j) {
      if (i == j) continue;
      const double sep = dm(r.medoids[i], r.medoids[j]);
      const double num = spread[i] + spread[j];
      const double ratio = sep > 0.0 ? num / sep : (num > 0.0 ? kInf : 0.0);
      worst = std::max(worst, ratio);
    }
    total += worst;
  }
  return total / static_cast<double>(k);
}

KSearch grid_search_k(const DistanceMatrix& dm, std::span<const std::size_t> members, int k_min, int k_max,
                      std::uint64_t seed, int restarts) {
  if (k_min < 2 || k_min > k_max || static_cast<std::size_t>(k_max) > members.size()) {
    throw Error(ErrorCode::degenerate_k, "k range [" + std::to_string(k_min) + ", " + std::to_string(k_max) +
                                             "] must lie within [2, " + std::to_string(members.size()) + "]");
  }
  restarts = std::max(1, restarts);
  const auto ks = static_cast<std::size_t>(k_max - k_min + 1);
  const auto runs = ks * static_cast<std::size_t>(restarts);
  std::vector<KMedoidsResult> results(runs);
  parallel_for(runs, default_threads(), [&](std::size_t idx) {
    const int k = k_min + static_cast<int>(idx / static_cast<std::size_t>(restarts));
    const auto restart = idx % static_cast<std::size_t>(restarts);
    const std::uint64_t s = restart == 0 ? 0 : mix64(seed * 0x100000001b3ULL + restart) | 1u;
    results[idx] = kmedoids(dm, members, k, s);
  });

  KSearch out;
  double best_score = kInf;
  for (std::size_t ki = 0; ki < ks; ++ki) {
    std::size_t pick = ki * static_cast<std::size_t>(restarts);
    for (std::size_t r = 1; r < static_cast<std::size_t>(restarts); ++r) {
      const auto idx = ki * static_cast<std::size_t>(restarts) + r;
      if (results[idx].objective < results[pick].objective) pick = idx;
    }
    KScore s;
    s.k = k_min + static_cast<int>(ki);
    s.objective = results[pick].objective;
    s.mean_distance = s.objective / static_cast<double>(members.size());
    s.score = separation_score(dm, members, results[pick]);
    out.curve.push_back(s);
    if (out.best_k == 0 || s.score < best_score) {
      best_score = s.score;
      out.best_k = s.k;
      out.best = results[pick];
    }
  }
  return out;
}

int ClusterTree::depth() const {
  int d = 0;
  for (const auto& n : nodes) d = std::max(d, n.level);
  return d;
}

std::vector<int> ClusterTree::clusters_at(int level) const {
  std::vector<int> out;
  // Depth-first, children in order, so the partition order is stable.
  std::vector<int> stack{0};
  while (!stack.empty()) {
    const int id = stack.back();
    stack.pop_back();
    const auto& n = nodes.at(static_cast<std::size_t>(id));
    if (n.level == level || (n.children.empty() && n.level < level)) {
      out.push_back(id);
      continue;
    }
    for (auto it = n.children.rbegin(); it != n.children.rend(); ++it) stack.push_back(*it);
  }
  return out;
}

ClusterTree build_hierarchy(const DistanceMatrix& dm, const HierarchyOptions& options, AccuracyView accuracy) {
  if (dm.size() == 0) throw Error(ErrorCode::invalid_argument, "cannot cluster an empty distance matrix");
  ClusterTree tree;
  tree.ids = dm.ids();
  ClusterNode root;
  root.members.resize(dm.size());
  std::iota(root.members.begin(), root.members.end(), 0);
  root.medoid = medoid_of(dm, root.members);
  tree.nodes.push_back(std::move(root));

  std::deque<int> queue{0};
  while (!queue.empty()) {
    const int id = queue.front();
    queue.pop_front();
    auto* node = &tree.nodes[static_cast<std::size_t>(id)];
    if (node->level >= options.max_depth || node->members.size() < options.min_cluster) continue;
    const int distinct = static_cast<int>(distinct_count(dm, node->members));
    const int k_max = std::min(options.k_max, distinct);
    const int k_min = std::min(std::max(2, options.k_min), k_max);
    if (k_max < 2) continue;
    const auto search = grid_search_k(dm, node->members, k_min, k_max, mix64(options.seed ^ static_cast<std::uint64_t>(id)),
                                      options.restarts);
    node->k_curve = search.curve;
    std::vector<std::vector<std::size_t>> parts(search.best.medoids.size());
    for (std::size_t i = 0; i < node->members.size(); ++i)
      parts[static_cast<std::size_t>(search.best.assignment[i])].push_back(node->members[i]);
    const int level = node->level + 1;
    for (auto& part : parts) {
      ClusterNode child;
      child.id = static_cast<int>(tree.nodes.size());
      child.level = level;
      child.parent = id;
      std::sort(part.begin(), part.end());
      child.medoid = medoid_of(dm, part);
      child.members = std::move(part);
      tree.nodes[static_cast<std::size_t>(id)].children.push_back(child.id);
      queue.push_back(child.id);
      tree.nodes.push_back(std::move(child));
    }
  }
  annotate(tree, dm, accuracy, options.max_representatives);
  return tree;
}

std::vector<std::size_t> farthest_point_extend(const DistanceMatrix& dm, std::span<const std::size_t> members,
                                               std::vector<std::size_t> chosen, std::size_t count) {
  count = std::min(count, members.size());
  if (chosen.size() >= count) {
    chosen.resize(count);
    return chosen;
  }
  std::vector<double> nearest(members.size(), kInf);
  std::vector<char> taken(members.size(), 0);
  for (std::size_t i = 0; i < members.size(); ++i) {
    for (auto c : chosen) {
      if (members[i] == c) taken[i] = 1;
      nearest[i] = std::min(nearest[i], dm(members[i], c));
    }
  }
  while (chosen.size() < count) {
    std::size_t best = members.size();
    double bd = -1.0;
    for (std::size_t i = 0; i < members.size(); ++i) {
      if (!taken[i] && nearest[i] > bd) {
        bd = nearest[i];
        best = i;
      }
    }
    taken[best] = 1;
    const auto next = members[best];
    chosen.push_back(next);
    for (std::size_t i = 0; i < members.size(); ++i)
      if (!taken[i]) nearest[i] = std::min(nearest[i], dm(members[i], next));
  }
  return chosen;
}

std::vector<std::size_t> farthest_point_order(const DistanceMatrix& dm, std::span<const std::size_t> members,
                                              std::size_t medoid, std::size_t count) {
  if (members.empty() || count == 0) return {};
  return farthest_point_extend(dm, members, {medoid}, count);
}

std::vector<std::size_t> select_representatives(const DistanceMatrix& dm, const ClusterNode& node,
                                                AccuracyView accuracy, int max_count) {
  if (node.members.empty()) return {};
  const auto limit = static_cast<std::size_t>(std::max(1, max_count));
  if (node.members.size() == 1) return {node.medoid};

  std::vector<std::size_t> pool;
  if (!accuracy.empty()) {
    for (auto m : node.members)
      if (m < accuracy.size() && !std::isnan(accuracy[m])) pool.push_back(m);
    std::stable_sort(pool.begin(), pool.end(), [&](auto a, auto b) { return accuracy[a] > accuracy[b]; });
    if (pool.size() > 10) pool.resize(10);
  }
  if (pool.empty()) return farthest_point_order(dm, node.members, node.medoid, std::max<std::size_t>(2, limit));

  std::vector<std::size_t> others;
  for (auto p : pool)
    if (p != node.medoid) others.push_back(p);
  if (others.empty()) {
    // Only the medoid has a score; still show a second, distant member.
    return farthest_point_order(dm, node.members, node.medoid, 2);
  }
  const std::size_t count = std::min(limit, others.size() + 1);
  const std::size_t pick = count - 1;

  // Exhaustive max-min dispersion; pools are at most 10 wide.
  std::vector<std::size_t> best_set;
  double best_min = -1.0;
  std::vector<std::size_t> idx(pick);
  std::iota(idx.begin(), idx.end(), 0);
  for (;;) {
    double mn = kInf;
    for (std::size_t a = 0; a < pick; ++a) {
      mn = std::min(mn, dm(node.medoid, others[idx[a]]));
      for (std::size_t b = a + 1; b < pick; ++b) mn = std::min(mn, dm(others[idx[a]], others[idx[b]]));
    }
    if (mn > best_min) {
      best_min = mn;
      best_set.clear();
      for (auto i : idx) best_set.push_back(others[i]);
    }
    // Next combination in lexicographic order.
    std::size_t i = pick;
    while (i > 0 && idx[i - 1] == others.size() - pick + (i - 1)) --i;
    if (i == 0) break;
    ++idx[i - 1];
    for (std::size_t j = i; j < pick; ++j) idx[j] = idx[j - 1] + 1;
  }
  std::vector<std::size_t> out{node.medoid};
  out.insert(out.end(), best_set.begin(), best_set.end());
  return out;
}

void annotate(ClusterTree& tree, const DistanceMatrix& dm, AccuracyView accuracy, int max_representatives) {
  for (auto& node : tree.nodes) {
    node.mean_accuracy.reset();
    node.max_accuracy.reset();
    if (!accuracy.empty()) {
      double sum = 0.0, mx = -kInf;
      std::size_t cnt = 0;
      for (auto m : node.members) {
        if (m >= accuracy.size() || std::isnan(accuracy[m])) continue;
        sum += accuracy[m];
        mx = std::max(mx, accuracy[m]);
        ++cnt;
      }
      if (cnt) {
        node.mean_accuracy = sum / static_cast<double>(cnt);
        node.max_accuracy = mx;
      }
    }
    node.representatives = select_representatives(dm, node, accuracy, max_representatives);
  }
}

SampleSet sample_clusters(const ClusterTree& tree, const DistanceMatrix& dm, std::span<const int> clusters,
                          std::size_t budget, bool keep_representatives) {
  SampleSet out;
  std::size_t n = 0;
  for (int id : clusters) n += tree.nodes.at(static_cast<std::size_t>(id)).members.size();
  const bool take_all = budget >= n;
  if (!take_all && budget < 10 * clusters.size()) {
    throw Error(ErrorCode::budget_too_small, "budget " + std::to_string(budget) + " is below 10 per cluster for " +
                                                 std::to_string(clusters.size()) + " clusters");
  }
  for (int id : clusters) {
    const auto& node = tree.nodes.at(static_cast<std::size_t>(id));
    const std::size_t size = node.members.size();
    std::size_t quota = size;
    if (!take_all) {
      const auto share = std::llround(static_cast<double>(budget) * static_cast<double>(size) / static_cast<double>(n));
      quota = std::min(size, std::max<std::size_t>(10, static_cast<std::size_t>(share)));
    }
    std::vector<std::size_t> seed{node.medoid};
    if (keep_representatives) {
      for (auto r : node.representatives)
        if (std::find(seed.begin(), seed.end(), r) == seed.end()) seed.push_back(r);
      quota = std::max(quota, std::min(size, seed.size()));
    }
    out.quotas.push_back({id, size, quota});
    const auto chosen = farthest_point_extend(dm, node.members, std::move(seed), quota);
    out.selected.insert(out.selected.end(), chosen.begin(), chosen.end());
  }
  return out;
}

SampleSet sample_cluster_aware(const ClusterTree& tree, const DistanceMatrix& dm, int level, std::size_t budget) {
  const auto clusters = tree.clusters_at(level);
  auto out = sample_clusters(tree, dm, clusters, budget);
  out.level = level;
  return out;
}

// ---------------------------------------------------------------------------
// JSON

namespace {

ojson node_to_json(const ClusterTree& tree, const ClusterNode& node) {
  ojson j;
  j["id"] = node.id;
  j["level"] = node.level;
  j["medoid_arch_id"] = tree.ids.at(node.medoid);
  j["member_count"] = node.members.size();
  ojson reps = ojson::array();
  for (auto r : node.representatives) reps.push_back(tree.ids.at(r));
  j["representatives"] = reps;
  if (node.mean_accuracy) j["mean_accuracy"] = *node.mean_accuracy;
  if (node.max_accuracy) j["max_accuracy"] = *node.max_accuracy;
  if (!node.k_curve.empty()) {
    ojson curve = ojson::array();
    for (const auto& s : node.k_curve) {
      ojson e;
      e["k"] = s.k;
      e["mean_distance"] = s.mean_distance;
      e["score"] = s.score;
      e["objective"] = s.objective;
      curve.push_back(e);
    }
    j["k_curve"] = curve;
  }
  ojson members = ojson::array();
  for (auto m : node.members) members.push_back(tree.ids.at(m));
  j["members"] = members;
  ojson children = ojson::array();
  for (int c : node.children) children.push_back(node_to_json(tree, tree.nodes.at(static_cast<std::size_t>(c))));
  j["children"] = children;
  return j;
}

[[noreturn]] void corrupt(const std::string& msg) { throw Error(ErrorCode::corrupt_file, "cluster tree: " + msg); }

template <typename T>
T field(const ojson& j, const char* name) {
  if (!j.contains(name)) corrupt(std::string("missing field '") + name + "'");
  try {
    return j.at(name).get<T>();
  } catch (const nlohmann::json::exception&) {
    corrupt(std::string("bad field '") + name + "'");
  }
}

void node_from_json(const ojson& j, int parent, const std::map<ArchId, std::size_t>& index,
                    std::map<int, ClusterNode>& out) {
  ClusterNode node;
  node.id = field<int>(j, "id");
  node.level = field<int>(j, "level");
  node.parent = parent;
  auto resolve = [&](ArchId id) {
    const auto it = index.find(id);
    if (it == index.end()) corrupt("unknown arch id " + std::to_string(id));
    return it->second;
  };
  node.medoid = resolve(field<ArchId>(j, "medoid_arch_id"));
  for (auto id : field<std::vector<ArchId>>(j, "members")) node.members.push_back(resolve(id));
  if (node.members.size() != field<std::size_t>(j, "member_count")) corrupt("member_count mismatch");
  for (auto id : field<std::vector<ArchId>>(j, "representatives")) node.representatives.push_back(resolve(id));
  if (j.contains("mean_accuracy")) node.mean_accuracy = field<double>(j, "mean_accuracy");
  if (j.contains("max_accuracy")) node.max_accuracy = field<double>(j, "max_accuracy");
  if (j.contains("k_curve")) {
    for (const auto& e : j["k_curve"]) {
      node.k_curve.push_back({field<int>(e, "k"), field<double>(e, "mean_distance"), field<double>(e, "score"),
                              field<double>(e, "objective")});
    }
  }
  const auto& children = j.contains("children") ? j["children"] : ojson::array();
  if (!children.is_array()) corrupt("children must be an array");
  for (const auto& c : children) {
    node.children.push_back(field<int>(c, "id"));
    node_from_json(c, node.id, index, out);
  }
  if (!out.emplace(node.id, std::move(node)).second) corrupt("duplicate node id");
}

}  // namespace

std::string tree_to_json(const ClusterTree& tree) {
  ojson j;
  j["version"] = 1;
  j["kind"] = "cluster_tree";
  j["cache_key"] = tree.key.to_json();
  j["arch_ids"] = tree.ids;
  j["root"] = node_to_json(tree, tree.root());
  return j.dump(2) + "\n";
}

ClusterTree tree_from_json(std::string_view text, const CacheKey* expected) {
  ojson j;
  try {
    j = ojson::parse(text);
  } catch (const nlohmann::json::exception& e) {
    corrupt(e.what());
  }
  if (!j.is_object()) corrupt("document must be an object");
  if (field<int>(j, "version") != 1) corrupt("unsupported version");
  if (field<std::string>(j, "kind") != "cluster_tree") corrupt("not a cluster tree");
  ClusterTree tree;
  tree.key = CacheKey::from_json(j["cache_key"]);
  if (expected) check_cache_key(*expected, tree.key, "cluster tree");
  tree.ids = field<std::vector<ArchId>>(j, "arch_ids");
  std::map<ArchId, std::size_t> index;
  for (std::size_t i = 0; i < tree.ids.size(); ++i)
    if (!index.emplace(tree.ids[i], i).second) corrupt("duplicate arch id");
  if (!j.contains("root")) corrupt("missing root");
  std::map<int, ClusterNode> nodes;
  node_from_json(j["root"], -1, index, nodes);
  int expect = 0;
  for (auto& [id, node] : nodes) {
    if (id != expect++) corrupt("node ids must be 0..count-1");
    tree.nodes.push_back(std::move(node));
  }
  if (tree.nodes.front().parent != -1) corrupt("root must have id 0");
  return tree;
}

}  // namespace archx
