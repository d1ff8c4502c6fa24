// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "archx/cache_key.hpp"
#include "archx/distance.hpp"

namespace archx {

struct KMedoidsResult {
  std::vector<std::size_t> medoids;  // dm indices
  std::vector<int> assignment;       // per member, index into medoids
  double objective = 0.0;
  std::vector<double> trace;         // objective after each assign step
  int iterations = 0;
};

/// Alternating K-medoids over a subset of the matrix. Restart 0 starts from
/// the Park-Jun initial medoids; other seeds start from a random draw.
KMedoidsResult kmedoids(const DistanceMatrix& dm, std::span<const std::size_t> members, int k, std::uint64_t seed,
                        int max_iterations = 100);

struct KScore {
  int k = 0;
  double mean_distance = 0.0;  // mean member-to-medoid distance
  double score = 0.0;          // separation score used for selection
  double objective = 0.0;
};

struct KSearch {
  int best_k = 0;
  std::vector<KScore> curve;
  KMedoidsResult best;
};

/// Runs K-medoids for every K in [k_min, k_max] (best of `restarts`) and picks
/// the K with the lowest separation score; ties go to the smaller K.
KSearch grid_search_k(const DistanceMatrix& dm, std::span<const std::size_t> members, int k_min, int k_max,
                      std::uint64_t seed = 0, int restarts = 5);

/// Ratio of within-cluster spread to medoid separation, averaged over
/// clusters (lower is better).
double separation_score(const DistanceMatrix& dm, std::span<const std::size_t> members, const KMedoidsResult& r);

struct ClusterNode {
  int id = 0;
  int level = 0;
  int parent = -1;
  std::vector<std::size_t> members;  // dm indices, ascending
  std::size_t medoid = 0;
  std::vector<int> children;
  std::vector<std::size_t> representatives;
  std::vector<KScore> k_curve;
  std::optional<double> mean_accuracy;
  std::optional<double> max_accuracy;
};

struct HierarchyOptions {
  int max_depth = 3;
  std::size_t min_cluster = 40;
  int k_min = 2;
  int k_max = 10;
  int restarts = 5;
  std::uint64_t seed = 0;
  int max_representatives = 5;
};

struct ClusterTree {
  CacheKey key;
  std::vector<ArchId> ids;  // arch id per dm index
  std::vector<ClusterNode> nodes;  // nodes[0] is the root; ids are positions

  const ClusterNode& root() const { return nodes.at(0); }
  int depth() const;
  /// Partition of the root at `level`: nodes at that level plus shallower leaves.
  std::vector<int> clusters_at(int level) const;
};

/// Accuracy per dm index; NaN marks a missing value.
using AccuracyView = std::span<const double>;

ClusterTree build_hierarchy(const DistanceMatrix& dm, const HierarchyOptions& options = {},
                            AccuracyView accuracy = {});

/// Medoid of a member set: minimal total distance, ties to the lower index.
std::size_t medoid_of(const DistanceMatrix& dm, std::span<const std::size_t> members);

/// Medoid first, then the most dispersed set drawn from the node's top-10
/// accuracy members. Without accuracy, farthest-point over all members.
std::vector<std::size_t> select_representatives(const DistanceMatrix& dm, const ClusterNode& node,
                                                AccuracyView accuracy, int max_count = 5);

/// Fills per-node accuracy stats and representatives.
void annotate(ClusterTree& tree, const DistanceMatrix& dm, AccuracyView accuracy, int max_representatives = 5);

struct ClusterQuota {
  int node = 0;
  std::size_t size = 0;
  std::size_t quota = 0;
};

struct SampleSet {
  int level = 0;
  std::vector<std::size_t> selected;  // dm indices, grouped by cluster
  std::vector<ClusterQuota> quotas;
};

SampleSet sample_cluster_aware(const ClusterTree& tree, const DistanceMatrix& dm, int level, std::size_t budget);

/// Same quotas over an explicit list of disjoint clusters. With
/// `keep_representatives`, each cluster's representatives are taken first.
SampleSet sample_clusters(const ClusterTree& tree, const DistanceMatrix& dm, std::span<const int> clusters,
                          std::size_t budget, bool keep_representatives = false);

/// Medoid, then repeatedly the member farthest from everything chosen.
std::vector<std::size_t> farthest_point_order(const DistanceMatrix& dm, std::span<const std::size_t> members,
                                              std::size_t medoid, std::size_t count);
/// Farthest-point continuation from an initial chosen set.
std::vector<std::size_t> farthest_point_extend(const DistanceMatrix& dm, std::span<const std::size_t> members,
                                               std::vector<std::size_t> chosen, std::size_t count);

std::string tree_to_json(const ClusterTree& tree);
/// Throws StaleCache when `expected` is given and differs from the stored key.
ClusterTree tree_from_json(std::string_view text, const CacheKey* expected = nullptr);

}  // namespace archx
