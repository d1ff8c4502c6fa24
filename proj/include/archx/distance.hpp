// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string_view>
#include <vector>

#include "archx/space.hpp"

namespace archx {

enum class DistanceBackend : std::uint8_t { exact_apsp = 0, exact_astar = 1, approx_bipartite = 2 };

std::string_view to_string(DistanceBackend backend);

/// Symmetric n x n matrix of structural distances between sampled
/// architectures. Row i corresponds to ids()[i].
class DistanceMatrix {
 public:
  DistanceMatrix() = default;
  DistanceMatrix(std::vector<ArchId> ids, DistanceBackend backend);
  /// Builds from a full row-major matrix; ids default to 0..n-1.
  static DistanceMatrix from_values(std::size_t n, std::vector<double> values,
                                    DistanceBackend backend = DistanceBackend::exact_apsp,
                                    std::vector<ArchId> ids = {});

  std::size_t size() const noexcept { return n_; }
  DistanceBackend backend() const noexcept { return backend_; }
  const std::vector<ArchId>& ids() const noexcept { return ids_; }

  double operator()(std::size_t i, std::size_t j) const noexcept { return values_[i * n_ + j]; }
  /// Sets both (i, j) and (j, i).
  void set(std::size_t i, std::size_t j, double v) noexcept {
    values_[i * n_ + j] = v;
    values_[j * n_ + i] = v;
  }
  std::span<double> row(std::size_t i) noexcept { return {values_.data() + i * n_, n_}; }
  std::span<const double> row(std::size_t i) const noexcept { return {values_.data() + i * n_, n_}; }
  const std::vector<double>& values() const noexcept { return values_; }

  std::optional<std::size_t> index_of(ArchId id) const;
  /// Sub-matrix over the given rows, in that order.
  DistanceMatrix subset(std::span<const std::size_t> rows) const;

 private:
  std::size_t n_ = 0;
  DistanceBackend backend_ = DistanceBackend::exact_apsp;
  std::vector<ArchId> ids_;
  std::vector<double> values_;
};

/// Edit graph over a whole enumerable space. Vertices are architectures,
/// edges connect one-edit neighbors and carry the edit cost. Vertices not in
/// the sample are dummies that only carry shortest paths.
class ArchGraph {
 public:
  static ArchGraph build(const Space& space, std::span<const ArchId> sampled,
                         std::uint64_t cap = Space::kDefaultHardCap);

  std::size_t vertex_count() const noexcept { return offsets_.size() - 1; }
  std::size_t sampled_count() const noexcept { return sampled_.size(); }
  std::size_t edge_count() const noexcept { return targets_.size() / 2; }

  std::span<const std::uint32_t> neighbors(std::uint32_t v) const noexcept {
    return {targets_.data() + offsets_[v], offsets_[v + 1] - offsets_[v]};
  }
  std::span<const double> costs(std::uint32_t v) const noexcept {
    return {costs_.data() + offsets_[v], offsets_[v + 1] - offsets_[v]};
  }
  std::size_t degree(std::uint32_t v) const noexcept { return offsets_[v + 1] - offsets_[v]; }

  bool is_sampled(std::uint32_t v) const noexcept { return sampled_flag_[v] != 0; }
  /// Sampled vertex indices in sample order.
  const std::vector<std::uint32_t>& sampled() const noexcept { return sampled_; }
  ArchId arch_id(std::uint32_t v) const noexcept { return ids_.empty() ? v : ids_[v]; }
  std::optional<std::uint32_t> index_of(ArchId id) const;

  double min_edge_cost() const noexcept { return min_cost_; }
  double max_edge_cost() const noexcept { return max_cost_; }

  /// Copy with every edge touching `removed` dropped. The vertices stay (with
  /// degree 0) so indices are unchanged. Sampled vertices cannot be removed.
  ArchGraph without_vertices(std::span<const std::uint32_t> removed) const;

 private:
  std::vector<std::size_t> offsets_{0};
  std::vector<std::uint32_t> targets_;
  std::vector<double> costs_;
  std::vector<ArchId> ids_;  // empty when vertex index == arch id
  std::vector<char> sampled_flag_;
  std::vector<std::uint32_t> sampled_;
  double min_cost_ = 0.0;
  double max_cost_ = 0.0;
};

struct SsspStats {
  std::size_t settled = 0;
  std::size_t relaxations = 0;
  std::size_t buckets_scanned = 0;
  double bucket_width = 0.0;
  bool exact_within_bucket = false;
};

/// Width of the cost buckets: 2^-20 of the largest edit cost, widened up to
/// the smallest edit cost when that is larger.
double bucket_width(const ArchGraph& g);

/// Single-source shortest paths with equal-cost buckets. Buckets live in a
/// circular array indexed by quantized cost, so the minimum is found by
/// advancing a cursor rather than a heap pop. Unreachable vertices get +inf.
std::vector<double> sssp_bucketed(const ArchGraph& g, std::uint32_t source, SsspStats* stats = nullptr);

/// All sampled-to-sampled distances: one bucketed SSSP per sampled vertex.
/// Throws Disconnected if any sampled pair is unreachable.
DistanceMatrix apsp_sampled(const ArchGraph& g, unsigned threads = 0);

/// Exact edit distance by A* over edit states. Heuristic: optimal unordered
/// alignment of the two op multisets under closure costs, plus one edge edit
/// per differing edge in topology spaces. Requires combined layer count <= 16.
double exact_ged_astar(const Space& space, const Architecture& a, const Architecture& b,
                       std::uint64_t max_expansions = 50'000'000);

/// Upper bound via a bipartite layer assignment solved with the Hungarian
/// method, O(L^3). Returns the cost of the edit path induced by the assignment.
double approx_ged_bipartite(const Space& space, const Architecture& a, const Architecture& b);

/// Pairwise matrix with one of the pairwise backends (A* or bipartite).
DistanceMatrix pairwise_matrix(const Space& space, std::span<const Architecture> archs,
                               DistanceBackend backend, unsigned threads = 0);

}  // namespace archx
