// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace archx {

using OpId = std::uint8_t;
using ArchId = std::uint64_t;

enum class OpKind { conv, pool_max, pool_avg, identity, none, other };

std::string_view to_string(OpKind kind);
OpKind op_kind_from_string(std::string_view s);

struct OpType {
  OpId id = 0;
  std::string name;
  OpKind kind = OpKind::other;

  friend bool operator==(const OpType&, const OpType&) = default;
};

enum class SpaceFamily { op_slot, topology };

using CostMatrix = std::vector<std::vector<double>>;

/// Declarative description of an architecture space, as read from a space
/// spec file. Optional fields stay optional so that serialization reproduces
/// the input document.
struct SpaceSpec {
  SpaceFamily family = SpaceFamily::op_slot;
  int slots = 0;      // op_slot
  int nodes = 0;      // topology, input and output included
  int max_edges = 0;  // topology
  std::vector<OpType> ops;
  std::optional<CostMatrix> cost_matrix;
  // op_slot: slot s sits on DAG edge skeleton[s] = (from, to). Node 0 is the
  // input, the largest node index is the output.
  std::optional<std::vector<std::pair<int, int>>> skeleton;

  friend bool operator==(const SpaceSpec&, const SpaceSpec&) = default;

  /// Uniform default when no matrix is given: 1 between distinct non-`none`
  /// ops, 0 elsewhere.
  CostMatrix effective_costs() const;
  /// 5 x the largest entry of the effective cost matrix.
  double insertion_deletion_cost() const;

  static SpaceSpec parse(std::string_view json_text);
  std::string serialize() const;
  static SpaceSpec load(const std::string& path);

  std::uint64_t structure_hash() const;  // family, sizes, ops, skeleton
  std::uint64_t cost_hash() const;       // effective cost matrix
};

/// Built-in specs used by tests, benchmarks and the CLI (`builtin:<name>`).
SpaceSpec nas201_spec();                      // 6 edge slots, 5 ops
SpaceSpec toy_spec(int slots, int ops);       // chain skeleton, conv-like ops
SpaceSpec nas101_like_spec(int nodes, int max_edges);
SpaceSpec resolve_space(const std::string& name_or_path);

/// One concrete encoding. For op_slot spaces `ops` has one entry per slot and
/// `edges` is unused; for topology spaces `ops` holds the intermediate node
/// ops (nodes - 2 entries) and `edges` is a bitset over node pairs i < j.
struct Architecture {
  std::vector<OpId> ops;
  std::uint32_t edges = 0;

  friend bool operator==(const Architecture&, const Architecture&) = default;
};

struct Neighbor {
  Architecture arch;
  double cost = 0.0;
};

using OpPath = std::vector<OpId>;

/// A validated space. Immutable after construction and safe to share between
/// threads.
class Space {
 public:
  static constexpr std::uint64_t kDefaultHardCap = 5'000'000;

  explicit Space(SpaceSpec spec);

  const SpaceSpec& spec() const noexcept { return spec_; }
  SpaceFamily family() const noexcept { return spec_.family; }
  std::size_t op_count() const noexcept { return spec_.ops.size(); }
  const OpType& op(OpId id) const { return spec_.ops.at(id); }
  std::optional<OpId> op_by_name(std::string_view name) const;
  std::optional<OpId> none_op() const noexcept { return none_op_; }
  bool is_none(OpId id) const noexcept { return none_op_ && *none_op_ == id; }

  /// Number of op-carrying positions: slots, or intermediate nodes.
  int positions() const noexcept { return positions_; }
  int node_count() const noexcept { return node_count_; }

  double deletion_cost() const noexcept { return deletion_cost_; }
  /// Price of one substitution edit; to/from `none` costs deletion_cost().
  double substitution_cost(OpId from, OpId to) const;
  /// Cheapest chain of substitutions between two ops (metric closure).
  double closure_cost(OpId from, OpId to) const;
  double min_edit_cost() const noexcept { return min_edit_cost_; }
  double max_edit_cost() const noexcept { return max_edit_cost_; }

  /// True when ids are dense mixed-radix indices in [0, size).
  bool dense_ids() const noexcept { return dense_ids_; }
  /// C^pos; the id stride of op position `pos` (dense op_slot ids).
  std::uint64_t radix(int pos) const { return radix_.at(static_cast<std::size_t>(pos)); }
  /// Exact number of admissible architectures, or nullopt once it exceeds
  /// `cap` (counting stops early).
  std::optional<std::uint64_t> count(std::uint64_t cap = kDefaultHardCap) const;

  ArchId id_of(const Architecture& a) const;
  Architecture decode(ArchId id) const;
  bool admissible(const Architecture& a) const;
  /// Shape check plus admissibility.
  bool valid(const Architecture& a) const;

  /// Visits every admissible architecture once in a deterministic order.
  /// Throws SpaceTooLarge when the space exceeds `cap` and no limit is given.
  void enumerate(const std::function<void(const Architecture&)>& visit,
                 std::optional<std::uint64_t> limit = std::nullopt,
                 std::uint64_t cap = kDefaultHardCap) const;
  std::vector<Architecture> enumerate_all(std::optional<std::uint64_t> limit = std::nullopt,
                                          std::uint64_t cap = kDefaultHardCap) const;

  std::vector<Neighbor> one_edit_neighbors(const Architecture& a) const;
  /// Allocation-light variant over ids, used by the edit graph and A*.
  void for_each_neighbor(const Architecture& a,
                         const std::function<void(const Architecture&, double)>& visit) const;

  /// Input-to-output paths after pruning `none`, as op sequences. Empty when
  /// pruning disconnects the input from the output.
  std::vector<OpPath> paths(const Architecture& a) const;
  /// Structural skip edges: active edges spanning two or more node indices.
  int skip_connections(const Architecture& a) const;

  Architecture random_architecture(std::uint64_t seed) const;

  /// op_slot: the DAG edge each slot sits on (chain when no skeleton given).
  const std::vector<std::pair<int, int>>& slot_edges() const noexcept { return slot_edges_; }

  // Topology helpers.
  int edge_bit(int from, int to) const;
  std::pair<int, int> edge_endpoints(int bit) const;
  int edge_slots() const noexcept { return edge_slots_; }

 private:
  bool topology_admissible(std::uint32_t edges, std::uint32_t active_mask) const;
  std::uint32_t active_mask(const Architecture& a) const;
  std::vector<std::pair<int, int>> slot_edges_;
  std::vector<std::vector<int>> skeleton_paths_;  // op_slot: slot lists
  SpaceSpec spec_;
  CostMatrix costs_;
  std::vector<double> closure_;
  std::optional<OpId> none_op_;
  int positions_ = 0;
  int node_count_ = 0;
  int edge_slots_ = 0;
  double deletion_cost_ = 0.0;
  double min_edit_cost_ = 0.0;
  double max_edit_cost_ = 0.0;
  bool dense_ids_ = false;
  std::vector<std::uint64_t> radix_;  // C^i for op positions
  std::vector<int> pair_from_, pair_to_;
};

/// `n` distinct architecture ids drawn uniformly for `seed`, ascending. All
/// ids when `n` covers the space.
std::vector<ArchId> sample_ids(const Space& space, std::size_t n, std::uint64_t seed);

}  // namespace archx
