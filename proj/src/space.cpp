// SPDX-License-Identifier: Apache-2.0
#include "archx/space.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <fstream>
#include <limits>
#include <map>
#include <set>
#include <sstream>

#include <json.hpp>

#include "archx/error.hpp"
#include "archx/util.hpp"

namespace archx {

using ojson = nlohmann::ordered_json;

namespace {

constexpr int kMaxTopologyNodes = 8;
constexpr int kSpecVersion = 1;

[[noreturn]] void parse_fail(const std::string& what) {
  throw Error(ErrorCode::parse_error, "space spec: " + what);
}

[[noreturn]] void invalid(const std::string& what) {
  throw Error(ErrorCode::invalid_argument, "space spec: " + what);
}

std::string family_name(SpaceFamily f) {
  return f == SpaceFamily::op_slot ? "op_slot" : "topology";
}

bool mul_fits(std::uint64_t a, std::uint64_t b) {
  return b == 0 || a <= std::numeric_limits<std::uint64_t>::max() / b;
}

// Next integer with the same popcount (Gosper's hack).
std::uint32_t next_same_popcount(std::uint32_t v) {
  const std::uint32_t t = v | (v - 1);
  return (t + 1) | (((~t & -~t) - 1) >> (std::countr_zero(v) + 1));
}

template <typename Fn>
void for_each_mask_upto(int bits, int max_pop, Fn&& fn) {
  for (int k = 0; k <= std::min(bits, max_pop); ++k) {
    if (k == 0) {
      if (!fn(0u)) return;
      continue;
    }
    const std::uint64_t end = std::uint64_t{1} << bits;
    for (std::uint64_t m = (std::uint64_t{1} << k) - 1; m < end;
         m = next_same_popcount(static_cast<std::uint32_t>(m))) {
      if (!fn(static_cast<std::uint32_t>(m))) return;
      if (m == ((std::uint64_t{1} << k) - 1) << (bits - k)) break;
    }
  }
}

}  // namespace

std::string_view to_string(OpKind kind) {
  switch (kind) {
    case OpKind::conv: return "conv";
    case OpKind::pool_max: return "pool_max";
    case OpKind::pool_avg: return "pool_avg";
    case OpKind::identity: return "identity";
    case OpKind::none: return "none";
    case OpKind::other: return "other";
  }
  return "other";
}

OpKind op_kind_from_string(std::string_view s) {
  if (s == "conv") return OpKind::conv;
  if (s == "pool_max") return OpKind::pool_max;
  if (s == "pool_avg") return OpKind::pool_avg;
  if (s == "identity") return OpKind::identity;
  if (s == "none") return OpKind::none;
  if (s == "other") return OpKind::other;
  parse_fail("unknown op kind '" + std::string(s) + "'");
}

// ---------------------------------------------------------------------------
// SpaceSpec

CostMatrix SpaceSpec::effective_costs() const {
  if (cost_matrix) return *cost_matrix;
  const std::size_t c = ops.size();
  CostMatrix m(c, std::vector<double>(c, 0.0));
  for (std::size_t i = 0; i < c; ++i) {
    for (std::size_t j = 0; j < c; ++j) {
      if (i != j && ops[i].kind != OpKind::none && ops[j].kind != OpKind::none) m[i][j] = 1.0;
    }
  }
  return m;
}

double SpaceSpec::insertion_deletion_cost() const {
  double mx = 0.0;
  for (const auto& row : effective_costs()) {
    for (double v : row) mx = std::max(mx, v);
  }
  // A space with a single real op has no substitution prices; use unit cost.
  return 5.0 * (mx > 0.0 ? mx : 1.0);
}

SpaceSpec SpaceSpec::parse(std::string_view json_text) {
  ojson doc;
  try {
    doc = ojson::parse(json_text);
  } catch (const nlohmann::json::exception& e) {
    parse_fail(e.what());
  }
  if (!doc.is_object()) parse_fail("document must be an object");

  SpaceSpec spec;
  try {
    if (doc.contains("version") && doc.at("version").get<int>() != kSpecVersion) {
      parse_fail("unsupported version");
    }
    const auto family = doc.at("family").get<std::string>();
    if (family == "op_slot") {
      spec.family = SpaceFamily::op_slot;
      spec.slots = doc.at("slots").get<int>();
    } else if (family == "topology") {
      spec.family = SpaceFamily::topology;
      spec.nodes = doc.at("nodes").get<int>();
      spec.max_edges = doc.at("max_edges").get<int>();
    } else {
      parse_fail("unknown family '" + family + "'");
    }
    OpId next = 0;
    for (const auto& op : doc.at("ops")) {
      OpType t;
      t.id = next++;
      t.name = op.at("name").get<std::string>();
      t.kind = op_kind_from_string(op.at("kind").get<std::string>());
      spec.ops.push_back(std::move(t));
    }
    if (doc.contains("cost_matrix")) {
      spec.cost_matrix = doc.at("cost_matrix").get<CostMatrix>();
    }
    if (doc.contains("skeleton")) {
      std::vector<std::pair<int, int>> sk;
      for (const auto& e : doc.at("skeleton")) {
        if (!e.is_array() || e.size() != 2) parse_fail("skeleton entries must be [from, to]");
        sk.emplace_back(e[0].get<int>(), e[1].get<int>());
      }
      spec.skeleton = std::move(sk);
    }
  } catch (const nlohmann::json::exception& e) {
    parse_fail(e.what());
  }
  // Surface structural problems at parse time.
  Space validate(spec);
  return spec;
}

std::string SpaceSpec::serialize() const {
  ojson doc;
  doc["version"] = kSpecVersion;
  doc["family"] = family_name(family);
  if (family == SpaceFamily::op_slot) {
    doc["slots"] = slots;
  } else {
    doc["nodes"] = nodes;
    doc["max_edges"] = max_edges;
  }
  ojson ops_json = ojson::array();
  for (const auto& op : ops) {
    ops_json.push_back(ojson{{"name", op.name}, {"kind", std::string(to_string(op.kind))}});
  }
  doc["ops"] = std::move(ops_json);
  if (cost_matrix) doc["cost_matrix"] = *cost_matrix;
  if (skeleton) {
    ojson sk = ojson::array();
    for (auto [f, t] : *skeleton) sk.push_back(ojson::array({f, t}));
    doc["skeleton"] = std::move(sk);
  }
  return doc.dump(2) + "\n";
}

SpaceSpec SpaceSpec::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::io_error, "cannot open space spec '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return parse(ss.str());
}

std::uint64_t SpaceSpec::structure_hash() const {
  Fnv1a h;
  h.update(family_name(family));
  h.update_u64(static_cast<std::uint64_t>(slots));
  h.update_u64(static_cast<std::uint64_t>(nodes));
  h.update_u64(static_cast<std::uint64_t>(max_edges));
  for (const auto& op : ops) {
    h.update(op.name);
    h.update(to_string(op.kind));
  }
  if (skeleton) {
    for (auto [f, t] : *skeleton) {
      h.update_u64(static_cast<std::uint64_t>(f));
      h.update_u64(static_cast<std::uint64_t>(t));
    }
  }
  return h.digest();
}

std::uint64_t SpaceSpec::cost_hash() const {
  Fnv1a h;
  for (const auto& row : effective_costs()) {
    for (double v : row) h.update_u64(std::bit_cast<std::uint64_t>(v));
  }
  return h.digest();
}

SpaceSpec nas201_spec() {
  SpaceSpec s;
  s.family = SpaceFamily::op_slot;
  s.slots = 6;
  s.ops = {{0, "none", OpKind::none},
           {1, "identity", OpKind::identity},
           {2, "conv1x1", OpKind::conv},
           {3, "conv3x3", OpKind::conv},
           {4, "avgpool3x3", OpKind::pool_avg}};
  // Cell edges in the benchmark's string order: 0->1 | 0->2 1->2 | 0->3 1->3 2->3.
  s.skeleton = std::vector<std::pair<int, int>>{{0, 1}, {0, 2}, {1, 2}, {0, 3}, {1, 3}, {2, 3}};
  return s;
}

SpaceSpec toy_spec(int slots, int ops) {
  static const std::vector<std::pair<std::string, OpKind>> real = {
      {"conv3x3", OpKind::conv},          {"conv1x1", OpKind::conv},
      {"maxpool3x3", OpKind::pool_max},   {"avgpool3x3", OpKind::pool_avg},
      {"identity", OpKind::identity},     {"conv5x5", OpKind::conv},
      {"sepconv3x3", OpKind::conv},       {"dilconv3x3", OpKind::conv}};
  if (ops < 1 || ops > static_cast<int>(real.size()) + 1) invalid("toy op count out of range");
  SpaceSpec s;
  s.family = SpaceFamily::op_slot;
  s.slots = slots;
  const int real_ops = ops == 1 ? 1 : ops - 1;
  for (int i = 0; i < real_ops; ++i) {
    s.ops.push_back({static_cast<OpId>(i), real[static_cast<std::size_t>(i)].first,
                     real[static_cast<std::size_t>(i)].second});
  }
  if (ops > 1) s.ops.push_back({static_cast<OpId>(real_ops), "none", OpKind::none});
  return s;
}

SpaceSpec nas101_like_spec(int nodes, int max_edges) {
  SpaceSpec s;
  s.family = SpaceFamily::topology;
  s.nodes = nodes;
  s.max_edges = max_edges;
  s.ops = {{0, "conv3x3", OpKind::conv},
           {1, "conv1x1", OpKind::conv},
           {2, "maxpool3x3", OpKind::pool_max},
           {3, "none", OpKind::none}};
  return s;
}

SpaceSpec resolve_space(const std::string& name_or_path) {
  constexpr std::string_view prefix = "builtin:";
  const bool prefixed = name_or_path.rfind(prefix, 0) == 0;
  if (!prefixed && std::ifstream(name_or_path).good()) return SpaceSpec::load(name_or_path);
  const std::string name = prefixed ? name_or_path.substr(prefix.size()) : name_or_path;
  const bool builtin_like = name == "nas201" || name.rfind("toy:", 0) == 0 || name.rfind("nas101:", 0) == 0;
  if (!prefixed && !builtin_like) return SpaceSpec::load(name_or_path);
  if (name == "nas201") return nas201_spec();
  int a = 0, b = 0;
  if (std::sscanf(name.c_str(), "toy:%dx%d", &a, &b) == 2) return toy_spec(a, b);
  if (std::sscanf(name.c_str(), "nas101:%d:%d", &a, &b) == 2) return nas101_like_spec(a, b);
  invalid("unknown builtin space '" + name + "'");
}

// ---------------------------------------------------------------------------
// Space

Space::Space(SpaceSpec spec) : spec_(std::move(spec)) {
  const std::size_t c = spec_.ops.size();
  if (c == 0) invalid("at least one op required");
  if (c > 255) invalid("at most 255 ops supported");

  std::set<std::string> names;
  for (std::size_t i = 0; i < c; ++i) {
    const auto& op = spec_.ops[i];
    if (op.id != i) invalid("op ids must be dense and ordered");
    if (!names.insert(op.name).second) invalid("duplicate op name '" + op.name + "'");
    if (op.kind == OpKind::none) {
      if (none_op_) invalid("at most one op of kind none");
      none_op_ = op.id;
    }
  }

  costs_ = spec_.effective_costs();
  if (costs_.size() != c) invalid("cost matrix must be C x C");
  for (std::size_t i = 0; i < c; ++i) {
    if (costs_[i].size() != c) invalid("cost matrix must be C x C");
    for (std::size_t j = 0; j < c; ++j) {
      const double v = costs_[i][j];
      if (!std::isfinite(v) || v < 0) invalid("cost matrix entries must be finite and nonnegative");
      if (i == j && v != 0.0) invalid("cost matrix diagonal must be zero");
      if (costs_[j][i] != v) invalid("cost matrix must be symmetric");
      if (i != j && !is_none(static_cast<OpId>(i)) && !is_none(static_cast<OpId>(j)) && v <= 0.0) {
        invalid("substitution costs between distinct ops must be positive");
      }
    }
  }
  deletion_cost_ = spec_.insertion_deletion_cost();

  if (spec_.family == SpaceFamily::op_slot) {
    if (spec_.slots < 1 || spec_.slots > 64) invalid("slots must be in [1, 64]");
    positions_ = spec_.slots;
    if (spec_.skeleton) {
      slot_edges_ = *spec_.skeleton;
      if (static_cast<int>(slot_edges_.size()) != spec_.slots) invalid("skeleton needs one edge per slot");
    } else {
      for (int s = 0; s < spec_.slots; ++s) slot_edges_.emplace_back(s, s + 1);
    }
    int max_node = 0;
    for (auto [f, t] : slot_edges_) {
      if (f < 0 || t <= f) invalid("skeleton edges must satisfy 0 <= from < to");
      max_node = std::max(max_node, t);
    }
    node_count_ = max_node + 1;
  } else {
    if (spec_.nodes < 2 || spec_.nodes > kMaxTopologyNodes) invalid("topology nodes must be in [2, 8]");
    if (c > 63) invalid("topology spaces support at most 63 ops");
    node_count_ = spec_.nodes;
    positions_ = spec_.nodes - 2;
    edge_slots_ = spec_.nodes * (spec_.nodes - 1) / 2;
    if (spec_.max_edges < 0 || spec_.max_edges > edge_slots_) invalid("max_edges out of range");
    for (int i = 0; i < spec_.nodes; ++i) {
      for (int j = i + 1; j < spec_.nodes; ++j) {
        pair_from_.push_back(i);
        pair_to_.push_back(j);
      }
    }
  }

  // Edit prices and their closure.
  min_edit_cost_ = std::numeric_limits<double>::infinity();
  max_edit_cost_ = 0.0;
  const bool has_edits = c > 1 || spec_.family == SpaceFamily::topology;
  if (has_edits && (none_op_ || spec_.family == SpaceFamily::topology) && deletion_cost_ <= 0.0) {
    invalid("insertion/deletion cost must be positive");
  }
  closure_.assign(c * c, 0.0);
  for (std::size_t i = 0; i < c; ++i) {
    for (std::size_t j = 0; j < c; ++j) {
      if (i == j) continue;
      const double w = substitution_cost(static_cast<OpId>(i), static_cast<OpId>(j));
      closure_[i * c + j] = w;
      min_edit_cost_ = std::min(min_edit_cost_, w);
      max_edit_cost_ = std::max(max_edit_cost_, w);
    }
  }
  if (spec_.family == SpaceFamily::topology) {
    min_edit_cost_ = std::min(min_edit_cost_, deletion_cost_);
    max_edit_cost_ = std::max(max_edit_cost_, deletion_cost_);
  }
  if (!std::isfinite(min_edit_cost_)) min_edit_cost_ = 0.0;
  for (std::size_t k = 0; k < c; ++k) {
    for (std::size_t i = 0; i < c; ++i) {
      for (std::size_t j = 0; j < c; ++j) {
        closure_[i * c + j] = std::min(closure_[i * c + j], closure_[i * c + k] + closure_[k * c + j]);
      }
    }
  }

  // Id layout.
  radix_.assign(static_cast<std::size_t>(positions_) + 1, 0);
  radix_[0] = 1;
  bool fits = true;
  for (int p = 0; p < positions_; ++p) {
    if (!fits || !mul_fits(radix_[static_cast<std::size_t>(p)], c)) {
      fits = false;
      continue;
    }
    radix_[static_cast<std::size_t>(p) + 1] = radix_[static_cast<std::size_t>(p)] * c;
  }
  if (spec_.family == SpaceFamily::op_slot) {
    dense_ids_ = fits;
  } else {
    dense_ids_ = false;
    if (!fits || !mul_fits(radix_.back(), std::uint64_t{1} << edge_slots_)) {
      invalid("topology encoding does not fit in 64 bits");
    }
  }

  if (spec_.family == SpaceFamily::op_slot) {
    // All input->output slot paths of the skeleton, in DFS order.
    std::vector<std::vector<int>> out(static_cast<std::size_t>(node_count_));
    for (int s = 0; s < positions_; ++s) {
      out[static_cast<std::size_t>(slot_edges_[static_cast<std::size_t>(s)].first)].push_back(s);
    }
    for (auto& v : out) {
      std::sort(v.begin(), v.end(), [&](int a, int b) {
        return slot_edges_[static_cast<std::size_t>(a)].second < slot_edges_[static_cast<std::size_t>(b)].second ||
               (slot_edges_[static_cast<std::size_t>(a)].second == slot_edges_[static_cast<std::size_t>(b)].second && a < b);
      });
    }
    std::vector<int> stack;
    std::function<void(int)> dfs = [&](int node) {
      if (node == node_count_ - 1) {
        skeleton_paths_.push_back(stack);
        return;
      }
      for (int s : out[static_cast<std::size_t>(node)]) {
        stack.push_back(s);
        dfs(slot_edges_[static_cast<std::size_t>(s)].second);
        stack.pop_back();
      }
    };
    dfs(0);
  }
}

std::optional<OpId> Space::op_by_name(std::string_view name) const {
  for (const auto& op : spec_.ops) {
    if (op.name == name) return op.id;
  }
  return std::nullopt;
}

double Space::substitution_cost(OpId from, OpId to) const {
  if (from == to) return 0.0;
  if (is_none(from) || is_none(to)) return deletion_cost_;
  return costs_.at(from).at(to);
}

double Space::closure_cost(OpId from, OpId to) const {
  return closure_.at(static_cast<std::size_t>(from) * op_count() + to);
}

int Space::edge_bit(int from, int to) const {
  // Row-major index of (from, to) among pairs i < j.
  const int n = node_count_;
  return from * (2 * n - from - 1) / 2 + (to - from - 1);
}

std::pair<int, int> Space::edge_endpoints(int bit) const {
  return {pair_from_.at(static_cast<std::size_t>(bit)), pair_to_.at(static_cast<std::size_t>(bit))};
}

std::uint32_t Space::active_mask(const Architecture& a) const {
  std::uint32_t mask = 1u | (1u << (node_count_ - 1));
  for (int i = 0; i < positions_; ++i) {
    if (!is_none(a.ops[static_cast<std::size_t>(i)])) mask |= 1u << (i + 1);
  }
  return mask;
}

bool Space::topology_admissible(std::uint32_t edges, std::uint32_t active) const {
  if (std::popcount(edges) > spec_.max_edges) return false;
  const int n = node_count_;
  std::uint32_t fwd = 1u;  // reachable from input
  for (int j = 1; j < n; ++j) {
    if (!(active >> j & 1u)) continue;
    for (int i = 0; i < j; ++i) {
      if ((fwd >> i & 1u) && (edges >> edge_bit(i, j) & 1u)) {
        fwd |= 1u << j;
        break;
      }
    }
  }
  std::uint32_t bwd = 1u << (n - 1);  // reaches output
  for (int i = n - 2; i >= 0; --i) {
    if (!(active >> i & 1u)) continue;
    for (int j = i + 1; j < n; ++j) {
      if ((bwd >> j & 1u) && (edges >> edge_bit(i, j) & 1u)) {
        bwd |= 1u << i;
        break;
      }
    }
  }
  const std::uint32_t inner = active & ~(1u | (1u << (n - 1)));
  return (inner & fwd & bwd) == inner;
}

bool Space::admissible(const Architecture& a) const {
  if (spec_.family == SpaceFamily::op_slot) return true;
  return topology_admissible(a.edges, active_mask(a));
}

bool Space::valid(const Architecture& a) const {
  if (static_cast<int>(a.ops.size()) != positions_) return false;
  for (OpId o : a.ops) {
    if (o >= op_count()) return false;
  }
  if (spec_.family == SpaceFamily::op_slot) return a.edges == 0;
  if (edge_slots_ < 32 && (a.edges >> edge_slots_) != 0) return false;
  return admissible(a);
}

ArchId Space::id_of(const Architecture& a) const {
  if (spec_.family == SpaceFamily::op_slot && !dense_ids_) {
    std::uint64_t h = 0x51ed270b27a5f3c1ULL;
    for (OpId o : a.ops) h = mix64(h ^ o);
    return h;
  }
  std::uint64_t idx = 0;
  for (int p = positions_ - 1; p >= 0; --p) idx = idx * op_count() + a.ops[static_cast<std::size_t>(p)];
  if (spec_.family == SpaceFamily::op_slot) return idx;
  return (idx << edge_slots_) | a.edges;
}

Architecture Space::decode(ArchId id) const {
  if (spec_.family == SpaceFamily::op_slot && !dense_ids_) {
    throw Error(ErrorCode::invalid_argument, "ids of this space are hashed and cannot be decoded");
  }
  Architecture a;
  std::uint64_t idx = id;
  if (spec_.family == SpaceFamily::topology) {
    a.edges = static_cast<std::uint32_t>(id & ((std::uint64_t{1} << edge_slots_) - 1));
    idx = id >> edge_slots_;
  }
  a.ops.resize(static_cast<std::size_t>(positions_));
  for (int p = 0; p < positions_; ++p) {
    a.ops[static_cast<std::size_t>(p)] = static_cast<OpId>(idx % op_count());
    idx /= op_count();
  }
  if (idx != 0) throw Error(ErrorCode::unknown_arch, "architecture id " + std::to_string(id) + " outside space");
  return a;
}

std::optional<std::uint64_t> Space::count(std::uint64_t cap) const {
  const std::uint64_t c = op_count();
  if (spec_.family == SpaceFamily::op_slot) {
    if (!dense_ids_) return std::nullopt;
    const std::uint64_t n = radix_.back();
    if (n > cap) return std::nullopt;
    return n;
  }
  const int inner = positions_;
  const std::uint64_t real_ops = none_op_ ? c - 1 : c;
  std::vector<std::uint64_t> pow(static_cast<std::size_t>(inner) + 1, 1);
  for (int i = 1; i <= inner; ++i) pow[static_cast<std::size_t>(i)] = pow[static_cast<std::size_t>(i) - 1] * real_ops;
  const std::uint32_t all_inner = ((1u << inner) - 1u) << 1;
  std::uint64_t total = 0;
  bool over = false;
  for_each_mask_upto(edge_slots_, spec_.max_edges, [&](std::uint32_t edges) {
    const std::uint32_t io = 1u | (1u << (node_count_ - 1));
    if (!none_op_) {
      if (topology_admissible(edges, io | all_inner)) total += pow[static_cast<std::size_t>(inner)];
    } else {
      for (std::uint32_t z = 0; z < (1u << inner); ++z) {
        if (topology_admissible(edges, io | (z << 1))) total += pow[static_cast<std::size_t>(std::popcount(z))];
      }
    }
    if (total > cap) {
      over = true;
      return false;
    }
    return true;
  });
  if (over) return std::nullopt;
  return total;
}

void Space::enumerate(const std::function<void(const Architecture&)>& visit,
                      std::optional<std::uint64_t> limit, std::uint64_t cap) const {
  if (!limit && !count(cap)) {
    throw Error(ErrorCode::space_too_large, "space exceeds the enumeration cap of " + std::to_string(cap));
  }
  const std::uint64_t max_out = limit.value_or(std::numeric_limits<std::uint64_t>::max());
  std::uint64_t emitted = 0;
  if (max_out == 0) return;
  const std::uint64_t c = op_count();
  const auto labelings = radix_.back();

  if (spec_.family == SpaceFamily::op_slot) {
    if (!dense_ids_) {
      throw Error(ErrorCode::space_too_large, "space too large to enumerate");
    }
    Architecture a;
    a.ops.assign(static_cast<std::size_t>(positions_), 0);
    for (std::uint64_t id = 0; id < labelings; ++id) {
      visit(a);
      if (++emitted >= max_out) return;
      for (auto& o : a.ops) {  // increment the mixed-radix counter
        if (++o < c) break;
        o = 0;
      }
    }
    return;
  }

  std::map<std::uint32_t, std::vector<std::uint32_t>> by_active;
  Architecture a;
  a.ops.assign(static_cast<std::size_t>(positions_), 0);
  for (std::uint64_t lab = 0; lab < labelings; ++lab) {
    const std::uint32_t active = active_mask(a);
    auto it = by_active.find(active);
    if (it == by_active.end()) {
      std::vector<std::uint32_t> masks;
      for_each_mask_upto(edge_slots_, spec_.max_edges, [&](std::uint32_t edges) {
        if (topology_admissible(edges, active)) masks.push_back(edges);
        return true;
      });
      it = by_active.emplace(active, std::move(masks)).first;
    }
    for (std::uint32_t edges : it->second) {
      a.edges = edges;
      visit(a);
      if (++emitted >= max_out) return;
    }
    for (auto& o : a.ops) {
      if (++o < c) break;
      o = 0;
    }
  }
}

std::vector<Architecture> Space::enumerate_all(std::optional<std::uint64_t> limit, std::uint64_t cap) const {
  std::vector<Architecture> out;
  enumerate([&](const Architecture& a) { out.push_back(a); }, limit, cap);
  return out;
}

void Space::for_each_neighbor(const Architecture& a,
                              const std::function<void(const Architecture&, double)>& visit) const {
  Architecture b = a;
  const auto c = static_cast<OpId>(op_count());
  for (int p = 0; p < positions_; ++p) {
    const OpId cur = a.ops[static_cast<std::size_t>(p)];
    for (OpId o = 0; o < c; ++o) {
      if (o == cur) continue;
      b.ops[static_cast<std::size_t>(p)] = o;
      if (admissible(b)) visit(b, substitution_cost(cur, o));
    }
    b.ops[static_cast<std::size_t>(p)] = cur;
  }
  if (spec_.family == SpaceFamily::topology) {
    for (int bit = 0; bit < edge_slots_; ++bit) {
      b.edges = a.edges ^ (1u << bit);
      if (admissible(b)) visit(b, deletion_cost_);
    }
  }
}

std::vector<Neighbor> Space::one_edit_neighbors(const Architecture& a) const {
  std::vector<Neighbor> out;
  for_each_neighbor(a, [&](const Architecture& b, double cost) { out.push_back({b, cost}); });
  return out;
}

std::vector<OpPath> Space::paths(const Architecture& a) const {
  std::vector<OpPath> out;
  if (spec_.family == SpaceFamily::op_slot) {
    for (const auto& sp : skeleton_paths_) {
      OpPath p;
      bool alive = true;
      for (int s : sp) {
        const OpId o = a.ops[static_cast<std::size_t>(s)];
        if (is_none(o)) {
          alive = false;
          break;
        }
        p.push_back(o);
      }
      if (alive) out.push_back(std::move(p));
    }
    return out;
  }
  const int n = node_count_;
  const std::uint32_t active = active_mask(a);
  OpPath stack;
  std::function<void(int)> dfs = [&](int node) {
    if (node == n - 1) {
      out.push_back(stack);
      return;
    }
    for (int j = node + 1; j < n; ++j) {
      if (!(active >> j & 1u) || !(a.edges >> edge_bit(node, j) & 1u)) continue;
      if (j != n - 1) stack.push_back(a.ops[static_cast<std::size_t>(j - 1)]);
      dfs(j);
      if (j != n - 1) stack.pop_back();
    }
  };
  dfs(0);
  return out;
}

int Space::skip_connections(const Architecture& a) const {
  int count = 0;
  if (spec_.family == SpaceFamily::op_slot) {
    for (int s = 0; s < positions_; ++s) {
      const auto [f, t] = slot_edges_[static_cast<std::size_t>(s)];
      if (t - f >= 2 && !is_none(a.ops[static_cast<std::size_t>(s)])) ++count;
    }
    return count;
  }
  const std::uint32_t active = active_mask(a);
  for (int bit = 0; bit < edge_slots_; ++bit) {
    if (!(a.edges >> bit & 1u)) continue;
    const auto [f, t] = edge_endpoints(bit);
    if (t - f >= 2 && (active >> f & 1u) && (active >> t & 1u)) ++count;
  }
  return count;
}

Architecture Space::random_architecture(std::uint64_t seed) const {
  Rng rng(seed);
  Architecture a;
  a.ops.resize(static_cast<std::size_t>(positions_));
  for (int attempt = 0; attempt < 1'000'000; ++attempt) {
    for (auto& o : a.ops) o = static_cast<OpId>(rng.below(op_count()));
    if (spec_.family == SpaceFamily::topology) {
      a.edges = 0;
      // Edge density chosen so roughly max_edges/2 edges are drawn.
      const double p = std::min(0.5, static_cast<double>(spec_.max_edges) / (2.0 * std::max(1, edge_slots_)) + 0.1);
      for (int bit = 0; bit < edge_slots_; ++bit) {
        if (rng.uniform() < p) a.edges |= 1u << bit;
      }
    }
    if (admissible(a)) return a;
  }
  throw Error(ErrorCode::exhausted_space, "no admissible architecture found by rejection sampling");
}

std::vector<ArchId> sample_ids(const Space& space, std::size_t n, std::uint64_t seed) {
  std::vector<ArchId> out;
  Rng rng(mix64(seed ^ 0x5a3b1eULL));
  if (const auto total = space.count(std::uint64_t{1} << 24)) {
    std::vector<ArchId> all;
    all.reserve(*total);
    if (space.dense_ids()) {
      for (ArchId i = 0; i < *total; ++i) all.push_back(i);
    } else {
      space.enumerate([&](const Architecture& a) { all.push_back(space.id_of(a)); });
    }
    n = std::min<std::size_t>(n, all.size());
    // Partial Fisher-Yates.
    for (std::size_t i = 0; i < n; ++i) std::swap(all[i], all[i + rng.below(all.size() - i)]);
    out.assign(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(n));
  } else {
    std::set<ArchId> seen;
    while (seen.size() < n) seen.insert(space.id_of(space.random_architecture(rng.next())));
    out.assign(seen.begin(), seen.end());
  }
  std::sort(out.begin(), out.end());
  return out;
}

}  // namespace archx
