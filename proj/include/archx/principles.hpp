// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <json.hpp>

#include "archx/space.hpp"

namespace archx {

// ---------------------------------------------------------------------------
// Structural features

/// Path and op statistics that the principles and the surrogate scorer read.
struct CellFeatures {
  std::vector<int> op_counts;   // per op id, over all positions
  int skip_connections = 0;
  int path_count = 0;
  bool identity_path = false;   // input reaches output through identity only
  int max_conv3x3_stack = 0;    // most 3x3 convolutions on one path
  int conv3x3_paths = 0;        // paths with at least one 3x3 convolution
  int conv_free_paths = 0;      // paths without any convolution
  bool pool_at_end = false;     // a pooling op of the configured kinds ends a path
};

/// Ops treated as 3x3 convolutions: conv ops whose name mentions 3x3, or
/// every conv op when none does.
std::vector<OpId> conv3x3_ops(const Space& space);

CellFeatures cell_features(const Space& space, const Architecture& a,
                           std::span<const OpKind> end_pool_kinds = {});

// ---------------------------------------------------------------------------
// Principles

enum class PrincipleMode { filter, score_only };

std::string_view to_string(PrincipleMode mode);

using PrinciplePredicate = std::function<bool(const Space&, const Architecture&)>;

struct Principle {
  std::string id;  // P1..P8, or a custom name with `custom` set
  PrincipleMode mode = PrincipleMode::filter;
  nlohmann::ordered_json params = nlohmann::ordered_json::object();
  PrinciplePredicate custom;
};

/// P1..P8 with default mode and params.
Principle builtin_principle(std::string_view id);
std::vector<Principle> builtin_principles();
/// Builtins with the given ids, in that order.
std::vector<Principle> principles_by_id(std::span<const std::string> ids);

bool principle_passes(const Space& space, const Architecture& a, const Principle& p);

using PrincipleResults = std::vector<std::pair<std::string, bool>>;

PrincipleResults evaluate_principles(const Space& space, const Architecture& a, std::span<const Principle> set);

/// True when `a` passes every filter-mode principle.
bool passes_filters(const Space& space, const Architecture& a, std::span<const Principle> set);

/// Config file: JSON array of {id, mode, params}; params and mode optional.
std::vector<Principle> parse_principles(std::string_view json_text);
std::vector<Principle> load_principles(const std::string& path);
std::string principles_to_json(std::span<const Principle> set);

// ---------------------------------------------------------------------------
// Statistics

struct Significance {
  double p_value = 0.5;
  double u = 0.0;   // U statistic of the pass group
  double z = 0.0;
  int effect_direction = 0;  // sign of mean(pass) - mean(fail)
  double mean_pass = 0.0;
  double mean_fail = 0.0;
  std::size_t n_pass = 0;
  std::size_t n_fail = 0;
};

/// One-sided Mann-Whitney U test of "pass > fail", normal approximation with
/// tie correction. Throws EmptyGroup when either group is empty.
Significance mann_whitney(std::span<const double> pass, std::span<const double> fail);

/// Splits (arch_id, accuracy) rows by the principle and tests the groups.
Significance principle_significance(const Space& space, std::span<const std::pair<ArchId, double>> metrics,
                                    const Principle& split);

// ---------------------------------------------------------------------------
// Search

enum class SearchStrategy { random, evolution };

std::string_view to_string(SearchStrategy s);
SearchStrategy search_strategy_from_string(std::string_view s);

/// Must be pure and safe to call from several threads.
using Scorer = std::function<double(const Architecture&)>;

struct SearchOptions {
  SearchStrategy strategy = SearchStrategy::random;
  std::size_t budget = 100;
  std::uint64_t seed = 0;
  double per_arch_hours = 1.0;
  std::size_t population = 50;
  std::size_t tournament = 10;
  int threads = 0;  // 0: hardware concurrency
};

struct Evaluation {
  ArchId arch_id = 0;
  double score = 0.0;
};

struct SearchTrace {
  SearchStrategy strategy = SearchStrategy::random;
  std::uint64_t seed = 0;
  std::size_t budget = 0;
  double per_arch_hours = 1.0;
  std::vector<std::string> principles;  // filter-mode ids applied
  std::vector<Evaluation> evaluated;
  std::vector<ArchId> discarded;        // proposals rejected by a filter, in order
  std::vector<double> best_so_far;
  ArchId best_id = 0;
  double best_score = 0.0;
  bool exhausted = false;               // proposals ran out before the budget

  double estimated_cost() const { return static_cast<double>(evaluated.size()) * per_arch_hours; }
};

/// Runs the strategy, discarding filter violations before scoring; discards
/// do not consume budget. `random` draws without replacement when the space
/// can be enumerated. Throws ExhaustedSpace if nothing passes the filters.
SearchTrace filtered_search(const Space& space, const Scorer& scorer, std::span<const Principle> principles,
                            const SearchOptions& options);

std::string search_trace_to_json(const SearchTrace& trace);
SearchTrace search_trace_from_json(std::string_view text);

/// Fixed-width table: run, arch count, estimated hours, best score.
std::string search_table(std::span<const std::pair<std::string, SearchTrace>> runs);

}  // namespace archx
