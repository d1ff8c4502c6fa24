// SPDX-License-Identifier: Apache-2.0
#include "archx/principles.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <deque>
#include <fstream>
#include <limits>
#include <numeric>
#include <sstream>
#include <unordered_set>

#include "archx/error.hpp"
#include "archx/util.hpp"

namespace archx {

using json = nlohmann::ordered_json;

namespace {

[[noreturn]] void parse_fail(const std::string& msg) { throw Error(ErrorCode::parse_error, msg); }

bool contains(std::span<const OpId> v, OpId o) { return std::find(v.begin(), v.end(), o) != v.end(); }

std::vector<OpKind> kinds_param(const json& params, std::vector<OpKind> fallback) {
  if (!params.contains("kinds")) return fallback;
  std::vector<OpKind> out;
  for (const auto& k : params.at("kinds")) out.push_back(op_kind_from_string(k.get<std::string>()));
  return out;
}

int int_param(const json& params, const char* name, int fallback) {
  if (!params.contains(name)) return fallback;
  const auto& v = params.at(name);
  if (!v.is_number_integer()) parse_fail(std::string("principle parameter '") + name + "' must be an integer");
  return v.get<int>();
}

std::vector<OpId> conv_ops_param(const Space& space, const json& params) {
  if (!params.contains("ops")) return conv3x3_ops(space);
  std::vector<OpId> out;
  for (const auto& name : params.at("ops")) {
    const auto id = space.op_by_name(name.get<std::string>());
    if (!id) throw Error(ErrorCode::invalid_argument, "unknown op '" + name.get<std::string>() + "'");
    out.push_back(*id);
  }
  return out;
}

int count_kind(const Space& space, const Architecture& a, OpKind kind) {
  int n = 0;
  for (OpId o : a.ops) n += space.op(o).kind == kind;
  return n;
}

}  // namespace

// ---------------------------------------------------------------------------
// Features

std::vector<OpId> conv3x3_ops(const Space& space) {
  std::vector<OpId> named, all;
  for (std::size_t i = 0; i < space.op_count(); ++i) {
    const auto& op = space.op(static_cast<OpId>(i));
    if (op.kind != OpKind::conv) continue;
    all.push_back(op.id);
    if (op.name.find("3x3") != std::string::npos) named.push_back(op.id);
  }
  return named.empty() ? all : named;
}

CellFeatures cell_features(const Space& space, const Architecture& a, std::span<const OpKind> end_pool_kinds) {
  CellFeatures f;
  f.op_counts.assign(space.op_count(), 0);
  for (OpId o : a.ops) ++f.op_counts[o];
  f.skip_connections = space.skip_connections(a);
  const auto c3 = conv3x3_ops(space);
  const auto paths = space.paths(a);
  f.path_count = static_cast<int>(paths.size());
  for (const auto& p : paths) {
    int c3n = 0;
    bool any_conv = false;
    bool all_identity = true;
    for (OpId o : p) {
      const OpKind k = space.op(o).kind;
      c3n += contains(c3, o);
      any_conv = any_conv || k == OpKind::conv;
      all_identity = all_identity && k == OpKind::identity;
    }
    f.max_conv3x3_stack = std::max(f.max_conv3x3_stack, c3n);
    f.conv3x3_paths += c3n > 0;
    f.conv_free_paths += !any_conv;
    if (space.family() == SpaceFamily::op_slot) {
      f.identity_path = f.identity_path || all_identity;
    } else {
      f.identity_path = f.identity_path || p.empty();
    }
    for (auto it = p.rbegin(); it != p.rend(); ++it) {
      const OpKind k = space.op(*it).kind;
      if (k == OpKind::identity) continue;
      if (std::find(end_pool_kinds.begin(), end_pool_kinds.end(), k) != end_pool_kinds.end()) f.pool_at_end = true;
      break;
    }
  }
  return f;
}

// ---------------------------------------------------------------------------
// Principles

std::string_view to_string(PrincipleMode mode) { return mode == PrincipleMode::filter ? "filter" : "score_only"; }

Principle builtin_principle(std::string_view id) {
  static const char* ids[] = {"P1", "P2", "P3", "P4", "P5", "P6", "P7", "P8"};
  if (std::find(std::begin(ids), std::end(ids), id) == std::end(ids)) {
    throw Error(ErrorCode::invalid_argument, "unknown principle '" + std::string(id) + "'");
  }
  Principle p;
  p.id = std::string(id);
  if (id == "P1") {
    p.mode = PrincipleMode::score_only;
    p.params["t1"] = 0;
  } else if (id == "P2") {
    p.params["kinds"] = json::array({"pool_max"});
  } else if (id == "P3") {
    p.params["t3"] = 1;
  } else if (id == "P6") {
    p.params["min_stack"] = 2;
  } else if (id == "P7") {
    p.params["min_paths"] = 2;
  } else if (id == "P8") {
    p.params["max_conv_free"] = 1;
  }
  return p;
}

std::vector<Principle> builtin_principles() {
  std::vector<Principle> out;
  for (const char* id : {"P1", "P2", "P3", "P4", "P5", "P6", "P7", "P8"}) out.push_back(builtin_principle(id));
  return out;
}

std::vector<Principle> principles_by_id(std::span<const std::string> ids) {
  std::vector<Principle> out;
  for (const auto& id : ids) out.push_back(builtin_principle(id));
  return out;
}

bool principle_passes(const Space& space, const Architecture& a, const Principle& p) {
  if (p.custom) return p.custom(space, a);
  const auto& id = p.id;
  const auto& params = p.params;
  if (id == "P1") return space.skip_connections(a) >= int_param(params, "t1", 0);
  if (id == "P2") {
    const auto kinds = kinds_param(params, {OpKind::pool_max});
    return !cell_features(space, a, kinds).pool_at_end;
  }
  if (id == "P3") return count_kind(space, a, OpKind::pool_max) <= int_param(params, "t3", 1);
  if (id == "P4") return cell_features(space, a).identity_path;
  if (id == "P5") return count_kind(space, a, OpKind::pool_avg) == 0;
  if (id == "P6" || id == "P7") {
    const auto c3 = conv_ops_param(space, params);
    int best = 0, with = 0;
    for (const auto& path : space.paths(a)) {
      int n = 0;
      for (OpId o : path) n += contains(c3, o);
      best = std::max(best, n);
      with += n > 0;
    }
    if (id == "P6") return best >= int_param(params, "min_stack", 2);
    return with >= int_param(params, "min_paths", 2);
  }
  if (id == "P8") return cell_features(space, a).conv_free_paths <= int_param(params, "max_conv_free", 1);
  throw Error(ErrorCode::invalid_argument, "principle '" + id + "' has no predicate");
}

PrincipleResults evaluate_principles(const Space& space, const Architecture& a, std::span<const Principle> set) {
  if (!space.valid(a)) throw Error(ErrorCode::invalid_argument, "architecture is not valid in this space");
  PrincipleResults out;
  out.reserve(set.size());
  for (const auto& p : set) out.emplace_back(p.id, principle_passes(space, a, p));
  return out;
}

bool passes_filters(const Space& space, const Architecture& a, std::span<const Principle> set) {
  for (const auto& p : set)
    if (p.mode == PrincipleMode::filter && !principle_passes(space, a, p)) return false;
  return true;
}

std::vector<Principle> parse_principles(std::string_view json_text) {
  json doc;
  try {
    doc = json::parse(json_text);
  } catch (const json::exception& e) {
    parse_fail(std::string("principle config: ") + e.what());
  }
  if (!doc.is_array()) parse_fail("principle config must be a JSON array");
  std::vector<Principle> out;
  for (const auto& item : doc) {
    if (!item.is_object() || !item.contains("id") || !item.at("id").is_string()) {
      parse_fail("principle entry needs a string 'id'");
    }
    Principle p;
    try {
      p = builtin_principle(item.at("id").get<std::string>());
    } catch (const Error& e) {
      parse_fail(e.what());
    }
    if (item.contains("mode")) {
      const auto m = item.at("mode").is_string() ? item.at("mode").get<std::string>() : "";
      if (m == "filter") {
        p.mode = PrincipleMode::filter;
      } else if (m == "score_only") {
        p.mode = PrincipleMode::score_only;
      } else {
        parse_fail("principle " + p.id + ": mode must be 'filter' or 'score_only'");
      }
    }
    if (item.contains("params")) {
      if (!item.at("params").is_object()) parse_fail("principle " + p.id + ": params must be an object");
      for (const auto& [k, v] : item.at("params").items()) p.params[k] = v;
    }
    out.push_back(std::move(p));
  }
  return out;
}

std::vector<Principle> load_principles(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::io_error, "cannot open " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_principles(ss.str());
}

std::string principles_to_json(std::span<const Principle> set) {
  json doc = json::array();
  for (const auto& p : set) doc.push_back({{"id", p.id}, {"mode", to_string(p.mode)}, {"params", p.params}});
  return doc.dump(2) + "\n";
}

// ---------------------------------------------------------------------------
// Statistics

Significance mann_whitney(std::span<const double> pass, std::span<const double> fail) {
  if (pass.empty() || fail.empty()) throw Error(ErrorCode::empty_group, "both groups must be nonempty");
  Significance s;
  s.n_pass = pass.size();
  s.n_fail = fail.size();
  s.mean_pass = std::accumulate(pass.begin(), pass.end(), 0.0) / static_cast<double>(pass.size());
  s.mean_fail = std::accumulate(fail.begin(), fail.end(), 0.0) / static_cast<double>(fail.size());
  s.effect_direction = (s.mean_pass > s.mean_fail) - (s.mean_pass < s.mean_fail);

  std::vector<std::pair<double, bool>> all;
  all.reserve(pass.size() + fail.size());
  for (double v : pass) all.emplace_back(v, true);
  for (double v : fail) all.emplace_back(v, false);
  std::sort(all.begin(), all.end(), [](const auto& a, const auto& b) { return a.first < b.first; });
  const double n1 = static_cast<double>(pass.size());
  const double n2 = static_cast<double>(fail.size());
  const double n = n1 + n2;
  double rank_pass = 0.0;
  double ties = 0.0;
  for (std::size_t i = 0; i < all.size();) {
    std::size_t j = i;
    while (j < all.size() && all[j].first == all[i].first) ++j;
    const double avg = (static_cast<double>(i + 1) + static_cast<double>(j)) / 2.0;
    const double t = static_cast<double>(j - i);
    ties += t * t * t - t;
    for (std::size_t k = i; k < j; ++k)
      if (all[k].second) rank_pass += avg;
    i = j;
  }
  s.u = rank_pass - n1 * (n1 + 1.0) / 2.0;
  const double var = n1 * n2 / 12.0 * ((n + 1.0) - ties / (n * (n - 1.0)));
  if (var <= 0.0) return s;
  s.z = (s.u - n1 * n2 / 2.0) / std::sqrt(var);
  const double p = 0.5 * std::erfc(s.z / std::sqrt(2.0));
  s.p_value = std::clamp(p, std::numeric_limits<double>::min(), std::nextafter(1.0, 0.0));
  return s;
}

Significance principle_significance(const Space& space, std::span<const std::pair<ArchId, double>> metrics,
                                    const Principle& split) {
  std::vector<double> pass, fail;
  for (const auto& [id, acc] : metrics) {
    (principle_passes(space, space.decode(id), split) ? pass : fail).push_back(acc);
  }
  if (pass.empty() || fail.empty()) {
    throw Error(ErrorCode::empty_group, "principle " + split.id + " leaves a group empty (" +
                                            std::to_string(pass.size()) + " pass, " + std::to_string(fail.size()) +
                                            " fail)");
  }
  return mann_whitney(pass, fail);
}

// ---------------------------------------------------------------------------
// Search

std::string_view to_string(SearchStrategy s) { return s == SearchStrategy::random ? "random" : "evolution"; }

SearchStrategy search_strategy_from_string(std::string_view s) {
  if (s == "random") return SearchStrategy::random;
  if (s == "evolution") return SearchStrategy::evolution;
  throw Error(ErrorCode::invalid_argument, "unknown strategy '" + std::string(s) + "'");
}

namespace {

constexpr std::uint64_t kEnumerableCap = 1u << 22;
constexpr std::size_t kMaxConsecutiveMisses = 1'000'000;

// Uniform proposals: a seeded permutation when the space can be listed,
// otherwise fresh random draws with repeats skipped.
class ProposalStream {
 public:
  ProposalStream(const Space& space, std::uint64_t seed) : space_(space), rng_(mix64(seed ^ 0x5eedULL)) {
    const auto n = space.count(kEnumerableCap);
    if (!n) return;
    listed_ = true;
    if (space.dense_ids()) {
      order_.resize(*n);
      std::iota(order_.begin(), order_.end(), ArchId{0});
    } else {
      space.enumerate([&](const Architecture& a) { order_.push_back(space.id_of(a)); });
    }
    rng_.shuffle(order_);
  }

  std::optional<Architecture> next() {
    if (listed_) {
      if (pos_ >= order_.size()) return std::nullopt;
      return space_.decode(order_[pos_++]);
    }
    for (std::size_t miss = 0; miss < kMaxConsecutiveMisses; ++miss) {
      Architecture a = space_.random_architecture(rng_.next());
      if (seen_.insert(space_.id_of(a)).second) return a;
    }
    return std::nullopt;
  }

 private:
  const Space& space_;
  Rng rng_;
  bool listed_ = false;
  std::vector<ArchId> order_;
  std::size_t pos_ = 0;
  std::unordered_set<ArchId> seen_;
};

class TraceBuilder {
 public:
  TraceBuilder(SearchTrace& t) : t_(t) {}
  void add(ArchId id, double score) {
    if (t_.evaluated.empty() || score > t_.best_score) {
      t_.best_score = score;
      t_.best_id = id;
    }
    t_.evaluated.push_back({id, score});
    t_.best_so_far.push_back(t_.best_score);
  }

 private:
  SearchTrace& t_;
};

void random_search(const Space& space, const Scorer& scorer, std::span<const Principle> filters,
                   const SearchOptions& o, SearchTrace& trace) {
  ProposalStream stream(space, o.seed);
  TraceBuilder builder(trace);
  const unsigned threads = o.threads > 0 ? static_cast<unsigned>(o.threads) : default_threads();
  while (trace.evaluated.size() < o.budget) {
    // Gather the next batch of admitted proposals, then score it in parallel.
    std::vector<Architecture> batch;
    const std::size_t want = o.budget - trace.evaluated.size();
    while (batch.size() < want) {
      auto a = stream.next();
      if (!a) {
        trace.exhausted = true;
        break;
      }
      if (passes_filters(space, *a, filters)) {
        batch.push_back(std::move(*a));
      } else {
        trace.discarded.push_back(space.id_of(*a));
      }
    }
    std::vector<double> scores(batch.size());
    parallel_for(batch.size(), threads, [&](std::size_t i) { scores[i] = scorer(batch[i]); });
    for (std::size_t i = 0; i < batch.size(); ++i) builder.add(space.id_of(batch[i]), scores[i]);
    if (trace.exhausted) break;
  }
}

void evolution_search(const Space& space, const Scorer& scorer, std::span<const Principle> filters,
                      const SearchOptions& o, SearchTrace& trace) {
  ProposalStream stream(space, o.seed);
  Rng rng(mix64(o.seed ^ 0xe7011ULL));
  TraceBuilder builder(trace);
  std::deque<std::pair<Architecture, double>> population;
  const std::size_t pop_size = std::min(std::max<std::size_t>(o.population, 1), o.budget);
  while (population.size() < pop_size) {
    auto a = stream.next();
    if (!a) {
      trace.exhausted = true;
      return;
    }
    if (!passes_filters(space, *a, filters)) {
      trace.discarded.push_back(space.id_of(*a));
      continue;
    }
    const double s = scorer(*a);
    builder.add(space.id_of(*a), s);
    population.emplace_back(std::move(*a), s);
  }
  std::size_t misses = 0;
  while (trace.evaluated.size() < o.budget) {
    std::size_t parent = rng.below(population.size());
    for (std::size_t t = 1; t < o.tournament; ++t) {
      const std::size_t c = rng.below(population.size());
      if (population[c].second > population[parent].second) parent = c;
    }
    const auto neighbors = space.one_edit_neighbors(population[parent].first);
    if (neighbors.empty()) {
      if (++misses >= kMaxConsecutiveMisses) break;
      continue;
    }
    Architecture child = neighbors[rng.below(neighbors.size())].arch;
    if (!passes_filters(space, child, filters)) {
      trace.discarded.push_back(space.id_of(child));
      if (++misses >= kMaxConsecutiveMisses) {
        trace.exhausted = true;
        break;
      }
      continue;
    }
    misses = 0;
    const double s = scorer(child);
    builder.add(space.id_of(child), s);
    population.emplace_back(std::move(child), s);
    population.pop_front();
  }
}

}  // namespace

SearchTrace filtered_search(const Space& space, const Scorer& scorer, std::span<const Principle> principles,
                            const SearchOptions& options) {
  if (options.budget < 1) throw Error(ErrorCode::invalid_argument, "budget must be at least 1");
  if (options.per_arch_hours < 0.0) throw Error(ErrorCode::invalid_argument, "per-architecture hours must be >= 0");
  SearchTrace trace;
  trace.strategy = options.strategy;
  trace.seed = options.seed;
  trace.budget = options.budget;
  trace.per_arch_hours = options.per_arch_hours;
  for (const auto& p : principles)
    if (p.mode == PrincipleMode::filter) trace.principles.push_back(p.id);
  if (options.strategy == SearchStrategy::random) {
    random_search(space, scorer, principles, options, trace);
  } else {
    evolution_search(space, scorer, principles, options, trace);
  }
  if (trace.evaluated.empty()) {
    throw Error(ErrorCode::exhausted_space, "principle filters rejected every proposed architecture (" +
                                                std::to_string(trace.discarded.size()) + " discarded)");
  }
  return trace;
}

std::string search_trace_to_json(const SearchTrace& t) {
  json doc;
  doc["version"] = 1;
  doc["kind"] = "search_trace";
  doc["strategy"] = to_string(t.strategy);
  doc["seed"] = t.seed;
  doc["budget"] = t.budget;
  doc["per_arch_hours"] = t.per_arch_hours;
  doc["principles"] = t.principles;
  doc["evaluated_count"] = t.evaluated.size();
  doc["discarded_count"] = t.discarded.size();
  doc["estimated_cost"] = t.estimated_cost();
  doc["best"] = {{"arch_id", t.best_id}, {"score", t.best_score}};
  doc["exhausted"] = t.exhausted;
  json ev = json::array();
  for (const auto& e : t.evaluated) ev.push_back(json::array({e.arch_id, e.score}));
  doc["evaluated"] = std::move(ev);
  doc["best_so_far"] = t.best_so_far;
  doc["discarded"] = t.discarded;
  return doc.dump() + "\n";
}

SearchTrace search_trace_from_json(std::string_view text) {
  SearchTrace t;
  try {
    const json doc = json::parse(text);
    if (doc.at("version").get<int>() != 1 || doc.at("kind").get<std::string>() != "search_trace") {
      throw Error(ErrorCode::corrupt_file, "not a version 1 search trace");
    }
    t.strategy = search_strategy_from_string(doc.at("strategy").get<std::string>());
    t.seed = doc.at("seed").get<std::uint64_t>();
    t.budget = doc.at("budget").get<std::size_t>();
    t.per_arch_hours = doc.at("per_arch_hours").get<double>();
    t.principles = doc.at("principles").get<std::vector<std::string>>();
    for (const auto& e : doc.at("evaluated")) t.evaluated.push_back({e.at(0).get<ArchId>(), e.at(1).get<double>()});
    t.best_so_far = doc.at("best_so_far").get<std::vector<double>>();
    t.discarded = doc.at("discarded").get<std::vector<ArchId>>();
    t.best_id = doc.at("best").at("arch_id").get<ArchId>();
    t.best_score = doc.at("best").at("score").get<double>();
    t.exhausted = doc.at("exhausted").get<bool>();
  } catch (const json::exception& e) {
    throw Error(ErrorCode::corrupt_file, std::string("search trace: ") + e.what());
  }
  if (t.best_so_far.size() != t.evaluated.size()) throw Error(ErrorCode::corrupt_file, "search trace: length mismatch");
  return t;
}

std::string search_table(std::span<const std::pair<std::string, SearchTrace>> runs) {
  std::string out;
  char line[160];
  std::snprintf(line, sizeof line, "%-24s %10s %14s %12s\n", "run", "archs", "est_hours", "best_score");
  out += line;
  for (const auto& [name, t] : runs) {
    std::snprintf(line, sizeof line, "%-24s %10zu %14.1f %12.6f\n", name.c_str(), t.evaluated.size(),
                  t.estimated_cost(), t.best_score);
    out += line;
  }
  return out;
}

}  // namespace archx
