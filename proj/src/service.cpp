// SPDX-License-Identifier: Apache-2.0
#include "archx/service.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <filesystem>
#include <limits>
#include <regex>

#include "archx/error.hpp"

namespace archx {

using json = nlohmann::ordered_json;
namespace fs = std::filesystem;

// ---------------------------------------------------------------------------
// Pipeline

DistanceBackend distance_backend_from_string(std::string_view s) {
  if (s == "apsp" || s == "exact_apsp") return DistanceBackend::exact_apsp;
  if (s == "astar" || s == "exact_astar") return DistanceBackend::exact_astar;
  if (s == "bipartite" || s == "approx_bipartite") return DistanceBackend::approx_bipartite;
  throw Error(ErrorCode::invalid_argument, "unknown distance backend '" + std::string(s) + "'");
}

DistanceMatrix compute_distances(const Space& space, std::span<const ArchId> ids, DistanceBackend backend,
                                 unsigned threads) {
  if (backend == DistanceBackend::exact_apsp) {
    const auto graph = ArchGraph::build(space, ids);
    return apsp_sampled(graph, threads);
  }
  std::vector<Architecture> archs;
  archs.reserve(ids.size());
  for (ArchId id : ids) archs.push_back(space.decode(id));
  return pairwise_matrix(space, archs, backend, threads);
}

void build_session_dir(const std::string& dir, const PipelineOptions& o) {
  fs::create_directories(dir);
  const SpaceSpec spec = resolve_space(o.space);
  const Space space(spec);
  const auto ids = sample_ids(space, o.sample, o.seed);
  const auto key = CacheKey::of(spec, ids);
  const auto dm = compute_distances(space, ids, o.backend, o.threads);

  std::optional<MetricTable> metrics;
  if (o.metrics_csv) {
    metrics = ingest_metrics(*o.metrics_csv, space);
  } else if (o.surrogate_seed) {
    SurrogateModel model;
    model.seed = *o.surrogate_seed;
    metrics = surrogate_table(space, dm.ids(), model);
  }
  std::vector<double> acc;
  if (metrics) acc = metrics->accuracy_for(dm.ids());

  auto tree = build_hierarchy(dm, o.hierarchy, acc);
  tree.key = key;

  const fs::path d(dir);
  write_file_locked((d / session_files::space).string(), spec.serialize());
  save_distances((d / session_files::distances).string(), dm, key);
  write_file_locked((d / session_files::tree).string(), tree_to_json(tree));
  if (metrics) {
    write_file_locked((d / session_files::metrics).string(), metrics_to_csv(*metrics));
    nlohmann::json meta{{"source", to_string(metrics->source)}};
    if (metrics->source == MetricSource::surrogate) meta["seed"] = *o.surrogate_seed;
    write_file_locked((d / session_files::metrics_meta).string(), meta.dump());
  }
}

// ---------------------------------------------------------------------------
// Session

std::unique_ptr<Session> Session::load(const std::string& dir) {
  const fs::path d(dir);
  auto s = std::make_unique<Session>();
  s->dir = dir;
  const SpaceSpec spec = SpaceSpec::parse(read_file_locked((d / session_files::space).string()));
  s->space = std::make_unique<Space>(spec);
  auto stored = load_distances((d / session_files::distances).string());
  const auto key = CacheKey::of(spec, stored.matrix.ids());
  check_cache_key(key, stored.key, "distance matrix");
  s->dm = std::move(stored.matrix);
  s->tree = tree_from_json(read_file_locked((d / session_files::tree).string()), &key);
  if (s->tree.ids != s->dm.ids()) throw Error(ErrorCode::stale_cache, "cluster tree ids differ from the distance matrix");
  if (fs::exists(d / session_files::metrics)) {
    s->metrics = ingest_metrics((d / session_files::metrics).string(), *s->space);
    if (fs::exists(d / session_files::metrics_meta)) {
      const auto meta = nlohmann::json::parse(read_file_locked((d / session_files::metrics_meta).string()), nullptr, false);
      if (meta.is_object() && meta.value("source", "") == "surrogate") s->metrics->source = MetricSource::surrogate;
    }
    s->accuracy = s->metrics->accuracy_for(s->dm.ids());
    for (const auto& r : s->metrics->rows()) s->sorted_accuracy.push_back(r.accuracy);
    std::sort(s->sorted_accuracy.begin(), s->sorted_accuracy.end());
  }
  return s;
}

std::optional<double> Session::accuracy_quantile(ArchId id) const {
  if (!metrics) return std::nullopt;
  const auto* r = metrics->find(id);
  if (!r) return std::nullopt;
  const auto below = std::lower_bound(sorted_accuracy.begin(), sorted_accuracy.end(), r->accuracy);
  return static_cast<double>(below - sorted_accuracy.begin()) / static_cast<double>(sorted_accuracy.size());
}

std::optional<double> Session::top1_threshold() const {
  if (sorted_accuracy.empty()) return std::nullopt;
  const double n = static_cast<double>(sorted_accuracy.size());
  // Quantiles only rise at distinct values, so scan those.
  for (std::size_t i = 0; i < sorted_accuracy.size(); ++i) {
    if (i > 0 && sorted_accuracy[i] == sorted_accuracy[i - 1]) continue;
    if (static_cast<double>(i) / n >= 0.99) return sorted_accuracy[i];
  }
  return std::nullopt;
}

json op_ratios(const Space& space, const Architecture& a) {
  json out = json::object();
  std::vector<int> counts(space.op_count(), 0);
  for (OpId o : a.ops) ++counts[o];
  for (std::size_t o = 0; o < counts.size(); ++o) {
    if (counts[o] == 0) continue;
    out[space.op(static_cast<OpId>(o)).name] = static_cast<double>(counts[o]) / static_cast<double>(a.ops.size());
  }
  return out;
}

json structure_json(const Space& space, const Architecture& a) {
  json nodes = json::array();
  json edges = json::array();
  const int last = space.node_count() - 1;
  if (space.family() == SpaceFamily::op_slot) {
    for (int v = 0; v <= last; ++v) {
      nodes.push_back({{"id", v}, {"label", v == 0 ? "input" : v == last ? "output" : "node"}});
    }
    const auto& slots = space.slot_edges();
    for (std::size_t s = 0; s < slots.size(); ++s) {
      if (space.is_none(a.ops[s])) continue;
      edges.push_back({{"from", slots[s].first}, {"to", slots[s].second}, {"op", space.op(a.ops[s]).name}});
    }
  } else {
    for (int v = 0; v <= last; ++v) {
      std::string label = v == 0 ? "input" : v == last ? "output" : space.op(a.ops[static_cast<std::size_t>(v - 1)]).name;
      nodes.push_back({{"id", v}, {"label", label}});
    }
    for (int bit = 0; bit < space.edge_slots(); ++bit) {
      if (!(a.edges >> bit & 1u)) continue;
      const auto [f, t] = space.edge_endpoints(bit);
      const bool dead = (f > 0 && space.is_none(a.ops[static_cast<std::size_t>(f - 1)])) ||
                        (t < last && space.is_none(a.ops[static_cast<std::size_t>(t - 1)]));
      if (!dead) edges.push_back({{"from", f}, {"to", t}});
    }
  }
  return {{"nodes", std::move(nodes)}, {"edges", std::move(edges)}};
}

bool point_in_polygon(const Point& p, std::span<const Point> poly) {
  bool inside = false;
  for (std::size_t i = 0, j = poly.size() - 1; i < poly.size(); j = i++) {
    const auto& a = poly[i];
    const auto& b = poly[j];
    if ((a[1] > p[1]) != (b[1] > p[1]) && p[0] < (b[0] - a[0]) * (p[1] - a[1]) / (b[1] - a[1]) + a[0]) {
      inside = !inside;
    }
  }
  return inside;
}

// ---------------------------------------------------------------------------
// API

namespace {

struct HttpError {
  int status;
  std::string code;
  std::string message;
};

[[noreturn]] void http_fail(int status, std::string code, std::string message) {
  throw HttpError{status, std::move(code), std::move(message)};
}

ApiResponse error_response(int status, const std::string& code, const std::string& message) {
  json j;
  j["error"] = {{"status", status}, {"code", code}, {"message", message}};
  return {status, j.dump()};
}

ApiResponse ok(const json& j) { return {200, j.dump()}; }

std::optional<std::string> param(const QueryParams& q, const std::string& name) {
  const auto it = q.find(name);
  if (it == q.end()) return std::nullopt;
  return it->second;
}

long long parse_int(const std::string& text, const std::string& name) {
  long long v = 0;
  const auto [p, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
  if (text.empty() || ec != std::errc() || p != text.data() + text.size()) {
    http_fail(400, "malformed", "parameter '" + name + "' must be an integer");
  }
  return v;
}

json parse_body(std::string_view body) {
  json j = json::parse(body, nullptr, false);
  if (j.is_discarded() || !j.is_object()) http_fail(400, "malformed", "request body must be a JSON object");
  return j;
}

const char* kAttributes[] = {"accuracy", "params", "flops", "train_time"};

std::optional<double> attribute(const MetricRow* r, std::string_view name) {
  if (!r) return std::nullopt;
  if (name == "accuracy") return r->accuracy;
  if (name == "params") return r->params;
  if (name == "flops") return r->flops;
  if (name == "train_time") return r->train_time;
  return std::nullopt;
}

json nullable(std::optional<double> v) { return v ? json(*v) : json(nullptr); }

json histogram(const std::vector<double>& values, int bins) {
  if (values.empty()) return nullptr;
  const auto [lo_it, hi_it] = std::minmax_element(values.begin(), values.end());
  const double lo = *lo_it, hi = *hi_it;
  std::vector<std::size_t> counts(static_cast<std::size_t>(bins), 0);
  for (double v : values) {
    int b = hi > lo ? static_cast<int>((v - lo) / (hi - lo) * bins) : 0;
    ++counts[static_cast<std::size_t>(std::clamp(b, 0, bins - 1))];
  }
  return {{"min", lo}, {"max", hi}, {"counts", counts}};
}

}  // namespace

ExplorerApi::ExplorerApi(std::unique_ptr<Session> session) : session_(std::move(session)) {
  if (!session_) return;
  const fs::path state = fs::path(session_->dir) / session_files::state;
  if (!fs::exists(state)) return;
  try {
    const json j = json::parse(read_file_locked(state.string()));
    const int focus = j.at("focus").get<int>();
    if (focus >= 0 && static_cast<std::size_t>(focus) < session_->tree.nodes.size()) focus_ = focus;
    for (const auto& id : j.at("selection")) selection_.insert(id.get<ArchId>());
    filters_ = j.at("filters");
  } catch (const std::exception&) {
    focus_ = 0;
    selection_.clear();
    filters_ = json::object();
  }
}

void ExplorerApi::snapshot() {
  if (!session_ || session_->dir.empty()) return;
  json j;
  j["version"] = 1;
  j["focus"] = focus_;
  j["selection"] = selection_;
  j["filters"] = filters_;
  try {
    write_file_locked((fs::path(session_->dir) / session_files::state).string(), j.dump(2) + "\n");
  } catch (const Error&) {
    // A read-only session directory still serves requests.
  }
}

const LayoutResult& ExplorerApi::layout_for(int focus) {
  if (const auto it = layouts_.find(focus); it != layouts_.end()) return it->second;
  const auto& node = session_->tree.nodes.at(static_cast<std::size_t>(focus));
  const LayoutResult* parent = node.parent >= 0 ? &layout_for(node.parent) : nullptr;
  auto result = layout_view(session_->tree, session_->dm, session_->accuracy, focus, session_->layout_options, parent);
  return layouts_.emplace(focus, std::move(result)).first->second;
}

std::set<ArchId> ExplorerApi::view_ids() {
  std::set<ArchId> ids;
  for (const auto& c : layout_for(focus_).clusters)
    for (const auto& cell : c.cells) ids.insert(cell.arch_id);
  return ids;
}

std::set<ArchId> ExplorerApi::filtered(const std::set<ArchId>& ids) const {
  std::set<ArchId> out;
  for (ArchId id : ids) {
    const MetricRow* row = session_->metrics ? session_->metrics->find(id) : nullptr;
    bool keep = true;
    for (const auto& [name, range] : filters_.items()) {
      const auto v = attribute(row, name);
      keep = keep && v && *v >= range[0].get<double>() && *v <= range[1].get<double>();
    }
    if (keep) out.insert(id);
  }
  return out;
}

json ExplorerApi::selection_json() {
  const auto visible = filtered(selection_);
  json j;
  j["focus"] = focus_;
  j["selection"] = selection_;
  j["count"] = selection_.size();
  j["visible"] = visible;
  return j;
}

ApiResponse ExplorerApi::handle(std::string_view method, std::string_view path, const QueryParams& query,
                                std::string_view body) {
  std::lock_guard lock(mutex_);
  try {
    const bool get = method == "GET";
    const bool post = method == "POST";
    const bool known = path == "/api/space" || path == "/api/layout" || path == "/api/select" ||
                       path == "/api/compare" || path == "/api/filter" || path == "/api/search/trace";
    if (!known) http_fail(404, "not_found", "no endpoint " + std::string(path));
    if (!session_) http_fail(409, "no_session", "no active session");
    if (get && path == "/api/space") return get_space();
    if (get && path == "/api/layout") return get_layout(query);
    if (post && path == "/api/select") return post_select(body);
    if (get && path == "/api/compare") return get_compare(query);
    if (post && path == "/api/filter") return post_filter(body);
    if (get && path == "/api/search/trace") return get_trace(query);
    http_fail(405, "method_not_allowed", std::string(method) + " not allowed on " + std::string(path));
  } catch (const HttpError& e) {
    return error_response(e.status, e.code, e.message);
  } catch (const Error& e) {
    int status = 500;
    switch (e.code()) {
      case ErrorCode::invalid_argument:
      case ErrorCode::parse_error:
        status = 400;
        break;
      case ErrorCode::unknown_arch:
      case ErrorCode::out_of_range:
        status = 404;
        break;
      default:
        break;
    }
    return error_response(status, std::string(to_string(e.code())), e.what());
  } catch (const std::exception& e) {
    return error_response(500, "internal", e.what());
  }
}

ApiResponse ExplorerApi::get_space() {
  const auto& s = *session_;
  json j;
  j["version"] = 1;
  const auto& spec = s.space->spec();
  json sp;
  sp["family"] = spec.family == SpaceFamily::op_slot ? "op_slot" : "topology";
  sp["positions"] = s.space->positions();
  sp["nodes"] = s.space->node_count();
  const auto count = s.space->count();
  sp["size"] = count ? json(*count) : json(nullptr);
  sp["deletion_cost"] = s.space->deletion_cost();
  json ops = json::array();
  for (const auto& op : spec.ops) ops.push_back({{"id", op.id}, {"name", op.name}, {"kind", to_string(op.kind)}});
  sp["ops"] = std::move(ops);
  j["space"] = std::move(sp);
  j["sample_size"] = s.dm.size();
  j["backend"] = to_string(s.dm.backend());
  j["cache_key"] = s.tree.key.to_json();
  j["tree"] = {{"depth", s.tree.depth()}, {"nodes", s.tree.nodes.size()}, {"root", 0}};
  if (!s.metrics) {
    j["metrics"] = nullptr;
  } else {
    json m;
    m["source"] = to_string(s.metrics->source);
    m["count"] = s.metrics->size();
    m["top1_threshold"] = nullable(s.top1_threshold());
    json hist = json::object();
    for (const char* name : kAttributes) {
      std::vector<double> values;
      for (const auto& r : s.metrics->rows()) values.push_back(*attribute(&r, name));
      hist[name] = histogram(values, 20);
    }
    m["histograms"] = std::move(hist);
    j["metrics"] = std::move(m);
  }
  return ok(j);
}

ApiResponse ExplorerApi::get_layout(const QueryParams& q) {
  int focus = 0;
  if (const auto c = param(q, "cluster")) {
    const long long v = parse_int(*c, "cluster");
    if (v < 0 || static_cast<std::size_t>(v) >= session_->tree.nodes.size()) {
      http_fail(404, "unknown_cluster", "no cluster " + *c);
    }
    focus = static_cast<int>(v);
  }
  const auto& layout = layout_for(focus);
  if (const auto l = param(q, "level")) {
    if (parse_int(*l, "level") != layout.level) {
      http_fail(404, "unknown_level", "cluster " + std::to_string(focus) + " is shown at level " +
                                          std::to_string(layout.level) + ", not " + *l);
    }
  }
  if (focus_ != focus) {
    focus_ = focus;
    const auto ids = view_ids();
    std::erase_if(selection_, [&](ArchId id) { return !ids.count(id); });
    snapshot();
  }
  const auto& space = *session_->space;
  json j = json::parse(layout_to_json(layout));
  j["parent"] = session_->tree.nodes[static_cast<std::size_t>(focus)].parent;
  for (auto& cv : j["clusters"]) {
    const auto& node = session_->tree.nodes.at(cv["id"].get<std::size_t>());
    cv["level"] = node.level;
    cv["member_count"] = node.members.size();
    cv["has_children"] = !node.children.empty();
    cv["mean_accuracy"] = nullable(node.mean_accuracy);
    for (auto& cell : cv["cells"]) {
      const ArchId id = cell["arch_id"].get<ArchId>();
      const MetricRow* row = session_->metrics ? session_->metrics->find(id) : nullptr;
      const auto qv = session_->accuracy_quantile(id);
      cell["accuracy"] = nullable(attribute(row, "accuracy"));
      cell["quantile"] = nullable(qv);
      cell["top1"] = qv ? json(*qv >= 0.99) : json(false);
    }
    for (auto& g : cv["glyphs"]) {
      const Architecture a = space.decode(g["arch_id"].get<ArchId>());
      g["op_ratios"] = op_ratios(space, a);
      g["structure"] = structure_json(space, a);
    }
  }
  return ok(j);
}

ApiResponse ExplorerApi::post_select(std::string_view body) {
  const json req = parse_body(body);
  const int forms = static_cast<int>(req.contains("ids")) + static_cast<int>(req.contains("lasso")) +
                    static_cast<int>(req.contains("cluster"));
  if (forms != 1) http_fail(400, "malformed", "give exactly one of 'ids', 'lasso' or 'cluster'");
  const auto& layout = layout_for(focus_);
  const auto view = view_ids();
  std::set<ArchId> chosen;
  if (req.contains("ids")) {
    const auto& ids = req["ids"];
    if (!ids.is_array()) http_fail(400, "malformed", "'ids' must be an array");
    for (const auto& id : ids) {
      if (!id.is_number_unsigned()) http_fail(400, "malformed", "ids must be non-negative integers");
      if (view.count(id.get<ArchId>())) chosen.insert(id.get<ArchId>());
    }
  } else if (req.contains("lasso")) {
    const auto& pts = req["lasso"];
    std::vector<Point> poly;
    if (!pts.is_array()) http_fail(400, "malformed", "'lasso' must be an array of [x, y] points");
    for (const auto& p : pts) {
      if (!p.is_array() || p.size() != 2 || !p[0].is_number() || !p[1].is_number()) {
        http_fail(400, "malformed", "'lasso' must be an array of [x, y] points");
      }
      poly.push_back({p[0].get<double>(), p[1].get<double>()});
    }
    if (poly.size() < 3) http_fail(400, "malformed", "a lasso needs at least 3 points");
    for (const auto& cv : layout.clusters)
      for (const auto& c : cv.cells)
        if (point_in_polygon({c.x, c.y}, poly)) chosen.insert(c.arch_id);
  } else {
    if (!req["cluster"].is_number_integer()) http_fail(400, "malformed", "'cluster' must be an integer");
    const int id = req["cluster"].get<int>();
    const ClusterView* cv = nullptr;
    for (const auto& c : layout.clusters)
      if (c.id == id) cv = &c;
    if (!cv) http_fail(404, "unknown_cluster", "cluster " + std::to_string(id) + " is not in the current view");
    for (const auto& c : cv->cells) chosen.insert(c.arch_id);
  }
  selection_ = std::move(chosen);
  snapshot();
  return ok(selection_json());
}

ApiResponse ExplorerApi::get_compare(const QueryParams& q) {
  std::vector<ArchId> ids;
  const auto [lo, hi] = q.equal_range("ids");
  if (lo == hi) http_fail(400, "malformed", "missing 'ids'");
  for (auto it = lo; it != hi; ++it) {
    std::string_view text = it->second;
    while (!text.empty()) {
      const auto comma = text.find(',');
      const std::string item(text.substr(0, comma));
      text = comma == std::string_view::npos ? std::string_view{} : text.substr(comma + 1);
      if (item.empty()) continue;
      const long long v = parse_int(item, "ids");
      if (v < 0) http_fail(400, "malformed", "ids must be non-negative");
      ids.push_back(static_cast<ArchId>(v));
    }
  }
  if (ids.empty()) http_fail(400, "malformed", "empty 'ids'");
  const auto& space = *session_->space;
  json rows = json::array(), vectors = json::array(), structures = json::array();
  for (ArchId id : ids) {
    const auto arch = parse_arch_string(space, std::to_string(id));
    if (!arch) http_fail(404, "unknown_arch", "no architecture " + std::to_string(id));
    const MetricRow* row = session_->metrics ? session_->metrics->find(id) : nullptr;
    json r;
    r["arch_id"] = id;
    json vec = json::array();
    for (const char* name : kAttributes) {
      r[name] = nullable(attribute(row, name));
      vec.push_back(r[name]);
    }
    json extras = json::object();
    if (row)
      for (std::size_t e = 0; e < row->extras.size(); ++e) extras[session_->metrics->extra_columns[e]] = row->extras[e];
    r["extras"] = std::move(extras);
    r["op_ratios"] = op_ratios(space, *arch);
    rows.push_back(std::move(r));
    vectors.push_back(std::move(vec));
    structures.push_back({{"arch_id", id}, {"structure", structure_json(space, *arch)}});
  }
  json j;
  j["attributes"] = kAttributes;
  j["rows"] = std::move(rows);
  j["vectors"] = std::move(vectors);
  j["structures"] = std::move(structures);
  return ok(j);
}

ApiResponse ExplorerApi::post_filter(std::string_view body) {
  const json req = parse_body(body);
  json ranges = req.contains("ranges") ? req["ranges"] : json::object();
  if (!ranges.is_object()) http_fail(400, "malformed", "'ranges' must be an object");
  for (const auto& [name, range] : ranges.items()) {
    if (std::find(std::begin(kAttributes), std::end(kAttributes), name) == std::end(kAttributes)) {
      http_fail(400, "malformed", "unknown attribute '" + name + "'");
    }
    if (!range.is_array() || range.size() != 2 || !range[0].is_number() || !range[1].is_number() ||
        range[0].get<double>() > range[1].get<double>()) {
      http_fail(400, "malformed", "range for '" + name + "' must be [low, high]");
    }
  }
  filters_ = std::move(ranges);
  snapshot();
  const auto ids = filtered(view_ids());
  json j = selection_json();
  j["filters"] = filters_;
  j["ids"] = ids;
  j["surviving"] = ids.size();
  return ok(j);
}

ApiResponse ExplorerApi::get_trace(const QueryParams& q) {
  const auto run = param(q, "run");
  if (!run || run->empty()) http_fail(400, "malformed", "missing 'run'");
  static const std::regex safe("[A-Za-z0-9_.-]+");
  if (!std::regex_match(*run, safe) || *run == "." || *run == "..") http_fail(400, "malformed", "invalid run name");
  const fs::path file = fs::path(session_->dir) / session_files::traces / (*run + ".json");
  if (!fs::exists(file)) http_fail(404, "unknown_run", "no search run '" + *run + "'");
  const auto trace = search_trace_from_json(read_file_locked(file.string()));
  json j = json::parse(search_trace_to_json(trace));
  j["run"] = *run;
  return ok(j);
}

}  // namespace archx
