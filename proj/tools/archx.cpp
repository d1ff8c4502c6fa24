// SPDX-License-Identifier: Apache-2.0
// Command line front end for the batch pipeline and the explorer service.
#include <CLI11.hpp>

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <sstream>

#include <json.hpp>

#include "archx/cluster.hpp"
#include "archx/data_io.hpp"
#include "archx/error.hpp"
#include "archx/layout.hpp"
#include "archx/principles.hpp"
#include "archx/service.hpp"

using namespace archx;
using json = nlohmann::ordered_json;
namespace fs = std::filesystem;

namespace {

int fail(const std::string& code, const std::string& message, int status = 1) {
  json j;
  j["error"] = {{"code", code}, {"message", message}};
  std::cerr << j.dump() << "\n";
  return status;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

struct MetricArgs {
  std::string metrics;
  std::optional<std::uint64_t> surrogate;

  void add(CLI::App* app) {
    auto* m = app->add_option("--metrics", metrics, "Metrics CSV (arch_id,accuracy,params,flops,train_time)");
    auto* s = app->add_option("--surrogate", surrogate, "Use the surrogate scorer with this seed");
    m->excludes(s);
  }

  std::optional<MetricTable> load(const Space& space, std::span<const ArchId> ids) const {
    if (!metrics.empty()) return ingest_metrics(metrics, space);
    if (surrogate) {
      SurrogateModel model;
      model.seed = *surrogate;
      return surrogate_table(space, ids, model);
    }
    return std::nullopt;
  }
};

std::vector<double> accuracy_of(const std::optional<MetricTable>& m, std::span<const ArchId> ids) {
  return m ? m->accuracy_for(ids) : std::vector<double>{};
}

// ---------------------------------------------------------------------------

struct DistancesCmd {
  std::string space = "nas201", out, backend = "apsp";
  std::size_t sample = 100;
  std::uint64_t seed = 0;
  unsigned threads = 0;

  void add(CLI::App& app) {
    auto* c = app.add_subcommand("distances", "Sample a space and write its distance cache");
    c->add_option("--space", space, "Builtin space (nas201, toy:SxO, nas101:N:E) or spec file")->capture_default_str();
    c->add_option("--sample", sample, "Number of sampled architectures")->capture_default_str();
    c->add_option("--seed", seed, "Sampling seed")->capture_default_str();
    c->add_option("--backend", backend, "apsp, astar or bipartite")->capture_default_str();
    c->add_option("--threads", threads, "Worker threads (0: all cores)");
    c->add_option("--out", out, "Output file")->required();
    c->callback([this] { run(); });
  }

  void run() const {
    const auto t0 = std::chrono::steady_clock::now();
    const SpaceSpec spec = resolve_space(space);
    const Space sp(spec);
    const auto ids = sample_ids(sp, sample, seed);
    const auto b = distance_backend_from_string(backend);
    json info;
    info["backend"] = to_string(b);
    info["sample"] = ids.size();
    DistanceMatrix dm;
    if (b == DistanceBackend::exact_apsp) {
      const auto tg = std::chrono::steady_clock::now();
      const auto graph = ArchGraph::build(sp, ids);
      info["vertices"] = graph.vertex_count();
      info["edges"] = graph.edge_count();
      info["graph_seconds"] = seconds_since(tg);
      const auto ta = std::chrono::steady_clock::now();
      dm = apsp_sampled(graph, threads);
      info["apsp_seconds"] = seconds_since(ta);
    } else {
      dm = compute_distances(sp, ids, b, threads);
    }
    save_distances(out, dm, CacheKey::of(spec, ids));
    info["seconds"] = seconds_since(t0);
    info["out"] = out;
    std::cout << info.dump() << "\n";
  }
};

struct ClusterCmd {
  std::string dist, out, space;
  MetricArgs metric;
  HierarchyOptions h;

  void add(CLI::App& app) {
    auto* c = app.add_subcommand("cluster", "Build the cluster hierarchy from a distance cache");
    c->add_option("--dist", dist, "Distance cache file")->required();
    c->add_option("--out", out, "Cluster tree JSON")->required();
    c->add_option("--max-depth", h.max_depth, "Hierarchy depth")->capture_default_str();
    c->add_option("--min-cluster", h.min_cluster, "Smallest cluster that is split")->capture_default_str();
    c->add_option("--k-min", h.k_min)->capture_default_str();
    c->add_option("--k-max", h.k_max)->capture_default_str();
    c->add_option("--seed", h.seed, "Clustering seed")->capture_default_str();
    c->add_option("--space", space, "Space (needed with metrics)");
    metric.add(c);
    c->callback([this] { run(); });
  }

  void run() const {
    const auto t0 = std::chrono::steady_clock::now();
    auto stored = load_distances(dist);
    std::optional<MetricTable> m;
    if (!metric.metrics.empty() || metric.surrogate) {
      if (space.empty()) throw Error(ErrorCode::invalid_argument, "--space is required with metrics");
      const SpaceSpec spec = resolve_space(space);
      const auto key = CacheKey::of(spec, stored.matrix.ids());
      check_cache_key(key, stored.key, "distance matrix");
      m = metric.load(Space(spec), stored.matrix.ids());
    }
    auto tree = build_hierarchy(stored.matrix, h, accuracy_of(m, stored.matrix.ids()));
    tree.key = stored.key;
    write_file_locked(out, tree_to_json(tree));
    json info;
    info["nodes"] = tree.nodes.size();
    info["depth"] = tree.depth();
    info["top_k"] = tree.root().children.size();
    info["seconds"] = seconds_since(t0);
    info["out"] = out;
    std::cout << info.dump() << "\n";
  }
};

struct LayoutCmd {
  std::string tree_file, dist, out_dir, space;
  MetricArgs metric;
  LayoutOptions lo;

  void add(CLI::App& app) {
    auto* c = app.add_subcommand("layout", "Lay out every navigation level of a cluster tree");
    c->add_option("--tree", tree_file, "Cluster tree JSON")->required();
    c->add_option("--dist", dist, "Distance cache file")->required();
    c->add_option("--out-dir", out_dir, "Directory for layout-<cluster>.json files")->required();
    c->add_option("--budget", lo.budget, "Architectures shown per view")->capture_default_str();
    c->add_option("--space", space, "Space (needed with metrics)");
    metric.add(c);
    c->callback([this] { run(); });
  }

  void run() const {
    const auto t0 = std::chrono::steady_clock::now();
    const auto stored = load_distances(dist);
    const auto tree = tree_from_json(read_file_locked(tree_file), &stored.key);
    std::optional<MetricTable> m;
    if (!metric.metrics.empty() || metric.surrogate) {
      if (space.empty()) throw Error(ErrorCode::invalid_argument, "--space is required with metrics");
      m = metric.load(Space(resolve_space(space)), stored.matrix.ids());
    }
    const auto acc = accuracy_of(m, stored.matrix.ids());
    fs::create_directories(out_dir);
    std::map<int, LayoutResult> done;
    json files = json::array();
    // Parents first, so each zoom keeps the order of the view above it.
    for (const auto& node : tree.nodes) {
      if (node.children.empty() && node.id != 0) continue;
      const LayoutResult* parent = node.parent >= 0 ? &done.at(node.parent) : nullptr;
      auto view = layout_view(tree, stored.matrix, acc, node.id, lo, parent);
      const auto path = (fs::path(out_dir) / ("layout-" + std::to_string(node.id) + ".json")).string();
      write_file_locked(path, layout_to_json(view));
      files.push_back(path);
      done.emplace(node.id, std::move(view));
    }
    json info;
    info["files"] = std::move(files);
    info["seconds"] = seconds_since(t0);
    std::cout << info.dump() << "\n";
  }
};

struct SearchCmd {
  std::string space = "nas201", principles, strategy = "random", out_dir = "search";
  MetricArgs metric;
  std::size_t budget = 400;
  std::vector<std::uint64_t> seeds{1};
  double hours = 1.0;

  void add(CLI::App& app) {
    auto* c = app.add_subcommand("search", "Run principle-filtered and unfiltered searches");
    c->add_option("--space", space)->capture_default_str();
    c->add_option("--principles", principles, "Principle config JSON (default: P1-P8)");
    c->add_option("--strategy", strategy, "random or evolution")->capture_default_str();
    c->add_option("--budget", budget, "Evaluations per run")->capture_default_str();
    c->add_option("--seeds", seeds, "Seeds, comma separated")->delimiter(',');
    c->add_option("--hours", hours, "Training hours per evaluated architecture")->capture_default_str();
    c->add_option("--out-dir", out_dir, "Directory for traces and the table")->capture_default_str();
    metric.add(c);
    c->callback([this] { run(); });
  }

  void run() const {
    const Space sp(resolve_space(space));
    if (metric.metrics.empty() && !metric.surrogate) {
      throw Error(ErrorCode::invalid_argument, "give --metrics or --surrogate");
    }
    const auto set = principles.empty() ? builtin_principles() : load_principles(principles);
    const std::string tag = std::string(search_strategy_from_string(strategy) == SearchStrategy::random ? "random"
                                                                                                        : "evolution");
    fs::create_directories(fs::path(out_dir) / session_files::traces);
    std::vector<std::pair<std::string, SearchTrace>> runs;
    json summary = json::array();
    for (std::uint64_t seed : seeds) {
      std::optional<MetricTable> table;
      Scorer scorer;
      std::vector<Principle> base, filtered = set;
      if (metric.surrogate) {
        SurrogateModel model;
        model.seed = *metric.surrogate;
        scorer = surrogate_scorer(sp, model);
      } else {
        table = ingest_metrics(metric.metrics, sp);
        const MetricTable* t = &*table;
        scorer = [t, &sp](const Architecture& a) { return t->find(sp.id_of(a))->accuracy; };
        Principle has;
        has.id = "has-metrics";
        has.custom = [t](const Space& s, const Architecture& a) { return t->find(s.id_of(a)) != nullptr; };
        base.push_back(has);
        filtered.push_back(has);
      }
      SearchOptions o;
      o.strategy = search_strategy_from_string(strategy);
      o.budget = budget;
      o.seed = seed;
      o.per_arch_hours = hours;
      auto u = filtered_search(sp, scorer, base, o);
      auto f = filtered_search(sp, scorer, filtered, o);
      std::size_t match = 0;
      for (std::size_t i = 0; i < f.evaluated.size() && !match; ++i)
        if (f.evaluated[i].score >= u.best_score) match = i + 1;
      for (const auto& [name, t] : {std::pair<const char*, SearchTrace*>{"unfiltered", &u}, {"filtered", &f}}) {
        const std::string run = tag + "-" + name + "-s" + std::to_string(seed);
        write_file_locked((fs::path(out_dir) / session_files::traces / (run + ".json")).string(),
                          search_trace_to_json(*t));
        runs.emplace_back(run, *t);
      }
      summary.push_back({{"seed", seed},
                         {"unfiltered_best", u.best_score},
                         {"filtered_best", f.best_score},
                         {"filtered_evals_to_match", match ? json(match) : json(nullptr)},
                         {"discarded", f.discarded.size()}});
    }
    const auto table = search_table(runs);
    write_file_locked((fs::path(out_dir) / "search_table.txt").string(), table);
    write_file_locked((fs::path(out_dir) / "search_summary.json").string(), summary.dump(2) + "\n");
    std::cout << table;
  }
};

struct PrinciplesCmd {
  std::string space = "nas201", principles;
  MetricArgs metric;

  void add(CLI::App& app) {
    auto* c = app.add_subcommand("principles", "Design principle tools");
    c->require_subcommand(1);
    auto* e = c->add_subcommand("eval", "Pass counts and significance tests per principle");
    e->add_option("--space", space)->capture_default_str();
    e->add_option("--principles", principles, "Principle config JSON (default: P1-P8)");
    metric.add(e);
    e->callback([this] { run(); });
  }

  void run() const {
    const Space sp(resolve_space(space));
    const auto set = principles.empty() ? builtin_principles() : load_principles(principles);
    std::vector<ArchId> ids;
    sp.enumerate([&](const Architecture& a) { ids.push_back(sp.id_of(a)); });
    const auto m = metric.load(sp, ids);
    json out;
    out["space_size"] = ids.size();
    out["metrics"] = m ? json(to_string(m->source)) : json(nullptr);
    json rows = json::array();
    for (const auto& p : set) {
      std::size_t pass = 0;
      for (ArchId id : ids) pass += principle_passes(sp, sp.decode(id), p);
      json r;
      r["id"] = p.id;
      r["mode"] = to_string(p.mode);
      r["pass"] = pass;
      r["fail"] = ids.size() - pass;
      if (m) {
        try {
          const auto pairs = m->accuracy_pairs();
          const auto s = principle_significance(sp, pairs, p);
          r["p_value"] = s.p_value;
          r["effect_direction"] = s.effect_direction;
          r["mean_pass"] = s.mean_pass;
          r["mean_fail"] = s.mean_fail;
        } catch (const Error& e) {
          if (e.code() != ErrorCode::empty_group) throw;
          r["p_value"] = nullptr;
          r["note"] = e.what();
        }
      }
      rows.push_back(std::move(r));
    }
    out["principles"] = std::move(rows);
    std::cout << out.dump(2) << "\n";
  }
};

struct PipelineCmd {
  PipelineOptions o;
  std::string dir, backend = "apsp";

  void add(CLI::App& app) {
    auto* c = app.add_subcommand("pipeline", "Build a complete session directory");
    c->add_option("--space", o.space)->capture_default_str();
    c->add_option("--sample", o.sample)->capture_default_str();
    c->add_option("--seed", o.seed)->capture_default_str();
    c->add_option("--backend", backend)->capture_default_str();
    c->add_option("--max-depth", o.hierarchy.max_depth)->capture_default_str();
    auto* m = c->add_option("--metrics", o.metrics_csv, "Metrics CSV");
    auto* s = c->add_option("--surrogate", o.surrogate_seed, "Surrogate seed");
    m->excludes(s);
    c->add_option("--out-dir", dir, "Session directory")->required();
    c->callback([this] { run(); });
  }

  void run() {
    const auto t0 = std::chrono::steady_clock::now();
    o.backend = distance_backend_from_string(backend);
    build_session_dir(dir, o);
    json info;
    info["session_dir"] = dir;
    info["seconds"] = seconds_since(t0);
    std::cout << info.dump() << "\n";
  }
};

struct ServeCmd {
  std::string dir, host = "127.0.0.1";
  int port = 8080;

  void add(CLI::App& app) {
    auto* c = app.add_subcommand("serve", "Serve the exploration API");
    c->add_option("--port", port)->capture_default_str();
    c->add_option("--host", host)->capture_default_str();
    c->add_option("--session-dir", dir, "Session directory")->required();
    c->callback([this] { run(); });
  }

  void run() const {
    std::unique_ptr<Session> session;
    try {
      session = Session::load(dir);
    } catch (const Error& e) {
      std::cerr << "no active session: " << e.what() << "\n";
    }
    ExplorerApi api(std::move(session));
    std::cerr << "listening on http://" << host << ":" << port << "/api/\n";
    run_server(api, host, port);
  }
};

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Architecture space explorer"};
  app.require_subcommand(1);
  DistancesCmd distances;
  ClusterCmd cluster;
  LayoutCmd layout;
  SearchCmd search;
  PrinciplesCmd principles;
  PipelineCmd pipeline;
  ServeCmd serve;
  distances.add(app);
  cluster.add(app);
  layout.add(app);
  search.add(app);
  principles.add(app);
  pipeline.add(app);
  serve.add(app);
  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    return fail("usage", e.what(), 2);
  } catch (const Error& e) {
    return fail(std::string(to_string(e.code())), e.what());
  } catch (const std::exception& e) {
    return fail("internal", e.what());
  }
  return 0;
}
