#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <numbers>
#include <set>

#include <unistd.h>

#include "archx/error.hpp"
#include "archx/service.hpp"

using namespace archx;
using json = nlohmann::ordered_json;
namespace fs = std::filesystem;

namespace {

struct SessionDir {
  fs::path path;
  SessionDir() {
    path = fs::temp_directory_path() / ("archx-svc-" + std::to_string(::getpid()));
    fs::remove_all(path);
    PipelineOptions o;
    o.space = "nas201";
    o.sample = 300;
    o.seed = 4;
    o.surrogate_seed = 1;
    build_session_dir(path.string(), o);
  }
  ~SessionDir() { fs::remove_all(path); }
};

const SessionDir& shared_dir() {
  static SessionDir dir;
  return dir;
}

ExplorerApi fresh_api() {
  fs::remove(shared_dir().path / session_files::state);
  return ExplorerApi(Session::load(shared_dir().path.string()));
}

json call(ExplorerApi& api, const std::string& method, const std::string& path, const QueryParams& q = {},
          const std::string& body = "", int expect = 200) {
  const auto r = api.handle(method, path, q, body);
  CHECK_MESSAGE(r.status == expect, method << " " << path << " -> " << r.body);
  return json::parse(r.body);
}

std::set<ArchId> ids_of(const json& arr) {
  std::set<ArchId> out;
  for (const auto& v : arr) out.insert(v.get<ArchId>());
  return out;
}

// Winding number of the polygon around p; non-zero means inside.
int winding(double px, double py, const std::vector<std::array<double, 2>>& poly) {
  int w = 0;
  for (std::size_t i = 0; i < poly.size(); ++i) {
    const auto& a = poly[i];
    const auto& b = poly[(i + 1) % poly.size()];
    const double cross = (b[0] - a[0]) * (py - a[1]) - (px - a[0]) * (b[1] - a[1]);
    if (a[1] <= py) {
      if (b[1] > py && cross > 0) ++w;
    } else if (b[1] <= py && cross < 0) {
      --w;
    }
  }
  return w;
}

}  // namespace

TEST_CASE("no session") {
  ExplorerApi api;
  for (const char* p : {"/api/space", "/api/layout", "/api/compare", "/api/search/trace"})
    CHECK(api.handle("GET", p, {}, "").status == 409);
  CHECK(api.handle("POST", "/api/select", {}, "{}").status == 409);
  CHECK(api.handle("GET", "/api/nope", {}, "").status == 404);
}

TEST_CASE("space summary") {
  auto api = fresh_api();
  const auto j = call(api, "GET", "/api/space");
  CHECK(j["sample_size"] == 300);
  CHECK(j["space"]["ops"].size() == 5);
  CHECK(j["space"]["size"] == 15625);
  const auto& m = j["metrics"];
  CHECK(m["source"] == "surrogate");
  CHECK(m["count"] == 300);
  for (const auto& [name, h] : m["histograms"].items()) {
    std::size_t total = 0;
    for (const auto& c : h["counts"]) total += c.get<std::size_t>();
    CHECK_MESSAGE(total == 300, name);
  }
  CHECK(call(api, "GET", "/api/space").dump() == j.dump());
  CHECK(api.handle("POST", "/api/space", {}, "").status == 405);
}

TEST_CASE("layout slices") {
  auto api = fresh_api();
  const auto top = call(api, "GET", "/api/layout");
  CHECK(top["level"] == 1);
  CHECK(call(api, "GET", "/api/layout", {{"cluster", "0"}, {"level", "1"}}).dump() == top.dump());
  call(api, "GET", "/api/layout", {{"level", "2"}}, "", 404);
  call(api, "GET", "/api/layout", {{"cluster", "99999"}}, "", 404);
  call(api, "GET", "/api/layout", {{"cluster", "x"}}, "", 400);
  std::size_t glyphs = 0;
  for (const auto& cv : top["clusters"]) {
    for (const auto& c : cv["cells"]) {
      CHECK(c["accuracy"].is_number());
      CHECK(c["quantile"].get<double>() >= 0.0);
      CHECK(c["quantile"].get<double>() < 1.0);
    }
    for (const auto& g : cv["glyphs"]) {
      ++glyphs;
      double total = 0;
      for (const auto& [op, share] : g["op_ratios"].items()) total += share.get<double>();
      CHECK(total == doctest::Approx(1.0));
      CHECK(g["structure"]["nodes"].size() == 4);
    }
  }
  CHECK(glyphs > 0);

  int child = -1;
  for (const auto& cv : top["clusters"])
    if (cv["has_children"].get<bool>()) child = cv["id"].get<int>();
  if (child >= 0) {
    const auto zoom = call(api, "GET", "/api/layout", {{"cluster", std::to_string(child)}});
    CHECK(zoom["level"] == 2);
    CHECK(zoom["parent"] == 0);
  }
}

TEST_CASE("lasso around one cluster disc") {
  auto api = fresh_api();
  const auto top = call(api, "GET", "/api/layout");
  for (const auto& cv : top["clusters"]) {
    const double cx = cv["center"][0].get<double>(), cy = cv["center"][1].get<double>();
    const double r = cv["radius"].get<double>();
    std::vector<std::array<double, 2>> poly;
    json lasso = json::array();
    for (int k = 0; k < 64; ++k) {
      const double a = 2 * std::numbers::pi * k / 64;
      poly.push_back({cx + r * std::cos(a), cy + r * std::sin(a)});
      lasso.push_back({poly.back()[0], poly.back()[1]});
    }
    const auto sel = call(api, "POST", "/api/select", {}, json{{"lasso", lasso}}.dump());
    std::set<ArchId> members, oracle;
    for (const auto& c : cv["cells"]) members.insert(c["arch_id"].get<ArchId>());
    for (const auto& other : top["clusters"])
      for (const auto& c : other["cells"])
        if (winding(c["x"].get<double>(), c["y"].get<double>(), poly) != 0) oracle.insert(c["arch_id"].get<ArchId>());
    CHECK(ids_of(sel["selection"]) == oracle);
    CHECK(ids_of(sel["selection"]) == members);
  }
  call(api, "POST", "/api/select", {}, R"({"lasso":[[0,0],[1,1]]})", 400);
  call(api, "POST", "/api/select", {}, R"({"lasso":"no"})", 400);
}

TEST_CASE("selection forms") {
  auto api = fresh_api();
  const auto top = call(api, "GET", "/api/layout");
  const auto& first = top["clusters"][0];
  const auto by_cluster = call(api, "POST", "/api/select", {}, json{{"cluster", first["id"]}}.dump());
  CHECK(by_cluster["count"] == first["cells"].size());

  const ArchId shown = first["cells"][0]["arch_id"].get<ArchId>();
  std::set<ArchId> view;
  for (const auto& cv : top["clusters"])
    for (const auto& c : cv["cells"]) view.insert(c["arch_id"].get<ArchId>());
  ArchId hidden = 0;
  while (view.count(hidden)) ++hidden;
  const auto by_ids = call(api, "POST", "/api/select", {}, json{{"ids", {shown, hidden}}}.dump());
  CHECK(ids_of(by_ids["selection"]) == std::set<ArchId>{shown});

  call(api, "POST", "/api/select", {}, "{}", 400);
  call(api, "POST", "/api/select", {}, R"({"ids":[1],"cluster":1})", 400);
  call(api, "POST", "/api/select", {}, R"({"ids":[-1]})", 400);
  call(api, "POST", "/api/select", {}, R"({"cluster":123456})", 404);
  call(api, "POST", "/api/select", {}, "not json", 400);
}

TEST_CASE("compare rows") {
  auto api = fresh_api();
  const auto top = call(api, "GET", "/api/layout");
  const ArchId id = top["clusters"][0]["cells"][0]["arch_id"].get<ArchId>();
  const auto one = call(api, "GET", "/api/compare", {{"ids", std::to_string(id)}});
  CHECK(one["rows"].size() == 1);
  CHECK(one["rows"][0]["accuracy"].is_number());
  CHECK(one["vectors"][0].size() == 4);
  CHECK(one["structures"][0]["structure"]["nodes"].size() == 4);
  const auto two = call(api, "GET", "/api/compare", {{"ids", "0,1"}});
  CHECK(two["rows"].size() == 2);
  call(api, "GET", "/api/compare", {{"ids", "15625"}}, "", 404);
  call(api, "GET", "/api/compare", {}, "", 400);
  call(api, "GET", "/api/compare", {{"ids", "a"}}, "", 400);
}

TEST_CASE("filters") {
  auto api = fresh_api();
  const auto space = call(api, "GET", "/api/space");
  const auto top = call(api, "GET", "/api/layout");
  const double t = space["metrics"]["top1_threshold"].get<double>();
  std::set<ArchId> darkest;
  for (const auto& cv : top["clusters"])
    for (const auto& c : cv["cells"])
      if (c["top1"].get<bool>()) darkest.insert(c["arch_id"].get<ArchId>());
  const auto f = call(api, "POST", "/api/filter", {}, json{{"ranges", {{"accuracy", {t, 1.0}}}}}.dump());
  CHECK(ids_of(f["ids"]) == darkest);
  CHECK_FALSE(darkest.empty());

  call(api, "POST", "/api/filter", {}, R"({"ranges":{"height":[0,1]}})", 400);
  call(api, "POST", "/api/filter", {}, R"({"ranges":{"accuracy":[1,0]}})", 400);
  const auto cleared = call(api, "POST", "/api/filter", {}, R"({"ranges":{}})");
  std::size_t shown = 0;
  for (const auto& cv : top["clusters"]) shown += cv["cells"].size();
  CHECK(cleared["surviving"] == shown);
}

TEST_CASE("selection and filters compose") {
  const auto lasso = [](const json& top) {
    const auto& cv = top["clusters"][0];
    const double cx = cv["center"][0].get<double>(), cy = cv["center"][1].get<double>();
    const double r = cv["radius"].get<double>() * 3;
    return json{{"lasso", {{cx - r, cy - r}, {cx + r, cy - r}, {cx + r, cy + r}, {cx - r, cy + r}}}}.dump();
  };
  const std::string ranges = R"({"ranges":{"accuracy":[0.5,1.0],"params":[0,20000]}})";
  auto a = fresh_api();
  const auto top = call(a, "GET", "/api/layout");
  call(a, "POST", "/api/select", {}, lasso(top));
  const auto sf = call(a, "POST", "/api/filter", {}, ranges);
  auto b = fresh_api();
  call(b, "GET", "/api/layout");
  call(b, "POST", "/api/filter", {}, ranges);
  const auto fs_ = call(b, "POST", "/api/select", {}, lasso(top));
  CHECK(ids_of(sf["visible"]) == ids_of(fs_["visible"]));
  CHECK(ids_of(sf["selection"]) == ids_of(fs_["selection"]));
  std::set<ArchId> expect;
  const auto survivors = ids_of(sf["ids"]);
  for (ArchId id : ids_of(sf["selection"]))
    if (survivors.count(id)) expect.insert(id);
  CHECK(ids_of(sf["visible"]) == expect);
}

TEST_CASE("zoom keeps the selection inside the view") {
  auto api = fresh_api();
  const auto top = call(api, "GET", "/api/layout");
  json sel = json::array();
  for (const auto& cv : top["clusters"])
    for (const auto& c : cv["cells"]) sel.push_back(c["arch_id"]);
  call(api, "POST", "/api/select", {}, json{{"ids", sel}}.dump());
  int child = -1;
  for (const auto& cv : top["clusters"])
    if (cv["has_children"].get<bool>()) child = cv["id"].get<int>();
  if (child < 0) return;
  const auto zoom = call(api, "GET", "/api/layout", {{"cluster", std::to_string(child)}});
  std::set<ArchId> view;
  for (const auto& cv : zoom["clusters"])
    for (const auto& c : cv["cells"]) view.insert(c["arch_id"].get<ArchId>());
  const auto now = call(api, "POST", "/api/filter", {}, R"({"ranges":{}})");
  for (ArchId id : ids_of(now["selection"])) CHECK(view.count(id) == 1);
}

TEST_CASE("search traces") {
  const auto traces = shared_dir().path / session_files::traces;
  fs::create_directories(traces);
  SearchTrace t;
  t.budget = 2;
  t.evaluated = {{1, 0.5}, {2, 0.7}};
  t.best_so_far = {0.5, 0.7};
  t.best_id = 2;
  t.best_score = 0.7;
  write_file_locked((traces / "run-a.json").string(), search_trace_to_json(t));
  auto api = fresh_api();
  const auto j = call(api, "GET", "/api/search/trace", {{"run", "run-a"}});
  CHECK(j["evaluated"].size() == 2);
  CHECK(j["run"] == "run-a");
  call(api, "GET", "/api/search/trace", {{"run", "missing"}}, "", 404);
  call(api, "GET", "/api/search/trace", {}, "", 400);
  call(api, "GET", "/api/search/trace", {{"run", "../tree"}}, "", 400);
}

TEST_CASE("session snapshots and stale artifacts") {
  auto api = fresh_api();
  const auto top = call(api, "GET", "/api/layout");
  const auto sel = call(api, "POST", "/api/select", {}, json{{"cluster", top["clusters"][0]["id"]}}.dump());
  CHECK(fs::exists(shared_dir().path / session_files::state));
  ExplorerApi again(Session::load(shared_dir().path.string()));
  const auto restored = call(again, "POST", "/api/filter", {}, R"({"ranges":{}})");
  CHECK(ids_of(restored["selection"]) == ids_of(sel["selection"]));

  const fs::path copy = fs::temp_directory_path() / ("archx-svc-stale-" + std::to_string(::getpid()));
  fs::remove_all(copy);
  fs::copy(shared_dir().path, copy, fs::copy_options::recursive);
  SpaceSpec spec = SpaceSpec::parse(read_file_locked((copy / session_files::space).string()));
  auto costs = spec.effective_costs();
  costs[2][3] = costs[3][2] = 2.0;
  spec.cost_matrix = costs;
  write_file_locked((copy / session_files::space).string(), spec.serialize());
  try {
    Session::load(copy.string());
    FAIL("loaded a stale session");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::stale_cache);
  }
  fs::remove_all(copy);
}

TEST_CASE("geometry helpers") {
  const std::vector<Point> square{{0, 0}, {2, 0}, {2, 2}, {0, 2}};
  CHECK(point_in_polygon({1, 1}, square));
  CHECK_FALSE(point_in_polygon({3, 1}, square));
  const std::vector<Point> bow{{0, 0}, {4, 0}, {4, 4}, {2, 1}, {0, 4}};
  CHECK(point_in_polygon({1, 1}, bow));
  CHECK_FALSE(point_in_polygon({2, 3}, bow));
  const Space sp(nas201_spec());
  const auto s = structure_json(sp, Architecture{{3, 0, 1, 0, 2, 4}, 0});
  CHECK(s["edges"].size() == 4);
}
