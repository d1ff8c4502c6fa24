// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "archx/cluster.hpp"
#include "archx/data_io.hpp"
#include "archx/distance.hpp"
#include "archx/layout.hpp"
#include "archx/space.hpp"

namespace archx {

// ---------------------------------------------------------------------------
// Batch pipeline

/// Distances between the given architectures with the chosen backend. The
/// exact backend runs bucketed SSSPs over the whole edit graph.
DistanceMatrix compute_distances(const Space& space, std::span<const ArchId> ids, DistanceBackend backend,
                                 unsigned threads = 0);

DistanceBackend distance_backend_from_string(std::string_view s);

struct PipelineOptions {
  std::string space = "nas201";  // builtin name or spec path
  std::size_t sample = 200;
  std::uint64_t seed = 0;
  DistanceBackend backend = DistanceBackend::exact_apsp;
  std::optional<std::string> metrics_csv;
  std::optional<std::uint64_t> surrogate_seed;
  HierarchyOptions hierarchy;
  unsigned threads = 0;
};

/// Writes space.json, distances.axdm, tree.json and, when metrics are given,
/// metrics.csv plus its provenance in metrics.json into `dir`.
void build_session_dir(const std::string& dir, const PipelineOptions& options);

// ---------------------------------------------------------------------------
// Session

namespace session_files {
inline constexpr const char* space = "space.json";
inline constexpr const char* distances = "distances.axdm";
inline constexpr const char* tree = "tree.json";
inline constexpr const char* metrics = "metrics.csv";
inline constexpr const char* metrics_meta = "metrics.json";
inline constexpr const char* traces = "traces";
inline constexpr const char* state = "state.json";
}  // namespace session_files

/// Loaded artifacts of one exploration session. Immutable after load.
struct Session {
  std::string dir;
  std::unique_ptr<Space> space;
  DistanceMatrix dm;
  ClusterTree tree;
  std::optional<MetricTable> metrics;
  std::vector<double> accuracy;        // per dm index, NaN when missing
  std::vector<double> sorted_accuracy;  // all metric rows, ascending
  LayoutOptions layout_options;

  static std::unique_ptr<Session> load(const std::string& dir);

  /// Fraction of metric rows with strictly lower accuracy.
  std::optional<double> accuracy_quantile(ArchId id) const;
  /// Lowest accuracy whose quantile is at least 0.99.
  std::optional<double> top1_threshold() const;
};

/// Op share per op name over all positions; zero shares are left out.
nlohmann::ordered_json op_ratios(const Space& space, const Architecture& a);
/// Schematic DAG: nodes and op-labelled edges after pruning `none`.
nlohmann::ordered_json structure_json(const Space& space, const Architecture& a);

/// Even-odd rule; points on the boundary may fall either way.
bool point_in_polygon(const Point& p, std::span<const Point> polygon);

// ---------------------------------------------------------------------------
// HTTP API

struct ApiResponse {
  int status = 200;
  std::string body;
};

using QueryParams = std::multimap<std::string, std::string>;

/// Request router for the /api/ endpoints. Without a session every endpoint
/// answers 409. Requests are serialized; layouts are computed once per
/// cluster and kept.
class ExplorerApi {
 public:
  ExplorerApi() = default;
  explicit ExplorerApi(std::unique_ptr<Session> session);

  ApiResponse handle(std::string_view method, std::string_view path, const QueryParams& query,
                     std::string_view body);

  bool has_session() const { return session_ != nullptr; }

 private:
  const LayoutResult& layout_for(int focus);
  std::set<ArchId> view_ids();
  std::set<ArchId> filtered(const std::set<ArchId>& ids) const;
  nlohmann::ordered_json selection_json();
  void snapshot();

  ApiResponse get_space();
  ApiResponse get_layout(const QueryParams& q);
  ApiResponse post_select(std::string_view body);
  ApiResponse get_compare(const QueryParams& q);
  ApiResponse post_filter(std::string_view body);
  ApiResponse get_trace(const QueryParams& q);

  std::mutex mutex_;
  std::unique_ptr<Session> session_;
  std::map<int, LayoutResult> layouts_;
  int focus_ = 0;
  std::set<ArchId> selection_;
  nlohmann::ordered_json filters_ = nlohmann::ordered_json::object();
};

/// Serves the API over HTTP until the process is stopped.
void run_server(ExplorerApi& api, const std::string& host, int port);

}  // namespace archx
