// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "archx/cache_key.hpp"
#include "archx/distance.hpp"
#include "archx/principles.hpp"
#include "archx/space.hpp"

namespace archx {

// ---------------------------------------------------------------------------
// Metrics

enum class MetricSource { ingested, surrogate };

std::string_view to_string(MetricSource s);

struct MetricRow {
  ArchId arch_id = 0;
  double accuracy = 0.0;  // [0, 1]
  double params = 0.0;
  double flops = 0.0;
  double train_time = 0.0;  // hours
  std::vector<std::string> extras;  // parallel to MetricTable::extra_columns
};

class MetricTable {
 public:
  MetricSource source = MetricSource::ingested;
  std::vector<std::string> extra_columns;

  std::size_t size() const noexcept { return rows_.size(); }
  bool empty() const noexcept { return rows_.empty(); }
  const std::vector<MetricRow>& rows() const noexcept { return rows_; }
  /// Throws DuplicateArch when the id is already present.
  void add(MetricRow row);
  const MetricRow* find(ArchId id) const;

  /// Accuracy per id, NaN where missing.
  std::vector<double> accuracy_for(std::span<const ArchId> ids) const;
  std::vector<std::pair<ArchId, double>> accuracy_pairs() const;

 private:
  std::vector<MetricRow> rows_;
  std::map<ArchId, std::size_t> index_;
};

/// Parses one arch_id cell: a decimal id, or a benchmark cell string such as
/// `|nor_conv_3x3~0|+|skip_connect~0|none~1|+|...|` (common op aliases are
/// accepted). Returns nullopt when the text is neither.
std::optional<Architecture> parse_arch_string(const Space& space, std::string_view text);

/// CSV with at least the columns arch_id, accuracy, params, flops,
/// train_time. Errors carry the 1-based line number.
MetricTable parse_metrics_csv(std::string_view text, const Space& space);
MetricTable ingest_metrics(const std::string& path, const Space& space);
std::string metrics_to_csv(const MetricTable& table);

// ---------------------------------------------------------------------------
// Surrogate scorer

/// Logit weights over structural features.
struct SurrogateWeights {
  double base = 0.0;
  double conv = 0.10;       // per convolution op
  double pool_max = -0.05;  // per max-pool op
  double pool_avg = -0.30;  // per average-pool op
  double identity = 0.0;
  double identity_path = 0.30;
  double conv3x3_stack = 0.15;   // per 3x3 convolution on the deepest path
  double conv3x3_paths = 0.10;   // per path carrying a 3x3 convolution
  double conv_free_paths = -0.20;  // per path without convolution
};

struct SurrogateModel {
  std::uint64_t seed = 0;
  SurrogateWeights weights;
  double sigma = 0.01;  // noise scale in score units
};

/// Logit before noise: base plus weighted features.
double surrogate_logit(const Space& space, const Architecture& a, const SurrogateWeights& w);
/// Deterministic in (architecture, seed) on every platform.
double surrogate_score(const Space& space, const Architecture& a, const SurrogateModel& model);
Scorer surrogate_scorer(const Space& space, const SurrogateModel& model);

/// Table over `ids` with surrogate accuracy and synthetic size columns.
MetricTable surrogate_table(const Space& space, std::span<const ArchId> ids, const SurrogateModel& model);

/// Logistic function evaluated with a fixed operation order.
double portable_logistic(double x);
double portable_exp(double x);

// ---------------------------------------------------------------------------
// Artifact files

/// Writes the whole file under an exclusive advisory lock.
void write_file_locked(const std::string& path, std::string_view bytes);
/// Reads the whole file under a shared advisory lock.
std::string read_file_locked(const std::string& path);

/// AXDM: fixed-point distance cache. Entries are stored as round(d * 2^20).
struct StoredDistances {
  DistanceMatrix matrix;
  CacheKey key;
};

inline constexpr std::uint32_t kAxdmScale = 1u << 20;

std::string encode_distances(const DistanceMatrix& dm, const CacheKey& key);
StoredDistances decode_distances(std::string_view bytes, const CacheKey* expected = nullptr);
void save_distances(const std::string& path, const DistanceMatrix& dm, const CacheKey& key);
StoredDistances load_distances(const std::string& path, const CacheKey* expected = nullptr);

}  // namespace archx
