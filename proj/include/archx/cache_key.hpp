// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <span>
#include <string>

#include <json.hpp>

#include "archx/space.hpp"

namespace archx {

/// Identity of the inputs an artifact was computed from.
struct CacheKey {
  std::uint64_t space_hash = 0;
  std::uint64_t cost_hash = 0;
  std::uint64_t sample_hash = 0;

  static CacheKey of(const SpaceSpec& spec, std::span<const ArchId> sample);
  static std::uint64_t hash_sample(std::span<const ArchId> sample);

  nlohmann::ordered_json to_json() const;
  static CacheKey from_json(const nlohmann::ordered_json& j);
  bool operator==(const CacheKey&) const = default;
};

/// Throws StaleCache naming the first mismatching component.
void check_cache_key(const CacheKey& expected, const CacheKey& found, std::string_view what);

}  // namespace archx
