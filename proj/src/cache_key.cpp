// SPDX-License-Identifier: Apache-2.0
#include "archx/cache_key.hpp"

#include <cstdio>

#include "archx/error.hpp"
#include "archx/util.hpp"

namespace archx {

namespace {

std::string hex16(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

std::uint64_t parse_hex(const nlohmann::ordered_json& j, const char* field) {
  if (!j.contains(field) || !j[field].is_string()) {
    throw Error(ErrorCode::corrupt_file, std::string("cache key: missing field '") + field + "'");
  }
  const auto s = j[field].get<std::string>();
  if (s.size() != 16 || s.find_first_not_of("0123456789abcdef") != std::string::npos) {
    throw Error(ErrorCode::corrupt_file, std::string("cache key: bad hex in '") + field + "'");
  }
  return std::stoull(s, nullptr, 16);
}

}  // namespace

std::uint64_t CacheKey::hash_sample(std::span<const ArchId> sample) {
  Fnv1a h;
  h.update_u64(sample.size());
  for (ArchId id : sample) h.update_u64(id);
  return h.digest();
}

CacheKey CacheKey::of(const SpaceSpec& spec, std::span<const ArchId> sample) {
  return {spec.structure_hash(), spec.cost_hash(), hash_sample(sample)};
}

nlohmann::ordered_json CacheKey::to_json() const {
  nlohmann::ordered_json j;
  j["space"] = hex16(space_hash);
  j["cost"] = hex16(cost_hash);
  j["sample"] = hex16(sample_hash);
  return j;
}

CacheKey CacheKey::from_json(const nlohmann::ordered_json& j) {
  if (!j.is_object()) throw Error(ErrorCode::corrupt_file, "cache key must be an object");
  return {parse_hex(j, "space"), parse_hex(j, "cost"), parse_hex(j, "sample")};
}

void check_cache_key(const CacheKey& expected, const CacheKey& found, std::string_view what) {
  const char* part = nullptr;
  if (expected.space_hash != found.space_hash) part = "space structure";
  else if (expected.cost_hash != found.cost_hash) part = "cost matrix";
  else if (expected.sample_hash != found.sample_hash) part = "sample set";
  if (part) {
    throw Error(ErrorCode::stale_cache,
                std::string(what) + " was computed for a different " + part + "; recompute it");
  }
}

}  // namespace archx
