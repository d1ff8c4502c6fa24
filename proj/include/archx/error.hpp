// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace archx {

enum class ErrorCode {
  invalid_argument,
  space_too_large,
  disconnected,
  budget_exceeded,
  degenerate_k,
  budget_too_small,
  grid_overflow,
  empty_group,
  exhausted_space,
  parse_error,
  unknown_arch,
  duplicate_arch,
  out_of_range,
  stale_cache,
  corrupt_file,
  io_error,
};

std::string_view to_string(ErrorCode code);

/// Single exception type for the library; `code()` carries the failure class
/// so callers (the CLI, the HTTP layer) can map it to a machine-readable form.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(message), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace archx
