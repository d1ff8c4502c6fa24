// SPDX-License-Identifier: Apache-2.0
#include "archx/error.hpp"

namespace archx {

std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::invalid_argument: return "InvalidArgument";
    case ErrorCode::space_too_large: return "SpaceTooLarge";
    case ErrorCode::disconnected: return "Disconnected";
    case ErrorCode::budget_exceeded: return "BudgetExceeded";
    case ErrorCode::degenerate_k: return "DegenerateK";
    case ErrorCode::budget_too_small: return "BudgetTooSmall";
    case ErrorCode::grid_overflow: return "GridOverflow";
    case ErrorCode::empty_group: return "EmptyGroup";
    case ErrorCode::exhausted_space: return "ExhaustedSpace";
    case ErrorCode::parse_error: return "ParseError";
    case ErrorCode::unknown_arch: return "UnknownArch";
    case ErrorCode::duplicate_arch: return "DuplicateArch";
    case ErrorCode::out_of_range: return "OutOfRange";
    case ErrorCode::stale_cache: return "StaleCache";
    case ErrorCode::corrupt_file: return "CorruptFile";
    case ErrorCode::io_error: return "IoError";
  }
  return "Unknown";
}

}  // namespace archx
