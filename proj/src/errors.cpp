#include "crossia/errors.hpp"

namespace crossia {

std::string_view to_string(ErrorCode code) noexcept {
  switch (code) {
    case ErrorCode::kInvalidArgument: return "invalid-argument";
    case ErrorCode::kNotFound: return "not-found";
    case ErrorCode::kNumeric: return "numeric-error";
    case ErrorCode::kFormat: return "format-error";
    case ErrorCode::kIntegrity: return "integrity-error";
    case ErrorCode::kBackend: return "backend-error";
    case ErrorCode::kGoalUnreachable: return "goal-unreachable";
    case ErrorCode::kCannotSample: return "cannot-sample";
    case ErrorCode::kConfig: return "config-error";
    case ErrorCode::kDependency: return "dependency-error";
  }
  return "unknown-error";
}

}  // namespace crossia
