#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace crossia {

enum class ErrorCode {
  kInvalidArgument,
  kNotFound,
  kNumeric,
  kFormat,
  kIntegrity,
  kBackend,
  kGoalUnreachable,
  kCannotSample,
  kConfig,
  kDependency,
};

std::string_view to_string(ErrorCode code) noexcept;

// Single exception type for the library; callers dispatch on code().
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(std::string(to_string(code)) + ": " + message), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& message) { throw Error(code, message); }

inline void require(bool condition, const std::string& message) {
  if (!condition) fail(ErrorCode::kInvalidArgument, message);
}

}  // namespace crossia
