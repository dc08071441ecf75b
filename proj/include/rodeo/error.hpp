#pragma once

#include <stdexcept>
#include <string>

namespace rodeo {

/// Failure categories shared by every module. The numeric values are part of
/// the C ABI (see rodeo.h) and must not be reordered.
enum class ErrorCode : int {
  invalid_input = 1,
  parse = 2,
  io = 3,
  numeric = 4,
  precondition = 5,
  training = 6,
  generation = 7,
  lookup = 8,
  config = 9,
  degenerate = 10,
};

const char* to_string(ErrorCode code) noexcept;

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message);

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

[[noreturn]] void fail(ErrorCode code, const std::string& message);

inline void require(bool condition, ErrorCode code, const std::string& message) {
  if (!condition) fail(code, message);
}

}  // namespace rodeo
