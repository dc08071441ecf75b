#include "rodeo/error.hpp"

namespace rodeo {

const char* to_string(ErrorCode code) noexcept {
  switch (code) {
    case ErrorCode::invalid_input: return "invalid input";
    case ErrorCode::parse: return "parse error";
    case ErrorCode::io: return "i/o error";
    case ErrorCode::numeric: return "numeric error";
    case ErrorCode::precondition: return "precondition violated";
    case ErrorCode::training: return "training error";
    case ErrorCode::generation: return "generation failure";
    case ErrorCode::lookup: return "lookup error";
    case ErrorCode::config: return "config error";
    case ErrorCode::degenerate: return "degenerate input";
  }
  return "unknown error";
}

Error::Error(ErrorCode code, const std::string& message)
    : std::runtime_error(std::string(to_string(code)) + ": " + message), code_(code) {}

void fail(ErrorCode code, const std::string& message) { throw Error(code, message); }

}  // namespace rodeo
