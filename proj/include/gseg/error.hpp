#pragma once

#include <stdexcept>
#include <string>

namespace gseg {

// Numeric values double as CLI exit codes (2 is reserved for usage errors).
enum class ErrorCode : int {
  io = 3,
  format = 4,
  invalid_argument = 5,
  shape = 6,
  checksum = 7,
  version = 8,
  check_failed = 9,
  internal = 10,
};

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what) : std::runtime_error(what), code_(code) {}
  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& what) { throw Error(code, what); }

inline void require(bool condition, ErrorCode code, const std::string& what) {
  if (!condition) fail(code, what);
}

}  // namespace gseg
